//! Radial finite-volume solver for the perturbation equation
//! `∂ₜw = Δw + g(U+w) − g(U)` around a singular background `U`, and for the
//! linear heat equation with inverse-square potential `∂ₜw = Δw + c r⁻² w`.
//!
//! Space: log-spaced nodes on `[r₁, r_M]`, dual cells with faces at the
//! geometric means, so the discrete Laplacian is symmetric in the weighted
//! inner product `Σ Vᵢ wᵢ zᵢ`. Time: the diffusion and the linearized
//! coupling `g'(U)w` (an inverse-square potential near the origin, hence
//! stiff) are implicit; the remainder `g(U+w) − g(U) − g'(U)w` is explicit.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::selfsimilar::{ProfileSolution, ProfileStatus};
use crate::stationary::StationarySolution;

pub const MIN_NODES: usize = 64;
/// Abort when one explicit increment exceeds this multiple of `max(|w|, 1)`.
pub const GROWTH_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InnerBoundary {
    /// `w(r₁) = 0`, i.e. `u` matches the background at the inner edge.
    MatchBackground,
    /// `∂ᵣw(r₁) = 0`; used for regular (non-singular) linear problems.
    ZeroFlux,
}

#[derive(Clone)]
pub enum OuterBoundary {
    /// `w(t, r_M) = value(t)`.
    Dirichlet(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Neumann0,
}

impl OuterBoundary {
    pub fn zero() -> Self {
        OuterBoundary::Dirichlet(Arc::new(|_| 0.0))
    }
}

impl fmt::Debug for OuterBoundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OuterBoundary::Dirichlet(_) => f.write_str("Dirichlet(..)"),
            OuterBoundary::Neumann0 => f.write_str("Neumann0"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    n: u32,
    pub inner: InnerBoundary,
    pub outer: OuterBoundary,
    volumes: Vec<f64>,
    /// `r_f^{N−1} / (r_{i+1} − r_i)` on the face between nodes `i` and `i+1`.
    kappa: Vec<f64>,
}

impl RadialGrid {
    pub fn new(nodes: Vec<f64>, n: u32, inner: InnerBoundary, outer: OuterBoundary) -> Result<Self> {
        if nodes.len() < MIN_NODES {
            return Err(Error::domain(format!("grid needs at least {MIN_NODES} nodes, got {}", nodes.len())));
        }
        if n < 1 {
            return Err(Error::domain("dimension must be positive"));
        }
        if !(nodes[0] > 0.0) || nodes.iter().any(|r| !r.is_finite()) {
            return Err(Error::domain("grid nodes must be finite with r₁ > 0"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("grid nodes must be strictly increasing"));
        }
        let m = nodes.len();
        let nd = n as f64;
        let faces: Vec<f64> = nodes.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
        let kappa = nodes.windows(2).zip(&faces).map(|(w, &rf)| rf.powi(n as i32 - 1) / (w[1] - w[0])).collect();
        let ball = |r: f64| r.powi(n as i32) / nd;
        let mut volumes = Vec::with_capacity(m);
        volumes.push(ball(faces[0]) - ball(nodes[0]));
        for i in 1..m - 1 {
            volumes.push(ball(faces[i]) - ball(faces[i - 1]));
        }
        volumes.push(ball(nodes[m - 1]) - ball(faces[m - 2]));
        Ok(RadialGrid { nodes, n, inner, outer, volumes, kappa })
    }

    /// `m` log-spaced nodes on `[r1, r_m]`.
    pub fn log(n: u32, r1: f64, r_m: f64, m: usize, inner: InnerBoundary, outer: OuterBoundary) -> Result<Self> {
        if !(r1 > 0.0 && r_m > r1 && r_m.is_finite()) {
            return Err(Error::domain(format!("need 0 < r1 < r_M, got ({r1}, {r_m})")));
        }
        if m < MIN_NODES {
            return Err(Error::domain(format!("grid needs at least {MIN_NODES} nodes, got {m}")));
        }
        let (a, b) = (r1.ln(), r_m.ln());
        let nodes = (0..m)
            .map(|i| match i {
                0 => r1,
                _ if i == m - 1 => r_m,
                _ => (a + (b - a) * i as f64 / (m - 1) as f64).exp(),
            })
            .collect();
        Self::new(nodes, n, inner, outer)
    }

    /// Default perturbation grid for a perturbation vanishing on `{r < δ}`:
    /// `[10⁻³δ, 50δ]`, matched inner edge, zero outer value.
    pub fn for_delta(n: u32, delta: f64, m: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::domain(format!("delta must be positive, got {delta}")));
        }
        Self::log(n, 1e-3 * delta, 50.0 * delta, m, InnerBoundary::MatchBackground, OuterBoundary::zero())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> u32 {
        self.n
    }

    pub fn r1(&self) -> f64 {
        self.nodes[0]
    }

    pub fn r_m(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Dual-cell volumes `∫ r^{N−1} dr` (half cells at both ends).
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// `‖w‖ = (Σ Vᵢ wᵢ²)^{1/2}`, the discrete `L²(r^{N−1}dr)` norm.
    pub fn l2_norm(&self, w: &[f64]) -> f64 {
        self.volumes.iter().zip(w).map(|(v, x)| v * x * x).sum::<f64>().sqrt()
    }

    /// Trapezoid rule for `∫ f r^{N−1} dr` over nodes with `r ≤ r_hi`.
    pub fn trapezoid(&self, f: &[f64], r_hi: f64) -> f64 {
        let k = self.n as i32 - 1;
        let mut total = 0.0;
        for i in 0..self.len() - 1 {
            let (a, b) = (self.nodes[i], self.nodes[i + 1]);
            if b > r_hi {
                break;
            }
            total += 0.5 * (b - a) * (f[i] * a.powi(k) + f[i + 1] * b.powi(k));
        }
        total
    }

    /// Copy with `m` log-spaced nodes over the same range and boundaries.
    pub fn with_nodes(&self, m: usize) -> Result<Self> {
        Self::log(self.n, self.r1(), self.r_m(), m, self.inner, self.outer.clone())
    }

    fn inner_fixed(&self) -> bool {
        self.inner == InnerBoundary::MatchBackground
    }

    fn outer_value(&self, t: f64) -> Option<f64> {
        match &self.outer {
            OuterBoundary::Dirichlet(f) => Some(f(t)),
            OuterBoundary::Neumann0 => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadialField {
    pub grid: Arc<RadialGrid>,
    pub time: f64,
    values: Vec<f64>,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, time: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::domain(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::numerical(format!("non-finite value at r = {}", grid.nodes[i])));
        }
        Ok(RadialField { grid, time, values })
    }

    pub fn from_fn(grid: Arc<RadialGrid>, time: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes.iter().map(|&r| f(r)).collect();
        Self::new(grid, time, values)
    }

    pub fn zeros(grid: Arc<RadialGrid>, time: f64) -> Self {
        let values = vec![0.0; grid.len()];
        RadialField { grid, time, values }
    }

    /// Smooth bump `h·exp(1 − 1/(1 − ((r−c)/w)²))`, supported in `[c−w, c+w]`.
    pub fn bump(grid: Arc<RadialGrid>, center: f64, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && center.is_finite() && height.is_finite()) {
            return Err(Error::domain("bump needs finite center/height and width > 0"));
        }
        Self::from_fn(grid, 0.0, |r| bump(r, center, width, height))
    }

    /// `1` on `{r > r0}`, `0` elsewhere.
    pub fn indicator(grid: Arc<RadialGrid>, r0: f64) -> Self {
        let values = grid.nodes.iter().map(|&r| if r > r0 { 1.0 } else { 0.0 }).collect();
        RadialField { grid, time: 0.0, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.l2_norm(&self.values)
    }

    /// Smallest node radius with a nonzero value.
    pub fn support_start(&self) -> Option<f64> {
        self.values.iter().position(|&x| x != 0.0).map(|i| self.grid.nodes[i])
    }

    /// CSV with columns `r, w`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "r,w")?;
        for (r, w) in self.grid.nodes.iter().zip(&self.values) {
            writeln!(out, "{r:.16e},{w:.16e}")?;
        }
        Ok(())
    }
}

pub fn bump(r: f64, center: f64, width: f64, height: f64) -> f64 {
    let x = (r - center) / width;
    if x.abs() >= 1.0 {
        0.0
    } else {
        height * (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

#[derive(Debug, Clone)]
pub enum BackgroundKind {
    /// `U = β^{1/α} r^{−2/α}`.
    ExplicitHomogeneous,
    StationarySingular(Arc<StationarySolution>),
    /// `U = t^{−1/α} f(r/√t)`, with the `t → 0` limit `μ r^{−2/α}`.
    SelfSimilar(Arc<ProfileSolution>),
}

#[derive(Debug, Clone)]
pub struct Background {
    pub kind: BackgroundKind,
    params: Params,
}

impl Background {
    pub fn homogeneous(p: &Params) -> Result<Self> {
        p.amplitude()?;
        Ok(Background { kind: BackgroundKind::ExplicitHomogeneous, params: p.clone() })
    }

    pub fn stationary(sol: StationarySolution) -> Self {
        let params = sol.params.clone();
        Background { kind: BackgroundKind::StationarySingular(Arc::new(sol)), params }
    }

    /// Requires a completed shot with a far-field coefficient.
    pub fn self_similar(prof: ProfileSolution) -> Result<Self> {
        if prof.status != ProfileStatus::Completed || prof.mu.is_none() {
            return Err(Error::domain(format!(
                "self-similar background needs a completed profile (C1 = {}, {:?})",
                prof.c1, prof.status
            )));
        }
        let params = prof.params.clone();
        Ok(Background { kind: BackgroundKind::SelfSimilar(Arc::new(prof)), params })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self.kind, BackgroundKind::SelfSimilar(_))
    }

    /// `(U, ∂ᵣU, ∂ₜU)` at `(t, r)`.
    pub fn eval(&self, t: f64, r: f64) -> Result<(f64, f64, f64)> {
        let p = &self.params;
        let sg = p.sigma();
        let outside = || Error::domain(format!("background undefined at (t, r) = ({t}, {r})"));
        if !(r > 0.0) || !(t >= 0.0) {
            return Err(outside());
        }
        match &self.kind {
            BackgroundKind::ExplicitHomogeneous => {
                let u = p.amplitude()? * r.powf(-sg);
                Ok((u, -sg * u / r, 0.0))
            }
            BackgroundKind::StationarySingular(sol) => {
                let (u, up) = sol.u_at(r).ok_or_else(outside)?;
                Ok((u, up, 0.0))
            }
            BackgroundKind::SelfSimilar(prof) => {
                if t == 0.0 {
                    let mu = prof.mu.as_ref().ok_or_else(outside)?.mu;
                    let u = mu * r.powf(-sg);
                    let ut = (p.g(mu) - p.beta * mu) * r.powf(-sg - 2.0);
                    return Ok((u, -sg * u / r, ut));
                }
                let rt = t.sqrt();
                let rho = r / rt;
                let (f, fp, _) = prof.f_at(rho).ok_or_else(outside)?;
                let scale = t.powf(-1.0 / p.alpha);
                Ok((scale * f, scale * fp / rt, scale / t * (-f / p.alpha - 0.5 * rho * fp)))
            }
        }
    }

    pub fn u(&self, t: f64, r: f64) -> Result<f64> {
        self.eval(t, r).map(|x| x.0)
    }

    fn values(&self, t: f64, grid: &RadialGrid) -> Result<Vec<f64>> {
        grid.nodes.iter().map(|&r| self.u(t, r)).collect()
    }

    /// Domain error unless `U` is defined on `[r₁, r_M]` for the run.
    pub fn check_span(&self, grid: &RadialGrid, t_end: f64) -> Result<()> {
        match &self.kind {
            BackgroundKind::StationarySingular(sol) => {
                let (lo, hi) = sol.r_range();
                if grid.r1() < lo || grid.r_m() > hi {
                    return Err(Error::domain(format!(
                        "stationary background covers [{lo:e}, {hi:e}], grid needs [{:e}, {:e}]",
                        grid.r1(),
                        grid.r_m()
                    )));
                }
            }
            BackgroundKind::SelfSimilar(_) => {
                for t in [0.0, t_end] {
                    self.u(t, grid.r1())?;
                    self.u(t, grid.r_m())?;
                }
            }
            BackgroundKind::ExplicitHomogeneous => {}
        }
        Ok(())
    }
}

/// `g(U+w) − g(U) − g'(U)w`, evaluated without cancellation when `|w| ≪ |U|`.
pub fn remainder(p: &Params, u: f64, w: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    if u == 0.0 {
        return p.g(w);
    }
    let a1 = p.alpha + 1.0;
    let x = w / u;
    let phi = if x.abs() < 1e-3 {
        // (1+x)^{α+1} − 1 − (α+1)x = Σ_{k≥2} binom(α+1, k) xᵏ
        let mut c = a1 * p.alpha / 2.0;
        let mut xk = x * x;
        let mut sum = c * xk;
        for k in 3..=8 {
            c *= (a1 - (k - 1) as f64) / k as f64;
            xk *= x;
            sum += c * xk;
        }
        sum
    } else if x > -1.0 {
        (a1 * x.ln_1p()).exp_m1() - a1 * x
    } else {
        return p.g(u + w) - p.g(u) - p.dg(u) * w;
    };
    p.g(u) * phi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TimeScheme {
    BackwardEuler,
    CrankNicolson,
}

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    /// `dt ≤ cfl / max|g'(U+w) − g'(U)|`, the Lipschitz bound of the explicit part.
    pub cfl: f64,
    pub dt_max: f64,
    pub scheme: TimeScheme,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { cfl: 0.4, dt_max: 1e-4, scheme: TimeScheme::BackwardEuler }
    }
}

#[derive(Debug, Clone)]
pub struct RunPlan {
    pub t_end: f64,
    /// Output times in `(t₀, t_end]`; `t_end` is always included.
    pub snapshots: Vec<f64>,
    pub control: StepControl,
}

impl RunPlan {
    pub fn new(t_end: f64, snapshots: &[f64]) -> Self {
        RunPlan { t_end, snapshots: snapshots.to_vec(), control: StepControl::default() }
    }

    fn targets(&self, t0: f64) -> Result<Vec<f64>> {
        let c = &self.control;
        if !(self.t_end > t0 && self.t_end.is_finite()) {
            return Err(Error::domain(format!("t_end = {} must exceed t0 = {t0}", self.t_end)));
        }
        if !(c.cfl > 0.0 && c.dt_max > 0.0 && c.cfl.is_finite() && c.dt_max.is_finite()) {
            return Err(Error::domain("cfl and dt_max must be positive"));
        }
        let mut ts = self.snapshots.clone();
        if let Some(bad) = ts.iter().find(|&&t| !(t > t0 && t <= self.t_end)) {
            return Err(Error::domain(format!("snapshot time {bad} outside ({t0}, {}]", self.t_end)));
        }
        ts.push(self.t_end);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        Ok(ts)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepStats {
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Largest `|dt·R| / max(|w|, 1)` seen.
    pub max_growth: f64,
}

impl StepStats {
    fn new() -> Self {
        StepStats { steps: 0, dt_min: f64::INFINITY, dt_max: 0.0, max_growth: 0.0 }
    }

    fn record(&mut self, dt: f64) {
        self.steps += 1;
        self.dt_min = self.dt_min.min(dt);
        self.dt_max = self.dt_max.max(dt);
    }
}

/// One θ-step of `V ∂ₜw = K w + V q w + V R`: `θ = 1` backward Euler,
/// `θ = ½` Crank–Nicolson.
struct Stepper {
    theta: f64,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
}

impl Stepper {
    fn new(scheme: TimeScheme, m: usize) -> Self {
        let theta = match scheme {
            TimeScheme::BackwardEuler => 1.0,
            TimeScheme::CrankNicolson => 0.5,
        };
        Stepper { theta, sub: vec![0.0; m], diag: vec![0.0; m], sup: vec![0.0; m], rhs: vec![0.0; m] }
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        g: &RadialGrid,
        w: &mut [f64],
        q_old: &[f64],
        q_new: &[f64],
        explicit: Option<&[f64]>,
        dt: f64,
        t_new: f64,
    ) -> Result<()> {
        let m = g.len();
        let (v, k) = (&g.volumes, &g.kappa);
        let th = self.theta * dt;
        let ex = (1.0 - self.theta) * dt;
        for i in 0..m {
            let kl = if i > 0 { k[i - 1] } else { 0.0 };
            let kr = if i + 1 < m { k[i] } else { 0.0 };
            self.sub[i] = -th * kl;
            self.sup[i] = -th * kr;
            self.diag[i] = v[i] + th * (kl + kr) - th * v[i] * q_new[i];
            let mut b = v[i] * w[i];
            if ex > 0.0 {
                let mut aw = v[i] * q_old[i] * w[i];
                if i > 0 {
                    aw += kl * (w[i - 1] - w[i]);
                }
                if i + 1 < m {
                    aw += kr * (w[i + 1] - w[i]);
                }
                b += ex * aw;
            }
            if let Some(r) = explicit {
                b += dt * v[i] * r[i];
            }
            self.rhs[i] = b;
        }
        if g.inner_fixed() {
            self.fix_row(0, 0.0);
        }
        if let Some(val) = g.outer_value(t_new) {
            self.fix_row(m - 1, val);
        }
        thomas(&self.sub, &self.diag, &self.sup, &mut self.rhs)?;
        w.copy_from_slice(&self.rhs);
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::numerical(format!("non-finite solution at r = {} (t = {t_new})", g.nodes[i])));
        }
        Ok(())
    }

    fn fix_row(&mut self, i: usize, value: f64) {
        self.sub[i] = 0.0;
        self.sup[i] = 0.0;
        self.diag[i] = 1.0;
        self.rhs[i] = value;
    }
}

/// Solves a tridiagonal system in place (`sub[0]` and `sup[m−1]` unused).
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], x: &mut [f64]) -> Result<()> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = diag[0];
    for i in 0..m {
        if i > 0 {
            d = diag[i] - sub[i] * c[i - 1];
            x[i] -= sub[i] * x[i - 1];
        }
        if d == 0.0 || !d.is_finite() {
            return Err(Error::numerical(format!("singular tridiagonal pivot at row {i}")));
        }
        c[i] = sup[i] / d;
        x[i] /= d;
    }
    for i in (0..m - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(())
}

fn next_dt(t: f64, target: f64, dt: f64) -> (f64, f64) {
    let t_new = t + dt;
    if t_new >= target - 1e-12 * target.abs().max(1.0) {
        (target - t, target)
    } else {
        (dt, t_new)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    /// `max |w| / (1 + r^{−η})` over snapshots and nodes.
    pub c_fit_w: f64,
    /// `(t, r₁^{2/α} u(t, r₁))`.
    pub sing_amp: Vec<(f64, f64)>,
    /// `(t, ∫_{r₁}^{R} |u(t) − u₀| r^{N−1} dr)`.
    pub l1_errors: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PerturbationRun {
    pub initial: RadialField,
    pub snapshots: Vec<RadialField>,
    pub report: EnvelopeReport,
    pub stats: StepStats,
}

/// IMEX run of the perturbation equation from `w0` to `plan.t_end`.
/// `l1_radius` is the outer radius of the `L¹` attainment check.
pub fn run_perturbation(
    w0: &RadialField,
    bg: &Background,
    p: &Params,
    plan: &RunPlan,
    l1_radius: f64,
) -> Result<PerturbationRun> {
    let grid = w0.grid.clone();
    let bp = bg.params();
    if bp.n != p.n || bp.alpha != p.alpha {
        return Err(Error::domain("background parameters differ from the run parameters"));
    }
    if grid.n != p.n {
        return Err(Error::domain(format!("grid dimension {} but N = {}", grid.n, p.n)));
    }
    p.eta()?;
    if w0.values[0] != 0.0 {
        return Err(Error::domain(format!(
            "w0 must vanish near r₁ = {:e} (support must start at some δ > r₁)",
            grid.r1()
        )));
    }
    let targets = plan.targets(w0.time)?;
    bg.check_span(&grid, plan.t_end)?;

    let ctrl = plan.control;
    let m = grid.len();
    let mut stepper = Stepper::new(ctrl.scheme, m);
    let mut stats = StepStats::new();
    let mut t = w0.time;
    let mut w = w0.values.clone();
    let mut u_old = bg.values(t, &grid)?;
    let mut q_old: Vec<f64> = u_old.iter().map(|&u| p.dg(u)).collect();
    let mut rem = vec![0.0; m];
    let mut snapshots = Vec::with_capacity(targets.len());

    for &target in &targets {
        while t < target {
            let mut lip = 0.0f64;
            for i in 0..m {
                rem[i] = remainder(p, u_old[i], w[i]);
                lip = lip.max((p.dg(u_old[i] + w[i]) - q_old[i]).abs());
            }
            let dt = if lip > 0.0 { ctrl.dt_max.min(ctrl.cfl / lip) } else { ctrl.dt_max };
            let (dt, t_new) = next_dt(t, target, dt);
            if !(dt > 1e-14 * t_new.max(1.0)) {
                return Err(Error::numerical(format!("time step underflow at t = {t}")));
            }
            let scale = w.iter().fold(1.0f64, |a, x| a.max(x.abs()));
            let growth = rem.iter().fold(0.0f64, |a, r| a.max((dt * r).abs())) / scale;
            stats.max_growth = stats.max_growth.max(growth);
            if growth > GROWTH_LIMIT {
                return Err(Error::numerical(format!(
                    "explicit term grew {growth:.3e}× in one step at t = {t:e} (cfl violation)"
                )));
            }
            let (u_new, q_new) = if bg.is_time_dependent() {
                let u = bg.values(t_new, &grid)?;
                let q = u.iter().map(|&x| p.dg(x)).collect();
                (u, q)
            } else {
                (u_old.clone(), q_old.clone())
            };
            stepper.step(&grid, &mut w, &q_old, &q_new, Some(&rem), dt, t_new)?;
            stats.record(dt);
            t = t_new;
            u_old = u_new;
            q_old = q_new;
        }
        snapshots.push(RadialField { grid: grid.clone(), time: t, values: w.clone() });
    }
    let report = envelope_diagnostics(w0, &snapshots, bg, p, l1_radius)?;
    Ok(PerturbationRun { initial: w0.clone(), snapshots, report, stats })
}

/// Envelope constant, inner amplitude and `L¹` distance to the initial data
/// `u₀ = U(t₀) + w₀` for a series of perturbation snapshots.
pub fn envelope_diagnostics(
    initial: &RadialField,
    series: &[RadialField],
    bg: &Background,
    p: &Params,
    l1_radius: f64,
) -> Result<EnvelopeReport> {
    let eta = p.eta()?;
    let grid = &initial.grid;
    let r1 = grid.r1();
    let u0: Vec<f64> = bg.values(initial.time, grid)?.iter().zip(&initial.values).map(|(u, w)| u + w).collect();
    let mut report = EnvelopeReport { c_fit_w: 0.0, sing_amp: vec![], l1_errors: vec![] };
    for snap in series {
        for (r, w) in grid.nodes.iter().zip(&snap.values) {
            report.c_fit_w = report.c_fit_w.max(w.abs() / (1.0 + r.powf(-eta)));
        }
        let ut = bg.values(snap.time, grid)?;
        report.sing_amp.push((snap.time, r1.powf(p.sigma()) * (ut[0] + snap.values[0])));
        let diff: Vec<f64> = (0..grid.len()).map(|i| (ut[i] + snap.values[i] - u0[i]).abs()).collect();
        report.l1_errors.push((snap.time, grid.trapezoid(&diff, l1_radius)));
    }
    Ok(report)
}

/// Snapshot CSV: `r, U, w, u, rpow_u, envelope`.
pub fn write_snapshot_csv<W: Write>(snap: &RadialField, bg: &Background, p: &Params, mut out: W) -> Result<()> {
    let eta = p.eta()?;
    let io = |e: io::Error| Error::domain(format!("write failed: {e}"));
    writeln!(out, "r,U,w,u,rpow_u,envelope").map_err(io)?;
    for (&r, &w) in snap.grid.nodes.iter().zip(&snap.values) {
        let big_u = bg.u(snap.time, r)?;
        let u = big_u + w;
        writeln!(
            out,
            "{r:.16e},{big_u:.16e},{w:.16e},{u:.16e},{:.16e},{:.16e}",
            r.powf(p.sigma()) * u,
            w.abs() / (1.0 + r.powf(-eta))
        )
        .map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LinearRun {
    pub snapshots: Vec<RadialField>,
    /// `(t, ‖w(t)‖)` after every step, starting with the initial norm.
    pub l2_history: Vec<(f64, f64)>,
    pub stats: StepStats,
}

impl LinearRun {
    /// Largest relative one-step increase of the `L²` norm.
    pub fn max_l2_increase(&self) -> f64 {
        self.l2_history
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / w[0].1.max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Implicit run of `∂ₜw = Δw + coeff·r⁻²w`. Refuses `coeff ≥ (N−2)²/4`,
/// where the problem is ill-posed.
pub fn run_linear(w0: &RadialField, coeff: f64, p: &Params, plan: &RunPlan) -> Result<LinearRun> {
    let grid = w0.grid.clone();
    if grid.n != p.n {
        return Err(Error::domain(format!("grid dimension {} but N = {}", grid.n, p.n)));
    }
    let hardy = p.hardy_constant();
    if !coeff.is_finite() || coeff >= hardy {
        return Err(Error::domain(format!(
            "potential coefficient {coeff} is not below the Hardy constant (N-2)^2/4 = {hardy}: \
             the heat equation with this inverse-square potential is ill-posed"
        )));
    }
    let targets = plan.targets(w0.time)?;
    let q: Vec<f64> = grid.nodes.iter().map(|r| coeff / (r * r)).collect();
    let mut stepper = Stepper::new(plan.control.scheme, grid.len());
    let mut stats = StepStats::new();
    let mut t = w0.time;
    let mut w = w0.values.clone();
    let mut l2_history = vec![(t, grid.l2_norm(&w))];
    let mut snapshots = Vec::with_capacity(targets.len());
    for &target in &targets {
        while t < target {
            let (dt, t_new) = next_dt(t, target, plan.control.dt_max);
            stepper.step(&grid, &mut w, &q, &q, None, dt, t_new)?;
            stats.record(dt);
            t = t_new;
            l2_history.push((t, grid.l2_norm(&w)));
        }
        snapshots.push(RadialField { grid: grid.clone(), time: t, values: w.clone() });
    }
    Ok(LinearRun { snapshots, l2_history, stats })
}

/// `(s₀/(s₀+t))^{N/2} exp(−r²/(4(s₀+t)))`, the radial heat evolution of a Gaussian.
pub fn gaussian_heat(n: u32, s0: f64, t: f64, r: f64) -> f64 {
    (s0 / (s0 + t)).powf(n as f64 / 2.0) * (-r * r / (4.0 * (s0 + t))).exp()
}

/// `(1 + √t/r)^η`.
pub fn h_envelope(eta: f64, t: f64, r: f64) -> f64 {
    (1.0 + t.sqrt() / r).powf(eta)
}

/// `max |w(t, r)| / h(t, r)` over the snapshots.
pub fn fit_h_envelope(snapshots: &[RadialField], eta: f64) -> f64 {
    let mut c = 0.0f64;
    for s in snapshots {
        for (&r, w) in s.grid.nodes.iter().zip(&s.values) {
            c = c.max(w.abs() / h_envelope(eta, s.time, r));
        }
    }
    c
}

/// `‖v/r‖ / ‖v'‖` in `L²(r^{N−1}dr)`, trapezoid quadrature and a
/// second-order difference on the nonuniform grid.
pub fn hardy_ratio(v: &RadialField) -> Result<f64> {
    let g = &v.grid;
    let (r, x) = (&g.nodes, &v.values);
    let m = r.len();
    let scale = v.max_abs();
    if scale == 0.0 {
        return Err(Error::domain("Hardy ratio of the zero function"));
    }
    if x[0].abs() > 1e-12 * scale || x[m - 1].abs() > 1e-12 * scale {
        return Err(Error::domain("Hardy ratio needs v to vanish at both grid ends"));
    }
    let mut d = vec![0.0; m];
    d[0] = (x[1] - x[0]) / (r[1] - r[0]);
    d[m - 1] = (x[m - 1] - x[m - 2]) / (r[m - 1] - r[m - 2]);
    for i in 1..m - 1 {
        let (hm, hp) = (r[i] - r[i - 1], r[i + 1] - r[i]);
        d[i] = (hm * hm * x[i + 1] - hp * hp * x[i - 1] + (hp * hp - hm * hm) * x[i]) / (hm * hp * (hm + hp));
    }
    let over_r: Vec<f64> = (0..m).map(|i| (x[i] / r[i]).powi(2)).collect();
    let grad: Vec<f64> = d.iter().map(|y| y * y).collect();
    let num = g.trapezoid(&over_r, f64::INFINITY);
    let den = g.trapezoid(&grad, f64::INFINITY);
    if !(den > 0.0) {
        return Err(Error::domain("Hardy ratio with zero gradient norm"));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p53() -> Params {
        Params::derive(5, 0.75).unwrap()
    }

    #[test]
    fn thomas_solves_small_system() {
        let sub = [0.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0];
        let sup = [-1.0, -1.0, 0.0];
        let mut x = [1.0, 0.0, 1.0];
        thomas(&sub, &diag, &sup, &mut x).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn volumes_sum_to_ball_shell() {
        let g = RadialGrid::log(5, 0.01, 3.0, 100, InnerBoundary::ZeroFlux, OuterBoundary::Neumann0).unwrap();
        let total: f64 = g.volumes().iter().sum();
        let exact = (3f64.powi(5) - 0.01f64.powi(5)) / 5.0;
        assert!((total - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn remainder_matches_direct_formula() {
        let p = p53();
        for &(u, w) in &[(1.0, 0.5), (2.0, -3.0), (-1.5, 0.2), (1e3, 1e-2), (0.0, 0.7), (3.0, -3.0)] {
            let direct = p.g(u + w) - p.g(u) - p.dg(u) * w;
            let r = remainder(&p, u, w);
            assert!((r - direct).abs() < 1e-10 * (1.0 + direct.abs()), "{u} {w}: {r} vs {direct}");
        }
        // second-order Taylor term dominates for |w| ≪ |U|
        let (u, w) = (5e8f64, 1.0f64);
        let approx = 0.5 * p.alpha * (p.alpha + 1.0) * u.powf(p.alpha - 1.0) * w * w;
        assert!((remainder(&p, u, w) / approx - 1.0).abs() < 1e-6);
    }

    #[test]
    fn grid_validation() {
        assert!(RadialGrid::log(5, 0.0, 1.0, 100, InnerBoundary::ZeroFlux, OuterBoundary::Neumann0).is_err());
        assert!(RadialGrid::log(5, 0.1, 1.0, 10, InnerBoundary::ZeroFlux, OuterBoundary::Neumann0).is_err());
        let mut nodes: Vec<f64> = (1..=64).map(|i| i as f64).collect();
        nodes[10] = nodes[9];
        assert!(RadialGrid::new(nodes, 5, InnerBoundary::ZeroFlux, OuterBoundary::Neumann0).is_err());
    }

    #[test]
    fn hat_function_is_strictly_below_hardy_constant() {
        let g = Arc::new(
            RadialGrid::log(5, 0.01, 10.0, 256, InnerBoundary::MatchBackground, OuterBoundary::zero()).unwrap(),
        );
        let mut vals = vec![0.0; 256];
        vals[100] = 1.0;
        let v = RadialField::new(g, 0.0, vals).unwrap();
        let ratio = hardy_ratio(&v).unwrap();
        assert!(ratio < 2.0 / 3.0, "{ratio}");
    }

    #[test]
    fn hardy_ratio_errors() {
        let g =
            Arc::new(RadialGrid::log(5, 0.01, 10.0, 128, InnerBoundary::ZeroFlux, OuterBoundary::Neumann0).unwrap());
        assert!(hardy_ratio(&RadialField::zeros(g.clone(), 0.0)).is_err());
        assert!(hardy_ratio(&RadialField::from_fn(g, 0.0, |_| 1.0).unwrap()).is_err());
    }
}
