//! Radial stationary solutions `u'' + (N-1)/r u' + |u|^α u = 0`, studied in
//! Emden variables `u(r) = r^{-2/α} v(s)`, `s = -ln r`, where the equation
//! becomes the damped oscillator `v'' + γv' - βv + |v|^α v = 0`.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{integrate, EventSpec, IntegrateOptions, OdeSystem, Trajectory};
use crate::params::Params;

/// Energy band inside which the sign of `f` is treated as undecided.
pub const ENERGY_BAND: f64 = 1e-9;
/// Span added (in `s`) per extension when the energy sign is undecided.
pub const EXTENSION: f64 = 20.0;
pub const MAX_EXTENSIONS: usize = 3;

const ZERO_EVENT: &str = "v=0";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmdenState {
    pub s: f64,
    pub v: f64,
    pub vprime: f64,
}

impl EmdenState {
    pub fn r(&self) -> f64 {
        (-self.s).exp()
    }
}

pub fn emden_forward(r: f64, u: f64, uprime: f64, p: &Params) -> Result<EmdenState> {
    if !(r > 0.0) {
        return Err(Error::domain(format!("radius r = {r} must be positive")));
    }
    let sg = p.sigma();
    let v = r.powf(sg) * u;
    Ok(EmdenState { s: -r.ln(), v, vprime: -sg * v - r.powf(sg + 1.0) * uprime })
}

pub fn emden_backward(st: &EmdenState, p: &Params) -> (f64, f64, f64) {
    let sg = p.sigma();
    let r = st.r();
    let u = st.v * r.powf(-sg);
    let uprime = -(st.vprime + sg * st.v) * r.powf(-sg - 1.0);
    (r, u, uprime)
}

/// `F(v, v') = ½v'² + |v|^{α+2}/(α+2) − βv²/2`.
#[inline]
pub fn energy(v: f64, vp: f64, p: &Params) -> f64 {
    0.5 * vp * vp + v.abs().powf(p.alpha + 2.0) / (p.alpha + 2.0) - 0.5 * p.beta * v * v
}

pub fn lyapunov_energy(st: &EmdenState, p: &Params) -> f64 {
    energy(st.v, st.vprime, p)
}

/// Right-hand side of the autonomous Emden equation.
pub fn emden_system(p: &Params) -> OdeSystem<'static> {
    let (gamma, beta, alpha) = (p.gamma, p.beta, p.alpha);
    OdeSystem::new(move |_, v, vp| -gamma * vp + beta * v - v.abs().powf(alpha) * v)
}

/// Right-hand side of the radial equation in `r`, singular at `r = 0`.
pub fn radial_system(p: &Params) -> OdeSystem<'static> {
    let (nm1, alpha) = (p.dim() - 1.0, p.alpha);
    OdeSystem::new(move |r, u, up| -nm1 / r * up - u.abs().powf(alpha) * u).with_singular_points(vec![0.0])
}

/// Pointwise residual of the radial stationary equation, absolute and
/// relative to the size of its terms.
pub fn radial_residual(r: f64, u: f64, up: f64, upp: f64, p: &Params) -> (f64, f64) {
    let terms = [upp, (p.dim() - 1.0) / r * up, p.g(u)];
    let res: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|x| x.abs()).sum();
    (res.abs(), if scale > 0.0 { res.abs() / scale } else { 0.0 })
}

/// The energy-zero criterion in the original variables; equals
/// `r^{-4/α} F(v, v')` and so shares the sign of the energy.
pub fn criterion_residual(r: f64, u: f64, up: f64, p: &Params) -> f64 {
    let a = p.alpha;
    0.5 * r * r * up * up
        + (2.0 / a) * r * u * up
        + r * r * u.abs().powf(a + 2.0) / (a + 2.0)
        + (4.0 - (p.dim() - 2.0) * a) / (a * a) * u * u
}

/// Initial data `(r₀, a, b)` of the explicit two-parameter family of
/// sign-changing singular solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilySeed {
    pub r0: f64,
    pub a: f64,
    pub b: f64,
}

impl FamilySeed {
    pub fn new(r0: f64, a: f64, p: &Params) -> Result<Self> {
        p.require_admissible()?;
        if !(r0 > 0.0) || !r0.is_finite() {
            return Err(Error::domain(format!("r0 = {r0} must be positive")));
        }
        let al = p.alpha;
        let a_max = ((al + 2.0) / 2.0).powf(1.0 / al);
        if !(a > 0.0 && a < a_max) {
            return Err(Error::domain(format!("a = {a} must lie in (0, {a_max})")));
        }
        let bracket = al + 2.0 - 2.0 * a.powf(al);
        let rhs = a * a * ((p.dim() - 2.0) * al - 2.0) / (al * al * (al + 2.0)) * bracket;
        if !(rhs > 0.0) {
            return Err(Error::domain(format!("a = {a} is on the boundary of its interval")));
        }
        Ok(FamilySeed { r0, a, b: 2.0 * a / al + (2.0 * rhs).sqrt() })
    }

    /// `(u(r₀), u'(r₀))`.
    pub fn initial_data(&self, p: &Params) -> Result<(f64, f64)> {
        let amp = p.amplitude()?;
        let sg = p.sigma();
        Ok((self.a * amp * self.r0.powf(-sg), -self.b * amp * self.r0.powf(-sg - 1.0)))
    }

    /// The seed in Emden variables, computed directly (v = aB, v' = B(b − 2a/α)).
    pub fn emden_state(&self, p: &Params) -> Result<EmdenState> {
        let amp = p.amplitude()?;
        Ok(EmdenState { s: -self.r0.ln(), v: self.a * amp, vprime: amp * (self.b - p.sigma() * self.a) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StationarySeed {
    /// Regular solution with `u(0) = c`.
    Regular {
        c: f64,
    },
    SingularFamily(FamilySeed),
    EmdenInit(EmdenState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolutionKind {
    Regular,
    ConstantSignSingular,
    SignChangingSingular,
    TrivialZero,
    ExactHomogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OriginSign {
    Plus,
    Minus,
    NotSingular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub kind: SolutionKind,
    pub s_zero_of_energy: Option<f64>,
    pub sign_at_origin: OriginSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OriginBehavior {
    FiniteLimit(f64),
    /// `r^{2/α}u → sign·β^{1/α}`; carries the measured limit.
    SingularAmplitude {
        sign: OriginSign,
        amplitude: f64,
    },
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub params: Params,
    pub seed: StationarySeed,
    /// Emden-variable trajectory, `s` increasing (toward the origin).
    pub traj: Trajectory,
    pub classification: Classification,
    pub origin_limit: Option<f64>,
    /// Zeros of `u`, listed in order of increasing `s` (decreasing `r`).
    pub zero_crossings: Vec<f64>,
    pub energy_monotone: bool,
    pub max_energy_increase: f64,
    pub opts: IntegrateOptions,
}

#[derive(Debug, Clone, Copy)]
pub struct StationaryOptions {
    pub ode: IntegrateOptions,
    pub extensions: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions { ode: IntegrateOptions::with_tol(1e-13, 1e-12), extensions: MAX_EXTENSIONS }
    }
}

/// Where the regular expansion `u ≈ c(1 − |c|^α r²/(2N))` is evaluated.
pub fn regular_start(c: f64, p: &Params) -> Result<EmdenState> {
    if !(c.is_finite() && c != 0.0) {
        return Err(Error::domain("regular seed needs finite nonzero c (use emden_init for 0)"));
    }
    let r = 1e-4 * c.abs().powf(-p.alpha / 2.0);
    let k = c.abs().powf(p.alpha);
    let n = p.dim();
    let u = c * (1.0 - k * r * r / (2.0 * n));
    let up = -c * k * r / n;
    emden_forward(r, u, up, p)
}

fn integrate_emden(p: &Params, start: EmdenState, s_lo: f64, s_hi: f64, opts: &IntegrateOptions) -> Result<Trajectory> {
    let sys = emden_system(p);
    let ev = [EventSpec::new(ZERO_EVENT, |_, v, _| v)];
    let backward = if s_lo < start.s {
        integrate(&sys, start.s, start.v, start.vprime, s_lo, opts, &ev)?
    } else {
        Trajectory::single(start.s, start.v, start.vprime)
    };
    let forward = if s_hi > start.s {
        integrate(&sys, start.s, start.v, start.vprime, s_hi, opts, &ev)?
    } else {
        Trajectory::single(start.s, start.v, start.vprime)
    };
    Trajectory::join(backward, forward)
}

/// Solves for the stationary solution determined by `seed` on `r_span`.
///
/// Regular seeds are integrated outward from their small-`r` start only
/// (inward integration along the regular branch is exponentially unstable);
/// `r_span.0` may be 0 for them.
pub fn solve_stationary(seed: StationarySeed, p: &Params, r_span: (f64, f64)) -> Result<StationarySolution> {
    solve_stationary_with(seed, p, r_span, &StationaryOptions::default())
}

pub fn solve_stationary_with(
    seed: StationarySeed,
    p: &Params,
    r_span: (f64, f64),
    opts: &StationaryOptions,
) -> Result<StationarySolution> {
    let (r_lo, r_hi) = r_span;
    let regular = matches!(seed, StationarySeed::Regular { .. });
    if !(r_hi > r_lo && r_hi.is_finite() && (r_lo > 0.0 || (regular && r_lo == 0.0))) {
        return Err(Error::domain(format!("invalid radius span ({r_lo}, {r_hi})")));
    }
    let start = match seed {
        StationarySeed::Regular { c } => regular_start(c, p)?,
        StationarySeed::SingularFamily(fs) => fs.emden_state(p)?,
        StationarySeed::EmdenInit(st) => st,
    };
    if !(start.v.is_finite() && start.vprime.is_finite() && start.s.is_finite()) {
        return Err(Error::domain("non-finite initial state"));
    }
    let mut s_lo = -r_hi.ln();
    let mut s_hi = if regular { start.s } else { -r_lo.ln() };

    let mut attempt = 0;
    loop {
        let traj = integrate_emden(p, start, s_lo, s_hi, &opts.ode)?;
        traj.status_ok()?;
        match classify_trajectory(&traj, p) {
            Ok(classification) => {
                return Ok(finish(seed, p, traj, classification, opts.ode));
            }
            Err(Undecided { low, high }) if attempt < opts.extensions => {
                attempt += 1;
                if low {
                    s_lo -= EXTENSION;
                }
                if high && !regular {
                    s_hi += EXTENSION;
                }
                if !low && (!high || regular) {
                    return Err(undetermined(&traj, p));
                }
            }
            Err(_) => return Err(undetermined(&traj, p)),
        }
    }
}

fn undetermined(traj: &Trajectory, p: &Params) -> Error {
    let f0 = energy(traj.first().y, traj.first().yp, p);
    let f1 = energy(traj.last().y, traj.last().yp, p);
    Error::Undetermined(format!(
        "energy sign not resolved on s in [{}, {}] (f = {f0:e} .. {f1:e}); extend the span",
        traj.t_min(),
        traj.t_max()
    ))
}

fn finish(
    seed: StationarySeed,
    p: &Params,
    traj: Trajectory,
    classification: Classification,
    opts: IntegrateOptions,
) -> StationarySolution {
    let zero_crossings = traj.events_labelled(ZERO_EVENT).map(|e| (-e.t).exp()).collect::<Vec<_>>();
    let mut zc = zero_crossings;
    zc.sort_by(|a, b| b.total_cmp(a));
    let mut max_inc = 0.0f64;
    let mut prev = f64::INFINITY;
    for n in traj.nodes() {
        let f = energy(n.y, n.yp, p);
        if prev.is_finite() {
            max_inc = max_inc.max(f - prev);
        }
        prev = f;
    }
    let slack = 10.0 * (opts.tol.abs + opts.tol.rel * energy_scale(&traj, p));
    let mut sol = StationarySolution {
        params: p.clone(),
        seed,
        traj,
        classification,
        origin_limit: None,
        zero_crossings: zc,
        energy_monotone: max_inc <= slack,
        max_energy_increase: max_inc,
        opts,
    };
    sol.origin_limit = match origin_behavior(&sol) {
        Ok(OriginBehavior::FiniteLimit(c)) => Some(c),
        Ok(OriginBehavior::SingularAmplitude { amplitude, .. }) => Some(amplitude),
        Err(_) => None,
    };
    sol
}

/// Largest magnitude of the individual energy terms along the trajectory;
/// sets the scale of round-off in `F`.
pub fn energy_scale(traj: &Trajectory, p: &Params) -> f64 {
    traj.nodes()
        .iter()
        .map(|n| {
            let v2 = n.y * n.y;
            (0.5 * n.yp * n.yp).max(0.5 * p.beta * v2).max(n.y.abs().powf(p.alpha + 2.0))
        })
        .fold(1.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Undecided {
    low: bool,
    high: bool,
}

fn classify_trajectory(traj: &Trajectory, p: &Params) -> std::result::Result<Classification, Undecided> {
    let nodes = traj.nodes();
    let amp = p.b.unwrap_or(0.0);
    if nodes.iter().all(|n| n.y == 0.0 && n.yp == 0.0) {
        return Ok(Classification {
            kind: SolutionKind::TrivialZero,
            s_zero_of_energy: None,
            sign_at_origin: OriginSign::NotSingular,
        });
    }
    let first = nodes[0];
    if amp > 0.0 {
        for sign in [1.0, -1.0] {
            if nodes.iter().all(|n| (n.y - sign * amp).abs() <= 1e-10 * amp && n.yp.abs() <= 1e-10 * amp) {
                return Ok(Classification {
                    kind: SolutionKind::ExactHomogeneous,
                    s_zero_of_energy: None,
                    sign_at_origin: if sign > 0.0 { OriginSign::Plus } else { OriginSign::Minus },
                });
            }
        }
    }
    let last = traj.last();
    let f_lo = energy(first.y, first.yp, p);
    let f_hi = energy(last.y, last.yp, p);
    let band = ENERGY_BAND;
    let origin_sign = if last.y >= 0.0 { OriginSign::Plus } else { OriginSign::Minus };
    let singular = |kind, s0| Classification { kind, s_zero_of_energy: s0, sign_at_origin: origin_sign };
    let regular =
        Classification { kind: SolutionKind::Regular, s_zero_of_energy: None, sign_at_origin: OriginSign::NotSingular };
    let small_end = |v: f64| v.abs() < 1e-6;
    match (f_lo > band, f_lo < -band, f_hi > band, f_hi < -band) {
        (true, _, true, _) => Ok(regular),
        (_, true, _, true) => Ok(singular(SolutionKind::ConstantSignSingular, None)),
        (true, _, _, true) => Ok(singular(SolutionKind::SignChangingSingular, Some(energy_zero(traj, p)))),
        (_, true, true, _) => Err(Undecided { low: false, high: false }),
        (true, _, false, false) if small_end(last.y) => Ok(regular),
        (false, false, _, true) if small_end(first.y) => Ok(singular(SolutionKind::ConstantSignSingular, None)),
        (lo_ok, lo_neg, hi_ok, hi_neg) => Err(Undecided { low: !(lo_ok || lo_neg), high: !(hi_ok || hi_neg) }),
    }
}

/// Classifies an already integrated Emden trajectory without extending it.
pub fn classify(traj: &Trajectory, p: &Params) -> Result<Classification> {
    classify_trajectory(traj, p).map_err(|_| undetermined(traj, p))
}

/// The unique `s₀` with `f(s₀) = 0`, by bisection on the dense output.
fn energy_zero(traj: &Trajectory, p: &Params) -> f64 {
    let nodes = traj.nodes();
    let f = |s: f64| {
        let (v, vp) = traj.eval(s).expect("inside span");
        energy(v, vp, p)
    };
    let k = nodes
        .windows(2)
        .position(|w| energy(w[0].y, w[0].yp, p) > 0.0 && energy(w[1].y, w[1].yp, p) <= 0.0)
        .unwrap_or(0);
    let (mut a, mut b) = (nodes[k].t, nodes[k + 1].t);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

pub fn origin_behavior(sol: &StationarySolution) -> Result<OriginBehavior> {
    let p = &sol.params;
    let amp = p.b.unwrap_or(0.0);
    let last = sol.traj.last();
    let sg = p.sigma();
    match sol.classification.kind {
        SolutionKind::ExactHomogeneous => {
            return Ok(OriginBehavior::SingularAmplitude { sign: sol.classification.sign_at_origin, amplitude: last.y })
        }
        SolutionKind::TrivialZero => return Ok(OriginBehavior::FiniteLimit(0.0)),
        _ => {}
    }
    let singular = last.t.abs() >= 15.0 && amp > 0.0;
    if singular {
        let sign = if last.y >= 0.0 { 1.0 } else { -1.0 };
        let target = sign * amp;
        let drv = -sg * last.y - last.yp;
        if (last.y - target).abs() < 1e-4
            && last.yp.abs() < 1e-4
            && (drv + sg * target).abs() < 1e-4 * sg * amp.max(1.0)
        {
            return Ok(OriginBehavior::SingularAmplitude {
                sign: if sign > 0.0 { OriginSign::Plus } else { OriginSign::Minus },
                amplitude: last.y,
            });
        }
    }
    let nodes = sol.traj.nodes();
    if nodes.len() >= 2 && last.y.abs() < 1e-6 {
        let prev = nodes[nodes.len() - 2];
        let u1 = last.y * (sg * last.t).exp();
        let u0 = prev.y * (sg * prev.t).exp();
        if (u1 - u0).abs() <= 1e-6 * u1.abs().max(1e-300) {
            return Ok(OriginBehavior::FiniteLimit(u1));
        }
    }
    Err(Error::Undetermined(format!("origin behavior unresolved at s = {} (v = {}, v' = {})", last.t, last.y, last.yp)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Least-squares slope of `ln|dev|` against `−s`.
pub fn fit_decay_rate(s: &[f64], dev: &[f64]) -> Result<RateFit> {
    if s.len() != dev.len() {
        return Err(Error::domain("sample arrays differ in length"));
    }
    if s.len() < 10 {
        return Err(Error::domain(format!("rate fit needs at least 10 samples, got {}", s.len())));
    }
    if let Some(d) = dev.iter().find(|d| !(d.abs() >= 1e-13)) {
        return Err(Error::domain(format!("deviation {d:e} is below the floating-point floor")));
    }
    let n = s.len() as f64;
    let xs: Vec<f64> = s.iter().map(|x| -x).collect();
    let ys: Vec<f64> = dev.iter().map(|d| d.abs().ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::domain("rate fit window has zero width"));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit { slope, r2, samples: s.len() })
}

/// Spacing (in `s`) of the samples used by [`fit_singular_rate`].
pub const RATE_SAMPLE_SPACING: f64 = 0.25;

/// Measured approach rate of `v(s)` to `±β^{1/α}` over `window`.
pub fn fit_singular_rate(sol: &StationarySolution, p: &Params, window: (f64, f64)) -> Result<RateFit> {
    let amp = p.amplitude()?;
    let (lo, hi) = window;
    if !(hi > lo) || !sol.traj.contains(lo) || !sol.traj.contains(hi) {
        return Err(Error::domain(format!("window [{lo}, {hi}] is not inside the trajectory")));
    }
    let n = ((hi - lo) / RATE_SAMPLE_SPACING).floor() as usize + 1;
    let mut s = Vec::with_capacity(n);
    let mut dev = Vec::with_capacity(n);
    let sign = sol.traj.eval(hi).map(|(v, _)| v.signum()).unwrap_or(1.0);
    for i in 0..n {
        let si = lo + i as f64 * RATE_SAMPLE_SPACING;
        let (v, _) = sol.traj.eval(si).expect("inside span");
        let d = v - sign * amp;
        if d.abs() >= 0.1 {
            return Err(Error::domain(format!("window not asymptotic: |v - B| = {} at s = {si}", d.abs())));
        }
        s.push(si);
        dev.push(d);
    }
    fit_decay_rate(&s, &dev)
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `γ∫_{s1}^{s2} v'² ds` by Gauss–Legendre quadrature on each step of the
/// dense output.
pub fn dissipation_integral(traj: &Trajectory, p: &Params, s1: f64, s2: f64) -> f64 {
    let mut total = 0.0;
    for w in traj.nodes().windows(2) {
        let a = w[0].t.max(s1);
        let b = w[1].t.min(s2);
        if b <= a {
            continue;
        }
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, wt) in GL5 {
            let (_, vp) = traj.eval(mid + half * x).expect("inside span");
            total += wt * half * vp * vp;
        }
    }
    p.gamma * total
}

impl StationarySolution {
    /// `(u, u')` at radius `r` from the dense Emden output.
    pub fn u_at(&self, r: f64) -> Option<(f64, f64)> {
        let s = -r.ln();
        let (v, vp) = self.traj.eval(s)?;
        let (_, u, up) = emden_backward(&EmdenState { s, v, vprime: vp }, &self.params);
        Some((u, up))
    }

    /// Radius range covered by the trajectory.
    pub fn r_range(&self) -> (f64, f64) {
        ((-self.traj.t_max()).exp(), (-self.traj.t_min()).exp())
    }

    pub fn energy_at(&self, s: f64) -> Option<f64> {
        self.traj.eval(s).map(|(v, vp)| energy(v, vp, &self.params))
    }

    /// CSV with columns `s, r, v, vprime, u, uprime, energy`, one row per node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "s,r,v,vprime,u,uprime,energy")?;
        for n in self.traj.nodes() {
            let st = EmdenState { s: n.t, v: n.y, vprime: n.yp };
            let (r, u, up) = emden_backward(&st, &self.params);
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                n.t,
                r,
                n.y,
                n.yp,
                u,
                up,
                energy(n.y, n.yp, &self.params)
            )?;
        }
        Ok(())
    }
}
