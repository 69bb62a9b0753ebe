//! Singular self-similar profiles `U(t, x) = t^{-1/α} f(|x|/√t)`, where
//!
//! `f'' + ((N-1)/r + r/2) f' + f/α + |f|^α f = 0`,
//!
//! constructed by shooting outward from the singular origin. In Emden
//! variables `f(r) = r^{-2/α} v(s)`, `s = -ln r`, the profile equation reads
//! `v'' + (γ − e^{-2s}/2) v' − βv + |v|^α v = 0`, and `v → β^{1/α}` at the origin.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{bisect_bracket, integrate, EventSpec, IntegrateOptions, OdeSystem, Status, Trajectory};
use crate::params::{characteristic_roots, Params, Regime};
use crate::stationary::{fit_decay_rate, RateFit};

/// Relative size of `P(λ)` below which a rate is treated as resonant.
const RESONANCE_TOL: f64 = 1e-9;
const ZERO_EVENT: &str = "f=0";

pub const DEFAULT_R_MAX: f64 = 40.0;
pub const MAX_R_MAX: f64 = 320.0;

/// Polynomial in `s`, lowest degree first.
#[derive(Debug, Clone, Default, PartialEq)]
struct Poly(Vec<f64>);

impl Poly {
    fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    fn add_scaled_product(&mut self, a: &Poly, b: &Poly, w: f64) {
        if a.is_zero() || b.is_zero() {
            return;
        }
        let need = a.0.len() + b.0.len() - 1;
        if self.0.len() < need {
            self.0.resize(need, 0.0);
        }
        for (i, x) in a.0.iter().enumerate() {
            if *x == 0.0 {
                continue;
            }
            for (j, y) in b.0.iter().enumerate() {
                self.0[i + j] += w * x * y;
            }
        }
    }

    fn add_scaled(&mut self, a: &Poly, w: f64) {
        if self.0.len() < a.0.len() {
            self.0.resize(a.0.len(), 0.0);
        }
        for (i, x) in a.0.iter().enumerate() {
            self.0[i] += w * x;
        }
    }

    fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(j, c)| j as f64 * c).collect())
    }

    /// `(q, q', q'')` at `s`.
    fn eval3(&self, s: f64) -> (f64, f64, f64) {
        let (mut q, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for &c in self.0.iter().rev() {
            d2 = d2 * s + 2.0 * d1;
            d1 = d1 * s + q;
            q = q * s + c;
        }
        (q, d1, d2)
    }

    fn abs_bound(&self, s: f64) -> f64 {
        let sa = s.abs();
        self.0.iter().rev().fold(0.0, |acc, c| acc * sa + c.abs())
    }
}

/// Solves `q'' + b q' + c q = rhs` for a polynomial `q`. When `resonant`
/// (`c = 0`), the constant term is fixed at zero.
fn solve_poly_ode(rhs: &Poly, b: f64, c: f64, resonant: bool) -> Poly {
    let m = rhs.0.len();
    if m == 0 {
        return Poly::default();
    }
    let mut q = vec![0.0; m + 1];
    if resonant {
        // (j+1) b q_{j+1} + (j+2)(j+1) q_{j+2} = rhs_j
        for j in (0..m).rev() {
            let next = if j + 2 <= m { (j + 2) as f64 * (j + 1) as f64 * q[j + 2] } else { 0.0 };
            q[j + 1] = (rhs.0[j] - next) / ((j + 1) as f64 * b);
        }
    } else {
        // c q_j + (j+1) b q_{j+1} + (j+2)(j+1) q_{j+2} = rhs_j
        q.truncate(m);
        for j in (0..m).rev() {
            let n1 = if j + 1 < m { (j + 1) as f64 * b * q[j + 1] } else { 0.0 };
            let n2 = if j + 2 < m { (j + 2) as f64 * (j + 1) as f64 * q[j + 2] } else { 0.0 };
            q[j] = (rhs.0[j] - n1 - n2) / c;
        }
    }
    while q.len() > 1 && *q.last().unwrap() == 0.0 {
        q.pop();
    }
    Poly(q)
}

/// Formal near-origin expansion `v = β^{1/α}(1 + X)` with
/// `X(s) = Σ cⁿ e^{−(nω₁+2k)s} q_{n,k}(s)`, `c = C1/β^{1/α}`.
///
/// `q_{1,0} = 1`; the fast mode `e^{−ω₂s}` carries no free coefficient, and
/// where `nω₁ + 2k = ω₂` the coefficient polynomial gains a secular factor
/// with zero constant term.
#[derive(Debug, Clone)]
pub struct FormalSeries {
    pub n_max: usize,
    pub k_max: usize,
    pub omega1: f64,
    pub omega2: f64,
    lambda: Vec<Vec<f64>>,
    q: Vec<Vec<Poly>>,
    /// Indices `(n, k)` at which a secular term was generated.
    pub resonances: Vec<(usize, usize)>,
}

impl FormalSeries {
    pub fn build(p: &Params, n_max: usize, k_max: usize) -> Result<Self> {
        let (w1, w2) = characteristic_roots(p)?;
        if n_max < 1 {
            return Err(Error::domain("series needs n_max >= 1"));
        }
        let (a, bt, g) = (p.alpha, p.beta, p.gamma);
        let char_poly = |l: f64| l * l - g * l + a * bt;
        let mut lambda = vec![vec![0.0; k_max + 1]; n_max + 1];
        let mut q = vec![vec![Poly::default(); k_max + 1]; n_max + 1];
        // Coefficients of Y = (1 + X)^{α+1}; Y_{0,0} = 1.
        let mut y = vec![vec![Poly::default(); k_max + 1]; n_max + 1];
        y[0][0] = Poly::constant(1.0);
        let mut resonances = Vec::new();

        for n in 1..=n_max {
            for k in 0..=k_max {
                let lam = n as f64 * w1 + 2.0 * k as f64;
                lambda[n][k] = lam;
                // Nonlinear part of Y_{n,k} from lower orders:
                // n Y_{n,k} = Σ ((α+2)i − n) X_{i,j} Y_{n−i,k−j}.
                let mut nl = Poly::default();
                for i in 1..n {
                    let w = ((a + 2.0) * i as f64 - n as f64) / n as f64;
                    for j in 0..=k {
                        nl.add_scaled_product(&q[i][j], &y[n - i][k - j], w);
                    }
                }
                let qnk = if n == 1 && k == 0 {
                    Poly::constant(1.0)
                } else {
                    let mut rhs = Poly::default();
                    rhs.add_scaled(&nl, -bt);
                    if k >= 1 {
                        let prev = &q[n][k - 1];
                        rhs.add_scaled(&prev.derivative(), 0.5);
                        rhs.add_scaled(prev, -0.5 * lambda[n][k - 1]);
                    }
                    let pl = char_poly(lam);
                    let resonant = pl.abs() <= RESONANCE_TOL * (lam * lam + g * lam + a * bt);
                    if resonant && !rhs.is_zero() {
                        resonances.push((n, k));
                    }
                    solve_poly_ode(&rhs, g - 2.0 * lam, pl, resonant)
                };
                let mut ynk = nl;
                ynk.add_scaled(&qnk, a + 1.0);
                y[n][k] = ynk;
                q[n][k] = qnk;
            }
        }
        Ok(FormalSeries { n_max, k_max, omega1: w1, omega2: w2, lambda, q, resonances })
    }

    /// `(X, X', X'')` at `s` for scaled amplitude `c`.
    pub fn eval(&self, c: f64, s: f64) -> (f64, f64, f64) {
        let (mut x, mut x1, mut x2) = (0.0, 0.0, 0.0);
        let mut cn = 1.0;
        for n in 1..=self.n_max {
            cn *= c;
            if cn == 0.0 {
                break;
            }
            for k in 0..=self.k_max {
                let lam = self.lambda[n][k];
                let e = (-lam * s).exp();
                if e == 0.0 {
                    break;
                }
                let (qv, qd, qdd) = self.q[n][k].eval3(s);
                let f = cn * e;
                x += f * qv;
                x1 += f * (qd - lam * qv);
                x2 += f * (qdd - 2.0 * lam * qd + lam * lam * qv);
            }
        }
        (x, x1, x2)
    }

    /// Size of the outermost retained layer (`n = n_max` or `k = k_max`),
    /// an estimate of the truncation error in `X`.
    pub fn truncation_estimate(&self, c: f64, s: f64) -> f64 {
        let mut est = 0.0f64;
        for n in 1..=self.n_max {
            for k in 0..=self.k_max {
                if n != self.n_max && k != self.k_max {
                    continue;
                }
                let mag = c.abs().powi(n as i32) * (-self.lambda[n][k] * s).exp() * self.q[n][k].abs_bound(s);
                est = est.max(mag);
            }
        }
        est
    }

    /// Coefficient polynomial in `s` of the `(n, k)` term (lowest degree first).
    pub fn coefficient(&self, n: usize, k: usize) -> Option<&[f64]> {
        self.q.get(n).and_then(|row| row.get(k)).map(|p| p.0.as_slice())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ShootOptions {
    pub ode: IntegrateOptions,
    /// Target size of the slow-mode term `|C1| r_init^{ω₁}/β^{1/α}` at the start.
    pub x_init: f64,
    /// Upper bound on the starting radius.
    pub r_init_cap: f64,
    pub n_max: usize,
    pub k_max: usize,
    /// Truncation estimate (relative) that the start must meet.
    pub truncation_tol: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            // The step cap keeps the node CSV plot-ready even for C1 = 0.
            ode: IntegrateOptions { h_max: Some(0.1), ..IntegrateOptions::with_tol(1e-13, 1e-12) },
            x_init: 0.1,
            r_init_cap: 0.01,
            n_max: 40,
            k_max: 10,
            truncation_tol: 1e-15,
        }
    }
}

/// How the solution is continued inside the starting radius.
#[derive(Debug, Clone)]
pub enum NearOrigin {
    Series(FormalSeries),
    /// `v = B + C1 e^{−as} cos(θs)` for complex characteristic roots.
    Oscillatory {
        decay: f64,
        freq: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProfileStatus {
    Completed,
    Blowup,
    StepFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuEstimate {
    /// Tail-corrected far-field coefficient at `r_max`.
    pub mu: f64,
    /// Largest pairwise difference over the last four checkpoints.
    pub err: f64,
    /// Uncorrected `r^{2/α} f(r_max)`.
    pub raw: f64,
    pub checkpoints: Vec<(f64, f64)>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OriginCheck {
    pub radii: Vec<f64>,
    /// `|r^{2/α} f − β^{1/α}|`.
    pub limit_residuals: Vec<f64>,
    /// `|r^{1+2/α} f' + (2/α) r^{2/α} f|`.
    pub derivative_residuals: Vec<f64>,
}

impl OriginCheck {
    /// Residuals decrease toward the origin and end below `tol`.
    pub fn trending_below(&self, tol: f64) -> bool {
        let d = &self.derivative_residuals;
        d.windows(2).all(|w| w[1] <= w[0]) && d.last().is_some_and(|&x| x < tol)
    }
}

#[derive(Debug, Clone)]
pub struct ProfileSolution {
    pub params: Params,
    pub c1: f64,
    pub near_origin: NearOrigin,
    /// Emden-variable trajectory over `s ∈ [−ln r_max, −ln r_init]`.
    pub traj: Trajectory,
    pub r_init: f64,
    pub r_max: f64,
    /// Truncation estimate of the starting state (relative to `β^{1/α}`).
    pub truncation: f64,
    /// Zeros of `f`, increasing.
    pub zeros: Vec<f64>,
    pub mu: Option<MuEstimate>,
    pub origin_check: OriginCheck,
    pub status: ProfileStatus,
}

/// Right-hand side of the profile equation in Emden variables.
pub fn profile_system(p: &Params) -> OdeSystem<'static> {
    let (gamma, beta, alpha) = (p.gamma, p.beta, p.alpha);
    OdeSystem::new(move |s, v, vp| -(gamma - 0.5 * (-2.0 * s).exp()) * vp + beta * v - v.abs().powf(alpha) * v)
}

/// Pointwise residual of the profile equation, absolute and relative to the
/// size of its terms.
pub fn profile_residual(r: f64, f: f64, fp: f64, fpp: f64, p: &Params) -> (f64, f64) {
    let terms = [fpp, (p.dim() - 1.0) / r * fp, 0.5 * r * fp, f / p.alpha, p.g(f)];
    let res: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|x| x.abs()).sum();
    (res.abs(), if scale > 0.0 { res.abs() / scale } else { 0.0 })
}

/// Emden state `(v, v', v'')` from `(f, f', f'')` inverse: `f` from Emden data.
fn emden_to_profile(r: f64, v: f64, vp: f64, vpp: f64, sg: f64) -> (f64, f64, f64) {
    let f = r.powf(-sg) * v;
    let fp = -r.powf(-sg - 1.0) * (vp + sg * v);
    let fpp = r.powf(-sg - 2.0) * (sg * (sg + 1.0) * v + (2.0 * sg + 1.0) * vp + vpp);
    (f, fp, fpp)
}

impl NearOrigin {
    fn build(p: &Params, opts: &ShootOptions) -> Result<Self> {
        match p.regime {
            Regime::StrictSubHardy => Ok(NearOrigin::Series(FormalSeries::build(p, opts.n_max, opts.k_max)?)),
            Regime::WideStationary => {
                let decay = 0.5 * p.gamma;
                let freq = (p.alpha * p.beta - decay * decay).max(0.0).sqrt();
                Ok(NearOrigin::Oscillatory { decay, freq })
            }
            Regime::Inadmissible => {
                Err(Error::domain(format!("no singular profiles: alpha = {} outside (2/(N-2), 4/(N-2))", p.alpha)))
            }
        }
    }

    /// `(v, v', v'')` inside the starting radius.
    fn eval(&self, c1: f64, b: f64, s: f64) -> (f64, f64, f64) {
        match self {
            NearOrigin::Series(fs) => {
                let (x, x1, x2) = fs.eval(c1 / b, s);
                (b * (1.0 + x), b * x1, b * x2)
            }
            NearOrigin::Oscillatory { decay, freq } => {
                let e = c1 * (-decay * s).exp();
                let (cs, sn) = ((freq * s).cos(), (freq * s).sin());
                let v1 = e * (-decay * cs - freq * sn);
                let v2 = e * ((decay * decay - freq * freq) * cs + 2.0 * decay * freq * sn);
                (b + e * cs, v1, v2)
            }
        }
    }

    /// Decay rate of the leading correction.
    fn lead_rate(&self) -> f64 {
        match self {
            NearOrigin::Series(fs) => fs.omega1,
            NearOrigin::Oscillatory { decay, .. } => *decay,
        }
    }

    fn truncation(&self, c1: f64, b: f64, s: f64) -> f64 {
        match self {
            NearOrigin::Series(fs) => fs.truncation_estimate(c1 / b, s),
            NearOrigin::Oscillatory { decay, .. } => (c1 / b * (-decay * s).exp()).powi(2),
        }
    }
}

/// `(f, f')` at `r_init` from the near-origin expansion.
pub fn series_init(c1: f64, r_init: f64, p: &Params) -> Result<(f64, f64)> {
    series_init_with(c1, r_init, p, &ShootOptions::default())
}

pub fn series_init_with(c1: f64, r_init: f64, p: &Params, opts: &ShootOptions) -> Result<(f64, f64)> {
    if !(r_init > 0.0) || !c1.is_finite() {
        return Err(Error::domain("series_init needs r_init > 0 and finite C1"));
    }
    let b = p.amplitude()?;
    let no = NearOrigin::build(p, opts)?;
    let s = -r_init.ln();
    let tr = no.truncation(c1, b, s);
    if tr > 1e-8 {
        return Err(Error::domain(format!(
            "r_init = {r_init} too large: series truncation estimate {tr:e} exceeds 1e-8"
        )));
    }
    let (v, vp, vpp) = no.eval(c1, b, s);
    let (f, fp, _) = emden_to_profile(r_init, v, vp, vpp, p.sigma());
    Ok((f, fp))
}

/// Starting `s` with `|C1| e^{−ω s} ≈ x_init β^{1/α}`, pushed inward until
/// the truncation estimate meets the tolerance.
fn starting_point(no: &NearOrigin, c1: f64, b: f64, opts: &ShootOptions) -> (f64, f64) {
    let s_cap = -opts.r_init_cap.ln();
    let rate = no.lead_rate();
    let x_init = match no {
        NearOrigin::Series(_) => opts.x_init,
        NearOrigin::Oscillatory { .. } => opts.x_init.min(1e-7),
    };
    let mut s = if c1 == 0.0 { s_cap } else { ((c1.abs() / (x_init * b)).ln() / rate).max(s_cap) };
    let mut tr = no.truncation(c1, b, s);
    let mut tries = 0;
    while tr > opts.truncation_tol && tries < 200 {
        s += std::f64::consts::LN_2;
        tr = no.truncation(c1, b, s);
        tries += 1;
    }
    (s, tr)
}

/// Shoots the profile with slow-mode coefficient `c1` out to `r_max`.
pub fn shoot_profile(c1: f64, p: &Params, r_max: f64) -> Result<ProfileSolution> {
    shoot_profile_with(c1, p, r_max, &ShootOptions::default())
}

pub fn shoot_profile_with(c1: f64, p: &Params, r_max: f64, opts: &ShootOptions) -> Result<ProfileSolution> {
    if !c1.is_finite() {
        return Err(Error::domain("C1 must be finite"));
    }
    let b = p.amplitude()?;
    let no = NearOrigin::build(p, opts)?;
    let (s_init, truncation) = starting_point(&no, c1, b, opts);
    let r_init = (-s_init).exp();
    if !(r_max > 2.0 * r_init) || !r_max.is_finite() {
        return Err(Error::domain(format!("r_max = {r_max} must exceed 2 r_init = {}", 2.0 * r_init)));
    }
    let (v0, vp0, _) = no.eval(c1, b, s_init);
    let sys = profile_system(p);
    let ev = [EventSpec::new(ZERO_EVENT, |_, v, _| v)];
    let traj = integrate(&sys, s_init, v0, vp0, -r_max.ln(), &opts.ode, &ev)?;
    let status = match traj.status {
        Status::Completed => ProfileStatus::Completed,
        Status::Blowup => ProfileStatus::Blowup,
        Status::StepFailure => ProfileStatus::StepFailure,
    };
    let mut zeros: Vec<f64> = traj.events_labelled(ZERO_EVENT).map(|e| (-e.t).exp()).collect();
    zeros.sort_by(f64::total_cmp);

    let mut prof = ProfileSolution {
        params: p.clone(),
        c1,
        near_origin: no,
        traj,
        r_init,
        r_max,
        truncation,
        zeros,
        mu: None,
        origin_check: OriginCheck { radii: vec![], limit_residuals: vec![], derivative_residuals: vec![] },
        status,
    };
    prof.origin_check = prof.compute_origin_check();
    if status == ProfileStatus::Completed {
        prof.mu = Some(prof.compute_mu());
    }
    Ok(prof)
}

/// Shoots at the default `r_max`, doubling it (up to [`MAX_R_MAX`]) until the
/// far-field coefficient has converged.
pub fn shoot_profile_auto(c1: f64, p: &Params) -> Result<ProfileSolution> {
    let mut r_max = DEFAULT_R_MAX;
    loop {
        let prof = shoot_profile(c1, p, r_max)?;
        let done = match &prof.mu {
            Some(m) => m.converged,
            None => true,
        };
        if done || r_max * 2.0 > MAX_R_MAX {
            return Ok(prof);
        }
        r_max *= 2.0;
    }
}

pub fn extract_mu(prof: &ProfileSolution) -> Result<(f64, f64)> {
    match (&prof.mu, prof.status) {
        (Some(m), ProfileStatus::Completed) => Ok((m.mu, m.err)),
        _ => Err(Error::domain(format!("profile for C1 = {} did not reach r_max ({:?})", prof.c1, prof.status))),
    }
}

impl ProfileSolution {
    pub fn s_init(&self) -> f64 {
        -self.r_init.ln()
    }

    fn amplitude(&self) -> f64 {
        self.params.b.unwrap_or(0.0)
    }

    /// Far-field tail `v ≈ μ + (g(μ) − βμ) e^{2s}` beyond `r_max`.
    fn tail(&self, s: f64) -> Option<(f64, f64, f64)> {
        let mu = self.mu.as_ref()?.mu;
        let c = self.params.g(mu) - self.params.beta * mu;
        let e = (2.0 * s).exp();
        Some((mu + c * e, 2.0 * c * e, 4.0 * c * e))
    }

    /// `(v, v', v'')` at any `s`: series inside `r_init`, dense trajectory
    /// on the shot, far-field tail beyond `r_max` (completed shots only).
    pub fn emden_at(&self, s: f64) -> Option<(f64, f64, f64)> {
        if s >= self.s_init() {
            return Some(self.near_origin.eval(self.c1, self.amplitude(), s));
        }
        if self.traj.contains(s) {
            return self.traj.eval_full(s);
        }
        if s < self.traj.t_min() && self.status == ProfileStatus::Completed {
            return self.tail(s);
        }
        None
    }

    /// `(f, f', f'')` at radius `r`.
    pub fn f_at(&self, r: f64) -> Option<(f64, f64, f64)> {
        if !(r > 0.0) {
            return None;
        }
        let (v, vp, vpp) = self.emden_at(-r.ln())?;
        Some(emden_to_profile(r, v, vp, vpp, self.params.sigma()))
    }

    /// `r^{2/α} f(r)`.
    pub fn rpow_f(&self, r: f64) -> Option<f64> {
        self.emden_at(-r.ln()).map(|x| x.0)
    }

    fn compute_mu(&self) -> MuEstimate {
        let mut checkpoints = Vec::with_capacity(5);
        for j in 0..5 {
            let r = self.r_max / 2f64.powi(4 - j);
            let (v, vp) = self.traj.eval(-r.ln()).expect("checkpoint inside shot");
            checkpoints.push((r, v - 0.5 * vp));
        }
        let mu = checkpoints[4].1;
        let mut err = 0.0f64;
        for i in 1..5 {
            for j in (i + 1)..5 {
                err = err.max((checkpoints[i].1 - checkpoints[j].1).abs());
            }
        }
        MuEstimate { mu, err, raw: self.traj.first().y, checkpoints, converged: err <= 1e-3 * (1.0 + mu.abs()) }
    }

    fn compute_origin_check(&self) -> OriginCheck {
        let b = self.amplitude();
        let rate = self.near_origin.lead_rate();
        // Radii from r_init down to where the leading correction is ~1e-8.
        let s0 = self.s_init();
        let x0 = (self.c1.abs() * (-rate * s0).exp()).max(1e-300);
        let span = if self.c1 == 0.0 { 20.0 } else { ((x0 / 1e-8).ln() / rate).max(1.0) };
        let mut ck = OriginCheck { radii: vec![], limit_residuals: vec![], derivative_residuals: vec![] };
        for j in 0..5 {
            let s = s0 + span * j as f64 / 4.0;
            let (v, vp, _) = self.near_origin.eval(self.c1, b, s);
            ck.radii.push((-s).exp());
            ck.limit_residuals.push((v - b).abs());
            ck.derivative_residuals.push(vp.abs());
        }
        ck
    }

    /// Measured slope of `ln|r^{2/α}f − β^{1/α}|` against `ln r` over the
    /// first decade of the shot outside `r_init`.
    pub fn near_origin_rate(&self) -> Result<RateFit> {
        let b = self.amplitude();
        let s_hi = self.s_init();
        let s_lo = (s_hi - std::f64::consts::LN_10).max(self.traj.t_min());
        let n = 40;
        let mut s = Vec::with_capacity(n);
        let mut dev = Vec::with_capacity(n);
        for i in 0..n {
            let si = s_lo + (s_hi - s_lo) * i as f64 / (n - 1) as f64;
            let (v, _) = self.traj.eval(si).ok_or_else(|| Error::domain("rate window outside shot"))?;
            s.push(si);
            dev.push(v - b);
        }
        fit_decay_rate(&s, &dev)
    }

    /// CSV with columns `r, f, fprime, rpow_f`, one row per node, `r` increasing.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "r,f,fprime,rpow_f")?;
        for n in self.traj.nodes().iter().rev() {
            let r = (-n.t).exp();
            let (f, fp, _) = emden_to_profile(r, n.y, n.yp, 0.0, self.params.sigma());
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", r, f, fp, n.y)?;
        }
        Ok(())
    }
}

/// Residual of `∂ₜU − ΔU − |U|^α U` for `U = t^{-1/α} f(r/√t)`, relative to
/// the size of its terms, with all derivatives from the profile's continuous
/// representation.
pub fn similarity_residual(prof: &ProfileSolution, t: f64, r: f64) -> Option<f64> {
    let p = &prof.params;
    let rho = r / t.sqrt();
    let (f, fp, fpp) = prof.f_at(rho)?;
    let a = p.alpha;
    let scale = t.powf(-1.0 / a);
    let u = scale * f;
    let ur = scale * fp / t.sqrt();
    let urr = scale * fpp / t;
    let ut = scale / t * (-f / a - 0.5 * rho * fp);
    let terms = [ut, -urr, -(p.dim() - 1.0) / r * ur, -p.g(u)];
    let res: f64 = terms.iter().sum();
    let size: f64 = terms.iter().map(|x| x.abs()).sum();
    Some(if size > 0.0 { res.abs() / size } else { 0.0 })
}

/// `max |r^{2/α}f − β^{1/α}| ((r+1)/r)^ρ` over `samples` log-spaced radii
/// (plus the `r → 0` limit `|C1|`).
pub fn envelope_check(prof: &ProfileSolution, p: &Params, samples: usize) -> Result<f64> {
    let rho = p.rho()?;
    let b = p.amplitude()?;
    if samples < 2 {
        return Err(Error::domain("envelope check needs at least 2 samples"));
    }
    let lo = (prof.r_init * 1e-6).ln();
    let hi = prof.r_max.ln();
    let mut c_fit = match prof.near_origin {
        NearOrigin::Series(_) => prof.c1.abs(),
        NearOrigin::Oscillatory { .. } => 0.0,
    };
    for i in 0..samples {
        let r = (lo + (hi - lo) * i as f64 / (samples - 1) as f64).exp();
        let v = prof.rpow_f(r).ok_or_else(|| Error::domain(format!("profile not defined at r = {r}")))?;
        c_fit = c_fit.max((v - b).abs() * ((r + 1.0) / r).powf(rho));
    }
    Ok(c_fit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub c1: f64,
    pub zeros: usize,
    pub mu: Option<f64>,
    pub err: Option<f64>,
    pub converged: bool,
    pub r_max: f64,
    pub status: String,
}

impl ScanRow {
    /// Sign-changing profile with a converged far-field coefficient.
    pub fn is_sign_changing_candidate(&self) -> bool {
        self.zeros >= 1 && self.converged && self.mu.is_some_and(f64::is_finite)
    }
}

fn scan_row(c1: f64, p: &Params, r_max: Option<f64>) -> ScanRow {
    let shot = match r_max {
        Some(r) => shoot_profile(c1, p, r),
        None => shoot_profile_auto(c1, p),
    };
    match shot {
        Ok(prof) => ScanRow {
            c1,
            zeros: prof.zeros.len(),
            mu: prof.mu.as_ref().map(|m| m.mu),
            err: prof.mu.as_ref().map(|m| m.err),
            converged: prof.mu.as_ref().is_some_and(|m| m.converged),
            r_max: prof.r_max,
            status: format!("{:?}", prof.status),
        },
        Err(e) => ScanRow {
            c1,
            zeros: 0,
            mu: None,
            err: None,
            converged: false,
            r_max: r_max.unwrap_or(DEFAULT_R_MAX),
            status: e.to_string(),
        },
    }
}

/// Grid scan of `C1` over `range` with `n` points. With `r_max = None`, each
/// row uses [`shoot_profile_auto`]. Rows are returned sorted by `C1`.
pub fn scan_sign_changing(p: &Params, range: (f64, f64), n: usize, r_max: Option<f64>) -> Result<Vec<ScanRow>> {
    if n < 2 {
        return Err(Error::domain("scan needs n >= 2"));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::domain(format!("invalid C1 range ({lo}, {hi})")));
    }
    p.amplitude()?;
    p.require_admissible()?;
    let grid: Vec<f64> =
        (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect();
    Ok(grid.par_iter().map(|&c| scan_row(c, p, r_max)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub c1_lo: f64,
    pub c1_hi: f64,
    pub zeros_lo: usize,
    pub zeros_hi: usize,
    pub r_max: f64,
}

/// Refines every change of zero count between adjacent scan rows to a bracket
/// of width `≤ tol`, counting zeros on a fixed `r_max` per bracket.
pub fn refine_transitions(p: &Params, rows: &[ScanRow], tol: f64) -> Result<Vec<Transition>> {
    let pairs: Vec<(&ScanRow, &ScanRow)> = rows
        .windows(2)
        .filter(|w| w[0].zeros != w[1].zeros && w[0].status == "Completed" && w[1].status == "Completed")
        .map(|w| (&w[0], &w[1]))
        .collect();
    pairs
        .par_iter()
        .map(|(a, b)| {
            let r_max = a.r_max.max(b.r_max);
            let count = |c: f64| shoot_profile(c, p, r_max).map(|s| s.zeros.len()).unwrap_or(usize::MAX);
            let (za, zb) = (count(a.c1), count(b.c1));
            if za == zb {
                return Err(Error::numerical(format!(
                    "zero counts at C1 = {} and {} agree at r_max = {r_max}",
                    a.c1, b.c1
                )));
            }
            let (lo, hi) = bisect_bracket(|c| count(c) == za, a.c1, b.c1, tol)?;
            Ok(Transition { c1_lo: lo, c1_hi: hi, zeros_lo: count(lo), zeros_hi: count(hi), r_max })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p53() -> Params {
        Params::derive(5, 0.75).unwrap()
    }

    #[test]
    fn leading_coefficients_match_closed_forms() {
        let p = p53();
        let fs = FormalSeries::build(&p, 8, 3).unwrap();
        let (w1, _) = (fs.omega1, fs.omega2);
        let cp = |l: f64| l * l - p.gamma * l + p.alpha * p.beta;
        assert!((cp(2.0 * w1) + 4.0 / 9.0).abs() < 1e-14);
        let q20 = fs.coefficient(2, 0).unwrap();
        let want = -(p.alpha + 1.0) * p.alpha * p.beta / (2.0 * cp(2.0 * w1));
        assert!((q20[0] - want).abs() < 1e-14);
        let q11 = fs.coefficient(1, 1).unwrap();
        assert!((q11[0] + w1 / (2.0 * cp(w1 + 2.0))).abs() < 1e-14);
        assert_eq!(fs.resonances, vec![(6, 0)]);
        assert_eq!(fs.coefficient(6, 0).unwrap().len(), 2);
        assert_eq!(fs.coefficient(6, 0).unwrap()[0], 0.0);
    }

    #[test]
    fn power_recurrence_matches_direct_power() {
        let p = p53();
        let fs = FormalSeries::build(&p, 30, 6).unwrap();
        let c = 0.7;
        let s = 9.0;
        let (x, x1, x2) = fs.eval(c, s);
        let res = x2 + (p.gamma - 0.5 * (-2.0 * s).exp()) * x1 + p.beta * ((1.0 + x).powf(p.alpha + 1.0) - 1.0 - x);
        assert!(x.abs() > 1e-3);
        assert!(res.abs() < 1e-15, "residual {res}");
    }

    #[test]
    fn series_solves_profile_equation_near_origin() {
        let p = p53();
        let b = p.b.unwrap();
        let fs = FormalSeries::build(&p, 40, 10).unwrap();
        for (c1, s) in [(1.0, 8.0), (-2.0, 12.0), (0.05, 3.0)] {
            let (x, x1, x2) = fs.eval(c1 / b, s);
            let (v, vp, vpp) = (b * (1.0 + x), b * x1, b * x2);
            let res = vpp + (p.gamma - 0.5 * (-2.0 * s).exp()) * vp - p.beta * v + p.g(v);
            assert!(res.abs() < 1e-14, "C1={c1}: {res}");
        }
    }

    #[test]
    fn homogeneous_start() {
        let p = p53();
        let b = p.b.unwrap();
        let sg = p.sigma();
        for r in [1e-3f64, 0.01, 0.1] {
            let (f, fp) = series_init(0.0, r, &p).unwrap();
            assert!((f - b * r.powf(-sg)).abs() < 1e-14 * f);
            assert!((fp + sg * b * r.powf(-sg - 1.0)).abs() < 1e-14 * fp.abs());
        }
    }

    #[test]
    fn series_init_rejects_large_radius() {
        let p = p53();
        assert!(series_init(5.0, 0.5, &p).is_err());
        assert!(series_init(1.0, 0.0, &p).is_err());
    }

    #[test]
    fn homogeneous_profile_residual() {
        let p = p53();
        let b = p.b.unwrap();
        let sg = p.sigma();
        for i in 0..=40 {
            let r = 0.1 * 100f64.powf(i as f64 / 40.0);
            let f = b * r.powf(-sg);
            let (_, rel) = profile_residual(r, f, -sg * f / r, sg * (sg + 1.0) * f / (r * r), &p);
            assert!(rel < 1e-14);
        }
    }
}
