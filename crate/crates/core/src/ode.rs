//! Adaptive Dormand–Prince 5(4) integration of scalar second-order ODEs
//! `y'' = F(t, y, y')`, with continuous output, event location and
//! parameter bisection.

use std::io::{self, Write};

use crate::error::{Error, Result};

type Rhs<'a> = dyn Fn(f64, f64, f64) -> f64 + Send + Sync + 'a;
type EventFn<'a> = dyn Fn(f64, f64, f64) -> f64 + Send + Sync + 'a;

/// A second-order scalar ODE `y'' = rhs(t, y, y')`.
pub struct OdeSystem<'a> {
    rhs: Box<Rhs<'a>>,
    /// Values of `t` where the right-hand side is undefined.
    pub singular_points: Vec<f64>,
}

impl<'a> OdeSystem<'a> {
    pub fn new(rhs: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'a) -> Self {
        OdeSystem { rhs: Box::new(rhs), singular_points: Vec::new() }
    }

    pub fn with_singular_points(mut self, pts: Vec<f64>) -> Self {
        self.singular_points = pts;
        self
    }

    #[inline]
    pub fn accel(&self, t: f64, y: f64, yp: f64) -> f64 {
        (self.rhs)(t, y, yp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Tolerance { abs, rel }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub tol: Tolerance,
    /// `|y|` beyond this stops the run with [`Status::Blowup`].
    pub blowup_ceiling: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
    /// Smallest admissible step as a fraction of the span.
    pub step_floor: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: Tolerance::new(1e-12, 1e-12),
            blowup_ceiling: 1e12,
            h_init: None,
            h_max: None,
            max_steps: 2_000_000,
            step_floor: 1e-14,
        }
    }
}

impl IntegrateOptions {
    pub fn with_tol(abs: f64, rel: f64) -> Self {
        IntegrateOptions { tol: Tolerance::new(abs, rel), ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Any,
    Rising,
    Falling,
}

/// A scalar functional whose sign changes are located during integration.
pub struct EventSpec<'a> {
    pub label: String,
    func: Box<EventFn<'a>>,
    pub terminal: bool,
    pub crossing: Crossing,
}

impl<'a> EventSpec<'a> {
    pub fn new(label: impl Into<String>, func: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'a) -> Self {
        EventSpec { label: label.into(), func: Box::new(func), terminal: false, crossing: Crossing::Any }
    }

    pub fn terminal(mut self) -> Self {
        self.terminal = true;
        self
    }

    pub fn crossing(mut self, c: Crossing) -> Self {
        self.crossing = c;
        self
    }

    fn eval(&self, n: &Node) -> f64 {
        (self.func)(n.t, n.y, n.yp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub t: f64,
    pub y: f64,
    pub yp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub label: String,
    pub t: f64,
    pub y: f64,
    pub yp: f64,
    pub rising: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Completed,
    Blowup,
    StepFailure,
}

/// Continuous extension of one accepted step (Hairer's `contd5` form).
#[derive(Debug, Clone, Copy)]
struct Segment {
    t_old: f64,
    h: f64,
    rc: [[f64; 2]; 5],
}

impl Segment {
    fn theta(&self, t: f64) -> f64 {
        (t - self.t_old) / self.h
    }

    fn eval(&self, t: f64) -> [f64; 2] {
        let th = self.theta(t);
        let th1 = 1.0 - th;
        let rc = &self.rc;
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            *o = rc[0][i] + th * (rc[1][i] + th1 * (rc[2][i] + th * (rc[3][i] + th1 * rc[4][i])));
        }
        out
    }

    /// Time derivative of the interpolant.
    fn eval_dt(&self, t: f64) -> [f64; 2] {
        let th = self.theta(t);
        let th1 = 1.0 - th;
        let rc = &self.rc;
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            let s = rc[3][i] + th1 * rc[4][i];
            let ds = -rc[4][i];
            let r = rc[2][i] + th * s;
            let dr = s + th * ds;
            let q = rc[1][i] + th1 * r;
            let dq = -r + th1 * dr;
            *o = (q + th * dq) / self.h;
        }
        out
    }
}

/// An adaptively sampled solution with its continuous interpolant.
///
/// Nodes are stored in increasing `t` regardless of integration direction.
#[derive(Debug, Clone)]
pub struct Trajectory {
    nodes: Vec<Node>,
    segments: Vec<Segment>,
    pub events: Vec<EventRecord>,
    pub status: Status,
    /// Label of the terminal event that ended the run, if any.
    pub stopped_by: Option<String>,
    /// Number of right-hand-side evaluations spent.
    pub rhs_evals: usize,
}

impl Trajectory {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn first(&self) -> Node {
        self.nodes[0]
    }

    pub fn last(&self) -> Node {
        *self.nodes.last().expect("trajectory has at least one node")
    }

    pub fn t_min(&self) -> f64 {
        self.nodes[0].t
    }

    pub fn t_max(&self) -> f64 {
        self.last().t
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min() && t <= self.t_max()
    }

    fn locate(&self, t: f64) -> Option<usize> {
        if !self.contains(t) || self.segments.is_empty() {
            return None;
        }
        let k = self.nodes.partition_point(|n| n.t <= t);
        Some(k.saturating_sub(1).min(self.segments.len() - 1))
    }

    /// Interpolated `(y, y')` at `t`, exact at nodes.
    pub fn eval(&self, t: f64) -> Option<(f64, f64)> {
        if self.segments.is_empty() {
            return (self.nodes.len() == 1 && t == self.nodes[0].t).then(|| (self.nodes[0].y, self.nodes[0].yp));
        }
        let k = self.locate(t)?;
        for n in [&self.nodes[k], &self.nodes[k + 1]] {
            if n.t == t {
                return Some((n.y, n.yp));
            }
        }
        let v = self.segments[k].eval(t);
        Some((v[0], v[1]))
    }

    /// Interpolated `(y, y', y'')`, where `y''` is the derivative of the
    /// interpolant for `y'` (not a fresh right-hand-side evaluation).
    pub fn eval_full(&self, t: f64) -> Option<(f64, f64, f64)> {
        let k = self.locate(t)?;
        let seg = &self.segments[k];
        let v = seg.eval(t);
        let d = seg.eval_dt(t);
        Some((v[0], v[1], d[1]))
    }

    pub fn status_ok(&self) -> Result<()> {
        match self.status {
            Status::Completed => Ok(()),
            Status::Blowup => {
                Err(Error::numerical(format!("blowup: |y| exceeded ceiling near t = {}", self.boundary_t())))
            }
            Status::StepFailure => Err(Error::numerical(format!("step size underflow near t = {}", self.boundary_t()))),
        }
    }

    /// The `t` at which an unsuccessful run halted.
    fn boundary_t(&self) -> f64 {
        if self.nodes.len() > 1 && self.segments.last().is_some_and(|s| s.h < 0.0) {
            self.t_min()
        } else {
            self.t_max()
        }
    }

    /// Joins a run that went backward from `t0` with one that went forward
    /// from the same `t0`.
    pub fn join(backward: Trajectory, forward: Trajectory) -> Result<Trajectory> {
        if backward.t_max() != forward.t_min() {
            return Err(Error::domain("trajectories do not share an endpoint"));
        }
        let mut nodes = backward.nodes;
        nodes.extend_from_slice(&forward.nodes[1..]);
        let mut segments = backward.segments;
        segments.extend(forward.segments);
        let mut events = backward.events;
        events.extend(forward.events);
        let status = match (backward.status, forward.status) {
            (Status::Completed, s) | (s, Status::Completed) => s,
            (s, _) => s,
        };
        Ok(Trajectory {
            nodes,
            segments,
            events,
            status,
            stopped_by: backward.stopped_by.or(forward.stopped_by),
            rhs_evals: backward.rhs_evals + forward.rhs_evals,
        })
    }

    /// A one-node trajectory.
    pub fn single(t: f64, y: f64, yp: f64) -> Trajectory {
        Trajectory {
            nodes: vec![Node { t, y, yp }],
            segments: Vec::new(),
            events: Vec::new(),
            status: Status::Completed,
            stopped_by: None,
            rhs_evals: 0,
        }
    }

    pub fn events_labelled<'s>(&'s self, label: &'s str) -> impl Iterator<Item = &'s EventRecord> + 's {
        self.events.iter().filter(move |e| e.label == label)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,y,yprime")?;
        for n in &self.nodes {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", n.t, n.y, n.yp)?;
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

type State = [f64; 2];

struct Stepper<'s, 'a> {
    sys: &'s OdeSystem<'a>,
    evals: usize,
}

impl Stepper<'_, '_> {
    #[inline]
    fn f(&mut self, t: f64, y: &State) -> State {
        self.evals += 1;
        [y[1], self.sys.accel(t, y[0], y[1])]
    }
}

fn axpy(y: &State, terms: &[(f64, &State)], h: f64) -> State {
    let mut out = *y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

fn err_norm(e: &State, y0: &State, y1: &State, tol: Tolerance) -> f64 {
    let mut acc = 0.0;
    for i in 0..2 {
        let sc = tol.abs + tol.rel * y0[i].abs().max(y1[i].abs());
        acc += (e[i] / sc).powi(2);
    }
    (acc / 2.0).sqrt()
}

fn initial_step(
    st: &mut Stepper,
    t0: f64,
    y0: &State,
    f0: &State,
    dir: f64,
    opts: &IntegrateOptions,
    h_max: f64,
) -> f64 {
    let tol = opts.tol;
    let norm = |v: &State, base: &State| {
        let mut acc = 0.0;
        for i in 0..2 {
            let sc = tol.abs + tol.rel * base[i].abs();
            acc += (v[i] / sc).powi(2);
        }
        (acc / 2.0).sqrt()
    };
    let d0 = norm(y0, y0);
    let d1 = norm(f0, y0);
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(h_max);
    let y1 = axpy(y0, &[(1.0, f0)], dir * h0);
    let f1 = st.f(t0 + dir * h0, &y1);
    let df = [f1[0] - f0[0], f1[1] - f0[1]];
    let d2 = norm(&df, y0) / h0;
    let m = d1.max(d2);
    let h1 = if m <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / m).powf(0.2) };
    (100.0 * h0).min(h1).min(h_max)
}

/// Illinois-modified regula falsi for the sign change of `g` on `[0, 1]`.
fn refine_root(g: impl Fn(f64) -> f64, mut ga: f64, mut gb: f64) -> f64 {
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() < 1e-15 {
            break;
        }
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c.is_finite() && c > a && c < b { c } else { 0.5 * (a + b) };
        let gc = g(c);
        if gc == 0.0 {
            return c;
        }
        if gc.signum() == gb.signum() {
            b = c;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
    }
    if ga.abs() < gb.abs() {
        a
    } else {
        b
    }
}

/// Integrates `y'' = sys.rhs(t, y, y')` from `t0` to `t_end` (either direction).
pub fn integrate(
    sys: &OdeSystem,
    t0: f64,
    y0: f64,
    yp0: f64,
    t_end: f64,
    opts: &IntegrateOptions,
    events: &[EventSpec],
) -> Result<Trajectory> {
    if !(t0.is_finite() && t_end.is_finite() && y0.is_finite() && yp0.is_finite()) {
        return Err(Error::domain("non-finite initial data or span"));
    }
    if t0 == t_end {
        return Err(Error::domain("integration span is empty (t0 = t_end)"));
    }
    if !(opts.tol.abs > 0.0 && opts.tol.rel >= 0.0) {
        return Err(Error::domain("tolerances must be positive"));
    }
    let (lo, hi) = (t0.min(t_end), t0.max(t_end));
    let mut t_stop = t_end;
    for &sp in &sys.singular_points {
        if sp > lo && sp < hi {
            if !events.iter().any(|e| e.terminal) {
                return Err(Error::domain(format!("singular point t = {sp} lies inside ({lo}, {hi})")));
            }
            if (sp - t0).abs() < (t_stop - t0).abs() {
                t_stop = sp;
            }
        }
    }

    let dir = (t_stop - t0).signum();
    let span = (t_stop - t0).abs();
    let h_max = opts.h_max.unwrap_or(span).min(span);
    let h_floor = opts.step_floor * span.max(t0.abs().max(t_stop.abs()) * 1e-2);

    let mut st = Stepper { sys, evals: 0 };
    let mut t = t0;
    let mut y: State = [y0, yp0];
    let mut k1 = st.f(t, &y);
    let mut h = match opts.h_init {
        Some(h) => h.abs().min(h_max),
        None => initial_step(&mut st, t, &y, &k1, dir, opts, h_max),
    };

    let mut nodes = vec![Node { t, y: y[0], yp: y[1] }];
    let mut segments: Vec<Segment> = Vec::new();
    let mut records = Vec::new();
    let mut gvals: Vec<f64> = events.iter().map(|e| e.eval(&nodes[0])).collect();
    let mut status = Status::Completed;
    let mut stopped_by = None;
    let mut fac_old = 1e-4f64;
    let mut rejected = false;
    let mut steps = 0usize;
    let expo1 = 0.2 - PI_BETA * 0.75;

    'outer: loop {
        if (t_stop - t) * dir <= 0.0 {
            break;
        }
        if steps >= opts.max_steps {
            status = Status::StepFailure;
            break;
        }
        let mut last = false;
        if (t + dir * h - t_stop) * dir >= 0.0 || (t_stop - t).abs() - h < 1e-3 * h {
            h = (t_stop - t).abs();
            last = true;
        }
        if h < h_floor {
            status = Status::StepFailure;
            break;
        }
        let hs = dir * h;
        let k2 = st.f(t + C2 * hs, &axpy(&y, &[(A21, &k1)], hs));
        let k3 = st.f(t + C3 * hs, &axpy(&y, &[(A31, &k1), (A32, &k2)], hs));
        let k4 = st.f(t + C4 * hs, &axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], hs));
        let k5 = st.f(t + C5 * hs, &axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], hs));
        let y6 = axpy(&y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], hs);
        let t_new = if last { t_stop } else { t + hs };
        let k6 = st.f(t + hs, &y6);
        let y_new = axpy(&y, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], hs);
        let k7 = st.f(t_new, &y_new);
        steps += 1;

        let mut e = [0.0; 2];
        for i in 0..2 {
            e[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = err_norm(&e, &y, &y_new, opts.tol);
        if !err.is_finite() || !y_new[0].is_finite() || !y_new[1].is_finite() {
            h *= FAC_MIN;
            rejected = true;
            continue;
        }
        let fac11 = err.powf(expo1);
        if err > 1.0 {
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            rejected = true;
            continue;
        }

        // Accepted step.
        let mut fac = fac11 / fac_old.powf(PI_BETA);
        fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
        let mut h_new = (h / fac).min(h_max);
        if rejected {
            h_new = h_new.min(h);
        }
        fac_old = err.max(1e-4);
        rejected = false;

        let mut rc = [[0.0; 2]; 5];
        for i in 0..2 {
            let dy = y_new[i] - y[i];
            let bspl = hs * k1[i] - dy;
            rc[0][i] = y[i];
            rc[1][i] = dy;
            rc[2][i] = bspl;
            rc[3][i] = dy - hs * k7[i] - bspl;
            rc[4][i] = hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        let seg = Segment { t_old: t, h: hs, rc };

        if y_new[0].abs() > opts.blowup_ceiling {
            status = Status::Blowup;
            break;
        }

        let new_node = Node { t: t_new, y: y_new[0], yp: y_new[1] };
        let mut hits: Vec<(f64, usize, bool, Node)> = Vec::new();
        for (j, ev) in events.iter().enumerate() {
            let ga = gvals[j];
            let gb = ev.eval(&new_node);
            let crossed = (ga < 0.0 && gb >= 0.0) || (ga > 0.0 && gb <= 0.0);
            if crossed {
                let rising = gb > ga;
                let wanted = match ev.crossing {
                    Crossing::Any => true,
                    Crossing::Rising => rising,
                    Crossing::Falling => !rising,
                };
                if wanted {
                    let g_at = |th: f64| {
                        let tt = t + th * hs;
                        let v = seg.eval(tt);
                        (ev.func)(tt, v[0], v[1])
                    };
                    let th = if gb == 0.0 { 1.0 } else { refine_root(g_at, ga, gb) };
                    let te = if th >= 1.0 { t_new } else { t + th * hs };
                    let v = if th >= 1.0 { y_new } else { seg.eval(te) };
                    hits.push((th, j, rising, Node { t: te, y: v[0], yp: v[1] }));
                }
            }
            gvals[j] = gb;
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (th, j, rising, n) in hits {
            records.push(EventRecord { label: events[j].label.clone(), t: n.t, y: n.y, yp: n.yp, rising });
            if events[j].terminal {
                stopped_by = Some(events[j].label.clone());
                if th > 0.0 && n.t != t {
                    segments.push(seg);
                    nodes.push(n);
                }
                break 'outer;
            }
        }

        segments.push(seg);
        nodes.push(new_node);
        t = t_new;
        y = y_new;
        k1 = k7;
        h = h_new;
    }

    if dir < 0.0 {
        nodes.reverse();
        segments.reverse();
    }
    Ok(Trajectory { nodes, segments, events: records, status, stopped_by, rhs_evals: st.evals })
}

/// Bisects a boolean predicate down to a bracket of width `≤ tol`, returning
/// the final bracket `(lo, hi)` with `predicate(lo) != predicate(hi)`.
pub fn bisect_bracket(mut predicate: impl FnMut(f64) -> bool, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    if !(lo.is_finite() && hi.is_finite()) || lo == hi {
        return Err(Error::domain("bisection needs two distinct finite endpoints"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("bisection tolerance must be positive"));
    }
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let pa = predicate(a);
    if pa == predicate(b) {
        return Err(Error::domain(format!("predicate has the same value at both ends of [{a}, {b}]")));
    }
    while b - a > tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if predicate(m) == pa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok((a, b))
}

/// Midpoint of the flip bracket found by [`bisect_bracket`].
pub fn bisect_parameter(predicate: impl FnMut(f64) -> bool, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (a, b) = bisect_bracket(predicate, lo, hi, tol)?;
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn oscillator() -> OdeSystem<'static> {
        OdeSystem::new(|_, y, _| -y)
    }

    #[test]
    fn cosine_to_pi() {
        let tr = integrate(&oscillator(), 0.0, 1.0, 0.0, PI, &IntegrateOptions::with_tol(1e-11, 1e-11), &[]).unwrap();
        assert_eq!(tr.status, Status::Completed);
        let n = tr.last();
        assert!((n.t - PI).abs() < 1e-15);
        assert!((n.y + 1.0).abs() < 1e-8);
    }

    #[test]
    fn dense_output_matches_nodes_and_cosine() {
        let tr = integrate(&oscillator(), 0.0, 1.0, 0.0, 10.0, &IntegrateOptions::with_tol(1e-12, 1e-12), &[]).unwrap();
        for n in tr.nodes() {
            assert_eq!(tr.eval(n.t).unwrap(), (n.y, n.yp));
        }
        for i in 0..=1000 {
            let t = 10.0 * i as f64 / 1000.0;
            let (y, yp) = tr.eval(t).unwrap();
            assert!((y - t.cos()).abs() < 1e-9, "t={t}");
            assert!((yp + t.sin()).abs() < 1e-9);
            let (_, _, ypp) = tr.eval_full(t).unwrap();
            assert!((ypp + t.cos()).abs() < 1e-7);
        }
        assert!(tr.eval(10.5).is_none());
    }

    #[test]
    fn backward_run_returns_to_start() {
        let opts = IntegrateOptions::with_tol(1e-12, 1e-12);
        let sys = OdeSystem::new(|_, y, yp| -0.3 * yp - y * y * y);
        let fw = integrate(&sys, 0.0, 1.0, 0.5, 5.0, &opts, &[]).unwrap();
        let end = fw.last();
        let bw = integrate(&sys, 5.0, end.y, end.yp, 0.0, &opts, &[]).unwrap();
        assert_eq!(bw.t_min(), 0.0);
        assert_eq!(bw.t_max(), 5.0);
        let s = bw.first();
        assert!((s.y - 1.0).abs() < 1e-10 && (s.yp - 0.5).abs() < 1e-10);
    }

    #[test]
    fn zero_crossings_of_cosine() {
        let ev = [EventSpec::new("zero", |_, y, _| y)];
        let tr = integrate(&oscillator(), 0.0, 1.0, 0.0, 20.0, &IntegrateOptions::default(), &ev).unwrap();
        let ts: Vec<f64> = tr.events_labelled("zero").map(|e| e.t).collect();
        assert_eq!(ts.len(), 6);
        for (k, t) in ts.iter().enumerate() {
            assert!((t - (k as f64 + 0.5) * PI).abs() < 1e-10);
        }
        assert!(!tr.events[0].rising && tr.events[1].rising);
    }

    #[test]
    fn terminal_event_stops_run() {
        let ev = [EventSpec::new("down", |_, y, _| y).terminal()];
        let tr = integrate(&oscillator(), 0.0, 1.0, 0.0, 20.0, &IntegrateOptions::default(), &ev).unwrap();
        assert_eq!(tr.stopped_by.as_deref(), Some("down"));
        assert!((tr.t_max() - PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn blowup_is_reported() {
        let sys = OdeSystem::new(|_, y, _| y * y);
        let tr = integrate(&sys, 0.0, 1.0, 1.0, 10.0, &IntegrateOptions::default(), &[]).unwrap();
        assert_eq!(tr.status, Status::Blowup);
        assert!(tr.status_ok().is_err());
    }

    #[test]
    fn singular_point_inside_span_is_rejected() {
        let sys = OdeSystem::new(|t, _, yp| -2.0 * yp / t).with_singular_points(vec![0.0]);
        assert!(integrate(&sys, -1.0, 1.0, 0.0, 1.0, &IntegrateOptions::default(), &[]).is_err());
        assert!(integrate(&sys, 1.0, 1.0, 0.0, 2.0, &IntegrateOptions::default(), &[]).is_ok());
    }

    #[test]
    fn empty_span_is_rejected() {
        assert!(integrate(&oscillator(), 1.0, 0.0, 0.0, 1.0, &IntegrateOptions::default(), &[]).is_err());
    }

    #[test]
    fn sqrt_two_by_bisection() {
        let c = bisect_parameter(|x| x * x > 2.0, 1.0, 2.0, 1e-12).unwrap();
        assert!((c - 2f64.sqrt()).abs() < 1e-12);
        assert!(bisect_parameter(|x| x > 0.0, 1.0, 1.0, 1e-12).is_err());
        assert!(bisect_parameter(|x| x > 5.0, 1.0, 2.0, 1e-12).is_err());
    }

    #[test]
    fn tightening_tolerance_reduces_error() {
        let reference = (10.0f64).cos();
        let mut prev = f64::INFINITY;
        for k in 0..6 {
            let tol = 1e-6 / 2f64.powi(2 * k);
            let tr = integrate(&oscillator(), 0.0, 1.0, 0.0, 10.0, &IntegrateOptions::with_tol(tol, tol), &[]).unwrap();
            let err = (tr.last().y - reference).abs();
            assert!(err <= 4.0 * prev, "tol {tol}: {err} vs {prev}");
            prev = err;
        }
    }
}
