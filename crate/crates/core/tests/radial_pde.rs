use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use singular_heat::radial_pde::*;
use singular_heat::selfsimilar::shoot_profile_auto;
use singular_heat::stationary::{solve_stationary, EmdenState, StationarySeed};
use singular_heat::Params;

const SNAPS: [f64; 5] = [0.005, 0.01, 0.02, 0.04, 0.05];

fn p53() -> Params {
    Params::derive(5, 0.75).unwrap()
}

fn demo_grid(m: usize) -> Arc<RadialGrid> {
    Arc::new(RadialGrid::for_delta(5, 0.5, m).unwrap())
}

fn demo_run(m: usize, dt_max: f64) -> PerturbationRun {
    let p = p53();
    let bg = Background::homogeneous(&p).unwrap();
    let w0 = RadialField::bump(demo_grid(m), 1.0, 0.4, 1.0).unwrap();
    let mut plan = RunPlan::new(0.05, &SNAPS);
    plan.control.dt_max = dt_max;
    run_perturbation(&w0, &bg, &p, &plan, 5.0).unwrap()
}

#[test]
fn zero_perturbation_stays_zero() {
    let p = p53();
    let b = p.b.unwrap();
    let grid = demo_grid(128);
    let homog = Background::homogeneous(&p).unwrap();
    let sol = solve_stationary(StationarySeed::EmdenInit(EmdenState { s: 0.0, v: b, vprime: 0.0 }), &p, (1e-4, 30.0))
        .unwrap();
    let stat = Background::stationary(sol);
    let w0 = RadialField::zeros(grid, 0.0);
    for bg in [homog.clone(), stat] {
        let run = run_perturbation(&w0, &bg, &p, &RunPlan::new(0.01, &[0.005]), 5.0).unwrap();
        for s in &run.snapshots {
            assert!(s.max_abs() < 1e-10);
        }
    }
    let run = run_perturbation(&w0, &homog, &p, &RunPlan::new(0.01, &[0.005]), 5.0).unwrap();
    for &(_, a) in &run.report.sing_amp {
        assert!((a - b).abs() < 1e-14 * b);
    }
    for &(_, e) in &run.report.l1_errors {
        assert_eq!(e, 0.0);
    }
}

#[test]
fn homogeneous_bump_demo() {
    let p = p53();
    let b = p.b.unwrap();
    let run = demo_run(512, 1e-4);
    println!("stats {:?}", run.stats);
    println!("report {:?}", run.report);
    for &(_, a) in &run.report.sing_amp {
        assert!((a - b).abs() < 0.02 * b);
    }
    assert!(run.report.c_fit_w.is_finite() && run.report.c_fit_w > 0.0);
    let l1: Vec<f64> = run.report.l1_errors.iter().take(4).map(|x| x.1).collect();
    for w in l1.windows(2) {
        assert!(w[0] < w[1], "{l1:?}");
    }
    // comparison principle: positive background, nonnegative data
    for s in &run.snapshots {
        assert!(s.values().iter().all(|&w| w >= -1e-8));
    }

    let half_dt = demo_run(512, 5e-5);
    let rel = (half_dt.report.c_fit_w / run.report.c_fit_w - 1.0).abs();
    println!("dt halving: C_fit {} vs {} ({rel})", run.report.c_fit_w, half_dt.report.c_fit_w);
    assert!(rel < 0.1);

    let fine = demo_run(1024, 1e-4);
    let amp = |r: &PerturbationRun| r.report.sing_amp.last().unwrap().1;
    let da = (amp(&fine) / amp(&run) - 1.0).abs();
    let dc = (fine.report.c_fit_w / run.report.c_fit_w - 1.0).abs();
    println!("grid doubling: amp {da}, C_fit {dc}");
    assert!(da < 0.01 && dc < 0.1);
}

#[test]
fn backward_euler_converges_to_crank_nicolson_at_first_order() {
    let p = p53();
    let bg = Background::homogeneous(&p).unwrap();
    let w0 = RadialField::bump(demo_grid(256), 1.0, 0.4, 1.0).unwrap();
    let run = |scheme, dt| {
        let mut plan = RunPlan::new(0.02, &[]);
        plan.control.scheme = scheme;
        plan.control.dt_max = dt;
        run_perturbation(&w0, &bg, &p, &plan, 5.0).unwrap().snapshots[0].values().to_vec()
    };
    let cn = run(TimeScheme::CrankNicolson, 2.5e-5);
    let dist = |a: &[f64]| a.iter().zip(&cn).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let e1 = dist(&run(TimeScheme::BackwardEuler, 1e-4));
    let e2 = dist(&run(TimeScheme::BackwardEuler, 5e-5));
    println!("BE errors {e1} {e2}");
    assert!((1.7..2.3).contains(&(e1 / e2)), "{e1} {e2}");
}

#[test]
fn sign_changing_self_similar_background() {
    let p = p53();
    let prof = shoot_profile_auto(0.5, &p).unwrap();
    assert!(!prof.zeros.is_empty());
    let zero = prof.zeros[0];
    let tau = 1.5 * zero;
    let (f_tau, _, _) = prof.f_at(tau).unwrap();
    assert!(f_tau < 0.0);
    let bg = Background::self_similar(prof).unwrap();
    let delta = 0.5;
    let grid = Arc::new(RadialGrid::for_delta(5, delta, 256).unwrap());
    let w0 = RadialField::bump(grid, 1.0, 0.4, 1.0).unwrap();
    let t_end = ((0.5 * delta) / tau).powi(2).min(0.05);
    let run = run_perturbation(&w0, &bg, &p, &RunPlan::new(t_end, &[]), 5.0).unwrap();
    let snap = &run.snapshots[0];
    let r = tau * t_end.sqrt();
    let nodes = snap.grid.nodes();
    let i = nodes.iter().position(|&x| x >= r).unwrap();
    let u = bg.u(snap.time, nodes[i]).unwrap() + snap.values()[i];
    let expect = snap.time.powf(-1.0 / p.alpha) * f_tau;
    println!("t={t_end} r={r} u={u} expected≈{expect}");
    assert!(u < 0.5 * expect, "u = {u}");
}

#[test]
fn perturbation_preconditions() {
    let p = p53();
    let bg = Background::homogeneous(&p).unwrap();
    let grid = demo_grid(128);
    let bad = RadialField::from_fn(grid.clone(), 0.0, |_| 1.0).unwrap();
    assert!(run_perturbation(&bad, &bg, &p, &RunPlan::new(0.01, &[]), 5.0).is_err());
    let w0 = RadialField::zeros(grid, 0.0);
    assert!(run_perturbation(&w0, &bg, &p, &RunPlan::new(0.01, &[0.02]), 5.0).is_err());
    assert!(run_perturbation(&w0, &bg, &p, &RunPlan::new(-1.0, &[]), 5.0).is_err());
    let stat = Background::stationary(
        solve_stationary(
            StationarySeed::EmdenInit(EmdenState { s: 0.0, v: p.b.unwrap(), vprime: 0.0 }),
            &p,
            (0.1, 1.0),
        )
        .unwrap(),
    );
    assert!(run_perturbation(&w0, &stat, &p, &RunPlan::new(0.01, &[]), 5.0).is_err());
}

#[test]
fn large_data_trips_the_growth_guard() {
    let p = p53();
    let bg = Background::homogeneous(&p).unwrap();
    let w0 = RadialField::bump(demo_grid(128), 1.0, 0.4, 1e6).unwrap();
    let mut plan = RunPlan::new(0.05, &[]);
    plan.control.cfl = 1e3;
    plan.control.dt_max = 0.05;
    let err = run_perturbation(&w0, &bg, &p, &plan, 5.0).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn plain_heat_matches_gaussian() {
    let p = p53();
    let s0 = 0.05;
    let grid = Arc::new(RadialGrid::log(5, 1e-3, 6.0, 512, InnerBoundary::ZeroFlux, OuterBoundary::Neumann0).unwrap());
    let w0 = RadialField::from_fn(grid.clone(), 0.0, |r| gaussian_heat(5, s0, 0.0, r)).unwrap();
    let mut plan = RunPlan::new(0.1, &[]);
    plan.control.dt_max = 2e-4;
    plan.control.scheme = TimeScheme::CrankNicolson;
    let run = run_linear(&w0, 0.0, &p, &plan).unwrap();
    let snap = &run.snapshots[0];
    let exact: Vec<f64> = grid.nodes().iter().map(|&r| gaussian_heat(5, s0, 0.1, r)).collect();
    let err: Vec<f64> = snap.values().iter().zip(&exact).map(|(a, b)| a - b).collect();
    let rel = grid.l2_norm(&err) / grid.l2_norm(&exact);
    println!("gaussian L2 rel err {rel}");
    assert!(rel < 0.01);
}

#[test]
fn potential_semigroup_contracts() {
    let p = p53();
    let c = p.potential_coeff();
    let grid =
        Arc::new(RadialGrid::log(5, 1e-3, 20.0, 512, InnerBoundary::MatchBackground, OuterBoundary::Neumann0).unwrap());
    let w0 = RadialField::from_fn(grid, 0.0, |r| bump(r, 0.5, 0.45, 1.0) - 0.5 * bump(r, 2.0, 1.0, 1.0)).unwrap();
    for scheme in [TimeScheme::BackwardEuler, TimeScheme::CrankNicolson] {
        let mut plan = RunPlan::new(0.1, &[0.05]);
        plan.control.scheme = scheme;
        plan.control.dt_max = 1e-3;
        let run = run_linear(&w0, c, &p, &plan).unwrap();
        let inc = run.max_l2_increase();
        println!("{scheme:?}: max relative increase {inc:e}");
        assert!(inc <= 1e-8);
    }
}

#[test]
fn indicator_data_obeys_h_envelope() {
    let p = p53();
    let eta = p.eta().unwrap();
    let fit = |m: usize| {
        let grid = Arc::new(
            RadialGrid::log(5, 1e-3, 25.0, m, InnerBoundary::MatchBackground, OuterBoundary::Neumann0).unwrap(),
        );
        let w0 = RadialField::indicator(grid, 1.0);
        let run = run_linear(&w0, p.potential_coeff(), &p, &RunPlan::new(0.05, &SNAPS)).unwrap();
        fit_h_envelope(&run.snapshots, eta)
    };
    let (c1, c2) = (fit(512), fit(1024));
    println!("h-envelope C: {c1} {c2}");
    assert!(c1.is_finite() && (c2 / c1 - 1.0).abs() < 0.1);
}

#[test]
fn ill_posed_potential_is_refused() {
    let p = p53();
    let grid = demo_grid(64);
    let w0 = RadialField::zeros(grid, 0.0);
    let err = run_linear(&w0, p.hardy_constant(), &p, &RunPlan::new(0.01, &[])).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("ill-posed"));
    assert!(run_linear(&w0, 3.0, &p, &RunPlan::new(0.01, &[])).is_err());
}

#[test]
fn hardy_ratio_bounds() {
    let p = p53();
    let bound = 2.0 / (p.dim() - 2.0);
    let grid =
        Arc::new(RadialGrid::log(5, 1e-3, 1e3, 1024, InnerBoundary::MatchBackground, OuterBoundary::zero()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let bumps: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                let c = rng.random_range(-4.0..4.0);
                let w = rng.random_range(0.3..2.5);
                (c, w, rng.random_range(-1.0..1.0))
            })
            .collect();
        let v = RadialField::from_fn(grid.clone(), 0.0, |r| bumps.iter().map(|&(c, w, h)| bump(r.ln(), c, w, h)).sum())
            .unwrap();
        let ratio = hardy_ratio(&v).unwrap();
        assert!(ratio <= bound + 1e-6, "{ratio}");
    }

    // near-optimizers r^{-(N-2)/2} φ(ln r) approach the constant from below
    let wide =
        Arc::new(RadialGrid::log(5, 1e-9, 1e9, 8192, InnerBoundary::MatchBackground, OuterBoundary::zero()).unwrap());
    let k = (p.dim() - 2.0) / 2.0;
    let mut prev = 0.0;
    for width in [1.0, 2.0, 4.0, 8.0, 16.0] {
        let v = RadialField::from_fn(wide.clone(), 0.0, |r| r.powf(-k) * bump(r.ln(), 0.0, width, 1.0)).unwrap();
        let ratio = hardy_ratio(&v).unwrap();
        println!("width {width}: {ratio}");
        assert!(ratio > prev && ratio < bound);
        prev = ratio;
    }
    assert!(bound - prev < 0.02);
}
