use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use singular_heat::ode::{integrate, IntegrateOptions};
use singular_heat::stationary::*;
use singular_heat::Params;

fn p53() -> Params {
    Params::derive(5, 0.75).unwrap()
}

#[test]
fn homogeneous_seed_is_exact() {
    let p = p53();
    let b = p.b.unwrap();
    let sol =
        solve_stationary(StationarySeed::EmdenInit(EmdenState { s: 0.0, v: b, vprime: 0.0 }), &p, (0.1, 10.0)).unwrap();
    assert_eq!(sol.classification.kind, SolutionKind::ExactHomogeneous);
    assert_eq!(sol.classification.sign_at_origin, OriginSign::Plus);
    for i in 0..=50 {
        let r = 0.1 * 100f64.powf(i as f64 / 50.0);
        let sg = p.sigma();
        let u = b * r.powf(-sg);
        let up = -sg * u / r;
        let upp = sg * (sg + 1.0) * u / (r * r);
        let (abs, rel) = radial_residual(r, u, up, upp, &p);
        assert!(rel < 1e-13, "r={r}: {abs} {rel}");
        let (un, _) = sol.u_at(r).unwrap();
        assert!((un - u).abs() < 1e-10 * u);
    }
}

#[test]
fn forward_perturbation_of_fixed_point_decays() {
    let p = p53();
    let b = p.b.unwrap();
    let sys = emden_system(&p);
    let tr = integrate(&sys, 0.0, b + 0.1, 0.0, 30.0, &IntegrateOptions::with_tol(1e-12, 1e-12), &[]).unwrap();
    let f: Vec<f64> = tr.nodes().iter().map(|n| energy(n.y, n.yp, &p)).collect();
    for w in f.windows(2) {
        assert!(w[1] < w[0] + 1e-14);
    }
    assert!((tr.last().y - b).abs() < 1e-4);
    assert!(f[0] > f[f.len() - 1]);
}

#[test]
fn regular_seed_oscillates_with_positive_energy() {
    let p = p53();
    let sol = solve_stationary(StationarySeed::Regular { c: 1.0 }, &p, (0.0, 1e3)).unwrap();
    assert_eq!(sol.classification.kind, SolutionKind::Regular);
    assert!(sol.zero_crossings.len() >= 3, "{:?}", sol.zero_crossings);
    for n in sol.traj.nodes() {
        assert!(energy(n.y, n.yp, &p) > 0.0);
    }
    match origin_behavior(&sol).unwrap() {
        OriginBehavior::FiniteLimit(c) => assert!((c - 1.0).abs() < 1e-6),
        other => panic!("{other:?}"),
    }
    assert!(sol.energy_monotone, "{}", sol.max_energy_increase);
}

#[test]
fn unit_family_member() {
    let p = p53();
    let seed = FamilySeed::new(1.0, 1.0, &p).unwrap();
    let sol = solve_stationary(StationarySeed::SingularFamily(seed), &p, ((-60f64).exp(), 1e3)).unwrap();
    assert_eq!(sol.classification.kind, SolutionKind::SignChangingSingular);
    let s0 = sol.classification.s_zero_of_energy.unwrap();
    assert!(s0.abs() < 1e-9, "s0 = {s0}");
    let in_range = sol.zero_crossings.iter().filter(|&&r| (1.0..=1e3).contains(&r)).count();
    assert!(in_range >= 3);
    match origin_behavior(&sol).unwrap() {
        OriginBehavior::SingularAmplitude { amplitude, .. } => {
            assert!((amplitude.abs() - p.b.unwrap()).abs() < 1e-4)
        }
        other => panic!("{other:?}"),
    }
    let fit = fit_singular_rate(&sol, &p, (20.0, 50.0)).unwrap();
    assert!((fit.slope - 1.0 / 3.0).abs() < 0.05 / 3.0, "slope {}", fit.slope);
    assert!(sol.energy_monotone, "{}", sol.max_energy_increase);
    for w in sol.zero_crossings.windows(2) {
        assert!(w[0] > w[1]);
    }
}

#[test]
fn criterion_sign_matches_classification_on_random_seeds() {
    let p = p53();
    let a_max = ((p.alpha + 2.0) / 2.0).powf(1.0 / p.alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let r0 = 10f64.powf(rng.random_range(-1.0..1.0));
        let a = rng.random_range(0.05..0.95) * a_max;
        let seed = FamilySeed::new(r0, a, &p).unwrap();
        let sol = solve_stationary(StationarySeed::SingularFamily(seed), &p, ((-40f64).exp(), 1e3)).unwrap();
        assert_eq!(sol.classification.kind, SolutionKind::SignChangingSingular);
        let s0 = sol.classification.s_zero_of_energy.unwrap();
        assert!((s0 + r0.ln()).abs() < 1e-8, "r0={r0} a={a} s0={s0}");
        let mut changes = 0;
        let mut prev: Option<f64> = None;
        for n in sol.traj.nodes() {
            let st = EmdenState { s: n.t, v: n.y, vprime: n.yp };
            let (r, u, up) = emden_backward(&st, &p);
            let c = criterion_residual(r, u, up, &p);
            let scale = r * r * up * up + r * u.abs() * up.abs() + u * u;
            if c.abs() < 1e-12 * scale {
                continue;
            }
            if let Some(q) = prev {
                if q > 0.0 && c <= 0.0 || q < 0.0 && c >= 0.0 {
                    changes += 1;
                }
            }
            prev = Some(c);
        }
        assert_eq!(changes, 1, "r0={r0} a={a}");
    }
}
