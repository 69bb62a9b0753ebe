use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use singular_heat::selfsimilar::*;
use singular_heat::Params;

fn p53() -> Params {
    Params::derive(5, 0.75).unwrap()
}

#[test]
fn homogeneous_profile_shot() {
    let p = p53();
    let b = p.b.unwrap();
    let prof = shoot_profile(0.0, &p, 40.0).unwrap();
    assert!(prof.zeros.is_empty());
    let (mu, err) = extract_mu(&prof).unwrap();
    assert!((mu - b).abs() < 1e-8);
    assert!(err < 1e-10);
    assert_eq!(envelope_check(&prof, &p, 200).unwrap(), 0.0);
    for n in prof.traj.nodes() {
        assert!((n.y - b).abs() < 1e-8);
    }
}

#[test]
fn small_perturbation_follows_slow_mode() {
    let p = p53();
    let c1 = 0.01;
    let prof = shoot_profile(c1, &p, 40.0).unwrap();
    let fit = prof.near_origin_rate().unwrap();
    assert!((fit.slope - 1.0 / 3.0).abs() < 0.05 / 3.0, "slope {}", fit.slope);
    let c_fit = envelope_check(&prof, &p, 400).unwrap();
    assert!((c_fit - c1).abs() < 0.2 * c1, "C_fit {c_fit}");
    assert!(prof.origin_check.trending_below(1e-6), "{:?}", prof.origin_check);
}

#[test]
fn tail_error_shrinks_with_r_max() {
    let p = p53();
    let mut prev = f64::INFINITY;
    for r_max in [40.0, 80.0, 160.0] {
        let (_, err) = extract_mu(&shoot_profile(0.5, &p, r_max).unwrap()).unwrap();
        assert!(err < prev, "r_max {r_max}: {err} vs {prev}");
        prev = err;
    }
}

#[test]
fn halving_start_radius_leaves_shot_unchanged() {
    let p = p53();
    let base = ShootOptions::default();
    let a = shoot_profile_with(0.5, &p, 40.0, &base).unwrap();
    let finer = ShootOptions { x_init: base.x_init / 2f64.powf(a.near_origin_rate().unwrap().slope.max(0.2)), ..base };
    let b = shoot_profile_with(0.5, &p, 40.0, &finer).unwrap();
    assert!(b.r_init < a.r_init);
    let (va, vb) = (a.traj.first().y, b.traj.first().y);
    assert!((va - vb).abs() < 1e-8 * va.abs().max(1.0), "{va} vs {vb}");
    assert_eq!(a.zeros.len(), b.zeros.len());
}

#[test]
fn blown_up_shot_has_no_mu() {
    let p = p53();
    let mut opts = ShootOptions::default();
    opts.ode.blowup_ceiling = 1.0;
    let prof = shoot_profile_with(1.0, &p, 40.0, &opts).unwrap();
    assert_eq!(prof.status, ProfileStatus::Blowup);
    assert!(extract_mu(&prof).is_err());
}

#[test]
fn similarity_solution_satisfies_the_heat_equation() {
    let p = p53();
    let prof = shoot_profile_auto(0.5, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let t = 10f64.powf(rng.random_range(-3.0..0.0));
        let rho = (prof.r_init * 10.0) * (prof.r_max / (prof.r_init * 10.0)).powf(rng.random_range(0.0..1.0));
        let r = rho * t.sqrt();
        let res = similarity_residual(&prof, t, r).unwrap();
        assert!(res < 1e-6, "t={t} r={r}: {res}");
    }
}

#[test]
fn scan_finds_sign_changing_profiles() {
    let p = p53();
    let rows = scan_sign_changing(&p, (-1.0, 1.0), 21, None).unwrap();
    assert_eq!(rows.len(), 21);
    assert!(rows.windows(2).all(|w| w[0].c1 < w[1].c1));
    let zero = rows.iter().find(|r| r.c1 == 0.0).unwrap();
    assert_eq!(zero.zeros, 0);
    assert!((zero.mu.unwrap() - p.b.unwrap()).abs() < 1e-8);
    assert!(rows.iter().any(ScanRow::is_sign_changing_candidate));

    let again = scan_sign_changing(&p, (-1.0, 1.0), 21, None).unwrap();
    assert_eq!(rows, again);

    let trans = refine_transitions(&p, &rows, 1e-8).unwrap();
    assert!(!trans.is_empty());
    for t in &trans {
        assert!(t.c1_hi - t.c1_lo <= 1e-8);
        assert_ne!(t.zeros_lo, t.zeros_hi);
    }
}

#[test]
fn scan_rejects_bad_input() {
    let p = p53();
    assert!(scan_sign_changing(&p, (0.0, 1.0), 1, None).is_err());
    assert!(scan_sign_changing(&p, (1.0, 0.0), 5, None).is_err());
}

#[test]
fn csv_for_homogeneous_profile_is_flat() {
    let p = p53();
    let b = p.b.unwrap();
    let prof = shoot_profile(0.0, &p, 40.0).unwrap();
    let mut buf = Vec::new();
    prof.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,f,fprime,rpow_f"));
    for l in lines {
        let rp: f64 = l.split(',').nth(3).unwrap().parse().unwrap();
        assert!((rp - b).abs() < 1e-8);
    }
}

#[test]
fn wide_regime_profiles_still_integrate() {
    let p = Params::derive(5, 0.9).unwrap();
    assert_eq!(p.regime, singular_heat::Regime::WideStationary);
    let prof = shoot_profile(0.3, &p, 40.0).unwrap();
    assert_eq!(prof.status, ProfileStatus::Completed);
    assert!(envelope_check(&prof, &p, 100).is_err());
}
