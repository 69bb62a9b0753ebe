use std::fs;
use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;
use singular_heat::cli::dispatch;
use singular_heat::Params;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("singular-heat").chain(args.iter().copied());
    let code = dispatch(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("singular-heat-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn constants_json_has_exact_rho() {
    let (code, out, _) = run(&["constants", "--N", "5", "--alpha", "0.75", "--json"]);
    assert_eq!(code, 0);
    assert!(out.contains("\"rho\": 0.3333333333333333"), "{out}");
    let v: Value = serde_json::from_str(&out).unwrap();
    for key in [
        "N",
        "alpha",
        "alpha0",
        "beta",
        "B",
        "gamma",
        "Lambda",
        "mu1",
        "mu2",
        "rho",
        "eta",
        "kappa_hat",
        "vartheta",
        "F_star",
        "regime",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["regime"], "StrictSubHardy");
}

#[test]
fn verify_params_suite_passes() {
    let (code, out, _) = run(&["verify", "--suite", "params"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
}

#[test]
fn homogeneous_profile_csv_is_flat() {
    let b = Params::derive(5, 0.75).unwrap().b.unwrap();
    let (code, out, err) = run(&["profile", "shoot", "--C1", "0", "--N", "5", "--alpha", "0.75"]);
    assert_eq!(code, 0, "{err}");
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("r,f,fprime,rpow_f"));
    let mut rows = 0;
    for l in lines {
        let v: f64 = l.split(',').nth(3).unwrap().parse().unwrap();
        assert!((v - b).abs() < 1e-8);
        rows += 1;
    }
    assert!(rows > 10);
}

#[test]
fn usage_errors_exit_one() {
    let (code, _, err) = run(&["constants", "--bogus"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"));
    let (code, _, _) = run(&["verify", "--suite", "nonsense"]);
    assert_eq!(code, 1);
    let (code, _, err) = run(&["constants", "--N", "2"]);
    assert_eq!(code, 1);
    let v: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "domain");
}

#[test]
fn ill_posed_coefficient_is_refused() {
    let (code, out, err) = run(&["pde", "linear", "--coeff", "2.25"]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.contains("ill-posed"));
}

#[test]
fn numerical_failure_exits_two() {
    let (code, _, err) =
        run(&["pde", "perturb", "--bump", "1,0.4,1e6", "--cfl", "1000", "--dt-max", "0.05", "--grid", "128,5e-4,25"]);
    assert_eq!(code, 2, "{err}");
    let v: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "numerical");
}

#[test]
fn precondition_failure_leaves_no_output() {
    let dir = scratch_dir("precond");
    let d = dir.to_str().unwrap();
    let (code, out, _) = run(&["pde", "perturb", "--bump", "0.3,0.4,1", "--csv-dir", d]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(!dir.exists());
}

#[test]
fn perturb_writes_snapshot_csvs() {
    let dir = scratch_dir("perturb");
    let d = dir.to_str().unwrap();
    let (code, out, err) = run(&[
        "pde",
        "perturb",
        "--T",
        "0.01",
        "--snapshots",
        "0.005",
        "--grid",
        "128,5e-4,25",
        "--csv-dir",
        d,
        "--json",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["snapshots"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(dir.join("snapshot_001.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("r,U,w,u,rpow_u,envelope"));
    assert_eq!(csv.lines().count(), 129);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = scratch_dir("config");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, "# constants\nN = 5\nalpha = 0.9\njson = true\n").unwrap();
    let c = cfg.to_str().unwrap();
    let (code, out, err) = run(&["constants", "--config", c]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["alpha"], 0.9);
    let (_, out, _) = run(&["constants", "--config", c, "--alpha", "0.75"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["alpha"], 0.75);

    fs::write(&cfg, "wrong_key = 1\n").unwrap();
    let (code, _, _) = run(&["constants", "--config", c]);
    assert_eq!(code, 1);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn stationary_family_and_dump() {
    let dir = scratch_dir("family");
    let path = dir.join("traj.csv");
    let (code, out, err) =
        run(&["stationary", "family", "--r0", "1", "--a", "1", "--json", "--dump-trajectory", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["kind"], "SignChangingSingular");
    let csv = fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().next(), Some("s,r,v,vprime,u,uprime,energy"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn binary_scan_is_deterministic_across_worker_counts() {
    let exe = env!("CARGO_BIN_EXE_singular-heat");
    let scan = |workers: &str| {
        let o = Command::new(exe)
            .args(["profile", "scan", "--range", "-1,1", "--n", "9", "--r-max", "40"])
            .env("SINGULAR_HEAT_WORKERS", workers)
            .output()
            .unwrap();
        assert!(o.status.success());
        o.stdout
    };
    let a = scan("1");
    let b = scan("4");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next(), Some("C1,zeros,mu,err,converged,r_max,status"));
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_singular-heat");
    let code = |args: &[&str]| Command::new(exe).args(args).output().unwrap().status.code();
    assert_eq!(code(&["constants"]), Some(0));
    assert_eq!(code(&["--unknown-flag"]), Some(1));
    assert_eq!(code(&["pde", "linear", "--coeff", "3"]), Some(1));
}
