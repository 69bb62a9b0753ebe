//! Command-line front end.
//!
//! Every subcommand validates its inputs before computing. Errors are written
//! to stderr as one JSON object; domain errors and usage errors exit with 1,
//! numerical failures with 2.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::radial_pde::{
    fit_h_envelope, gaussian_heat, run_linear, run_perturbation, write_snapshot_csv, Background, InnerBoundary,
    OuterBoundary, RadialField, RadialGrid, RunPlan, TimeScheme,
};
use crate::selfsimilar::{
    refine_transitions, scan_sign_changing, shoot_profile, shoot_profile_auto, ProfileSolution, ProfileStatus,
};
use crate::stationary::{
    origin_behavior, solve_stationary, EmdenState, FamilySeed, StationarySeed, StationarySolution,
};
use crate::verify::{run_suite, Suite, DEFAULT_SEED};

/// Environment variable with the worker count for parallel scans.
pub const WORKERS_ENV: &str = "SINGULAR_HEAT_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "singular-heat", version, about = "Singular solutions of the semilinear heat equation")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat key=value file; keys are long flag names, flags on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Shorthand for `--format json`.
    #[arg(long, global = true)]
    json: bool,
    /// Directory for artifact files (default: stdout).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct ParamArgs {
    #[arg(id = "dim", long = "N", default_value_t = 5)]
    dim: u32,
    #[arg(long, default_value_t = 0.75)]
    alpha: f64,
}

impl ParamArgs {
    fn derive(&self) -> Result<Params> {
        Params::derive(self.dim, self.alpha)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print every derived constant for (N, alpha).
    Constants {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Singular stationary solutions.
    #[command(subcommand)]
    Stationary(StationaryCmd),
    /// Self-similar profiles.
    #[command(subcommand)]
    Profile(ProfileCmd),
    /// Radial PDE runs.
    #[command(subcommand)]
    Pde(PdeCmd),
    /// Run an acceptance suite.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Debug, Subcommand)]
enum StationaryCmd {
    /// Sign-changing family seeded at (r0, a).
    Family {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 1.0)]
        r0: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        a: f64,
        #[command(flatten)]
        span: SpanArgs,
    },
    /// Classify the solution through an Emden state, or a regular solution `u(0) = c`.
    Classify {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, allow_negative_numbers = true, conflicts_with_all = ["v", "vprime"])]
        regular: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        v: Option<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        vprime: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        s0: f64,
        #[command(flatten)]
        span: SpanArgs,
    },
}

#[derive(Debug, Clone, clap::Args)]
struct SpanArgs {
    #[arg(long, default_value_t = 8.756_510_762_696_52e-27)]
    r_min: f64,
    #[arg(long, default_value_t = 1e3)]
    r_max: f64,
    /// Write the trajectory CSV to this path.
    #[arg(long)]
    dump_trajectory: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ProfileCmd {
    /// Shoot one profile; CSV `r, f, fprime, rpow_f`.
    Shoot {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long = "C1", allow_negative_numbers = true)]
        c1: f64,
        /// Fixed outer radius (default: doubled from 40 until μ converges).
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long)]
        dump_trajectory: Option<PathBuf>,
    },
    /// Grid scan of C1 for sign-changing profiles.
    Scan {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-2,2")]
        range: Vec<f64>,
        #[arg(long, default_value_t = 41)]
        n: usize,
        #[arg(long)]
        r_max: Option<f64>,
        /// Bisect every zero-count change to this width.
        #[arg(long)]
        refine: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Be,
    Cn,
}

impl From<SchemeArg> for TimeScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Be => TimeScheme::BackwardEuler,
            SchemeArg::Cn => TimeScheme::CrankNicolson,
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
struct StepArgs {
    #[arg(long = "T", default_value_t = 0.05)]
    t_end: f64,
    #[arg(long, value_delimiter = ',')]
    snapshots: Vec<f64>,
    #[arg(long, value_enum, default_value_t = SchemeArg::Be)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 1e-4)]
    dt_max: f64,
    #[arg(long, default_value_t = 0.4)]
    cfl: f64,
    /// Grid as `M,r1,rM`.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    /// Directory for one CSV per snapshot.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
}

impl StepArgs {
    fn plan(&self) -> RunPlan {
        let mut plan = RunPlan::new(self.t_end, &self.snapshots);
        plan.control.scheme = self.scheme.into();
        plan.control.dt_max = self.dt_max;
        plan.control.cfl = self.cfl;
        plan
    }

    fn grid_spec(&self, default: (usize, f64, f64)) -> Result<(usize, f64, f64)> {
        match self.grid.as_slice() {
            [] => Ok(default),
            [m, r1, rm] if *m >= 1.0 && m.fract() == 0.0 => Ok((*m as usize, *r1, *rm)),
            _ => Err(Error::domain("--grid expects M,r1,rM with integer M")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OuterArg {
    Zero,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InnerArg {
    Match,
    ZeroFlux,
}

#[derive(Debug, Subcommand)]
enum PdeCmd {
    /// Perturbation of a singular background.
    Perturb {
        #[command(flatten)]
        params: ParamArgs,
        /// `homog`, `stationary:<file>` or `profile:<file>` (key=value seed files).
        #[arg(long, default_value = "homog")]
        background: String,
        /// Bump `center,width,height`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1,0.4,1")]
        bump: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Outer radius of the L¹ attainment check (default 10·delta).
        #[arg(long)]
        l1_radius: Option<f64>,
        #[command(flatten)]
        step: StepArgs,
    },
    /// Linear heat equation with inverse-square potential.
    Linear {
        #[command(flatten)]
        params: ParamArgs,
        /// `hardy-sub` (= β(α+1)), `zero`, or a number.
        #[arg(long, default_value = "hardy-sub", allow_hyphen_values = true)]
        coeff: String,
        /// `indicator:<r0>`, `gaussian:<s0>` or `bump:<c>,<w>,<h>`.
        #[arg(long, default_value = "indicator:1")]
        init: String,
        #[arg(long, value_enum, default_value_t = InnerArg::Match)]
        inner: InnerArg,
        #[arg(long, value_enum, default_value_t = OuterArg::Neumann)]
        outer: OuterArg,
        #[command(flatten)]
        step: StepArgs,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(e) => return report_error(&e, err),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    init_workers();
    match run(&cli, out, err) {
        Ok(code) => code,
        Err(e) => report_error(&e, err),
    }
}

fn report_error(e: &Error, err: &mut dyn Write) -> i32 {
    let kind = match e {
        Error::Domain(_) => "domain",
        Error::Numerical(_) => "numerical",
        Error::Undetermined(_) => "undetermined",
    };
    let _ = writeln!(err, "{}", json!({ "error": kind, "message": e.to_string() }));
    e.exit_code()
}

fn init_workers() {
    if let Some(n) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // A pool may already exist when dispatch runs more than once in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::domain(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::domain(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Appends `--key=value` for every config entry not already given on the
/// command line.
fn apply_config(mut argv: Vec<String>) -> Result<Vec<String>> {
    let pos = argv.iter().position(|a| a == "--config" || a.starts_with("--config="));
    let Some(pos) = pos else { return Ok(argv) };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => argv.get(pos + 1).cloned().ok_or_else(|| Error::domain("--config needs a path"))?,
    };
    let entries = parse_kv_file(Path::new(&path))?;

    let mut cmd = Cli::command();
    cmd.build();
    let mut cur = &cmd;
    for tok in argv.iter().skip(1) {
        if tok.starts_with('-') {
            continue;
        }
        if let Some(sub) = cur.find_subcommand(tok) {
            cur = sub;
        }
    }
    let given = |key: &str| {
        let flag = format!("--{key}");
        argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };
    let mut extra = Vec::new();
    for (k, v) in &entries {
        if k == "config" || given(k) {
            continue;
        }
        let arg = cur
            .get_arguments()
            .find(|a| a.get_long() == Some(k.as_str()))
            .ok_or_else(|| Error::domain(format!("unknown config key '{k}' for '{}'", cur.get_name())))?;
        if arg.get_action().takes_values() {
            extra.push(format!("--{k}={v}"));
        } else if matches!(v.as_str(), "true" | "1" | "yes") {
            extra.push(format!("--{k}"));
        }
    }
    argv.extend(extra);
    Ok(argv)
}

struct Ctx<'a> {
    format: Format,
    out_dir: Option<&'a Path>,
    seed: u64,
}

impl Ctx<'_> {
    fn json(&self) -> bool {
        self.format == Format::Json
    }

    /// Writes an artifact to `out_dir/name`, or to `out` when no directory is set.
    fn artifact(&self, name: &str, out: &mut dyn Write, body: &[u8]) -> Result<()> {
        match self.out_dir {
            Some(dir) => write_file(&dir.join(name), body),
            None => out.write_all(body).map_err(io_err),
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::domain(format!("write failed: {e}"))
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(path, body).map_err(|e| Error::domain(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, ctx: &Ctx, value: &Value) -> Result<()> {
    if ctx.json() {
        writeln!(out, "{}", serde_json::to_string_pretty(value).expect("serializable")).map_err(io_err)
    } else {
        if let Value::Object(map) = value {
            for (k, v) in map {
                writeln!(out, "{k} = {v}").map_err(io_err)?;
            }
        }
        Ok(())
    }
}

fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let ctx = Ctx {
        format: if cli.json { Format::Json } else { cli.format },
        out_dir: cli.out_dir.as_deref(),
        seed: cli.seed,
    };
    match &cli.command {
        Command::Constants { params } => {
            let p = params.derive()?;
            emit(out, &ctx, &constants_json(&p))?;
            Ok(0)
        }
        Command::Stationary(sc) => run_stationary(sc, &ctx, out),
        Command::Profile(pc) => run_profile(pc, &ctx, out, err),
        Command::Pde(pc) => run_pde(pc, &ctx, out),
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            let results = run_suite(suite, ctx.seed);
            if ctx.json() {
                writeln!(out, "{}", serde_json::to_string_pretty(&results).expect("serializable")).map_err(io_err)?;
            } else {
                for r in &results {
                    writeln!(out, "{r}").map_err(io_err)?;
                }
            }
            Ok(if results.iter().all(|r| r.passed()) { 0 } else { 2 })
        }
    }
}

pub fn constants_json(p: &Params) -> Value {
    json!({
        "N": p.n,
        "alpha": p.alpha,
        "alpha0": p.alpha0,
        "beta": p.beta,
        "B": p.b,
        "gamma": p.gamma,
        "Lambda": p.lambda,
        "mu1": p.mu1,
        "mu2": p.mu2,
        "rho": p.rho,
        "eta": p.eta,
        "kappa_hat": p.kappa_hat,
        "vartheta": p.vartheta,
        "F_star": p.f_star,
        "regime": p.regime,
        "boundary": p.boundary,
    })
}

fn check_span(span: &SpanArgs) -> Result<(f64, f64)> {
    if !(span.r_min >= 0.0 && span.r_max > span.r_min && span.r_max.is_finite()) {
        return Err(Error::domain(format!("need 0 <= r_min < r_max, got ({}, {})", span.r_min, span.r_max)));
    }
    Ok((span.r_min, span.r_max))
}

fn stationary_json(sol: &StationarySolution) -> Result<Value> {
    let (lo, hi) = sol.r_range();
    Ok(json!({
        "kind": sol.classification.kind,
        "s_zero_of_energy": sol.classification.s_zero_of_energy,
        "sign_at_origin": sol.classification.sign_at_origin,
        "origin": origin_behavior(sol)?,
        "zero_count": sol.zero_crossings.len(),
        "zero_crossings": sol.zero_crossings,
        "energy_monotone": sol.energy_monotone,
        "max_energy_increase": sol.max_energy_increase,
        "r_range": [lo, hi],
    }))
}

fn dump(path: &Option<PathBuf>, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    if let Some(path) = path {
        let mut buf = Vec::new();
        write(&mut buf).map_err(io_err)?;
        write_file(path, &buf)?;
    }
    Ok(())
}

fn run_stationary(sc: &StationaryCmd, ctx: &Ctx, out: &mut dyn Write) -> Result<i32> {
    let (params, seed, span) = match sc {
        StationaryCmd::Family { params, r0, a, span } => {
            let p = params.derive()?;
            (p.clone(), StationarySeed::SingularFamily(FamilySeed::new(*r0, *a, &p)?), span)
        }
        StationaryCmd::Classify { params, regular, v, vprime, s0, span } => {
            let p = params.derive()?;
            let seed = match (regular, v) {
                (Some(c), _) => StationarySeed::Regular { c: *c },
                (None, Some(v)) => StationarySeed::EmdenInit(EmdenState { s: *s0, v: *v, vprime: *vprime }),
                (None, None) => return Err(Error::domain("classify needs --regular <c> or --v <v>")),
            };
            (p, seed, span)
        }
    };
    let r_span = check_span(span)?;
    let sol = solve_stationary(seed, &params, r_span)?;
    dump(&span.dump_trajectory, |b| sol.write_csv(b))?;
    if let Some(dir) = ctx.out_dir {
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).map_err(io_err)?;
        write_file(&dir.join("stationary.csv"), &buf)?;
    }
    emit(out, ctx, &stationary_json(&sol)?)?;
    Ok(0)
}

fn profile_json(prof: &ProfileSolution) -> Value {
    json!({
        "C1": prof.c1,
        "status": prof.status,
        "zero_count": prof.zeros.len(),
        "zeros": prof.zeros,
        "mu": prof.mu.as_ref().map(|m| m.mu),
        "mu_err": prof.mu.as_ref().map(|m| m.err),
        "converged": prof.mu.as_ref().map(|m| m.converged),
        "r_init": prof.r_init,
        "r_max": prof.r_max,
        "truncation": prof.truncation,
    })
}

fn require_completed(prof: &ProfileSolution) -> Result<()> {
    match prof.status {
        ProfileStatus::Completed => Ok(()),
        s => Err(Error::numerical(format!(
            "profile shot for C1 = {} stopped before r_max ({s:?}, last r = {:e})",
            prof.c1,
            (-prof.traj.t_min()).exp()
        ))),
    }
}

fn run_profile(pc: &ProfileCmd, ctx: &Ctx, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match pc {
        ProfileCmd::Shoot { params, c1, r_max, dump_trajectory } => {
            let p = params.derive()?;
            p.require_admissible()?;
            let prof = match r_max {
                Some(r) => shoot_profile(*c1, &p, *r)?,
                None => shoot_profile_auto(*c1, &p)?,
            };
            require_completed(&prof)?;
            dump(dump_trajectory, |b| prof.write_csv(b))?;
            if ctx.json() {
                emit(out, ctx, &profile_json(&prof))?;
            } else {
                let mut buf = Vec::new();
                prof.write_csv(&mut buf).map_err(io_err)?;
                ctx.artifact("profile.csv", out, &buf)?;
                writeln!(err, "{}", profile_json(&prof)).map_err(io_err)?;
            }
            Ok(0)
        }
        ProfileCmd::Scan { params, range, n, r_max, refine } => {
            let p = params.derive()?;
            let [lo, hi] = range.as_slice() else {
                return Err(Error::domain("--range expects lo,hi"));
            };
            if let Some(tol) = refine {
                if !(*tol > 0.0) {
                    return Err(Error::domain("--refine must be positive"));
                }
            }
            let rows = scan_sign_changing(&p, (*lo, *hi), *n, *r_max)?;
            let transitions = match refine {
                Some(tol) => refine_transitions(&p, &rows, *tol)?,
                None => vec![],
            };
            if ctx.json() {
                emit(out, ctx, &json!({ "rows": rows, "transitions": transitions }))?;
                return Ok(0);
            }
            let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.16e}"));
            let mut buf = String::from("C1,zeros,mu,err,converged,r_max,status\n");
            for r in &rows {
                buf += &format!(
                    "{:.16e},{},{},{},{},{:.16e},{}\n",
                    r.c1,
                    r.zeros,
                    opt(r.mu),
                    opt(r.err),
                    r.converged,
                    r.r_max,
                    r.status.replace(',', ";")
                );
            }
            ctx.artifact("scan.csv", out, buf.as_bytes())?;
            if refine.is_some() {
                let mut tb = String::from("C1_lo,C1_hi,zeros_lo,zeros_hi,r_max\n");
                for t in &transitions {
                    tb +=
                        &format!("{:.16e},{:.16e},{},{},{:.16e}\n", t.c1_lo, t.c1_hi, t.zeros_lo, t.zeros_hi, t.r_max);
                }
                match ctx.out_dir {
                    Some(dir) => write_file(&dir.join("transitions.csv"), tb.as_bytes())?,
                    None => err.write_all(tb.as_bytes()).map_err(io_err)?,
                }
            }
            Ok(0)
        }
    }
}

fn seed_file(spec: &str, prefix: &str) -> Option<Result<BTreeMap<String, String>>> {
    spec.strip_prefix(prefix).map(|path| parse_kv_file(Path::new(path)))
}

fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    map.get(key)
        .map(|v| v.parse::<f64>().map_err(|_| Error::domain(format!("'{key}' is not a number: {v}"))))
        .transpose()
}

fn build_background(spec: &str, p: &Params, grid: &RadialGrid) -> Result<Background> {
    if spec == "homog" {
        return Background::homogeneous(p);
    }
    if let Some(map) = seed_file(spec, "stationary:") {
        let map = map?;
        let span = (0.5 * grid.r1(), 2.0 * grid.r_m());
        let seed = match (get_f64(&map, "r0")?, get_f64(&map, "a")?, get_f64(&map, "v")?) {
            (Some(r0), Some(a), _) => StationarySeed::SingularFamily(FamilySeed::new(r0, a, p)?),
            (_, _, Some(v)) => StationarySeed::EmdenInit(EmdenState {
                s: get_f64(&map, "s0")?.unwrap_or(0.0),
                v,
                vprime: get_f64(&map, "vprime")?.unwrap_or(0.0),
            }),
            _ => return Err(Error::domain("stationary seed file needs r0 and a, or v")),
        };
        return Ok(Background::stationary(solve_stationary(seed, p, span)?));
    }
    if let Some(map) = seed_file(spec, "profile:") {
        let map = map?;
        let c1 = get_f64(&map, "C1")?.ok_or_else(|| Error::domain("profile seed file needs C1"))?;
        let prof = match get_f64(&map, "r_max")? {
            Some(r) => shoot_profile(c1, p, r)?,
            None => shoot_profile_auto(c1, p)?,
        };
        require_completed(&prof)?;
        return Background::self_similar(prof);
    }
    Err(Error::domain(format!("unknown background '{spec}' (homog | stationary:<file> | profile:<file>)")))
}

fn write_snapshots(
    dir: &Path,
    snaps: &[RadialField],
    mut each: impl FnMut(&RadialField, &mut Vec<u8>) -> Result<()>,
) -> Result<()> {
    for (i, s) in snaps.iter().enumerate() {
        let mut buf = Vec::new();
        each(s, &mut buf)?;
        write_file(&dir.join(format!("snapshot_{i:03}.csv")), &buf)?;
    }
    Ok(())
}

fn run_pde(pc: &PdeCmd, ctx: &Ctx, out: &mut dyn Write) -> Result<i32> {
    match pc {
        PdeCmd::Perturb { params, background, bump, delta, l1_radius, step } => {
            let p = params.derive()?;
            p.require_strict()?;
            let [c, w, h] = bump.as_slice() else {
                return Err(Error::domain("--bump expects center,width,height"));
            };
            if !(*delta > 0.0) {
                return Err(Error::domain("--delta must be positive"));
            }
            if c - w < *delta {
                return Err(Error::domain(format!(
                    "bump support [{}, {}] must lie in r >= delta = {delta}",
                    c - w,
                    c + w
                )));
            }
            let (m, r1, rm) = step.grid_spec((512, 1e-3 * delta, 50.0 * delta))?;
            if r1 >= *delta {
                return Err(Error::domain(format!("r1 = {r1} must be below delta = {delta}")));
            }
            let grid =
                Arc::new(RadialGrid::log(p.n, r1, rm, m, InnerBoundary::MatchBackground, OuterBoundary::zero())?);
            let bg = build_background(background, &p, &grid)?;
            let w0 = RadialField::bump(grid, *c, *w, *h)?;
            let run = run_perturbation(&w0, &bg, &p, &step.plan(), l1_radius.unwrap_or(10.0 * delta))?;
            if let Some(dir) = &step.csv_dir {
                write_snapshots(dir, &run.snapshots, |s, b| write_snapshot_csv(s, &bg, &p, b))?;
            }
            let times: Vec<f64> = run.snapshots.iter().map(|s| s.time).collect();
            emit(out, ctx, &json!({ "snapshots": times, "report": run.report, "stats": run.stats }))?;
            Ok(0)
        }
        PdeCmd::Linear { params, coeff, init, inner, outer, step } => {
            let p = params.derive()?;
            let coeff = match coeff.as_str() {
                "hardy-sub" => {
                    p.require_strict()?;
                    p.potential_coeff()
                }
                "zero" => 0.0,
                s => s
                    .parse::<f64>()
                    .map_err(|_| Error::domain(format!("--coeff '{s}' is not hardy-sub, zero or a number")))?,
            };
            if coeff >= p.hardy_constant() {
                // Refuse before building anything.
                return Err(Error::domain(format!(
                    "potential coefficient {coeff} is not below the Hardy constant (N-2)^2/4 = {}: \
                     the heat equation with this inverse-square potential is ill-posed",
                    p.hardy_constant()
                )));
            }
            let (m, r1, rm) = step.grid_spec((512, 1e-3, 25.0))?;
            let inner = match inner {
                InnerArg::Match => InnerBoundary::MatchBackground,
                InnerArg::ZeroFlux => InnerBoundary::ZeroFlux,
            };
            let outer = match outer {
                OuterArg::Zero => OuterBoundary::zero(),
                OuterArg::Neumann => OuterBoundary::Neumann0,
            };
            let grid = Arc::new(RadialGrid::log(p.n, r1, rm, m, inner, outer)?);
            let w0 = initial_field(init, grid, p.n)?;
            let run = run_linear(&w0, coeff, &p, &step.plan())?;
            if let Some(dir) = &step.csv_dir {
                write_snapshots(dir, &run.snapshots, |s, b| s.write_csv(b).map_err(io_err))?;
            }
            let times: Vec<f64> = run.snapshots.iter().map(|s| s.time).collect();
            let norms: Vec<f64> = run.snapshots.iter().map(|s| s.l2_norm()).collect();
            let h_fit = p.eta.map(|eta| fit_h_envelope(&run.snapshots, eta));
            emit(
                out,
                ctx,
                &json!({
                    "coeff": coeff,
                    "snapshots": times,
                    "l2_norms": norms,
                    "max_l2_increase": run.max_l2_increase(),
                    "h_envelope_C": h_fit,
                    "stats": run.stats,
                }),
            )?;
            Ok(0)
        }
    }
}

fn initial_field(spec: &str, grid: Arc<RadialGrid>, n: u32) -> Result<RadialField> {
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::domain(format!("bad number '{s}' in --init")));
    if let Some(r0) = spec.strip_prefix("indicator:") {
        return Ok(RadialField::indicator(grid, num(r0)?));
    }
    if let Some(s0) = spec.strip_prefix("gaussian:") {
        let s0 = num(s0)?;
        if !(s0 > 0.0) {
            return Err(Error::domain("gaussian width must be positive"));
        }
        return RadialField::from_fn(grid, 0.0, |r| gaussian_heat(n, s0, 0.0, r));
    }
    if let Some(b) = spec.strip_prefix("bump:") {
        let v: Vec<f64> = b.split(',').map(num).collect::<Result<_>>()?;
        if let [c, w, h] = v.as_slice() {
            return RadialField::bump(grid, *c, *w, *h);
        }
    }
    Err(Error::domain(format!("unknown --init '{spec}'")))
}
