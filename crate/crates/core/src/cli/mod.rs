//! Command-line front end: `validate`, `reduce`, `riccati`, `simulate` and
//! `verify`. Every flag can also be set through an `AFFINE_*` environment
//! variable; flags take precedence.
//!
//! Exit codes: 0 on success or a passing check, 1 on a failed check or a
//! runtime failure, 2 on a configuration error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::levy::DEFAULT_MESH;
use crate::params::{classify_heston, load, to_toml_string, validate, AdmissibleParamSet};
use crate::reduction::reduce;
use crate::riccati::{solve_riccati_at, uniform_grid, Characteristics, FrequencyVector, RiccatiOptions};
use crate::simulate::{SimConfig, Simulator, DEFAULT_INTERVALS};
use crate::timechange::{ConvergenceOptions, ProcessPath};
use crate::verify::{
    compare_cf, default_u_grid, markov_check, mc_cf, moment_check, predict_cf, McOptions,
    DEFAULT_T_GRID,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "affine-path", version, about = "Pathwise simulation and verification of affine processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a parameter file against the admissibility conditions.
    Validate(ValidateArgs),
    /// Write the Heston-type reduction of a parameter file and its frame.
    Reduce(ReduceArgs),
    /// Tabulate φ and ψ for a list of frequency vectors.
    Riccati(RiccatiArgs),
    /// Simulate sample paths.
    Simulate(SimulateArgs),
    /// Compare Monte Carlo characteristic functions with Riccati predictions.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, env = "AFFINE_PARAMS")]
    pub params: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long, env = "AFFINE_PARAMS")]
    pub params: PathBuf,
    #[arg(long, env = "AFFINE_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RiccatiArgs {
    #[arg(long, env = "AFFINE_PARAMS")]
    pub params: PathBuf,
    /// File with one frequency vector per line as `re im` pairs.
    #[arg(long, env = "AFFINE_U0")]
    pub u0: PathBuf,
    #[arg(long = "T", env = "AFFINE_T", default_value_t = 1.0)]
    pub t: f64,
    /// Output intervals on [0, T].
    #[arg(long, env = "AFFINE_INTERVALS", default_value_t = 100)]
    pub intervals: usize,
    #[arg(long, env = "AFFINE_RTOL", default_value_t = 1e-8)]
    pub rtol: f64,
    #[arg(long, env = "AFFINE_ATOL", default_value_t = 1e-10)]
    pub atol: f64,
    #[arg(long, env = "AFFINE_WORKERS", default_value_t = 0)]
    pub workers: usize,
    #[arg(long, env = "AFFINE_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, env = "AFFINE_PARAMS")]
    pub params: PathBuf,
    /// Initial state, comma separated.
    #[arg(long, env = "AFFINE_X0", value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub x0: Vec<f64>,
    #[arg(long = "T", env = "AFFINE_T", default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, env = "AFFINE_MESH", default_value_t = DEFAULT_MESH)]
    pub mesh: f64,
    #[arg(long, env = "AFFINE_LEVEL0", default_value_t = 4)]
    pub level0: u32,
    #[arg(long, env = "AFFINE_LEVEL_CAP", default_value_t = 22)]
    pub level_cap: u32,
    #[arg(long, env = "AFFINE_TAU_TOL", default_value_t = 1e-4)]
    pub tau_tol: f64,
    /// Output intervals on [0, T].
    #[arg(long, env = "AFFINE_INTERVALS", default_value_t = DEFAULT_INTERVALS)]
    pub intervals: usize,
    #[arg(long, env = "AFFINE_SAMPLES", default_value_t = 1)]
    pub samples: usize,
    #[arg(long, env = "AFFINE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "AFFINE_WORKERS", default_value_t = 0)]
    pub workers: usize,
    #[arg(long, env = "AFFINE_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Emit paths in the original coordinates when the set was reduced.
    #[arg(long, env = "AFFINE_INVERT_FRAMES")]
    pub invert_frames: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Comparison times, comma separated; all must lie in [0, T].
    #[arg(long, env = "AFFINE_TIMES", value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// File of frequency vectors; the default grid is used otherwise.
    #[arg(long, env = "AFFINE_U_GRID")]
    pub u_grid: Option<PathBuf>,
    #[arg(long, env = "AFFINE_Z", default_value_t = 3.0)]
    pub z: f64,
    #[arg(long, env = "AFFINE_RTOL", default_value_t = 1e-8)]
    pub rtol: f64,
    #[arg(long, env = "AFFINE_ATOL", default_value_t = 1e-10)]
    pub atol: f64,
    /// Also run the first-moment check (part of the verdict).
    #[arg(long, env = "AFFINE_MOMENTS")]
    pub moments: bool,
    /// Also run the conditional check between T/2 and T (diagnostic only).
    #[arg(long, env = "AFFINE_MARKOV")]
    pub markov: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_CONFIG, message: e.to_string() }
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_FAIL, message: e.to_string() }
}

/// Parse `args` and run; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Reduce(a) => cmd_reduce(&a),
        Command::Riccati(a) => cmd_riccati(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_params(path: &Path) -> Result<AdmissibleParamSet, Failure> {
    load(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| run_err(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| run_err(format!("cannot write {}: {e}", path.display())))
}

/// Comment block recording the command, its settings and the parameter set.
fn header(command: &str, settings: &[(&str, String)], params: &AdmissibleParamSet) -> String {
    let mut h = format!("# affine-path {} {command}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in settings {
        let _ = writeln!(h, "# {k} = {v}");
    }
    h.push_str("# parameter set:\n");
    for line in to_toml_string(params).lines() {
        if line.is_empty() {
            h.push_str("#\n");
        } else {
            let _ = writeln!(h, "#   {line}");
        }
    }
    h
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_validate(a: &ValidateArgs) -> Result<i32, Failure> {
    let p = load_params(&a.params)?;
    let report = validate(&p).map_err(config_err)?;
    print!("{report}");
    let h = classify_heston(&p);
    println!("heston type: married={} h={} ring={}", h.married, h.h, h.ring);
    Ok(if report.is_empty() { EXIT_OK } else { EXIT_FAIL })
}

fn cmd_reduce(a: &ReduceArgs) -> Result<i32, Failure> {
    let p = load_params(&a.params)?;
    let plan = reduce(&p).map_err(run_err)?;
    ensure_dir(&a.out)?;
    let settings = [("params", a.params.display().to_string())];
    let head = header("reduce", &settings, &p);
    write_file(&a.out.join("reduced.toml"), &format!("{head}{}", to_toml_string(&plan.augmented)))?;
    write_file(&a.out.join("frames.toml"), &format!("{head}{}", plan.frames.to_toml_string()))?;
    println!("wrote {} and {}", a.out.join("reduced.toml").display(), a.out.join("frames.toml").display());
    Ok(EXIT_OK)
}

/// Frequency vectors, one per line as whitespace or comma separated `re im`
/// pairs; `#` starts a comment.
pub fn parse_frequency_file(src: &str, p: &AdmissibleParamSet) -> Result<Vec<FrequencyVector>, String> {
    let mut out = Vec::new();
    for (no, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| format!("line {}: {e}", no + 1)))
            .collect::<Result<_, _>>()?;
        if vals.len() != 2 * p.d() {
            return Err(format!("line {}: expected {} numbers, got {}", no + 1, 2 * p.d(), vals.len()));
        }
        let u = vals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        out.push(FrequencyVector::new(p.dim, u).map_err(|e| format!("line {}: {e}", no + 1))?);
    }
    if out.is_empty() {
        return Err("no frequency vectors".into());
    }
    Ok(out)
}

fn read_frequencies(path: &Path, p: &AdmissibleParamSet) -> Result<Vec<FrequencyVector>, Failure> {
    let src = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    parse_frequency_file(&src, p).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(run_err)
}

fn cmd_riccati(a: &RiccatiArgs) -> Result<i32, Failure> {
    let p = load_params(&a.params)?;
    if !(a.t > 0.0 && a.t.is_finite() && a.rtol > 0.0 && a.atol > 0.0 && a.intervals > 0) {
        return Err(config_err("need T > 0, rtol > 0, atol > 0 and intervals > 0"));
    }
    let us = read_frequencies(&a.u0, &p)?;
    let ch = Characteristics::new(&p).map_err(config_err)?;
    let opts = RiccatiOptions { rtol: a.rtol, atol: a.atol, ..Default::default() };
    let times = uniform_grid(a.t, a.intervals);
    let sols = pool(a.workers)?.install(|| {
        us.par_iter().map(|u| solve_riccati_at(&ch, u, &times, &opts)).collect::<Vec<_>>()
    });
    let settings = [
        ("params", a.params.display().to_string()),
        ("u0", a.u0.display().to_string()),
        ("T", a.t.to_string()),
        ("intervals", a.intervals.to_string()),
        ("rtol", a.rtol.to_string()),
        ("atol", a.atol.to_string()),
    ];
    let mut body = header("riccati", &settings, &p);
    let mut cols = vec!["u_index".to_string(), "t".into(), "re_phi".into(), "im_phi".into()];
    for k in 1..=p.d() {
        cols.push(format!("re_psi{k}"));
        cols.push(format!("im_psi{k}"));
    }
    body.push_str(&cols.join(","));
    body.push('\n');
    let mut failed = false;
    for (i, sol) in sols.into_iter().enumerate() {
        match sol {
            Ok(s) => {
                for (j, t) in s.times.iter().enumerate() {
                    let mut row = vec![i.to_string(), num(*t), num(s.phi[j].re), num(s.phi[j].im)];
                    for v in &s.psi[j] {
                        row.push(num(v.re));
                        row.push(num(v.im));
                    }
                    body.push_str(&row.join(","));
                    body.push('\n');
                }
            }
            Err(e) => {
                failed = true;
                let _ = writeln!(body, "# u_index {i}: {e}");
                eprintln!("u_index {i}: {e}");
            }
        }
    }
    ensure_dir(&a.out)?;
    write_file(&a.out.join("riccati.csv"), &body)?;
    Ok(if failed { EXIT_FAIL } else { EXIT_OK })
}

fn sim_config(a: &SimArgs, invert: bool, extra: &[f64]) -> Result<SimConfig, Failure> {
    if !(a.tau_tol > 0.0 && a.mesh > 0.0 && a.t > 0.0 && a.samples >= 1) {
        return Err(config_err("need T > 0, mesh > 0, tau-tol > 0 and samples >= 1"));
    }
    let mut c = SimConfig::new(a.x0.clone(), a.t);
    c.mesh = a.mesh;
    c.intervals = a.intervals;
    c.extra_times = extra.to_vec();
    c.invert_frames = invert;
    c.convergence = ConvergenceOptions {
        level0: a.level0,
        level_cap: a.level_cap,
        tol: a.tau_tol,
        ..Default::default()
    };
    Ok(c)
}

fn sim_settings(a: &SimArgs) -> Vec<(&'static str, String)> {
    vec![
        ("params", a.params.display().to_string()),
        ("x0", format!("{:?}", a.x0)),
        ("T", a.t.to_string()),
        ("mesh", a.mesh.to_string()),
        ("level0", a.level0.to_string()),
        ("level_cap", a.level_cap.to_string()),
        ("tau_tol", a.tau_tol.to_string()),
        ("intervals", a.intervals.to_string()),
        ("samples", a.samples.to_string()),
        ("seed", a.seed.to_string()),
    ]
}

fn make_simulator(p: &AdmissibleParamSet, c: SimConfig) -> Result<Simulator, Failure> {
    use crate::simulate::SimError;
    Simulator::new(p, c).map_err(|e| match e {
        SimError::Config(_) | SimError::Param(_) | SimError::Reduction(_) => config_err(e),
        other => run_err(other),
    })
}

/// CSV body of one path: `t, paste, x_1.., tau_1..`.
pub fn path_csv(path: &ProcessPath) -> String {
    let d = path.x0.len();
    let m = path.tau.first().map_or(0, Vec::len);
    let mut s = String::from("t,paste");
    for k in 1..=d {
        let _ = write!(s, ",x{k}");
    }
    for k in 1..=m {
        let _ = write!(s, ",tau{k}");
    }
    s.push('\n');
    for (j, t) in path.times.iter().enumerate() {
        let _ = write!(s, "{},{}", num(*t), path.paste[j] as u8);
        for v in path.x[j].iter().chain(&path.tau[j]) {
            let _ = write!(s, ",{}", num(*v));
        }
        s.push('\n');
    }
    s
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32, Failure> {
    let p = load_params(&a.sim.params)?;
    let sim = make_simulator(&p, sim_config(&a.sim, a.invert_frames, &[])?)?;
    let paths = pool(a.sim.workers)?.install(|| {
        (0..a.sim.samples as u64).into_par_iter().map(|i| sim.sample(a.sim.seed, i)).collect::<Vec<_>>()
    });
    ensure_dir(&a.sim.out)?;
    let mut settings = sim_settings(&a.sim);
    settings.push(("invert_frames", a.invert_frames.to_string()));
    let coords = match (sim.plan(), a.invert_frames) {
        (None, _) => "original",
        (Some(_), true) => "original (reduced, frames inverted)",
        (Some(_), false) => "reduced (auxiliary component first, frames not inverted)",
    };
    settings.push(("coordinates", coords.to_string()));
    let mut failed = 0;
    for (i, path) in paths.into_iter().enumerate() {
        let mut body = header("simulate", &settings, &p);
        let _ = writeln!(body, "# sample = {i}");
        match path {
            Ok(path) => {
                for (k, at) in path.absorbed_at.iter().enumerate() {
                    if let Some(at) = at {
                        let _ = writeln!(body, "# absorbed component {} at t = {}", k + 1, num(*at));
                    }
                }
                for w in &path.warnings {
                    let _ = writeln!(body, "# warning: {w}");
                }
                body.push_str(&path_csv(&path));
            }
            Err(e) => {
                failed += 1;
                let _ = writeln!(body, "# failed: {e}");
                eprintln!("sample {i}: {e}");
            }
        }
        write_file(&a.sim.out.join(format!("path_{i:05}.csv")), &body)?;
    }
    if let Some(frames) = sim.output_frames() {
        let body = format!("{}{}", header("simulate", &settings, &p), frames.to_toml_string());
        write_file(&a.sim.out.join("frames.toml"), &body)?;
    }
    Ok(if failed > 0 { EXIT_FAIL } else { EXIT_OK })
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32, Failure> {
    let p = load_params(&a.sim.params)?;
    let times = match &a.times {
        Some(t) => t.clone(),
        None => DEFAULT_T_GRID.iter().copied().filter(|t| *t <= a.sim.t).collect(),
    };
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0 && *t <= a.sim.t)) {
        return Err(config_err("comparison times must lie in (0, T]"));
    }
    if !(a.z > 0.0 && a.rtol > 0.0 && a.atol > 0.0) {
        return Err(config_err("need z > 0, rtol > 0 and atol > 0"));
    }
    if a.sim.samples < 100 {
        return Err(config_err("verify needs at least 100 samples"));
    }
    let us = match &a.u_grid {
        Some(path) => read_frequencies(path, &p)?,
        None => default_u_grid(&p),
    };
    let mut extra = times.clone();
    extra.push(a.sim.t / 2.0);
    let sim = make_simulator(&p, sim_config(&a.sim, true, &extra)?)?;
    let mc = McOptions { workers: a.sim.workers, ..McOptions::new(a.sim.samples, a.sim.seed) };
    let ropts = RiccatiOptions { rtol: a.rtol, atol: a.atol, ..Default::default() };
    let estimates = mc_cf(&sim, &us, &times, &mc).map_err(run_err)?;
    let predictions = predict_cf(&p, &a.sim.x0, &us, &times, &ropts).map_err(run_err)?;
    let report = compare_cf(&estimates, &predictions, a.z).map_err(run_err)?;
    let mut pass = report.pass;

    let mut settings = sim_settings(&a.sim);
    settings.push(("times", format!("{times:?}")));
    settings.push(("z", a.z.to_string()));
    settings.push(("rtol", a.rtol.to_string()));
    settings.push(("atol", a.atol.to_string()));
    if let Some(g) = &a.u_grid {
        settings.push(("u_grid", g.display().to_string()));
    }
    let mut body = header("verify", &settings, &p);
    body.push_str(&report.to_string());
    if a.moments {
        let m = moment_check(&sim, &times, &mc).map_err(run_err)?;
        pass &= m.pass;
        body.push_str(&m.to_string());
    }
    if a.markov {
        let u = &us[0];
        let r = markov_check(&sim, u, a.sim.t / 2.0, a.sim.t, &mc, &ropts, a.z).map_err(run_err)?;
        body.push_str(&r.to_string());
    }
    ensure_dir(&a.sim.out)?;
    write_file(&a.sim.out.join("verify.csv"), &body)?;
    println!(
        "verify: {} flagged of {} (allowed {}): {}",
        report.flagged,
        report.points.len(),
        report.allowed,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { EXIT_OK } else { EXIT_FAIL })
}
