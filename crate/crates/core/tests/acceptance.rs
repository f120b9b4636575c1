//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use affine_path::levy::{split, CadlagPath, Direction};
use affine_path::params::{load, AdmissibleParamSet, JumpDistribution, JumpMeasureSpec, StateDim};
use affine_path::reduction::{forward_frames, invert_frames, reduce, Frames};
use affine_path::riccati::{solve_riccati_at, Characteristics, FrequencyVector, RiccatiOptions};
use affine_path::simulate::{SimConfig, Simulator};
use affine_path::timechange::{output_grid, solve_pasted, TimeChangeSolution, DEFAULT_ABSORB_EPS};
use affine_path::verify::{compare_cf, default_u_grid, mc_cf, predict_cf, McOptions, DEFAULT_T_GRID};

type Outcome = Result<String, String>;

fn params_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("params")
}

fn example(name: &str) -> AdmissibleParamSet {
    load(&params_dir().join(name)).expect("shipped parameter file")
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Drift-only growth `X' = bX` against `x e^{bt}`.
fn deterministic() -> Outcome {
    let start = Instant::now();
    let mut p = AdmissibleParamSet::zero(StateDim::new(1, 0).unwrap());
    p.beta[0][0] = 0.5;
    let mut cfg = SimConfig::new(vec![1.0], 2.0);
    cfg.mesh = 2f64.powi(-10);
    let sim = Simulator::new(&p, cfg).map_err(|e| e.to_string())?;
    let path = sim.sample(0, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let err = path
        .times
        .iter()
        .zip(&path.x)
        .map(|(t, x)| (x[0] - (0.5 * t).exp()).abs())
        .fold(0.0, f64::max);
    let msg = format!("sup error {err:.3e}, runtime {elapsed:.3} s");
    if err <= 1e-3 && elapsed < 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Laplace transform of the square-root diffusion `dX = bX dt + sqrt(s2 X) dW`
/// started at `x`: the solution of `ψ' = bψ + s2 ψ²/2`, `ψ(0) = u`, is
/// `ψ = u e^{bt} / (1 - u s2 (e^{bt} - 1) / (2b))`.
fn cir_transform(b: f64, s2: f64, x: f64, u: f64, t: f64) -> f64 {
    let e = (b * t).exp();
    (x * u * e / (1.0 - u * s2 * (e - 1.0) / (2.0 * b))).exp()
}

fn cir_cf() -> Outcome {
    let p = example("cir.toml");
    let (b, s2, x) = (p.beta[0][0], p.alpha[0][(0, 0)], 1.0);
    let sim = Simulator::new(&p, SimConfig::new(vec![x], 1.0)).map_err(|e| e.to_string())?;
    let us: Vec<FrequencyVector> =
        [-2.0, -1.0, -0.5].iter().map(|u| FrequencyVector::real(p.dim, &[*u]).unwrap()).collect();
    let times = [0.25, 0.5, 1.0];
    let est = mc_cf(&sim, &us, &times, &McOptions::new(100_000, 11)).map_err(|e| e.to_string())?;
    let mut worst_z: f64 = 0.0;
    let mut worst_se: f64 = 0.0;
    for e in &est {
        let u = e.u0.as_slice()[0].re;
        let want = cir_transform(b, s2, x, u, e.t);
        worst_z = worst_z.max((e.estimate - c(want, 0.0)).norm() / e.std_error);
        worst_se = worst_se.max(e.std_error);
    }
    let msg = format!("{} points, max z {worst_z:.2}, max std error {worst_se:.2e}", est.len());
    if worst_z <= 3.0 && worst_se <= 5e-3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cf_against_riccati(file: &str, x0: Vec<f64>, seed: u64) -> Outcome {
    let p = example(file);
    let us = default_u_grid(&p);
    let sim = Simulator::new(&p, SimConfig::new(x0.clone(), 1.0)).map_err(|e| e.to_string())?;
    let est = mc_cf(&sim, &us, &DEFAULT_T_GRID, &McOptions::new(100_000, seed))
        .map_err(|e| e.to_string())?;
    let pred = predict_cf(&p, &x0, &us, &DEFAULT_T_GRID, &RiccatiOptions::default())
        .map_err(|e| e.to_string())?;
    let report = compare_cf(&est, &pred, 3.0).map_err(|e| e.to_string())?;
    let msg = format!(
        "{} points, {} flagged, {} allowed",
        report.points.len(),
        report.flagged,
        report.allowed
    );
    if report.pass {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn jump_cir() -> Outcome {
    cf_against_riccati("jump_cir.toml", vec![1.0], 12)
}

fn heston() -> Outcome {
    let p = example("heston.toml");
    let ch = Characteristics::new(&p).map_err(|e| e.to_string())?;
    let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
    let mut dev: f64 = 0.0;
    for u in default_u_grid(&p) {
        let sol = solve_riccati_at(&ch, &u, &times, &RiccatiOptions::default())
            .map_err(|e| e.to_string())?;
        for psi in &sol.psi {
            dev = dev.max((psi[1] - u.as_slice()[1]).norm());
        }
    }
    if dev > 1e-10 {
        return Err(format!("real block of psi moved by {dev:.3e}"));
    }
    let cf = cf_against_riccati("heston.toml", vec![1.0, 0.0], 13)?;
    Ok(format!("{cf}; real block deviation {dev:.1e}"))
}

fn constant_path(mesh: f64, horizon: f64, slopes: &[f64], jumps: Vec<(f64, Vec<f64>)>) -> CadlagPath {
    let steps = (horizon / mesh).round() as usize;
    let grid = (0..=steps).map(|k| slopes.iter().map(|b| b * k as f64 * mesh).collect()).collect();
    CadlagPath::from_parts(mesh, grid, jumps).unwrap()
}

/// Explicit Euler for `τ' = x + Σ_k Z^(k)(τ_k)` with linear interpolation
/// onto `times`.
fn euler(drivers: &[CadlagPath], x: &[f64], h: f64, times: &[f64]) -> Vec<Vec<f64>> {
    let m = x.len();
    let t_end = *times.last().unwrap();
    let mut tau = vec![0.0; m];
    let mut prev = tau.clone();
    let mut out = Vec::with_capacity(times.len());
    let (mut j, mut t) = (0, 0.0);
    for step in 0..=(t_end / h).ceil() as usize {
        let tn = step as f64 * h;
        while j < times.len() && times[j] <= tn {
            let w = if tn > t { (times[j] - t) / (tn - t) } else { 1.0 };
            out.push(prev.iter().zip(&tau).map(|(a, b)| a + w * (b - a)).collect());
            j += 1;
        }
        prev.clone_from(&tau);
        t = tn;
        let mut rate = x.to_vec();
        for (k, p) in drivers.iter().enumerate() {
            let z = p.eval(tau[k]).unwrap();
            for (r, v) in rate.iter_mut().zip(&z) {
                *r += v;
            }
        }
        for (v, r) in tau.iter_mut().zip(&rate) {
            *v += h * r.max(0.0);
        }
    }
    out
}

fn grid_values(sol: &TimeChangeSolution) -> Vec<Vec<f64>> {
    sol.grid_entries().map(|(_, v)| v.to_vec()).collect()
}

/// Count entries with `lo > hi + slack`.
fn violations(lo: &[Vec<f64>], hi: &[Vec<f64>], slack: f64) -> usize {
    lo.iter().zip(hi).flat_map(|(a, b)| a.iter().zip(b)).filter(|(a, b)| **a > **b + slack).count()
}

fn sandwich() -> Outcome {
    const SLACK: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let times = output_grid(1.0, 32, &[]);
    let (mesh, horizon) = (1.0 / 256.0, 8.0);
    let mut bad = 0;
    let mut checks = 0;
    let mut closest: f64 = f64::INFINITY;
    for _ in 0..50 {
        let m = 2;
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut paths = Vec::new();
        for k in 0..m {
            let slopes: Vec<f64> = (0..m)
                .map(|c| if c == k { rng.random_range(-0.3..0.5) } else { rng.random_range(0.3..0.8) })
                .collect();
            let count = rng.random_range(0..=5usize);
            let mut jumps: Vec<(f64, Vec<f64>)> = (0..count)
                .map(|_| {
                    let s = rng.random_range(0.3..horizon / 2.0);
                    (s, (0..m).map(|_| rng.random_range(0.0..0.4)).collect())
                })
                .collect();
            jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
            paths.push(constant_path(mesh, horizon, &slopes, jumps));
        }
        let drivers: Vec<_> = paths.iter().enumerate().map(|(k, p)| split(p, k, m).unwrap()).collect();
        let solve = |level, dir| {
            solve_pasted(&drivers, &x, level, dir, &times, &Default::default())
                .map(|s| grid_values(&s))
                .map_err(|e| e.to_string())
        };
        let mut up = Vec::new();
        let mut down = Vec::new();
        for level in 4..=11 {
            up.push(solve(level, Direction::Up)?);
            down.push(solve(level, Direction::Down)?);
        }
        let oracle = euler(&paths, &x, 1e-5, &times);
        for i in 0..up.len() - 1 {
            bad += violations(&up[i], &up[i + 1], SLACK);
            bad += violations(&down[i + 1], &down[i], SLACK);
            checks += 2;
        }
        bad += violations(&up[up.len() - 1], &oracle, SLACK);
        bad += violations(&oracle, &down[down.len() - 1], SLACK);
        checks += 2;
        for (lo, (e, hi)) in up[up.len() - 1].iter().zip(oracle.iter().zip(&down[down.len() - 1])).skip(1) {
            for c in 0..m {
                closest = closest.min((e[c] - lo[c]).min(hi[c] - e[c]));
            }
        }
    }
    let msg = format!("50 instances, {checks} chain checks, {bad} violations, tightest Euler margin {closest:.2e}");
    if bad == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn absorption() -> Outcome {
    let mut p = AdmissibleParamSet::zero(StateDim::new(1, 0).unwrap());
    p.beta[0][0] = -5.0;
    p.alpha[0] = DMatrix::from_element(1, 1, 0.5);
    p.big_m[0] = JumpMeasureSpec::new(1.0, JumpDistribution::ExponentialOnCoordinate { coord: 0, mean: 0.05 });
    // interpolated drivers approach the root exponentially at rate |β| before the
    // absorption threshold snaps, so the horizon leaves room for that
    let sim = Simulator::new(&p, SimConfig::new(vec![0.1], 20.0)).map_err(|e| e.to_string())?;
    let n = 1000;
    let mut held = 0;
    for i in 0..n {
        let path = sim.sample(21, i).map_err(|e| e.to_string())?;
        let Some(at) = path.absorbed_at[0] else { continue };
        let idx = path.times.partition_point(|t| *t < at);
        if idx >= path.times.len() {
            continue;
        }
        let (tau, x) = (path.tau[idx][0], path.x[idx][0]);
        let constant = path.tau[idx..].iter().all(|v| v[0] == tau) && path.x[idx..].iter().all(|v| v[0] == x);
        if constant && x.abs() <= DEFAULT_ABSORB_EPS {
            held += 1;
        }
    }
    let msg = format!("{held} of {n} samples absorbed with constant tau and X");
    if held == n {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_frequency(rng: &mut ChaCha8Rng, dim: StateDim) -> FrequencyVector {
    let u = (0..dim.d())
        .map(|k| {
            let re = if dim.is_positive(k) { rng.random_range(-2.0..0.0) } else { 0.0 };
            c(re, rng.random_range(-3.0..3.0))
        })
        .collect();
    FrequencyVector::new(dim, u).unwrap()
}

fn flow() -> Outcome {
    let opts = RiccatiOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut sets = Vec::new();
    let mut drift = AdmissibleParamSet::zero(StateDim::new(1, 0).unwrap());
    drift.beta[0][0] = 0.5;
    sets.push(("drift", drift));
    for f in ["cir.toml", "jump_cir.toml", "heston.toml", "reducible.toml"] {
        sets.push((f, example(f)));
    }
    for (name, p) in &sets {
        let ch = Characteristics::new(p).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let (t, s) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let u = random_frequency(&mut rng, p.dim);
            let direct = solve_riccati_at(&ch, &u, &[0.0, t + s], &opts).map_err(|e| format!("{name}: {e}"))?;
            let first = solve_riccati_at(&ch, &u, &[0.0, t], &opts).map_err(|e| format!("{name}: {e}"))?;
            let mid = FrequencyVector::projected(p.dim, first.psi[1].clone(), 1e-8).map_err(|e| e.to_string())?;
            let second = solve_riccati_at(&ch, &mid, &[0.0, s], &opts).map_err(|e| format!("{name}: {e}"))?;
            for (a, b) in direct.psi[1].iter().zip(&second.psi[1]) {
                worst = worst.max((a - b).norm() / a.norm().max(1.0));
            }
        }
    }
    let msg = format!("{} sets x 100 draws, worst scaled deviation {worst:.2e}", sets.len());
    if worst <= 10.0 * opts.rtol {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn round_trip() -> Outcome {
    let p = example("reducible.toml");
    let plan = reduce(&p).map_err(|e| e.to_string())?;
    let ch_orig = Characteristics::new(&p).map_err(|e| e.to_string())?;
    let ch_aug = Characteristics::new(&plan.augmented).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut r0_dev: f64 = 0.0;
    for _ in 0..100 {
        let u = random_frequency(&mut rng, p.dim);
        let f = ch_orig.f(u.as_slice()).map_err(|e| e.to_string())?;
        let r0 = ch_aug.r(&plan.embed_frequency(u.as_slice()), 0).map_err(|e| e.to_string())?;
        r0_dev = r0_dev.max((f - r0).norm());
    }
    let mut cfg = SimConfig::new(vec![0.5, 0.2], 1.0);
    cfg.invert_frames = false;
    let sim = Simulator::new(&p, cfg).map_err(|e| e.to_string())?;
    let keep_aux = Frames { auxiliary: false, ..plan.frames.clone() };
    let mut path_dev: f64 = 0.0;
    for i in 0..20 {
        let reduced = sim.sample(31, i).map_err(|e| e.to_string())?;
        let original = invert_frames(&reduced, &keep_aux, f64::INFINITY).map_err(|e| e.to_string())?;
        let forward = forward_frames(&original, &keep_aux).map_err(|e| e.to_string())?;
        let back = invert_frames(&forward, &keep_aux, f64::INFINITY).map_err(|e| e.to_string())?;
        for (a, b) in original.x.iter().zip(&back.x) {
            for (u, v) in a.iter().zip(b) {
                path_dev = path_dev.max((u - v).abs());
            }
        }
    }
    let msg = format!("path sup error {path_dev:.2e} over 20 samples, max |R0 - F| {r0_dev:.2e} over 100 u");
    if path_dev <= 1e-4 && r0_dev <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_affine-path"))
        .args(args)
        .env_clear()
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {status}"))
    }
}

fn dir_contents(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.map_err(|e| e.to_string())?;
            let bytes = std::fs::read(e.path()).map_err(|e| e.to_string())?;
            Ok((e.file_name().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reducible = params_dir().join("reducible.toml");
    let jump_cir = params_dir().join("jump_cir.toml");
    let runs: [(&str, Vec<&str>); 3] = [
        ("simulate", vec!["--x0", "0.5,0.2", "--samples", "4", "--intervals", "64", "--workers", "2"]),
        ("simulate", vec!["--x0", "0.5,0.2", "--samples", "2", "--invert-frames"]),
        ("verify", vec!["--x0", "1", "--samples", "400", "--moments", "--markov", "--workers", "3"]),
    ];
    let mut files = 0;
    for (i, (cmd, extra)) in runs.iter().enumerate() {
        let params = if *cmd == "verify" { &jump_cir } else { &reducible };
        let mut outs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("run{i}_{rep}"));
            let mut args = vec![*cmd, "--params", params.to_str().unwrap(), "--seed", "42"];
            args.extend(extra.iter().copied());
            let out_s = out.to_str().unwrap().to_string();
            args.extend(["--out", &out_s]);
            // verify exits 1 on a failed check, which is still a valid artifact
            let _ = run_cli(&args);
            outs.push(dir_contents(&out)?);
        }
        let names: Vec<&str> = outs[0].iter().map(|(n, _)| n.as_str()).collect();
        if outs[0].is_empty() {
            return Err(format!("{cmd} run {i} produced no files"));
        }
        if outs[0] != outs[1] {
            return Err(format!("{cmd} run {i}: outputs differ ({names:?})"));
        }
        files += outs[0].len();
    }
    Ok(format!("{files} files identical across repeated runs"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 deterministic drift oracle", deterministic),
        ("2 CIR characteristic function", cir_cf),
        ("3 jump CIR vs Riccati", jump_cir),
        ("4 Heston-type 2-d", heston),
        ("5 sandwich and monotonicity", sandwich),
        ("6 absorption", absorption),
        ("7 Riccati flow property", flow),
        ("8 reduction round trip", round_trip),
        ("9 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {name}: {msg} [{secs:.1} s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
