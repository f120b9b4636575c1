//! Monte Carlo checks of the affine property: characteristic functions against
//! Riccati predictions, first moments against the linear moment equation, and a
//! conditional check at an intermediate time.

use std::fmt;

use errorfunctions::RealErrorFunctions;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::params::AdmissibleParamSet;
use crate::riccati::{Characteristics, FrequencyVector, RiccatiError, RiccatiOptions};
use crate::simulate::{SimError, Simulator};

/// Significance level of the binomial count rule.
pub const GATE_LEVEL: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("{failed} of {total} samples failed (first: {first})")]
    Failures { failed: usize, total: usize, first: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no prediction for u = {u}, t = {t}")]
    MissingKey { u: String, t: f64 },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the machine parallelism.
    pub workers: usize,
    /// Largest tolerated fraction of failed samples.
    pub max_failure_rate: f64,
}

impl McOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, workers: 0, max_failure_rate: 1e-3 }
    }
}

/// States `X_t` of all successful samples at `times`, `out[i][j]` for sample
/// `i` and time `j`.
pub fn sample_states(
    sim: &Simulator,
    times: &[f64],
    opts: &McOptions,
) -> Result<Vec<Vec<Vec<f64>>>, VerifyError> {
    for &t in times {
        if !sim.output_times().contains(&t) {
            return Err(VerifyError::InvalidRequest(format!("t = {t} is not on the output grid")));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| VerifyError::Pool(e.to_string()))?;
    let results: Vec<Result<Vec<Vec<f64>>, SimError>> = pool.install(|| {
        (0..opts.samples as u64)
            .into_par_iter()
            .map(|i| {
                let path = sim.sample(opts.seed, i)?;
                Ok(times.iter().map(|&t| path.value_at(t).map(<[f64]>::to_vec).unwrap_or_default()).collect())
            })
            .collect()
    });
    let total = results.len();
    let mut out = Vec::with_capacity(total);
    let mut failed = 0;
    let mut first = None;
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                failed += 1;
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed > 0 {
        let first = first.unwrap_or_default();
        if failed as f64 > opts.max_failure_rate * total as f64 {
            return Err(VerifyError::Failures { failed, total, first });
        }
        log::warn!("{failed} of {total} samples failed and were dropped (first: {first})");
    }
    Ok(out)
}

/// Sample mean and standard error `sqrt(Σ|Y - Ȳ|² / (n-1) / n)`.
pub fn complex_mean(values: &[Complex64]) -> (Complex64, f64) {
    let n = values.len();
    if n == 0 {
        return (Complex64::new(f64::NAN, f64::NAN), f64::NAN);
    }
    let mean = values.iter().sum::<Complex64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).norm_sqr()).sum();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfEstimate {
    pub u0: FrequencyVector,
    pub t: f64,
    pub estimate: Complex64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Monte Carlo estimates of `E^x[exp(<u0, X_t>)]` for every `(u0, t)` pair.
pub fn mc_cf(
    sim: &Simulator,
    u_list: &[FrequencyVector],
    t_list: &[f64],
    opts: &McOptions,
) -> Result<Vec<CfEstimate>, VerifyError> {
    if opts.samples < 100 {
        return Err(VerifyError::InvalidRequest("need at least 100 samples".into()));
    }
    let states = sample_states(sim, t_list, opts)?;
    let mut out = Vec::with_capacity(u_list.len() * t_list.len());
    let mut values = Vec::with_capacity(states.len());
    for u in u_list {
        for (j, &t) in t_list.iter().enumerate() {
            values.clear();
            values.extend(states.iter().map(|s| u.exp_pairing(&s[j])));
            let (estimate, std_error) = complex_mean(&values);
            out.push(CfEstimate { u0: u.clone(), t, estimate, std_error, n_samples: values.len() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub u0: FrequencyVector,
    pub t: f64,
    pub value: Complex64,
}

/// Riccati predictions `exp(φ(t,u) + <x, ψ(t,u)>)` for every `(u, t)` pair.
pub fn predict_cf(
    params: &AdmissibleParamSet,
    x: &[f64],
    u_list: &[FrequencyVector],
    t_list: &[f64],
    opts: &RiccatiOptions,
) -> Result<Vec<Prediction>, VerifyError> {
    let ch = Characteristics::new(params)?;
    let mut sorted = t_list.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = Vec::new();
    for u in u_list {
        let cf = crate::riccati::cf_affine(&ch, u, x, &sorted, opts)?;
        for &t in t_list {
            let j = sorted.iter().position(|s| *s == t).expect("time in sorted list");
            out.push(Prediction { u0: u.clone(), t, value: cf[j] });
        }
    }
    Ok(out)
}

/// One compared point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCheck {
    pub u0: FrequencyVector,
    pub t: f64,
    pub estimate: Complex64,
    pub std_error: f64,
    pub prediction: Complex64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub points: Vec<PointCheck>,
    pub z_threshold: f64,
    pub flagged: usize,
    /// Largest flagged count accepted by the binomial rule.
    pub allowed: usize,
    pub pass: bool,
}

/// Two-sided normal tail `P(|N(0,1)| > z)`.
pub fn normal_two_sided(z: f64) -> f64 {
    RealErrorFunctions::erfc(z / std::f64::consts::SQRT_2)
}

/// `P(Bin(n, p) >= k)`.
pub fn binomial_upper_tail(n: usize, p: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log_c = 0.0;
    let mut total = 0.0;
    for j in 0..=n {
        if j > 0 {
            log_c += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        if j >= k {
            total += (log_c + j as f64 * lp + (n - j) as f64 * lq).exp();
        }
    }
    total.min(1.0)
}

/// Largest `k` whose upper tail is at least `level`.
pub fn binomial_allowance(n: usize, p: f64, level: f64) -> usize {
    (0..=n).take_while(|&k| binomial_upper_tail(n, p, k) >= level).last().unwrap_or(0)
}

/// Differences below this relative level count as exact agreement.
const EXACT_REL: f64 = 1e-9;

fn z_score(diff: f64, se: f64, scale: f64) -> f64 {
    if diff <= EXACT_REL * scale.max(1.0) {
        0.0
    } else if se > 0.0 {
        diff / se
    } else {
        f64::INFINITY
    }
}

/// `z = |estimate - prediction| / std_error`; the run passes when the number of
/// points with `z > z_threshold` is compatible with chance at 1% significance.
pub fn compare_cf(
    estimates: &[CfEstimate],
    predictions: &[Prediction],
    z_threshold: f64,
) -> Result<CompareReport, VerifyError> {
    let mut points = Vec::with_capacity(estimates.len());
    for e in estimates {
        let p = predictions.iter().find(|p| p.t == e.t && p.u0 == e.u0).ok_or_else(|| {
            VerifyError::MissingKey { u: format!("{:?}", e.u0.as_slice()), t: e.t }
        })?;
        let z = z_score((e.estimate - p.value).norm(), e.std_error, p.value.norm());
        points.push(PointCheck {
            u0: e.u0.clone(),
            t: e.t,
            estimate: e.estimate,
            std_error: e.std_error,
            prediction: p.value,
            z,
            flagged: z > z_threshold,
        });
    }
    Ok(gate(points, z_threshold))
}

fn gate(points: Vec<PointCheck>, z_threshold: f64) -> CompareReport {
    let flagged = points.iter().filter(|p| p.flagged).count();
    let allowed = binomial_allowance(points.len(), normal_two_sided(z_threshold), GATE_LEVEL);
    CompareReport { points, z_threshold, flagged, allowed, pass: flagged <= allowed }
}

fn fmt_c(v: Complex64) -> String {
    format!("{:.16e}, {:.16e}", v.re, v.im)
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "u, t, re_estimate, im_estimate, std_error, re_prediction, im_prediction, z, flagged")?;
        for p in &self.points {
            let u: Vec<String> =
                p.u0.as_slice().iter().map(|v| format!("{:.16e}{:+.16e}i", v.re, v.im)).collect();
            writeln!(
                f,
                "({}), {:.16e}, {}, {:.16e}, {}, {:.16e}, {}",
                u.join(" "),
                p.t,
                fmt_c(p.estimate),
                p.std_error,
                fmt_c(p.prediction),
                p.z,
                p.flagged as u8
            )?;
        }
        writeln!(
            f,
            "# flagged {} of {} at z > {} (allowed {}): {}",
            self.flagged,
            self.points.len(),
            self.z_threshold,
            self.allowed,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Default frequency grid: `{-2, -1, -0.5}` on each nonnegative coordinate and
/// `{0, ±i, ±2i}` on each real one, at most 64 combinations.
pub fn default_u_grid(params: &AdmissibleParamSet) -> Vec<FrequencyVector> {
    let dim = params.dim;
    let levels: Vec<Vec<Complex64>> = (0..dim.d())
        .map(|k| {
            if dim.is_positive(k) {
                [-2.0, -1.0, -0.5].iter().map(|&r| Complex64::new(r, 0.0)).collect()
            } else {
                [0.0, 1.0, -1.0, 2.0, -2.0].iter().map(|&i| Complex64::new(0.0, i)).collect()
            }
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim.d()];
    loop {
        if out.len() == 64 {
            break;
        }
        let u = idx.iter().enumerate().map(|(k, &i)| levels[k][i]).collect();
        out.push(FrequencyVector::new(dim, u).expect("grid lies in the frequency domain"));
        let mut k = dim.d();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < levels[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

pub const DEFAULT_T_GRID: [f64; 3] = [0.25, 0.5, 1.0];

/// Drift `b̃` and matrix `B̃` of the first-moment equation `m' = b̃ + B̃ m`.
pub fn moment_drift(params: &AdmissibleParamSet) -> (DVector<f64>, DMatrix<f64>) {
    let dim = params.dim;
    let d = dim.d();
    let comp_m = params.m_measure.compensator(d);
    let mean_m = params.m_measure.mean_rate(d);
    let b = DVector::from_fn(d, |l, _| {
        params.b[l] + mean_m[l] - if dim.is_positive(l) { 0.0 } else { comp_m[l] }
    });
    let mut big_b = DMatrix::zeros(d, d);
    for k in 0..d {
        let comp = params.big_m[k].compensator(d);
        let mean = params.big_m[k].mean_rate(d);
        for l in 0..d {
            let masked = l == k || !dim.is_positive(l);
            big_b[(l, k)] = params.beta[k][l] + mean[l] - if masked { comp[l] } else { 0.0 };
        }
    }
    (b, big_b)
}

/// `E^x[X_t]` from the moment equation via the exponential of the augmented
/// matrix `[[B̃, b̃], [0, 0]]`.
pub fn predicted_mean(params: &AdmissibleParamSet, x: &[f64], t: f64) -> Vec<f64> {
    let d = params.d();
    let (b, big_b) = moment_drift(params);
    let mut a = DMatrix::zeros(d + 1, d + 1);
    a.view_mut((0, 0), (d, d)).copy_from(&(big_b * t));
    a.view_mut((0, d), (d, 1)).copy_from(&(b * t));
    let e = a.exp();
    let mut v = DVector::from_element(d + 1, 1.0);
    v.rows_mut(0, d).copy_from_slice(x);
    (e * v).rows(0, d).iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentPoint {
    pub t: f64,
    pub coord: usize,
    pub mean: f64,
    pub std_error: f64,
    pub predicted: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub points: Vec<MomentPoint>,
    pub flagged: usize,
    pub allowed: usize,
    pub pass: bool,
    /// Set when the check could not be run.
    pub skipped: Option<String>,
}

impl fmt::Display for MomentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(why) = &self.skipped {
            return writeln!(f, "# moment check skipped: {why}");
        }
        writeln!(f, "t, coord, mean, std_error, predicted, z, flagged")?;
        for p in &self.points {
            writeln!(
                f,
                "{:.16e}, {}, {:.16e}, {:.16e}, {:.16e}, {:.16e}, {}",
                p.t,
                p.coord + 1,
                p.mean,
                p.std_error,
                p.predicted,
                p.z,
                p.flagged as u8
            )?;
        }
        writeln!(
            f,
            "# flagged {} of {} (allowed {}): {}",
            self.flagged,
            self.points.len(),
            self.allowed,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Compare sample means of `X_t` with the moment equation, flagging
/// deviations beyond 3 standard errors.
pub fn moment_check(sim: &Simulator, t_list: &[f64], opts: &McOptions) -> Result<MomentReport, VerifyError> {
    let params = sim.params();
    if !params.big_m.iter().chain(std::iter::once(&params.m_measure)).all(|m| m.has_finite_mean()) {
        return Ok(MomentReport {
            points: vec![],
            flagged: 0,
            allowed: 0,
            pass: true,
            skipped: Some("a jump law has no finite mean".into()),
        });
    }
    let states = sample_states(sim, t_list, opts)?;
    let n = states.len() as f64;
    let x = &sim.config().x0;
    let mut points = Vec::new();
    for (j, &t) in t_list.iter().enumerate() {
        let pred = predicted_mean(params, x, t);
        for (c, &want) in pred.iter().enumerate() {
            let mean = states.iter().map(|s| s[j][c]).sum::<f64>() / n;
            let var = states.iter().map(|s| (s[j][c] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let z = z_score((mean - want).abs(), se, want.abs());
            points.push(MomentPoint { t, coord: c, mean, std_error: se, predicted: want, z, flagged: z > 3.0 });
        }
    }
    let flagged = points.iter().filter(|p| p.flagged).count();
    let allowed = binomial_allowance(points.len(), normal_two_sided(3.0), GATE_LEVEL);
    Ok(MomentReport { points, flagged, allowed, pass: flagged <= allowed, skipped: None })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovReport {
    pub s: f64,
    pub t: f64,
    /// Mean of `exp(<u, X_t>) - exp(φ(t-s,u) + <X_s, ψ(t-s,u)>)` and of the same
    /// residual weighted by `1{X_s,1 > median}`.
    pub residuals: [Complex64; 2],
    pub std_errors: [f64; 2],
    pub z: [f64; 2],
    pub pass: bool,
}

impl fmt::Display for MarkovReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, name) in ["all", "upper half"].iter().enumerate() {
            writeln!(
                f,
                "# markov {name}: s={} t={} residual={} se={:.16e} z={:.4}",
                self.s,
                self.t,
                fmt_c(self.residuals[k]),
                self.std_errors[k],
                self.z[k]
            )?;
        }
        writeln!(f, "# markov check: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Conditional check at an intermediate time: given `X_s`, the law of `X_t`
/// must have the affine transform started from `X_s` after time `t - s`.
pub fn markov_check(
    sim: &Simulator,
    u: &FrequencyVector,
    s: f64,
    t: f64,
    opts: &McOptions,
    ropts: &RiccatiOptions,
    z_threshold: f64,
) -> Result<MarkovReport, VerifyError> {
    if !(0.0 < s && s < t) {
        return Err(VerifyError::InvalidRequest("need 0 < s < t".into()));
    }
    let ch = Characteristics::new(sim.params())?;
    let sol = crate::riccati::solve_riccati_at(&ch, u, &[t - s], ropts)?;
    let (phi, psi) = (sol.phi[0], &sol.psi[0]);
    let states = sample_states(sim, &[s, t], opts)?;
    let resid: Vec<Complex64> = states
        .iter()
        .map(|st| u.exp_pairing(&st[1]) - (phi + crate::riccati::pairing(psi, &st[0])).exp())
        .collect();
    let mut first: Vec<f64> = states.iter().map(|st| st[0][0]).collect();
    first.sort_by(f64::total_cmp);
    let median = first[first.len() / 2];
    let weighted: Vec<Complex64> = states
        .iter()
        .zip(&resid)
        .map(|(st, r)| if st[0][0] > median { *r } else { Complex64::new(0.0, 0.0) })
        .collect();
    let (m0, se0) = complex_mean(&resid);
    let (m1, se1) = complex_mean(&weighted);
    let z = [z_score(m0.norm(), se0, 1.0), z_score(m1.norm(), se1, 1.0)];
    Ok(MarkovReport {
        s,
        t,
        residuals: [m0, m1],
        std_errors: [se0, se1],
        z,
        pass: z.iter().all(|v| *v <= z_threshold),
    })
}
