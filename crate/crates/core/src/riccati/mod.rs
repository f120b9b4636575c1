//! Functional characteristics `F`, `R` and the generalized Riccati system
//! `φ' = F(ψ)`, `ψ' = R(ψ)` with `φ(0) = 0`, `ψ(0) = u`.
//!
//! All pairings are bilinear, `<u, x> = Σ u_k x_k` without conjugation.

pub mod closed_form;
pub mod dopri;

use num_complex::Complex64;

use crate::params::{AdmissibleParamSet, JumpMeasureSpec, ParamError, StateDim};
use dopri::{integrate, IntegrationError, Tolerances};
pub use dopri::StepStats;

/// Allowed excursion of `ψ` outside the frequency domain.
pub const ESCAPE_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum RiccatiError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("frequency vector outside the domain: {0}")]
    Domain(String),
    #[error("ψ left the frequency domain at t = {time}")]
    Escape { time: f64 },
    #[error("integrator exceeded the step limit at t = {time}")]
    TooManySteps { time: f64 },
    #[error("integrator step size underflow at t = {time}")]
    StepUnderflow { time: f64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A point of `U = C^m_{<=0} x iR^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    dim: StateDim,
    u: Vec<Complex64>,
}

impl FrequencyVector {
    pub fn new(dim: StateDim, u: Vec<Complex64>) -> Result<Self, RiccatiError> {
        if u.len() != dim.d() {
            return Err(ParamError::DimensionMismatch {
                field: "u".into(),
                expected: dim.d(),
                got: u.len(),
            }
            .into());
        }
        if u.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(RiccatiError::Domain("non-finite entry".into()));
        }
        if let Some(i) = dim.positive().find(|&i| u[i].re > 0.0) {
            return Err(RiccatiError::Domain(format!("Re(u_{}) = {} > 0", i + 1, u[i].re)));
        }
        if let Some(j) = dim.real().find(|&j| u[j].re != 0.0) {
            return Err(RiccatiError::Domain(format!("Re(u_{}) = {} != 0", j + 1, u[j].re)));
        }
        Ok(Self { dim, u })
    }

    /// Project onto `U`, accepting excursions up to `tol`.
    pub fn projected(dim: StateDim, mut u: Vec<Complex64>, tol: f64) -> Result<Self, RiccatiError> {
        if u.len() == dim.d() {
            for (k, v) in u.iter_mut().enumerate() {
                let limit = if dim.is_positive(k) { v.re > 0.0 } else { v.re != 0.0 };
                if limit && v.re.abs() <= tol {
                    v.re = if dim.is_positive(k) { v.re.min(0.0) } else { 0.0 };
                }
            }
        }
        Self::new(dim, u)
    }

    pub fn real(dim: StateDim, u: &[f64]) -> Result<Self, RiccatiError> {
        Self::new(dim, u.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn zero(dim: StateDim) -> Self {
        Self { dim, u: vec![Complex64::new(0.0, 0.0); dim.d()] }
    }

    pub fn dim(&self) -> StateDim {
        self.dim
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.u
    }

    /// `exp(<u, x>)`.
    pub fn exp_pairing(&self, x: &[f64]) -> Complex64 {
        pairing(&self.u, x).exp()
    }
}

pub fn pairing(u: &[Complex64], x: &[f64]) -> Complex64 {
    u.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn in_domain(dim: StateDim, u: &[Complex64], tol: f64) -> bool {
    dim.positive().all(|i| u[i].re <= tol) && dim.real().all(|j| u[j].re.abs() <= tol)
}

struct JumpPart {
    spec: JumpMeasureSpec,
    compensator: Vec<f64>,
}

impl JumpPart {
    fn new(spec: &JumpMeasureSpec, d: usize) -> Self {
        Self { spec: spec.clone(), compensator: spec.compensator(d) }
    }

    /// `∫ (e^{<u,ξ>} - 1 - <π_S u, π_S h(ξ)>) dμ` with `S` given by `mask`.
    fn integral(&self, u: &[Complex64], mask: impl Fn(usize) -> bool) -> Result<Complex64, ParamError> {
        let mut v = self.spec.transform_minus_one(u)?;
        for (l, (ul, cl)) in u.iter().zip(&self.compensator).enumerate() {
            if *cl != 0.0 && mask(l) {
                v -= ul * cl;
            }
        }
        Ok(v)
    }
}

/// Parameters prepared for repeated evaluation of `F` and `R`.
pub struct Characteristics {
    params: AdmissibleParamSet,
    m_part: JumpPart,
    big_m_parts: Vec<JumpPart>,
}

fn quadratic(u: &[Complex64], a: &nalgebra::DMatrix<f64>) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, uk) in u.iter().enumerate() {
        for (l, ul) in u.iter().enumerate() {
            let v = a[(k, l)];
            if v != 0.0 {
                acc += uk * ul * v;
            }
        }
    }
    acc
}

fn linear(w: &[f64], u: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (wk, uk) in w.iter().zip(u) {
        if *wk != 0.0 {
            acc += uk * wk;
        }
    }
    acc
}

impl Characteristics {
    pub fn new(params: &AdmissibleParamSet) -> Result<Self, RiccatiError> {
        params.check_structure()?;
        let d = params.d();
        Ok(Self {
            params: params.clone(),
            m_part: JumpPart::new(&params.m_measure, d),
            big_m_parts: params.big_m.iter().map(|mk| JumpPart::new(mk, d)).collect(),
        })
    }

    pub fn params(&self) -> &AdmissibleParamSet {
        &self.params
    }

    pub fn dim(&self) -> StateDim {
        self.params.dim
    }

    pub fn f(&self, u: &[Complex64]) -> Result<Complex64, ParamError> {
        let p = &self.params;
        let dim = p.dim;
        Ok(linear(&p.b, u) + 0.5 * quadratic(u, &p.a) - p.c
            + self.m_part.integral(u, |l| !dim.is_positive(l))?)
    }

    pub fn r(&self, u: &[Complex64], k: usize) -> Result<Complex64, ParamError> {
        let p = &self.params;
        let dim = p.dim;
        Ok(linear(&p.beta[k], u) + 0.5 * quadratic(u, &p.alpha[k]) - p.gamma[k]
            + self.big_m_parts[k].integral(u, |l| l == k || !dim.is_positive(l))?)
    }

    fn field(&self, y: &[Complex64], out: &mut [Complex64]) -> Result<(), ParamError> {
        let psi = &y[1..];
        out[0] = self.f(psi)?;
        for k in 0..psi.len() {
            out[k + 1] = self.r(psi, k)?;
        }
        Ok(())
    }
}

pub fn eval_f(params: &AdmissibleParamSet, u: &FrequencyVector) -> Result<Complex64, RiccatiError> {
    Ok(Characteristics::new(params)?.f(u.as_slice())?)
}

pub fn eval_r(
    params: &AdmissibleParamSet,
    u: &FrequencyVector,
    k: usize,
) -> Result<Complex64, RiccatiError> {
    if k >= params.d() {
        return Err(RiccatiError::InvalidRequest(format!("index {k} out of range")));
    }
    Ok(Characteristics::new(params)?.r(u.as_slice(), k)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub phi: Vec<Complex64>,
    pub psi: Vec<Vec<Complex64>>,
    pub u0: FrequencyVector,
    pub stats: StepStats,
}

impl RiccatiSolution {
    /// `exp(φ(t) + <x, ψ(t)>)` on the grid.
    pub fn cf(&self, x: &[f64]) -> Vec<Complex64> {
        self.phi.iter().zip(&self.psi).map(|(p, s)| (p + pairing(s, x)).exp()).collect()
    }
}

/// Uniform grid with `intervals` steps on `[0, t_end]`.
pub fn uniform_grid(t_end: f64, intervals: usize) -> Vec<f64> {
    let n = intervals.max(1);
    (0..=n).map(|k| if k == n { t_end } else { t_end * k as f64 / n as f64 }).collect()
}

/// Integrate the Riccati system and report `φ`, `ψ` at `times` (sorted,
/// nonnegative).
pub fn solve_riccati_at(
    ch: &Characteristics,
    u0: &FrequencyVector,
    times: &[f64],
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution, RiccatiError> {
    let dim = ch.dim();
    if u0.dim() != dim {
        return Err(RiccatiError::InvalidRequest("u0 has the wrong dimension".into()));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0])
    {
        return Err(RiccatiError::InvalidRequest("times must be sorted and nonnegative".into()));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(RiccatiError::InvalidRequest("tolerances must be positive".into()));
    }
    let mut y0 = vec![Complex64::new(0.0, 0.0)];
    y0.extend_from_slice(u0.as_slice());
    let tol = Tolerances { rtol: opts.rtol, atol: opts.atol, max_steps: opts.max_steps };
    let res = integrate(
        |y, out| ch.field(y, out).map_err(RiccatiError::from),
        &y0,
        times,
        &tol,
        |t, y| {
            if in_domain(dim, &y[1..], ESCAPE_TOL) {
                Ok(())
            } else {
                Err(RiccatiError::Escape { time: t })
            }
        },
    );
    let (ys, stats) = res.map_err(|e| match e {
        IntegrationError::Field(e) => e,
        IntegrationError::Stopped { reason, .. } => reason,
        IntegrationError::TooManySteps { time } => RiccatiError::TooManySteps { time },
        IntegrationError::StepUnderflow { time } => RiccatiError::StepUnderflow { time },
    })?;
    let phi = ys.iter().map(|y| y[0]).collect();
    let psi = ys.into_iter().map(|mut y| y.split_off(1)).collect();
    Ok(RiccatiSolution { times: times.to_vec(), phi, psi, u0: u0.clone(), stats })
}

/// Riccati solution on a uniform grid with `intervals` steps on `[0, t_end]`.
pub fn solve_riccati(
    params: &AdmissibleParamSet,
    u0: &FrequencyVector,
    t_end: f64,
    intervals: usize,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution, RiccatiError> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(RiccatiError::InvalidRequest(format!("T must be > 0, got {t_end}")));
    }
    let ch = Characteristics::new(params)?;
    solve_riccati_at(&ch, u0, &uniform_grid(t_end, intervals), opts)
}

/// `E^x[exp(<u0, X_t>)]` predicted by the affine formula at `times`.
pub fn cf_affine(
    ch: &Characteristics,
    u0: &FrequencyVector,
    x: &[f64],
    times: &[f64],
    opts: &RiccatiOptions,
) -> Result<Vec<Complex64>, RiccatiError> {
    if x.len() != ch.dim().d() || !ch.dim().contains(x) {
        return Err(RiccatiError::InvalidRequest("x must be a point of the state space".into()));
    }
    Ok(solve_riccati_at(ch, u0, times, opts)?.cf(x))
}
