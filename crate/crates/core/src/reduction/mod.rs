//! Reduction of a general parameter set to Heston type: an auxiliary
//! nonnegative component absorbs the constant characteristics, and a moving
//! frame removes the drift of the real components on themselves.
//!
//! With `B_J` the matrix `(B_J)_{lj} = (β_j)_l` for `l, j ∈ J`, the frame map is
//! `Y_J = X_J - B_J ∫ X_J ds`; the nonnegative components pass through.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::params::{
    classify_heston, validate, AdmissibleParamSet, ParamError, StateDim, ValidationReport,
};
use crate::timechange::ProcessPath;

/// Default tolerance on the estimated quadrature error of `invert_frames`.
pub const FRAME_TOL: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum ReductionError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("parameters are not admissible:\n{0}")]
    Inadmissible(ValidationReport),
    #[error("cannot reduce: {0} is violated")]
    NotReducible(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("frame file: {0}")]
    Sidecar(String),
}

/// The drift block removed by the moving frame, acting on coordinates
/// `m..m+n` of a state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frames {
    /// Number of nonnegative coordinates of the framed state.
    pub m: usize,
    /// Whether coordinate 0 is the auxiliary component of an augmentation.
    pub auxiliary: bool,
    /// Rows of `B_J`.
    pub matrix: Vec<Vec<f64>>,
}

impl Frames {
    pub fn identity(m: usize, n: usize, auxiliary: bool) -> Self {
        Self { m, auxiliary, matrix: vec![vec![0.0; n]; n] }
    }

    pub fn n(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_identity(&self) -> bool {
        self.matrix.iter().flatten().all(|v| *v == 0.0)
    }

    fn block(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |r, c| self.matrix[r][c])
    }

    pub fn to_toml_string(&self) -> String {
        let mut s = String::from("# moving-frame drift block B_J, rows act on the real coordinates\n");
        s.push_str(&format!("m = {}\nauxiliary = {}\nmatrix = [\n", self.m, self.auxiliary));
        for row in &self.matrix {
            let r: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&format!("    [{}],\n", r.join(", ")));
        }
        s.push_str("]\n");
        s
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ReductionError> {
        let f: Frames = toml::from_str(s).map_err(|e| ReductionError::Sidecar(e.to_string()))?;
        let n = f.n();
        if f.matrix.iter().any(|r| r.len() != n) {
            return Err(ReductionError::Sidecar("matrix must be square".into()));
        }
        if f.matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ReductionError::Sidecar("matrix entries must be finite".into()));
        }
        Ok(f)
    }
}

/// Result of `reduce`: the Heston-type set and the data needed to map back.
#[derive(Debug, Clone)]
pub struct ReductionPlan {
    pub original: AdmissibleParamSet,
    pub augmented: AdmissibleParamSet,
    pub frames: Frames,
}

impl ReductionPlan {
    /// `x ↦ (1, x)`.
    pub fn embed_state(&self, x: &[f64]) -> Vec<f64> {
        std::iter::once(1.0).chain(x.iter().copied()).collect()
    }

    /// `u ↦ (0, u)`.
    pub fn embed_frequency(&self, u: &[num_complex::Complex64]) -> Vec<num_complex::Complex64> {
        std::iter::once(num_complex::Complex64::new(0.0, 0.0)).chain(u.iter().copied()).collect()
    }
}

fn check_reducible(p: &AdmissibleParamSet) -> Result<(), ReductionError> {
    let report = validate(p)?;
    if !report.is_empty() {
        return Err(ReductionError::Inadmissible(report));
    }
    if p.c != 0.0 {
        return Err(ReductionError::NotReducible(format!("c=0 (c = {})", p.c)));
    }
    if let Some(i) = p.gamma.iter().position(|g| *g != 0.0) {
        return Err(ReductionError::NotReducible(format!("γ_i=0 at ({})", i + 1)));
    }
    if !classify_heston(p).ring {
        return Err(ReductionError::NotReducible("finite first moment of M_i".into()));
    }
    Ok(())
}

fn embed_matrix(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    DMatrix::from_fn(d + 1, d + 1, |r, c| if r == 0 || c == 0 { 0.0 } else { a[(r - 1, c - 1)] })
}

fn embed_vector(v: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(v.iter().copied()).collect()
}

/// Enlarge `D` to `R+^{m+1} x R^n` so that the constant characteristics
/// become the linear ones of a new component 0 started at 1.
pub fn augment(p: &AdmissibleParamSet) -> Result<AdmissibleParamSet, ReductionError> {
    check_reducible(p)?;
    let dim = StateDim::new(p.dim.m() + 1, p.dim.n())?;
    let mut out = AdmissibleParamSet::zero(dim);
    out.beta[0] = embed_vector(&p.b);
    out.alpha[0] = embed_matrix(&p.a);
    out.big_m[0] = p.m_measure.embed(1);
    for k in 0..p.d() {
        out.beta[k + 1] = embed_vector(&p.beta[k]);
        out.alpha[k + 1] = embed_matrix(&p.alpha[k]);
        out.big_m[k + 1] = p.big_m[k].embed(1);
    }
    Ok(out)
}

/// Zero the `J x J` drift block and return it as the frame.
pub fn apply_moving_frames(p: &AdmissibleParamSet) -> (AdmissibleParamSet, Frames) {
    let m = p.dim.m();
    let n = p.dim.n();
    let mut out = p.clone();
    let mut matrix = vec![vec![0.0; n]; n];
    for j in 0..n {
        for (l, row) in matrix.iter_mut().enumerate() {
            row[j] = p.beta[m + j][m + l];
            out.beta[m + j][m + l] = 0.0;
        }
    }
    (out, Frames { m, auxiliary: false, matrix })
}

/// Augmentation followed by the moving frame.
pub fn reduce(p: &AdmissibleParamSet) -> Result<ReductionPlan, ReductionError> {
    let aug = augment(p)?;
    let (augmented, mut frames) = apply_moving_frames(&aug);
    frames.auxiliary = true;
    Ok(ReductionPlan { original: p.clone(), augmented, frames })
}

fn check_path(path: &ProcessPath, frames: &Frames) -> Result<(), ReductionError> {
    let d = frames.m + frames.n();
    if path.x.iter().chain(&path.x_left).any(|v| v.len() != d) || path.x.len() != path.times.len()
    {
        return Err(ReductionError::InvalidInput(format!("path dimension differs from {d}")));
    }
    if frames.auxiliary && frames.m == 0 {
        return Err(ReductionError::InvalidInput("auxiliary frame needs m >= 1".into()));
    }
    Ok(())
}

fn real_part(v: &[f64], m: usize) -> DVector<f64> {
    DVector::from_column_slice(&v[m..])
}

/// `Y_J = X_J - B_J ∫ X_J ds` by the trapezoidal rule on the path grid, using
/// left limits at the right end of each interval.
pub fn forward_frames(path: &ProcessPath, frames: &Frames) -> Result<ProcessPath, ReductionError> {
    check_path(path, frames)?;
    let m = frames.m;
    let b = frames.block();
    let mut out = path.clone();
    let n = frames.n();
    let mut integral = DVector::zeros(n);
    for j in 0..path.times.len() {
        let mut left_integral = integral.clone();
        if j > 0 {
            let h = path.times[j] - path.times[j - 1];
            left_integral +=
                (real_part(&path.x[j - 1], m) + real_part(&path.x_left[j], m)) * (0.5 * h);
        }
        let yl = real_part(&path.x_left[j], m) - &b * &left_integral;
        let y = real_part(&path.x[j], m) - &b * &left_integral;
        out.x_left[j][m..].copy_from_slice(yl.as_slice());
        out.x[j][m..].copy_from_slice(y.as_slice());
        integral = left_integral;
    }
    Ok(out)
}

/// Solve `X_J = Y_J + B_J ∫ X_J ds` step by step with the trapezoidal rule.
/// The auxiliary component is removed when the frame carries one. A warning is
/// attached when the estimated quadrature error exceeds `tol`.
pub fn invert_frames(
    path: &ProcessPath,
    frames: &Frames,
    tol: f64,
) -> Result<ProcessPath, ReductionError> {
    check_path(path, frames)?;
    let m = frames.m;
    let n = frames.n();
    let b = frames.block();
    let mut out = path.clone();
    if !frames.is_identity() {
        let mut integral = DVector::zeros(n);
        let mut prev = real_part(&path.x[0], m);
        for j in 1..path.times.len() {
            let h = path.times[j] - path.times[j - 1];
            // (I - h/2 B) X(t-) = Y(t-) + B (S + h/2 X_prev)
            let lhs = DMatrix::identity(n, n) - &b * (0.5 * h);
            let rhs = real_part(&path.x_left[j], m) + &b * (&integral + &prev * (0.5 * h));
            let xl = lhs
                .lu()
                .solve(&rhs)
                .ok_or_else(|| ReductionError::InvalidInput(format!("singular frame step h={h}")))?;
            integral += (&prev + &xl) * (0.5 * h);
            let x = real_part(&path.x[j], m) + &b * &integral;
            out.x_left[j][m..].copy_from_slice(xl.as_slice());
            out.x[j][m..].copy_from_slice(x.as_slice());
            prev = x;
        }
        let err = quadrature_error(&out, m, &b);
        if err > tol {
            let msg = format!("frame inversion: estimated quadrature error {err:e} exceeds {tol:e}");
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
    }
    if frames.auxiliary {
        for v in out.x.iter_mut().chain(out.x_left.iter_mut()).chain(std::iter::once(&mut out.x0)) {
            v.remove(0);
        }
        for v in out.tau.iter_mut() {
            v.remove(0);
        }
        out.absorbed_at.remove(0);
    }
    Ok(out)
}

/// Sum of local trapezoid errors `h³/12 |X''|` over intervals with a
/// continuous neighbour, amplified by the growth of the linear equation.
fn quadrature_error(path: &ProcessPath, m: usize, b: &DMatrix<f64>) -> f64 {
    let norm_b = b.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let t = &path.times;
    let mut acc = 0.0;
    for j in 2..t.len() {
        let h1 = t[j - 1] - t[j - 2];
        let h2 = t[j] - t[j - 1];
        if h1 <= 0.0 || h2 <= 0.0 || path.x_left[j - 1] != path.x[j - 1] {
            continue;
        }
        let mut dd: f64 = 0.0;
        for c in m..path.x[j].len() {
            let s2 = (path.x_left[j][c] - path.x[j - 1][c]) / h2;
            let s1 = (path.x_left[j - 1][c] - path.x[j - 2][c]) / h1;
            dd = dd.max((2.0 * (s2 - s1) / (h1 + h2)).abs());
        }
        acc += h2.powi(3) / 12.0 * dd;
    }
    let horizon = t.last().copied().unwrap_or(0.0);
    norm_b * acc * (norm_b * horizon).exp()
}
