//! Admissible parameter sets on `D = R+^m x R^n`, their validation and the
//! Heston-type classification.

mod config;
mod jumps;

pub use config::{from_toml_str, load, to_toml_string, ConfigError};
pub use jumps::{JumpDistribution, JumpMeasureSpec, Law1d};

use nalgebra::{DMatrix, SymmetricEigen};
use std::fmt;
use std::ops::Range;

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("dimension mismatch in {field}: expected {expected}, got {got}")]
    DimensionMismatch { field: String, expected: usize, got: usize },
    #[error("malformed parameters: {0}")]
    Structural(String),
    #[error("transform undefined: Re(u) * mean = {} >= 1", re_u * scale)]
    TransformDomain { re_u: f64, scale: f64 },
}

/// Split of the state dimension into `m` nonnegative and `n` real components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateDim {
    m: usize,
    n: usize,
}

impl StateDim {
    pub fn new(m: usize, n: usize) -> Result<Self, ParamError> {
        if m + n == 0 {
            return Err(ParamError::Structural("state dimension must be >= 1".into()));
        }
        Ok(Self { m, n })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.m + self.n
    }

    /// Index set I (0-based).
    pub fn positive(&self) -> Range<usize> {
        0..self.m
    }

    /// Index set J (0-based).
    pub fn real(&self) -> Range<usize> {
        self.m..self.m + self.n
    }

    pub fn is_positive(&self, k: usize) -> bool {
        k < self.m
    }

    pub fn project_positive<'a, T>(&self, x: &'a [T]) -> &'a [T] {
        &x[..self.m]
    }

    pub fn project_real<'a, T>(&self, x: &'a [T]) -> &'a [T] {
        &x[self.m..]
    }

    /// Whether `x` lies in `D`.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.d() && x[..self.m].iter().all(|v| *v >= 0.0)
    }
}

/// Relative eigenvalue tolerance for positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-12;

pub(crate) fn is_symmetric(a: &DMatrix<f64>) -> bool {
    a.is_square() && (0..a.nrows()).all(|i| (0..i).all(|j| a[(i, j)] == a[(j, i)]))
}

pub(crate) fn is_psd(a: &DMatrix<f64>) -> bool {
    if a.iter().all(|v| *v == 0.0) {
        return true;
    }
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let scale = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    eig.iter().all(|v| *v >= -PSD_TOL * scale)
}

/// Lévy triplet of one driver, with truncation `h(x) = x 1{|x| <= 1}`.
///
/// `compensated[k]` selects the coordinates on which small jumps are
/// compensated inside the drift.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyTriplet {
    pub beta: Vec<f64>,
    pub alpha: DMatrix<f64>,
    pub jumps: JumpMeasureSpec,
    pub compensated: Vec<bool>,
}

impl LevyTriplet {
    /// Triplet with compensation on every coordinate.
    pub fn new(beta: Vec<f64>, alpha: DMatrix<f64>, jumps: JumpMeasureSpec) -> Self {
        let d = beta.len();
        Self { beta, alpha, jumps, compensated: vec![true; d] }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn check(&self) -> Result<(), ParamError> {
        let d = self.dim();
        if self.alpha.nrows() != d || self.alpha.ncols() != d {
            return Err(ParamError::DimensionMismatch {
                field: "triplet alpha".into(),
                expected: d,
                got: self.alpha.nrows(),
            });
        }
        if self.compensated.len() != d {
            return Err(ParamError::DimensionMismatch {
                field: "triplet compensation mask".into(),
                expected: d,
                got: self.compensated.len(),
            });
        }
        if self.beta.iter().chain(self.alpha.iter()).any(|v| !v.is_finite()) {
            return Err(ParamError::Structural("triplet entries must be finite".into()));
        }
        if !is_symmetric(&self.alpha) || !is_psd(&self.alpha) {
            return Err(ParamError::Structural(
                "triplet alpha must be symmetric positive semidefinite".into(),
            ));
        }
        self.jumps.check(d)
    }

    /// Drift of the path after folding the small-jump compensator in.
    pub fn adjusted_drift(&self) -> Vec<f64> {
        let comp = self.jumps.compensator(self.dim());
        self.beta
            .iter()
            .zip(&comp)
            .zip(&self.compensated)
            .map(|((b, c), on)| if *on { b - c } else { *b })
            .collect()
    }
}

/// The tuple `(b, beta, a, alpha, c, gamma, m, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleParamSet {
    pub dim: StateDim,
    pub b: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub a: DMatrix<f64>,
    pub alpha: Vec<DMatrix<f64>>,
    pub c: f64,
    pub gamma: Vec<f64>,
    pub m_measure: JumpMeasureSpec,
    pub big_m: Vec<JumpMeasureSpec>,
}

impl AdmissibleParamSet {
    /// All-zero parameter set of the given dimension.
    pub fn zero(dim: StateDim) -> Self {
        let d = dim.d();
        Self {
            dim,
            b: vec![0.0; d],
            beta: vec![vec![0.0; d]; d],
            a: DMatrix::zeros(d, d),
            alpha: vec![DMatrix::zeros(d, d); d],
            c: 0.0,
            gamma: vec![0.0; d],
            m_measure: JumpMeasureSpec::zero(),
            big_m: vec![JumpMeasureSpec::zero(); d],
        }
    }

    pub fn d(&self) -> usize {
        self.dim.d()
    }

    /// Structural checks: sizes and finiteness.
    pub fn check_structure(&self) -> Result<(), ParamError> {
        let d = self.d();
        let vec_len = |field: &str, got: usize| {
            if got == d {
                Ok(())
            } else {
                Err(ParamError::DimensionMismatch { field: field.into(), expected: d, got })
            }
        };
        vec_len("b", self.b.len())?;
        vec_len("beta", self.beta.len())?;
        for (k, bk) in self.beta.iter().enumerate() {
            vec_len(&format!("beta[{}]", k + 1), bk.len())?;
        }
        vec_len("a", self.a.nrows())?;
        vec_len("a", self.a.ncols())?;
        vec_len("alpha", self.alpha.len())?;
        for (k, ak) in self.alpha.iter().enumerate() {
            vec_len(&format!("alpha[{}]", k + 1), ak.nrows())?;
            vec_len(&format!("alpha[{}]", k + 1), ak.ncols())?;
        }
        vec_len("gamma", self.gamma.len())?;
        vec_len("M", self.big_m.len())?;
        let finite = self
            .b
            .iter()
            .chain(self.beta.iter().flatten())
            .chain(self.a.iter())
            .chain(self.alpha.iter().flat_map(|m| m.iter()))
            .chain(self.gamma.iter())
            .chain(std::iter::once(&self.c))
            .all(|v| v.is_finite());
        if !finite {
            return Err(ParamError::Structural("parameters must be finite".into()));
        }
        self.m_measure.check(d)?;
        self.big_m.iter().try_for_each(|mk| mk.check(d))
    }

    /// Driver triplet for index `k`, compensated on `J ∪ {k}`.
    pub fn driver_triplet(&self, k: usize) -> LevyTriplet {
        let d = self.d();
        let compensated = (0..d).map(|l| l == k || !self.dim.is_positive(l)).collect();
        LevyTriplet {
            beta: self.beta[k].clone(),
            alpha: self.alpha[k].clone(),
            jumps: self.big_m[k].clone(),
            compensated,
        }
    }

    pub fn heston_married(&self) -> bool {
        self.b.iter().all(|v| *v == 0.0)
            && self.a.iter().all(|v| *v == 0.0)
            && self.c == 0.0
            && self.m_measure.is_zero(self.d())
    }

    pub fn heston_h(&self) -> bool {
        let j = self.dim.real();
        j.clone().all(|i| j.clone().all(|l| self.beta[i][l] == 0.0))
    }

    pub fn heston_ring(&self) -> bool {
        self.c == 0.0
            && self.dim.positive().all(|i| self.gamma[i] == 0.0)
            && self.dim.positive().all(|i| self.big_m[i].has_finite_mean())
    }
}

/// One row of the admissibility table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    DiffusionConstantOnJ,
    DiffusionConstantSymmetricPsd,
    DiffusionLinearVanishesOnJ,
    DiffusionLinearPattern,
    DiffusionLinearSymmetricPsd,
    DriftConstantInDomain,
    DriftLinearOffDiagonalNonnegative,
    DriftLinearJDoesNotFeedI,
    KillingConstantNonnegative,
    KillingLinearNonnegative,
    KillingLinearVanishesOnJ,
    JumpConstantSupport,
    JumpLinearVanishesOnJ,
    JumpLinearSupport,
}

impl Condition {
    pub fn text(&self) -> &'static str {
        match self {
            Condition::DiffusionConstantOnJ => "a_kl=0 if k∈I or l∈I",
            Condition::DiffusionConstantSymmetricPsd => "a ∈ S^d_+",
            Condition::DiffusionLinearVanishesOnJ => "α_j=0 for all j∈J",
            Condition::DiffusionLinearPattern => "(α_i)_kl=0 if k∈I∖{i} or l∈I∖{i}",
            Condition::DiffusionLinearSymmetricPsd => "α_i ∈ S^d_+",
            Condition::DriftConstantInDomain => "b ∈ D",
            Condition::DriftLinearOffDiagonalNonnegative => "(β_i)_k≥0 for i∈I, k∈I∖{i}",
            Condition::DriftLinearJDoesNotFeedI => "(β_j)_k=0 for j∈J, k∈I",
            Condition::KillingConstantNonnegative => "c ≥ 0",
            Condition::KillingLinearNonnegative => "γ_i ≥ 0",
            Condition::KillingLinearVanishesOnJ => "γ_j=0 for j∈J",
            Condition::JumpConstantSupport => "supp m ⊆ D",
            Condition::JumpLinearVanishesOnJ => "M_j=0 for j∈J",
            Condition::JumpLinearSupport => "supp M_i ⊆ D",
        }
    }
}

/// A violated condition together with the offending (0-based) indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub condition: Condition,
    pub indices: Vec<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.condition.text())?;
        if !self.indices.is_empty() {
            let idx: Vec<String> = self.indices.iter().map(|i| (i + 1).to_string()).collect();
            write!(f, " at ({})", idx.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, condition: Condition) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return writeln!(f, "admissible: all conditions hold");
        }
        for v in &self.violations {
            writeln!(f, "violated: {v}")?;
        }
        Ok(())
    }
}

/// Check every admissibility condition and list the violations.
pub fn validate(params: &AdmissibleParamSet) -> Result<ValidationReport, ParamError> {
    params.check_structure()?;
    let dim = params.dim;
    let d = dim.d();
    let pos = |k: usize| dim.is_positive(k);
    let mut out = Vec::new();
    let mut push = |condition, indices: Vec<usize>| out.push(Violation { condition, indices });

    for k in 0..d {
        for l in 0..d {
            if (pos(k) || pos(l)) && params.a[(k, l)] != 0.0 {
                push(Condition::DiffusionConstantOnJ, vec![k, l]);
            }
        }
    }
    if !is_symmetric(&params.a) || !is_psd(&params.a) {
        push(Condition::DiffusionConstantSymmetricPsd, vec![]);
    }
    for (i, ai) in params.alpha.iter().enumerate() {
        if !pos(i) {
            if ai.iter().any(|v| *v != 0.0) {
                push(Condition::DiffusionLinearVanishesOnJ, vec![i]);
            }
            continue;
        }
        for k in 0..d {
            for l in 0..d {
                let off = |x: usize| pos(x) && x != i;
                if (off(k) || off(l)) && ai[(k, l)] != 0.0 {
                    push(Condition::DiffusionLinearPattern, vec![i, k, l]);
                }
            }
        }
        if !is_symmetric(ai) || !is_psd(ai) {
            push(Condition::DiffusionLinearSymmetricPsd, vec![i]);
        }
    }

    if !dim.contains(&params.b) {
        let bad = dim.positive().filter(|&k| params.b[k] < 0.0).collect();
        push(Condition::DriftConstantInDomain, bad);
    }
    for (i, bi) in params.beta.iter().enumerate() {
        for (k, v) in bi.iter().enumerate() {
            if pos(i) && pos(k) && k != i && *v < 0.0 {
                push(Condition::DriftLinearOffDiagonalNonnegative, vec![i, k]);
            }
            if !pos(i) && pos(k) && *v != 0.0 {
                push(Condition::DriftLinearJDoesNotFeedI, vec![i, k]);
            }
        }
    }

    if params.c < 0.0 {
        push(Condition::KillingConstantNonnegative, vec![]);
    }
    for (i, g) in params.gamma.iter().enumerate() {
        if pos(i) && *g < 0.0 {
            push(Condition::KillingLinearNonnegative, vec![i]);
        }
        if !pos(i) && *g != 0.0 {
            push(Condition::KillingLinearVanishesOnJ, vec![i]);
        }
    }

    if !params.m_measure.support_in_domain(dim.m(), d) {
        push(Condition::JumpConstantSupport, vec![]);
    }
    for (i, mi) in params.big_m.iter().enumerate() {
        if !pos(i) && !mi.is_zero(d) {
            push(Condition::JumpLinearVanishesOnJ, vec![i]);
        }
        if pos(i) && !mi.support_in_domain(dim.m(), d) {
            push(Condition::JumpLinearSupport, vec![i]);
        }
    }

    out.sort();
    Ok(ValidationReport { violations: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HestonClass {
    pub married: bool,
    pub h: bool,
    pub ring: bool,
}

impl HestonClass {
    pub fn is_heston(&self) -> bool {
        self.married && self.h && self.ring
    }
}

/// Heston-type flags of an admissible parameter set.
pub fn classify_heston(params: &AdmissibleParamSet) -> HestonClass {
    HestonClass {
        married: params.heston_married(),
        h: params.heston_h(),
        ring: params.heston_ring(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cir(b: f64) -> AdmissibleParamSet {
        let mut p = AdmissibleParamSet::zero(StateDim::new(1, 0).unwrap());
        p.beta[0][0] = 0.5;
        p.alpha[0][(0, 0)] = 0.04;
        p.b[0] = b;
        p
    }

    #[test]
    fn cir_is_admissible_and_heston() {
        let p = cir(0.0);
        assert!(validate(&p).unwrap().is_empty());
        assert_eq!(classify_heston(&p), HestonClass { married: true, h: true, ring: true });
    }

    #[test]
    fn zero_set_is_heston() {
        let p = AdmissibleParamSet::zero(StateDim::new(2, 1).unwrap());
        assert!(validate(&p).unwrap().is_empty());
        assert!(classify_heston(&p).is_heston());
    }

    #[test]
    fn constant_drift_breaks_married() {
        let mut p = AdmissibleParamSet::zero(StateDim::new(1, 1).unwrap());
        p.b = vec![0.1, 0.0];
        assert!(validate(&p).unwrap().is_empty());
        let c = classify_heston(&p);
        assert!(!c.married && c.h && c.ring);
    }

    #[test]
    fn j_drift_feeding_i_is_flagged() {
        let mut p = AdmissibleParamSet::zero(StateDim::new(1, 1).unwrap());
        p.beta[1][0] = 0.3;
        let r = validate(&p).unwrap();
        assert_eq!(
            r.violations,
            vec![Violation { condition: Condition::DriftLinearJDoesNotFeedI, indices: vec![1, 0] }]
        );
        assert_eq!(r.violations[0].condition.text(), "(β_j)_k=0 for j∈J, k∈I");
    }

    #[test]
    fn alpha_on_j_is_flagged() {
        let mut p = AdmissibleParamSet::zero(StateDim::new(1, 1).unwrap());
        p.alpha[1][(1, 1)] = 1.0;
        let r = validate(&p).unwrap();
        assert!(r.has(Condition::DiffusionLinearVanishesOnJ));
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn alpha_j_block_is_allowed_for_i() {
        let mut p = AdmissibleParamSet::zero(StateDim::new(1, 2).unwrap());
        p.alpha[0] = DMatrix::from_row_slice(3, 3, &[0.2, 0.1, 0.0, 0.1, 1.0, 0.3, 0.0, 0.3, 1.0]);
        assert!(validate(&p).unwrap().is_empty());
    }

    #[test]
    fn alpha_cross_positive_entry_is_flagged() {
        let mut p = AdmissibleParamSet::zero(StateDim::new(2, 0).unwrap());
        p.alpha[0][(1, 1)] = 0.5;
        let r = validate(&p).unwrap();
        assert!(r.has(Condition::DiffusionLinearPattern));
    }

    #[test]
    fn negative_jump_on_i_is_flagged() {
        let mut p = AdmissibleParamSet::zero(StateDim::new(1, 1).unwrap());
        p.big_m[0] = JumpMeasureSpec::new(1.0, JumpDistribution::DiracAt(vec![-0.1, 0.0]));
        assert!(validate(&p).unwrap().has(Condition::JumpLinearSupport));
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let mut p = cir(0.0);
        p.b = vec![0.0, 0.0];
        assert!(matches!(validate(&p), Err(ParamError::DimensionMismatch { .. })));
    }

    #[test]
    fn killing_breaks_ring() {
        let mut p = cir(0.0);
        p.c = 0.2;
        assert!(validate(&p).unwrap().is_empty());
        assert!(!classify_heston(&p).ring);
    }

    #[test]
    fn driver_mask_is_j_plus_own_index() {
        let p = AdmissibleParamSet::zero(StateDim::new(2, 1).unwrap());
        assert_eq!(p.driver_triplet(0).compensated, vec![true, false, true]);
        assert_eq!(p.driver_triplet(1).compensated, vec![false, true, true]);
    }

    proptest! {
        #[test]
        fn validate_is_deterministic_and_sorted(
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            off in proptest::collection::vec(-1.0f64..1.0, 9),
            g in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let mut p = AdmissibleParamSet::zero(StateDim::new(2, 1).unwrap());
            p.b = b;
            for i in 0..3 { for k in 0..3 { p.beta[i][k] = off[3 * i + k]; } }
            p.gamma = g;
            let r1 = validate(&p).unwrap();
            let r2 = validate(&p.clone()).unwrap();
            prop_assert_eq!(&r1, &r2);
            let mut sorted = r1.violations.clone();
            sorted.sort();
            prop_assert_eq!(sorted, r1.violations);
        }

        #[test]
        fn m_zero_valid_sets_are_deterministic(
            x in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let mut p = AdmissibleParamSet::zero(StateDim::new(0, 2).unwrap());
            p.beta = vec![vec![x[0], x[1]], vec![x[2], x[3]]];
            let r = validate(&p).unwrap();
            prop_assert!(r.is_empty());
            prop_assert!(p.alpha.iter().all(|a| a.iter().all(|v| *v == 0.0)));
            prop_assert!(p.big_m.iter().all(|mk| mk.is_zero(2)));
        }
    }
}
