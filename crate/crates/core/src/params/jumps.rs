//! Finite-activity jump measures: a rate times a distribution from a small
//! catalog whose Fourier–Laplace transform and truncated moments are known.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use std::f64::consts::{FRAC_2_PI, SQRT_2};

use errorfunctions::{ComplexErrorFunctions, RealErrorFunctions};

use super::ParamError;

/// A one-dimensional law used as a factor of an [`JumpDistribution::IndependentProduct`].
#[derive(Debug, Clone, PartialEq)]
pub enum Law1d {
    Dirac(f64),
    Exponential { mean: f64 },
    /// Law of `scale * |N(0, 1)|`.
    HalfNormal { scale: f64 },
}

impl Law1d {
    fn check(&self) -> Result<(), ParamError> {
        match *self {
            Law1d::Dirac(v) if !v.is_finite() => Err(ParamError::Structural(
                "dirac value must be finite".into(),
            )),
            Law1d::Exponential { mean } if !(mean.is_finite() && mean > 0.0) => Err(
                ParamError::Structural(format!("exponential mean must be > 0, got {mean}")),
            ),
            Law1d::HalfNormal { scale } if !(scale.is_finite() && scale > 0.0) => Err(
                ParamError::Structural(format!("half-normal scale must be > 0, got {scale}")),
            ),
            _ => Ok(()),
        }
    }

    fn is_random(&self) -> bool {
        !matches!(self, Law1d::Dirac(_))
    }

    fn nonnegative(&self) -> bool {
        match *self {
            Law1d::Dirac(v) => v >= 0.0,
            _ => true,
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Law1d::Dirac(v) if *v == 0.0)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law1d::Dirac(v) => v,
            Law1d::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
            Law1d::HalfNormal { scale } => {
                let z: f64 = StandardNormal.sample(rng);
                scale * z.abs()
            }
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            Law1d::Dirac(v) => v,
            Law1d::Exponential { mean } => mean,
            Law1d::HalfNormal { scale } => scale * FRAC_2_PI.sqrt(),
        }
    }

    /// `E[exp(u X)]`.
    fn transform(&self, u: Complex64) -> Result<Complex64, ParamError> {
        match *self {
            Law1d::Dirac(v) => Ok((u * v).exp()),
            Law1d::Exponential { mean } => {
                if u.re * mean >= 1.0 {
                    return Err(ParamError::TransformDomain { re_u: u.re, scale: mean });
                }
                Ok(Complex64::new(1.0, 0.0) / (Complex64::new(1.0, 0.0) - u * mean))
            }
            Law1d::HalfNormal { scale } => {
                // E[e^{uX}] = e^{s^2 u^2 / 2} erfc(-s u / sqrt 2) = w(-i s u / sqrt 2)
                let z = Complex64::new(0.0, -1.0) * u * (scale / SQRT_2);
                Ok(z.w())
            }
        }
    }

    /// `P(X <= r)` for `r >= 0` (random laws only).
    fn cdf(&self, r: f64) -> f64 {
        match *self {
            Law1d::Dirac(v) => f64::from(u8::from(v <= r)),
            Law1d::Exponential { mean } => -(-r / mean).exp_m1(),
            Law1d::HalfNormal { scale } => RealErrorFunctions::erf(r / (scale * SQRT_2)),
        }
    }

    /// `E[X 1{X <= r}]` for `r >= 0`.
    fn partial_mean(&self, r: f64) -> f64 {
        match *self {
            Law1d::Dirac(v) => {
                if v <= r {
                    v
                } else {
                    0.0
                }
            }
            Law1d::Exponential { mean } => {
                let y = r / mean;
                mean * (-(-y).exp_m1() - y * (-y).exp())
            }
            Law1d::HalfNormal { scale } => {
                -scale * FRAC_2_PI.sqrt() * (-(r * r) / (2.0 * scale * scale)).exp_m1()
            }
        }
    }

    fn density(&self, x: f64) -> f64 {
        match *self {
            Law1d::Dirac(_) => 0.0,
            Law1d::Exponential { mean } => (-x / mean).exp() / mean,
            Law1d::HalfNormal { scale } => {
                FRAC_2_PI.sqrt() / scale * (-(x * x) / (2.0 * scale * scale)).exp()
            }
        }
    }
}

/// Jump-size distribution catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpDistribution {
    DiracAt(Vec<f64>),
    /// Exponential law with the given mean on one coordinate (0-based), zero elsewhere.
    ExponentialOnCoordinate { coord: usize, mean: f64 },
    IndependentProduct(Vec<Law1d>),
    FiniteMixture { weights: Vec<f64>, components: Vec<JumpDistribution> },
}

impl JumpDistribution {
    /// Structural checks against the state dimension `d`.
    pub fn check(&self, d: usize) -> Result<(), ParamError> {
        match self {
            JumpDistribution::DiracAt(v) => {
                if v.len() != d {
                    return Err(ParamError::DimensionMismatch {
                        field: "jump dirac point".into(),
                        expected: d,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(ParamError::Structural("dirac point must be finite".into()));
                }
                Ok(())
            }
            JumpDistribution::ExponentialOnCoordinate { coord, mean } => {
                if *coord >= d {
                    return Err(ParamError::Structural(format!(
                        "exponential coordinate {} out of range 1..={d}",
                        coord + 1
                    )));
                }
                Law1d::Exponential { mean: *mean }.check()
            }
            JumpDistribution::IndependentProduct(laws) => {
                if laws.len() != d {
                    return Err(ParamError::DimensionMismatch {
                        field: "jump product laws".into(),
                        expected: d,
                        got: laws.len(),
                    });
                }
                laws.iter().try_for_each(Law1d::check)
            }
            JumpDistribution::FiniteMixture { weights, components } => {
                if weights.len() != components.len() || weights.is_empty() {
                    return Err(ParamError::Structural(
                        "mixture needs one weight per component and at least one component"
                            .into(),
                    ));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(ParamError::Structural("mixture weights must be >= 0".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(ParamError::Structural(format!(
                        "mixture weights must sum to 1, got {total}"
                    )));
                }
                components.iter().try_for_each(|c| c.check(d))
            }
        }
    }

    /// The product-form representation, `None` for mixtures.
    fn as_product(&self, d: usize) -> Option<Vec<Law1d>> {
        match self {
            JumpDistribution::DiracAt(v) => Some(v.iter().map(|&x| Law1d::Dirac(x)).collect()),
            JumpDistribution::ExponentialOnCoordinate { coord, mean } => Some(
                (0..d)
                    .map(|k| {
                        if k == *coord {
                            Law1d::Exponential { mean: *mean }
                        } else {
                            Law1d::Dirac(0.0)
                        }
                    })
                    .collect(),
            ),
            JumpDistribution::IndependentProduct(laws) => Some(laws.clone()),
            JumpDistribution::FiniteMixture { .. } => None,
        }
    }

    /// Whether every coordinate `k < m` is almost surely nonnegative.
    pub fn support_in_domain(&self, m: usize, d: usize) -> bool {
        match self.as_product(d) {
            Some(laws) => laws.iter().take(m).all(Law1d::nonnegative),
            None => match self {
                JumpDistribution::FiniteMixture { weights, components } => weights
                    .iter()
                    .zip(components)
                    .all(|(w, c)| *w == 0.0 || c.support_in_domain(m, d)),
                _ => unreachable!(),
            },
        }
    }

    /// Whether the law is the point mass at the origin.
    pub fn is_zero(&self, d: usize) -> bool {
        match self.as_product(d) {
            Some(laws) => laws.iter().all(Law1d::is_zero),
            None => match self {
                JumpDistribution::FiniteMixture { weights, components } => weights
                    .iter()
                    .zip(components)
                    .all(|(w, c)| *w == 0.0 || c.is_zero(d)),
                _ => unreachable!(),
            },
        }
    }

    /// Draw one jump size into `out` (length `d`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            JumpDistribution::DiracAt(v) => out.copy_from_slice(v),
            JumpDistribution::ExponentialOnCoordinate { coord, mean } => {
                out.iter_mut().for_each(|x| *x = 0.0);
                out[*coord] = Law1d::Exponential { mean: *mean }.sample(rng);
            }
            JumpDistribution::IndependentProduct(laws) => {
                for (x, law) in out.iter_mut().zip(laws) {
                    *x = law.sample(rng);
                }
            }
            JumpDistribution::FiniteMixture { weights, components } => {
                let v: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if v < acc {
                        pick = i;
                        break;
                    }
                }
                components[pick].sample_into(rng, out);
            }
        }
    }

    /// `E[exp(<u, xi>)]` with the non-conjugating pairing.
    pub fn transform(&self, u: &[Complex64]) -> Result<Complex64, ParamError> {
        match self.as_product(u.len()) {
            Some(laws) => {
                let mut acc = Complex64::new(1.0, 0.0);
                for (law, &uk) in laws.iter().zip(u) {
                    if uk != Complex64::new(0.0, 0.0) {
                        acc *= law.transform(uk)?;
                    }
                }
                Ok(acc)
            }
            None => match self {
                JumpDistribution::FiniteMixture { weights, components } => {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (w, c) in weights.iter().zip(components) {
                        acc += *w * c.transform(u)?;
                    }
                    Ok(acc)
                }
                _ => unreachable!(),
            },
        }
    }

    /// `E[xi]`.
    pub fn mean(&self, d: usize) -> Vec<f64> {
        match self.as_product(d) {
            Some(laws) => laws.iter().map(Law1d::mean).collect(),
            None => self.mix(d, |c| c.mean(d)),
        }
    }

    /// `E[xi 1{|xi| <= 1}]` with the Euclidean norm.
    pub fn truncated_mean(&self, d: usize) -> Vec<f64> {
        match self.as_product(d) {
            Some(laws) => product_truncated_mean(&laws),
            None => self.mix(d, |c| c.truncated_mean(d)),
        }
    }

    fn mix(&self, d: usize, f: impl Fn(&JumpDistribution) -> Vec<f64>) -> Vec<f64> {
        let JumpDistribution::FiniteMixture { weights, components } = self else {
            unreachable!()
        };
        let mut acc = vec![0.0; d];
        for (w, c) in weights.iter().zip(components) {
            for (a, v) in acc.iter_mut().zip(f(c)) {
                *a += w * v;
            }
        }
        acc
    }

    /// Prepend `extra` zero coordinates.
    pub fn embed(&self, extra: usize) -> JumpDistribution {
        match self {
            JumpDistribution::DiracAt(v) => {
                let mut w = vec![0.0; extra];
                w.extend_from_slice(v);
                JumpDistribution::DiracAt(w)
            }
            JumpDistribution::ExponentialOnCoordinate { coord, mean } => {
                JumpDistribution::ExponentialOnCoordinate { coord: coord + extra, mean: *mean }
            }
            JumpDistribution::IndependentProduct(laws) => {
                let mut w = vec![Law1d::Dirac(0.0); extra];
                w.extend(laws.iter().cloned());
                JumpDistribution::IndependentProduct(w)
            }
            JumpDistribution::FiniteMixture { weights, components } => {
                JumpDistribution::FiniteMixture {
                    weights: weights.clone(),
                    components: components.iter().map(|c| c.embed(extra)).collect(),
                }
            }
        }
    }
}

const QUAD_TOL: f64 = 1e-14;

/// Truncated moments of a vector of independent random laws over the ball of
/// squared radius `r2`: returns `(P, [E[X_c 1{.}]])`.
fn ball_moments(laws: &[Law1d], r2: f64) -> (f64, Vec<f64>) {
    if r2 < 0.0 {
        return (0.0, vec![0.0; laws.len()]);
    }
    let r = r2.sqrt();
    if laws.len() == 1 {
        return (laws[0].cdf(r), vec![laws[0].partial_mean(r)]);
    }
    let (head, tail) = (&laws[0], &laws[1..]);
    let k = laws.len();
    let mut out = vec![0.0; k];
    let p = quadrature::double_exponential::integrate(
        |x| head.density(x) * ball_moments(tail, r2 - x * x).0,
        0.0,
        r,
        QUAD_TOL,
    )
    .integral;
    out[0] = quadrature::double_exponential::integrate(
        |x| x * head.density(x) * ball_moments(tail, r2 - x * x).0,
        0.0,
        r,
        QUAD_TOL,
    )
    .integral;
    for c in 1..k {
        out[c] = quadrature::double_exponential::integrate(
            |x| head.density(x) * ball_moments(tail, r2 - x * x).1[c - 1],
            0.0,
            r,
            QUAD_TOL,
        )
        .integral;
    }
    (p, out)
}

fn product_truncated_mean(laws: &[Law1d]) -> Vec<f64> {
    let fixed: f64 = laws
        .iter()
        .map(|l| match l {
            Law1d::Dirac(v) => v * v,
            _ => 0.0,
        })
        .sum();
    let r2 = 1.0 - fixed;
    let random: Vec<usize> = (0..laws.len()).filter(|&k| laws[k].is_random()).collect();
    let mut out = vec![0.0; laws.len()];
    if r2 < 0.0 {
        return out;
    }
    let (p, partial) = if random.is_empty() {
        (1.0, Vec::new())
    } else {
        let rl: Vec<Law1d> = random.iter().map(|&k| laws[k].clone()).collect();
        ball_moments(&rl, r2)
    };
    for (k, law) in laws.iter().enumerate() {
        if let Law1d::Dirac(v) = law {
            out[k] = v * p;
        }
    }
    for (slot, &k) in random.iter().enumerate() {
        out[k] = partial[slot];
    }
    out
}

/// A finite-activity Lévy measure `rate * distribution`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpMeasureSpec {
    pub rate: f64,
    pub distribution: Option<JumpDistribution>,
}

impl JumpMeasureSpec {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(rate: f64, distribution: JumpDistribution) -> Self {
        Self { rate, distribution: Some(distribution) }
    }

    pub fn check(&self, d: usize) -> Result<(), ParamError> {
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(ParamError::Structural(format!(
                "jump rate must be finite and >= 0, got {}",
                self.rate
            )));
        }
        match &self.distribution {
            Some(dist) => dist.check(d),
            None if self.rate > 0.0 => Err(ParamError::Structural(
                "positive jump rate needs a distribution".into(),
            )),
            None => Ok(()),
        }
    }

    /// Whether the measure is the zero measure.
    pub fn is_zero(&self, d: usize) -> bool {
        match &self.distribution {
            None => true,
            Some(dist) => self.rate == 0.0 || dist.is_zero(d),
        }
    }

    pub fn support_in_domain(&self, m: usize, d: usize) -> bool {
        match &self.distribution {
            Some(dist) if self.rate > 0.0 => dist.support_in_domain(m, d),
            _ => true,
        }
    }

    /// Every catalog law has a finite first moment.
    pub fn has_finite_mean(&self) -> bool {
        true
    }

    /// `rate * E[xi 1{|xi| <= 1}]`.
    pub fn compensator(&self, d: usize) -> Vec<f64> {
        match &self.distribution {
            Some(dist) if self.rate > 0.0 => {
                dist.truncated_mean(d).into_iter().map(|v| self.rate * v).collect()
            }
            _ => vec![0.0; d],
        }
    }

    /// `rate * E[xi]`.
    pub fn mean_rate(&self, d: usize) -> Vec<f64> {
        match &self.distribution {
            Some(dist) if self.rate > 0.0 => {
                dist.mean(d).into_iter().map(|v| self.rate * v).collect()
            }
            _ => vec![0.0; d],
        }
    }

    /// `rate * (E[exp(<u, xi>)] - 1)`.
    pub fn transform_minus_one(&self, u: &[Complex64]) -> Result<Complex64, ParamError> {
        match &self.distribution {
            Some(dist) if self.rate > 0.0 => {
                Ok(self.rate * (dist.transform(u)? - Complex64::new(1.0, 0.0)))
            }
            _ => Ok(Complex64::new(0.0, 0.0)),
        }
    }

    /// Prepend `extra` zero coordinates.
    pub fn embed(&self, extra: usize) -> JumpMeasureSpec {
        JumpMeasureSpec {
            rate: self.rate,
            distribution: self.distribution.as_ref().map(|d| d.embed(extra)),
        }
    }
}
