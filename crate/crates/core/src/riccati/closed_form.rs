//! Closed forms for the one-dimensional CIR family
//! `dX = (b0 + b X) dt + σ sqrt(X) dW`, with `s2 = σ²`.

use num_complex::Complex64;

/// `ψ(t, u) = u e^{bt} / (1 - (s2 u / 2b)(e^{bt} - 1))`.
pub fn cir_psi(b: f64, s2: f64, u: Complex64, t: f64) -> Complex64 {
    u * (b * t).exp() / (1.0 - s2 * u * growth(b, t) / 2.0)
}

/// `φ(t, u) = -(2 b0 / s2) log(1 - (s2 u / 2b)(e^{bt} - 1))`.
pub fn cir_phi(b0: f64, b: f64, s2: f64, u: Complex64, t: f64) -> Complex64 {
    if b0 == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    if s2 == 0.0 {
        return b0 * u * growth(b, t);
    }
    -(2.0 * b0 / s2) * (1.0 - s2 * u * growth(b, t) / 2.0).ln()
}

/// `E^x[exp(u X_t)]`.
pub fn cir_laplace(b0: f64, b: f64, s2: f64, x: f64, u: Complex64, t: f64) -> Complex64 {
    (cir_phi(b0, b, s2, u, t) + x * cir_psi(b, s2, u, t)).exp()
}

/// `(e^{bt} - 1) / b`, equal to `t` at `b = 0`.
fn growth(b: f64, t: f64) -> f64 {
    if b == 0.0 {
        t
    } else {
        (b * t).exp_m1() / b
    }
}
