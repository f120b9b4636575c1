//! Dormand–Prince 5(4) for complex vector fields, with the standard
//! fourth-order dense output.

use num_complex::Complex64;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub max_error_estimate: f64,
}

#[derive(Debug)]
pub enum IntegrationError<E> {
    Field(E),
    TooManySteps { time: f64 },
    StepUnderflow { time: f64 },
    /// Rejected by the step callback.
    Stopped { time: f64, reason: E },
}

type C = Complex64;

fn axpy(out: &mut [C], y: &[C], h: f64, terms: &[(f64, &[C])]) {
    for i in 0..y.len() {
        let mut acc = C::new(0.0, 0.0);
        for (w, k) in terms {
            acc += *w * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

fn err_norm(err: &[C], y0: &[C], y1: &[C], tol: &Tolerances) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = tol.atol + tol.rtol * a.norm().max(b.norm());
            (e.norm() / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrate `y' = f(y)` from `y0` at time 0 and report `y` at every time in
/// `times` (sorted, nonnegative). `check` is called with each accepted state.
pub fn integrate<E, F, K>(
    f: F,
    y0: &[C],
    times: &[f64],
    tol: &Tolerances,
    mut check: K,
) -> Result<(Vec<Vec<C>>, StepStats), IntegrationError<E>>
where
    F: Fn(&[C], &mut [C]) -> Result<(), E>,
    K: FnMut(f64, &[C]) -> Result<(), E>,
{
    let n = y0.len();
    let t_end = times.last().copied().unwrap_or(0.0);
    let mut stats = StepStats::default();
    let mut out = Vec::with_capacity(times.len());
    let mut next_out = 0;
    let mut y = y0.to_vec();
    while next_out < times.len() && times[next_out] <= 0.0 {
        out.push(y.clone());
        next_out += 1;
    }
    if next_out == times.len() {
        return Ok((out, stats));
    }

    let eval = |y: &[C], k: &mut [C], stats: &mut StepStats| {
        stats.evaluations += 1;
        f(y, k).map_err(IntegrationError::Field)
    };
    let mut k1 = vec![C::new(0.0, 0.0); n];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (k1.clone(), k1.clone(), k1.clone(), k1.clone(), k1.clone(), k1.clone());
    let mut ytmp = k1.clone();
    let mut ynew = k1.clone();
    let mut errv = k1.clone();
    eval(&y, &mut k1, &mut stats)?;

    // initial step size
    let scale: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.norm()).collect();
    let nrm = |v: &[C]| {
        (v.iter().zip(&scale).map(|(a, s)| (a.norm() / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = nrm(&y);
    let d1 = nrm(&k1);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(t_end);
    axpy(&mut ytmp, &y, h0, &[(1.0, &k1)]);
    eval(&ytmp, &mut k2, &mut stats)?;
    let diff: Vec<C> = k2.iter().zip(&k1).map(|(a, b)| a - b).collect();
    let d2 = nrm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let mut h = (100.0 * h0).min(h1).min(t_end);

    let mut t = 0.0;
    let mut last_rejected = false;
    while next_out < times.len() {
        if stats.accepted + stats.rejected >= tol.max_steps {
            return Err(IntegrationError::TooManySteps { time: t });
        }
        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(IntegrationError::StepUnderflow { time: t });
        }
        axpy(&mut ytmp, &y, h, &[(A21, &k1)]);
        eval(&ytmp, &mut k2, &mut stats)?;
        axpy(&mut ytmp, &y, h, &[(A31, &k1), (A32, &k2)]);
        eval(&ytmp, &mut k3, &mut stats)?;
        axpy(&mut ytmp, &y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        eval(&ytmp, &mut k4, &mut stats)?;
        axpy(&mut ytmp, &y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        eval(&ytmp, &mut k5, &mut stats)?;
        axpy(&mut ytmp, &y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        eval(&ytmp, &mut k6, &mut stats)?;
        axpy(&mut ynew, &y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        eval(&ynew, &mut k7, &mut stats)?;
        for i in 0..n {
            errv[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = err_norm(&errv, &y, &ynew, tol);
        if err <= 1.0 {
            stats.accepted += 1;
            stats.max_error_estimate = stats.max_error_estimate.max(err);
            let t_new = if last { t_end } else { t + h };
            while next_out < times.len() && times[next_out] <= t_new {
                let theta = (times[next_out] - t) / h;
                let theta1 = 1.0 - theta;
                let mut v = vec![C::new(0.0, 0.0); n];
                for i in 0..n {
                    let ydiff = ynew[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    let r4 = ydiff - h * k7[i] - bspl;
                    let r5 = h
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                    v[i] = y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
                }
                if times[next_out] == t_new {
                    v.copy_from_slice(&ynew);
                }
                check(times[next_out], &v)
                    .map_err(|reason| IntegrationError::Stopped { time: times[next_out], reason })?;
                out.push(v);
                next_out += 1;
            }
            check(t_new, &ynew).map_err(|reason| IntegrationError::Stopped { time: t_new, reason })?;
            y.copy_from_slice(&ynew);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            let mut fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h *= fac;
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            last_rejected = true;
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances { rtol: 1e-10, atol: 1e-12, max_steps: 100_000 }
    }

    #[test]
    fn complex_exponential() {
        let lam = C::new(-0.3, 2.0);
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.17).collect();
        let (ys, stats) = integrate::<(), _, _>(
            |y, k| {
                k[0] = lam * y[0];
                Ok(())
            },
            &[C::new(1.0, 0.5)],
            &times,
            &tol(),
            |_, _| Ok(()),
        )
        .unwrap();
        for (t, y) in times.iter().zip(&ys) {
            let want = C::new(1.0, 0.5) * (lam * t).exp();
            assert!((y[0] - want).norm() < 1e-8, "{t}: {} vs {want}", y[0]);
        }
        assert!(stats.accepted > 0);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        // few large steps with many output points
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.01).collect();
        let loose = Tolerances { rtol: 1e-6, atol: 1e-9, max_steps: 10_000 };
        let (ys, stats) = integrate::<(), _, _>(
            |y, k| {
                k[0] = y[0] * y[0];
                Ok(())
            },
            &[C::new(-1.0, 0.0)],
            &times,
            &loose,
            |_, _| Ok(()),
        )
        .unwrap();
        assert!(stats.accepted < 100);
        for (t, y) in times.iter().zip(&ys) {
            let want = -1.0 / (1.0 + t);
            assert!((y[0].re - want).abs() < 1e-5);
        }
    }

    #[test]
    fn step_limit_is_enforced() {
        let t = Tolerances { rtol: 1e-12, atol: 1e-14, max_steps: 5 };
        let r = integrate::<(), _, _>(
            |y, k| {
                k[0] = C::new(0.0, 50.0) * y[0];
                Ok(())
            },
            &[C::new(1.0, 0.0)],
            &[10.0],
            &t,
            |_, _| Ok(()),
        );
        assert!(matches!(r, Err(IntegrationError::TooManySteps { .. })));
    }
}
