//! Adaptive Dormand–Prince 5(4) integrator for `y' = f(t, y)`.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Tolerance {
    pub fn relative(rtol: f64) -> Self {
        Self {
            rtol,
            atol: rtol * 1e-2,
            max_steps: 1_000_000,
        }
    }
}

/// Integrates from `t0` to `t1`, overwriting `y`. Returns the number of
/// accepted steps.
pub fn integrate(
    f: &mut dyn FnMut(f64, &[f64], &mut [f64]),
    t0: f64,
    t1: f64,
    y: &mut [f64],
    tol: Tolerance,
) -> Result<usize> {
    let n = y.len();
    if t1 == t0 {
        return Ok(0);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut t = t0;
    let mut h = span * 1e-3;
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    f(t, y, &mut k[0]);
    let mut accepted = 0;
    let mut total = 0;
    while dir * (t1 - t) > 0.0 {
        total += 1;
        if total > tol.max_steps {
            return Err(Error::Oracle(format!("integrator exceeded {} steps", tol.max_steps)));
        }
        let last = h >= (t1 - t).abs();
        if last {
            h = (t1 - t).abs();
        }
        if h < 1e-14 * span {
            return Err(Error::Oracle(format!("integrator step size underflow at t = {t}")));
        }
        let hs = dir * h;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += hs * A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            let (_, tail) = k.split_at_mut(s);
            f(t + C[s] * hs, &stage, &mut tail[0]);
        }
        let mut err = 0.0f64;
        for i in 0..n {
            let mut s5 = y[i];
            let mut e = 0.0;
            for s in 0..7 {
                s5 += hs * B5[s] * k[s][i];
                e += hs * (B5[s] - B4[s]) * k[s][i];
            }
            y5[i] = s5;
            let sc = tol.atol + tol.rtol * y[i].abs().max(s5.abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            return Err(Error::Oracle(format!("integrator produced non-finite values at t = {t}")));
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&y5);
            // First same as last: stage 7 is the derivative at the new point.
            let k7 = k[6].clone();
            k[0].copy_from_slice(&k7);
            accepted += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn harmonic_oscillator_over_one_period() {
        let mut y = [1.0, 0.0];
        let mut f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[1];
            d[1] = -y[0];
        };
        integrate(&mut f, 0.0, 2.0 * PI, &mut y, Tolerance::relative(1e-10)).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn exponential_growth_backwards() {
        let mut y = [1.0];
        let mut f = |_t: f64, y: &[f64], d: &mut [f64]| d[0] = y[0];
        integrate(&mut f, 1.0, 0.0, &mut y, Tolerance::relative(1e-11)).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn blow_up_is_reported() {
        let mut y = [1.0];
        let mut f = |_t: f64, y: &[f64], d: &mut [f64]| d[0] = y[0] * y[0];
        assert!(matches!(
            integrate(&mut f, 0.0, 2.0, &mut y, Tolerance::relative(1e-8)),
            Err(Error::Oracle(_))
        ));
    }
}
