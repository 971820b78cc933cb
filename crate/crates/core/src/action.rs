//! The penalized free-period action
//! `L_ε(x, τ) = e^{-τ} ℰ(x) + e^{τ} 𝒰(x) + ε P(τ)` with `P(τ) = e^{-τ} + e^{τ/2}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::MetricChart;
use crate::loops::{energy, potential_integral, Basis, FourierLoop};
use crate::potential::PotentialSpec;

const TAU_LIMIT: f64 = 700.0;

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau.abs() <= TAU_LIMIT {
        Ok(())
    } else {
        Err(Error::Range(tau))
    }
}

pub fn penalty(tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok((-tau).exp() + (0.5 * tau).exp())
}

pub fn penalty_prime(tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(-(-tau).exp() + 0.5 * (0.5 * tau).exp())
}

#[derive(Debug, Clone)]
pub struct ActionGradient {
    /// H¹ gradient in the loop directions.
    pub xi: FourierLoop,
    pub dtau: f64,
    /// `sqrt(‖ξ‖₁² + dτ²)`.
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct ActionCache {
    pub eps: f64,
    pub value: f64,
    pub gradient: ActionGradient,
}

/// A point `(x, τ)` of the discretized free loop space.
#[derive(Debug, Clone)]
pub struct ActionPoint {
    pub x: FourierLoop,
    pub tau: f64,
    cache: Option<ActionCache>,
}

impl ActionPoint {
    pub fn new(x: FourierLoop, tau: f64) -> Self {
        Self { x, tau, cache: None }
    }

    /// Cached value and gradient at `ε`, recomputed when stale.
    pub fn evaluate(&mut self, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<&ActionCache> {
        if self.cache.as_ref().map_or(true, |c| c.eps != eps) {
            let value = action_value(self, spec, chart, eps)?;
            let gradient = action_gradient(self, spec, chart, eps)?;
            self.cache = Some(ActionCache { eps, value, gradient });
        }
        Ok(self.cache.as_ref().unwrap())
    }

    pub fn cached(&self) -> Option<&ActionCache> {
        self.cache.as_ref()
    }

    /// Moves the point, dropping the cache.
    pub fn set(&mut self, x: FourierLoop, tau: f64) {
        self.x = x;
        self.tau = tau;
        self.cache = None;
    }

    pub fn period(&self) -> f64 {
        self.tau.exp()
    }
}

/// `(ℰ(x), 𝒰(x))`.
pub fn action_parts(x: &FourierLoop, spec: &PotentialSpec, chart: &MetricChart) -> (f64, f64) {
    (energy(x, chart), potential_integral(x, spec))
}

pub fn action_value(p: &ActionPoint, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<f64> {
    let pen = penalty(p.tau)?;
    let (e, u) = action_parts(&p.x, spec, chart);
    Ok((-p.tau).exp() * e + p.tau.exp() * u + eps * pen)
}

/// Coefficient differential `∂L/∂c_{m,i}` of the ε-free part.
pub(crate) fn coefficient_differential(x: &FourierLoop, tau: f64, spec: &PotentialSpec, chart: &MetricChart) -> Vec<f64> {
    let n = x.dim();
    let basis = x.basis().clone();
    let big_m = basis.samples();
    let len = basis.len();
    let (ek, eu) = ((-tau).exp(), tau.exp());
    let s = x.samples();
    let mut d = vec![0.0; len * n];

    // Per-node weights for φ_m (f) and φ'_m (h).
    let mut f = vec![0.0; big_m * n];
    let mut h = vec![0.0; big_m * n];
    let mut du = vec![0.0; n];
    let flat = chart.is_flat();
    for j in 0..big_m {
        let q = &s.x[j * n..(j + 1) * n];
        spec.covector(q, &mut du);
        for i in 0..n {
            f[j * n + i] = eu * du[i];
        }
        if !flat {
            let v = &s.v[j * n..(j + 1) * n];
            let (lambda, dphi) = chart.factor(q);
            let v2: f64 = v.iter().map(|z| z * z).sum();
            for i in 0..n {
                f[j * n + i] += ek * lambda * dphi[i] * v2;
                h[j * n + i] = ek * lambda * v[i];
            }
        }
    }
    for m in 0..len {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..big_m {
                acc += f[j * n + i] * basis.phi(m, j);
                if !flat {
                    acc += h[j * n + i] * basis.dphi(m, j);
                }
            }
            d[m * n + i] = acc / big_m as f64;
        }
    }
    if flat {
        for m in 1..len {
            let w = 2.0 * std::f64::consts::PI * Basis::frequency(m) as f64;
            for i in 0..n {
                d[m * n + i] += ek * 0.5 * w * w * x.coeff(m, i);
            }
        }
    }
    d
}

pub fn action_gradient(p: &ActionPoint, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<ActionGradient> {
    let pp = penalty_prime(p.tau)?;
    let n = p.x.dim();
    let d = coefficient_differential(&p.x, p.tau, spec, chart);
    let mut xi = FourierLoop::zeros(n, p.x.basis().clone());
    let mut h1 = 0.0;
    for (idx, (o, dm)) in xi.coeffs.iter_mut().zip(&d).enumerate() {
        let w = Basis::h1_weight(idx / n);
        *o = dm / w;
        h1 += dm * dm / w;
    }
    let (e, u) = action_parts(&p.x, spec, chart);
    let dtau = -(-p.tau).exp() * e + p.tau.exp() * u + eps * pp;
    if !(h1.is_finite() && dtau.is_finite()) {
        return Err(Error::Domain("action gradient is not finite".into()));
    }
    Ok(ActionGradient {
        xi,
        dtau,
        norm: (h1 + dtau * dtau).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ResidualReport {
    pub el_resid_sup: f64,
    pub energy_ident_sup: f64,
    #[serde(rename = "crit_value_gap_U")]
    pub crit_value_gap_u: f64,
    #[serde(rename = "crit_value_gap_E")]
    pub crit_value_gap_e: f64,
}

/// `max_t |∇_t ẋ - e^{2τ} grad U(x)|` over the quadrature nodes.
pub fn el_residual(p: &ActionPoint, spec: &PotentialSpec, chart: &MetricChart) -> f64 {
    let n = p.x.dim();
    let s = p.x.samples();
    let e2 = (2.0 * p.tau).exp();
    let mut du = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut worst = 0.0f64;
    for j in 0..p.x.basis().samples() {
        let q = &s.x[j * n..(j + 1) * n];
        let v = &s.v[j * n..(j + 1) * n];
        let a = &s.a[j * n..(j + 1) * n];
        spec.covector(q, &mut du);
        chart.christoffel_contract(q, v, &mut gamma);
        let lambda = chart.factor(q).0;
        let r2: f64 = (0..n)
            .map(|i| {
                let r = a[i] + gamma[i] - e2 * du[i] / lambda;
                r * r
            })
            .sum();
        worst = worst.max((lambda * r2).sqrt());
    }
    worst
}

/// `max_t |½e^{-τ}|ẋ|² - e^{τ}U(x) - εP'(τ)|`.
pub fn energy_identity_residual(p: &ActionPoint, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<f64> {
    let pp = penalty_prime(p.tau)?;
    let n = p.x.dim();
    let s = p.x.samples();
    let (ek, eu) = ((-p.tau).exp(), p.tau.exp());
    let mut worst = 0.0f64;
    for j in 0..p.x.basis().samples() {
        let q = &s.x[j * n..(j + 1) * n];
        let v = &s.v[j * n..(j + 1) * n];
        let v2 = chart.factor(q).0 * v.iter().map(|z| z * z).sum::<f64>();
        worst = worst.max((0.5 * ek * v2 - eu * spec.value(q) - eps * pp).abs());
    }
    Ok(worst)
}

/// Gaps in the two expressions of the critical value obtained from
/// `∂_τ L_ε = 0`: `(|L - 2e^τ𝒰 - (3/2)εe^{τ/2}|, |L - 2e^{-τ}ℰ - ε(2e^{-τ} + ½e^{τ/2})|)`.
pub fn critical_value_identities(p: &ActionPoint, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<(f64, f64)> {
    let l = action_value(p, spec, chart, eps)?;
    let (e, u) = action_parts(&p.x, spec, chart);
    let (ek, eu, eh) = ((-p.tau).exp(), p.tau.exp(), (0.5 * p.tau).exp());
    let gap_u = (l - 2.0 * eu * u - 1.5 * eps * eh).abs();
    let gap_e = (l - 2.0 * ek * e - eps * (2.0 * ek + 0.5 * eh)).abs();
    Ok((gap_u, gap_e))
}

pub fn residual_report(p: &ActionPoint, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<ResidualReport> {
    let (gu, ge) = critical_value_identities(p, spec, chart, eps)?;
    Ok(ResidualReport {
        el_resid_sup: el_residual(p, spec, chart),
        energy_ident_sup: energy_identity_residual(p, spec, chart, eps)?,
        crit_value_gap_u: gu,
        crit_value_gap_e: ge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ClosureField;
    use crate::loops::h1_inner;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn circle_point(k: usize) -> ActionPoint {
        let b = Basis::new(k, 4 * k + 4).unwrap();
        ActionPoint::new(FourierLoop::circle(b, &[0.0, 0.0], 1.0), (2.0 * PI).ln())
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty(0.0).unwrap(), 2.0);
        assert_eq!(penalty_prime(0.0).unwrap(), -0.5);
        assert!(matches!(penalty(701.0), Err(Error::Range(_))));
        assert!(matches!(penalty_prime(f64::NAN), Err(Error::Range(_))));
    }

    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) {
                b = d
            } else {
                a = c
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn penalty_minimizers() {
        let t = golden_min(|t| penalty(t).unwrap(), -3.0, 3.0);
        assert!((t - 2.0 / 3.0 * 2f64.ln()).abs() < 1e-8);
        let f = |t: f64| 2.0 * (-t).exp() + 0.5 * (0.5 * t).exp();
        let t = golden_min(f, -3.0, 5.0);
        assert!((t - 2.0 * 2f64.ln()).abs() < 1e-6);
        assert!((f(t) - 1.5).abs() < 1e-8);
    }

    #[test]
    fn action_examples() {
        let h = PotentialSpec::harmonic2d(1.0);
        let e = MetricChart::euclidean(2);
        let p = circle_point(2);
        assert!((action_value(&p, &h, &e, 0.0).unwrap() - 2.0 * PI).abs() < 1e-12);
        let b = Basis::new(2, 16).unwrap();
        let c = ActionPoint::new(FourierLoop::constant(b, &[0.0, 0.0]), 0.0);
        assert_eq!(action_value(&c, &h, &e, 0.0).unwrap(), 1.0);
        assert!((action_value(&c, &h, &e, 0.1).unwrap() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let h = PotentialSpec::harmonic2d(1.0);
        let e = MetricChart::euclidean(2);
        let g = action_gradient(&circle_point(3), &h, &e, 0.0).unwrap();
        assert!(g.norm < 1e-12, "{}", g.norm);
        let b = Basis::new(2, 16).unwrap();
        let c = ActionPoint::new(FourierLoop::constant(b, &[0.0, 0.0]), 0.0);
        let g = action_gradient(&c, &h, &e, 0.0).unwrap();
        assert!(g.xi.coeffs.iter().all(|&z| z == 0.0));
        assert_eq!(g.dtau, 1.0);
    }

    #[test]
    fn residual_examples() {
        let h = PotentialSpec::harmonic2d(1.0);
        let e = MetricChart::euclidean(2);
        let p = circle_point(1);
        assert!(el_residual(&p, &h, &e) < 1e-10);
        assert!(energy_identity_residual(&p, &h, &e, 0.0).unwrap() < 1e-10);
        let (gu, ge) = critical_value_identities(&p, &h, &e, 0.0).unwrap();
        assert!(gu < 1e-10 && ge < 1e-10);

        let b = Basis::new(2, 16).unwrap();
        let origin = ActionPoint::new(FourierLoop::constant(b.clone(), &[0.0, 0.0]), 0.7);
        assert_eq!(el_residual(&origin, &h, &e), 0.0);
        let origin = ActionPoint::new(FourierLoop::constant(b.clone(), &[0.0, 0.0]), 0.0);
        assert_eq!(energy_identity_residual(&origin, &h, &e, 0.0).unwrap(), 1.0);
        assert!(energy_identity_residual(&origin, &h, &e, 2.0).unwrap() < 1e-15);
        let q0 = ActionPoint::new(FourierLoop::constant(b, &[1.0, 0.0]), 0.0);
        assert!((el_residual(&q0, &h, &e) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn well_solution_identities() {
        let w = PotentialSpec::well1d(1.0);
        let e = MetricChart::euclidean(1);
        let b = Basis::new(2, 16).unwrap();
        let mut x = FourierLoop::zeros(1, b);
        x.coeffs[1] = 1.0;
        let p = ActionPoint::new(x, (2f64.sqrt() * PI).ln());
        let (gu, ge) = critical_value_identities(&p, &w, &e, 0.0).unwrap();
        assert!(gu < 1e-10 && ge < 1e-10);
        assert!((action_value(&p, &w, &e, 0.0).unwrap() - 2f64.sqrt() * PI).abs() < 1e-10);
        assert!(el_residual(&p, &w, &e) < 1e-9);
    }

    #[test]
    fn cache_agrees_with_recomputation() {
        let h = PotentialSpec::annulus2d(0.0);
        let e = MetricChart::euclidean(2);
        let mut p = circle_point(3);
        p.x.coeffs[7] = 0.2;
        let v = p.evaluate(&h, &e, 0.3).unwrap().value;
        assert_eq!(v, action_value(&p, &h, &e, 0.3).unwrap());
        let n = p.evaluate(&h, &e, 0.0).unwrap().gradient.norm;
        assert_eq!(n, action_gradient(&p, &h, &e, 0.0).unwrap().norm);
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ActionPoint {
        let b = Basis::new(k, 4 * k + 4).unwrap();
        let mut x = FourierLoop::zeros(n, b);
        for (m, c) in x.coeffs.iter_mut().enumerate() {
            let f = Basis::frequency(m / n) as f64;
            *c = rng.gen_range(-1.0..1.0) / (1.0 + f * f);
        }
        ActionPoint::new(x, rng.gen_range(-1.0..2.0))
    }

    fn fd_check(spec: &PotentialSpec, chart: &MetricChart, n: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 0.2;
        for _ in 0..5 {
            let p = random_point(&mut rng, n, 4);
            let g = action_gradient(&p, spec, chart, eps).unwrap();
            for _ in 0..20 {
                let dir = random_point(&mut rng, n, 4);
                let h = 1e-5;
                let plus = ActionPoint::new(p.x.axpy(h, &dir.x), p.tau + h * dir.tau);
                let minus = ActionPoint::new(p.x.axpy(-h, &dir.x), p.tau - h * dir.tau);
                let fd = (action_value(&plus, spec, chart, eps).unwrap() - action_value(&minus, spec, chart, eps).unwrap())
                    / (2.0 * h);
                let an = h1_inner(&g.xi, &dir.x).unwrap() + g.dtau * dir.tau;
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(&PotentialSpec::annulus2d(0.0), &MetricChart::euclidean(2), 2, 1);
        fd_check(&PotentialSpec::well1d(1.0), &MetricChart::euclidean(1), 1, 2);
        let phi = ClosureField::new(
            |q| 0.3 * q[0] * q[1],
            |q| [0.3 * q[1], 0.3 * q[0]],
            |_| [[0.0, 0.3], [0.3, 0.0]],
        );
        fd_check(&PotentialSpec::harmonic2d(1.0), &MetricChart::conformal2d(Arc::new(phi)), 2, 3);
    }

    proptest! {
        #[test]
        fn action_is_time_shift_invariant(seed in 0u64..1000, theta in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_point(&mut rng, 2, 5);
            let s = ActionPoint::new(p.x.time_shift(theta), p.tau);
            let spec = PotentialSpec::annulus2d(0.0);
            let e = MetricChart::euclidean(2);
            let (a, b) = (action_value(&p, &spec, &e, 0.1).unwrap(), action_value(&s, &spec, &e, 0.1).unwrap());
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            let (ga, gb) = (action_gradient(&p, &spec, &e, 0.1).unwrap().norm, action_gradient(&s, &spec, &e, 0.1).unwrap().norm);
            prop_assert!((ga - gb).abs() <= 1e-9 * (1.0 + ga));
        }
    }
}
