//! Truncated Fourier loops `x(t) = a₀ + Σ_k (a_k cos 2πkt + b_k sin 2πkt)`
//! on `[0, 1)`, their quadrature, and the H¹ structure on coefficients.
//!
//! Coefficients are stored flat as `c[m * n + i]` over the real basis
//! `φ₀ = 1, φ_{2k-1} = cos 2πkt, φ_{2k} = sin 2πkt`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::MetricChart;
use crate::potential::PotentialSpec;

/// Basis functions and their derivatives tabulated on `M` uniform nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    modes: usize,
    samples: usize,
    phi: Vec<f64>,
    dphi: Vec<f64>,
}

impl Basis {
    pub fn new(modes: usize, samples: usize) -> Result<Arc<Self>> {
        if samples < 4 * modes + 1 {
            return Err(Error::Domain(format!(
                "need at least 4K+1 = {} quadrature nodes, got {samples}",
                4 * modes + 1
            )));
        }
        let count = 2 * modes + 1;
        let mut phi = vec![0.0; count * samples];
        let mut dphi = vec![0.0; count * samples];
        for j in 0..samples {
            let t = j as f64 / samples as f64;
            phi[j] = 1.0;
            for k in 1..=modes {
                let w = 2.0 * PI * k as f64;
                let (s, c) = (w * t).sin_cos();
                phi[(2 * k - 1) * samples + j] = c;
                phi[2 * k * samples + j] = s;
                dphi[(2 * k - 1) * samples + j] = -w * s;
                dphi[2 * k * samples + j] = w * c;
            }
        }
        Ok(Arc::new(Self {
            modes,
            samples,
            phi,
            dphi,
        }))
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Number of real basis functions, `2K + 1`.
    pub fn len(&self) -> usize {
        2 * self.modes + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Frequency `k` of basis function `m`.
    #[inline]
    pub fn frequency(m: usize) -> usize {
        (m + 1) / 2
    }

    /// H¹ weight of basis function `m`: `1` for the mean, `½(1 + (2πk)²)`
    /// otherwise.
    #[inline]
    pub fn h1_weight(m: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            let w = 2.0 * PI * Self::frequency(m) as f64;
            0.5 * (1.0 + w * w)
        }
    }

    /// L² norm squared of basis function `m`.
    #[inline]
    pub fn l2_weight(m: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            0.5
        }
    }

    #[inline]
    pub fn phi(&self, m: usize, j: usize) -> f64 {
        self.phi[m * self.samples + j]
    }

    #[inline]
    pub fn dphi(&self, m: usize, j: usize) -> f64 {
        self.dphi[m * self.samples + j]
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 / self.samples as f64
    }
}

/// A loop in `ℝⁿ` (or a lift of a contractible loop in a chart), also used
/// for tangent fields along a loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierLoop {
    dim: usize,
    basis: Arc<Basis>,
    pub coeffs: Vec<f64>,
}

/// Position, velocity and acceleration at every quadrature node, each laid
/// out as `[j * n + i]`.
#[derive(Debug, Clone)]
pub struct LoopSamples {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl FourierLoop {
    pub fn zeros(dim: usize, basis: Arc<Basis>) -> Self {
        let len = basis.len() * dim;
        Self {
            dim,
            basis,
            coeffs: vec![0.0; len],
        }
    }

    pub fn from_coeffs(dim: usize, basis: Arc<Basis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() * dim {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                basis.len() * dim,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("loop coefficients must be finite".into()));
        }
        Ok(Self { dim, basis, coeffs })
    }

    pub fn constant(basis: Arc<Basis>, q: &[f64]) -> Self {
        let mut x = Self::zeros(q.len(), basis);
        x.coeffs[..q.len()].copy_from_slice(q);
        x
    }

    /// `centre + radius (cos 2πt, sin 2πt)` in the plane of axes 0 and 1.
    pub fn circle(basis: Arc<Basis>, centre: &[f64], radius: f64) -> Self {
        let n = centre.len();
        let mut x = Self::constant(basis, centre);
        x.coeffs[n] = radius;
        if n > 1 {
            x.coeffs[2 * n + 1] = radius;
        }
        x
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn modes(&self) -> usize {
        self.basis.modes
    }

    #[inline]
    pub fn coeff(&self, m: usize, i: usize) -> f64 {
        self.coeffs[m * self.dim + i]
    }

    pub fn mean(&self) -> &[f64] {
        &self.coeffs[..self.dim]
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.basis.modes != other.basis.modes {
            return Err(Error::Shape(format!(
                "mode mismatch: ({}, K={}) vs ({}, K={})",
                self.dim, self.basis.modes, other.dim, other.basis.modes
            )));
        }
        Ok(())
    }

    /// `self + s · other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        let mut out = self.clone();
        for (o, d) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *o += s * d;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    /// Loop with the same coefficients on a different basis, truncating or
    /// zero-padding the modes.
    pub fn rebased(&self, basis: Arc<Basis>) -> Self {
        let mut out = Self::zeros(self.dim, basis);
        let keep = out.coeffs.len().min(self.coeffs.len());
        out.coeffs[..keep].copy_from_slice(&self.coeffs[..keep]);
        out
    }

    fn eval_with(&self, t: f64, deriv: u32) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        if deriv == 0 {
            out.copy_from_slice(&self.coeffs[..n]);
        }
        for k in 1..=self.basis.modes {
            let w = 2.0 * PI * k as f64;
            let (s, c) = (w * t).sin_cos();
            let (fc, fs) = match deriv {
                0 => (c, s),
                1 => (-w * s, w * c),
                _ => (-w * w * c, -w * w * s),
            };
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.coeffs[(2 * k - 1) * n + i] * fc + self.coeffs[2 * k * n + i] * fs;
            }
        }
        out
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.eval_with(t, 0)
    }

    pub fn velocity(&self, t: f64) -> Vec<f64> {
        self.eval_with(t, 1)
    }

    pub fn acceleration(&self, t: f64) -> Vec<f64> {
        self.eval_with(t, 2)
    }

    /// Values at the quadrature nodes.
    pub fn samples(&self) -> LoopSamples {
        let n = self.dim;
        let big_m = self.basis.samples;
        let mut x = vec![0.0; big_m * n];
        let mut v = vec![0.0; big_m * n];
        let mut a = vec![0.0; big_m * n];
        for m in 0..self.basis.len() {
            let k2 = {
                let w = 2.0 * PI * Basis::frequency(m) as f64;
                w * w
            };
            let c = &self.coeffs[m * n..(m + 1) * n];
            if c.iter().all(|&z| z == 0.0) {
                continue;
            }
            for j in 0..big_m {
                let p = self.basis.phi(m, j);
                let dp = self.basis.dphi(m, j);
                for i in 0..n {
                    x[j * n + i] += c[i] * p;
                    v[j * n + i] += c[i] * dp;
                    a[j * n + i] -= c[i] * k2 * p;
                }
            }
        }
        LoopSamples { x, v, a }
    }

    /// Phase rotation `t ↦ t + θ`.
    pub fn time_shift(&self, theta: f64) -> Self {
        let n = self.dim;
        let mut out = self.clone();
        for k in 1..=self.basis.modes {
            let (s, c) = (2.0 * PI * k as f64 * theta).sin_cos();
            for i in 0..n {
                let a = self.coeffs[(2 * k - 1) * n + i];
                let b = self.coeffs[2 * k * n + i];
                out.coeffs[(2 * k - 1) * n + i] = a * c + b * s;
                out.coeffs[2 * k * n + i] = b * c - a * s;
            }
        }
        out
    }

    /// Least-squares projection of node values `[j * n + i]` onto the basis
    /// (a truncated discrete Fourier transform).
    pub fn from_samples(dim: usize, basis: Arc<Basis>, values: &[f64]) -> Result<Self> {
        let big_m = basis.samples;
        if values.len() != big_m * dim {
            return Err(Error::Shape(format!(
                "expected {} sample values, got {}",
                big_m * dim,
                values.len()
            )));
        }
        let mut x = Self::zeros(dim, basis.clone());
        for m in 0..basis.len() {
            let scale = 1.0 / (big_m as f64 * Basis::l2_weight(m));
            for i in 0..dim {
                let s: f64 = (0..big_m).map(|j| values[j * dim + i] * basis.phi(m, j)).sum();
                x.coeffs[m * dim + i] = s * scale;
            }
        }
        if x.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("sample values must be finite".into()));
        }
        Ok(x)
    }

    /// Coefficients grouped per basis function: `[a₀, a₁, b₁, a₂, b₂, …]`.
    pub fn coefficient_vectors(&self) -> Vec<Vec<f64>> {
        self.coeffs.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn from_coefficient_vectors(basis: Arc<Basis>, vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("coefficient vectors must be nonempty and of equal length".into()));
        }
        if vectors.len() > basis.len() {
            return Err(Error::Shape(format!(
                "{} coefficient vectors exceed the {} basis functions",
                vectors.len(),
                basis.len()
            )));
        }
        let mut coeffs: Vec<f64> = vectors.concat();
        coeffs.resize(basis.len() * dim, 0.0);
        Self::from_coeffs(dim, basis, coeffs)
    }
}

/// `ℰ(x) = ½∫ g(ẋ, ẋ) dt`.
pub fn energy(x: &FourierLoop, chart: &MetricChart) -> f64 {
    if chart.is_flat() {
        let n = x.dim;
        (1..x.basis.len())
            .map(|m| {
                let k = Basis::frequency(m) as f64;
                let c = &x.coeffs[m * n..(m + 1) * n];
                PI * PI * k * k * c.iter().map(|z| z * z).sum::<f64>()
            })
            .sum()
    } else {
        quadrature_energy(x, chart)
    }
}

/// Rectangle-rule energy, used for curved charts and as a cross-check.
pub fn quadrature_energy(x: &FourierLoop, chart: &MetricChart) -> f64 {
    let n = x.dim;
    let s = x.samples();
    let big_m = x.basis.samples;
    (0..big_m)
        .map(|j| {
            let q = &s.x[j * n..(j + 1) * n];
            let v = &s.v[j * n..(j + 1) * n];
            0.5 * chart.factor(q).0 * v.iter().map(|z| z * z).sum::<f64>()
        })
        .sum::<f64>()
        / big_m as f64
}

/// `𝒰(x) = ∫ U(x(t)) dt`.
pub fn potential_integral(x: &FourierLoop, spec: &PotentialSpec) -> f64 {
    let n = x.dim;
    let s = x.samples();
    let big_m = x.basis.samples;
    (0..big_m).map(|j| spec.value(&s.x[j * n..(j + 1) * n])).sum::<f64>() / big_m as f64
}

/// `⟨ξ, η⟩₁ = ∫ ξ·η + ∫ ξ̇·η̇` in coefficient form.
pub fn h1_inner(xi: &FourierLoop, eta: &FourierLoop) -> Result<f64> {
    xi.check_compatible(eta)?;
    Ok(weighted_dot(xi, eta, Basis::h1_weight))
}

/// `∫ w·ξ dt`.
pub fn l2_pairing(w: &FourierLoop, xi: &FourierLoop) -> Result<f64> {
    w.check_compatible(xi)?;
    Ok(weighted_dot(w, xi, Basis::l2_weight))
}

fn weighted_dot(a: &FourierLoop, b: &FourierLoop, weight: fn(usize) -> f64) -> f64 {
    let n = a.dim;
    (0..a.basis.len())
        .map(|m| {
            weight(m)
                * a.coeffs[m * n..(m + 1) * n]
                    .iter()
                    .zip(&b.coeffs[m * n..(m + 1) * n])
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
        })
        .sum()
}

/// Divides mode `k` by `1 + (2πk)²`, turning an L² representative into the
/// H¹ gradient.
pub fn precondition(w: &FourierLoop) -> FourierLoop {
    let mut out = w.clone();
    let n = w.dim;
    for m in 1..w.basis.len() {
        let k = 2.0 * PI * Basis::frequency(m) as f64;
        let s = 1.0 / (1.0 + k * k);
        out.coeffs[m * n..(m + 1) * n].iter_mut().for_each(|c| *c *= s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(k: usize) -> Arc<Basis> {
        Basis::new(k, 4 * k + 8).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn rejects_aliasing_resolution() {
        assert!(Basis::new(8, 32).is_err());
        assert!(Basis::new(8, 33).is_ok());
    }

    #[test]
    fn evaluation_examples() {
        let b = basis(2);
        let c = FourierLoop::constant(b.clone(), &[1.0, 2.0]);
        assert_eq!(c.eval(0.3), vec![1.0, 2.0]);
        assert_eq!(c.velocity(0.3), vec![0.0, 0.0]);
        let circle = FourierLoop::circle(b, &[0.0, 0.0], 1.0);
        assert!(close(&circle.eval(0.0), &[1.0, 0.0], 1e-15));
        assert!(close(&circle.velocity(0.0), &[0.0, 2.0 * PI], 1e-14));
        assert!(close(&circle.eval(0.25), &[0.0, 1.0], 1e-15));
        assert!(close(&circle.velocity(0.25), &[-2.0 * PI, 0.0], 1e-14));
    }

    #[test]
    fn energy_examples() {
        let e = MetricChart::euclidean(2);
        let b = basis(3);
        assert_eq!(energy(&FourierLoop::constant(b.clone(), &[1.0, 2.0]), &e), 0.0);
        let circle = FourierLoop::circle(b.clone(), &[0.0, 0.0], 1.0);
        assert!((energy(&circle, &e) - 2.0 * PI * PI).abs() < 1e-12);
        let mut x = FourierLoop::zeros(2, b);
        x.coeffs[2] = 2.0;
        assert!((energy(&x, &e) - 4.0 * PI * PI).abs() < 1e-12);
        assert!((quadrature_energy(&x, &e) - 4.0 * PI * PI).abs() < 1e-11);
    }

    #[test]
    fn potential_integral_examples() {
        let b = basis(3);
        let h = PotentialSpec::harmonic2d(1.0);
        let q0 = [0.3, -0.2];
        assert!((potential_integral(&FourierLoop::constant(b.clone(), &q0), &h) - (1.0 - 0.5 * 0.13)).abs() < 1e-15);
        let circle = FourierLoop::circle(b.clone(), &[0.0, 0.0], 1.0);
        assert!((potential_integral(&circle, &h) - 0.5).abs() < 1e-14);
        let mut w = FourierLoop::zeros(1, b);
        w.coeffs[1] = 1.0;
        assert!((potential_integral(&w, &PotentialSpec::well1d(1.0)) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn h1_examples() {
        let b = basis(3);
        let c = FourierLoop::constant(b.clone(), &[3.0, 4.0]);
        assert_eq!(h1_inner(&c, &c).unwrap(), 25.0);
        let mut a1 = FourierLoop::zeros(3, b.clone());
        a1.coeffs[3] = 0.6;
        a1.coeffs[4] = 0.8;
        assert!((h1_inner(&a1, &a1).unwrap() - 0.5 * (1.0 + 4.0 * PI * PI)).abs() < 1e-12);
        let mut a2 = FourierLoop::zeros(3, b.clone());
        a2.coeffs[3 * 3] = 1.0;
        assert_eq!(h1_inner(&a1, &a2).unwrap(), 0.0);
        let other = FourierLoop::zeros(3, basis(4));
        assert!(matches!(h1_inner(&a1, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn precondition_examples() {
        let b = basis(2);
        let c = FourierLoop::constant(b.clone(), &[1.5]);
        assert_eq!(precondition(&c), c);
        let mut w = FourierLoop::zeros(1, b.clone());
        w.coeffs[2] = 1.0;
        assert!((precondition(&w).coeffs[2] - 1.0 / (1.0 + 4.0 * PI * PI)).abs() < 1e-16);
        let z = FourierLoop::zeros(2, b);
        assert_eq!(precondition(&z), z);
    }

    #[test]
    fn projection_round_trip() {
        let b = basis(4);
        let mut x = FourierLoop::zeros(2, b.clone());
        for (i, c) in x.coeffs.iter_mut().enumerate() {
            *c = (i as f64 * 0.37).sin();
        }
        let back = FourierLoop::from_samples(2, b.clone(), &x.samples().x).unwrap();
        assert!(close(&back.coeffs, &x.coeffs, 1e-13));
        let vecs = x.coefficient_vectors();
        assert_eq!(FourierLoop::from_coefficient_vectors(b, &vecs).unwrap(), x);
    }

    #[test]
    fn samples_match_pointwise_evaluation() {
        let b = basis(3);
        let mut x = FourierLoop::zeros(2, b.clone());
        for (i, c) in x.coeffs.iter_mut().enumerate() {
            *c = 1.0 / (1.0 + i as f64);
        }
        let s = x.samples();
        for j in [0, 5, 11] {
            let t = b.node(j);
            assert!(close(&s.x[2 * j..2 * j + 2], &x.eval(t), 1e-13));
            assert!(close(&s.v[2 * j..2 * j + 2], &x.velocity(t), 1e-12));
            assert!(close(&s.a[2 * j..2 * j + 2], &x.acceleration(t), 1e-10));
        }
    }

    fn random_loop(dim: usize, b: Arc<Basis>, raw: &[f64]) -> FourierLoop {
        let mut x = FourierLoop::zeros(dim, b);
        for (m, c) in x.coeffs.iter_mut().enumerate() {
            let k = Basis::frequency(m / dim) as f64;
            *c = raw[m % raw.len()] / (1.0 + k * k);
        }
        x
    }

    proptest! {
        #[test]
        fn parseval_matches_quadrature(k in 1usize..=64, raw in prop::collection::vec(-1.0f64..1.0, 8..40)) {
            let b = Basis::new(k, 4 * k + 1).unwrap();
            let x = random_loop(2, b, &raw);
            let e = MetricChart::euclidean(2);
            let p = energy(&x, &e);
            let q = quadrature_energy(&x, &e);
            prop_assert!((p - q).abs() <= 1e-10 * p.abs().max(1e-300));
        }

        #[test]
        fn potential_integral_is_shift_invariant(theta in 0.0f64..1.0, raw in prop::collection::vec(-1.0f64..1.0, 8..40)) {
            let b = Basis::new(6, 64).unwrap();
            let x = random_loop(2, b, &raw);
            let spec = PotentialSpec::annulus2d(0.0);
            let a = potential_integral(&x, &spec);
            let s = potential_integral(&x.time_shift(theta), &spec);
            prop_assert!((a - s).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn preconditioner_is_adjoint(raw_w in prop::collection::vec(-1.0f64..1.0, 8..40), raw_x in prop::collection::vec(-1.0f64..1.0, 8..40)) {
            let b = Basis::new(10, 41).unwrap();
            let w = random_loop(3, b.clone(), &raw_w);
            let xi = random_loop(3, b, &raw_x);
            let lhs = h1_inner(&precondition(&w), &xi).unwrap();
            let rhs = l2_pairing(&w, &xi).unwrap();
            let scale = h1_inner(&w, &w).unwrap().sqrt() * h1_inner(&xi, &xi).unwrap().sqrt();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1.0));
        }
    }
}
