//! Configuration space charts.
//!
//! Every supported family is conformally flat, `g = e^{2φ(q)} I`, with
//! `φ ≡ 0` for the Euclidean space and the flat torus. The torus is kept on
//! its universal cover; loops are never wrapped.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{BoxDomain, Lattice};

/// Scalar field `φ` on the plane together with its first and second
/// derivatives. Implementors must be analytic; no differentiation is done
/// numerically.
pub trait ConformalField: Send + Sync {
    fn value(&self, q: &[f64]) -> f64;
    fn gradient(&self, q: &[f64]) -> [f64; 2];
    fn hessian(&self, q: &[f64]) -> [[f64; 2]; 2];
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> [f64; 2] + Send + Sync;
type HessFn = dyn Fn(&[f64]) -> [[f64; 2]; 2] + Send + Sync;

/// A conformal factor assembled from user closures.
#[derive(Clone)]
pub struct ClosureField {
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
    hessian: Arc<HessFn>,
}

impl ClosureField {
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> [f64; 2] + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> [[f64; 2]; 2] + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| [0.0; 2], |_| [[0.0; 2]; 2])
    }
}

impl ConformalField for ClosureField {
    fn value(&self, q: &[f64]) -> f64 {
        (self.value)(q)
    }
    fn gradient(&self, q: &[f64]) -> [f64; 2] {
        (self.gradient)(q)
    }
    fn hessian(&self, q: &[f64]) -> [[f64; 2]; 2] {
        (self.hessian)(q)
    }
}

#[derive(Clone)]
pub enum MetricFamily {
    Euclidean,
    FlatTorus { periods: Vec<f64> },
    Conformal2D(Arc<dyn ConformalField>),
}

impl fmt::Debug for MetricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricFamily::Euclidean => write!(f, "Euclidean"),
            MetricFamily::FlatTorus { periods } => write!(f, "FlatTorus({periods:?})"),
            MetricFamily::Conformal2D(_) => write!(f, "Conformal2D(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricChart {
    dim: usize,
    family: MetricFamily,
}

/// Christoffel symbols `Γ^i_{jk}` stored densely, `i` slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        self.data[(i * n + j) * n + k] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundedGeometryReport {
    /// `f64::INFINITY` when the injectivity radius is unbounded.
    #[serde(serialize_with = "serialize_radius")]
    pub injectivity_radius: f64,
    pub curvature_bound: f64,
    pub curvature_derivative_bound: f64,
    pub certified: bool,
    pub note: String,
}

fn serialize_radius<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

impl MetricChart {
    pub fn euclidean(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            family: MetricFamily::Euclidean,
        }
    }

    pub fn flat_torus(periods: Vec<f64>) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::Geometry("flat torus needs at least one period".into()));
        }
        if periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Geometry("flat torus periods must be strictly positive".into()));
        }
        Ok(Self {
            dim: periods.len(),
            family: MetricFamily::FlatTorus { periods },
        })
    }

    pub fn conformal2d(field: Arc<dyn ConformalField>) -> Self {
        Self {
            dim: 2,
            family: MetricFamily::Conformal2D(field),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &MetricFamily {
        &self.family
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self.family, MetricFamily::Conformal2D(_))
    }

    pub fn torus_periods(&self) -> Option<&[f64]> {
        match &self.family {
            MetricFamily::FlatTorus { periods } => Some(periods),
            _ => None,
        }
    }

    fn check_point(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::Shape(format!(
                "point has {} components, chart dimension is {}",
                q.len(),
                self.dim
            )));
        }
        ensure_finite(q, "point")
    }

    /// Conformal factor `λ = e^{2φ(q)}` and `dφ(q)`. `dφ` is empty for
    /// flat charts.
    #[inline]
    pub(crate) fn factor(&self, q: &[f64]) -> (f64, [f64; 2]) {
        match &self.family {
            MetricFamily::Conformal2D(phi) => ((2.0 * phi.value(q)).exp(), phi.gradient(q)),
            _ => (1.0, [0.0; 2]),
        }
    }

    /// `Γ(q)(v, v)` written into `out` (zero for flat charts).
    #[inline]
    pub(crate) fn christoffel_contract(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.family {
            MetricFamily::Conformal2D(phi) => {
                let d = phi.gradient(q);
                let dv = d[0] * v[0] + d[1] * v[1];
                let vv = v[0] * v[0] + v[1] * v[1];
                out[0] = 2.0 * v[0] * dv - vv * d[0];
                out[1] = 2.0 * v[1] * dv - vv * d[1];
            }
            _ => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    pub fn metric_eval(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(q)?;
        let (lambda, _) = self.factor(q);
        Ok(DMatrix::identity(self.dim, self.dim) * lambda)
    }

    pub fn christoffel(&self, q: &[f64]) -> Result<Christoffel> {
        self.check_point(q)?;
        let mut g = Christoffel::zeros(self.dim);
        if let MetricFamily::Conformal2D(phi) = &self.family {
            let d = phi.gradient(q);
            let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let v = delta(i, j) * d[k] + delta(i, k) * d[j] - delta(j, k) * d[i];
                        g.set(i, j, k, v);
                    }
                }
            }
        }
        Ok(g)
    }

    /// `a^i + Γ^i_{jk}(q) v^j v^k`, the coordinate expression of `∇_v v`
    /// for a curve with velocity `v` and coordinate acceleration `a`.
    pub fn covariant_accel(&self, q: &[f64], v: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_point(q)?;
        if v.len() != self.dim || a.len() != self.dim {
            return Err(Error::Shape("velocity/acceleration dimension mismatch".into()));
        }
        ensure_finite(v, "velocity")?;
        ensure_finite(a, "acceleration")?;
        let mut gamma = vec![0.0; self.dim];
        self.christoffel_contract(q, v, &mut gamma);
        Ok(a.iter().zip(&gamma).map(|(x, y)| x + y).collect())
    }

    /// Raises a covector with the metric: `g(q)^{-1} dU`.
    pub fn metric_gradient(&self, q: &[f64], du: &[f64]) -> Result<Vec<f64>> {
        self.check_point(q)?;
        if du.len() != self.dim {
            return Err(Error::Shape("covector dimension mismatch".into()));
        }
        let (lambda, _) = self.factor(q);
        if !(lambda.is_finite() && lambda > f64::MIN_POSITIVE) {
            return Err(Error::Geometry(format!("metric is not positive definite (factor {lambda})")));
        }
        Ok(du.iter().map(|c| c / lambda).collect())
    }

    pub fn check_bounded_geometry(&self, bbox: &BoxDomain, grid_n: usize) -> Result<BoundedGeometryReport> {
        match &self.family {
            MetricFamily::Euclidean => Ok(BoundedGeometryReport {
                injectivity_radius: f64::INFINITY,
                curvature_bound: 0.0,
                curvature_derivative_bound: 0.0,
                certified: true,
                note: "flat Euclidean space".into(),
            }),
            MetricFamily::FlatTorus { periods } => Ok(BoundedGeometryReport {
                injectivity_radius: 0.5 * periods.iter().cloned().fold(f64::INFINITY, f64::min),
                curvature_bound: 0.0,
                curvature_derivative_bound: 0.0,
                certified: true,
                note: "flat torus: injectivity radius is half the shortest period".into(),
            }),
            MetricFamily::Conformal2D(phi) => {
                if bbox.dim() != 2 {
                    return Err(Error::Shape("conformal chart needs a planar box".into()));
                }
                if grid_n < 2 {
                    return Err(Error::Domain("grid_n must be at least 2".into()));
                }
                let lat = Lattice::uniform(bbox.clone(), grid_n)?;
                let gauss = |q: &[f64]| {
                    let h = phi.hessian(q);
                    -(-2.0 * phi.value(q)).exp() * (h[0][0] + h[1][1])
                };
                let hx = lat.spacing(0);
                let hy = lat.spacing(1);
                let mut kmax = 0.0f64;
                let mut dkmax = 0.0f64;
                for flat in 0..lat.node_count() {
                    let q = lat.node_point(&lat.node_index(flat));
                    kmax = kmax.max(gauss(&q).abs());
                    let dkx = (gauss(&[q[0] + 0.5 * hx, q[1]]) - gauss(&[q[0] - 0.5 * hx, q[1]])) / hx;
                    let dky = (gauss(&[q[0], q[1] + 0.5 * hy]) - gauss(&[q[0], q[1] - 0.5 * hy])) / hy;
                    let norm = (-phi.value(&q)).exp() * (dkx * dkx + dky * dky).sqrt();
                    dkmax = dkmax.max(norm);
                }
                Ok(BoundedGeometryReport {
                    injectivity_radius: f64::NAN,
                    curvature_bound: kmax,
                    curvature_derivative_bound: dkmax,
                    certified: false,
                    note: format!("sampled, not certified ({}x{} grid)", grid_n + 1, grid_n + 1),
                })
            }
        }
    }
}
