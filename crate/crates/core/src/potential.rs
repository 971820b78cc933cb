//! The shifted potential `U = E - V` and sampled diagnostics of the
//! hypotheses placed on it: regularity of the zero level, the asymptotic
//! growth conditions, and the `Q_B` construction used by the linking module.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::{BoundedGeometryReport, ConformalField, MetricChart};
use crate::grid::{BoxDomain, Lattice};

/// A smooth scalar field with analytic first and second derivatives.
pub trait PotentialField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, q: &[f64]) -> f64;
    /// Coordinate differential `dU(q)`.
    fn covector(&self, q: &[f64], out: &mut [f64]);
    /// Coordinate second derivatives, row-major `n × n`.
    fn hessian(&self, q: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

/// A real polynomial in `n` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

fn ipow(x: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(e as i32),
    }
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Potential("polynomial dimension must be positive".into()));
        }
        for t in &terms {
            if t.exponents.len() != dim {
                return Err(Error::Shape(format!(
                    "monomial exponents {:?} do not match dimension {dim}",
                    t.exponents
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::Potential("polynomial coefficients must be finite".into()));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: vec![] }
    }

    /// `Σ c_α q^α` from `(exponents, coeff)` pairs.
    pub fn from_terms(dim: usize, terms: &[(&[u32], f64)]) -> Result<Self> {
        Self::new(
            dim,
            terms
                .iter()
                .map(|(e, c)| Monomial {
                    exponents: e.to_vec(),
                    coeff: *c,
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|t| Monomial {
                    exponents: t.exponents.clone(),
                    coeff: s * t.coeff,
                })
                .collect(),
        }
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.terms.push(Monomial {
            exponents: vec![0; self.dim],
            coeff: c,
        });
        self
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.exponents.iter().zip(q).map(|(&e, &x)| ipow(x, e)).product::<f64>())
            .sum()
    }

    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            for i in 0..self.dim {
                let ei = t.exponents[i];
                if ei == 0 {
                    continue;
                }
                let mut p = t.coeff * ei as f64 * ipow(q[i], ei - 1);
                for (j, (&e, &x)) in t.exponents.iter().zip(q).enumerate() {
                    if j != i {
                        p *= ipow(x, e);
                    }
                }
                out[i] += p;
            }
        }
    }

    pub fn hessian(&self, q: &[f64], out: &mut [f64]) {
        let n = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            for i in 0..n {
                for j in i..n {
                    let mut e = t.exponents.clone();
                    let mut c = t.coeff;
                    c *= e[i] as f64;
                    if e[i] == 0 {
                        continue;
                    }
                    e[i] -= 1;
                    c *= e[j] as f64;
                    if e[j] == 0 {
                        continue;
                    }
                    e[j] -= 1;
                    let p = c * e.iter().zip(q).map(|(&k, &x)| ipow(x, k)).product::<f64>();
                    out[i * n + j] += p;
                    if i != j {
                        out[j * n + i] += p;
                    }
                }
            }
        }
    }
}

impl ConformalField for Polynomial {
    fn value(&self, q: &[f64]) -> f64 {
        self.eval(q)
    }
    fn gradient(&self, q: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        Polynomial::gradient(self, q, &mut g);
        g
    }
    fn hessian(&self, q: &[f64]) -> [[f64; 2]; 2] {
        let mut h = [0.0; 4];
        Polynomial::hessian(self, q, &mut h);
        [[h[0], h[1]], [h[2], h[3]]]
    }
}

/// `U = E - V` for a polynomial `V`.
#[derive(Debug, Clone)]
pub struct ShiftedPolynomial {
    pub energy: f64,
    pub v: Polynomial,
}

impl PotentialField for ShiftedPolynomial {
    fn dim(&self) -> usize {
        self.v.dim
    }
    fn value(&self, q: &[f64]) -> f64 {
        self.energy - self.v.eval(q)
    }
    fn covector(&self, q: &[f64], out: &mut [f64]) {
        self.v.gradient(q, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }
    fn hessian(&self, q: &[f64], out: &mut [f64]) {
        self.v.hessian(q, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }
}

#[derive(Clone)]
pub struct PotentialSpec {
    pub field: Arc<dyn PotentialField>,
    pub base_point: Vec<f64>,
    /// Radius of the ball about the base point standing in for the compact
    /// set outside of which the growth conditions are sampled.
    pub compact_radius: f64,
    pub builtin_tag: Option<String>,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("dim", &self.dim())
            .field("base_point", &self.base_point)
            .field("compact_radius", &self.compact_radius)
            .field("builtin_tag", &self.builtin_tag)
            .finish()
    }
}

impl PotentialSpec {
    pub fn new(field: Arc<dyn PotentialField>, base_point: Vec<f64>, compact_radius: f64) -> Result<Self> {
        if base_point.len() != field.dim() {
            return Err(Error::Shape("base point dimension does not match potential".into()));
        }
        if !(compact_radius.is_finite() && compact_radius > 0.0) {
            return Err(Error::Potential("compact radius must be positive".into()));
        }
        Ok(Self {
            field,
            base_point,
            compact_radius,
            builtin_tag: None,
        })
    }

    pub fn polynomial(v: Polynomial, energy: f64) -> Self {
        let n = v.dim();
        Self {
            field: Arc::new(ShiftedPolynomial { energy, v }),
            base_point: vec![0.0; n],
            compact_radius: 2.0,
            builtin_tag: None,
        }
    }

    fn tagged(mut self, tag: &str) -> Self {
        self.builtin_tag = Some(tag.to_string());
        self
    }

    /// `U = E - ½|q|²` on the plane.
    pub fn harmonic2d(energy: f64) -> Self {
        let v = Polynomial::from_terms(2, &[(&[2, 0], 0.5), (&[0, 2], 0.5)]).unwrap();
        Self::polynomial(v, energy).tagged("harmonic2d")
    }

    /// `U = E - q²` on the line.
    pub fn well1d(energy: f64) -> Self {
        let v = Polynomial::from_terms(1, &[(&[2], 1.0)]).unwrap();
        Self::polynomial(v, energy).tagged("well1d")
    }

    /// `U = E - ¼(|q|² - 1)(|q|² - 4)`; for `E = 0` the negative set is the
    /// open annulus `1 < |q| < 2`.
    pub fn annulus2d(energy: f64) -> Self {
        let v = Polynomial::from_terms(
            2,
            &[
                (&[4, 0], 0.25),
                (&[2, 2], 0.5),
                (&[0, 4], 0.25),
                (&[2, 0], -1.25),
                (&[0, 2], -1.25),
                (&[0, 0], 1.0),
            ],
        )
        .unwrap();
        Self::polynomial(v, energy).tagged("annulus2d")
    }

    pub fn builtin(name: &str, energy: Option<f64>) -> Result<Self> {
        match name {
            "harmonic2d" => Ok(Self::harmonic2d(energy.unwrap_or(1.0))),
            "well1d" => Ok(Self::well1d(energy.unwrap_or(1.0))),
            "annulus2d" => Ok(Self::annulus2d(energy.unwrap_or(0.0))),
            other => Err(Error::Potential(format!("unknown builtin potential '{other}'"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    #[inline]
    pub(crate) fn value(&self, q: &[f64]) -> f64 {
        self.field.value(q)
    }

    #[inline]
    pub(crate) fn covector(&self, q: &[f64], out: &mut [f64]) {
        self.field.covector(q, out)
    }
}

fn check_point(spec: &PotentialSpec, q: &[f64]) -> Result<()> {
    if q.len() != spec.dim() {
        return Err(Error::Shape(format!(
            "point has {} components, potential dimension is {}",
            q.len(),
            spec.dim()
        )));
    }
    ensure_finite(q, "point")
}

fn finite_or(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Potential(format!("{what} evaluated to {v}")))
    }
}

pub fn eval_u(spec: &PotentialSpec, q: &[f64]) -> Result<f64> {
    check_point(spec, q)?;
    finite_or(spec.value(q), "U")
}

/// Metric gradient `grad U = g^{-1} dU`.
pub fn eval_grad_u(spec: &PotentialSpec, chart: &MetricChart, q: &[f64]) -> Result<Vec<f64>> {
    check_point(spec, q)?;
    let mut du = vec![0.0; spec.dim()];
    spec.covector(q, &mut du);
    for &c in &du {
        finite_or(c, "dU")?;
    }
    chart.metric_gradient(q, &du)
}

/// Covariant Hessian `∇dU`, as a symmetric bilinear form in coordinates.
pub fn eval_hess_u(spec: &PotentialSpec, chart: &MetricChart, q: &[f64]) -> Result<DMatrix<f64>> {
    check_point(spec, q)?;
    let n = spec.dim();
    let mut h = vec![0.0; n * n];
    spec.field.hessian(q, &mut h);
    let mut hess = DMatrix::from_row_slice(n, n, &h);
    if !chart.is_flat() {
        let gamma = chart.christoffel(q)?;
        let mut du = vec![0.0; n];
        spec.covector(q, &mut du);
        for i in 0..n {
            for j in 0..n {
                let corr: f64 = (0..n).map(|k| gamma.get(k, i, j) * du[k]).sum();
                hess[(i, j)] -= corr;
            }
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Potential("Hessian is not finite".into()));
    }
    Ok(hess)
}

/// `|grad U|` in the metric norm.
pub fn grad_norm(spec: &PotentialSpec, chart: &MetricChart, q: &[f64]) -> f64 {
    let mut du = vec![0.0; spec.dim()];
    spec.covector(q, &mut du);
    let (lambda, _) = chart.factor(q);
    (du.iter().map(|c| c * c).sum::<f64>() / lambda).sqrt()
}

/// Operator norm of the Hessian as an endomorphism, `|g^{-1} ∇dU|`.
pub fn hess_norm(spec: &PotentialSpec, chart: &MetricChart, q: &[f64]) -> Result<f64> {
    let h = eval_hess_u(spec, chart, q)?;
    let (lambda, _) = chart.factor(q);
    let eig = SymmetricEigen::new(h);
    Ok(eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())) / lambda)
}

/// Sampled hypothesis diagnostics. Fields left `None` were not checked.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub reg_ok: Option<bool>,
    /// Minimum of `|grad U|` over the sampled zero level.
    pub reg_min_grad: Option<f64>,
    pub ac1a_ok: Option<bool>,
    pub ac1a_min_grad: Option<f64>,
    pub ac1b_max_ratio: Option<f64>,
    /// `(radius, max |Hess U| / |grad U|)` per shell.
    pub ac2_trend: Vec<(f64, f64)>,
    pub ac2_consistent: Option<bool>,
    pub lnk_betti: Option<Vec<usize>>,
    pub lnk_ok: Option<bool>,
    pub geometry: Option<BoundedGeometryReport>,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    pub fn merge(&mut self, other: HypothesisReport) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(reg_ok, reg_min_grad, ac1a_ok, ac1a_min_grad, ac1b_max_ratio, ac2_consistent, lnk_betti, lnk_ok, geometry);
        if !other.ac2_trend.is_empty() {
            self.ac2_trend = other.ac2_trend;
        }
        self.notes.extend(other.notes);
    }

    /// True when every check that was run passed.
    pub fn all_pass(&self) -> bool {
        [self.reg_ok, self.ac1a_ok, self.ac2_consistent, self.lnk_ok]
            .iter()
            .all(|v| v.unwrap_or(true))
    }
}

/// Scale-aware default regularity threshold: `1e-3 · max|U| / diam(box)`.
pub fn default_tol_grad(spec: &PotentialSpec, bbox: &BoxDomain, grid_n: usize) -> Result<f64> {
    let lat = Lattice::uniform(bbox.clone(), grid_n)?;
    let mut umax = 0.0f64;
    for flat in 0..lat.node_count() {
        let q = lat.node_point(&lat.node_index(flat));
        umax = umax.max(spec.value(&q).abs());
    }
    Ok(1e-3 * umax / bbox.diameter())
}

/// Points where `U` changes sign along lattice edges (`U ≥ 0` on one end,
/// `U < 0` on the other), located by linear interpolation.
pub(crate) fn zero_crossings(spec: &PotentialSpec, lat: &Lattice, level: f64) -> Vec<Vec<f64>> {
    let n = lat.dim();
    let values: Vec<f64> = (0..lat.node_count())
        .map(|f| spec.value(&lat.node_point(&lat.node_index(f))) - level)
        .collect();
    let mut out = Vec::new();
    for flat in 0..lat.node_count() {
        let idx = lat.node_index(flat);
        let u0 = values[flat];
        for axis in 0..n {
            let Some(nb) = lat.shifted(&idx, axis, 1) else { continue };
            let u1 = values[lat.node_flat(&nb)];
            if (u0 >= 0.0) != (u1 >= 0.0) {
                let theta = u0 / (u0 - u1);
                let mut p = lat.node_point(&idx);
                p[axis] += theta * lat.spacing(axis);
                out.push(p);
            }
        }
    }
    out
}

/// Regularity of the zero level: `{U = 0}` is sampled along lattice edges
/// and `|grad U|` is evaluated at every sampled zero.
pub fn check_reg(
    spec: &PotentialSpec,
    chart: &MetricChart,
    bbox: &BoxDomain,
    grid_n: usize,
    tol_grad: Option<f64>,
) -> Result<HypothesisReport> {
    if grid_n < 8 {
        return Err(Error::Domain("check_reg needs grid_n >= 8".into()));
    }
    if bbox.dim() != spec.dim() {
        return Err(Error::Shape("box dimension does not match potential".into()));
    }
    let tol = match tol_grad {
        Some(t) => t,
        None => default_tol_grad(spec, bbox, grid_n)?,
    };
    let lat = Lattice::uniform(bbox.clone(), grid_n)?;
    let zeros = zero_crossings(spec, &lat, 0.0);
    let mut report = HypothesisReport::default();
    if zeros.is_empty() {
        report.reg_ok = Some(false);
        report.notes.push("zero level empty in box".into());
        return Ok(report);
    }
    let min_grad = zeros
        .iter()
        .map(|q| grad_norm(spec, chart, q))
        .fold(f64::INFINITY, f64::min);
    report.reg_min_grad = Some(min_grad);
    report.reg_ok = Some(min_grad >= tol);
    if min_grad < tol {
        report.notes.push(format!(
            "gradient nearly vanishes on the zero level: min |grad U| = {min_grad:.3e} < {tol:.3e}"
        ));
    }
    Ok(report)
}

/// Deterministic, roughly uniform directions on the unit sphere in `ℝⁿ`.
fn shell_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Halton points pushed through Box-Muller, then normalised.
            const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
            let halton = |mut i: u64, b: u64| {
                let mut f = 1.0;
                let mut r = 0.0;
                while i > 0 {
                    f /= b as f64;
                    r += f * (i % b) as f64;
                    i /= b;
                }
                r
            };
            (1..=count as u64)
                .map(|i| {
                    let mut v: Vec<f64> = (0..n)
                        .map(|d| {
                            let u1 = halton(i, PRIMES[(2 * d) % 12]).max(1e-12);
                            let u2 = halton(i, PRIMES[(2 * d + 1) % 12]);
                            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                        })
                        .collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                    v.iter_mut().for_each(|x| *x /= norm);
                    v
                })
                .collect()
        }
    }
}

/// Growth conditions sampled on coordinate spheres about the base point.
/// For conformal charts the coordinate radius stands in for the metric
/// distance.
pub fn check_asymptotic(
    spec: &PotentialSpec,
    chart: &MetricChart,
    radii: &[f64],
    samples_per_shell: usize,
) -> Result<HypothesisReport> {
    if radii.is_empty() {
        return Err(Error::Domain("no shell radii given".into()));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("shell radii must be strictly increasing".into()));
    }
    if radii[0] <= spec.compact_radius {
        return Err(Error::Domain(format!(
            "shell radius {} lies inside the compact radius {}",
            radii[0], spec.compact_radius
        )));
    }
    let dirs = shell_directions(spec.dim(), samples_per_shell.max(1));
    let mut report = HypothesisReport::default();
    let mut min_grad = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    let mut violated = false;
    for &r in radii {
        let mut shell_ratio = 0.0f64;
        for d in &dirs {
            let q: Vec<f64> = spec.base_point.iter().zip(d).map(|(o, x)| o + r * x).collect();
            let g = grad_norm(spec, chart, &q);
            let h = hess_norm(spec, chart, &q)?;
            min_grad = min_grad.min(g);
            let scale = 1e-12 * (1.0 + spec.value(&q).abs());
            if g <= scale {
                violated = true;
                report
                    .notes
                    .push(format!("grad U vanishes numerically at radius {r} (growth condition violated)"));
                continue;
            }
            shell_ratio = shell_ratio.max(h / g);
        }
        max_ratio = max_ratio.max(shell_ratio);
        report.ac2_trend.push((r, shell_ratio));
    }
    let ratios: Vec<f64> = report.ac2_trend.iter().map(|p| p.1).collect();
    let monotone = ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let decays = ratios.last().unwrap() < ratios.first().unwrap() || ratios.iter().all(|&x| x == 0.0);
    report.ac1a_ok = Some(!violated);
    report.ac1a_min_grad = Some(min_grad);
    report.ac1b_max_ratio = Some(max_ratio);
    report.ac2_consistent = Some(monotone && decays && !violated);
    report.notes.push(if monotone && decays {
        "sampled shell ratios decrease: consistent with the decay condition (sampled, not a proof)".into()
    } else {
        "sampled shell ratios do not decrease (sampled)".into()
    });
    Ok(report)
}

/// `f = U / sqrt(1 + |grad U|²)`.
pub fn qb_function(spec: &PotentialSpec, chart: &MetricChart, q: &[f64]) -> f64 {
    let g = grad_norm(spec, chart, q);
    spec.value(q) / (1.0 + g * g).sqrt()
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lattice estimate of the distance between `{U = δ}` and
/// `Q_B = {f > √2 δ}`.
///
/// Shortest paths run over the full king-move neighbourhood with edge
/// lengths measured in the metric at the edge midpoint. Sources are the
/// interpolated crossings of `{U = δ}` along lattice edges.
pub fn estimate_qb_distance(spec: &PotentialSpec, chart: &MetricChart, delta: f64, lat: &Lattice) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain("delta must be positive".into()));
    }
    let n = lat.dim();
    let count = lat.node_count();
    let points: Vec<Vec<f64>> = (0..count).map(|f| lat.node_point(&lat.node_index(f))).collect();
    let u: Vec<f64> = points.iter().map(|q| spec.value(q)).collect();
    let threshold = std::f64::consts::SQRT_2 * delta;
    let target: Vec<bool> = points.iter().map(|q| qb_function(spec, chart, q) > threshold).collect();
    if !target.iter().any(|&t| t) {
        return Err(Error::Linking(format!("delta too large: Q_B is empty for delta = {delta}")));
    }

    let mut dist = vec![f64::INFINITY; count];
    let mut heap = BinaryHeap::new();
    let mut any_source = false;
    for flat in 0..count {
        let idx = lat.node_index(flat);
        for axis in 0..n {
            let Some(nb) = lat.shifted(&idx, axis, 1) else { continue };
            let other = lat.node_flat(&nb);
            let (a, b) = (u[flat] - delta, u[other] - delta);
            if (a > 0.0) == (b > 0.0) {
                continue;
            }
            any_source = true;
            let theta = a / (a - b);
            let mid: Vec<f64> = points[flat].iter().zip(&points[other]).map(|(x, y)| 0.5 * (x + y)).collect();
            let len = lat.spacing(axis) * chart.factor(&mid).0.sqrt();
            for (node, d) in [(flat, theta * len), (other, (1.0 - theta) * len)] {
                if d < dist[node] {
                    dist[node] = d;
                    heap.push(HeapEntry(d, node));
                }
            }
        }
    }
    if !any_source {
        return Err(Error::Linking("no zero level: U - delta does not change sign in the box".into()));
    }

    let offsets: Vec<Vec<isize>> = (0..3usize.pow(n as u32))
        .map(|mut c| {
            (0..n)
                .map(|_| {
                    let o = (c % 3) as isize - 1;
                    c /= 3;
                    o
                })
                .collect::<Vec<_>>()
        })
        .filter(|o| o.iter().any(|&x| x != 0))
        .collect();

    while let Some(HeapEntry(d, node)) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        if target[node] {
            return Ok(d);
        }
        let idx = lat.node_index(node);
        'next: for off in &offsets {
            let mut nb = idx.clone();
            let mut euclid = 0.0;
            for (axis, &o) in off.iter().enumerate() {
                if o == 0 {
                    continue;
                }
                match lat.shifted(&nb, axis, o) {
                    Some(s) => nb = s,
                    None => continue 'next,
                }
                euclid += lat.spacing(axis).powi(2);
            }
            let other = lat.node_flat(&nb);
            let mid: Vec<f64> = points[node].iter().zip(&points[other]).map(|(x, y)| 0.5 * (x + y)).collect();
            let nd = d + euclid.sqrt() * chart.factor(&mid).0.sqrt();
            if nd < dist[other] {
                dist[other] = nd;
                heap.push(HeapEntry(nd, other));
            }
        }
    }
    Err(Error::Linking("Q_B is not reachable from the level set {U = delta}".into()))
}

/// Largest `δ` for which the band `{|U| ≤ δ}` stays clear of near-critical
/// points of `U`: nodes where `|grad U|` drops below half of its minimum on
/// the zero level bound the admissible band.
pub fn isotopy_threshold(spec: &PotentialSpec, chart: &MetricChart, lat: &Lattice) -> Result<f64> {
    let zeros = zero_crossings(spec, lat, 0.0);
    if zeros.is_empty() {
        return Err(Error::Potential("zero level empty in box".into()));
    }
    let g0 = zeros
        .iter()
        .map(|q| grad_norm(spec, chart, q))
        .fold(f64::INFINITY, f64::min);
    let mut thr = f64::INFINITY;
    let mut umax = 0.0f64;
    for flat in 0..lat.node_count() {
        let q = lat.node_point(&lat.node_index(flat));
        let u = spec.value(&q);
        umax = umax.max(u.abs());
        if grad_norm(spec, chart, &q) < 0.5 * g0 {
            thr = thr.min(u.abs());
        }
    }
    Ok(if thr.is_finite() { thr } else { umax })
}

/// Maximum of `U` over the lattice nodes.
pub fn max_u(spec: &PotentialSpec, lat: &Lattice) -> f64 {
    (0..lat.node_count())
        .map(|f| spec.value(&lat.node_point(&lat.node_index(f))))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest `|grad U|` over the lattice nodes where `U ≥ 0`.
pub fn max_grad_on_negative_set(spec: &PotentialSpec, chart: &MetricChart, lat: &Lattice) -> f64 {
    (0..lat.node_count())
        .map(|f| lat.node_point(&lat.node_index(f)))
        .filter(|q| spec.value(q) >= 0.0)
        .map(|q| grad_norm(spec, chart, &q))
        .fold(0.0, f64::max)
}
