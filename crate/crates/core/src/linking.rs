//! Linking geometry: the parameters `δ, r, τ₀, τ₁`, the relative cycle, the
//! pushed chain and the initial minimax family with its frozen boundary.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::action::{action_parts, action_value, penalty, ActionPoint};
use crate::error::{Error, Result};
use crate::geometry::MetricChart;
use crate::grid::{BoxDomain, Lattice};
use crate::loops::{energy, potential_integral, Basis, FourierLoop};
use crate::potential::{estimate_qb_distance, grad_norm, isotopy_threshold, max_u, qb_function, PotentialSpec};

/// Parametric map of `[0,1]^k` into configuration space.
#[derive(Debug, Clone, PartialEq)]
pub enum CycleMap {
    Segment { a: Vec<f64>, b: Vec<f64> },
    /// Square-to-disk map onto the disk of the given radius in the plane of
    /// axes 0 and 1; the boundary of the square goes to the circle.
    Disk { centre: Vec<f64>, radius: f64 },
    /// Piecewise linear path through the points, uniformly parametrized per
    /// segment.
    Polyline { points: Vec<Vec<f64>> },
    /// Bilinear interpolation of an `n1 × n2` point grid (axis 0 fastest).
    Mesh { n1: usize, n2: usize, points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleSpec {
    pub degree: usize,
    pub map: CycleMap,
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

impl CycleSpec {
    pub fn new(map: CycleMap) -> Result<Self> {
        let degree = match &map {
            CycleMap::Segment { a, b } => {
                if a.len() != b.len() || a.is_empty() {
                    return Err(Error::Shape("segment endpoints differ in dimension".into()));
                }
                1
            }
            CycleMap::Disk { centre, radius } => {
                if centre.len() < 2 || !(*radius > 0.0) {
                    return Err(Error::Linking("disk cycle needs dimension >= 2 and positive radius".into()));
                }
                2
            }
            CycleMap::Polyline { points } => {
                if points.len() < 2 || points.iter().any(|p| p.len() != points[0].len()) {
                    return Err(Error::Shape("polyline needs at least two points of equal dimension".into()));
                }
                1
            }
            CycleMap::Mesh { n1, n2, points } => {
                if *n1 < 2 || *n2 < 2 || points.len() != n1 * n2 || points.iter().any(|p| p.len() != points[0].len()) {
                    return Err(Error::Shape("mesh needs n1*n2 >= 4 points of equal dimension".into()));
                }
                2
            }
        };
        Ok(Self { degree, map })
    }

    pub fn dim(&self) -> usize {
        match &self.map {
            CycleMap::Segment { a, .. } => a.len(),
            CycleMap::Disk { centre, .. } => centre.len(),
            CycleMap::Polyline { points } | CycleMap::Mesh { points, .. } => points[0].len(),
        }
    }

    pub fn eval(&self, s: &[f64]) -> Vec<f64> {
        match &self.map {
            CycleMap::Segment { a, b } => lerp(a, b, s[0]),
            CycleMap::Disk { centre, radius } => {
                let (u, v) = (2.0 * s[0] - 1.0, 2.0 * s[1] - 1.0);
                let mut p = centre.clone();
                p[0] += radius * u * (1.0 - 0.5 * v * v).sqrt();
                p[1] += radius * v * (1.0 - 0.5 * u * u).sqrt();
                p
            }
            CycleMap::Polyline { points } => {
                let m = points.len() - 1;
                let x = (s[0] * m as f64).clamp(0.0, m as f64);
                let i = (x.floor() as usize).min(m - 1);
                lerp(&points[i], &points[i + 1], x - i as f64)
            }
            CycleMap::Mesh { n1, n2, points } => {
                let locate = |s: f64, n: usize| {
                    let x = (s * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
                    let i = (x.floor() as usize).min(n - 2);
                    (i, x - i as f64)
                };
                let (i, a) = locate(s[0], *n1);
                let (j, b) = locate(s[1], *n2);
                let p = |i: usize, j: usize| &points[j * n1 + i];
                let lo = lerp(p(i, j), p(i + 1, j), a);
                let hi = lerp(p(i, j + 1), p(i + 1, j + 1), a);
                lerp(&lo, &hi, b)
            }
        }
    }

    /// Boundary in `{U ≤ -δ}`, interior meeting `{U > 0}`.
    pub fn validate(&self, spec: &PotentialSpec, delta: f64) -> Result<()> {
        if self.dim() != spec.dim() {
            return Err(Error::Shape("cycle dimension does not match potential".into()));
        }
        let n = 64;
        let grid = |i: usize| i as f64 / n as f64;
        let boundary: Vec<Vec<f64>> = match self.degree {
            1 => vec![vec![0.0], vec![1.0]],
            _ => (0..=n)
                .flat_map(|i| {
                    let t = grid(i);
                    [vec![t, 0.0], vec![t, 1.0], vec![0.0, t], vec![1.0, t]]
                })
                .collect(),
        };
        for s in &boundary {
            let q = self.eval(s);
            let u = spec.value(&q);
            if u > -delta {
                return Err(Error::Linking(format!(
                    "cycle boundary point {q:?} has U = {u:.4e} > -delta = {:.4e}",
                    -delta
                )));
            }
        }
        let interior_hits = match self.degree {
            1 => (1..n).any(|i| spec.value(&self.eval(&[grid(i)])) > 0.0),
            _ => (1..n).any(|i| (1..n).any(|j| spec.value(&self.eval(&[grid(i), grid(j)])) > 0.0)),
        };
        if !interior_hits {
            return Err(Error::Linking("cycle interior misses the negative set".into()));
        }
        Ok(())
    }

    /// `max U` over sampled cycle points.
    pub fn max_u(&self, spec: &PotentialSpec) -> f64 {
        let n = 64;
        let mut m = f64::NEG_INFINITY;
        for i in 0..=n {
            if self.degree == 1 {
                m = m.max(spec.value(&self.eval(&[i as f64 / n as f64])));
            } else {
                for j in 0..=n {
                    m = m.max(spec.value(&self.eval(&[i as f64 / n as f64, j as f64 / n as f64])));
                }
            }
        }
        m
    }
}

/// Distance from `centre` along `dir` to the first point with `U ≤ -2δ`.
fn walk_out(spec: &PotentialSpec, centre: &[f64], dir: &[f64], delta: f64) -> Result<f64> {
    let h = 1e-3;
    let mut t = 0.0;
    while t < 1e3 {
        t += h;
        let q: Vec<f64> = centre.iter().zip(dir).map(|(c, d)| c + t * d).collect();
        if spec.value(&q) <= -2.0 * delta {
            return Ok(t);
        }
    }
    Err(Error::Linking("no point with U <= -2 delta found along the cycle direction".into()))
}

/// The builtin relative cycle of a builtin problem: a segment through the
/// top of the well in 1D, a disk about the top of `U` for the harmonic
/// potential, and a radial segment across the annulus centred on its ridge.
pub fn builtin_cycle(spec: &PotentialSpec, delta: f64) -> Result<CycleSpec> {
    let cycle = match spec.builtin_tag.as_deref() {
        Some("well1d") => {
            let a = walk_out(spec, &[0.0], &[-1.0], delta)?;
            let b = walk_out(spec, &[0.0], &[1.0], delta)?;
            let r = a.max(b);
            CycleSpec::new(CycleMap::Segment { a: vec![-r], b: vec![r] })?
        }
        Some("harmonic2d") => {
            let mut r = 0.0f64;
            for j in 0..64 {
                let a = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
                r = r.max(walk_out(spec, &[0.0, 0.0], &[a.cos(), a.sin()], delta)?);
            }
            CycleSpec::new(CycleMap::Disk {
                centre: vec![0.0, 0.0],
                radius: r,
            })?
        }
        Some("annulus2d") => {
            let c = [2.5f64.sqrt(), 0.0];
            let a = walk_out(spec, &c, &[-1.0, 0.0], delta)?;
            let b = walk_out(spec, &c, &[1.0, 0.0], delta)?;
            let r = a.max(b);
            CycleSpec::new(CycleMap::Segment {
                a: vec![c[0] - r, 0.0],
                b: vec![c[0] + r, 0.0],
            })?
        }
        _ => return Err(Error::Linking("no builtin cycle for this potential; supply one in the config".into())),
    };
    cycle.validate(spec, delta)?;
    Ok(cycle)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkingParams {
    pub delta: f64,
    pub r: f64,
    pub tau0: f64,
    pub tau1: f64,
    /// `2 sqrt(r δ)`, the lower bound of the action on the barrier.
    pub barrier_floor: f64,
    pub qb_distance: f64,
    pub max_u: f64,
}

impl LinkingParams {
    /// Chooses `δ` and `r` from the sampled geometry of `U`. `τ₀` and `τ₁`
    /// depend on the cycle and the pushed chain and are set by
    /// [`LinkingParams::with_family_bounds`].
    pub fn select(
        spec: &PotentialSpec,
        chart: &MetricChart,
        bbox: &BoxDomain,
        grid_n: usize,
        delta_override: Option<f64>,
    ) -> Result<Self> {
        let lat = match chart.torus_periods() {
            Some(p) => Lattice::new(BoxDomain::new(vec![0.0; p.len()], p.to_vec())?, vec![grid_n; p.len()], vec![true; p.len()])?,
            None => Lattice::uniform(bbox.clone(), grid_n)?,
        };
        let umax = max_u(spec, &lat);
        if !(umax > 0.0) {
            return Err(Error::Linking("negative set empty: U <= 0 on the whole box".into()));
        }
        let delta = match delta_override {
            Some(d) if d > 0.0 => d,
            Some(d) => return Err(Error::Domain(format!("delta override must be positive, got {d}"))),
            None => (0.5 * isotopy_threshold(spec, chart, &lat)?).min(0.05 * umax),
        };
        let d = estimate_qb_distance(spec, chart, delta, &lat)?;
        if d <= lat.max_spacing() {
            return Err(Error::Linking(format!(
                "refine grid: Q_B distance {d:.3e} is below the grid spacing {:.3e}",
                lat.max_spacing()
            )));
        }
        let mut r = 0.4 * d * d;
        if let Some(p) = chart.torus_periods() {
            let pmin = p.iter().cloned().fold(f64::INFINITY, f64::min);
            r = r.min(0.49 * (0.5 * pmin).powi(2));
        }
        Ok(Self {
            delta,
            r,
            tau0: -2.0,
            tau1: 2.0,
            barrier_floor: 2.0 * (r * delta).sqrt(),
            qb_distance: d,
            max_u: umax,
        })
    }

    /// `τ₀ = min(-2, ln(½ barrier / max_{|c|} U))`,
    /// `τ₁ = max(2, ½ ln(2 ℰ_max / δ) + 1)`.
    pub fn with_family_bounds(mut self, cycle_max_u: f64, energy_max: f64) -> Self {
        self.tau0 = if cycle_max_u > 0.0 {
            (-2.0f64).min((0.5 * self.barrier_floor / cycle_max_u).ln())
        } else {
            -2.0
        };
        self.tau1 = if energy_max > 0.0 {
            2.0f64.max(0.5 * (2.0 * energy_max / self.delta).ln() + 1.0)
        } else {
            2.0
        };
        self
    }
}

/// Regular grid over `[0,1]^k` with `n` points per axis, axis 0 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    pub degree: usize,
    pub n: usize,
}

impl ParamGrid {
    pub fn len(&self) -> usize {
        self.n.pow(self.degree as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn index(&self, mut flat: usize) -> Vec<usize> {
        (0..self.degree)
            .map(|_| {
                let i = flat % self.n;
                flat /= self.n;
                i
            })
            .collect()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.index(flat).iter().map(|&i| i as f64 / (self.n - 1) as f64).collect()
    }

    pub fn on_boundary(&self, flat: usize) -> bool {
        self.index(flat).iter().any(|&i| i == 0 || i == self.n - 1)
    }
}

/// The homotopy from bare point loops on the cycle to the pushed chain.
/// `trajectories[s]` lists the loops of parameter node `s` in homotopy
/// order; boundary nodes have a single, constant entry.
#[derive(Debug, Clone)]
pub struct PushedCycle {
    pub grid: ParamGrid,
    pub points: Vec<Vec<f64>>,
    pub trajectories: Vec<Vec<FourierLoop>>,
    pub rho: f64,
}

impl PushedCycle {
    /// The loop of node `s` at homotopy fraction `f ∈ [0, 1]`.
    pub fn at(&self, s: usize, f: f64) -> &FourierLoop {
        let traj = &self.trajectories[s];
        let longest = self.trajectories.iter().map(Vec::len).max().unwrap_or(1);
        let k = (f * (longest - 1) as f64).round() as usize;
        &traj[k.min(traj.len() - 1)]
    }

    pub fn terminal(&self, s: usize) -> &FourierLoop {
        self.trajectories[s].last().unwrap()
    }

    pub fn max_energy(&self, chart: &MetricChart) -> f64 {
        self.trajectories
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| energy(x, chart))
            .fold(0.0, f64::max)
    }
}

const GROWTH_STEPS: usize = 4;
const MAX_FLOW_STEPS: usize = 4000;

fn perturbation(basis: &Arc<Basis>, n: usize, rho: f64) -> FourierLoop {
    let origin = vec![0.0; n];
    // Half a node of phase keeps the 1D perturbation off the sample nodes
    // where it would vanish.
    FourierLoop::circle(basis.clone(), &origin, rho).time_shift(0.5 / basis.samples() as f64)
}

/// Flows one loop's sample points down `U` until the projected loop has
/// `𝒰 ≤ -δ/2`. Points stop once `U ≤ -margin·δ`; the margin grows if the
/// projected loop is not yet low enough.
fn flow_loop(
    start: &FourierLoop,
    spec: &PotentialSpec,
    chart: &MetricChart,
    delta: f64,
) -> Result<Vec<FourierLoop>> {
    let n = start.dim();
    let basis = start.basis().clone();
    let big_m = basis.samples();
    let mut q = start.samples().x;
    let mut out = Vec::new();
    let mut margin = 1.0;
    let mut steps = 0;
    let mut du = vec![0.0; n];
    loop {
        let mut moved = false;
        for j in 0..big_m {
            let p = &mut q[j * n..(j + 1) * n];
            if spec.value(p) <= -margin * delta {
                continue;
            }
            spec.covector(p, &mut du);
            let g = chart.metric_gradient(p, &du)?;
            let gn = grad_norm(spec, chart, p);
            let s = 0.2 / gn.max(1.0);
            for i in 0..n {
                p[i] -= s * g[i];
            }
            moved = true;
        }
        if moved {
            steps += 1;
            out.push(FourierLoop::from_samples(n, basis.clone(), &q)?);
            if steps >= MAX_FLOW_STEPS {
                return Err(Error::Linking("stuck near critical point — increase rho".into()));
            }
            continue;
        }
        let last = out.last().cloned().unwrap_or_else(|| start.clone());
        if potential_integral(&last, spec) <= -0.5 * delta {
            if out.is_empty() {
                out.push(last);
            }
            return Ok(out);
        }
        margin *= 2.0;
        if margin > 64.0 {
            return Err(Error::Linking("stuck near critical point — increase rho".into()));
        }
    }
}

/// Pushes the cycle off the sublevel `{𝒰 > -δ/2}`: point loops grow a small
/// perturbation loop of radius `ρ`, then their sample points follow the
/// downward gradient flow of `U`, frozen once in `{U ≤ -δ}`. Loops over the
/// cycle boundary stay put.
pub fn push_cycle(
    cycle: &CycleSpec,
    spec: &PotentialSpec,
    chart: &MetricChart,
    delta: f64,
    rho: f64,
    basis: &Arc<Basis>,
    n_s: usize,
) -> Result<PushedCycle> {
    if !(rho > 0.0) {
        return Err(Error::Domain("perturbation radius must be positive".into()));
    }
    if n_s < 3 {
        return Err(Error::Domain("need at least three cycle nodes per axis".into()));
    }
    let n = cycle.dim();
    let grid = ParamGrid { degree: cycle.degree, n: n_s };
    let points: Vec<Vec<f64>> = (0..grid.len()).map(|s| cycle.eval(&grid.point(s))).collect();
    let pert = perturbation(basis, n, rho);
    let trajectories: Result<Vec<Vec<FourierLoop>>> = (0..grid.len())
        .into_par_iter()
        .map(|s| {
            let bare = FourierLoop::constant(basis.clone(), &points[s]);
            if grid.on_boundary(s) {
                return Ok(vec![bare]);
            }
            let mut traj = vec![bare.clone()];
            for i in 1..=GROWTH_STEPS {
                traj.push(bare.axpy(i as f64 / GROWTH_STEPS as f64, &pert));
            }
            let flowed = flow_loop(traj.last().unwrap(), spec, chart, delta)?;
            traj.extend(flowed);
            Ok(traj)
        })
        .collect();
    Ok(PushedCycle {
        grid,
        points,
        trajectories: trajectories?,
        rho,
    })
}

/// Family of action points over `(s, σ)`, stored `[σ * S + s]`.
#[derive(Debug, Clone)]
pub struct MinimaxFamily {
    pub grid: ParamGrid,
    pub n_sigma: usize,
    pub nodes: Vec<ActionPoint>,
    pub frozen: Vec<bool>,
    pub params: LinkingParams,
    /// Parameter nodes whose cycle point lies in `Q_B`.
    pub qb_lines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyCertificate {
    pub sup_frozen: f64,
    pub max_family: f64,
    pub barrier_floor: f64,
    pub qb_lines: usize,
    pub crossing_lines: usize,
    /// `K₁ = barrier floor`, `K₂ = max over the initial family`.
    pub k1: f64,
    pub k2: f64,
}

impl MinimaxFamily {
    pub fn node(&self, s: usize, sigma: usize) -> &ActionPoint {
        &self.nodes[sigma * self.grid.len() + s]
    }

    pub fn index(&self, s: usize, sigma: usize) -> usize {
        sigma * self.grid.len() + s
    }

    pub fn split(&self, flat: usize) -> (usize, usize) {
        (flat % self.grid.len(), flat / self.grid.len())
    }

    pub fn values(&self, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<Vec<f64>> {
        self.nodes.par_iter().map(|p| action_value(p, spec, chart, eps)).collect()
    }

    /// `(sup over frozen nodes, index of the maximizer)`.
    pub fn frozen_sup(&self, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<(f64, usize)> {
        let v = self.values(spec, chart, eps)?;
        Ok(argmax(v.iter().zip(&self.frozen).map(|(&x, &f)| if f { x } else { f64::NEG_INFINITY })))
    }

    /// Largest `P(τ)` over frozen nodes.
    pub fn frozen_max_penalty(&self) -> Result<f64> {
        let mut m = 0.0f64;
        for (p, &f) in self.nodes.iter().zip(&self.frozen) {
            if f {
                m = m.max(penalty(p.tau)?);
            }
        }
        Ok(m)
    }

    /// `ε₀ = min(0.1·barrier, ½(barrier - sup_A L₀) / max_A P)`: the frozen
    /// nodes stay below the barrier at every `ε ≤ ε₀`.
    pub fn initial_eps(&self, spec: &PotentialSpec, chart: &MetricChart) -> Result<f64> {
        let (sup0, _) = self.frozen_sup(spec, chart, 0.0)?;
        let b = self.params.barrier_floor;
        Ok((0.1 * b).min(0.5 * (b - sup0) / self.frozen_max_penalty()?))
    }

    /// The invariants of a linking family at `ε`.
    pub fn certify(&self, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<FamilyCertificate> {
        let v = self.values(spec, chart, eps)?;
        let b = self.params.barrier_floor;
        let (sup_frozen, worst) = argmax(v.iter().zip(&self.frozen).map(|(&x, &f)| if f { x } else { f64::NEG_INFINITY }));
        if !(sup_frozen < b) {
            let (s, sigma) = self.split(worst);
            return Err(Error::Linking(format!(
                "linking not established: frozen node (s={s}, sigma={sigma}) has action {sup_frozen:.6e} >= barrier {b:.6e}"
            )));
        }
        let (max_family, _) = argmax(v.iter().copied());
        if !(max_family >= b) {
            return Err(Error::Linking(format!(
                "linking not established: family maximum {max_family:.6e} below barrier {b:.6e}"
            )));
        }
        let mut crossing = 0;
        for &s in &self.qb_lines {
            let e: Vec<f64> = (0..self.n_sigma).map(|k| action_parts(&self.node(s, k).x, spec, chart).0).collect();
            if e[0] <= self.params.r && e.iter().any(|&x| x >= self.params.r) {
                crossing += 1;
            } else {
                return Err(Error::Linking(format!(
                    "linking not established: line s={s} starts in Q_B but never crosses energy r = {:.4e}",
                    self.params.r
                )));
            }
        }
        if self.qb_lines.is_empty() {
            return Err(Error::Linking("linking not established: no family line starts in Q_B".into()));
        }
        Ok(FamilyCertificate {
            sup_frozen,
            max_family,
            barrier_floor: b,
            qb_lines: self.qb_lines.len(),
            crossing_lines: crossing,
            k1: b,
            k2: max_family,
        })
    }
}

/// Maximum and lowest index attaining it.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, v) in values.enumerate() {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// σ-node counts of the three blocks: τ ramp on point loops, the push
/// homotopy at `τ = 0`, and the τ ramp on the pushed chain.
pub const DEFAULT_BLOCKS: [usize; 3] = [5, 9, 7];

/// Assembles the family and checks its linking invariants at `ε = 0`.
pub fn build_family(
    pushed: &PushedCycle,
    spec: &PotentialSpec,
    chart: &MetricChart,
    params: LinkingParams,
    blocks: [usize; 3],
) -> Result<(MinimaxFamily, FamilyCertificate)> {
    if blocks.iter().any(|&b| b < 2) {
        return Err(Error::Domain("each family block needs at least two sigma nodes".into()));
    }
    let grid = pushed.grid.clone();
    let ns = grid.len();
    let n_sigma = blocks[0] + blocks[1] + blocks[2] - 2;
    let mut nodes = Vec::with_capacity(ns * n_sigma);
    for sigma in 0..n_sigma {
        for s in 0..ns {
            let bare = &pushed.trajectories[s][0];
            let (x, tau) = if sigma < blocks[0] {
                let f = sigma as f64 / (blocks[0] - 1) as f64;
                (bare.clone(), params.tau0 * (1.0 - f))
            } else if sigma < blocks[0] + blocks[1] - 1 {
                let f = (sigma + 1 - blocks[0]) as f64 / (blocks[1] - 1) as f64;
                (pushed.at(s, f).clone(), 0.0)
            } else {
                let f = (sigma + 2 - blocks[0] - blocks[1]) as f64 / (blocks[2] - 1) as f64;
                (pushed.terminal(s).clone(), params.tau1 * f)
            };
            nodes.push(ActionPoint::new(x, tau));
        }
    }
    let frozen: Vec<bool> = (0..ns * n_sigma)
        .map(|i| {
            let (s, sigma) = (i % ns, i / ns);
            grid.on_boundary(s) || sigma == 0 || sigma == n_sigma - 1
        })
        .collect();
    let threshold = std::f64::consts::SQRT_2 * params.delta;
    let qb_lines = (0..ns)
        .filter(|&s| !grid.on_boundary(s) && qb_function(spec, chart, &pushed.points[s]) > threshold)
        .collect();
    let family = MinimaxFamily {
        grid,
        n_sigma,
        nodes,
        frozen,
        params,
        qb_lines,
    };
    let cert = family.certify(spec, chart, 0.0)?;
    Ok((family, cert))
}

/// Everything the solver needs to start the minimax stage.
#[derive(Debug, Clone)]
pub struct LinkingSetup {
    pub cycle: CycleSpec,
    pub family: MinimaxFamily,
    pub certificate: FamilyCertificate,
    pub eps0: f64,
    pub rho: f64,
}

/// Selects parameters, pushes the cycle (retrying once at twice the
/// perturbation radius) and builds the certified family.
#[allow(clippy::too_many_arguments)]
pub fn setup(
    spec: &PotentialSpec,
    chart: &MetricChart,
    bbox: &BoxDomain,
    grid_n: usize,
    delta_override: Option<f64>,
    cycle: Option<CycleSpec>,
    rho: Option<f64>,
    basis: &Arc<Basis>,
    n_s: Option<usize>,
    blocks: [usize; 3],
) -> Result<LinkingSetup> {
    let base = LinkingParams::select(spec, chart, bbox, grid_n, delta_override)?;
    let cycle = match cycle {
        Some(c) => {
            c.validate(spec, base.delta)?;
            c
        }
        None => builtin_cycle(spec, base.delta)?,
    };
    let n_s = n_s.unwrap_or(if cycle.degree == 1 { 9 } else { 5 });
    let h = bbox.diameter() / (grid_n as f64 * (bbox.dim() as f64).sqrt());
    let rho0 = rho.unwrap_or(2.0 * h);
    let pushed = match push_cycle(&cycle, spec, chart, base.delta, rho0, basis, n_s) {
        Ok(p) => p,
        Err(Error::Linking(m)) if m.starts_with("stuck") => push_cycle(&cycle, spec, chart, base.delta, 2.0 * rho0, basis, n_s)?,
        Err(e) => return Err(e),
    };
    let params = base.with_family_bounds(cycle.max_u(spec), pushed.max_energy(chart));
    let (family, certificate) = build_family(&pushed, spec, chart, params, blocks)?;
    let eps0 = family.initial_eps(spec, chart)?;
    let rho = pushed.rho;
    Ok(LinkingSetup {
        cycle,
        family,
        certificate,
        eps0,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> Arc<Basis> {
        Basis::new(16, 128).unwrap()
    }

    #[test]
    fn disk_map_sends_square_boundary_to_circle() {
        let c = CycleSpec::new(CycleMap::Disk {
            centre: vec![0.5, -0.5],
            radius: 2.0,
        })
        .unwrap();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            for s in [[t, 0.0], [t, 1.0], [0.0, t], [1.0, t]] {
                let p = c.eval(&s);
                let r = ((p[0] - 0.5).powi(2) + (p[1] + 0.5).powi(2)).sqrt();
                assert!((r - 2.0).abs() < 1e-12);
            }
        }
        assert_eq!(c.eval(&[0.5, 0.5]), vec![0.5, -0.5]);
    }

    #[test]
    fn polyline_and_mesh_interpolate() {
        let p = CycleSpec::new(CycleMap::Polyline {
            points: vec![vec![0.0], vec![1.0], vec![3.0]],
        })
        .unwrap();
        assert_eq!(p.eval(&[0.25]), vec![0.5]);
        assert_eq!(p.eval(&[0.75]), vec![2.0]);
        let m = CycleSpec::new(CycleMap::Mesh {
            n1: 2,
            n2: 2,
            points: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
        })
        .unwrap();
        assert_eq!(m.eval(&[0.25, 0.5]), vec![0.25, 0.5]);
        assert_eq!(m.degree, 2);
    }

    #[test]
    fn builtin_cycles_are_valid() {
        for (spec, delta) in [
            (PotentialSpec::well1d(1.0), 0.05),
            (PotentialSpec::harmonic2d(1.0), 0.05),
            (PotentialSpec::annulus2d(0.0), 0.02),
        ] {
            let c = builtin_cycle(&spec, delta).unwrap();
            c.validate(&spec, delta).unwrap();
        }
        let p = PotentialSpec::polynomial(crate::potential::Polynomial::zero(2), 1.0);
        assert!(builtin_cycle(&p, 0.1).is_err());
    }

    #[test]
    fn parameters_are_self_certifying() {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let p = LinkingParams::select(&spec, &chart, &BoxDomain::cube(2, 2.0), 128, Some(0.05)).unwrap();
        let p = p.with_family_bounds(1.0, 50.0);
        assert!(p.tau0 <= -2.0);
        assert!(p.tau0.exp() * 1.0 < p.barrier_floor);
        assert!((p.barrier_floor - 2.0 * (p.r * p.delta).sqrt()).abs() < 1e-15);
        assert!((2.0 * p.r).sqrt() < 2.0 * p.qb_distance);
        assert!(p.tau1 >= 2.0);
    }

    #[test]
    fn empty_negative_set_is_rejected() {
        let v = crate::potential::Polynomial::from_terms(2, &[(&[2, 0], 1.0), (&[0, 2], 1.0)]).unwrap();
        let spec = PotentialSpec::polynomial(v, -1.0);
        let err = LinkingParams::select(&spec, &MetricChart::euclidean(2), &BoxDomain::cube(2, 2.0), 32, None).unwrap_err();
        assert!(matches!(err, Error::Linking(m) if m.contains("negative set empty")));
    }

    #[test]
    fn pushed_well_cycle_reaches_low_potential() {
        let spec = PotentialSpec::well1d(1.0);
        let chart = MetricChart::euclidean(1);
        let delta = 0.05;
        let c = builtin_cycle(&spec, delta).unwrap();
        let pushed = push_cycle(&c, &spec, &chart, delta, 0.03, &basis(), 9).unwrap();
        for s in 0..pushed.grid.len() {
            assert!(potential_integral(pushed.terminal(s), &spec) <= -0.5 * delta);
        }
        // Endpoint loops never move.
        assert_eq!(pushed.trajectories[0].len(), 1);
        assert_eq!(pushed.trajectories[8].len(), 1);
    }

    #[test]
    fn pushed_disk_cycle_reaches_low_potential() {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let delta = 0.05;
        let c = builtin_cycle(&spec, delta).unwrap();
        let pushed = push_cycle(&c, &spec, &chart, delta, 0.03, &basis(), 5).unwrap();
        for s in 0..pushed.grid.len() {
            assert!(potential_integral(pushed.terminal(s), &spec) <= -0.5 * delta);
        }
    }

    #[test]
    fn well_family_links() {
        let spec = PotentialSpec::well1d(1.0);
        let chart = MetricChart::euclidean(1);
        let setup = setup(&spec, &chart, &BoxDomain::cube(1, 2.0), 256, None, None, None, &basis(), None, DEFAULT_BLOCKS).unwrap();
        let cert = &setup.certificate;
        assert!(cert.sup_frozen < cert.barrier_floor && cert.barrier_floor <= cert.max_family);
        assert!(setup.eps0 > 0.0);
        let (sup, _) = setup.family.frozen_sup(&spec, &chart, setup.eps0).unwrap();
        assert!(sup < cert.barrier_floor);
    }

    #[test]
    fn misplaced_tau0_breaks_linking() {
        let spec = PotentialSpec::well1d(1.0);
        let chart = MetricChart::euclidean(1);
        let b = basis();
        let base = LinkingParams::select(&spec, &chart, &BoxDomain::cube(1, 2.0), 256, None).unwrap();
        let c = builtin_cycle(&spec, base.delta).unwrap();
        let pushed = push_cycle(&c, &spec, &chart, base.delta, 0.03, &b, 9).unwrap();
        let mut params = base.with_family_bounds(c.max_u(&spec), pushed.max_energy(&chart));
        params.tau0 = 0.0;
        let err = build_family(&pushed, &spec, &chart, params, DEFAULT_BLOCKS).unwrap_err();
        assert!(matches!(err, Error::Linking(m) if m.contains("linking not established")));
    }
}
