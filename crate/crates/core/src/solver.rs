//! Critical points of the penalized action: minimax deformation of the
//! linking family, Levenberg–Marquardt refinement and continuation in `ε`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{action_gradient, action_parts, action_value, residual_report, ActionPoint, ResidualReport};
use crate::error::{Error, Result};
use crate::geometry::MetricChart;
use crate::grid::BoxDomain;
use crate::homology::{check_lnk, relative_betti_mod2, CubicalPair};
use crate::linking::{argmax, setup, CycleSpec, FamilyCertificate, LinkingParams, LinkingSetup, MinimaxFamily, DEFAULT_BLOCKS};
use crate::loops::{h1_inner, Basis, FourierLoop};
use crate::potential::{check_asymptotic, check_reg, HypothesisReport, PotentialSpec};
use crate::verify::{reconstruct, shooting_crosscheck, CriticalOrbit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Starting penalty weight; chosen from the family when absent.
    pub eps0: Option<f64>,
    pub eps_factor: f64,
    pub eps_min: f64,
    pub tol_deform: f64,
    pub tol_newton: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub step_init: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub energy_min: f64,
    /// Sweeps without a relative drop of the family maximum above `1e-10`
    /// before the deformation stops.
    pub patience: usize,
    /// Scale descent steps by `1/|grad|²` as in the normalized flow.
    pub normalized_flow: bool,
    pub progress: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps0: None,
            eps_factor: 0.3,
            eps_min: 1e-6,
            tol_deform: 1e-3,
            tol_newton: 1e-9,
            max_outer: 400,
            max_newton: 60,
            step_init: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            tau_min: -50.0,
            tau_max: 50.0,
            energy_min: 1e-6,
            patience: 25,
            normalized_flow: false,
            progress: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(format!("solver config: {m}")));
        if !(self.eps_factor > 0.0 && self.eps_factor < 1.0) {
            return bad("eps_factor must lie in (0, 1)");
        }
        if !(self.eps_min > 0.0) {
            return bad("eps_min must be positive");
        }
        if let Some(e) = self.eps0 {
            if !(e >= self.eps_min) {
                return bad("eps0 must be at least eps_min");
            }
        }
        if !(self.tol_deform > 0.0 && self.tol_newton > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0 && self.armijo > 0.0 && self.armijo < 1.0 && self.step_init > 0.0) {
            return bad("line search parameters out of range");
        }
        if !(self.tau_min < self.tau_max) {
            return bad("tau_min must be below tau_max");
        }
        Ok(())
    }

    fn log(&self, msg: impl FnOnce() -> String) {
        if self.progress {
            eprintln!("{}", msg());
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPointRecord {
    #[serde(skip)]
    pub point: ActionPoint,
    pub tau: f64,
    pub eps: f64,
    pub value: f64,
    pub grad_norm: f64,
    pub residuals: ResidualReport,
    pub newton_iters: usize,
    /// `(ε, τ)` over the continuation stages leading to this record.
    pub tau_history: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct DeformOutcome {
    pub candidate: ActionPoint,
    pub index: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub sweeps: usize,
    pub max_history: Vec<f64>,
}

/// Product inner product on `(loop field, τ)` pairs.
fn pair_dot(a: (&FourierLoop, f64), b: (&FourierLoop, f64)) -> f64 {
    h1_inner(a.0, b.0).unwrap_or(0.0) + a.1 * b.1
}

/// Node-wise descent of the family with its frozen boundary held fixed.
///
/// Free nodes above the barrier move along the negative gradient with the
/// loop mean held and the component along the σ-line removed; steps are
/// Armijo line searches on `L_ε`. After each sweep the σ-lines are
/// resampled to equal arclength so they stay resolved near the pass. Once
/// the family maximum levels off, the argmax node climbs: it ascends along
/// its σ-line and in its mean and descends otherwise, converging onto the
/// saddle while the remaining nodes keep descending.
pub fn minimax_deform(
    family: &mut MinimaxFamily,
    spec: &PotentialSpec,
    chart: &MetricChart,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<DeformOutcome> {
    let ns = family.grid.len();
    let total = family.nodes.len();
    let barrier = family.params.barrier_floor;
    let mut values = family.values(spec, chart, eps)?;
    let mut steps = vec![cfg.step_init; total];
    let (mut fmax, mut idx) = argmax(values.iter().copied());
    let mut history = vec![fmax];
    let mut best: Option<(f64, usize, ActionPoint)> = None;
    let mut stall = 0;
    let mut sweeps = 0;
    let mut climber: Option<usize> = None;

    loop {
        let focus = climber.unwrap_or(idx);
        let g = action_gradient(&family.nodes[focus], spec, chart, eps)?.norm;
        if best.as_ref().map_or(true, |b| g < b.0) {
            best = Some((g, focus, family.nodes[focus].clone()));
        }
        cfg.log(|| format!("[minimax] sweep {sweeps} eps {eps:.3e} max {fmax:.10e} argmax {idx} focus {focus} |grad| {g:.3e}"));
        if g <= cfg.tol_deform {
            return Ok(DeformOutcome {
                candidate: family.nodes[focus].clone(),
                index: focus,
                grad_norm: g,
                converged: true,
                sweeps,
                max_history: history,
            });
        }
        if sweeps >= cfg.max_outer || stall >= cfg.patience {
            let (g, index, candidate) = best.unwrap();
            cfg.log(|| format!("[minimax] stopped unconverged after {sweeps} sweeps, best |grad| {g:.3e}"));
            return Ok(DeformOutcome {
                candidate,
                index,
                grad_norm: g,
                converged: false,
                sweeps,
                max_history: history,
            });
        }

        if climber.is_none()
            && history.len() > CLIMB_AFTER
            && history[history.len() - 1 - CLIMB_AFTER] - fmax <= 1e-3 * (1.0 + fmax.abs())
        {
            climber = Some(idx);
        }
        let pinned = climber.unwrap_or(usize::MAX);
        let nodes = &family.nodes;
        let frozen = &family.frozen;
        let updates: Vec<Option<(ActionPoint, f64, f64)>> = (0..total)
            .into_par_iter()
            .map(|i| -> Result<Option<(ActionPoint, f64, f64)>> {
                if frozen[i] || values[i] < barrier {
                    return Ok(None);
                }
                let p = &nodes[i];
                let grad = action_gradient(p, spec, chart, eps)?;
                let (prev, next) = (&nodes[i - ns], &nodes[i + ns]);
                let tx = without_mean(next.x.axpy(-1.0, &prev.x));
                let tt = next.tau - prev.tau;
                let tn = pair_dot((&tx, tt), (&tx, tt));
                let mut dx = without_mean(grad.xi.clone());
                let mut dt = grad.dtau;
                if tn > 1e-24 {
                    let c = pair_dot((&dx, dt), (&tx, tt)) / tn;
                    dx = dx.axpy(-c, &tx);
                    dt -= c * tt;
                }
                if i == pinned {
                    return climb(p, &grad.xi, grad.dtau, grad.norm, (&tx, tt), steps[i], spec, chart, eps, cfg);
                }
                let slope = pair_dot((&grad.xi, grad.dtau), (&dx, dt));
                if !(slope > 0.0) {
                    return Ok(None);
                }
                let mut alpha = steps[i];
                if cfg.normalized_flow {
                    alpha /= grad.norm * grad.norm;
                }
                let dn = pair_dot((&dx, dt), (&dx, dt)).sqrt();
                if alpha * dn > MAX_MOVE {
                    alpha = MAX_MOVE / dn;
                }
                let l0 = values[i];
                for _ in 0..40 {
                    let tau = p.tau - alpha * dt;
                    if tau >= cfg.tau_min && tau <= cfg.tau_max {
                        let trial = ActionPoint::new(p.x.axpy(-alpha, &dx), tau);
                        let l = action_value(&trial, spec, chart, eps)?;
                        if l <= l0 - cfg.armijo * alpha * slope {
                            return Ok(Some((trial, l, alpha)));
                        }
                    }
                    alpha *= cfg.backtrack;
                }
                Ok(None)
            })
            .collect::<Result<_>>()?;

        for (i, u) in updates.into_iter().enumerate() {
            if let Some((p, l, alpha)) = u {
                let first_try = alpha >= steps[i] * (1.0 - 1e-12) || cfg.normalized_flow;
                steps[i] = if first_try { (2.0 * alpha).min(1e3) } else { alpha };
                family.nodes[i] = p;
                values[i] = l;
            } else if !family.frozen[i] && values[i] >= barrier {
                steps[i] = (steps[i] * cfg.backtrack).max(1e-12);
            }
        }
        sweeps += 1;
        let (m, _) = argmax(values.iter().enumerate().filter(|&(i, _)| i != pinned).map(|(_, &v)| v));
        if m > fmax + 1e-12 * (1.0 + fmax.abs()) {
            return Err(Error::Solver(format!("family maximum increased from {fmax:.12e} to {m:.12e}")));
        }
        reparametrize(family, &values, barrier, pinned);
        values = family.values(spec, chart, eps)?;
        let (m, j) = argmax(values.iter().copied());
        if m < barrier {
            return Err(Error::Solver(format!(
                "linking violated numerically: family maximum {m:.6e} below barrier {barrier:.6e}"
            )));
        }
        if (fmax - m).abs() <= 1e-10 * (1.0 + fmax.abs()) {
            stall += 1;
        } else {
            stall = 0;
        }
        fmax = m;
        idx = j;
        history.push(m);
    }
}

/// One step of the climbing node: ascent along the σ-line and in the mean
/// of the loop, descent in the remaining directions, accepted when the
/// gradient norm drops.
#[allow(clippy::too_many_arguments)]
fn climb(
    p: &ActionPoint,
    gx: &FourierLoop,
    gt: f64,
    gnorm: f64,
    tangent: (&FourierLoop, f64),
    step: f64,
    spec: &PotentialSpec,
    chart: &MetricChart,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<Option<(ActionPoint, f64, f64)>> {
    let free = without_mean(gx.clone());
    let tn = pair_dot(tangent, tangent);
    let (mut dx, mut dt) = (free.axpy(-1.0, &gx.axpy(-1.0, &free)), gt);
    if tn > 1e-24 {
        let c = 2.0 * pair_dot((&free, gt), tangent) / tn;
        dx = dx.axpy(-c, tangent.0);
        dt -= c * tangent.1;
    }
    let dn = pair_dot((&dx, dt), (&dx, dt)).sqrt();
    if !(dn > 0.0) {
        return Ok(None);
    }
    let mut alpha = step.min(MAX_MOVE / dn);
    for _ in 0..30 {
        let tau = p.tau - alpha * dt;
        if tau >= cfg.tau_min && tau <= cfg.tau_max {
            let trial = ActionPoint::new(p.x.axpy(-alpha, &dx), tau);
            if action_gradient(&trial, spec, chart, eps)?.norm < gnorm {
                let l = action_value(&trial, spec, chart, eps)?;
                return Ok(Some((trial, l, alpha)));
            }
        }
        alpha *= cfg.backtrack;
    }
    Ok(None)
}

/// Drops the constant Fourier mode, which holds the loop's mean.
fn without_mean(mut x: FourierLoop) -> FourierLoop {
    let n = x.dim();
    x.coeffs[..n].iter_mut().for_each(|c| *c = 0.0);
    x
}

/// Sweeps over which the family maximum must have levelled off before the
/// argmax node starts climbing.
const CLIMB_AFTER: usize = 10;

/// Longest single descent move of a node in the `H¹ × ℝ` metric.
const MAX_MOVE: f64 = 0.25;

/// Redistributes nodes of every σ-line to equal arclength in the `H¹ × ℝ`
/// metric. Only runs of nodes at or above `level` move, together with the
/// segments joining them to their settled neighbours, which stay fixed.
fn reparametrize(family: &mut MinimaxFamily, values: &[f64], level: f64, pinned: usize) {
    let ns = family.grid.len();
    let n = family.n_sigma;
    let moved: Vec<Vec<(usize, ActionPoint)>> = (0..ns)
        .into_par_iter()
        .filter(|&s| !family.grid.on_boundary(s))
        .map(|s| {
            let mut out = Vec::new();
            let mut k = 1;
            while k < n - 1 {
                let idle = |j: usize| values[family.index(s, j)] < level || family.index(s, j) == pinned;
                if idle(k) {
                    k += 1;
                    continue;
                }
                let a = k - 1;
                let mut b = k;
                while b < n - 1 && !idle(b) {
                    b += 1;
                }
                let line: Vec<&ActionPoint> = (a..=b).map(|j| family.node(s, j)).collect();
                for (j, p) in resample(&line).into_iter().enumerate() {
                    out.push((family.index(s, a + 1 + j), p));
                }
                k = b + 1;
            }
            out
        })
        .collect();
    for (i, p) in moved.into_iter().flatten() {
        family.nodes[i] = p;
    }
}

/// Interior points at equal arclength along the polygon through `line`.
fn resample(line: &[&ActionPoint]) -> Vec<ActionPoint> {
    let n = line.len();
    let mut cum = vec![0.0; n];
    for k in 1..n {
        let dx = line[k].x.axpy(-1.0, &line[k - 1].x);
        let dt = line[k].tau - line[k - 1].tau;
        cum[k] = cum[k - 1] + pair_dot((&dx, dt), (&dx, dt)).sqrt();
    }
    let total = cum[n - 1];
    if !(total > 0.0) {
        return line[1..n - 1].iter().map(|&p| p.clone()).collect();
    }
    let mut out = Vec::with_capacity(n - 2);
    let mut i = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while i + 2 < n && cum[i + 1] < target {
            i += 1;
        }
        let span = cum[i + 1] - cum[i];
        let w = if span > 0.0 { ((target - cum[i]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let x = line[i].x.axpy(w, &line[i + 1].x.axpy(-1.0, &line[i].x));
        out.push(ActionPoint::new(x, line[i].tau + w * (line[i + 1].tau - line[i].tau)));
    }
    out
}

/// Coordinates in which the Euclidean norm is the H¹ × ℝ norm.
fn to_unknowns(p: &ActionPoint) -> DVector<f64> {
    let n = p.x.dim();
    let mut z = DVector::zeros(p.x.coeffs.len() + 1);
    for (k, c) in p.x.coeffs.iter().enumerate() {
        z[k] = Basis::h1_weight(k / n).sqrt() * c;
    }
    z[p.x.coeffs.len()] = p.tau;
    z
}

fn from_unknowns(template: &FourierLoop, z: &DVector<f64>) -> ActionPoint {
    let n = template.dim();
    let mut x = template.clone();
    for (k, c) in x.coeffs.iter_mut().enumerate() {
        *c = z[k] / Basis::h1_weight(k / n).sqrt();
    }
    ActionPoint::new(x, z[z.len() - 1])
}

/// The gradient in the same orthonormal coordinates.
fn residual(p: &ActionPoint, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<DVector<f64>> {
    let g = action_gradient(p, spec, chart, eps)?;
    let n = p.x.dim();
    let mut r = DVector::zeros(g.xi.coeffs.len() + 1);
    for (k, c) in g.xi.coeffs.iter().enumerate() {
        r[k] = Basis::h1_weight(k / n).sqrt() * c;
    }
    r[g.xi.coeffs.len()] = g.dtau;
    Ok(r)
}

fn jacobian(z: &DVector<f64>, template: &FourierLoop, spec: &PotentialSpec, chart: &MetricChart, eps: f64) -> Result<DMatrix<f64>> {
    let dim = z.len();
    let columns: Vec<DVector<f64>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let h = 1e-6 * z[j].abs().max(1.0);
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let rp = residual(&from_unknowns(template, &zp), spec, chart, eps)?;
            let rm = residual(&from_unknowns(template, &zm), spec, chart, eps)?;
            Ok((rp - rm) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let mut jac = DMatrix::from_columns(&columns);
    // The exact Jacobian is a Hessian in orthonormal coordinates.
    let t = jac.transpose();
    jac = (jac + t) * 0.5;
    Ok(jac)
}

fn make_record(point: ActionPoint, spec: &PotentialSpec, chart: &MetricChart, eps: f64, iters: usize) -> Result<CriticalPointRecord> {
    let value = action_value(&point, spec, chart, eps)?;
    let grad_norm = action_gradient(&point, spec, chart, eps)?.norm;
    let residuals = residual_report(&point, spec, chart, eps)?;
    Ok(CriticalPointRecord {
        tau: point.tau,
        point,
        eps,
        value,
        grad_norm,
        residuals,
        newton_iters: iters,
        tau_history: Vec::new(),
    })
}

/// Damped Newton (Levenberg–Marquardt) on `grad L_ε = 0` with a
/// finite-difference Jacobian.
pub fn newton_refine(
    seed: &ActionPoint,
    spec: &PotentialSpec,
    chart: &MetricChart,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<CriticalPointRecord> {
    let template = seed.x.clone();
    let mut z = to_unknowns(seed);
    let mut r = residual(seed, spec, chart, eps)?;
    let mut norm = r.norm();
    if !norm.is_finite() {
        return Err(Error::Solver("seed gradient is not finite".into()));
    }
    let mut history = vec![norm];
    let mut nu = 1.0;
    let mut iters = 0;
    while norm > cfg.tol_newton {
        if iters >= cfg.max_newton {
            return Err(Error::Solver(format!(
                "refinement did not converge: |grad| = {norm:.3e} after {iters} iterations"
            )));
        }
        iters += 1;
        let jac = jacobian(&z, &template, spec, chart, eps)?;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * &r;
        let mut accepted = false;
        for _ in 0..30 {
            let mu = nu * norm;
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += mu;
            }
            let Some(chol) = a.cholesky() else {
                nu *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let zn = &z + &step;
            let tau = zn[zn.len() - 1];
            if !(tau >= cfg.tau_min && tau <= cfg.tau_max) {
                return Err(Error::Solver(format!("tau runaway: tau = {tau:.4e} left the trust bounds")));
            }
            let rn = residual(&from_unknowns(&template, &zn), spec, chart, eps)?;
            let nn = rn.norm();
            if nn < norm {
                z = zn;
                r = rn;
                norm = nn;
                nu = (nu * 0.25).max(1e-10);
                accepted = true;
                break;
            }
            nu *= 4.0;
        }
        history.push(norm);
        cfg.log(|| format!("[newton] eps {eps:.3e} iter {iters} |grad| {norm:.3e}"));
        if !accepted {
            return Err(Error::Solver(format!("refinement stalled at |grad| = {norm:.3e}")));
        }
        if history.len() > 5 && norm > 10.0 * history[history.len() - 6] {
            return Err(Error::Solver("refinement diverged".into()));
        }
    }
    make_record(from_unknowns(&template, &z), spec, chart, eps, iters)
}

/// Continuation `ε ← ε·factor` down to `eps_min`, warm-starting each stage.
/// Returns the record of every stage, the last one at `eps_min`.
pub fn depenalize(
    start: &CriticalPointRecord,
    spec: &PotentialSpec,
    chart: &MetricChart,
    cfg: &SolverConfig,
) -> Result<Vec<CriticalPointRecord>> {
    let mut stages = Vec::new();
    let mut current = start.clone();
    current.tau_history = vec![(start.eps, start.tau)];
    let mut eps = start.eps;
    let mut retried = false;
    while eps > cfg.eps_min {
        let factor = if retried { cfg.eps_factor.sqrt() } else { cfg.eps_factor };
        let next = (eps * factor).max(cfg.eps_min);
        match newton_refine(&current.point, spec, chart, next, cfg) {
            Ok(mut rec) => {
                let (e, _) = action_parts(&rec.point.x, spec, chart);
                if e < cfg.energy_min {
                    return Err(Error::Solver(format!(
                        "loop collapsing — likely spurious branch (eps = {next:.3e}, energy = {e:.3e}, tau = {:.4})",
                        rec.tau
                    )));
                }
                if !(rec.tau >= cfg.tau_min && rec.tau <= cfg.tau_max) {
                    return Err(Error::Solver(format!("tau runaway at eps = {next:.3e}: tau = {:.4e}", rec.tau)));
                }
                rec.tau_history = current.tau_history.clone();
                rec.tau_history.push((next, rec.tau));
                cfg.log(|| format!("[depenalize] eps {next:.3e} tau {:.10} c {:.10}", rec.tau, rec.value));
                stages.push(rec.clone());
                current = rec;
                eps = next;
                retried = false;
            }
            Err(e) if !retried => {
                cfg.log(|| format!("[depenalize] stage at eps {next:.3e} failed ({e}); retrying with a smaller step"));
                retried = true;
            }
            Err(e) => return Err(e),
        }
    }
    if stages.is_empty() {
        stages.push(current);
    }
    Ok(stages)
}

/// A fully specified problem instance.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: PotentialSpec,
    pub chart: MetricChart,
    pub bbox: BoxDomain,
    pub grid_n: usize,
    pub delta: Option<f64>,
    pub cycle: Option<CycleSpec>,
    pub rho: Option<f64>,
    pub n_s: Option<usize>,
    pub blocks: [usize; 3],
    pub modes: usize,
    pub samples: usize,
    pub asymptotic_radii: Vec<f64>,
    pub orbit_samples: usize,
    pub shooting_rtol: f64,
}

impl Problem {
    pub fn new(spec: PotentialSpec, chart: MetricChart, bbox: BoxDomain) -> Self {
        let r = spec.compact_radius;
        Self {
            spec,
            chart,
            bbox,
            grid_n: 256,
            delta: None,
            cycle: None,
            rho: None,
            n_s: None,
            blocks: DEFAULT_BLOCKS,
            modes: 32,
            samples: 256,
            asymptotic_radii: vec![2.0 * r, 4.0 * r, 8.0 * r],
            orbit_samples: 512,
            shooting_rtol: 1e-10,
        }
    }

    pub fn basis(&self) -> Result<Arc<Basis>> {
        Basis::new(self.modes, self.samples)
    }
}

/// Sampled hypothesis checks: regularity, growth, geometry and the linking
/// homology of `(N_δ, ∂N_δ)`.
pub fn run_checks(problem: &Problem) -> Result<(HypothesisReport, Option<LinkingParams>)> {
    let spec = &problem.spec;
    let chart = &problem.chart;
    let mut report = check_reg(spec, chart, &problem.bbox, problem.grid_n, None)?;
    if chart.torus_periods().is_none() {
        report.merge(check_asymptotic(spec, chart, &problem.asymptotic_radii, 64)?);
    } else {
        report.notes.push("growth conditions not applicable on a compact torus".into());
    }
    report.geometry = Some(chart.check_bounded_geometry(&problem.bbox, 64)?);
    if report.reg_ok == Some(false) {
        report.lnk_ok = Some(false);
        report.notes.push("linking not checked: zero level not regular".into());
        return Ok((report, None));
    }
    let params = match LinkingParams::select(spec, chart, &problem.bbox, problem.grid_n, problem.delta) {
        Ok(p) => p,
        Err(e) => {
            report.lnk_ok = Some(false);
            report.notes.push(format!("linking parameters unavailable: {e}"));
            return Ok((report, None));
        }
    };
    match CubicalPair::build(spec, chart, params.delta, &problem.bbox, problem.grid_n) {
        Ok(pair) => {
            let betti = relative_betti_mod2(&pair);
            report.lnk_ok = Some(check_lnk(&betti));
            report.lnk_betti = Some(betti.ranks);
        }
        Err(e) => {
            report.lnk_ok = Some(false);
            report.notes.push(format!("homology: {e}"));
        }
    }
    Ok((report, Some(params)))
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub report: HypothesisReport,
    pub params: LinkingParams,
    pub family_certificate: FamilyCertificate,
    pub eps0: f64,
    pub rho: f64,
    pub deform: DeformOutcome,
    /// The record at `ε₀` followed by every continuation stage.
    pub stages: Vec<CriticalPointRecord>,
    pub record: CriticalPointRecord,
    pub orbit: CriticalOrbit,
    pub frozen_unchanged: bool,
    /// The family after deformation.
    pub family: MinimaxFamily,
}

/// checks → linking → minimax → newton → depenalize → verify.
pub fn solve(problem: &Problem, cfg: &SolverConfig, skip_checks: bool) -> Result<SolveOutcome> {
    cfg.validate()?;
    let spec = &problem.spec;
    let chart = &problem.chart;
    let (mut report, _) = run_checks(problem).map_err(|e| e.in_stage("checks"))?;
    if !skip_checks && !report.all_pass() {
        return Err(Error::Potential(format!("hypothesis checks failed: {}", report.notes.join("; "))).in_stage("checks"));
    }
    let basis = problem.basis()?;
    let LinkingSetup {
        family: mut fam,
        certificate,
        eps0: eps_rule,
        rho,
        ..
    } = setup(
        spec,
        chart,
        &problem.bbox,
        problem.grid_n,
        problem.delta,
        problem.cycle.clone(),
        problem.rho,
        &basis,
        problem.n_s,
        problem.blocks,
    )
    .map_err(|e| e.in_stage("linking"))?;
    let eps0 = cfg.eps0.unwrap_or(eps_rule).max(cfg.eps_min);
    let (sup, _) = fam.frozen_sup(spec, chart, eps0).map_err(|e| e.in_stage("linking"))?;
    if !(sup < fam.params.barrier_floor) {
        return Err(Error::Linking(format!("frozen nodes reach the barrier at eps0 = {eps0:.3e}")).in_stage("linking"));
    }
    cfg.log(|| {
        format!(
            "[linking] delta {:.4e} r {:.4e} tau0 {:.3} tau1 {:.3} barrier {:.4e} eps0 {eps0:.3e}",
            fam.params.delta, fam.params.r, fam.params.tau0, fam.params.tau1, fam.params.barrier_floor
        )
    });
    let frozen_before: Vec<Vec<f64>> = fam
        .nodes
        .iter()
        .zip(&fam.frozen)
        .filter(|(_, &f)| f)
        .map(|(p, _)| p.x.coeffs.iter().copied().chain([p.tau]).collect())
        .collect();
    let deform = minimax_deform(&mut fam, spec, chart, eps0, cfg).map_err(|e| e.in_stage("minimax"))?;
    let frozen_after: Vec<Vec<f64>> = fam
        .nodes
        .iter()
        .zip(&fam.frozen)
        .filter(|(_, &f)| f)
        .map(|(p, _)| p.x.coeffs.iter().copied().chain([p.tau]).collect())
        .collect();
    let frozen_unchanged = frozen_before == frozen_after;
    let first = newton_refine(&deform.candidate, spec, chart, eps0, cfg).map_err(|e| e.in_stage("newton"))?;
    let (e_first, _) = action_parts(&first.point.x, spec, chart);
    if e_first < cfg.energy_min {
        return Err(Error::Solver(format!(
            "loop collapsing — likely spurious branch (eps = {eps0:.3e}, energy = {e_first:.3e})"
        ))
        .in_stage("newton"));
    }
    let mut stages = vec![first.clone()];
    stages.extend(depenalize(&first, spec, chart, cfg).map_err(|e| e.in_stage("depenalize"))?);
    if stages.len() > 1 && stages[1].eps == first.eps {
        stages.remove(1);
    }
    for st in &stages {
        if !(st.value >= 0.5 * certificate.k1 && st.value <= 2.0 * certificate.k2) {
            let note = format!(
                "critical value {:.6e} at eps {:.3e} outside [K1/2, 2 K2] = [{:.3e}, {:.3e}]",
                st.value,
                st.eps,
                0.5 * certificate.k1,
                2.0 * certificate.k2
            );
            cfg.log(|| format!("[depenalize] {note}"));
            report.notes.push(note);
        }
    }
    let record = stages.last().unwrap().clone();
    let mut orbit = reconstruct(&record, spec, chart, problem.orbit_samples).map_err(|e| e.in_stage("verify"))?;
    let shot = shooting_crosscheck(&orbit, spec, chart, problem.shooting_rtol).map_err(|e| e.in_stage("verify"))?;
    orbit.certificates.shooting_closure = Some(shot.closure);
    orbit.certificates.shooting_deviation = Some(shot.deviation);
    Ok(SolveOutcome {
        report,
        params: fam.params.clone(),
        family_certificate: certificate,
        eps0,
        rho,
        deform,
        stages,
        record,
        orbit,
        frozen_unchanged,
        family: fam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn quiet() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn config_validation() {
        assert!(quiet().validate().is_ok());
        let bad = SolverConfig {
            eps_factor: 1.5,
            ..quiet()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            eps0: Some(1e-9),
            ..quiet()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn newton_recovers_noisy_circle() {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let b = Basis::new(8, 40).unwrap();
        let mut x = FourierLoop::circle(b, &[0.0, 0.0], 1.0);
        for (k, c) in x.coeffs.iter_mut().enumerate() {
            *c += 1e-2 * ((k as f64) * 1.7).sin();
        }
        let seed = ActionPoint::new(x, (2.0 * PI).ln() + 1e-2);
        let rec = newton_refine(&seed, &spec, &chart, 0.0, &quiet()).unwrap();
        assert!(rec.grad_norm <= 1e-9);
        assert!((rec.value - 2.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn newton_accepts_exact_critical_point() {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let b = Basis::new(4, 24).unwrap();
        let seed = ActionPoint::new(FourierLoop::circle(b, &[0.0, 0.0], 1.0), (2.0 * PI).ln());
        let rec = newton_refine(&seed, &spec, &chart, 0.0, &quiet()).unwrap();
        assert!(rec.newton_iters <= 1);
    }

    #[test]
    fn newton_finds_point_loop_branch() {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let b = Basis::new(4, 24).unwrap();
        let seed = ActionPoint::new(FourierLoop::constant(b, &[0.0, 0.0]), 0.0);
        let rec = newton_refine(&seed, &spec, &chart, 0.1, &quiet()).unwrap();
        assert!(rec.residuals.energy_ident_sup < 1e-9);
        // e^τ = ε(e^{-τ} - ½e^{τ/2}) balances the τ-equation.
        let t = rec.tau;
        assert!((t.exp() - 0.1 * ((-t).exp() - 0.5 * (0.5 * t).exp())).abs() < 1e-9);
    }

    #[test]
    fn degenerate_schedule_is_single_stage() {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let b = Basis::new(4, 24).unwrap();
        let seed = ActionPoint::new(FourierLoop::circle(b, &[0.0, 0.0], 1.0), (2.0 * PI).ln());
        let cfg = SolverConfig {
            eps_min: 1e-3,
            ..quiet()
        };
        let rec = newton_refine(&seed, &spec, &chart, 1e-3, &cfg).unwrap();
        let stages = depenalize(&rec, &spec, &chart, &cfg).unwrap();
        assert_eq!(stages.len(), 1);
        assert_eq!(stages[0].eps, 1e-3);
    }

    #[test]
    fn depenalized_circle_keeps_period() {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let b = Basis::new(4, 24).unwrap();
        let seed = ActionPoint::new(FourierLoop::circle(b, &[0.0, 0.0], 1.0), (2.0 * PI).ln());
        let cfg = quiet();
        let rec = newton_refine(&seed, &spec, &chart, 0.1, &cfg).unwrap();
        let stages = depenalize(&rec, &spec, &chart, &cfg).unwrap();
        let last = stages.last().unwrap();
        assert_eq!(last.eps, cfg.eps_min);
        assert!((last.tau - (2.0 * PI).ln()).abs() < 1e-4);
        for s in &stages {
            assert!(s.residuals.crit_value_gap_u <= 100.0 * cfg.tol_newton);
            assert!(s.residuals.crit_value_gap_e <= 100.0 * cfg.tol_newton);
        }
    }

    #[test]
    fn collapse_is_detected() {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let b = Basis::new(4, 24).unwrap();
        let seed = ActionPoint::new(FourierLoop::constant(b, &[0.0, 0.0]), 0.0);
        let cfg = quiet();
        let rec = newton_refine(&seed, &spec, &chart, 0.1, &cfg).unwrap();
        let err = depenalize(&rec, &spec, &chart, &cfg).unwrap_err();
        assert!(matches!(err, Error::Solver(m) if m.contains("collapsing")));
    }
    fn well_setup() -> (Problem, LinkingSetup) {
        let p = Problem::new(PotentialSpec::well1d(1.0), MetricChart::euclidean(1), BoxDomain::cube(1, 2.0));
        let basis = p.basis().unwrap();
        let s = setup(&p.spec, &p.chart, &p.bbox, p.grid_n, None, None, None, &basis, None, p.blocks).unwrap();
        (p, s)
    }

    #[test]
    fn well_family_deforms_to_brake_saddle() {
        let (p, mut s) = well_setup();
        let cfg = quiet();
        let out = minimax_deform(&mut s.family, &p.spec, &p.chart, s.eps0, &cfg).unwrap();
        assert!(out.converged && out.grad_norm <= cfg.tol_deform);
        assert!((out.candidate.tau - (2f64.sqrt() * PI).ln()).abs() < 0.05);
        let x = out.candidate.x.samples().x;
        let amp = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 1.0).abs() < 0.05, "{amp}");
        // the loop is dominated by its first harmonic
        let n1 = out.candidate.x.coeff(1, 0).hypot(out.candidate.x.coeff(2, 0));
        assert!(n1 > 0.9);
    }

    #[test]
    fn harmonic_family_deforms_to_circle() {
        let p = Problem::new(PotentialSpec::harmonic2d(1.0), MetricChart::euclidean(2), BoxDomain::cube(2, 2.0));
        let basis = p.basis().unwrap();
        let mut s = setup(&p.spec, &p.chart, &p.bbox, p.grid_n, None, None, None, &basis, None, p.blocks).unwrap();
        let cfg = quiet();
        let out = minimax_deform(&mut s.family, &p.spec, &p.chart, s.eps0, &cfg).unwrap();
        assert!(out.converged);
        let v = action_value(&out.candidate, &p.spec, &p.chart, s.eps0).unwrap();
        assert!((v - 2.0 * PI).abs() < 1e-2, "{v}");
        for q in out.candidate.x.samples().x.chunks(2) {
            assert!((q[0].hypot(q[1]) - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn critical_family_needs_no_sweeps() {
        let (p, mut s) = well_setup();
        let cfg = quiet();
        let b = p.basis().unwrap();
        let mut x = FourierLoop::zeros(1, b);
        x.coeffs[1] = 1.0;
        let seed = ActionPoint::new(x, (2f64.sqrt() * PI).ln());
        let crit = newton_refine(&seed, &p.spec, &p.chart, s.eps0, &cfg).unwrap().point;
        let fam = &mut s.family;
        for i in 0..fam.nodes.len() {
            if !fam.frozen[i] {
                fam.nodes[i] = crit.clone();
            }
        }
        let out = minimax_deform(fam, &p.spec, &p.chart, s.eps0, &cfg).unwrap();
        assert_eq!(out.sweeps, 0);
        assert!(out.converged);
    }

    #[test]
    fn resampling_equalizes_spacing() {
        let b = Basis::new(2, 16).unwrap();
        let pts: Vec<ActionPoint> = [0.0, 0.1, 0.2, 2.0]
            .iter()
            .map(|&t| ActionPoint::new(FourierLoop::zeros(1, b.clone()), t))
            .collect();
        let refs: Vec<&ActionPoint> = pts.iter().collect();
        let out = resample(&refs);
        assert!((out[0].tau - 2.0 / 3.0).abs() < 1e-12);
        assert!((out[1].tau - 4.0 / 3.0).abs() < 1e-12);
    }
}
