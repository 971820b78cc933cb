//! Physical orbits `q(t) = x(t/T)` and independent certificates: the
//! Hamiltonian level, a shooting cross-check and winding numbers.

use serde::Serialize;

use crate::action::{energy_identity_residual, el_residual, penalty_prime};
use crate::error::{Error, Result};
use crate::geometry::MetricChart;
use crate::loops::FourierLoop;
use crate::ode::{integrate, Tolerance};
use crate::potential::PotentialSpec;
use crate::solver::CriticalPointRecord;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Certificates {
    pub el_resid_sup: f64,
    pub energy_ident_sup: f64,
    pub hamiltonian_dev: f64,
    pub shooting_closure: Option<f64>,
    pub shooting_deviation: Option<f64>,
    pub winding: Option<Vec<i64>>,
    /// `∫₀ᵀ (½|q̇|² + U(q)) dt` by the rectangle rule on the samples.
    pub lagrangian_action: f64,
    /// `min U` over the samples.
    pub min_u: f64,
}

#[derive(Debug, Clone)]
pub struct CriticalOrbit {
    pub period: f64,
    pub tau: f64,
    pub eps: f64,
    /// Sample times `0, T/n, …, T`; the last row closes the loop.
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qdot: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub certificates: Certificates,
    pub x: FourierLoop,
}

impl CriticalOrbit {
    pub fn dim(&self) -> usize {
        self.x.dim()
    }
}

pub fn reconstruct(record: &CriticalPointRecord, spec: &PotentialSpec, chart: &MetricChart, n_samples: usize) -> Result<CriticalOrbit> {
    if n_samples < 4 {
        return Err(Error::Domain("need at least four orbit samples".into()));
    }
    let point = &record.point;
    let tau = point.tau;
    let period = tau.exp();
    let rate = (-tau).exp();
    let level = record.eps * rate * penalty_prime(tau)?;
    let mut orbit = CriticalOrbit {
        period,
        tau,
        eps: record.eps,
        t: Vec::with_capacity(n_samples + 1),
        q: Vec::with_capacity(n_samples + 1),
        qdot: Vec::with_capacity(n_samples + 1),
        p: Vec::with_capacity(n_samples + 1),
        h: Vec::with_capacity(n_samples + 1),
        certificates: Certificates::default(),
        x: point.x.clone(),
    };
    let mut dev = 0.0f64;
    let mut lag = 0.0;
    let mut min_u = f64::INFINITY;
    for i in 0..=n_samples {
        let s = if i == n_samples { 1.0 } else { i as f64 / n_samples as f64 };
        let q = point.x.eval(s);
        let qd: Vec<f64> = point.x.velocity(s).iter().map(|v| rate * v).collect();
        let lambda = chart.factor(&q).0;
        let v2: f64 = qd.iter().map(|v| v * v).sum::<f64>() * lambda;
        let u = spec.value(&q);
        let h = 0.5 * v2 - u;
        dev = dev.max((h - level).abs());
        min_u = min_u.min(u);
        if i < n_samples {
            lag += 0.5 * v2 + u;
        }
        orbit.t.push(if i == n_samples { period } else { s * period });
        orbit.p.push(qd.iter().map(|v| lambda * v).collect());
        orbit.q.push(q);
        orbit.qdot.push(qd);
        orbit.h.push(h);
    }
    orbit.certificates = Certificates {
        el_resid_sup: el_residual(point, spec, chart),
        energy_ident_sup: energy_identity_residual(point, spec, chart, record.eps)?,
        hamiltonian_dev: dev,
        shooting_closure: None,
        shooting_deviation: None,
        winding: match chart.torus_periods() {
            Some(p) => Some(winding_numbers(&orbit.q, p)?),
            None => None,
        },
        lagrangian_action: lag * period / n_samples as f64,
        min_u,
    };
    Ok(orbit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootingReport {
    /// `|q(T) - q(0)| + |q̇(T) - q̇(0)|` for the integrated trajectory.
    pub closure: f64,
    /// Largest distance between integrated and sampled positions.
    pub deviation: f64,
}

/// Integrates `q̈ = grad U - Γ(q̇, q̇)` through the sample times from the first
/// sample and compares.
pub fn shoot(
    t: &[f64],
    q: &[Vec<f64>],
    qdot0: &[f64],
    spec: &PotentialSpec,
    chart: &MetricChart,
    rtol: f64,
) -> Result<ShootingReport> {
    let n = q[0].len();
    let mut y: Vec<f64> = q[0].iter().chain(qdot0).copied().collect();
    let y0 = y.clone();
    let mut du = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut rhs = |_t: f64, y: &[f64], d: &mut [f64]| {
        let (pos, vel) = y.split_at(n);
        spec.covector(pos, &mut du);
        chart.christoffel_contract(pos, vel, &mut gamma);
        let lambda = chart.factor(pos).0;
        for i in 0..n {
            d[i] = vel[i];
            d[n + i] = du[i] / lambda - gamma[i];
        }
    };
    let tol = Tolerance::relative(rtol);
    let mut deviation = 0.0f64;
    for i in 1..t.len() {
        integrate(&mut rhs, t[i - 1], t[i], &mut y, tol)?;
        let d: f64 = y[..n].iter().zip(&q[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        deviation = deviation.max(d);
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let closure = dist(&y[..n], &y0[..n]) + dist(&y[n..], &y0[n..]);
    if !closure.is_finite() {
        return Err(Error::Oracle("shooting produced non-finite values".into()));
    }
    Ok(ShootingReport { closure, deviation })
}

pub fn shooting_crosscheck(orbit: &CriticalOrbit, spec: &PotentialSpec, chart: &MetricChart, rtol: f64) -> Result<ShootingReport> {
    shoot(&orbit.t, &orbit.q, &orbit.qdot[0], spec, chart, rtol)
}

/// Net displacement of a cyclic sample sequence in units of the periods,
/// taking each step to its nearest periodic image.
pub fn winding_numbers(samples: &[Vec<f64>], periods: &[f64]) -> Result<Vec<i64>> {
    let n = periods.len();
    if samples.len() < 2 || samples.iter().any(|s| s.len() != n) {
        return Err(Error::Shape("winding needs at least two samples matching the torus dimension".into()));
    }
    let mut total = vec![0.0; n];
    for k in 0..samples.len() {
        let a = &samples[k];
        let b = &samples[(k + 1) % samples.len()];
        for i in 0..n {
            let d = b[i] - a[i];
            total[i] += d - periods[i] * (d / periods[i]).round();
        }
    }
    total
        .iter()
        .zip(periods)
        .map(|(&t, &p)| {
            let w = t / p;
            let k = w.round();
            if (w - k).abs() > 1e-6 {
                Err(Error::Verify(format!("displacement {w:.8} periods is not an integer")))
            } else {
                Ok(k as i64)
            }
        })
        .collect()
}

/// `t, q_1..q_n, p_1..p_n, H` with a header line.
pub fn orbit_csv(orbit: &CriticalOrbit) -> String {
    let n = orbit.dim();
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",q_{i}"));
    }
    for i in 1..=n {
        out.push_str(&format!(",p_{i}"));
    }
    out.push_str(",H\n");
    for k in 0..orbit.t.len() {
        out.push_str(&format!("{}", orbit.t[k]));
        for v in orbit.q[k].iter().chain(&orbit.p[k]) {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", orbit.h[k]));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTable {
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

pub fn parse_orbit_csv(text: &str) -> Result<OrbitTable> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Verify("orbit file is empty".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[0] != "t" || cols[cols.len() - 1] != "H" || (cols.len() - 2) % 2 != 0 {
        return Err(Error::Verify(format!("unexpected orbit header '{header}'")));
    }
    let n = (cols.len() - 2) / 2;
    let mut table = OrbitTable {
        t: vec![],
        q: vec![],
        p: vec![],
        h: vec![],
    };
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::Verify(format!("row {}: {e}", row + 2)))?;
        if vals.len() != cols.len() {
            return Err(Error::Verify(format!("row {} has {} fields, expected {}", row + 2, vals.len(), cols.len())));
        }
        table.t.push(vals[0]);
        table.q.push(vals[1..=n].to_vec());
        table.p.push(vals[n + 1..=2 * n].to_vec());
        table.h.push(vals[2 * n + 1]);
    }
    if table.t.len() < 3 {
        return Err(Error::Verify("orbit file needs at least three rows".into()));
    }
    if table.t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Verify("sample times must increase".into()));
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableCheck {
    pub period: f64,
    pub closure: f64,
    pub deviation: f64,
    pub h_spread: f64,
    pub min_u: f64,
}

/// Re-derives velocities from the stored momenta and shoots over the stored
/// period (the time of the closing row).
pub fn check_table(table: &OrbitTable, spec: &PotentialSpec, chart: &MetricChart, rtol: f64) -> Result<TableCheck> {
    if table.q[0].len() != spec.dim() {
        return Err(Error::Shape("orbit dimension does not match the problem".into()));
    }
    let lambda = chart.factor(&table.q[0]).0;
    let qdot0: Vec<f64> = table.p[0].iter().map(|p| p / lambda).collect();
    let shot = shoot(&table.t, &table.q, &qdot0, spec, chart, rtol)?;
    let hmax = table.h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let hmin = table.h.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_u = table.q.iter().map(|q| spec.value(q)).fold(f64::INFINITY, f64::min);
    Ok(TableCheck {
        period: table.t[table.t.len() - 1] - table.t[0],
        closure: shot.closure,
        deviation: shot.deviation,
        h_spread: hmax - hmin,
        min_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{action_value, residual_report, ActionPoint};
    use crate::loops::Basis;
    use std::f64::consts::PI;

    fn record(x: FourierLoop, tau: f64, spec: &PotentialSpec, chart: &MetricChart) -> CriticalPointRecord {
        let point = ActionPoint::new(x, tau);
        CriticalPointRecord {
            tau,
            eps: 0.0,
            value: action_value(&point, spec, chart, 0.0).unwrap(),
            grad_norm: 0.0,
            residuals: residual_report(&point, spec, chart, 0.0).unwrap(),
            newton_iters: 0,
            tau_history: vec![],
            point,
        }
    }

    fn circle() -> (CriticalPointRecord, PotentialSpec, MetricChart) {
        let spec = PotentialSpec::harmonic2d(1.0);
        let chart = MetricChart::euclidean(2);
        let b = Basis::new(4, 32).unwrap();
        let rec = record(FourierLoop::circle(b, &[0.0, 0.0], 1.0), (2.0 * PI).ln(), &spec, &chart);
        (rec, spec, chart)
    }

    #[test]
    fn circle_orbit() {
        let (rec, spec, chart) = circle();
        let o = reconstruct(&rec, &spec, &chart, 256).unwrap();
        assert!(o.h.iter().all(|h| h.abs() < 1e-10));
        assert!((o.certificates.lagrangian_action - rec.value).abs() < 1e-8);
        assert_eq!(o.p, o.qdot);
        assert!((o.t[o.t.len() - 1] - 2.0 * PI).abs() < 1e-12);
        let s = shooting_crosscheck(&o, &spec, &chart, 1e-10).unwrap();
        assert!(s.closure <= 1e-8, "{s:?}");
        assert!(s.deviation <= 1e-6);
    }

    #[test]
    fn well_orbit_turning_points() {
        let spec = PotentialSpec::well1d(1.0);
        let chart = MetricChart::euclidean(1);
        let b = Basis::new(4, 32).unwrap();
        let mut x = FourierLoop::zeros(1, b);
        x.coeffs[1] = 1.0;
        let rec = record(x, (2f64.sqrt() * PI).ln(), &spec, &chart);
        let o = reconstruct(&rec, &spec, &chart, 400).unwrap();
        for k in [0, 200] {
            assert!(o.qdot[k][0].abs() < 1e-12);
            assert!(spec.value(&o.q[k]).abs() < 1e-6);
        }
        let s = shooting_crosscheck(&o, &spec, &chart, 1e-10).unwrap();
        assert!(s.closure <= 1e-8);
    }

    #[test]
    fn wrong_period_does_not_close() {
        let (mut rec, spec, chart) = circle();
        rec.point.tau -= 2f64.ln();
        let o = reconstruct(&rec, &spec, &chart, 256).unwrap();
        let s = shooting_crosscheck(&o, &spec, &chart, 1e-10).unwrap();
        assert!(s.closure > 1.0);
    }

    #[test]
    fn winding_examples() {
        let periods = [2.0, 3.0];
        let inside: Vec<Vec<f64>> = (0..50).map(|k| {
            let a = 2.0 * PI * k as f64 / 50.0;
            vec![1.0 + 0.5 * a.cos(), 1.5 + 0.5 * a.sin()]
        }).collect();
        assert_eq!(winding_numbers(&inside, &periods).unwrap(), vec![0, 0]);
        let lifted: Vec<Vec<f64>> = inside.iter().map(|q| vec![q[0] + 10.0, q[1] - 7.0]).collect();
        assert_eq!(winding_numbers(&lifted, &periods).unwrap(), vec![0, 0]);
        let line: Vec<Vec<f64>> = (0..=40).map(|k| vec![2.0 * k as f64 / 40.0, 0.0]).collect();
        assert_eq!(winding_numbers(&line, &periods).unwrap(), vec![1, 0]);
        let wrapped: Vec<Vec<f64>> = (0..40).map(|k| vec![(2.0 * k as f64 / 40.0 + 0.7) % 2.0, 0.0]).collect();
        assert_eq!(winding_numbers(&wrapped, &periods).unwrap(), vec![1, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let (rec, spec, chart) = circle();
        let o = reconstruct(&rec, &spec, &chart, 64).unwrap();
        let text = orbit_csv(&o);
        assert!(text.starts_with("t,q_1,q_2,p_1,p_2,H\n"));
        assert!(text.ends_with('\n'));
        let table = parse_orbit_csv(&text).unwrap();
        assert_eq!(table.t, o.t);
        assert_eq!(table.q, o.q);
        let chk = check_table(&table, &spec, &chart, 1e-10).unwrap();
        assert!(chk.closure < 1e-8 && chk.h_spread < 1e-10);
        assert!((chk.period - 2.0 * PI).abs() < 1e-12);
        assert!(parse_orbit_csv("x,y\n1,2\n").is_err());
    }
}
