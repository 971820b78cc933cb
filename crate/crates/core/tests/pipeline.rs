use std::f64::consts::PI;

use freeperiod::action::action_value;
use freeperiod::geometry::MetricChart;
use freeperiod::grid::BoxDomain;
use freeperiod::potential::PotentialSpec;
use freeperiod::solver::{solve, Problem, SolveOutcome, SolverConfig};

fn solve_builtin(spec: PotentialSpec, half: f64) -> SolveOutcome {
    let n = spec.dim();
    let problem = Problem::new(spec, MetricChart::euclidean(n), BoxDomain::cube(n, half));
    solve(&problem, &SolverConfig::default(), false).unwrap()
}

#[test]
fn well_pipeline_certificates() {
    let out = solve_builtin(PotentialSpec::well1d(1.0), 2.0);
    let orbit = &out.orbit;
    let c = &orbit.certificates;
    assert!((orbit.period - 2f64.sqrt() * PI).abs() < 1e-6);
    assert!(out.frozen_unchanged);

    let bound = (10.0 * c.energy_ident_sup * (-orbit.tau).exp()).max(1e-8);
    assert!(c.hamiltonian_dev <= bound, "{} > {bound}", c.hamiltonian_dev);
    let level = orbit.eps * (-orbit.tau).exp() * (0.5 * (0.5 * orbit.tau).exp() - (-orbit.tau).exp());
    let floor = -(level.abs() + c.energy_ident_sup * (-2.0 * orbit.tau).exp());
    assert!(c.min_u >= floor * (1.0 + 1e-6) - 1e-12, "{} < {floor}", c.min_u);
    assert!(c.min_u <= 0.0);

    let spec = PotentialSpec::well1d(1.0);
    let chart = MetricChart::euclidean(1);
    let a = action_value(&out.record.point, &spec, &chart, 0.0).unwrap();
    assert!((c.lagrangian_action - a).abs() <= 1e-7 * a.abs(), "{} vs {a}", c.lagrangian_action);

    let cert = &out.family_certificate;
    for st in &out.stages {
        assert!(st.grad_norm <= SolverConfig::default().tol_newton);
        assert!(st.value >= 0.5 * cert.k1 && st.value <= 2.0 * cert.k2);
    }
}
