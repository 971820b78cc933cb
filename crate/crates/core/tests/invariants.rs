use std::sync::Arc;

use freeperiod::geometry::MetricChart;
use freeperiod::grid::BoxDomain;
use freeperiod::homology::{relative_betti_mod2, CubicalPair};
use freeperiod::potential::{eval_grad_u, eval_hess_u, eval_u, qb_function, Polynomial, PotentialSpec};
use proptest::prelude::*;

fn builtins() -> Vec<PotentialSpec> {
    vec![PotentialSpec::harmonic2d(1.0), PotentialSpec::well1d(1.0), PotentialSpec::annulus2d(0.0)]
}

fn point(spec: &PotentialSpec, raw: &[f64]) -> Vec<f64> {
    raw[..spec.dim()].to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn derivatives_match_central_differences(k in 0usize..3, raw in prop::collection::vec(-2.5f64..2.5, 2)) {
        let spec = &builtins()[k];
        let chart = MetricChart::euclidean(spec.dim());
        let q = point(spec, &raw);
        let n = q.len();
        let h = 1e-4;
        let g = eval_grad_u(spec, &chart, &q).unwrap();
        let hess = eval_hess_u(spec, &chart, &q).unwrap();
        let scale = 1.0 + q.iter().map(|x| x.abs()).fold(0.0, f64::max).powi(4);
        for i in 0..n {
            let mut a = q.clone();
            let mut b = q.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (eval_u(spec, &a).unwrap() - eval_u(spec, &b).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 10.0 * h * h * scale);
            let ga = eval_grad_u(spec, &chart, &a).unwrap();
            let gb = eval_grad_u(spec, &chart, &b).unwrap();
            for j in 0..n {
                let fd = (ga[j] - gb[j]) / (2.0 * h);
                prop_assert!((fd - hess[(i, j)]).abs() <= 10.0 * h * h * scale);
            }
        }
    }

    #[test]
    fn qb_function_is_a_damped_copy_of_u(k in 0usize..3, raw in prop::collection::vec(-3.0f64..3.0, 2)) {
        let spec = &builtins()[k];
        let chart = MetricChart::euclidean(spec.dim());
        let q = point(spec, &raw);
        let u = eval_u(spec, &q).unwrap();
        let f = qb_function(spec, &chart, &q);
        prop_assert_eq!(f.signum(), u.signum());
        prop_assert!(f.abs() <= u.abs());
    }

    #[test]
    fn christoffel_symbols_are_symmetric(a in -0.5f64..0.5, b in -0.5f64..0.5, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let phi = Polynomial::from_terms(2, &[(&[1, 0], a), (&[0, 2], b), (&[1, 1], 0.1)]).unwrap();
        let chart = MetricChart::conformal2d(Arc::new(phi));
        let c = chart.christoffel(&[x, y]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    prop_assert_eq!(c.get(i, j, k).to_bits(), c.get(i, k, j).to_bits());
                }
            }
        }
    }
}

#[test]
fn builtin_betti_numbers_survive_grid_doubling() {
    let cases = [
        (PotentialSpec::harmonic2d(1.0), 2.0, vec![0, 0, 1]),
        (PotentialSpec::well1d(1.0), 2.0, vec![0, 1]),
        (PotentialSpec::annulus2d(0.0), 3.0, vec![0, 1, 1]),
    ];
    for (spec, half, want) in cases {
        let chart = MetricChart::euclidean(spec.dim());
        let bbox = BoxDomain::cube(spec.dim(), half);
        for n in [64, 128, 256] {
            let pair = CubicalPair::build(&spec, &chart, 0.02, &bbox, n).unwrap();
            let betti = relative_betti_mod2(&pair);
            assert_eq!(betti.ranks, want, "grid {n}");
            let counts = pair.relative_cell_counts();
            let alt: i64 = counts.iter().enumerate().map(|(k, &c)| if k % 2 == 0 { c as i64 } else { -(c as i64) }).sum();
            assert_eq!(betti.euler_characteristic(), alt);
        }
    }
}
