use datamarket_core::{
    price_of_anarchy, solve_market, DataBuyer, DataSource, EstimatorSpec, FeatureDomain, MarketInstance, MarketOutcome,
    ValueDistribution,
};
use proptest::prelude::*;

fn market() -> impl Strategy<Value = MarketInstance> {
    (
        proptest::collection::vec(-1.0f64..1.0, 2..4),
        proptest::collection::vec(0.5f64..4.0, 3),
        proptest::collection::vec((-1.0f64..0.5, 0.2f64..0.5), 1..4),
    )
        .prop_filter("distinct locations", |(xs, _, _)| {
            xs.iter().enumerate().all(|(i, a)| xs[i + 1..].iter().all(|b| (a - b).abs() > 0.1))
        })
        .prop_map(|(xs, alphas, buyers)| {
            let nb = buyers.len();
            MarketInstance {
                sources: xs.iter().zip(&alphas).map(|(&x, &alpha)| DataSource { x, alpha }).collect(),
                buyers: buyers
                    .into_iter()
                    .map(|(lo, w)| DataBuyer {
                        estimator: EstimatorSpec::LinearRegression,
                        value_dist: ValueDistribution::Uniform { lo, hi: lo + w },
                        delta: vec![0.0; nb],
                        eta: 1.0,
                    })
                    .collect(),
                feature_domain: FeatureDomain { lo: -1.0, hi: 1.0 },
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn equilibrium_invariants(m in market()) {
        let Ok(MarketOutcome::Equilibrium { weights, system, solution }) = solve_market(&m) else {
            return Ok(());
        };
        prop_assert!(system.rho < 1.0);
        prop_assert!(system.residual(&system.stack(&solution.d)) <= 1e-8);
        for (d_row, g_row) in solution.d.iter().zip(&weights.gamma) {
            for (d, g) in d_row.iter().zip(g_row) {
                prop_assert!(*d >= *g - 1e-12 * (1.0 + g.abs()));
            }
        }
        prop_assert!(solution.c_polytope.contains(&solution.c_canonical, 1e-10));
        for i in 0..m.n_sources() {
            let total: f64 = (0..m.n_buyers()).map(|k| solution.c_canonical[k][i]).sum();
            prop_assert!((total - solution.c_polytope.equality[i]).abs() <= 1e-10 * (1.0 + total.abs()));
        }
        if let Ok(w) = price_of_anarchy(&solution, &weights, &m) {
            prop_assert!(w.poa >= 1.0 - 1e-12);
            prop_assert!(w.loss_eq >= w.loss_opt - 1e-12);
        }
    }

    #[test]
    fn existence_depends_only_on_rho(m in market()) {
        match solve_market(&m) {
            Ok(MarketOutcome::Equilibrium { system, .. }) => prop_assert!(system.rho < 1.0 - 1e-9),
            Ok(MarketOutcome::NoEquilibrium { rho, .. }) => prop_assert!(rho >= 1.0 - 1e-9),
            Err(_) => {}
        }
    }
}

#[test]
fn two_firm_family_collapses_at_one() {
    for (x1, solvable) in [(-1.0, true), (0.0, true), (0.999, true), (1.0, false)] {
        let outcome = solve_market(&datamarket_core::two_firm_example(x1)).unwrap();
        assert_eq!(matches!(outcome, MarketOutcome::Equilibrium { .. }), solvable, "x1={x1}");
    }
}
