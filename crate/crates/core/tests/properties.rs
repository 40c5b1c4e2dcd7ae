use lro::chibar::HMatrix;
use lro::estimation::active_set_oracle;
use lro::hypothesis::{wilcoxon_stats, DEFAULT_LAMBDAS};
use lro::{
    chibar_pvalue, h_matrix, parse_csv, phi_divergence, prob_to_theta, scenario_probs, theta_to_prob,
    weights_closed_form, Analysis, AnalysisOptions, ContingencyTable, ProbabilityCells, SolverOptions, ThetaVector,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

fn table(max_j: usize, lo: u64) -> impl Strategy<Value = ContingencyTable> {
    (2..=max_j)
        .prop_flat_map(move |j| {
            (
                prop::collection::vec(lo..=30u64, j),
                prop::collection::vec(lo..=30u64, j),
            )
        })
        .prop_filter_map("empty row", |(a, b)| ContingencyTable::new(a, b).ok())
}

fn probs(max_j: usize) -> impl Strategy<Value = Vec<f64>> {
    (2..=max_j)
        .prop_flat_map(|j| prop::collection::vec(0.05f64..1.0, j))
        .prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        })
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn theta_round_trip(theta in (2usize..=6).prop_flat_map(|j| prop::collection::vec(-3.0f64..3.0, 2 * (j - 1))),
                        n1 in 1u64..100, n2 in 1u64..100) {
        let theta = ThetaVector::from_slice(&theta).unwrap();
        let p = theta_to_prob(&theta, n1 as f64, n2 as f64).unwrap();
        let nu1 = n1 as f64 / (n1 + n2) as f64;
        prop_assert!((p.row(0).iter().sum::<f64>() - nu1).abs() < 1e-12);
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let back = prob_to_theta(&p).unwrap();
        for (a, b) in back.to_vec().iter().zip(theta.to_vec()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn restricted_fit_satisfies_kkt(t in table(5, 0)) {
        let opts = SolverOptions::default();
        let fit = lro::mle_restricted(&t, &opts).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(fit.kkt_residual <= opts.kkt_tol);
        prop_assert!(fit.theta.log_odds().iter().all(|&x| x >= -opts.feas_tol));
        for (l, &m) in fit.kkt_multipliers.iter().enumerate() {
            prop_assert!(m <= 1e-8);
            if !fit.active_set.contains(&l) {
                prop_assert_eq!(m, 0.0);
            }
        }
        let null = lro::mle_null(&t, &opts).unwrap();
        prop_assert!(fit.loglik >= null.loglik - 1e-9);
        let oracle = active_set_oracle(&t, &opts).unwrap();
        prop_assert!((fit.loglik - oracle.loglik).abs() < 1e-6);
    }

    #[test]
    fn statistics_and_pvalues_in_range(t in table(4, 0)) {
        let a = Analysis::new(&t, &AnalysisOptions::default()).unwrap();
        for l in DEFAULT_LAMBDAS {
            let s = a.s_statistic(l.into());
            prop_assert!(s >= 0.0 && s.is_finite());
            let tl = a.t_statistic(l.into());
            prop_assert!(tl.is_finite());
            for x in [s, tl] {
                let p = a.pvalue(x);
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn divergence_nonnegative(p in probs(6), q in probs(6), l in -2.0f64..3.0) {
        prop_assume!(p.len() == q.len());
        let d = phi_divergence(&p, &q, l.into()).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(phi_divergence(&p, &p, l.into()).unwrap() < 1e-12);
    }

    #[test]
    fn h_is_symmetric_positive_definite(pi in probs(7), nu1 in 0.05f64..0.95) {
        let h = h_matrix(&pi, nu1, 1.0 - nu1).unwrap();
        prop_assert_eq!(&h.h, &h.h.transpose());
        prop_assert!(h.h.clone().cholesky().is_some());
    }

    #[test]
    fn weights_valid_and_scale_free(pi in probs(4), nu1 in 0.05f64..0.95, c in 0.01f64..100.0) {
        let h = h_matrix(&pi, nu1, 1.0 - nu1).unwrap();
        let w = weights_closed_form(&h).unwrap();
        prop_assert!((w.w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(w.w.iter().all(|&x| x >= 0.0));
        if pi.len() == 4 {
            prop_assert!((w.w[0] + w.w[2] - 0.5).abs() < 1e-12);
            prop_assert!((w.w[1] + w.w[3] - 0.5).abs() < 1e-12);
        }
        let scaled = HMatrix { h: &h.h * c, ..h.clone() };
        let w2 = weights_closed_form(&scaled).unwrap();
        for (a, b) in w.w.iter().zip(&w2.w) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chibar_pvalue_monotone(pi in probs(4), a in 0.0f64..30.0, b in 0.0f64..30.0) {
        let w = weights_closed_form(&h_matrix(&pi, 0.5, 0.5).unwrap()).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(chibar_pvalue(lo, &w) >= chibar_pvalue(hi, &w));
        prop_assert!((0.0..=1.0).contains(&chibar_pvalue(a, &w)));
    }

    #[test]
    fn wilcoxon_swap_negates_z(t in table(5, 0)) {
        if let Ok(a) = wilcoxon_stats(&t) {
            let b = wilcoxon_stats(&t.swapped()).unwrap();
            prop_assert!((a.z + b.z).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trip(t in table(8, 0)) {
        let text = [0, 1]
            .map(|i| t.row(i).iter().map(u64::to_string).collect::<Vec<_>>().join(","))
            .join("\n");
        prop_assert_eq!(parse_csv(&text).unwrap(), t);
    }

    #[test]
    fn scenario_rows_are_ordered(delta in 0.0f64..5.0, j in 2usize..7) {
        let [a, b] = scenario_probs(delta, j).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let p = ProbabilityCells::new(a.iter().chain(&b).map(|x| x / 2.0).collect()).unwrap();
        prop_assert!(lro::local_odds_ratios(&p).iter().all(|&o| o >= 1.0 - 1e-12));
    }
}
