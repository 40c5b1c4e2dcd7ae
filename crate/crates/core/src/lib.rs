//! Likelihood-ratio order tests for `2×J` ordinal contingency tables.
//!
//! Two treatments are compared on an ordinal response. The null hypothesis
//! says all local odds ratios equal one; the alternative says they are all
//! at least one (likelihood-ratio ordering), with one strict. The crate
//! provides
//!
//! * the null and order-restricted maximum likelihood fits ([`estimation`]),
//! * power-divergence statistics `T_λ` and `S_λ` ([`hypothesis`]),
//! * chi-bar-squared weights and p-values ([`chibar`]),
//! * the Wilcoxon mid-rank test and `2×2` closed forms,
//! * a Monte Carlo engine for size and power ([`simulation`]).
//!
//! ```
//! use lro::{Analysis, AnalysisOptions, ContingencyTable};
//!
//! let table = ContingencyTable::new(vec![11, 8, 8, 5], vec![6, 4, 10, 12])?;
//! let a = Analysis::new(&table, &AnalysisOptions::default())?;
//! let t = a.t_statistic(0.0.into());
//! assert!((t - 6.0323).abs() < 1e-3);
//! assert!((a.pvalue(t) - 0.0225).abs() < 5e-4);
//! # Ok::<(), lro::Error>(())
//! ```

pub mod chibar;
pub mod divergence;
pub mod error;
pub mod estimation;
pub mod hypothesis;
pub mod io;
pub mod simulation;
pub mod table;

pub use chibar::{
    chibar_pvalue, fisher_information, h_matrix, weights_closed_form, weights_monte_carlo, ChiBarWeights, HMatrix,
    WeightMethod,
};
pub use divergence::{hellinger_sq, kullback, pearson, phi_divergence, PowerDivergenceIndex};
pub use error::{Error, Result};
pub use estimation::{active_set_oracle, mle_null, mle_restricted, RestrictedFit, SolverOptions};
pub use hypothesis::{
    run_test, s_statistic, t_statistic, two_by_two, two_by_two_suite, wilcoxon_midrank, wilcoxon_stats, Analysis,
    AnalysisOptions, Family, Sided, TestReport, TwoByTwo, WeightOptions, WilcoxonStats, DEFAULT_LAMBDAS,
};
pub use io::{parse_csv, parse_json, parse_table};
pub use simulation::{
    dale_filter, estimate_size_power, multinomial_sample, relative_efficiency, scenario_probs, Design,
    PowerEstimate, Scenario, Statistic,
};
pub use table::{
    build_design_matrices, local_odds_ratios, prob_to_theta, theta_to_prob, ContingencyTable, DesignMatrices,
    ProbabilityCells, ThetaVector,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tables.md")]
    mod tables {}
    #[doc = include_str!("../../../book/src/divergences.md")]
    mod divergences {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/chibar.md")]
    mod chibar {}
    #[doc = include_str!("../../../book/src/tests.md")]
    mod tests {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
