//! Test statistics and p-values for `H0: Rθ = 0` against `H1: Rθ ≥ 0`.
//!
//! Two power-divergence families are available for every `λ`:
//!
//! ```text
//! T_λ = 2n (d_λ(p̄, p̂) − d_λ(p̄, p̃))
//! S_λ = 2n  d_λ(p̃, p̂)
//! ```
//!
//! where `p̄` is the empirical distribution, `p̂` the null fit and `p̃` the
//! order-restricted fit. Both are referred to a chi-bar-squared law whose
//! weights are evaluated at the pooled column proportions.
//!
//! The module also provides the asymptotic Wilcoxon mid-rank test and the
//! closed forms for `2×2` tables.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::chibar::{chibar_pvalue, weights_closed_form, weights_monte_carlo, ChiBarWeights, HMatrix, WeightMethod};
use crate::divergence::{phi_divergence, Branch, PowerDivergenceIndex};
use crate::error::{Error, Result};
use crate::estimation::{mle_null, mle_restricted, RestrictedFit, SolverOptions};
use crate::table::ContingencyTable;

/// The nine indices reported by default.
pub const DEFAULT_LAMBDAS: [f64; 9] = [-1.5, -1.0, -0.5, 0.0, 2.0 / 3.0, 1.0, 1.5, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    T,
    S,
    #[serde(rename = "wilcoxon")]
    Wilcoxon,
    #[serde(rename = "g2_2x2")]
    G2,
    #[serde(rename = "gbar2_2x2")]
    Gbar2,
    #[serde(rename = "gtilde2_2x2")]
    Gtilde2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    /// `None` picks the closed form for `J ≤ 4` and Monte Carlo otherwise.
    pub method: Option<WeightMethod>,
    pub mc_reps: usize,
    pub seed: u64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        WeightOptions {
            method: None,
            mc_reps: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub solver: SolverOptions,
    pub weights: WeightOptions,
}

/// Summary of a Wilcoxon mid-rank computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonStats {
    pub w: f64,
    pub mean: f64,
    pub sd: f64,
    pub z: f64,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub solver_iterations: usize,
    pub solver_starts: usize,
    pub kkt_residual: f64,
    pub active_set: Vec<usize>,
    pub weight_method: Option<WeightMethod>,
    pub mc_reps: Option<usize>,
    pub seed: Option<u64>,
    pub sided: Option<Sided>,
    pub wilcoxon: Option<WilcoxonStats>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub table: ContingencyTable,
    pub lambda: Option<PowerDivergenceIndex>,
    pub family: Family,
    pub statistic: f64,
    /// Withheld when the restricted fit did not converge.
    pub pvalue: Option<f64>,
    pub weights: Option<ChiBarWeights>,
    pub fit_null: Option<RestrictedFit>,
    pub fit_restricted: Option<RestrictedFit>,
    pub diagnostics: Diagnostics,
}

/// Fits and weights for one table, shared by every statistic computed on it.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub table: ContingencyTable,
    pub options: AnalysisOptions,
    pub fit_null: RestrictedFit,
    pub fit_restricted: RestrictedFit,
    pub weights: ChiBarWeights,
    p_bar: Vec<f64>,
    n: f64,
}

impl Analysis {
    pub fn new(table: &ContingencyTable, options: &AnalysisOptions) -> Result<Self> {
        let j = table.categories();
        let fit_null = mle_null(table, &options.solver)?;
        let mut fit_restricted = mle_restricted(table, &options.solver)?;
        if fit_restricted.converged && fit_restricted.active_set.len() == j - 1 {
            // every constraint binds: the restricted optimum is the null one
            fit_restricted.theta = fit_null.theta.clone();
            fit_restricted.p = fit_null.p.clone();
            fit_restricted.loglik = fit_null.loglik;
        }
        let h = HMatrix::from_table(table, options.solver.zero_cell_eps)?;
        let w = &options.weights;
        let method = w.method.unwrap_or(if j <= 4 {
            WeightMethod::ClosedForm
        } else {
            WeightMethod::MonteCarlo
        });
        let weights = match method {
            WeightMethod::ClosedForm => weights_closed_form(&h)?,
            WeightMethod::MonteCarlo => weights_monte_carlo(&h, w.mc_reps, w.seed)?,
        };
        Ok(Analysis {
            table: table.clone(),
            options: *options,
            fit_null,
            fit_restricted,
            weights,
            p_bar: table.empirical().into_vec(),
            n: table.total() as f64,
        })
    }

    /// `T_λ`. Cells with a zero observed count are left out of the sums.
    pub fn t_statistic(&self, lambda: PowerDivergenceIndex) -> f64 {
        let p_hat = self.fit_null.p.as_slice();
        let p_til = self.fit_restricted.p.as_slice();
        let cells = self
            .p_bar
            .iter()
            .zip(p_hat.iter().zip(p_til))
            .filter(|(&b, _)| b > 0.0)
            .map(|(&b, (&h, &t))| (b, h, t));
        let l = lambda.value();
        let sum: f64 = match lambda.branch() {
            Branch::Kullback => cells.map(|(b, h, t)| b * (t / h).ln()).sum(),
            Branch::ReverseKullback => cells.map(|(b, h, t)| h * (h / b).ln() - t * (t / b).ln()).sum(),
            Branch::Generic => {
                cells.map(|(b, h, t)| b * ((b / h).powf(l) - (b / t).powf(l))).sum::<f64>() / (l * (l + 1.0))
            }
        };
        2.0 * self.n * sum
    }

    /// `S_λ`; always nonnegative.
    pub fn s_statistic(&self, lambda: PowerDivergenceIndex) -> f64 {
        let d = phi_divergence(self.fit_restricted.p.as_slice(), self.fit_null.p.as_slice(), lambda)
            .expect("fitted probabilities are positive");
        2.0 * self.n * d
    }

    pub fn statistic(&self, family: Family, lambda: PowerDivergenceIndex) -> Result<f64> {
        match family {
            Family::T => Ok(self.t_statistic(lambda)),
            Family::S => Ok(self.s_statistic(lambda)),
            other => Err(Error::Unsupported(format!("{other:?} is not a power-divergence family"))),
        }
    }

    pub fn pvalue(&self, statistic: f64) -> f64 {
        chibar_pvalue(statistic, &self.weights)
    }

    pub fn report(&self, family: Family, lambda: PowerDivergenceIndex) -> Result<TestReport> {
        let statistic = self.statistic(family, lambda)?;
        let converged = self.fit_restricted.converged;
        let w = &self.options.weights;
        let mc = self.weights.method == WeightMethod::MonteCarlo;
        Ok(TestReport {
            table: self.table.clone(),
            lambda: Some(lambda),
            family,
            statistic,
            pvalue: converged.then(|| self.pvalue(statistic)),
            weights: Some(self.weights.clone()),
            fit_null: Some(self.fit_null.clone()),
            fit_restricted: Some(self.fit_restricted.clone()),
            diagnostics: Diagnostics {
                converged,
                solver_iterations: self.fit_restricted.iterations,
                solver_starts: self.fit_restricted.starts,
                kkt_residual: self.fit_restricted.kkt_residual,
                active_set: self.fit_restricted.active_set.clone(),
                weight_method: Some(self.weights.method),
                mc_reps: self.weights.mc_reps,
                seed: mc.then_some(w.seed),
                note: (!converged).then(|| "restricted fit did not converge; p-value withheld".to_string()),
                ..Default::default()
            },
        })
    }
}

pub fn t_statistic(table: &ContingencyTable, lambda: PowerDivergenceIndex, options: &AnalysisOptions) -> Result<f64> {
    Ok(Analysis::new(table, options)?.t_statistic(lambda))
}

pub fn s_statistic(table: &ContingencyTable, lambda: PowerDivergenceIndex, options: &AnalysisOptions) -> Result<f64> {
    Ok(Analysis::new(table, options)?.s_statistic(lambda))
}

/// Runs one test. Power-divergence families go through the chi-bar
/// pipeline; the Wilcoxon family is one-sided here, and the `2×2` families
/// require `J = 2`.
pub fn run_test(
    table: &ContingencyTable,
    lambda: PowerDivergenceIndex,
    family: Family,
    options: &AnalysisOptions,
) -> Result<TestReport> {
    match family {
        Family::T | Family::S => Analysis::new(table, options)?.report(family, lambda),
        Family::Wilcoxon => wilcoxon_midrank(table, Sided::One),
        Family::G2 => Ok(two_by_two_suite(table)?[0].clone()),
        Family::Gbar2 => Ok(two_by_two_suite(table)?[1].clone()),
        Family::Gtilde2 => Ok(two_by_two_suite(table)?[2].clone()),
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Mid-rank sum of row 1 with its tie-corrected normal approximation.
pub fn wilcoxon_stats(table: &ContingencyTable) -> Result<WilcoxonStats> {
    let j = table.categories();
    let n = table.total() as f64;
    if n < 2.0 {
        return Err(Error::Degenerate("need at least two observations".into()));
    }
    let n1 = table.row_total(0) as f64;
    let n2 = table.row_total(1) as f64;
    let mut below = 0.0;
    let mut w = 0.0;
    let mut ties = 0.0;
    for m in 0..j {
        let t = table.column_total(m) as f64;
        let rank = below + (t + 1.0) / 2.0;
        w += rank * table.count(0, m) as f64;
        ties += t * t * t - t;
        below += t;
    }
    let mean = n1 * (n + 1.0) / 2.0;
    let var = n1 * n2 / 12.0 * (n + 1.0 - ties / (n * (n - 1.0)));
    if !(var > 0.0) {
        return Err(Error::Degenerate("all observations fall in one category".into()));
    }
    let sd = var.sqrt();
    let z = (w - mean) / sd;
    Ok(WilcoxonStats {
        w,
        mean,
        sd,
        z,
        p_one_sided: std_normal_cdf(z),
        p_two_sided: (2.0 * std_normal_cdf(-z.abs())).min(1.0),
    })
}

/// Asymptotic Wilcoxon mid-rank test. Small rank sums in row 1 count as
/// evidence for the one-sided alternative.
pub fn wilcoxon_midrank(table: &ContingencyTable, sided: Sided) -> Result<TestReport> {
    let s = wilcoxon_stats(table)?;
    let p = match sided {
        Sided::One => s.p_one_sided,
        Sided::Two => s.p_two_sided,
    };
    Ok(TestReport {
        table: table.clone(),
        lambda: None,
        family: Family::Wilcoxon,
        statistic: s.w,
        pvalue: Some(p),
        weights: None,
        fit_null: None,
        fit_restricted: None,
        diagnostics: Diagnostics {
            converged: true,
            sided: Some(sided),
            wilcoxon: Some(s),
            ..Default::default()
        },
    })
}

/// Closed-form statistics and p-values for a `2×2` table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoByTwo {
    pub g2: f64,
    pub g2_pvalue: f64,
    pub gbar2: f64,
    pub gbar2_pvalue: f64,
    pub gtilde2: f64,
    pub gtilde2_pvalue: f64,
}

pub fn two_by_two(table: &ContingencyTable) -> Result<TwoByTwo> {
    if table.categories() != 2 {
        return Err(Error::InvalidDimension(format!(
            "2x2 tests need J = 2, got J = {}",
            table.categories()
        )));
    }
    let n = table.total() as f64;
    let mut gbar2 = 0.0;
    for i in 0..2 {
        let ni = table.row_total(i) as f64;
        for j in 0..2 {
            let nij = table.count(i, j) as f64;
            if nij > 0.0 {
                gbar2 += 2.0 * nij * ((nij / ni) / (table.column_total(j) as f64 / n)).ln();
            }
        }
    }
    let gbar2 = gbar2.max(0.0);
    let sf = |x: f64| ChiSquared::new(1.0).expect("df = 1").sf(x);
    // compare n11/n1 with n21/n2 exactly
    let lhs = table.count(0, 0) as u128 * table.row_total(1) as u128;
    let rhs = table.count(1, 0) as u128 * table.row_total(0) as u128;
    let (g2, g2_pvalue) = if lhs > rhs { (gbar2, 0.5 * sf(gbar2)) } else { (0.0, 1.0) };
    let (gtilde2, gtilde2_pvalue) = if lhs >= rhs { (gbar2, 0.5 * sf(gbar2)) } else { (0.0, 1.0) };
    Ok(TwoByTwo {
        g2,
        g2_pvalue,
        gbar2,
        gbar2_pvalue: sf(gbar2),
        gtilde2,
        gtilde2_pvalue,
    })
}

/// One-sided `G²`, two-sided `Ḡ²` and composite-null `G̃²`, in that order.
pub fn two_by_two_suite(table: &ContingencyTable) -> Result<[TestReport; 3]> {
    let r = two_by_two(table)?;
    let make = |family, statistic, pvalue, sided| TestReport {
        table: table.clone(),
        lambda: Some(PowerDivergenceIndex(0.0)),
        family,
        statistic,
        pvalue: Some(pvalue),
        weights: None,
        fit_null: None,
        fit_restricted: None,
        diagnostics: Diagnostics {
            converged: true,
            sided: Some(sided),
            ..Default::default()
        },
    };
    Ok([
        make(Family::G2, r.g2, r.g2_pvalue, Sided::One),
        make(Family::Gbar2, r.gbar2, r.gbar2_pvalue, Sided::Two),
        make(Family::Gtilde2, r.gtilde2, r.gtilde2_pvalue, Sided::One),
    ])
}
