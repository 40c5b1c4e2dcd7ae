//! Monte Carlo estimation of size and power.
//!
//! Replication `r` draws its table from a ChaCha stream keyed by
//! `(seed, r)`, so estimates do not depend on scheduling or thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::PowerDivergenceIndex;
use crate::error::{Error, Result};
use crate::hypothesis::{two_by_two, wilcoxon_stats, Analysis, AnalysisOptions, Sided, TwoByTwo, WilcoxonStats};
use crate::table::ContingencyTable;

/// Replications per progress record.
pub const CHUNK: usize = 1000;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 1e-3;

/// Half-width of the acceptance band on the logit scale.
pub const DALE_E: f64 = 0.35;

/// How the two row distributions are specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// The one-parameter family of [`scenario_probs`].
    Delta { delta: f64, categories: usize },
    Explicit { pi1: Vec<f64>, pi2: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n1: u64,
    pub n2: u64,
    pub design: Design,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Sample sizes of the seven standard scenarios `A` to `G`.
pub const SCENARIOS: [(&str, u64, u64); 7] = [
    ("A", 20, 4),
    ("B", 20, 10),
    ("C", 20, 16),
    ("D", 20, 20),
    ("E", 16, 20),
    ("F", 10, 20),
    ("G", 4, 20),
];

impl Scenario {
    /// One of the standard `2×3` scenarios at shift `delta`.
    pub fn standard(name: &str, delta: f64, reps: usize, alpha: f64, seed: u64) -> Result<Self> {
        let (_, n1, n2) = SCENARIOS
            .iter()
            .find(|(s, ..)| s.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Domain(format!("unknown scenario {name:?}; expected A..G")))?;
        let s = Scenario {
            name: name.to_ascii_uppercase(),
            n1: *n1,
            n2: *n2,
            design: Design::Delta { delta, categories: 3 },
            reps,
            alpha,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::Domain("sample sizes must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(Error::Domain("reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.probs().map(|_| ())
    }

    pub fn categories(&self) -> usize {
        match &self.design {
            Design::Delta { categories, .. } => *categories,
            Design::Explicit { pi1, .. } => pi1.len(),
        }
    }

    pub fn probs(&self) -> Result<[Vec<f64>; 2]> {
        match &self.design {
            Design::Delta { delta, categories } => scenario_probs(*delta, *categories),
            Design::Explicit { pi1, pi2 } => {
                for pi in [pi1, pi2] {
                    check_probs(pi)?;
                }
                if pi1.len() != pi2.len() {
                    return Err(Error::InvalidDimension("row distributions differ in length".into()));
                }
                Ok([pi1.clone(), pi2.clone()])
            }
        }
    }
}

fn check_probs(pi: &[f64]) -> Result<()> {
    if pi.len() < 2 {
        return Err(Error::InvalidDimension("need at least two categories".into()));
    }
    if pi.iter().any(|&x| !(x >= 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("{pi:?} is not a probability vector")));
    }
    Ok(())
}

/// `π_ij ∝ 1 + i(j−1)δ` for rows `i ∈ {1, 2}` and categories `j = 1..J`.
///
/// For `J = 3` this is `(1/3)(1 + i(j−1)δ)/(1 + iδ)`. `δ = 0` is the null.
pub fn scenario_probs(delta: f64, categories: usize) -> Result<[Vec<f64>; 2]> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("delta must be finite and nonnegative, got {delta}")));
    }
    if categories < 2 {
        return Err(Error::InvalidDimension(format!("need J >= 2, got {categories}")));
    }
    let jf = categories as f64;
    Ok([1.0, 2.0].map(|i: f64| {
        let total = jf + i * delta * jf * (jf - 1.0) / 2.0;
        (0..categories).map(|j| (1.0 + i * j as f64 * delta) / total).collect()
    }))
}

/// One multinomial draw by sequential conditional binomials.
pub fn multinomial_sample<R: Rng + ?Sized>(probs: &[f64], n: u64, rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (j, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == probs.len() {
            out[j] = left;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 1.0 };
        let x = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        out[j] = x;
        left -= x;
        mass -= p;
    }
    out
}

/// A test evaluated in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Statistic {
    T(f64),
    S(f64),
    Wilcoxon(Sided),
    G2,
    Gbar2,
    Gtilde2,
}

impl Statistic {
    fn needs_fit(&self) -> bool {
        matches!(self, Statistic::T(_) | Statistic::S(_))
    }

    fn needs_two_by_two(&self) -> bool {
        matches!(self, Statistic::G2 | Statistic::Gbar2 | Statistic::Gtilde2)
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::T(l) => write!(f, "T_{l}"),
            Statistic::S(l) => write!(f, "S_{l}"),
            Statistic::Wilcoxon(Sided::One) => f.write_str("W_one"),
            Statistic::Wilcoxon(Sided::Two) => f.write_str("W_two"),
            Statistic::G2 => f.write_str("G2"),
            Statistic::Gbar2 => f.write_str("Gbar2"),
            Statistic::Gtilde2 => f.write_str("Gtilde2"),
        }
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lambda = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Domain(format!("bad lambda in statistic {s:?}")))
        };
        match s {
            "W_one" | "W" => Ok(Statistic::Wilcoxon(Sided::One)),
            "W_two" => Ok(Statistic::Wilcoxon(Sided::Two)),
            "G2" => Ok(Statistic::G2),
            "Gbar2" => Ok(Statistic::Gbar2),
            "Gtilde2" => Ok(Statistic::Gtilde2),
            _ => {
                if let Some(v) = s.strip_prefix("T_") {
                    Ok(Statistic::T(lambda(v)?))
                } else if let Some(v) = s.strip_prefix("S_") {
                    Ok(Statistic::S(lambda(v)?))
                } else {
                    Err(Error::Domain(format!("unknown statistic {s:?}")))
                }
            }
        }
    }
}

impl From<Statistic> for String {
    fn from(s: Statistic) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Statistic {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub statistic: Statistic,
    /// Share of replications with p-value below `alpha`.
    pub rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub scenario: Scenario,
    pub estimates: Vec<RateEstimate>,
    /// Replications that produced a usable table and fit.
    pub reps: usize,
    pub failures: usize,
}

impl PowerEstimate {
    pub fn rate(&self, statistic: Statistic) -> Option<f64> {
        self.estimates.iter().find(|e| e.statistic == statistic).map(|e| e.rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
    pub failures: usize,
}

fn draw_table(scenario: &Scenario, probs: &[Vec<f64>; 2], rep: usize) -> Result<ContingencyTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(rep as u64);
    let r1 = multinomial_sample(&probs[0], scenario.n1, &mut rng);
    let r2 = multinomial_sample(&probs[1], scenario.n2, &mut rng);
    ContingencyTable::new(r1, r2)
}

/// Rejection indicators for one replication, or `None` if it failed.
fn replicate(
    scenario: &Scenario,
    probs: &[Vec<f64>; 2],
    rep: usize,
    statistics: &[Statistic],
    options: &AnalysisOptions,
) -> Option<Vec<bool>> {
    let table = draw_table(scenario, probs, rep).ok()?;
    let analysis = if statistics.iter().any(Statistic::needs_fit) {
        let a = Analysis::new(&table, options).ok()?;
        if !a.fit_restricted.converged {
            return None;
        }
        Some(a)
    } else {
        None
    };
    let wilcoxon: Option<WilcoxonStats> = wilcoxon_stats(&table).ok();
    let closed: Option<TwoByTwo> = if statistics.iter().any(Statistic::needs_two_by_two) {
        Some(two_by_two(&table).ok()?)
    } else {
        None
    };
    let alpha = scenario.alpha;
    Some(
        statistics
            .iter()
            .map(|s| {
                let p = match s {
                    Statistic::T(l) => {
                        let a = analysis.as_ref().expect("fit computed");
                        a.pvalue(a.t_statistic(PowerDivergenceIndex(*l)))
                    }
                    Statistic::S(l) => {
                        let a = analysis.as_ref().expect("fit computed");
                        a.pvalue(a.s_statistic(PowerDivergenceIndex(*l)))
                    }
                    // all mass in one category: no evidence either way
                    Statistic::Wilcoxon(side) => match (wilcoxon, side) {
                        (Some(w), Sided::One) => w.p_one_sided,
                        (Some(w), Sided::Two) => w.p_two_sided,
                        (None, _) => 1.0,
                    },
                    Statistic::G2 => closed.expect("2x2 computed").g2_pvalue,
                    Statistic::Gbar2 => closed.expect("2x2 computed").gbar2_pvalue,
                    Statistic::Gtilde2 => closed.expect("2x2 computed").gtilde2_pvalue,
                };
                p < alpha
            })
            .collect(),
    )
}

/// Rejection rates of each statistic over `scenario.reps` simulated tables.
///
/// Replications run in parallel in chunks of [`CHUNK`]; `progress` is called
/// after each chunk. More than [`MAX_FAILURE_RATE`] failed replications
/// abort the run.
pub fn estimate_size_power(
    scenario: &Scenario,
    statistics: &[Statistic],
    options: &AnalysisOptions,
    progress: Option<&(dyn Fn(Progress) + Sync)>,
) -> Result<PowerEstimate> {
    scenario.validate()?;
    if statistics.is_empty() {
        return Err(Error::Domain("no statistics requested".into()));
    }
    if scenario.categories() != 2 && statistics.iter().any(Statistic::needs_two_by_two) {
        return Err(Error::InvalidDimension("2x2 statistics need a J = 2 design".into()));
    }
    let probs = scenario.probs()?;
    let k = statistics.len();
    let max_failures = (MAX_FAILURE_RATE * scenario.reps as f64).floor() as usize;
    let mut hits = vec![0usize; k];
    let mut failures = 0usize;
    let mut done = 0usize;
    while done < scenario.reps {
        let end = (done + CHUNK).min(scenario.reps);
        let (chunk_hits, chunk_failures) = (done..end)
            .into_par_iter()
            .map(|rep| match replicate(scenario, &probs, rep, statistics, options) {
                Some(r) => (r.into_iter().map(usize::from).collect::<Vec<_>>(), 0usize),
                None => (vec![0; k], 1),
            })
            .reduce(
                || (vec![0; k], 0),
                |(mut a, fa), (b, fb)| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    (a, fa + fb)
                },
            );
        hits.iter_mut().zip(chunk_hits).for_each(|(x, y)| *x += y);
        failures += chunk_failures;
        done = end;
        if failures > max_failures {
            return Err(Error::TooManyFailures {
                failed: failures,
                reps: scenario.reps,
            });
        }
        if let Some(cb) = progress {
            cb(Progress {
                done,
                total: scenario.reps,
                failures,
            });
        }
    }
    let good = scenario.reps - failures;
    let estimates = statistics
        .iter()
        .zip(hits)
        .map(|(&statistic, h)| {
            let rate = if good > 0 { h as f64 / good as f64 } else { f64::NAN };
            RateEstimate {
                statistic,
                rate,
                mc_se: (rate * (1.0 - rate) / good as f64).sqrt(),
            }
        })
        .collect();
    Ok(PowerEstimate {
        scenario: scenario.clone(),
        estimates,
        reps: good,
        failures,
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `|logit(1 − α̂) − logit(1 − α)|`.
pub fn dale_distance(alpha_hat: f64, alpha: f64) -> f64 {
    (logit(1.0 - alpha_hat) - logit(1.0 - alpha)).abs()
}

/// Interval of simulated sizes accepted by the logit criterion with
/// half-width `e`, widened outward to four decimals (the resolution at
/// which sizes are reported). For `α = 0.05`, `e = 0.35` this is
/// `[0.0357, 0.0695]`.
pub fn dale_band(alpha: f64, e: f64) -> (f64, f64) {
    let centre = logit(1.0 - alpha);
    let lo = 1.0 / (1.0 + (centre + e).exp());
    let hi = 1.0 / (1.0 + (centre - e).exp());
    // the nudge keeps endpoints that already sit on the grid from moving
    ((lo * 1e4 + 1e-9).floor() / 1e4, (hi * 1e4 - 1e-9).ceil() / 1e4)
}

pub fn dale_filter(alpha_hat: f64, alpha: f64, e: f64) -> bool {
    let (lo, hi) = dale_band(alpha, e);
    let a = (alpha_hat * 1e4).round() / 1e4;
    (lo..=hi).contains(&a)
}

/// Relative local efficiency of `target` against `baseline`, each given as
/// `(size, power)`.
pub fn relative_efficiency(target: (f64, f64), baseline: (f64, f64)) -> Result<f64> {
    let gain_b = baseline.1 - baseline.0;
    if gain_b == 0.0 || !gain_b.is_finite() {
        return Err(Error::UndefinedEfficiency);
    }
    Ok(((target.1 - target.0) - gain_b) / gain_b)
}
