//! Fisher information, the constraint covariance `H`, and chi-bar-squared
//! mixture weights and tail probabilities.
//!
//! Weight `w_j` multiplies `χ²_{(J−1)−j}`; `j` counts constraints that are
//! active in the projection, so `w_0` is the orthant probability of
//! `N(0, H)` and `w_{J−1}` that of `N(0, H⁻¹)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::table::{row_conditionals, ContingencyTable, ThetaVector};

/// Smallest Monte Carlo sample size accepted by [`weights_monte_carlo`].
pub const MIN_MC_REPS: usize = 10_000;

/// Antithetic pairs per parallel work unit.
const MC_BLOCK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiBarWeights {
    pub w: Vec<f64>,
    pub method: WeightMethod,
    pub mc_reps: Option<usize>,
}

impl ChiBarWeights {
    /// Number of categories `J` (one more than the number of constraints).
    pub fn categories(&self) -> usize {
        self.w.len()
    }
}

/// The `(J−1)×(J−1)` covariance of the local log odds ratios under `H0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub h: DMatrix<f64>,
    pub nu1: f64,
    pub nu2: f64,
    pub pi: Vec<f64>,
}

#[derive(Serialize)]
struct HMatrixView<'a> {
    h: Vec<Vec<f64>>,
    nu1: f64,
    nu2: f64,
    pi: &'a [f64],
}

impl Serialize for HMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        HMatrixView {
            h: self.rows(),
            nu1: self.nu1,
            nu2: self.nu2,
            pi: &self.pi,
        }
        .serialize(s)
    }
}

impl HMatrix {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.h.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.h[(i, j)] / (self.h[(i, i)] * self.h[(j, j)]).sqrt()
    }

    /// Partial correlation of coordinates `i`, `j` given `k`.
    pub fn partial_correlation(&self, i: usize, j: usize, k: usize) -> f64 {
        let (rij, rik, rkj) = (self.correlation(i, j), self.correlation(i, k), self.correlation(k, j));
        (rij - rik * rkj) / ((1.0 - rik * rik) * (1.0 - rkj * rkj)).sqrt()
    }

    /// `H` at the pooled column proportions and observed row fractions.
    ///
    /// Empty columns receive the pseudo-count `eps`.
    pub fn from_table(table: &ContingencyTable, eps: f64) -> Result<Self> {
        let j = table.categories();
        let c = table.smoothed_counts(eps);
        let cols: Vec<f64> = (0..j).map(|m| c[m] + c[j + m]).collect();
        let total: f64 = cols.iter().sum();
        let pi: Vec<f64> = cols.iter().map(|x| x / total).collect();
        let (nu1, nu2) = table.fractions();
        h_matrix(&pi, nu1, nu2)
    }
}

fn check_fractions(nu1: f64, nu2: f64) -> Result<()> {
    if !(nu1 > 0.0 && nu2 > 0.0) || (nu1 + nu2 - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!(
            "sampling fractions must be positive and sum to 1, got ({nu1}, {nu2})"
        )));
    }
    Ok(())
}

/// Per-observation Fisher information of `θ = (θ2, θ12)`.
///
/// `Σ_i ν_i W_iᵀ (D_πi − π_i π_iᵀ) W_i`, where `W_i` maps `θ` to the free
/// log-odds of row `i`. At a point of the null this reduces to
/// `[[1, ν1], [ν1, ν1]] ⊗ (D_π − ππᵀ)`.
pub fn fisher_information(theta0: &ThetaVector, nu1: f64, nu2: f64) -> Result<DMatrix<f64>> {
    check_fractions(nu1, nu2)?;
    let pis = row_conditionals(theta0)?;
    if pis.iter().flatten().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("category probabilities must be positive".into()));
    }
    let k = theta0.categories() - 1;
    let cov = |pi: &[f64]| {
        DMatrix::from_fn(k, k, |a, b| if a == b { pi[a] } else { 0.0 } - pi[a] * pi[b])
    };
    let c1 = cov(&pis[0]) * nu1;
    let c2 = cov(&pis[1]) * nu2;
    let mut f = DMatrix::zeros(2 * k, 2 * k);
    f.view_mut((0, 0), (k, k)).copy_from(&(&c1 + &c2));
    f.view_mut((0, k), (k, k)).copy_from(&c1);
    f.view_mut((k, 0), (k, k)).copy_from(&c1);
    f.view_mut((k, k), (k, k)).copy_from(&c1);
    Ok(f)
}

/// Tridiagonal `H = (G D⁻¹ Gᵀ + e eᵀ/π_J) / (ν1 ν2)`.
pub fn h_matrix(pi: &[f64], nu1: f64, nu2: f64) -> Result<HMatrix> {
    check_fractions(nu1, nu2)?;
    let j = pi.len();
    if j < 2 {
        return Err(Error::InvalidDimension(format!("need J >= 2 categories, got {j}")));
    }
    if pi.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("category probabilities must be strictly positive".into()));
    }
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!("category probabilities sum to {s}")));
    }
    let k = j - 1;
    let scale = 1.0 / (nu1 * nu2);
    let h = DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            scale * (pi[a] + pi[a + 1]) / (pi[a] * pi[a + 1])
        } else if a.abs_diff(b) == 1 {
            -scale / pi[a.max(b)]
        } else {
            0.0
        }
    });
    Ok(HMatrix {
        h,
        nu1,
        nu2,
        pi: pi.to_vec(),
    })
}

/// Closed-form weights for `J ≤ 4`.
pub fn weights_closed_form(h: &HMatrix) -> Result<ChiBarWeights> {
    let w = match h.dim() + 1 {
        2 => vec![0.5, 0.5],
        3 => {
            let w2 = h.correlation(0, 1).acos() / (2.0 * PI);
            vec![0.5 - w2, 0.5, w2]
        }
        4 => {
            let a12 = h.correlation(0, 1).acos();
            let a13 = h.correlation(0, 2).acos();
            let a23 = h.correlation(1, 2).acos();
            let b12 = h.partial_correlation(0, 1, 2).acos();
            let b13 = h.partial_correlation(0, 2, 1).acos();
            let b23 = h.partial_correlation(1, 2, 0).acos();
            let w0 = (2.0 * PI - a12 - a13 - a23) / (4.0 * PI);
            let w1 = (3.0 * PI - b12 - b13 - b23) / (4.0 * PI);
            vec![w0, w1, 0.5 - w0, 0.5 - w1]
        }
        j => {
            return Err(Error::Unsupported(format!(
                "closed-form weights exist for J <= 4, got J = {j}; use Monte Carlo"
            )))
        }
    };
    Ok(ChiBarWeights {
        w,
        method: WeightMethod::ClosedForm,
        mc_reps: None,
    })
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Covariances of `Z1(S)` and `Z2(S)` for the active set `S`.
fn subset_covariances(h: &DMatrix<f64>, s: &[usize], sc: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if s.is_empty() {
        return Ok((DMatrix::zeros(0, 0), h.clone()));
    }
    let a = submatrix(h, s, s);
    let a_inv = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalRank(format!("H({s:?}, {s:?}) is not positive definite")))?
        .inverse();
    let b = submatrix(h, sc, s);
    let schur = submatrix(h, sc, sc) - &b * &a_inv * b.transpose();
    Ok((a_inv, schur))
}

/// Monte Carlo orthant probability `Pr(X ≥ 0)` for `X ~ N(0, cov)`.
fn orthant(cov: &DMatrix<f64>, pairs: usize, seed: u64, stream: u64) -> Result<f64> {
    let d = cov.nrows();
    match d {
        0 => return Ok(1.0),
        1 => return Ok(0.5),
        _ => {}
    }
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalRank("orthant covariance is not positive definite".into()))?
        .l();
    let blocks = pairs.div_ceil(MC_BLOCK);
    let hits: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((stream << 32) | b as u64);
            let n = MC_BLOCK.min(pairs - b * MC_BLOCK);
            let mut z = DVector::zeros(d);
            let mut hits = 0u64;
            for _ in 0..n {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let x = &l * &z;
                if x.iter().all(|&v| v >= 0.0) {
                    hits += 1;
                }
                if x.iter().all(|&v| v <= 0.0) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(hits as f64 / (2 * pairs) as f64)
}

/// Weights from Monte Carlo orthant probabilities, for any `J`.
///
/// Each orthant of dimension two or more uses `reps` normal draws, taken as
/// antithetic pairs. The result is deterministic given `seed` and does not
/// depend on the number of worker threads.
pub fn weights_monte_carlo(h: &HMatrix, reps: usize, seed: u64) -> Result<ChiBarWeights> {
    if reps < MIN_MC_REPS {
        return Err(Error::Domain(format!(
            "Monte Carlo weights need at least {MIN_MC_REPS} draws, got {reps}"
        )));
    }
    let k = h.dim();
    if k > 20 {
        return Err(Error::Unsupported(format!("J = {} is too large for subset enumeration", k + 1)));
    }
    let pairs = reps.div_ceil(2);
    let mut w = vec![0.0; k + 1];
    for mask in 0u64..(1 << k) {
        let s: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        let sc: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) == 0).collect();
        let (c1, c2) = subset_covariances(&h.h, &s, &sc)?;
        let p1 = orthant(&c1, pairs, seed, mask << 1)?;
        let p2 = orthant(&c2, pairs, seed, (mask << 1) | 1)?;
        w[s.len()] += p1 * p2;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(ChiBarWeights {
        w,
        method: WeightMethod::MonteCarlo,
        mc_reps: Some(reps),
    })
}

/// `Pr(χ̄² > t) = Σ_{j<J−1} w_j Pr(χ²_{(J−1)−j} > t)`, and 1 for `t ≤ 0`.
pub fn chibar_pvalue(t: f64, w: &ChiBarWeights) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t <= 0.0 {
        return 1.0;
    }
    let k = w.w.len() - 1;
    let p: f64 = (0..k)
        .map(|j| {
            let df = (k - j) as f64;
            w.w[j] * ChiSquared::new(df).expect("positive degrees of freedom").sf(t)
        })
        .sum();
    p.clamp(0.0, 1.0)
}
