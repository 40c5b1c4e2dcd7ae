//! The 2×J table, its saturated loglinear parametrization, and the maps
//! between parameters, cell probabilities and local odds ratios.
//!
//! Cells are always laid out row-major: `(p11, …, p1J, p21, …, p2J)`.
//! Row 1 is the control treatment and row 2 the treatment under study.
//!
//! The free parameters are `θ = (θ2, θ12)`, each block of length `J−1`.
//! With the identifiability zeros `θ2(J) = θ12(1J) = θ12(2j) = u1(2) = 0`,
//!
//! ```text
//! log p2j = u + θ2(j)
//! log p1j = u + u1 + θ2(j) + θ12(j)
//! ```
//!
//! where `u` and `u1` are fixed by the row totals and never stored.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed 2×J table of counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct ContingencyTable {
    rows: [Vec<u64>; 2],
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    counts: Vec<Vec<u64>>,
}

impl TryFrom<RawTable> for ContingencyTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        ContingencyTable::from_rows(raw.counts)
    }
}

impl From<ContingencyTable> for RawTable {
    fn from(t: ContingencyTable) -> Self {
        let [a, b] = t.rows;
        RawTable { counts: vec![a, b] }
    }
}

impl ContingencyTable {
    pub fn new(row1: Vec<u64>, row2: Vec<u64>) -> Result<Self> {
        if row1.len() != row2.len() {
            return Err(Error::InvalidDimension(format!(
                "rows have {} and {} columns",
                row1.len(),
                row2.len()
            )));
        }
        if row1.len() < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least 2 response categories, got {}",
                row1.len()
            )));
        }
        let table = ContingencyTable { rows: [row1, row2] };
        for i in 0..2 {
            if table.row_total(i) == 0 {
                return Err(Error::Degenerate(format!("row {} has no observations", i + 1)));
            }
        }
        Ok(table)
    }

    /// Builds a table from a list of rows, requiring exactly two.
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        if rows.len() != 2 {
            return Err(Error::InvalidDimension(format!(
                "exactly two treatment rows required, got {}",
                rows.len()
            )));
        }
        let mut it = rows.into_iter();
        let (a, b) = (it.next().unwrap(), it.next().unwrap());
        Self::new(a, b)
    }

    /// Number of response categories `J`.
    pub fn categories(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.rows[i]
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.rows[i][j]
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.rows[i].iter().sum()
    }

    pub fn column_total(&self, j: usize) -> u64 {
        self.rows[0][j] + self.rows[1][j]
    }

    /// Total sample size `n = n1 + n2`.
    pub fn total(&self) -> u64 {
        self.row_total(0) + self.row_total(1)
    }

    /// Sampling fractions `(n1/n, n2/n)`.
    pub fn fractions(&self) -> (f64, f64) {
        let n = self.total() as f64;
        (self.row_total(0) as f64 / n, self.row_total(1) as f64 / n)
    }

    /// Empirical joint frequencies `p̄ = N / n`. Zero cells stay zero.
    pub fn empirical(&self) -> ProbabilityCells {
        let n = self.total() as f64;
        ProbabilityCells {
            p: self.cells().map(|c| c as f64 / n).collect(),
        }
    }

    /// Counts with every zero cell replaced by `eps`, row-major.
    pub fn smoothed_counts(&self, eps: f64) -> Vec<f64> {
        self.cells()
            .map(|c| if c == 0 { eps } else { c as f64 })
            .collect()
    }

    /// Counts in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = u64> + '_ {
        self.rows[0].iter().chain(self.rows[1].iter()).copied()
    }

    /// The same table with the treatment rows exchanged.
    pub fn swapped(&self) -> Self {
        ContingencyTable {
            rows: [self.rows[1].clone(), self.rows[0].clone()],
        }
    }
}

/// Free loglinear parameters `(θ2, θ12)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub theta2: Vec<f64>,
    pub theta12: Vec<f64>,
}

impl ThetaVector {
    pub fn new(theta2: Vec<f64>, theta12: Vec<f64>) -> Result<Self> {
        if theta2.len() != theta12.len() || theta2.is_empty() {
            return Err(Error::InvalidDimension(format!(
                "theta blocks must have equal nonzero length, got {} and {}",
                theta2.len(),
                theta12.len()
            )));
        }
        Ok(ThetaVector { theta2, theta12 })
    }

    pub fn zeros(categories: usize) -> Self {
        ThetaVector {
            theta2: vec![0.0; categories - 1],
            theta12: vec![0.0; categories - 1],
        }
    }

    /// Splits a stacked `(θ2, θ12)` vector.
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::InvalidDimension(format!(
                "stacked theta must have even length, got {}",
                v.len()
            )));
        }
        let k = v.len() / 2;
        Self::new(v[..k].to_vec(), v[k..].to_vec())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.theta2.iter().chain(&self.theta12).copied().collect()
    }

    pub fn categories(&self) -> usize {
        self.theta2.len() + 1
    }

    /// `Rθ`: the log local odds ratios `θ12(j) − θ12(j+1)`.
    pub fn log_odds(&self) -> Vec<f64> {
        let k = self.theta12.len();
        (0..k)
            .map(|j| self.theta12[j] - self.theta12.get(j + 1).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Joint cell probabilities in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityCells {
    p: Vec<f64>,
}

impl ProbabilityCells {
    /// Wraps a length-2J vector of nonnegative entries summing to one.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 4 || !p.len().is_multiple_of(2) {
            return Err(Error::InvalidDimension(format!(
                "probability vector must have length 2J with J >= 2, got {}",
                p.len()
            )));
        }
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain("probabilities must be finite and nonnegative".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("probabilities sum to {s}, not 1")));
        }
        Ok(ProbabilityCells { p })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.p
    }

    pub fn categories(&self) -> usize {
        self.p.len() / 2
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let j = self.categories();
        &self.p[i * j..(i + 1) * j]
    }

    pub fn is_positive(&self) -> bool {
        self.p.iter().all(|&x| x > 0.0)
    }
}

/// Conditional row distributions `π1(θ), π2(θ)`, each summing to one.
pub fn row_conditionals(theta: &ThetaVector) -> Result<[Vec<f64>; 2]> {
    let k = theta.theta2.len();
    if theta.theta12.len() != k {
        return Err(Error::InvalidDimension("theta blocks differ in length".into()));
    }
    let row2: Vec<f64> = theta.theta2.iter().copied().chain([0.0]).collect();
    let row1: Vec<f64> = theta
        .theta2
        .iter()
        .zip(&theta.theta12)
        .map(|(a, b)| a + b)
        .chain([0.0])
        .collect();
    Ok([softmax(&row1)?, softmax(&row2)?])
}

fn softmax(eta: &[f64]) -> Result<Vec<f64>> {
    if eta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Saturation("non-finite parameter".into()));
    }
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let out: Vec<f64> = e.iter().map(|x| x / s).collect();
    if out.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return Err(Error::Saturation(
            "a cell probability underflowed to zero".into(),
        ));
    }
    Ok(out)
}

/// Maps `θ` to the joint probabilities of a table with row totals `n1`, `n2`.
///
/// Row `i` sums to `n_i / n`. The redundant terms `u` and `u1` are implied
/// by that normalization.
pub fn theta_to_prob(theta: &ThetaVector, n1: f64, n2: f64) -> Result<ProbabilityCells> {
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::Domain("row totals must be positive".into()));
    }
    let [pi1, pi2] = row_conditionals(theta)?;
    let n = n1 + n2;
    let (nu1, nu2) = (n1 / n, n2 / n);
    let p = pi1
        .iter()
        .map(|x| x * nu1)
        .chain(pi2.iter().map(|x| x * nu2))
        .collect();
    Ok(ProbabilityCells { p })
}

/// Inverse of [`theta_to_prob`]: recovers `θ` from strictly positive cells.
pub fn prob_to_theta(p: &ProbabilityCells) -> Result<ThetaVector> {
    if !p.is_positive() {
        return Err(Error::Domain(
            "zero cell probability; apply the zero-cell policy first".into(),
        ));
    }
    let j = p.categories();
    let (r1, r2) = (p.row(0), p.row(1));
    let theta2: Vec<f64> = (0..j - 1).map(|k| (r2[k] / r2[j - 1]).ln()).collect();
    let theta12 = (0..j - 1)
        .map(|k| (r1[k] / r1[j - 1]).ln() - theta2[k])
        .collect();
    Ok(ThetaVector { theta2, theta12 })
}

/// Local odds ratios `ϑj = p1j p2,j+1 / (p2j p1,j+1)`, `j = 1..J−1`.
pub fn local_odds_ratios(p: &ProbabilityCells) -> Vec<f64> {
    let (r1, r2) = (p.row(0), p.row(1));
    (0..p.categories() - 1)
        .map(|j| (r1[j] * r2[j + 1]) / (r2[j] * r1[j + 1]))
        .collect()
}

/// Design and restriction matrices of the saturated model.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    /// `2J×2`, carries `(u, u1)`.
    pub w0: DMatrix<f64>,
    /// `2J×2(J−1)`, carries `θ`.
    pub w: DMatrix<f64>,
    /// `(J−1)×2(J−1)`, `R = (0 | G)`.
    pub r: DMatrix<f64>,
    /// `(J−1)×(J−1)`: ones on the diagonal, minus ones on the superdiagonal.
    pub g: DMatrix<f64>,
}

pub fn build_design_matrices(categories: usize) -> Result<DesignMatrices> {
    if categories < 2 {
        return Err(Error::InvalidDimension(format!(
            "need J >= 2, got {categories}"
        )));
    }
    let k = categories - 1;
    let rows = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
    let ones = DMatrix::from_element(categories, 1, 1.0);
    let mut stacked = DMatrix::zeros(categories, k);
    stacked.view_mut((0, 0), (k, k)).fill_with_identity();

    let g = DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else if b == a + 1 {
            -1.0
        } else {
            0.0
        }
    });
    let mut r = DMatrix::zeros(k, 2 * k);
    r.view_mut((0, k), (k, k)).copy_from(&g);

    Ok(DesignMatrices {
        w0: rows.kronecker(&ones),
        w: rows.kronecker(&stacked),
        r,
        g,
    })
}
