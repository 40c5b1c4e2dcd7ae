//! Power-divergence measures between probability vectors.
//!
//! For `λ ∉ {0, −1}`
//!
//! ```text
//! d_λ(p, q) = (Σ p^(λ+1) / q^λ − 1) / (λ(λ+1))
//! ```
//!
//! with the Kullback–Leibler limit at `λ = 0` and its reversal at `λ = −1`.
//! Every member has `φ''(1) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance from 0 or −1 below which the analytic limit is used.
pub const LIMIT_SWITCH: f64 = 1e-9;

/// Index `λ` of the power-divergence family.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerDivergenceIndex(pub f64);

/// Which branch of the family a given `λ` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Kullback,
    ReverseKullback,
    Generic,
}

impl PowerDivergenceIndex {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn branch(self) -> Branch {
        if self.0.abs() <= LIMIT_SWITCH {
            Branch::Kullback
        } else if (self.0 + 1.0).abs() <= LIMIT_SWITCH {
            Branch::ReverseKullback
        } else {
            Branch::Generic
        }
    }
}

impl From<f64> for PowerDivergenceIndex {
    fn from(v: f64) -> Self {
        PowerDivergenceIndex(v)
    }
}

fn check(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::InvalidDimension(format!(
            "vectors differ in length: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    if q.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("reference vector q must be strictly positive".into()));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Domain("p must be nonnegative".into()));
    }
    Ok(())
}

/// `Σ p log(p/q)` with `0 log 0 = 0`.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Power divergence `d_λ(p, q)`; `q` must be strictly positive.
pub fn phi_divergence(p: &[f64], q: &[f64], lambda: PowerDivergenceIndex) -> Result<f64> {
    check(p, q)?;
    let l = lambda.value();
    let d = match lambda.branch() {
        Branch::Kullback => kl(p, q),
        Branch::ReverseKullback => {
            // q log(q/p) is +∞ whenever some p is zero
            if p.contains(&0.0) {
                f64::INFINITY
            } else {
                kl(q, p)
            }
        }
        Branch::Generic => {
            if l < -1.0 && p.contains(&0.0) {
                f64::INFINITY
            } else {
                let s: f64 = p
                    .iter()
                    .zip(q)
                    .map(|(&a, &b)| if a == 0.0 { 0.0 } else { a * ((a / b).powf(l) - 1.0) })
                    .sum();
                s / (l * (l + 1.0))
            }
        }
    };
    // roundoff can leave tiny negatives when p ≈ q
    Ok(d.max(0.0))
}

pub fn kullback(p: &[f64], q: &[f64]) -> Result<f64> {
    phi_divergence(p, q, PowerDivergenceIndex(0.0))
}

/// Pearson divergence `½ Σ (p − q)² / q`.
pub fn pearson(p: &[f64], q: &[f64]) -> Result<f64> {
    phi_divergence(p, q, PowerDivergenceIndex(1.0))
}

/// Squared Hellinger distance `Σ (√p − √q)²`.
pub fn hellinger_sq(p: &[f64], q: &[f64]) -> Result<f64> {
    check(p, q)?;
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_of_indiscernibles() {
        let p = [0.1, 0.2, 0.3, 0.4];
        for l in [-2.0, -1.5, -1.0, -0.5, 0.0, 2.0 / 3.0, 1.0, 3.0] {
            assert!(phi_divergence(&p, &p, l.into()).unwrap() < 1e-15);
        }
        assert!(kullback(&p, &p).unwrap() < 1e-15);
        assert!(pearson(&p, &p).unwrap() < 1e-15);
        assert!(hellinger_sq(&p, &p).unwrap() < 1e-15);
    }

    #[test]
    fn pearson_by_hand() {
        let d = phi_divergence(&[0.6, 0.4], &[0.5, 0.5], 1.0.into()).unwrap();
        assert_abs_diff_eq!(d, 0.02, epsilon = 1e-15);
    }

    #[test]
    fn reversal() {
        let p = [0.2, 0.3, 0.5];
        let q = [0.4, 0.4, 0.2];
        let a = phi_divergence(&p, &q, (-1.0).into()).unwrap();
        let b = phi_divergence(&q, &p, 0.0.into()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hellinger_member() {
        let p = [0.2, 0.3, 0.5];
        let q = [0.4, 0.4, 0.2];
        let d = phi_divergence(&p, &q, (-0.5).into()).unwrap();
        let bc: f64 = p.iter().zip(&q).map(|(a, b)| (a * b).sqrt()).sum();
        assert_abs_diff_eq!(d, 4.0 * (1.0 - bc), epsilon = 1e-14);
        assert_abs_diff_eq!(d, 2.0 * hellinger_sq(&p, &q).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn zero_cells() {
        let p = [0.0, 0.5, 0.5];
        let q = [0.2, 0.4, 0.4];
        let kl0 = kullback(&p, &q).unwrap();
        assert_abs_diff_eq!(kl0, (0.5f64 / 0.4).ln(), epsilon = 1e-15);
        assert!(phi_divergence(&p, &q, (-1.0).into()).unwrap().is_infinite());
        assert!(phi_divergence(&p, &q, (-1.5).into()).unwrap().is_infinite());
        assert!(phi_divergence(&p, &q, (1.0).into()).unwrap().is_finite());
    }

    #[test]
    fn errors() {
        assert!(phi_divergence(&[0.5, 0.5], &[1.0], 1.0.into()).is_err());
        assert!(phi_divergence(&[0.5, 0.5], &[1.0, 0.0], 1.0.into()).is_err());
    }

    #[test]
    fn branch_thresholds() {
        assert_eq!(PowerDivergenceIndex(1e-10).branch(), Branch::Kullback);
        assert_eq!(PowerDivergenceIndex(1e-8).branch(), Branch::Generic);
        assert_eq!(PowerDivergenceIndex(-1.0 + 5e-10).branch(), Branch::ReverseKullback);
    }
}
