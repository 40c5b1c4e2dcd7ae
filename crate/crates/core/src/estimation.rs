//! Maximum likelihood under the null (equal local odds) and under the
//! likelihood-ratio order (`Rθ ≥ 0`).
//!
//! The restricted problem is solved by a primal active-set Newton method.
//! Internally it works in the coordinates `(θ2, φ)` with `φ = Rθ = G θ12`,
//! so the order constraints become simple bounds `φ ≥ 0`; since `G` is
//! unit upper bidiagonal the change of variables is exact and invertible
//! (`θ12 = U φ`, `U` the upper-triangular matrix of ones).
//!
//! [`active_set_oracle`] solves the same problem a second way: for each
//! candidate active set it pools adjacent categories into blocks, where the
//! equality-constrained MLE has a closed form, and keeps the candidate that
//! satisfies primal feasibility and the multiplier sign condition.
//!
//! Multiplier convention: `λ_j ≤ 0` on active constraints, with
//! `∇ℓ − Rᵀλ = 0` at the optimum; equivalently `λ_j = ∂ℓ/∂φ_j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{prob_to_theta, theta_to_prob, ContingencyTable, ProbabilityCells, ThetaVector};

/// Tolerances and limits for the fitting routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stationarity tolerance on `‖∇ℓ − Rᵀλ‖∞`.
    pub kkt_tol: f64,
    /// A constraint with `(Rθ)_j ≤ feas_tol` counts as active.
    pub feas_tol: f64,
    /// Newton iterations per start.
    pub max_iter: usize,
    /// Pseudo-count substituted for empty cells.
    pub zero_cell_eps: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 250,
            zero_cell_eps: 1e-5,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kkt_tol > 0.0 && self.feas_tol > 0.0 && self.max_iter > 0 && self.zero_cell_eps >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid solver options {self:?}")))
        }
    }
}

/// A fitted parameter vector together with its optimality certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedFit {
    pub theta: ThetaVector,
    pub p: ProbabilityCells,
    /// `Σ N log p(θ)` over the smoothed counts.
    pub loglik: f64,
    /// 0-based constraint indices `j` (pairing categories `j`, `j+1`) holding with equality.
    pub active_set: Vec<usize>,
    /// One entry per constraint. For the restricted fit these are `≤ 0` on the
    /// active set and zero elsewhere; for the null fit they are the
    /// unsigned multipliers of the equality problem.
    pub kkt_multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// How many starting points were tried before success (1 = first start).
    pub starts: usize,
}

/// Log-likelihood kernel `ℓ(θ) = Σ N log p(θ)` in `(θ2, φ)` coordinates.
struct Objective {
    k: usize,
    counts: [Vec<f64>; 2],
    row_counts: [f64; 2],
    log_nu: [f64; 2],
    n1: f64,
    n2: f64,
}

struct Eval {
    loglik: f64,
    /// gradient of ℓ in θ coordinates
    grad_theta: DVector<f64>,
    pi: [Vec<f64>; 2],
}

impl Objective {
    fn new(table: &ContingencyTable, eps: f64) -> Self {
        let j = table.categories();
        let c = table.smoothed_counts(eps);
        let counts = [c[..j].to_vec(), c[j..].to_vec()];
        let row_counts = [counts[0].iter().sum(), counts[1].iter().sum()];
        let (n1, n2) = (table.row_total(0) as f64, table.row_total(1) as f64);
        let n = n1 + n2;
        Objective {
            k: j - 1,
            counts,
            row_counts,
            log_nu: [(n1 / n).ln(), (n2 / n).ln()],
            n1,
            n2,
        }
    }

    fn theta_of(&self, x: &DVector<f64>) -> ThetaVector {
        let k = self.k;
        let theta2 = x.rows(0, k).iter().copied().collect();
        let mut theta12 = vec![0.0; k];
        let mut acc = 0.0;
        for m in (0..k).rev() {
            acc += x[k + m];
            theta12[m] = acc;
        }
        ThetaVector { theta2, theta12 }
    }

    fn x_of(&self, theta: &ThetaVector) -> DVector<f64> {
        let k = self.k;
        let phi = theta.log_odds();
        DVector::from_iterator(2 * k, theta.theta2.iter().copied().chain(phi))
    }

    fn eval(&self, x: &DVector<f64>) -> Option<Eval> {
        let k = self.k;
        let theta = self.theta_of(x);
        let mut loglik = 0.0;
        let mut pi: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let eta: Vec<f64> = (0..=k)
                .map(|m| {
                    if m == k {
                        0.0
                    } else if i == 0 {
                        theta.theta2[m] + theta.theta12[m]
                    } else {
                        theta.theta2[m]
                    }
                })
                .collect();
            let mx = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + eta.iter().map(|e| (e - mx).exp()).sum::<f64>().ln();
            if !lse.is_finite() {
                return None;
            }
            for m in 0..=k {
                let lp = eta[m] - lse;
                loglik += self.counts[i][m] * (lp + self.log_nu[i]);
            }
            pi[i] = eta.iter().map(|e| (e - lse).exp()).collect();
        }
        let mut grad_theta = DVector::zeros(2 * k);
        for m in 0..k {
            let r1 = self.counts[0][m] - self.row_counts[0] * pi[0][m];
            let r2 = self.counts[1][m] - self.row_counts[1] * pi[1][m];
            grad_theta[m] = r1 + r2;
            grad_theta[k + m] = r1;
        }
        Some(Eval {
            loglik,
            grad_theta,
            pi,
        })
    }

    /// Gradient of ℓ in `(θ2, φ)` coordinates.
    fn grad_x(&self, e: &Eval) -> DVector<f64> {
        let k = self.k;
        let mut g = e.grad_theta.clone();
        let mut acc = 0.0;
        for l in 0..k {
            acc += e.grad_theta[k + l];
            g[k + l] = acc;
        }
        g
    }

    /// Negative Hessian of ℓ (positive definite) in `(θ2, φ)` coordinates.
    fn neg_hessian_x(&self, e: &Eval) -> DMatrix<f64> {
        let k = self.k;
        let cov = |i: usize| {
            let pi = &e.pi[i];
            let n = self.row_counts[i];
            DMatrix::from_fn(k, k, |a, b| {
                let d = if a == b { pi[a] } else { 0.0 };
                n * (d - pi[a] * pi[b])
            })
        };
        let c1 = cov(0);
        let c2 = cov(1);
        let mut h = DMatrix::zeros(2 * k, 2 * k);
        h.view_mut((0, 0), (k, k)).copy_from(&(&c1 + &c2));
        h.view_mut((0, k), (k, k)).copy_from(&c1);
        h.view_mut((k, 0), (k, k)).copy_from(&c1);
        h.view_mut((k, k), (k, k)).copy_from(&c1);
        let mut t = DMatrix::<f64>::identity(2 * k, 2 * k);
        for a in 0..k {
            for b in a..k {
                t[(k + a, k + b)] = 1.0;
            }
        }
        t.transpose() * h * t
    }
}

/// Closed-form MLE under `H0: Rθ = 0`.
///
/// `p̂_ij = ν_i N•j / n`, computed on the smoothed counts so that empty
/// columns receive positive mass.
pub fn mle_null(table: &ContingencyTable, opts: &SolverOptions) -> Result<RestrictedFit> {
    opts.validate()?;
    let obj = Objective::new(table, opts.zero_cell_eps);
    let j = table.categories();
    let cols: Vec<f64> = (0..j).map(|m| obj.counts[0][m] + obj.counts[1][m]).collect();
    if let Some(m) = cols.iter().position(|&c| c <= 0.0) {
        return Err(Error::Degenerate(format!("column {} is empty", m + 1)));
    }
    let total: f64 = cols.iter().sum();
    let n = obj.n1 + obj.n2;
    let nu = [obj.n1 / n, obj.n2 / n];
    let p: Vec<f64> = (0..2)
        .flat_map(|i| cols.iter().map(move |c| nu[i] * c / total))
        .collect();
    let p = ProbabilityCells::new(p)?;
    let theta = prob_to_theta(&p)?;
    // the closed form has θ12 = 0 to roundoff; pin it exactly
    let theta = ThetaVector {
        theta2: theta.theta2,
        theta12: vec![0.0; j - 1],
    };
    let x = obj.x_of(&theta);
    let e = obj
        .eval(&x)
        .ok_or_else(|| Error::Saturation("null fit".into()))?;
    let g = obj.grad_x(&e);
    let k = j - 1;
    let multipliers: Vec<f64> = (0..k).map(|l| g[k + l]).collect();
    let residual = (0..k).map(|m| g[m].abs()).fold(0.0, f64::max);
    Ok(RestrictedFit {
        theta,
        p,
        loglik: e.loglik,
        active_set: (0..k).collect(),
        kkt_multipliers: multipliers,
        kkt_residual: residual,
        converged: true,
        iterations: 0,
        starts: 1,
    })
}

struct Solve {
    x: DVector<f64>,
    working: Vec<bool>,
    iterations: usize,
    converged: bool,
}

fn active_set_newton(obj: &Objective, x0: DVector<f64>, opts: &SolverOptions) -> Solve {
    let k = obj.k;
    let mut x = x0;
    for l in 0..k {
        x[k + l] = x[k + l].max(0.0);
    }
    let mut working: Vec<bool> = (0..k).map(|l| x[k + l] == 0.0).collect();
    let stat_tol = 0.5 * opts.kkt_tol;

    for iter in 0..opts.max_iter {
        let Some(e) = obj.eval(&x) else { break };
        // minimize f = −ℓ
        let g = -obj.grad_x(&e);
        let free: Vec<usize> = (0..2 * k).filter(|&i| i < k || !working[i - k]).collect();
        let g_free = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));

        if g_free.amax() <= stat_tol {
            // a negative multiplier means the bound is pushing the wrong way
            let drop = (0..k)
                .filter(|&l| working[l])
                .map(|l| (l, g[k + l]))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match drop {
                Some((l, gl)) if gl < -stat_tol => {
                    working[l] = false;
                    continue;
                }
                _ => {
                    return Solve {
                        x,
                        working,
                        iterations: iter,
                        converged: true,
                    }
                }
            }
        }

        let h = obj.neg_hessian_x(&e);
        let h_free = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let d_free = match h_free.cholesky() {
            Some(ch) => -ch.solve(&g_free),
            None => -g_free.clone(),
        };

        let mut t_max = f64::INFINITY;
        let mut blocking = None;
        for (a, &i) in free.iter().enumerate() {
            if i >= k && d_free[a] < 0.0 {
                let t = x[i] / -d_free[a];
                if t < t_max {
                    t_max = t;
                    blocking = Some(i);
                }
            }
        }
        let f0 = -e.loglik;
        let slope = g_free.dot(&d_free);
        let mut t = t_max.min(1.0);
        let mut accepted = None;
        while t > 1e-16 {
            let mut xn = x.clone();
            for (a, &i) in free.iter().enumerate() {
                xn[i] += t * d_free[a];
            }
            for l in 0..k {
                xn[k + l] = xn[k + l].max(0.0);
            }
            if let Some(en) = obj.eval(&xn) {
                let f1 = -en.loglik;
                let roundoff = 1e-13 * f0.abs().max(1.0);
                if f1 <= f0 + 1e-4 * t * slope || f1 - f0 <= roundoff {
                    accepted = Some(xn);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(xn) = accepted else { break };
        x = xn;
        if let Some(i) = blocking {
            if t == t_max && t_max <= 1.0 {
                x[i] = 0.0;
                working[i - k] = true;
            }
        }
    }
    Solve {
        x,
        working,
        iterations: opts.max_iter,
        converged: false,
    }
}

fn finish(obj: &Objective, table: &ContingencyTable, s: Solve, opts: &SolverOptions, starts: usize) -> Result<RestrictedFit> {
    let k = obj.k;
    let theta = obj.theta_of(&s.x);
    let e = obj
        .eval(&s.x)
        .ok_or_else(|| Error::Saturation("restricted fit diverged".into()))?;
    let g = obj.grad_x(&e);
    let mut active = Vec::new();
    let mut lambda = vec![0.0; k];
    for l in 0..k {
        if s.working[l] || s.x[k + l] <= opts.feas_tol {
            active.push(l);
            lambda[l] = g[k + l].min(0.0);
        }
    }
    // ∇θℓ − Rᵀλ; R = (0 | G) so Rᵀλ has (Gᵀλ)_m = λ_m − λ_{m−1} in the θ12 block
    let mut residual: f64 = 0.0;
    for m in 0..k {
        residual = residual.max(e.grad_theta[m].abs());
        let gt = lambda[m] - if m > 0 { lambda[m - 1] } else { 0.0 };
        residual = residual.max((e.grad_theta[k + m] - gt).abs());
    }
    let p = theta_to_prob(&theta, obj.n1, obj.n2)?;
    let _ = table;
    Ok(RestrictedFit {
        theta,
        p,
        loglik: e.loglik,
        active_set: active,
        kkt_multipliers: lambda,
        kkt_residual: residual,
        converged: s.converged && residual <= opts.kkt_tol,
        iterations: s.iterations,
        starts,
    })
}

/// Order-restricted MLE: maximizes `ℓ(θ)` subject to `Rθ ≥ 0`.
///
/// Starts from `θ = 0` and retries from `θ = ±0.1` if that start fails. A
/// fit that never meets the KKT tolerance is returned with
/// `converged = false`.
pub fn mle_restricted(table: &ContingencyTable, opts: &SolverOptions) -> Result<RestrictedFit> {
    opts.validate()?;
    let obj = Objective::new(table, opts.zero_cell_eps);
    let j = table.categories();
    let mut last = None;
    for (start, c) in [0.0, 0.1, -0.1].into_iter().enumerate() {
        let theta0 = ThetaVector {
            theta2: vec![c; j - 1],
            theta12: vec![c; j - 1],
        };
        let s = active_set_newton(&obj, obj.x_of(&theta0), opts);
        let fit = finish(&obj, table, s, opts, start + 1)?;
        if fit.converged {
            return Ok(fit);
        }
        last = Some(fit);
    }
    Ok(last.expect("at least one start"))
}

/// Largest `J` the enumeration oracle accepts.
pub const ORACLE_MAX_CATEGORIES: usize = 6;

/// Brute-force restricted MLE over all `2^(J−1)` candidate active sets.
///
/// For an active set `S`, categories joined by a constraint in `S` form a
/// block in which both rows share one within-block distribution. The
/// equality-constrained MLE is then
/// `p_ij = ν_i · (N_i,b / n_i) · (N•j / N•b)` for `j` in block `b`.
/// The unique candidate that is primal feasible and has nonpositive
/// multipliers is the restricted MLE.
pub fn active_set_oracle(table: &ContingencyTable, opts: &SolverOptions) -> Result<RestrictedFit> {
    opts.validate()?;
    let j = table.categories();
    if j > ORACLE_MAX_CATEGORIES {
        return Err(Error::Unsupported(format!(
            "enumeration oracle supports J <= {ORACLE_MAX_CATEGORIES}, got {j}"
        )));
    }
    let k = j - 1;
    let obj = Objective::new(table, opts.zero_cell_eps);
    let n = obj.n1 + obj.n2;
    let nu = [obj.n1 / n, obj.n2 / n];
    let col: Vec<f64> = (0..j).map(|m| obj.counts[0][m] + obj.counts[1][m]).collect();
    let scale = obj.row_counts[0] + obj.row_counts[1];
    let sign_tol = opts.kkt_tol * scale.max(1.0);

    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>, Vec<usize>)> = None;
    for mask in 0u32..(1 << k) {
        // block id per category
        let mut block = vec![0usize; j];
        for m in 1..j {
            block[m] = block[m - 1] + usize::from(mask & (1 << (m - 1)) == 0);
        }
        let nb = block[j - 1] + 1;
        let mut row_b = [vec![0.0; nb], vec![0.0; nb]];
        let mut col_b = vec![0.0; nb];
        for m in 0..j {
            row_b[0][block[m]] += obj.counts[0][m];
            row_b[1][block[m]] += obj.counts[1][m];
            col_b[block[m]] += col[m];
        }
        let pi: [Vec<f64>; 2] = [0, 1].map(|i| {
            (0..j)
                .map(|m| row_b[i][block[m]] / obj.row_counts[i] * col[m] / col_b[block[m]])
                .collect()
        });

        let mut ok = true;
        let mut lambda = vec![0.0; k];
        let mut cum = 0.0;
        for l in 0..k {
            cum += obj.counts[0][l] - obj.row_counts[0] * pi[0][l];
            if mask & (1 << l) != 0 {
                lambda[l] = cum;
                if cum > sign_tol {
                    ok = false;
                }
            } else {
                let phi = (pi[0][l] * pi[1][l + 1] / (pi[1][l] * pi[0][l + 1])).ln();
                if phi < -opts.feas_tol {
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let loglik: f64 = (0..2)
            .map(|i| {
                (0..j)
                    .map(|m| obj.counts[i][m] * (nu[i] * pi[i][m]).ln())
                    .sum::<f64>()
            })
            .sum();
        let size = mask.count_ones() as usize;
        let better = match &best {
            None => true,
            Some((bl, bs, ..)) => {
                let tie = (loglik - bl).abs() <= 1e-9 * bl.abs().max(1.0);
                if tie {
                    size > *bs
                } else {
                    loglik > *bl
                }
            }
        };
        if better {
            let p: Vec<f64> = (0..2)
                .flat_map(|i| pi[i].iter().map(move |x| nu[i] * x).collect::<Vec<_>>())
                .collect();
            let active = (0..k).filter(|l| mask & (1 << l) != 0).collect();
            best = Some((loglik, size, p, lambda.iter().map(|x| x.min(0.0)).collect(), active));
        }
    }

    let (loglik, _, p, lambda, active) = best.ok_or_else(|| {
        Error::OracleInconsistency(format!("no candidate active set passed both screens for {table:?}"))
    })?;
    let p = ProbabilityCells::new(p)?;
    let theta = prob_to_theta(&p)?;
    Ok(RestrictedFit {
        theta,
        p,
        loglik,
        active_set: active,
        kkt_multipliers: lambda,
        kkt_residual: 0.0,
        converged: true,
        iterations: 1 << k,
        starts: 1,
    })
}
