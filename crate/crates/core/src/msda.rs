//! Group-Lasso-penalized multiclass sparse discriminant analysis.
//!
//! All discriminant directions are estimated simultaneously by blockwise
//! coordinate descent: each step solves the one-group subproblem in closed
//! form (group soft-thresholding of the partial-residual target). The group
//! for feature `h` collects the `h`-th coordinate of every non-reference
//! direction, so the penalty zeroes whole features at once.
//!
//! Each coordinate step touches exactly one column of the covariance matrix;
//! no product against the full matrix is ever materialized.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const DIAG_EPS: f64 = 1e-12;
const DIAG_JITTER_SCALE: f64 = 1e-10;

/// One penalized discriminant problem: pooled covariance, mean differences
/// against the reference class, and the regularization strength.
#[derive(Debug, Clone)]
pub struct MsdaProblem {
    sigma: DMatrix<f64>,
    /// Row `c-2` holds `delta_c = mu_c - mu_1`, for `c = 2..=n_clas`.
    delta: DMatrix<f64>,
    lambda: f64,
    max_iters: usize,
    tol: f64,
}

impl MsdaProblem {
    /// Builds a problem, jittering the whole covariance diagonal when any
    /// entry falls below `1e-12` (the coordinate updates divide by it).
    pub fn new(sigma: DMatrix<f64>, delta: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::DimensionMismatch { expected: sigma.nrows(), got: sigma.ncols() });
        }
        if delta.ncols() != sigma.ncols() {
            return Err(Error::DimensionMismatch { expected: sigma.ncols(), got: delta.ncols() });
        }
        if !(lambda >= 0.0) {
            return Err(Error::BadConfig("lambda must be nonnegative".into()));
        }
        let mut sigma = sigma;
        let n = sigma.nrows();
        if (0..n).any(|h| sigma[(h, h)] < DIAG_EPS) {
            let jitter = DIAG_JITTER_SCALE * sigma.trace() / n as f64;
            for h in 0..n {
                sigma[(h, h)] += jitter;
            }
        }
        Ok(Self { sigma, delta, lambda, max_iters: 1000, tol: 1e-7 })
    }

    pub fn with_termination(mut self, max_iters: usize, tol: f64) -> Self {
        self.max_iters = max_iters.max(1);
        self.tol = tol;
        self
    }

    pub fn n_feat(&self) -> usize {
        self.sigma.ncols()
    }

    /// Number of classes, counting the reference class.
    pub fn n_clas(&self) -> usize {
        self.delta.nrows() + 1
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Covariance after any diagonal jitter.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }
}

/// Solver output: directions for every class (reference row identically zero)
/// and the surviving feature groups.
#[derive(Debug, Clone)]
pub struct DiscriminantDirections {
    /// `n_clas x n_feat`; row 0 is the reference class and is exactly zero.
    pub theta: DMatrix<f64>,
    /// Features whose cross-class coordinate group is nonzero, ascending.
    pub active_features: Vec<usize>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Closed-form solution of the one-group subproblem:
/// `tilde * max(0, 1 - lambda / ||tilde||_2)`.
///
/// A zero group stays zero for any `lambda >= 0`.
pub fn group_soft_threshold(tilde: &[f64], lambda: f64) -> Vec<f64> {
    let norm = tilde.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; tilde.len()];
    }
    let scale = (1.0 - lambda / norm).max(0.0);
    tilde.iter().map(|v| v * scale).collect()
}

/// Partial-residual coordinate target for feature group `h`, holding every
/// other group fixed: `(delta_{c,h} - sum_{h'!=h} theta_{c,h'} sigma_{h',h}) / sigma_{h,h}`.
pub fn tilde_theta(problem: &MsdaProblem, theta_current: &DMatrix<f64>, h: usize) -> Result<Vec<f64>> {
    let k1 = problem.delta.nrows();
    if theta_current.nrows() != k1 || theta_current.ncols() != problem.n_feat() {
        return Err(Error::DimensionMismatch {
            expected: k1 * problem.n_feat(),
            got: theta_current.nrows() * theta_current.ncols(),
        });
    }
    let diag = problem.sigma[(h, h)];
    if diag <= 0.0 {
        return Err(Error::ZeroDiagonal(h));
    }
    let col = problem.sigma.column(h);
    let mut out = Vec::with_capacity(k1);
    for c in 0..k1 {
        let cross: f64 = (0..problem.n_feat())
            .map(|hp| theta_current[(c, hp)] * col[hp])
            .sum::<f64>()
            - theta_current[(c, h)] * diag;
        out.push((problem.delta[(c, h)] - cross) / diag);
    }
    Ok(out)
}

/// Runs the blockwise coordinate descent to convergence (largest coordinate
/// change below `tol`) or `max_iters` sweeps, whichever comes first.
///
/// Non-convergence is not an error; the best iterate is returned flagged.
pub fn solve_msda(problem: &MsdaProblem) -> Result<DiscriminantDirections> {
    solve_msda_inner(problem, None)
}

/// Same as [`solve_msda`] but records the objective after every full sweep.
pub fn solve_msda_traced(problem: &MsdaProblem) -> Result<(DiscriminantDirections, Vec<f64>)> {
    let mut trace = Vec::new();
    let dirs = solve_msda_inner(problem, Some(&mut trace))?;
    Ok((dirs, trace))
}

fn solve_msda_inner(
    problem: &MsdaProblem,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<DiscriminantDirections> {
    let n_feat = problem.n_feat();
    let k1 = problem.delta.nrows();

    for h in 0..n_feat {
        if problem.sigma[(h, h)] <= 0.0 {
            return Err(Error::ZeroDiagonal(h));
        }
    }

    // Work matrix transposed (n_feat x k1) so each class column is contiguous,
    // like the covariance columns it is dotted against.
    let mut wt = DMatrix::<f64>::zeros(n_feat, k1);
    let mut tilde = vec![0.0f64; k1];
    let mut iterations = 0usize;
    let mut converged = false;

    for iter in 1..=problem.max_iters {
        iterations = iter;
        let mut max_change: f64 = 0.0;
        for h in 0..n_feat {
            let diag = problem.sigma[(h, h)];
            let col = problem.sigma.column(h);
            let mut norm_sq = 0.0;
            for c in 0..k1 {
                let wcol = wt.column(c);
                let cross = col.dot(&wcol) - wt[(h, c)] * diag;
                let t = (problem.delta[(c, h)] - cross) / diag;
                tilde[c] = t;
                norm_sq += t * t;
            }
            let norm = norm_sq.sqrt();
            let scale = if norm == 0.0 {
                0.0
            } else {
                (1.0 - problem.lambda / (diag * norm)).max(0.0)
            };
            for c in 0..k1 {
                let new = tilde[c] * scale;
                let change = (new - wt[(h, c)]).abs();
                if change > max_change {
                    max_change = change;
                }
                wt[(h, c)] = new;
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective_of_reduced(problem, &wt));
        }
        if max_change < problem.tol {
            converged = true;
            break;
        }
    }

    let mut theta = DMatrix::zeros(k1 + 1, n_feat);
    for h in 0..n_feat {
        for c in 0..k1 {
            theta[(c + 1, h)] = wt[(h, c)];
        }
    }
    let active_features = (0..n_feat)
        .filter(|&h| (0..k1).any(|c| wt[(h, c)] != 0.0))
        .collect();
    Ok(DiscriminantDirections { theta, active_features, iterations_used: iterations, converged })
}

/// Penalized objective `sum_c [ theta_c' Sigma theta_c / 2 - delta_c' theta_c ]
/// + lambda * sum_h ||theta_{(2:),h}||_2`, with `theta` given as the full
/// `n_clas x n_feat` matrix (reference row ignored).
pub fn msda_objective(problem: &MsdaProblem, theta: &DMatrix<f64>) -> f64 {
    let k1 = problem.delta.nrows();
    let n_feat = problem.n_feat();
    let mut wt = DMatrix::<f64>::zeros(n_feat, k1);
    for c in 0..k1 {
        for h in 0..n_feat {
            wt[(h, c)] = theta[(c + 1, h)];
        }
    }
    objective_of_reduced(problem, &wt)
}

fn objective_of_reduced(problem: &MsdaProblem, wt: &DMatrix<f64>) -> f64 {
    let k1 = wt.ncols();
    let n_feat = wt.nrows();
    let mut value = 0.0;
    for c in 0..k1 {
        let theta_c = wt.column(c);
        let quad = (&problem.sigma * theta_c).dot(&theta_c);
        let lin: f64 = (0..n_feat).map(|h| problem.delta[(c, h)] * theta_c[h]).sum();
        value += 0.5 * quad - lin;
    }
    let mut penalty = 0.0;
    for h in 0..n_feat {
        let norm: f64 = (0..k1).map(|c| wt[(h, c)] * wt[(h, c)]).sum::<f64>().sqrt();
        penalty += norm;
    }
    value + problem.lambda * penalty
}

/// Elementwise soft thresholding: `sign(b) * max(0, |b| - lambda)`.
pub fn lasso_transform(beta: &[f64], lambda: f64) -> Vec<f64> {
    beta.iter()
        .map(|&b| b.signum() * (b.abs() - lambda).max(0.0))
        .collect()
}

/// Variance-proportional shrinkage: `b * sigma / (sigma + lambda)`.
///
/// A coordinate with zero variance and zero `lambda` shrinks to zero.
pub fn ridge_transform(beta: &[f64], variances: &[f64], lambda: f64) -> Vec<f64> {
    beta.iter()
        .zip(variances)
        .map(|(&b, &s)| {
            let denom = s + lambda;
            if denom == 0.0 {
                0.0
            } else {
                b * (s / denom)
            }
        })
        .collect()
}
