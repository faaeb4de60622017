//! Per-node classification machinery.
//!
//! Turns discriminant directions into per-class projecting coefficients,
//! projects samples into the class-score space, and finds the decision
//! thresholds minimizing the partition Gini impurity by exhaustive search
//! over discretized offsets. Also carries the plain LDA and QDA baselines.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::msda::DiscriminantDirections;
use crate::par;
use crate::stats::{partition_gini_from_counts, ClassStats, SampleSet};

/// Fitted per-node discriminant: coefficients, thresholds and the feature
/// normalization under which they were estimated.
#[derive(Debug, Clone)]
pub struct NodeDiscriminant {
    /// Row `c-1` holds the projecting coefficients of class `c`.
    pub betas: DMatrix<f64>,
    /// Offsets for classes `2..=n_clas`; the reference offset is zero.
    pub thresholds: Vec<f64>,
    /// Active squared-feature indices (ascending) selected by the penalty.
    pub selected_indices: Vec<usize>,
    pub norm_means: Vec<f64>,
    pub norm_stds: Vec<f64>,
    pub log_priors: Vec<f64>,
    /// Precomputed `beta_c . mu_c / 2` terms of the posterior score.
    pub score_offsets: Vec<f64>,
}

/// Solves an SPD system by Cholesky, escalating a diagonal jitter a few times
/// before giving up.
fn spd_solve(mat: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = mat.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let n = mat.nrows();
    let base = mat.trace().abs().max(1.0) / n as f64;
    let mut jitter = 1e-10 * base;
    for _ in 0..6 {
        let mut m = mat.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Ok(chol.solve(rhs));
        }
        jitter *= 100.0;
    }
    Err(Error::SingularCovariance(None))
}

/// Reference-class coefficients from the covariance solve, then
/// `beta_c = theta_c + beta_1` for every class.
pub fn betas_from_directions(
    dirs: &DiscriminantDirections,
    stats: &ClassStats,
) -> Result<DMatrix<f64>> {
    let n_feat = dirs.theta.ncols();
    let n_clas = dirs.theta.nrows();
    if stats.class_means.ncols() != n_feat || stats.class_means.nrows() != n_clas {
        return Err(Error::DimensionMismatch {
            expected: n_clas * n_feat,
            got: stats.class_means.nrows() * stats.class_means.ncols(),
        });
    }
    let mu_ref = stats.class_means.row(0).transpose();
    let beta_ref = spd_solve(&stats.within_cov, &mu_ref)?;
    let mut betas = DMatrix::zeros(n_clas, n_feat);
    for c in 0..n_clas {
        for h in 0..n_feat {
            betas[(c, h)] = dirs.theta[(c, h)] + beta_ref[h];
        }
    }
    Ok(betas)
}

/// Posterior scores `log pi_c + beta_c . (f - mu_c/2)`; the argmax is the MAP label.
pub fn lda_scores(features: &[f64], disc: &NodeDiscriminant) -> Result<Vec<f64>> {
    let n_feat = disc.betas.ncols();
    if features.len() != n_feat {
        return Err(Error::DimensionMismatch { expected: n_feat, got: features.len() });
    }
    let n_clas = disc.betas.nrows();
    let mut scores = Vec::with_capacity(n_clas);
    for c in 0..n_clas {
        let dot: f64 = (0..n_feat).map(|h| disc.betas[(c, h)] * features[h]).sum();
        scores.push(disc.log_priors[c] + dot - disc.score_offsets[c]);
    }
    Ok(scores)
}

/// Projection into the class-score space: `[f . beta_1, ..., f . beta_k]`.
pub fn project(features: &[f64], betas: &DMatrix<f64>) -> Result<Vec<f64>> {
    if features.len() != betas.ncols() {
        return Err(Error::DimensionMismatch { expected: betas.ncols(), got: features.len() });
    }
    Ok((0..betas.nrows())
        .map(|c| (0..betas.ncols()).map(|h| betas[(c, h)] * features[h]).sum())
        .collect())
}

/// Assignment under reference-relative margins: class position
/// `argmax([0, m_2 - tau_2, ..., m_k - tau_k])`, ties to the smallest index.
pub fn assign_class(margins: &[f64], thresholds: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_score = 0.0f64;
    for (j, (&m, &t)) in margins.iter().zip(thresholds).enumerate() {
        let s = m - t;
        if s > best_score {
            best_score = s;
            best = j + 1;
        }
    }
    best
}

/// Candidate offsets for one threshold: `n_grid` equally spaced quantiles of
/// the observed margins plus zero, deduplicated and ascending.
pub fn threshold_grid(margins: &[f64], n_grid: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = margins.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mut grid = Vec::with_capacity(n_grid + 1);
    grid.push(0.0);
    if n > 0 && n_grid > 0 {
        for t in 0..n_grid {
            let q = if n_grid == 1 { 0.5 } else { t as f64 / (n_grid - 1) as f64 };
            let idx = ((n - 1) as f64 * q).round() as usize;
            grid.push(sorted[idx]);
        }
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    grid
}

/// Exhaustive Gini-minimizing threshold search over margin matrices.
///
/// `margins` holds one row per sample with the `n_clas - 1` reference-relative
/// scores; `labels` are local 1-based class positions. Two classes reduce to
/// the exact one-dimensional midpoint sweep; three or four classes run the
/// full Cartesian grid; beyond that, cyclic coordinate sweeps until stable.
/// Constant margins degenerate to the zero-offset assignment.
pub fn optimize_thresholds(
    margins: &DMatrix<f64>,
    labels: &[u16],
    n_clas: usize,
    n_grid: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = margins.nrows();
    let k1 = n_clas - 1;
    if n != labels.len() {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    if margins.ncols() != k1 {
        return Err(Error::DimensionMismatch { expected: k1, got: margins.ncols() });
    }
    if n < 2 {
        return Err(Error::BadConfig("threshold search needs at least 2 samples".into()));
    }

    if k1 == 1 {
        return Ok(two_class_sweep(margins, labels, n_clas));
    }

    let grids: Vec<Vec<f64>> = (0..k1)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| margins[(i, j)]).collect();
            threshold_grid(&col, n_grid)
        })
        .collect();

    if k1 <= 3 {
        cartesian_search(margins, labels, n_clas, &grids)
    } else {
        Ok(cyclic_search(margins, labels, n_clas, &grids))
    }
}

fn partition_gini_for(
    margins: &DMatrix<f64>,
    labels: &[u16],
    n_clas: usize,
    taus: &[f64],
) -> f64 {
    let mut counts = vec![vec![0usize; n_clas]; n_clas];
    let k1 = taus.len();
    for (i, &l) in labels.iter().enumerate() {
        let mut best = 0usize;
        let mut best_score = 0.0f64;
        for j in 0..k1 {
            let s = margins[(i, j)] - taus[j];
            if s > best_score {
                best_score = s;
                best = j + 1;
            }
        }
        counts[best][(l - 1) as usize] += 1;
    }
    partition_gini_from_counts(&counts)
}

/// Exact sweep for a single threshold: every distinct assignment is realized
/// at a midpoint between consecutive sorted margins (plus the two extremes).
fn two_class_sweep(margins: &DMatrix<f64>, labels: &[u16], n_clas: usize) -> (Vec<f64>, f64) {
    let n = margins.nrows();
    let mut vals: Vec<f64> = (0..n).map(|i| margins[(i, 0)]).collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals.dedup();
    let mut candidates = Vec::with_capacity(vals.len() + 2);
    candidates.push(0.0);
    candidates.push(vals[0] - 1.0);
    for w in vals.windows(2) {
        candidates.push(0.5 * (w[0] + w[1]));
    }
    candidates.push(vals[vals.len() - 1] + 1.0);
    candidates.sort_by(|a, b| a.total_cmp(b));
    candidates.dedup();

    let mut best_tau = 0.0;
    let mut best_gini = f64::INFINITY;
    for &tau in &candidates {
        let g = partition_gini_for(margins, labels, n_clas, &[tau]);
        if g < best_gini {
            best_gini = g;
            best_tau = tau;
        }
    }
    (vec![best_tau], best_gini)
}

fn cartesian_search(
    margins: &DMatrix<f64>,
    labels: &[u16],
    n_clas: usize,
    grids: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)> {
    let k1 = grids.len();
    let total: usize = grids.iter().map(|g| g.len()).product();
    let combo_taus = |mut idx: usize| -> Vec<f64> {
        let mut taus = vec![0.0; k1];
        for j in 0..k1 {
            let len = grids[j].len();
            taus[j] = grids[j][idx % len];
            idx /= len;
        }
        taus
    };
    let ginis = par::map_indexed(total, |idx| {
        partition_gini_for(margins, labels, n_clas, &combo_taus(idx))
    });
    let mut best_idx = 0usize;
    let mut best_gini = f64::INFINITY;
    for (idx, &g) in ginis.iter().enumerate() {
        if g < best_gini {
            best_gini = g;
            best_idx = idx;
        }
    }
    Ok((combo_taus(best_idx), best_gini))
}

fn cyclic_search(
    margins: &DMatrix<f64>,
    labels: &[u16],
    n_clas: usize,
    grids: &[Vec<f64>],
) -> (Vec<f64>, f64) {
    let k1 = grids.len();
    let mut taus = vec![0.0; k1];
    let mut best = partition_gini_for(margins, labels, n_clas, &taus);
    loop {
        let mut improved = false;
        for j in 0..k1 {
            let keep = taus[j];
            let mut local_best = best;
            let mut local_tau = keep;
            for &cand in &grids[j] {
                taus[j] = cand;
                let g = partition_gini_for(margins, labels, n_clas, &taus);
                if g < local_best {
                    local_best = g;
                    local_tau = cand;
                }
            }
            taus[j] = local_tau;
            if local_best < best {
                best = local_best;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    (taus, best)
}

/// Quadratic discriminant baseline: argmax of
/// `log pi_c - log|Sigma_c|/2 - (f-mu_c)' Sigma_c^{-1} (f-mu_c)/2`.
///
/// Returns the 1-based class id.
pub fn qda_classify(
    features: &[f64],
    class_means: &DMatrix<f64>,
    class_covs: &[DMatrix<f64>],
    priors: &[f64],
) -> Result<u16> {
    let k = class_covs.len();
    let d = features.len();
    if class_means.nrows() != k || class_means.ncols() != d {
        return Err(Error::DimensionMismatch { expected: k * d, got: class_means.len() });
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for c in 0..k {
        let chol = cholesky_with_jitter(&class_covs[c])
            .ok_or(Error::SingularCovariance(Some((c + 1) as u16)))?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let diff = DVector::from_fn(d, |j, _| features[j] - class_means[(c, j)]);
        let solved = chol.solve(&diff);
        let quad = diff.dot(&solved);
        let score = priors[c].ln() - 0.5 * log_det - 0.5 * quad;
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    Ok((best + 1) as u16)
}

fn cholesky_with_jitter(mat: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(chol) = mat.clone().cholesky() {
        return Some(chol);
    }
    let n = mat.nrows();
    let base = mat.trace().abs().max(1.0) / n as f64;
    let mut jitter = 1e-10 * base;
    for _ in 0..6 {
        let mut m = mat.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Some(chol);
        }
        jitter *= 100.0;
    }
    None
}

/// Plain multivariate LDA fit (`beta_c = Sigma^{-1} mu_c`), as the unpenalized
/// baseline. Input features are used as-is; normalization is the identity.
pub fn lda_fit(data: &SampleSet) -> Result<NodeDiscriminant> {
    let stats = ClassStats::compute(data)?;
    let k = stats.class_means.nrows();
    let d = stats.class_means.ncols();
    let mut betas = DMatrix::zeros(k, d);
    for c in 0..k {
        let mu = stats.class_means.row(c).transpose();
        let beta = spd_solve(&stats.within_cov, &mu)?;
        for h in 0..d {
            betas[(c, h)] = beta[h];
        }
    }
    let score_offsets: Vec<f64> = (0..k)
        .map(|c| 0.5 * (0..d).map(|h| betas[(c, h)] * stats.class_means[(c, h)]).sum::<f64>())
        .collect();
    Ok(NodeDiscriminant {
        betas,
        thresholds: vec![0.0; k - 1],
        selected_indices: (0..d).collect(),
        norm_means: vec![0.0; d],
        norm_stds: vec![1.0; d],
        log_priors: stats.priors.iter().map(|p| p.ln()).collect(),
        score_offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats_from(means: DMatrix<f64>, cov: DMatrix<f64>, priors: Vec<f64>) -> ClassStats {
        let d = cov.nrows();
        let overall = DVector::from_fn(d, |j, _| {
            priors.iter().enumerate().map(|(c, p)| p * means[(c, j)]).sum()
        });
        let between = stats::between_class_covariance(&means, &priors, &overall);
        ClassStats {
            class_means: means,
            priors,
            overall_mean: overall,
            within_cov: cov,
            between_cov: between,
            dof: 10,
        }
    }

    #[test]
    fn betas_identity_cases() {
        let theta = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.5, -0.5]);
        let dirs = DiscriminantDirections {
            theta,
            active_features: vec![0, 1],
            iterations_used: 1,
            converged: true,
        };
        // mu_1 = 0 under identity covariance: beta_1 = 0 so beta_c = theta_c.
        let s = stats_from(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.5, -0.5]),
            DMatrix::identity(2, 2),
            vec![0.5, 0.5],
        );
        let betas = betas_from_directions(&dirs, &s).unwrap();
        assert_eq!(betas.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(betas[(1, 0)], 1.5);

        // mu_1 = e1 under identity covariance: beta_1 = e1.
        let s = stats_from(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]),
            DMatrix::identity(2, 2),
            vec![0.5, 0.5],
        );
        let betas = betas_from_directions(&dirs, &s).unwrap();
        assert_eq!(betas[(0, 0)], 1.0);
        assert_eq!(betas[(0, 1)], 0.0);
    }

    #[test]
    fn betas_residual_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 12;
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0f64..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
        let means = DMatrix::from_fn(3, d, |_, _| rng.gen_range(-2.0f64..2.0));
        let s = stats_from(means, cov.clone(), vec![0.4, 0.3, 0.3]);
        let dirs = DiscriminantDirections {
            theta: DMatrix::zeros(3, d),
            active_features: vec![],
            iterations_used: 1,
            converged: true,
        };
        let betas = betas_from_directions(&dirs, &s).unwrap();
        let beta1 = betas.row(0).transpose();
        let resid = &cov * &beta1 - s.class_means.row(0).transpose();
        assert!(resid.amax() < 1e-8);
    }

    fn two_class_disc() -> NodeDiscriminant {
        // Equal priors, identity covariance, mu1 = (1,0) = -mu2.
        let betas = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        NodeDiscriminant {
            betas,
            thresholds: vec![0.0],
            selected_indices: vec![0, 1],
            norm_means: vec![0.0, 0.0],
            norm_stds: vec![1.0, 1.0],
            log_priors: vec![0.5f64.ln(), 0.5f64.ln()],
            score_offsets: vec![0.5, 0.5],
        }
    }

    #[test]
    fn lda_scores_symmetry() {
        let disc = two_class_disc();
        let s = lda_scores(&[1.0, 0.0], &disc).unwrap();
        assert!(s[0] > s[1]);
        // Exact midpoint: scores coincide.
        let s = lda_scores(&[0.0, 3.7], &disc).unwrap();
        assert!((s[0] - s[1]).abs() < 1e-12);
        assert!(matches!(
            lda_scores(&[0.0], &disc),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lda_scores_match_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let means = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let priors = [0.5, 0.25, 0.25];
        let s = stats_from(means.clone(), cov.clone(), priors.to_vec());
        let dirs = DiscriminantDirections {
            theta: {
                let mut t = DMatrix::zeros(3, 2);
                let chol = cov.clone().cholesky().unwrap();
                for c in 1..3 {
                    let delta = means.row(c).transpose() - means.row(0).transpose();
                    let th = chol.solve(&delta);
                    t[(c, 0)] = th[0];
                    t[(c, 1)] = th[1];
                }
                t
            },
            active_features: vec![0, 1],
            iterations_used: 1,
            converged: true,
        };
        let betas = betas_from_directions(&dirs, &s).unwrap();
        let score_offsets: Vec<f64> = (0..3)
            .map(|c| 0.5 * (0..2).map(|h| betas[(c, h)] * means[(c, h)]).sum::<f64>())
            .collect();
        let disc = NodeDiscriminant {
            betas: betas.clone(),
            thresholds: vec![0.0, 0.0],
            selected_indices: vec![0, 1],
            norm_means: vec![0.0, 0.0],
            norm_stds: vec![1.0, 1.0],
            log_priors: priors.iter().map(|p| p.ln()).collect(),
            score_offsets,
        };
        for _ in 0..20 {
            let f = [rng.gen_range(-3.0f64..3.0), rng.gen_range(-3.0f64..3.0)];
            let got = lda_scores(&f, &disc).unwrap();
            let inv = cov.clone().try_inverse().unwrap();
            for c in 0..3 {
                let beta = &inv * means.row(c).transpose();
                let centered = DVector::from_vec(vec![
                    f[0] - 0.5 * means[(c, 0)],
                    f[1] - 0.5 * means[(c, 1)],
                ]);
                let expect = priors[c].ln() + beta.dot(&centered);
                assert!((got[c] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lda_scores_shift_invariant_argmax() {
        let disc = two_class_disc();
        let f = [0.3, -0.8];
        let s = lda_scores(&f, &disc).unwrap();
        let arg = s
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.456).collect();
        let arg2 = shifted
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(arg, arg2);
    }

    #[test]
    fn project_examples() {
        let betas = DMatrix::identity(3, 3);
        assert_eq!(project(&[4.0, 5.0, 6.0], &betas).unwrap(), vec![4.0, 5.0, 6.0]);
        assert_eq!(project(&[0.0, 0.0, 0.0], &betas).unwrap(), vec![0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0f64..1.0));
        let f = [0.5, -1.5, 2.0];
        let got = project(&f, &b).unwrap();
        let fv = DVector::from_row_slice(&f);
        let expect = &b * fv;
        for c in 0..2 {
            assert!((got[c] - expect[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn thresholds_separable_two_class() {
        // Margins fully separate the classes.
        let margins = DMatrix::from_column_slice(
            6,
            1,
            &[-3.0, -2.5, -2.0, 2.0, 2.5, 3.0],
        );
        let labels = [1u16, 1, 1, 2, 2, 2];
        let (taus, gini) = optimize_thresholds(&margins, &labels, 2, 32).unwrap();
        assert_eq!(gini, 0.0);
        for (i, &l) in labels.iter().enumerate() {
            let assigned = assign_class(&[margins[(i, 0)]], &taus) as u16 + 1;
            assert_eq!(assigned, l);
        }
    }

    #[test]
    fn thresholds_random_labels_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 2000;
        let margins = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0f64..1.0));
        let labels: Vec<u16> = (0..n).map(|i| (i % 2 + 1) as u16).collect();
        let (_, gini) = optimize_thresholds(&margins, &labels, 2, 32).unwrap();
        assert!((gini - 0.5).abs() < 0.05, "gini {gini}");
    }

    #[test]
    fn thresholds_match_exhaustive_grid_three_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 120;
        let margins = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-2.0f64..2.0));
        let labels: Vec<u16> = (0..n).map(|_| rng.gen_range(1..=3) as u16).collect();
        let (taus, gini) = optimize_thresholds(&margins, &labels, 3, 32).unwrap();

        // Independent brute force over the same candidate grids.
        let col0: Vec<f64> = (0..n).map(|i| margins[(i, 0)]).collect();
        let col1: Vec<f64> = (0..n).map(|i| margins[(i, 1)]).collect();
        let g0 = threshold_grid(&col0, 32);
        let g1 = threshold_grid(&col1, 32);
        let mut best = f64::INFINITY;
        for &t1 in &g1 {
            for &t0 in &g0 {
                let g = partition_gini_for(&margins, &labels, 3, &[t0, t1]);
                if g < best {
                    best = g;
                }
            }
        }
        assert!((gini - best).abs() < 1e-15);
        let check = partition_gini_for(&margins, &labels, 3, &taus);
        assert!((check - gini).abs() < 1e-15);
    }

    #[test]
    fn thresholds_two_class_exact_midpoint_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..5 {
            let n = 200;
            let margins = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0f64..1.0));
            let labels: Vec<u16> = (0..n)
                .map(|i| if margins[(i, 0)] + rng.gen_range(-0.5..0.5) > 0.0 { 2 } else { 1 })
                .collect();
            let (_, gini) = optimize_thresholds(&margins, &labels, 2, 32).unwrap();

            let mut vals: Vec<f64> = (0..n).map(|i| margins[(i, 0)]).collect();
            vals.sort_by(|a, b| a.total_cmp(b));
            let mut best = f64::INFINITY;
            let mut cands = vec![vals[0] - 1.0, vals[n - 1] + 1.0];
            for w in vals.windows(2) {
                cands.push(0.5 * (w[0] + w[1]));
            }
            for &t in &cands {
                let g = partition_gini_for(&margins, &labels, 2, &[t]);
                if g < best {
                    best = g;
                }
            }
            assert!((gini - best).abs() < 1e-15);
        }
    }

    #[test]
    fn thresholds_never_worse_than_zero_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for k in 2..=4u16 {
            let n = 80;
            let margins = DMatrix::from_fn(n, (k - 1) as usize, |_, _| rng.gen_range(-1.0f64..1.0));
            let labels: Vec<u16> = (0..n).map(|_| rng.gen_range(1..=k)).collect();
            let (_, gini) = optimize_thresholds(&margins, &labels, k as usize, 16).unwrap();
            let zero = partition_gini_for(&margins, &labels, k as usize, &vec![0.0; (k - 1) as usize]);
            assert!(gini <= zero + 1e-15);
        }
    }

    #[test]
    fn thresholds_degenerate_constant_margins() {
        let margins = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let labels = [1u16, 2, 1, 2];
        let (_, gini) = optimize_thresholds(&margins, &labels, 2, 8).unwrap();
        // Every assignment is a single subset; the best is the set impurity.
        assert!((gini - 0.5).abs() < 1e-15);
    }

    #[test]
    fn qda_examples() {
        // Equal covariances and priors agree with the LDA argmax.
        let means = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let covs = vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)];
        let priors = [0.5, 0.5];
        let disc = two_class_disc();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let f = [rng.gen_range(-2.0f64..2.0), rng.gen_range(-2.0f64..2.0)];
            let q = qda_classify(&f, &means, &covs, &priors).unwrap();
            let s = lda_scores(&f, &disc).unwrap();
            let l = if s[0] >= s[1] { 1 } else { 2 };
            assert_eq!(q, l);
        }

        // Sample at a well-separated class mean.
        let means = DMatrix::from_row_slice(2, 1, &[0.0, 10.0]);
        let covs = vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)];
        assert_eq!(qda_classify(&[10.0], &means, &covs, &priors).unwrap(), 2);

        // Concentric 1-D classes: variance 1 vs 9, boundary at 1.5722.
        let means = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let covs = vec![
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[9.0]),
        ];
        let boundary = (9.0f64 / 8.0 * 9.0f64.ln()).sqrt();
        for &x in &[0.0, 0.5, -1.2, boundary - 1e-3] {
            assert_eq!(qda_classify(&[x], &means, &covs, &priors).unwrap(), 1, "x={x}");
        }
        for &x in &[boundary + 1e-3, 3.0, -5.0] {
            assert_eq!(qda_classify(&[x], &means, &covs, &priors).unwrap(), 2, "x={x}");
        }
    }
}
