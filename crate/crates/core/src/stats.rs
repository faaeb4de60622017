//! Class-conditional statistics and impurity measures.
//!
//! Shared by every discriminant and split criterion in the forest. All
//! functions are pure; covariance accumulation is two-pass (mean, then
//! scatter) and empirical probabilities are formed from exact integer counts
//! before any division.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A labeled feature matrix. Labels are 1-based class ids in `1..=n_clas`.
///
/// Weights are carried for interface completeness but every estimator here
/// runs unweighted (the bagging scheme never weights samples).
#[derive(Debug, Clone)]
pub struct SampleSet {
    features: Vec<f64>,
    labels: Vec<u16>,
    weights: Option<Vec<f64>>,
    n_dims: usize,
    n_clas: u16,
}

impl SampleSet {
    pub fn new(features: Vec<f64>, labels: Vec<u16>, n_dims: usize, n_clas: u16) -> Result<Self> {
        if n_dims == 0 || labels.is_empty() || features.len() != labels.len() * n_dims {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * n_dims,
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > n_clas) {
            return Err(Error::BadConfig(format!(
                "label {bad} outside class universe 1..={n_clas}"
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::BadConfig("non-finite feature value".into()));
        }
        Ok(Self { features, labels, weights: None, n_dims, n_clas })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.labels.len(),
                got: weights.len(),
            });
        }
        if !weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(Error::BadConfig("weights must be finite and nonnegative".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn n_clas(&self) -> u16 {
        self.n_clas
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_dims..(i + 1) * self.n_dims]
    }

    fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_clas as usize];
        for &l in &self.labels {
            counts[(l - 1) as usize] += 1;
        }
        counts
    }
}

/// Per-class means and priors plus the pooled second-order statistics.
#[derive(Debug, Clone)]
pub struct ClassStats {
    /// Row `c-1` is the mean vector of class `c`.
    pub class_means: DMatrix<f64>,
    /// Empirical priors, summing to one.
    pub priors: Vec<f64>,
    pub overall_mean: DVector<f64>,
    /// Unbiased pooled within-class covariance.
    pub within_cov: DMatrix<f64>,
    pub between_cov: DMatrix<f64>,
    /// Denominator of the pooled covariance: total samples minus class count.
    pub dof: usize,
}

impl ClassStats {
    /// Computes all statistics for a sample set whose every universe class is populated.
    pub fn compute(data: &SampleSet) -> Result<Self> {
        let (class_means, priors, overall_mean) = class_means_priors(data)?;
        let (within_cov, dof) = within_class_covariance(data, &class_means)?;
        let between_cov = between_class_covariance(&class_means, &priors, &overall_mean);
        Ok(Self { class_means, priors, overall_mean, within_cov, between_cov, dof })
    }
}

/// Per-class arithmetic means, priors `n_c / N`, and the prior-weighted overall mean.
pub fn class_means_priors(data: &SampleSet) -> Result<(DMatrix<f64>, Vec<f64>, DVector<f64>)> {
    let k = data.n_clas as usize;
    let d = data.n_dims;
    let counts = data.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass((c + 1) as u16));
    }
    let mut means = DMatrix::zeros(k, d);
    for i in 0..data.n_samples() {
        let c = (data.labels[i] - 1) as usize;
        for (j, &v) in data.row(i).iter().enumerate() {
            means[(c, j)] += v;
        }
    }
    let total = data.n_samples() as f64;
    let mut priors = Vec::with_capacity(k);
    for c in 0..k {
        let n_c = counts[c] as f64;
        for j in 0..d {
            means[(c, j)] /= n_c;
        }
        priors.push(n_c / total);
    }
    let mut overall = DVector::zeros(d);
    for c in 0..k {
        for j in 0..d {
            overall[j] += priors[c] * means[(c, j)];
        }
    }
    Ok((means, priors, overall))
}

/// Unbiased pooled within-class covariance and its degree of freedom `N - n_clas`.
pub fn within_class_covariance(
    data: &SampleSet,
    class_means: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, usize)> {
    let k = data.n_clas as usize;
    let d = data.n_dims;
    let n = data.n_samples();
    if n <= k {
        return Err(Error::InsufficientSamples { samples: n, classes: k });
    }
    let dof = n - k;
    let mut scatter = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        let c = (data.labels[i] - 1) as usize;
        let row = data.row(i);
        for j in 0..d {
            centered[j] = row[j] - class_means[(c, j)];
        }
        for a in 0..d {
            for b in a..d {
                scatter[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    let inv_dof = 1.0 / dof as f64;
    for a in 0..d {
        for b in a..d {
            let v = scatter[(a, b)] * inv_dof;
            scatter[(a, b)] = v;
            scatter[(b, a)] = v;
        }
    }
    Ok((scatter, dof))
}

/// Prior-weighted scatter of the class means around the overall mean.
pub fn between_class_covariance(
    class_means: &DMatrix<f64>,
    priors: &[f64],
    overall_mean: &DVector<f64>,
) -> DMatrix<f64> {
    let d = overall_mean.len();
    let mut out = DMatrix::zeros(d, d);
    for (c, &p) in priors.iter().enumerate() {
        for a in 0..d {
            let da = class_means[(c, a)] - overall_mean[a];
            for b in a..d {
                let db = class_means[(c, b)] - overall_mean[b];
                out[(a, b)] += p * da * db;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

/// Maximum-likelihood (1/n_c) covariance of a single class.
pub fn class_covariance(data: &SampleSet, class_id: u16) -> Result<DMatrix<f64>> {
    let d = data.n_dims;
    let members: Vec<usize> = (0..data.n_samples())
        .filter(|&i| data.labels[i] == class_id)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyClass(class_id));
    }
    let mut mean = vec![0.0; d];
    for &i in &members {
        for (j, &v) in data.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    let n_c = members.len() as f64;
    for m in &mut mean {
        *m /= n_c;
    }
    let mut cov = DMatrix::zeros(d, d);
    for &i in &members {
        let row = data.row(i);
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / n_c;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

fn counts_of(labels: &[u16], n_clas: u16) -> Vec<usize> {
    let mut counts = vec![0usize; n_clas as usize];
    for &l in labels {
        counts[(l - 1) as usize] += 1;
    }
    counts
}

/// Gini impurity `1 - sum p_c^2` over exact counts.
pub fn gini_impurity(labels: &[u16], n_clas: u16) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(gini_from_counts(&counts_of(labels, n_clas)))
}

pub(crate) fn gini_from_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let total = total as f64;
    let sum_sq: f64 = counts
        .iter()
        .map(|&n| {
            let p = n as f64 / total;
            p * p
        })
        .sum();
    1.0 - sum_sq
}

/// Empirical entropy in bits, with `0 * log 0 = 0`.
pub fn entropy(labels: &[u16], n_clas: u16) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptySet);
    }
    let counts = counts_of(labels, n_clas);
    let total: usize = counts.iter().sum();
    let total = total as f64;
    Ok(counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            -p * p.log2()
        })
        .sum())
}

/// Cardinality-weighted average of the subset Gini impurities.
///
/// Empty subsets contribute nothing; the union must be nonempty.
pub fn gini_of_partition(subsets: &[&[u16]], n_clas: u16) -> Result<f64> {
    let total: usize = subsets.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(Error::EmptySet);
    }
    let total = total as f64;
    let mut acc = 0.0;
    for subset in subsets {
        if subset.is_empty() {
            continue;
        }
        let g = gini_from_counts(&counts_of(subset, n_clas));
        acc += subset.len() as f64 / total * g;
    }
    Ok(acc)
}

/// Same weighted average, taken directly from per-subset class counts.
pub(crate) fn partition_gini_from_counts(subset_counts: &[Vec<usize>]) -> f64 {
    let total: usize = subset_counts.iter().map(|c| c.iter().sum::<usize>()).sum();
    let total = total as f64;
    let mut acc = 0.0;
    for counts in subset_counts {
        let n: usize = counts.iter().sum();
        if n == 0 {
            continue;
        }
        acc += n as f64 / total * gini_from_counts(counts);
    }
    acc
}
