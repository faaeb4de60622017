//! Random search over the discretized hyperparameter grids with the macro
//! precision/recall objective and the trailing-window stopping rule, plus the
//! evaluation metrics themselves.
//!
//! The search stops as soon as a completed trial fails to beat the best
//! combined score among the previous (up to 20) completed trials, or at the
//! hard trial cap. Failed trials are logged and skipped by the rule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{derive_seed, predict, train_forest, Forest, Hyperparams, PreparedVolume};
use crate::features::FeatureSchema;

/// Trailing-window length of the stopping rule.
pub const STOP_WINDOW: usize = 20;
pub const DEFAULT_MAX_TRIALS: usize = 200;

/// Discretized hyperparameter grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchGrids {
    pub d1: Vec<usize>,
    pub g_tree: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Default for SearchGrids {
    fn default() -> Self {
        Self {
            d1: (1..=10).collect(),
            g_tree: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            lambda: (1..=99).map(|i| i as f64 / 100.0).collect(),
        }
    }
}

impl SearchGrids {
    pub fn validate(&self) -> Result<()> {
        if self.d1.is_empty() || self.g_tree.is_empty() || self.lambda.is_empty() {
            return Err(Error::BadConfig("empty hyperparameter grid".into()));
        }
        Ok(())
    }

    /// Draws one point: `d1`, `g_tree`, then one lambda per layer.
    pub fn sample<R: Rng>(&self, n_lay: usize, seed: u64, rng: &mut R) -> Hyperparams {
        let d1 = self.d1[rng.gen_range(0..self.d1.len())];
        let g_tree = self.g_tree[rng.gen_range(0..self.g_tree.len())];
        let lambda = (0..n_lay)
            .map(|_| self.lambda[rng.gen_range(0..self.lambda.len())])
            .collect();
        Hyperparams { n_lay, d1, g_tree, lambda, seed }
    }
}

/// One line of the trial log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub hyperparams: Hyperparams,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    /// `(macro_precision + macro_recall) / 2`.
    pub score: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// One-vs-rest precision and recall averaged over the foreground classes.
///
/// A class absent from both references and predictions counts as precision
/// and recall 1; a class present in the references but never predicted gets
/// precision 0.
pub fn precision_recall_macro(
    predicted: &[u16],
    reference: &[u16],
    foreground: &[u16],
) -> Result<(f64, f64)> {
    if predicted.len() != reference.len() {
        return Err(Error::Misalignment(format!(
            "{} predictions vs {} references",
            predicted.len(),
            reference.len()
        )));
    }
    if foreground.is_empty() {
        return Err(Error::NoForegroundClasses);
    }
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for &c in foreground {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &r) in predicted.iter().zip(reference) {
            match (p == c, r == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else if tp + fn_ > 0 {
            0.0
        } else {
            1.0
        };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 1.0 };
        p_sum += precision;
        r_sum += recall;
    }
    let k = foreground.len() as f64;
    Ok((p_sum / k, r_sum / k))
}

/// Row-per-reference-class confusion counts (`n_clas x n_clas`).
pub fn confusion_matrix(predicted: &[u16], reference: &[u16], n_clas: u16) -> Vec<Vec<usize>> {
    let k = n_clas as usize;
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &r) in predicted.iter().zip(reference) {
        if r >= 1 && r <= n_clas && p >= 1 && p <= n_clas {
            m[(r - 1) as usize][(p - 1) as usize] += 1;
        }
    }
    m
}

/// Trains on the training volumes and scores voxel-layer macro precision and
/// recall on the validation volumes.
pub fn fit_and_score(
    train: &[PreparedVolume],
    validation: &[PreparedVolume],
    hyper: &Hyperparams,
    n_clas: u16,
    schema: &FeatureSchema,
    foreground: &[u16],
) -> Result<(Forest, f64, f64)> {
    let (forest, _) = train_forest(train, hyper, n_clas, schema)?;
    let mut predicted = Vec::new();
    let mut reference = Vec::new();
    for vol in validation {
        let labels = vol
            .volume
            .labels
            .as_ref()
            .ok_or_else(|| Error::BadConfig("validation volumes must carry labels".into()))?;
        let preds = predict(&forest, vol, false)?;
        for (id, _, pred) in crate::forest::voxel_predictions(vol, &preds) {
            predicted.push(pred.label);
            reference.push(labels[id as usize]);
        }
    }
    let (p, r) = precision_recall_macro(&predicted, &reference, foreground)?;
    Ok((forest, p, r))
}

/// Runs up to `max_trials` random draws, each handled by `run_trial`
/// (returning the trained artifact with its macro precision and recall).
///
/// Stops when a completed trial's combined score does not exceed the best
/// combined score among the previous `min(window, completed)` trials. Returns
/// the best artifact and the full log.
pub fn random_search<T>(
    grids: &SearchGrids,
    n_lay: usize,
    master_seed: u64,
    max_trials: usize,
    window: usize,
    mut run_trial: impl FnMut(&Hyperparams, usize) -> Result<(T, f64, f64)>,
) -> Result<(T, Vec<TrialRecord>)> {
    grids.validate()?;
    if max_trials == 0 {
        return Err(Error::BadConfig("max_trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut log: Vec<TrialRecord> = Vec::new();
    let mut completed: Vec<f64> = Vec::new();
    let mut best: Option<(T, f64)> = None;

    for index in 1..=max_trials {
        let hyper = grids.sample(n_lay, derive_seed(master_seed, index as u64), &mut rng);
        let t0 = std::time::Instant::now();
        match run_trial(&hyper, index) {
            Ok((artifact, macro_p, macro_r)) => {
                let score = 0.5 * (macro_p + macro_r);
                log.push(TrialRecord {
                    index,
                    hyperparams: hyper,
                    macro_precision: Some(macro_p),
                    macro_recall: Some(macro_r),
                    score: Some(score),
                    seconds: t0.elapsed().as_secs_f64(),
                    error: None,
                });
                let is_better = best.as_ref().map_or(true, |(_, s)| score > *s);
                if is_better {
                    best = Some((artifact, score));
                }
                let stop = !completed.is_empty() && {
                    let from = completed.len().saturating_sub(window);
                    let window_best =
                        completed[from..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    score <= window_best
                };
                completed.push(score);
                if stop {
                    break;
                }
            }
            Err(e) => {
                log.push(TrialRecord {
                    index,
                    hyperparams: hyper,
                    macro_precision: None,
                    macro_recall: None,
                    score: None,
                    seconds: t0.elapsed().as_secs_f64(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    match best {
        Some((artifact, _)) => Ok((artifact, log)),
        None => Err(Error::BadConfig("every search trial failed".into())),
    }
}
