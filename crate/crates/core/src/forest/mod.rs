//! Hierarchical tree growth, prediction with accuracy-weighted aggregation,
//! node persistence, and feature-index consolidation.
//!
//! Trees are grown independently (bagging) on disjoint feature subsets and a
//! per-tree seed derived from the master seed; everything downstream of a
//! fixed seed is deterministic regardless of thread count.

mod consolidate;
mod grow;
mod predict;

pub use consolidate::{
    consolidate_resolution_independent, consolidate_resolution_specific, GraphRecord,
    graph_records_for_layer, ConsolidatedFeatures,
};
pub use predict::{classify_patch, predict, voxel_predictions, Prediction, VolumePredictions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_all_features, n_selected, tree_feature_blocks, FeatureSchema, LayerFeatures};
use crate::par;
use crate::pyramid::{LabeledVolume, Pyramid};

pub const MODEL_FORMAT: &str = "QRF1";
/// Candidate offsets per threshold in the exhaustive split search.
pub const THRESHOLD_GRID: usize = 32;
pub const MSDA_MAX_ITERS: usize = 1000;
pub const MSDA_TOL: f64 = 1e-7;

/// Forest hyperparameters on the discretized search grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_lay: usize,
    /// Extra decision depth inside the finest layer; `d_tree = n_lay - 1 + d1`.
    pub d1: usize,
    /// Leaf purity bound: nodes at the finest layer stop below this impurity.
    pub g_tree: f64,
    /// Per-layer regularization, `lambda[r - 1]` for layer `r`.
    pub lambda: Vec<f64>,
    pub seed: u64,
}

impl Hyperparams {
    /// Maximum decision depth, leaves excluded.
    pub fn d_tree(&self) -> usize {
        self.n_lay - 1 + self.d1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lay == 0 {
            return Err(Error::BadConfig("n_lay must be at least 1".into()));
        }
        if !(1..=10).contains(&self.d1) {
            return Err(Error::BadConfig(format!("d1 = {} outside 1..=10", self.d1)));
        }
        if !(1e-6..=1e-1).contains(&self.g_tree) {
            return Err(Error::BadConfig(format!("g_tree = {} outside 1e-6..=1e-1", self.g_tree)));
        }
        if self.lambda.len() != self.n_lay {
            return Err(Error::BadConfig(format!(
                "{} lambda values for {} layers",
                self.lambda.len(),
                self.n_lay
            )));
        }
        if self.lambda.iter().any(|l| !(0.01..=0.99).contains(l)) {
            return Err(Error::BadConfig("lambda values outside 0.01..=0.99".into()));
        }
        Ok(())
    }

    pub fn defaults(n_lay: usize, seed: u64) -> Self {
        Self { n_lay, d1: 4, g_tree: 1e-3, lambda: vec![0.2; n_lay], seed }
    }
}

/// A volume with its pyramid and per-layer feature matrices.
pub struct PreparedVolume {
    pub volume: LabeledVolume,
    pub pyramid: Pyramid,
    pub features: Vec<LayerFeatures>,
}

impl PreparedVolume {
    pub fn prepare(
        volume: LabeledVolume,
        n_lay: usize,
        n_clas: u16,
        schema: &FeatureSchema,
    ) -> Result<Self> {
        let pyramid = Pyramid::build(&volume, n_lay, n_clas)?;
        let features = extract_all_features(&volume, &pyramid, schema)?;
        Ok(Self { volume, pyramid, features })
    }
}

/// Parameters persisted for one decision node.
///
/// `classes` lists the class ids present when the node was fitted, ascending;
/// the first entry is the reference class. A node with empty `betas` is a
/// pass-through: it routes every sample to `classes[0]` without a
/// discriminant (a single-class node, or a fallback when the covariance
/// cannot be estimated).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionNode {
    pub layer: usize,
    pub depth: usize,
    pub classes: Vec<u16>,
    /// Active squared-feature indices in the tree's local squared layout.
    pub selected: Vec<usize>,
    /// One row per entry of `classes` (projecting coefficients).
    pub betas: Vec<Vec<f64>>,
    /// Offsets for `classes[1..]`.
    pub thresholds: Vec<f64>,
    /// Empirical class probabilities of the received realistic samples.
    pub probs: Vec<f64>,
    /// `1 - g*`: one minus the minimized partition impurity.
    pub accuracy: f64,
    /// Mean voxelwise label heterogeneity of the fitted (balanced) samples.
    pub difficulty: f64,
    pub norm_means: Vec<f64>,
    pub norm_stds: Vec<f64>,
    pub n_samples: usize,
    /// Branch per global class id; `None` marks a pruned branch.
    pub children: Vec<Option<Node>>,
}

/// Voxel statistics of a leaf.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafNode {
    /// Voxelwise empirical probabilities of the received training voxels.
    pub probs: Vec<f64>,
    pub accuracy: f64,
    /// Always zero; kept for node-shape consistency.
    pub difficulty: f64,
    pub n_voxels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Decision(DecisionNode),
    Leaf(LeafNode),
}

impl Node {
    pub fn as_decision(&self) -> Option<&DecisionNode> {
        match self {
            Node::Decision(d) => Some(d),
            Node::Leaf(_) => None,
        }
    }

    pub fn stats(&self) -> (&[f64], f64, f64) {
        match self {
            Node::Decision(d) => (&d.probs, d.accuracy, d.difficulty),
            Node::Leaf(l) => (&l.probs, l.accuracy, l.difficulty),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeModel {
    pub index: usize,
    /// Ascending base-feature indices this tree sees.
    pub feature_subset: Vec<usize>,
    pub root: Node,
}

/// The trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub format: String,
    pub n_clas: u16,
    pub n_lay: usize,
    pub n_chan: usize,
    pub schema_id: String,
    pub feature_names: Vec<String>,
    pub n_tot: usize,
    pub n_sel: usize,
    pub n_weak: usize,
    pub hyperparams: Hyperparams,
    pub pruned_branches: usize,
    pub nonconverged_solves: usize,
    pub trees: Vec<TreeModel>,
}

impl Forest {
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            id: self.schema_id.clone(),
            n_chan: self.n_chan,
            names: self.feature_names.clone(),
        }
    }
}

/// Stable per-stream seed derivation (splitmix64 over the master seed).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Wall time spent in the training phases, for reporting.
#[derive(Debug, Clone, Default)]
pub struct TrainDiagnostics {
    pub smote_seconds: f64,
    pub trees_seconds: f64,
    pub pruned_branches: usize,
    pub nonconverged_solves: usize,
}

/// Grows `n_weak = floor(sqrt(n_tot))` hierarchical trees over the prepared
/// training volumes. Each tree gets a disjoint feature block and its own
/// derived seed; trees are grown in parallel and assembled in index order.
pub fn train_forest(
    prepared: &[PreparedVolume],
    hyper: &Hyperparams,
    n_clas: u16,
    schema: &FeatureSchema,
) -> Result<(Forest, TrainDiagnostics)> {
    hyper.validate()?;
    if prepared.is_empty() {
        return Err(Error::BadConfig("no training volumes".into()));
    }
    for p in prepared {
        if p.volume.labels.is_none() {
            return Err(Error::BadConfig("training volumes must carry labels".into()));
        }
        if p.pyramid.n_lay != hyper.n_lay {
            return Err(Error::BadConfig("pyramid layer count differs from hyperparameters".into()));
        }
    }
    let n_tot = schema.n_tot();
    let n_sel = n_selected(n_tot);
    if n_sel == 0 {
        return Err(Error::BadConfig("feature schema is empty".into()));
    }
    let n_weak = n_sel;

    use rand::SeedableRng;
    let mut master_rng = rand_chacha::ChaCha8Rng::seed_from_u64(hyper.seed);
    let blocks = tree_feature_blocks(n_tot, &mut master_rng);

    let start = std::time::Instant::now();
    let grown: Vec<Result<(TreeModel, grow::GrowDiagnostics)>> = par::map_indexed(n_weak, |w| {
        grow::grow_tree(
            prepared,
            &blocks[w],
            w,
            hyper,
            n_clas,
            n_weak,
            derive_seed(hyper.seed, w as u64 + 1),
        )
    });

    let mut trees = Vec::with_capacity(n_weak);
    let mut diag = TrainDiagnostics::default();
    for g in grown {
        let (tree, d) = g?;
        diag.pruned_branches += d.pruned_branches;
        diag.nonconverged_solves += d.nonconverged_solves;
        diag.smote_seconds += d.smote_seconds;
        trees.push(tree);
    }
    diag.trees_seconds = start.elapsed().as_secs_f64();

    let forest = Forest {
        format: MODEL_FORMAT.to_string(),
        n_clas,
        n_lay: hyper.n_lay,
        n_chan: schema.n_chan,
        schema_id: schema.id.clone(),
        feature_names: schema.names.clone(),
        n_tot,
        n_sel,
        n_weak,
        hyperparams: hyper.clone(),
        pruned_branches: diag.pruned_branches,
        nonconverged_solves: diag.nonconverged_solves,
        trees,
    };
    Ok((forest, diag))
}
