//! Consolidation of node-selected squared features and graph-record export.
//!
//! Node selections are stored in each tree's local squared layout; trees see
//! disjoint base features, so unions are taken after mapping every local
//! index into the squared layout over all `n_tot` base features. The
//! consolidated index sets give downstream graph models a common feature
//! vocabulary: one set per resolution layer, and one resolution-independent
//! set thresholded at the median coefficient score.

use std::collections::{BTreeMap, BTreeSet};

use super::{DecisionNode, Forest, Node, PreparedVolume, VolumePredictions};
use crate::features::{eval_global_squared, global_squared_index};

fn visit_decision_nodes<'a>(node: &'a Node, f: &mut impl FnMut(&'a DecisionNode)) {
    if let Node::Decision(d) = node {
        f(d);
        for child in d.children.iter().flatten() {
            visit_decision_nodes(child, f);
        }
    }
}

/// Sorted, deduplicated union of the squared features selected by every
/// decision node of layer `r`, in the global squared layout. Layer 0 has no
/// decision nodes and always yields an empty set.
pub fn consolidate_resolution_specific(forest: &Forest, r: usize) -> Vec<usize> {
    let mut set = BTreeSet::new();
    for tree in &forest.trees {
        visit_decision_nodes(&tree.root, &mut |d| {
            if d.layer == r {
                for &h in &d.selected {
                    set.insert(global_squared_index(h, &tree.feature_subset, forest.n_tot));
                }
            }
        });
    }
    set.into_iter().collect()
}

/// Model-wide consolidated features plus the per-layer sets.
#[derive(Debug, Clone)]
pub struct ConsolidatedFeatures {
    /// `per_layer[r - 1]` for layers `1..=n_lay`, global squared indices.
    pub per_layer: Vec<Vec<usize>>,
    /// Indices whose maximum absolute coefficient beats the median score.
    pub independent: Vec<usize>,
    /// Set when every score tied the median and the full union was kept.
    pub independent_fallback: bool,
}

impl ConsolidatedFeatures {
    pub fn from_forest(forest: &Forest) -> Self {
        let per_layer: Vec<Vec<usize>> = (1..=forest.n_lay)
            .map(|r| consolidate_resolution_specific(forest, r))
            .collect();
        let (independent, independent_fallback) = consolidate_resolution_independent(forest);
        Self { per_layer, independent, independent_fallback }
    }
}

/// Union across all layers, scored by the largest absolute projecting
/// coefficient attached to each index anywhere in the model; keeps indices
/// scoring strictly above the median. Returns the fallback flag instead of
/// an empty set when all scores coincide.
pub fn consolidate_resolution_independent(forest: &Forest) -> (Vec<usize>, bool) {
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    for tree in &forest.trees {
        visit_decision_nodes(&tree.root, &mut |d| {
            for &h in &d.selected {
                let global = global_squared_index(h, &tree.feature_subset, forest.n_tot);
                let score = d
                    .betas
                    .iter()
                    .map(|row| row[h].abs())
                    .fold(0.0f64, f64::max);
                let entry = scores.entry(global).or_insert(0.0);
                if score > *entry {
                    *entry = score;
                }
            }
        });
    }
    if scores.is_empty() {
        return (Vec::new(), false);
    }
    let mut sorted: Vec<f64> = scores.values().copied().collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let kept: Vec<usize> = scores
        .iter()
        .filter(|(_, &s)| s > median)
        .map(|(&i, _)| i)
        .collect();
    if kept.is_empty() {
        (scores.keys().copied().collect(), true)
    } else {
        (kept, false)
    }
}

/// One export record: the per-patch inputs of the downstream graph models.
#[derive(Debug, Clone)]
pub struct GraphRecord {
    pub layer: usize,
    /// Patch index within its layer; the linear voxel id at layer 0.
    pub id: u32,
    pub priors: Vec<f64>,
    pub reliability: f64,
    /// Values of the layer's consolidated indices (empty at layer 0).
    pub features_specific: Vec<f64>,
    /// Values of the resolution-independent indices (empty at layer 0).
    pub features_independent: Vec<f64>,
    pub neighbors: Vec<u32>,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
}

/// Builds the records of one layer (`0..=n_lay`) of one predicted volume.
///
/// Layer 0 records one voxel per finest-patch cell: neighbors are the
/// adjacent voxels inside the patch-covered region, the parent is the
/// containing finest-layer patch, and the consolidated feature vectors are
/// empty because single voxels carry no patch-level features.
pub fn graph_records_for_layer(
    prepared: &PreparedVolume,
    predictions: &VolumePredictions,
    consolidated: &ConsolidatedFeatures,
    r: usize,
) -> Vec<GraphRecord> {
    if r == 0 {
        return voxel_records(prepared, predictions);
    }
    let layer = prepared.pyramid.layer(r);
    let spec_idx = &consolidated.per_layer[r - 1];
    let ind_idx = &consolidated.independent;
    (0..layer.len())
        .map(|i| {
            let row = prepared.features[r - 1].row(i);
            let patch = &layer.patches[i];
            let pred = &predictions.layer(r)[i];
            let children = if r >= 2 {
                patch.children.clone()
            } else {
                voxel_ids_of_patch(prepared, patch.origin)
            };
            GraphRecord {
                layer: r,
                id: i as u32,
                priors: pred.probs.clone(),
                reliability: pred.reliability,
                features_specific: spec_idx.iter().map(|&g| eval_global_squared(g, row)).collect(),
                features_independent: ind_idx.iter().map(|&g| eval_global_squared(g, row)).collect(),
                neighbors: layer.neighbors(i as u32),
                parent: patch.parent,
                children,
            }
        })
        .collect()
}

fn voxel_ids_of_patch(prepared: &PreparedVolume, origin: (usize, usize, usize)) -> Vec<u32> {
    let dims = prepared.volume.dims;
    let mut out = Vec::with_capacity(27);
    for dz in 0..3 {
        for dy in 0..3 {
            for dx in 0..3 {
                let (x, y, z) = (origin.0 + dx, origin.1 + dy, origin.2 + dz);
                out.push((x + dims.0 * (y + dims.1 * z)) as u32);
            }
        }
    }
    out
}

fn voxel_records(
    prepared: &PreparedVolume,
    predictions: &VolumePredictions,
) -> Vec<GraphRecord> {
    let layer1 = prepared.pyramid.layer(1);
    let dims = prepared.volume.dims;
    // Extent of the region tiled by finest-layer patches; neighbors outside
    // it have no record to reference.
    let covered = (layer1.grid.0 * 3, layer1.grid.1 * 3, layer1.grid.2 * 3);
    let mut out = Vec::with_capacity(layer1.len() * 27);
    for (i, patch) in layer1.patches.iter().enumerate() {
        let pred = &predictions.voxel_patches[i];
        for dz in 0..3 {
            for dy in 0..3 {
                for dx in 0..3 {
                    let (x, y, z) =
                        (patch.origin.0 + dx, patch.origin.1 + dy, patch.origin.2 + dz);
                    let id = (x + dims.0 * (y + dims.1 * z)) as u32;
                    let mut neighbors = Vec::with_capacity(26);
                    for nz in z.saturating_sub(1)..=(z + 1).min(covered.2 - 1) {
                        for ny in y.saturating_sub(1)..=(y + 1).min(covered.1 - 1) {
                            for nx in x.saturating_sub(1)..=(x + 1).min(covered.0 - 1) {
                                if (nx, ny, nz) != (x, y, z) {
                                    neighbors.push((nx + dims.0 * (ny + dims.1 * nz)) as u32);
                                }
                            }
                        }
                    }
                    out.push(GraphRecord {
                        layer: 0,
                        id,
                        priors: pred.probs.clone(),
                        reliability: pred.reliability,
                        features_specific: Vec::new(),
                        features_independent: Vec::new(),
                        neighbors,
                        parent: Some(layer1.lattice_index(x / 3, y / 3, z / 3)),
                        children: Vec::new(),
                    });
                }
            }
        }
    }
    out
}
