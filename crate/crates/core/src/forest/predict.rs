//! Prediction over a prepared volume.
//!
//! Every patch of every layer visits the deepest node of its layer in every
//! tree. Routing is hierarchical: the coarsest patches enter the root, and
//! each finer patch follows the branch chosen for its canonical parent. At
//! the finest patch layer a patch walks the node chain until it meets a leaf;
//! the leaf supplies the voxel-layer statistics for its 27 voxels. A visit
//! into a pruned branch stops at the last existing node and reuses its stored
//! statistics for everything deeper.
//!
//! Per tree, the collected (probabilities, accuracy, difficulty) triples are
//! aggregated as the accuracy-weighted mean probability passed through a
//! softmax, and the reliability `exp(-mean difficulty)`.

use super::grow::margins_from_betas;
use super::{DecisionNode, Forest, Node, PreparedVolume};
use crate::discriminant::assign_class;
use crate::error::{Error, Result};
use crate::features::{eval_global_squared, fit_normalizer};
use crate::par;

/// Normalized class probabilities, the estimated label and the reliability
/// indicator of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// 1-based class id, argmax of `probs` with ties to the smallest id.
    pub label: u16,
    /// `exp(-mean node difficulty)`, in (0, 1].
    pub reliability: f64,
}

/// Predictions for every layer of one volume. Voxel-layer predictions are
/// stored per finest-layer patch; all 27 voxels of a patch share one entry.
#[derive(Debug, Clone)]
pub struct VolumePredictions {
    pub n_lay: usize,
    /// `layers[r - 1][patch]` for `r` in `1..=n_lay`.
    pub layers: Vec<Vec<Prediction>>,
    pub voxel_patches: Vec<Prediction>,
}

impl VolumePredictions {
    pub fn layer(&self, r: usize) -> &[Prediction] {
        &self.layers[r - 1]
    }
}

/// Statistics a patch collects when visiting a node.
#[derive(Clone, Copy)]
struct Visit<'a> {
    probs: &'a [f64],
    accuracy: f64,
    difficulty: f64,
}

impl<'a> Visit<'a> {
    fn of(node: &'a Node) -> Self {
        let (probs, accuracy, difficulty) = node.stats();
        Visit { probs, accuracy, difficulty }
    }

    fn of_decision(d: &'a DecisionNode) -> Self {
        Visit { probs: &d.probs, accuracy: d.accuracy, difficulty: d.difficulty }
    }
}

/// Ancestor used for routing: the nearest patch of the coarser layer on
/// that layer's own side-lattice (ties toward the lower side, clamped at the
/// boundary). Training decomposes patches along exactly this lattice, so the
/// chain a patch follows at prediction time replays inputs the nodes were
/// fitted on; for octant-aligned patches it is the exact containing parent.
fn routing_parent(
    coarser: &crate::pyramid::Layer,
    child_origin: (usize, usize, usize),
    dims: (usize, usize, usize),
) -> u32 {
    let side = coarser.side;
    let half = side / 2;
    let stride = coarser.stride;
    let axis = |o: usize, dim: usize| -> usize {
        let near = if o == 0 { 0 } else { side * ((o + half - 1) / side) };
        let max_origin = ((dim - side) / stride) * stride;
        near.min(max_origin)
    };
    let p = (
        axis(child_origin.0, dims.0),
        axis(child_origin.1, dims.1),
        axis(child_origin.2, dims.2),
    );
    coarser.index_of_origin(p).expect("routing parent lies on the coarser lattice")
}

/// Routing state of a patch at one layer.
#[derive(Clone, Copy)]
enum Cursor<'a> {
    Active(&'a DecisionNode),
    /// The path ended above this layer; reuse the last node's statistics.
    Stopped(Visit<'a>),
}

/// Outcome of a layer visit, consumed by the next finer layer.
#[derive(Clone, Copy)]
enum Outcome<'a> {
    Assigned { node: &'a DecisionNode, class: u16 },
    Stop(Visit<'a>),
}

/// Weighted-probability and difficulty accumulators over trees.
struct Accumulator {
    layer_wp: Vec<Vec<f64>>,
    layer_h: Vec<Vec<f64>>,
    vox_wp: Vec<f64>,
    vox_h: Vec<f64>,
}

impl Accumulator {
    fn new(prepared: &PreparedVolume, n_clas: usize) -> Self {
        let n_lay = prepared.pyramid.n_lay;
        let layer_wp = (1..=n_lay)
            .map(|r| vec![0.0; prepared.pyramid.layer(r).len() * n_clas])
            .collect();
        let layer_h = (1..=n_lay).map(|r| vec![0.0; prepared.pyramid.layer(r).len()]).collect();
        let n1 = prepared.pyramid.layer(1).len();
        Self { layer_wp, layer_h, vox_wp: vec![0.0; n1 * n_clas], vox_h: vec![0.0; n1] }
    }

    fn add_layer(&mut self, r: usize, patch: usize, n_clas: usize, v: &Visit<'_>) {
        let base = patch * n_clas;
        for c in 0..n_clas {
            self.layer_wp[r - 1][base + c] += v.accuracy * v.probs[c];
        }
        self.layer_h[r - 1][patch] += v.difficulty;
    }

    fn add_voxels(&mut self, patch: usize, n_clas: usize, v: &Visit<'_>) {
        let base = patch * n_clas;
        for c in 0..n_clas {
            self.vox_wp[base + c] += v.accuracy * v.probs[c];
        }
        self.vox_h[patch] += v.difficulty;
    }

    fn merge(&mut self, other: &Accumulator) {
        for (a, b) in self.layer_wp.iter_mut().zip(&other.layer_wp) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.layer_h.iter_mut().zip(&other.layer_h) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.vox_wp.iter_mut().zip(&other.vox_wp) {
            *x += y;
        }
        for (x, y) in self.vox_h.iter_mut().zip(&other.vox_h) {
            *x += y;
        }
    }
}

/// Runs the forest over a prepared (possibly unlabeled) volume.
///
/// With `batch_normalize`, the selected squared features are standardized
/// across all patches visiting a node instead of with the node's stored
/// training statistics.
pub fn predict(
    forest: &Forest,
    prepared: &PreparedVolume,
    batch_normalize: bool,
) -> Result<VolumePredictions> {
    if prepared.pyramid.n_lay != forest.n_lay {
        return Err(Error::Misalignment(format!(
            "pyramid has {} layers, model expects {}",
            prepared.pyramid.n_lay, forest.n_lay
        )));
    }
    if prepared.volume.n_chan() != forest.n_chan || prepared.features[0].n_tot != forest.n_tot {
        return Err(Error::SchemaMismatch {
            expected: forest.schema_id.clone(),
            got: format!(
                "{} channels / {} features",
                prepared.volume.n_chan(),
                prepared.features[0].n_tot
            ),
        });
    }

    let n_clas = forest.n_clas as usize;
    let accs = par::map_indexed(forest.trees.len(), |w| {
        walk_tree(forest, w, prepared, batch_normalize)
    });
    let mut total = Accumulator::new(prepared, n_clas);
    for acc in &accs {
        total.merge(acc);
    }

    let n_weak = forest.n_weak as f64;
    let finalize = |wp: &[f64], h: f64| -> Prediction {
        let avg: Vec<f64> = wp.iter().map(|v| v / n_weak).collect();
        let probs = softmax(&avg);
        let label = argmax_label(&probs);
        Prediction { probs, label, reliability: (-(h / n_weak)).exp() }
    };

    let layers = (1..=forest.n_lay)
        .map(|r| {
            let n_p = prepared.pyramid.layer(r).len();
            (0..n_p)
                .map(|i| {
                    finalize(
                        &total.layer_wp[r - 1][i * n_clas..(i + 1) * n_clas],
                        total.layer_h[r - 1][i],
                    )
                })
                .collect()
        })
        .collect();
    let n1 = prepared.pyramid.layer(1).len();
    let voxel_patches = (0..n1)
        .map(|i| finalize(&total.vox_wp[i * n_clas..(i + 1) * n_clas], total.vox_h[i]))
        .collect();

    Ok(VolumePredictions { n_lay: forest.n_lay, layers, voxel_patches })
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn argmax_label(probs: &[f64]) -> u16 {
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (best + 1) as u16
}

/// Raw (unnormalized) values of the node's selected squared features for one
/// patch: only those entries of the squared expansion are ever computed.
fn selected_raw(
    node: &DecisionNode,
    subset: &[usize],
    prepared: &PreparedVolume,
    r: usize,
    patch: usize,
) -> Vec<f64> {
    let row = prepared.features[r - 1].row(patch);
    let base: Vec<f64> = subset.iter().map(|&i| row[i]).collect();
    node.selected.iter().map(|&h| eval_global_squared(h, &base)).collect()
}

fn classify_with(node: &DecisionNode, raw: &[f64], means: &[f64], stds: &[f64]) -> u16 {
    let values: Vec<f64> = raw
        .iter()
        .zip(means.iter().zip(stds))
        .map(|(&v, (&m, &s))| (v - m) / s)
        .collect();
    let margins = margins_from_betas(&node.betas, &node.selected, &values);
    node.classes[assign_class(&margins, &node.thresholds)]
}

/// The routing decision of one patch at one decision node under the node's
/// stored normalization (the prediction-time default).
pub fn classify_patch(
    node: &DecisionNode,
    subset: &[usize],
    prepared: &PreparedVolume,
    r: usize,
    patch: usize,
) -> u16 {
    if node.betas.is_empty() {
        return node.classes[0];
    }
    let raw = selected_raw(node, subset, prepared, r, patch);
    let (means, stds) = stored_norm(node);
    classify_with(node, &raw, &means, &stds)
}

/// Stored normalization statistics restricted to the selected indices.
fn stored_norm(node: &DecisionNode) -> (Vec<f64>, Vec<f64>) {
    let means = node.selected.iter().map(|&h| node.norm_means[h]).collect();
    let stds = node.selected.iter().map(|&h| node.norm_stds[h]).collect();
    (means, stds)
}

/// Classifies every member patch of one node, writing into `out`.
fn classify_group(
    node: &DecisionNode,
    members: &[usize],
    subset: &[usize],
    prepared: &PreparedVolume,
    r: usize,
    batch: bool,
    out: &mut [u16],
) {
    if node.betas.is_empty() {
        for &patch in members {
            out[patch] = node.classes[0];
        }
        return;
    }
    let raws: Vec<Vec<f64>> = members
        .iter()
        .map(|&patch| selected_raw(node, subset, prepared, r, patch))
        .collect();
    let (means, stds) = if batch { fit_normalizer(&raws) } else { stored_norm(node) };
    for (&patch, raw) in members.iter().zip(&raws) {
        out[patch] = classify_with(node, raw, &means, &stds);
    }
}

/// Groups patches by the identity of the node they are visiting, keeping
/// ascending patch order inside each group. Group discovery order follows the
/// first visiting patch, so the result is deterministic.
fn group_actives<'a>(active: &[Option<&'a DecisionNode>]) -> Vec<(&'a DecisionNode, Vec<usize>)> {
    let mut groups: Vec<(&'a DecisionNode, Vec<usize>)> = Vec::new();
    let mut index: std::collections::HashMap<*const DecisionNode, usize> =
        std::collections::HashMap::new();
    for (patch, node) in active.iter().enumerate() {
        if let Some(node) = node {
            let slot = *index.entry(*node as *const DecisionNode).or_insert_with(|| {
                groups.push((node, Vec::new()));
                groups.len() - 1
            });
            groups[slot].1.push(patch);
        }
    }
    groups
}

fn walk_tree(
    forest: &Forest,
    tree_index: usize,
    prepared: &PreparedVolume,
    batch: bool,
) -> Accumulator {
    let tree = &forest.trees[tree_index];
    let subset = &tree.feature_subset;
    let n_clas = forest.n_clas as usize;
    let mut acc = Accumulator::new(prepared, n_clas);
    let root = tree.root.as_decision().expect("roots are decision nodes");

    let mut outcomes: Vec<Outcome<'_>> = Vec::new();
    for r in (1..=forest.n_lay).rev() {
        let layer = prepared.pyramid.layer(r);
        let n_p = layer.len();

        let coarser = if r == forest.n_lay { None } else { Some(prepared.pyramid.layer(r + 1)) };
        let cursors: Vec<Cursor<'_>> = if r == forest.n_lay {
            vec![Cursor::Active(root); n_p]
        } else {
            let coarser = coarser.expect("not the coarsest layer");
            (0..n_p)
                .map(|i| {
                    let parent =
                        routing_parent(coarser, layer.patches[i].origin, prepared.volume.dims);
                    match &outcomes[parent as usize] {
                        Outcome::Assigned { node, class } => {
                            match &node.children[(class - 1) as usize] {
                                Some(Node::Decision(d)) => Cursor::Active(d),
                                Some(Node::Leaf(_)) => {
                                    unreachable!("leaves only hang below finest-layer nodes")
                                }
                                None => Cursor::Stopped(Visit::of_decision(node)),
                            }
                        }
                        Outcome::Stop(v) => Cursor::Stopped(*v),
                    }
                })
                .collect()
        };

        if r >= 2 {
            let active: Vec<Option<&DecisionNode>> = cursors
                .iter()
                .map(|c| match c {
                    Cursor::Active(d) => Some(*d),
                    Cursor::Stopped(_) => None,
                })
                .collect();
            let mut assigned = vec![0u16; n_p];
            for (node, members) in group_actives(&active) {
                classify_group(node, &members, subset, prepared, r, batch, &mut assigned);
            }
            outcomes = cursors
                .iter()
                .enumerate()
                .map(|(i, cursor)| match cursor {
                    Cursor::Active(node) => {
                        acc.add_layer(r, i, n_clas, &Visit::of_decision(node));
                        Outcome::Assigned { node, class: assigned[i] }
                    }
                    Cursor::Stopped(v) => {
                        acc.add_layer(r, i, n_clas, v);
                        Outcome::Stop(*v)
                    }
                })
                .collect();
        } else {
            // Finest patch layer: walk each chain of layer-1 nodes until a
            // leaf or a pruned branch terminates it. The last decision node
            // visited is the layer-1 visit; the terminal supplies the voxels.
            let mut deepest: Vec<Option<Visit<'_>>> = vec![None; n_p];
            let mut voxel_visit: Vec<Option<Visit<'_>>> = vec![None; n_p];
            let mut active: Vec<Option<&DecisionNode>> = Vec::with_capacity(n_p);
            for (i, c) in cursors.iter().enumerate() {
                match c {
                    Cursor::Active(d) => active.push(Some(*d)),
                    Cursor::Stopped(v) => {
                        deepest[i] = Some(*v);
                        voxel_visit[i] = Some(*v);
                        active.push(None);
                    }
                }
            }
            loop {
                let groups = group_actives(&active);
                if groups.is_empty() {
                    break;
                }
                let mut assigned = vec![0u16; n_p];
                for (node, members) in &groups {
                    classify_group(node, members, subset, prepared, 1, batch, &mut assigned);
                }
                let mut next: Vec<Option<&DecisionNode>> = vec![None; n_p];
                for (node, members) in &groups {
                    for &patch in members {
                        deepest[patch] = Some(Visit::of_decision(node));
                        match &node.children[(assigned[patch] - 1) as usize] {
                            Some(Node::Decision(d)) => next[patch] = Some(d),
                            Some(leaf @ Node::Leaf(_)) => {
                                voxel_visit[patch] = Some(Visit::of(leaf));
                            }
                            None => voxel_visit[patch] = Some(Visit::of_decision(node)),
                        }
                    }
                }
                active = next;
            }
            for i in 0..n_p {
                let v = deepest[i].expect("every finest-layer patch visits a node");
                acc.add_layer(1, i, n_clas, &v);
                let vv = voxel_visit[i].expect("every finest-layer patch resolves voxels");
                acc.add_voxels(i, n_clas, &vv);
            }
            outcomes = Vec::new();
        }
    }
    acc
}

/// Iterates voxel predictions in deterministic order: ascending finest-layer
/// patch index, then x-fastest within the patch. Yields the linear voxel id,
/// its position, and the shared patch prediction.
pub fn voxel_predictions<'a>(
    prepared: &'a PreparedVolume,
    predictions: &'a VolumePredictions,
) -> impl Iterator<Item = (u32, (usize, usize, usize), &'a Prediction)> + 'a {
    let layer = prepared.pyramid.layer(1);
    let dims = prepared.volume.dims;
    layer.patches.iter().enumerate().flat_map(move |(i, patch)| {
        let pred = &predictions.voxel_patches[i];
        let origin = patch.origin;
        (0..27usize).map(move |k| {
            let (dx, dy, dz) = (k % 3, (k / 3) % 3, k / 9);
            let (x, y, z) = (origin.0 + dx, origin.1 + dy, origin.2 + dz);
            let id = (x + dims.0 * (y + dims.1 * z)) as u32;
            (id, (x, y, z), pred)
        })
    })
}
