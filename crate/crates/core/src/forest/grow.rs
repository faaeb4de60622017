//! Recursive hierarchical tree growth.
//!
//! A decision node at layer `r >= 2` classifies its received patches, then
//! decomposes each one into its eight octant children and sends all eight
//! down the branch of the parent's estimated class. Nodes at the finest
//! patch layer route the patches themselves until the depth budget or the
//! purity bound is met; their terminal branches become leaves that pool the
//! voxel label histograms of everything they received. The first node of the
//! finest layer never turns into a leaf, so every root-to-leaf path crosses
//! all resolution layers.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    DecisionNode, Hyperparams, LeafNode, Node, PreparedVolume, TreeModel, MSDA_MAX_ITERS,
    MSDA_TOL, THRESHOLD_GRID,
};
use crate::discriminant::{assign_class, betas_from_directions, optimize_thresholds};
use crate::error::{Error, Result};
use crate::features::{apply_normalizer, fit_normalizer, square_features};
use crate::msda::{solve_msda, MsdaProblem};
use crate::smote::{plan_balancing, smote_balance, SmoteSample};
use crate::stats::{gini_from_counts, ClassStats, SampleSet};

#[derive(Debug, Default)]
pub(super) struct GrowDiagnostics {
    pub pruned_branches: usize,
    pub nonconverged_solves: usize,
    pub smote_seconds: f64,
}

/// One training sample: a patch reference plus its label statistics. The
/// resolution layer is implied by the node holding it.
#[derive(Clone, Copy)]
struct GrowSample {
    vol: u32,
    patch: u32,
    label: u16,
    het: f64,
}

struct TreeCtx<'a> {
    prepared: &'a [PreparedVolume],
    subset: &'a [usize],
    hyper: &'a Hyperparams,
    n_clas: u16,
    n_weak: usize,
    /// 1-based tree index, the SMOTE interpolation weight numerator.
    tree_index: usize,
}

impl TreeCtx<'_> {
    fn selected_features(&self, r: usize, s: &GrowSample) -> Vec<f64> {
        let row = self.prepared[s.vol as usize].features[r - 1].row(s.patch as usize);
        self.subset.iter().map(|&i| row[i]).collect()
    }
}

/// Dot products of the class-minus-reference coefficient rows with the
/// selected feature values. Off-support coefficients cancel exactly, so the
/// sum over the selected indices equals the full projection difference.
pub(super) fn margins_from_betas(
    betas: &[Vec<f64>],
    selected: &[usize],
    values: &[f64],
) -> Vec<f64> {
    let k = betas.len();
    let mut out = vec![0.0f64; k - 1];
    for (m, row) in out.iter_mut().zip(&betas[1..]) {
        *m = selected
            .iter()
            .zip(values)
            .map(|(&h, &v)| (row[h] - betas[0][h]) * v)
            .sum();
    }
    out
}

pub(super) fn grow_tree(
    prepared: &[PreparedVolume],
    subset: &[usize],
    tree_index0: usize,
    hyper: &Hyperparams,
    n_clas: u16,
    n_weak: usize,
    seed: u64,
) -> Result<(TreeModel, GrowDiagnostics)> {
    let ctx = TreeCtx {
        prepared,
        subset,
        hyper,
        n_clas,
        n_weak,
        tree_index: tree_index0 + 1,
    };
    let mut samples = Vec::new();
    for (vi, p) in prepared.iter().enumerate() {
        let layer = p.pyramid.layer(hyper.n_lay);
        for (pi, patch) in layer.patches.iter().enumerate() {
            if patch.ref_label == 0 {
                return Err(Error::BadConfig(
                    "training patch without a reference label".into(),
                ));
            }
            samples.push(GrowSample {
                vol: vi as u32,
                patch: pi as u32,
                label: patch.ref_label,
                het: patch.heterogeneity,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::BadConfig("no coarsest-layer training samples".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diag = GrowDiagnostics::default();
    let root = build_node(
        &ctx,
        hyper.n_lay,
        1,
        hyper.n_lay == 1,
        samples,
        &mut rng,
        &mut diag,
    )?;
    Ok((
        TreeModel { index: tree_index0, feature_subset: subset.to_vec(), root },
        diag,
    ))
}

fn class_counts(samples: &[GrowSample], n_clas: u16) -> Vec<usize> {
    let mut counts = vec![0usize; n_clas as usize];
    for s in samples {
        counts[(s.label - 1) as usize] += 1;
    }
    counts
}

fn build_node(
    ctx: &TreeCtx<'_>,
    r: usize,
    depth: usize,
    is_first_r1: bool,
    samples: Vec<GrowSample>,
    rng: &mut ChaCha8Rng,
    diag: &mut GrowDiagnostics,
) -> Result<Node> {
    if r == 1 && !is_first_r1 {
        let counts = class_counts(&samples, ctx.n_clas);
        if depth > ctx.hyper.d_tree() || gini_from_counts(&counts) < ctx.hyper.g_tree {
            return Ok(make_leaf(ctx, &samples));
        }
    }

    let (mut node, assignments) = fit_decision_node(ctx, r, depth, &samples, rng, diag)?;

    let mut branches: Vec<Vec<GrowSample>> = vec![Vec::new(); ctx.n_clas as usize];
    if r >= 2 {
        for (s, &assigned) in samples.iter().zip(&assignments) {
            let vol = &ctx.prepared[s.vol as usize];
            let finer = vol.pyramid.layer(r - 1);
            for &child in &vol.pyramid.layer(r).patches[s.patch as usize].children {
                let cp = &finer.patches[child as usize];
                branches[(assigned - 1) as usize].push(GrowSample {
                    vol: s.vol,
                    patch: child,
                    label: cp.ref_label,
                    het: cp.heterogeneity,
                });
            }
        }
    } else {
        for (s, &assigned) in samples.iter().zip(&assignments) {
            branches[(assigned - 1) as usize].push(*s);
        }
    }

    let routable = &node.classes;
    for c in 1..=ctx.n_clas {
        let branch = std::mem::take(&mut branches[(c - 1) as usize]);
        if branch.is_empty() {
            if routable.contains(&c) {
                diag.pruned_branches += 1;
            }
            continue;
        }
        let child = if r >= 2 {
            build_node(ctx, r - 1, depth + 1, r - 1 == 1, branch, rng, diag)?
        } else {
            build_node(ctx, 1, depth + 1, false, branch, rng, diag)?
        };
        node.children[(c - 1) as usize] = Some(child);
    }
    Ok(Node::Decision(node))
}

/// Pools the voxel label histograms of the received finest-layer patches.
fn make_leaf(ctx: &TreeCtx<'_>, samples: &[GrowSample]) -> Node {
    let mut counts = vec![0u64; ctx.n_clas as usize];
    for s in samples {
        let hist = &ctx.prepared[s.vol as usize].pyramid.layer(1).patches[s.patch as usize]
            .label_histogram;
        for (acc, &c) in counts.iter_mut().zip(hist) {
            *acc += c as u64;
        }
    }
    let total: u64 = counts.iter().sum();
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let gini = 1.0 - probs.iter().map(|p| p * p).sum::<f64>();
    Node::Leaf(LeafNode {
        probs,
        accuracy: 1.0 - gini,
        difficulty: 0.0,
        n_voxels: total as usize,
    })
}

struct PassThrough {
    target: u16,
    accuracy: f64,
    difficulty: f64,
}

fn fit_decision_node(
    ctx: &TreeCtx<'_>,
    r: usize,
    depth: usize,
    samples: &[GrowSample],
    rng: &mut ChaCha8Rng,
    diag: &mut GrowDiagnostics,
) -> Result<(DecisionNode, Vec<u16>)> {
    let n = samples.len();
    let counts = class_counts(samples, ctx.n_clas);
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let present: Vec<u16> = (1..=ctx.n_clas).filter(|&c| counts[(c - 1) as usize] > 0).collect();
    let realistic_difficulty = samples.iter().map(|s| s.het).sum::<f64>() / n as f64;

    let pass = |p: PassThrough| -> (DecisionNode, Vec<u16>) {
        let node = DecisionNode {
            layer: r,
            depth,
            classes: vec![p.target],
            selected: Vec::new(),
            betas: Vec::new(),
            thresholds: Vec::new(),
            probs: probs.clone(),
            accuracy: p.accuracy,
            difficulty: p.difficulty,
            norm_means: Vec::new(),
            norm_stds: Vec::new(),
            n_samples: n,
            children: vec![None; ctx.n_clas as usize],
        };
        (node, vec![p.target; n])
    };

    if present.len() == 1 {
        return Ok(pass(PassThrough {
            target: present[0],
            accuracy: 1.0,
            difficulty: realistic_difficulty,
        }));
    }

    // Balance the node's samples over the tree's selected raw features.
    let smote_in: Vec<SmoteSample> = samples
        .iter()
        .map(|s| SmoteSample {
            features: ctx.selected_features(r, s),
            label: s.label,
            heterogeneity: s.het,
        })
        .collect();
    let plan = plan_balancing(
        &smote_in.iter().map(|s| s.label).collect::<Vec<_>>(),
        ctx.n_clas,
    )?;
    let t0 = std::time::Instant::now();
    let balanced = smote_balance(&smote_in, &plan, ctx.tree_index, ctx.n_weak, rng);
    diag.smote_seconds += t0.elapsed().as_secs_f64();

    let difficulty =
        balanced.iter().map(|b| b.heterogeneity).sum::<f64>() / balanced.len() as f64;
    let balanced_counts = {
        let mut c = vec![0usize; ctx.n_clas as usize];
        for b in &balanced {
            c[(b.label - 1) as usize] += 1;
        }
        c
    };
    let majority_fallback = PassThrough {
        target: plan.majority_class,
        accuracy: 1.0 - gini_from_counts(&balanced_counts),
        difficulty,
    };

    let squared: Vec<Vec<f64>> = balanced.iter().map(|b| square_features(&b.features)).collect();
    let n_feat = squared[0].len();
    let (norm_means, norm_stds) = fit_normalizer(&squared);
    let normalized: Vec<Vec<f64>> =
        squared.iter().map(|row| apply_normalizer(row, &norm_means, &norm_stds)).collect();

    let local_label = |global: u16| -> u16 {
        (present.iter().position(|&c| c == global).unwrap() + 1) as u16
    };
    let local_labels: Vec<u16> = balanced.iter().map(|b| local_label(b.label)).collect();

    let mut flat = Vec::with_capacity(normalized.len() * n_feat);
    for row in &normalized {
        flat.extend_from_slice(row);
    }
    let data = SampleSet::new(flat, local_labels.clone(), n_feat, present.len() as u16)?;
    let stats = match ClassStats::compute(&data) {
        Ok(s) => s,
        Err(Error::InsufficientSamples { .. }) => return Ok(pass(majority_fallback)),
        Err(e) => return Err(e),
    };

    let k = present.len();
    let delta = DMatrix::from_fn(k - 1, n_feat, |c, h| {
        stats.class_means[(c + 1, h)] - stats.class_means[(0, h)]
    });
    let lambda = ctx.hyper.lambda[r - 1];
    let problem = MsdaProblem::new(stats.within_cov.clone(), delta, lambda)?
        .with_termination(MSDA_MAX_ITERS, MSDA_TOL);
    let dirs = match solve_msda(&problem) {
        Ok(d) => d,
        Err(Error::ZeroDiagonal(_)) => return Ok(pass(majority_fallback)),
        Err(e) => return Err(e),
    };
    if !dirs.converged {
        diag.nonconverged_solves += 1;
    }
    let betas_mat = match betas_from_directions(&dirs, &stats) {
        Ok(b) => b,
        Err(Error::SingularCovariance(_)) => return Ok(pass(majority_fallback)),
        Err(e) => return Err(e),
    };
    let betas: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..n_feat).map(|h| betas_mat[(c, h)]).collect())
        .collect();
    let selected = dirs.active_features;

    let margin_rows: Vec<Vec<f64>> = normalized
        .iter()
        .map(|row| {
            let values: Vec<f64> = selected.iter().map(|&h| row[h]).collect();
            margins_from_betas(&betas, &selected, &values)
        })
        .collect();
    let margins = DMatrix::from_fn(margin_rows.len(), k - 1, |i, j| margin_rows[i][j]);
    let (thresholds, g_star) =
        optimize_thresholds(&margins, &data.labels(), k, THRESHOLD_GRID)?;

    let assignments: Vec<u16> = (0..n)
        .map(|i| present[assign_class(&margin_rows[i], &thresholds)])
        .collect();

    let node = DecisionNode {
        layer: r,
        depth,
        classes: present,
        selected,
        betas,
        thresholds,
        probs,
        accuracy: 1.0 - g_star,
        difficulty,
        norm_means,
        norm_stds,
        n_samples: n,
        children: vec![None; ctx.n_clas as usize],
    };
    Ok((node, assignments))
}
