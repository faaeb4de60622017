//! Acceptance suite: one test per shipping criterion, each printing a
//! PASS line (visible with `cargo test --test acceptance -- --nocapture`).

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quadforest::discriminant::{lda_fit, lda_scores};
use quadforest::features::{square_features, FeatureSchema};
use quadforest::forest::{
    predict, train_forest, voxel_predictions, DecisionNode, Forest, Hyperparams, LeafNode, Node,
    PreparedVolume, TreeModel, MODEL_FORMAT,
};
use quadforest::hyperopt::{precision_recall_macro, random_search, SearchGrids, STOP_WINDOW};
use quadforest::msda::{
    lasso_transform, msda_objective, ridge_transform, solve_msda, solve_msda_traced, MsdaProblem,
};
use quadforest::pyramid::{layer_overlap, layer_side, layer_stride, LabeledVolume, Pyramid};
use quadforest::smote::{plan_balancing, smote_balance, SampleOrigin, SmoteSample};
use quadforest::stats::{entropy, gini_impurity, gini_of_partition};
use quadforest::synth::{generate, Preset, SynthConfig};

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn msda_fixtures(count: usize) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    (0..count)
        .map(|_| {
            let n_feat = rng.gen_range(2..=30);
            let n_clas = rng.gen_range(2..=5);
            let sigma = random_spd(&mut rng, n_feat);
            let delta = DMatrix::from_fn(n_clas - 1, n_feat, |_, _| rng.gen_range(-2.0..2.0));
            (sigma, delta)
        })
        .collect()
}

#[test]
fn criterion_01_msda_matches_direct_solves() {
    let fixtures = msda_fixtures(25);
    let t0 = Instant::now();
    for (i, (sigma, delta)) in fixtures.iter().enumerate() {
        let problem = MsdaProblem::new(sigma.clone(), delta.clone(), 0.0).unwrap();
        let dirs = solve_msda(&problem).unwrap();
        let chol = sigma.clone().cholesky().unwrap();
        for c in 0..delta.nrows() {
            let direct = chol.solve(&delta.row(c).transpose());
            for h in 0..delta.ncols() {
                let denom = direct[h].abs().max(1.0);
                let err = (dirs.theta[(c + 1, h)] - direct[h]).abs() / denom;
                assert!(err < 1e-6, "fixture {i} class {c} feature {h}: {err}");
            }
        }
        assert!(dirs.theta.row(0).iter().all(|&v| v == 0.0));
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "took {elapsed:.3} s");
    println!("criterion 01 msda-direct-solve: PASS ({elapsed:.3} s for 25 fixtures)");
}

#[test]
fn criterion_02_msda_kkt_and_monotone_objective() {
    let fixtures = msda_fixtures(25);
    let mut kkt_checked = 0usize;
    for (sigma, delta) in &fixtures {
        for &lambda in &[0.01, 0.1, 0.5] {
            let problem = MsdaProblem::new(sigma.clone(), delta.clone(), lambda)
                .unwrap()
                .with_termination(20_000, 1e-10);
            let (dirs, trace) = solve_msda_traced(&problem).unwrap();
            assert!(dirs.converged);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "objective rose");
            }
            // KKT: with g = Sigma theta_c - delta_c per class, an active group
            // satisfies g + lambda * theta/||theta|| = 0 and an inactive group
            // satisfies ||g_group|| <= lambda.
            let k1 = delta.nrows();
            let n_feat = delta.ncols();
            let grad: Vec<nalgebra::DVector<f64>> = (0..k1)
                .map(|c| {
                    let theta_c = dirs.theta.row(c + 1).transpose();
                    problem.sigma() * theta_c - delta.row(c).transpose()
                })
                .collect();
            for h in 0..n_feat {
                let group: Vec<f64> = (0..k1).map(|c| dirs.theta[(c + 1, h)]).collect();
                let norm = group.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for c in 0..k1 {
                        let stat = grad[c][h] + lambda * group[c] / norm;
                        assert!(stat.abs() < 1e-5, "active stationarity {stat} at h={h}");
                    }
                } else {
                    let gnorm = (0..k1).map(|c| grad[c][h] * grad[c][h]).sum::<f64>().sqrt();
                    assert!(
                        gnorm <= lambda * (1.0 + 1e-5),
                        "inactive group violates bound: {gnorm} > {lambda}"
                    );
                }
                kkt_checked += 1;
            }
        }
    }
    println!("criterion 02 msda-kkt-monotone: PASS ({kkt_checked} groups checked)");
}

#[test]
fn criterion_03_shrinkage_limits_and_transforms() {
    let fixtures = msda_fixtures(10);
    for (sigma, delta) in &fixtures {
        let lambda_max = (0..delta.ncols())
            .map(|h| (0..delta.nrows()).map(|c| delta[(c, h)] * delta[(c, h)]).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max)
            * (1.0 + 1e-9);
        let problem = MsdaProblem::new(sigma.clone(), delta.clone(), lambda_max).unwrap();
        let dirs = solve_msda(&problem).unwrap();
        assert!(dirs.active_features.is_empty());
        assert!(dirs.theta.iter().all(|&v| v == 0.0));
        assert_eq!(msda_objective(&problem, &dirs.theta), 0.0);
    }
    assert_eq!(lasso_transform(&[0.5, -2.0], 1.0), vec![0.0, -1.0]);
    assert_eq!(lasso_transform(&[0.7, -0.2, 3.0], 0.0), vec![0.7, -0.2, 3.0]);
    assert_eq!(ridge_transform(&[2.0], &[1.0], 3.0), vec![0.5]);
    assert_eq!(ridge_transform(&[2.0], &[1.5], 1.5), vec![1.0]);
    assert_eq!(ridge_transform(&[4.0, -2.0], &[2.0, 0.5], 0.0), vec![4.0, -2.0]);
    println!("criterion 03 shrinkage-limits: PASS");
}

#[test]
fn criterion_04_impurity_exhaustive_oracles() {
    // Every label multiset of size 1..=8 over 3 classes.
    let mut multisets = 0usize;
    let mut partitions = 0usize;
    for n in 1..=8usize {
        for a in 0..=n {
            for b in 0..=(n - a) {
                let c = n - a - b;
                let mut labels = Vec::with_capacity(n);
                labels.extend(std::iter::repeat(1u16).take(a));
                labels.extend(std::iter::repeat(2u16).take(b));
                labels.extend(std::iter::repeat(3u16).take(c));

                // Counting oracle on exact integers.
                let sum_sq = (a * a + b * b + c * c) as f64;
                let g_oracle = ((n * n) as f64 - sum_sq) / (n * n) as f64;
                let g = gini_impurity(&labels, 3).unwrap();
                assert!((g - g_oracle).abs() <= 1e-15, "gini {g} vs {g_oracle}");

                let h_oracle: f64 = [a, b, c]
                    .iter()
                    .filter(|&&k| k > 0)
                    .map(|&k| {
                        let p = k as f64 / n as f64;
                        p * ((n as f64).log2() - (k as f64).log2())
                    })
                    .sum();
                let h = entropy(&labels, 3).unwrap();
                assert!((h - h_oracle).abs() <= 1e-12, "entropy {h} vs {h_oracle}");
                multisets += 1;

                // All assignments of the multiset into three subsets.
                for mask in 0..3usize.pow(n as u32) {
                    let mut subsets: Vec<Vec<u16>> = vec![Vec::new(); 3];
                    let mut m = mask;
                    for &l in &labels {
                        subsets[m % 3].push(l);
                        m /= 3;
                    }
                    let refs: Vec<&[u16]> = subsets.iter().map(|s| s.as_slice()).collect();
                    let got = gini_of_partition(&refs, 3).unwrap();
                    let oracle: f64 = subsets
                        .iter()
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            let counts = [
                                s.iter().filter(|&&l| l == 1).count(),
                                s.iter().filter(|&&l| l == 2).count(),
                                s.iter().filter(|&&l| l == 3).count(),
                            ];
                            let sn = s.len();
                            let ssq = (counts[0] * counts[0]
                                + counts[1] * counts[1]
                                + counts[2] * counts[2])
                                as f64;
                            let gs = ((sn * sn) as f64 - ssq) / (sn * sn) as f64;
                            sn as f64 / n as f64 * gs
                        })
                        .sum();
                    assert!((got - oracle).abs() <= 1e-15, "partition {got} vs {oracle}");
                    assert!(got <= g + 1e-15, "partition above whole-set impurity");
                    partitions += 1;
                }
            }
        }
    }
    println!(
        "criterion 04 impurity-oracles: PASS ({multisets} multisets, {partitions} partitions)"
    );
}

#[test]
fn criterion_05_pyramid_geometry() {
    let table1: Vec<usize> = vec![110592, 13824, 1728, 216, 27];
    for (r, &vox) in (1..=5).rev().zip(&table1) {
        assert_eq!(layer_side(r).pow(3), vox);
    }
    assert_eq!(layer_overlap(1), 0.0);
    assert_eq!(layer_overlap(3), 0.75);

    for dims in [(48usize, 48usize, 48usize), (96, 96, 96), (48, 96, 48)] {
        let n = dims.0 * dims.1 * dims.2;
        let vol = LabeledVolume::new(dims, vec![vec![0.0; n]], None).unwrap();
        let pyr = Pyramid::build(&vol, 5, 1).unwrap();
        for r in 1..=5 {
            let side = layer_side(r);
            let stride = layer_stride(r);
            assert_eq!(pyr.layer(r).side, side);
            assert_eq!(pyr.layer(r).stride, stride);

            // Independent brute-force origin enumeration.
            let mut count = 0usize;
            let mut origins = Vec::new();
            let mut z = 0;
            while z + side <= dims.2 {
                let mut y = 0;
                while y + side <= dims.1 {
                    let mut x = 0;
                    while x + side <= dims.0 {
                        origins.push((x, y, z));
                        count += 1;
                        x += stride;
                    }
                    y += stride;
                }
                z += stride;
            }
            assert_eq!(pyr.layer(r).len(), count, "dims {dims:?} layer {r}");
            let mut got: Vec<_> = pyr.layer(r).patches.iter().map(|p| p.origin).collect();
            origins.sort_unstable();
            got.sort_unstable();
            assert_eq!(got, origins);
        }

        // Octant children tile their parent exactly.
        for r in 2..=5 {
            let layer = pyr.layer(r);
            let finer = pyr.layer(r - 1);
            let half = layer.side / 2;
            for p in &layer.patches {
                assert_eq!(p.children.len(), 8);
                let mut seen = std::collections::BTreeSet::new();
                for &c in &p.children {
                    let o = finer.patches[c as usize].origin;
                    assert!(
                        (o.0 == p.origin.0 || o.0 == p.origin.0 + half)
                            && (o.1 == p.origin.1 || o.1 == p.origin.1 + half)
                            && (o.2 == p.origin.2 || o.2 == p.origin.2 + half)
                    );
                    seen.insert(o);
                }
                assert_eq!(seen.len(), 8);
            }
        }

        // Neighbor symmetry, exhaustive on the two coarsest layers (both
        // boundary-heavy and interior-heavy lattices).
        for r in [4, 5] {
            let layer = pyr.layer(r);
            for idx in 0..layer.len() as u32 {
                for nb in layer.neighbors(idx) {
                    assert!(layer.neighbors(nb).contains(&idx));
                }
            }
        }
    }
    println!("criterion 05 pyramid-geometry: PASS (48^3, 96^3, 48x96x48)");
}

#[test]
fn criterion_06_squared_features_realize_quadratic_boundary() {
    let t0 = Instant::now();
    let vol = generate(&SynthConfig {
        dims: (24, 24, 24),
        n_clas: 2,
        preset: Preset::Concentric,
        noise: 0.3,
        seed: 5,
    })
    .unwrap();
    let labels = vol.labels.as_ref().unwrap();
    let n = 24 * 24 * 24;

    // Voxel intensities as the two raw features; even indices train, odd test.
    let mut train_raw = Vec::new();
    let mut train_sq = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_raw = Vec::new();
    let mut test_labels = Vec::new();
    for i in 0..n {
        let f = [vol.channels[0][i] as f64, vol.channels[1][i] as f64];
        if i % 2 == 0 {
            train_raw.extend_from_slice(&f);
            train_sq.extend(square_features(&f));
            train_labels.push(labels[i]);
        } else {
            test_raw.push(f);
            test_labels.push(labels[i]);
        }
    }
    let raw_set =
        quadforest::stats::SampleSet::new(train_raw, train_labels.clone(), 2, 2).unwrap();
    let sq_set = quadforest::stats::SampleSet::new(train_sq, train_labels, 5, 2).unwrap();
    let raw_lda = lda_fit(&raw_set).unwrap();
    let sq_lda = lda_fit(&sq_set).unwrap();

    let accuracy = |use_squared: bool| -> f64 {
        let mut correct = 0usize;
        for (f, &l) in test_raw.iter().zip(&test_labels) {
            let scores = if use_squared {
                lda_scores(&square_features(f), &sq_lda).unwrap()
            } else {
                lda_scores(f, &raw_lda).unwrap()
            };
            let pred = if scores[0] >= scores[1] { 1 } else { 2 };
            correct += usize::from(pred == l);
        }
        correct as f64 / test_labels.len() as f64
    };
    let raw_acc = accuracy(false);
    let sq_acc = accuracy(true);
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(raw_acc <= 0.75, "raw-feature LDA too strong: {raw_acc}");
    assert!(sq_acc >= 0.95, "squared-feature LDA too weak: {sq_acc}");
    assert!(elapsed < 10.0, "took {elapsed:.2} s");
    println!(
        "criterion 06 quadratic-boundary: PASS (raw {raw_acc:.3}, squared {sq_acc:.3}, {elapsed:.2} s)"
    );
}

#[test]
fn criterion_07_smote_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50FE);
    let mut samples = Vec::new();
    for _ in 0..80 {
        samples.push(SmoteSample {
            features: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            label: 1,
            heterogeneity: rng.gen_range(0.0..2.0),
        });
    }
    for _ in 0..23 {
        samples.push(SmoteSample {
            features: (0..5).map(|_| rng.gen_range(4.0..6.0)).collect(),
            label: 2,
            heterogeneity: 1.0,
        });
    }
    for _ in 0..11 {
        samples.push(SmoteSample {
            features: (0..5).map(|_| rng.gen_range(-6.0..-4.0)).collect(),
            label: 3,
            heterogeneity: 0.5,
        });
    }
    let labels: Vec<u16> = samples.iter().map(|s| s.label).collect();
    let plan = plan_balancing(&labels, 3).unwrap();
    let tree_index = 2;
    let n_weak = 5;
    let balanced =
        smote_balance(&samples, &plan, tree_index, n_weak, &mut ChaCha8Rng::seed_from_u64(9));

    let mut counts = [0usize; 3];
    for b in &balanced {
        counts[(b.label - 1) as usize] += 1;
    }
    let max = *counts.iter().max().unwrap();
    let min = *counts.iter().min().unwrap();
    assert!(max - min <= 1, "counts {counts:?}");

    let m = tree_index as f64 / (n_weak as f64 + 1.0);
    let mut synthetic = 0usize;
    for b in &balanced {
        if let SampleOrigin::Synthetic { base, neighbor } = b.origin {
            synthetic += 1;
            for ((&v, &a), &nb) in
                b.features.iter().zip(&samples[base].features).zip(&samples[neighbor].features)
            {
                let expect = (m * a + (1.0 - m) * nb).clamp(a.min(nb), a.max(nb));
                assert_eq!(v, expect, "not the declared convex combination");
                assert!(v >= a.min(nb) && v <= a.max(nb));
            }
        }
    }
    assert_eq!(synthetic, (80 - 23) + (80 - 11));

    let again =
        smote_balance(&samples, &plan, tree_index, n_weak, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(balanced.len(), again.len());
    for (x, y) in balanced.iter().zip(&again) {
        assert_eq!(x.features, y.features);
        assert_eq!(x.origin, y.origin);
    }
    println!("criterion 07 smote-balance: PASS ({synthetic} synthetics verified)");
}

#[test]
fn criterion_08_end_to_end_blocks() {
    let t0 = Instant::now();
    let n_clas = 4u16;
    let schema = FeatureSchema::new(2);
    let make = |seed: u64| {
        generate(&SynthConfig {
            dims: (48, 48, 48),
            n_clas,
            preset: Preset::Blocks,
            noise: 0.3,
            seed,
        })
        .unwrap()
    };
    let train: Vec<PreparedVolume> = (1..=6)
        .map(|s| PreparedVolume::prepare(make(s), 5, n_clas, &schema).unwrap())
        .collect();
    let held_out: Vec<PreparedVolume> = (7..=8)
        .map(|s| PreparedVolume::prepare(make(s), 5, n_clas, &schema).unwrap())
        .collect();

    let hyper = Hyperparams {
        n_lay: 5,
        d1: 2,
        g_tree: 1e-3,
        lambda: vec![0.18, 0.27, 0.52, 0.38, 0.15],
        seed: 2024,
    };
    let (forest, _) = train_forest(&train, &hyper, n_clas, &schema).unwrap();

    let mut predicted = Vec::new();
    let mut reference = Vec::new();
    for vol in &held_out {
        let preds = predict(&forest, vol, false).unwrap();
        let labels = vol.volume.labels.as_ref().unwrap();
        for (id, _, p) in voxel_predictions(vol, &preds) {
            predicted.push(p.label);
            reference.push(labels[id as usize]);
        }
    }
    let (mp, mr) = precision_recall_macro(&predicted, &reference, &[1, 2, 3, 4]).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(mp >= 0.80, "macro precision {mp:.4}");
    assert!(mr >= 0.80, "macro recall {mr:.4}");
    assert!(elapsed < 300.0, "took {elapsed:.1} s");
    println!("criterion 08 end-to-end: PASS (precision {mp:.4}, recall {mr:.4}, {elapsed:.1} s)");
}

#[test]
fn criterion_09_aggregation_algebra() {
    // Hand-built single-tree forest with a one-hot pass-through root.
    let schema = FeatureSchema::new(2);
    let root = Node::Decision(DecisionNode {
        layer: 1,
        depth: 1,
        classes: vec![1],
        selected: Vec::new(),
        betas: Vec::new(),
        thresholds: Vec::new(),
        probs: vec![1.0, 0.0],
        accuracy: 1.0,
        difficulty: 0.0,
        norm_means: Vec::new(),
        norm_stds: Vec::new(),
        n_samples: 1,
        children: vec![
            Some(Node::Leaf(LeafNode {
                probs: vec![1.0, 0.0],
                accuracy: 1.0,
                difficulty: 0.0,
                n_voxels: 27,
            })),
            None,
        ],
    });
    let forest = Forest {
        format: MODEL_FORMAT.to_string(),
        n_clas: 2,
        n_lay: 1,
        n_chan: 2,
        schema_id: schema.id.clone(),
        feature_names: schema.names.clone(),
        n_tot: schema.n_tot(),
        n_sel: 5,
        n_weak: 1,
        hyperparams: Hyperparams { n_lay: 1, d1: 1, g_tree: 1e-3, lambda: vec![0.5], seed: 0 },
        pruned_branches: 0,
        nonconverged_solves: 0,
        trees: vec![TreeModel { index: 0, feature_subset: vec![0, 1, 2, 3, 4], root }],
    };
    let vol = LabeledVolume::new((3, 3, 3), vec![vec![0.5; 27], vec![1.5; 27]], None).unwrap();
    let prepared = PreparedVolume::prepare(vol, 1, 2, &schema).unwrap();
    let preds = predict(&forest, &prepared, false).unwrap();

    let p = &preds.layer(1)[0];
    let expect = [0.7311, 0.2689];
    assert!((p.probs[0] - expect[0]).abs() < 1e-4, "got {:?}", p.probs);
    assert!((p.probs[1] - expect[1]).abs() < 1e-4);
    assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(p.label, 1);
    // All visited difficulties are zero, so reliability is exactly one.
    assert_eq!(p.reliability, 1.0);
    assert_eq!(preds.voxel_patches[0].reliability, 1.0);

    // A trained fixture keeps every probability vector normalized.
    let blocks = generate(&SynthConfig {
        dims: (24, 24, 24),
        n_clas: 3,
        preset: Preset::Blocks,
        noise: 0.2,
        seed: 31,
    })
    .unwrap();
    let train = vec![PreparedVolume::prepare(blocks, 3, 3, &schema).unwrap()];
    let hyper = Hyperparams { n_lay: 3, d1: 1, g_tree: 1e-2, lambda: vec![0.1; 3], seed: 4 };
    let (trained, _) = train_forest(&train, &hyper, 3, &schema).unwrap();
    let preds = predict(&trained, &train[0], false).unwrap();
    for r in 1..=3 {
        for p in preds.layer(r) {
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    for p in &preds.voxel_patches {
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    println!("criterion 09 aggregation-algebra: PASS");
}

#[test]
fn criterion_10_determinism_and_persistence() {
    let schema = FeatureSchema::new(2);
    let make = |seed: u64| {
        generate(&SynthConfig {
            dims: (24, 24, 24),
            n_clas: 3,
            preset: Preset::Blocks,
            noise: 0.2,
            seed,
        })
        .unwrap()
    };
    let train: Vec<PreparedVolume> = (1..=2)
        .map(|s| PreparedVolume::prepare(make(s), 3, 3, &schema).unwrap())
        .collect();
    let hyper = Hyperparams { n_lay: 3, d1: 2, g_tree: 1e-3, lambda: vec![0.1; 3], seed: 77 };

    let dir = tempfile::tempdir().unwrap();
    let (forest_a, _) = train_forest(&train, &hyper, 3, &schema).unwrap();
    let (forest_b, _) = train_forest(&train, &hyper, 3, &schema).unwrap();
    let path_a = dir.path().join("a.json");
    let path_b = dir.path().join("b.json");
    quadforest::io::save_model(&path_a, &forest_a).unwrap();
    quadforest::io::save_model(&path_b, &forest_b).unwrap();
    let bytes_a = std::fs::read(&path_a).unwrap();
    let bytes_b = std::fs::read(&path_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed must give byte-identical model files");

    let loaded = quadforest::io::load_model(&path_a).unwrap();
    let held_out = PreparedVolume::prepare(make(5), 3, 3, &schema).unwrap();
    let x = predict(&forest_a, &held_out, false).unwrap();
    let y = predict(&loaded, &held_out, false).unwrap();
    for r in 1..=3 {
        for (a, b) in x.layer(r).iter().zip(y.layer(r)) {
            assert_eq!(a.probs, b.probs);
            assert_eq!(a.label, b.label);
            assert_eq!(a.reliability, b.reliability);
        }
    }
    for (a, b) in x.voxel_patches.iter().zip(&y.voxel_patches) {
        assert_eq!(a.probs, b.probs);
    }
    println!("criterion 10 determinism-persistence: PASS");
}

#[test]
fn criterion_11_stopping_rule_reference() {
    // Independent restatement of the rule used by the search.
    fn reference_trials(scores: &[f64], window: usize) -> usize {
        for t in 1..scores.len() {
            let from = t.saturating_sub(window);
            let prev_max = scores[from..t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if scores[t] <= prev_max {
                return t + 1;
            }
        }
        scores.len()
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5707);
    let mut sequences: Vec<Vec<f64>> = vec![
        (0..25).map(|i| i as f64 / 25.0).collect(),
        vec![0.9, 0.5, 0.8, 0.95],
    ];
    for _ in 0..8 {
        let n = rng.gen_range(2..40);
        sequences.push((0..n).map(|_| rng.gen_range(0.0..1.0)).collect());
    }

    let grids = SearchGrids::default();
    for (i, scores) in sequences.iter().enumerate() {
        let mut executed = 0usize;
        let result = random_search(&grids, 3, 11, scores.len(), STOP_WINDOW, |_, idx| {
            executed += 1;
            let s = scores[idx - 1];
            Ok((idx, s, s))
        })
        .unwrap();
        let expect = reference_trials(scores, STOP_WINDOW);
        assert_eq!(executed, expect, "sequence {i}: ran {executed}, reference {expect}");
        // The returned artifact is the best-scoring trial of the executed prefix.
        let best_idx = scores[..executed]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap()
            .0
            + 1;
        assert_eq!(result.0, best_idx, "sequence {i} best artifact");
    }
    println!("criterion 11 stopping-rule: PASS (10 scripted sequences)");
}
