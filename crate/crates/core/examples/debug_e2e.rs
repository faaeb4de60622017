use quadforest::features::FeatureSchema;
use quadforest::forest::{predict, train_forest, voxel_predictions, Hyperparams, Node, PreparedVolume};
use quadforest::hyperopt::{confusion_matrix, precision_recall_macro};
use quadforest::synth::{generate, Preset, SynthConfig};

fn main() {
    let n_clas = 4u16;
    let schema = FeatureSchema::new(2);
    let make = |seed: u64| {
        generate(&SynthConfig { dims: (48, 48, 48), n_clas, preset: Preset::Blocks, noise: 0.3, seed }).unwrap()
    };
    let train: Vec<PreparedVolume> =
        (1..=3).map(|s| PreparedVolume::prepare(make(s), 5, n_clas, &schema).unwrap()).collect();
    let held = PreparedVolume::prepare(make(7), 5, n_clas, &schema).unwrap();

    let lambda = std::env::args().nth(1).map(|v| v.parse::<f64>().unwrap());
    let hyper = Hyperparams {
        n_lay: 5,
        d1: 2,
        g_tree: 1e-3,
        lambda: lambda.map_or(vec![0.18, 0.27, 0.52, 0.38, 0.15], |l| vec![l; 5]),
        seed: 2024,
    };
    let t0 = std::time::Instant::now();
    let (forest, diag) = train_forest(&train, &hyper, n_clas, &schema).unwrap();
    println!("trained in {:.1}s pruned={} nonconv={}", t0.elapsed().as_secs_f64(), forest.pruned_branches, forest.nonconverged_solves);
    println!("smote={:.2}s trees={:.2}s", diag.smote_seconds, diag.trees_seconds);

    // count nodes per layer and pass-throughs
    for (ti, tree) in forest.trees.iter().enumerate() {
        let mut per_layer = vec![(0usize, 0usize); 6];
        let mut leaves = 0usize;
        let mut stack = vec![&tree.root];
        let mut selected_total = 0usize;
        let mut disc_nodes = 0usize;
        while let Some(n) = stack.pop() {
            match n {
                Node::Decision(d) => {
                    per_layer[d.layer].0 += 1;
                    if d.betas.is_empty() { per_layer[d.layer].1 += 1; } else { selected_total += d.selected.len(); disc_nodes += 1; }
                    stack.extend(d.children.iter().flatten());
                }
                Node::Leaf(_) => leaves += 1,
            }
        }
        println!("tree {ti}: nodes/passthrough per layer {:?} leaves={leaves} mean_selected={:.1}",
            &per_layer[1..], selected_total as f64 / disc_nodes.max(1) as f64);
    }

    let preds = predict(&forest, &held, false).unwrap();
    let labels = held.volume.labels.as_ref().unwrap();
    for r in (1..=5).rev() {
        let layer = held.pyramid.layer(r);
        let predicted: Vec<u16> = preds.layer(r).iter().map(|p| p.label).collect();
        let reference: Vec<u16> = layer.patches.iter().map(|p| p.ref_label).collect();
        let (mp, mr) = precision_recall_macro(&predicted, &reference, &[1, 2, 3, 4]).unwrap();
        println!("layer {r}: n={} macro_p={mp:.3} macro_r={mr:.3}", predicted.len());
    }
    let mut predicted = Vec::new();
    let mut reference = Vec::new();
    for (id, _, p) in voxel_predictions(&held, &preds) {
        predicted.push(p.label);
        reference.push(labels[id as usize]);
    }
    let (mp, mr) = precision_recall_macro(&predicted, &reference, &[1, 2, 3, 4]).unwrap();
    println!("voxels: macro_p={mp:.3} macro_r={mr:.3}");
    for row in confusion_matrix(&predicted, &reference, 4) {
        println!("  {row:?}");
    }
}
