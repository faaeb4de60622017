//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use quadforest::features::{extract_all_features, squared_feature_name, FeatureSchema};
use quadforest::forest::{
    predict as run_forest, train_forest, voxel_predictions, ConsolidatedFeatures, Forest,
    Hyperparams, Node, PreparedVolume, TrainDiagnostics,
};
use quadforest::hyperopt::{
    confusion_matrix, precision_recall_macro, random_search, SearchGrids, STOP_WINDOW,
};
use quadforest::io::{
    self, graph_file_name, load_manifest, parse_prediction_line, prediction_file_name, Manifest,
    ManifestEntry, Split,
};
use quadforest::pyramid::Pyramid;
use quadforest::synth::{generate, Preset, SynthConfig};

use super::{EvalArgs, InspectArgs, PredictArgs, SynthArgs, TrainArgs};

/// Prints to stdout, treating a closed pipe as a normal early exit.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
    }
}

fn parse_split(name: &str) -> Result<Option<Split>> {
    match name {
        "train" => Ok(Some(Split::Train)),
        "val" => Ok(Some(Split::Val)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => bail!("unknown split {other:?} (expected train|val|test|all)"),
    }
}

fn split_entries(manifest: &Manifest, selector: Option<Split>) -> Vec<(PathBuf, ManifestEntry)> {
    let mut out = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        if selector.is_none() || selector == Some(split) {
            for (path, entry) in manifest.entries(split) {
                out.push((path, entry.clone()));
            }
        }
    }
    out
}

fn volume_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "volume".to_string(), |s| s.to_string_lossy().into_owned())
}

pub(super) fn synth(args: SynthArgs) -> Result<()> {
    let dims: Vec<usize> = args
        .dims
        .split(',')
        .map(|v| v.trim().parse::<usize>().context("bad --dims"))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        bail!("--dims wants three comma-separated values");
    }
    let preset = match args.preset.as_str() {
        "blocks" => Preset::Blocks,
        "concentric" => Preset::Concentric,
        other => bail!("unknown preset {other:?} (expected blocks|concentric)"),
    };

    let mut plan: Vec<(Split, usize)> = Vec::new();
    for part in args.splits.split(',') {
        let (name, count) = part
            .split_once(':')
            .ok_or_else(|| anyhow!("bad --splits entry {part:?}, expected name:count"))?;
        let split = parse_split(name.trim())?
            .ok_or_else(|| anyhow!("--splits cannot use \"all\""))?;
        plan.push((split, count.trim().parse().context("bad split count")?));
    }

    std::fs::create_dir_all(&args.out)?;
    let mut entries = Vec::new();
    let mut index = 0usize;
    for (split, count) in plan {
        for _ in 0..count {
            let config = SynthConfig {
                dims: (dims[0], dims[1], dims[2]),
                n_clas: args.classes,
                preset,
                noise: args.noise,
                seed: args.seed.wrapping_add(index as u64),
            };
            let volume = generate(&config)?;
            let name = format!("vol_{index:03}.mrv");
            io::write_volume(&args.out.join(&name), &volume)?;
            println!("wrote {} ({split:?}, seed {})", args.out.join(&name).display(), config.seed);
            entries.push(ManifestEntry { path: name, split });
            index += 1;
        }
    }

    if let Some(manifest_path) = args.manifest_out {
        let manifest = Manifest {
            n_clas: args.classes,
            class_names: (1..=args.classes).map(|c| format!("class{c}")).collect(),
            background_classes: Vec::new(),
            volumes: entries,
            base_dir: PathBuf::new(),
        };
        // Manifest paths are relative to the manifest file itself.
        let manifest = relocate_manifest(manifest, &manifest_path, &args.out)?;
        io::save_manifest(&manifest_path, &manifest)?;
        println!("wrote {}", manifest_path.display());
    }
    Ok(())
}

fn relocate_manifest(mut manifest: Manifest, manifest_path: &Path, vol_dir: &Path) -> Result<Manifest> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    for entry in &mut manifest.volumes {
        let absolute = vol_dir.join(&entry.path);
        let relative = pathdiff(&absolute, base)
            .unwrap_or_else(|| absolute.to_string_lossy().into_owned());
        entry.path = relative;
    }
    Ok(manifest)
}

/// Minimal relative-path computation for sibling directories.
fn pathdiff(target: &Path, base: &Path) -> Option<String> {
    let target = target.canonicalize().unwrap_or_else(|_| target.to_path_buf());
    let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
    target
        .strip_prefix(&base)
        .ok()
        .map(|p| p.to_string_lossy().into_owned())
        .or_else(|| Some(target.to_string_lossy().into_owned()))
}

struct PreparedSet {
    prepared: Vec<PreparedVolume>,
    pyramid_seconds: f64,
    feature_seconds: f64,
}

fn prepare_volumes(
    paths: &[(PathBuf, ManifestEntry)],
    n_lay: usize,
    n_clas: u16,
    schema: &FeatureSchema,
) -> Result<PreparedSet> {
    let mut prepared = Vec::with_capacity(paths.len());
    let mut pyramid_seconds = 0.0;
    let mut feature_seconds = 0.0;
    for (path, _) in paths {
        let volume = io::read_volume(path).with_context(|| format!("reading {}", path.display()))?;
        let t0 = Instant::now();
        let pyramid = Pyramid::build(&volume, n_lay, n_clas)?;
        pyramid_seconds += t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let features = extract_all_features(&volume, &pyramid, schema)?;
        feature_seconds += t1.elapsed().as_secs_f64();
        prepared.push(PreparedVolume { volume, pyramid, features });
    }
    Ok(PreparedSet { prepared, pyramid_seconds, feature_seconds })
}

pub(super) fn train(args: TrainArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let train_paths = split_entries(&manifest, Some(Split::Train));
    if train_paths.is_empty() {
        bail!("manifest has no train volumes");
    }
    let probe = io::read_volume(&train_paths[0].0)?;
    let schema = FeatureSchema::new(probe.n_chan());
    drop(probe);

    let train_set = prepare_volumes(&train_paths, args.layers, manifest.n_clas, &schema)?;

    // Flag degenerate inputs rather than refusing them.
    let mut seen = std::collections::BTreeSet::new();
    for p in &train_set.prepared {
        if let Some(labels) = &p.volume.labels {
            seen.extend(labels.iter().copied().filter(|&l| l > 0));
        }
    }
    let degenerate = seen.len() < 2;

    let (forest, diag, trial_count) = if let Some(grids_path) = &args.grids {
        let bytes = std::fs::read(grids_path)?;
        let grids: SearchGrids = serde_json::from_slice(&bytes).context("parsing --grids")?;
        let val_paths = split_entries(&manifest, Some(Split::Val));
        if val_paths.is_empty() {
            bail!("random search needs a val split in the manifest");
        }
        let val_set = prepare_volumes(&val_paths, args.layers, manifest.n_clas, &schema)?;
        let foreground = manifest.foreground_classes();
        let mut diag_acc = TrainDiagnostics::default();
        let (forest, log) = random_search(
            &grids,
            args.layers,
            args.seed,
            args.max_trials,
            STOP_WINDOW,
            |hyper, trial| {
                let (forest, d) =
                    train_forest(&train_set.prepared, hyper, manifest.n_clas, &schema)?;
                diag_acc.smote_seconds += d.smote_seconds;
                diag_acc.trees_seconds += d.trees_seconds;
                let mut predicted = Vec::new();
                let mut reference = Vec::new();
                for vol in &val_set.prepared {
                    let preds = run_forest(&forest, vol, false)?;
                    let labels = vol.volume.labels.as_ref().expect("val volumes are labeled");
                    for (id, _, p) in voxel_predictions(vol, &preds) {
                        predicted.push(p.label);
                        reference.push(labels[id as usize]);
                    }
                }
                let (mp, mr) = precision_recall_macro(&predicted, &reference, &foreground)?;
                println!("trial {trial}: macro_p={mp:.4} macro_r={mr:.4}");
                Ok((forest, mp, mr))
            },
        )?;
        if let Some(log_path) = &args.trial_log {
            io::write_trial_log(log_path, &log)?;
            println!("wrote {}", log_path.display());
        }
        let n = log.len();
        (forest, diag_acc, n)
    } else {
        let hyper = match &args.hyper {
            Some(path) => {
                let bytes = std::fs::read(path)?;
                let h: Hyperparams = serde_json::from_slice(&bytes).context("parsing --hyper")?;
                if h.n_lay != args.layers {
                    bail!("--hyper n_lay={} conflicts with --layers={}", h.n_lay, args.layers);
                }
                h
            }
            None => Hyperparams { seed: args.seed, ..Hyperparams::defaults(args.layers, args.seed) },
        };
        let (forest, diag) = train_forest(&train_set.prepared, &hyper, manifest.n_clas, &schema)?;
        (forest, diag, 1)
    };

    io::save_model(&args.out, &forest)?;

    let mut report = String::new();
    writeln!(report, "# quadforest training report")?;
    writeln!(
        report,
        "volumes: train={} n_clas={} n_chan={} schema={}",
        train_paths.len(),
        manifest.n_clas,
        forest.n_chan,
        forest.schema_id
    )?;
    writeln!(
        report,
        "features: n_tot={} n_sel={} n_weak={} trials={}",
        forest.n_tot, forest.n_sel, forest.n_weak, trial_count
    )?;
    writeln!(
        report,
        "hyperparams: d1={} g_tree={} lambda={:?} seed={} (d_tree={})",
        forest.hyperparams.d1,
        forest.hyperparams.g_tree,
        forest.hyperparams.lambda,
        forest.hyperparams.seed,
        forest.hyperparams.d_tree()
    )?;
    writeln!(
        report,
        "phase_seconds: pyramid={:.3} features={:.3} smote={:.3} trees_optimization={:.3}",
        train_set.pyramid_seconds, train_set.feature_seconds, diag.smote_seconds, diag.trees_seconds
    )?;
    writeln!(
        report,
        "pruned_branches={} nonconverged_solves={}",
        forest.pruned_branches, forest.nonconverged_solves
    )?;
    if degenerate {
        writeln!(report, "warning: degenerate training data (single class)")?;
    }
    emit(&report);
    if let Some(path) = &args.report {
        io::atomic_write(path, report.as_bytes())?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

pub(super) fn predict(args: PredictArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let forest = io::load_model(&args.model)?;
    let schema = forest.schema();
    if schema.id != FeatureSchema::new(schema.n_chan).id {
        bail!("model schema {} is not produced by this build", schema.id);
    }
    let selector = parse_split(&args.split)?;
    let entries = split_entries(&manifest, selector);
    if entries.is_empty() {
        bail!("no volumes in split {:?}", args.split);
    }
    std::fs::create_dir_all(&args.out)?;
    let consolidated = ConsolidatedFeatures::from_forest(&forest);

    for (path, _) in &entries {
        let volume = io::read_volume(path)?;
        let pyramid = Pyramid::build(&volume, forest.n_lay, manifest.n_clas)?;
        let features = extract_all_features(&volume, &pyramid, &schema)?;
        let prepared = PreparedVolume { volume, pyramid, features };
        let predictions = run_forest(&forest, &prepared, args.batch_normalize)?;

        let stem = volume_stem(path);
        let pred_path = args.out.join(prediction_file_name(&stem));
        io::write_predictions(&pred_path, &stem, &prepared, &predictions)?;

        let records: Vec<_> = (0..=forest.n_lay)
            .rev()
            .map(|r| {
                quadforest::forest::graph_records_for_layer(&prepared, &predictions, &consolidated, r)
            })
            .collect();
        let graph_path = args.out.join(graph_file_name(&stem));
        io::write_graph_records(&graph_path, &stem, &prepared, &predictions, &consolidated, &records)?;
        println!("wrote {} and {}", pred_path.display(), graph_path.display());
    }
    Ok(())
}

pub(super) fn eval(args: EvalArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let selector = parse_split(&args.split)?;
    let entries = split_entries(&manifest, selector);
    if entries.is_empty() {
        bail!("no volumes in split {:?}", args.split);
    }
    let foreground = manifest.foreground_classes();
    let k = manifest.n_clas;

    // (layer -> predicted/reference label pairs), aggregated over volumes.
    let mut pairs: Vec<(Vec<u16>, Vec<u16>)> = Vec::new();
    let mut n_lay_seen = None;

    for (path, _) in &entries {
        let stem = volume_stem(path);
        let pred_path = args.predictions.join(prediction_file_name(&stem));
        let text = std::fs::read_to_string(&pred_path)
            .with_context(|| format!("reading {}", pred_path.display()))?;
        let volume = io::read_volume(path)?;
        let labels = volume
            .labels
            .clone()
            .ok_or_else(|| anyhow!("{} carries no labels to evaluate against", path.display()))?;

        let mut n_lay = 0usize;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                for field in rest.split_whitespace() {
                    if let Some(v) = field.strip_prefix("n_lay=") {
                        n_lay = v.parse().context("bad n_lay header")?;
                    }
                }
            }
        }
        if n_lay == 0 {
            bail!("{} has no n_lay header", pred_path.display());
        }
        if *n_lay_seen.get_or_insert(n_lay) != n_lay {
            bail!("prediction files disagree on layer count");
        }
        if pairs.is_empty() {
            pairs = vec![(Vec::new(), Vec::new()); n_lay + 1];
        }
        let pyramid = Pyramid::build(&volume, n_lay, k)?;

        let mut counts = vec![0usize; n_lay + 1];
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
            let parsed = parse_prediction_line(line).map_err(|e| anyhow!("{e}"))?;
            let reference = if parsed.layer == 0 {
                *labels
                    .get(parsed.id as usize)
                    .ok_or_else(|| anyhow!("voxel id {} out of range", parsed.id))?
            } else {
                let layer = pyramid.layer(parsed.layer);
                layer
                    .patches
                    .get(parsed.id as usize)
                    .ok_or_else(|| anyhow!("patch id {} out of range", parsed.id))?
                    .ref_label
            };
            pairs[parsed.layer].0.push(parsed.label);
            pairs[parsed.layer].1.push(reference);
            counts[parsed.layer] += 1;
        }
        for r in 1..=n_lay {
            if counts[r] != pyramid.layer(r).len() {
                bail!(
                    "{}: layer {r} has {} predictions for {} patches",
                    pred_path.display(),
                    counts[r],
                    pyramid.layer(r).len()
                );
            }
        }
        if counts[0] != pyramid.layer(1).len() * 27 {
            bail!("{}: voxel layer is incomplete", pred_path.display());
        }
    }

    let n_lay = n_lay_seen.unwrap();
    let mut report = String::new();
    writeln!(
        report,
        "# quadforest evaluation split={} volumes={} foreground={:?}",
        args.split,
        entries.len(),
        foreground
    )?;
    for r in (0..=n_lay).rev() {
        let (pred, refs) = &pairs[r];
        let (mp, mr) = precision_recall_macro(pred, refs, &foreground).map_err(|e| anyhow!("{e}"))?;
        writeln!(report, "layer {r}: n={} macro_precision={mp:.4} macro_recall={mr:.4}", pred.len())?;
        for &c in &foreground {
            let (p, rr) = precision_recall_macro(pred, refs, &[c]).map_err(|e| anyhow!("{e}"))?;
            writeln!(report, "  {}: precision={p:.4} recall={rr:.4}", manifest.class_name(c))?;
        }
        let confusion = confusion_matrix(pred, refs, k);
        writeln!(report, "  confusion (rows=reference, cols=predicted):")?;
        for (ri, row) in confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(report, "    {}: {}", manifest.class_name((ri + 1) as u16), cells.join(" "))?;
        }
    }
    emit(&report);
    if let Some(path) = &args.out {
        io::atomic_write(path, report.as_bytes())?;
    }
    Ok(())
}

pub(super) fn inspect(args: InspectArgs) -> Result<()> {
    let forest = io::load_model(&args.model)?;
    let schema = forest.schema();
    let mut out = String::new();
    writeln!(
        out,
        "model {}: n_clas={} n_lay={} n_chan={} schema={} n_tot={} n_sel={} n_weak={}",
        forest.format,
        forest.n_clas,
        forest.n_lay,
        forest.n_chan,
        forest.schema_id,
        forest.n_tot,
        forest.n_sel,
        forest.n_weak
    )?;
    writeln!(
        out,
        "hyperparams: d1={} g_tree={} lambda={:?} seed={} (d_tree={})",
        forest.hyperparams.d1,
        forest.hyperparams.g_tree,
        forest.hyperparams.lambda,
        forest.hyperparams.seed,
        forest.hyperparams.d_tree()
    )?;
    for tree in &forest.trees {
        let names: Vec<&str> =
            tree.feature_subset.iter().map(|&i| schema.names[i].as_str()).collect();
        writeln!(out, "tree {}: base features {:?}", tree.index, names)?;
        print_node(&mut out, &tree.root, &tree.feature_subset, &forest, &schema, "  ", None)?;
    }
    let consolidated = ConsolidatedFeatures::from_forest(&forest);
    for (li, indices) in consolidated.per_layer.iter().enumerate() {
        let names: Vec<String> =
            indices.iter().map(|&g| squared_feature_name(g, &schema)).collect();
        writeln!(out, "consolidated layer {}: {} features {:?}", li + 1, names.len(), names)?;
    }
    let names: Vec<String> = consolidated
        .independent
        .iter()
        .map(|&g| squared_feature_name(g, &schema))
        .collect();
    writeln!(
        out,
        "consolidated resolution-independent{}: {} features {:?}",
        if consolidated.independent_fallback { " (full-union fallback)" } else { "" },
        names.len(),
        names
    )?;
    emit(&out);
    Ok(())
}

fn print_node(
    out: &mut String,
    node: &Node,
    subset: &[usize],
    forest: &Forest,
    schema: &FeatureSchema,
    indent: &str,
    branch: Option<u16>,
) -> Result<()> {
    let via = branch.map_or(String::new(), |c| format!("branch {c} -> "));
    match node {
        Node::Decision(d) => {
            writeln!(
                out,
                "{indent}{via}decision layer={} depth={} classes={:?} samples={} accuracy={:.4} difficulty={:.4}",
                d.layer, d.depth, d.classes, d.n_samples, d.accuracy, d.difficulty
            )?;
            if d.betas.is_empty() {
                writeln!(out, "{indent}  pass-through to class {}", d.classes[0])?;
            } else {
                let shown: Vec<String> = d
                    .selected
                    .iter()
                    .map(|&h| {
                        let global =
                            quadforest::features::global_squared_index(h, subset, forest.n_tot);
                        let magnitude = d
                            .betas
                            .iter()
                            .map(|row| row[h].abs())
                            .fold(0.0f64, f64::max);
                        format!("{} (|b|={magnitude:.4})", squared_feature_name(global, schema))
                    })
                    .collect();
                writeln!(out, "{indent}  selected[{}]: {}", shown.len(), shown.join(", "))?;
                writeln!(out, "{indent}  thresholds: {:?}", d.thresholds)?;
            }
            writeln!(out, "{indent}  probs: {:?}", d.probs)?;
            let deeper = format!("{indent}  ");
            for (ci, child) in d.children.iter().enumerate() {
                if let Some(child) = child {
                    print_node(out, child, subset, forest, schema, &deeper, Some((ci + 1) as u16))?;
                }
            }
        }
        Node::Leaf(l) => {
            writeln!(
                out,
                "{indent}{via}leaf voxels={} accuracy={:.4} difficulty={} probs={:?}",
                l.n_voxels, l.accuracy, l.difficulty, l.probs
            )?;
        }
    }
    Ok(())
}
