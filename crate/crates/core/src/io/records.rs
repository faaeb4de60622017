//! Line-delimited prediction, graph-record and trial-log files.

use std::path::Path;

use super::atomic_write;
use crate::error::{Error, Result};
use crate::forest::{
    voxel_predictions, ConsolidatedFeatures, GraphRecord, PreparedVolume, VolumePredictions,
};
use crate::hyperopt::TrialRecord;

pub const PREDICTION_HEADER: &str = "# QRFP1";
pub const GRAPH_HEADER: &str = "# QRFG1";

/// Canonical prediction file name for a volume stem.
pub fn prediction_file_name(stem: &str) -> String {
    format!("{stem}.pred.txt")
}

/// Canonical graph-record file name for a volume stem.
pub fn graph_file_name(stem: &str) -> String {
    format!("{stem}.graph.txt")
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn join_u32(values: &[u32]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// One parsed prediction line.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLine {
    pub layer: usize,
    pub id: u32,
    pub label: u16,
    pub reliability: f64,
    pub probs: Vec<f64>,
}

/// Writes every layer of one volume's predictions, voxel layer included.
///
/// Line format: `layer <tab> id <tab> label <tab> reliability <tab> p1,p2,...`.
pub fn write_predictions(
    path: &Path,
    volume_name: &str,
    prepared: &PreparedVolume,
    predictions: &VolumePredictions,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "{PREDICTION_HEADER} volume={volume_name} n_lay={} n_clas={}\n",
        predictions.n_lay,
        predictions.layers[0][0].probs.len()
    ));
    for r in (1..=predictions.n_lay).rev() {
        for (i, p) in predictions.layer(r).iter().enumerate() {
            out.push_str(&format!(
                "{r}\t{i}\t{}\t{}\t{}\n",
                p.label,
                p.reliability,
                join_f64(&p.probs)
            ));
        }
    }
    for (id, _, p) in voxel_predictions(prepared, predictions) {
        out.push_str(&format!(
            "0\t{id}\t{}\t{}\t{}\n",
            p.label,
            p.reliability,
            join_f64(&p.probs)
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn parse_prediction_line(line: &str) -> Result<PredictionLine> {
    let mut parts = line.split('\t');
    let mut next = || parts.next().ok_or_else(|| Error::Format(format!("short line: {line}")));
    let layer = next()?.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?;
    let id = next()?.parse::<u32>().map_err(|e| Error::Format(e.to_string()))?;
    let label = next()?.parse::<u16>().map_err(|e| Error::Format(e.to_string()))?;
    let reliability = next()?.parse::<f64>().map_err(|e| Error::Format(e.to_string()))?;
    let probs = next()?
        .split(',')
        .map(|v| v.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionLine { layer, id, label, reliability, probs })
}

/// Writes the graph records of every layer (`n_lay` down to 0) of one volume.
///
/// The header block documents the consolidated feature indices the value
/// columns refer to. Line format:
/// `layer <tab> id <tab> priors <tab> reliability <tab> fspec <tab> find
///  <tab> neighbors <tab> parent <tab> children`, with `-` for empty fields.
pub fn write_graph_records(
    path: &Path,
    volume_name: &str,
    prepared: &PreparedVolume,
    predictions: &VolumePredictions,
    consolidated: &ConsolidatedFeatures,
    records_by_layer: &[Vec<GraphRecord>],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{GRAPH_HEADER} volume={volume_name} n_lay={}\n", predictions.n_lay));
    for (li, indices) in consolidated.per_layer.iter().enumerate() {
        out.push_str(&format!(
            "# fspec_indices layer={} {}\n",
            li + 1,
            if indices.is_empty() {
                "-".to_string()
            } else {
                indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
            }
        ));
    }
    out.push_str(&format!(
        "# find_indices{} {}\n",
        if consolidated.independent_fallback { " (full-union fallback)" } else { "" },
        if consolidated.independent.is_empty() {
            "-".to_string()
        } else {
            consolidated.independent.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        }
    ));
    let _ = prepared;
    let dash = |s: String| if s.is_empty() { "-".to_string() } else { s };
    for layer_records in records_by_layer {
        for rec in layer_records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                rec.layer,
                rec.id,
                dash(join_f64(&rec.priors)),
                rec.reliability,
                dash(join_f64(&rec.features_specific)),
                dash(join_f64(&rec.features_independent)),
                dash(join_u32(&rec.neighbors)),
                rec.parent.map_or("-".to_string(), |p| p.to_string()),
                dash(join_u32(&rec.children)),
            ));
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Appends nothing: writes the whole trial log as one JSON record per line.
pub fn write_trial_log(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let mut out = String::new();
    for t in trials {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}
