//! On-disk artifacts: dataset manifests, keyframe files, and the JSON
//! reports every command emits. Each document type has a schema in
//! `schemas/`; [`write_json`] validates against the schema before the
//! bytes hit the disk, and the readers validate again on load.

use crate::schema;
use keymotion::metrics::MetricReport;
use keymotion::{Error, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

macro_rules! embed_schema {
    ($name:ident, $file:literal) => {
        pub const $name: &str =
            include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/schemas/", $file));
    };
}

embed_schema!(CONFIG_SCHEMA, "config.schema.json");
embed_schema!(MANIFEST_SCHEMA, "manifest.schema.json");
embed_schema!(KEYFRAMES_SCHEMA, "keyframes.schema.json");
embed_schema!(SELECT_REPORT_SCHEMA, "select_report.schema.json");
embed_schema!(INFILL_REPORT_SCHEMA, "infill_report.schema.json");
embed_schema!(LOSS_HISTORY_SCHEMA, "loss_history.schema.json");
embed_schema!(SAMPLE_REPORT_SCHEMA, "sample_report.schema.json");
embed_schema!(EVAL_REPORT_SCHEMA, "eval_report.schema.json");
embed_schema!(SWEEP_SCHEMA, "sweep.schema.json");
embed_schema!(FK_SCHEMA, "fk.schema.json");
embed_schema!(GRADCHECK_SCHEMA, "gradcheck.schema.json");

/// Serializes, validates against the embedded schema, and writes with a
/// trailing newline. Deterministic: field order comes from the structs.
pub fn write_json<S: Serialize>(doc: &S, schema_text: &str, path: &Path) -> Result<()> {
    let value = serde_json::to_value(doc)?;
    let schema: Value = serde_json::from_str(schema_text)?;
    schema::validate(&value, &schema)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON document and validates it against its schema.
pub fn read_json<D: DeserializeOwned>(path: &Path, schema_text: &str) -> Result<D> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let schema: Value = serde_json::from_str(schema_text)?;
    schema::validate(&value, &schema)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_value(value)?)
}

/// One sequence in a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Motion file name, relative to the manifest.
    pub file: String,
    /// Motion family the sequence was drawn from (or `sampled`).
    pub family: String,
    /// Condition sentence paired with the sequence.
    pub text: String,
}

/// Index of a dataset directory: shared shape plus one entry per file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub joints: usize,
    pub frame_dim: usize,
    pub length: usize,
    pub frame_rate: f64,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FORMAT: &str = "keymotion-dataset";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Keyframe rows extracted from (or decoded for) one sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframesFile {
    pub format: String,
    pub version: u32,
    pub motion_len: usize,
    pub frame_dim: usize,
    pub frame_rate: f64,
    pub indices: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

pub const KEYFRAMES_FORMAT: &str = "keymotion-keyframes";

/// Output of `select`: chosen indices and their dispersion score.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectReport {
    pub method: String,
    pub input: String,
    pub motion_len: usize,
    pub count: usize,
    pub indices: Vec<usize>,
    /// Sum of frame-space distances between adjacent keyframes.
    pub adjacent_distance_total: f64,
    /// Written keyframe file, when requested.
    pub keyframes_file: Option<String>,
}

/// Output of `infill`: where the sequence went and how close it is to a
/// reference, when one was supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfillReport {
    pub method: String,
    pub output: String,
    pub motion_len: usize,
    pub keyframes: usize,
    pub mpjpe_mm: Option<f64>,
    pub pampjpe_mm: Option<f64>,
}

/// One epoch of any training stage; stages fill the terms they have.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossEntry {
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bone_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fk_position: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
}

impl LossEntry {
    pub fn total_only(total: f64) -> Self {
        LossEntry {
            total,
            reconstruction: None,
            kl: None,
            bone_length: None,
            position: None,
            fk_position: None,
            smoothness: None,
        }
    }
}

/// Per-epoch loss curve of one training stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossHistory {
    pub stage: String,
    pub entries: Vec<LossEntry>,
}

/// Output of `train`: checkpoint location and final loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainReport {
    pub stage: String,
    pub checkpoint: String,
    pub loss_file: String,
    pub epochs: usize,
    pub final_loss: f64,
}

/// Output of `sample`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleReport {
    pub text: String,
    pub count: usize,
    pub guidance: f64,
    pub steps: usize,
    pub mode: String,
    pub files: Vec<String>,
    /// Decoded keyframe indices per sample.
    pub keyframe_indices: Vec<Vec<usize>>,
    /// Wall-clock seconds per generated sentence (not deterministic).
    pub avg_seconds_per_sentence: f64,
}

/// Output of `eval`: one repeat-protocol report per metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub generated: String,
    pub reference: String,
    pub metrics: Vec<MetricReport>,
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    /// The swept value (guidance factor or keyframe rate).
    pub value: f64,
    /// Metric name → score at this value.
    pub metrics: std::collections::BTreeMap<String, f64>,
}

/// A full sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    /// What was swept: `guidance` or `rate`.
    pub sweep: String,
    pub rows: Vec<SweepRow>,
}

/// Output of `fk`: world-space joint positions per frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkReport {
    pub input: String,
    /// True when the root trajectory was held at the origin.
    pub isolated: bool,
    pub frames: usize,
    pub joints: usize,
    /// `positions[frame][joint] = [x, y, z]`.
    pub positions: Vec<Vec<[f64; 3]>>,
}

/// One finite-difference case of the gradient suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCase {
    pub name: String,
    pub max_rel_error: f64,
}

/// Output of `gradcheck`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradReport {
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub pass: bool,
    pub cases: Vec<GradCase>,
}
