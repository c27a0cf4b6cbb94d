//! File formats: stat-table JSON, manifest JSON, and CSV for ground truth,
//! detections, mined pairs, and evaluation reports.
//!
//! Stat tables are stored as schema-versioned JSON,
//! `{"schema_version":1,"num_frames":N,"rep_dim":d,"records":[...]}`, with
//! records sorted by `(t, t_prime)` covering exactly the full upper
//! triangle. Floating-point fields are written with 17 significant digits,
//! so a save/load round trip is bit-exact for double precision. All writers
//! produce byte-identical output for identical input.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalReport;
use crate::mine::MinedPairs;
use crate::model::{
    CaptionTokens, DetectionResult, GroundTruth, Method, ModelError, PairKey, PairObservation,
    StatTable, StreamManifest,
};

/// Current stat-table schema version; loaders reject anything else.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema { path: PathBuf, found: u32 },
    #[error("{path}: duplicate stream '{stream_id}'")]
    DuplicateStream { path: PathBuf, stream_id: String },
    #[error("{path}: duplicate detection for ('{stream_id}', {method})")]
    DuplicateDetection { path: PathBuf, stream_id: String, method: Method },
    #[error("{path}: invalid stat table: {source}")]
    Validate {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
}

impl IoError {
    fn parse(path: &Path, message: impl Into<String>) -> Self {
        IoError::Parse { path: path.to_path_buf(), message: message.into() }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Serialize, Deserialize)]
struct StatTableFile {
    schema_version: u32,
    num_frames: u32,
    rep_dim: usize,
    records: Vec<RecordFile>,
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    t: u32,
    t_prime: u32,
    p: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    h: Vec<f64>,
}

/// JSON formatter that writes every float with 17 significant digits
/// (`{:.16e}`), enough to reconstruct any f64 exactly.
struct FullPrecisionFormatter;

impl serde_json::ser::Formatter for FullPrecisionFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes a validated table to `path`. The produced file re-loads to an
/// equal table, numerically exact.
pub fn save_stat_table(table: &StatTable<f64>, path: &Path) -> Result<(), IoError> {
    table.validate().map_err(|source| IoError::Validate { path: path.to_path_buf(), source })?;
    let file = StatTableFile {
        schema_version: SCHEMA_VERSION,
        num_frames: table.num_frames(),
        rep_dim: table.rep_dim().unwrap_or(0),
        records: table
            .observations()
            .map(|obs| RecordFile {
                t: obs.key.t(),
                t_prime: obs.key.t_prime(),
                p: obs.p,
                h: obs.rep.clone().unwrap_or_default(),
            })
            .collect(),
    };
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecisionFormatter);
    file.serialize(&mut ser)
        .map_err(|e| IoError::parse(path, format!("serialization failed: {e}")))?;
    buf.push(b'\n');
    fs::write(path, buf).map_err(|e| IoError::io(path, e))
}

/// Loads and validates a stat table saved by [`save_stat_table`].
pub fn load_stat_table(path: &Path) -> Result<StatTable<f64>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let file: StatTableFile =
        serde_json::from_str(&text).map_err(|e| IoError::parse(path, e.to_string()))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(IoError::UnsupportedSchema { path: path.to_path_buf(), found: file.schema_version });
    }
    let mut observations = Vec::with_capacity(file.records.len());
    let mut last: Option<(u32, u32)> = None;
    for rec in &file.records {
        let this = (rec.t, rec.t_prime);
        if let Some(prev) = last {
            if this == prev {
                return Err(IoError::parse(
                    path,
                    format!("duplicate record ({}, {})", rec.t, rec.t_prime),
                ));
            }
            if this < prev {
                return Err(IoError::parse(path, "records not sorted by (t, t_prime)"));
            }
        }
        last = Some(this);
        if file.rep_dim == 0 && !rec.h.is_empty() {
            return Err(IoError::parse(
                path,
                format!("record ({}, {}) carries h but rep_dim is 0", rec.t, rec.t_prime),
            ));
        }
        let key = PairKey::new(rec.t, rec.t_prime)
            .map_err(|e| IoError::parse(path, e.to_string()))?;
        observations.push(PairObservation {
            key,
            p: rec.p,
            rep: if file.rep_dim == 0 { None } else { Some(rec.h.clone()) },
        });
    }
    StatTable::new(file.num_frames, observations)
        .map_err(|source| IoError::Validate { path: path.to_path_buf(), source })
}

fn check_id(path: &Path, stream_id: &str) -> Result<(), IoError> {
    if stream_id.is_empty() || stream_id.contains([',', '\n', '\r']) {
        return Err(IoError::parse(path, format!("invalid stream id {stream_id:?}")));
    }
    Ok(())
}

/// Writes `stream_id,kappa_star` rows sorted by stream id; `kappa_star` is
/// empty for no-change streams.
pub fn write_ground_truth(truths: &[GroundTruth], path: &Path) -> Result<(), IoError> {
    let mut sorted: Vec<&GroundTruth> = truths.iter().collect();
    sorted.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
    let mut out = String::from("stream_id,kappa_star\n");
    for truth in sorted {
        check_id(path, &truth.stream_id)?;
        match truth.kappa_star {
            Some(k) => writeln!(out, "{},{}", truth.stream_id, k).unwrap(),
            None => writeln!(out, "{},", truth.stream_id).unwrap(),
        }
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Reads a ground-truth CSV; one [`GroundTruth`] per row.
pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruth>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("stream_id,kappa_star") => {}
        other => {
            return Err(IoError::parse(
                path,
                format!("expected header 'stream_id,kappa_star', got {other:?}"),
            ))
        }
    }
    let mut seen = BTreeSet::new();
    let mut truths = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let (stream_id, kappa_field) = line.split_once(',').ok_or_else(|| {
            IoError::parse(path, format!("line {}: expected 2 fields", lineno + 2))
        })?;
        if !seen.insert(stream_id.to_string()) {
            return Err(IoError::DuplicateStream {
                path: path.to_path_buf(),
                stream_id: stream_id.to_string(),
            });
        }
        let kappa_star = if kappa_field.is_empty() {
            None
        } else {
            Some(kappa_field.parse::<u32>().map_err(|e| {
                IoError::parse(path, format!("line {}: bad kappa_star: {e}", lineno + 2))
            })?)
        };
        truths.push(GroundTruth { stream_id: stream_id.to_string(), kappa_star });
    }
    Ok(truths)
}

/// Writes `stream_id,method,kappa_hat,confidence` rows sorted by
/// `(stream_id, method)`. Confidence uses the shortest decimal that re-parses
/// to the same double.
pub fn write_detections(results: &[DetectionResult<f64>], path: &Path) -> Result<(), IoError> {
    let mut sorted: Vec<&DetectionResult<f64>> = results.iter().collect();
    sorted.sort_by(|a, b| (&a.stream_id, a.method.as_str()).cmp(&(&b.stream_id, b.method.as_str())));
    let mut out = String::from("stream_id,method,kappa_hat,confidence\n");
    for det in sorted {
        check_id(path, &det.stream_id)?;
        writeln!(out, "{},{},{},{}", det.stream_id, det.method, det.kappa_hat, det.confidence)
            .unwrap();
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Reads a detections CSV written by [`write_detections`]. Profiles are not
/// persisted, so loaded results carry a single-entry profile holding the
/// confidence.
pub fn load_detections(path: &Path) -> Result<Vec<DetectionResult<f64>>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("stream_id,method,kappa_hat,confidence") => {}
        other => {
            return Err(IoError::parse(
                path,
                format!("expected header 'stream_id,method,kappa_hat,confidence', got {other:?}"),
            ))
        }
    }
    let mut seen = BTreeSet::new();
    let mut results = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(IoError::parse(path, format!("line {}: expected 4 fields", lineno + 2)));
        }
        let method: Method = fields[1]
            .parse()
            .map_err(|e| IoError::parse(path, format!("line {}: {e}", lineno + 2)))?;
        if !seen.insert((fields[0].to_string(), method)) {
            return Err(IoError::DuplicateDetection {
                path: path.to_path_buf(),
                stream_id: fields[0].to_string(),
                method,
            });
        }
        let kappa_hat: u32 = fields[2]
            .parse()
            .map_err(|e| IoError::parse(path, format!("line {}: bad kappa_hat: {e}", lineno + 2)))?;
        let confidence: f64 = fields[3]
            .parse()
            .map_err(|e| IoError::parse(path, format!("line {}: bad confidence: {e}", lineno + 2)))?;
        results.push(DetectionResult {
            stream_id: fields[0].to_string(),
            method,
            kappa_hat,
            confidence,
            profile: vec![confidence],
        });
    }
    Ok(results)
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    stream_id: String,
    num_frames: u32,
    #[serde(default)]
    true_changepoint: Option<u32>,
    #[serde(default)]
    captions: Vec<Vec<u32>>,
}

/// Loads a stream manifest from JSON:
/// `{"stream_id":"s1","num_frames":5,"true_changepoint":3,"captions":[[4,7]]}`.
pub fn load_manifest(path: &Path) -> Result<StreamManifest, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| IoError::parse(path, e.to_string()))?;
    let captions = file
        .captions
        .into_iter()
        .map(CaptionTokens::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| IoError::parse(path, e.to_string()))?;
    StreamManifest::new(file.stream_id, file.num_frames, file.true_changepoint, captions)
        .map_err(|e| IoError::parse(path, e.to_string()))
}

/// Writes mined pairs as `stream_id,t,t_prime,label` rows; the label is the
/// space-joined token ids of the caption and is empty for unlabeled pairs.
pub fn write_mined_pairs(stream_id: &str, pairs: &MinedPairs, path: &Path) -> Result<(), IoError> {
    check_id(path, stream_id)?;
    let mut out = String::from("stream_id,t,t_prime,label\n");
    let mut rows: Vec<(PairKey, String)> = pairs
        .labeled
        .iter()
        .map(|lp| (lp.key, lp.caption.to_string()))
        .chain(pairs.unlabeled.iter().map(|&key| (key, String::new())))
        .collect();
    rows.sort_by_key(|(key, label)| (*key, label.clone()));
    for (key, label) in rows {
        writeln!(out, "{},{},{},{}", stream_id, key.t(), key.t_prime(), label).unwrap();
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Writes an evaluation report as `kind,window,value` rows: one `ap` row per
/// window followed by the `map` row.
pub fn write_eval_report(report: &EvalReport<f64>, path: &Path) -> Result<(), IoError> {
    let mut out = String::from("kind,window,value\n");
    for (window, ap) in &report.ap_per_window {
        writeln!(out, "ap,{window},{ap}").unwrap();
    }
    writeln!(out, "map,,{}", report.map_value).unwrap();
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Writes PR points as `recall,precision` rows for plotting.
pub fn write_pr_points(report: &EvalReport<f64>, path: &Path) -> Result<(), IoError> {
    let mut out = String::from("recall,precision\n");
    for point in &report.pr_points {
        writeln!(out, "{},{}", point.recall, point.precision).unwrap();
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}
