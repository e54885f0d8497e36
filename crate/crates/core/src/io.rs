//! Line-delimited JSON records for ground truth and predictions, and the
//! JSON evaluation report.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bins::DepthBinSpec;
use crate::metrics::{EvalConfig, EvalReport};
use crate::types::{BoundingBox, DepthPrediction, Detection, GroundTruthObject};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    /// A depth vector whose length disagrees with the configured bin count.
    #[error("line {line}: {field} has length {found}, expected {expected}")]
    VectorLength {
        line: usize,
        field: &'static str,
        found: usize,
        expected: usize,
    },

    #[error("{path}: invalid report: {message}")]
    Report { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;

/// One ground-truth object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub frame_id: String,
    pub bbox: [f64; 4],
    pub class: String,
    pub depth_m: Option<f64>,
}

/// One detection per line, carrying exactly one depth payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub frame_id: String,
    pub bbox: [f64; 4],
    pub class: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_threshold_probs: Option<Vec<f64>>,
}

impl From<&GroundTruthObject> for GroundTruthRecord {
    fn from(g: &GroundTruthObject) -> Self {
        Self {
            frame_id: g.frame_id.clone(),
            bbox: g.bbox.to_array(),
            class: g.class_label.clone(),
            depth_m: g.depth_m,
        }
    }
}

impl From<&Detection> for PredictionRecord {
    fn from(d: &Detection) -> Self {
        let (depth_m, depth_logits, depth_threshold_probs) = match &d.depth {
            DepthPrediction::Continuous(v) => (Some(*v), None, None),
            DepthPrediction::Binned(l) => (None, Some(l.clone()), None),
            DepthPrediction::OrdinalBinned(p) => (None, None, Some(p.clone())),
        };
        Self {
            frame_id: d.frame_id.clone(),
            bbox: d.bbox.to_array(),
            class: d.class_label.clone(),
            confidence: d.confidence,
            depth_m,
            depth_logits,
            depth_threshold_probs,
        }
    }
}

fn parse_error(line: usize, field: &str, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

type Object = serde_json::Map<String, Value>;

/// Removes `name` from the record and deserializes it. Absent and `null`
/// values read as `None`; a required field must be present and non-null.
fn take<T: DeserializeOwned>(
    obj: &mut Object,
    line: usize,
    name: &str,
    required: bool,
) -> IoResult<Option<T>> {
    match obj.remove(name) {
        None | Some(Value::Null) if required => Err(parse_error(line, name, "missing")),
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| parse_error(line, name, e.to_string())),
    }
}

fn required<T: DeserializeOwned>(obj: &mut Object, line: usize, name: &str) -> IoResult<T> {
    Ok(take(obj, line, name, true)?.expect("required field present"))
}

impl GroundTruthRecord {
    fn from_object(mut obj: Object, line: usize) -> IoResult<(Self, Object)> {
        let record = Self {
            frame_id: required(&mut obj, line, "frame_id")?,
            bbox: required(&mut obj, line, "bbox")?,
            class: required(&mut obj, line, "class")?,
            depth_m: take(&mut obj, line, "depth_m", false)?,
        };
        Ok((record, obj))
    }
}

impl PredictionRecord {
    fn from_object(mut obj: Object, line: usize) -> IoResult<(Self, Object)> {
        let record = Self {
            frame_id: required(&mut obj, line, "frame_id")?,
            bbox: required(&mut obj, line, "bbox")?,
            class: required(&mut obj, line, "class")?,
            confidence: required(&mut obj, line, "confidence")?,
            depth_m: take(&mut obj, line, "depth_m", false)?,
            depth_logits: take(&mut obj, line, "depth_logits", false)?,
            depth_threshold_probs: take(&mut obj, line, "depth_threshold_probs", false)?,
        };
        Ok((record, obj))
    }
}

fn to_box(line: usize, raw: [f64; 4]) -> IoResult<BoundingBox> {
    BoundingBox::new(raw[0], raw[1], raw[2], raw[3])
        .map_err(|e| parse_error(line, "bbox", e.to_string()))
}

fn ground_truth_from_record(line: usize, r: GroundTruthRecord) -> IoResult<GroundTruthObject> {
    let bbox = to_box(line, r.bbox)?;
    if let Some(d) = r.depth_m {
        if !(d.is_finite() && d >= 0.0) {
            return Err(parse_error(
                line,
                "depth_m",
                format!("{d} must be null or >= 0"),
            ));
        }
    }
    Ok(GroundTruthObject {
        frame_id: r.frame_id,
        bbox,
        class_label: r.class,
        depth_m: r.depth_m,
    })
}

fn detection_from_record(
    line: usize,
    r: PredictionRecord,
    bins: &DepthBinSpec,
) -> IoResult<Detection> {
    let bbox = to_box(line, r.bbox)?;
    if !(0.0..=1.0).contains(&r.confidence) {
        return Err(parse_error(
            line,
            "confidence",
            format!("{} outside [0, 1]", r.confidence),
        ));
    }
    let payloads = [
        r.depth_m.is_some(),
        r.depth_logits.is_some(),
        r.depth_threshold_probs.is_some(),
    ];
    let present = payloads.iter().filter(|p| **p).count();
    if present != 1 {
        return Err(IoError::Schema {
            line,
            message: format!(
                "expected exactly one of depth_m, depth_logits, depth_threshold_probs; found {present}"
            ),
        });
    }
    let depth = if let Some(v) = r.depth_m {
        if !v.is_finite() {
            return Err(parse_error(line, "depth_m", "must be finite"));
        }
        DepthPrediction::Continuous(v)
    } else if let Some(logits) = r.depth_logits {
        if logits.len() != bins.k {
            return Err(IoError::VectorLength {
                line,
                field: "depth_logits",
                found: logits.len(),
                expected: bins.k,
            });
        }
        DepthPrediction::Binned(logits)
    } else {
        let probs = r.depth_threshold_probs.expect("one payload present");
        if probs.len() + 1 != bins.k {
            return Err(IoError::VectorLength {
                line,
                field: "depth_threshold_probs",
                found: probs.len(),
                expected: bins.k - 1,
            });
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(parse_error(
                line,
                "depth_threshold_probs",
                "values must lie in [0, 1]",
            ));
        }
        DepthPrediction::OrdinalBinned(probs)
    };
    Ok(Detection {
        frame_id: r.frame_id,
        bbox,
        class_label: r.class,
        confidence: r.confidence,
        depth,
    })
}

/// Reads JSON lines one at a time, skipping blank lines, and hands each
/// object with its 1-based line number to `emit`. `emit` returns the fields
/// it did not consume; each unknown field name is warned about once.
fn for_each_object<R, F>(reader: R, mut emit: F) -> IoResult<()>
where
    R: BufRead,
    F: FnMut(usize, Object) -> IoResult<Object>,
{
    let mut warned = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| parse_error(line_no, "<line>", e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str(&text) {
            Ok(Value::Object(obj)) => obj,
            Ok(_) => return Err(parse_error(line_no, "<record>", "expected a JSON object")),
            Err(e) => return Err(parse_error(line_no, "<record>", e.to_string())),
        };
        for key in emit(line_no, obj)?.keys() {
            if warned.insert(key.clone()) {
                log::warn!("line {line_no}: ignoring unknown field `{key}`");
            }
        }
    }
    Ok(())
}

pub fn parse_ground_truth<R: BufRead>(reader: R) -> IoResult<Vec<GroundTruthObject>> {
    let mut out = Vec::new();
    for_each_object(reader, |line, obj| {
        let (record, rest) = GroundTruthRecord::from_object(obj, line)?;
        out.push(ground_truth_from_record(line, record)?);
        Ok(rest)
    })?;
    Ok(out)
}

pub fn parse_predictions<R: BufRead>(reader: R, bins: &DepthBinSpec) -> IoResult<Vec<Detection>> {
    let mut out = Vec::new();
    for_each_object(reader, |line, obj| {
        let (record, rest) = PredictionRecord::from_object(obj, line)?;
        out.push(detection_from_record(line, record, bins)?);
        Ok(rest)
    })?;
    Ok(out)
}

fn open(path: &Path) -> IoResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| IoError::io(path, e))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> IoResult<Vec<GroundTruthObject>> {
    parse_ground_truth(open(path.as_ref())?)
}

pub fn read_predictions(path: impl AsRef<Path>, bins: &DepthBinSpec) -> IoResult<Vec<Detection>> {
    parse_predictions(open(path.as_ref())?, bins)
}

fn write_lines<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> IoResult<()> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| IoError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_ground_truth(path: impl AsRef<Path>, objects: &[GroundTruthObject]) -> IoResult<()> {
    write_lines(path.as_ref(), objects.iter().map(GroundTruthRecord::from))
}

pub fn write_predictions(path: impl AsRef<Path>, detections: &[Detection]) -> IoResult<()> {
    write_lines(path.as_ref(), detections.iter().map(PredictionRecord::from))
}

/// Input files an evaluation read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub ground_truth: PathBuf,
    pub predictions: PathBuf,
}

/// Self-describing evaluation output: configuration, inputs and results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub toolkit: String,
    pub version: String,
    pub config: EvalConfig,
    pub inputs: Option<ReportInputs>,
    pub results: EvalReport,
}

impl ReportDocument {
    pub fn new(config: EvalConfig, inputs: Option<ReportInputs>, results: EvalReport) -> Self {
        Self {
            toolkit: "objdepth".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs,
            results,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn write_report(report: &ReportDocument, path: impl AsRef<Path>) -> IoResult<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_json()).map_err(|e| IoError::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> IoResult<ReportDocument> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Report {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
