//! JSON records for labels, predictions and sequence manifests. Coordinates
//! are pixels; angles are degrees on disk.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::encoding::{OrientedLabel, UnorientedLabel};
use crate::geometry::{normalize_angle, Aabb, Obb, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub class_id: u32,
    /// Clockwise corners, first edge along the object's orientation.
    pub vertices: [[f64; 2]; 4],
    pub theta_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl LabelRecord {
    pub fn from_label(label: &OrientedLabel) -> Self {
        Self {
            class_id: label.class_id,
            vertices: label.obb.vertices().map(|v| [v.x, v.y]),
            theta_deg: label.theta.to_degrees(),
            confidence: (label.confidence != 1.0).then_some(label.confidence),
        }
    }

    pub fn to_label(&self) -> Result<OrientedLabel, crate::geometry::GeometryError> {
        let obb = Obb::new(self.vertices.map(|[x, y]| Vec2::new(x, y)))?;
        if !self.theta_deg.is_finite() {
            return Err(crate::geometry::GeometryError::NonFinite);
        }
        Ok(OrientedLabel {
            obb,
            theta: normalize_angle(self.theta_deg.to_radians()),
            class_id: self.class_id,
            confidence: self.confidence.unwrap_or(1.0),
        })
    }
}

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub frame: usize,
    pub labels: Vec<LabelRecord>,
}

impl FrameLabels {
    pub fn new(frame: usize, labels: &[OrientedLabel]) -> Self {
        Self {
            frame,
            labels: labels.iter().map(LabelRecord::from_label).collect(),
        }
    }

    pub fn to_labels(&self) -> Result<Vec<OrientedLabel>, crate::geometry::GeometryError> {
        self.labels.iter().map(LabelRecord::to_label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub expanded_class: u32,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn from_prediction(p: &UnorientedLabel) -> Self {
        let c = p.aabb.center();
        Self {
            cx: c.x,
            cy: c.y,
            w: p.aabb.w,
            h: p.aabb.h,
            expanded_class: p.expanded_class,
            confidence: p.confidence,
        }
    }

    pub fn to_prediction(&self) -> Result<UnorientedLabel, crate::geometry::GeometryError> {
        Ok(UnorientedLabel {
            aabb: Aabb::new(self.cx, self.cy, self.w, self.h)?,
            expanded_class: self.expanded_class,
            confidence: self.confidence,
        })
    }
}

/// One line of `preds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePredictions {
    pub frame: usize,
    pub predictions: Vec<PredictionRecord>,
}

impl FramePredictions {
    pub fn new(frame: usize, predictions: &[UnorientedLabel]) -> Self {
        Self {
            frame,
            predictions: predictions.iter().map(PredictionRecord::from_prediction).collect(),
        }
    }

    pub fn to_predictions(&self) -> Result<Vec<UnorientedLabel>, crate::geometry::GeometryError> {
        self.predictions.iter().map(PredictionRecord::to_prediction).collect()
    }
}

/// Frame list of an image sequence. Relative frame paths are resolved
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: Vec<PathBuf>,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_height_mm: Option<f64>,
}

fn default_fps() -> f64 {
    30.0
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| DatasetError::Parse { line: 1, source })
    }

    pub fn resolved_frames(&self, base: &Path) -> Vec<PathBuf> {
        self.frames
            .iter()
            .map(|p| if p.is_absolute() { p.clone() } else { base.join(p) })
            .collect()
    }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DatasetError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<(), DatasetError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
