//! Angle-quantized class expansion.
//!
//! An oriented label `(box, θ, c)` is turned into something a plain
//! axis-aligned detector can learn: the box becomes its axis-aligned hull and
//! the class becomes `ĉ = c·k + bin(θ)`, where `k` is the number of angular
//! bins. Decoding splits `ĉ` back into `(c, bin·θ̂)` and rebuilds the oriented
//! box from the hull using the object's nominal aspect ratio.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, reconstruct_obb, Aabb, GeometryError, Obb, Similarity2};

/// Slack added before rounding so that exact half-bins given in degrees
/// still round up after the conversion to radians.
const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EncodingError {
    #[error("invalid quantization step {0} rad")]
    InvalidStep(f64),
    #[error("class {class_id} is not in the catalog ({classes} classes)")]
    UnknownClass { class_id: u32, classes: usize },
    #[error("catalog ids must be 0..{expected} in order, found {found} at position {expected}")]
    NonContiguousCatalog { expected: u32, found: u32 },
    #[error("catalog entry {id} has invalid ratio {ratio}")]
    InvalidCatalogRatio { id: u32, ratio: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("catalog io: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Uniform angular binning with step `θ̂` and `k = ⌈2π/θ̂⌉` bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleQuantizer {
    step: f64,
    bins: u32,
}

impl AngleQuantizer {
    pub fn new(step: f64) -> Result<Self, EncodingError> {
        if !(step > 0.0 && step <= TAU) {
            return Err(EncodingError::InvalidStep(step));
        }
        // 2π/θ̂ for degree steps like 10° lands a few ulps above the integer
        let bins = (TAU / step - ROUNDING_SLACK).ceil().max(1.0) as u32;
        Ok(Self { step, bins })
    }

    pub fn from_degrees(step_deg: f64) -> Result<Self, EncodingError> {
        Self::new(step_deg.to_radians())
    }

    /// Quantization step θ̂ in radians.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn step_degrees(&self) -> f64 {
        self.step.to_degrees()
    }

    /// Number of bins `k`.
    pub fn bins(&self) -> u32 {
        self.bins
    }

    /// Size of the expanded label space `k·C`.
    pub fn expanded_classes(&self, classes: usize) -> u64 {
        u64::from(self.bins) * classes as u64
    }

    /// Nearest bin (round half up), with bin `k` folded onto bin 0.
    pub fn quantize(&self, theta: f64) -> u32 {
        let theta = normalize_angle(theta);
        let bin = (theta / self.step + 0.5 + ROUNDING_SLACK).floor() as u64;
        (bin % u64::from(self.bins)) as u32
    }

    /// Representative angle of `bin`, `bin·θ̂`.
    pub fn bin_angle(&self, bin: u32) -> f64 {
        self.step * f64::from(bin % self.bins)
    }

    /// `ĉ = c·k + bin(θ)`.
    pub fn expand(&self, class_id: u32, theta: f64) -> u32 {
        class_id * self.bins + self.quantize(theta)
    }

    /// Inverse of [`expand`](Self::expand): `(⌊ĉ/k⌋, θ̂·(ĉ mod k))`.
    pub fn split(&self, expanded: u32) -> (u32, f64) {
        (expanded / self.bins, self.bin_angle(expanded % self.bins))
    }
}

pub fn quantize_angle(q: &AngleQuantizer, theta: f64) -> u32 {
    q.quantize(theta)
}

pub fn o2u_class(q: &AngleQuantizer, class_id: u32, theta: f64) -> u32 {
    q.expand(class_id, theta)
}

pub fn u2o_class(q: &AngleQuantizer, expanded: u32) -> (u32, f64) {
    q.split(expanded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: u32,
    pub name: String,
    /// Nominal aspect ratio (first edge over second side) at zero angle.
    pub ratio: f64,
    #[serde(default)]
    pub symmetric: bool,
    /// Reporting group, e.g. "Textured".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// Object classes with their nominal aspect ratios. Ids are `0..C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CatalogEntry>", into = "Vec<CatalogEntry>")]
pub struct ObjectCatalog {
    entries: Vec<CatalogEntry>,
}

impl ObjectCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self, EncodingError> {
        for (i, e) in entries.iter().enumerate() {
            if e.id != i as u32 {
                return Err(EncodingError::NonContiguousCatalog {
                    expected: i as u32,
                    found: e.id,
                });
            }
            if !(e.ratio > 0.0 && e.ratio.is_finite()) {
                return Err(EncodingError::InvalidCatalogRatio {
                    id: e.id,
                    ratio: e.ratio,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_json_str(s: &str) -> Result<Self, EncodingError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncodingError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("catalog serializes")
    }

    /// Twelve desk objects split evenly into untextured and textured groups.
    pub fn desk_objects() -> Self {
        let spec: [(&str, f64, bool, &str); 12] = [
            ("artifact_black", 1.6, false, "Untextured"),
            ("artifact_metal", 2.2, false, "Untextured"),
            ("artifact_orange", 1.3, true, "Untextured"),
            ("artifact_white", 1.8, false, "Untextured"),
            ("clip", 2.6, false, "Untextured"),
            ("screwdriver", 3.0, false, "Untextured"),
            ("battery_black", 2.0, false, "Textured"),
            ("battery_green", 2.1, false, "Textured"),
            ("box_brown", 1.4, true, "Textured"),
            ("box_yellow", 1.5, false, "Textured"),
            ("glue", 2.4, false, "Textured"),
            ("pendrive", 2.8, false, "Textured"),
        ];
        let entries = spec
            .iter()
            .enumerate()
            .map(|(i, &(name, ratio, symmetric, group))| CatalogEntry {
                id: i as u32,
                name: name.to_owned(),
                ratio,
                symmetric,
                group: Some(group.to_owned()),
            })
            .collect();
        Self::new(entries).expect("built-in catalog is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class_id: u32) -> Option<&CatalogEntry> {
        self.entries.get(class_id as usize)
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    /// Group names in order of first appearance.
    pub fn groups(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .filter_map(|e| e.group.as_deref())
            .filter(|g| seen.insert(*g))
            .collect()
    }
}

impl TryFrom<Vec<CatalogEntry>> for ObjectCatalog {
    type Error = EncodingError;
    fn try_from(entries: Vec<CatalogEntry>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<ObjectCatalog> for Vec<CatalogEntry> {
    fn from(c: ObjectCatalog) -> Self {
        c.entries
    }
}

/// Oriented box with its object class. `confidence` is 1 for ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedLabel {
    pub obb: Obb,
    /// Orientation in radians; equals `obb.angle()` for ground truth, and the
    /// decoded bin angle for predictions.
    pub theta: f64,
    pub class_id: u32,
    pub confidence: f64,
}

impl OrientedLabel {
    pub fn new(obb: Obb, class_id: u32) -> Self {
        Self {
            obb,
            theta: obb.angle(),
            class_id,
            confidence: 1.0,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    /// The label moved by `t`; the angle is re-read from the moved box.
    pub fn transformed(&self, t: &Similarity2) -> Self {
        let obb = self.obb.transform(t);
        Self {
            obb,
            theta: obb.angle(),
            class_id: self.class_id,
            confidence: self.confidence,
        }
    }
}

/// What a plain detector sees or emits: a hull and an expanded class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnorientedLabel {
    pub aabb: Aabb,
    pub expanded_class: u32,
    pub confidence: f64,
}

/// Quantizer plus catalog: everything needed to go both ways.
#[derive(Debug, Clone)]
pub struct LoopCodec {
    pub quantizer: AngleQuantizer,
    pub catalog: ObjectCatalog,
}

impl LoopCodec {
    pub fn new(quantizer: AngleQuantizer, catalog: ObjectCatalog) -> Self {
        Self { quantizer, catalog }
    }

    pub fn expanded_classes(&self) -> u64 {
        self.quantizer.expanded_classes(self.catalog.len())
    }

    pub fn encode(&self, label: &OrientedLabel) -> UnorientedLabel {
        encode_label(&self.quantizer, label)
    }

    pub fn decode(&self, pred: &UnorientedLabel) -> Result<OrientedLabel, EncodingError> {
        decode_prediction(&self.quantizer, &self.catalog, pred)
    }
}

/// Oriented label to detector-native form. Confidence is fixed at 1.
pub fn encode_label(q: &AngleQuantizer, label: &OrientedLabel) -> UnorientedLabel {
    UnorientedLabel {
        aabb: label.obb.aabb(),
        expanded_class: q.expand(label.class_id, label.theta),
        confidence: 1.0,
    }
}

/// Detector-native prediction back to an oriented label.
pub fn decode_prediction(
    q: &AngleQuantizer,
    catalog: &ObjectCatalog,
    pred: &UnorientedLabel,
) -> Result<OrientedLabel, EncodingError> {
    let (class_id, theta) = q.split(pred.expanded_class);
    let entry = catalog.get(class_id).ok_or(EncodingError::UnknownClass {
        class_id,
        classes: catalog.len(),
    })?;
    let obb = reconstruct_obb(&pred.aabb, theta, entry.ratio)?;
    Ok(OrientedLabel {
        obb,
        theta,
        class_id,
        confidence: pred.confidence,
    })
}
