//! Providers of per-pair correspondences.
//!
//! All built-in sources are `Sync` and can be queried for different pairs from
//! several threads at once.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::{detect_and_match, Correspondence, EstimationError, MatchConfig, MatchError};
use crate::geometry::{Similarity2, Vec2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PairError {
    #[error("matching failed: {0}")]
    Matching(#[from] MatchError),
    #[error("estimation failed: {0}")]
    Estimation(#[from] EstimationError),
    #[error("no correspondences for pair {from} -> {to}")]
    MissingPair { from: usize, to: usize },
    #[error("{0}")]
    Source(String),
}

pub trait CorrespondenceSource: Sync {
    fn frame_count(&self) -> usize;

    /// Image size used to drop labels that leave the frame, if known.
    fn frame_size(&self) -> Option<(u32, u32)> {
        None
    }

    /// Matches from frame `from` to frame `from + 1`.
    fn correspondences(&self, from: usize) -> Result<Vec<Correspondence>, PairError>;
}

/// Decoded grayscale frames matched with [`detect_and_match`].
#[derive(Debug, Clone)]
pub struct ImageSequence {
    frames: Vec<GrayImage>,
    config: MatchConfig,
}

impl ImageSequence {
    pub fn new(frames: Vec<GrayImage>, config: MatchConfig) -> Self {
        Self { frames, config }
    }

    /// Loads and converts every frame to grayscale.
    pub fn load<P: AsRef<Path>>(paths: &[P], config: MatchConfig) -> image::ImageResult<Self> {
        let frames = paths
            .iter()
            .map(|p| image::open(p).map(|img| img.to_luma8()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(frames, config))
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }
}

impl CorrespondenceSource for ImageSequence {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn frame_size(&self) -> Option<(u32, u32)> {
        self.frames.first().map(|f| f.dimensions())
    }

    fn correspondences(&self, from: usize) -> Result<Vec<Correspondence>, PairError> {
        let (a, b) = match (self.frames.get(from), self.frames.get(from + 1)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(PairError::MissingPair { from, to: from + 1 }),
        };
        Ok(detect_and_match(a, b, &self.config)?)
    }
}

/// One line of a matches file: `{"from": i, "to": i+1, "matches": [[sx,sy,dx,dy], …]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchesRecord {
    pub from: usize,
    pub to: usize,
    pub matches: Vec<[f64; 4]>,
}

impl MatchesRecord {
    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.matches
            .iter()
            .map(|&[sx, sy, dx, dy]| Correspondence::new(Vec2::new(sx, sy), Vec2::new(dx, dy)))
            .collect()
    }

    pub fn from_correspondences(from: usize, matches: &[Correspondence]) -> Self {
        Self {
            from,
            to: from + 1,
            matches: matches
                .iter()
                .map(|m| [m.src.x, m.src.y, m.dst.x, m.dst.y])
                .collect(),
        }
    }
}

/// Correspondences produced by an external matcher, read from JSON Lines.
#[derive(Debug, Clone, Default)]
pub struct MatchesFile {
    pairs: BTreeMap<usize, Vec<Correspondence>>,
    frame_count: usize,
    frame_size: Option<(u32, u32)>,
}

impl MatchesFile {
    pub fn from_records(
        records: impl IntoIterator<Item = MatchesRecord>,
        frame_count: usize,
    ) -> Result<Self, PairError> {
        let mut pairs = BTreeMap::new();
        for r in records {
            if r.to != r.from + 1 {
                return Err(PairError::Source(format!(
                    "matches record {} -> {} is not a consecutive pair",
                    r.from, r.to
                )));
            }
            pairs.insert(r.from, r.correspondences());
        }
        Ok(Self {
            pairs,
            frame_count,
            frame_size: None,
        })
    }

    pub fn read(reader: impl BufRead, frame_count: usize) -> Result<Self, PairError> {
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| PairError::Source(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MatchesRecord = serde_json::from_str(&line)
                .map_err(|e| PairError::Source(format!("matches line {}: {e}", n + 1)))?;
            records.push(rec);
        }
        Self::from_records(records, frame_count)
    }

    pub fn with_frame_size(mut self, size: (u32, u32)) -> Self {
        self.frame_size = Some(size);
        self
    }
}

impl CorrespondenceSource for MatchesFile {
    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn frame_size(&self) -> Option<(u32, u32)> {
        self.frame_size
    }

    fn correspondences(&self, from: usize) -> Result<Vec<Correspondence>, PairError> {
        self.pairs
            .get(&from)
            .cloned()
            .ok_or(PairError::MissingPair { from, to: from + 1 })
    }
}

/// Noise-free matches generated from known inter-frame motions; each pair
/// maps a fixed grid of points through `motions[from]`.
#[derive(Debug, Clone)]
pub struct ExactCorrespondences {
    motions: Vec<Similarity2>,
    points: Vec<Vec2>,
    frame_size: Option<(u32, u32)>,
}

impl ExactCorrespondences {
    pub fn new(motions: Vec<Similarity2>, frame_size: (u32, u32)) -> Self {
        let (w, h) = (f64::from(frame_size.0), f64::from(frame_size.1));
        let points = (0..8)
            .flat_map(|i| (0..8).map(move |j| Vec2::new(w * (i as f64 + 0.5) / 8.0, h * (j as f64 + 0.5) / 8.0)))
            .collect();
        Self {
            motions,
            points,
            frame_size: Some(frame_size),
        }
    }
}

impl CorrespondenceSource for ExactCorrespondences {
    fn frame_count(&self) -> usize {
        self.motions.len() + 1
    }

    fn frame_size(&self) -> Option<(u32, u32)> {
        self.frame_size
    }

    fn correspondences(&self, from: usize) -> Result<Vec<Correspondence>, PairError> {
        let t = self
            .motions
            .get(from)
            .ok_or(PairError::MissingPair { from, to: from + 1 })?;
        Ok(self
            .points
            .iter()
            .map(|&p| Correspondence::new(p, t.apply(p)))
            .collect())
    }
}
