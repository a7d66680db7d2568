use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_similarity_ransac, CorrespondenceSource, PairError, RansacConfig, SimilarityEstimate};
use crate::encoding::OrientedLabel;
use crate::geometry::{visible_in_frame, Similarity2};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub ransac: RansacConfig,
}

/// Labels of one frame after propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedFrame {
    pub index: usize,
    /// Motion from the previous frame; identity on the seed frame.
    pub step: Similarity2,
    /// Motion from the seed frame.
    pub chained: Similarity2,
    pub inlier_count: usize,
    pub inlier_rms: f64,
    pub labels: Vec<OrientedLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLabels {
    pub start_frame: usize,
    pub frames: Vec<PropagatedFrame>,
}

impl SequenceLabels {
    pub fn frame(&self, index: usize) -> Option<&PropagatedFrame> {
        index
            .checked_sub(self.start_frame)
            .and_then(|i| self.frames.get(i))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PropagationError {
    #[error("seed annotation is empty")]
    EmptySeed,
    #[error("start frame {start} is outside a sequence of {frames} frames")]
    StartOutOfRange { start: usize, frames: usize },
    /// Estimation failed between `frame` and `frame + 1`; `partial` holds every
    /// frame up to and including `frame`.
    #[error("propagation broken between frames {frame} and {}: {cause}", frame + 1)]
    Broken {
        frame: usize,
        cause: PairError,
        partial: Box<SequenceLabels>,
    },
}

impl PropagationError {
    pub fn partial(&self) -> Option<&SequenceLabels> {
        match self {
            PropagationError::Broken { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Carries `seed` labels (on frame `start`) through all later frames of
/// `source`.
///
/// Pair estimates are computed in parallel; chaining is sequential. Labels
/// whose box leaves the image entirely are dropped for the rest of the run.
pub fn propagate_labels(
    source: &dyn CorrespondenceSource,
    seed: &[OrientedLabel],
    start: usize,
    config: &PropagationConfig,
) -> Result<SequenceLabels, PropagationError> {
    if seed.is_empty() {
        return Err(PropagationError::EmptySeed);
    }
    let count = source.frame_count();
    if start >= count {
        return Err(PropagationError::StartOutOfRange {
            start,
            frames: count,
        });
    }
    let size = source.frame_size();

    let estimates: Vec<Result<SimilarityEstimate, PairError>> = (start..count - 1)
        .into_par_iter()
        .map(|from| {
            let matches = source.correspondences(from)?;
            Ok(estimate_similarity_ransac(&matches, &config.ransac)?)
        })
        .collect();

    let mut labels: Vec<OrientedLabel> = seed.to_vec();
    let mut frames = vec![PropagatedFrame {
        index: start,
        step: Similarity2::IDENTITY,
        chained: Similarity2::IDENTITY,
        inlier_count: 0,
        inlier_rms: 0.0,
        labels: labels.clone(),
    }];
    let mut chained = Similarity2::IDENTITY;
    for (offset, estimate) in estimates.into_iter().enumerate() {
        let from = start + offset;
        let estimate = match estimate {
            Ok(e) => e,
            Err(cause) => {
                log::warn!("propagation stopped at frame {from}: {cause}");
                return Err(PropagationError::Broken {
                    frame: from,
                    cause,
                    partial: Box::new(SequenceLabels {
                        start_frame: start,
                        frames,
                    }),
                });
            }
        };
        let step = estimate.transform;
        chained = step.compose(&chained);
        let index = from + 1;
        labels = labels
            .iter()
            .map(|l| l.transformed(&step))
            .filter(|l| match size {
                Some(size) if !visible_in_frame(&l.obb, size) => {
                    log::info!("frame {index}: dropping class {} label that left the image", l.class_id);
                    false
                }
                _ => true,
            })
            .collect();
        frames.push(PropagatedFrame {
            index,
            step,
            chained,
            inlier_count: estimate.inlier_count,
            inlier_rms: estimate.inlier_rms,
            labels: labels.clone(),
        });
    }
    Ok(SequenceLabels {
        start_frame: start,
        frames,
    })
}
