//! Label propagation through a video: estimate the similarity between each
//! pair of consecutive frames, chain the estimates, and carry the oriented
//! labels of a seed frame through the rest of the sequence.

mod estimate;
mod features;
mod sequence;
mod source;

pub use estimate::{
    estimate_similarity_lsq, estimate_similarity_ransac, Correspondence, EstimationError,
    RansacConfig, SimilarityEstimate,
};
pub use features::{detect_and_match, detect_corners, Corner, MatchConfig, MatchError};
pub use sequence::{
    propagate_labels, PropagatedFrame, PropagationConfig, PropagationError, SequenceLabels,
};
pub use source::{
    CorrespondenceSource, ExactCorrespondences, ImageSequence, MatchesFile, MatchesRecord,
    PairError,
};
