//! Oriented object detection on top of any axis-aligned detector.
//!
//! The toolkit folds the orientation of an object into its class label so
//! that a generic detector can be trained on it, then rebuilds oriented
//! boxes from the detector's output. Around that codec it provides:
//!
//! - [`geometry`]: oriented/axis-aligned boxes, similarity transforms, exact
//!   polygon IoU and the orientation-aware OIoU.
//! - [`encoding`]: angle quantization and the class expansion codec.
//! - [`propagation`]: label propagation through a video from a single
//!   annotated frame (feature matching, RANSAC similarity fitting).
//! - [`dataset`]: synthetic scenes and sequences with exact ground truth, an
//!   oracle detector, and the on-disk label formats.
//! - [`eval`]: matching, precision/recall sweeps, AP/mAP and OIoU statistics.
//! - [`servo`]: the proportional alignment laws and a planar simulator.
//!
//! The guide in `book/` walks through each part; its code samples are
//! compiled and run as doctests of this crate.

pub mod dataset;
pub mod encoding;
pub mod eval;
pub mod geometry;
pub mod propagation;
pub mod servo;

pub use encoding::{AngleQuantizer, LoopCodec, ObjectCatalog, OrientedLabel, UnorientedLabel};
pub use geometry::{Aabb, Obb, Similarity2, Vec2};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/encoding.md")]
    mod encoding {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/servo.md")]
    mod servo {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
