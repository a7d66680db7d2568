//! Synthetic scenes with exact labels, a noisy stand-in detector, and the
//! on-disk formats shared by the command line and the service.

mod io;
mod oracle;
mod render;

pub use io::{
    read_jsonl, write_jsonl, FrameLabels, FramePredictions, LabelRecord, Manifest, PredictionRecord,
};
pub use oracle::{frame_seed, oracle_detector, NoiseModel};
pub use render::{
    chain_motions, generate_sequence, lift_rotate_motions, procedural_background, random_scene,
    render_synthetic_frame, render_view, FrameRecord, Placement, Scene, Sprite,
};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("placement {placement} is entirely outside frame {frame}")]
    PlacementOutOfFrame { placement: usize, frame: usize },
    #[error("invalid sprite: {0}")]
    InvalidSprite(&'static str),
    #[error("invalid noise model: {0}")]
    InvalidNoise(&'static str),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
