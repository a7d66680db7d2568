//! Operations shared by the command line and the service.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use loopkit::dataset::{read_jsonl, write_jsonl, DatasetError, FrameLabels, LabelRecord, Manifest};
use loopkit::propagation::{
    propagate_labels, CorrespondenceSource, ImageSequence, MatchConfig, MatchesFile, PropagationConfig,
    PropagationError, RansacConfig, SequenceLabels,
};
use loopkit::OrientedLabel;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Io { .. } => "io",
            PipelineError::Parse { .. } => "parse",
            PipelineError::Invalid(_) => "invalid",
            PipelineError::Dataset(_) => "dataset",
            PipelineError::Propagation(_) => "propagation",
        }
    }
}

pub fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(io_error(path))?;
    read_jsonl(BufReader::new(file)).map_err(|e| PipelineError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_error(path))?;
    write_jsonl(BufWriter::new(file), items)?;
    Ok(())
}

/// Matching and fitting parameters for a propagation run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagateSettings {
    pub ransac: RansacConfig,
    pub matching: MatchConfig,
}

/// A seed file is either one `labels.jsonl` line or a bare list of labels.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SeedFile {
    Frame(FrameLabels),
    List(Vec<LabelRecord>),
}

pub fn records_to_labels(records: &[LabelRecord]) -> Result<Vec<OrientedLabel>, PipelineError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.to_label()
                .map_err(|e| PipelineError::Invalid(format!("label {i}: {e}")))
        })
        .collect()
}

pub fn load_seed(path: &Path) -> Result<Vec<OrientedLabel>, PipelineError> {
    let records = match read_json::<SeedFile>(path)? {
        SeedFile::Frame(f) => f.labels,
        SeedFile::List(l) => l,
    };
    records_to_labels(&records)
}

/// Loads the frames of `manifest` (relative paths resolved against `base`)
/// and propagates `seed` from frame `start`. With `matches`, correspondences
/// come from that file instead of the built-in matcher.
pub fn propagate_sequence(
    manifest: &Manifest,
    base: &Path,
    seed: &[OrientedLabel],
    start: usize,
    matches: Option<&Path>,
    settings: &PropagateSettings,
) -> Result<SequenceLabels, PipelineError> {
    let paths = manifest.resolved_frames(base);
    let config = PropagationConfig {
        ransac: settings.ransac,
    };
    let source: Box<dyn CorrespondenceSource> = match matches {
        Some(path) => {
            let file = File::open(path).map_err(io_error(path))?;
            let mut source = MatchesFile::read(BufReader::new(file), paths.len()).map_err(|e| PipelineError::Parse {
                path: path.to_owned(),
                message: e.to_string(),
            })?;
            if let Some(first) = paths.first() {
                let size = image::image_dimensions(first).map_err(|e| PipelineError::Invalid(format!("{}: {e}", first.display())))?;
                source = source.with_frame_size(size);
            }
            Box::new(source)
        }
        None => Box::new(
            ImageSequence::load(&paths, settings.matching)
                .map_err(|e| PipelineError::Invalid(format!("loading frames: {e}")))?,
        ),
    };
    Ok(propagate_labels(source.as_ref(), seed, start, &config)?)
}

pub fn sequence_records(labels: &SequenceLabels) -> Vec<FrameLabels> {
    labels
        .frames
        .iter()
        .map(|f| FrameLabels::new(f.index, &f.labels))
        .collect()
}
