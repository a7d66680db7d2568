//! On-disk project layout. Everything the service knows lives here:
//!
//! ```text
//! <root>/sequences/<id>/manifest.json     frame paths made absolute
//! <root>/sequences/<id>/annotations/<i>.json
//! <root>/sequences/<id>/status.json
//! <root>/sequences/<id>/labels.jsonl
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use loopkit::dataset::{FrameLabels, LabelRecord, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("stale version {given}, current is {current}")]
    StaleVersion { given: u64, current: u64 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Body of `POST /sequences`.
#[derive(Debug, Clone, Deserialize)]
pub struct NewSequence {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub id: String,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: usize,
    /// Zero until the first write.
    pub version: u64,
    pub labels: Vec<LabelRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Idle,
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    pub job: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_frame: Option<usize>,
    /// Frames with labels after the job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broken_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JobStatus {
    pub fn idle() -> Self {
        Self {
            state: JobState::Idle,
            job: 0,
            from_frame: None,
            labeled_frames: None,
            broken_frame: None,
            error: None,
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self.state, JobState::Queued | JobState::Running)
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct ProjectStore {
    root: PathBuf,
}

impl ProjectStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(root.join("sequences"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        let dir = self.root.join("sequences").join(id);
        if valid_id(id) && dir.join("manifest.json").is_file() {
            Ok(dir)
        } else {
            Err(StoreError::NotFound(format!("sequence {id}")))
        }
    }

    pub fn ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = std::fs::read_dir(self.root.join("sequences"))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("manifest.json").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn list(&self) -> Result<Vec<SequenceInfo>, StoreError> {
        self.ids()?.iter().map(|id| self.info(id)).collect()
    }

    pub fn manifest(&self, id: &str) -> Result<Manifest, StoreError> {
        let path = self.dir(id)?.join("manifest.json");
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| StoreError::Invalid(format!("stored manifest of {id}: {e}")))
    }

    pub fn info(&self, id: &str) -> Result<SequenceInfo, StoreError> {
        let manifest = self.manifest(id)?;
        let (width, height) = match manifest.frames.first() {
            Some(p) => image::image_dimensions(p).map_err(|e| StoreError::Invalid(format!("{}: {e}", p.display())))?,
            None => (0, 0),
        };
        Ok(SequenceInfo {
            id: id.to_owned(),
            frames: manifest.frames.len(),
            width,
            height,
            fps: manifest.fps,
        })
    }

    /// Registers a sequence. Relative frame paths are resolved against the
    /// store root and every frame must exist.
    pub fn create(&self, new: NewSequence) -> Result<SequenceInfo, StoreError> {
        if new.manifest.frames.is_empty() {
            return Err(StoreError::Invalid("manifest has no frames".into()));
        }
        let frames = new.manifest.resolved_frames(&self.root);
        if let Some(missing) = frames.iter().find(|p| !p.is_file()) {
            return Err(StoreError::Invalid(format!("frame {} does not exist", missing.display())));
        }
        let id = match new.id {
            Some(id) if !valid_id(&id) => {
                return Err(StoreError::Invalid(format!("invalid sequence id {id:?}")));
            }
            Some(id) => id,
            None => {
                let taken = self.ids()?;
                (1..).map(|n| format!("seq-{n}")).find(|c| !taken.contains(c)).expect("unbounded")
            }
        };
        let dir = self.root.join("sequences").join(&id);
        if dir.join("manifest.json").exists() {
            return Err(StoreError::Conflict(format!("sequence {id} already exists")));
        }
        std::fs::create_dir_all(dir.join("annotations"))?;
        let manifest = Manifest {
            frames,
            ..new.manifest
        };
        write_atomic(&dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest).expect("serializes"))?;
        write_atomic(&dir.join("status.json"), serde_json::to_vec(&JobStatus::idle()).expect("serializes"))?;
        self.info(&id)
    }

    pub fn frame_path(&self, id: &str, frame: usize) -> Result<PathBuf, StoreError> {
        self.manifest(id)?
            .frames
            .get(frame)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(format!("frame {frame} of {id}")))
    }

    fn check_frame(&self, id: &str, frame: usize) -> Result<PathBuf, StoreError> {
        let dir = self.dir(id)?;
        if frame >= self.manifest(id)?.frames.len() {
            return Err(StoreError::NotFound(format!("frame {frame} of {id}")));
        }
        Ok(dir)
    }

    pub fn annotation(&self, id: &str, frame: usize) -> Result<Annotation, StoreError> {
        let path = self.check_frame(id, frame)?.join("annotations").join(format!("{frame}.json"));
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| StoreError::Invalid(format!("stored annotation: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Annotation {
                frame,
                version: 0,
                labels: Vec::new(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    /// Replaces the labels of a frame if `version` is the current one.
    /// Callers serialize writes per sequence.
    pub fn write_annotation(
        &self,
        id: &str,
        frame: usize,
        version: u64,
        labels: Vec<LabelRecord>,
    ) -> Result<Annotation, StoreError> {
        let current = self.annotation(id, frame)?;
        if version != current.version {
            return Err(StoreError::StaleVersion {
                given: version,
                current: current.version,
            });
        }
        let next = Annotation {
            frame,
            version: current.version + 1,
            labels,
        };
        let path = self.dir(id)?.join("annotations").join(format!("{frame}.json"));
        write_atomic(&path, serde_json::to_vec_pretty(&next).expect("serializes"))?;
        Ok(next)
    }

    pub fn status(&self, id: &str) -> Result<JobStatus, StoreError> {
        let path = self.dir(id)?.join("status.json");
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| StoreError::Invalid(format!("stored status: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(JobStatus::idle()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_status(&self, id: &str, status: &JobStatus) -> Result<(), StoreError> {
        let path = self.dir(id)?.join("status.json");
        write_atomic(&path, serde_json::to_vec(status).expect("serializes"))?;
        Ok(())
    }

    pub fn labels_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.dir(id)?.join("labels.jsonl"))
    }

    pub fn labels(&self, id: &str) -> Result<Option<Vec<FrameLabels>>, StoreError> {
        let path = self.labels_path(id)?;
        match std::fs::File::open(&path) {
            Ok(f) => loopkit::dataset::read_jsonl(std::io::BufReader::new(f))
                .map(Some)
                .map_err(|e| StoreError::Invalid(format!("stored labels: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_labels(&self, id: &str, records: &[FrameLabels]) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        loopkit::dataset::write_jsonl(&mut buf, records).map_err(|e| StoreError::Invalid(e.to_string()))?;
        write_atomic(&self.labels_path(id)?, buf)?;
        Ok(())
    }

    /// Marks jobs that were queued or running when the process stopped as
    /// failed.
    pub fn recover(&self) -> Result<(), StoreError> {
        for id in self.ids()? {
            let mut status = self.status(&id)?;
            if status.is_active() {
                status.state = JobState::Failed;
                status.error = Some("interrupted by a service restart".into());
                self.write_status(&id, &status)?;
            }
        }
        Ok(())
    }
}

/// Writes through a temporary file so readers never see partial content.
fn write_atomic(path: &Path, bytes: Vec<u8>) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}
