//! Frame records, the on-disk dataset layout, split protocols,
//! normalisation, augmentation and the synthetic dataset generator.

mod augment;
mod layout;
mod preprocess;
mod split;
pub mod synth;

pub use augment::{apply_augmentation, augment, sample_augmentation, Augmentation};
pub use layout::{load_dataset, write_dataset, write_frame};
pub use preprocess::{percentile, preprocess, PERCENTILE_HIGH, PERCENTILE_LOW, VARIANCE_FLOOR};
pub use split::{fold_of_subjects, make_splits, sort_subject_ids, Split, SplitProtocol, SplitSpec};
pub use synth::{synth_generate, SynthConfig};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PoseAngles, SkeletonJoints};
use crate::image::{DepthFrame, GrayFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// Canonical layout; gray, pose and joints files optional.
    #[serde(alias = "biwi")]
    BiwiLike,
    /// Canonical layout; joints files required (shoulder annotations).
    #[serde(alias = "pandora")]
    PandoraLike,
    /// Canonical layout with every annotation file present.
    Synthetic,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "biwi" | "biwilike" => Ok(Self::BiwiLike),
            "pandora" | "pandoralike" => Ok(Self::PandoraLike),
            "synthetic" | "synth" => Ok(Self::Synthetic),
            other => Err(format!("unknown dataset format {other:?} (expected biwi, pandora or synthetic)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("missing intrinsics file {0}")]
    MissingIntrinsics(PathBuf),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing annotation: {0}")]
    Missing(String),
    #[error("unusable frame: {0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

/// One annotated depth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub subject_id: String,
    pub sequence_id: String,
    pub frame_index: u32,
    pub depth: DepthFrame,
    pub gray: Option<GrayFrame>,
    pub head_center_2d: Option<(f64, f64)>,
    /// Head centre in camera coordinates (mm), when annotated.
    pub head_center_3d: Option<[f64; 3]>,
    pub joints: Option<SkeletonJoints>,
    pub head_pose: Option<PoseAngles>,
    pub shoulder_pose: Option<PoseAngles>,
    pub intrinsics: CameraIntrinsics,
}

impl FrameRecord {
    pub fn id(&self) -> String {
        format!("{}/{}/{:05}", self.subject_id, self.sequence_id, self.frame_index)
    }

    pub fn same_sequence(&self, other: &FrameRecord) -> bool {
        self.subject_id == other.subject_id && self.sequence_id == other.sequence_id
    }
}
