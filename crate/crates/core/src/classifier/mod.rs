//! Per-user nearest-centroid classifier for mental commands, plus the
//! rule-based facial-expression detector.

mod facial;
mod profile;
mod training;

pub use facial::{detect_facial, FacialDetector, FacialThresholds};
pub use profile::{
    classify, load_profile, save_profile, train_command, train_command_named, train_neutral, LabelStats, Profile, MIN_TRAINING_WINDOWS,
    NEUTRAL_RADIUS_FLOOR, OUTLIER_RADII, PROFILE_VERSION, STD_FLOOR,
};
pub use training::{TrainingSession, TrainingState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{FacialExpression, MentalCommand};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("insufficient training data: need at least {needed} windows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("profile version {found} cannot be migrated to {expected}")]
    Migration { found: u64, expected: u64 },
    #[error("malformed profile: {0}")]
    Parse(String),
    #[error("non-finite feature value")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionKind {
    Com,
    Fac,
}

/// Label of a detection; the two vocabularies never mix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DetectionLabel {
    Com(MentalCommand),
    Fac(FacialExpression),
}

impl DetectionLabel {
    pub fn kind(self) -> DetectionKind {
        match self {
            DetectionLabel::Com(_) => DetectionKind::Com,
            DetectionLabel::Fac(_) => DetectionKind::Fac,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectionLabel::Com(m) => m.as_str(),
            DetectionLabel::Fac(f) => f.as_str(),
        }
    }

    pub fn is_neutral(self) -> bool {
        match self {
            DetectionLabel::Com(m) => m.is_neutral(),
            DetectionLabel::Fac(f) => f.is_neutral(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub label: DetectionLabel,
    /// Confidence in `[0, 1]`.
    pub power: f64,
    pub window_start: f64,
}

impl Detection {
    pub fn com(label: MentalCommand, power: f64, window_start: f64) -> Self {
        Self { label: DetectionLabel::Com(label), power: power.clamp(0.0, 1.0), window_start }
    }

    pub fn fac(label: FacialExpression, power: f64, window_start: f64) -> Self {
        Self { label: DetectionLabel::Fac(label), power: power.clamp(0.0, 1.0), window_start }
    }

    pub fn kind(&self) -> DetectionKind {
        self.label.kind()
    }
}
