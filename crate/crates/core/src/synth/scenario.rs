use std::fmt;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::signal::{SampleRate, WindowSpec};
use crate::vocab::{FacialExpression, MentalCommand};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Mental,
    Facial,
}

impl fmt::Display for EpisodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpisodeKind::Mental => "mental",
            EpisodeKind::Facial => "facial",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start_s: f64,
    pub length_s: f64,
    pub kind: EpisodeKind,
    pub label: String,
}

impl Episode {
    pub fn mental(start_s: f64, length_s: f64, label: MentalCommand) -> Self {
        Self { start_s, length_s, kind: EpisodeKind::Mental, label: label.to_string() }
    }

    pub fn facial(start_s: f64, length_s: f64, label: FacialExpression) -> Self {
        Self { start_s, length_s, kind: EpisodeKind::Facial, label: label.to_string() }
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.length_s
    }

    pub fn mental_label(&self) -> Result<MentalCommand, SynthError> {
        self.label
            .parse()
            .map_err(|_| SynthError::UnknownLabel { kind: EpisodeKind::Mental, label: self.label.clone() })
    }

    pub fn facial_label(&self) -> Result<FacialExpression, SynthError> {
        self.label
            .parse()
            .map_err(|_| SynthError::UnknownLabel { kind: EpisodeKind::Facial, label: self.label.clone() })
    }

    fn overlap(&self, lo: f64, hi: f64) -> f64 {
        (self.end_s().min(hi) - self.start_s.max(lo)).max(0.0)
    }

    pub(crate) fn overlaps(&self, other: &Episode) -> bool {
        self.kind == other.kind && self.start_s < other.end_s() && other.start_s < self.end_s()
    }
}

/// Scripted session: total duration plus timed episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub duration: f64,
    pub sample_rate: SampleRate,
    #[serde(default)]
    pub episodes: Vec<Episode>,
}

impl ScenarioScript {
    pub fn new(duration: f64, sample_rate: SampleRate) -> Self {
        Self { duration, sample_rate, episodes: Vec::new() }
    }

    pub fn with(mut self, episode: Episode) -> Self {
        self.episodes.push(episode);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(SynthError::InvalidScript("duration must be finite and non-negative".into()));
        }
        for (i, ep) in self.episodes.iter().enumerate() {
            if !(ep.start_s >= 0.0 && ep.length_s > 0.0 && ep.end_s() <= self.duration + 1e-9) {
                return Err(SynthError::InvalidScript(format!(
                    "episode {i} ({} {}) lies outside [0, {}]",
                    ep.kind, ep.label, self.duration
                )));
            }
            match ep.kind {
                EpisodeKind::Mental => drop(ep.mental_label()?),
                EpisodeKind::Facial => drop(ep.facial_label()?),
            }
            if let Some(j) = self.episodes[..i].iter().position(|other| other.overlaps(ep)) {
                return Err(SynthError::InvalidScript(format!(
                    "{} episodes {j} and {i} overlap",
                    ep.kind
                )));
            }
        }
        Ok(())
    }

    /// Episodes of `kind`, in start order.
    pub fn episodes_of(&self, kind: EpisodeKind) -> impl Iterator<Item = &Episode> {
        let mut eps: Vec<&Episode> = self.episodes.iter().filter(|e| e.kind == kind).collect();
        eps.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        eps.into_iter()
    }
}

/// Ground-truth labels of one analysis window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub win: usize,
    pub com: MentalCommand,
    pub fac: FacialExpression,
}

/// Labels every window of the segmentation grid. A window takes an episode's
/// label when the episode covers at least half of it.
pub fn ground_truth(script: &ScenarioScript, spec: WindowSpec) -> Vec<WindowLabel> {
    let count = spec.count(script.duration, script.sample_rate);
    (0..count)
        .map(|win| {
            let lo = win as f64 * spec.hop_s;
            let hi = lo + spec.window_s;
            let covering = |kind: EpisodeKind| {
                script
                    .episodes_of(kind)
                    .map(|ep| (ep.overlap(lo, hi), ep))
                    .filter(|(o, _)| *o + 1e-9 >= 0.5 * spec.window_s)
                    .fold(None::<(f64, &Episode)>, |best, cand| match best {
                        Some(b) if b.0 >= cand.0 => Some(b),
                        _ => Some(cand),
                    })
                    .map(|(_, ep)| ep)
            };
            WindowLabel {
                win,
                com: covering(EpisodeKind::Mental)
                    .and_then(|ep| ep.mental_label().ok())
                    .unwrap_or(MentalCommand::Neutral),
                fac: covering(EpisodeKind::Facial)
                    .and_then(|ep| ep.facial_label().ok())
                    .unwrap_or(FacialExpression::Neutral),
            }
        })
        .collect()
}
