//! Deterministic synthetic headset.
//!
//! The background on every channel is the sum of five band-limited pink
//! noise components (one per EEG band, independently seeded) plus white
//! noise. Band amplitudes follow a resting spectrum whose power falls from
//! delta to gamma. A mental-command episode multiplies the power of selected
//! (channel, band) components; a facial-expression episode adds an artifact
//! waveform to selected channels.

mod headset;
mod pink;
mod replay;
mod scenario;

pub use headset::SyntheticHeadset;
pub use pink::PinkNoise;
pub use replay::{load_ground_truth, load_replay, save_ground_truth, save_replay};
pub use scenario::{ground_truth, Episode, EpisodeKind, ScenarioScript, WindowLabel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{BandId, ChannelId, EegFrame, NUM_BANDS, NUM_CHANNELS};
use crate::vocab::{FacialExpression, MentalCommand};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no signature for {kind} label {label:?}")]
    UnknownLabel { kind: EpisodeKind, label: String },
    #[error("invalid scenario: {0}")]
    InvalidScript(String),
    #[error("invalid signature: {0}")]
    InvalidSignature(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {timestamp} is not after the previous frame")]
    NonMonotonic { line: usize, timestamp: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Multiplicative power gain applied to one (channel, band) component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandGain {
    pub channel: ChannelId,
    pub band: BandId,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandSignature {
    pub label: MentalCommand,
    pub modulation: Vec<BandGain>,
}

impl CommandSignature {
    pub fn new(label: MentalCommand, band: BandId, gain: f64, channels: &[ChannelId]) -> Self {
        Self {
            label,
            modulation: channels.iter().map(|&channel| BandGain { channel, band, gain }).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.label.is_neutral() {
            return Err(SynthError::InvalidSignature("neutral cannot carry a signature".into()));
        }
        if self.modulation.iter().any(|g| !(g.gain.is_finite() && g.gain >= 0.0)) {
            return Err(SynthError::InvalidSignature(format!(
                "{}: gains must be finite and non-negative",
                self.label
            )));
        }
        if self.modulation.iter().all(|g| g.gain == 1.0) {
            return Err(SynthError::InvalidSignature(format!(
                "{}: at least one gain must differ from 1",
                self.label
            )));
        }
        Ok(())
    }

    /// Power gain matrix indexed by (channel, band).
    pub fn gain_matrix(&self) -> [[f64; NUM_BANDS]; NUM_CHANNELS] {
        let mut m = [[1.0; NUM_BANDS]; NUM_CHANNELS];
        for g in &self.modulation {
            m[g.channel.index()][g.band.index()] *= g.gain;
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    /// Half-sine excursion (eye blink, brow movement).
    LowFreqTransient,
    /// Gaussian white burst with the given RMS (muscle activity).
    BroadbandBurst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSignature {
    pub label: FacialExpression,
    pub affected_channels: Vec<ChannelId>,
    /// Subset of `affected_channels` that receive the waveform with negative polarity.
    #[serde(default)]
    pub inverted_channels: Vec<ChannelId>,
    pub waveform: Waveform,
    pub amplitude: f64,
    pub duration: f64,
}

impl ArtifactSignature {
    fn transient(label: FacialExpression, channels: &[ChannelId], inverted: &[ChannelId], amplitude: f64, duration: f64) -> Self {
        Self {
            label,
            affected_channels: channels.to_vec(),
            inverted_channels: inverted.to_vec(),
            waveform: Waveform::LowFreqTransient,
            amplitude,
            duration,
        }
    }

    fn burst(label: FacialExpression, channels: &[ChannelId], amplitude: f64, duration: f64) -> Self {
        Self {
            label,
            affected_channels: channels.to_vec(),
            inverted_channels: Vec::new(),
            waveform: Waveform::BroadbandBurst,
            amplitude,
            duration,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.label.is_neutral() {
            return Err(SynthError::InvalidSignature("neutral cannot carry an artifact".into()));
        }
        if !(self.amplitude > 0.0 && self.duration > 0.0) {
            return Err(SynthError::InvalidSignature(format!(
                "{}: amplitude and duration must be positive",
                self.label
            )));
        }
        if self.affected_channels.is_empty()
            || self.inverted_channels.iter().any(|c| !self.affected_channels.contains(c))
        {
            return Err(SynthError::InvalidSignature(format!(
                "{}: inverted channels must be a subset of a non-empty affected set",
                self.label
            )));
        }
        Ok(())
    }

    fn polarity(&self, channel: ChannelId) -> Option<f64> {
        if !self.affected_channels.contains(&channel) {
            None
        } else if self.inverted_channels.contains(&channel) {
            Some(-1.0)
        } else {
            Some(1.0)
        }
    }
}

/// Mental and facial signature tables used by the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureTables {
    pub mental: Vec<CommandSignature>,
    pub facial: Vec<ArtifactSignature>,
}

impl Default for SignatureTables {
    fn default() -> Self {
        use BandId::*;
        use ChannelId::*;
        use FacialExpression as F;
        use MentalCommand as M;
        Self {
            mental: vec![
                CommandSignature::new(M::Push, Beta, 4.0, &[AF3, AF4]),
                CommandSignature::new(M::Pull, Theta, 4.0, &[AF3, AF4]),
                CommandSignature::new(M::Lift, Alpha, 0.25, &[Pz]),
                CommandSignature::new(M::Drop, Alpha, 4.0, &[Pz]),
                CommandSignature::new(M::Left, Beta, 4.0, &[T7]),
                CommandSignature::new(M::Right, Beta, 4.0, &[T8]),
            ],
            facial: vec![
                ArtifactSignature::transient(F::Blink, &[AF3, AF4], &[], 150.0, 0.4),
                ArtifactSignature::transient(F::WinkL, &[AF3], &[], 150.0, 0.4),
                ArtifactSignature::transient(F::WinkR, &[AF4], &[], 150.0, 0.4),
                ArtifactSignature::transient(F::Frown, &[AF3, AF4], &[AF4], 170.0, 0.6),
                ArtifactSignature::transient(F::Surprise, &[AF3, AF4], &[AF3], 170.0, 0.6),
                ArtifactSignature::burst(F::Clench, &[T7, T8], 60.0, 1.0),
                ArtifactSignature::burst(F::Smile, &[T7, T8], 40.0, 0.8),
            ],
        }
    }
}

impl SignatureTables {
    pub fn mental(&self, label: MentalCommand) -> Option<&CommandSignature> {
        self.mental.iter().find(|s| s.label == label)
    }

    pub fn facial(&self, label: FacialExpression) -> Option<&ArtifactSignature> {
        self.facial.iter().find(|s| s.label == label)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.mental.iter().try_for_each(CommandSignature::validate)?;
        self.facial.iter().try_for_each(ArtifactSignature::validate)
    }

    /// Copy with every gain of `label` raised to `factor`-times its distance from 1
    /// in log space (so 2.0 squares a gain of 4 to 16).
    pub fn with_scaled_gain(&self, label: MentalCommand, factor: f64) -> Self {
        let mut out = self.clone();
        for sig in out.mental.iter_mut().filter(|s| s.label == label) {
            for g in &mut sig.modulation {
                g.gain = g.gain.powf(factor);
            }
        }
        out
    }
}

/// Background noise parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// RMS of the band-limited pink background per channel, µV.
    pub pink_amplitude: f64,
    /// RMS of the broadband white component per channel, µV.
    pub white_amplitude: f64,
    pub seed: u64,
    /// Share of the pink power carried by each band at rest (sums to 1).
    #[serde(default = "default_resting_share")]
    pub resting_share: [f64; NUM_BANDS],
}

fn default_resting_share() -> [f64; NUM_BANDS] {
    [0.40, 0.25, 0.17, 0.12, 0.06]
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { pink_amplitude: 10.0, white_amplitude: 2.0, seed: 42, resting_share: default_resting_share() }
    }
}

impl NoiseModel {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn silent() -> Self {
        Self { pink_amplitude: 0.0, white_amplitude: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.pink_amplitude >= 0.0
            && self.white_amplitude >= 0.0
            && self.pink_amplitude.is_finite()
            && self.white_amplitude.is_finite()
            && self.resting_share.iter().all(|s| s.is_finite() && *s >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidScript("noise amplitudes and shares must be finite and >= 0".into()))
        }
    }
}

/// Runs a whole script: frames plus the per-window ground truth on the
/// default 2 s / 1 s grid.
pub fn generate<T: Scalar>(
    script: &ScenarioScript,
    signatures: &SignatureTables,
    noise: &NoiseModel,
) -> Result<(Vec<EegFrame<T>>, Vec<WindowLabel>), SynthError> {
    script.validate()?;
    let mut headset = SyntheticHeadset::new(script.sample_rate, signatures.clone(), noise.clone())?;
    for ep in &script.episodes {
        headset.schedule(ep.clone())?;
    }
    let n = script.sample_rate.samples_for(script.duration);
    let frames = (0..n).map(|_| headset.next_frame()).collect();
    let labels = ground_truth(script, crate::signal::WindowSpec::default());
    Ok((frames, labels))
}
