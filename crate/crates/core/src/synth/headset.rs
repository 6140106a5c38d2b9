use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::pink::PinkNoise;
use super::{ArtifactSignature, Episode, EpisodeKind, NoiseModel, SignatureTables, SynthError, Waveform};
use crate::signal::{
    design_bandpass, BandRangeTable, EegFrame, FilterCoefficients, FilterState, SampleRate, NUM_BANDS,
    NUM_CHANNELS,
};
use crate::Scalar;

/// Order of the filters that carve the pink sources into bands.
const BAND_FILTER_ORDER: usize = 8;

struct MentalEpisode {
    start: u64,
    end: u64,
    amplitude_gain: [[f64; NUM_BANDS]; NUM_CHANNELS],
}

struct FacialEpisode {
    start: u64,
    end: u64,
    artifact: ArtifactSignature,
}

/// Frame-by-frame synthetic EEG source. Episodes can be scheduled at any
/// time before they start, which is how live injection works.
pub struct SyntheticHeadset {
    rate: SampleRate,
    signatures: SignatureTables,
    noise: NoiseModel,
    background_rng: ChaCha8Rng,
    artifact_rng: ChaCha8Rng,
    pink: Vec<PinkNoise>,
    band_filters: Vec<FilterCoefficients<f64>>,
    band_states: Vec<FilterState<f64>>,
    band_amplitude: [f64; NUM_BANDS],
    sample: u64,
    mental: Vec<MentalEpisode>,
    facial: Vec<FacialEpisode>,
}

impl SyntheticHeadset {
    pub fn new(rate: SampleRate, signatures: SignatureTables, noise: NoiseModel) -> Result<Self, SynthError> {
        signatures.validate()?;
        noise.validate()?;
        let mut background_rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let mut artifact_rng = ChaCha8Rng::seed_from_u64(noise.seed);
        artifact_rng.set_stream(1);

        let fs = rate.as_f64();
        let bands = BandRangeTable::<f64>::default();
        let band_filters: Vec<_> = crate::signal::BandId::ALL
            .iter()
            .map(|&b| {
                let (lo, hi) = bands.range(b);
                design_bandpass(lo, hi, fs, BAND_FILTER_ORDER)
                    .map_err(|e| SynthError::InvalidSignature(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let pink: Vec<_> = (0..NUM_CHANNELS * NUM_BANDS)
            .map(|_| PinkNoise::new(PinkNoise::DEFAULT_ROWS, &mut background_rng))
            .collect();
        let corner = pink[0].corner_hz(fs);
        let band_amplitude = std::array::from_fn(|b| {
            let var = filtered_pink_variance(&band_filters[b], corner, fs);
            if var > 0.0 {
                (noise.resting_share[b] / var).sqrt()
            } else {
                0.0
            }
        });
        let band_states = (0..NUM_CHANNELS * NUM_BANDS)
            .map(|i| band_filters[i % NUM_BANDS].state())
            .collect();
        Ok(Self {
            rate,
            signatures,
            noise,
            background_rng,
            artifact_rng,
            pink,
            band_filters,
            band_states,
            band_amplitude,
            sample: 0,
            mental: Vec::new(),
            facial: Vec::new(),
        })
    }

    pub fn sample_rate(&self) -> SampleRate {
        self.rate
    }

    /// Timestamp of the next frame to be produced.
    pub fn now(&self) -> f64 {
        self.sample as f64 / self.rate.as_f64()
    }

    pub fn signatures(&self) -> &SignatureTables {
        &self.signatures
    }

    /// Adds an episode. It must not start in the past nor overlap a pending
    /// episode of the same kind, and its label must have a signature.
    pub fn schedule(&mut self, episode: Episode) -> Result<(), SynthError> {
        let fs = self.rate.as_f64();
        let start = (episode.start_s * fs).round() as u64;
        let end = (episode.end_s() * fs).round() as u64;
        if episode.length_s <= 0.0 || !episode.start_s.is_finite() || start < self.sample {
            return Err(SynthError::InvalidScript(format!(
                "episode at {} s cannot be scheduled at {} s",
                episode.start_s,
                self.now()
            )));
        }
        let clash = |s: u64, e: u64| s < end && start < e;
        match episode.kind {
            EpisodeKind::Mental => {
                let label = episode.mental_label()?;
                let gains = if label.is_neutral() {
                    [[1.0; NUM_BANDS]; NUM_CHANNELS]
                } else {
                    self.signatures
                        .mental(label)
                        .ok_or(SynthError::UnknownLabel { kind: episode.kind, label: episode.label.clone() })?
                        .gain_matrix()
                };
                if self.mental.iter().any(|m| clash(m.start, m.end)) {
                    return Err(SynthError::InvalidScript("overlapping mental episodes".into()));
                }
                self.mental.push(MentalEpisode { start, end, amplitude_gain: gains.map(|r| r.map(f64::sqrt)) });
            }
            EpisodeKind::Facial => {
                let label = episode.facial_label()?;
                if label.is_neutral() {
                    return Ok(());
                }
                let artifact = self
                    .signatures
                    .facial(label)
                    .ok_or(SynthError::UnknownLabel { kind: episode.kind, label: episode.label.clone() })?
                    .clone();
                if self.facial.iter().any(|f| clash(f.start, f.end)) {
                    return Err(SynthError::InvalidScript("overlapping facial episodes".into()));
                }
                // the artifact plays for its own duration, clipped to the episode
                let artifact_end = start + (artifact.duration * fs).round() as u64;
                self.facial.push(FacialEpisode { start, end: end.min(artifact_end).max(start + 1), artifact });
            }
        }
        Ok(())
    }

    pub fn next_frame<T: Scalar>(&mut self) -> EegFrame<T> {
        let n = self.sample;
        let t = self.now();
        self.mental.retain(|m| m.end > n);
        self.facial.retain(|f| f.end > n);
        let gains = self
            .mental
            .iter()
            .find(|m| m.start <= n && n < m.end)
            .map(|m| m.amplitude_gain);

        let mut values = [0.0f64; NUM_CHANNELS];
        for (c, value) in values.iter_mut().enumerate() {
            for b in 0..NUM_BANDS {
                let i = c * NUM_BANDS + b;
                let x = self.pink[i].next(&mut self.background_rng);
                let y = self.band_states[i].process(&self.band_filters[b], x);
                let g = gains.map_or(1.0, |g| g[c][b]);
                *value += self.noise.pink_amplitude * self.band_amplitude[b] * g * y;
            }
            let white: f64 = self.background_rng.sample(StandardNormal);
            *value += self.noise.white_amplitude * white;
        }

        let fs = self.rate.as_f64();
        for ep in self.facial.iter().filter(|f| f.start <= n && n < f.end) {
            let a = &ep.artifact;
            for ch in crate::signal::ChannelId::ALL {
                let Some(sign) = a.polarity(ch) else { continue };
                let v = match a.waveform {
                    Waveform::LowFreqTransient => {
                        let tau = (n - ep.start) as f64 / fs;
                        a.amplitude * (std::f64::consts::PI * tau / a.duration).sin()
                    }
                    Waveform::BroadbandBurst => {
                        let z: f64 = self.artifact_rng.sample(StandardNormal);
                        a.amplitude * z
                    }
                };
                values[ch.index()] += sign * v;
            }
        }

        self.sample += 1;
        EegFrame::new(t, values.map(T::lit))
    }
}

/// Variance of unit-variance 1/f noise (flat below `corner`) after `filter`,
/// by numerical integration of |H|² · S(f).
fn filtered_pink_variance(filter: &FilterCoefficients<f64>, corner: f64, fs: f64) -> f64 {
    let nyquist = fs / 2.0;
    let steps = 20_000;
    let (lo, hi) = (corner.ln(), nyquist.ln());
    // ∫ S df over [0, nyquist] with S = 1/f above the corner, 1/corner below
    let total = 1.0 + (nyquist / corner).ln();
    let mut acc = 0.0;
    let dx = (hi - lo) / steps as f64;
    for i in 0..steps {
        let f = (lo + (i as f64 + 0.5) * dx).exp();
        // S(f) df = (1/f) f dx
        acc += filter.magnitude_at(f).powi(2) * dx;
    }
    acc / total
}
