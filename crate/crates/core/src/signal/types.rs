use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SignalError;
use crate::Scalar;

pub const NUM_CHANNELS: usize = 5;
pub const NUM_BANDS: usize = 5;

/// Headset electrode. The declaration order is the canonical vector layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelId {
    AF3,
    T7,
    Pz,
    T8,
    AF4,
}

impl ChannelId {
    pub const ALL: [ChannelId; NUM_CHANNELS] = [
        ChannelId::AF3,
        ChannelId::T7,
        ChannelId::Pz,
        ChannelId::T8,
        ChannelId::AF4,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelId::AF3 => "AF3",
            ChannelId::T7 => "T7",
            ChannelId::Pz => "Pz",
            ChannelId::T8 => "T8",
            ChannelId::AF4 => "AF4",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelId::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown channel {s:?}"))
    }
}

/// EEG frequency band, ordered by ascending frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandId {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl BandId {
    pub const ALL: [BandId; NUM_BANDS] = [
        BandId::Delta,
        BandId::Theta,
        BandId::Alpha,
        BandId::Beta,
        BandId::Gamma,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BandId::Delta => "delta",
            BandId::Theta => "theta",
            BandId::Alpha => "alpha",
            BandId::Beta => "beta",
            BandId::Gamma => "gamma",
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BandId::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown band {s:?}"))
    }
}

/// Supported headset sampling rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum SampleRate {
    #[default]
    Hz128,
    Hz256,
}

impl SampleRate {
    #[inline]
    pub fn hz(self) -> u32 {
        match self {
            SampleRate::Hz128 => 128,
            SampleRate::Hz256 => 256,
        }
    }

    #[inline]
    pub fn as_f64(self) -> f64 {
        self.hz() as f64
    }

    /// Number of samples spanning `seconds`, rounded to the nearest sample.
    pub fn samples_for(self, seconds: f64) -> usize {
        (seconds * self.as_f64()).round().max(0.0) as usize
    }
}

impl TryFrom<u32> for SampleRate {
    type Error = String;

    fn try_from(hz: u32) -> Result<Self, Self::Error> {
        match hz {
            128 => Ok(SampleRate::Hz128),
            256 => Ok(SampleRate::Hz256),
            other => Err(format!("unsupported sample rate {other} Hz (expected 128 or 256)")),
        }
    }
}

impl From<SampleRate> for u32 {
    fn from(rate: SampleRate) -> u32 {
        rate.hz()
    }
}

/// One multichannel sample: a timestamp in seconds and one microvolt value per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EegFrame<T> {
    #[serde(rename = "t")]
    pub timestamp: f64,
    #[serde(rename = "v")]
    pub values: [T; NUM_CHANNELS],
}

impl<T: Scalar> EegFrame<T> {
    pub fn new(timestamp: f64, values: [T; NUM_CHANNELS]) -> Self {
        Self { timestamp, values }
    }

    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite() && self.timestamp >= 0.0 && self.values.iter().all(|v| v.is_finite())
    }
}

/// Fixed-rate slice of the five channels, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EegWindow<T> {
    sample_rate: SampleRate,
    start_time: f64,
    samples: [Vec<T>; NUM_CHANNELS],
}

impl<T: Scalar> EegWindow<T> {
    /// Builds a window, checking that all channels have equal length and finite samples.
    pub fn new(
        sample_rate: SampleRate,
        start_time: f64,
        samples: [Vec<T>; NUM_CHANNELS],
    ) -> Result<Self, SignalError> {
        let len = samples[0].len();
        if samples.iter().any(|ch| ch.len() != len) {
            return Err(SignalError::InvalidParameter(
                "all channels of a window must have the same length".into(),
            ));
        }
        for (c, ch) in samples.iter().enumerate() {
            if let Some(index) = ch.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::NonFinite { channel: ChannelId::ALL[c], index });
            }
        }
        Ok(Self { sample_rate, start_time, samples })
    }

    pub fn zeros(sample_rate: SampleRate, start_time: f64, len: usize) -> Self {
        Self { sample_rate, start_time, samples: std::array::from_fn(|_| vec![T::zero(); len]) }
    }

    pub fn from_frames(sample_rate: SampleRate, frames: &[EegFrame<T>]) -> Result<Self, SignalError> {
        let start_time = frames.first().map_or(0.0, |f| f.timestamp);
        let samples = std::array::from_fn(|c| frames.iter().map(|f| f.values[c]).collect());
        Self::new(sample_rate, start_time, samples)
    }

    #[inline]
    pub fn sample_rate(&self) -> SampleRate {
        self.sample_rate
    }

    #[inline]
    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    /// Samples per channel.
    #[inline]
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate.as_f64()
    }

    #[inline]
    pub fn channel(&self, channel: ChannelId) -> &[T] {
        &self.samples[channel.index()]
    }

    pub fn channel_mut(&mut self, channel: ChannelId) -> &mut Vec<T> {
        &mut self.samples[channel.index()]
    }

    pub fn channels(&self) -> &[Vec<T>; NUM_CHANNELS] {
        &self.samples
    }

    pub fn into_channels(self) -> [Vec<T>; NUM_CHANNELS] {
        self.samples
    }
}

/// Frequency range of every band, in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRangeTable<T> {
    ranges: [(T, T); NUM_BANDS],
}

impl<T: Scalar> Default for BandRangeTable<T> {
    fn default() -> Self {
        let r = |lo: f64, hi: f64| (T::lit(lo), T::lit(hi));
        Self { ranges: [r(0.5, 4.0), r(4.0, 8.0), r(8.0, 13.0), r(13.0, 30.0), r(30.0, 43.0)] }
    }
}

impl<T: Scalar> BandRangeTable<T> {
    /// Ranges must be ascending, contiguous and inside the acquisition passband.
    pub fn new(ranges: [(T, T); NUM_BANDS]) -> Result<Self, SignalError> {
        let lo_limit = T::lit(super::PASSBAND_LOW_HZ);
        let hi_limit = T::lit(super::PASSBAND_HIGH_HZ);
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(SignalError::InvalidParameter(format!(
                    "band {} has an empty or non-finite range",
                    BandId::ALL[i]
                )));
            }
            if i > 0 && ranges[i - 1].1 != lo {
                return Err(SignalError::InvalidParameter(format!(
                    "band {} does not start where {} ends",
                    BandId::ALL[i],
                    BandId::ALL[i - 1]
                )));
            }
        }
        if ranges[0].0 < lo_limit || ranges[NUM_BANDS - 1].1 > hi_limit {
            return Err(SignalError::InvalidParameter(
                "band table must lie within the 0.2-43 Hz passband".into(),
            ));
        }
        Ok(Self { ranges })
    }

    #[inline]
    pub fn range(&self, band: BandId) -> (T, T) {
        self.ranges[band.index()]
    }

    /// Lowest and highest edge covered by the table.
    pub fn span(&self) -> (T, T) {
        (self.ranges[0].0, self.ranges[NUM_BANDS - 1].1)
    }
}

/// Per-channel, per-band power in µV².
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BandPowers<T>(pub [[T; NUM_BANDS]; NUM_CHANNELS]);

impl<T: Scalar> BandPowers<T> {
    pub fn zeros() -> Self {
        Self([[T::zero(); NUM_BANDS]; NUM_CHANNELS])
    }

    #[inline]
    pub fn get(&self, channel: ChannelId, band: BandId) -> T {
        self.0[channel.index()][band.index()]
    }

    #[inline]
    pub fn set(&mut self, channel: ChannelId, band: BandId, power: T) {
        self.0[channel.index()][band.index()] = power;
    }

    /// Channel-major flattening, the layout of the `pow` stream.
    pub fn flatten(&self) -> Vec<T> {
        self.0.iter().flat_map(|row| row.iter().copied()).collect()
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self(self.0.map(|row| row.map(|p| p * factor)))
    }
}
