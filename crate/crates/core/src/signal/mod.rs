//! Signal-processing kernel: band-pass filtering, windowing, Welch band power
//! and the 25-component log band-power feature vector.
//!
//! Every vector or matrix indexed by channel and band uses the canonical
//! layout: channels in [`ChannelId::ALL`] order, bands in [`BandId::ALL`]
//! order, channel-major when flattened.

mod features;
mod filter;
mod segment;
mod types;
mod welch;

pub use features::{features, FeatureVector, FEATURE_EPSILON, FEATURE_LEN};
pub use filter::{apply_filter, design_bandpass, Biquad, FilterCoefficients, FilterState};
pub use segment::{segment, WindowAssembler, WindowSpec};
pub use types::{
    BandId, BandPowers, BandRangeTable, ChannelId, EegFrame, EegWindow, SampleRate, NUM_BANDS,
    NUM_CHANNELS,
};
pub use welch::{band_power, band_power_with, psd_welch, Psd, WelchEstimator};

use thiserror::Error;

/// Default analog passband of the acquisition chain, in Hz.
pub const PASSBAND_LOW_HZ: f64 = 0.2;
pub const PASSBAND_HIGH_HZ: f64 = 43.0;
/// Default band-pass order (two second-order sections).
pub const DEFAULT_FILTER_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample rate mismatch: filter designed for {filter} Hz, window sampled at {window} Hz")]
    SampleRateMismatch { filter: f64, window: f64 },
    #[error("window of {seconds} s is shorter than the 1 s Welch segment")]
    WindowTooShort { seconds: f64 },
    #[error("non-finite sample on channel {channel} at index {index}")]
    NonFinite { channel: ChannelId, index: usize },
    #[error("frames are not equally spaced at the sample period (frame {index})")]
    IrregularFrames { index: usize },
}
