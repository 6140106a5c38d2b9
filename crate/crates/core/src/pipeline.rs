//! Streaming signal chain: frames in, per-window band powers and detections
//! out, plus a decimated copy of the filtered signal.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{classify, Detection, FacialDetector, FacialThresholds, Profile};
use crate::signal::{
    design_bandpass, features, BandPowers, BandRangeTable, EegFrame, EegWindow, FeatureVector, FilterCoefficients,
    FilterState, SampleRate, SignalError, WelchEstimator, WindowAssembler, WindowSpec, DEFAULT_FILTER_ORDER,
    NUM_CHANNELS, PASSBAND_HIGH_HZ, PASSBAND_LOW_HZ,
};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamName {
    Com,
    Fac,
    Eeg,
    Pow,
}

impl StreamName {
    pub const ALL: [StreamName; 4] = [StreamName::Com, StreamName::Fac, StreamName::Eeg, StreamName::Pow];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamName::Com => "com",
            StreamName::Fac => "fac",
            StreamName::Eeg => "eeg",
            StreamName::Pow => "pow",
        }
    }

    /// Detection streams carry control decisions and must not be shed.
    pub fn is_control(self) -> bool {
        matches!(self, StreamName::Com | StreamName::Fac)
    }
}

impl fmt::Display for StreamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StreamName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StreamName::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| format!("unknown stream {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventData {
    Detection(Detection),
    Eeg([f64; NUM_CHANNELS]),
    Pow(Vec<f64>),
}

/// One event on one stream; `time` is when the data became available.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamEvent {
    pub stream: StreamName,
    pub time: f64,
    pub data: EventData,
}

impl StreamEvent {
    /// The JSON array carried in the `data` field of an event notification.
    pub fn data_json(&self) -> serde_json::Value {
        match &self.data {
            EventData::Detection(d) => serde_json::json!([d.label.as_str(), d.power]),
            EventData::Eeg(v) => serde_json::json!(v),
            EventData::Pow(v) => serde_json::json!(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub window: WindowSpec,
    pub filter_order: usize,
    /// Keep every n-th filtered frame on the eeg stream.
    pub eeg_decimation: usize,
    pub facial: FacialThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            filter_order: DEFAULT_FILTER_ORDER,
            eeg_decimation: 4,
            facial: FacialThresholds::default(),
        }
    }
}

/// Everything computed for one analysis window.
#[derive(Clone, Debug)]
pub struct WindowResult<T> {
    pub index: usize,
    pub start: f64,
    /// Time the window closed, i.e. when its events are emitted.
    pub time: f64,
    pub powers: BandPowers<T>,
    pub features: FeatureVector<T>,
    /// `None` while the profile cannot classify (untrained).
    pub com: Option<Detection>,
    pub fac: Detection,
}

impl<T: Scalar> WindowResult<T> {
    pub fn events(&self) -> Vec<StreamEvent> {
        let mut out = Vec::with_capacity(3);
        out.push(StreamEvent {
            stream: StreamName::Pow,
            time: self.time,
            data: EventData::Pow(self.powers.flatten().into_iter().map(|p| p.to_f64_lossy()).collect()),
        });
        if let Some(com) = self.com {
            out.push(StreamEvent { stream: StreamName::Com, time: self.time, data: EventData::Detection(com) });
        }
        out.push(StreamEvent { stream: StreamName::Fac, time: self.time, data: EventData::Detection(self.fac) });
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOutput<T> {
    pub eeg: Option<StreamEvent>,
    pub window: Option<WindowResult<T>>,
}

pub struct Pipeline<T: Scalar> {
    rate: SampleRate,
    config: PipelineConfig,
    coeffs: FilterCoefficients<T>,
    states: [FilterState<T>; NUM_CHANNELS],
    assembler: WindowAssembler<T>,
    welch: WelchEstimator<T>,
    bands: BandRangeTable<T>,
    facial: FacialDetector<T>,
    profile: Option<Profile<T>>,
    frames_seen: usize,
    windows_seen: usize,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(rate: SampleRate, config: PipelineConfig, profile: Option<Profile<T>>) -> Result<Self, SignalError> {
        let coeffs = design_bandpass(
            T::lit(PASSBAND_LOW_HZ),
            T::lit(PASSBAND_HIGH_HZ),
            T::lit(rate.as_f64()),
            config.filter_order,
        )?;
        if config.eeg_decimation == 0 {
            return Err(SignalError::InvalidParameter("eeg_decimation must be at least 1".into()));
        }
        if config.window.window_s < 1.0 {
            return Err(SignalError::WindowTooShort { seconds: config.window.window_s });
        }
        let states = std::array::from_fn(|_| coeffs.state());
        Ok(Self {
            rate,
            assembler: WindowAssembler::new(rate, config.window)?,
            welch: WelchEstimator::new(rate),
            bands: BandRangeTable::default(),
            facial: FacialDetector::new(rate, config.facial.clone()),
            coeffs,
            states,
            config,
            profile,
            frames_seen: 0,
            windows_seen: 0,
        })
    }

    pub fn sample_rate(&self) -> SampleRate {
        self.rate
    }

    pub fn profile(&self) -> Option<&Profile<T>> {
        self.profile.as_ref()
    }

    /// Replaces the profile; takes effect from the next window.
    pub fn set_profile(&mut self, profile: Option<Profile<T>>) {
        self.profile = profile;
    }

    pub fn push(&mut self, frame: &EegFrame<T>) -> PipelineOutput<T> {
        let mut filtered = frame.values;
        for (c, v) in filtered.iter_mut().enumerate() {
            *v = self.states[c].process(&self.coeffs, *v);
        }
        let eeg = (self.frames_seen % self.config.eeg_decimation == 0).then(|| StreamEvent {
            stream: StreamName::Eeg,
            time: frame.timestamp,
            data: EventData::Eeg(filtered.map(|v| v.to_f64_lossy())),
        });
        self.frames_seen += 1;
        let window = self.assembler.push(EegFrame::new(frame.timestamp, filtered)).map(|w| self.analyze(&w));
        PipelineOutput { eeg, window }
    }

    fn analyze(&mut self, window: &EegWindow<T>) -> WindowResult<T> {
        let index = self.windows_seen;
        self.windows_seen += 1;
        let powers = self
            .welch
            .band_power(window, &self.bands)
            .expect("window length and rate are fixed at construction");
        let fv = features(&powers);
        let start = window.start_time();
        let com = self.profile.as_ref().and_then(|p| classify(p, &fv, start).ok());
        WindowResult {
            index,
            start,
            time: start + self.config.window.window_s,
            powers,
            features: fv,
            com,
            fac: self.facial.detect(window),
        }
    }

    /// Runs a whole recording and returns the per-window results.
    pub fn run(&mut self, frames: &[EegFrame<T>]) -> Vec<WindowResult<T>> {
        frames.iter().filter_map(|f| self.push(f).window).collect()
    }
}
