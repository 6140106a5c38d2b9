use std::collections::VecDeque;

use super::{EegFrame, EegWindow, SampleRate, SignalError, NUM_CHANNELS};
use crate::Scalar;

/// Sliding-window geometry in seconds.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { window_s: 2.0, hop_s: 1.0 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.window_s > 0.0 && self.hop_s > 0.0 && self.hop_s <= self.window_s) {
            return Err(SignalError::InvalidParameter(format!(
                "window spec requires window > 0 and 0 < hop <= window (window {}, hop {})",
                self.window_s, self.hop_s
            )));
        }
        Ok(())
    }

    /// Number of complete windows in `duration_s` seconds of signal.
    pub fn count(&self, duration_s: f64, rate: SampleRate) -> usize {
        let n = rate.samples_for(duration_s);
        let (w, h) = (rate.samples_for(self.window_s), rate.samples_for(self.hop_s).max(1));
        if n < w {
            0
        } else {
            (n - w) / h + 1
        }
    }
}

/// Cuts equally spaced frames into overlapping windows, discarding a partial tail.
pub fn segment<T: Scalar>(
    frames: &[EegFrame<T>],
    rate: SampleRate,
    spec: WindowSpec,
) -> Result<Vec<EegWindow<T>>, SignalError> {
    spec.validate()?;
    let period = 1.0 / rate.as_f64();
    for (i, pair) in frames.windows(2).enumerate() {
        if ((pair[1].timestamp - pair[0].timestamp) - period).abs() > period * 1e-3 {
            return Err(SignalError::IrregularFrames { index: i + 1 });
        }
    }
    let w = rate.samples_for(spec.window_s);
    let h = rate.samples_for(spec.hop_s).max(1);
    if frames.len() < w || w == 0 {
        return Ok(Vec::new());
    }
    (0..=(frames.len() - w) / h)
        .map(|k| EegWindow::from_frames(rate, &frames[k * h..k * h + w]))
        .collect()
}

/// Streaming counterpart of [`segment`]: frames go in one at a time and a
/// window comes out every hop once the first window has filled.
#[derive(Debug, Clone)]
pub struct WindowAssembler<T> {
    rate: SampleRate,
    window: usize,
    hop: usize,
    buffer: VecDeque<EegFrame<T>>,
    until_next: usize,
}

impl<T: Scalar> WindowAssembler<T> {
    pub fn new(rate: SampleRate, spec: WindowSpec) -> Result<Self, SignalError> {
        spec.validate()?;
        let window = rate.samples_for(spec.window_s).max(1);
        Ok(Self {
            rate,
            window,
            hop: rate.samples_for(spec.hop_s).max(1),
            buffer: VecDeque::with_capacity(window),
            until_next: window,
        })
    }

    pub fn push(&mut self, frame: EegFrame<T>) -> Option<EegWindow<T>> {
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        self.until_next -= 1;
        if self.until_next > 0 {
            return None;
        }
        self.until_next = self.hop;
        let start = self.buffer.front().map_or(0.0, |f| f.timestamp);
        let samples: [Vec<T>; NUM_CHANNELS] =
            std::array::from_fn(|c| self.buffer.iter().map(|f| f.values[c]).collect());
        // frames are validated upstream, so construction cannot fail on finiteness
        EegWindow::new(self.rate, start, samples).ok()
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.until_next = self.window;
    }
}
