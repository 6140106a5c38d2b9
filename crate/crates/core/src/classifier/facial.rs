use serde::{Deserialize, Serialize};

use super::Detection;
use crate::signal::{ChannelId, EegWindow, WelchEstimator, PASSBAND_HIGH_HZ, PASSBAND_LOW_HZ};
use crate::vocab::FacialExpression;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FacialThresholds {
    /// Frontal peak that counts as an eye or brow transient, µV.
    pub transient_uv: f64,
    /// Maximum AF3/AF4 peak separation for a bilateral event, s.
    pub pairing_s: f64,
    pub emg_band_hz: (f64, f64),
    /// Temporal over parietal EMG-band power ratio that marks muscle activity.
    pub emg_ratio: f64,
    /// Burst RMS above which muscle activity is a clench rather than a smile, µV.
    pub clench_rms_uv: f64,
    /// Span over which burst RMS is measured, s.
    pub burst_span_s: f64,
}

impl Default for FacialThresholds {
    fn default() -> Self {
        Self {
            transient_uv: 100.0,
            pairing_s: 0.05,
            emg_band_hz: (20.0, 43.0),
            emg_ratio: 10.0,
            clench_rms_uv: 50.0,
            burst_span_s: 0.5,
        }
    }
}

/// Rule cascade over a band-passed window: frontal transients first, then
/// temporal muscle bursts, else neutral.
pub struct FacialDetector<T: Scalar> {
    thresholds: FacialThresholds,
    welch: WelchEstimator<T>,
}

/// Signed sample of largest magnitude.
fn peak<T: Scalar>(samples: &[T]) -> f64 {
    samples.iter().map(|v| v.to_f64_lossy()).fold(0.0, |best, v| if v.abs() > best.abs() { v } else { best })
}

fn above<T: Scalar>(samples: &[T], thr: f64) -> Option<(usize, usize)> {
    let first = samples.iter().position(|v| v.to_f64_lossy().abs() > thr)?;
    let last = samples.iter().rposition(|v| v.to_f64_lossy().abs() > thr)?;
    Some((first, last))
}

/// Samples between the supra-threshold stretches of two channels (0 when they overlap).
fn excursion_gap<T: Scalar>(a: &[T], b: &[T], thr: f64) -> Option<usize> {
    let (a0, a1) = above(a, thr)?;
    let (b0, b1) = above(b, thr)?;
    Some(if a1 < b0 { b0 - a1 } else if b1 < a0 { a0 - b1 } else { 0 })
}

impl<T: Scalar> FacialDetector<T> {
    pub fn new(rate: crate::signal::SampleRate, thresholds: FacialThresholds) -> Self {
        Self { thresholds, welch: WelchEstimator::new(rate) }
    }

    pub fn thresholds(&self) -> &FacialThresholds {
        &self.thresholds
    }

    pub fn detect(&self, window: &EegWindow<T>) -> Detection {
        use FacialExpression as F;
        let th = &self.thresholds;
        let start = window.start_time();
        let fs = window.sample_rate().as_f64();
        let excess = |v: f64, thr: f64| (v - thr) / thr;

        let thr = th.transient_uv;
        let (pa, pb) = (peak(window.channel(ChannelId::AF3)), peak(window.channel(ChannelId::AF4)));
        let (a_hit, b_hit) = (pa.abs() > thr, pb.abs() > thr);
        let gap = excursion_gap(window.channel(ChannelId::AF3), window.channel(ChannelId::AF4), thr);
        if a_hit && b_hit && gap.is_some_and(|g| g as f64 / fs <= th.pairing_s) {
            let label = match (pa > 0.0, pb > 0.0) {
                (true, false) => F::Frown,
                (false, true) => F::Surprise,
                _ => F::Blink,
            };
            return Detection::fac(label, excess(pa.abs().min(pb.abs()), thr), start);
        }
        if a_hit || b_hit {
            let (label, p) = if pa.abs() >= pb.abs() { (F::WinkL, pa) } else { (F::WinkR, pb) };
            return Detection::fac(label, excess(p.abs(), thr), start);
        }

        if window.len() >= fs as usize {
            let (lo, hi) = th.emg_band_hz;
            let band = |c| self.welch.psd(window.channel(c)).integrate(T::lit(lo), T::lit(hi)).to_f64_lossy();
            let temporal = 0.5 * (band(ChannelId::T7) + band(ChannelId::T8));
            let parietal = band(ChannelId::Pz);
            if temporal > 0.0 && temporal > th.emg_ratio * parietal {
                let rms = self.burst_rms(window);
                return if rms > th.clench_rms_uv {
                    Detection::fac(F::Clench, excess(rms, th.clench_rms_uv), start)
                } else {
                    let ratio = if parietal > 0.0 { temporal / parietal } else { f64::INFINITY };
                    Detection::fac(F::Smile, excess(ratio, th.emg_ratio), start)
                };
            }
        }
        Detection::fac(F::Neutral, 0.0, start)
    }

    /// Quadratic mean of T7 and T8 over the loudest `burst_span_s`, referred
    /// back to the full band on the assumption of a flat burst spectrum.
    fn burst_rms(&self, window: &EegWindow<T>) -> f64 {
        let fs = window.sample_rate().as_f64();
        let n = window.len();
        let span = ((self.thresholds.burst_span_s * fs).round() as usize).clamp(1, n);
        let (t7, t8) = (window.channel(ChannelId::T7), window.channel(ChannelId::T8));
        let energy: Vec<f64> = t7
            .iter()
            .zip(t8)
            .map(|(a, b)| {
                let (a, b) = (a.to_f64_lossy(), b.to_f64_lossy());
                0.5 * (a * a + b * b)
            })
            .collect();
        let mut acc: f64 = energy[..span].iter().sum();
        let mut best = acc;
        for i in span..n {
            acc += energy[i] - energy[i - span];
            best = best.max(acc);
        }
        let passband = PASSBAND_HIGH_HZ.min(fs / 2.0) - PASSBAND_LOW_HZ;
        (best / span as f64 * (fs / 2.0) / passband).sqrt()
    }
}

/// [`FacialDetector`] with default thresholds.
pub fn detect_facial<T: Scalar>(window: &EegWindow<T>) -> Detection {
    FacialDetector::new(window.sample_rate(), FacialThresholds::default()).detect(window)
}
