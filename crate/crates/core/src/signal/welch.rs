//! Welch power spectral density and band-power integration.
//!
//! Segments are one second long with a periodic Hann taper and 50 % overlap;
//! the one-sided PSD is scaled to µV²/Hz so that integrating it over all
//! bins returns the mean-square of the input. Band integration treats every
//! bin as a rectangle of width `df` centred on its frequency and takes the
//! part of it that falls inside the band, so adjacent bands partition the
//! spectrum exactly.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{BandId, BandPowers, BandRangeTable, EegWindow, SampleRate, SignalError, NUM_CHANNELS};
use crate::Scalar;

/// One-sided power spectral density in µV²/Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Psd<T> {
    pub resolution_hz: T,
    pub density: Vec<T>,
}

impl<T: Scalar> Psd<T> {
    pub fn frequency(&self, bin: usize) -> T {
        self.resolution_hz * T::lit(bin as f64)
    }

    /// Integral of the density over `[low_hz, high_hz]`.
    pub fn integrate(&self, low_hz: T, high_hz: T) -> T {
        let half = self.resolution_hz / T::lit(2.0);
        let mut total = T::zero();
        for (k, &p) in self.density.iter().enumerate() {
            let center = self.frequency(k);
            let lo = (center - half).max(low_hz);
            let hi = (center + half).min(high_hz);
            if hi > lo {
                total += p * (hi - lo);
            }
        }
        total
    }
}

/// Reusable Welch estimator for a given sample rate.
pub struct WelchEstimator<T: Scalar> {
    segment: usize,
    step: usize,
    taper: Vec<T>,
    scale: T,
    fft: Arc<dyn Fft<T>>,
    rate: SampleRate,
}

impl<T: Scalar> WelchEstimator<T> {
    pub fn new(rate: SampleRate) -> Self {
        let segment = rate.hz() as usize;
        let n = T::lit(segment as f64);
        let taper: Vec<T> = (0..segment)
            .map(|i| {
                let x = T::TAU() * T::lit(i as f64) / n;
                T::lit(0.5) * (T::one() - x.cos())
            })
            .collect();
        let power: T = taper.iter().fold(T::zero(), |acc, &w| acc + w * w);
        let fft = FftPlanner::new().plan_fft_forward(segment);
        Self { segment, step: segment / 2, taper, scale: T::one() / (T::lit(rate.as_f64()) * power), fft, rate }
    }

    /// Welch PSD of one channel; `samples` must span at least one segment.
    pub fn psd(&self, samples: &[T]) -> Psd<T> {
        let bins = self.segment / 2 + 1;
        let mut acc = vec![T::zero(); bins];
        let count = (samples.len() - self.segment) / self.step + 1;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.segment];
        for s in 0..count {
            let chunk = &samples[s * self.step..s * self.step + self.segment];
            for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&self.taper) {
                *b = Complex::new(x * w, T::zero());
            }
            self.fft.process(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                let mut p = buf[k].norm_sqr() * self.scale;
                if k != 0 && !(self.segment % 2 == 0 && k == self.segment / 2) {
                    p *= T::lit(2.0);
                }
                *a += p;
            }
        }
        let inv = T::one() / T::lit(count as f64);
        acc.iter_mut().for_each(|a| *a *= inv);
        Psd { resolution_hz: T::lit(self.rate.as_f64() / self.segment as f64), density: acc }
    }

    pub fn band_power(
        &self,
        window: &EegWindow<T>,
        bands: &BandRangeTable<T>,
    ) -> Result<BandPowers<T>, SignalError> {
        if window.sample_rate() != self.rate {
            return Err(SignalError::SampleRateMismatch {
                filter: self.rate.as_f64(),
                window: window.sample_rate().as_f64(),
            });
        }
        if window.len() < self.segment {
            return Err(SignalError::WindowTooShort { seconds: window.duration() });
        }
        let mut out = BandPowers::zeros();
        for c in 0..NUM_CHANNELS {
            let psd = self.psd(&window.channels()[c]);
            for band in BandId::ALL {
                let (lo, hi) = bands.range(band);
                out.0[c][band.index()] = psd.integrate(lo, hi);
            }
        }
        Ok(out)
    }
}

/// Welch PSD of one channel of `window`.
pub fn psd_welch<T: Scalar>(window: &EegWindow<T>, channel: super::ChannelId) -> Result<Psd<T>, SignalError> {
    let est = WelchEstimator::new(window.sample_rate());
    if window.len() < est.segment {
        return Err(SignalError::WindowTooShort { seconds: window.duration() });
    }
    Ok(est.psd(window.channel(channel)))
}

/// Band power of every channel with the default 1 s Hann / 50 % overlap Welch setup.
pub fn band_power<T: Scalar>(
    window: &EegWindow<T>,
    bands: &BandRangeTable<T>,
) -> Result<BandPowers<T>, SignalError> {
    WelchEstimator::new(window.sample_rate()).band_power(window, bands)
}

/// Same as [`band_power`] but reusing a prepared estimator.
pub fn band_power_with<T: Scalar>(
    estimator: &WelchEstimator<T>,
    window: &EegWindow<T>,
    bands: &BandRangeTable<T>,
) -> Result<BandPowers<T>, SignalError> {
    estimator.band_power(window, bands)
}
