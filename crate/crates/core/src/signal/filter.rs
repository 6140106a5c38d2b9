//! Butterworth band-pass design and second-order-section filtering.
//!
//! The analog low-pass prototype of order `order / 2` is shifted to a
//! band-pass around the geometric centre of the pre-warped edges, mapped to
//! the z-plane with the bilinear transform and split into biquads. Each
//! section carries one zero at DC and one at Nyquist.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::{EegWindow, SignalError, NUM_CHANNELS};
use crate::Scalar;

/// One second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad<T> {
    pub b0: T,
    pub b1: T,
    pub b2: T,
    pub a1: T,
    pub a2: T,
}

impl<T: Scalar> Biquad<T> {
    fn response(&self, z_inv: Complex<T>) -> Complex<T> {
        let z_inv2 = z_inv * z_inv;
        let num = Complex::from(self.b0) + z_inv.scale(self.b1) + z_inv2.scale(self.b2);
        let den = Complex::from(T::one()) + z_inv.scale(self.a1) + z_inv2.scale(self.a2);
        num / den
    }

    /// Both poles strictly inside the unit circle (Jury conditions for a quadratic).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < T::one() && self.a1.abs() < T::one() + self.a2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients<T> {
    sections: Vec<Biquad<T>>,
    sample_rate: T,
}

impl<T: Scalar> FilterCoefficients<T> {
    /// Wraps an externally supplied cascade after checking it is non-empty and stable.
    pub fn from_sections(sections: Vec<Biquad<T>>, sample_rate: T) -> Result<Self, SignalError> {
        if sections.is_empty() {
            return Err(SignalError::InvalidParameter("filter needs at least one section".into()));
        }
        if let Some(i) = sections.iter().position(|s| !s.is_stable()) {
            return Err(SignalError::InvalidParameter(format!("section {i} is unstable")));
        }
        Ok(Self { sections, sample_rate })
    }

    pub fn sections(&self) -> &[Biquad<T>] {
        &self.sections
    }

    pub fn sample_rate(&self) -> T {
        self.sample_rate
    }

    /// Complex frequency response of the cascade at `freq_hz`.
    pub fn response_at(&self, freq_hz: T) -> Complex<T> {
        let omega = T::TAU() * freq_hz / self.sample_rate;
        let z_inv = Complex::new(omega.cos(), -omega.sin());
        self.sections
            .iter()
            .fold(Complex::from(T::one()), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude_at(&self, freq_hz: T) -> T {
        self.response_at(freq_hz).norm()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Fresh zero-state filter memory for one channel.
    pub fn state(&self) -> FilterState<T> {
        FilterState { delays: vec![[T::zero(); 2]; self.sections.len()] }
    }
}

/// Transposed direct-form II delay line for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState<T> {
    delays: Vec<[T; 2]>,
}

impl<T: Scalar> FilterState<T> {
    #[inline]
    pub fn process(&mut self, coeffs: &FilterCoefficients<T>, x: T) -> T {
        let mut y = x;
        for (s, d) in coeffs.sections.iter().zip(self.delays.iter_mut()) {
            let input = y;
            y = s.b0 * input + d[0];
            d[0] = s.b1 * input - s.a1 * y + d[1];
            d[1] = s.b2 * input - s.a2 * y;
        }
        y
    }

    pub fn reset(&mut self) {
        self.delays.iter_mut().for_each(|d| *d = [T::zero(); 2]);
    }
}

/// Designs a Butterworth band-pass of total order `order` (2, 4, 6 or 8).
pub fn design_bandpass<T: Scalar>(
    low_hz: T,
    high_hz: T,
    sample_rate: T,
    order: usize,
) -> Result<FilterCoefficients<T>, SignalError> {
    let two = T::lit(2.0);
    let nyquist = sample_rate / two;
    if !(low_hz.is_finite() && high_hz.is_finite() && sample_rate.is_finite()) {
        return Err(SignalError::InvalidParameter("filter parameters must be finite".into()));
    }
    if !(T::zero() < low_hz && low_hz < high_hz && high_hz < nyquist) {
        return Err(SignalError::InvalidParameter(format!(
            "band-pass edges must satisfy 0 < low ({low_hz}) < high ({high_hz}) < fs/2 ({nyquist})"
        )));
    }
    if !matches!(order, 2 | 4 | 6 | 8) {
        return Err(SignalError::InvalidParameter(format!(
            "band-pass order must be 2, 4, 6 or 8, got {order}"
        )));
    }

    let fs2 = two * sample_rate;
    let warp = |f: T| fs2 * (T::PI() * f / sample_rate).tan();
    let (w_lo, w_hi) = (warp(low_hz), warp(high_hz));
    let center_sq = w_lo * w_hi;
    let bandwidth = w_hi - w_lo;

    let proto_order = order / 2;
    let to_z = |s: Complex<T>| (Complex::from(fs2) + s) / (Complex::from(fs2) - s);

    // Each upper-half-plane prototype pole contributes its two band-pass
    // images; conjugates come from the mirrored prototype pole.
    let mut sections = Vec::with_capacity(proto_order);
    for k in 0..proto_order {
        let angle = T::PI() * T::lit((2 * k + proto_order + 1) as f64) / T::lit((2 * proto_order) as f64);
        let p = Complex::new(angle.cos(), angle.sin());
        if p.im < -T::epsilon() {
            continue;
        }
        let pb = p.scale(bandwidth);
        let disc = (pb * pb - Complex::from(T::lit(4.0) * center_sq)).sqrt();
        let s1 = (pb + disc).unscale(two);
        let s2 = (pb - disc).unscale(two);
        let (z1, z2) = (to_z(s1), to_z(s2));
        if p.im.abs() <= T::epsilon() {
            // real prototype pole: the two images are a real pair or a conjugate pair
            sections.push(section_from_poles(z1, z2));
        } else {
            sections.push(section_from_poles(z1, z1.conj()));
            sections.push(section_from_poles(z2, z2.conj()));
        }
    }

    let mut coeffs = FilterCoefficients { sections, sample_rate };
    let center_hz = (center_sq.sqrt() / fs2).atan() * sample_rate / T::PI();
    let gain = coeffs.magnitude_at(center_hz);
    let per_section = gain.powf(-T::one() / T::lit(coeffs.sections.len() as f64));
    for s in &mut coeffs.sections {
        s.b0 *= per_section;
        s.b1 *= per_section;
        s.b2 *= per_section;
    }
    debug_assert!(coeffs.is_stable());
    Ok(coeffs)
}

fn section_from_poles<T: Scalar>(p1: Complex<T>, p2: Complex<T>) -> Biquad<T> {
    Biquad {
        b0: T::one(),
        b1: T::zero(),
        b2: -T::one(),
        a1: -(p1 + p2).re,
        a2: (p1 * p2).re,
    }
}

/// Filters every channel independently and causally from zero initial state.
pub fn apply_filter<T: Scalar>(
    coeffs: &FilterCoefficients<T>,
    window: &EegWindow<T>,
) -> Result<EegWindow<T>, SignalError> {
    let window_rate = window.sample_rate().as_f64();
    let filter_rate = coeffs.sample_rate.to_f64_lossy();
    if (window_rate - filter_rate).abs() > 1e-9 {
        return Err(SignalError::SampleRateMismatch { filter: filter_rate, window: window_rate });
    }
    let channels: [Vec<T>; NUM_CHANNELS] = std::array::from_fn(|c| {
        let mut state = coeffs.state();
        window.channels()[c].iter().map(|&x| state.process(coeffs, x)).collect()
    });
    EegWindow::new(window.sample_rate(), window.start_time(), channels)
}
