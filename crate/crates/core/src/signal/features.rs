use std::ops::Index;

use serde::{Deserialize, Serialize};

use super::{BandId, BandPowers, ChannelId, NUM_BANDS, NUM_CHANNELS};
use crate::Scalar;

pub const FEATURE_LEN: usize = NUM_CHANNELS * NUM_BANDS;
/// Floor added to every band power before taking the log, in µV².
pub const FEATURE_EPSILON: f64 = 1e-12;

/// `log10(power + ε)` for every (channel, band), flattened channel-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector<T>(pub [T; FEATURE_LEN]);

impl<T: Scalar> FeatureVector<T> {
    #[inline]
    pub fn slot(channel: ChannelId, band: BandId) -> usize {
        channel.index() * NUM_BANDS + band.index()
    }

    pub fn get(&self, channel: ChannelId, band: BandId) -> T {
        self.0[Self::slot(channel, band)]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl<T> Index<usize> for FeatureVector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

pub fn features<T: Scalar>(powers: &BandPowers<T>) -> FeatureVector<T> {
    let eps = T::lit(FEATURE_EPSILON);
    let mut out = [T::zero(); FEATURE_LEN];
    for (c, row) in powers.0.iter().enumerate() {
        for (b, &p) in row.iter().enumerate() {
            out[c * NUM_BANDS + b] = (p.max(T::zero()) + eps).log10();
        }
    }
    FeatureVector(out)
}
