use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierError, Detection};
use crate::signal::{FeatureVector, FEATURE_LEN, NUM_BANDS, NUM_CHANNELS};
use crate::vocab::MentalCommand;
use crate::Scalar;

pub const PROFILE_VERSION: u64 = 1;
/// One 8 s recording at 2 s windows / 1 s hop.
pub const MIN_TRAINING_WINDOWS: usize = 7;
pub const STD_FLOOR: f64 = 1e-6;
pub const NEUTRAL_RADIUS_FLOOR: f64 = 1.0;
const NEUTRAL_RADIUS_QUANTILE: f64 = 0.95;
/// A window farther than this many neutral radii from every centroid matches
/// no trained pattern and is reported as neutral.
pub const OUTLIER_RADII: f64 = 2.0;

/// Running sum of raw (un-normalized) feature vectors for one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LabelStats<T> {
    pub count: usize,
    pub sum: [T; FEATURE_LEN],
}

impl<T: Scalar> LabelStats<T> {
    fn mean(&self) -> [T; FEATURE_LEN] {
        let n = T::lit(self.count as f64);
        self.sum.map(|s| s / n)
    }
}

/// A user's trained model. Centroids live in z-scored feature space
/// relative to the neutral statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Profile<T> {
    pub version: u64,
    pub name: String,
    pub feature_mean: [T; FEATURE_LEN],
    pub feature_std: [T; FEATURE_LEN],
    pub neutral_radius: T,
    pub neutral_windows: usize,
    pub centroids: BTreeMap<MentalCommand, [T; FEATURE_LEN]>,
    pub trained_labels: BTreeSet<MentalCommand>,
    /// Raw sums behind each centroid, so retraining re-averages over every window seen.
    pub accumulated: BTreeMap<MentalCommand, LabelStats<T>>,
}

impl<T: Scalar> Profile<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            version: PROFILE_VERSION,
            name: name.into(),
            feature_mean: [T::zero(); FEATURE_LEN],
            feature_std: [T::one(); FEATURE_LEN],
            neutral_radius: T::zero(),
            neutral_windows: 0,
            centroids: BTreeMap::new(),
            trained_labels: BTreeSet::new(),
            accumulated: BTreeMap::new(),
        }
    }

    pub fn neutral_trained(&self) -> bool {
        self.neutral_windows > 0
    }

    /// Neutral trained and at least one command centroid.
    pub fn is_ready(&self) -> bool {
        self.neutral_trained() && !self.trained_labels.is_empty()
    }

    pub fn z_score(&self, v: &FeatureVector<T>) -> [T; FEATURE_LEN] {
        std::array::from_fn(|i| (v.0[i] - self.feature_mean[i]) / self.feature_std[i])
    }

    fn z_raw(&self, raw: &[T; FEATURE_LEN]) -> [T; FEATURE_LEN] {
        std::array::from_fn(|i| (raw[i] - self.feature_mean[i]) / self.feature_std[i])
    }

    fn refresh_centroids(&mut self) {
        let mut centroids: BTreeMap<_, _> =
            self.accumulated.iter().map(|(&label, stats)| (label, self.z_raw(&stats.mean()))).collect();
        if self.neutral_trained() {
            centroids.insert(MentalCommand::Neutral, [T::zero(); FEATURE_LEN]);
        }
        self.centroids = centroids;
    }
}

fn check_windows<T: Scalar>(windows: &[FeatureVector<T>]) -> Result<(), ClassifierError> {
    if windows.len() < MIN_TRAINING_WINDOWS {
        return Err(ClassifierError::InsufficientData { needed: MIN_TRAINING_WINDOWS, got: windows.len() });
    }
    if windows.iter().any(|w| !w.is_finite()) {
        return Err(ClassifierError::NonFinite);
    }
    Ok(())
}

fn distance<T: Scalar>(a: &[T; FEATURE_LEN], b: &[T; FEATURE_LEN]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y)).sqrt()
}

fn norm<T: Scalar>(a: &[T; FEATURE_LEN]) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Linear interpolation between order statistics.
fn quantile<T: Scalar>(values: &mut [T], q: f64) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    values[lo] + (values[hi] - values[lo]) * frac
}

/// Sets the normalization statistics and neutral radius from neutral windows.
/// Existing command centroids are re-expressed against the new statistics.
///
/// The spread of each band is pooled over the five channels, and the radius
/// is the 95th percentile of leave-one-out distances: each neutral window is
/// measured against statistics fitted without it, the same footing a fresh
/// window has at classification time.
pub fn train_neutral<T: Scalar>(profile: &Profile<T>, windows: &[FeatureVector<T>]) -> Result<Profile<T>, ClassifierError> {
    check_windows(windows)?;
    let n = windows.len();
    let nf = T::lit(n as f64);
    let mut out = profile.clone();
    let mean: [T; FEATURE_LEN] =
        std::array::from_fn(|i| windows.iter().fold(T::zero(), |acc, w| acc + w.0[i]) / nf);
    let ss: [T; FEATURE_LEN] = std::array::from_fn(|i| {
        windows.iter().fold(T::zero(), |acc, w| {
            let d = w.0[i] - mean[i];
            acc + d * d
        })
    });
    let floor = T::lit(STD_FLOOR);
    let pooled_std = |ss: &[T; FEATURE_LEN], dof: usize| -> [T; FEATURE_LEN] {
        let band: [T; NUM_BANDS] = std::array::from_fn(|b| {
            let total = (0..NUM_CHANNELS).fold(T::zero(), |acc, c| acc + ss[c * NUM_BANDS + b]);
            (total / T::lit((NUM_CHANNELS * dof) as f64)).sqrt().max(floor)
        });
        std::array::from_fn(|i| band[i % NUM_BANDS])
    };
    out.feature_mean = mean;
    out.feature_std = pooled_std(&ss, n - 1);

    let mut radii: Vec<T> = windows
        .iter()
        .map(|w| {
            // remove w from the sums: SS' = SS - n/(n-1) (x - mean)^2
            let shrink = nf / T::lit((n - 1) as f64);
            let mean_loo: [T; FEATURE_LEN] = std::array::from_fn(|i| (mean[i] * nf - w.0[i]) / T::lit((n - 1) as f64));
            let ss_loo: [T; FEATURE_LEN] = std::array::from_fn(|i| {
                let d = w.0[i] - mean[i];
                (ss[i] - shrink * d * d).max(T::zero())
            });
            let std_loo = pooled_std(&ss_loo, (n - 2).max(1));
            let z: [T; FEATURE_LEN] = std::array::from_fn(|i| (w.0[i] - mean_loo[i]) / std_loo[i]);
            norm(&z)
        })
        .collect();
    out.neutral_radius = quantile(&mut radii, NEUTRAL_RADIUS_QUANTILE).max(T::lit(NEUTRAL_RADIUS_FLOOR));
    out.neutral_windows = n;
    out.refresh_centroids();
    Ok(out)
}

/// Adds `windows` to the running average for `label` and recomputes its centroid.
pub fn train_command<T: Scalar>(
    profile: &Profile<T>,
    label: MentalCommand,
    windows: &[FeatureVector<T>],
) -> Result<Profile<T>, ClassifierError> {
    if label.is_neutral() {
        return Err(ClassifierError::Vocabulary("neutral is trained with train_neutral".into()));
    }
    if !profile.neutral_trained() {
        return Err(ClassifierError::Ordering(format!("neutral must be trained before {label}")));
    }
    check_windows(windows)?;
    let mut out = profile.clone();
    let stats = out.accumulated.entry(label).or_insert_with(|| LabelStats { count: 0, sum: [T::zero(); FEATURE_LEN] });
    for w in windows {
        for (s, &x) in stats.sum.iter_mut().zip(&w.0) {
            *s += x;
        }
    }
    stats.count += windows.len();
    out.trained_labels.insert(label);
    out.refresh_centroids();
    Ok(out)
}

/// Like [`train_command`] but resolving a label string first.
pub fn train_command_named<T: Scalar>(
    profile: &Profile<T>,
    label: &str,
    windows: &[FeatureVector<T>],
) -> Result<Profile<T>, ClassifierError> {
    let label: MentalCommand = label.parse().map_err(|e: crate::vocab::UnknownLabel| ClassifierError::Vocabulary(e.to_string()))?;
    train_command(profile, label, windows)
}

/// Nearest-centroid decision. Neutral sits at the origin and competes like
/// any command; a window farther than `OUTLIER_RADII` neutral radii from
/// every centroid is also neutral. Power is the softmax of negative distances over the
/// command centroids.
pub fn classify<T: Scalar>(profile: &Profile<T>, v: &FeatureVector<T>, window_start: f64) -> Result<Detection, ClassifierError> {
    if !profile.neutral_trained() {
        return Err(ClassifierError::Ordering("classify needs a trained neutral state".into()));
    }
    if profile.trained_labels.is_empty() {
        return Err(ClassifierError::Ordering("classify needs at least one trained command".into()));
    }
    let z = profile.z_score(v);
    // BTreeMap iterates in lexicographic label order, so the first minimum wins ties.
    let dists: Vec<(MentalCommand, f64)> =
        profile.centroids.iter().map(|(&label, c)| (label, distance(&z, c).to_f64_lossy())).collect();
    let (best, d_best) = dists.iter().fold(dists[0], |b, &c| if c.1 < b.1 { c } else { b });
    if best.is_neutral() || !(d_best <= OUTLIER_RADII * profile.neutral_radius.to_f64_lossy()) {
        return Ok(Detection::com(MentalCommand::Neutral, 0.0, window_start));
    }
    let denom: f64 = dists.iter().filter(|(l, _)| !l.is_neutral()).map(|&(_, d)| (d_best - d).exp()).sum();
    Ok(Detection::com(best, 1.0 / denom, window_start))
}

pub fn save_profile<T: Scalar>(profile: &Profile<T>, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
    if !profile.neutral_trained() {
        return Err(ClassifierError::Ordering("only profiles with a trained neutral state can be saved".into()));
    }
    let json = serde_json::to_string_pretty(profile).map_err(|e| ClassifierError::Parse(e.to_string()))?;
    if let Some(dir) = path.as_ref().parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_profile<T: Scalar>(path: impl AsRef<Path>) -> Result<Profile<T>, ClassifierError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ClassifierError::Parse(e.to_string()))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(PROFILE_VERSION) => {}
        Some(found) => return Err(ClassifierError::Migration { found, expected: PROFILE_VERSION }),
        None => return Err(ClassifierError::Parse("missing integer \"version\"".into())),
    }
    serde_json::from_value(value).map_err(|e| ClassifierError::Parse(e.to_string()))
}
