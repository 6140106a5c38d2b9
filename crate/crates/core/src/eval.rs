//! Offline training and evaluation over scripted sessions, and the
//! four-command benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{BridgeState, MappingConfig};
use crate::classifier::{train_command, train_neutral, ClassifierError, DetectionLabel, Profile};
use crate::pipeline::{Pipeline, PipelineConfig, WindowResult};
use crate::signal::{EegFrame, FeatureVector, SampleRate, SignalError};
use crate::synth::{generate, Episode, EpisodeKind, NoiseModel, ScenarioScript, SignatureTables, SynthError, WindowLabel};
use crate::vocab::MentalCommand;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("{0}")]
    Invalid(String),
}

/// Feature vectors of the windows lying entirely inside each mental episode
/// of `script`, grouped by label in script order.
pub fn episode_windows<T: Scalar>(
    script: &ScenarioScript,
    results: &[WindowResult<T>],
    window_s: f64,
) -> BTreeMap<MentalCommand, Vec<FeatureVector<T>>> {
    let mut out: BTreeMap<MentalCommand, Vec<FeatureVector<T>>> = BTreeMap::new();
    for ep in script.episodes_of(EpisodeKind::Mental) {
        let Ok(label) = ep.mental_label() else { continue };
        let inside = results
            .iter()
            .filter(|r| r.start >= ep.start_s - 1e-9 && r.start + window_s <= ep.end_s() + 1e-9)
            .map(|r| r.features);
        out.entry(label).or_default().extend(inside);
    }
    out
}

/// Trains `profile` from a scripted recording: neutral first, then every
/// requested command (all commands in the script when `labels` is `None`).
/// Returns the updated profile and the number of windows used per label.
pub fn train_from_recording<T: Scalar>(
    profile: &Profile<T>,
    script: &ScenarioScript,
    frames: &[EegFrame<T>],
    labels: Option<&[MentalCommand]>,
    config: &PipelineConfig,
) -> Result<(Profile<T>, BTreeMap<MentalCommand, usize>), EvalError> {
    train_from_recording_limited(profile, script, frames, labels, config, None)
}

/// [`train_from_recording`] keeping only the first `limit` windows of each label.
pub fn train_from_recording_limited<T: Scalar>(
    profile: &Profile<T>,
    script: &ScenarioScript,
    frames: &[EegFrame<T>],
    labels: Option<&[MentalCommand]>,
    config: &PipelineConfig,
    limit: Option<usize>,
) -> Result<(Profile<T>, BTreeMap<MentalCommand, usize>), EvalError> {
    let mut pipeline = Pipeline::new(script.sample_rate, config.clone(), None)?;
    let results = pipeline.run(frames);
    let mut grouped = episode_windows(script, &results, config.window.window_s);
    if let Some(limit) = limit {
        grouped.values_mut().for_each(|w| w.truncate(limit));
    }
    let neutral = grouped.remove(&MentalCommand::Neutral).unwrap_or_default();
    if neutral.is_empty() {
        return Err(EvalError::Ordering(
            "the scenario has no neutral segment, and neutral must be trained before any command".into(),
        ));
    }
    let wanted: Vec<MentalCommand> = match labels {
        Some(l) => l.iter().copied().filter(|l| !l.is_neutral()).collect(),
        None => grouped.keys().copied().collect(),
    };
    let mut counts = BTreeMap::from([(MentalCommand::Neutral, neutral.len())]);
    let mut p = train_neutral(profile, &neutral)?;
    for label in wanted {
        let windows = grouped.get(&label).map(Vec::as_slice).unwrap_or_default();
        p = train_command(&p, label, windows)?;
        counts.insert(label, windows.len());
    }
    Ok((p, counts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub bound_s: f64,
    pub episodes: usize,
    pub detected: usize,
    pub within_bound: usize,
    pub p50_s: Option<f64>,
    pub p90_s: Option<f64>,
    pub max_s: Option<f64>,
    /// Onset-to-publish latency of every detected episode, in script order.
    pub samples_s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub profile: String,
    pub windows: usize,
    pub accuracy: f64,
    /// Row = true label, column = predicted label, both in `labels` order.
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub per_label: BTreeMap<String, LabelMetrics>,
    pub latency: LatencySummary,
    pub warnings: Vec<String>,
}

/// Nearest-rank percentile of sorted `v`.
fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

/// Default onset-to-publish latency bound: one window, one hold window, half a second of margin.
pub const LATENCY_BOUND_S: f64 = 3.5;

/// Runs the offline pipeline with `profile` over a labeled recording.
pub fn evaluate<T: Scalar>(
    profile: &Profile<T>,
    script: &ScenarioScript,
    frames: &[EegFrame<T>],
    truth: &[WindowLabel],
    mapping: &MappingConfig,
    config: &PipelineConfig,
) -> Result<EvalReport, EvalError> {
    if !profile.is_ready() {
        return Err(EvalError::Ordering("evaluation needs a profile with neutral and at least one command".into()));
    }
    let mut pipeline = Pipeline::new(script.sample_rate, config.clone(), Some(profile.clone()))?;
    let results = pipeline.run(frames);

    let mut warnings = Vec::new();
    for label in truth.iter().map(|l| l.com).filter(|l| !l.is_neutral()) {
        let w = format!("label {label} is in the scenario but not in the profile");
        if !profile.trained_labels.contains(&label) && !warnings.contains(&w) {
            warnings.push(w);
        }
    }

    let n = results.len().min(truth.len());
    let predicted: Vec<MentalCommand> = results[..n]
        .iter()
        .map(|r| match r.com.map(|d| d.label) {
            Some(DetectionLabel::Com(m)) => m,
            _ => MentalCommand::Neutral,
        })
        .collect();
    let mut labels: Vec<MentalCommand> = truth[..n].iter().map(|l| l.com).chain(predicted.iter().copied()).collect();
    labels.push(MentalCommand::Neutral);
    labels.sort();
    labels.dedup();
    let idx = |m: MentalCommand| labels.binary_search(&m).expect("label collected above");
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    for (t, p) in truth[..n].iter().zip(&predicted) {
        confusion[idx(t.com)][idx(*p)] += 1;
    }
    let correct: usize = (0..labels.len()).map(|i| confusion[i][i]).sum();
    let per_label = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let support: usize = confusion[i].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[i]).sum();
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let m = LabelMetrics {
                support,
                predicted,
                precision: ratio(confusion[i][i], predicted),
                recall: ratio(confusion[i][i], support),
            };
            (l.to_string(), m)
        })
        .collect();

    Ok(EvalReport {
        profile: profile.name.clone(),
        windows: n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        labels: labels.iter().map(|l| l.to_string()).collect(),
        confusion,
        per_label,
        latency: latency(script, &results, mapping),
        warnings,
    })
}

/// Replays the window detections through the bridge and measures, per mapped
/// mental episode, the time from onset to the first matching publication
/// before the next mental episode starts.
fn latency<T: Scalar>(script: &ScenarioScript, results: &[WindowResult<T>], mapping: &MappingConfig) -> LatencySummary {
    let mut bridge = BridgeState::new();
    let mut published = Vec::new();
    for r in results {
        for d in r.com.iter().chain(std::iter::once(&r.fac)) {
            if let Some(m) = bridge.on_event(d, r.time, mapping).message {
                published.push((r.time, m));
            }
        }
    }
    let episodes: Vec<&Episode> = script
        .episodes_of(EpisodeKind::Mental)
        .filter(|e| e.mental_label().is_ok_and(|m| mapping.mental_map.contains_key(&m)))
        .collect();
    let mut samples = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        let msg = mapping.mental_map[&ep.mental_label().expect("filtered above")];
        let until = episodes.get(i + 1).map_or(f64::INFINITY, |next| next.start_s);
        if let Some((t, _)) = published.iter().find(|(t, m)| *m == msg && *t >= ep.start_s && *t < until) {
            samples.push(t - ep.start_s);
        }
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    LatencySummary {
        bound_s: LATENCY_BOUND_S,
        episodes: episodes.len(),
        detected: samples.len(),
        within_bound: samples.iter().filter(|&&s| s <= LATENCY_BOUND_S + 1e-9).count(),
        p50_s: percentile(&sorted, 0.5),
        p90_s: percentile(&sorted, 0.9),
        max_s: sorted.last().copied(),
        samples_s: samples,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data") + "\n"
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let width = self.labels.iter().map(String::len).max().unwrap_or(5).max(9);
        let _ = writeln!(s, "profile {}  windows {}  accuracy {:.3}", self.profile, self.windows, self.accuracy);
        let _ = write!(s, "\n{:>width$} |", "true\\pred");
        for l in &self.labels {
            let _ = write!(s, " {l:>width$}");
        }
        let _ = writeln!(s, " | {:>6} {:>6}", "prec", "recall");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = write!(s, "{l:>width$} |");
            for c in &self.confusion[i] {
                let _ = write!(s, " {c:>width$}");
            }
            let m = &self.per_label[l];
            let _ = writeln!(s, " | {:>6.3} {:>6.3}", m.precision, m.recall);
        }
        let lat = &self.latency;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}s"));
        let _ = writeln!(
            s,
            "\nlatency: {}/{} episodes published, {} within {:.1}s; p50 {} p90 {} max {}",
            lat.detected,
            lat.episodes,
            lat.within_bound,
            lat.bound_s,
            fmt(lat.p50_s),
            fmt(lat.p90_s),
            fmt(lat.max_s)
        );
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// The four-command benchmark: a training session with `recordings` 8 s
/// recordings of neutral and of each command, then a held-out stream of
/// 4 s episodes separated by neutral gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Benchmark {
    pub seed: u64,
    pub commands: Vec<MentalCommand>,
    pub recordings: usize,
    pub recording_s: f64,
    /// Use at most this many windows of each label when training.
    pub max_training_windows: Option<usize>,
    pub episodes_per_command: usize,
    pub episode_s: f64,
    pub gap_s: f64,
    /// Neutral lead-in that lets the filter settle.
    pub lead_s: f64,
    pub sample_rate: SampleRate,
    pub pink_amplitude: f64,
    pub white_amplitude: f64,
    pub signatures: SignatureTables,
    pub pipeline: PipelineConfig,
    pub mapping: MappingConfig,
}

impl Default for Benchmark {
    fn default() -> Self {
        let noise = NoiseModel::default();
        Self {
            seed: 42,
            commands: vec![MentalCommand::Push, MentalCommand::Pull, MentalCommand::Left, MentalCommand::Right],
            recordings: 1,
            recording_s: 8.0,
            max_training_windows: None,
            episodes_per_command: 10,
            episode_s: 4.0,
            gap_s: 4.0,
            lead_s: 4.0,
            sample_rate: SampleRate::Hz128,
            pink_amplitude: noise.pink_amplitude,
            white_amplitude: noise.white_amplitude,
            signatures: SignatureTables::default(),
            pipeline: PipelineConfig::default(),
            mapping: MappingConfig::default(),
        }
    }
}

/// Independent sub-seeds for the training and evaluation sessions.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rand::Rng::random(&mut rng)
}

impl Benchmark {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn noise(&self, stream: u64) -> NoiseModel {
        NoiseModel {
            pink_amplitude: self.pink_amplitude,
            white_amplitude: self.white_amplitude,
            seed: derive_seed(self.seed, stream),
            ..NoiseModel::default()
        }
    }

    pub fn training_noise(&self) -> NoiseModel {
        self.noise(1)
    }

    pub fn evaluation_noise(&self) -> NoiseModel {
        self.noise(2)
    }

    /// Neutral recordings first, then each command's recordings, 2 s apart.
    pub fn training_script(&self) -> ScenarioScript {
        let mut script = ScenarioScript::new(0.0, self.sample_rate);
        let mut t = self.lead_s;
        let labels = std::iter::once(MentalCommand::Neutral).chain(self.commands.iter().copied());
        for label in labels {
            for _ in 0..self.recordings {
                script.episodes.push(Episode::mental(t, self.recording_s, label));
                t += self.recording_s + 2.0;
            }
        }
        script.duration = t;
        script
    }

    /// Command episodes in a seeded random order, each followed by a neutral gap.
    pub fn evaluation_script(&self) -> ScenarioScript {
        let mut order: Vec<MentalCommand> = self
            .commands
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, self.episodes_per_command))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(3);
        order.shuffle(&mut rng);
        let mut script = ScenarioScript::new(0.0, self.sample_rate);
        let mut t = self.lead_s;
        for label in order {
            script.episodes.push(Episode::mental(t, self.episode_s, label));
            t += self.episode_s + self.gap_s;
        }
        script.duration = t;
        script
    }

    pub fn train<T: Scalar>(&self) -> Result<Profile<T>, EvalError> {
        let script = self.training_script();
        let (frames, _) = generate::<T>(&script, &self.signatures, &self.training_noise())?;
        let (p, _) = train_from_recording_limited(
            &Profile::new(format!("benchmark-{}", self.seed)),
            &script,
            &frames,
            Some(&self.commands),
            &self.pipeline,
            self.max_training_windows,
        )?;
        Ok(p)
    }

    pub fn evaluate<T: Scalar>(&self, profile: &Profile<T>) -> Result<EvalReport, EvalError> {
        let script = self.evaluation_script();
        let (frames, truth) = generate::<T>(&script, &self.signatures, &self.evaluation_noise())?;
        evaluate(profile, &script, &frames, &truth, &self.mapping, &self.pipeline)
    }

    /// `episodes` episodes of a single command, spaced like the evaluation stream.
    pub fn single_command_script(&self, label: MentalCommand, episodes: usize) -> ScenarioScript {
        let mut script = ScenarioScript::new(0.0, self.sample_rate);
        let mut t = self.lead_s;
        for _ in 0..episodes {
            script.episodes.push(Episode::mental(t, self.episode_s, label));
            t += self.episode_s + self.gap_s;
        }
        script.duration = t;
        script
    }

    /// Onset-to-publish latency of `label` with a profile trained on every benchmark command.
    pub fn single_command_latency<T: Scalar>(
        &self,
        profile: &Profile<T>,
        label: MentalCommand,
        episodes: usize,
    ) -> Result<EvalReport, EvalError> {
        let script = self.single_command_script(label, episodes);
        let (frames, truth) = generate::<T>(&script, &self.signatures, &self.noise(4))?;
        evaluate(profile, &script, &frames, &truth, &self.mapping, &self.pipeline)
    }

    pub fn run<T: Scalar>(&self) -> Result<EvalReport, EvalError> {
        let profile = self.train::<T>()?;
        self.evaluate(&profile)
    }
}
