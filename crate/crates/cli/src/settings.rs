//! The `--config` file: one JSON document with a section per role. Every
//! field is optional.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mindbus_core::bridge::MappingConfig;
use mindbus_core::classifier::load_profile;
use mindbus_core::drone::KinematicsConfig;
use mindbus_core::eval::Benchmark;
use mindbus_core::synth::{NoiseModel, ScenarioScript};
use mindbus_core::Profile64;
use mindbus_cortex::CortexConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_ACCURACY_FLOOR: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub cortex: CortexConfig,
    pub mapping: MappingConfig,
    pub kinematics: KinematicsConfig,
    /// Used by `train` and `eval` when no scenario is given. Self-contained:
    /// its own signatures, noise amplitudes, pipeline and mapping apply.
    pub benchmark: Benchmark,
    /// `eval` exits non-zero below this accuracy.
    pub accuracy_floor: f64,
    /// Simulated seconds per wall-clock second for `run`, `cortex` and `drone`.
    pub speed: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            cortex: CortexConfig::default(),
            mapping: MappingConfig::default(),
            kinematics: KinematicsConfig::default(),
            benchmark: Benchmark::default(),
            accuracy_floor: DEFAULT_ACCURACY_FLOOR,
            speed: 1.0,
        }
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let s: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(s)
    }

    /// Defaults, or the file at `path`, with the seed applied and validated.
    pub fn resolve(path: Option<&Path>, seed: u64) -> Result<Self> {
        let s = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let s = s.with_seed(seed);
        s.validate()?;
        Ok(s)
    }

    /// Routes the one seed to every random source.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.benchmark.seed = seed;
        self.cortex.noise.seed = seed;
        self
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self.cortex.speed = speed;
        self
    }

    /// Noise for scripted scenarios: the cortex amplitudes and the seed.
    pub fn noise(&self) -> NoiseModel {
        self.cortex.noise.clone()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            bail!("speed must be positive and finite, got {}", self.speed);
        }
        if !(0.0..=1.0).contains(&self.accuracy_floor) {
            bail!("accuracy_floor must lie in [0, 1], got {}", self.accuracy_floor);
        }
        let cortex = CortexConfig { speed: self.speed, ..self.cortex.clone() };
        cortex.validate().map_err(anyhow::Error::msg).context("cortex section")?;
        self.mapping.validate().map_err(anyhow::Error::msg).context("mapping section")?;
        self.kinematics.validate().map_err(anyhow::Error::msg).context("kinematics section")?;
        self.benchmark.mapping.validate().map_err(anyhow::Error::msg).context("benchmark mapping")?;
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioScript> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    let script: ScenarioScript =
        serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))?;
    script.validate().with_context(|| format!("scenario {}", path.display()))?;
    Ok(script)
}

/// Loads a profile that can drive the bridge: neutral and at least one command.
pub fn load_ready_profile(path: Option<&Path>) -> Result<Profile64> {
    let Some(path) = path else {
        bail!("configuration error: no trained profile given (--profile or MB_PROFILE)");
    };
    let profile: Profile64 =
        load_profile(path).with_context(|| format!("configuration error: loading profile {}", path.display()))?;
    if !profile.is_ready() {
        bail!(
            "configuration error: profile {} has no trained command (train neutral, then at least one command)",
            path.display()
        );
    }
    Ok(profile)
}
