use std::path::{Path, PathBuf};

use mindbus_core::pipeline::PipelineConfig;
use mindbus_core::signal::SampleRate;
use mindbus_core::synth::{NoiseModel, SignatureTables};
use serde::{Deserialize, Serialize};

use crate::auth::{Credentials, DEFAULT_TOKEN_TTL_S};
use crate::queue::DEFAULT_QUEUE_CAPACITY;

pub const DEFAULT_PORT: u16 = 6868;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CortexConfig {
    pub port: u16,
    pub credentials: Vec<Credentials>,
    pub token_ttl_s: f64,
    /// Rejects episode injection.
    pub eval_mode: bool,
    pub sample_rate: SampleRate,
    pub pipeline: PipelineConfig,
    pub signatures: SignatureTables,
    pub noise: NoiseModel,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    pub queue_capacity: usize,
    /// Where setupProfile load/save look for `<name>.json`.
    pub profiles_dir: Option<PathBuf>,
}

impl Default for CortexConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            credentials: vec![Credentials {
                app_name: "mindbus".into(),
                client_id: "mindbus-local".into(),
                client_secret: "mindbus-local-secret".into(),
            }],
            token_ttl_s: DEFAULT_TOKEN_TTL_S,
            eval_mode: false,
            sample_rate: SampleRate::default(),
            pipeline: PipelineConfig::default(),
            signatures: SignatureTables::default(),
            noise: NoiseModel::default(),
            speed: 1.0,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            profiles_dir: None,
        }
    }
}

impl CortexConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.credentials.is_empty() {
            return Err("credential registry is empty".into());
        }
        if self.credentials.iter().any(|c| c.app_name.is_empty() || c.client_id.is_empty() || c.client_secret.is_empty()) {
            return Err("credentials must have non-empty appName, clientId and clientSecret".into());
        }
        if !(self.token_ttl_s > 0.0) {
            return Err("token_ttl_s must be positive".into());
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err("speed must be positive and finite".into());
        }
        self.signatures.validate().map_err(|e| e.to_string())?;
        self.noise.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}
