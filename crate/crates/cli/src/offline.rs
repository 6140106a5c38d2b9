//! `train` and `eval`: the offline pipeline over scripted sessions, no sockets.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use log::{info, warn};
use mindbus_core::classifier::{save_profile, Profile};
use mindbus_core::eval::{evaluate as evaluate_recording, train_from_recording, EvalReport};
use mindbus_core::synth::{generate, ScenarioScript};
use mindbus_core::vocab::MentalCommand;
use mindbus_core::Profile64;

use crate::settings::Settings;

#[derive(Debug)]
pub struct TrainOutcome {
    pub profile: Profile64,
    /// Windows used per label in this session.
    pub windows: BTreeMap<MentalCommand, usize>,
}

/// Trains `base` (or a fresh profile called `name`) on `scenario`, or on the
/// benchmark training session when there is none.
pub fn train(
    settings: &Settings,
    scenario: Option<&ScenarioScript>,
    base: Option<Profile64>,
    name: &str,
    labels: Option<&[MentalCommand]>,
) -> Result<TrainOutcome> {
    let bench = &settings.benchmark;
    let (script, noise, signatures, pipeline) = match scenario {
        Some(s) => (s.clone(), settings.noise(), &settings.cortex.signatures, &settings.cortex.pipeline),
        None => (bench.training_script(), bench.training_noise(), &bench.signatures, &bench.pipeline),
    };
    let labels = match (labels, scenario) {
        (Some(l), _) => Some(l.to_vec()),
        (None, None) => Some(bench.commands.clone()),
        (None, Some(_)) => None,
    };
    let (frames, _) = generate::<f64>(&script, signatures, &noise)?;
    let base = base.unwrap_or_else(|| Profile::new(name));
    let (profile, windows) = train_from_recording(&base, &script, &frames, labels.as_deref(), pipeline)?;
    Ok(TrainOutcome { profile, windows })
}

pub fn save(profile: &Profile64, path: &Path) -> Result<()> {
    save_profile(profile, path).with_context(|| format!("saving profile {}", path.display()))
}

/// Scores `profile` on `scenario`, or on the benchmark evaluation stream.
/// Without a profile the benchmark's own training session supplies one.
pub fn evaluate(settings: &Settings, profile: Option<&Profile64>, scenario: Option<&ScenarioScript>) -> Result<EvalReport> {
    let bench = &settings.benchmark;
    let trained;
    let profile = match profile {
        Some(p) => p,
        None => {
            info!("no profile given: training on the benchmark session (seed {})", bench.seed);
            trained = bench.train::<f64>()?;
            &trained
        }
    };
    let report = match scenario {
        None => bench.evaluate(profile)?,
        Some(script) => {
            let (frames, truth) = generate::<f64>(script, &settings.cortex.signatures, &settings.noise())?;
            evaluate_recording(profile, script, &frames, &truth, &settings.mapping, &settings.cortex.pipeline)?
        }
    };
    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(report)
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json()).with_context(|| format!("writing report {}", path.display()))
}
