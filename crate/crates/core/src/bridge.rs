//! Turns com/fac detections into drone messages: hold and threshold
//! debouncing for mental commands, immediate pass-through for facial ones.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::{Detection, DetectionLabel};
use crate::vocab::{DroneMessage, FacialExpression, MentalCommand};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    pub mental_map: BTreeMap<MentalCommand, DroneMessage>,
    pub facial_map: BTreeMap<FacialExpression, DroneMessage>,
    pub power_threshold: f64,
    pub hold_windows: usize,
    pub repeat_hold_s: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        use DroneMessage as D;
        use MentalCommand as M;
        Self {
            mental_map: BTreeMap::from([
                (M::Push, D::Fw),
                (M::Pull, D::Bw),
                (M::Left, D::Left),
                (M::Right, D::Right),
                (M::Lift, D::Up),
                (M::Drop, D::Down),
            ]),
            facial_map: BTreeMap::from([(FacialExpression::Blink, D::Stop)]),
            power_threshold: 0.5,
            hold_windows: 2,
            repeat_hold_s: 2.0,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.mental_map.contains_key(&MentalCommand::Neutral) || self.facial_map.contains_key(&FacialExpression::Neutral) {
            return Err("neutral cannot be mapped to a drone message".into());
        }
        if !(0.0..=1.0).contains(&self.power_threshold) {
            return Err(format!("power_threshold {} outside [0, 1]", self.power_threshold));
        }
        if self.hold_windows == 0 {
            return Err("hold_windows must be at least 1".into());
        }
        if !(self.repeat_hold_s >= 0.0) {
            return Err("repeat_hold_s must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Emit,
    Neutral,
    BelowThreshold,
    Holding,
    RepeatHold,
    Unmapped,
}

/// One line of the decision log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub t: f64,
    pub stream: String,
    pub label: String,
    pub power: f64,
    pub consecutive: usize,
    pub action: Action,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<DroneMessage>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BridgeState {
    pub last_label: Option<MentalCommand>,
    pub consecutive: usize,
    pub last_emitted: Option<(DroneMessage, f64)>,
    last_emit_by_label: BTreeMap<MentalCommand, f64>,
    pub unmapped: u64,
}

impl BridgeState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Processes one detection observed at time `t` (seconds).
    pub fn on_event(&mut self, detection: &Detection, t: f64, config: &MappingConfig) -> Decision {
        let mut decision = Decision {
            t,
            stream: match detection.label {
                DetectionLabel::Com(_) => "com".into(),
                DetectionLabel::Fac(_) => "fac".into(),
            },
            label: detection.label.as_str().into(),
            power: detection.power,
            consecutive: 0,
            action: Action::Neutral,
            message: None,
        };
        match detection.label {
            DetectionLabel::Fac(f) => {
                if f.is_neutral() {
                    return decision;
                }
                match config.facial_map.get(&f) {
                    Some(&m) => {
                        decision.action = Action::Emit;
                        decision.message = Some(m);
                        self.last_emitted = Some((m, t));
                    }
                    None => {
                        decision.action = Action::Unmapped;
                        self.unmapped += 1;
                    }
                }
            }
            DetectionLabel::Com(m) => {
                if m.is_neutral() || detection.power < config.power_threshold {
                    self.last_label = None;
                    self.consecutive = 0;
                    if !m.is_neutral() {
                        decision.action = Action::BelowThreshold;
                    }
                    return decision;
                }
                if self.last_label == Some(m) {
                    self.consecutive += 1;
                } else {
                    self.last_label = Some(m);
                    self.consecutive = 1;
                }
                decision.consecutive = self.consecutive;
                let Some(&msg) = config.mental_map.get(&m) else {
                    decision.action = Action::Unmapped;
                    self.unmapped += 1;
                    return decision;
                };
                if self.consecutive < config.hold_windows {
                    decision.action = Action::Holding;
                } else if self.last_emit_by_label.get(&m).is_some_and(|&prev| t - prev < config.repeat_hold_s) {
                    decision.action = Action::RepeatHold;
                } else {
                    decision.action = Action::Emit;
                    decision.message = Some(msg);
                    self.last_emitted = Some((msg, t));
                    self.last_emit_by_label.insert(m, t);
                }
            }
        }
        decision
    }
}
