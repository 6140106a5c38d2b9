//! Flight state machine standing in for the Raspberry Pi and the drone it
//! drives. First-order kinematics, Euler integration at a fixed tick.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::vocab::DroneMessage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlightMode {
    Grounded,
    TakingOff,
    Hovering,
    Maneuvering,
    Landing,
}

impl FlightMode {
    pub const ALL: [FlightMode; 5] =
        [FlightMode::Grounded, FlightMode::TakingOff, FlightMode::Hovering, FlightMode::Maneuvering, FlightMode::Landing];

    pub fn is_airborne(self) -> bool {
        self != FlightMode::Grounded
    }

    /// Edges of the mode graph. Self-loops are always allowed.
    pub fn may_become(self, next: FlightMode) -> bool {
        use FlightMode::*;
        self == next
            || matches!(
                (self, next),
                (Grounded, TakingOff)
                    | (TakingOff, Hovering)
                    | (TakingOff, Maneuvering)
                    | (TakingOff, Landing)
                    | (Hovering, Maneuvering)
                    | (Hovering, Landing)
                    | (Maneuvering, Hovering)
                    | (Maneuvering, Landing)
                    | (Landing, Grounded)
            )
    }
}

impl fmt::Display for FlightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicsConfig {
    pub cruise_speed: f64,
    pub ascent_speed: f64,
    pub descent_speed: f64,
    /// deg/s
    pub yaw_speed: f64,
    pub hover_altitude: f64,
    pub tick: f64,
    pub cmd_timeout_hover: f64,
    pub cmd_timeout_land: f64,
    /// Battery fraction per airborne second.
    pub battery_drain: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 0.5,
            ascent_speed: 0.5,
            descent_speed: 0.5,
            yaw_speed: 45.0,
            hover_altitude: 1.0,
            tick: 0.05,
            cmd_timeout_hover: 2.0,
            cmd_timeout_land: 10.0,
            battery_drain: 0.001,
        }
    }
}

impl KinematicsConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("cruise_speed", self.cruise_speed),
            ("ascent_speed", self.ascent_speed),
            ("descent_speed", self.descent_speed),
            ("yaw_speed", self.yaw_speed),
            ("hover_altitude", self.hover_altitude),
            ("tick", self.tick),
            ("cmd_timeout_hover", self.cmd_timeout_hover),
            ("cmd_timeout_land", self.cmd_timeout_land),
            ("battery_drain", self.battery_drain),
        ];
        match fields.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            Some((name, v)) => Err(format!("{name} must be positive, got {v}")),
            None => Ok(()),
        }
    }

    /// Ticks per second of telemetry at 10 Hz.
    pub fn ticks_per_telemetry(&self) -> usize {
        ((0.1 / self.tick).round() as usize).max(1)
    }
}

/// Below this charge the drone lands and refuses to take off.
pub const LOW_BATTERY: f64 = 0.05;
/// Length of a Left/Right turn.
pub const TURN_S: f64 = 1.0;
const EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub mode: FlightMode,
    pub position: [f64; 3],
    /// Degrees in [0, 360); 0 points along +x, Right turns towards +y.
    pub yaw: f64,
    pub velocity: [f64; 3],
    pub yaw_rate: f64,
    pub battery: f64,
    pub last_cmd_time: f64,
    /// Simulated time.
    pub t: f64,
    /// Movement to start once take-off completes.
    pub pending: Option<DroneMessage>,
    maneuver_since: f64,
    turn_remaining: f64,
}

impl Default for DroneState {
    fn default() -> Self {
        Self::grounded()
    }
}

impl DroneState {
    pub fn grounded() -> Self {
        Self {
            mode: FlightMode::Grounded,
            position: [0.0; 3],
            yaw: 0.0,
            velocity: [0.0; 3],
            yaw_rate: 0.0,
            battery: 1.0,
            last_cmd_time: 0.0,
            t: 0.0,
            pending: None,
            maneuver_since: 0.0,
            turn_remaining: 0.0,
        }
    }

    pub fn z(&self) -> f64 {
        self.position[2]
    }

    /// Applies one command at the current time.
    pub fn handle_message(&mut self, msg: DroneMessage, cfg: &KinematicsConfig) {
        self.last_cmd_time = self.t;
        match (self.mode, msg) {
            (FlightMode::Grounded | FlightMode::Landing, DroneMessage::Stop) => {}
            (_, DroneMessage::Stop) => self.begin_landing(cfg),
            (FlightMode::Grounded, m) => {
                if self.battery > LOW_BATTERY {
                    self.mode = FlightMode::TakingOff;
                    self.velocity = [0.0, 0.0, cfg.ascent_speed];
                    self.pending = Some(m);
                }
            }
            (FlightMode::TakingOff, m) => self.pending = Some(m),
            // a landing in progress is not interrupted
            (FlightMode::Landing, _) => {}
            (FlightMode::Hovering | FlightMode::Maneuvering, m) => self.start_maneuver(m, cfg),
        }
    }

    /// Parses and applies a wire payload; unknown payloads leave the state untouched.
    pub fn handle_payload(&mut self, payload: &[u8], cfg: &KinematicsConfig) -> Result<DroneMessage, String> {
        let msg = DroneMessage::from_wire(payload)
            .ok_or_else(|| format!("ignoring unknown drone command {:?}", String::from_utf8_lossy(payload)))?;
        self.handle_message(msg, cfg);
        Ok(msg)
    }

    /// Advances the simulation by one `cfg.tick`.
    pub fn tick(&mut self, cfg: &KinematicsConfig) {
        let dt = cfg.tick;
        let airborne = self.mode.is_airborne();
        for (p, v) in self.position.iter_mut().zip(self.velocity) {
            *p += v * dt;
        }
        self.yaw = (self.yaw + self.yaw_rate * dt).rem_euclid(360.0);
        self.t += dt;

        if matches!(self.mode, FlightMode::TakingOff | FlightMode::Hovering | FlightMode::Maneuvering)
            && (self.battery <= LOW_BATTERY || self.t - self.last_cmd_time > cfg.cmd_timeout_land)
        {
            self.begin_landing(cfg);
        }
        if self.mode == FlightMode::Maneuvering && self.t - self.last_cmd_time.max(self.maneuver_since) > cfg.cmd_timeout_hover {
            self.hover();
        }

        match self.mode {
            FlightMode::TakingOff if self.z() >= cfg.hover_altitude - EPS => {
                self.position[2] = cfg.hover_altitude;
                self.hover();
                if let Some(m) = self.pending.take() {
                    self.start_maneuver(m, cfg);
                }
            }
            FlightMode::Landing if self.z() <= EPS => {
                self.position[2] = 0.0;
                self.mode = FlightMode::Grounded;
                self.velocity = [0.0; 3];
                self.yaw_rate = 0.0;
            }
            FlightMode::Maneuvering if self.turn_remaining > 0.0 => {
                self.turn_remaining -= dt;
                if self.turn_remaining <= EPS {
                    self.turn_remaining = 0.0;
                    self.hover();
                }
            }
            FlightMode::Maneuvering if self.velocity[2] < 0.0 && self.z() <= cfg.hover_altitude => {
                self.position[2] = cfg.hover_altitude;
                self.hover();
            }
            _ => {}
        }
        self.position[2] = self.position[2].max(0.0);
        if airborne {
            self.battery = (self.battery - cfg.battery_drain * dt).max(0.0);
        }
    }

    fn hover(&mut self) {
        self.mode = FlightMode::Hovering;
        self.velocity = [0.0; 3];
        self.yaw_rate = 0.0;
        self.turn_remaining = 0.0;
    }

    fn begin_landing(&mut self, cfg: &KinematicsConfig) {
        self.mode = FlightMode::Landing;
        self.velocity = [0.0, 0.0, -cfg.descent_speed];
        self.yaw_rate = 0.0;
        self.turn_remaining = 0.0;
        self.pending = None;
    }

    fn start_maneuver(&mut self, msg: DroneMessage, cfg: &KinematicsConfig) {
        self.hover();
        self.maneuver_since = self.t;
        let heading = self.yaw.to_radians();
        let along = |s: f64| [s * heading.cos(), s * heading.sin(), 0.0];
        match msg {
            DroneMessage::Fw => self.velocity = along(cfg.cruise_speed),
            DroneMessage::Bw => self.velocity = along(-cfg.cruise_speed),
            DroneMessage::Left | DroneMessage::Right => {
                self.yaw_rate = if msg == DroneMessage::Left { -cfg.yaw_speed } else { cfg.yaw_speed };
                self.turn_remaining = TURN_S;
            }
            DroneMessage::Up => self.velocity = [0.0, 0.0, cfg.ascent_speed],
            DroneMessage::Down if self.z() > cfg.hover_altitude => self.velocity = [0.0, 0.0, -cfg.descent_speed],
            DroneMessage::Down => return,
            DroneMessage::Stop => unreachable!("stop is handled before maneuvers"),
        }
        self.mode = FlightMode::Maneuvering;
    }

    pub fn telemetry(&self) -> Telemetry {
        Telemetry {
            mode: self.mode,
            x: self.position[0],
            y: self.position[1],
            z: self.position[2],
            yaw: self.yaw,
            battery: self.battery,
            t: self.t,
        }
    }
}

/// Payload published on the telemetry topic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub mode: FlightMode,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub battery: f64,
    pub t: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use DroneMessage as M;

    fn ticks(s: &mut DroneState, cfg: &KinematicsConfig, seconds: f64) {
        for _ in 0..(seconds / cfg.tick).round() as usize {
            s.tick(cfg);
        }
    }

    fn hovering(cfg: &KinematicsConfig) -> DroneState {
        let mut s = DroneState::grounded();
        s.handle_message(M::Up, cfg);
        ticks(&mut s, cfg, 2.0);
        s.handle_message(M::Down, cfg);
        assert_eq!(s.mode, FlightMode::Hovering);
        s
    }

    #[test]
    fn fw_from_the_ground_takes_off_then_flies_forward() {
        let cfg = KinematicsConfig::default();
        let mut s = DroneState::grounded();
        s.handle_message(M::Fw, &cfg);
        assert_eq!(s.mode, FlightMode::TakingOff);
        ticks(&mut s, &cfg, 2.0);
        assert_eq!(s.z(), 1.0);
        assert_eq!(s.mode, FlightMode::Maneuvering);
        ticks(&mut s, &cfg, 1.0);
        assert!((s.position[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn takeoff_reaches_hover_altitude_in_two_seconds() {
        let cfg = KinematicsConfig::default();
        let mut s = DroneState::grounded();
        s.handle_message(M::Up, &cfg);
        ticks(&mut s, &cfg, 2.0);
        assert_eq!((s.mode, s.z()), (FlightMode::Maneuvering, 1.0));
        let mut s = DroneState::grounded();
        s.handle_message(M::Down, &cfg);
        ticks(&mut s, &cfg, 2.0);
        assert_eq!((s.mode, s.z()), (FlightMode::Hovering, 1.0));
    }

    #[test]
    fn stop_lands_and_is_a_no_op_on_the_ground() {
        let cfg = KinematicsConfig::default();
        let mut s = hovering(&cfg);
        s.handle_message(M::Stop, &cfg);
        assert_eq!(s.mode, FlightMode::Landing);
        ticks(&mut s, &cfg, 2.0);
        assert_eq!((s.mode, s.z()), (FlightMode::Grounded, 0.0));
        let before = s.clone();
        s.handle_message(M::Stop, &cfg);
        assert_eq!(s.mode, before.mode);
        assert_eq!(s.position, before.position);
    }

    #[test]
    fn fw_held_for_four_seconds_covers_two_metres() {
        let cfg = KinematicsConfig::default();
        let mut s = hovering(&cfg);
        let x0 = s.position[0];
        // the bridge repeats a held command every 2 s
        s.handle_message(M::Fw, &cfg);
        ticks(&mut s, &cfg, 2.0);
        s.handle_message(M::Fw, &cfg);
        ticks(&mut s, &cfg, 2.0);
        assert!((s.position[0] - x0 - 2.0).abs() <= cfg.cruise_speed * cfg.tick + 1e-9);
    }

    #[test]
    fn single_fw_stops_at_the_hover_timeout() {
        let cfg = KinematicsConfig::default();
        let mut s = hovering(&cfg);
        s.handle_message(M::Fw, &cfg);
        ticks(&mut s, &cfg, 4.0);
        assert_eq!(s.mode, FlightMode::Hovering);
        assert!((s.position[0] - 1.0).abs() <= cfg.cruise_speed * cfg.tick + 1e-9);
    }

    #[test]
    fn silent_hover_lands_after_ten_seconds() {
        let cfg = KinematicsConfig::default();
        let mut s = hovering(&cfg);
        for _ in 0..199 {
            s.tick(&cfg);
        }
        assert_eq!(s.mode, FlightMode::Hovering);
        s.tick(&cfg);
        s.tick(&cfg);
        assert_eq!(s.mode, FlightMode::Landing);
    }

    #[test]
    fn turns_are_45_degrees() {
        let cfg = KinematicsConfig::default();
        let mut s = hovering(&cfg);
        s.handle_message(M::Right, &cfg);
        ticks(&mut s, &cfg, 1.5);
        assert_eq!(s.mode, FlightMode::Hovering);
        assert!((s.yaw - 45.0).abs() < 1e-9);
        s.handle_message(M::Left, &cfg);
        ticks(&mut s, &cfg, 1.0);
        s.handle_message(M::Left, &cfg);
        ticks(&mut s, &cfg, 1.0);
        assert!((s.yaw - 315.0).abs() < 1e-9);
    }

    #[test]
    fn down_never_goes_below_hover_altitude() {
        let cfg = KinematicsConfig::default();
        let mut s = hovering(&cfg);
        s.handle_message(M::Up, &cfg);
        ticks(&mut s, &cfg, 1.0);
        assert!((s.z() - 1.5).abs() < 1e-9);
        s.handle_message(M::Down, &cfg);
        ticks(&mut s, &cfg, 3.0);
        assert_eq!((s.mode, s.z()), (FlightMode::Hovering, 1.0));
    }

    #[test]
    fn garbage_payload_changes_nothing() {
        let cfg = KinematicsConfig::default();
        let mut s = hovering(&cfg);
        let before = s.clone();
        assert!(s.handle_payload(b"FLY!!", &cfg).is_err());
        assert!(s.handle_payload(b"STOP", &cfg).is_err());
        assert_eq!(s, before);
        assert_eq!(s.handle_payload(b"stop", &cfg), Ok(M::Stop));
    }

    #[test]
    fn low_battery_forces_landing_and_blocks_takeoff() {
        let cfg = KinematicsConfig::default();
        let mut s = hovering(&cfg);
        s.battery = LOW_BATTERY;
        s.handle_message(M::Fw, &cfg);
        s.tick(&cfg);
        assert_eq!(s.mode, FlightMode::Landing);
        ticks(&mut s, &cfg, 3.0);
        s.handle_message(M::Fw, &cfg);
        assert_eq!(s.mode, FlightMode::Grounded);
    }

    #[test]
    fn telemetry_json_shape() {
        let t = DroneState::grounded().telemetry();
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"mode":"Grounded","x":0.0,"y":0.0,"z":0.0,"yaw":0.0,"battery":1.0,"t":0.0}"#
        );
        assert_eq!(KinematicsConfig::default().ticks_per_telemetry(), 2);
    }
}
