//! Mental-command and facial-expression label sets.
//!
//! Labels travel as exact strings on the wire and in files; ordering between
//! labels, where it matters (tie-breaking), is lexicographic on those strings.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownLabel;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(UnknownLabel(other.to_string())),
                }
            }
        }

        impl PartialOrd for $name {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        impl Ord for $name {
            fn cmp(&self, other: &Self) -> Ordering {
                self.as_str().cmp(other.as_str())
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

label_enum!(
    /// Trainable mental command.
    MentalCommand {
        Neutral => "neutral",
        Push => "push",
        Pull => "pull",
        Lift => "lift",
        Drop => "drop",
        Left => "left",
        Right => "right",
        RotateLeft => "rotateLeft",
        RotateRight => "rotateRight",
        RotateForwards => "rotateForwards",
        RotateBackwards => "rotateBackwards",
        RotateClockwise => "rotateClockwise",
        RotateAnticlockwise => "rotateAnticlockwise",
    }
);

label_enum!(
    /// Facial expression reported on the `fac` stream.
    FacialExpression {
        Neutral => "neutral",
        Blink => "blink",
        WinkL => "winkL",
        WinkR => "winkR",
        Frown => "frown",
        Surprise => "surprise",
        Smile => "smile",
        Clench => "clench",
    }
);

impl MentalCommand {
    pub fn is_neutral(self) -> bool {
        self == MentalCommand::Neutral
    }
}

impl FacialExpression {
    pub fn is_neutral(self) -> bool {
        self == FacialExpression::Neutral
    }
}

/// Message understood by the drone, sent verbatim as the MQTT payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DroneMessage {
    Fw,
    Bw,
    Left,
    Right,
    Up,
    Down,
    #[serde(rename = "stop")]
    Stop,
}

impl DroneMessage {
    pub const ALL: [DroneMessage; 7] = [
        DroneMessage::Fw,
        DroneMessage::Bw,
        DroneMessage::Left,
        DroneMessage::Right,
        DroneMessage::Up,
        DroneMessage::Down,
        DroneMessage::Stop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DroneMessage::Fw => "Fw",
            DroneMessage::Bw => "Bw",
            DroneMessage::Left => "Left",
            DroneMessage::Right => "Right",
            DroneMessage::Up => "Up",
            DroneMessage::Down => "Down",
            DroneMessage::Stop => "stop",
        }
    }

    /// Case-sensitive parse of a wire payload.
    pub fn from_wire(payload: &[u8]) -> Option<DroneMessage> {
        let text = std::str::from_utf8(payload).ok()?;
        DroneMessage::ALL.into_iter().find(|m| m.as_str() == text)
    }
}

impl fmt::Display for DroneMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DroneMessage {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DroneMessage::from_wire(s.as_bytes()).ok_or_else(|| UnknownLabel(s.to_string()))
    }
}
