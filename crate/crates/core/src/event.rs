//! Engine output records.

use serde::{Deserialize, Serialize};

use crate::pose::Vec3;

/// Calibration direction labels in their fixed prompt order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
    TopLeft,
    BottomRight,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
        Direction::TopLeft,
        Direction::BottomRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Which of the two engines produced an event stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameKind {
    #[serde(rename = "chintuck")]
    ChinTuck,
    Rom,
}

impl GameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GameKind::ChinTuck => "chintuck",
            GameKind::Rom => "rom",
        }
    }
}

impl std::str::FromStr for GameKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chintuck" => Ok(GameKind::ChinTuck),
            "rom" => Ok(GameKind::Rom),
            other => Err(format!("unknown game {other:?} (expected chintuck or rom)")),
        }
    }
}

impl std::fmt::Display for GameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind-specific payload. The serialized form is `{"kind": "...", ...fields}`.
///
/// Level, wave and set indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    /// Neutral frame fixed. For the range-of-motion game this follows the
    /// sixth calibration point and carries the neutral forward direction.
    Calibrated {
        position: Vec3,
        forward: Vec3,
    },
    Recalibrated {
        position: Vec3,
        forward: Vec3,
    },
    CalibrationPointConfirmed {
        label: Direction,
        position: Vec3,
        forward: Vec3,
    },
    CountdownStart {
        level: usize,
        wave: usize,
    },
    WaveStart {
        level: usize,
        wave: usize,
    },
    ShieldActivated {
        level: usize,
        wave: usize,
    },
    TuckPerfect {
        level: usize,
        wave: usize,
        hold: f64,
    },
    TuckPartial {
        level: usize,
        wave: usize,
        hold: f64,
    },
    WaveFailed {
        level: usize,
        wave: usize,
        hp: f64,
    },
    LevelComplete {
        level: usize,
    },
    GameWon {
        level: usize,
        perfect: u32,
    },
    GameLost {
        level: usize,
        wave: usize,
    },
    FixationStart {
        set: usize,
        step: usize,
    },
    FixationBroken {
        set: usize,
        step: usize,
    },
    FixationComplete {
        set: usize,
        step: usize,
    },
    SetComplete {
        set: usize,
    },
    ConstellationUnlocked {
        set: usize,
    },
    TiltLeft {
        count: u32,
        roll: f64,
    },
    TiltRight {
        count: u32,
        roll: f64,
    },
    /// Terminal event of the range-of-motion game, with the largest roll seen
    /// per side during the lateral flexion phase (degrees, unsigned).
    SessionComplete {
        max_roll_left: f64,
        max_roll_right: f64,
    },
    Warning {
        message: String,
    },
}

/// Names of every event kind, used for schema exhaustiveness checks.
pub const EVENT_KIND_NAMES: [&str; 21] = [
    "Calibrated",
    "Recalibrated",
    "CalibrationPointConfirmed",
    "CountdownStart",
    "WaveStart",
    "ShieldActivated",
    "TuckPerfect",
    "TuckPartial",
    "WaveFailed",
    "LevelComplete",
    "GameWon",
    "GameLost",
    "FixationStart",
    "FixationBroken",
    "FixationComplete",
    "SetComplete",
    "ConstellationUnlocked",
    "TiltLeft",
    "TiltRight",
    "SessionComplete",
    "Warning",
];

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Calibrated { .. } => "Calibrated",
            EventKind::Recalibrated { .. } => "Recalibrated",
            EventKind::CalibrationPointConfirmed { .. } => "CalibrationPointConfirmed",
            EventKind::CountdownStart { .. } => "CountdownStart",
            EventKind::WaveStart { .. } => "WaveStart",
            EventKind::ShieldActivated { .. } => "ShieldActivated",
            EventKind::TuckPerfect { .. } => "TuckPerfect",
            EventKind::TuckPartial { .. } => "TuckPartial",
            EventKind::WaveFailed { .. } => "WaveFailed",
            EventKind::LevelComplete { .. } => "LevelComplete",
            EventKind::GameWon { .. } => "GameWon",
            EventKind::GameLost { .. } => "GameLost",
            EventKind::FixationStart { .. } => "FixationStart",
            EventKind::FixationBroken { .. } => "FixationBroken",
            EventKind::FixationComplete { .. } => "FixationComplete",
            EventKind::SetComplete { .. } => "SetComplete",
            EventKind::ConstellationUnlocked { .. } => "ConstellationUnlocked",
            EventKind::TiltLeft { .. } => "TiltLeft",
            EventKind::TiltRight { .. } => "TiltRight",
            EventKind::SessionComplete { .. } => "SessionComplete",
            EventKind::Warning { .. } => "Warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl GameEvent {
    pub fn new(t: f64, kind: EventKind) -> Self {
        Self { t, kind }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }
}
