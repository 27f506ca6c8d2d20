//! Range-of-motion game.
//!
//! Flow: six calibration confirmations, then `sets_required` passes of a
//! target script that the head-forward ray must track, then alternating
//! lateral tilts. Script progress only advances over intervals that start
//! with the head fixating the target; the fixation flag is re-evaluated at
//! every sample.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result, Violation};
use crate::event::{Direction, EventKind, GameEvent, Side};
use crate::pose::{
    angle_between, forward_of, ray_hits_sphere, roll_about, NeutralFrame, PoseSample, Vec3,
};

const TIME_EPS: f64 = 1e-9;

/// Calibration points closer than this to neutral forward (degrees) trigger a warning.
pub const DEGENERATE_ANGLE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateralMapping {
    /// Lateral flexion from the TopLeft / BottomRight calibration directions.
    #[default]
    DiagonalCalibration,
    /// Lateral flexion from the largest roll per side during the tilt phase.
    GameplayRollMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RomConfig {
    pub dwell_extreme: f64,
    pub dwell_mid: f64,
    /// Time to glide from one calibration target to the next (both halves).
    pub segment_travel_time: f64,
    pub target_radius: f64,
    /// Distance of targets along each calibrated forward direction (m).
    pub target_distance: f64,
    pub sets_required: u32,
    pub tilt_threshold: f64,
    pub neutral_band: f64,
    pub tilts_per_side: u32,
    pub path_order: Vec<Direction>,
    pub lateral_mapping: LateralMapping,
}

impl Default for RomConfig {
    fn default() -> Self {
        Self {
            dwell_extreme: 7.5,
            dwell_mid: 2.0,
            segment_travel_time: 4.0,
            target_radius: 0.2,
            target_distance: 2.0,
            sets_required: 3,
            tilt_threshold: 20.0,
            neutral_band: 5.0,
            tilts_per_side: 10,
            path_order: Direction::ALL.to_vec(),
            lateral_mapping: LateralMapping::DiagonalCalibration,
        }
    }
}

impl RomConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (key, value) in [
            ("dwell_extreme", self.dwell_extreme),
            ("dwell_mid", self.dwell_mid),
            ("segment_travel_time", self.segment_travel_time),
            ("target_radius", self.target_radius),
            ("target_distance", self.target_distance),
            ("neutral_band", self.neutral_band),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                v.push(Violation::new(key, format!("must be > 0 (got {value})")));
            }
        }
        if !(self.tilt_threshold > self.neutral_band) || !self.tilt_threshold.is_finite() {
            v.push(Violation::new(
                "tilt_threshold",
                format!(
                    "must be > neutral_band (got {} <= {})",
                    self.tilt_threshold, self.neutral_band
                ),
            ));
        }
        if self.sets_required < 1 {
            v.push(Violation::new("sets_required", "must be >= 1"));
        }
        if self.tilts_per_side < 1 {
            v.push(Violation::new("tilts_per_side", "must be >= 1"));
        }
        let mut seen = self.path_order.clone();
        seen.sort();
        seen.dedup();
        if self.path_order.len() != 6 || seen.len() != 6 {
            v.push(Violation::new(
                "path_order",
                "must be a permutation of the six direction labels",
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub position: Vec3,
    pub forward: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomCalibration {
    pub neutral: NeutralFrame,
    pub points: BTreeMap<Direction, CalibrationPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RomAngles {
    pub flexion: f64,
    pub extension: f64,
    pub rotation_left: f64,
    pub rotation_right: f64,
    pub lateral_flexion_left: f64,
    pub lateral_flexion_right: f64,
}

/// Maximum angles from a neutral forward direction and per-label forwards.
///
/// `roll_extrema` is `(left, right)` in degrees and is required for
/// [`LateralMapping::GameplayRollMax`].
pub fn angles_from_forwards(
    neutral_forward: Vec3,
    points: &BTreeMap<Direction, CalibrationPoint>,
    mapping: LateralMapping,
    roll_extrema: Option<(f64, f64)>,
) -> Result<RomAngles> {
    let angle = |label: Direction| -> Result<f64> {
        let p = points
            .get(&label)
            .ok_or_else(|| Error::invalid(format!("calibration is missing {label:?}")))?;
        angle_between(neutral_forward, p.forward)
    };
    let (lateral_left, lateral_right) = match mapping {
        LateralMapping::DiagonalCalibration => {
            (angle(Direction::TopLeft)?, angle(Direction::BottomRight)?)
        }
        LateralMapping::GameplayRollMax => roll_extrema.ok_or_else(|| {
            Error::invalid("gameplay roll extrema are required for the roll-max mapping")
        })?,
    };
    Ok(RomAngles {
        flexion: angle(Direction::Down)?,
        extension: angle(Direction::Up)?,
        rotation_left: angle(Direction::Left)?,
        rotation_right: angle(Direction::Right)?,
        lateral_flexion_left: lateral_left,
        lateral_flexion_right: lateral_right,
    })
}

pub fn compute_max_angles(
    calibration: &RomCalibration,
    config: &RomConfig,
    gameplay_roll_extrema: Option<(f64, f64)>,
) -> Result<RomAngles> {
    angles_from_forwards(
        calibration.neutral.forward,
        &calibration.points,
        config.lateral_mapping,
        gameplay_roll_extrema,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScriptItem {
    Hold { target: Vec3, duration: f64 },
    Glide { from: Vec3, to: Vec3, duration: f64 },
}

impl ScriptItem {
    pub fn duration(&self) -> f64 {
        match *self {
            ScriptItem::Hold { duration, .. } | ScriptItem::Glide { duration, .. } => duration,
        }
    }

    /// Target position after `elapsed` seconds of progress on this item.
    pub fn position_at(&self, elapsed: f64) -> Vec3 {
        match *self {
            ScriptItem::Hold { target, .. } => target,
            ScriptItem::Glide { from, to, duration } => {
                from.lerp(to, (elapsed / duration).clamp(0.0, 1.0))
            }
        }
    }
}

/// Spaceship target for a calibration label.
pub fn target_for(point: &CalibrationPoint, config: &RomConfig) -> Vec3 {
    point.position + point.forward * config.target_distance
}

/// One set of the target script: for every consecutive pair of `path_order`
/// (wrapping from the last label back to the first) hold at the first,
/// glide to the midpoint, hold there, glide on to the second.
pub fn build_script(
    points: &BTreeMap<Direction, CalibrationPoint>,
    config: &RomConfig,
) -> Result<Vec<ScriptItem>> {
    let target = |label: Direction| -> Result<Vec3> {
        points
            .get(&label)
            .map(|p| target_for(p, config))
            .ok_or_else(|| Error::invalid(format!("calibration is missing {label:?}")))
    };
    let order = &config.path_order;
    let half = config.segment_travel_time / 2.0;
    let mut script = Vec::with_capacity(order.len() * 4);
    for (i, &label) in order.iter().enumerate() {
        let a = target(label)?;
        let b = target(order[(i + 1) % order.len()])?;
        let mid = a.lerp(b, 0.5);
        script.push(ScriptItem::Hold {
            target: a,
            duration: config.dwell_extreme,
        });
        script.push(ScriptItem::Glide {
            from: a,
            to: mid,
            duration: half,
        });
        script.push(ScriptItem::Hold {
            target: mid,
            duration: config.dwell_mid,
        });
        script.push(ScriptItem::Glide {
            from: mid,
            to: b,
            duration: half,
        });
    }
    Ok(script)
}

/// Alternating left/right tilt counter with return-to-neutral hysteresis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltCounter {
    threshold: f64,
    band: f64,
    per_side: u32,
    prompted: Side,
    left: u32,
    right: u32,
    armed: bool,
}

impl TiltCounter {
    /// Starts prompting `Left`, disarmed until the first neutral reading.
    pub fn new(threshold: f64, band: f64, per_side: u32) -> Self {
        Self {
            threshold,
            band,
            per_side,
            prompted: Side::Left,
            left: 0,
            right: 0,
            armed: false,
        }
    }

    pub fn prompted(&self) -> Side {
        self.prompted
    }

    pub fn counts(&self) -> (u32, u32) {
        (self.left, self.right)
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    pub fn is_done(&self) -> bool {
        self.left >= self.per_side && self.right >= self.per_side
    }

    /// Feeds one signed roll reading (degrees, + = right) and returns the side
    /// of a newly counted repetition.
    pub fn update(&mut self, roll: f64) -> Option<Side> {
        if self.is_done() {
            return None;
        }
        let magnitude = roll.abs();
        if magnitude <= self.band {
            self.armed = true;
            return None;
        }
        if !self.armed || magnitude < self.threshold {
            return None;
        }
        let side = if roll < 0.0 { Side::Left } else { Side::Right };
        if side != self.prompted {
            return None;
        }
        self.armed = false;
        match side {
            Side::Left => self.left += 1,
            Side::Right => self.right += 1,
        }
        let other = match side {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        };
        let other_count = match other {
            Side::Left => self.left,
            Side::Right => self.right,
        };
        if other_count < self.per_side {
            self.prompted = other;
        }
        Some(side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltState {
    AwaitingNeutral,
    Armed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase")]
pub enum RomPhase {
    Calibrating {
        next_label: Direction,
    },
    TargetScript {
        set: usize,
        script_index: usize,
        dwell_elapsed: f64,
        spaceship_position: Vec3,
        fixating: bool,
    },
    LateralFlexion {
        side_prompted: Side,
        left_count: u32,
        right_count: u32,
        tilt_state: TiltState,
    },
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomState {
    #[serde(flatten)]
    pub phase: RomPhase,
    pub sets_completed: usize,
    pub sets_required: u32,
    pub constellations_unlocked: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Calibrating,
    TargetScript,
    LateralFlexion,
    Complete,
}

#[derive(Debug, Clone)]
pub struct RomEngine {
    config: RomConfig,
    stage: Stage,
    neutral: Option<NeutralFrame>,
    points: BTreeMap<Direction, CalibrationPoint>,
    script: Vec<ScriptItem>,
    set: usize,
    item: usize,
    item_elapsed: f64,
    fixating: bool,
    constellations: u32,
    tilt: TiltCounter,
    max_roll_left: f64,
    max_roll_right: f64,
    clock: Option<f64>,
    samples_seen: usize,
}

impl RomEngine {
    pub fn new(config: RomConfig) -> Result<Self> {
        config.validate()?;
        let tilt = TiltCounter::new(config.tilt_threshold, config.neutral_band, config.tilts_per_side);
        Ok(Self {
            config,
            stage: Stage::Calibrating,
            neutral: None,
            points: BTreeMap::new(),
            script: Vec::new(),
            set: 0,
            item: 0,
            item_elapsed: 0.0,
            fixating: false,
            constellations: 0,
            tilt,
            max_roll_left: 0.0,
            max_roll_right: 0.0,
            clock: None,
            samples_seen: 0,
        })
    }

    pub fn config(&self) -> &RomConfig {
        &self.config
    }

    pub fn neutral(&self) -> Option<&NeutralFrame> {
        self.neutral.as_ref()
    }

    pub fn is_calibrating(&self) -> bool {
        self.stage == Stage::Calibrating
    }

    pub fn is_complete(&self) -> bool {
        self.stage == Stage::Complete
    }

    pub fn next_label(&self) -> Option<Direction> {
        Direction::ALL.get(self.points.len()).copied()
    }

    pub fn calibration(&self) -> Option<RomCalibration> {
        if self.points.len() < Direction::ALL.len() {
            return None;
        }
        Some(RomCalibration {
            neutral: self.neutral?,
            points: self.points.clone(),
        })
    }

    pub fn script(&self) -> &[ScriptItem] {
        &self.script
    }

    /// `(left, right)` maximum roll magnitudes seen during the tilt phase.
    pub fn roll_extrema(&self) -> (f64, f64) {
        (self.max_roll_left, self.max_roll_right)
    }

    /// Maximum angles under the configured lateral mapping. The roll-max
    /// mapping is only available once the session is complete.
    pub fn angles(&self) -> Result<RomAngles> {
        let calibration = self
            .calibration()
            .ok_or_else(|| Error::state("calibration is incomplete"))?;
        let extrema = self.is_complete().then(|| self.roll_extrema());
        compute_max_angles(&calibration, &self.config, extrema)
    }

    fn accept_time(&mut self, sample: &PoseSample) -> Result<f64> {
        sample.validate()?;
        let dt = match self.clock {
            Some(prev) if sample.t < prev => {
                return Err(Error::StreamOrder {
                    index: self.samples_seen,
                    t: sample.t,
                    previous: prev,
                })
            }
            Some(prev) => sample.t - prev,
            None => 0.0,
        };
        self.samples_seen += 1;
        self.clock = Some(sample.t);
        Ok(dt)
    }

    /// Passive sample during calibration; the first one becomes the neutral pose.
    pub fn observe(&mut self, sample: &PoseSample) -> Result<()> {
        if self.stage != Stage::Calibrating {
            return Err(Error::state("observe is only valid while calibrating"));
        }
        self.accept_time(sample)?;
        if self.neutral.is_none() {
            self.neutral = Some(NeutralFrame::from_pose(sample)?);
        }
        Ok(())
    }

    /// Records the current pose under the next calibration label ('A' button).
    pub fn confirm_point(&mut self, sample: &PoseSample) -> Result<Vec<GameEvent>> {
        if self.stage != Stage::Calibrating {
            return Err(Error::state("calibration is already complete"));
        }
        let label = self
            .next_label()
            .ok_or_else(|| Error::state("all calibration points recorded"))?;
        let forward = forward_of(sample.orientation)?;
        self.accept_time(sample)?;
        let mut events = Vec::new();
        if self.neutral.is_none() {
            self.neutral = Some(NeutralFrame::from_pose(sample)?);
            events.push(GameEvent::new(
                sample.t,
                EventKind::Warning {
                    message: "no pose observed before calibration; neutral taken from the first confirmation".into(),
                },
            ));
        }
        let point = CalibrationPoint {
            position: sample.position,
            forward,
        };
        self.points.insert(label, point);
        events.push(GameEvent::new(
            sample.t,
            EventKind::CalibrationPointConfirmed {
                label,
                position: point.position,
                forward,
            },
        ));
        if self.points.len() == Direction::ALL.len() {
            self.finish_calibration(sample, &mut events)?;
        }
        Ok(events)
    }

    fn finish_calibration(&mut self, sample: &PoseSample, events: &mut Vec<GameEvent>) -> Result<()> {
        let neutral = self.neutral.expect("neutral captured before finishing calibration");
        events.push(GameEvent::new(
            sample.t,
            EventKind::Calibrated {
                position: neutral.position,
                forward: neutral.forward,
            },
        ));
        let degenerate: Vec<String> = Direction::ALL
            .iter()
            .filter(|label| {
                angle_between(neutral.forward, self.points[label].forward)
                    .map_or(true, |a| a < DEGENERATE_ANGLE)
            })
            .map(|label| format!("{label:?}"))
            .collect();
        if !degenerate.is_empty() {
            events.push(GameEvent::new(
                sample.t,
                EventKind::Warning {
                    message: format!(
                        "calibration points within {DEGENERATE_ANGLE} degree of neutral: {}",
                        degenerate.join(", ")
                    ),
                },
            ));
        }
        self.script = build_script(&self.points, &self.config)?;
        self.stage = Stage::TargetScript;
        self.set = 0;
        self.item = 0;
        self.item_elapsed = 0.0;
        self.fixating = false;
        self.update_fixation(sample, events)
    }

    pub fn spaceship_position(&self) -> Option<Vec3> {
        if self.stage != Stage::TargetScript {
            return None;
        }
        Some(self.script[self.item].position_at(self.item_elapsed))
    }

    pub fn step(&mut self, sample: &PoseSample) -> Result<Vec<GameEvent>> {
        match self.stage {
            Stage::Calibrating => return Err(Error::state("calibration is incomplete")),
            Stage::Complete => return Err(Error::state("session is complete")),
            _ => {}
        }
        let start = self.clock.unwrap_or(sample.t);
        let dt = self.accept_time(sample)?;
        let mut events = Vec::new();
        if self.stage == Stage::TargetScript {
            if self.fixating && dt > 0.0 {
                self.progress(start, dt, &mut events);
            }
            if self.stage == Stage::TargetScript {
                self.update_fixation(sample, &mut events)?;
            }
        }
        if self.stage == Stage::LateralFlexion {
            self.track_tilt(sample, &mut events);
        }
        Ok(events)
    }

    /// Consumes `dt` seconds of fixated time starting at `start`.
    fn progress(&mut self, start: f64, dt: f64, events: &mut Vec<GameEvent>) {
        let mut used = 0.0;
        while self.stage == Stage::TargetScript {
            let item = self.script[self.item];
            let need = item.duration() - self.item_elapsed;
            let remaining = dt - used;
            if remaining < need - TIME_EPS {
                self.item_elapsed += remaining;
                break;
            }
            used += need.max(0.0).min(remaining);
            let at = start + used;
            if let ScriptItem::Hold { .. } = item {
                events.push(GameEvent::new(
                    at,
                    EventKind::FixationComplete {
                        set: self.set,
                        step: self.item,
                    },
                ));
            }
            self.item += 1;
            self.item_elapsed = 0.0;
            if self.item == self.script.len() {
                events.push(GameEvent::new(at, EventKind::SetComplete { set: self.set }));
                events.push(GameEvent::new(
                    at,
                    EventKind::ConstellationUnlocked { set: self.set },
                ));
                self.constellations += 1;
                self.set += 1;
                self.item = 0;
                if self.set >= self.config.sets_required as usize {
                    self.stage = Stage::LateralFlexion;
                    self.fixating = false;
                }
            }
        }
    }

    fn update_fixation(&mut self, sample: &PoseSample, events: &mut Vec<GameEvent>) -> Result<()> {
        let ship = self.script[self.item].position_at(self.item_elapsed);
        let hit = ray_hits_sphere(
            sample.position,
            forward_of(sample.orientation)?,
            ship,
            self.config.target_radius,
        )?;
        if hit != self.fixating {
            let kind = if hit {
                EventKind::FixationStart {
                    set: self.set,
                    step: self.item,
                }
            } else {
                EventKind::FixationBroken {
                    set: self.set,
                    step: self.item,
                }
            };
            events.push(GameEvent::new(sample.t, kind));
            self.fixating = hit;
        }
        Ok(())
    }

    fn track_tilt(&mut self, sample: &PoseSample, events: &mut Vec<GameEvent>) {
        let neutral = self.neutral.expect("calibrated before the tilt phase");
        let roll = roll_about(&neutral, sample.orientation);
        if roll < 0.0 {
            self.max_roll_left = self.max_roll_left.max(-roll);
        } else {
            self.max_roll_right = self.max_roll_right.max(roll);
        }
        if let Some(side) = self.tilt.update(roll) {
            let (left, right) = self.tilt.counts();
            let kind = match side {
                Side::Left => EventKind::TiltLeft { count: left, roll },
                Side::Right => EventKind::TiltRight { count: right, roll },
            };
            events.push(GameEvent::new(sample.t, kind));
            if self.tilt.is_done() {
                self.stage = Stage::Complete;
                events.push(GameEvent::new(
                    sample.t,
                    EventKind::SessionComplete {
                        max_roll_left: self.max_roll_left,
                        max_roll_right: self.max_roll_right,
                    },
                ));
            }
        }
    }

    pub fn snapshot(&self) -> RomState {
        let phase = match self.stage {
            Stage::Calibrating => RomPhase::Calibrating {
                next_label: self.next_label().unwrap_or(Direction::BottomRight),
            },
            Stage::TargetScript => {
                let item = &self.script[self.item];
                RomPhase::TargetScript {
                    set: self.set,
                    script_index: self.item,
                    dwell_elapsed: match item {
                        ScriptItem::Hold { .. } => self.item_elapsed,
                        ScriptItem::Glide { .. } => 0.0,
                    },
                    spaceship_position: item.position_at(self.item_elapsed),
                    fixating: self.fixating,
                }
            }
            Stage::LateralFlexion => {
                let (left, right) = self.tilt.counts();
                RomPhase::LateralFlexion {
                    side_prompted: self.tilt.prompted(),
                    left_count: left,
                    right_count: right,
                    tilt_state: if self.tilt.armed() {
                        TiltState::Armed
                    } else {
                        TiltState::AwaitingNeutral
                    },
                }
            }
            Stage::Complete => RomPhase::Complete,
        };
        RomState {
            phase,
            sets_completed: self.set,
            sets_required: self.config.sets_required,
            constellations_unlocked: self.constellations,
        }
    }
}
