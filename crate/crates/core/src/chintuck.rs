//! Chin tuck strengthening game.
//!
//! The engine is a pure function of its configuration and the timestamps and
//! poses it is fed. Timers (countdown, wave, rest) fire at their scheduled
//! times; posture is treated as constant between consecutive samples, so a
//! hold that reaches its required duration between two samples is credited at
//! the exact moment it did so.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result, Violation};
use crate::event::{EventKind, GameEvent};
use crate::pose::{displacement_in, FrameDisplacement, NeutralFrame, PoseSample, Vec3};

/// Slack applied when comparing accumulated hold time against thresholds.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub hold_duration: f64,
    pub wave_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perfect_to_win: Option<u32>,
}

impl LevelSpec {
    pub fn new(hold_duration: f64, wave_count: u32) -> Self {
        Self {
            hold_duration,
            wave_count,
            perfect_to_win: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChinTuckConfig {
    /// Minimum backward travel (m) for a valid tuck.
    pub backward_threshold: f64,
    /// Maximum lateral and vertical drift (m).
    pub lateral_tolerance: f64,
    /// Maximum orientation deviation (degrees).
    pub rotation_tolerance: f64,
    pub partial_min_hold: f64,
    pub levels: Vec<LevelSpec>,
    pub hp_max: f64,
    pub damage_per_failed_wave: f64,
    pub rest_duration: f64,
    pub countdown_duration: f64,
    /// Extra wave time beyond the required hold.
    pub wave_grace: f64,
    pub neutral_capture_delay: f64,
    pub neutral_capture_window: f64,
}

impl Default for ChinTuckConfig {
    fn default() -> Self {
        Self {
            backward_threshold: 0.03,
            lateral_tolerance: 0.03,
            rotation_tolerance: 10.0,
            partial_min_hold: 1.0,
            levels: vec![
                LevelSpec::new(5.0, 5),
                LevelSpec::new(7.0, 5),
                LevelSpec {
                    hold_duration: 10.0,
                    wave_count: 10,
                    perfect_to_win: Some(10),
                },
            ],
            hp_max: 100.0,
            damage_per_failed_wave: 20.0,
            rest_duration: 10.0,
            countdown_duration: 3.0,
            wave_grace: 3.0,
            neutral_capture_delay: 2.0,
            neutral_capture_window: 1.0,
        }
    }
}

fn require_positive(out: &mut Vec<Violation>, key: &str, value: f64) {
    if !(value > 0.0) || !value.is_finite() {
        out.push(Violation::new(key, format!("must be > 0 (got {value})")));
    }
}

impl ChinTuckConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        require_positive(&mut v, "backward_threshold", self.backward_threshold);
        require_positive(&mut v, "lateral_tolerance", self.lateral_tolerance);
        require_positive(&mut v, "rotation_tolerance", self.rotation_tolerance);
        require_positive(&mut v, "partial_min_hold", self.partial_min_hold);
        require_positive(&mut v, "rest_duration", self.rest_duration);
        require_positive(&mut v, "countdown_duration", self.countdown_duration);
        require_positive(&mut v, "wave_grace", self.wave_grace);
        require_positive(&mut v, "neutral_capture_delay", self.neutral_capture_delay);
        require_positive(&mut v, "neutral_capture_window", self.neutral_capture_window);
        if self.levels.is_empty() {
            v.push(Violation::new("levels", "non-empty required"));
        }
        let last = self.levels.len().saturating_sub(1);
        for (i, level) in self.levels.iter().enumerate() {
            require_positive(&mut v, &format!("levels[{i}].hold_duration"), level.hold_duration);
            if level.wave_count < 1 {
                v.push(Violation::new(format!("levels[{i}].wave_count"), "must be >= 1"));
            }
            match level.perfect_to_win {
                Some(0) => v.push(Violation::new(
                    format!("levels[{i}].perfect_to_win"),
                    "must be >= 1",
                )),
                Some(_) if i != last => v.push(Violation::new(
                    format!("levels[{i}].perfect_to_win"),
                    "only allowed on the final level",
                )),
                _ => {}
            }
            if i > 0 && !(level.hold_duration > self.levels[i - 1].hold_duration) {
                v.push(Violation::new(
                    format!("levels[{i}].hold_duration"),
                    "must be strictly greater than the previous level",
                ));
            }
        }
        require_positive(&mut v, "hp_max", self.hp_max);
        if !(self.damage_per_failed_wave > 0.0 && self.damage_per_failed_wave <= self.hp_max) {
            v.push(Violation::new(
                "damage_per_failed_wave",
                format!("must be in (0, hp_max] (got {})", self.damage_per_failed_wave),
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    AwaitingCalibration,
    Countdown,
    Wave,
    Rest,
    Won,
    Lost,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Won | Phase::Lost)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    InProgress,
    Won,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChinTuckState {
    pub phase: Phase,
    pub level_index: usize,
    pub wave_index: usize,
    pub hp: f64,
    pub hold_elapsed: f64,
    pub shield_active: bool,
    /// Shield growth in `[0, 1]`: hold progress toward the level's duration.
    pub shield_intensity: f64,
    pub perfect_counts: Vec<u32>,
    pub partial_counts: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuckPosture {
    pub displacement: FrameDisplacement,
    pub is_valid: bool,
}

/// Neutral frame from a capture window: mean position, orientation of the
/// temporal-median sample.
pub fn neutral_from_window(window: &[PoseSample]) -> Result<NeutralFrame> {
    if window.is_empty() {
        return Err(Error::invalid("calibration window is empty"));
    }
    if window.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::invalid("calibration window is not time-ordered"));
    }
    // Averaged as offsets from the first sample so identical poses stay exact.
    let origin = window[0].position;
    let offset = window
        .iter()
        .fold(Vec3::ZERO, |acc, s| acc + (s.position - origin));
    let mean = origin + offset * (1.0 / window.len() as f64);
    let median = &window[(window.len() - 1) / 2];
    NeutralFrame::new(mean, median.orientation)
}

#[derive(Debug, Clone)]
pub struct ChinTuckEngine {
    config: ChinTuckConfig,
    frame: Option<NeutralFrame>,
    phase: Phase,
    level: usize,
    wave: usize,
    hp: f64,
    clock: Option<f64>,
    samples_seen: usize,
    capture_start: Option<f64>,
    capture: Vec<PoseSample>,
    phase_end: f64,
    hold_start: Option<f64>,
    wave_perfect: bool,
    perfect_counts: Vec<u32>,
    partial_counts: Vec<u32>,
}

impl ChinTuckEngine {
    pub fn new(config: ChinTuckConfig) -> Result<Self> {
        config.validate()?;
        let levels = config.levels.len();
        Ok(Self {
            hp: config.hp_max,
            config,
            frame: None,
            phase: Phase::AwaitingCalibration,
            level: 0,
            wave: 0,
            clock: None,
            samples_seen: 0,
            capture_start: None,
            capture: Vec::new(),
            phase_end: 0.0,
            hold_start: None,
            wave_perfect: false,
            perfect_counts: vec![0; levels],
            partial_counts: vec![0; levels],
        })
    }

    pub fn config(&self) -> &ChinTuckConfig {
        &self.config
    }

    pub fn neutral(&self) -> Option<&NeutralFrame> {
        self.frame.as_ref()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn outcome(&self) -> Outcome {
        match self.phase {
            Phase::Won => Outcome::Won,
            Phase::Lost => Outcome::Lost,
            _ => Outcome::InProgress,
        }
    }

    fn hold_duration(&self) -> f64 {
        self.config.levels[self.level].hold_duration
    }

    fn is_final_level(&self) -> bool {
        self.level + 1 == self.config.levels.len()
    }

    pub fn classify(&self, sample: &PoseSample) -> Result<TuckPosture> {
        let frame = self
            .frame
            .as_ref()
            .ok_or_else(|| Error::state("engine is not calibrated"))?;
        let d = displacement_in(frame, sample);
        let c = &self.config;
        let is_valid = d.backward >= c.backward_threshold
            && d.lateral <= c.lateral_tolerance
            && d.vertical <= c.lateral_tolerance
            && d.rotation_dev <= c.rotation_tolerance;
        Ok(TuckPosture {
            displacement: d,
            is_valid,
        })
    }

    pub fn step(&mut self, sample: &PoseSample) -> Result<Vec<GameEvent>> {
        if self.phase.is_terminal() {
            return Err(Error::state("game is over"));
        }
        sample.validate()?;
        if let Some(prev) = self.clock {
            if sample.t < prev {
                return Err(Error::StreamOrder {
                    index: self.samples_seen,
                    t: sample.t,
                    previous: prev,
                });
            }
        }
        self.samples_seen += 1;
        self.clock = Some(sample.t);

        let mut events = Vec::new();
        if self.phase == Phase::AwaitingCalibration && !self.capture_neutral(sample, &mut events)? {
            return Ok(events);
        }
        self.advance(sample.t, &mut events);
        if self.phase == Phase::Wave {
            self.track_posture(sample, &mut events)?;
        }
        Ok(events)
    }

    /// Returns true once the neutral frame is fixed.
    fn capture_neutral(&mut self, sample: &PoseSample, events: &mut Vec<GameEvent>) -> Result<bool> {
        let start = *self.capture_start.get_or_insert(sample.t);
        let open = start + self.config.neutral_capture_delay;
        let close = open + self.config.neutral_capture_window;
        if sample.t >= open && sample.t <= close {
            self.capture.push(*sample);
        }
        if sample.t < close {
            return Ok(false);
        }
        let window = if self.capture.is_empty() {
            vec![*sample]
        } else {
            std::mem::take(&mut self.capture)
        };
        let frame = neutral_from_window(&window)?;
        events.push(GameEvent::new(
            close,
            EventKind::Calibrated {
                position: frame.position,
                forward: frame.forward,
            },
        ));
        self.frame = Some(frame);
        self.enter_countdown(close, events);
        Ok(true)
    }

    fn enter_countdown(&mut self, at: f64, events: &mut Vec<GameEvent>) {
        self.phase = Phase::Countdown;
        self.phase_end = at + self.config.countdown_duration;
        events.push(GameEvent::new(
            at,
            EventKind::CountdownStart {
                level: self.level,
                wave: self.wave,
            },
        ));
    }

    /// Fires every timer due at or before `t`, in time order.
    fn advance(&mut self, t: f64, events: &mut Vec<GameEvent>) {
        loop {
            match self.phase {
                Phase::Countdown if self.phase_end <= t => {
                    let at = self.phase_end;
                    self.phase = Phase::Wave;
                    self.phase_end = at + self.hold_duration() + self.config.wave_grace;
                    self.hold_start = None;
                    self.wave_perfect = false;
                    events.push(GameEvent::new(
                        at,
                        EventKind::WaveStart {
                            level: self.level,
                            wave: self.wave,
                        },
                    ));
                }
                Phase::Rest if self.phase_end <= t => {
                    let at = self.phase_end;
                    self.enter_countdown(at, events);
                }
                Phase::Wave => {
                    let hold = self.hold_duration();
                    let perfect_at = match self.hold_start {
                        Some(hs) if !self.wave_perfect && t - hs >= hold - TIME_EPS => {
                            Some((hs + hold).min(t))
                        }
                        _ => None,
                    };
                    match perfect_at {
                        Some(at) if at <= self.phase_end + TIME_EPS => {
                            self.credit_perfect(at, events);
                        }
                        _ if self.phase_end <= t => self.end_wave(events),
                        _ => break,
                    }
                }
                _ => break,
            }
            if self.phase.is_terminal() {
                break;
            }
        }
    }

    fn credit_perfect(&mut self, at: f64, events: &mut Vec<GameEvent>) {
        self.wave_perfect = true;
        self.perfect_counts[self.level] += 1;
        events.push(GameEvent::new(
            at,
            EventKind::TuckPerfect {
                level: self.level,
                wave: self.wave,
                hold: self.hold_duration(),
            },
        ));
        let target = self.config.levels[self.level].perfect_to_win;
        if let Some(target) = target {
            if self.is_final_level() && self.perfect_counts[self.level] >= target {
                self.phase = Phase::Won;
                events.push(GameEvent::new(
                    at,
                    EventKind::GameWon {
                        level: self.level,
                        perfect: self.perfect_counts[self.level],
                    },
                ));
            }
        }
    }

    fn end_wave(&mut self, events: &mut Vec<GameEvent>) {
        let at = self.phase_end;
        self.hold_start = None;
        if !self.wave_perfect {
            self.hp = (self.hp - self.config.damage_per_failed_wave).max(0.0);
            events.push(GameEvent::new(
                at,
                EventKind::WaveFailed {
                    level: self.level,
                    wave: self.wave,
                    hp: self.hp,
                },
            ));
            if self.hp <= TIME_EPS {
                self.hp = 0.0;
                self.phase = Phase::Lost;
                events.push(GameEvent::new(
                    at,
                    EventKind::GameLost {
                        level: self.level,
                        wave: self.wave,
                    },
                ));
                return;
            }
        }
        self.wave += 1;
        let spec = &self.config.levels[self.level];
        if self.wave >= spec.wave_count as usize {
            if !self.is_final_level() {
                events.push(GameEvent::new(at, EventKind::LevelComplete { level: self.level }));
                self.level += 1;
                self.wave = 0;
            } else if spec.perfect_to_win.is_none() {
                // Without a perfect-tuck target, surviving the final level wins.
                self.phase = Phase::Won;
                events.push(GameEvent::new(
                    at,
                    EventKind::GameWon {
                        level: self.level,
                        perfect: self.perfect_counts[self.level],
                    },
                ));
                return;
            }
        }
        self.phase = Phase::Rest;
        self.phase_end = at + self.config.rest_duration;
    }

    fn track_posture(&mut self, sample: &PoseSample, events: &mut Vec<GameEvent>) -> Result<()> {
        let posture = self.classify(sample)?;
        match (self.hold_start, posture.is_valid) {
            (None, true) => {
                self.hold_start = Some(sample.t);
                events.push(GameEvent::new(
                    sample.t,
                    EventKind::ShieldActivated {
                        level: self.level,
                        wave: self.wave,
                    },
                ));
            }
            (Some(hs), false) => {
                self.hold_start = None;
                let hold = sample.t - hs;
                if !self.wave_perfect && hold >= self.config.partial_min_hold - TIME_EPS {
                    self.partial_counts[self.level] += 1;
                    events.push(GameEvent::new(
                        sample.t,
                        EventKind::TuckPartial {
                            level: self.level,
                            wave: self.wave,
                            hold,
                        },
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Replaces the neutral frame from `window` (the 'A' button). Phase, hp
    /// and scores are untouched; any hold in progress restarts.
    pub fn recalibrate(&mut self, window: &[PoseSample]) -> Result<GameEvent> {
        if self.phase.is_terminal() {
            return Err(Error::state("game is over"));
        }
        if self.phase == Phase::AwaitingCalibration {
            return Err(Error::state("initial calibration still in progress"));
        }
        let frame = neutral_from_window(window)?;
        let last = window[window.len() - 1].t;
        let at = self.clock.map_or(last, |c| c.max(last));
        self.frame = Some(frame);
        self.hold_start = None;
        Ok(GameEvent::new(
            at,
            EventKind::Recalibrated {
                position: frame.position,
                forward: frame.forward,
            },
        ))
    }

    pub fn snapshot(&self) -> ChinTuckState {
        let hold_elapsed = match (self.hold_start, self.clock) {
            (Some(hs), Some(now)) => (now - hs).max(0.0),
            _ => 0.0,
        };
        ChinTuckState {
            phase: self.phase,
            level_index: self.level,
            wave_index: self.wave,
            hp: self.hp,
            hold_elapsed,
            shield_active: self.hold_start.is_some(),
            shield_intensity: (hold_elapsed / self.hold_duration()).clamp(0.0, 1.0),
            perfect_counts: self.perfect_counts.clone(),
            partial_counts: self.partial_counts.clone(),
        }
    }
}
