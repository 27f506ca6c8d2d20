//! Drives one engine from trace records. Offline replay and the streaming
//! gateway both go through [`Session`], so they see identical event streams.
//!
//! Button handling: in the chin tuck game 'A' recalibrates from the samples of
//! the last `neutral_capture_window` seconds; in the range-of-motion game it
//! confirms the next calibration point and is ignored afterwards.

use std::collections::VecDeque;

use serde::Serialize;
use serde_json::Value;

use crate::chintuck::{ChinTuckEngine, Phase};
use crate::error::{Error, Result};
use crate::event::{EventKind, GameEvent};
use crate::pose::PoseSample;
use crate::rom::RomEngine;
use crate::session_io::{GameConfig, SessionLog, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    InProgress,
    Won,
    Lost,
    Complete,
}

impl SessionStatus {
    pub fn is_finished(self) -> bool {
        self != SessionStatus::InProgress
    }
}

#[derive(Debug, Clone)]
enum Engine {
    ChinTuck(Box<ChinTuckEngine>),
    Rom(Box<RomEngine>),
}

#[derive(Debug, Clone)]
pub struct Session {
    config: GameConfig,
    engine: Engine,
    events: Vec<GameEvent>,
    recent: VecDeque<PoseSample>,
}

impl Session {
    pub fn new(config: GameConfig) -> Result<Self> {
        let engine = match &config {
            GameConfig::ChinTuck(c) => Engine::ChinTuck(Box::new(ChinTuckEngine::new(c.clone())?)),
            GameConfig::Rom(c) => Engine::Rom(Box::new(RomEngine::new(c.clone())?)),
        };
        Ok(Self {
            config,
            engine,
            events: Vec::new(),
            recent: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn events(&self) -> &[GameEvent] {
        &self.events
    }

    pub fn status(&self) -> SessionStatus {
        match &self.engine {
            Engine::ChinTuck(e) => match e.phase() {
                Phase::Won => SessionStatus::Won,
                Phase::Lost => SessionStatus::Lost,
                _ => SessionStatus::InProgress,
            },
            Engine::Rom(e) if e.is_complete() => SessionStatus::Complete,
            Engine::Rom(_) => SessionStatus::InProgress,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.status().is_finished()
    }

    /// Steps one record and returns the events it produced. Records arriving
    /// after the session finished are ignored.
    pub fn feed(&mut self, record: &TraceRecord) -> Result<Vec<GameEvent>> {
        if self.is_finished() {
            return Ok(Vec::new());
        }
        let sample = &record.sample;
        let pressed = record.button.is_some();
        let new = match &mut self.engine {
            Engine::ChinTuck(engine) => {
                let mut out = engine.step(sample)?;
                let window = engine.config().neutral_capture_window;
                self.recent.push_back(*sample);
                while self
                    .recent
                    .front()
                    .is_some_and(|s| s.t < sample.t - window)
                {
                    self.recent.pop_front();
                }
                if pressed && !engine.phase().is_terminal() {
                    let window: Vec<PoseSample> = self.recent.iter().copied().collect();
                    match engine.recalibrate(&window) {
                        Ok(event) => out.push(event),
                        Err(Error::State(msg)) => out.push(GameEvent::new(
                            sample.t,
                            EventKind::Warning {
                                message: format!("recalibration ignored: {msg}"),
                            },
                        )),
                        Err(e) => return Err(e),
                    }
                }
                out
            }
            Engine::Rom(engine) if engine.is_calibrating() => {
                if pressed {
                    engine.confirm_point(sample)?
                } else {
                    engine.observe(sample)?;
                    Vec::new()
                }
            }
            Engine::Rom(engine) => engine.step(sample)?,
        };
        self.events.extend(new.iter().cloned());
        Ok(new)
    }

    /// Engine snapshot as JSON, for state messages.
    pub fn state(&self) -> Value {
        let value = match &self.engine {
            Engine::ChinTuck(e) => serde_json::to_value(e.snapshot()),
            Engine::Rom(e) => serde_json::to_value(e.snapshot()),
        };
        value.expect("snapshots serialize to JSON")
    }

    pub fn into_log(self, started_at: impl Into<String>) -> SessionLog {
        SessionLog::new(self.config, started_at, self.events)
    }
}

/// Current wall-clock time for log headers and file names.
pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Replays records until the trace ends or the session finishes.
pub fn replay(
    config: GameConfig,
    records: &[TraceRecord],
    started_at: impl Into<String>,
) -> Result<(SessionLog, SessionStatus)> {
    let mut session = Session::new(config)?;
    for record in records {
        session.feed(record)?;
        if session.is_finished() {
            break;
        }
    }
    let status = session.status();
    Ok((session.into_log(started_at), status))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chintuck::ChinTuckConfig;
    use crate::event::Direction;
    use crate::pose::{UnitQuat, Vec3, LOCAL_RIGHT};
    use crate::rom::RomConfig;

    fn still(t: f64) -> TraceRecord {
        TraceRecord::pose(PoseSample::new(t, Vec3::new(0.0, 1.2, 0.0), UnitQuat::IDENTITY))
    }

    #[test]
    fn chintuck_button_recalibrates_after_calibration() {
        let mut s = Session::new(GameConfig::ChinTuck(ChinTuckConfig::default())).unwrap();
        let mut early = still(1.0);
        early.button = Some(crate::session_io::Button::A);
        s.feed(&still(0.0)).unwrap();
        let ev = s.feed(&early).unwrap();
        assert_eq!(ev[0].name(), "Warning");
        for i in 2..=40 {
            s.feed(&still(i as f64 * 0.1 + 1.0)).unwrap();
        }
        let mut press = still(5.5);
        press.button = Some(crate::session_io::Button::A);
        let ev = s.feed(&press).unwrap();
        assert_eq!(ev.last().unwrap().name(), "Recalibrated");
        assert_eq!(ev.last().unwrap().t, 5.5);
    }

    #[test]
    fn rom_buttons_confirm_points() {
        let mut s = Session::new(GameConfig::Rom(RomConfig::default())).unwrap();
        s.feed(&still(0.0)).unwrap();
        for (i, deg) in [30.0, -30.0, 0.0, 0.0, 0.0, 0.0].into_iter().enumerate() {
            let q = UnitQuat::from_axis_angle(LOCAL_RIGHT, deg).unwrap();
            let rec = TraceRecord::press(PoseSample::new(1.0 + i as f64, Vec3::new(0.0, 1.2, 0.0), q));
            s.feed(&rec).unwrap();
        }
        let labels: Vec<Direction> = s
            .events()
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::CalibrationPointConfirmed { label, .. } => Some(label),
                _ => None,
            })
            .collect();
        assert_eq!(labels, Direction::ALL);
        assert_eq!(s.state()["phase"], "TargetScript");
    }

    #[test]
    fn replay_is_repeatable() {
        let records: Vec<TraceRecord> = (0..600).map(|i| still(i as f64 / 20.0)).collect();
        let cfg = GameConfig::ChinTuck(ChinTuckConfig::default());
        let (a, status) = replay(cfg.clone(), &records, "x").unwrap();
        let (b, _) = replay(cfg, &records, "x").unwrap();
        assert_eq!(status, SessionStatus::InProgress);
        assert_eq!(a.to_canonical_string().unwrap(), b.to_canonical_string().unwrap());
    }

    #[test]
    fn stream_order_error_propagates() {
        let mut s = Session::new(GameConfig::ChinTuck(ChinTuckConfig::default())).unwrap();
        s.feed(&still(1.0)).unwrap();
        assert!(matches!(s.feed(&still(0.5)), Err(Error::StreamOrder { .. })));
    }
}
