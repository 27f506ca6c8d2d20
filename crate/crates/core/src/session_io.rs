//! On-disk formats: per-game configuration files, line-delimited pose
//! traces, and session logs.
//!
//! Logs are written canonically (sorted keys, two-space indentation, every
//! non-integer number with exactly six decimals, trailing newline), so two
//! equal logs are byte-identical and re-serializing a parsed log is a fixed
//! point. The summary stored in a log is recomputed on read and must agree
//! with the events.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chintuck::ChinTuckConfig;
use crate::error::{Error, Result};
use crate::event::{EventKind, GameEvent, GameKind};
use crate::pose::{PoseSample, UnitQuat, Vec3};
use crate::rom::{angles_from_forwards, CalibrationPoint, LateralMapping, RomAngles, RomConfig};

pub const SCHEMA_VERSION: &str = "1.0";

/// Tolerance used when comparing a stored summary with a recomputed one.
pub const SUMMARY_TOLERANCE: f64 = 1e-3;

/// Quaternions further than this from unit length are rejected on read.
const QUAT_RENORMALIZE_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum GameConfig {
    ChinTuck(ChinTuckConfig),
    Rom(RomConfig),
}

impl GameConfig {
    pub fn default_for(game: GameKind) -> Self {
        match game {
            GameKind::ChinTuck => GameConfig::ChinTuck(ChinTuckConfig::default()),
            GameKind::Rom => GameConfig::Rom(RomConfig::default()),
        }
    }

    pub fn game(&self) -> GameKind {
        match self {
            GameConfig::ChinTuck(_) => GameKind::ChinTuck,
            GameConfig::Rom(_) => GameKind::Rom,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GameConfig::ChinTuck(c) => c.validate()?,
            GameConfig::Rom(c) => c.validate()?,
        }
        Ok(())
    }

    /// Parses and validates a config from an already-decoded JSON value.
    pub fn from_value(game: GameKind, value: Value) -> Result<Self> {
        let config = match game {
            GameKind::ChinTuck => GameConfig::ChinTuck(
                serde_json::from_value(value).map_err(|e| Error::invalid(e.to_string()))?,
            ),
            GameKind::Rom => GameConfig::Rom(
                serde_json::from_value(value).map_err(|e| Error::invalid(e.to_string()))?,
            ),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("configs serialize to JSON")
    }
}

pub fn parse_config(game: GameKind, text: &str) -> Result<GameConfig> {
    let config = match game {
        GameKind::ChinTuck => {
            GameConfig::ChinTuck(serde_json::from_str(text).map_err(|e| Error::from_json(&e))?)
        }
        GameKind::Rom => {
            GameConfig::Rom(serde_json::from_str(text).map_err(|e| Error::from_json(&e))?)
        }
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(game: GameKind, path: impl AsRef<Path>) -> Result<GameConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(game, &text)
}

/// Fully-defaulted config as pretty JSON. Floats keep full precision so the
/// output reparses to an equal config.
pub fn config_to_string(config: &GameConfig) -> String {
    let mut text = serde_json::to_string_pretty(config).expect("configs serialize to JSON");
    text.push('\n');
    text
}

pub fn write_config(config: &GameConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, config_to_string(config)).map_err(|e| Error::io(path, e))
}

/// One trace line: a pose sample, optionally with a button press at that instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub sample: PoseSample,
    pub button: Option<Button>,
}

impl TraceRecord {
    pub fn pose(sample: PoseSample) -> Self {
        Self {
            sample,
            button: None,
        }
    }

    pub fn press(sample: PoseSample) -> Self {
        Self {
            sample,
            button: Some(Button::A),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Button {
    A,
}

/// Flat wire/trace form of a pose sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub button: Option<Button>,
}

impl From<&TraceRecord> for PoseRecord {
    fn from(r: &TraceRecord) -> Self {
        let (p, q) = (r.sample.position, r.sample.orientation);
        Self {
            t: r.sample.t,
            px: p.x,
            py: p.y,
            pz: p.z,
            qw: q.w,
            qx: q.x,
            qy: q.y,
            qz: q.z,
            button: r.button,
        }
    }
}

impl PoseRecord {
    /// Converts to a validated record. Quaternions slightly off unit length
    /// (export rounding) are renormalized; larger errors are rejected.
    pub fn into_record(self) -> Result<TraceRecord> {
        let values = [self.t, self.px, self.py, self.pz, self.qw, self.qx, self.qy, self.qz];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose fields must be finite"));
        }
        let norm = (self.qw * self.qw + self.qx * self.qx + self.qy * self.qy + self.qz * self.qz)
            .sqrt();
        let orientation = if (norm - 1.0).abs() <= crate::pose::UNIT_TOLERANCE {
            UnitQuat::new(self.qw, self.qx, self.qy, self.qz)?
        } else if (norm - 1.0).abs() <= QUAT_RENORMALIZE_LIMIT {
            UnitQuat::normalized(self.qw, self.qx, self.qy, self.qz)?
        } else {
            return Err(Error::invalid(format!(
                "orientation quaternion has norm {norm}, expected 1"
            )));
        };
        Ok(TraceRecord {
            sample: PoseSample::new(self.t, Vec3::new(self.px, self.py, self.pz), orientation),
            button: self.button,
        })
    }
}

/// Streaming trace parser. Yields records in order and stops at the first
/// error; blank lines are skipped.
pub struct TraceReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    index: usize,
    last_t: Option<f64>,
    failed: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            index: 0,
            last_t: None,
            failed: false,
        }
    }

    fn parse_line(&mut self, line: &str) -> Result<TraceRecord> {
        let raw: PoseRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: self.line_no,
            column: e.column(),
            message: e.to_string(),
        })?;
        let record = raw.into_record().map_err(|e| Error::Parse {
            line: self.line_no,
            column: 1,
            message: e.to_string(),
        })?;
        if let Some(prev) = self.last_t {
            if record.sample.t < prev {
                return Err(Error::StreamOrder {
                    index: self.index,
                    t: record.sample.t,
                    previous: prev,
                });
            }
        }
        self.last_t = Some(record.sample.t);
        self.index += 1;
        Ok(record)
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let result = self.parse_line(&line);
            self.failed = result.is_err();
            return Some(result);
        }
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    TraceReader::new(text.as_bytes()).collect()
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    TraceReader::new(BufReader::new(file)).collect()
}

/// One JSON object per line, floats at full precision.
pub fn trace_to_string(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&PoseRecord::from(r)).expect("finite pose"));
        out.push('\n');
    }
    out
}

pub fn write_trace(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(trace_to_string(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameResult {
    Won,
    Lost,
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSummary {
    pub hold_duration: f64,
    pub perfect: u32,
    pub partial: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChinTuckSummary {
    pub levels: Vec<LevelSummary>,
    pub result: GameResult,
    pub duration_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomSummary {
    /// Absent until all six calibration points and the neutral are known.
    pub angles: Option<RomAngles>,
    pub sets_completed: u32,
    pub tilts_left: u32,
    pub tilts_right: u32,
    pub result: GameResult,
    pub duration_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Summary {
    ChinTuck(ChinTuckSummary),
    Rom(RomSummary),
}

fn duration_minutes(events: &[GameEvent]) -> f64 {
    match (events.first(), events.last()) {
        (Some(a), Some(b)) => (b.t - a.t) / 60.0,
        _ => 0.0,
    }
}

/// Fold over the event list. The config supplies the level structure and the
/// lateral flexion mapping.
pub fn summarize(config: &GameConfig, events: &[GameEvent]) -> Summary {
    match config {
        GameConfig::ChinTuck(c) => Summary::ChinTuck(summarize_chintuck(c, events)),
        GameConfig::Rom(c) => Summary::Rom(summarize_rom(c, events)),
    }
}

fn summarize_chintuck(config: &ChinTuckConfig, events: &[GameEvent]) -> ChinTuckSummary {
    let mut levels: Vec<LevelSummary> = config
        .levels
        .iter()
        .map(|l| LevelSummary {
            hold_duration: l.hold_duration,
            perfect: 0,
            partial: 0,
        })
        .collect();
    let mut result = GameResult::Incomplete;
    for e in events {
        match e.kind {
            EventKind::TuckPerfect { level, .. } => {
                if let Some(l) = levels.get_mut(level) {
                    l.perfect += 1;
                }
            }
            EventKind::TuckPartial { level, .. } => {
                if let Some(l) = levels.get_mut(level) {
                    l.partial += 1;
                }
            }
            EventKind::GameWon { .. } => result = GameResult::Won,
            EventKind::GameLost { .. } => result = GameResult::Lost,
            _ => {}
        }
    }
    ChinTuckSummary {
        levels,
        result,
        duration_minutes: duration_minutes(events),
    }
}

fn summarize_rom(config: &RomConfig, events: &[GameEvent]) -> RomSummary {
    let mut neutral_forward = None;
    let mut points = BTreeMap::new();
    let mut extrema = None;
    let (mut sets, mut left, mut right) = (0, 0, 0);
    for e in events {
        match &e.kind {
            EventKind::CalibrationPointConfirmed {
                label,
                position,
                forward,
            } => {
                points.insert(
                    *label,
                    CalibrationPoint {
                        position: *position,
                        forward: *forward,
                    },
                );
            }
            EventKind::Calibrated { forward, .. } => neutral_forward = Some(*forward),
            EventKind::SetComplete { .. } => sets += 1,
            EventKind::TiltLeft { .. } => left += 1,
            EventKind::TiltRight { .. } => right += 1,
            EventKind::SessionComplete {
                max_roll_left,
                max_roll_right,
            } => extrema = Some((*max_roll_left, *max_roll_right)),
            _ => {}
        }
    }
    let complete = extrema.is_some();
    let angles = neutral_forward.and_then(|f| {
        if config.lateral_mapping == LateralMapping::GameplayRollMax && extrema.is_none() {
            return None;
        }
        angles_from_forwards(f, &points, config.lateral_mapping, extrema).ok()
    });
    RomSummary {
        angles,
        sets_completed: sets,
        tilts_left: left,
        tilts_right: right,
        result: if complete {
            GameResult::Complete
        } else {
            GameResult::Incomplete
        },
        duration_minutes: duration_minutes(events),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionHeader {
    pub game_id: GameKind,
    pub schema_version: String,
    /// Wall-clock start (RFC 3339). The only field that is not a function of the input.
    pub started_at: String,
    pub config: GameConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub events: Vec<GameEvent>,
    pub summary: Summary,
}

impl SessionLog {
    pub fn new(config: GameConfig, started_at: impl Into<String>, events: Vec<GameEvent>) -> Self {
        let summary = summarize(&config, &events);
        Self {
            header: SessionHeader {
                game_id: config.game(),
                schema_version: SCHEMA_VERSION.to_string(),
                started_at: started_at.into(),
                config,
            },
            events,
            summary,
        }
    }

    pub fn game(&self) -> GameKind {
        self.header.game_id
    }

    pub fn to_canonical_string(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(|e| Error::invalid(e.to_string()))?;
        canonical_json(&value)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::from_json(&e))?;
        Self::from_value(value)
    }

    fn from_value(mut value: Value) -> Result<Self> {
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::invalid("log must be a JSON object"))?;
        let mut header = obj
            .remove("header")
            .ok_or_else(|| Error::invalid("log is missing \"header\""))?;
        let version = header
            .get("schema_version")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::invalid("header is missing \"schema_version\""))?;
        if version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: version.to_string(),
                expected: SCHEMA_VERSION.to_string(),
            });
        }
        let game: GameKind = header
            .get("game_id")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::invalid(format!("game_id: {e}")))?
            .ok_or_else(|| Error::invalid("header is missing \"game_id\""))?;
        let started_at = header
            .get("started_at")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::invalid("header is missing \"started_at\""))?
            .to_string();
        let config = header
            .get_mut("config")
            .map(Value::take)
            .ok_or_else(|| Error::invalid("header is missing \"config\""))?;
        let config = GameConfig::from_value(game, config)?;
        let events: Vec<GameEvent> = serde_json::from_value(
            obj.remove("events")
                .ok_or_else(|| Error::invalid("log is missing \"events\""))?,
        )
        .map_err(|e| Error::invalid(format!("events: {e}")))?;
        if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::Integrity(format!(
                "event {} at t={} precedes the previous event",
                i + 1,
                events[i + 1].t
            )));
        }
        let stored = obj
            .remove("summary")
            .ok_or_else(|| Error::invalid("log is missing \"summary\""))?;
        let mut log = SessionLog::new(config, started_at, events);
        let recomputed = serde_json::to_value(&log.summary).expect("summary serializes");
        if let Some(path) = first_difference(&stored, &recomputed, "summary") {
            return Err(Error::Integrity(format!(
                "stored summary disagrees with the events at {path}"
            )));
        }
        // Keep the stored values so reading and rewriting a log is lossless.
        let bad_summary = |e: serde_json::Error| Error::invalid(format!("summary: {e}"));
        log.summary = match game {
            GameKind::ChinTuck => Summary::ChinTuck(serde_json::from_value(stored).map_err(bad_summary)?),
            GameKind::Rom => Summary::Rom(serde_json::from_value(stored).map_err(bad_summary)?),
        };
        Ok(log)
    }
}

pub fn write_log(log: &SessionLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = log.to_canonical_string()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<SessionLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SessionLog::parse(&text)
}

/// Path of the first value where `a` and `b` differ, numbers compared with
/// [`SUMMARY_TOLERANCE`].
fn first_difference(a: &Value, b: &Value, path: &str) -> Option<String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64()?, y.as_f64()?);
            ((x - y).abs() > SUMMARY_TOLERANCE).then(|| path.to_string())
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Some(path.to_string());
            }
            x.iter()
                .zip(y)
                .enumerate()
                .find_map(|(i, (p, q))| first_difference(p, q, &format!("{path}[{i}]")))
        }
        (Value::Object(x), Value::Object(y)) => {
            if x.len() != y.len() || x.keys().any(|k| !y.contains_key(k)) {
                return Some(path.to_string());
            }
            x.iter()
                .find_map(|(k, v)| first_difference(v, &y[k], &format!("{path}.{k}")))
        }
        _ => (a != b).then(|| path.to_string()),
    }
}

fn format_float(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::invalid("non-finite number cannot be serialized"));
    }
    let s = format!("{x:.6}");
    Ok(if s == "-0.000000" { "0.000000".into() } else { s })
}

/// Canonical JSON text: sorted keys, two-space indentation, integers as-is,
/// other numbers with six decimals, trailing newline.
pub fn canonical_json(value: &Value) -> Result<String> {
    let mut out = String::new();
    write_canonical(&mut out, value, 0)?;
    out.push('\n');
    Ok(out)
}

fn write_canonical(out: &mut String, value: &Value, depth: usize) -> Result<()> {
    let pad = |out: &mut String, d: usize| out.push_str(&"  ".repeat(d));
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => {
            out.push_str(&serde_json::to_string(value).expect("scalar serializes"))
        }
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().expect("f64 number"))?);
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_canonical(out, item, depth + 1)?;
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                pad(out, depth + 1);
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push_str(": ");
                write_canonical(out, &map[key.as_str()], depth + 1)?;
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
    Ok(())
}
