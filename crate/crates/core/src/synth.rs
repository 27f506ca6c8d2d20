//! Seeded synthetic users.
//!
//! Each generator produces a trace on a fixed sample grid (`t = i / rate`)
//! and an intent record describing what the simulated user set out to do.
//! Behaviour choices come from a ChaCha8 stream seeded with the profile seed;
//! sensor jitter comes from stream 1 of the same generator, so switching noise
//! on or off never changes the behaviour plan. Jitter is Gaussian, low-pass
//! filtered at 2 Hz per axis.
//!
//! For zero-noise profiles the intent record is exact: replaying the trace
//! reproduces it event for event.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chintuck::{ChinTuckConfig, TIME_EPS};
use crate::error::{ConfigError, Error, Result, Violation};
use crate::event::{Direction, Side};
use crate::pose::{
    angle_between, displacement_in, forward_of, ray_hits_sphere, roll_about, NeutralFrame,
    PoseSample, UnitQuat, Vec3, LOCAL_FORWARD, LOCAL_RIGHT, LOCAL_UP,
};
use crate::rom::{build_script, CalibrationPoint, RomConfig, ScriptItem};
use crate::session_io::TraceRecord;

/// Corner frequency of the jitter low-pass filter (Hz).
pub const NOISE_CUTOFF_HZ: f64 = 2.0;

/// How long the user keeps a perfect tuck past the required hold (s).
const RELEASE_MARGIN: f64 = 0.25;
/// Head turn speed when re-aiming (deg/s).
const TURN_RATE: f64 = 150.0;
/// Length of one attention draw during the target script (s).
const ATTENTION_SEGMENT: f64 = 1.0;
/// Where an inattentive user looks, relative to the target (deg).
const LOOK_AWAY: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RomExtents {
    pub up: f64,
    pub down: f64,
    pub left: f64,
    pub right: f64,
    pub top_left: f64,
    pub bottom_right: f64,
}

impl Default for RomExtents {
    /// Cohort means of the study this tool models.
    fn default() -> Self {
        Self {
            up: 49.80,
            down: 62.47,
            left: 45.18,
            right: 44.95,
            top_left: 43.26,
            bottom_right: 44.36,
        }
    }
}

impl RomExtents {
    pub fn get(&self, label: Direction) -> f64 {
        match label {
            Direction::Up => self.up,
            Direction::Down => self.down,
            Direction::Left => self.left,
            Direction::Right => self.right,
            Direction::TopLeft => self.top_left,
            Direction::BottomRight => self.bottom_right,
        }
    }

    fn get_mut(&mut self, label: Direction) -> &mut f64 {
        match label {
            Direction::Up => &mut self.up,
            Direction::Down => &mut self.down,
            Direction::Left => &mut self.left,
            Direction::Right => &mut self.right,
            Direction::TopLeft => &mut self.top_left,
            Direction::BottomRight => &mut self.bottom_right,
        }
    }

    /// Standard deviations matching the default means.
    pub fn cohort_sd() -> Self {
        Self {
            up: 13.57,
            down: 17.58,
            left: 20.75,
            right: 16.06,
            top_left: 6.90,
            bottom_right: 9.01,
        }
    }
}

/// Local rotation axis and signed angle for a calibration label. Rotating the
/// neutral pose by this reaches the label's extreme.
pub fn calibration_rotation(label: Direction, extent: f64) -> (Vec3, f64) {
    let diagonal = Vec3::new(1.0, 1.0, 0.0);
    match label {
        Direction::Up => (LOCAL_RIGHT, extent),
        Direction::Down => (LOCAL_RIGHT, -extent),
        Direction::Left => (LOCAL_UP, extent),
        Direction::Right => (LOCAL_UP, -extent),
        Direction::TopLeft => (diagonal, extent),
        Direction::BottomRight => (diagonal, -extent),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserProfile {
    pub seed: u64,
    /// Backward travel of a tuck (m).
    pub tuck_depth: f64,
    /// Delay from wave start to tucking (s).
    pub tuck_reaction: f64,
    /// Probability of releasing a tuck early in any wave.
    pub hold_slack: f64,
    /// Jitter standard deviation per axis (m).
    pub positional_noise: f64,
    /// Jitter standard deviation per axis (deg).
    pub rotational_noise: f64,
    pub sample_rate: f64,
    pub rom_extents: RomExtents,
    /// Probability of paying attention to the target in any one-second segment.
    pub fixation_accuracy: f64,
}

impl Default for UserProfile {
    fn default() -> Self {
        Self {
            seed: 0,
            tuck_depth: 0.05,
            tuck_reaction: 0.5,
            hold_slack: 0.0,
            positional_noise: 0.0,
            rotational_noise: 0.0,
            sample_rate: 72.0,
            rom_extents: RomExtents::default(),
            fixation_accuracy: 1.0,
        }
    }
}

impl UserProfile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        for (key, value) in [
            ("tuck_depth", self.tuck_depth),
            ("tuck_reaction", self.tuck_reaction),
            ("positional_noise", self.positional_noise),
            ("rotational_noise", self.rotational_noise),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                v.push(Violation::new(key, format!("must be >= 0 (got {value})")));
            }
        }
        for (key, value) in [
            ("hold_slack", self.hold_slack),
            ("fixation_accuracy", self.fixation_accuracy),
        ] {
            if !(0.0..=1.0).contains(&value) {
                v.push(Violation::new(key, format!("must be in [0, 1] (got {value})")));
            }
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            v.push(Violation::new("sample_rate", "must be > 0"));
        }
        for label in Direction::ALL {
            let value = self.rom_extents.get(label);
            if !(0.0..180.0).contains(&value) {
                v.push(Violation::new(
                    format!("rom_extents.{}", snake(label)),
                    format!("must be in [0, 180) (got {value})"),
                ));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations: v })
        }
    }
}

fn snake(label: Direction) -> &'static str {
    match label {
        Direction::Up => "up",
        Direction::Down => "down",
        Direction::Left => "left",
        Direction::Right => "right",
        Direction::TopLeft => "top_left",
        Direction::BottomRight => "bottom_right",
    }
}

/// Where the synthetic head sits and which way it faces at rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub head_position: Vec3,
    /// Yaw of the neutral pose about world up (deg).
    pub heading: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            head_position: Vec3::new(0.0, 1.6, 0.0),
            heading: 0.0,
        }
    }
}

impl Geometry {
    fn neutral(&self) -> Result<NeutralFrame> {
        NeutralFrame::new(
            self.head_position,
            UnitQuat::from_axis_angle(LOCAL_UP, self.heading)?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveOutcome {
    Perfect,
    Partial,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveIntent {
    pub level: usize,
    pub wave: usize,
    pub outcome: WaveOutcome,
    /// Sample time the tucked pose starts, if the user tucks this wave.
    pub tuck_start: Option<f64>,
    /// Sample time the user returns to neutral.
    pub release: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntendedResult {
    Won,
    Lost,
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChinTuckIntent {
    pub waves: Vec<WaveIntent>,
    pub perfect_per_level: Vec<u32>,
    pub partial_per_level: Vec<u32>,
    pub result: IntendedResult,
    /// Time of the terminal event.
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomIntent {
    pub extents: RomExtents,
    pub fixation_completes: u32,
    pub sets_completed: u32,
    pub tilts_left: u32,
    pub tilts_right: u32,
    pub max_roll_left: f64,
    pub max_roll_right: f64,
    pub result: IntendedResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace<I> {
    pub records: Vec<TraceRecord>,
    pub intent: I,
}

struct Jitter {
    alpha: f64,
    gain: f64,
    pos_sd: f64,
    rot_sd: f64,
    pos: [f64; 3],
    rot: [f64; 3],
    rng: ChaCha8Rng,
}

impl Jitter {
    fn new(profile: &UserProfile) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        rng.set_stream(1);
        let alpha = 1.0 - (-2.0 * std::f64::consts::PI * NOISE_CUTOFF_HZ / profile.sample_rate).exp();
        let mut j = Self {
            alpha,
            gain: ((2.0 - alpha) / alpha).sqrt(),
            pos_sd: profile.positional_noise,
            rot_sd: profile.rotational_noise,
            pos: [0.0; 3],
            rot: [0.0; 3],
            rng,
        };
        // Start from the filter's stationary distribution.
        for i in 0..3 {
            j.pos[i] = j.pos_sd * j.standard();
            j.rot[i] = j.rot_sd * j.standard();
        }
        j
    }

    fn standard(&mut self) -> f64 {
        Normal::new(0.0, 1.0).expect("unit normal").sample(&mut self.rng)
    }

    fn advance(&mut self) {
        for i in 0..3 {
            let w = self.standard();
            self.pos[i] += self.alpha * (self.gain * self.pos_sd * w - self.pos[i]);
            let w = self.standard();
            self.rot[i] += self.alpha * (self.gain * self.rot_sd * w - self.rot[i]);
        }
    }

    fn apply(&mut self, position: Vec3, q: UnitQuat) -> Result<(Vec3, UnitQuat)> {
        self.advance();
        if self.pos_sd == 0.0 && self.rot_sd == 0.0 {
            return Ok((position, q));
        }
        let p = position + Vec3::new(self.pos[0], self.pos[1], self.pos[2]);
        let r = Vec3::new(self.rot[0], self.rot[1], self.rot[2]);
        let q = if r.norm() > 0.0 {
            q * UnitQuat::from_axis_angle(r, r.norm())?
        } else {
            q
        };
        Ok((p, q))
    }
}

/// Emits jittered samples on the grid `t = i / rate`.
struct Emitter {
    rate: f64,
    i: usize,
    jitter: Jitter,
    records: Vec<TraceRecord>,
}

impl Emitter {
    fn new(profile: &UserProfile) -> Self {
        Self {
            rate: profile.sample_rate,
            i: 0,
            jitter: Jitter::new(profile),
            records: Vec::new(),
        }
    }

    fn now(&self) -> f64 {
        self.i as f64 / self.rate
    }

    fn emit(&mut self, position: Vec3, q: UnitQuat, press: bool) -> Result<PoseSample> {
        let (p, q) = self.jitter.apply(position, q)?;
        let sample = PoseSample::new(self.now(), p, q);
        self.records.push(if press {
            TraceRecord::press(sample)
        } else {
            TraceRecord::pose(sample)
        });
        self.i += 1;
        Ok(sample)
    }

    /// Emits samples while `now < start + duration`, posing with `f(progress)`.
    fn emit_for(
        &mut self,
        duration: f64,
        position: Vec3,
        mut f: impl FnMut(f64) -> Result<UnitQuat>,
    ) -> Result<Vec<PoseSample>> {
        let start = self.now();
        let mut out = Vec::new();
        while self.now() < start + duration - TIME_EPS {
            let q = f(((self.now() - start) / duration).clamp(0.0, 1.0))?;
            out.push(self.emit(position, q, false)?);
        }
        Ok(out)
    }
}

fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

/// First grid index whose time is at or after `t`.
fn index_at_or_after(t: f64, rate: f64) -> usize {
    let i = (t * rate - 1e-9).ceil().max(0.0) as usize;
    if (i as f64 / rate) < t - TIME_EPS {
        i + 1
    } else {
        i
    }
}

fn check_inputs(profile: &UserProfile) -> Result<()> {
    profile.validate()?;
    Ok(())
}

/// Chin tuck session: neutral until calibration closes, then one tuck per
/// wave starting `tuck_reaction` after the wave opens.
pub fn synth_chintuck(
    profile: &UserProfile,
    config: &ChinTuckConfig,
) -> Result<SynthTrace<ChinTuckIntent>> {
    check_inputs(profile)?;
    config.validate()?;
    let rate = profile.sample_rate;
    let time = |i: usize| i as f64 / rate;
    let geometry = Geometry::default();
    let frame = geometry.neutral()?;
    let tucked_position = frame.position + (-frame.forward) * profile.tuck_depth;
    let tuck_valid = {
        let d = displacement_in(&frame, &PoseSample::new(0.0, tucked_position, frame.orientation));
        d.backward >= config.backward_threshold
            && d.lateral <= config.lateral_tolerance
            && d.vertical <= config.lateral_tolerance
    };

    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let levels = config.levels.len();
    let mut waves = Vec::new();
    let mut tucks: Vec<(usize, usize)> = Vec::new();
    let mut perfect = vec![0u32; levels];
    let mut partial = vec![0u32; levels];
    let mut hp = config.hp_max;
    let (mut level, mut wave) = (0usize, 0usize);
    let mut wave_start =
        config.neutral_capture_delay + config.neutral_capture_window + config.countdown_duration;
    let (result, end_time) = loop {
        let spec = &config.levels[level];
        let hold = spec.hold_duration;
        let wave_end = wave_start + hold + config.wave_grace;
        let latest_release = wave_end + (config.rest_duration + config.countdown_duration) / 2.0;
        let slack = rng.random::<f64>() < profile.hold_slack;
        // Uniform in [partial_min_hold, hold); one draw per wave either way.
        let early = config.partial_min_hold
            + rng.random::<f64>() * (hold - config.partial_min_hold).max(0.0);

        let k = index_at_or_after(wave_start + profile.tuck_reaction, rate);
        let mut intent = WaveIntent {
            level,
            wave,
            outcome: WaveOutcome::Miss,
            tuck_start: None,
            release: None,
        };
        let mut perfect_at = None;
        if time(k) < wave_end - TIME_EPS {
            // Release sample counts for a partial hold: long enough to count,
            // short enough that the perfect timer has not fired.
            let d_min = (config.partial_min_hold * rate - 1e-6).ceil().max(1.0) as usize;
            let d_max = ((hold * rate - 1e-6).ceil() as usize).saturating_sub(1);
            let d = ((early * rate - 1e-9).ceil() as usize).clamp(d_min, d_max.max(d_min));
            let release = if slack && tuck_valid && d_min <= d_max && time(k + d) < wave_end - TIME_EPS
            {
                intent.outcome = WaveOutcome::Partial;
                k + d
            } else {
                if tuck_valid && time(k) + hold <= wave_end + TIME_EPS {
                    intent.outcome = WaveOutcome::Perfect;
                    perfect_at = Some(time(k) + hold);
                }
                let target = (time(k) + hold + RELEASE_MARGIN).min(latest_release);
                index_at_or_after(target, rate).max(k + 1)
            };
            intent.tuck_start = Some(time(k));
            intent.release = Some(time(release));
            tucks.push((k, release));
        }
        let outcome = intent.outcome;
        waves.push(intent);

        match outcome {
            WaveOutcome::Perfect => {
                perfect[level] += 1;
                let at = perfect_at.expect("perfect waves have a credit time");
                if level + 1 == levels && spec.perfect_to_win.is_some_and(|n| perfect[level] >= n) {
                    break (IntendedResult::Won, at);
                }
            }
            WaveOutcome::Partial | WaveOutcome::Miss => {
                if outcome == WaveOutcome::Partial {
                    partial[level] += 1;
                }
                hp = (hp - config.damage_per_failed_wave).max(0.0);
                if hp <= TIME_EPS {
                    break (IntendedResult::Lost, wave_end);
                }
            }
        }
        wave += 1;
        if wave >= spec.wave_count as usize {
            if level + 1 < levels {
                level += 1;
                wave = 0;
            } else if spec.perfect_to_win.is_none() {
                break (IntendedResult::Won, wave_end);
            }
        }
        wave_start = wave_end + config.rest_duration + config.countdown_duration;
    };

    let mut emitter = Emitter::new(profile);
    let last = index_at_or_after(end_time + 1.0, rate);
    let mut next_tuck = 0;
    while emitter.i <= last {
        let i = emitter.i;
        while next_tuck < tucks.len() && tucks[next_tuck].1 <= i {
            next_tuck += 1;
        }
        let tucked = tucks.get(next_tuck).is_some_and(|&(s, _)| s <= i);
        let position = if tucked { tucked_position } else { frame.position };
        emitter.emit(position, frame.orientation, false)?;
    }

    Ok(SynthTrace {
        records: emitter.records,
        intent: ChinTuckIntent {
            waves,
            perfect_per_level: perfect,
            partial_per_level: partial,
            result,
            end_time,
        },
    })
}

fn shortest_arc(from: Vec3, to: Vec3) -> Result<UnitQuat> {
    let axis = from.cross(to);
    if axis.norm() < 1e-12 {
        return if from.dot(to) > 0.0 {
            Ok(UnitQuat::IDENTITY)
        } else {
            UnitQuat::from_axis_angle(LOCAL_UP, 180.0)
        };
    }
    UnitQuat::from_axis_angle(axis, angle_between(from, to)?)
}

/// Orientation looking along world direction `dir` with no roll relative to `frame`.
fn aim(frame: &NeutralFrame, dir: Vec3) -> Result<UnitQuat> {
    let local = frame.orientation.conjugate().rotate(dir);
    Ok(frame.orientation * shortest_arc(LOCAL_FORWARD, local)?)
}

/// Turns `current` toward `target` by at most `max_deg`.
fn turn_toward(current: Vec3, target: Vec3, max_deg: f64) -> Result<Vec3> {
    let angle = angle_between(current, target)?;
    if angle <= max_deg {
        return Ok(target);
    }
    let axis = current.cross(target);
    if axis.norm() < 1e-12 {
        return Ok(UnitQuat::from_axis_angle(LOCAL_UP, max_deg)?.rotate(current));
    }
    Ok(UnitQuat::from_axis_angle(axis, max_deg)?.rotate(current))
}

/// The user's own account of script progress, advanced with the same
/// fixated-interval rule the game applies.
struct ScriptProgress {
    script: Vec<ScriptItem>,
    item: usize,
    elapsed: f64,
    sets: u32,
    fixation_completes: u32,
}

impl ScriptProgress {
    fn ship(&self) -> Vec3 {
        self.script[self.item].position_at(self.elapsed)
    }

    fn advance(&mut self, mut dt: f64, sets_required: u32) {
        while self.sets < sets_required {
            let item = self.script[self.item];
            let need = item.duration() - self.elapsed;
            if dt < need - TIME_EPS {
                self.elapsed += dt;
                return;
            }
            dt = (dt - need).max(0.0);
            if matches!(item, ScriptItem::Hold { .. }) {
                self.fixation_completes += 1;
            }
            self.item += 1;
            self.elapsed = 0.0;
            if self.item == self.script.len() {
                self.item = 0;
                self.sets += 1;
            }
        }
    }
}

/// Range-of-motion session: six calibration confirmations at poses rotated by
/// the profile's extents, the target script, then the prompted tilts.
pub fn synth_rom(
    profile: &UserProfile,
    config: &RomConfig,
    geometry: &Geometry,
) -> Result<SynthTrace<RomIntent>> {
    check_inputs(profile)?;
    config.validate()?;
    let frame = geometry.neutral()?;
    let head = frame.position;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut em = Emitter::new(profile);
    let dt = 1.0 / profile.sample_rate;
    let turn_step = TURN_RATE * dt;
    let extents = profile.rom_extents;

    // Calibration.
    em.emit_for(1.0, head, |_| Ok(frame.orientation))?;
    let mut points = std::collections::BTreeMap::new();
    let mut last_press = None;
    for (n, label) in Direction::ALL.into_iter().enumerate() {
        let (axis, angle) = calibration_rotation(label, extents.get(label));
        let pose_at = |s: f64| -> Result<UnitQuat> {
            Ok(frame.orientation * UnitQuat::from_axis_angle(axis, angle * s)?)
        };
        em.emit_for(1.0, head, |x| pose_at(smoothstep(x)))?;
        em.emit_for(0.5, head, |_| pose_at(1.0))?;
        let pressed = em.emit(head, pose_at(1.0)?, true)?;
        points.insert(
            label,
            CalibrationPoint {
                position: pressed.position,
                forward: forward_of(pressed.orientation)?,
            },
        );
        last_press = Some(pressed);
        if n + 1 < Direction::ALL.len() {
            em.emit_for(0.25, head, |_| pose_at(1.0))?;
            em.emit_for(1.0, head, |x| pose_at(1.0 - smoothstep(x)))?;
            em.emit_for(0.5, head, |_| Ok(frame.orientation))?;
        }
    }

    // Target script.
    let mut progress = ScriptProgress {
        script: build_script(&points, config)?,
        item: 0,
        elapsed: 0.0,
        sets: 0,
        fixation_completes: 0,
    };
    let press = last_press.expect("six presses emitted");
    let mut head_dir = forward_of(press.orientation)?;
    let mut fixating = ray_hits_sphere(press.position, head_dir, progress.ship(), config.target_radius)?;
    let mut prev_t = press.t;
    let script_start = press.t;
    let nominal: f64 = progress.script.iter().map(ScriptItem::duration).sum();
    let cap = script_start + 3.0 * nominal * config.sets_required as f64 + 30.0;
    let mut segment = usize::MAX;
    let mut attentive = false;
    let up = frame.orientation.rotate(LOCAL_UP);
    while progress.sets < config.sets_required {
        let t = em.now();
        if t > cap {
            break;
        }
        if fixating {
            progress.advance(t - prev_t, config.sets_required);
        }
        prev_t = t;
        if progress.sets >= config.sets_required {
            // This sample is the first one the game scores as a tilt sample.
            let q = aim(&frame, head_dir)?;
            em.emit(head, q, false)?;
            break;
        }
        let seg = ((t - script_start) / ATTENTION_SEGMENT) as usize;
        if seg != segment {
            segment = seg;
            attentive = rng.random::<f64>() < profile.fixation_accuracy;
        }
        let ship = progress.ship();
        let to_ship = (ship - head).normalized()?;
        let desired = if attentive {
            to_ship
        } else {
            UnitQuat::from_axis_angle(up, LOOK_AWAY)?.rotate(to_ship)
        };
        head_dir = turn_toward(head_dir, desired, turn_step)?;
        let sample = em.emit(head, aim(&frame, head_dir)?, false)?;
        fixating = ray_hits_sphere(
            sample.position,
            forward_of(sample.orientation)?,
            ship,
            config.target_radius,
        )?;
    }

    let mut intent = RomIntent {
        extents,
        fixation_completes: progress.fixation_completes,
        sets_completed: progress.sets,
        tilts_left: 0,
        tilts_right: 0,
        max_roll_left: 0.0,
        max_roll_right: 0.0,
        result: IntendedResult::Incomplete,
    };
    if progress.sets < config.sets_required {
        return Ok(SynthTrace {
            records: em.records,
            intent,
        });
    }

    // Lateral flexion. The user tracks the prompt the same way the game
    // does: a rep needs a return to the neutral band first.
    let mut tilt_samples: Vec<PoseSample> = Vec::new();
    while angle_between(head_dir, frame.forward)? > 0.0 {
        head_dir = turn_toward(head_dir, frame.forward, turn_step)?;
        tilt_samples.push(em.emit(head, aim(&frame, head_dir)?, false)?);
    }
    tilt_samples.extend(em.emit_for(1.0, head, |_| Ok(frame.orientation))?);
    let mut user = PromptFollower {
        per_side: config.tilts_per_side,
        band: config.neutral_band,
        threshold: config.tilt_threshold,
        prompted: Side::Left,
        armed: false,
        counts: (0, 0),
    };
    user.observe(&frame, &tilt_samples, &mut intent);
    loop {
        let before = user.counts;
        let peak = match user.prompted {
            Side::Left => -extents.top_left,
            Side::Right => extents.bottom_right,
        };
        let tilt = |s: f64| -> Result<UnitQuat> {
            Ok(frame.orientation * UnitQuat::from_axis_angle(LOCAL_FORWARD, peak * s)?)
        };
        let mut rep = em.emit_for(1.0, head, |x| tilt(smoothstep(x)))?;
        rep.extend(em.emit_for(0.5, head, |_| tilt(1.0))?);
        rep.extend(em.emit_for(1.0, head, |x| tilt(1.0 - smoothstep(x)))?);
        rep.extend(em.emit_for(0.5, head, |_| Ok(frame.orientation))?);
        user.observe(&frame, &rep, &mut intent);
        if user.done() {
            intent.result = IntendedResult::Complete;
            break;
        }
        if user.counts == before {
            break;
        }
    }
    let counts = user.counts;
    intent.tilts_left = counts.0;
    intent.tilts_right = counts.1;
    Ok(SynthTrace {
        records: em.records,
        intent,
    })
}

/// What the user believes the prompt is: a rep needs a return to the
/// neutral band, then the prompted side past the threshold.
struct PromptFollower {
    per_side: u32,
    band: f64,
    threshold: f64,
    prompted: Side,
    armed: bool,
    counts: (u32, u32),
}

impl PromptFollower {
    fn done(&self) -> bool {
        self.counts.0 >= self.per_side && self.counts.1 >= self.per_side
    }

    fn observe(&mut self, frame: &NeutralFrame, samples: &[PoseSample], intent: &mut RomIntent) {
        for s in samples {
            let r = roll_about(frame, s.orientation);
            if r < 0.0 {
                intent.max_roll_left = intent.max_roll_left.max(-r);
            } else {
                intent.max_roll_right = intent.max_roll_right.max(r);
            }
            if self.done() {
                continue;
            }
            if r.abs() <= self.band {
                self.armed = true;
                continue;
            }
            let side = if r < 0.0 { Side::Left } else { Side::Right };
            if !self.armed || r.abs() < self.threshold || side != self.prompted {
                continue;
            }
            self.armed = false;
            let (mine, other) = match side {
                Side::Left => (&mut self.counts.0, self.counts.1),
                Side::Right => (&mut self.counts.1, self.counts.0),
            };
            *mine += 1;
            if other < self.per_side {
                self.prompted = match side {
                    Side::Left => Side::Right,
                    Side::Right => Side::Left,
                };
            }
        }
    }
}

/// Population the synthetic cohort is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileDistribution {
    /// Fields not drawn below are copied from here.
    pub base: UserProfile,
    pub extents_mean: RomExtents,
    pub extents_sd: RomExtents,
    pub tuck_depth_mean: f64,
    pub tuck_depth_sd: f64,
    /// Slack is drawn uniformly from `[0, hold_slack_max]`.
    pub hold_slack_max: f64,
}

impl Default for ProfileDistribution {
    fn default() -> Self {
        Self {
            base: UserProfile {
                positional_noise: 0.001,
                rotational_noise: 0.3,
                ..Default::default()
            },
            extents_mean: RomExtents::default(),
            extents_sd: RomExtents::cohort_sd(),
            tuck_depth_mean: 0.05,
            tuck_depth_sd: 0.01,
            hold_slack_max: 0.3,
        }
    }
}

impl ProfileDistribution {
    pub fn sample(&self, rng: &mut impl Rng) -> Result<UserProfile> {
        let normal = |mean: f64, sd: f64| {
            Normal::new(mean, sd).map_err(|e| Error::invalid(format!("distribution: {e}")))
        };
        let mut p = self.base.clone();
        p.seed = rng.random();
        p.tuck_depth = normal(self.tuck_depth_mean, self.tuck_depth_sd)?
            .sample(rng)
            .max(0.0);
        p.hold_slack = rng.random::<f64>() * self.hold_slack_max.clamp(0.0, 1.0);
        for label in Direction::ALL {
            let value = normal(self.extents_mean.get(label), self.extents_sd.get(label))?.sample(rng);
            *p.rom_extents.get_mut(label) = value.clamp(5.0, 85.0);
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortMember {
    pub profile: UserProfile,
    pub chintuck: SynthTrace<ChinTuckIntent>,
    pub rom: SynthTrace<RomIntent>,
}

/// `n` independent synthetic participants, each playing both games.
pub fn synth_cohort(
    n: usize,
    distribution: &ProfileDistribution,
    seed: u64,
    chintuck: &ChinTuckConfig,
    rom: &RomConfig,
) -> Result<Vec<CohortMember>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let profile = distribution.sample(&mut rng)?;
            Ok(CohortMember {
                chintuck: synth_chintuck(&profile, chintuck)?,
                rom: synth_rom(&profile, rom, &Geometry::default())?,
                profile,
            })
        })
        .collect()
}
