//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use neckmotion::analytics::{
    cohort_summary, mann_whitney_u, mann_whitney_u_with, one_sample_t, sus_score,
    wilcoxon_signed_rank, wilcoxon_signed_rank_with, Distribution, TestMethod,
};
use neckmotion::chintuck::ChinTuckConfig;
use neckmotion::gateway::{serve, GatewayOptions};
use neckmotion::pose::forward_of;
use neckmotion::replay::{replay, SessionStatus};
use neckmotion::rom::{compute_max_angles, CalibrationPoint, RomAngles, RomCalibration, RomConfig, TiltCounter};
use neckmotion::session_io::{GameConfig, Summary, TraceRecord};
use neckmotion::synth::{
    calibration_rotation, synth_chintuck, synth_cohort, synth_rom, Geometry, IntendedResult,
    ProfileDistribution, RomExtents, UserProfile, WaveOutcome,
};
use neckmotion::{Direction, EventKind, GameEvent, NeutralFrame, Side, UnitQuat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn count(events: &[GameEvent], name: &str) -> usize {
    events.iter().filter(|e| e.name() == name).count()
}

/// Per-wave outcome as the engine reported it, in wave order.
fn wave_outcomes(events: &[GameEvent]) -> Vec<(usize, usize, WaveOutcome)> {
    let mut out: Vec<(usize, usize, WaveOutcome)> = Vec::new();
    for e in events {
        match e.kind {
            EventKind::WaveStart { level, wave } => out.push((level, wave, WaveOutcome::Miss)),
            EventKind::TuckPartial { level, wave, .. } | EventKind::TuckPerfect { level, wave, .. } => {
                let perfect = matches!(e.kind, EventKind::TuckPerfect { .. });
                if let Some(slot) = out.iter_mut().rev().find(|w| (w.0, w.1) == (level, wave)) {
                    if perfect || slot.2 == WaveOutcome::Miss {
                        slot.2 = if perfect { WaveOutcome::Perfect } else { WaveOutcome::Partial };
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn status_matches(status: SessionStatus, intended: IntendedResult) -> bool {
    matches!(
        (status, intended),
        (SessionStatus::Won, IntendedResult::Won)
            | (SessionStatus::Lost, IntendedResult::Lost)
            | (SessionStatus::Complete, IntendedResult::Complete)
            | (SessionStatus::InProgress, IntendedResult::Incomplete)
    )
}

fn chintuck_agreement() -> Outcome {
    let config = ChinTuckConfig::default();
    let mut mix = BTreeMap::new();
    for seed in 0..50u64 {
        let (label, depth, slack) = match seed % 5 {
            0 => ("compliant", 0.05, 0.0),
            1 => ("partial", 0.05, 0.1),
            2 => ("partial", 0.04, 0.6),
            3 => ("absent", 0.0, 0.0),
            _ => ("shallow", 0.02, 0.0),
        };
        let profile = UserProfile {
            seed,
            tuck_depth: depth,
            hold_slack: slack,
            tuck_reaction: 0.2 + 0.05 * (seed % 7) as f64,
            sample_rate: 30.0,
            ..Default::default()
        };
        let trace = synth_chintuck(&profile, &config).map_err(|e| e.to_string())?;
        let (log, status) = replay(GameConfig::ChinTuck(config.clone()), &trace.records, "t")
            .map_err(|e| e.to_string())?;
        let intended: Vec<(usize, usize, WaveOutcome)> =
            trace.intent.waves.iter().map(|w| (w.level, w.wave, w.outcome)).collect();
        let observed = wave_outcomes(&log.events);
        ensure!(observed == intended, "seed {seed}: waves {observed:?} vs intent {intended:?}");
        ensure!(
            status_matches(status, trace.intent.result),
            "seed {seed}: status {status:?} vs intent {:?}",
            trace.intent.result
        );
        let Summary::ChinTuck(summary) = &log.summary else {
            return Err("wrong summary kind".into());
        };
        let perfect: Vec<u32> = summary.levels.iter().map(|l| l.perfect).collect();
        let partial: Vec<u32> = summary.levels.iter().map(|l| l.partial).collect();
        ensure!(perfect == trace.intent.perfect_per_level, "seed {seed}: perfect {perfect:?}");
        ensure!(partial == trace.intent.partial_per_level, "seed {seed}: partial {partial:?}");
        *mix.entry(format!("{label}/{status:?}")).or_insert(0) += 1;
    }
    Ok(format!("50 profiles agree; {mix:?}"))
}

fn win_loss_arithmetic() -> Outcome {
    let config = ChinTuckConfig::default();
    let final_level = config.levels.len() - 1;
    let won = synth_chintuck(&UserProfile::default(), &config).map_err(|e| e.to_string())?;
    let (log, status) = replay(GameConfig::ChinTuck(config.clone()), &won.records, "t")
        .map_err(|e| e.to_string())?;
    let final_perfect = log
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::TuckPerfect { level, .. } if level == final_level))
        .count();
    ensure!(status == SessionStatus::Won, "compliant profile ended {status:?}");
    ensure!(final_perfect == 10, "{final_perfect} perfect tucks at the final level");

    let lost_profile = UserProfile {
        tuck_depth: 0.0,
        ..Default::default()
    };
    let lost = synth_chintuck(&lost_profile, &config).map_err(|e| e.to_string())?;
    let (log, status) = replay(GameConfig::ChinTuck(config.clone()), &lost.records, "t")
        .map_err(|e| e.to_string())?;
    let expected = (config.hp_max / config.damage_per_failed_wave).round() as usize;
    let failed = count(&log.events, "WaveFailed");
    ensure!(status == SessionStatus::Lost, "zero-depth profile ended {status:?}");
    ensure!(failed == expected, "{failed} failed waves, expected {expected}");
    ensure!(log.events.last().map(GameEvent::name) == Some("GameLost"), "last event is not GameLost");
    Ok(format!("won with {final_perfect} final-level perfects; lost after {failed} failed waves"))
}

fn rom_agreement() -> Outcome {
    let config = RomConfig::default();
    let trace = synth_rom(&UserProfile::default(), &config, &Geometry::default()).map_err(|e| e.to_string())?;
    let (log, status) = replay(GameConfig::Rom(config), &trace.records, "t").map_err(|e| e.to_string())?;
    let counts = [
        count(&log.events, "SetComplete"),
        count(&log.events, "ConstellationUnlocked"),
        count(&log.events, "TiltLeft"),
        count(&log.events, "TiltRight"),
    ];
    ensure!(status == SessionStatus::Complete, "ended {status:?}");
    ensure!(counts == [3, 3, 10, 10], "set/constellation/left/right = {counts:?}");
    ensure!(
        counts[2] as u32 == trace.intent.tilts_left && counts[3] as u32 == trace.intent.tilts_right,
        "tilts disagree with intent"
    );
    ensure!(
        count(&log.events, "FixationComplete") as u32 == trace.intent.fixation_completes,
        "fixations disagree with intent"
    );
    Ok(format!("set/constellation/left/right = {counts:?}"))
}

fn angle_fields(a: &RomAngles) -> [f64; 6] {
    [
        a.flexion,
        a.extension,
        a.rotation_left,
        a.rotation_right,
        a.lateral_flexion_left,
        a.lateral_flexion_right,
    ]
}

fn angle_round_trip() -> Outcome {
    let extents = RomExtents::default();
    let want = [
        extents.down,
        extents.up,
        extents.left,
        extents.right,
        extents.top_left,
        extents.bottom_right,
    ];
    ensure!(want == [62.47, 49.80, 45.18, 44.95, 43.26, 44.36], "unexpected extents {want:?}");

    // Straight from rotated forward vectors.
    let neutral = NeutralFrame::new(Vec3::new(0.0, 1.6, 0.0), UnitQuat::IDENTITY).map_err(|e| e.to_string())?;
    let mut points = BTreeMap::new();
    for label in Direction::ALL {
        let (axis, angle) = calibration_rotation(label, extents.get(label));
        let q = UnitQuat::from_axis_angle(axis, angle).map_err(|e| e.to_string())?;
        let forward = forward_of(q).map_err(|e| e.to_string())?;
        points.insert(label, CalibrationPoint { position: neutral.position, forward });
    }
    let config = RomConfig::default();
    let direct = compute_max_angles(&RomCalibration { neutral, points }, &config, None).map_err(|e| e.to_string())?;

    // Through a synthesized calibration trace and the engine.
    let trace = synth_rom(&UserProfile::default(), &config, &Geometry::default()).map_err(|e| e.to_string())?;
    let sixth = trace
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.button.is_some())
        .nth(5)
        .map(|(i, _)| i)
        .ok_or("trace has fewer than six presses")?;
    let calibration: Vec<TraceRecord> = trace.records[..=sixth].to_vec();
    let (log, _) = replay(GameConfig::Rom(config), &calibration, "t").map_err(|e| e.to_string())?;
    let Summary::Rom(summary) = &log.summary else {
        return Err("wrong summary kind".into());
    };
    let engine = summary.angles.ok_or("engine reported no angles after calibration")?;

    let mut worst: f64 = 0.0;
    for got in [angle_fields(&direct), angle_fields(&engine)] {
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure!(worst <= 0.1, "largest angle error {worst:.4} deg");
    Ok(format!("largest angle error {worst:.2e} deg"))
}

fn random_trace(rng: &mut ChaCha8Rng, i: usize) -> (GameConfig, Vec<TraceRecord>) {
    let dist = ProfileDistribution::default();
    let mut profile = dist.sample(rng).expect("valid distribution");
    profile.sample_rate = [20.0, 30.0, 45.0][i % 3];
    profile.fixation_accuracy = rng.random_range(0.6..=1.0);
    if i.is_multiple_of(2) {
        let config = ChinTuckConfig::default();
        let records = synth_chintuck(&profile, &config).expect("synth").records;
        // Cut some traces short so unfinished sessions are covered too.
        let keep = if i.is_multiple_of(4) { records.len() * 2 / 3 } else { records.len() };
        (GameConfig::ChinTuck(config), records[..keep].to_vec())
    } else {
        let config = RomConfig::default();
        let records = synth_rom(&profile, &config, &Geometry::default()).expect("synth").records;
        (GameConfig::Rom(config), records)
    }
}

fn determinism_and_streaming() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = serve("127.0.0.1:0", GatewayOptions::new(dir.path())).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut events = 0;
    for i in 0..20 {
        let (config, records) = random_trace(&mut rng, i);
        let (a, _) = replay(config.clone(), &records, "2026-01-01T00:00:00.000Z").map_err(|e| e.to_string())?;
        let (b, _) = replay(config.clone(), &records, "2026-06-30T12:00:00.000Z").map_err(|e| e.to_string())?;
        let strip = |s: String| -> String {
            s.lines().filter(|l| !l.contains("\"started_at\"")).collect::<Vec<_>>().join("\n")
        };
        let (ca, cb) = (
            a.to_canonical_string().map_err(|e| e.to_string())?,
            b.to_canonical_string().map_err(|e| e.to_string())?,
        );
        ensure!(strip(ca) == strip(cb), "trace {i}: repeated replays differ");
        let streamed = common::stream_trace(server.local_addr(), &config, &records);
        let offline = serde_json::to_value(&a.events).map_err(|e| e.to_string())?;
        ensure!(
            offline == serde_json::Value::from(streamed.events()),
            "trace {i}: gateway events differ from offline replay"
        );
        events += a.events.len();
    }
    Ok(format!("20 traces, {events} events, identical across replay and gateway"))
}

fn sus_scoring() -> Outcome {
    let cases: [([u8; 10], f64); 3] = [
        ([5, 1, 5, 1, 5, 1, 5, 1, 5, 1], 100.0),
        ([3; 10], 50.0),
        ([4, 2, 4, 2, 4, 2, 4, 2, 4, 2], 75.0),
    ];
    for (items, want) in cases {
        let got = sus_score(&items).map_err(|e| e.to_string())?;
        ensure!(got == want, "{items:?} scored {got}, expected {want}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let items: Vec<u8> = (0..10).map(|_| rng.random_range(1..=5)).collect();
        let score = sus_score(&items).map_err(|e| e.to_string())?;
        let (odd, even) = (rng.random_range(0..5) * 2, rng.random_range(0..5) * 2 + 1);
        if items[odd] < 5 && items[even] < 5 {
            let mut bumped = items.clone();
            bumped[odd] += 1;
            bumped[even] += 1;
            let after = sus_score(&bumped).map_err(|e| e.to_string())?;
            ensure!(after == score, "{items:?}: paired bump moved the score");
        }
        if items[odd] < 5 {
            let mut bumped = items.clone();
            bumped[odd] += 1;
            ensure!(sus_score(&bumped).unwrap() == score + 2.5, "{items:?}: odd bump is not +2.5");
        }
        if items[even] < 5 {
            let mut bumped = items.clone();
            bumped[even] += 1;
            ensure!(sus_score(&bumped).unwrap() == score - 2.5, "{items:?}: even bump is not -2.5");
        }
    }
    Ok("closed forms exact; 1000 random item bumps consistent".into())
}

fn statistics_oracles() -> Outcome {
    let w = wilcoxon_signed_rank(&[4.0, 4.0, 4.0, 5.0, 5.0], 3.0).map_err(|e| e.to_string())?;
    ensure!(w.method == TestMethod::ExactEnumeration && w.p_value == 0.0625, "Wilcoxon p {}", w.p_value);
    let u = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ensure!(u.method == TestMethod::ExactEnumeration && u.p_value == 0.1, "Mann-Whitney p {}", u.p_value);
    let t = one_sample_t(&[69.0, 70.0, 71.0], 68.0).map_err(|e| e.to_string())?;
    let stat = 12f64.sqrt();
    let closed = 1.0 - stat / (2.0 + stat * stat).sqrt();
    ensure!((t.p_value - closed).abs() <= 1e-3, "t-test p {} vs closed form {closed}", t.p_value);
    ensure!((t.p_value - 0.0742).abs() <= 1e-3, "t-test p {}", t.p_value);

    // 100 tie-free samples per test: Wilcoxon on n values, Mann-Whitney on
    // two groups of 8..=16 values each.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_w, mut worst_u): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.random_range(8..=16);
        let sample: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 4.0).collect();
        let exact = wilcoxon_signed_rank_with(&sample, 0.0, Distribution::Exact).map_err(|e| e.to_string())?;
        let normal = wilcoxon_signed_rank_with(&sample, 0.0, Distribution::Normal).map_err(|e| e.to_string())?;
        worst_w = worst_w.max((exact.p_value - normal.p_value).abs());

        let nb = rng.random_range(8..=16);
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random::<f64>() * 10.0 + 2.0).collect();
        let exact = mann_whitney_u_with(&a, &b, Distribution::Exact).map_err(|e| e.to_string())?;
        let normal = mann_whitney_u_with(&a, &b, Distribution::Normal).map_err(|e| e.to_string())?;
        worst_u = worst_u.max((exact.p_value - normal.p_value).abs());
    }
    let detail = format!("largest exact/normal gap: Wilcoxon {worst_w:.4}, Mann-Whitney {worst_u:.4}");
    ensure!(worst_w <= 0.02 && worst_u <= 0.02, "{detail}");
    Ok(format!("point oracles exact; {detail}"))
}

/// Straight scan of the rules: wait for a reading inside the neutral band,
/// then count the first reading at or past the threshold on the prompted side.
fn reference_tilts(signal: &[f64], threshold: f64, band: f64, per_side: u32) -> Vec<(usize, Side)> {
    let mut out = Vec::new();
    let (mut left, mut right) = (0u32, 0u32);
    let mut prompted = Side::Left;
    let mut pos = 0;
    while left < per_side || right < per_side {
        let Some(neutral) = (pos..signal.len()).find(|&i| signal[i].abs() <= band) else { break };
        let hit = (neutral + 1..signal.len()).find(|&j| {
            let r = signal[j];
            r.abs() >= threshold
                && r.abs() > band
                && match prompted {
                    Side::Left => r < 0.0,
                    Side::Right => r > 0.0,
                }
        });
        let Some(hit) = hit else { break };
        out.push((hit, prompted));
        match prompted {
            Side::Left => left += 1,
            Side::Right => right += 1,
        }
        let (other, other_count) = match prompted {
            Side::Left => (Side::Right, right),
            Side::Right => (Side::Left, left),
        };
        if other_count < per_side {
            prompted = other;
        }
        pos = hit + 1;
    }
    out
}

fn hysteresis_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counted = 0;
    for s in 0..1000 {
        let threshold = rng.random_range(10.0..30.0f64).round();
        let band = rng.random_range(1.0..8.0f64).round();
        let per_side = rng.random_range(1..=10);
        let len = rng.random_range(100..1500);
        let (f1, f2) = (rng.random_range(0.005..0.05), rng.random_range(0.05..0.3));
        let (a1, a2) = (rng.random_range(5.0..45.0), rng.random_range(0.0..15.0));
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        // Quantized so readings land exactly on the threshold and band edges.
        let signal: Vec<f64> = (0..len)
            .map(|i| {
                let x = i as f64;
                let v = a1 * (f1 * x + phase).sin() + a2 * (f2 * x).sin() + rng.random_range(-3.0..3.0);
                (v * 2.0).round() / 2.0
            })
            .collect();
        let mut counter = TiltCounter::new(threshold, band, per_side);
        let engine: Vec<(usize, Side)> = signal
            .iter()
            .enumerate()
            .filter_map(|(i, r)| counter.update(*r).map(|side| (i, side)))
            .collect();
        let reference = reference_tilts(&signal, threshold, band, per_side);
        ensure!(engine == reference, "signal {s}: engine {engine:?} vs reference {reference:?}");
        counted += engine.len();
    }
    Ok(format!("1000 signals, {counted} counted tilts, no disagreements"))
}

fn pipeline_smoke() -> Outcome {
    let (chintuck, rom) = (ChinTuckConfig::default(), RomConfig::default());
    let cohort = synth_cohort(19, &ProfileDistribution::default(), 2024, &chintuck, &rom).map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    for member in &cohort {
        let (log, _) = replay(GameConfig::ChinTuck(chintuck.clone()), &member.chintuck.records, "t")
            .map_err(|e| e.to_string())?;
        logs.push(log);
        let (log, _) = replay(GameConfig::Rom(rom.clone()), &member.rom.records, "t").map_err(|e| e.to_string())?;
        logs.push(log);
    }
    let report = cohort_summary(&logs);
    let text = report.to_text();
    let expected = [
        ("Chin tuck", "# Perfect chin tucks (5 sec)"),
        ("Chin tuck", "# Perfect chin tucks (7 sec)"),
        ("Chin tuck", "# Perfect chin tucks (10 sec)"),
        ("Chin tuck", "Game completion time (min)"),
        ("Range of Motion", "Max Flexion (degree)"),
        ("Range of Motion", "Max Extension (degree)"),
        ("Range of Motion", "Max Left Rotation (degree)"),
        ("Range of Motion", "Max Right Rotation (degree)"),
        ("Range of Motion", "Max Left Lateral Flexion (degree)"),
        ("Range of Motion", "Max Right Lateral Flexion (degree)"),
        ("Range of Motion", "Game completion time (min)"),
    ];
    let rows: Vec<(&str, &str)> = report.rows.iter().map(|r| (r.game.as_str(), r.metric.as_str())).collect();
    ensure!(rows == expected, "rows {rows:?}");
    for row in &report.rows {
        ensure!(
            row.n > 0 && row.mean.is_finite() && row.sd.is_finite(),
            "{}: n={} mean={} sd={}",
            row.metric,
            row.n,
            row.mean,
            row.sd
        );
        ensure!(text.contains(&row.metric) && text.contains(&row.result()), "{} missing from text", row.metric);
    }
    let flexion = &report.rows[4];
    Ok(format!("{} rows rendered; Max Flexion {}", report.rows.len(), flexion.result()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "chin tuck engine/synth agreement", limit: Some(Duration::from_secs(10)), run: chintuck_agreement },
        Criterion { name: "win/loss arithmetic", limit: None, run: win_loss_arithmetic },
        Criterion { name: "range-of-motion engine/synth agreement", limit: None, run: rom_agreement },
        Criterion { name: "angle round trip", limit: Some(Duration::from_secs(1)), run: angle_round_trip },
        Criterion { name: "determinism and stream/replay equivalence", limit: Some(Duration::from_secs(30)), run: determinism_and_streaming },
        Criterion { name: "SUS scoring", limit: None, run: sus_scoring },
        Criterion { name: "statistics oracles", limit: None, run: statistics_oracles },
        Criterion { name: "tilt hysteresis property", limit: Some(Duration::from_secs(10)), run: hysteresis_property },
        Criterion { name: "cohort pipeline smoke", limit: Some(Duration::from_secs(60)), run: pipeline_smoke },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let elapsed = started.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("took {:.2} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()))
            }
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {}: {} ({detail}; {:.2} s)", i + 1, c.name, elapsed.as_secs_f64());
        if result.is_err() {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
