use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use neckmotion::analytics::{cohort_summary, threshold_report, ResponseTable, SusResponse, SUS_THRESHOLD};
use neckmotion::gateway::{run_stdio, serve, GatewayOptions, LOG_DIR_ENV};
use neckmotion::replay::{now_rfc3339, replay, SessionStatus};
use neckmotion::rom::{compute_max_angles, RomAngles, RomCalibration, RomConfig};
use neckmotion::session_io::{
    load_config, read_log, read_trace, write_log, write_trace, GameConfig, Summary,
};
use neckmotion::synth::{synth_chintuck, synth_rom, Geometry, UserProfile};
use neckmotion::GameKind;

/// Replay, serve, synthesize and analyze neck exercise game sessions.
#[derive(Debug, Parser)]
#[command(name = "neckmotion", version)]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a recorded pose trace through a game engine and write the session log.
    Replay {
        /// Game to play: chintuck or rom.
        #[arg(long)]
        game: GameKind,
        /// Game configuration JSON (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pose trace, one JSON record per line.
        #[arg(long)]
        trace: PathBuf,
        /// Where to write the session log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the streaming gateway over TCP, or one session over stdin/stdout.
    Serve {
        /// TCP address to listen on, e.g. 127.0.0.1:7070.
        #[arg(long, required_unless_present = "stdio", conflicts_with = "stdio")]
        listen: Option<String>,
        /// Directory for session logs.
        #[arg(long, env = LOG_DIR_ENV, required_unless_present = "stdio")]
        log_dir: Option<PathBuf>,
        /// Serve a single session over stdin/stdout.
        #[arg(long)]
        stdio: bool,
        /// Game for --stdio: chintuck or rom.
        #[arg(long, required_if_eq("stdio", "true"))]
        game: Option<GameKind>,
        /// Game configuration JSON for --stdio.
        #[arg(long, requires = "stdio")]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic pose trace and the intent record behind it.
    Synth {
        /// Game to synthesize: chintuck or rom.
        #[arg(long)]
        game: GameKind,
        /// User profile JSON (defaults when omitted).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Game configuration JSON (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the profile's random draws; overrides the profile file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output trace path.
        #[arg(long)]
        out: PathBuf,
        /// Output intent path [default: <out>.intent.json].
        #[arg(long)]
        intent: Option<PathBuf>,
    },
    /// Summaries and statistics.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Maximum neck angles from a range-of-motion calibration file.
    Angles {
        /// Calibration JSON: neutral frame plus the six confirmed points.
        #[arg(long)]
        calibration: PathBuf,
        /// Range-of-motion configuration JSON (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum Analyze {
    /// Cohort summary (mean ± SD per metric) over session logs.
    Session {
        /// Session log files.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// SUS scores from a questionnaire CSV, tested against a threshold.
    Sus {
        /// CSV with one respondent per row and columns q1..q10.
        csv: PathBuf,
        /// Usability threshold for the one-sample t-test.
        #[arg(long, default_value_t = SUS_THRESHOLD)]
        threshold: f64,
    },
}

fn load_game_config(game: GameKind, path: Option<&Path>) -> anyhow::Result<GameConfig> {
    match path {
        Some(p) => Ok(load_config(game, p)?),
        None => Ok(GameConfig::default_for(game)),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn angles_text(a: &RomAngles) -> String {
    [
        ("flexion", a.flexion),
        ("extension", a.extension),
        ("rotation left", a.rotation_left),
        ("rotation right", a.rotation_right),
        ("lateral flexion left", a.lateral_flexion_left),
        ("lateral flexion right", a.lateral_flexion_right),
    ]
    .iter()
    .map(|(name, v)| format!("{name:<22} {v:7.2} deg\n"))
    .collect()
}

fn summary_text(summary: &Summary) -> String {
    let mut out = String::new();
    match summary {
        Summary::ChinTuck(s) => {
            out += &format!("result: {:?}\n", s.result).to_lowercase();
            for (i, level) in s.levels.iter().enumerate() {
                out += &format!(
                    "level {} ({} s hold): {} perfect, {} partial\n",
                    i + 1,
                    level.hold_duration,
                    level.perfect,
                    level.partial
                );
            }
            out += &format!("duration: {:.2} min\n", s.duration_minutes);
        }
        Summary::Rom(s) => {
            out += &format!("result: {:?}\n", s.result).to_lowercase();
            out += &format!("sets completed: {}\n", s.sets_completed);
            out += &format!("tilts: {} left, {} right\n", s.tilts_left, s.tilts_right);
            match &s.angles {
                Some(a) => out += &angles_text(a),
                None => out += "angles: calibration incomplete\n",
            }
            out += &format!("duration: {:.2} min\n", s.duration_minutes);
        }
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Replay {
            game,
            config,
            trace,
            out,
        } => {
            let config = load_game_config(game, config.as_deref())?;
            let records = read_trace(&trace)?;
            let (log, status) = replay(config, &records, now_rfc3339())?;
            if let Some(path) = &out {
                write_log(&log, path)?;
            }
            if cli.json {
                print_json(&serde_json::json!({ "status": status, "summary": log.summary }))?;
            } else {
                print!("{}", summary_text(&log.summary));
                if let Some(path) = &out {
                    println!("log: {}", path.display());
                }
            }
            Ok(if status == SessionStatus::Lost {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Serve {
            listen,
            log_dir,
            stdio,
            game,
            config,
        } => {
            if stdio {
                let game = game.context("--stdio needs --game")?;
                let config = load_game_config(game, config.as_deref())?;
                let code = run_stdio(
                    config,
                    std::io::stdin().lock(),
                    std::io::stdout().lock(),
                    log_dir.as_deref(),
                )?;
                return Ok(ExitCode::from(code as u8));
            }
            let (Some(listen), Some(log_dir)) = (listen, log_dir) else {
                bail!("serve needs --listen and --log-dir");
            };
            let server = serve(listen.as_str(), GatewayOptions::new(log_dir))?;
            eprintln!("listening on {}", server.local_addr());
            server.wait();
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            game,
            profile,
            config,
            seed,
            out,
            intent,
        } => {
            let mut profile: UserProfile = match &profile {
                Some(p) => read_json(p, "profile")?,
                None => UserProfile::default(),
            };
            if let Some(seed) = seed {
                profile.seed = seed;
            }
            let config = load_game_config(game, config.as_deref())?;
            let intent_path = intent.unwrap_or_else(|| {
                let mut name = out.clone().into_os_string();
                name.push(".intent.json");
                PathBuf::from(name)
            });
            let records = match &config {
                GameConfig::ChinTuck(c) => {
                    let trace = synth_chintuck(&profile, c)?;
                    write_json(&intent_path, &trace.intent)?;
                    trace.records
                }
                GameConfig::Rom(c) => {
                    let trace = synth_rom(&profile, c, &Geometry::default())?;
                    write_json(&intent_path, &trace.intent)?;
                    trace.records
                }
            };
            write_trace(&records, &out)?;
            if cli.json {
                print_json(&serde_json::json!({
                    "records": records.len(),
                    "trace": out,
                    "intent": intent_path,
                }))?;
            } else {
                println!("wrote {} records to {}", records.len(), out.display());
                println!("intent: {}", intent_path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { what } => {
            match what {
                Analyze::Session { logs } => {
                    let logs = logs.iter().map(read_log).collect::<Result<Vec<_>, _>>()?;
                    let report = cohort_summary(&logs);
                    if cli.json {
                        print_json(&report)?;
                    } else {
                        print!("{}", report.to_text());
                    }
                }
                Analyze::Sus { csv, threshold } => {
                    let table = ResponseTable::from_path(&csv)?;
                    let scores: Vec<f64> = table.sus()?.iter().map(SusResponse::score).collect();
                    let report = threshold_report(&scores, threshold);
                    let items = table.item_tests(3.0);
                    if cli.json {
                        print_json(&serde_json::json!({
                            "scores": scores,
                            "threshold": report,
                            "items": items,
                        }))?;
                    } else {
                        print!("{}", report.to_text());
                        println!("item scores vs neutral 3 (Wilcoxon signed-rank):");
                        for item in &items {
                            match &item.test {
                                Some(t) => println!(
                                    "  {:<4} {:.1}±{:.1}  p = {:.4}",
                                    item.item, item.mean, item.sd, t.p_value
                                ),
                                None => println!(
                                    "  {:<4} {:.1}±{:.1}  {}",
                                    item.item,
                                    item.mean,
                                    item.sd,
                                    item.error.as_deref().unwrap_or("")
                                ),
                            }
                        }
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Angles {
            calibration,
            config,
        } => {
            let calibration: RomCalibration = read_json(&calibration, "calibration")?;
            let config = match load_game_config(GameKind::Rom, config.as_deref())? {
                GameConfig::Rom(c) => c,
                GameConfig::ChinTuck(_) => RomConfig::default(),
            };
            let angles = compute_max_angles(&calibration, &config, None)?;
            if cli.json {
                print_json(&angles)?;
            } else {
                print!("{}", angles_text(&angles));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// 3 for anything caused by I/O, 1 otherwise.
fn failure_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.is::<std::io::Error>()
            || matches!(
                e.downcast_ref::<neckmotion::Error>(),
                Some(neckmotion::Error::Io { .. } | neckmotion::Error::Stream(_))
            )
    });
    if io {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e:#}");
            ExitCode::from(failure_code(&e))
        }
    }
}
