//! Live ingestion over newline-delimited JSON.
//!
//! Client messages:
//!
//! ```text
//! {"type":"hello","game":"chintuck","config":{...}}      config or config_path, both optional
//! {"type":"pose","t":0.0,"px":0,"py":1.6,"pz":0,"qw":1,"qx":0,"qy":0,"qz":0}
//! {"type":"button","name":"A"}                           applies to the next pose
//! {"type":"end"}
//! ```
//!
//! A pose may also carry `"button":"A"` directly, exactly like a trace line.
//!
//! Server messages: `config_ack {game, config}`, `event {seq, event}`,
//! `state {t, state}`, `end {reason, status, summary, log}` and
//! `error {message, fatal}`. A fatal error closes the connection.
//!
//! Every connection owns one [`Session`]; game time comes only from the
//! client's timestamps. When a session ends (terminal outcome, client `end`,
//! disconnect, fatal error or server shutdown) its log is written to the log
//! directory as `<game>-<start>-<seq>.json`.

use std::io::{BufRead, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::event::GameKind;
use crate::replay::{now_rfc3339, Session, SessionStatus};
use crate::session_io::{load_config, write_log, Button, GameConfig, PoseRecord, TraceRecord};

/// Environment variable naming the default log directory.
pub const LOG_DIR_ENV: &str = "NECKMOTION_LOG_DIR";

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub log_dir: PathBuf,
    /// Stream-time spacing of state messages (s).
    pub state_interval: f64,
}

impl GatewayOptions {
    pub fn new(log_dir: impl Into<PathBuf>) -> Self {
        Self {
            log_dir: log_dir.into(),
            state_interval: 0.25,
        }
    }
}

/// Why a session stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    Finished,
    ClientEnd,
    Disconnected,
    Shutdown,
    ProtocolError,
}

impl EndReason {
    fn as_str(self) -> &'static str {
        match self {
            EndReason::Finished => "finished",
            EndReason::ClientEnd => "client_end",
            EndReason::Disconnected => "disconnected",
            EndReason::Shutdown => "shutdown",
            EndReason::ProtocolError => "protocol_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub reason: EndReason,
    pub status: Option<SessionStatus>,
    pub log_path: Option<PathBuf>,
}

enum Flow {
    Continue,
    Stop(EndReason),
}

/// Protocol state for one connection, independent of the transport.
struct Connection<W: Write> {
    out: W,
    session: Option<Session>,
    started_at: String,
    seq: u64,
    poses: usize,
    last_state: Option<f64>,
    pending_button: bool,
    state_interval: f64,
    log_dir: Option<PathBuf>,
    log_seq: Arc<AtomicU64>,
}

impl<W: Write> Connection<W> {
    fn new(out: W, state_interval: f64, log_dir: Option<PathBuf>, log_seq: Arc<AtomicU64>) -> Self {
        Self {
            out,
            session: None,
            started_at: now_rfc3339(),
            seq: 0,
            poses: 0,
            last_state: None,
            pending_button: false,
            state_interval,
            log_dir,
            log_seq,
        }
    }

    fn send(&mut self, value: &Value) -> std::io::Result<()> {
        let mut line = serde_json::to_string(value).expect("messages serialize");
        line.push('\n');
        self.out.write_all(line.as_bytes())?;
        self.out.flush()
    }

    fn start(&mut self, config: GameConfig) -> Result<()> {
        let ack = json!({
            "type": "config_ack",
            "game": config.game(),
            "config": config.to_value(),
        });
        self.session = Some(Session::new(config)?);
        self.started_at = now_rfc3339();
        self.send(&ack)?;
        Ok(())
    }

    fn fail(&mut self, message: impl Into<String>) -> Flow {
        let _ = self.send(&json!({"type": "error", "message": message.into(), "fatal": true}));
        Flow::Stop(EndReason::ProtocolError)
    }

    fn handle_line(&mut self, line: &str) -> Flow {
        if line.trim().is_empty() {
            return Flow::Continue;
        }
        let mut msg: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return self.fail(format!("malformed JSON: {e}")),
        };
        let Some(obj) = msg.as_object_mut() else {
            return self.fail("message must be a JSON object");
        };
        let kind = match obj.remove("type") {
            Some(Value::String(s)) => s,
            _ => return self.fail("message is missing a string \"type\""),
        };
        match (kind.as_str(), self.session.is_some()) {
            ("hello", false) => self.hello(msg),
            ("hello", true) => self.fail("hello already received"),
            (_, false) => self.fail(format!("expected hello, got {kind:?}")),
            ("pose", true) => self.pose(msg),
            ("button", true) => match msg.get("name").and_then(Value::as_str) {
                Some("A") => {
                    self.pending_button = true;
                    Flow::Continue
                }
                other => self.fail(format!("unknown button {other:?}")),
            },
            ("end", true) => Flow::Stop(EndReason::ClientEnd),
            (other, true) => self.fail(format!("unknown message type {other:?}")),
        }
    }

    fn hello(&mut self, msg: Value) -> Flow {
        let game: GameKind = match msg.get("game").and_then(Value::as_str).map(str::parse) {
            Some(Ok(g)) => g,
            Some(Err(e)) => return self.fail(e),
            None => return self.fail("hello is missing \"game\""),
        };
        let config = match (msg.get("config"), msg.get("config_path")) {
            (Some(_), Some(_)) => return self.fail("hello has both config and config_path"),
            (Some(c), None) => GameConfig::from_value(game, c.clone()),
            (None, Some(Value::String(p))) => load_config(game, p),
            (None, Some(_)) => return self.fail("config_path must be a string"),
            (None, None) => Ok(GameConfig::default_for(game)),
        };
        match config.and_then(|c| self.start(c)) {
            Ok(()) => Flow::Continue,
            Err(e) => self.fail(format!("configuration rejected: {e}")),
        }
    }

    fn pose(&mut self, msg: Value) -> Flow {
        let index = self.poses;
        let record = match serde_json::from_value::<PoseRecord>(msg)
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(PoseRecord::into_record)
        {
            Ok(r) => r,
            Err(e) => return self.fail(format!("pose {index}: {e}")),
        };
        self.poses += 1;
        let record = TraceRecord {
            button: record.button.or(self.pending_button.then_some(Button::A)),
            ..record
        };
        self.pending_button = false;
        let session = self.session.as_mut().expect("session started");
        let events = match session.feed(&record) {
            Ok(ev) => ev,
            Err(e) => return self.fail(format!("pose {index} rejected: {e}")),
        };
        for event in events {
            let msg = json!({"type": "event", "seq": self.seq, "event": event});
            self.seq += 1;
            if self.send(&msg).is_err() {
                return Flow::Stop(EndReason::Disconnected);
            }
        }
        let t = record.sample.t;
        if self.last_state.is_none_or(|last| t - last >= self.state_interval) {
            self.last_state = Some(t);
            let state = self.session.as_ref().expect("session started").state();
            if self.send(&json!({"type": "state", "t": t, "state": state})).is_err() {
                return Flow::Stop(EndReason::Disconnected);
            }
        }
        if self.session.as_ref().is_some_and(Session::is_finished) {
            Flow::Stop(EndReason::Finished)
        } else {
            Flow::Continue
        }
    }

    /// Writes the log (if a session exists) and sends `end`.
    fn finish(mut self, reason: EndReason) -> SessionOutcome {
        let Some(session) = self.session.take() else {
            return SessionOutcome {
                reason,
                status: None,
                log_path: None,
            };
        };
        let status = session.status();
        let log = session.into_log(self.started_at.clone());
        let mut log_path = None;
        let mut log_error = None;
        if let Some(dir) = &self.log_dir {
            let path = log_file_name(dir, log.game(), self.log_seq.fetch_add(1, Ordering::SeqCst));
            match write_log(&log, &path) {
                Ok(()) => log_path = Some(path),
                Err(e) => log_error = Some(e.to_string()),
            }
        }
        if reason != EndReason::Disconnected {
            let mut msg = json!({
                "type": "end",
                "reason": reason.as_str(),
                "status": status,
                "summary": log.summary,
                "log": log_path.as_ref().map(|p| p.display().to_string()),
            });
            if let Some(e) = log_error {
                msg["log_error"] = Value::from(e);
            }
            let _ = self.send(&msg);
        }
        SessionOutcome {
            reason,
            status: Some(status),
            log_path,
        }
    }
}

fn log_file_name(dir: &Path, game: GameKind, seq: u64) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    dir.join(format!("{game}-{stamp}-{seq:04}.json"))
}

/// Splits a byte stream into lines, keeping partial lines across read timeouts.
struct LineBuffer {
    pending: Vec<u8>,
}

impl LineBuffer {
    fn push(&mut self, bytes: &[u8]) -> Vec<String> {
        self.pending.extend_from_slice(bytes);
        let mut lines = Vec::new();
        while let Some(pos) = self.pending.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = self.pending.drain(..=pos).collect();
            lines.push(String::from_utf8_lossy(&line[..line.len() - 1]).into_owned());
        }
        lines
    }

    fn rest(&mut self) -> Option<String> {
        let rest = std::mem::take(&mut self.pending);
        (!rest.is_empty()).then(|| String::from_utf8_lossy(&rest).into_owned())
    }
}

fn run_connection(
    stream: TcpStream,
    options: &GatewayOptions,
    log_seq: Arc<AtomicU64>,
    stop: &AtomicBool,
) -> SessionOutcome {
    let _ = stream.set_read_timeout(Some(POLL));
    let _ = stream.set_nodelay(true);
    let mut reader = match stream.try_clone() {
        Ok(r) => r,
        Err(_) => {
            return SessionOutcome {
                reason: EndReason::Disconnected,
                status: None,
                log_path: None,
            }
        }
    };
    let mut conn = Connection::new(
        stream,
        options.state_interval,
        Some(options.log_dir.clone()),
        log_seq,
    );
    let mut lines = LineBuffer { pending: Vec::new() };
    let mut buf = [0u8; 8192];
    let reason = 'outer: loop {
        if stop.load(Ordering::SeqCst) {
            break EndReason::Shutdown;
        }
        match reader.read(&mut buf) {
            Ok(0) => {
                if let Some(line) = lines.rest() {
                    if let Flow::Stop(r) = conn.handle_line(&line) {
                        break r;
                    }
                }
                break EndReason::Disconnected;
            }
            Ok(n) => {
                for line in lines.push(&buf[..n]) {
                    if let Flow::Stop(r) = conn.handle_line(&line) {
                        break 'outer r;
                    }
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(_) => break EndReason::Disconnected,
        }
    };
    conn.finish(reason)
}

/// Handle to a running server. Dropping it shuts the server down.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<SessionOutcome>>>>,
    outcomes: Vec<SessionOutcome>,
}

/// Binds `endpoint` and starts accepting connections on a background thread.
pub fn serve(endpoint: impl ToSocketAddrs, options: GatewayOptions) -> Result<Server> {
    std::fs::create_dir_all(&options.log_dir).map_err(|e| Error::io(&options.log_dir, e))?;
    let listener = TcpListener::bind(endpoint)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let workers: Arc<Mutex<Vec<JoinHandle<SessionOutcome>>>> = Arc::default();
    let log_seq = Arc::new(AtomicU64::new(0));
    let accept = {
        let stop = Arc::clone(&stop);
        let workers = Arc::clone(&workers);
        std::thread::spawn(move || {
            let options = Arc::new(options);
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let (options, log_seq, stop) =
                            (Arc::clone(&options), Arc::clone(&log_seq), Arc::clone(&stop));
                        let handle = std::thread::spawn(move || {
                            run_connection(stream, &options, log_seq, &stop)
                        });
                        workers.lock().expect("worker list").push(handle);
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
                    Err(_) => std::thread::sleep(POLL),
                }
            }
        })
    };
    Ok(Server {
        addr,
        stop,
        accept: Some(accept),
        workers,
        outcomes: Vec::new(),
    })
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_running(&self) -> bool {
        self.accept.is_some()
    }

    /// Stops accepting, asks open sessions to finalize, and waits up to
    /// `grace` for them. Returns the outcomes of every session that ended.
    /// Calling it again is a no-op.
    pub fn shutdown(&mut self, grace: Duration) -> &[SessionOutcome] {
        let Some(accept) = self.accept.take() else {
            return &self.outcomes;
        };
        self.stop.store(true, Ordering::SeqCst);
        let _ = accept.join();
        let deadline = Instant::now() + grace;
        let handles = std::mem::take(&mut *self.workers.lock().expect("worker list"));
        for handle in handles {
            while !handle.is_finished() && Instant::now() < deadline {
                std::thread::sleep(Duration::from_millis(5));
            }
            if handle.is_finished() {
                if let Ok(outcome) = handle.join() {
                    self.outcomes.push(outcome);
                }
            }
        }
        &self.outcomes
    }

    /// Serves until the process exits.
    pub fn wait(mut self) {
        if let Some(accept) = self.accept.take() {
            let _ = accept.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown(Duration::from_secs(1));
    }
}

/// The same protocol over a pair of byte streams with the game fixed up
/// front: `config_ack` is sent immediately and a client hello is an error.
///
/// Exit codes: 0 when the game is won or completed or the client ends
/// cleanly, 2 when the game is lost, 1 on a protocol error.
pub fn run_stdio(
    config: GameConfig,
    input: impl BufRead,
    output: impl Write,
    log_dir: Option<&Path>,
) -> Result<i32> {
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut conn = Connection::new(
        output,
        0.25,
        log_dir.map(Path::to_path_buf),
        Arc::new(AtomicU64::new(0)),
    );
    conn.start(config)?;
    let mut reason = EndReason::Disconnected;
    for line in input.lines() {
        if let Flow::Stop(r) = conn.handle_line(&line?) {
            reason = r;
            break;
        }
    }
    // Nobody is left to read an end message after EOF, but stdout still is.
    let reason = if reason == EndReason::Disconnected {
        EndReason::ClientEnd
    } else {
        reason
    };
    let outcome = conn.finish(reason);
    Ok(match (outcome.reason, outcome.status) {
        (EndReason::ProtocolError, _) => 1,
        (_, Some(SessionStatus::Lost)) => 2,
        _ => 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chintuck::ChinTuckConfig;

    fn conn() -> Connection<Vec<u8>> {
        Connection::new(Vec::new(), 0.25, None, Arc::new(AtomicU64::new(0)))
    }

    fn sent(c: &Connection<Vec<u8>>) -> Vec<Value> {
        String::from_utf8_lossy(&c.out)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn hello_acks_defaulted_config() {
        let mut c = conn();
        assert!(matches!(
            c.handle_line(r#"{"type":"hello","game":"chintuck","config":{}}"#),
            Flow::Continue
        ));
        let msgs = sent(&c);
        assert_eq!(msgs[0]["type"], "config_ack");
        assert_eq!(msgs[0]["config"]["hp_max"], 100.0);
    }

    #[test]
    fn protocol_errors_are_fatal() {
        for line in [
            "{not json",
            r#"{"type":"pose","t":0}"#,
            r#"{"type":"hello","game":"golf"}"#,
            r#"{"type":"hello","game":"rom","config":{"bogus":1}}"#,
        ] {
            let mut c = conn();
            assert!(matches!(c.handle_line(line), Flow::Stop(EndReason::ProtocolError)), "{line}");
            let msgs = sent(&c);
            assert_eq!(msgs.last().unwrap()["type"], "error");
            assert_eq!(msgs.last().unwrap()["fatal"], true);
        }
        let mut c = conn();
        c.handle_line(r#"{"type":"hello","game":"rom"}"#);
        assert!(matches!(
            c.handle_line(r#"{"type":"dance"}"#),
            Flow::Stop(EndReason::ProtocolError)
        ));
    }

    #[test]
    fn decreasing_time_cites_pose() {
        let mut c = conn();
        c.handle_line(r#"{"type":"hello","game":"chintuck"}"#);
        let pose = |t: f64| format!(r#"{{"type":"pose","t":{t},"px":0,"py":1.6,"pz":0,"qw":1,"qx":0,"qy":0,"qz":0}}"#);
        c.handle_line(&pose(0.0));
        c.handle_line(&pose(0.5));
        assert!(matches!(c.handle_line(&pose(0.4)), Flow::Stop(_)));
        let msgs = sent(&c);
        let msg = msgs.last().unwrap()["message"].as_str().unwrap().to_string();
        assert!(msg.contains("pose 2"), "{msg}");
    }

    #[test]
    fn state_cadence_follows_stream_time() {
        let mut c = conn();
        c.handle_line(r#"{"type":"hello","game":"chintuck"}"#);
        for i in 0..11 {
            let t = i as f64 * 0.1;
            c.handle_line(&format!(
                r#"{{"type":"pose","t":{t},"px":0,"py":1.6,"pz":0,"qw":1,"qx":0,"qy":0,"qz":0}}"#
            ));
        }
        let states: Vec<f64> = sent(&c)
            .iter()
            .filter(|m| m["type"] == "state")
            .map(|m| m["t"].as_f64().unwrap())
            .collect();
        assert_eq!(states.len(), 4, "{states:?}");
        assert_eq!(states[0], 0.0);
    }

    #[test]
    fn line_buffer_keeps_partial_lines() {
        let mut b = LineBuffer { pending: Vec::new() };
        assert!(b.push(b"{\"a\":").is_empty());
        assert_eq!(b.push(b"1}\n{\"b\""), vec!["{\"a\":1}".to_string()]);
        assert_eq!(b.rest().as_deref(), Some("{\"b\""));
    }

    #[test]
    fn stdio_exit_codes() {
        let cfg = GameConfig::ChinTuck(ChinTuckConfig::default());
        let mut out = Vec::new();
        let code = run_stdio(cfg.clone(), "{\"type\":\"end\"}\n".as_bytes(), &mut out, None).unwrap();
        assert_eq!(code, 0);
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().next().unwrap().contains("config_ack"));
        assert!(text.lines().last().unwrap().contains("\"type\":\"end\""));
        let code = run_stdio(cfg, "garbage\n".as_bytes(), Vec::new(), None).unwrap();
        assert_eq!(code, 1);
    }
}
