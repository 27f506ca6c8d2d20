//! TCP client for the gateway, shared by integration tests.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};

use neckmotion::session_io::{trace_to_string, GameConfig, TraceRecord};
use serde_json::{json, Value};

pub struct Streamed {
    pub messages: Vec<Value>,
}

impl Streamed {
    pub fn events(&self) -> Vec<Value> {
        self.messages
            .iter()
            .filter(|m| m["type"] == "event")
            .map(|m| m["event"].clone())
            .collect()
    }

    pub fn end(&self) -> Option<&Value> {
        self.messages.iter().find(|m| m["type"] == "end")
    }
}

pub fn pose_lines(records: &[TraceRecord]) -> Vec<String> {
    trace_to_string(records)
        .lines()
        .map(|line| {
            let mut v: Value = serde_json::from_str(line).unwrap();
            v["type"] = json!("pose");
            v.to_string()
        })
        .collect()
}

/// Streams a whole trace through one connection, then sends `end` if the
/// game is still running, and collects every server message.
pub fn stream_trace(addr: SocketAddr, config: &GameConfig, records: &[TraceRecord]) -> Streamed {
    let stream = TcpStream::connect(addr).unwrap();
    let reader = BufReader::new(stream.try_clone().unwrap());
    let collector = std::thread::spawn(move || {
        let mut messages = Vec::new();
        for line in reader.lines() {
            let Ok(line) = line else { break };
            let msg: Value = serde_json::from_str(&line).unwrap();
            let done = msg["type"] == "end";
            messages.push(msg);
            if done {
                break;
            }
        }
        messages
    });
    let mut writer = std::io::BufWriter::new(stream);
    let hello = json!({"type": "hello", "game": config.game().as_str(), "config": config.to_value()});
    writeln!(writer, "{hello}").unwrap();
    for line in pose_lines(records) {
        // The server closes the socket once the game ends.
        if writeln!(writer, "{line}").is_err() {
            break;
        }
    }
    let _ = writeln!(writer, "{}", json!({"type": "end"}));
    let _ = writer.flush();
    Streamed {
        messages: collector.join().unwrap(),
    }
}
