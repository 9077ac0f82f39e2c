//! Scriptable external evaluator used to exercise the wire protocol.
//!
//! Speaks the newline-delimited JSON protocol on stdin/stdout. Fitness is a
//! constant, a scripted sequence, or a hash of the request; flags inject
//! faults (early exit, garbage output, remote errors, slow replies).

use std::fs::OpenOptions;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(name = "stub-evaluator")]
struct Args {
    /// Fitness returned when no script value is left
    #[arg(long, default_value_t = 0.5)]
    fitness: f64,
    /// Comma-separated fitness values returned in request order
    #[arg(long, value_delimiter = ',')]
    script: Vec<f64>,
    /// Derive fitness in [0, 1) from a hash of (structure, seed, epochs)
    #[arg(long)]
    hash: bool,
    /// Exit with status 3 on the eval request after the first N
    #[arg(long)]
    exit_after: Option<usize>,
    /// Print a non-JSON line instead of replying after the first N requests
    #[arg(long)]
    garbage_after: Option<usize>,
    /// 1-based request numbers answered with an error message
    #[arg(long, value_delimiter = ',')]
    error_on: Vec<usize>,
    /// Delay before every reply
    #[arg(long, default_value_t = 0)]
    sleep_ms: u64,
    /// Protocol version announced in the ready message
    #[arg(long, default_value_t = 1)]
    protocol: u64,
    /// Append every received line to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

fn hashed(request: &Value) -> f64 {
    let mut h = Sha256::new();
    h.update(request["structure"].to_string().as_bytes());
    h.update(request["seed"].to_string().as_bytes());
    h.update(request["epochs"].to_string().as_bytes());
    let bytes: [u8; 8] = h.finalize()[..8].try_into().expect("8 bytes");
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut log = match &args.log {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut served = 0usize;
    let mut script = args.script.iter().copied();

    for line in stdin.lock().lines() {
        let line = line?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{line}")?;
        }
        let msg: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                writeln!(out, "{}", json!({"type": "error", "message": format!("unparseable request: {e}")}))?;
                out.flush()?;
                continue;
            }
        };
        match msg["type"].as_str() {
            Some("hello") => {
                writeln!(out, "{}", json!({"type": "ready", "protocol": args.protocol}))?;
            }
            Some("shutdown") => return Ok(()),
            Some("eval") => {
                if args.exit_after.is_some_and(|n| served >= n) {
                    std::process::exit(3);
                }
                let id = msg["id"].clone();
                served += 1;
                if args.sleep_ms > 0 {
                    std::thread::sleep(Duration::from_millis(args.sleep_ms));
                }
                if args.garbage_after.is_some_and(|n| served > n) {
                    writeln!(out, "this is not json")?;
                } else if args.error_on.contains(&served) {
                    writeln!(out, "{}", json!({"type": "error", "id": id, "message": "scripted failure"}))?;
                } else {
                    let fitness = match script.next() {
                        Some(f) => f,
                        None if args.hash => hashed(&msg),
                        None => args.fitness,
                    };
                    let reply = json!({
                        "type": "result",
                        "id": id,
                        "fitness": fitness,
                        "metrics": {"epochs": msg["epochs"], "served": served},
                    });
                    writeln!(out, "{reply}")?;
                }
            }
            _ => {
                writeln!(out, "{}", json!({"type": "error", "id": msg["id"], "message": "unknown message type"}))?;
            }
        }
        out.flush()?;
    }
    Ok(())
}
