//! Client side of the external evaluator protocol.
//!
//! The evaluator is a subprocess exchanging one JSON object per line over its
//! standard input/output:
//!
//! ```text
//! → {"type":"hello","protocol":1}
//! ← {"type":"ready","protocol":1}
//! → {"type":"eval","id":7,"structure":[32,64],"seed":123,"epochs":2}
//! ← {"type":"result","id":7,"fitness":0.91,"metrics":{"loss":0.3}}
//!   or {"type":"error","id":7,"message":"..."}
//! → {"type":"shutdown"}
//! ```
//!
//! One request is in flight per connection. [`ExternalEvaluator`] keeps a pool
//! of connections for concurrent evaluation and respawns a connection that
//! died or fell out of sync.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Mutex, TryLockError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EvalError, EvaluationRequest, EvaluationResult, Evaluator};
use crate::space::PrunedStructure;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Outgoing {
    Hello { protocol: u32 },
    Eval {
        id: u64,
        structure: PrunedStructure,
        seed: u64,
        epochs: u32,
    },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Ready { protocol: u32 },
    Result {
        id: u64,
        fitness: f64,
        metrics: BTreeMap<String, f64>,
    },
    Error { id: Option<u64>, message: String },
}

#[derive(Deserialize)]
struct ReadyMsg {
    protocol: u32,
}

#[derive(Deserialize)]
struct ResultMsg {
    id: u64,
    fitness: f64,
    #[serde(default)]
    metrics: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct ErrorMsg {
    #[serde(default)]
    id: Option<u64>,
    message: String,
}

/// Parses one evaluator line. Unknown `type` values are protocol errors;
/// anything that is not a well-formed message of a known type is malformed.
pub fn parse_incoming(line: &str) -> Result<Incoming, EvalError> {
    let value: Value = serde_json::from_str(line).map_err(|e| EvalError::Malformed(format!("{e}: {line}")))?;
    let kind = value
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| EvalError::Malformed(format!("missing \"type\": {line}")))?
        .to_string();
    let bad = |e: serde_json::Error| EvalError::Malformed(format!("{kind} message: {e}"));
    match kind.as_str() {
        "ready" => {
            let m: ReadyMsg = serde_json::from_value(value).map_err(bad)?;
            Ok(Incoming::Ready { protocol: m.protocol })
        }
        "result" => {
            let m: ResultMsg = serde_json::from_value(value).map_err(bad)?;
            let metrics = m
                .metrics
                .into_iter()
                .filter_map(|(k, v)| v.as_f64().map(|f| (k, f)))
                .collect();
            Ok(Incoming::Result {
                id: m.id,
                fitness: m.fitness,
                metrics,
            })
        }
        "error" => {
            let m: ErrorMsg = serde_json::from_value(value).map_err(bad)?;
            Ok(Incoming::Error {
                id: m.id,
                message: m.message,
            })
        }
        other => Err(EvalError::Protocol(format!("unknown message type `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Shell command line launching the evaluator.
    pub command: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "one")]
    pub connections: usize,
}

fn default_timeout() -> f64 {
    3600.0
}

fn one() -> usize {
    1
}

impl ExternalConfig {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalConfig {
            command: command.into(),
            timeout_secs: default_timeout(),
            connections: 1,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

/// A live evaluator process past the handshake.
pub struct Connection {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    broken: bool,
}

impl Connection {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut conn = Connection {
            child,
            stdin: Some(stdin),
            lines,
            next_id: 1,
            timeout,
            broken: false,
        };
        conn.handshake()?;
        Ok(conn)
    }

    fn handshake(&mut self) -> Result<(), EvalError> {
        self.send(&Outgoing::Hello {
            protocol: PROTOCOL_VERSION,
        })?;
        match self.receive()? {
            Incoming::Ready { protocol } if protocol == PROTOCOL_VERSION => Ok(()),
            Incoming::Ready { protocol } => {
                self.broken = true;
                Err(EvalError::Protocol(format!("evaluator speaks protocol {protocol}")))
            }
            other => {
                self.broken = true;
                Err(EvalError::Protocol(format!("expected ready, got {other:?}")))
            }
        }
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    fn send(&mut self, message: &Outgoing) -> Result<(), EvalError> {
        let mut line = serde_json::to_string(message).expect("serializable");
        line.push('\n');
        let stdin = self.stdin.as_mut().ok_or_else(|| EvalError::ProcessExited("stdin closed".into()))?;
        let written = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush());
        if let Err(e) = written {
            self.broken = true;
            return Err(self.exit_error(Some(e)));
        }
        Ok(())
    }

    fn receive(&mut self) -> Result<Incoming, EvalError> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                self.broken = true;
                return Err(EvalError::Io(e));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                let _ = self.child.kill();
                return Err(EvalError::Timeout(self.timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                return Err(self.exit_error(None));
            }
        };
        parse_incoming(&line).inspect_err(|_| self.broken = true)
    }

    fn exit_error(&mut self, cause: Option<std::io::Error>) -> EvalError {
        let status = wait_briefly(&mut self.child, Duration::from_millis(500));
        let detail = match (status, cause) {
            (Some(status), _) => format!("{status}"),
            (None, Some(e)) => format!("pipe closed: {e}"),
            (None, None) => "output closed".to_string(),
        };
        EvalError::ProcessExited(detail)
    }

    /// Sends one eval message and waits for the reply carrying its id.
    pub fn evaluate(&mut self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        if self.broken {
            return Err(EvalError::ProcessExited("connection is no longer usable".into()));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.send(&Outgoing::Eval {
            id,
            structure: request.structure.clone(),
            seed: request.seed,
            epochs: request.epochs,
        })?;
        match self.receive()? {
            Incoming::Result { id: got, fitness, metrics } if got == id => {
                if !(0.0..=1.0).contains(&fitness) {
                    return Err(EvalError::OutOfRange(fitness));
                }
                Ok(EvaluationResult { fitness, metrics })
            }
            Incoming::Error { id: Some(got), message } if got == id => Err(EvalError::Remote(message)),
            Incoming::Error { id: None, message } => {
                self.broken = true;
                Err(EvalError::Remote(message))
            }
            other => {
                self.broken = true;
                Err(EvalError::Protocol(format!("expected reply to request {id}, got {other:?}")))
            }
        }
    }

    /// Sends shutdown and waits for the process to exit.
    pub fn shutdown(mut self) -> Result<ExitStatus, EvalError> {
        self.close()
    }

    fn close(&mut self) -> Result<ExitStatus, EvalError> {
        if !self.broken {
            let _ = self.send(&Outgoing::Shutdown);
        }
        self.stdin.take();
        if let Some(status) = wait_briefly(&mut self.child, Duration::from_secs(5)) {
            return Ok(status);
        }
        let _ = self.child.kill();
        Ok(self.child.wait()?)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.close();
        }
    }
}

fn wait_briefly(child: &mut Child, limit: Duration) -> Option<ExitStatus> {
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Some(status),
            Ok(None) if start.elapsed() < limit => thread::sleep(Duration::from_millis(10)),
            _ => return None,
        }
    }
}

/// Pool of evaluator connections.
pub struct ExternalEvaluator {
    config: ExternalConfig,
    pool: Vec<Mutex<Option<Connection>>>,
}

impl ExternalEvaluator {
    /// Launches `config.connections` processes and completes each handshake.
    pub fn launch(config: ExternalConfig) -> Result<Self, EvalError> {
        let count = config.connections.max(1);
        let mut pool = Vec::with_capacity(count);
        for _ in 0..count {
            pool.push(Mutex::new(Some(Connection::spawn(&config.command, config.timeout())?)));
        }
        Ok(ExternalEvaluator { config, pool })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    fn with_slot(
        &self,
        request: &EvaluationRequest,
        slot: &mut Option<Connection>,
    ) -> Result<EvaluationResult, EvalError> {
        if slot.as_ref().is_none_or(Connection::is_broken) {
            if slot.is_some() {
                log::warn!("restarting external evaluator `{}`", self.config.command);
            }
            *slot = None;
            *slot = Some(Connection::spawn(&self.config.command, self.config.timeout())?);
        }
        let conn = slot.as_mut().expect("connected");
        let result = conn.evaluate(request);
        if conn.is_broken() {
            *slot = None;
        }
        result
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        for slot in &self.pool {
            match slot.try_lock() {
                Ok(mut guard) => return self.with_slot(request, &mut guard),
                Err(TryLockError::Poisoned(p)) => return self.with_slot(request, &mut p.into_inner()),
                Err(TryLockError::WouldBlock) => continue,
            }
        }
        let idx = (request.seed % self.pool.len() as u64) as usize;
        let mut guard = self.pool[idx].lock().unwrap_or_else(|p| p.into_inner());
        self.with_slot(request, &mut guard)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outgoing_wire_format() {
        let hello = serde_json::to_string(&Outgoing::Hello { protocol: 1 }).unwrap();
        assert_eq!(hello, r#"{"type":"hello","protocol":1}"#);
        let eval = serde_json::to_string(&Outgoing::Eval {
            id: 3,
            structure: PrunedStructure::new(vec![4, 5]),
            seed: 9,
            epochs: 2,
        })
        .unwrap();
        assert_eq!(eval, r#"{"type":"eval","id":3,"structure":[4,5],"seed":9,"epochs":2}"#);
        assert_eq!(serde_json::to_string(&Outgoing::Shutdown).unwrap(), r#"{"type":"shutdown"}"#);
    }

    #[test]
    fn incoming_classification() {
        assert_eq!(
            parse_incoming(r#"{"type":"ready","protocol":1}"#).unwrap(),
            Incoming::Ready { protocol: 1 }
        );
        match parse_incoming(r#"{"type":"result","id":2,"fitness":0.5,"metrics":{"loss":0.7,"tag":"x"}}"#).unwrap() {
            Incoming::Result { id, fitness, metrics } => {
                assert_eq!((id, fitness), (2, 0.5));
                assert_eq!(metrics.len(), 1);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_incoming(r#"{"type":"bogus"}"#), Err(EvalError::Protocol(_))));
        assert!(matches!(parse_incoming("not json"), Err(EvalError::Malformed(_))));
        assert!(matches!(parse_incoming(r#"{"id":1}"#), Err(EvalError::Malformed(_))));
        assert!(matches!(parse_incoming(r#"{"type":"result","id":1}"#), Err(EvalError::Malformed(_))));
    }
}
