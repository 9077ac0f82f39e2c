//! Search event log: one JSON object per line, append-only.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::SearchConfig;
use crate::space::PrunedStructure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// First line of every log: the configuration and the candidate lists.
    Start,
    Init,
    Candidate,
    Replace,
    Reject,
    Scout,
    BestUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Init,
    Employed,
    Onlooker,
    Scout,
}

impl Phase {
    /// Index used when deriving evaluation seeds.
    pub fn code(self) -> u64 {
        match self {
            Phase::Init => 0,
            Phase::Employed => 1,
            Phase::Onlooker => 2,
            Phase::Scout => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub event: EventKind,
    pub cycle: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<PrunedStructure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Onlooker gate: selection probability and the uniform draw tested
    /// against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Vec<usize>>>,
}

impl Event {
    pub fn new(event: EventKind, cycle: usize) -> Self {
        Event {
            event,
            cycle,
            phase: None,
            source: None,
            partner: None,
            structure: None,
            fitness: None,
            trials: None,
            seed: None,
            probability: None,
            draw: None,
            error: None,
            config: None,
            candidates: None,
        }
    }
}

pub fn write_jsonl<W: Write>(events: &[Event], mut out: W) -> io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses a log, reporting the 1-based line of the first malformed entry.
/// Event `i` of the result came from line `i + 1`.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Event>, (usize, String)> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        events.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(events)
}
