//! Newline-delimited JSON trace.
//!
//! The first line is a [`Header`]; every later line is one [`Record`], told
//! apart by its `rec` field:
//!
//! | `rec` | fields | level |
//! |-------|--------|-------|
//! | `header` | see [`Header`] | both |
//! | `msg` | `id` (16 hex digits), `hex` (canonical encoding), logged at first send | full |
//! | `deliver` | `t`, `sent`, `from`, `to`, `tag`, `sigs`, `id` | full |
//! | `timer` | `t`, `p`, `key`, `pre_gst` | full |
//! | `node` | `t`, `p`, `event` (a [`NodeEvent`]) | both |
//! | `end` | `t`, `outcome` | both |

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::scenario::{FaultClass, TraceLevel};
use crate::context::{NodeEvent, TimerKey};
use crate::evidence::{encode, Digest, Msg, Tag};
use crate::node::Protocol;

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Nothing left to deliver and every non-faulty process finished.
    Quiescent,
    /// The horizon passed, or the run stalled with work unfinished.
    HorizonExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub scenario: String,
    pub protocol: Protocol,
    pub n: u32,
    pub h0: u32,
    pub t: u32,
    pub d: u32,
    pub q: u32,
    pub lambda: usize,
    pub delta: u64,
    pub gst: u64,
    pub seed: u64,
    /// Fault class of every faulty process.
    pub classes: BTreeMap<u32, FaultClass>,
    pub proposals: Vec<u64>,
    pub source: u32,
    pub ec_epochs: u32,
    pub level: TraceLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
pub enum Record {
    Header(Header),
    Msg {
        id: String,
        hex: String,
    },
    Deliver {
        t: u64,
        sent: u64,
        from: u32,
        to: u32,
        tag: Tag,
        sigs: u32,
        id: String,
    },
    Timer {
        t: u64,
        p: u32,
        key: TimerKey,
        pre_gst: bool,
    },
    Node {
        t: u64,
        p: u32,
        event: NodeEvent,
    },
    End {
        t: u64,
        outcome: Outcome,
    },
}

#[derive(Debug)]
pub struct TraceWriter {
    level: TraceLevel,
    buf: Vec<u8>,
    logged: HashSet<Digest>,
}

impl TraceWriter {
    pub fn new(header: Header) -> Self {
        let mut w = TraceWriter {
            level: header.level,
            buf: Vec::new(),
            logged: HashSet::new(),
        };
        w.push(&Record::Header(header));
        w
    }

    pub fn full(&self) -> bool {
        self.level == TraceLevel::Full
    }

    pub fn push(&mut self, r: &Record) {
        serde_json::to_writer(&mut self.buf, r).expect("records serialize");
        self.buf.push(b'\n');
    }

    /// Logs the encoding of `m` the first time it is sent.
    pub fn sent(&mut self, m: &Msg) {
        if self.full() && self.logged.insert(*m.digest()) {
            self.push(&Record::Msg {
                id: m.short_id(),
                hex: hex::encode(encode(m)),
            });
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace is empty")]
    Empty,
    #[error("first line is not a header")]
    NoHeader,
    #[error("trace version {found}, expected {TRACE_VERSION}")]
    Version { found: u32 },
}

/// Parses a whole trace, checking the header version.
pub fn parse_trace(text: &str) -> Result<(Header, Vec<Record>), TraceError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(TraceError::Empty)?;
    let v: serde_json::Value = serde_json::from_str(first).map_err(|e| TraceError::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    if v.get("rec").and_then(|r| r.as_str()) != Some("header") {
        return Err(TraceError::NoHeader);
    }
    let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
    if found != TRACE_VERSION {
        return Err(TraceError::Version { found });
    }
    // Read as a plain struct: integer map keys do not survive the buffering
    // an internally tagged enum does.
    let header: Header = serde_json::from_str(first).map_err(|e| TraceError::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let mut records = vec![Record::Header(header.clone())];
    for (i, l) in lines {
        let r = serde_json::from_str(l).map_err(|e| TraceError::Parse {
            line: i,
            msg: e.to_string(),
        })?;
        records.push(r);
    }
    Ok((header, records))
}
