//! Scenario files: fault configuration, roster, network timing.
//!
//! A scenario is a JSON object:
//!
//! | field | type | default |
//! |-------|------|---------|
//! | `name` | string | required |
//! | `protocol` | `general` \| `aabc` \| `aarb` \| `ec` | `general` |
//! | `n` | integer | required |
//! | `h0` or `h0_fraction` | integer, or `"a/b"` giving `⌈a·n/b⌉` | one required |
//! | `t`, `d`, `q` | integers | 0 |
//! | `delta` | time units | required |
//! | `gst` | time | 0 |
//! | `seed` | integer | 0 |
//! | `horizon` | time | required |
//! | `allow_unsafe` | bool: skip bound validation | false |
//! | `lambda` | signature bytes | 32 |
//! | `scheme` | `keyed_tag` \| `ed25519` | `keyed_tag` |
//! | `proposals` | one integer per process | `100 + i`; `i mod 2` for `aabc` |
//! | `source` | broadcaster of an `aarb` run | 0 |
//! | `roster` | map from process index to `{class, script}` | empty |
//! | `fill` | `{class, script, fraction: "a/b"}`: the lowest `c` indices get this entry, `c` the largest count below `a·n/b`; adds `c` to the class count | none |
//! | `pre_gst_pattern` | see [`PreGstPattern`] | `uniform` |
//! | `latency` | `{min, max}` after GST | `{1, delta}` |
//! | `ec_epochs`, `ec_epoch_len` | eventual-consensus invocations | 8, `4·delta` |
//! | `trace` | `full` \| `summary` | `full` |

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{SchemeKind, Tag};
use crate::model::{validate_config, validate_ec_config, BoundViolation, FaultConfig, Verdict};
use crate::node::Protocol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    Benign,
    Deceitful,
    Byzantine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persistence {
    /// Only the first opportunity: broadcast instances and round 1.
    Once,
    #[default]
    EveryRound,
}

/// Behaviour of a faulty process. Faulty processes run the correct logic;
/// the script rewrites what they send.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Script {
    /// Stops at `at` and never acts again.
    Crash { at: u64 },
    /// Never sends to `targets`.
    Omit { targets: Vec<u32> },
    /// Adds `delay` to every send.
    Stale { delay: u64 },
    /// Sends a conflicting copy of each equivocable message to `partition`.
    Split {
        partition: Vec<u32>,
        #[serde(default)]
        persistence: Persistence,
        /// Restricts the split to these tags.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tags: Option<Vec<Tag>>,
    },
    /// Sends nothing.
    Silent,
    /// Per message and recipient: drop, flip, or delay at random.
    Arbitrary {
        #[serde(default = "default_drop")]
        drop: f64,
        #[serde(default = "default_flip")]
        flip: f64,
        /// Upper bound on added delay; defaults to `delta`.
        #[serde(default)]
        max_delay: Option<u64>,
    },
    /// Coordinates with the other `coord_split` processes to keep each
    /// round's second phase split between both values.
    CoordSplit,
}

fn default_drop() -> f64 {
    0.2
}

fn default_flip() -> f64 {
    0.3
}

impl Script {
    pub fn allowed_for(&self, class: FaultClass) -> bool {
        match self {
            Script::Crash { .. } | Script::Omit { .. } | Script::Stale { .. } => class == FaultClass::Benign,
            Script::Split { .. } => matches!(class, FaultClass::Deceitful | FaultClass::Byzantine),
            Script::Silent | Script::Arbitrary { .. } | Script::CoordSplit => class == FaultClass::Byzantine,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Script::Crash { .. } => "crash",
            Script::Omit { .. } => "omit",
            Script::Stale { .. } => "stale",
            Script::Split { .. } => "split",
            Script::Silent => "silent",
            Script::Arbitrary { .. } => "arbitrary",
            Script::CoordSplit => "coord_split",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub class: FaultClass,
    pub script: Script,
}

/// Faulty processes generated from the system size, for templates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fill {
    pub class: FaultClass,
    pub script: Script,
    pub fraction: String,
}

/// How messages sent before GST are delayed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PreGstPattern {
    /// Uniform in `[1, gst + delta − now]`.
    #[default]
    Uniform,
    /// Messages between different groups wait until GST; processes in no
    /// group, and members of one group, talk normally.
    Partition { groups: Vec<Vec<u32>> },
    /// Messages from `victims` wait until GST.
    CoordinatorStarve { victims: Vec<u32> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latency {
    pub min: u64,
    pub max: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    #[default]
    Full,
    /// Protocol events only.
    Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0_fraction: Option<String>,
    #[serde(default)]
    pub t: u32,
    #[serde(default)]
    pub d: u32,
    #[serde(default)]
    pub q: u32,
    pub delta: u64,
    #[serde(default)]
    pub gst: u64,
    #[serde(default)]
    pub seed: u64,
    pub horizon: u64,
    #[serde(default)]
    pub allow_unsafe: bool,
    #[serde(default = "default_lambda")]
    pub lambda: usize,
    #[serde(default)]
    pub scheme: SchemeKind,
    #[serde(default)]
    pub proposals: Vec<u64>,
    #[serde(default)]
    pub source: u32,
    #[serde(default)]
    pub roster: BTreeMap<u32, RosterEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<Fill>,
    #[serde(default)]
    pub pre_gst_pattern: PreGstPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<Latency>,
    #[serde(default = "default_epochs")]
    pub ec_epochs: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ec_epoch_len: Option<u64>,
    #[serde(default)]
    pub trace: TraceLevel,
}

fn default_protocol() -> Protocol {
    Protocol::General
}

fn default_lambda() -> usize {
    32
}

fn default_epochs() -> u32 {
    8
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("configuration rejected: {}", list(.0))]
    Bounds(Vec<BoundViolation>),
}

fn list(v: &[BoundViolation]) -> String {
    v.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("; ")
}

impl ScenarioError {
    fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        ScenarioError::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Whether this is a rejection of the configuration rather than of the
    /// file.
    pub fn is_config_reject(&self) -> bool {
        !matches!(self, ScenarioError::Io { .. })
    }
}

/// A validated scenario with every default filled in.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub h0: u32,
    pub proposals: Vec<u64>,
    pub latency: Latency,
    pub ec_epoch_len: u64,
}

impl Resolved {
    pub fn fault_config(&self) -> FaultConfig {
        let s = &self.scenario;
        FaultConfig::new(s.n, s.t, s.d, s.q, self.h0)
    }

    pub fn is_faulty(&self, p: u32) -> bool {
        self.scenario.roster.contains_key(&p)
    }

    pub fn class_of(&self, p: u32) -> Option<FaultClass> {
        self.scenario.roster.get(&p).map(|e| e.class)
    }
}

pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::schema(path, e.into_inner().to_string())
    })
}

pub fn load(path: &Path) -> Result<Resolved, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    resolve(parse(&text)?)
}

fn parse_fraction(f: &str) -> Option<(u32, u32)> {
    let (a, b) = f.split_once('/')?;
    let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    (b > 0).then_some((a, b))
}

/// Checks cross-field constraints and fills in defaults.
pub fn resolve(mut s: Scenario) -> Result<Resolved, ScenarioError> {
    let n = s.n;
    if n == 0 {
        return Err(ScenarioError::schema("n", "must be positive"));
    }
    if let Some(fill) = s.fill.take() {
        let (a, b) = parse_fraction(&fill.fraction).ok_or_else(|| ScenarioError::schema("fill.fraction", "expected \"a/b\""))?;
        let c = ((n as u64 * a as u64).saturating_sub(1) / b as u64) as u32;
        for p in 0..c {
            let entry = RosterEntry {
                class: fill.class,
                script: fill.script.clone(),
            };
            if s.roster.insert(p, entry).is_some() {
                return Err(ScenarioError::schema(format!("roster.{p}"), "also generated by fill"));
            }
        }
        match fill.class {
            FaultClass::Byzantine => s.t += c,
            FaultClass::Deceitful => s.d += c,
            FaultClass::Benign => s.q += c,
        }
    }
    let h0 = match (s.h0, &s.h0_fraction) {
        (Some(h), None) => h,
        (None, Some(f)) => {
            let (a, b) = parse_fraction(f).ok_or_else(|| ScenarioError::schema("h0_fraction", "expected \"a/b\""))?;
            FaultConfig::ceil_fraction(n, a, b)
        }
        (Some(_), Some(_)) => return Err(ScenarioError::schema("h0", "give h0 or h0_fraction, not both")),
        (None, None) => return Err(ScenarioError::schema("h0", "missing h0 or h0_fraction")),
    };
    if s.delta == 0 {
        return Err(ScenarioError::schema("delta", "must be positive"));
    }
    let in_range = |p: &u32| *p < n;
    let mut counts = BTreeMap::new();
    for (p, e) in &s.roster {
        if !in_range(p) {
            return Err(ScenarioError::schema(format!("roster.{p}"), format!("process index must be < n={n}")));
        }
        if !e.script.allowed_for(e.class) {
            return Err(ScenarioError::schema(
                format!("roster.{p}.script"),
                format!("script {} is not available to class {:?}", e.script.name(), e.class),
            ));
        }
        let ids: &[u32] = match &e.script {
            Script::Omit { targets } => targets,
            Script::Split { partition, .. } => partition,
            _ => &[],
        };
        if !ids.iter().all(in_range) {
            return Err(ScenarioError::schema(format!("roster.{p}.script"), "process index out of range"));
        }
        if let Script::Arbitrary { drop, flip, .. } = e.script {
            if !(0.0..=1.0).contains(&drop) || !(0.0..=1.0).contains(&flip) {
                return Err(ScenarioError::schema(format!("roster.{p}.script"), "probabilities must lie in [0, 1]"));
            }
        }
        *counts.entry(e.class).or_insert(0u32) += 1;
    }
    for (class, field, want) in [
        (FaultClass::Byzantine, "t", s.t),
        (FaultClass::Deceitful, "d", s.d),
        (FaultClass::Benign, "q", s.q),
    ] {
        let got = counts.get(&class).copied().unwrap_or(0);
        if got != want {
            return Err(ScenarioError::schema(
                "roster",
                format!("{got} {class:?} entries but {field}={want}"),
            ));
        }
    }
    let proposals = if s.proposals.is_empty() {
        match s.protocol {
            Protocol::Aabc => (0..n as u64).map(|i| i % 2).collect(),
            _ => (0..n as u64).map(|i| 100 + i).collect(),
        }
    } else if s.proposals.len() == n as usize {
        s.proposals.clone()
    } else {
        return Err(ScenarioError::schema("proposals", format!("expected {n} entries")));
    };
    if s.protocol == Protocol::Aarb && s.source >= n {
        return Err(ScenarioError::schema("source", "must be < n"));
    }
    match &s.pre_gst_pattern {
        PreGstPattern::Partition { groups } if !groups.iter().flatten().all(in_range) => {
            return Err(ScenarioError::schema("pre_gst_pattern.groups", "process index out of range"));
        }
        PreGstPattern::CoordinatorStarve { victims } if !victims.iter().all(in_range) => {
            return Err(ScenarioError::schema("pre_gst_pattern.victims", "process index out of range"));
        }
        _ => {}
    }
    let latency = s.latency.unwrap_or(Latency { min: 1, max: s.delta });
    if latency.min == 0 || latency.min > latency.max || latency.max > s.delta {
        return Err(ScenarioError::schema("latency", "need 1 <= min <= max <= delta"));
    }
    if !(8..=64).contains(&s.lambda) {
        return Err(ScenarioError::schema("lambda", "must lie in [8, 64]"));
    }
    let cfg = FaultConfig::new(n, s.t, s.d, s.q, h0);
    if !s.allow_unsafe {
        let verdict = match s.protocol {
            Protocol::Ec => validate_ec_config(&cfg),
            _ => validate_config(&cfg),
        };
        if let Verdict::Reject(v) = verdict {
            return Err(ScenarioError::Bounds(v));
        }
    } else if 2 * h0 <= n || h0 > n {
        return Err(ScenarioError::schema("h0", "must lie in (n/2, n]"));
    }
    let ec_epoch_len = s.ec_epoch_len.unwrap_or(4 * s.delta);
    Ok(Resolved {
        h0,
        proposals,
        latency,
        ec_epoch_len,
        scenario: s,
    })
}
