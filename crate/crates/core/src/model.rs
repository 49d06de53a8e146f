//! Fault-model configuration, process identities, and threshold arithmetic.
//!
//! Every threshold is computed from the *initial* committee size `n` with an
//! explicit `- d_r` correction for the number of processes removed so far,
//! never from the shrunken membership.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a process in the initial committee, `0..n`.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A binary value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Bit {
    Zero,
    One,
}

impl Bit {
    pub const BOTH: [Bit; 2] = [Bit::Zero, Bit::One];

    pub fn from_bool(b: bool) -> Self {
        if b {
            Bit::One
        } else {
            Bit::Zero
        }
    }

    /// The parity bit of a round, `r mod 2`.
    pub fn parity(round: u32) -> Self {
        Bit::from_bool(round % 2 == 1)
    }

    pub fn flip(self) -> Self {
        match self {
            Bit::Zero => Bit::One,
            Bit::One => Bit::Zero,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn idx(self) -> usize {
        self as usize
    }
}

impl From<Bit> for u8 {
    fn from(b: Bit) -> u8 {
        b as u8
    }
}

impl TryFrom<u8> for Bit {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Bit::Zero),
            1 => Ok(Bit::One),
            other => Err(format!("not a bit: {other}")),
        }
    }
}

impl fmt::Display for Bit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// A subset of `{0, 1}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinSet(u8);

impl BinSet {
    pub const EMPTY: BinSet = BinSet(0);
    pub const BOTH: BinSet = BinSet(0b11);

    pub fn single(b: Bit) -> Self {
        BinSet(1 << b.idx())
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits <= 0b11).then_some(BinSet(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, b: Bit) {
        self.0 |= 1 << b.idx();
    }

    pub fn contains(self, b: Bit) -> bool {
        self.0 & (1 << b.idx()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: BinSet) -> BinSet {
        BinSet(self.0 | other.0)
    }

    pub fn is_subset(self, other: BinSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// The only element, if this is a singleton.
    pub fn as_single(self) -> Option<Bit> {
        match self.0 {
            0b01 => Some(Bit::Zero),
            0b10 => Some(Bit::One),
            _ => None,
        }
    }

    pub fn iter(self) -> impl Iterator<Item = Bit> {
        Bit::BOTH.into_iter().filter(move |b| self.contains(*b))
    }
}

impl FromIterator<Bit> for BinSet {
    fn from_iter<I: IntoIterator<Item = Bit>>(iter: I) -> Self {
        let mut s = BinSet::EMPTY;
        for b in iter {
            s.insert(b);
        }
        s
    }
}

impl fmt::Display for BinSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vals: Vec<String> = self.iter().map(|b| b.to_string()).collect();
        write!(f, "{{{}}}", vals.join(","))
    }
}

/// Assumed fault bounds and the initial voting threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultConfig {
    /// Initial committee size.
    pub n: u32,
    /// Byzantine processes.
    pub t: u32,
    /// Deceitful processes.
    pub d: u32,
    /// Benign processes.
    pub q: u32,
    /// Initial voting threshold.
    pub h0: u32,
}

impl FaultConfig {
    pub fn new(n: u32, t: u32, d: u32, q: u32, h0: u32) -> Self {
        FaultConfig { n, t, d, q, h0 }
    }

    /// `⌈num·n/den⌉`, the integer threshold for a fraction like `2n/3`.
    pub fn ceil_fraction(n: u32, num: u32, den: u32) -> u32 {
        (n * num).div_ceil(den)
    }
}

/// One violated inequality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundViolation {
    /// `h0` must lie in `(n/2, n]`.
    ThresholdRange { h0: u32, n: u32 },
    /// `t + d + q < n`.
    FaultCount { total: u32, n: u32 },
    /// `d + t < 2·h0 − n`.
    Safety { d_plus_t: u32, bound: i64 },
    /// `q + t ≤ n − h0`.
    Liveness { q_plus_t: u32, bound: i64 },
    /// `n > 3t + d + 2q`; no threshold can satisfy both bounds otherwise.
    Resilience { n: u32, required: u32 },
    /// Eventual-consensus safety, `d + t < h0`.
    EventualSafety { d_plus_t: u32, h0: u32 },
    /// Eventual-consensus liveness, `q + t < n − h0`.
    EventualLiveness { q_plus_t: u32, bound: i64 },
}

impl fmt::Display for BoundViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundViolation::ThresholdRange { h0, n } => {
                write!(f, "h0={h0} is outside (n/2, n] for n={n}")
            }
            BoundViolation::FaultCount { total, n } => {
                write!(f, "t+d+q={total} must be < n={n}")
            }
            BoundViolation::Safety { d_plus_t, bound } => {
                write!(f, "safety: d+t={d_plus_t} must be < 2h0-n={bound}")
            }
            BoundViolation::Liveness { q_plus_t, bound } => {
                write!(f, "liveness: q+t={q_plus_t} must be <= n-h0={bound}")
            }
            BoundViolation::Resilience { n, required } => {
                write!(f, "resilience: n={n} must be > 3t+d+2q={required}")
            }
            BoundViolation::EventualSafety { d_plus_t, h0 } => {
                write!(f, "eventual safety: d+t={d_plus_t} must be < h0={h0}")
            }
            BoundViolation::EventualLiveness { q_plus_t, bound } => {
                write!(f, "eventual liveness: q+t={q_plus_t} must be < n-h0={bound}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject(Vec<BoundViolation>),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }

    fn from_violations(v: Vec<BoundViolation>) -> Self {
        if v.is_empty() {
            Verdict::Accept
        } else {
            Verdict::Reject(v)
        }
    }
}

fn threshold_in_range(cfg: &FaultConfig) -> bool {
    2 * cfg.h0 > cfg.n && cfg.h0 <= cfg.n
}

/// Checks the consensus resilience bounds for a configuration.
///
/// Accepts iff `h0 ∈ (n/2, n]`, `d+t < 2h0−n` and `q+t ≤ n−h0`. The
/// threshold-free bound `n > 3t+d+2q` is reported in addition whenever it
/// fails, since then no choice of `h0` could help.
pub fn validate_config(cfg: &FaultConfig) -> Verdict {
    let mut out = Vec::new();
    let (n, h0) = (cfg.n as i64, cfg.h0 as i64);
    if !threshold_in_range(cfg) {
        out.push(BoundViolation::ThresholdRange { h0: cfg.h0, n: cfg.n });
    }
    let total = cfg.t + cfg.d + cfg.q;
    if total >= cfg.n {
        out.push(BoundViolation::FaultCount { total, n: cfg.n });
    }
    let safety = 2 * h0 - n;
    if ((cfg.d + cfg.t) as i64) >= safety {
        out.push(BoundViolation::Safety {
            d_plus_t: cfg.d + cfg.t,
            bound: safety,
        });
    }
    let liveness = n - h0;
    if ((cfg.q + cfg.t) as i64) > liveness {
        out.push(BoundViolation::Liveness {
            q_plus_t: cfg.q + cfg.t,
            bound: liveness,
        });
    }
    let required = 3 * cfg.t + cfg.d + 2 * cfg.q;
    if cfg.n <= required {
        out.push(BoundViolation::Resilience { n: cfg.n, required });
    }
    Verdict::from_violations(out)
}

/// Checks the bounds under which the eventual-consensus wrapper converges:
/// `d+t < h0` and `q+t < n−h0`.
pub fn validate_ec_config(cfg: &FaultConfig) -> Verdict {
    let mut out = Vec::new();
    if !threshold_in_range(cfg) {
        out.push(BoundViolation::ThresholdRange { h0: cfg.h0, n: cfg.n });
    }
    if cfg.d + cfg.t >= cfg.h0 {
        out.push(BoundViolation::EventualSafety {
            d_plus_t: cfg.d + cfg.t,
            h0: cfg.h0,
        });
    }
    let bound = cfg.n as i64 - cfg.h0 as i64;
    if (cfg.q + cfg.t) as i64 >= bound {
        out.push(BoundViolation::EventualLiveness {
            q_plus_t: cfg.q + cfg.t,
            bound,
        });
    }
    Verdict::from_violations(out)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("committee collapsed: {d_r} removed processes with initial threshold {h0}")]
    CommitteeCollapsed { h0: u32, d_r: u32 },
    #[error("amplification threshold vanished for n={n}, q={q}, t={t}, d_r={d_r}")]
    AmplificationCollapsed { n: u32, q: u32, t: u32, d_r: u32 },
}

/// The adaptive voting threshold `h(d_r) = h0 − d_r`.
pub fn threshold(h0: u32, d_r: u32) -> Result<u32, ModelError> {
    if d_r >= h0 {
        return Err(ModelError::CommitteeCollapsed { h0, d_r });
    }
    Ok(h0 - d_r)
}

/// Distinct BVECHO senders after which a process echoes a value it did not
/// start with: `⌊(n−q−t)/2⌋ − d_r + 1`.
pub fn amplification_threshold(n: u32, q: u32, t: u32, d_r: u32) -> Result<u32, ModelError> {
    let base = (n.saturating_sub(q + t) / 2) as i64 + 1 - d_r as i64;
    if base < 1 {
        return Err(ModelError::AmplificationCollapsed { n, q, t, d_r });
    }
    Ok(base as u32)
}

/// Rotating coordinator of a round. Indexing is over the initial committee,
/// so a removed process keeps its slot.
pub fn coordinator(round: u32, n0: u32) -> ProcessId {
    debug_assert!(round >= 1);
    ProcessId((round - 1) % n0)
}

/// Position inside a binary-consensus round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Phase1,
    Phase2,
    Decision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoundPhase {
    pub round: u32,
    pub phase: Phase,
}

impl RoundPhase {
    pub fn start(round: u32) -> Self {
        RoundPhase {
            round,
            phase: Phase::Phase1,
        }
    }

    pub fn parity(&self) -> Bit {
        Bit::parity(self.round)
    }
}
