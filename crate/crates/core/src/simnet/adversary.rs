//! Rewrites the sends of faulty processes according to their script.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::scenario::{FaultClass, Persistence, Script};
use std::collections::HashSet;

use crate::evidence::{Digest, InstanceId, Msg, Payload, SigningKey};
use crate::model::{coordinator, BinSet, Bit};

/// One copy of a message on its way to one recipient.
#[derive(Clone, Debug)]
pub struct Outgoing {
    pub to: u32,
    pub msg: Msg,
    /// Time the sender holds the copy back before it enters the network.
    pub hold: u64,
}

/// The conflicting counterpart of `m`, signed by `key`, for the tags where
/// a second version can be both accepted and used as evidence. Messages
/// carrying certificates are never flipped.
pub fn flip(key: &SigningKey, m: &Msg) -> Option<Msg> {
    let payload = match m.payload() {
        Payload::Init { value } => Payload::Init { value: value + 1 },
        Payload::EchoRb { value } => Payload::EchoRb { value: value + 1 },
        Payload::Est { value, cert: None } if m.round() == 1 => Payload::Est {
            value: value.flip(),
            cert: None,
        },
        Payload::Coord { value } => Payload::Coord { value: value.flip() },
        Payload::EchoBc { aux } => {
            let flipped = match aux.as_single() {
                Some(b) => BinSet::single(b.flip()),
                None => BinSet::single(Bit::Zero),
            };
            Payload::EchoBc { aux: flipped }
        }
        _ => return None,
    };
    Some(key.sign(m.instance(), m.round(), payload))
}

fn embeds_any(m: &Msg, digests: &HashSet<Digest>) -> bool {
    m.payload()
        .children()
        .any(|c| digests.contains(c.digest()) || embeds_any(c, digests))
}

#[derive(Debug)]
pub struct Adversary {
    pub class: FaultClass,
    pub script: Script,
    key: SigningKey,
    rng: ChaCha20Rng,
    delta: u64,
    /// Non-faulty processes in index order, for `coord_split` targeting.
    correct: Vec<u32>,
    /// Size of the `coord_split` target set.
    split_size: usize,
    n: u32,
    /// Originals that `coord_split` replaced; nothing embedding one leaves.
    withheld: HashSet<Digest>,
}

impl Adversary {
    pub fn new(
        class: FaultClass,
        script: Script,
        key: SigningKey,
        rng: ChaCha20Rng,
        delta: u64,
        correct: Vec<u32>,
        split_size: usize,
        n: u32,
    ) -> Self {
        Adversary {
            class,
            script,
            key,
            rng,
            delta,
            correct,
            split_size,
            n,
            withheld: HashSet::new(),
        }
    }

    /// Whether the process has stopped at time `now`.
    pub fn crashed(&self, now: u64) -> bool {
        matches!(self.script, Script::Crash { at } if now >= at)
    }

    pub fn amp_override(&self) -> Option<u32> {
        matches!(self.script, Script::CoordSplit).then_some(1)
    }

    /// Copies of `m` to send to `recipients`.
    pub fn transform(&mut self, m: &Msg, recipients: &[u32]) -> Vec<Outgoing> {
        let plain = |to: u32| Outgoing {
            to,
            msg: m.clone(),
            hold: 0,
        };
        match &self.script {
            Script::Crash { .. } => recipients.iter().map(|&to| plain(to)).collect(),
            Script::Omit { targets } => recipients
                .iter()
                .filter(|to| !targets.contains(to))
                .map(|&to| plain(to))
                .collect(),
            Script::Stale { delay } => recipients
                .iter()
                .map(|&to| Outgoing {
                    to,
                    msg: m.clone(),
                    hold: *delay,
                })
                .collect(),
            Script::Silent => Vec::new(),
            Script::Split {
                partition,
                persistence,
                tags,
            } => {
                let active = (*persistence == Persistence::EveryRound || m.round() <= 1)
                    && tags.as_ref().map_or(true, |t| t.contains(&m.tag()));
                let other = if active { flip(&self.key, m) } else { None };
                recipients
                    .iter()
                    .map(|&to| match &other {
                        Some(o) if partition.contains(&to) => Outgoing {
                            to,
                            msg: o.clone(),
                            hold: 0,
                        },
                        _ => plain(to),
                    })
                    .collect()
            }
            Script::Arbitrary { drop, flip: p_flip, max_delay } => {
                let (drop, p_flip) = (*drop, *p_flip);
                let max_delay = max_delay.unwrap_or(self.delta);
                let other = flip(&self.key, m);
                let mut out = Vec::new();
                for &to in recipients {
                    if self.rng.gen_bool(drop) {
                        continue;
                    }
                    let msg = match &other {
                        Some(o) if self.rng.gen_bool(p_flip) => o.clone(),
                        _ => m.clone(),
                    };
                    let hold = self.rng.gen_range(0..=max_delay);
                    out.push(Outgoing { to, msg, hold });
                }
                out
            }
            Script::CoordSplit => {
                let r = m.round();
                if !matches!(m.instance(), InstanceId::Aabc(_)) || !self.attacked(r) {
                    return match m.payload() {
                        Payload::Decide { .. } | Payload::Relay { .. } | Payload::Pofs { .. } => Vec::new(),
                        _ if embeds_any(m, &self.withheld) => Vec::new(),
                        _ => recipients.iter().map(|&to| plain(to)).collect(),
                    };
                }
                let side = Bit::parity(r).flip();
                let targets = self.targets();
                let to_targets = |msg: Msg| -> Vec<Outgoing> {
                    recipients
                        .iter()
                        .filter(|to| targets.contains(to))
                        .map(|&to| Outgoing {
                            to,
                            msg: msg.clone(),
                            hold: 0,
                        })
                        .collect()
                };
                let mut replace = |payload: Payload| {
                    let msg = self.key.sign(m.instance(), r, payload);
                    if msg.digest() != m.digest() {
                        self.withheld.insert(*m.digest());
                    }
                    msg
                };
                match m.payload() {
                    // One version only, shown only to the targets: an
                    // omission, never a conflicting pair.
                    Payload::Coord { .. } => to_targets(replace(Payload::Coord { value: side })),
                    Payload::EchoBc { .. } => to_targets(replace(Payload::EchoBc {
                        aux: BinSet::single(side),
                    })),
                    // Round one needs no justification, so the first
                    // estimate can back the side value outright.
                    Payload::Est { cert: None, .. } if r == 1 => {
                        let est = replace(Payload::Est { value: side, cert: None });
                        recipients
                            .iter()
                            .map(|&to| Outgoing {
                                to,
                                msg: est.clone(),
                                hold: 0,
                            })
                            .collect()
                    }
                    Payload::Decide { .. } | Payload::Relay { .. } | Payload::Pofs { .. } => Vec::new(),
                    _ if embeds_any(m, &self.withheld) => Vec::new(),
                    _ => recipients.iter().map(|&to| plain(to)).collect(),
                }
            }
        }
    }

    /// Whether round `r` has a faulty coordinator, so `coord_split` acts.
    fn attacked(&self, r: u32) -> bool {
        !self.correct.contains(&coordinator(r, self.n).0)
    }

    /// The processes shown the side value. Fixed across rounds, so the two
    /// camps keep their estimates from one round to the next.
    pub fn targets(&self) -> Vec<u32> {
        self.correct.iter().copied().take(self.split_size).collect()
    }
}

/// Post-GST delay choices made on behalf of `coord_split` processes.
///
/// In a round whose coordinator is faulty, estimates and echoes carrying the
/// side value `1 - parity(r)` reach the targets after `min` and everyone
/// else after `max`. Second-phase echoes other than `{side}` reach the
/// targets after `max`. Everything else in such a round, including all
/// traffic to and from faulty processes, takes `min`. Every choice stays within the configured post-GST
/// latency range.
#[derive(Clone, Debug)]
pub struct Steering {
    n: u32,
    gst: u64,
    min: u64,
    max: u64,
    faulty: Vec<bool>,
    targets: Vec<u32>,
}

impl Steering {
    pub fn new(n: u32, gst: u64, min: u64, max: u64, faulty: Vec<bool>, targets: Vec<u32>) -> Self {
        Steering {
            n,
            gst,
            min,
            max,
            faulty,
            targets,
        }
    }

    /// Latency of a copy of `m` from `from` to `to`, or `None` to leave it
    /// to the network.
    pub fn latency(&self, sent: u64, from: u32, to: u32, m: &Msg) -> Option<u64> {
        let r = m.round();
        if sent < self.gst || !matches!(m.instance(), InstanceId::Aabc(_)) || r == 0 {
            return None;
        }
        if !self.faulty[coordinator(r, self.n).0 as usize] {
            return None;
        }
        if self.faulty[from as usize] || self.faulty[to as usize] {
            return Some(self.min);
        }
        let side = Bit::parity(r).flip();
        let target = self.targets.contains(&to);
        let slow = match m.payload() {
            Payload::Est { value, .. } | Payload::BvEcho { value, .. } => *value == side && !target,
            Payload::EchoBc { aux } => *aux != BinSet::single(side) && target,
            _ => return None,
        };
        Some(if slow { self.max } else { self.min })
    }
}
