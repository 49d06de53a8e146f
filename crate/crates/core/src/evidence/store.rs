//! Append-only storage of every signed message a process has seen.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::message::{Digest, InstanceId, Msg, Tag};
use super::pof::{conflicts, ProofOfFraud};
use crate::model::ProcessId;

/// The conflict slot a message competes for: two messages in the same slot
/// may conflict, messages in different slots never do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct SlotKey {
    signer: ProcessId,
    tag: Tag,
    instance: InstanceId,
    round: u32,
}

fn slot_key(m: &Msg) -> Option<SlotKey> {
    let round = match m.tag() {
        Tag::Init | Tag::EchoRb | Tag::ReadyRb | Tag::Decide => 0,
        Tag::Est | Tag::Coord | Tag::EchoBc => m.round(),
        _ => return None,
    };
    Some(SlotKey {
        signer: m.signer(),
        tag: m.tag(),
        instance: m.instance(),
        round,
    })
}

/// Result of [`MessageStore::ingest`].
#[derive(Debug, Default)]
pub struct Ingest {
    /// Messages not seen before, in arrival order.
    pub fresh: Vec<Msg>,
    pub pofs: Vec<ProofOfFraud>,
}

#[derive(Clone, Debug, Default)]
pub struct MessageStore {
    seen: HashSet<Digest>,
    slots: HashMap<SlotKey, Vec<Msg>>,
    /// (instance, round, tag) → messages in arrival order.
    buckets: HashMap<(InstanceId, u32, Tag), Vec<Msg>>,
    /// instance → round → messages in arrival order. Wrappers (RELAY, POFS)
    /// are not indexed here so relays never nest.
    by_instance: HashMap<InstanceId, BTreeMap<u32, Vec<Msg>>>,
}

impl MessageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn contains(&self, m: &Msg) -> bool {
        self.seen.contains(m.digest())
    }

    /// Stores a message without conflict checking. Returns false if it was
    /// already present.
    pub fn insert(&mut self, m: Msg) -> bool {
        if !self.seen.insert(*m.digest()) {
            return false;
        }
        if let Some(key) = slot_key(&m) {
            self.slots.entry(key).or_default().push(m.clone());
        }
        if !matches!(m.tag(), Tag::Relay | Tag::Pofs) {
            self.buckets
                .entry((m.instance(), m.round(), m.tag()))
                .or_default()
                .push(m.clone());
            self.by_instance
                .entry(m.instance())
                .or_default()
                .entry(m.round())
                .or_default()
                .push(m);
        }
        true
    }

    /// Cross-checks `incoming` against everything stored (and against earlier
    /// incoming messages), then stores the new ones. Yields one proof per
    /// new message that conflicts with an earlier message, pairing it with
    /// the earliest such message.
    pub fn ingest(&mut self, incoming: impl IntoIterator<Item = Msg>) -> Ingest {
        let mut out = Ingest::default();
        for m in incoming {
            if self.contains(&m) {
                continue;
            }
            if let Some(key) = slot_key(&m) {
                if let Some(prev) = self
                    .slots
                    .get(&key)
                    .and_then(|v| v.iter().find(|p| conflicts(p, &m)))
                {
                    out.pofs.push(ProofOfFraud {
                        culprit: m.signer(),
                        msg_a: prev.clone(),
                        msg_b: m.clone(),
                    });
                }
            }
            self.insert(m.clone());
            out.fresh.push(m);
        }
        out
    }

    /// Proofs of fraud between `incoming` and the store; the store is then
    /// extended with `incoming`.
    pub fn check_conflicts(&mut self, incoming: impl IntoIterator<Item = Msg>) -> Vec<ProofOfFraud> {
        self.ingest(incoming).pofs
    }

    pub fn bucket(&self, instance: InstanceId, round: u32, tag: Tag) -> &[Msg] {
        self.buckets
            .get(&(instance, round, tag))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Messages of `instance` in round `round` whose tag passes `filter`,
    /// followed by every message of later rounds.
    pub fn phase_scope(
        &self,
        instance: InstanceId,
        round: u32,
        filter: impl Fn(Tag) -> bool,
    ) -> Vec<Msg> {
        let Some(rounds) = self.by_instance.get(&instance) else {
            return Vec::new();
        };
        let mut out: Vec<Msg> = rounds
            .get(&round)
            .into_iter()
            .flatten()
            .filter(|m| filter(m.tag()))
            .cloned()
            .collect();
        for (_, msgs) in rounds.range(round + 1..) {
            out.extend(msgs.iter().cloned());
        }
        out
    }

    /// Messages a given signer has stored in a conflict slot.
    pub fn slot(&self, signer: ProcessId, tag: Tag, instance: InstanceId, round: u32) -> &[Msg] {
        let round = match tag {
            Tag::Init | Tag::EchoRb | Tag::ReadyRb | Tag::Decide => 0,
            _ => round,
        };
        self.slots
            .get(&SlotKey {
                signer,
                tag,
                instance,
                round,
            })
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}
