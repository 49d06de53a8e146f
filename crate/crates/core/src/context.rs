//! The per-process environment protocol instances run in.
//!
//! Instances never touch the network. They read the shared store and
//! committee view, and push signed messages, timer requests and trace events
//! into an [`Outbox`] that the owning node drains.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::evidence::{Certificate, CommitteeView, InstanceId, MessageStore, Msg, Payload, SigningKey};
use crate::model::{amplification_threshold, Bit, Phase, ProcessId};

/// Protocol parameters every process knows.
#[derive(Clone, Debug)]
pub struct Params {
    pub n0: u32,
    pub h0: u32,
    /// Assumed Byzantine bound.
    pub t: u32,
    /// Assumed benign bound.
    pub q: u32,
    pub delta: u64,
    /// Replaces the amplification threshold; only adversary scripts set it.
    pub amp_override: Option<u32>,
}

impl Params {
    pub fn amplification(&self, d_r: u32) -> usize {
        self.amp_override
            .unwrap_or_else(|| amplification_threshold(self.n0, self.q, self.t, d_r).unwrap_or(1))
            as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerKey {
    Aarb(u32),
    Aabc(u32),
    /// Next eventual-consensus invocation.
    Epoch,
}

/// Observable protocol events, recorded in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeEvent {
    AarbDeliver {
        k: u32,
        value: u64,
    },
    AabcStart {
        k: u32,
        input: Bit,
    },
    Round {
        k: u32,
        round: u32,
    },
    Binval {
        k: u32,
        round: u32,
        value: Bit,
        /// Round of the justifying certificate and the short ids of its votes.
        cert_round: Option<u32>,
        cert_votes: Vec<String>,
    },
    AabcDecide {
        k: u32,
        value: Bit,
        round: u32,
    },
    Decide {
        value: u64,
    },
    Removal {
        culprit: ProcessId,
    },
    /// A phase or delivery completed while re-evaluating after a committee
    /// update. `fresh_votes` counts messages from non-removed signers in the
    /// instance's scope that arrived in the same batch.
    Recheck {
        instance: InstanceId,
        round: u32,
        phase: Option<Phase>,
        fresh_votes: usize,
    },
    CertAccept {
        instance: InstanceId,
        round: u32,
        signers: Vec<ProcessId>,
        d_r: u32,
    },
    Disagreement {
        instance: InstanceId,
        local: u64,
        other: u64,
    },
    EcOutput {
        j: u32,
        value: u64,
    },
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub sends: Vec<Msg>,
    pub events: Vec<NodeEvent>,
    /// Timer operations in order: `Some(deadline)` (re-)arms, `None`
    /// disarms.
    pub timers: Vec<(TimerKey, Option<u64>)>,
}

/// First valid justification seen for each `(instance, round, value)` of an
/// ABV broadcast. `None` records an exempt value (round 1, or 1 in round 2).
#[derive(Clone, Debug, Default)]
pub struct Justifications(HashMap<(InstanceId, u32, Bit), Option<Certificate>>);

impl Justifications {
    pub fn get(&self, instance: InstanceId, round: u32, value: Bit) -> Option<&Option<Certificate>> {
        self.0.get(&(instance, round, value))
    }

    /// Returns true if nothing was known for the slot before.
    pub fn record(&mut self, instance: InstanceId, round: u32, value: Bit, cert: Option<Certificate>) -> bool {
        match self.0.entry((instance, round, value)) {
            std::collections::hash_map::Entry::Occupied(_) => false,
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(cert);
                true
            }
        }
    }
}

pub struct Ctx<'a> {
    pub now: u64,
    pub key: &'a SigningKey,
    pub view: &'a CommitteeView,
    pub store: &'a MessageStore,
    pub params: &'a Params,
    pub just: &'a Justifications,
    pub out: &'a mut Outbox,
}

impl Ctx<'_> {
    pub fn me(&self) -> ProcessId {
        self.key.id()
    }

    pub fn h(&self) -> usize {
        self.view.h() as usize
    }

    pub fn broadcast(&mut self, instance: InstanceId, round: u32, payload: Payload) -> Msg {
        let m = self.key.sign(instance, round, payload);
        self.out.sends.push(m.clone());
        m
    }

    pub fn emit(&mut self, e: NodeEvent) {
        self.out.events.push(e);
    }

    pub fn arm(&mut self, key: TimerKey) {
        self.out.timers.push((key, Some(self.now + self.params.delta)));
    }

    pub fn disarm(&mut self, key: TimerKey) {
        self.out.timers.push((key, None));
    }
}

/// The first message of each non-removed signer among `msgs` that satisfies
/// `keep`, in order.
pub fn distinct_votes<'m>(
    msgs: impl IntoIterator<Item = &'m Msg>,
    view: &CommitteeView,
    mut keep: impl FnMut(&Msg) -> bool,
) -> Vec<&'m Msg> {
    let mut seen = BTreeSet::new();
    msgs.into_iter()
        .filter(|m| !view.is_removed(m.signer()) && keep(m) && seen.insert(m.signer()))
        .collect()
}
