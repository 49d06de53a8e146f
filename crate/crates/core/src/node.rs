//! One process: message admission, evidence handling, and dispatch to the
//! protocol instances it runs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aabc::{AabcInstance, DecideOutcome, Progress};
use crate::aarb::AarbInstance;
use crate::context::{Ctx, Justifications, NodeEvent, Outbox, Params, TimerKey};
use crate::evidence::{
    Certificate, Claim, ClaimKind, CommitteeView, Digest, Directory, InstanceId, MessageStore, Msg, Payload,
    ProofOfFraud, SigningKey,
};
use crate::model::{coordinator, Bit, ProcessId};
use crate::reduction::{EcState, GenState, StartBinary};

/// Which protocol a run exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Multi-valued consensus over all proposals.
    General,
    /// One binary consensus instance; proposals are read as bits.
    Aabc,
    /// One reliable broadcast from a single source.
    Aarb,
    /// Repeated eventual consensus on top of the general protocol.
    Ec,
}

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub protocol: Protocol,
    pub proposal: u64,
    /// Source of the single broadcast in [`Protocol::Aarb`] runs.
    pub source: u32,
    pub ec_epochs: u32,
    pub ec_epoch_len: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Admit {
    Accept,
    /// Would be valid with more usable votes or a known justification.
    Park,
    Drop,
}

fn worst(a: Admit, b: Admit) -> Admit {
    match (a, b) {
        (Admit::Drop, _) | (_, Admit::Drop) => Admit::Drop,
        (Admit::Park, _) | (_, Admit::Park) => Admit::Park,
        _ => Admit::Accept,
    }
}

struct Core {
    key: SigningKey,
    dir: Arc<Directory>,
    params: Params,
    view: CommitteeView,
    store: MessageStore,
    just: Justifications,
    /// Certificates accepted under a lowered threshold, not yet reported.
    cert_log: Vec<NodeEvent>,
}

macro_rules! ctx {
    ($core:expr, $now:expr, $out:expr) => {
        Ctx {
            now: $now,
            key: &$core.key,
            view: &$core.view,
            store: &$core.store,
            params: &$core.params,
            just: &$core.just,
            out: $out,
        }
    };
}

pub struct Node {
    core: Core,
    cfg: NodeConfig,
    aarb: BTreeMap<u32, AarbInstance>,
    aabc: BTreeMap<u32, AabcInstance>,
    gen: GenState,
    ec: EcState,
    decision: Option<u64>,
    parked: Vec<Msg>,
    /// Disagreement evidence already broadcast, by instance and value.
    evidence_sent: BTreeSet<(InstanceId, u64)>,
    timers: HashMap<TimerKey, u64>,
    /// Index into the outbox of the first own send not yet stored locally.
    sent_mark: usize,
    /// A justification was learned since parked messages were last retried.
    just_grew: bool,
}

impl Node {
    pub fn new(key: SigningKey, dir: Arc<Directory>, params: Params, cfg: NodeConfig) -> Self {
        let n0 = params.n0;
        let view = CommitteeView::new(n0, params.h0);
        let (aarb, aabc) = match cfg.protocol {
            Protocol::General | Protocol::Ec => (
                (0..n0).map(|k| (k, AarbInstance::new(ProcessId(k)))).collect(),
                (0..n0).map(|k| (k, AabcInstance::new(k))).collect(),
            ),
            Protocol::Aabc => (BTreeMap::new(), [(0, AabcInstance::new(0))].into()),
            Protocol::Aarb => (
                [(cfg.source, AarbInstance::new(ProcessId(cfg.source)))].into(),
                BTreeMap::new(),
            ),
        };
        Node {
            core: Core {
                key,
                dir,
                params,
                view,
                store: MessageStore::new(),
                just: Justifications::default(),
                cert_log: Vec::new(),
            },
            cfg,
            aarb,
            aabc,
            gen: GenState::new(n0),
            ec: EcState::default(),
            decision: None,
            parked: Vec::new(),
            evidence_sent: BTreeSet::new(),
            timers: HashMap::new(),
            sent_mark: 0,
            just_grew: false,
        }
    }

    pub fn id(&self) -> ProcessId {
        self.core.key.id()
    }

    pub fn decision(&self) -> Option<u64> {
        self.decision
    }

    pub fn view(&self) -> &CommitteeView {
        &self.core.view
    }

    pub fn store(&self) -> &MessageStore {
        &self.core.store
    }

    pub fn ec_outputs(&self) -> &[u64] {
        self.ec.outputs()
    }

    pub fn aabc(&self, k: u32) -> Option<&AabcInstance> {
        self.aabc.get(&k)
    }

    pub fn aarb(&self, k: u32) -> Option<&AarbInstance> {
        self.aarb.get(&k)
    }

    /// Highest round reached by any binary consensus instance.
    pub fn max_round(&self) -> u32 {
        self.aabc.values().map(|a| a.round()).max().unwrap_or(0)
    }

    /// No timer is armed.
    pub fn idle(&self) -> bool {
        self.timers.is_empty()
    }

    pub fn start(&mut self, now: u64) -> Outbox {
        let mut out = Outbox::default();
        let me = self.id();
        for rb in self.aarb.values_mut() {
            let mut ctx = ctx!(self.core, now, &mut out);
            rb.start(&mut ctx);
            if rb.source() == me {
                rb.broadcast(&mut ctx, self.cfg.proposal).expect("fresh instance");
            }
        }
        if self.cfg.protocol == Protocol::Aabc {
            let input = Bit::from_bool(self.cfg.proposal != 0);
            let mut ctx = ctx!(self.core, now, &mut out);
            self.aabc.get_mut(&0).expect("instance 0").start(&mut ctx, input);
        }
        self.flush_own(now, &mut out);
        self.settle(now, &mut out);
        self.finish(out)
    }

    /// Handles one message from the network.
    pub fn receive(&mut self, now: u64, msg: Msg) -> Outbox {
        let mut out = Outbox::default();
        if self.core.dir.verify(&msg) {
            let accepted = self.admit(vec![msg]);
            out.events.append(&mut self.core.cert_log);
            self.absorb(now, accepted, &mut out);
        }
        self.finish(out)
    }

    /// Handles a timer event scheduled for `now`. Stale events (re-armed or
    /// disarmed since) are ignored.
    pub fn fire(&mut self, now: u64, key: TimerKey) -> Option<Outbox> {
        if self.timers.get(&key) != Some(&now) {
            return None;
        }
        self.timers.remove(&key);
        let mut out = Outbox::default();
        match key {
            TimerKey::Aarb(k) => {
                let mut ctx = ctx!(self.core, now, &mut out);
                self.aarb.get_mut(&k).expect("known instance").on_timer(&mut ctx);
            }
            TimerKey::Aabc(k) => {
                let mut ctx = ctx!(self.core, now, &mut out);
                self.aabc.get_mut(&k).expect("known instance").on_timer(&mut ctx);
            }
            TimerKey::Epoch => self.epoch(now, &mut out),
        }
        self.flush_own(now, &mut out);
        self.settle(now, &mut out);
        Some(self.finish(out))
    }

    fn finish(&mut self, out: Outbox) -> Outbox {
        for (k, t) in &out.timers {
            match t {
                Some(t) => self.timers.insert(*k, *t),
                None => self.timers.remove(k),
            };
        }
        self.sent_mark = 0;
        out
    }

    // ---- admission ----

    /// Walks `msgs` and everything embedded in them, parents first, and
    /// sorts each message into accepted, parked or dropped.
    fn admit(&mut self, msgs: Vec<Msg>) -> Vec<Msg> {
        let mut walk = Vec::new();
        let mut seen = HashSet::new();
        for m in &msgs {
            self.collect(m, &mut walk, &mut seen);
        }
        let mut sigs = HashMap::new();
        let mut accepted = Vec::new();
        for m in walk {
            match self.classify(&m, &mut sigs) {
                Admit::Accept => accepted.push(m),
                Admit::Park => self.parked.push(m),
                Admit::Drop => {}
            }
        }
        accepted
    }

    fn collect(&self, m: &Msg, out: &mut Vec<Msg>, seen: &mut HashSet<Digest>) {
        // A stored message adds nothing unless it brings a justification we
        // lack.
        let brings_just = m.justification().is_some()
            && m.payload()
                .bit()
                .is_some_and(|v| self.core.just.get(m.instance(), m.round(), v).is_none());
        if (self.core.store.contains(m) && !brings_just) || !seen.insert(*m.digest()) {
            return;
        }
        out.push(m.clone());
        for c in m.payload().children() {
            self.collect(c, out, seen);
        }
    }

    fn sig_ok(&self, m: &Msg, cache: &mut HashMap<Digest, bool>) -> bool {
        if let Some(ok) = cache.get(m.digest()) {
            return *ok;
        }
        let ok = (self.core.store.contains(m) || self.core.dir.verify(m))
            && m.payload().children().all(|c| self.sig_ok(c, cache));
        cache.insert(*m.digest(), ok);
        ok
    }

    fn cert_status(&mut self, cert: &Certificate, claim: Claim) -> Admit {
        if cert.claim != claim || !cert.votes.iter().all(|v| claim.supported_by(v)) {
            return Admit::Drop;
        }
        if cert.usable_votes(&self.core.view) < self.core.view.h() as usize {
            return Admit::Park;
        }
        let d_r = self.core.view.d_r();
        if d_r > 0 {
            self.core.cert_log.push(NodeEvent::CertAccept {
                instance: claim.instance,
                round: claim.round,
                signers: cert.signers().collect(),
                d_r,
            });
        }
        Admit::Accept
    }

    /// Rule for the justification carried by EST, BVECHO and BVREADY.
    fn just_status(&mut self, inst: InstanceId, r: u32, v: Bit, cert: Option<&Certificate>) -> Admit {
        if r == 1 || (r == 2 && v == Bit::One) {
            return Admit::Accept;
        }
        let Some(c) = cert else {
            return match self.core.just.get(inst, r, v) {
                Some(Some(_)) => Admit::Accept,
                _ => Admit::Park,
            };
        };
        let cr = c.claim.round;
        let rounds_ok = cr + 1 == r || (cr + 2 == r && v == Bit::parity(r - 1));
        if c.claim.kind != ClaimKind::EchoBcOnly || !rounds_ok {
            return Admit::Drop;
        }
        let status = self.cert_status(c, Claim::echo_bc_only(inst, cr, v));
        if status == Admit::Accept {
            self.just_grew |= self.core.just.record(inst, r, v, Some(c.clone()));
        }
        status
    }

    fn classify(&mut self, m: &Msg, sigs: &mut HashMap<Digest, bool>) -> Admit {
        if !self.sig_ok(m, sigs) {
            return Admit::Drop;
        }
        let inst = m.instance();
        let r = m.round();
        let rb = matches!(inst, InstanceId::Aarb(_)) && r == 0;
        let bc = matches!(inst, InstanceId::Aabc(_)) && r >= 1;
        let ok = |c: bool| if c { Admit::Accept } else { Admit::Drop };
        match m.payload() {
            Payload::Init { .. } => ok(rb && inst == InstanceId::Aarb(m.signer().0)),
            Payload::EchoRb { .. } => ok(rb),
            Payload::ReadyRb { value, cert } if rb => self.cert_status(cert, Claim::rb_echo(inst, *value)),
            Payload::Est { value, cert } | Payload::BvEcho { value, cert } if bc => {
                self.just_status(inst, r, *value, cert.as_ref())
            }
            Payload::BvReady { value, cert, bv_cert } if bc => {
                let bv = self.cert_status(bv_cert, Claim::bv_echo(inst, r, *value));
                if bv == Admit::Drop {
                    return bv;
                }
                worst(self.just_status(inst, r, *value, cert.as_ref()), bv)
            }
            Payload::Coord { .. } => ok(bc && m.signer() == coordinator(r, self.core.params.n0)),
            Payload::EchoBc { aux } => ok(bc && !aux.is_empty()),
            Payload::Decide { value, cert } if bc && *value == Bit::parity(r) => {
                self.cert_status(cert, Claim::echo_bc_only(inst, r, *value))
            }
            Payload::Relay { .. } | Payload::Pofs { .. } => Admit::Accept,
            _ => Admit::Drop,
        }
    }

    // ---- processing ----

    fn absorb(&mut self, now: u64, mut accepted: Vec<Msg>, out: &mut Outbox) {
        loop {
            let explicit: Vec<ProofOfFraud> = accepted
                .iter()
                .filter_map(|m| match m.payload() {
                    Payload::Pofs { pofs } => Some(pofs.clone()),
                    _ => None,
                })
                .flatten()
                .collect();
            let ingest = self.core.store.ingest(accepted);
            let mut pofs = ingest.pofs;
            pofs.extend(explicit);
            let removed = self.update_committee(now, pofs, &ingest.fresh, out);
            self.dispatch(now, &ingest.fresh, true, out);
            self.flush_own(now, out);
            self.settle(now, out);
            let retry = removed || self.just_grew;
            if !retry || self.parked.is_empty() {
                break;
            }
            self.just_grew = false;
            let parked = std::mem::take(&mut self.parked);
            accepted = self.admit(parked);
            out.events.append(&mut self.core.cert_log);
        }
    }

    /// Applies fresh proofs: removal, one POFS broadcast, recheck of every
    /// instance against the lowered threshold, and timer resets.
    fn update_committee(&mut self, now: u64, pofs: Vec<ProofOfFraud>, fresh: &[Msg], out: &mut Outbox) -> bool {
        let mut seen = BTreeSet::new();
        let valid: Vec<ProofOfFraud> = pofs
            .into_iter()
            .filter(|p| !self.core.view.is_removed(p.culprit) && seen.insert(p.culprit))
            .filter(|p| p.verify(&self.core.dir))
            .collect();
        let applied = self.core.view.apply_pofs(&valid);
        if applied.is_empty() {
            return false;
        }
        for p in &applied {
            out.events.push(NodeEvent::Removal { culprit: p.culprit });
        }
        let me_key = &self.core.key;
        out.sends.push(me_key.sign(InstanceId::Global, 0, Payload::Pofs { pofs: applied }));
        {
            // Fresh votes per instance, from processes still in the committee.
            let mut fresh_votes: HashMap<InstanceId, usize> = HashMap::new();
            for m in fresh {
                if !self.core.view.is_removed(m.signer()) {
                    *fresh_votes.entry(m.instance()).or_default() += 1;
                }
            }
            let ks: Vec<u32> = self.aarb.keys().copied().collect();
            for k in ks {
                if self.poll_aarb(now, k, out) {
                    let instance = InstanceId::Aarb(k);
                    out.events.push(NodeEvent::Recheck {
                        instance,
                        round: 0,
                        phase: None,
                        fresh_votes: fresh_votes.get(&instance).copied().unwrap_or(0),
                    });
                }
            }
            let ks: Vec<u32> = self.aabc.keys().copied().collect();
            for k in ks {
                let a = &self.aabc[&k];
                let (round, phase) = (a.round(), a.phase());
                let touched: Vec<u32> = (1..=round).collect();
                let p = self.poll_aabc(now, k, &touched, out);
                if p.phases > 0 || p.delivered {
                    let instance = InstanceId::Aabc(k);
                    out.events.push(NodeEvent::Recheck {
                        instance,
                        round,
                        phase: (p.phases > 0).then_some(phase),
                        fresh_votes: fresh_votes.get(&instance).copied().unwrap_or(0),
                    });
                }
            }
        }
        let mut ctx = ctx!(self.core, now, out);
        for a in self.aabc.values_mut() {
            a.reset_timer(&mut ctx);
        }
        for rb in self.aarb.values_mut() {
            rb.reset_timer(&mut ctx);
        }
        true
    }

    fn poll_aarb(&mut self, now: u64, k: u32, out: &mut Outbox) -> bool {
        let mut ctx = ctx!(self.core, now, out);
        let rb = self.aarb.get_mut(&k).expect("known instance");
        let progress = rb.poll(&mut ctx);
        let own = rb.own_ready().cloned();
        for d in progress.disagreements {
            let instance = InstanceId::Aarb(k);
            out.events.push(NodeEvent::Disagreement {
                instance,
                local: d.local,
                other: d.other,
            });
            if self.cfg.protocol == Protocol::Ec {
                self.gen.resolve_rb(k, d.other);
                if self.evidence_sent.insert((instance, d.other)) {
                    let msgs = own.iter().cloned().chain([d.ready]).collect();
                    out.sends.push(self.core.key.sign(instance, 0, Payload::Relay { msgs }));
                }
            }
        }
        progress.delivered.is_some()
    }

    fn poll_aabc(&mut self, now: u64, k: u32, touched: &[u32], out: &mut Outbox) -> Progress {
        let mut ctx = ctx!(self.core, now, out);
        self.aabc.get_mut(&k).expect("known instance").poll(&mut ctx, touched)
    }

    fn on_decide(&mut self, now: u64, k: u32, msg: &Msg, out: &mut Outbox) {
        let mut ctx = ctx!(self.core, now, out);
        let a = self.aabc.get_mut(&k).expect("known instance");
        let outcome = a.on_decide(&mut ctx, msg);
        let own = a.own_decide().cloned();
        if let DecideOutcome::Contradicts { local, other } = outcome {
            let instance = InstanceId::Aabc(k);
            out.events.push(NodeEvent::Disagreement {
                instance,
                local: local.as_u8() as u64,
                other: other.as_u8() as u64,
            });
            if self.cfg.protocol == Protocol::Ec {
                if other == Bit::One {
                    self.gen.resolve_binary(k);
                }
                if self.evidence_sent.insert((instance, other.as_u8() as u64)) {
                    let msgs = own.into_iter().chain([msg.clone()]).collect();
                    out.sends.push(self.core.key.sign(instance, msg.round(), Payload::Relay { msgs }));
                }
            }
        }
    }

    /// Hands fresh messages to their instances. Remote content also re-arms
    /// dormant timers.
    fn dispatch(&mut self, now: u64, fresh: &[Msg], remote: bool, out: &mut Outbox) {
        let mut rounds: BTreeMap<InstanceId, BTreeSet<u32>> = BTreeMap::new();
        let mut decides = Vec::new();
        for m in fresh {
            if matches!(m.payload(), Payload::Relay { .. } | Payload::Pofs { .. }) {
                continue;
            }
            rounds.entry(m.instance()).or_default().insert(m.round());
            if matches!(m.payload(), Payload::Decide { .. }) {
                decides.push(m.clone());
            }
        }
        for (inst, rs) in rounds {
            match inst {
                InstanceId::Aarb(k) if self.aarb.contains_key(&k) => {
                    self.poll_aarb(now, k, out);
                    if remote {
                        let mut ctx = ctx!(self.core, now, out);
                        self.aarb.get_mut(&k).expect("known").wake(&mut ctx);
                    }
                }
                InstanceId::Aabc(k) if self.aabc.contains_key(&k) => {
                    let touched: Vec<u32> = rs.into_iter().collect();
                    self.poll_aabc(now, k, &touched, out);
                    if remote {
                        let mut ctx = ctx!(self.core, now, out);
                        self.aabc.get_mut(&k).expect("known").wake(&mut ctx);
                    }
                }
                _ => {}
            }
        }
        for m in decides {
            if let InstanceId::Aabc(k) = m.instance() {
                if self.aabc.contains_key(&k) {
                    self.on_decide(now, k, &m, out);
                }
            }
        }
    }

    /// Stores this process's own sends and lets its instances react to them,
    /// until no instance sends anything new.
    fn flush_own(&mut self, now: u64, out: &mut Outbox) {
        while self.sent_mark < out.sends.len() {
            let own: Vec<Msg> = out.sends[self.sent_mark..].to_vec();
            self.sent_mark = out.sends.len();
            for m in &own {
                if let Some(c) = m.justification() {
                    if let Some(v) = m.payload().bit() {
                        self.just_grew |= self.core.just.record(m.instance(), m.round(), v, Some(c.clone()));
                    }
                }
            }
            let mut flat = Vec::new();
            for m in &own {
                m.flatten_into(&mut flat);
            }
            let ingest = self.core.store.ingest(flat);
            debug_assert!(ingest.pofs.is_empty(), "own messages never conflict");
            self.dispatch(now, &ingest.fresh, false, out);
        }
    }

    /// Propagates instance outcomes into the reduction until nothing changes.
    fn settle(&mut self, now: u64, out: &mut Outbox) {
        match self.cfg.protocol {
            Protocol::Aabc => {
                if self.decision.is_none() {
                    if let Some(b) = self.aabc[&0].decided() {
                        self.decide(now, b.as_u8() as u64, out);
                    }
                }
            }
            Protocol::Aarb => {
                if self.decision.is_none() {
                    if let Some(v) = self.aarb[&self.cfg.source].delivered() {
                        self.decide(now, v, out);
                    }
                }
            }
            Protocol::General | Protocol::Ec => loop {
                let h = self.core.view.h() as usize;
                let mut starts: Vec<StartBinary> = Vec::new();
                for (k, rb) in &self.aarb {
                    if let Some(v) = rb.delivered() {
                        if self.gen.proposals()[*k as usize].is_none() {
                            starts.extend(self.gen.on_deliver(*k, v));
                        }
                    }
                }
                for (k, a) in &self.aabc {
                    if let Some(b) = a.decided() {
                        if self.gen.bin_decisions()[*k as usize].is_none() {
                            starts.extend(self.gen.on_binary(*k, b, h));
                        }
                    }
                }
                starts.extend(self.gen.fill_zeros(h));
                if starts.is_empty() {
                    break;
                }
                for s in starts {
                    let mut ctx = ctx!(self.core, now, out);
                    self.aabc.get_mut(&s.k).expect("known").start(&mut ctx, s.input);
                }
                self.flush_own(now, out);
            },
        }
        if matches!(self.cfg.protocol, Protocol::General | Protocol::Ec) {
            if let Some(v) = self.gen.try_decide() {
                self.decide(now, v, out);
            }
        }
    }

    fn decide(&mut self, now: u64, value: u64, out: &mut Outbox) {
        self.decision = Some(value);
        out.events.push(NodeEvent::Decide { value });
        if self.cfg.protocol == Protocol::Ec && self.cfg.ec_epochs > 0 {
            self.epoch(now, out);
        }
    }

    /// Answers the next eventual-consensus invocation with the current
    /// selection and schedules the one after.
    fn epoch(&mut self, now: u64, out: &mut Outbox) {
        let last = self.ec.outputs().last().copied();
        let Some(value) = self.gen.selected().or(last) else {
            return;
        };
        let j = self.ec.respond(value);
        out.events.push(NodeEvent::EcOutput { j, value });
        if j + 1 < self.cfg.ec_epochs {
            out.timers.push((TimerKey::Epoch, Some(now + self.cfg.ec_epoch_len)));
        }
    }
}
