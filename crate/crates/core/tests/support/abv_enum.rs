//! Exhaustive exploration of one ABV broadcast at n = 4, h0 = 3.
//!
//! Every ABV rule (echo at the amplification threshold, deliver at `h`,
//! deliver on a BVREADY) is monotone in the set of messages a process holds,
//! so a process's state after a set of deliveries does not depend on their
//! order. The exploration relies on that and checks it as it goes:
//!
//! * [`explore_local`] walks every delivery order of one process's incoming
//!   messages, memoizing states by delivered set and asserting that every
//!   order reaching a set produces the same outputs. Safety properties are
//!   checked at each state.
//! * [`explore_terminal`] enumerates every choice the adversary makes about
//!   which of its optional messages reach whom, and computes the terminal
//!   state for each choice as a fixpoint. Liveness properties are checked
//!   there.
//!
//! Faulty behaviours: a Byzantine process may deliver any subset of
//! `EST`/`BVECHO` for either value, with certificates where they exist; a
//! deceitful process runs the protocol but sends a flipped `EST` to chosen
//! recipients; a benign process crashes after sending its `EST` to chosen
//! recipients.

use std::collections::{BTreeMap, HashMap, HashSet};

use aacons_core::abv::{justification_valid, AbvInstance};
use aacons_core::context::{Ctx, Justifications, Outbox, Params};
use aacons_core::evidence::{
    certificate_valid, generate_keys, Certificate, Claim, CommitteeView, Digest, Directory, InstanceId, MessageStore, Msg,
    Payload, SchemeKind, SigningKey, Tag,
};
use aacons_core::{BinSet, Bit};

pub const N: u32 = 4;
pub const H0: u32 = 3;
const INST: InstanceId = InstanceId::Aabc(0);

#[derive(Clone, Debug)]
pub enum Role {
    Correct(Bit),
    Byzantine,
    Deceitful { input: Bit, flip_to: Vec<u32> },
    Benign { input: Bit, est_to: Vec<u32> },
}

impl Role {
    fn input(&self) -> Option<Bit> {
        match self {
            Role::Correct(b) | Role::Deceitful { input: b, .. } | Role::Benign { input: b, .. } => Some(*b),
            Role::Byzantine => None,
        }
    }

    fn runs(&self) -> bool {
        matches!(self, Role::Correct(_) | Role::Deceitful { .. })
    }
}

#[derive(Clone, Debug)]
pub struct Setup {
    pub round: u32,
    pub roles: Vec<Role>,
}

/// Counts of what an exploration covered and what it found.
#[derive(Clone, Debug, Default)]
pub struct Tally {
    pub states: usize,
    pub transitions: usize,
    pub terminals: usize,
    pub violations: Vec<String>,
}

impl Tally {
    pub fn absorb(&mut self, o: Tally) {
        self.states += o.states;
        self.transitions += o.transitions;
        self.terminals += o.terminals;
        self.violations.extend(o.violations);
    }
}

struct Env {
    keys: Vec<SigningKey>,
    dir: Directory,
    view: CommitteeView,
    params: Params,
    setup: Setup,
    /// Prior-round certificates for each value, where one exists.
    certs: [Option<Certificate>; 2],
}

#[derive(Clone)]
struct Proc {
    id: u32,
    abv: AbvInstance,
    view: CommitteeView,
    store: MessageStore,
    parked: Vec<Msg>,
    just: Justifications,
    sends: Vec<Msg>,
}

/// Identity of a message up to certificate contents: a correct process
/// sends at most one message per (tag, value).
type Logical = (u32, Tag, Bit);

fn logical(m: &Msg) -> Logical {
    (m.signer().0, m.tag(), m.payload().bit().expect("ABV message"))
}

impl Env {
    fn new(setup: Setup) -> Env {
        let (keys, dir) = generate_keys(SchemeKind::KeyedTag.build(32), N, 7);
        // Assumed bounds, not actual counts: q + t <= n - h0 = 1 leaves one
        // slot, given to benign faults when the run has one.
        let benign = setup.roles.iter().any(|r| matches!(r, Role::Benign { .. }));
        let (t, q) = if benign { (0, 1) } else { (1, 0) };
        let params = Params {
            n0: N,
            h0: H0,
            t,
            q,
            delta: 10,
            amp_override: None,
        };
        let mut env = Env {
            keys,
            dir,
            view: CommitteeView::new(N, H0),
            params,
            setup,
            certs: [None, None],
        };
        if env.setup.round > 1 {
            // Round-3 certificates: {1} from round 2 and {0} from round 1
            // (allowed because 0 is the parity of round 2), signed by
            // processes 0..3 so no signer equivocates within a round.
            let r = env.setup.round;
            for (v, cr) in [(Bit::One, r - 1), (Bit::Zero, r - 2)] {
                let votes = (0..H0).map(|i| {
                    env.keys[i as usize].sign(INST, cr, Payload::EchoBc { aux: BinSet::single(v) })
                });
                env.certs[v.idx()] = Some(Certificate::new(Claim::echo_bc_only(INST, cr, v), votes));
            }
        }
        env
    }

    fn cert(&self, v: Bit) -> Option<Certificate> {
        if self.setup.round == 1 {
            None
        } else {
            self.certs[v.idx()].clone()
        }
    }

    fn exempt(&self, v: Bit) -> bool {
        self.setup.round == 1 || (self.setup.round == 2 && v == Bit::One)
    }

    /// `None` parks a bare message until a justification for its value
    /// arrives.
    fn justified(&self, p: &mut Proc, v: Bit, cert: Option<&Certificate>) -> Option<bool> {
        if self.exempt(v) {
            return Some(true);
        }
        match cert {
            Some(c) => {
                let ok = justification_valid(INST, self.setup.round, v, Some(c), &p.view, &self.dir);
                if ok {
                    p.just.record(INST, self.setup.round, v, Some(c.clone()));
                }
                Some(ok)
            }
            None => matches!(p.just.get(INST, self.setup.round, v), Some(Some(_))).then_some(true),
        }
    }

    fn classify(&self, p: &mut Proc, x: &Msg) -> Option<bool> {
        match x.payload() {
            Payload::Est { value, cert } | Payload::BvEcho { value, cert } => {
                if x.round() != self.setup.round {
                    return Some(false);
                }
                self.justified(p, *value, cert.as_ref())
            }
            Payload::BvReady { value, cert, bv_cert } => {
                if bv_cert.claim != Claim::bv_echo(INST, self.setup.round, *value)
                    || !certificate_valid(bv_cert, &p.view, &self.dir)
                {
                    return Some(false);
                }
                self.justified(p, *value, cert.as_ref())
            }
            _ => Some(true),
        }
    }

    fn accept(&self, p: &mut Proc, x: Msg) {
        // A deceitful process ignores proof of its own equivocation.
        let mut pofs = p.store.check_conflicts([x]);
        pofs.retain(|f| f.culprit.0 != p.id);
        p.view.apply_pofs(&pofs);
    }

    /// Admission as a process applies it: parents first, each embedded
    /// message judged on its own, parked ones retried afterwards.
    fn admit(&self, p: &mut Proc, m: &Msg) {
        let mut flat = Vec::new();
        m.flatten_into(&mut flat);
        for x in flat {
            if p.store.contains(&x) {
                continue;
            }
            match self.classify(p, &x) {
                Some(true) => self.accept(p, x),
                Some(false) => {}
                None => p.parked.push(x),
            }
        }
        self.unpark(p);
    }

    fn unpark(&self, p: &mut Proc) {
        loop {
            let parked = std::mem::take(&mut p.parked);
            let before = parked.len();
            for x in parked {
                match self.classify(p, &x) {
                    Some(true) => self.accept(p, x),
                    Some(false) => {}
                    None => p.parked.push(x),
                }
            }
            if p.parked.len() == before {
                return;
            }
        }
    }

    /// Polls until the process sends nothing new, feeding its own sends back
    /// into its store.
    fn settle(&self, p: &mut Proc) {
        loop {
            let mut out = Outbox::default();
            {
                let mut ctx = Ctx {
                    now: 0,
                    key: &self.keys[p.id as usize],
                    view: &p.view,
                    store: &p.store,
                    params: &self.params,
                    just: &p.just,
                    out: &mut out,
                };
                p.abv.poll(&mut ctx);
            }
            if out.sends.is_empty() {
                return;
            }
            for m in out.sends {
                self.own(p, m);
            }
        }
    }

    fn own(&self, p: &mut Proc, m: Msg) {
        if let (Some(c), Some(v)) = (m.justification(), m.payload().bit()) {
            p.just.record(INST, self.setup.round, v, Some(c.clone()));
        }
        let mut flat = Vec::new();
        m.flatten_into(&mut flat);
        for x in flat {
            p.store.insert(x);
        }
        p.sends.push(m);
        self.unpark(p);
    }

    fn start(&self, id: u32) -> Proc {
        let input = self.setup.roles[id as usize].input().expect("running process has an input");
        let mut p = Proc {
            id,
            abv: AbvInstance::new(INST, self.setup.round),
            view: self.view.clone(),
            store: MessageStore::new(),
            parked: Vec::new(),
            just: Justifications::default(),
            sends: Vec::new(),
        };
        let mut out = Outbox::default();
        {
            let mut ctx = Ctx {
                now: 0,
                key: &self.keys[id as usize],
                view: &p.view,
                store: &p.store,
                params: &self.params,
                just: &p.just,
                out: &mut out,
            };
            p.abv.broadcast(&mut ctx, input, self.cert(input)).expect("first broadcast");
        }
        for m in out.sends {
            self.own(&mut p, m);
        }
        self.settle(&mut p);
        p
    }

    fn deliver(&self, p: &mut Proc, m: &Msg) {
        self.admit(p, m);
        self.settle(p);
    }

    /// What a running process `from` has put on the wire for `to`.
    fn wire(&self, from: &Proc, to: u32) -> Vec<Msg> {
        let flip_to = match &self.setup.roles[from.id as usize] {
            Role::Deceitful { flip_to, .. } => flip_to.as_slice(),
            _ => &[],
        };
        from.sends
            .iter()
            .map(|m| match m.payload() {
                Payload::Est { value, .. } if flip_to.contains(&to) => {
                    let v = value.flip();
                    self.keys[from.id as usize].sign(INST, self.setup.round, Payload::Est { value: v, cert: self.cert(v) })
                }
                _ => m.clone(),
            })
            .collect()
    }

    /// Messages a crashed benign process left on the wire for `to`.
    fn benign_wire(&self, id: u32, to: u32) -> Vec<Msg> {
        match &self.setup.roles[id as usize] {
            Role::Benign { input, est_to } if est_to.contains(&to) => {
                vec![self.keys[id as usize].sign(INST, self.setup.round, Payload::Est { value: *input, cert: self.cert(*input) })]
            }
            _ => Vec::new(),
        }
    }

    /// Everything a Byzantine process can offer: both values, as estimate
    /// and as echo, justified where a certificate exists and bare otherwise.
    fn byzantine_pool(&self, id: u32) -> Vec<Msg> {
        let k = &self.keys[id as usize];
        let r = self.setup.round;
        Bit::BOTH
            .into_iter()
            .flat_map(|v| {
                let cert = self.cert(v);
                [
                    k.sign(INST, r, Payload::Est { value: v, cert: cert.clone() }),
                    k.sign(INST, r, Payload::BvEcho { value: v, cert }),
                ]
            })
            .collect()
    }

    fn correct(&self) -> Vec<u32> {
        (0..N).filter(|i| matches!(self.setup.roles[*i as usize], Role::Correct(_))).collect()
    }

    fn byzantine(&self) -> Vec<u32> {
        (0..N).filter(|i| matches!(self.setup.roles[*i as usize], Role::Byzantine)).collect()
    }

    /// Terminal state: every mandatory message delivered everywhere, plus
    /// `extra[p]` Byzantine messages at each running process `p`.
    fn fixpoint(&self, extra: &BTreeMap<u32, Vec<Msg>>) -> BTreeMap<u32, Proc> {
        let mut procs: BTreeMap<u32, Proc> = (0..N)
            .filter(|i| self.setup.roles[*i as usize].runs())
            .map(|i| (i, self.start(i)))
            .collect();
        let ids: Vec<u32> = procs.keys().copied().collect();
        for &p in &ids {
            let mut fixed: Vec<Msg> = (0..N).filter(|s| *s != p).flat_map(|s| self.benign_wire(s, p)).collect();
            fixed.extend(extra.get(&p).cloned().unwrap_or_default());
            let proc = procs.get_mut(&p).unwrap();
            for m in &fixed {
                self.deliver(proc, m);
            }
        }
        // Besides direct sends, non-faulty processes forward what they hold,
        // as the enclosing consensus does on every phase timer. This is what
        // exposes an equivocating process to everyone.
        let correct = self.correct();
        let mut offered: BTreeMap<u32, HashSet<Digest>> = BTreeMap::new();
        loop {
            let mut changed = false;
            for &p in &ids {
                let mut incoming: Vec<Msg> = ids
                    .iter()
                    .filter(|s| **s != p)
                    .flat_map(|s| self.wire(&procs[s], p))
                    .collect();
                for c in correct.iter().filter(|c| **c != p) {
                    incoming.extend(procs[c].store.bucket(INST, self.setup.round, Tag::Est).iter().cloned());
                    incoming.extend(procs[c].store.bucket(INST, self.setup.round, Tag::BvEcho).iter().cloned());
                    incoming.extend(procs[c].store.bucket(INST, self.setup.round, Tag::BvReady).iter().cloned());
                }
                // Nobody needs its own messages forwarded back; a deceitful
                // process would otherwise convict itself.
                incoming.retain(|m| m.signer().0 != p);
                let seen = offered.entry(p).or_default();
                let proc = procs.get_mut(&p).unwrap();
                for m in incoming {
                    if seen.insert(*m.digest()) {
                        self.deliver(proc, &m);
                        changed = true;
                    }
                }
            }
            if !changed {
                return procs;
            }
        }
    }

    fn safety(&self, p: &Proc, where_: &str, out: &mut Vec<String>) {
        // A benign process that got its estimate out broadcast it honestly
        // before crashing, so it counts as a source.
        let broadcasters = |v: Bit| {
            self.setup.roles.iter().any(|r| match r {
                Role::Correct(b) => *b == v,
                Role::Benign { input, est_to } => *input == v && !est_to.is_empty(),
                _ => false,
            })
        };
        for v in p.abv.bin_vals().iter() {
            if !broadcasters(v) {
                out.push(format!("justification: p{} delivered {v} {where_}", p.id));
            }
            if self.setup.round > 1 {
                let entry = p.abv.entry(v).expect("delivered value has an entry");
                let ok = justification_valid(INST, self.setup.round, v, entry.cert.as_ref(), &p.view, &self.dir);
                if !ok || entry.cert.is_none() {
                    out.push(format!("accountability: p{} holds {v} without a certificate {where_}", p.id));
                }
            }
        }
    }

    fn liveness(&self, procs: &BTreeMap<u32, Proc>, where_: &str, out: &mut Vec<String>) {
        let correct = self.correct();
        let amp = self.params.amplification(0);
        let mut union = BinSet::EMPTY;
        for c in &correct {
            let b = procs[c].abv.bin_vals();
            if b.is_empty() {
                out.push(format!("termination: p{c} delivered nothing {where_}"));
            }
            union = union.union(b);
        }
        for c in &correct {
            if procs[c].abv.bin_vals() != union {
                out.push(format!("uniformity: p{c} has {} of {union} {where_}", procs[c].abv.bin_vals()));
            }
        }
        for v in Bit::BOTH {
            let backers = correct
                .iter()
                .filter(|c| self.setup.roles[**c as usize].input() == Some(v))
                .count();
            if backers >= amp && correct.iter().any(|c| !procs[c].abv.bin_vals().contains(v)) {
                out.push(format!("obligation: {backers} non-faulty broadcast {v} but not all delivered it {where_}"));
            }
        }
    }
}

fn describe(setup: &Setup) -> String {
    format!("[round {} roles {:?}]", setup.round, setup.roles)
}

/// Every adversary choice of optional Byzantine deliveries, each run to its
/// terminal state.
pub fn explore_terminal(setup: &Setup) -> Tally {
    let env = Env::new(setup.clone());
    let where_ = describe(setup);
    let mut tally = Tally::default();
    // One slot per (Byzantine message, recipient).
    let mut slots: Vec<(u32, Msg)> = Vec::new();
    for b in env.byzantine() {
        for m in env.byzantine_pool(b) {
            for to in (0..N).filter(|i| env.setup.roles[*i as usize].runs()) {
                slots.push((to, m.clone()));
            }
        }
    }
    assert!(slots.len() <= 20, "too many optional deliveries to enumerate");
    for mask in 0u32..(1 << slots.len()) {
        let mut extra: BTreeMap<u32, Vec<Msg>> = BTreeMap::new();
        for (i, (to, m)) in slots.iter().enumerate() {
            if mask & (1 << i) != 0 {
                extra.entry(*to).or_default().push(m.clone());
            }
        }
        let procs = env.fixpoint(&extra);
        tally.terminals += 1;
        for c in env.correct() {
            env.safety(&procs[&c], &where_, &mut tally.violations);
        }
        env.liveness(&procs, &where_, &mut tally.violations);
    }
    tally
}

/// Outputs of a local state, compared across delivery orders.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Summary {
    bin_vals: BinSet,
    sends: Vec<Logical>,
}

fn summary(p: &Proc) -> Summary {
    let mut sends: Vec<Logical> = p.sends.iter().map(logical).collect();
    sends.sort();
    Summary {
        bin_vals: p.abv.bin_vals(),
        sends,
    }
}

/// Every delivery order of each non-faulty process's incoming messages,
/// where the incoming set is everything that could ever reach it.
pub fn explore_local(setup: &Setup) -> Tally {
    let env = Env::new(setup.clone());
    let where_ = describe(setup);
    let mut tally = Tally::default();
    // Maximal terminal state: every Byzantine message delivered everywhere.
    let everything: BTreeMap<u32, Vec<Msg>> = (0..N)
        .filter(|i| env.setup.roles[*i as usize].runs())
        .map(|to| (to, env.byzantine().into_iter().flat_map(|b| env.byzantine_pool(b)).collect()))
        .collect();
    let max = env.fixpoint(&everything);
    for c in env.correct() {
        let mut incoming: Vec<Msg> = Vec::new();
        for s in (0..N).filter(|s| *s != c) {
            match &env.setup.roles[s as usize] {
                Role::Byzantine => incoming.extend(env.byzantine_pool(s)),
                Role::Benign { .. } => incoming.extend(env.benign_wire(s, c)),
                Role::Deceitful { .. } => {
                    // The unflipped estimate can still arrive by forwarding.
                    incoming.extend(env.wire(&max[&s], c));
                    incoming.extend(max[&s].sends.iter().filter(|m| m.tag() == Tag::Est).cloned());
                }
                Role::Correct(_) => incoming.extend(env.wire(&max[&s], c)),
            }
        }
        let mut uniq = HashSet::new();
        incoming.retain(|m| uniq.insert(*m.digest()));
        assert!(incoming.len() <= 24, "incoming set too large to enumerate");
        let root = env.start(c);
        let mut memo: HashMap<u32, Summary> = HashMap::new();
        memo.insert(0, summary(&root));
        env.safety(&root, &where_, &mut tally.violations);
        let mut stack = vec![(0u32, root)];
        while let Some((mask, state)) = stack.pop() {
            for (i, m) in incoming.iter().enumerate() {
                let bit = 1u32 << i;
                if mask & bit != 0 {
                    continue;
                }
                let mut next = state.clone();
                env.deliver(&mut next, m);
                tally.transitions += 1;
                let key = mask | bit;
                let s = summary(&next);
                match memo.get(&key) {
                    Some(prev) => {
                        if *prev != s {
                            tally.violations.push(format!(
                                "order dependence at p{c}: {prev:?} vs {s:?} {where_}"
                            ));
                        }
                    }
                    None => {
                        memo.insert(key, s);
                        env.safety(&next, &where_, &mut tally.violations);
                        stack.push((key, next));
                    }
                }
            }
        }
        tally.states += memo.len();
    }
    tally
}

fn subsets(of: &[u32]) -> Vec<Vec<u32>> {
    (0u32..(1 << of.len()))
        .map(|m| of.iter().enumerate().filter(|(i, _)| m & (1 << i) != 0).map(|(_, x)| *x).collect())
        .collect()
}

fn inputs(k: usize) -> Vec<Vec<Bit>> {
    (0u32..(1 << k))
        .map(|m| (0..k).map(|i| Bit::from_bool(m & (1 << i) != 0)).collect())
        .collect()
}

/// Every configuration with at most two faulty processes that the bounds
/// for n = 4, h0 = 3 admit, in rounds 1 and 3. Faulty processes take the
/// highest indices; ABV treats indices symmetrically.
pub fn configurations() -> Vec<Setup> {
    let mut out = Vec::new();
    let others = |me: u32| -> Vec<u32> { (0..N).filter(|i| *i != me).collect() };
    for round in [1u32, 3] {
        for ins in inputs(4) {
            out.push(Setup {
                round,
                roles: ins.iter().map(|b| Role::Correct(*b)).collect(),
            });
        }
        for ins in inputs(3) {
            let mut roles: Vec<Role> = ins.iter().map(|b| Role::Correct(*b)).collect();
            roles.push(Role::Byzantine);
            out.push(Setup { round, roles });
        }
        for ins in inputs(4) {
            for est_to in subsets(&others(3)) {
                let mut roles: Vec<Role> = ins[..3].iter().map(|b| Role::Correct(*b)).collect();
                roles.push(Role::Benign { input: ins[3], est_to });
                out.push(Setup { round, roles });
            }
            for flip_to in subsets(&others(3)) {
                let mut roles: Vec<Role> = ins[..3].iter().map(|b| Role::Correct(*b)).collect();
                roles.push(Role::Deceitful { input: ins[3], flip_to });
                out.push(Setup { round, roles });
            }
        }
        // d = 1 and q = 1 together: deceitful at 2, benign at 3.
        for ins in inputs(4) {
            for flip_to in subsets(&others(2)) {
                for est_to in subsets(&others(3)) {
                    let mut roles: Vec<Role> = ins[..2].iter().map(|b| Role::Correct(*b)).collect();
                    roles.push(Role::Deceitful {
                        input: ins[2],
                        flip_to: flip_to.clone(),
                    });
                    roles.push(Role::Benign { input: ins[3], est_to });
                    out.push(Setup { round, roles });
                }
            }
        }
    }
    out
}

/// Runs both explorations over `setups`.
pub fn explore_all(setups: &[Setup], local: bool) -> Tally {
    let mut tally = Tally::default();
    for s in setups {
        tally.absorb(explore_terminal(s));
        if local {
            tally.absorb(explore_local(s));
        }
    }
    tally
}
