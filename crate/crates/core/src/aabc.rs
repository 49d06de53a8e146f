//! Actively accountable binary consensus: two-phase rounds with a rotating
//! coordinator, the parity decision rule, and timer-driven evidence relays.

use std::collections::BTreeMap;

use crate::abv::AbvInstance;
use crate::context::{distinct_votes, Ctx, NodeEvent, TimerKey};
use crate::evidence::{Certificate, Claim, InstanceId, Msg, Payload, Tag};
use crate::model::{coordinator, BinSet, Bit, Phase};

/// Values returned by the second phase. `echoes` are the distinct ECHO_BC
/// messages of the round in arrival order.
///
/// If `h` of them carry exactly `aux`, that is the answer. Otherwise the
/// union of the first `h` whose aux sets lie inside `bin_vals`, or the empty
/// set if there are fewer than `h` such messages.
pub fn comp_vals(echoes: &[&Msg], h: usize, bin_vals: BinSet, aux: BinSet) -> BinSet {
    let aux_of = |m: &Msg| match m.payload() {
        Payload::EchoBc { aux } => Some(*aux),
        _ => None,
    };
    if echoes.iter().filter(|m| aux_of(m) == Some(aux)).count() >= h {
        return aux;
    }
    let inside: Vec<BinSet> = echoes
        .iter()
        .filter_map(|m| aux_of(m))
        .filter(|a| a.is_subset(bin_vals))
        .take(h)
        .collect();
    if inside.len() < h {
        return BinSet::EMPTY;
    }
    inside.into_iter().fold(BinSet::EMPTY, BinSet::union)
}

/// Outcome of a DECIDE handed to an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecideOutcome {
    Decided(Bit),
    /// Already decided `local`; the certificate proves `other`.
    Contradicts { local: Bit, other: Bit },
    Nothing,
}

/// What a poll changed, for recheck reporting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    pub delivered: bool,
    pub phases: usize,
}

#[derive(Debug)]
struct RoundState {
    abv: AbvInstance,
    coord_sent: bool,
    aux: Option<BinSet>,
}

#[derive(Debug)]
pub struct AabcInstance {
    k: u32,
    instance: InstanceId,
    input: Option<Bit>,
    round: u32,
    phase: Phase,
    est: Bit,
    est_cert: Option<Certificate>,
    rounds: BTreeMap<u32, RoundState>,
    decided: Option<(Bit, u32)>,
    own_decide: Option<Msg>,
    halted: bool,
    /// The current phase's timer has expired at least once.
    expired: bool,
    armed: bool,
    /// (round, phase, scope size) of the last relay.
    last_relay: Option<(u32, Phase, usize)>,
}

impl AabcInstance {
    pub fn new(k: u32) -> Self {
        AabcInstance {
            k,
            instance: InstanceId::Aabc(k),
            input: None,
            round: 0,
            phase: Phase::Phase1,
            est: Bit::Zero,
            est_cert: None,
            rounds: BTreeMap::new(),
            decided: None,
            own_decide: None,
            halted: false,
            expired: false,
            armed: false,
            last_relay: None,
        }
    }

    pub fn started(&self) -> bool {
        self.input.is_some()
    }

    pub fn input(&self) -> Option<Bit> {
        self.input
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn decided(&self) -> Option<Bit> {
        self.decided.map(|(v, _)| v)
    }

    pub fn decided_round(&self) -> Option<u32> {
        self.decided.map(|(_, r)| r)
    }

    pub fn own_decide(&self) -> Option<&Msg> {
        self.own_decide.as_ref()
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    /// Has an armed timer.
    pub fn armed(&self) -> bool {
        self.armed
    }

    pub fn bin_vals(&self, round: u32) -> BinSet {
        self.rounds
            .get(&round)
            .map(|s| s.abv.bin_vals())
            .unwrap_or(BinSet::EMPTY)
    }

    fn key(&self) -> TimerKey {
        TimerKey::Aabc(self.k)
    }

    pub fn start(&mut self, ctx: &mut Ctx, input: Bit) -> Progress {
        if self.started() {
            return Progress::default();
        }
        self.input = Some(input);
        self.est = input;
        ctx.emit(NodeEvent::AabcStart { k: self.k, input });
        self.start_round(ctx, 1);
        self.poll(ctx, &[])
    }

    fn start_round(&mut self, ctx: &mut Ctx, r: u32) {
        self.round = r;
        self.phase = Phase::Phase1;
        self.expired = false;
        ctx.emit(NodeEvent::Round { k: self.k, round: r });
        let state = self.rounds.entry(r).or_insert_with(|| RoundState {
            abv: AbvInstance::new(self.instance, r),
            coord_sent: false,
            aux: None,
        });
        state
            .abv
            .broadcast(ctx, self.est, self.est_cert.clone())
            .expect("one initial broadcast per round");
        self.arm(ctx);
    }

    fn arm(&mut self, ctx: &mut Ctx) {
        self.armed = true;
        ctx.arm(self.key());
    }

    /// Re-evaluates ABV rounds in `touched` and the current round, then
    /// advances through every phase whose wait condition holds.
    pub fn poll(&mut self, ctx: &mut Ctx, touched: &[u32]) -> Progress {
        let mut progress = Progress::default();
        if !self.started() {
            return progress;
        }
        for r in touched {
            if *r != self.round {
                if let Some(s) = self.rounds.get_mut(r) {
                    progress.delivered |= s.abv.poll(ctx);
                }
            }
        }
        loop {
            let r = self.round;
            let me = ctx.me();
            let s = self.rounds.get_mut(&r).expect("current round exists");
            progress.delivered |= s.abv.poll(ctx);
            if !s.coord_sent && me == coordinator(r, ctx.params.n0) {
                if let Some(w) = s.abv.first() {
                    s.coord_sent = true;
                    ctx.broadcast(self.instance, r, Payload::Coord { value: w });
                }
            }
            if self.halted || !self.expired {
                break;
            }
            match self.phase {
                Phase::Phase1 => {
                    let bin_vals = s.abv.bin_vals();
                    if bin_vals.is_empty() {
                        break;
                    }
                    let coord = coordinator(r, ctx.params.n0);
                    let w = ctx
                        .store
                        .bucket(self.instance, r, Tag::Coord)
                        .iter()
                        .filter(|m| m.signer() == coord)
                        .filter_map(|m| m.payload().bit())
                        .find(|w| bin_vals.contains(*w));
                    let aux = w.map(BinSet::single).unwrap_or(bin_vals);
                    s.aux = Some(aux);
                    ctx.broadcast(self.instance, r, Payload::EchoBc { aux });
                    self.phase = Phase::Phase2;
                    self.expired = false;
                    self.arm(ctx);
                    progress.phases += 1;
                    break;
                }
                Phase::Phase2 | Phase::Decision => {
                    let echoes = self.echoes(ctx, r);
                    let s = &self.rounds[&r];
                    let vals = comp_vals(&echoes, ctx.h(), s.abv.bin_vals(), s.aux.expect("aux set in phase 2"));
                    if vals.is_empty() {
                        break;
                    }
                    progress.phases += 1;
                    self.phase = Phase::Decision;
                    self.decision_step(ctx, vals);
                    if self.halted {
                        break;
                    }
                }
            }
        }
        progress
    }

    fn echoes<'s>(&self, ctx: &Ctx<'s>, r: u32) -> Vec<&'s Msg> {
        distinct_votes(
            ctx.store.bucket(self.instance, r, Tag::EchoBc),
            ctx.view,
            |_| true,
        )
    }

    /// `h(d_r)` ECHO_BC messages of round `r` carrying exactly `{v}`.
    fn echo_cert(&self, ctx: &Ctx, r: u32, v: Bit) -> Certificate {
        let only = BinSet::single(v);
        let votes: Vec<Msg> = self
            .echoes(ctx, r)
            .into_iter()
            .filter(|m| matches!(m.payload(), Payload::EchoBc { aux } if *aux == only))
            .take(ctx.h())
            .cloned()
            .collect();
        Certificate::new(Claim::echo_bc_only(self.instance, r, v), votes)
    }

    fn decision_step(&mut self, ctx: &mut Ctx, vals: BinSet) {
        let r = self.round;
        let parity = Bit::parity(r);
        match vals.as_single() {
            Some(v) => {
                self.est = v;
                if v == parity && self.decided.is_none() {
                    let cert = self.echo_cert(ctx, r, v);
                    self.decide(ctx, v, r, cert);
                }
            }
            None => self.est = parity,
        }
        self.est_cert = if self.est == parity {
            if r == 1 {
                None
            } else {
                self.rounds[&r]
                    .abv
                    .entry(self.est)
                    .expect("parity value delivered")
                    .cert
                    .clone()
            }
        } else {
            Some(self.echo_cert(ctx, r, self.est))
        };
        match self.decided {
            Some((_, rd)) if r > rd => self.halt(ctx),
            _ => self.start_round(ctx, r + 1),
        }
    }

    fn halt(&mut self, ctx: &mut Ctx) {
        self.halted = true;
        if self.armed {
            self.armed = false;
            ctx.disarm(self.key());
        }
    }

    fn decide(&mut self, ctx: &mut Ctx, v: Bit, r: u32, cert: Certificate) {
        self.decided = Some((v, r));
        ctx.emit(NodeEvent::AabcDecide {
            k: self.k,
            value: v,
            round: r,
        });
        if self.own_decide.is_none() {
            self.own_decide = Some(ctx.broadcast(self.instance, r, Payload::Decide { value: v, cert }));
        }
        if self.round > r + 1 {
            self.halt(ctx);
        }
    }

    /// Handles a validated DECIDE. An undecided instance decides and
    /// broadcasts its own DECIDE carrying the same certificate.
    pub fn on_decide(&mut self, ctx: &mut Ctx, msg: &Msg) -> DecideOutcome {
        let Payload::Decide { value, cert } = msg.payload() else {
            return DecideOutcome::Nothing;
        };
        match self.decided {
            None => {
                self.decide(ctx, *value, msg.round(), cert.clone());
                DecideOutcome::Decided(*value)
            }
            Some((local, _)) if local != *value => DecideOutcome::Contradicts {
                local,
                other: *value,
            },
            Some(_) => DecideOutcome::Nothing,
        }
    }

    /// Timer expiry. Marks the phase wait satisfied; if the phase still
    /// cannot complete, relays what this instance holds for the phase and
    /// later rounds, unless that set has not grown since the last relay.
    pub fn on_timer(&mut self, ctx: &mut Ctx) -> Progress {
        self.armed = false;
        if self.halted || !self.started() {
            return Progress::default();
        }
        self.expired = true;
        let before = (self.round, self.phase);
        let progress = self.poll(ctx, &[]);
        if (self.round, self.phase) != before || self.halted {
            return progress;
        }
        let scope = match self.phase {
            Phase::Phase1 => ctx.store.phase_scope(self.instance, self.round, |_| true),
            Phase::Phase2 | Phase::Decision => ctx
                .store
                .phase_scope(self.instance, self.round, |t| matches!(t, Tag::EchoBc | Tag::Decide)),
        };
        let mark = (self.round, self.phase, scope.len());
        if scope.is_empty() || self.last_relay == Some(mark) {
            return progress;
        }
        self.last_relay = Some(mark);
        let msgs = scope.iter().map(|m| attach(ctx, m)).collect();
        ctx.broadcast(self.instance, self.round, Payload::Relay { msgs });
        self.arm(ctx);
        progress
    }

    /// New content for this instance re-arms a dormant timer.
    pub fn wake(&mut self, ctx: &mut Ctx) {
        if self.started() && !self.halted && !self.armed {
            self.arm(ctx);
        }
    }

    /// Committee update: the current phase's timer restarts.
    pub fn reset_timer(&mut self, ctx: &mut Ctx) {
        if self.started() && !self.halted {
            self.arm(ctx);
        }
    }
}

/// A stored ABV vote with the justification this process knows for it.
pub(crate) fn attach(ctx: &Ctx, m: &Msg) -> Msg {
    if !matches!(m.tag(), Tag::Est | Tag::BvEcho) || m.justification().is_some() {
        return m.clone();
    }
    let Some(v) = m.payload().bit() else {
        return m.clone();
    };
    match ctx.just.get(m.instance(), m.round(), v) {
        Some(Some(c)) => m.with_justification(Some(c.clone())).unwrap_or_else(|| m.clone()),
        _ => m.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{generate_keys, SchemeKind, SigningKey};
    use proptest::prelude::*;

    fn echoes(keys: &[SigningKey], sets: &[BinSet]) -> Vec<Msg> {
        sets.iter()
            .enumerate()
            .map(|(i, a)| keys[i].sign(InstanceId::Aabc(0), 1, Payload::EchoBc { aux: *a }))
            .collect()
    }

    const Z: BinSet = BinSet::EMPTY;

    fn one(b: Bit) -> BinSet {
        BinSet::single(b)
    }

    #[test]
    fn comp_vals_examples() {
        let (keys, _) = generate_keys(SchemeKind::KeyedTag.build(32), 4, 0);
        let m = echoes(&keys, &[one(Bit::One); 3]);
        let refs: Vec<&Msg> = m.iter().collect();
        assert_eq!(comp_vals(&refs, 3, BinSet::BOTH, one(Bit::One)), one(Bit::One));

        let m = echoes(&keys, &[one(Bit::Zero), one(Bit::One), one(Bit::One)]);
        let refs: Vec<&Msg> = m.iter().collect();
        assert_eq!(comp_vals(&refs, 3, BinSet::BOTH, one(Bit::One)), BinSet::BOTH);

        assert_eq!(comp_vals(&refs[..2], 3, BinSet::BOTH, one(Bit::One)), Z);
    }

    /// Exhaustive reference: some `h`-subset of the echoes either all equal
    /// `aux`, or all lie inside `bin_vals`.
    fn oracle(sets: &[BinSet], h: usize, bin_vals: BinSet, aux: BinSet) -> Vec<BinSet> {
        let n = sets.len();
        let mut answers = Vec::new();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != h {
                continue;
            }
            let pick: Vec<BinSet> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| sets[i]).collect();
            if pick.iter().all(|a| *a == aux) {
                return vec![aux];
            }
            if pick.iter().all(|a| a.is_subset(bin_vals)) {
                answers.push(pick.iter().fold(Z, |x, y| x.union(*y)));
            }
        }
        answers
    }

    fn set_strategy() -> impl Strategy<Value = BinSet> {
        (1u8..=3).prop_map(|b| BinSet::from_bits(b).unwrap())
    }

    proptest! {
        #[test]
        fn comp_vals_matches_exhaustive_oracle(
            sets in proptest::collection::vec(set_strategy(), 0..7),
            h in 1usize..5,
            bin_vals in set_strategy(),
            aux in set_strategy(),
        ) {
            let (keys, _) = generate_keys(SchemeKind::KeyedTag.build(8), 7, 0);
            let m = echoes(&keys, &sets);
            let refs: Vec<&Msg> = m.iter().collect();
            let got = comp_vals(&refs, h, bin_vals, aux);
            let want = oracle(&sets, h, bin_vals, aux);
            if want.is_empty() {
                prop_assert_eq!(got, Z);
            } else {
                prop_assert!(want.contains(&got), "got {} want one of {:?}", got, want);
            }
        }
    }
}
