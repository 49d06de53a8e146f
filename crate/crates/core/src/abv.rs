//! Accountable binary-value broadcast, one instance per consensus round.

use thiserror::Error;

use crate::context::{distinct_votes, Ctx, NodeEvent};
use crate::evidence::{certificate_valid, Certificate, Claim, ClaimKind, CommitteeView, Directory, InstanceId, MessageStore, Msg, Payload, Tag};
use crate::model::{BinSet, Bit};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AbvError {
    #[error("round {0} already has an initial broadcast")]
    DoubleBroadcast(u32),
}

/// Whether `cert` justifies broadcasting `value` in `round`.
///
/// Round 1 needs nothing, and neither does value 1 in round 2. Otherwise the
/// value must be backed by `h(d_r)` ECHO_BC messages carrying exactly
/// `{value}`, either from the previous round or, when `value` is the parity
/// of the previous round, from the round before that.
pub fn justification_valid(
    instance: InstanceId,
    round: u32,
    value: Bit,
    cert: Option<&Certificate>,
    view: &CommitteeView,
    dir: &Directory,
) -> bool {
    if round <= 1 {
        return true;
    }
    let Some(c) = cert else {
        return round == 2 && value == Bit::One;
    };
    let rounds_ok = c.claim.round + 1 == round
        || (c.claim.round + 2 == round && value == Bit::parity(round - 1));
    c.claim.kind == ClaimKind::EchoBcOnly
        && c.claim.instance == instance
        && c.claim.bit() == Some(value)
        && rounds_ok
        && certificate_valid(c, view, dir)
}

/// A delivered binary value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinEntry {
    pub cert: Option<Certificate>,
    pub bv_cert: Certificate,
}

#[derive(Clone, Debug)]
pub struct AbvInstance {
    instance: InstanceId,
    round: u32,
    initial: Option<Bit>,
    echoed: BinSet,
    readied: BinSet,
    bin_vals: [Option<BinEntry>; 2],
    /// Values in delivery order.
    order: Vec<Bit>,
}

fn bit_of(m: &Msg) -> Option<Bit> {
    m.payload().bit()
}

impl AbvInstance {
    pub fn new(instance: InstanceId, round: u32) -> Self {
        AbvInstance {
            instance,
            round,
            initial: None,
            echoed: BinSet::EMPTY,
            readied: BinSet::EMPTY,
            bin_vals: [None, None],
            order: Vec::new(),
        }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn bin_vals(&self) -> BinSet {
        BinSet::from_iter(self.order.iter().copied())
    }

    /// The first value delivered.
    pub fn first(&self) -> Option<Bit> {
        self.order.first().copied()
    }

    pub fn entry(&self, v: Bit) -> Option<&BinEntry> {
        self.bin_vals[v.idx()].as_ref()
    }

    pub fn echoed(&self) -> BinSet {
        self.echoed
    }

    pub fn readied(&self) -> BinSet {
        self.readied
    }

    /// The initial broadcast of the round: one EST carrying the estimate and
    /// its justification.
    pub fn broadcast(&mut self, ctx: &mut Ctx, value: Bit, cert: Option<Certificate>) -> Result<(), AbvError> {
        if self.initial.is_some() {
            return Err(AbvError::DoubleBroadcast(self.round));
        }
        self.initial = Some(value);
        self.echoed.insert(value);
        ctx.broadcast(self.instance, self.round, Payload::Est { value, cert });
        Ok(())
    }

    /// EST and BVECHO votes for `v`: first message per non-removed signer.
    pub fn votes<'s>(&self, store: &'s MessageStore, view: &CommitteeView, v: Bit) -> Vec<&'s Msg> {
        let est = store.bucket(self.instance, self.round, Tag::Est);
        let echo = store.bucket(self.instance, self.round, Tag::BvEcho);
        distinct_votes(est.iter().chain(echo), view, |m| bit_of(m) == Some(v))
    }

    /// Re-evaluates amplification, delivery and BVREADY handling against the
    /// store. Returns true if a value was delivered.
    pub fn poll(&mut self, ctx: &mut Ctx) -> bool {
        let mut delivered = false;
        for v in Bit::BOTH {
            let exempt = self.round == 1 || (self.round == 2 && v == Bit::One);
            let just = if exempt {
                Some(None)
            } else {
                ctx.just.get(self.instance, self.round, v).cloned()
            };
            let votes = self.votes(ctx.store, ctx.view, v);
            if votes.len() >= ctx.params.amplification(ctx.view.d_r()) && !self.echoed.contains(v) {
                if let Some(cert) = just.clone() {
                    self.echoed.insert(v);
                    ctx.broadcast(self.instance, self.round, Payload::BvEcho { value: v, cert });
                }
            }
            let h = ctx.h();
            if votes.len() >= h && !self.readied.contains(v) {
                if let Some(cert) = just.clone() {
                    let bv_cert = Certificate::new(
                        Claim::bv_echo(self.instance, self.round, v),
                        votes[..h].iter().map(|m| strip(m)),
                    );
                    self.readied.insert(v);
                    delivered |= self.deliver(ctx, v, cert.clone(), bv_cert.clone());
                    ctx.broadcast(
                        self.instance,
                        self.round,
                        Payload::BvReady { value: v, cert, bv_cert },
                    );
                }
            }
        }
        // A single valid BVREADY delivers its value. Stored BVREADYs were
        // validated on receipt.
        let readies: Vec<Msg> = ctx
            .store
            .bucket(self.instance, self.round, Tag::BvReady)
            .to_vec();
        for m in readies {
            let Payload::BvReady { value, cert, bv_cert } = m.payload() else {
                continue;
            };
            let v = *value;
            if self.bin_vals[v.idx()].is_none() {
                delivered |= self.deliver(ctx, v, cert.clone(), bv_cert.clone());
            }
            if !self.readied.contains(v) {
                self.readied.insert(v);
                ctx.broadcast(
                    self.instance,
                    self.round,
                    Payload::BvReady {
                        value: v,
                        cert: cert.clone(),
                        bv_cert: bv_cert.clone(),
                    },
                );
            }
        }
        delivered
    }

    fn deliver(&mut self, ctx: &mut Ctx, v: Bit, cert: Option<Certificate>, bv_cert: Certificate) -> bool {
        if self.bin_vals[v.idx()].is_some() {
            return false;
        }
        let InstanceId::Aabc(k) = self.instance else {
            unreachable!("ABV runs inside binary consensus")
        };
        ctx.emit(NodeEvent::Binval {
            k,
            round: self.round,
            value: v,
            cert_round: cert.as_ref().map(|c| c.claim.round),
            cert_votes: cert
                .as_ref()
                .map(|c| c.votes.iter().map(|m| m.short_id()).collect())
                .unwrap_or_default(),
        });
        self.bin_vals[v.idx()] = Some(BinEntry { cert, bv_cert });
        self.order.push(v);
        true
    }
}

/// A vote as embedded in a bv_cert: without its own justification.
fn strip(m: &Msg) -> Msg {
    if m.justification().is_some() {
        m.with_justification(None).expect("ABV vote")
    } else {
        m.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{Justifications, Outbox, Params};
    use crate::evidence::{generate_keys, MessageStore, SchemeKind, SigningKey};

    struct Harness {
        keys: Vec<SigningKey>,
        dir: Directory,
        view: CommitteeView,
        store: MessageStore,
        params: Params,
        just: Justifications,
        out: Outbox,
    }

    const INST: InstanceId = InstanceId::Aabc(0);

    impl Harness {
        fn new(n: u32, h0: u32) -> Self {
            let (keys, dir) = generate_keys(SchemeKind::KeyedTag.build(32), n, 1);
            let mut just = Justifications::default();
            for v in Bit::BOTH {
                just.record(INST, 1, v, None);
            }
            Harness {
                keys,
                dir,
                view: CommitteeView::new(n, h0),
                store: MessageStore::new(),
                params: Params {
                    n0: n,
                    h0,
                    t: 0,
                    q: 0,
                    delta: 10,
                    amp_override: None,
                },
                just,
                out: Outbox::default(),
            }
        }

        fn poll(&mut self, abv: &mut AbvInstance) -> bool {
            let mut ctx = Ctx {
                now: 0,
                key: &self.keys[0],
                view: &self.view,
                store: &self.store,
                params: &self.params,
                just: &self.just,
                out: &mut self.out,
            };
            abv.poll(&mut ctx)
        }

        fn est(&mut self, from: u32, v: Bit) {
            let m = self.keys[from as usize].sign(INST, 1, Payload::Est { value: v, cert: None });
            self.store.insert(m);
        }

        fn sent(&mut self, tag: Tag) -> Vec<Msg> {
            let (hit, rest) = std::mem::take(&mut self.out.sends)
                .into_iter()
                .partition(|m| m.tag() == tag);
            self.out.sends = rest;
            hit
        }
    }

    #[test]
    fn third_bvecho_delivers_with_three_vote_cert() {
        let mut hs = Harness::new(4, 3);
        let mut abv = AbvInstance::new(INST, 1);
        hs.est(1, Bit::One);
        hs.est(2, Bit::One);
        assert!(!hs.poll(&mut abv));
        hs.est(3, Bit::One);
        assert!(hs.poll(&mut abv));
        assert_eq!(abv.bin_vals(), BinSet::single(Bit::One));
        let ready = hs.sent(Tag::BvReady);
        assert_eq!(ready.len(), 1);
        let Payload::BvReady { bv_cert, .. } = ready[0].payload() else { panic!() };
        assert_eq!(bv_cert.votes.len(), 3);
        assert!(certificate_valid(bv_cert, &hs.view, &hs.dir));
    }

    #[test]
    fn amplification_waits_for_threshold() {
        // n=4, q=t=0: amplification threshold is 3, so two votes do nothing.
        let mut hs = Harness::new(4, 3);
        let mut abv = AbvInstance::new(INST, 1);
        hs.est(1, Bit::Zero);
        hs.est(2, Bit::Zero);
        hs.poll(&mut abv);
        assert!(hs.sent(Tag::BvEcho).is_empty());
        hs.est(3, Bit::Zero);
        hs.poll(&mut abv);
        assert_eq!(hs.sent(Tag::BvEcho).len(), 1);
    }

    #[test]
    fn duplicate_vote_does_not_count() {
        let mut hs = Harness::new(4, 3);
        let mut abv = AbvInstance::new(INST, 1);
        hs.est(1, Bit::One);
        let again = hs.keys[1].sign(INST, 1, Payload::BvEcho { value: Bit::One, cert: None });
        hs.store.insert(again);
        hs.est(2, Bit::One);
        assert!(!hs.poll(&mut abv));
    }

    #[test]
    fn single_bvready_delivers_and_relays_once() {
        let mut hs = Harness::new(4, 3);
        let votes: Vec<Msg> = (1..4)
            .map(|i| hs.keys[i].sign(INST, 1, Payload::BvEcho { value: Bit::One, cert: None }))
            .collect();
        let bv_cert = Certificate::new(Claim::bv_echo(INST, 1, Bit::One), votes);
        let ready = hs.keys[2].sign(
            INST,
            1,
            Payload::BvReady {
                value: Bit::One,
                cert: None,
                bv_cert: bv_cert.clone(),
            },
        );
        hs.store.insert(ready);
        let mut abv = AbvInstance::new(INST, 1);
        assert!(hs.poll(&mut abv));
        assert_eq!(hs.sent(Tag::BvReady).len(), 1);
        let second = hs.keys[3].sign(
            INST,
            1,
            Payload::BvReady {
                value: Bit::One,
                cert: None,
                bv_cert,
            },
        );
        hs.store.insert(second);
        assert!(!hs.poll(&mut abv));
        assert!(hs.sent(Tag::BvReady).is_empty());
        assert_eq!(abv.entry(Bit::One).unwrap().bv_cert.votes.len(), 3);
    }

    #[test]
    fn double_initial_broadcast_rejected() {
        let mut hs = Harness::new(4, 3);
        let mut abv = AbvInstance::new(INST, 1);
        let mut ctx = Ctx {
            now: 0,
            key: &hs.keys[0],
            view: &hs.view,
            store: &hs.store,
            params: &hs.params,
            just: &hs.just,
            out: &mut hs.out,
        };
        abv.broadcast(&mut ctx, Bit::Zero, None).unwrap();
        assert_eq!(
            abv.broadcast(&mut ctx, Bit::One, None),
            Err(AbvError::DoubleBroadcast(1))
        );
    }

    fn echo_cert(keys: &[SigningKey], round: u32, v: Bit, who: &[usize]) -> Certificate {
        Certificate::new(
            Claim::echo_bc_only(INST, round, v),
            who.iter()
                .map(|i| keys[*i].sign(INST, round, Payload::EchoBc { aux: BinSet::single(v) })),
        )
    }

    #[test]
    fn justification_rule() {
        let hs = Harness::new(4, 3);
        let (v, d) = (&hs.view, &hs.dir);
        assert!(justification_valid(INST, 1, Bit::Zero, None, v, d));
        assert!(justification_valid(INST, 2, Bit::One, None, v, d));
        assert!(!justification_valid(INST, 2, Bit::Zero, None, v, d));
        assert!(!justification_valid(INST, 3, Bit::One, None, v, d));
        let c2 = echo_cert(&hs.keys, 2, Bit::One, &[0, 1, 2]);
        assert!(justification_valid(INST, 3, Bit::One, Some(&c2), v, d));
        assert!(!justification_valid(INST, 3, Bit::Zero, Some(&c2), v, d));
        // Parity of round 3 is 1: a round-2 certificate for 1 also justifies
        // 1 in round 4, but a round-2 certificate for 0 does not justify 0.
        let c2z = echo_cert(&hs.keys, 2, Bit::Zero, &[0, 1, 2]);
        assert!(justification_valid(INST, 4, Bit::One, Some(&c2), v, d));
        assert!(!justification_valid(INST, 4, Bit::Zero, Some(&c2z), v, d));
        let short = echo_cert(&hs.keys, 2, Bit::One, &[0, 1]);
        assert!(!justification_valid(INST, 3, Bit::One, Some(&short), v, d));
    }
}
