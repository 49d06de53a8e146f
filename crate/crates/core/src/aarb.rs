//! Actively accountable reliable broadcast, one instance per source.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::context::{distinct_votes, Ctx, NodeEvent, TimerKey};
use crate::evidence::{Certificate, Claim, InstanceId, Msg, Payload, Tag};
use crate::model::ProcessId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AarbError {
    #[error("{0} is not the source of this instance")]
    NotSource(ProcessId),
    #[error("this instance was already broadcast")]
    DoubleBroadcast,
}

/// A valid READY_RB for a value other than the one delivered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RbDisagreement {
    pub local: u64,
    pub other: u64,
    pub ready: Msg,
}

#[derive(Debug, Default)]
pub struct RbProgress {
    pub delivered: Option<u64>,
    pub disagreements: Vec<RbDisagreement>,
}

#[derive(Debug)]
pub struct AarbInstance {
    source: ProcessId,
    instance: InstanceId,
    sent_init: bool,
    echoed: bool,
    /// Our own READY_RB, once sent.
    ready: Option<Msg>,
    delivered: Option<u64>,
    reported: BTreeSet<u64>,
    armed: bool,
    last_relay: Option<usize>,
}

impl AarbInstance {
    pub fn new(source: ProcessId) -> Self {
        AarbInstance {
            source,
            instance: InstanceId::Aarb(source.0),
            sent_init: false,
            echoed: false,
            ready: None,
            delivered: None,
            reported: BTreeSet::new(),
            armed: false,
            last_relay: None,
        }
    }

    pub fn source(&self) -> ProcessId {
        self.source
    }

    pub fn delivered(&self) -> Option<u64> {
        self.delivered
    }

    pub fn own_ready(&self) -> Option<&Msg> {
        self.ready.as_ref()
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    fn key(&self) -> TimerKey {
        TimerKey::Aarb(self.source.0)
    }

    /// Arms the evidence timer. Every process does this when the protocol
    /// starts, whether or not it is the source.
    pub fn start(&mut self, ctx: &mut Ctx) {
        self.armed = true;
        ctx.arm(self.key());
    }

    pub fn broadcast(&mut self, ctx: &mut Ctx, value: u64) -> Result<(), AarbError> {
        if ctx.me() != self.source {
            return Err(AarbError::NotSource(ctx.me()));
        }
        if self.sent_init {
            return Err(AarbError::DoubleBroadcast);
        }
        self.sent_init = true;
        ctx.broadcast(self.instance, 0, Payload::Init { value });
        Ok(())
    }

    pub fn poll(&mut self, ctx: &mut Ctx) -> RbProgress {
        let mut progress = RbProgress::default();
        if !self.echoed {
            let init = ctx
                .store
                .bucket(self.instance, 0, Tag::Init)
                .iter()
                .find(|m| m.signer() == self.source)
                .and_then(|m| m.payload().rb_value());
            if let Some(v) = init {
                self.echoed = true;
                ctx.broadcast(self.instance, 0, Payload::EchoRb { value: v });
            }
        }
        if self.ready.is_none() {
            let echoes = ctx.store.bucket(self.instance, 0, Tag::EchoRb);
            let mut by_value: BTreeMap<u64, Vec<&Msg>> = BTreeMap::new();
            let mut order = Vec::new();
            for m in echoes {
                let v = m.payload().rb_value().expect("echo carries a value");
                if !by_value.contains_key(&v) {
                    order.push(v);
                }
                by_value.entry(v).or_default().push(m);
            }
            for v in order {
                let votes = distinct_votes(by_value[&v].iter().copied(), ctx.view, |_| true);
                if votes.len() >= ctx.h() {
                    let cert = Certificate::new(
                        Claim::rb_echo(self.instance, v),
                        votes[..ctx.h()].iter().map(|m| (*m).clone()),
                    );
                    self.send_ready(ctx, v, cert, &mut progress);
                    break;
                }
            }
        }
        // Stored READY_RBs were validated on receipt.
        let readies: Vec<Msg> = ctx.store.bucket(self.instance, 0, Tag::ReadyRb).to_vec();
        for m in readies {
            let Payload::ReadyRb { value, cert } = m.payload() else {
                continue;
            };
            if self.ready.is_none() {
                self.send_ready(ctx, *value, cert.clone(), &mut progress);
            }
            let local = self.delivered.expect("delivered after READY");
            if *value != local && self.reported.insert(*value) {
                progress.disagreements.push(RbDisagreement {
                    local,
                    other: *value,
                    ready: m.clone(),
                });
            }
        }
        progress
    }

    fn send_ready(&mut self, ctx: &mut Ctx, v: u64, cert: Certificate, progress: &mut RbProgress) {
        let m = ctx.broadcast(self.instance, 0, Payload::ReadyRb { value: v, cert });
        self.ready = Some(m);
        self.delivered = Some(v);
        progress.delivered = Some(v);
        ctx.emit(NodeEvent::AarbDeliver {
            k: self.source.0,
            value: v,
        });
        if self.armed {
            self.armed = false;
            ctx.disarm(self.key());
        }
    }

    /// Timer expiry: relay the instance's INIT and ECHO_RB messages unless
    /// delivered or nothing new arrived since the last relay.
    pub fn on_timer(&mut self, ctx: &mut Ctx) {
        self.armed = false;
        if self.delivered.is_some() {
            return;
        }
        let scope = ctx
            .store
            .phase_scope(self.instance, 0, |t| matches!(t, Tag::Init | Tag::EchoRb));
        if scope.is_empty() || self.last_relay == Some(scope.len()) {
            return;
        }
        self.last_relay = Some(scope.len());
        ctx.broadcast(self.instance, 0, Payload::Relay { msgs: scope });
        self.armed = true;
        ctx.arm(self.key());
    }

    pub fn wake(&mut self, ctx: &mut Ctx) {
        if self.delivered.is_none() && !self.armed {
            self.armed = true;
            ctx.arm(self.key());
        }
    }

    pub fn reset_timer(&mut self, ctx: &mut Ctx) {
        if self.delivered.is_none() {
            self.armed = true;
            ctx.arm(self.key());
        }
    }
}
