//! Threshold-relative certificates.

use std::collections::BTreeSet;

use sha2::{Digest as _, Sha256};

use super::committee::CommitteeView;
use super::crypto::Directory;
use super::message::{InstanceId, Msg, Payload, Tag};
use crate::model::{BinSet, Bit, ProcessId};

/// What kind of votes a certificate gathers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClaimKind {
    /// `ECHO_RB(value)` of a reliable-broadcast instance.
    RbEcho = 1,
    /// `EST(value)` or `BVECHO(value)` of one binary-consensus round.
    BvEcho = 2,
    /// `ECHO_BC` whose aux set is exactly `{value}`.
    EchoBcOnly = 3,
}

impl ClaimKind {
    pub(crate) fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(ClaimKind::RbEcho),
            2 => Some(ClaimKind::BvEcho),
            3 => Some(ClaimKind::EchoBcOnly),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Claim {
    pub kind: ClaimKind,
    pub instance: InstanceId,
    pub round: u32,
    pub value: u64,
}

impl Claim {
    pub fn rb_echo(instance: InstanceId, value: u64) -> Self {
        Claim {
            kind: ClaimKind::RbEcho,
            instance,
            round: 0,
            value,
        }
    }

    pub fn bv_echo(instance: InstanceId, round: u32, value: Bit) -> Self {
        Claim {
            kind: ClaimKind::BvEcho,
            instance,
            round,
            value: value.as_u8() as u64,
        }
    }

    pub fn echo_bc_only(instance: InstanceId, round: u32, value: Bit) -> Self {
        Claim {
            kind: ClaimKind::EchoBcOnly,
            instance,
            round,
            value: value.as_u8() as u64,
        }
    }

    pub fn bit(&self) -> Option<Bit> {
        Bit::try_from(u8::try_from(self.value).ok()?).ok()
    }

    /// Whether a signed message is a vote for this claim.
    pub fn supported_by(&self, m: &Msg) -> bool {
        if m.instance() != self.instance {
            return false;
        }
        match self.kind {
            ClaimKind::RbEcho => {
                matches!(m.payload(), Payload::EchoRb { value } if *value == self.value)
            }
            ClaimKind::BvEcho => {
                m.round() == self.round
                    && matches!(m.tag(), Tag::Est | Tag::BvEcho)
                    && m.payload().bit().map(|b| b.as_u8() as u64) == Some(self.value)
            }
            ClaimKind::EchoBcOnly => {
                m.round() == self.round
                    && match (m.payload(), self.bit()) {
                        (Payload::EchoBc { aux }, Some(b)) => *aux == BinSet::single(b),
                        _ => false,
                    }
            }
        }
    }
}

/// A set of signed votes from distinct processes justifying a claim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub claim: Claim,
    pub votes: Vec<Msg>,
}

impl Certificate {
    /// Builds a certificate, keeping the first vote of each signer.
    pub fn new(claim: Claim, votes: impl IntoIterator<Item = Msg>) -> Self {
        let mut seen = BTreeSet::new();
        let votes = votes
            .into_iter()
            .filter(|v| seen.insert(v.signer()))
            .collect();
        Certificate { claim, votes }
    }

    pub fn signers(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.votes.iter().map(|v| v.signer())
    }

    /// Distinct signers whose votes support the claim and who are not removed
    /// in `view`.
    pub fn usable_votes(&self, view: &CommitteeView) -> usize {
        self.votes
            .iter()
            .filter(|v| self.claim.supported_by(v) && !view.is_removed(v.signer()))
            .map(|v| v.signer())
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub(crate) fn digest_into(&self, h: &mut Sha256) {
        h.update([self.claim.kind as u8, self.claim.instance.kind_byte()]);
        h.update(self.claim.instance.index().to_be_bytes());
        h.update(self.claim.round.to_be_bytes());
        h.update(self.claim.value.to_be_bytes());
        h.update((self.votes.len() as u32).to_be_bytes());
        for v in &self.votes {
            h.update(v.digest());
        }
    }
}

/// True iff every vote verifies and supports the claim, and the distinct
/// non-removed supporters reach the current threshold `h(d_r)`.
pub fn certificate_valid(cert: &Certificate, view: &CommitteeView, dir: &Directory) -> bool {
    cert.votes
        .iter()
        .all(|v| cert.claim.supported_by(v) && dir.verify_deep(v))
        && cert.usable_votes(view) >= view.h() as usize
}
