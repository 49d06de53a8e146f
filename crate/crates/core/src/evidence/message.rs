//! Signed protocol messages.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::certificate::Certificate;
use super::pof::ProofOfFraud;
use crate::model::{BinSet, Bit, ProcessId};

pub type Digest = [u8; 32];

/// Shared handle to an immutable signed message.
pub type Msg = Arc<SignedMessage>;

/// Bytes of the fixed per-message header on the wire: signer (4), tag (1),
/// instance kind (1), instance index (4), round (4).
pub const HEADER_LEN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tag {
    Init = 1,
    EchoRb = 2,
    ReadyRb = 3,
    Est = 4,
    BvEcho = 5,
    BvReady = 6,
    Coord = 7,
    EchoBc = 8,
    Decide = 9,
    Pofs = 10,
    Relay = 11,
}

impl Tag {
    pub const ALL: [Tag; 11] = [
        Tag::Init,
        Tag::EchoRb,
        Tag::ReadyRb,
        Tag::Est,
        Tag::BvEcho,
        Tag::BvReady,
        Tag::Coord,
        Tag::EchoBc,
        Tag::Decide,
        Tag::Pofs,
        Tag::Relay,
    ];

    pub fn from_u8(v: u8) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| *t as u8 == v)
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::Init => "INIT",
            Tag::EchoRb => "ECHO_RB",
            Tag::ReadyRb => "READY_RB",
            Tag::Est => "EST",
            Tag::BvEcho => "BVECHO",
            Tag::BvReady => "BVREADY",
            Tag::Coord => "COORD",
            Tag::EchoBc => "ECHO_BC",
            Tag::Decide => "DECIDE",
            Tag::Pofs => "POFS",
            Tag::Relay => "RELAY",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which protocol instance a message belongs to. `k` is the proposer index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceId {
    Global,
    Aarb(u32),
    Aabc(u32),
}

impl InstanceId {
    pub(crate) fn kind_byte(self) -> u8 {
        match self {
            InstanceId::Global => 0,
            InstanceId::Aarb(_) => 1,
            InstanceId::Aabc(_) => 2,
        }
    }

    pub(crate) fn index(self) -> u32 {
        match self {
            InstanceId::Global => 0,
            InstanceId::Aarb(k) | InstanceId::Aabc(k) => k,
        }
    }

    pub(crate) fn from_parts(kind: u8, index: u32) -> Option<Self> {
        match kind {
            0 if index == 0 => Some(InstanceId::Global),
            1 => Some(InstanceId::Aarb(index)),
            2 => Some(InstanceId::Aabc(index)),
            _ => None,
        }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceId::Global => f.write_str("global"),
            InstanceId::Aarb(k) => write!(f, "aarb{k}"),
            InstanceId::Aabc(k) => write!(f, "aabc{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Init { value: u64 },
    EchoRb { value: u64 },
    ReadyRb { value: u64, cert: Certificate },
    /// The initial ABV-broadcast of a round.
    Est { value: Bit, cert: Option<Certificate> },
    /// An amplification re-broadcast.
    BvEcho { value: Bit, cert: Option<Certificate> },
    BvReady {
        value: Bit,
        cert: Option<Certificate>,
        bv_cert: Certificate,
    },
    Coord { value: Bit },
    EchoBc { aux: BinSet },
    Decide { value: Bit, cert: Certificate },
    Pofs { pofs: Vec<ProofOfFraud> },
    Relay { msgs: Vec<Msg> },
}

impl Payload {
    pub fn tag(&self) -> Tag {
        match self {
            Payload::Init { .. } => Tag::Init,
            Payload::EchoRb { .. } => Tag::EchoRb,
            Payload::ReadyRb { .. } => Tag::ReadyRb,
            Payload::Est { .. } => Tag::Est,
            Payload::BvEcho { .. } => Tag::BvEcho,
            Payload::BvReady { .. } => Tag::BvReady,
            Payload::Coord { .. } => Tag::Coord,
            Payload::EchoBc { .. } => Tag::EchoBc,
            Payload::Decide { .. } => Tag::Decide,
            Payload::Pofs { .. } => Tag::Pofs,
            Payload::Relay { .. } => Tag::Relay,
        }
    }

    /// Certificates carried directly by this payload.
    pub fn certificates(&self) -> impl Iterator<Item = &Certificate> {
        let (a, b) = match self {
            Payload::ReadyRb { cert, .. } | Payload::Decide { cert, .. } => (Some(cert), None),
            Payload::Est { cert, .. } | Payload::BvEcho { cert, .. } => (cert.as_ref(), None),
            Payload::BvReady { cert, bv_cert, .. } => (cert.as_ref(), Some(bv_cert)),
            _ => (None, None),
        };
        a.into_iter().chain(b)
    }

    /// Every signed message embedded one level down: certificate votes,
    /// relayed messages, and both halves of each proof of fraud.
    pub fn children(&self) -> Box<dyn Iterator<Item = &Msg> + '_> {
        match self {
            Payload::Relay { msgs } => Box::new(msgs.iter()),
            Payload::Pofs { pofs } => Box::new(pofs.iter().flat_map(|p| [&p.msg_a, &p.msg_b])),
            _ => Box::new(self.certificates().flat_map(|c| c.votes.iter())),
        }
    }

    /// The binary value of an ABV, coordinator or decision payload.
    pub fn bit(&self) -> Option<Bit> {
        match self {
            Payload::Est { value, .. }
            | Payload::BvEcho { value, .. }
            | Payload::BvReady { value, .. }
            | Payload::Coord { value }
            | Payload::Decide { value, .. } => Some(*value),
            _ => None,
        }
    }

    /// The proposal value of a reliable-broadcast payload.
    pub fn rb_value(&self) -> Option<u64> {
        match self {
            Payload::Init { value } | Payload::EchoRb { value } | Payload::ReadyRb { value, .. } => {
                Some(*value)
            }
            _ => None,
        }
    }

    fn digest_into(&self, h: &mut Sha256) {
        h.update([self.tag() as u8]);
        match self {
            Payload::Init { value } | Payload::EchoRb { value } => h.update(value.to_be_bytes()),
            Payload::ReadyRb { value, cert } => {
                h.update(value.to_be_bytes());
                cert.digest_into(h);
            }
            // The justification of an ABV value travels with the message but
            // is not signed: any valid justification will do, and leaving it
            // out lets votes be embedded in a bv_cert without their own.
            Payload::Est { value, .. } | Payload::BvEcho { value, .. } => {
                h.update([value.as_u8()]);
            }
            Payload::BvReady { value, bv_cert, .. } => {
                h.update([value.as_u8()]);
                bv_cert.digest_into(h);
            }
            Payload::Coord { value } => h.update([value.as_u8()]),
            Payload::EchoBc { aux } => h.update([aux.bits()]),
            Payload::Decide { value, cert } => {
                h.update([value.as_u8()]);
                cert.digest_into(h);
            }
            Payload::Pofs { pofs } => {
                h.update((pofs.len() as u32).to_be_bytes());
                for p in pofs {
                    h.update(p.culprit.0.to_be_bytes());
                    h.update(p.msg_a.digest());
                    h.update(p.msg_b.digest());
                }
            }
            Payload::Relay { msgs } => {
                h.update((msgs.len() as u32).to_be_bytes());
                for m in msgs {
                    h.update(m.digest());
                }
            }
        }
    }
}

/// A protocol message bound to its signer.
///
/// The signature covers a SHA-256 digest of the canonical fields, in which
/// embedded messages are represented by their own digests. Derived values
/// (digest, signature count, wire length) are computed once at construction;
/// the fields are private so they cannot drift.
#[derive(Clone, PartialEq, Eq)]
pub struct SignedMessage {
    signer: ProcessId,
    instance: InstanceId,
    round: u32,
    payload: Payload,
    signature: Vec<u8>,
    digest: Digest,
    sig_count: u32,
    wire_len: u32,
}

impl fmt::Debug for SignedMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({} {} r{} {:?})",
            self.tag(),
            self.signer,
            self.instance,
            self.round,
            self.payload
        )
    }
}

impl SignedMessage {
    pub fn from_parts(
        signer: ProcessId,
        instance: InstanceId,
        round: u32,
        payload: Payload,
        signature: Vec<u8>,
    ) -> Self {
        let digest = Self::compute_digest(signer, instance, round, &payload);
        let sig_count = 1 + payload.children().map(|c| c.sig_count).sum::<u32>();
        let wire_len = (HEADER_LEN
            + super::codec::payload_wire_len(&payload)
            + 2
            + signature.len()) as u32;
        SignedMessage {
            signer,
            instance,
            round,
            payload,
            signature,
            digest,
            sig_count,
            wire_len,
        }
    }

    pub fn compute_digest(
        signer: ProcessId,
        instance: InstanceId,
        round: u32,
        payload: &Payload,
    ) -> Digest {
        let mut h = Sha256::new();
        h.update(b"aacons/msg/v1");
        h.update(signer.0.to_be_bytes());
        h.update([instance.kind_byte()]);
        h.update(instance.index().to_be_bytes());
        h.update(round.to_be_bytes());
        payload.digest_into(&mut h);
        h.finalize().into()
    }

    pub fn signer(&self) -> ProcessId {
        self.signer
    }
    pub fn tag(&self) -> Tag {
        self.payload.tag()
    }
    pub fn instance(&self) -> InstanceId {
        self.instance
    }
    pub fn round(&self) -> u32 {
        self.round
    }
    pub fn payload(&self) -> &Payload {
        &self.payload
    }
    pub fn signature(&self) -> &[u8] {
        &self.signature
    }
    pub fn digest(&self) -> &Digest {
        &self.digest
    }
    /// Signatures carried, including every embedded one.
    pub fn sig_count(&self) -> u32 {
        self.sig_count
    }
    /// Length of the canonical wire encoding in bytes.
    pub fn wire_len(&self) -> u32 {
        self.wire_len
    }

    /// The same signed message carrying a different ABV justification.
    /// `None` for payloads without one.
    pub fn with_justification(&self, cert: Option<Certificate>) -> Option<Msg> {
        let payload = match &self.payload {
            Payload::Est { value, .. } => Payload::Est { value: *value, cert },
            Payload::BvEcho { value, .. } => Payload::BvEcho { value: *value, cert },
            Payload::BvReady { value, bv_cert, .. } => Payload::BvReady {
                value: *value,
                cert,
                bv_cert: bv_cert.clone(),
            },
            _ => return None,
        };
        Some(Arc::new(SignedMessage::from_parts(
            self.signer,
            self.instance,
            self.round,
            payload,
            self.signature.clone(),
        )))
    }

    /// The ABV justification carried by EST, BVECHO and BVREADY.
    pub fn justification(&self) -> Option<&Certificate> {
        match &self.payload {
            Payload::Est { cert, .. } | Payload::BvEcho { cert, .. } | Payload::BvReady { cert, .. } => {
                cert.as_ref()
            }
            _ => None,
        }
    }

    /// Short hex id for logs and traces.
    pub fn short_id(&self) -> String {
        hex::encode(&self.digest[..8])
    }

    /// Depth-first walk over this message and everything embedded in it.
    pub fn flatten_into(self: &Arc<Self>, out: &mut Vec<Msg>) {
        out.push(self.clone());
        for c in self.payload.children() {
            c.flatten_into(out);
        }
    }
}
