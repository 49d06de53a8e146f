//! Conflicting messages and proofs of fraud.

use super::crypto::Directory;
use super::message::{InstanceId, Msg, Payload};
use crate::model::ProcessId;

/// Whether two signed messages from one signer cannot both come from a
/// correct execution.
///
/// Conflict table, all rows requiring the same signer and instance:
///
/// | tag      | also same | differs in       |
/// |----------|-----------|------------------|
/// | INIT     |           | value            |
/// | ECHO_RB  |           | value            |
/// | READY_RB |           | value            |
/// | ECHO_BC  | round     | aux set          |
/// | EST      | round     | estimate         |
/// | COORD    | round     | value            |
/// | DECIDE   |           | decided value    |
///
/// BVECHO and BVREADY never conflict: a correct process may support both
/// binary values. RELAY and POFS wrappers never conflict. Pairs with
/// different tags never conflict.
pub fn conflicts(a: &Msg, b: &Msg) -> bool {
    if a.signer() != b.signer() || a.instance() != b.instance() || a.digest() == b.digest() {
        return false;
    }
    use Payload::*;
    match (a.payload(), b.payload()) {
        (Init { value: x }, Init { value: y })
        | (EchoRb { value: x }, EchoRb { value: y })
        | (ReadyRb { value: x, .. }, ReadyRb { value: y, .. }) => {
            matches!(a.instance(), InstanceId::Aarb(_)) && x != y
        }
        (EchoBc { aux: x }, EchoBc { aux: y }) => a.round() == b.round() && x != y,
        (Est { value: x, .. }, Est { value: y, .. }) | (Coord { value: x }, Coord { value: y }) => {
            a.round() == b.round() && x != y
        }
        (Decide { value: x, .. }, Decide { value: y, .. }) => x != y,
        _ => false,
    }
}

/// A transferable pair of conflicting messages signed by `culprit`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProofOfFraud {
    pub culprit: ProcessId,
    pub msg_a: Msg,
    pub msg_b: Msg,
}

impl ProofOfFraud {
    /// Builds a proof if the two messages conflict.
    pub fn new(msg_a: Msg, msg_b: Msg) -> Option<Self> {
        conflicts(&msg_a, &msg_b).then(|| ProofOfFraud {
            culprit: msg_a.signer(),
            msg_a,
            msg_b,
        })
    }

    /// Order-independent identity of the proof.
    pub fn key(&self) -> (ProcessId, [u8; 32], [u8; 32]) {
        let (x, y) = (*self.msg_a.digest(), *self.msg_b.digest());
        if x <= y {
            (self.culprit, x, y)
        } else {
            (self.culprit, y, x)
        }
    }

    /// Checkable by any third party holding only the public directory.
    pub fn verify(&self, dir: &Directory) -> bool {
        self.msg_a.signer() == self.culprit
            && self.msg_b.signer() == self.culprit
            && dir.verify_deep(&self.msg_a)
            && dir.verify_deep(&self.msg_b)
            && conflicts(&self.msg_a, &self.msg_b)
    }
}

/// True iff every proof in the list verifies.
pub fn verify_pofs(pofs: &[ProofOfFraud], dir: &Directory) -> bool {
    pofs.iter().all(|p| p.verify(dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::crypto::{generate_keys, SchemeKind, SigningKey};
    use crate::evidence::SignedMessage;
    use crate::model::{BinSet, Bit};
    use std::sync::Arc;

    fn keys() -> (Vec<SigningKey>, Directory) {
        generate_keys(SchemeKind::KeyedTag.build(32), 6, 11)
    }

    #[test]
    fn echo_rb_values_differ() {
        let (k, _) = keys();
        let a = k[1].sign(InstanceId::Aarb(0), 0, Payload::EchoRb { value: 3 });
        let b = k[1].sign(InstanceId::Aarb(0), 0, Payload::EchoRb { value: 4 });
        assert!(conflicts(&a, &b));
        assert!(conflicts(&b, &a));
        assert!(!conflicts(&a, &a));
    }

    #[test]
    fn different_signers_never_conflict() {
        let (k, _) = keys();
        let a = k[1].sign(InstanceId::Aarb(0), 0, Payload::EchoRb { value: 3 });
        let b = k[2].sign(InstanceId::Aarb(0), 0, Payload::EchoRb { value: 4 });
        assert!(!conflicts(&a, &b));
    }

    #[test]
    fn bvecho_plurality_is_not_a_conflict() {
        let (k, _) = keys();
        let a = k[1].sign(
            InstanceId::Aabc(0),
            1,
            Payload::BvEcho {
                value: Bit::Zero,
                cert: None,
            },
        );
        let b = k[1].sign(
            InstanceId::Aabc(0),
            1,
            Payload::BvEcho {
                value: Bit::One,
                cert: None,
            },
        );
        assert!(!conflicts(&a, &b));
        // EST vs BVECHO of the other value: cross-tag, not a conflict.
        let e = k[1].sign(
            InstanceId::Aabc(0),
            1,
            Payload::Est {
                value: Bit::Zero,
                cert: None,
            },
        );
        assert!(!conflicts(&e, &b));
    }

    #[test]
    fn echo_bc_needs_same_round() {
        let (k, _) = keys();
        let a = k[2].sign(
            InstanceId::Aabc(3),
            1,
            Payload::EchoBc {
                aux: BinSet::single(Bit::Zero),
            },
        );
        let b = k[2].sign(
            InstanceId::Aabc(3),
            1,
            Payload::EchoBc {
                aux: BinSet::single(Bit::One),
            },
        );
        let c = k[2].sign(
            InstanceId::Aabc(3),
            2,
            Payload::EchoBc {
                aux: BinSet::single(Bit::One),
            },
        );
        assert!(conflicts(&a, &b));
        assert!(!conflicts(&a, &c));
    }

    #[test]
    fn verify_round_trip_and_forgery() {
        let (k, dir) = keys();
        let a = k[4].sign(InstanceId::Aarb(4), 0, Payload::Init { value: 7 });
        let b = k[4].sign(InstanceId::Aarb(4), 0, Payload::Init { value: 9 });
        let pof = ProofOfFraud::new(a.clone(), b.clone()).unwrap();
        assert!(verify_pofs(&[pof], &dir));

        // Forge msg_b by re-labelling someone else's signature.
        let other = k[3].sign(InstanceId::Aarb(4), 0, Payload::Init { value: 9 });
        let forged_b = Arc::new(SignedMessage::from_parts(
            ProcessId(4),
            other.instance(),
            other.round(),
            other.payload().clone(),
            other.signature().to_vec(),
        ));
        let bad = ProofOfFraud {
            culprit: ProcessId(4),
            msg_a: a,
            msg_b: forged_b,
        };
        assert!(!verify_pofs(&[bad], &dir));
    }

    #[test]
    fn different_instances_do_not_form_a_proof() {
        let (k, dir) = keys();
        let a = k[4].sign(InstanceId::Aarb(4), 0, Payload::Init { value: 7 });
        let b = k[4].sign(InstanceId::Aarb(5), 0, Payload::Init { value: 9 });
        assert!(ProofOfFraud::new(a.clone(), b.clone()).is_none());
        let hand_made = ProofOfFraud {
            culprit: ProcessId(4),
            msg_a: a,
            msg_b: b,
        };
        assert!(!verify_pofs(&[hand_made], &dir));
    }
}
