//! Signed messages, certificates, conflict detection and proofs of fraud.

pub mod certificate;
pub mod codec;
pub mod committee;
pub mod crypto;
pub mod message;
pub mod pof;
pub mod store;

pub use certificate::{certificate_valid, Certificate, Claim, ClaimKind};
pub use codec::{decode, encode, CodecError};
pub use committee::CommitteeView;
pub use crypto::{generate_keys, Directory, SchemeKind, SignatureScheme, SigningKey};
pub use message::{Digest, InstanceId, Msg, Payload, SignedMessage, Tag};
pub use pof::{conflicts, verify_pofs, ProofOfFraud};
pub use store::{Ingest, MessageStore};
