//! Actively accountable consensus in the Byzantine/deceitful/benign fault
//! model, with a deterministic discrete-event simulator to exercise it.

pub mod aabc;
pub mod aarb;
pub mod check;
pub mod abv;
pub mod context;
pub mod evidence;
pub mod model;
pub mod node;
pub mod reduction;
pub mod simnet;
pub mod sweep;

pub use evidence::{
    Certificate, CommitteeView, Directory, InstanceId, Msg, Payload, ProofOfFraud, SignedMessage,
    SigningKey, Tag,
};
pub use model::{BinSet, Bit, FaultConfig, ProcessId, Verdict};
