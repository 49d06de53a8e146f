//! Pluggable signature schemes and per-process key handles.
//!
//! Each simulated process receives exactly one [`SigningKey`], bound to its
//! own [`ProcessId`]. There is no API that signs under another identity,
//! which is how the simulator realises unforgeability.

use std::fmt;
use std::sync::Arc;

use ed25519_dalek::{Signer as _, Verifier as _};
use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::message::{Digest, InstanceId, Msg, Payload, SignedMessage};
use crate::model::ProcessId;

/// A signature scheme over 32-byte message digests.
pub trait SignatureScheme: Send + Sync + fmt::Debug {
    fn kind(&self) -> SchemeKind;
    /// Derives a key pair from 32 bytes of seed material.
    fn keypair(&self, seed: [u8; 32]) -> (Vec<u8>, Vec<u8>);
    fn sign(&self, secret: &[u8], digest: &Digest) -> Vec<u8>;
    fn verify(&self, public: &[u8], digest: &Digest, signature: &[u8]) -> bool;
    /// Signature length in bytes (λ).
    fn signature_len(&self) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// HMAC-SHA256 tags, truncated to λ bytes. Fast; verification needs the
    /// shared key, which only the simulator's directory holds.
    #[default]
    KeyedTag,
    /// Ed25519.
    Ed25519,
}

impl SchemeKind {
    pub fn build(self, lambda: usize) -> Arc<dyn SignatureScheme> {
        match self {
            SchemeKind::KeyedTag => Arc::new(KeyedTag::new(lambda)),
            SchemeKind::Ed25519 => Arc::new(Ed25519),
        }
    }
}

/// Deterministic keyed-tag scheme used for fast exhaustive runs.
#[derive(Clone, Debug)]
pub struct KeyedTag {
    len: usize,
}

impl KeyedTag {
    /// `len` is clamped to `8..=32`.
    pub fn new(len: usize) -> Self {
        KeyedTag {
            len: len.clamp(8, 32),
        }
    }

    fn tag(&self, key: &[u8], digest: &Digest) -> Vec<u8> {
        let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(digest);
        let full = mac.finalize().into_bytes();
        full[..self.len].to_vec()
    }
}

impl SignatureScheme for KeyedTag {
    fn kind(&self) -> SchemeKind {
        SchemeKind::KeyedTag
    }

    fn keypair(&self, seed: [u8; 32]) -> (Vec<u8>, Vec<u8>) {
        (seed.to_vec(), seed.to_vec())
    }

    fn sign(&self, secret: &[u8], digest: &Digest) -> Vec<u8> {
        self.tag(secret, digest)
    }

    fn verify(&self, public: &[u8], digest: &Digest, signature: &[u8]) -> bool {
        signature.len() == self.len && self.tag(public, digest) == signature
    }

    fn signature_len(&self) -> usize {
        self.len
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Ed25519;

impl SignatureScheme for Ed25519 {
    fn kind(&self) -> SchemeKind {
        SchemeKind::Ed25519
    }

    fn keypair(&self, seed: [u8; 32]) -> (Vec<u8>, Vec<u8>) {
        let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
        (seed.to_vec(), sk.verifying_key().to_bytes().to_vec())
    }

    fn sign(&self, secret: &[u8], digest: &Digest) -> Vec<u8> {
        let bytes: [u8; 32] = secret.try_into().expect("ed25519 secret is 32 bytes");
        let sk = ed25519_dalek::SigningKey::from_bytes(&bytes);
        sk.sign(digest).to_bytes().to_vec()
    }

    fn verify(&self, public: &[u8], digest: &Digest, signature: &[u8]) -> bool {
        let Ok(pk_bytes) = <[u8; 32]>::try_from(public) else {
            return false;
        };
        let Ok(pk) = ed25519_dalek::VerifyingKey::from_bytes(&pk_bytes) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        pk.verify(digest, &sig).is_ok()
    }

    fn signature_len(&self) -> usize {
        ed25519_dalek::SIGNATURE_LENGTH
    }
}

/// The private signing capability of exactly one process.
#[derive(Clone)]
pub struct SigningKey {
    id: ProcessId,
    scheme: Arc<dyn SignatureScheme>,
    secret: Vec<u8>,
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey").field("id", &self.id).finish()
    }
}

impl SigningKey {
    pub fn id(&self) -> ProcessId {
        self.id
    }

    /// Signs `payload` as this process. The signer field is always the key's
    /// own identity.
    pub fn sign(&self, instance: InstanceId, round: u32, payload: Payload) -> Msg {
        let digest = SignedMessage::compute_digest(self.id, instance, round, &payload);
        let signature = self.scheme.sign(&self.secret, &digest);
        Arc::new(SignedMessage::from_parts(
            self.id, instance, round, payload, signature,
        ))
    }
}

/// Public keys of the whole initial committee.
#[derive(Clone, Debug)]
pub struct Directory {
    scheme: Arc<dyn SignatureScheme>,
    publics: Vec<Vec<u8>>,
}

impl Directory {
    pub fn n(&self) -> usize {
        self.publics.len()
    }

    pub fn scheme(&self) -> &Arc<dyn SignatureScheme> {
        &self.scheme
    }

    pub fn signature_len(&self) -> usize {
        self.scheme.signature_len()
    }

    /// Checks the outer signature only.
    pub fn verify(&self, msg: &SignedMessage) -> bool {
        let Some(pk) = self.publics.get(msg.signer().index()) else {
            return false;
        };
        // The digest is recomputed by every constructor, so it always matches
        // the fields.
        self.scheme.verify(pk, msg.digest(), msg.signature())
    }

    /// Checks the outer signature and every embedded one.
    pub fn verify_deep(&self, msg: &SignedMessage) -> bool {
        self.verify(msg) && msg.payload().children().all(|c| self.verify_deep(c))
    }
}

/// Derives one key per process from a 64-bit seed.
pub fn generate_keys(
    scheme: Arc<dyn SignatureScheme>,
    n: u32,
    seed: u64,
) -> (Vec<SigningKey>, Directory) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6b65_7973_6565_6421);
    let mut keys = Vec::with_capacity(n as usize);
    let mut publics = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut material = [0u8; 32];
        rng.fill_bytes(&mut material);
        let (secret, public) = scheme.keypair(material);
        keys.push(SigningKey {
            id: ProcessId(i),
            scheme: scheme.clone(),
            secret,
        });
        publics.push(public);
    }
    (keys, Directory { scheme, publics })
}
