//! Shared fixtures for the benchmarks.

use std::path::{Path, PathBuf};

use aacons_core::evidence::{generate_keys, Certificate, Claim, InstanceId, Msg, Payload, SchemeKind, SigningKey};
use aacons_core::evidence::Directory;
use aacons_core::simnet::{load, Resolved};

pub fn scenario(name: &str) -> Resolved {
    let dir: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    load(&dir.join(format!("{name}.json"))).expect("corpus scenario loads")
}

pub fn keys(scheme: SchemeKind, n: u32) -> (Vec<SigningKey>, Directory) {
    generate_keys(scheme.build(32), n, 1)
}

/// A READY_RB carrying an `h`-vote echo certificate, the largest message
/// shape in reliable broadcast.
pub fn ready_with_cert(keys: &[SigningKey], h: usize) -> Msg {
    let inst = InstanceId::Aarb(0);
    let votes = keys[..h].iter().map(|k| k.sign(inst, 0, Payload::EchoRb { value: 7 }));
    let cert = Certificate::new(Claim::rb_echo(inst, 7), votes);
    keys[0].sign(inst, 0, Payload::ReadyRb { value: 7, cert })
}
