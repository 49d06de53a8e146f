//! Message and bit counters per protocol layer.

use serde::{Deserialize, Serialize};

use crate::evidence::{InstanceId, Msg};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub messages: u64,
    /// Signatures carried times `lambda` bytes, in bits.
    pub sig_bits: u64,
    /// Full encoded size, in bits.
    pub wire_bits: u64,
}

impl Counter {
    fn add(&mut self, m: &Msg, lambda: u64) {
        self.messages += 1;
        self.sig_bits += m.sig_count() as u64 * lambda * 8;
        self.wire_bits += m.wire_len() as u64 * 8;
    }
}

/// Point-to-point copies handed to the network, counted per recipient.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meter {
    pub aarb: Counter,
    pub aabc: Counter,
    /// Proof-of-fraud broadcasts.
    pub evidence: Counter,
    pub total: Counter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Aarb,
    Aabc,
    Evidence,
    Total,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Aarb, Layer::Aabc, Layer::Evidence, Layer::Total];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Aarb => "aarb",
            Layer::Aabc => "aabc",
            Layer::Evidence => "evidence",
            Layer::Total => "total",
        }
    }
}

impl Meter {
    pub fn record(&mut self, m: &Msg, lambda: usize) {
        let lambda = lambda as u64;
        let layer = match m.instance() {
            InstanceId::Aarb(_) => &mut self.aarb,
            InstanceId::Aabc(_) => &mut self.aabc,
            InstanceId::Global => &mut self.evidence,
        };
        layer.add(m, lambda);
        self.total.add(m, lambda);
    }

    pub fn layer(&self, l: Layer) -> Counter {
        match l {
            Layer::Aarb => self.aarb,
            Layer::Aabc => self.aabc,
            Layer::Evidence => self.evidence,
            Layer::Total => self.total,
        }
    }
}
