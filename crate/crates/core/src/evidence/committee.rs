use std::collections::{BTreeMap, BTreeSet};

use super::pof::ProofOfFraud;
use crate::model::{threshold, ModelError, ProcessId};

/// A process's local view of the committee: who has been proven deceitful,
/// and the live threshold `h(d_r) = h0 − d_r`.
///
/// Shared by every protocol instance of the process. Removal only grows.
#[derive(Clone, Debug)]
pub struct CommitteeView {
    n0: u32,
    h0: u32,
    removed: BTreeSet<ProcessId>,
    /// One retained proof per removed process.
    local_pofs: BTreeMap<ProcessId, ProofOfFraud>,
}

impl CommitteeView {
    pub fn new(n0: u32, h0: u32) -> Self {
        CommitteeView {
            n0,
            h0,
            removed: BTreeSet::new(),
            local_pofs: BTreeMap::new(),
        }
    }

    pub fn n0(&self) -> u32 {
        self.n0
    }

    pub fn h0(&self) -> u32 {
        self.h0
    }

    pub fn d_r(&self) -> u32 {
        self.removed.len() as u32
    }

    pub fn threshold(&self) -> Result<u32, ModelError> {
        threshold(self.h0, self.d_r())
    }

    /// Current threshold. Past committee collapse (only reachable far beyond
    /// every bound) it saturates at 1.
    pub fn h(&self) -> u32 {
        self.threshold().unwrap_or(1)
    }

    pub fn is_removed(&self, p: ProcessId) -> bool {
        self.removed.contains(&p)
    }

    pub fn removed(&self) -> &BTreeSet<ProcessId> {
        &self.removed
    }

    pub fn members(&self) -> impl Iterator<Item = ProcessId> + '_ {
        (0..self.n0)
            .map(ProcessId)
            .filter(|p| !self.removed.contains(p))
    }

    pub fn local_pofs(&self) -> impl Iterator<Item = &ProofOfFraud> {
        self.local_pofs.values()
    }

    /// Filters `pofs` down to those that prove a not-yet-removed process and
    /// applies them. Returns the proofs that were new; already-known culprits
    /// make a proof stale. Callers verify proofs beforehand.
    pub fn apply_pofs(&mut self, pofs: &[ProofOfFraud]) -> Vec<ProofOfFraud> {
        let mut fresh = Vec::new();
        for p in pofs {
            if self.removed.insert(p.culprit) {
                self.local_pofs.insert(p.culprit, p.clone());
                fresh.push(p.clone());
            }
        }
        fresh
    }
}
