//! Multi-valued consensus from reliable broadcast and binary consensus, and
//! the eventual-consensus wrapper that repairs disagreements.

use crate::model::Bit;

/// Requests the reduction makes of its binary-consensus instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StartBinary {
    pub k: u32,
    pub input: Bit,
}

/// One reliable broadcast and one binary consensus per proposer; the
/// decision is the proposal of the smallest index whose binary consensus
/// decided 1.
#[derive(Clone, Debug)]
pub struct GenState {
    proposals: Vec<Option<u64>>,
    /// Replacements seen before the local delivery they apply to.
    pending: Vec<Option<u64>>,
    bin: Vec<Option<Bit>>,
    started: Vec<bool>,
    decided: Option<u64>,
}

impl GenState {
    pub fn new(n0: u32) -> Self {
        let n = n0 as usize;
        GenState {
            proposals: vec![None; n],
            pending: vec![None; n],
            bin: vec![None; n],
            started: vec![false; n],
            decided: None,
        }
    }

    pub fn proposals(&self) -> &[Option<u64>] {
        &self.proposals
    }

    pub fn bin_decisions(&self) -> &[Option<Bit>] {
        &self.bin
    }

    pub fn decided(&self) -> Option<u64> {
        self.decided
    }

    /// A proposal was delivered at index `k`.
    pub fn on_deliver(&mut self, k: u32, value: u64) -> Vec<StartBinary> {
        let i = k as usize;
        let value = self.pending[i].map_or(value, |p| p.min(value));
        self.proposals[i].get_or_insert(value);
        let mut out = Vec::new();
        if !self.started[i] {
            self.started[i] = true;
            out.push(StartBinary { k, input: Bit::One });
        }
        out
    }

    /// Binary consensus `k` decided `b`. Once `h` instances decided 1,
    /// every instance not yet started is started with 0.
    pub fn on_binary(&mut self, k: u32, b: Bit, h: usize) -> Vec<StartBinary> {
        self.bin[k as usize].get_or_insert(b);
        self.fill_zeros(h)
    }

    /// Re-applies the zero-fill rule, e.g. after the threshold dropped.
    pub fn fill_zeros(&mut self, h: usize) -> Vec<StartBinary> {
        let ones = self.bin.iter().filter(|b| **b == Some(Bit::One)).count();
        if ones < h {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (i, s) in self.started.iter_mut().enumerate() {
            if !*s {
                *s = true;
                out.push(StartBinary {
                    k: i as u32,
                    input: Bit::Zero,
                });
            }
        }
        out
    }

    /// The value selected by the current binary decisions, if every instance
    /// decided and the winning proposal is known.
    pub fn selected(&self) -> Option<u64> {
        if self.bin.iter().any(Option::is_none) {
            return None;
        }
        let k = self.bin.iter().position(|b| *b == Some(Bit::One))?;
        self.proposals[k]
    }

    /// Decides once [`GenState::selected`] is available.
    pub fn try_decide(&mut self) -> Option<u64> {
        if self.decided.is_some() {
            return None;
        }
        self.decided = self.selected();
        self.decided
    }

    /// Replaces the proposal at `k` with `min(local, other)`. Returns true
    /// if it changed. Before the local delivery the replacement is held
    /// and applied by [`GenState::on_deliver`].
    pub fn resolve_rb(&mut self, k: u32, other: u64) -> bool {
        let i = k as usize;
        match self.proposals[i] {
            Some(v) if other < v => {
                self.proposals[i] = Some(other);
                true
            }
            Some(_) => false,
            None => {
                let p = self.pending[i].map_or(other, |p| p.min(other));
                self.pending[i] = Some(p);
                false
            }
        }
    }

    /// A decision of 1 exists for instance `k`; adopt it. Returns true if
    /// the local decision changed.
    pub fn resolve_binary(&mut self, k: u32) -> bool {
        let slot = &mut self.bin[k as usize];
        if *slot == Some(Bit::One) {
            return false;
        }
        *slot = Some(Bit::One);
        true
    }
}

/// Output history of the repeated eventual-consensus interface.
#[derive(Clone, Debug, Default)]
pub struct EcState {
    outputs: Vec<u64>,
}

impl EcState {
    pub fn outputs(&self) -> &[u64] {
        &self.outputs
    }

    /// Index of the next output.
    pub fn next(&self) -> u32 {
        self.outputs.len() as u32
    }

    /// Records the answer to the next invocation.
    pub fn respond(&mut self, value: u64) -> u32 {
        self.outputs.push(value);
        self.outputs.len() as u32 - 1
    }
}

/// First index from which every history agrees with every other, if the
/// histories have equal length and agree on their last entry.
pub fn stabilization_index(histories: &[&[u64]]) -> Option<usize> {
    let len = histories.first()?.len();
    if len == 0 || histories.iter().any(|h| h.len() != len) {
        return None;
    }
    let agree = |j: usize| histories.iter().all(|h| h[j] == histories[0][j]);
    if !agree(len - 1) {
        return None;
    }
    let mut k = len - 1;
    while k > 0 && agree(k - 1) {
        k -= 1;
    }
    Some(k)
}
