//! Message latency under partial synchrony.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::scenario::{Latency, PreGstPattern};

#[derive(Debug)]
pub struct Network {
    delta: u64,
    gst: u64,
    latency: Latency,
    pattern: PreGstPattern,
    rng: ChaCha20Rng,
}

impl Network {
    pub fn new(delta: u64, gst: u64, latency: Latency, pattern: PreGstPattern, rng: ChaCha20Rng) -> Self {
        Network {
            delta,
            gst,
            latency,
            pattern,
            rng,
        }
    }

    fn group(&self, p: u32) -> Option<usize> {
        match &self.pattern {
            PreGstPattern::Partition { groups } => groups.iter().position(|g| g.contains(&p)),
            _ => None,
        }
    }

    /// Arrival time of a copy entering the network at `sent`.
    ///
    /// Every copy sent at or after GST arrives within `delta`; every copy
    /// sent before arrives by `gst + delta`.
    pub fn arrival(&mut self, sent: u64, from: u32, to: u32) -> u64 {
        let Latency { min, max } = self.latency;
        if sent >= self.gst {
            return sent + self.rng.gen_range(min..=max);
        }
        let held = match &self.pattern {
            PreGstPattern::Uniform => {
                return sent + self.rng.gen_range(1..=self.gst + self.delta - sent);
            }
            PreGstPattern::Partition { .. } => {
                let (a, b) = (self.group(from), self.group(to));
                a.is_some() && b.is_some() && a != b
            }
            PreGstPattern::CoordinatorStarve { victims } => victims.contains(&from),
        };
        if held {
            self.gst + self.rng.gen_range(1..=self.delta)
        } else {
            sent + self.rng.gen_range(min..=max)
        }
    }
}
