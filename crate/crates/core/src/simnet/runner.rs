//! The event loop.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::adversary::{Adversary, Outgoing, Steering};
use super::meter::Meter;
use super::network::Network;
use super::scenario::{FaultClass, Resolved, Script};
use super::trace::{Header, Outcome, Record, TraceWriter, TRACE_VERSION};
use crate::context::{NodeEvent, Outbox, Params, TimerKey};
use crate::evidence::{generate_keys, Msg};
use crate::node::{Node, NodeConfig, Protocol};
use crate::reduction::stabilization_index;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub p: u32,
    pub value: u64,
    pub time: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<FaultClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub end_time: u64,
    /// Time the run ran out of events with work unfinished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stalled_at: Option<u64>,
    pub decisions: Vec<DecisionRecord>,
    /// Two non-faulty processes decided different values.
    pub disagreement: bool,
    /// Processes each non-faulty process removed, in index order.
    pub removed: BTreeMap<u32, Vec<u32>>,
    pub meter: Meter,
    pub rounds_max: u32,
    /// Timer expiries before GST, per process.
    pub timer_expiries_pre_gst: Vec<u64>,
    /// Largest pre-GST expiry count over non-faulty processes.
    pub a: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ec_outputs: BTreeMap<u32, Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilization_index: Option<usize>,
    /// SHA-256 of the trace bytes.
    pub trace_digest: String,
}

impl Report {
    pub fn all_decided(&self, r: &Resolved) -> bool {
        (0..r.scenario.n)
            .filter(|p| !r.is_faulty(*p))
            .all(|p| self.decisions.iter().any(|d| d.p == p))
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub report: Report,
    pub trace: Vec<u8>,
    /// Node events with their time and process, as also written to the
    /// trace.
    pub events: Vec<(u64, u32, NodeEvent)>,
}

#[derive(Debug)]
enum Kind {
    Start,
    Deliver { from: u32, sent: u64, msg: Msg },
    Timer(TimerKey),
}

#[derive(Debug)]
struct Event {
    time: u64,
    seq: u64,
    to: u32,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: the heap pops the earliest event, ties by insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Sim<'r> {
    r: &'r Resolved,
    nodes: Vec<Node>,
    adversaries: Vec<Option<Adversary>>,
    steering: Option<Steering>,
    net: Network,
    heap: BinaryHeap<Event>,
    seq: u64,
    meter: Meter,
    trace: TraceWriter,
    events: Vec<(u64, u32, NodeEvent)>,
    decisions: BTreeMap<u32, (u64, u64)>,
    expiries: Vec<u64>,
    now: u64,
}

/// Runs a scenario with the seed it names.
pub fn run(r: &Resolved) -> RunResult {
    run_seed(r, r.scenario.seed)
}

/// Runs a scenario with `seed` in place of its own.
pub fn run_seed(r: &Resolved, seed: u64) -> RunResult {
    let s = &r.scenario;
    let n = s.n;
    let (keys, dir) = generate_keys(s.scheme.build(s.lambda), n, seed);
    let dir = Arc::new(dir);
    let correct: Vec<u32> = (0..n).filter(|p| !r.is_faulty(*p)).collect();
    let split_size = (r.h0.saturating_sub(s.t)) as usize;
    let mut nodes = Vec::new();
    let mut adversaries = Vec::new();
    for key in keys {
        let p = key.id().0;
        let adv = s.roster.get(&p).map(|e| {
            let rng = ChaCha20Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(p as u64 + 1)));
            Adversary::new(e.class, e.script.clone(), key.clone(), rng, s.delta, correct.clone(), split_size, n)
        });
        let params = Params {
            n0: n,
            h0: r.h0,
            t: s.t,
            q: s.q,
            delta: s.delta,
            amp_override: adv.as_ref().and_then(Adversary::amp_override),
        };
        let cfg = NodeConfig {
            protocol: s.protocol,
            proposal: r.proposals[p as usize],
            source: s.source,
            ec_epochs: s.ec_epochs,
            ec_epoch_len: r.ec_epoch_len,
        };
        nodes.push(Node::new(key, dir.clone(), params, cfg));
        adversaries.push(adv);
    }
    let header = Header {
        version: TRACE_VERSION,
        scenario: s.name.clone(),
        protocol: s.protocol,
        n,
        h0: r.h0,
        t: s.t,
        d: s.d,
        q: s.q,
        lambda: s.lambda,
        delta: s.delta,
        gst: s.gst,
        seed,
        classes: s.roster.iter().map(|(p, e)| (*p, e.class)).collect(),
        proposals: r.proposals.clone(),
        source: s.source,
        ec_epochs: if s.protocol == Protocol::Ec { s.ec_epochs } else { 0 },
        level: s.trace,
    };
    let steering = s
        .roster
        .values()
        .any(|e| e.script == Script::CoordSplit)
        .then(|| {
            let faulty = (0..n).map(|p| r.is_faulty(p)).collect();
            let targets = correct.iter().copied().take(split_size).collect();
            Steering::new(n, s.gst, r.latency.min, r.latency.max, faulty, targets)
        });
    let mut sim = Sim {
        r,
        steering,
        nodes,
        adversaries,
        net: Network::new(
            s.delta,
            s.gst,
            r.latency,
            s.pre_gst_pattern.clone(),
            ChaCha20Rng::seed_from_u64(seed),
        ),
        heap: BinaryHeap::new(),
        seq: 0,
        meter: Meter::default(),
        trace: TraceWriter::new(header),
        events: Vec::new(),
        decisions: BTreeMap::new(),
        expiries: vec![0; n as usize],
        now: 0,
    };
    for p in 0..n {
        sim.schedule(0, p, Kind::Start);
    }
    let (outcome, stalled_at) = sim.run_loop();
    sim.finish(seed, outcome, stalled_at)
}

impl Sim<'_> {
    fn schedule(&mut self, time: u64, to: u32, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            to,
            kind,
        });
    }

    fn crashed(&self, p: u32, now: u64) -> bool {
        self.adversaries[p as usize].as_ref().is_some_and(|a| a.crashed(now))
    }

    fn ec_done(&self, p: u32) -> bool {
        self.r.scenario.protocol != Protocol::Ec
            || self.nodes[p as usize].ec_outputs().len() >= self.r.scenario.ec_epochs as usize
    }

    fn finished(&self) -> bool {
        (0..self.r.scenario.n)
            .filter(|p| !self.r.is_faulty(*p))
            .all(|p| self.nodes[p as usize].decision().is_some() && self.ec_done(p))
    }

    fn run_loop(&mut self) -> (Outcome, Option<u64>) {
        let horizon = self.r.scenario.horizon;
        while let Some(ev) = self.heap.pop() {
            if ev.time > horizon {
                self.now = horizon;
                return (Outcome::HorizonExhausted, None);
            }
            self.now = ev.time;
            let p = ev.to;
            if self.crashed(p, ev.time) {
                continue;
            }
            let node = &mut self.nodes[p as usize];
            let out = match ev.kind {
                Kind::Start => node.start(ev.time),
                Kind::Deliver { from, sent, msg } => {
                    if self.trace.full() {
                        self.trace.push(&Record::Deliver {
                            t: ev.time,
                            sent,
                            from,
                            to: p,
                            tag: msg.tag(),
                            sigs: msg.sig_count(),
                            id: msg.short_id(),
                        });
                    }
                    node.receive(ev.time, msg)
                }
                Kind::Timer(key) => {
                    let Some(out) = node.fire(ev.time, key) else {
                        continue;
                    };
                    let pre_gst = ev.time < self.r.scenario.gst;
                    if pre_gst {
                        self.expiries[p as usize] += 1;
                    }
                    if self.trace.full() {
                        self.trace.push(&Record::Timer {
                            t: ev.time,
                            p,
                            key,
                            pre_gst,
                        });
                    }
                    out
                }
            };
            self.handle(p, out);
        }
        if self.finished() {
            (Outcome::Quiescent, None)
        } else {
            (Outcome::HorizonExhausted, Some(self.now))
        }
    }

    fn handle(&mut self, p: u32, out: Outbox) {
        let now = self.now;
        for e in out.events {
            if let NodeEvent::Decide { value } = e {
                self.decisions.entry(p).or_insert((value, now));
            }
            self.trace.push(&Record::Node { t: now, p, event: e.clone() });
            self.events.push((now, p, e));
        }
        for (key, deadline) in out.timers {
            if let Some(at) = deadline {
                self.schedule(at, p, Kind::Timer(key));
            }
        }
        let n = self.r.scenario.n;
        let recipients: Vec<u32> = (0..n).filter(|q| *q != p).collect();
        for m in out.sends {
            let copies = match &mut self.adversaries[p as usize] {
                Some(adv) => adv.transform(&m, &recipients),
                None => recipients
                    .iter()
                    .map(|&to| Outgoing {
                        to,
                        msg: m.clone(),
                        hold: 0,
                    })
                    .collect(),
            };
            for c in copies {
                let sent = now + c.hold;
                let steered = self.steering.as_ref().and_then(|st| st.latency(sent, p, c.to, &c.msg));
                let at = match steered {
                    Some(lat) => sent + lat,
                    None => self.net.arrival(sent, p, c.to),
                };
                self.meter.record(&c.msg, self.r.scenario.lambda);
                self.trace.sent(&c.msg);
                self.schedule(
                    at,
                    c.to,
                    Kind::Deliver {
                        from: p,
                        sent,
                        msg: c.msg,
                    },
                );
            }
        }
    }

    fn finish(mut self, seed: u64, outcome: Outcome, stalled_at: Option<u64>) -> RunResult {
        let r = self.r;
        let n = r.scenario.n;
        self.trace.push(&Record::End { t: self.now, outcome });
        let correct: Vec<u32> = (0..n).filter(|p| !r.is_faulty(*p)).collect();
        let decided: Vec<u64> = correct
            .iter()
            .filter_map(|p| self.decisions.get(p).map(|d| d.0))
            .collect();
        let disagreement = decided.windows(2).any(|w| w[0] != w[1]);
        let decisions = self
            .decisions
            .iter()
            .map(|(p, (value, time))| DecisionRecord {
                p: *p,
                value: *value,
                time: *time,
                class: r.class_of(*p),
            })
            .collect();
        let removed = correct
            .iter()
            .map(|p| (*p, self.nodes[*p as usize].view().removed().iter().map(|x| x.0).collect()))
            .collect();
        let rounds_max = correct.iter().map(|p| self.nodes[*p as usize].max_round()).max().unwrap_or(0);
        let a = correct.iter().map(|p| self.expiries[*p as usize]).max().unwrap_or(0);
        let (ec_outputs, stabilization) = if r.scenario.protocol == Protocol::Ec {
            let outs: BTreeMap<u32, Vec<u64>> = correct
                .iter()
                .map(|p| (*p, self.nodes[*p as usize].ec_outputs().to_vec()))
                .collect();
            let hs: Vec<&[u64]> = outs.values().map(|v| v.as_slice()).collect();
            let k = stabilization_index(&hs);
            (outs, k)
        } else {
            (BTreeMap::new(), None)
        };
        let trace = self.trace.into_bytes();
        let report = Report {
            version: TRACE_VERSION,
            scenario: r.scenario.name.clone(),
            seed,
            outcome,
            end_time: self.now,
            stalled_at,
            decisions,
            disagreement,
            removed,
            meter: self.meter,
            rounds_max,
            timer_expiries_pre_gst: self.expiries,
            a,
            ec_outputs,
            stabilization_index: stabilization,
            trace_digest: hex::encode(Sha256::digest(&trace)),
        };
        RunResult {
            report,
            trace,
            events: self.events,
        }
    }
}

/// Runs each seed on its own worker; results come back in seed order.
pub fn run_seeds(r: &Resolved, seeds: &[u64]) -> Vec<RunResult> {
    use rayon::prelude::*;
    seeds.par_iter().map(|s| run_seed(r, *s)).collect()
}
