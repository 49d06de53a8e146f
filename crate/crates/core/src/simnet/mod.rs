//! Deterministic discrete-event simulation of a run under partial synchrony.
//!
//! A run is fully determined by its scenario and seed: keys, network
//! latencies and adversary choices all derive from the seed, and events at
//! equal times are processed in scheduling order.

pub mod adversary;
pub mod meter;
pub mod network;
pub mod runner;
pub mod scenario;
pub mod trace;

pub use meter::{Counter, Layer, Meter};
pub use runner::{run, run_seed, run_seeds, DecisionRecord, Report, RunResult};
pub use scenario::{load, parse, resolve, FaultClass, Resolved, Scenario, ScenarioError, Script};
pub use trace::{parse_trace, Header, Outcome, Record, TraceError, TRACE_VERSION};
