//! Runs a scenario template across system sizes and fits growth orders.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::simnet::scenario::{resolve, Scenario, ScenarioError, TraceLevel};
use crate::simnet::{run_seed, Layer, Meter, Outcome};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("need at least 3 distinct sizes to fit a slope, got {0}")]
    TooFewSizes(usize),
    #[error("need at least one seed")]
    NoSeeds,
    #[error("n={n}: {source}")]
    Scenario { n: u32, source: ScenarioError },
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub n: u32,
    pub seed: u64,
    pub outcome: Outcome,
    pub rounds_max: u32,
    pub meter: Meter,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerFit {
    pub layer: &'static str,
    /// Mean over seeds, per size in input order.
    pub messages: Vec<f64>,
    pub sig_bits: Vec<f64>,
    pub message_slope: f64,
    pub bit_slope: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub scenario: String,
    pub sizes: Vec<u32>,
    pub rows: Vec<SweepRow>,
    pub fits: Vec<LayerFit>,
}

impl SweepTable {
    pub fn fit(&self, layer: Layer) -> &LayerFit {
        self.fits.iter().find(|f| f.layer == layer.name()).expect("every layer is fitted")
    }

    /// Whether every run finished.
    pub fn all_quiescent(&self) -> bool {
        self.rows.iter().all(|r| r.outcome == Outcome::Quiescent)
    }
}

/// Least-squares slope of `ln y` against `ln x`. Non-positive `y` values
/// are clamped to 1.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.max(1.0).ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Runs `template` at every size in `sizes` with every seed. Traces are
/// kept at summary level. Proposals are regenerated when their count does
/// not match the size.
pub fn sweep(template: &Scenario, sizes: &[u32], seeds: &[u64]) -> Result<SweepTable, SweepError> {
    let mut distinct = sizes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(SweepError::TooFewSizes(distinct.len()));
    }
    if seeds.is_empty() {
        return Err(SweepError::NoSeeds);
    }
    let mut resolved = Vec::new();
    for &n in &distinct {
        let mut s = template.clone();
        s.n = n;
        s.trace = TraceLevel::Summary;
        if s.proposals.len() != n as usize {
            s.proposals.clear();
        }
        resolved.push(resolve(s).map_err(|source| SweepError::Scenario { n, source })?);
    }
    let jobs: Vec<(usize, u64)> = (0..resolved.len())
        .flat_map(|i| seeds.iter().map(move |s| (i, *s)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let res = run_seed(&resolved[i], seed);
            SweepRow {
                n: distinct[i],
                seed,
                outcome: res.report.outcome,
                rounds_max: res.report.rounds_max,
                meter: res.report.meter,
            }
        })
        .collect();
    let xs: Vec<f64> = distinct.iter().map(|n| *n as f64).collect();
    let fits = Layer::ALL
        .iter()
        .map(|&layer| {
            let mean = |f: &dyn Fn(&SweepRow) -> u64| -> Vec<f64> {
                distinct
                    .iter()
                    .map(|n| {
                        let v: Vec<f64> = rows.iter().filter(|r| r.n == *n).map(|r| f(r) as f64).collect();
                        v.iter().sum::<f64>() / v.len() as f64
                    })
                    .collect()
            };
            let messages = mean(&|r| r.meter.layer(layer).messages);
            let sig_bits = mean(&|r| r.meter.layer(layer).sig_bits);
            LayerFit {
                layer: layer.name(),
                message_slope: log_log_slope(&xs, &messages),
                bit_slope: log_log_slope(&xs, &sig_bits),
                messages,
                sig_bits,
            }
        })
        .collect();
    Ok(SweepTable {
        scenario: template.name.clone(),
        sizes: distinct,
        rows,
        fits,
    })
}
