//! `aacons`: run scenarios, check traces, sweep system sizes.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 configuration rejected,
//! 3 horizon exhausted, 4 property violated.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aacons_core::check::{check, CheckError, Property, TraceView};
use aacons_core::simnet::{self, Layer, Outcome, ScenarioError};
use aacons_core::sweep::{sweep, SweepError};
use clap::{Parser, Subcommand};

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_ERROR: u8 = 1;
const EXIT_REJECT: u8 = 2;
const EXIT_HORIZON: u8 = 3;
const EXIT_PROPERTY: u8 = 4;

#[derive(Parser)]
#[command(name = "aacons", version, about = "Accountable consensus simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace and report.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `out/<scenario name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the report instead of a summary line.
        #[arg(long)]
        json: bool,
    },
    /// Check a property against a trace.
    Check {
        trace: PathBuf,
        /// One of agreement, termination, validity, accountability,
        /// active-accountability, ec-agreement, abv-suite, aarb-suite.
        #[arg(long)]
        property: String,
        #[arg(long)]
        json: bool,
    },
    /// Run a template at several sizes and fit log-log slopes.
    Sweep {
        template: PathBuf,
        /// Comma-separated sizes, at least three.
        #[arg(long, value_delimiter = ',', default_values_t = [4u32, 8, 16])]
        n_list: Vec<u32>,
        /// Seeds as `a..b` (exclusive) or a comma-separated list.
        #[arg(long, default_value = "1..4")]
        seeds: String,
        #[arg(long)]
        json: bool,
    },
    /// Validate a scenario file without running it.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {s:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range {s:?}"))?;
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad seed {x:?}")))
        .collect()
}

fn reject(e: &ScenarioError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config_reject() { EXIT_REJECT } else { EXIT_ERROR })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ExitCode> {
    fs::write(path, bytes).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(EXIT_ERROR)
    })
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>, json: bool) -> ExitCode {
    let r = match simnet::load(path) {
        Ok(r) => r,
        Err(e) => return reject(&e),
    };
    let seed = seed.unwrap_or(r.scenario.seed);
    let res = simnet::run_seed(&r, seed);
    let dir = out.unwrap_or_else(|| Path::new("out").join(&r.scenario.name));
    if let Err(e) = fs::create_dir_all(&dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return ExitCode::from(EXIT_ERROR);
    }
    let report = serde_json::to_string_pretty(&res.report).expect("report serializes");
    if let Err(code) = write(&dir.join("trace.jsonl"), &res.trace) {
        return code;
    }
    if let Err(code) = write(&dir.join("report.json"), format!("{report}\n").as_bytes()) {
        return code;
    }
    let rep = &res.report;
    if json {
        out!("{report}");
    } else {
        let values: Vec<String> = rep.decisions.iter().map(|d| format!("p{}={}", d.p, d.value)).collect();
        out!(
            "{} seed={} outcome={:?} end={} decisions=[{}] disagreement={} messages={}",
            rep.scenario,
            seed,
            rep.outcome,
            rep.end_time,
            values.join(" "),
            rep.disagreement,
            rep.meter.total.messages
        );
        out!("wrote {}", dir.display());
    }
    match rep.outcome {
        Outcome::Quiescent => ExitCode::SUCCESS,
        Outcome::HorizonExhausted => ExitCode::from(EXIT_HORIZON),
    }
}

fn cmd_check(path: &Path, property: &str, json: bool) -> ExitCode {
    let property: Property = match property.parse() {
        Ok(p) => p,
        Err(e) => {
            let names: Vec<&str> = Property::ALL.iter().map(|p| p.name()).collect();
            eprintln!("error: {e}; expected one of {}", names.join(", "));
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let result = TraceView::parse(&text).and_then(|tv| check(&tv, property));
    let result = match result {
        Ok(r) => r,
        Err(e @ (CheckError::Trace(_) | CheckError::NeedsFull(_) | CheckError::BadMessage { .. })) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    if json {
        out!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
    } else {
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        match result.event {
            Some(i) => out!("{verdict} {property}: {} (record {i})", result.detail),
            None => out!("{verdict} {property}: {}", result.detail),
        }
    }
    if result.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PROPERTY)
    }
}

fn cmd_sweep(path: &Path, sizes: &[u32], seeds: &str, json: bool) -> ExitCode {
    let seeds = match parse_seeds(seeds) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let template = match simnet::parse(&text) {
        Ok(s) => s,
        Err(e) => return reject(&e),
    };
    let table = match sweep(&template, sizes, &seeds) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                SweepError::Scenario { ref source, .. } if source.is_config_reject() => EXIT_REJECT,
                _ => EXIT_ERROR,
            });
        }
    };
    if json {
        out!("{}", serde_json::to_string_pretty(&table).expect("table serializes"));
    } else {
        out!("{:>4} {:>6} {:>9} {:>6} {:>10} {:>10} {:>10} {:>10}", "n", "seed", "outcome", "rounds", "aarb", "aabc", "evidence", "total");
        for row in &table.rows {
            let m = &row.meter;
            out!(
                "{:>4} {:>6} {:>9} {:>6} {:>10} {:>10} {:>10} {:>10}",
                row.n,
                row.seed,
                match row.outcome {
                    Outcome::Quiescent => "ok",
                    Outcome::HorizonExhausted => "horizon",
                },
                row.rounds_max,
                m.aarb.messages,
                m.aabc.messages,
                m.evidence.messages,
                m.total.messages
            );
        }
        out!();
        out!("{:>9} {:>14} {:>10}", "layer", "message slope", "bit slope");
        for layer in Layer::ALL {
            let f = table.fit(layer);
            out!("{:>9} {:>14.3} {:>10.3}", f.layer, f.message_slope, f.bit_slope);
        }
    }
    if table.all_quiescent() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_HORIZON)
    }
}

fn cmd_validate(path: &Path, json: bool) -> ExitCode {
    match simnet::load(path) {
        Ok(r) => {
            let s = &r.scenario;
            if json {
                out!(
                    "{}",
                    serde_json::json!({"valid": true, "n": s.n, "h0": r.h0, "t": s.t, "d": s.d, "q": s.q})
                );
            } else {
                out!("ok: {} n={} h0={} t={} d={} q={}", s.name, s.n, r.h0, s.t, s.d, s.q);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                out!("{}", serde_json::json!({"valid": false, "error": e.to_string()}));
            }
            reject(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { scenario, seed, out, json } => cmd_run(&scenario, seed, out, json),
        Cmd::Check { trace, property, json } => cmd_check(&trace, &property, json),
        Cmd::Sweep {
            template,
            n_list,
            seeds,
            json,
        } => cmd_sweep(&template, &n_list, &seeds, json),
        Cmd::Validate { scenario, json } => cmd_validate(&scenario, json),
    }
}
