//! Property checks over a recorded trace.
//!
//! Everything here is computed from trace records alone. Proofs of fraud are
//! re-derived from the logged message encodings with a conflict rule written
//! out separately from the one the processes use.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::context::NodeEvent;
use crate::evidence::{decode, InstanceId, Msg, Payload};
use crate::node::Protocol;
use crate::simnet::trace::{parse_trace, Header, Outcome, Record, TraceError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    Agreement,
    Termination,
    Validity,
    Accountability,
    ActiveAccountability,
    EcAgreement,
    AbvSuite,
    AarbSuite,
}

impl Property {
    pub const ALL: [Property; 8] = [
        Property::Agreement,
        Property::Termination,
        Property::Validity,
        Property::Accountability,
        Property::ActiveAccountability,
        Property::EcAgreement,
        Property::AbvSuite,
        Property::AarbSuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Agreement => "agreement",
            Property::Termination => "termination",
            Property::Validity => "validity",
            Property::Accountability => "accountability",
            Property::ActiveAccountability => "active-accountability",
            Property::EcAgreement => "ec-agreement",
            Property::AbvSuite => "abv-suite",
            Property::AarbSuite => "aarb-suite",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown property {0:?}")]
pub struct UnknownProperty(pub String);

impl FromStr for Property {
    type Err = UnknownProperty;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UnknownProperty(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub property: Property,
    pub pass: bool,
    pub detail: String,
    /// Index of the earliest violating record (line number in the trace).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{0} needs a full-level trace")]
    NeedsFull(Property),
    #[error("record {line}: undecodable message: {msg}")]
    BadMessage { line: usize, msg: String },
}

/// A parsed trace with the indexes the checks share.
pub struct TraceView {
    pub header: Header,
    pub records: Vec<Record>,
    messages: HashMap<String, Msg>,
}

impl TraceView {
    pub fn parse(text: &str) -> Result<Self, CheckError> {
        let (header, records) = parse_trace(text)?;
        let mut messages = HashMap::new();
        for (line, r) in records.iter().enumerate() {
            if let Record::Msg { id, hex } = r {
                let bytes = hex::decode(hex).map_err(|e| CheckError::BadMessage {
                    line,
                    msg: e.to_string(),
                })?;
                let m = decode(&bytes).map_err(|e| CheckError::BadMessage {
                    line,
                    msg: e.to_string(),
                })?;
                messages.insert(id.clone(), m);
            }
        }
        Ok(TraceView {
            header,
            records,
            messages,
        })
    }

    fn full(&self) -> bool {
        self.records.iter().any(|r| matches!(r, Record::Msg { .. }))
            || self.header.level == crate::simnet::scenario::TraceLevel::Full
    }

    fn correct(&self) -> Vec<u32> {
        (0..self.header.n).filter(|p| !self.header.classes.contains_key(p)).collect()
    }

    fn is_correct(&self, p: u32) -> bool {
        p < self.header.n && !self.header.classes.contains_key(&p)
    }

    fn end(&self) -> (usize, Option<Outcome>) {
        for (i, r) in self.records.iter().enumerate().rev() {
            if let Record::End { outcome, .. } = r {
                return (i, Some(*outcome));
            }
        }
        (self.records.len().saturating_sub(1), None)
    }

    fn node_events(&self) -> impl Iterator<Item = (usize, u32, &NodeEvent)> {
        self.records.iter().enumerate().filter_map(|(i, r)| match r {
            Record::Node { p, event, .. } => Some((i, *p, event)),
            _ => None,
        })
    }

    /// First decision of each process, with its record index.
    fn decisions(&self) -> BTreeMap<u32, (usize, u64)> {
        let mut out = BTreeMap::new();
        for (i, p, e) in self.node_events() {
            if let NodeEvent::Decide { value } = e {
                out.entry(p).or_insert((i, *value));
            }
        }
        out
    }

    /// Final removed set of each process.
    fn removals(&self) -> BTreeMap<u32, BTreeSet<u32>> {
        let mut out: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for (_, p, e) in self.node_events() {
            if let NodeEvent::Removal { culprit } = e {
                out.entry(p).or_default().insert(culprit.0);
            }
        }
        out
    }

    /// For each process, the signers it holds conflicting pairs for, from
    /// everything delivered to it and everything it sent itself.
    pub fn culprits(&self) -> BTreeMap<u32, BTreeSet<u32>> {
        let mut known: BTreeMap<u32, Evidence> = BTreeMap::new();
        for m in self.messages.values() {
            known.entry(m.signer().0).or_default().add(m);
        }
        for r in &self.records {
            if let Record::Deliver { to, id, .. } = r {
                if let Some(m) = self.messages.get(id) {
                    known.entry(*to).or_default().add(m);
                }
            }
        }
        known.into_iter().map(|(p, e)| (p, e.culprits)).collect()
    }

    /// Signers with a conflicting pair anywhere in the trace.
    pub fn equivocators(&self) -> BTreeSet<u32> {
        let mut all = Evidence::default();
        for m in self.messages.values() {
            all.add(m);
        }
        all.culprits
    }
}

/// A slot in which a correct process signs at most one content, and the
/// content signed.
fn slot(m: &Msg) -> Option<((u32, u8, InstanceId, u32), u64)> {
    let (s, i, r) = (m.signer().0, m.instance(), m.round());
    let aarb = matches!(i, InstanceId::Aarb(_));
    Some(match m.payload() {
        Payload::Init { value } if aarb => ((s, 1, i, 0), *value),
        Payload::EchoRb { value } if aarb => ((s, 2, i, 0), *value),
        Payload::ReadyRb { value, .. } if aarb => ((s, 3, i, 0), *value),
        Payload::Est { value, .. } => ((s, 4, i, r), value.as_u8() as u64),
        Payload::Coord { value } => ((s, 7, i, r), value.as_u8() as u64),
        Payload::EchoBc { aux } => ((s, 8, i, r), aux.bits() as u64),
        Payload::Decide { value, .. } => ((s, 9, i, 0), value.as_u8() as u64),
        _ => return None,
    })
}

#[derive(Default)]
struct Evidence {
    slots: HashMap<(u32, u8, InstanceId, u32), u64>,
    culprits: BTreeSet<u32>,
}

impl Evidence {
    fn add(&mut self, m: &Msg) {
        let mut stack = vec![m];
        while let Some(m) = stack.pop() {
            if let Some((k, v)) = slot(m) {
                match self.slots.get(&k) {
                    Some(w) if *w != v => {
                        self.culprits.insert(k.0);
                    }
                    Some(_) => {}
                    None => {
                        self.slots.insert(k, v);
                    }
                }
            }
            let children: Vec<&Msg> = match m.payload() {
                Payload::Relay { msgs } => msgs.iter().collect(),
                Payload::Pofs { pofs } => pofs.iter().flat_map(|p| [&p.msg_a, &p.msg_b]).collect(),
                p => p.certificates().flat_map(|c| c.votes.iter()).collect(),
            };
            stack.extend(children);
        }
    }
}

fn result(property: Property, pass: bool, detail: impl Into<String>, event: Option<usize>) -> CheckResult {
    CheckResult {
        property,
        pass,
        detail: detail.into(),
        event: if pass { None } else { event },
    }
}

pub fn check_text(text: &str, property: Property) -> Result<CheckResult, CheckError> {
    check(&TraceView::parse(text)?, property)
}

pub fn check(tv: &TraceView, property: Property) -> Result<CheckResult, CheckError> {
    Ok(match property {
        Property::Agreement => agreement(tv),
        Property::Termination => termination(tv),
        Property::Validity => validity(tv),
        Property::Accountability => accountability(tv)?,
        Property::ActiveAccountability => active_accountability(tv),
        Property::EcAgreement => ec_agreement(tv),
        Property::AbvSuite => abv_suite(tv),
        Property::AarbSuite => aarb_suite(tv)?,
    })
}

fn agreement(tv: &TraceView) -> CheckResult {
    let mut first: Option<(usize, u32, u64)> = None;
    for (i, p, e) in tv.node_events() {
        let NodeEvent::Decide { value } = e else { continue };
        if !tv.is_correct(p) {
            continue;
        }
        match first {
            None => first = Some((i, p, *value)),
            Some((j, q, w)) if w != *value => {
                return result(
                    Property::Agreement,
                    false,
                    format!("p{q} decided {w} at record {j}, p{p} decided {value} at record {i}"),
                    Some(i),
                );
            }
            _ => {}
        }
    }
    result(Property::Agreement, true, "no conflicting decisions", None)
}

fn termination(tv: &TraceView) -> CheckResult {
    let decided = tv.decisions();
    let missing: Vec<u32> = tv.correct().into_iter().filter(|p| !decided.contains_key(p)).collect();
    let (end, _) = tv.end();
    if missing.is_empty() {
        result(Property::Termination, true, "every non-faulty process decided", None)
    } else {
        result(Property::Termination, false, format!("undecided: {missing:?}"), Some(end))
    }
}

fn validity(tv: &TraceView) -> CheckResult {
    let h = &tv.header;
    let correct = tv.correct();
    let proposal = |p: u32| -> u64 {
        let v = h.proposals[p as usize];
        if h.protocol == Protocol::Aabc {
            (v != 0) as u64
        } else {
            v
        }
    };
    let required: Option<u64> = match h.protocol {
        Protocol::Aarb => tv.is_correct(h.source).then(|| proposal(h.source)),
        _ => {
            let vals: BTreeSet<u64> = correct.iter().map(|p| proposal(*p)).collect();
            (vals.len() == 1).then(|| *vals.iter().next().expect("one value"))
        }
    };
    let Some(v) = required else {
        return result(Property::Validity, true, "non-faulty proposals differ; nothing to check", None);
    };
    for (p, (i, w)) in tv.decisions() {
        if tv.is_correct(p) && w != v {
            return result(
                Property::Validity,
                false,
                format!("p{p} decided {w} but every non-faulty process proposed {v}"),
                Some(i),
            );
        }
    }
    result(Property::Validity, true, format!("decisions equal the common proposal {v}"), None)
}

fn accountability(tv: &TraceView) -> Result<CheckResult, CheckError> {
    if !tv.full() {
        return Err(CheckError::NeedsFull(Property::Accountability));
    }
    let decided = tv.decisions();
    let values: BTreeSet<u64> = decided
        .iter()
        .filter(|(p, _)| tv.is_correct(**p))
        .map(|(_, (_, v))| *v)
        .collect();
    let culprits = tv.culprits();
    if let Some((p, c)) = culprits.iter().find(|(_, c)| c.iter().any(|x| tv.is_correct(*x))) {
        let (end, _) = tv.end();
        return Ok(result(
            Property::Accountability,
            false,
            format!("p{p} holds evidence against non-faulty processes {c:?}"),
            Some(end),
        ));
    }
    if values.len() <= 1 {
        return Ok(result(Property::Accountability, true, "no disagreement", None));
    }
    let h = &tv.header;
    let need = (2 * h.h0).saturating_sub(h.n) as usize;
    let empty = BTreeSet::new();
    let mut least = usize::MAX;
    for p in tv.correct() {
        let c = culprits.get(&p).unwrap_or(&empty);
        least = least.min(c.len());
        if c.len() < need {
            let (end, _) = tv.end();
            return Ok(result(
                Property::Accountability,
                false,
                format!("disagreement on {values:?} but p{p} proves only {:?}, need {need}", c),
                Some(end),
            ));
        }
    }
    Ok(result(
        Property::Accountability,
        true,
        format!("disagreement on {values:?}; every non-faulty process proves at least {least} culprits (need {need})"),
        None,
    ))
}

fn active_accountability(tv: &TraceView) -> CheckResult {
    let (end, _) = tv.end();
    let term = termination(tv);
    if !term.pass {
        return result(Property::ActiveAccountability, false, term.detail, term.event);
    }
    for (i, p, e) in tv.node_events() {
        if let NodeEvent::Removal { culprit } = e {
            if tv.is_correct(p) && tv.is_correct(culprit.0) {
                return result(
                    Property::ActiveAccountability,
                    false,
                    format!("p{p} removed non-faulty p{}", culprit.0),
                    Some(i),
                );
            }
        }
    }
    let removals = tv.removals();
    let empty = BTreeSet::new();
    let sets: BTreeSet<&BTreeSet<u32>> = tv.correct().iter().map(|p| removals.get(p).unwrap_or(&empty)).collect();
    if sets.len() > 1 {
        return result(
            Property::ActiveAccountability,
            false,
            format!("non-faulty processes end with different removed sets: {sets:?}"),
            Some(end),
        );
    }
    let set = sets.into_iter().next().cloned().unwrap_or_default();
    result(
        Property::ActiveAccountability,
        true,
        format!("all non-faulty decided; common removed set {set:?}"),
        None,
    )
}

fn ec_agreement(tv: &TraceView) -> CheckResult {
    let (end, _) = tv.end();
    let mut hist: BTreeMap<u32, Vec<u64>> = tv.correct().into_iter().map(|p| (p, Vec::new())).collect();
    for (_, p, e) in tv.node_events() {
        if let NodeEvent::EcOutput { j, value } = e {
            if let Some(h) = hist.get_mut(&p) {
                if *j as usize == h.len() {
                    h.push(*value);
                }
            }
        }
    }
    let want = tv.header.ec_epochs as usize;
    if tv.header.protocol != Protocol::Ec || want == 0 {
        return result(Property::EcAgreement, true, "not an eventual-consensus run", None);
    }
    if let Some((p, h)) = hist.iter().find(|(_, h)| h.len() != want) {
        return result(
            Property::EcAgreement,
            false,
            format!("p{p} produced {} of {want} outputs", h.len()),
            Some(end),
        );
    }
    let hs: Vec<&Vec<u64>> = hist.values().collect();
    let agree = |j: usize| hs.iter().all(|h| h[j] == hs[0][j]);
    if !agree(want - 1) {
        return result(Property::EcAgreement, false, "final outputs differ", Some(end));
    }
    let k = (0..want).rev().take_while(|j| agree(*j)).last().expect("last index agrees");
    result(
        Property::EcAgreement,
        true,
        format!("outputs agree from index {k} of {want}"),
        None,
    )
}

fn abv_suite(tv: &TraceView) -> CheckResult {
    let h = &tv.header;
    let (end, outcome) = tv.end();
    let quiescent = outcome == Some(Outcome::Quiescent);
    // (k, round, value) -> processes that delivered it
    let mut binvals: BTreeMap<(u32, u32), BTreeMap<u32, BTreeSet<u8>>> = BTreeMap::new();
    let mut started: BTreeSet<(u32, u32, u32)> = BTreeSet::new();
    let mut removed: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut decided_round: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    for (i, p, e) in tv.node_events() {
        if !tv.is_correct(p) {
            continue;
        }
        match e {
            NodeEvent::Removal { culprit } => {
                removed.entry(p).or_default().insert(culprit.0);
            }
            NodeEvent::Round { k, round } => {
                started.insert((p, *k, *round));
            }
            NodeEvent::AabcDecide { k, round, .. } => {
                decided_round.entry((p, *k)).or_insert(*round);
            }
            NodeEvent::Binval {
                k,
                round,
                value,
                cert_round,
                cert_votes,
            } => {
                binvals.entry((*k, *round)).or_default().entry(p).or_default().insert(value.as_u8());
                let exempt = *round == 1 || (*round == 2 && value.as_u8() == 1);
                if exempt {
                    continue;
                }
                // Accountability: a justification from the previous round,
                // or from the one before when the value is that round's
                // parity.
                let ok_round = match cert_round {
                    Some(cr) => *cr + 1 == *round || (*cr + 2 == *round && value.as_u8() as u32 == (round - 1) % 2),
                    None => false,
                };
                let d_r = removed.get(&p).map_or(0, |s| s.len()) as u32;
                let need = h.h0.saturating_sub(d_r) as usize;
                if !ok_round || cert_votes.len() < need {
                    return result(
                        Property::AbvSuite,
                        false,
                        format!(
                            "accountability: p{p} delivered {} in aabc{k} round {round} with justification round {cert_round:?} and {} votes",
                            value.as_u8(),
                            cert_votes.len()
                        ),
                        Some(i),
                    );
                }
            }
            _ => {}
        }
    }
    // Justification: some non-faulty process broadcast every delivered value.
    if tv.full() {
        let mut broadcast: BTreeSet<(u32, u32, u8)> = BTreeSet::new();
        for m in tv.messages.values() {
            if let (InstanceId::Aabc(k), Some(b)) = (m.instance(), m.payload().bit()) {
                if matches!(m.payload(), Payload::Est { .. } | Payload::BvEcho { .. }) && tv.is_correct(m.signer().0) {
                    broadcast.insert((k, m.round(), b.as_u8()));
                }
            }
        }
        for ((k, r), per) in &binvals {
            for vs in per.values() {
                for v in vs {
                    if !broadcast.contains(&(*k, *r, *v)) {
                        return result(
                            Property::AbvSuite,
                            false,
                            format!("justification: {v} delivered in aabc{k} round {r} but no non-faulty process broadcast it"),
                            Some(end),
                        );
                    }
                }
            }
        }
    }
    if quiescent {
        // Termination: every started round delivered something.
        for (p, k, r) in &started {
            let got = binvals.get(&(*k, *r)).and_then(|m| m.get(p)).is_some_and(|s| !s.is_empty());
            if !got {
                return result(
                    Property::AbvSuite,
                    false,
                    format!("termination: p{p} started aabc{k} round {r} but delivered nothing"),
                    Some(end),
                );
            }
        }
        // Uniformity: rounds every non-faulty process passed through before
        // any of them decided end with equal sets.
        let correct = tv.correct();
        for ((k, r), per) in &binvals {
            let settled = correct.iter().all(|p| decided_round.get(&(*p, *k)).is_some_and(|d| r < d));
            if !settled || per.len() != correct.len() {
                continue;
            }
            let sets: BTreeSet<&BTreeSet<u8>> = per.values().collect();
            if sets.len() > 1 {
                return result(
                    Property::AbvSuite,
                    false,
                    format!("uniformity: aabc{k} round {r} ends with sets {sets:?}"),
                    Some(end),
                );
            }
        }
    }
    let rounds = binvals.len();
    result(
        Property::AbvSuite,
        true,
        format!("{rounds} instance rounds checked"),
        None,
    )
}

fn aarb_suite(tv: &TraceView) -> Result<CheckResult, CheckError> {
    let h = &tv.header;
    let (end, outcome) = tv.end();
    let mut delivered: BTreeMap<u32, BTreeMap<u32, (usize, u64)>> = BTreeMap::new();
    for (i, p, e) in tv.node_events() {
        if let NodeEvent::AarbDeliver { k, value } = e {
            if tv.is_correct(p) {
                delivered.entry(*k).or_default().entry(p).or_insert((i, *value));
            }
        }
    }
    let sources: Vec<u32> = match h.protocol {
        Protocol::Aarb => vec![h.source],
        Protocol::Aabc => Vec::new(),
        _ => (0..h.n).collect(),
    };
    let need = (2 * h.h0).saturating_sub(h.n) as usize;
    let culprits = if tv.full() { Some(tv.culprits()) } else { None };
    for k in sources {
        let per = delivered.get(&k).cloned().unwrap_or_default();
        if tv.is_correct(k) {
            let v = h.proposals[k as usize];
            if let Some((p, (i, w))) = per.iter().find(|(_, (_, w))| *w != v) {
                return Ok(result(
                    Property::AarbSuite,
                    false,
                    format!("validity: p{p} delivered {w} from non-faulty source {k} that sent {v}"),
                    Some(*i),
                ));
            }
            if outcome == Some(Outcome::Quiescent) {
                if let Some(p) = tv.correct().into_iter().find(|p| !per.contains_key(p)) {
                    return Ok(result(
                        Property::AarbSuite,
                        false,
                        format!("termination: p{p} never delivered from non-faulty source {k}"),
                        Some(end),
                    ));
                }
            }
        }
        let values: BTreeSet<u64> = per.values().map(|(_, v)| *v).collect();
        if values.len() > 1 {
            let Some(culprits) = &culprits else {
                return Err(CheckError::NeedsFull(Property::AarbSuite));
            };
            let empty = BTreeSet::new();
            for p in tv.correct() {
                let c = culprits.get(&p).unwrap_or(&empty);
                if c.len() < need || !c.contains(&k) {
                    return Ok(result(
                        Property::AarbSuite,
                        false,
                        format!("accountability: aarb{k} delivered {values:?}; p{p} proves {c:?}, need {need} including the source"),
                        Some(end),
                    ));
                }
            }
        }
    }
    Ok(result(Property::AarbSuite, true, "reliable-broadcast properties hold", None))
}
