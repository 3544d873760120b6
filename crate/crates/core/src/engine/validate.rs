//! Offline protocol checker over a finished trial trace.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::trace::{TraceEntry, TraceEvent};
use super::FailureReason;
use crate::agents::WorkState;
use crate::taskgraph::TaskId;
use crate::time::SimTime;
use crate::topology::Coord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Rule {
    /// Time went backwards in the trace.
    Causality,
    /// A task had zero or two owners, or computed away from its owner.
    ExactlyOnce,
    /// A migration or a message hop left the Moore neighborhood.
    Adjacency,
    /// The engine reported a fault such as a policy violation.
    EngineFault,
    /// Installed state differs from the snapshot that was sent.
    StateMismatch,
    /// A survived trial lost or corrupted a round.
    DataLoss,
    /// Something was still addressed to a coordinate a task had left.
    Closure,
    GraceWindow,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub time: SimTime,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.rule, self.time, self.detail)
    }
}

#[derive(Default)]
struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn flag(&mut self, time: SimTime, rule: Rule, detail: String) {
        self.out.push(Violation { time, rule, detail });
    }
}

/// Checks one trial trace and returns every violation found.
pub fn validate_trace(trace: &[TraceEntry]) -> Vec<Violation> {
    let mut c = Checker::default();
    let Some(TraceEntry {
        event: TraceEvent::TrialHeader { placement, config, .. },
        ..
    }) = trace.first()
    else {
        c.flag(
            SimTime::ZERO,
            Rule::Malformed,
            "trace does not start with a header".into(),
        );
        return c.out;
    };

    let mut owner: BTreeMap<TaskId, Coord> = placement
        .iter()
        .enumerate()
        .map(|(i, &at)| (TaskId(i as u32 + 1), at))
        .collect();
    let mut frozen: BTreeMap<TaskId, WorkState> = BTreeMap::new();
    let mut vacated: BTreeMap<TaskId, Vec<Coord>> = BTreeMap::new();
    let mut predicted: BTreeMap<Coord, SimTime> = BTreeMap::new();
    let mut expected: BTreeMap<u32, i64> = BTreeMap::new();
    let mut results: BTreeMap<u32, i64> = BTreeMap::new();
    let mut migration_ends: Vec<(TaskId, SimTime, SimTime)> = Vec::new();
    let mut last = SimTime::ZERO;
    let mut end: Option<(bool, Option<FailureReason>)> = None;

    for e in &trace[1..] {
        let t = e.time;
        if t < last {
            c.flag(t, Rule::Causality, format!("trace went back from {last}"));
        }
        last = t;
        match &e.event {
            TraceEvent::Prediction { node, .. } => {
                predicted.entry(*node).or_insert(t);
            }
            TraceEvent::MessageSend {
                id,
                to_task: Some(task),
                dst,
                ..
            } => {
                if vacated.get(task).is_some_and(|v| v.contains(dst)) {
                    c.flag(
                        t,
                        Rule::Closure,
                        format!("message {id} addressed to {task} at vacated {dst}"),
                    );
                }
            }
            TraceEvent::MessageDeliver { id, hop_from, at, .. } => {
                if hop_from != at && !hop_from.is_adjacent(*at) {
                    c.flag(t, Rule::Adjacency, format!("message {id} hopped {hop_from} -> {at}"));
                }
            }
            TraceEvent::Snapshot { task, from, data, .. } => {
                if owner.get(task) != Some(from) {
                    c.flag(
                        t,
                        Rule::ExactlyOnce,
                        format!("{task} snapshotted at {from} which does not own it"),
                    );
                }
                frozen.insert(*task, data.clone());
            }
            TraceEvent::OwnershipTransfer { task, from, to, data } => {
                match frozen.remove(task) {
                    None => c.flag(t, Rule::ExactlyOnce, format!("{task} moved without a snapshot")),
                    Some(snap) if snap != *data => c.flag(
                        t,
                        Rule::StateMismatch,
                        format!("{task} installed state differs from its snapshot"),
                    ),
                    Some(_) => {}
                }
                if owner.get(task) != Some(from) {
                    c.flag(
                        t,
                        Rule::ExactlyOnce,
                        format!("{task} moved from {from} which did not own it"),
                    );
                }
                if !from.is_adjacent(*to) {
                    c.flag(t, Rule::Adjacency, format!("{task} migrated {from} -> {to}"));
                }
                owner.insert(*task, *to);
            }
            TraceEvent::MigrationComplete(r) => {
                if !r.from.is_adjacent(r.to) {
                    c.flag(
                        t,
                        Rule::Adjacency,
                        format!("{} recorded {} -> {}", r.task_id, r.from, r.to),
                    );
                }
                if owner.get(&r.task_id) != Some(&r.to) {
                    c.flag(
                        t,
                        Rule::ExactlyOnce,
                        format!("{} completed at {} but is owned elsewhere", r.task_id, r.to),
                    );
                }
                vacated.entry(r.task_id).or_default().push(r.from);
                let since = predicted.get(&r.from).copied().unwrap_or(r.predicted_at);
                migration_ends.push((r.task_id, since, r.end_time));
            }
            TraceEvent::Compute { task, at, round, .. } => {
                if frozen.contains_key(task) {
                    c.flag(
                        t,
                        Rule::ExactlyOnce,
                        format!("{task} computed round {round} while in transit"),
                    );
                }
                if owner.get(task) != Some(at) {
                    c.flag(
                        t,
                        Rule::ExactlyOnce,
                        format!("{task} computed at {at} which does not own it"),
                    );
                }
            }
            TraceEvent::RoundStart {
                round, expected: want, ..
            } => {
                expected.insert(*round, *want);
            }
            TraceEvent::RoundEnd { round, value } => {
                results.insert(*round, *value);
            }
            TraceEvent::Fault { reason, detail } => {
                c.flag(t, Rule::EngineFault, format!("{reason}: {detail}"));
            }
            TraceEvent::TrialEnd { survived, failure } => {
                end = Some((*survived, failure.clone()));
            }
            _ => {}
        }
    }

    match end {
        None => c.flag(last, Rule::Malformed, "trace has no end marker".into()),
        Some((true, failure)) => {
            if failure.is_some() {
                c.flag(last, Rule::Malformed, "survived trial carries a failure reason".into());
            }
            if results.len() != config.rounds as usize {
                c.flag(
                    last,
                    Rule::DataLoss,
                    format!("{} of {} rounds finished", results.len(), config.rounds),
                );
            }
            for (round, value) in &results {
                if expected.get(round) != Some(value) {
                    c.flag(
                        last,
                        Rule::DataLoss,
                        format!("round {round} gave {value}, expected {:?}", expected.get(round)),
                    );
                }
            }
            let grace = SimTime::from_ms(config.grace_window_ms);
            for (task, since, done) in migration_ends {
                if done.saturating_sub(since) > grace {
                    c.flag(
                        done,
                        Rule::GraceWindow,
                        format!("{task} finished after the grace window"),
                    );
                }
            }
        }
        Some((false, None)) => c.flag(last, Rule::Malformed, "failed trial without a reason".into()),
        Some((false, Some(_))) => {}
    }
    c.out
}
