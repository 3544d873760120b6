//! Per-trial event trace, written as JSON lines: `{"time", "kind", "payload"}`.

use std::io::{self, BufRead, Write};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use super::config::ExperimentConfig;
use super::FailureReason;
use crate::agents::{MigrationRecord, WorkState};
use crate::taskgraph::{DepId, TaskGraph, TaskId};
use crate::time::SimTime;
use crate::topology::{Coord, GridTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReading {
    pub node: Coord,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum TraceEvent {
    TrialHeader {
        trial_id: usize,
        seed: u64,
        target: Option<TaskId>,
        topology: GridTopology,
        task_graph: TaskGraph,
        /// Cell of each task at time zero, indexed by task id - 1.
        placement: Vec<Coord>,
        config: Box<ExperimentConfig>,
    },
    SensorTick {
        readings: Vec<TickReading>,
    },
    FaultRampStart {
        target: TaskId,
        node: Coord,
        rate: f64,
    },
    Prediction {
        node: Coord,
        temperature: f64,
        hard_fail_at: SimTime,
    },
    MessageSend {
        id: u64,
        tag: u8,
        src: Coord,
        dst: Coord,
        to_task: Option<TaskId>,
        round: u32,
    },
    MessageDeliver {
        id: u64,
        tag: u8,
        hop_from: Coord,
        at: Coord,
        last_hop: bool,
    },
    MessageDropped {
        id: u64,
        tag: u8,
        at: Coord,
        reason: String,
    },
    Perception {
        task: TaskId,
        alive_nodes: Vec<Coord>,
        target: Option<Coord>,
    },
    SpawnComplete {
        task: TaskId,
        at: Coord,
    },
    Snapshot {
        task: TaskId,
        from: Coord,
        to: Coord,
        data: WorkState,
    },
    OwnershipTransfer {
        task: TaskId,
        from: Coord,
        to: Coord,
        data: WorkState,
    },
    RebindUpdate {
        task: TaskId,
        dep: TaskId,
        location: Coord,
    },
    RebindRetry {
        task: TaskId,
        dep: DepId,
    },
    MigrationComplete(MigrationRecord),
    Compute {
        task: TaskId,
        round: u32,
        at: Coord,
        value: i64,
    },
    NodeHardFail {
        node: Coord,
    },
    RoundStart {
        round: u32,
        feed: Vec<i64>,
        expected: i64,
    },
    RoundEnd {
        round: u32,
        value: i64,
    },
    Fault {
        reason: String,
        detail: String,
    },
    TrialEnd {
        survived: bool,
        failure: Option<FailureReason>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub time: SimTime,
    #[serde(flatten)]
    pub event: TraceEvent,
}

// Flattened deserialization buffers the payload and loses integer map keys,
// so the event is decoded from a plain JSON value instead.
impl<'de> Deserialize<'de> for TraceEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut v = serde_json::Value::deserialize(d)?;
        let time = v
            .as_object_mut()
            .and_then(|m| m.remove("time"))
            .ok_or_else(|| D::Error::missing_field("time"))?;
        Ok(Self {
            time: SimTime::deserialize(time).map_err(D::Error::custom)?,
            event: TraceEvent::deserialize(v).map_err(D::Error::custom)?,
        })
    }
}

pub fn write_jsonl<W: Write>(mut out: W, entries: &[TraceEntry]) -> io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Vec<TraceEntry>> {
    input
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| l.and_then(|s| serde_json::from_str(&s).map_err(io::Error::from)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_shape() {
        let e = TraceEntry {
            time: SimTime::from_ms(12.5),
            event: TraceEvent::NodeHardFail { node: Coord::new(1, 2) },
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"time":12.5,"kind":"NodeHardFail","payload":{"node":{"row":1,"col":2}}}"#
        );
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[e.clone(), e.clone()]).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![e.clone(), e]);
    }
}
