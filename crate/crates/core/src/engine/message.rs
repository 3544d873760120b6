//! Wire messages exchanged between processes on the grid.
//!
//! | tag | message      |
//! |-----|--------------|
//! | 1   | probe        |
//! | 2   | probe-ack    |
//! | 3   | spawn        |
//! | 4   | transfer     |
//! | 5   | rebind       |
//! | 6   | rebind-ack   |
//! | 7   | data         |

use serde::{Deserialize, Serialize};

use crate::agents::{AgentId, MigrationState, ProbeReply};
use crate::taskgraph::{DepId, TaskId};
use crate::time::SimTime;
use crate::topology::Coord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Probe { from: TaskId },
    ProbeAck(ProbeReply),
    Spawn { task: TaskId, agent: AgentId },
    Transfer(MigrationState),
    Rebind { from: TaskId, location: Coord },
    RebindAck { from: DepId },
    Data { round: u32, from: DepId, value: i64 },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Probe { .. } => 1,
            Message::ProbeAck(_) => 2,
            Message::Spawn { .. } => 3,
            Message::Transfer(_) => 4,
            Message::Rebind { .. } => 5,
            Message::RebindAck { .. } => 6,
            Message::Data { .. } => 7,
        }
    }
}

/// A message in flight. `at` is the cell it has reached so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub id: u64,
    pub src: Coord,
    pub dst: Coord,
    pub at: Coord,
    /// Addressed task; `None` for node-level traffic such as probes and spawns.
    pub to_task: Option<TaskId>,
    pub sent_at: SimTime,
    pub msg: Message,
}
