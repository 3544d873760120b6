//! Agents wrap one reduction sub-task each and carry its payload (the data
//! it holds plus its dependency table) from node to node.
//!
//! The agent is a sans-io state machine. The engine delivers probe replies,
//! rebind notices and acknowledgements; the agent answers with decisions and
//! outbound notices. Protocol per predicted failure:
//!
//! ```text
//! Idle -> Perceiving   probe the Moore neighborhood ("are you alive")
//!      -> Deciding     pick a healthy neighbor at random
//!      -> Migrating    spawn on the target, ship the payload
//!      -> Rebinding    tell every dependency where we are now
//!      -> Idle
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::sensor::{predict_failure, SensorReading};
use crate::taskgraph::{DepId, ReduceOp, ReductionNode, TaskId};
use crate::time::SimTime;
use crate::topology::{Coord, NodeStatus};

pub type AgentId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("no healthy neighbor to migrate to from {0}")]
    NoEscapeRoute(Coord),
    #[error("own node is not predicted to fail")]
    NotPredictedToFail,
    #[error("agent is {actual:?}, operation needs {expected}")]
    InvalidPhase { expected: &'static str, actual: AgentPhase },
    #[error("{to} is not adjacent to {from}")]
    NotAdjacent { from: Coord, to: Coord },
    #[error("{0} is not a dependency of this agent")]
    UnknownDependency(DepId),
    #[error("input for round {got} arrived while at round {current}")]
    StaleRound { current: u32, got: u32 },
    #[error("{0} already delivered its input for this round")]
    DuplicateInput(DepId),
    #[error("payload for {got} installed into agent for {expected}")]
    PayloadMismatch { expected: TaskId, got: TaskId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentPhase {
    Idle,
    Perceiving,
    Deciding,
    Migrating,
    Rebinding,
}

/// Where a dependency currently lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Grid(Coord),
    /// The external input feed, which is not placed on the grid.
    External,
}

/// Per-round reduction progress. This is what `carried_data` is made of.
/// Dependency-keyed maps travel as `[dep, value]` pairs because JSON object
/// keys must be strings.
mod dep_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::taskgraph::DepId;

    pub fn serialize<V: Serialize, S: Serializer>(map: &BTreeMap<DepId, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<DepId, V>, D::Error> {
        Ok(Vec::<(DepId, V)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkState {
    pub round: u32,
    #[serde(with = "dep_map")]
    pub received: BTreeMap<DepId, i64>,
    pub result: Option<i64>,
}

impl WorkState {
    /// Inputs held for the current round, or the computed value once done.
    pub fn values(&self) -> Vec<i64> {
        match self.result {
            Some(v) => vec![v],
            None => self.received.values().copied().collect(),
        }
    }
}

/// The payload shipped to the spawned process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationState {
    pub agent_id: AgentId,
    pub task_id: TaskId,
    pub work: WorkState,
    #[serde(with = "dep_map")]
    pub dependency_table: BTreeMap<DepId, Endpoint>,
}

impl MigrationState {
    pub fn carried_values(&self) -> usize {
        self.work.values().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReply {
    pub node: Coord,
    pub status: NodeStatus,
    pub residents: Vec<AgentId>,
    pub reading: SensorReading,
}

/// Everything an agent learned from one probe round. Replies that did not
/// arrive before the probe timeout are simply absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRound {
    pub own_reading: SensorReading,
    pub threshold: f64,
    pub replies: Vec<ProbeReply>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub alive_agents: BTreeSet<AgentId>,
    pub alive_nodes: BTreeSet<Coord>,
    pub own_sensor: SensorReading,
    pub neighbor_sensors: BTreeMap<Coord, SensorReading>,
    pub neighbor_status: BTreeMap<Coord, NodeStatus>,
    pub occupied: BTreeSet<Coord>,
    pub imminent_failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub agent_id: AgentId,
    pub task_id: TaskId,
    pub from: Coord,
    pub to: Coord,
    pub predicted_at: SimTime,
    pub start_time: SimTime,
    pub end_time: SimTime,
    pub rebind_count: usize,
}

impl MigrationRecord {
    /// Time to reinstate execution: spawn request to last rebind ack.
    pub fn reinstatement(&self) -> SimTime {
        self.end_time - self.start_time
    }
}

/// Sent to each dependency after the payload lands on the new node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebindNotice {
    pub from: TaskId,
    pub location: Coord,
    pub to: DepId,
    pub to_endpoint: Endpoint,
}

/// Inputs to the learning step.
#[derive(Debug, Clone, Copy)]
pub enum Knowledge<'a> {
    Rebind { from: TaskId, location: Coord },
    Probe(&'a Perception),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub agent_id: AgentId,
    pub task_id: TaskId,
    location: Coord,
    inputs: Vec<DepId>,
    output: Option<TaskId>,
    #[serde(with = "dep_map")]
    dependency_table: BTreeMap<DepId, Endpoint>,
    work: WorkState,
    phase: AgentPhase,
    known_alive: BTreeSet<Coord>,
    pending_acks: BTreeSet<DepId>,
    acked: BTreeSet<DepId>,
}

impl Agent {
    /// `locate` maps every node dependency to its current cell.
    pub fn new(agent_id: AgentId, task: &ReductionNode, location: Coord, locate: impl Fn(TaskId) -> Coord) -> Self {
        let dependency_table = task
            .dependencies()
            .map(|d| {
                let ep = match d {
                    DepId::Node(t) => Endpoint::Grid(locate(t)),
                    DepId::Feed(_) => Endpoint::External,
                };
                (d, ep)
            })
            .collect();
        Self {
            agent_id,
            task_id: task.id,
            location,
            inputs: task.input_deps.clone(),
            output: task.output_dep,
            dependency_table,
            work: WorkState::default(),
            phase: AgentPhase::Idle,
            known_alive: BTreeSet::new(),
            pending_acks: BTreeSet::new(),
            acked: BTreeSet::new(),
        }
    }

    pub fn location(&self) -> Coord {
        self.location
    }

    pub fn phase(&self) -> AgentPhase {
        self.phase
    }

    pub fn output(&self) -> Option<TaskId> {
        self.output
    }

    pub fn inputs(&self) -> &[DepId] {
        &self.inputs
    }

    pub fn dependency_table(&self) -> &BTreeMap<DepId, Endpoint> {
        &self.dependency_table
    }

    pub fn endpoint(&self, dep: DepId) -> Option<Endpoint> {
        self.dependency_table.get(&dep).copied()
    }

    pub fn work(&self) -> &WorkState {
        &self.work
    }

    pub fn carried_data(&self) -> Vec<i64> {
        self.work.values()
    }

    pub fn known_alive(&self) -> &BTreeSet<Coord> {
        &self.known_alive
    }

    fn expect_phase(&self, allowed: &[AgentPhase], expected: &'static str) -> Result<(), AgentError> {
        if allowed.contains(&self.phase) {
            Ok(())
        } else {
            Err(AgentError::InvalidPhase {
                expected,
                actual: self.phase,
            })
        }
    }

    /// Feeds one input value for `round`. Returns the combined value once
    /// every input dependency has reported for that round.
    pub fn accept_input(
        &mut self,
        round: u32,
        from: DepId,
        value: i64,
        op: ReduceOp,
    ) -> Result<Option<i64>, AgentError> {
        if !self.inputs.contains(&from) {
            return Err(AgentError::UnknownDependency(from));
        }
        if round < self.work.round {
            return Err(AgentError::StaleRound {
                current: self.work.round,
                got: round,
            });
        }
        if round > self.work.round {
            self.work = WorkState {
                round,
                ..WorkState::default()
            };
        }
        if self.work.received.contains_key(&from) {
            return Err(AgentError::DuplicateInput(from));
        }
        self.work.received.insert(from, value);
        if self.work.received.len() < self.inputs.len() {
            return Ok(None);
        }
        let ordered: Vec<i64> = self.inputs.iter().map(|d| self.work.received[d]).collect();
        let result = op.fold(&ordered).expect("inputs are never empty");
        self.work.result = Some(result);
        Ok(Some(result))
    }

    /// Checks whether the current round already holds an input from `from`.
    pub fn has_input(&self, round: u32, from: DepId) -> bool {
        self.work.round == round && self.work.received.contains_key(&from)
    }

    /// Phase transition into the probing step.
    pub fn start_perceiving(&mut self) -> Result<(), AgentError> {
        self.expect_phase(&[AgentPhase::Idle, AgentPhase::Perceiving], "Idle or Perceiving")?;
        self.phase = AgentPhase::Perceiving;
        Ok(())
    }

    /// Starts migrating towards `target`. Adjacency is enforced here; target
    /// health is checked again by the engine when the spawn completes. The
    /// agent keeps working until its payload is snapshotted for transfer.
    pub fn begin_migration(&mut self, target: Coord) -> Result<(), AgentError> {
        self.expect_phase(&[AgentPhase::Deciding], "Deciding")?;
        if !self.location.is_adjacent(target) {
            return Err(AgentError::NotAdjacent {
                from: self.location,
                to: target,
            });
        }
        self.phase = AgentPhase::Migrating;
        Ok(())
    }

    pub fn snapshot(&self) -> MigrationState {
        MigrationState {
            agent_id: self.agent_id,
            task_id: self.task_id,
            work: self.work.clone(),
            dependency_table: self.dependency_table.clone(),
        }
    }

    /// Reinstates the payload on the spawned process at `target`.
    pub fn install(&mut self, state: MigrationState, target: Coord) -> Result<(), AgentError> {
        self.expect_phase(&[AgentPhase::Migrating], "Migrating")?;
        if state.task_id != self.task_id {
            return Err(AgentError::PayloadMismatch {
                expected: self.task_id,
                got: state.task_id,
            });
        }
        self.work = state.work;
        self.dependency_table = state.dependency_table;
        self.location = target;
        self.phase = AgentPhase::Rebinding;
        self.pending_acks = self.dependency_table.keys().copied().collect();
        self.acked.clear();
        Ok(())
    }

    /// Rebind notices for every entry of the dependency table.
    pub fn notify_dependents(&self, new_location: Coord) -> Vec<RebindNotice> {
        self.dependency_table
            .iter()
            .map(|(&dep, &ep)| RebindNotice {
                from: self.task_id,
                location: new_location,
                to: dep,
                to_endpoint: ep,
            })
            .collect()
    }

    /// Records an acknowledgement. Duplicates are ignored. Returns true once
    /// every dependency has acknowledged.
    pub fn acknowledge(&mut self, dep: DepId) -> Result<bool, AgentError> {
        self.expect_phase(&[AgentPhase::Rebinding], "Rebinding")?;
        if !self.dependency_table.contains_key(&dep) {
            return Err(AgentError::UnknownDependency(dep));
        }
        if self.pending_acks.remove(&dep) {
            self.acked.insert(dep);
        }
        Ok(self.pending_acks.is_empty())
    }

    pub fn is_acked(&self, dep: DepId) -> bool {
        self.acked.contains(&dep)
    }

    pub fn ack_count(&self) -> usize {
        self.acked.len()
    }

    /// Leaves the rebinding phase and reports how many dependencies answered.
    pub fn finish_rebinding(&mut self) -> Result<usize, AgentError> {
        self.expect_phase(&[AgentPhase::Rebinding], "Rebinding")?;
        self.phase = AgentPhase::Idle;
        Ok(std::mem::take(&mut self.acked).len())
    }

    /// Learning step: record a dependency's new home or a fresh view of the
    /// neighborhood.
    pub fn update_knowledge(&mut self, event: Knowledge<'_>) -> Result<(), AgentError> {
        match event {
            Knowledge::Rebind { from, location } => {
                let entry = self
                    .dependency_table
                    .get_mut(&DepId::Node(from))
                    .ok_or(AgentError::UnknownDependency(DepId::Node(from)))?;
                *entry = Endpoint::Grid(location);
            }
            Knowledge::Probe(p) => {
                self.known_alive = p.alive_nodes.clone();
            }
        }
        Ok(())
    }
}

/// Builds the agent's view of its surroundings from one probe round.
pub fn perceive(agent: &mut Agent, round: &ProbeRound) -> Result<Perception, AgentError> {
    agent.start_perceiving()?;
    let mut p = Perception {
        alive_agents: BTreeSet::new(),
        alive_nodes: BTreeSet::new(),
        own_sensor: round.own_reading,
        neighbor_sensors: BTreeMap::new(),
        neighbor_status: BTreeMap::new(),
        occupied: BTreeSet::new(),
        imminent_failure: predict_failure(&round.own_reading, round.threshold),
    };
    for reply in &round.replies {
        if !agent.location.is_adjacent(reply.node) || reply.status == NodeStatus::Failed {
            continue;
        }
        p.alive_nodes.insert(reply.node);
        p.alive_agents.extend(reply.residents.iter().copied());
        p.neighbor_sensors.insert(reply.node, reply.reading);
        p.neighbor_status.insert(reply.node, reply.status);
        if !reply.residents.is_empty() {
            p.occupied.insert(reply.node);
        }
    }
    agent.update_knowledge(Knowledge::Probe(&p))?;
    Ok(p)
}

/// Picks the migration target: uniformly at random among healthy, alive
/// neighbors, trying unoccupied ones first. Neighbor temperatures are recorded
/// in the perception but not used to rank candidates.
pub fn decide_target<R: Rng + ?Sized>(
    agent: &mut Agent,
    perception: &Perception,
    rng: &mut R,
) -> Result<Coord, AgentError> {
    agent.expect_phase(&[AgentPhase::Perceiving], "Perceiving")?;
    if !perception.imminent_failure {
        return Err(AgentError::NotPredictedToFail);
    }
    let healthy: Vec<Coord> = perception
        .alive_nodes
        .iter()
        .copied()
        .filter(|c| perception.neighbor_status.get(c) == Some(&NodeStatus::Healthy))
        .collect();
    let free: Vec<Coord> = healthy
        .iter()
        .copied()
        .filter(|c| !perception.occupied.contains(c))
        .collect();
    let pool = if free.is_empty() { &healthy } else { &free };
    let target = *pool.choose(rng).ok_or(AgentError::NoEscapeRoute(agent.location))?;
    agent.phase = AgentPhase::Deciding;
    Ok(target)
}
