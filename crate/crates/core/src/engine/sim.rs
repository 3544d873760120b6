//! Single-trial discrete-event loop.
//!
//! Events are processed in strict `(time, insertion sequence)` order and may
//! only schedule events at or after the current time, so a trial is a pure
//! function of its configuration, schedule and seed.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, FaultEntry, FaultSchedule};
use super::message::{Envelope, Message};
use super::sensor::{predict_failure, sample_temperature, NodeRamp, SensorReading};
use super::trace::{TickReading, TraceEntry, TraceEvent};
use super::{EngineError, FailureReason, TrialOutcome};
use crate::agents::{
    decide_target, perceive, Agent, AgentError, Endpoint, Knowledge, MigrationRecord, ProbeReply, ProbeRound,
    RebindNotice,
};
use crate::taskgraph::{DepId, TaskGraph, TaskId};
use crate::time::SimTime;
use crate::topology::{build_grid, Coord, GridTopology, NodeStatus};

/// A finished trial together with its full event trace.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub outcome: TrialOutcome,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug)]
enum Event {
    SensorTick,
    MessageDeliver { env: Envelope, hop_from: Coord },
    SpawnComplete { task: TaskId, at: Coord },
    NodeHardFail { node: Coord },
    RoundStart { round: u32 },
    RoundEnd { round: u32, value: i64 },
    ProbeTimeout { task: TaskId },
    AckDeadline { task: TaskId, dep: DepId, attempt: u8 },
    RebindDone { task: TaskId },
}

struct Scheduled {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

struct Migration {
    from: Coord,
    to: Option<Coord>,
    predicted_at: SimTime,
    trigger: SensorReading,
    start: Option<SimTime>,
    replies: Vec<ProbeReply>,
    installed: bool,
    busy_until: SimTime,
}

struct PendingSpawn {
    at: Coord,
    buffer: Vec<Envelope>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent random stream `salt` for a trial seed.
pub(crate) fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(salt)))
}

const STREAM_SENSOR: u64 = 1;
const STREAM_JITTER: u64 = 2;
const STREAM_DECIDE: u64 = 3;
const STREAM_FEED: u64 = 4;

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

struct Sim<'a> {
    cfg: &'a ExperimentConfig,
    graph: &'a TaskGraph,
    grid: GridTopology,
    now: SimTime,
    horizon: SimTime,
    seq: u64,
    next_msg: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,

    agents: BTreeMap<TaskId, Agent>,
    migrations: BTreeMap<TaskId, Migration>,
    spawned: BTreeMap<TaskId, PendingSpawn>,
    forwarders: BTreeMap<(Coord, TaskId), Coord>,
    feed_loc: BTreeMap<u32, Coord>,
    last_reading: BTreeMap<Coord, SensorReading>,
    pending_faults: VecDeque<FaultEntry>,
    ramps: Vec<NodeRamp>,

    round: u32,
    rounds_done: bool,
    round_results: Vec<i64>,
    expected: Vec<i64>,
    records: Vec<MigrationRecord>,
    failure: Option<FailureReason>,
    trace: Vec<TraceEntry>,

    sensor_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    decide_rng: ChaCha8Rng,
    feed_rng: ChaCha8Rng,
}

impl<'a> Sim<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        graph: &'a TaskGraph,
        rng_seed: u64,
        schedule: &FaultSchedule,
    ) -> Result<(Self, Vec<Coord>), EngineError> {
        let mut grid = build_grid(cfg.grid.capacity(), cfg.grid.rows, cfg.grid.cols)
            .map_err(|e| EngineError::ConfigInvalid(e.to_string()))?;
        for &c in &cfg.pre_failed {
            grid.set_status(c, NodeStatus::Failed)
                .map_err(|e| EngineError::ConfigInvalid(e.to_string()))?;
        }
        let placement = cfg.placement_for(graph);
        let locate = |t: TaskId| placement[t.0 as usize - 1];
        let agents = graph
            .nodes()
            .map(|n| (n.id, Agent::new(n.id.0, n, locate(n.id), locate)))
            .collect();
        let feed_loc = graph
            .leaves()
            .iter()
            .enumerate()
            .map(|(i, &leaf)| (i as u32 + 1, locate(leaf)))
            .collect();
        let mut entries = schedule.entries.clone();
        entries.sort_by(|a, b| a.ramp_start_ms.total_cmp(&b.ramp_start_ms));
        let last_ramp = entries.last().map_or(0.0, |e| e.ramp_start_ms);
        let horizon = SimTime::from_ms(
            last_ramp + 100_000.0 + f64::from(cfg.rounds) * (cfg.round_gap_ms + 1000.0) + cfg.grace_window_ms,
        );
        let sim = Sim {
            cfg,
            graph,
            grid,
            now: SimTime::ZERO,
            horizon,
            seq: 0,
            next_msg: 0,
            queue: BinaryHeap::new(),
            agents,
            migrations: BTreeMap::new(),
            spawned: BTreeMap::new(),
            forwarders: BTreeMap::new(),
            feed_loc,
            last_reading: BTreeMap::new(),
            pending_faults: entries.into(),
            ramps: Vec::new(),
            round: 0,
            rounds_done: false,
            round_results: Vec::new(),
            expected: Vec::new(),
            records: Vec::new(),
            failure: None,
            trace: Vec::new(),
            sensor_rng: stream(rng_seed, STREAM_SENSOR),
            jitter_rng: stream(rng_seed, STREAM_JITTER),
            decide_rng: stream(rng_seed, STREAM_DECIDE),
            feed_rng: stream(rng_seed, STREAM_FEED),
        };
        Ok((sim, placement))
    }

    fn schedule(&mut self, time: SimTime, event: Event) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            time,
            seq: self.seq,
            event,
        }));
    }

    fn log(&mut self, event: TraceEvent) {
        self.trace.push(TraceEntry { time: self.now, event });
    }

    fn fail(&mut self, reason: FailureReason) {
        if self.failure.is_none() {
            self.failure = Some(reason);
        }
    }

    fn fault(&mut self, reason: &str, detail: String) {
        self.log(TraceEvent::Fault {
            reason: reason.to_string(),
            detail,
        });
    }

    fn jittered(&mut self, base_ms: f64) -> SimTime {
        if base_ms <= 0.0 {
            return SimTime::ZERO;
        }
        let j = self.cfg.costs.jitter_pct / 100.0;
        let factor = if j > 0.0 {
            1.0 + self.jitter_rng.random_range(-j..=j)
        } else {
            1.0
        };
        SimTime::from_ms(base_ms * factor)
    }

    fn status(&self, c: Coord) -> NodeStatus {
        self.grid.status(c).unwrap_or(NodeStatus::Failed)
    }

    // ---- messaging -------------------------------------------------------

    fn send(&mut self, src: Coord, dst: Coord, to_task: Option<TaskId>, msg: Message, extra: SimTime) {
        self.next_msg += 1;
        let id = self.next_msg;
        self.log(TraceEvent::MessageSend {
            id,
            tag: msg.tag(),
            src,
            dst,
            to_task,
            round: self.round,
        });
        let env = Envelope {
            id,
            src,
            dst,
            at: src,
            to_task,
            sent_at: self.now,
            msg,
        };
        if src == dst {
            self.schedule(self.now + extra, Event::MessageDeliver { env, hop_from: src });
        } else {
            self.relay(env, extra);
        }
    }

    /// Moves `env` one hop closer to its destination.
    fn relay(&mut self, mut env: Envelope, extra: SimTime) {
        let dst = env.dst;
        let next = self
            .grid
            .next_hop(env.at, dst, |c| c != dst && self.status(c) == NodeStatus::Failed);
        let Some(next) = next else {
            self.log(TraceEvent::MessageDropped {
                id: env.id,
                tag: env.msg.tag(),
                at: env.at,
                reason: "no route".into(),
            });
            return;
        };
        self.hop(env.at, next, &mut env, extra);
    }

    /// Sends over a single link. Only adjacent cells may talk to each other.
    fn hop(&mut self, from: Coord, to: Coord, env: &mut Envelope, extra: SimTime) {
        if !from.is_adjacent(to) {
            self.fault(
                "PolicyViolation",
                format!("message {} tried to hop {from} -> {to}", env.id),
            );
            return;
        }
        let latency = self.jittered(self.cfg.costs.hop_latency_ms);
        env.at = to;
        let env = env.clone();
        self.schedule(
            self.now + extra + latency,
            Event::MessageDeliver { env, hop_from: from },
        );
    }

    fn on_deliver(&mut self, env: Envelope, hop_from: Coord) {
        let at = env.at;
        self.log(TraceEvent::MessageDeliver {
            id: env.id,
            tag: env.msg.tag(),
            hop_from,
            at,
            last_hop: at == env.dst,
        });
        if self.status(at) == NodeStatus::Failed {
            self.log(TraceEvent::MessageDropped {
                id: env.id,
                tag: env.msg.tag(),
                at,
                reason: "node failed".into(),
            });
            return;
        }
        if at != env.dst {
            self.relay(env, SimTime::ZERO);
            return;
        }
        match env.msg {
            Message::Probe { from } => self.answer_probe(at, env.src, from),
            Message::Spawn { task, .. } => {
                self.spawned.insert(task, PendingSpawn { at, buffer: Vec::new() });
                let cost = self.jittered(self.cfg.costs.spawn_ms);
                self.schedule(self.now + cost, Event::SpawnComplete { task, at });
            }
            Message::Transfer(_) => self.install(env),
            _ => self.route_to_task(env),
        }
    }

    fn residents(&self, c: Coord) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .agents
            .values()
            .filter(|a| a.location() == c)
            .map(|a| a.agent_id)
            .chain(
                self.spawned
                    .iter()
                    .filter(|(_, p)| p.at == c)
                    .map(|(t, _)| self.agents[t].agent_id),
            )
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn answer_probe(&mut self, at: Coord, reply_to: Coord, prober: TaskId) {
        let reading = self.last_reading.get(&at).copied().unwrap_or(SensorReading {
            node: at,
            temperature: self.cfg.sensor.baseline,
            timestamp: self.now,
        });
        let reply = ProbeReply {
            node: at,
            status: self.status(at),
            residents: self.residents(at),
            reading,
        };
        self.send(at, reply_to, Some(prober), Message::ProbeAck(reply), SimTime::ZERO);
    }

    fn route_to_task(&mut self, mut env: Envelope) {
        let Some(task) = env.to_task else {
            self.fault("Misdelivered", format!("message {} has no recipient", env.id));
            return;
        };
        if let Some(&next) = self.forwarders.get(&(env.at, task)) {
            env.dst = next;
            self.relay(env, SimTime::ZERO);
        } else if self.agents.get(&task).map(Agent::location) == Some(env.at) {
            self.owner_handle(task, env);
        } else if let Some(p) = self.spawned.get_mut(&task).filter(|p| p.at == env.at) {
            p.buffer.push(env);
        } else {
            self.fault(
                "Misdelivered",
                format!(
                    "message {} for {task} reached {} where it does not live",
                    env.id, env.at
                ),
            );
        }
    }

    fn owner_handle(&mut self, task: TaskId, env: Envelope) {
        let at = env.at;
        match env.msg {
            Message::ProbeAck(reply) => {
                let perceiving = self.agents[&task].phase() == crate::agents::AgentPhase::Perceiving;
                if let Some(m) = self.migrations.get_mut(&task).filter(|_| perceiving) {
                    m.replies.push(reply);
                }
            }
            Message::Rebind { from, location } => {
                let agent = self.agents.get_mut(&task).expect("owner exists");
                match agent.update_knowledge(Knowledge::Rebind { from, location }) {
                    Ok(()) => {
                        self.log(TraceEvent::RebindUpdate {
                            task,
                            dep: from,
                            location,
                        });
                        self.send(
                            at,
                            location,
                            Some(from),
                            Message::RebindAck {
                                from: DepId::Node(task),
                            },
                            SimTime::ZERO,
                        );
                    }
                    Err(e) => self.protocol_error(task, e),
                }
            }
            Message::RebindAck { from } => self.on_ack(task, from),
            Message::Data { round, from, value } => self.on_data(task, at, round, from, value),
            other => self.fault(
                "Misdelivered",
                format!("unexpected tag {} for owner of {task}", other.tag()),
            ),
        }
    }

    fn protocol_error(&mut self, task: TaskId, e: AgentError) {
        self.fault("ProtocolError", format!("{task}: {e}"));
        self.fail(FailureReason::ProtocolError {
            detail: format!("{task}: {e}"),
        });
    }

    fn on_data(&mut self, task: TaskId, at: Coord, round: u32, from: DepId, value: i64) {
        let op = self.graph.operator();
        let agent = self.agents.get_mut(&task).expect("owner exists");
        match agent.accept_input(round, from, value, op) {
            Ok(None) => {}
            Ok(Some(v)) => {
                let output = agent.output();
                let endpoint = output.and_then(|o| agent.endpoint(DepId::Node(o)));
                self.log(TraceEvent::Compute {
                    task,
                    round,
                    at,
                    value: v,
                });
                match (output, endpoint) {
                    (None, _) => self.schedule(self.now, Event::RoundEnd { round, value: v }),
                    (Some(out), Some(Endpoint::Grid(c))) => self.send(
                        at,
                        c,
                        Some(out),
                        Message::Data {
                            round,
                            from: DepId::Node(task),
                            value: v,
                        },
                        SimTime::ZERO,
                    ),
                    (Some(out), _) => self.protocol_error(task, AgentError::UnknownDependency(DepId::Node(out))),
                }
            }
            Err(e) => self.protocol_error(task, e),
        }
    }

    // ---- sensing and prediction -------------------------------------------

    fn on_tick(&mut self) {
        while self
            .pending_faults
            .front()
            .is_some_and(|f| SimTime::from_ms(f.ramp_start_ms) <= self.now)
        {
            let f = self.pending_faults.pop_front().expect("checked above");
            let node = self.agents[&f.target].location();
            let rate = f.ramp_rate.unwrap_or(self.cfg.sensor.ramp_rate);
            self.ramps.push(NodeRamp {
                node,
                start: SimTime::from_ms(f.ramp_start_ms),
                rate,
            });
            self.log(TraceEvent::FaultRampStart {
                target: f.target,
                node,
                rate,
            });
        }

        let coords: Vec<Coord> = self
            .grid
            .coords()
            .filter(|&c| self.status(c) != NodeStatus::Failed)
            .collect();
        let mut readings = Vec::with_capacity(coords.len());
        for c in coords {
            let r = sample_temperature(c, self.now, &self.ramps, &self.cfg.sensor, &mut self.sensor_rng);
            self.last_reading.insert(c, r);
            readings.push(r);
        }
        self.log(TraceEvent::SensorTick {
            readings: readings
                .iter()
                .map(|r| TickReading {
                    node: r.node,
                    temperature: round3(r.temperature),
                })
                .collect(),
        });
        for r in readings {
            if self.status(r.node) == NodeStatus::Healthy && predict_failure(&r, self.cfg.threshold) {
                self.on_prediction(r);
            }
        }
        if !self.finished() {
            let next = self.now + SimTime::from_ms(self.cfg.sensor.tick_ms);
            self.schedule(next, Event::SensorTick);
        }
    }

    fn finished(&self) -> bool {
        self.failure.is_some()
            || (self.rounds_done
                && self.migrations.is_empty()
                && self.pending_faults.is_empty()
                && self.ramps.iter().all(|r| self.status(r.node) != NodeStatus::Healthy))
    }

    fn on_prediction(&mut self, reading: SensorReading) {
        let node = reading.node;
        self.grid
            .set_status(node, NodeStatus::PredictedFailing)
            .expect("healthy nodes may become predicted-failing");
        let hard_fail_at = self.now + SimTime::from_ms(self.cfg.grace_window_ms);
        self.schedule(hard_fail_at, Event::NodeHardFail { node });
        self.log(TraceEvent::Prediction {
            node,
            temperature: round3(reading.temperature),
            hard_fail_at,
        });

        let residents: Vec<TaskId> = self
            .agents
            .values()
            .filter(|a| a.location() == node && !self.migrations.contains_key(&a.task_id))
            .map(|a| a.task_id)
            .collect();
        let neighbors = self.grid.neighbors(node).expect("node is on the grid");
        for task in residents {
            if let Err(e) = self.agents.get_mut(&task).expect("resident").start_perceiving() {
                self.fault("ProtocolError", format!("{task} cannot react to prediction: {e}"));
                continue;
            }
            self.migrations.insert(
                task,
                Migration {
                    from: node,
                    to: None,
                    predicted_at: self.now,
                    trigger: reading,
                    start: None,
                    replies: Vec::new(),
                    installed: false,
                    busy_until: self.now,
                },
            );
            for &c in &neighbors {
                self.send(node, c, None, Message::Probe { from: task }, SimTime::ZERO);
            }
            let deadline = self.now + SimTime::from_ms(self.cfg.probe_timeout_ms);
            self.schedule(deadline, Event::ProbeTimeout { task });
        }
    }

    // ---- migration -------------------------------------------------------

    fn on_probe_timeout(&mut self, task: TaskId) {
        let Some(m) = self.migrations.get_mut(&task) else {
            return;
        };
        let round = ProbeRound {
            own_reading: m.trigger,
            threshold: self.cfg.threshold,
            replies: std::mem::take(&mut m.replies),
        };
        let from = m.from;
        let agent = self.agents.get_mut(&task).expect("agent exists");
        let decision = perceive(agent, &round).and_then(|p| {
            let alive: Vec<Coord> = p.alive_nodes.iter().copied().collect();
            decide_target(agent, &p, &mut self.decide_rng).map(|t| (alive, t))
        });
        match decision {
            Ok((alive_nodes, target)) => {
                if let Err(e) = agent.begin_migration(target) {
                    self.protocol_error(task, e);
                    return;
                }
                let agent_id = agent.agent_id;
                self.log(TraceEvent::Perception {
                    task,
                    alive_nodes,
                    target: Some(target),
                });
                let m = self.migrations.get_mut(&task).expect("checked above");
                m.to = Some(target);
                m.start = Some(self.now);
                self.send(
                    from,
                    target,
                    None,
                    Message::Spawn { task, agent: agent_id },
                    SimTime::ZERO,
                );
            }
            Err(AgentError::NoEscapeRoute(at)) => {
                self.log(TraceEvent::Perception {
                    task,
                    alive_nodes: Vec::new(),
                    target: None,
                });
                self.fail(FailureReason::NoEscapeRoute { task, at });
            }
            Err(e) => self.protocol_error(task, e),
        }
    }

    fn on_spawn_complete(&mut self, task: TaskId, at: Coord) {
        if self.status(at) != NodeStatus::Healthy {
            self.fail(FailureReason::SpawnFailed { task, at });
            return;
        }
        self.log(TraceEvent::SpawnComplete { task, at });
        let Some(from) = self.migrations.get(&task).map(|m| m.from) else {
            return;
        };
        let state = self.agents[&task].snapshot();
        self.log(TraceEvent::Snapshot {
            task,
            from,
            to: at,
            data: state.work.clone(),
        });
        self.forwarders.insert((from, task), at);
        let cost = self.jittered(self.cfg.costs.transfer_ms_per_value * state.carried_values() as f64);
        self.send(from, at, Some(task), Message::Transfer(state), cost);
    }

    fn install(&mut self, env: Envelope) {
        let Message::Transfer(state) = env.msg else {
            unreachable!("install only takes transfers")
        };
        let task = state.task_id;
        let at = env.at;
        let Some(pending) = self.spawned.remove(&task).filter(|p| p.at == at) else {
            self.fault(
                "Misdelivered",
                format!("transfer for {task} reached {at} without a spawned process"),
            );
            return;
        };
        let Some(from) = self.migrations.get(&task).map(|m| m.from) else {
            return;
        };
        let agent = self.agents.get_mut(&task).expect("agent exists");
        if let Err(e) = agent.install(state, at) {
            self.protocol_error(task, e);
            return;
        }
        let data = agent.work().clone();
        let notices = agent.notify_dependents(at);
        self.log(TraceEvent::OwnershipTransfer {
            task,
            from,
            to: at,
            data,
        });
        let m = self.migrations.get_mut(&task).expect("checked above");
        m.installed = true;
        m.busy_until = self.now;

        for n in notices {
            self.send_rebind(n);
            let deadline = self.now + SimTime::from_ms(self.cfg.rebind_timeout_ms);
            self.schedule(
                deadline,
                Event::AckDeadline {
                    task,
                    dep: n.to,
                    attempt: 0,
                },
            );
        }
        for buffered in pending.buffer {
            self.owner_handle(task, buffered);
        }
    }

    fn send_rebind(&mut self, n: RebindNotice) {
        match (n.to, n.to_endpoint) {
            (DepId::Feed(i), _) => {
                // The external feed re-targets and acknowledges on the spot.
                self.feed_loc.insert(i, n.location);
                self.send(
                    n.location,
                    n.location,
                    Some(n.from),
                    Message::RebindAck { from: n.to },
                    SimTime::ZERO,
                );
            }
            (DepId::Node(dep), Endpoint::Grid(c)) => self.send(
                n.location,
                c,
                Some(dep),
                Message::Rebind {
                    from: n.from,
                    location: n.location,
                },
                SimTime::ZERO,
            ),
            (DepId::Node(dep), Endpoint::External) => {
                self.fault("ProtocolError", format!("{dep} has no grid endpoint"));
            }
        }
    }

    fn on_ack(&mut self, task: TaskId, from: DepId) {
        let installed = self.migrations.get(&task).is_some_and(|m| m.installed);
        let agent = self.agents.get_mut(&task).expect("owner exists");
        if !installed || agent.is_acked(from) {
            return;
        }
        let all_done = match agent.acknowledge(from) {
            Ok(done) => done,
            Err(e) => {
                self.protocol_error(task, e);
                return;
            }
        };
        let cost = self.jittered(self.cfg.costs.rebind_ms_per_dep);
        let now = self.now;
        let m = self.migrations.get_mut(&task).expect("checked above");
        m.busy_until = m.busy_until.max(now) + cost;
        if all_done {
            let at = m.busy_until;
            self.schedule(at, Event::RebindDone { task });
        }
    }

    fn on_ack_deadline(&mut self, task: TaskId, dep: DepId, attempt: u8) {
        let Some(m) = self.migrations.get(&task) else { return };
        if !m.installed {
            return;
        }
        let agent = &self.agents[&task];
        if agent.is_acked(dep) {
            return;
        }
        if attempt == 0 {
            let notice = RebindNotice {
                from: task,
                location: agent.location(),
                to: dep,
                to_endpoint: agent.endpoint(dep).unwrap_or(Endpoint::External),
            };
            self.log(TraceEvent::RebindRetry { task, dep });
            self.send_rebind(notice);
            let deadline = self.now + SimTime::from_ms(self.cfg.rebind_timeout_ms);
            self.schedule(deadline, Event::AckDeadline { task, dep, attempt: 1 });
        } else {
            self.fail(FailureReason::AckTimeout { task, dep });
        }
    }

    fn on_rebind_done(&mut self, task: TaskId) {
        let Some(m) = self.migrations.remove(&task) else { return };
        let agent = self.agents.get_mut(&task).expect("agent exists");
        let rebind_count = match agent.finish_rebinding() {
            Ok(n) => n,
            Err(e) => {
                self.protocol_error(task, e);
                return;
            }
        };
        let record = MigrationRecord {
            agent_id: agent.agent_id,
            task_id: task,
            from: m.from,
            to: m.to.expect("installed migrations have a target"),
            predicted_at: m.predicted_at,
            start_time: m.start.expect("installed migrations have started"),
            end_time: self.now,
            rebind_count,
        };
        self.log(TraceEvent::MigrationComplete(record.clone()));
        self.records.push(record);
    }

    fn on_hard_fail(&mut self, node: Coord) {
        if let Err(e) = self.grid.set_status(node, NodeStatus::Failed) {
            self.fault("ProtocolError", e.to_string());
        }
        self.log(TraceEvent::NodeHardFail { node });
        self.last_reading.remove(&node);
        self.forwarders.retain(|(c, _), _| *c != node);

        let stranded: Vec<TaskId> = self
            .agents
            .values()
            .filter(|a| a.location() == node)
            .map(|a| a.task_id)
            .collect();
        for task in stranded {
            if self.migrations.contains_key(&task) {
                self.fail(FailureReason::TransferIncomplete { task });
            } else {
                self.fail(FailureReason::TaskLost { task });
            }
        }
        let late: Vec<TaskId> = self
            .migrations
            .iter()
            .filter(|(_, m)| m.from == node && m.installed)
            .map(|(t, _)| *t)
            .collect();
        for task in late {
            self.fail(FailureReason::GraceWindowExceeded { task });
        }
        let dead_spawns: Vec<TaskId> = self
            .spawned
            .iter()
            .filter(|(_, p)| p.at == node)
            .map(|(t, _)| *t)
            .collect();
        for task in dead_spawns {
            self.fail(FailureReason::SpawnFailed { task, at: node });
        }
    }

    // ---- rounds ----------------------------------------------------------

    fn on_round_start(&mut self, round: u32) {
        self.round = round;
        let feed: Vec<i64> = (0..self.graph.leaf_count())
            .map(|_| self.feed_rng.random_range(0..=self.cfg.feed_max))
            .collect();
        let expected = self.graph.reduce_reference(&feed).expect("feed sized to leaves");
        self.expected.push(expected);
        self.log(TraceEvent::RoundStart {
            round,
            feed: feed.clone(),
            expected,
        });
        let leaves = self.graph.leaves().to_vec();
        for (i, (leaf, value)) in leaves.into_iter().zip(feed).enumerate() {
            let feed_id = i as u32 + 1;
            let at = self.feed_loc[&feed_id];
            self.send(
                at,
                at,
                Some(leaf),
                Message::Data {
                    round,
                    from: DepId::Feed(feed_id),
                    value,
                },
                SimTime::ZERO,
            );
        }
    }

    fn on_round_end(&mut self, round: u32, value: i64) {
        self.round_results.push(value);
        self.log(TraceEvent::RoundEnd { round, value });
        if round + 1 < self.cfg.rounds {
            let next = self.now + SimTime::from_ms(self.cfg.round_gap_ms);
            self.schedule(next, Event::RoundStart { round: round + 1 });
        } else {
            self.rounds_done = true;
        }
    }

    fn run(&mut self) {
        self.schedule(SimTime::ZERO, Event::SensorTick);
        self.schedule(SimTime::ZERO, Event::RoundStart { round: 0 });
        while let Some(Reverse(next)) = self.queue.pop() {
            if self.failure.is_some() {
                break;
            }
            debug_assert!(next.time >= self.now);
            self.now = next.time;
            if self.now > self.horizon {
                break;
            }
            match next.event {
                Event::SensorTick => self.on_tick(),
                Event::MessageDeliver { env, hop_from } => self.on_deliver(env, hop_from),
                Event::SpawnComplete { task, at } => self.on_spawn_complete(task, at),
                Event::NodeHardFail { node } => self.on_hard_fail(node),
                Event::RoundStart { round } => self.on_round_start(round),
                Event::RoundEnd { round, value } => self.on_round_end(round, value),
                Event::ProbeTimeout { task } => self.on_probe_timeout(task),
                Event::AckDeadline { task, dep, attempt } => self.on_ack_deadline(task, dep, attempt),
                Event::RebindDone { task } => self.on_rebind_done(task),
            }
        }
        if self.failure.is_none() && (self.round_results.len() as u32) < self.cfg.rounds {
            self.fail(FailureReason::RoundIncomplete {
                completed: self.round_results.len() as u32,
                expected: self.cfg.rounds,
            });
        }
        if self.failure.is_none() {
            if let Some(round) = self
                .round_results
                .iter()
                .zip(&self.expected)
                .position(|(got, want)| got != want)
            {
                self.fail(FailureReason::WrongResult { round: round as u32 });
            }
        }
        let failure = self.failure.clone();
        self.log(TraceEvent::TrialEnd {
            survived: failure.is_none(),
            failure,
        });
    }
}

/// Mixes the fault target into the seed so that per-node sub-runs of one
/// trial draw independent streams.
pub(crate) fn run_seed(seed: u64, target: Option<TaskId>) -> u64 {
    match target {
        Some(t) => splitmix(seed ^ splitmix(0xA5A5_0000 + u64::from(t.0))),
        None => seed,
    }
}

/// Runs one trial of the reduction under `schedule`.
pub fn run_trial(config: &ExperimentConfig, seed: u64, schedule: &FaultSchedule) -> Result<TrialRun, EngineError> {
    let graph = config.validate()?;
    config.validate_schedule(&graph, schedule)?;
    run_validated(config, &graph, 0, seed, None, schedule)
}

pub(crate) fn run_validated(
    config: &ExperimentConfig,
    graph: &TaskGraph,
    trial_id: usize,
    seed: u64,
    target: Option<TaskId>,
    schedule: &FaultSchedule,
) -> Result<TrialRun, EngineError> {
    let (mut sim, placement) = Sim::new(config, graph, run_seed(seed, target), schedule)?;
    sim.log(TraceEvent::TrialHeader {
        trial_id,
        seed,
        target,
        topology: sim.grid.clone(),
        task_graph: graph.clone(),
        placement,
        config: Box::new(config.clone()),
    });
    sim.run();
    let outcome = TrialOutcome {
        trial_id,
        seed,
        target,
        survived: sim.failure.is_none(),
        failure: sim.failure.clone(),
        round_results: std::mem::take(&mut sim.round_results),
        expected_results: std::mem::take(&mut sim.expected),
        migration_records: std::mem::take(&mut sim.records),
        trace_path: None,
    };
    Ok(TrialRun {
        outcome,
        trace: std::mem::take(&mut sim.trace),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(id: u32) -> TaskId {
        TaskId(id)
    }

    #[test]
    fn failure_free_baseline() {
        let cfg = ExperimentConfig::default();
        let run = run_trial(&cfg, 7, &FaultSchedule::none()).unwrap();
        let o = &run.outcome;
        assert!(o.survived, "{:?}", o.failure);
        assert!(o.migration_records.is_empty());
        assert_eq!(o.round_results.len(), cfg.rounds as usize);
        assert_eq!(o.round_results, o.expected_results);
    }

    #[test]
    fn single_fault_on_n13() {
        let cfg = ExperimentConfig::default();
        let run = run_trial(&cfg, 3, &FaultSchedule::single(n(13), 200.0)).unwrap();
        let o = &run.outcome;
        assert!(o.survived, "{:?}", o.failure);
        assert_eq!(o.migration_records.len(), 1);
        let r = &o.migration_records[0];
        assert_eq!(r.task_id, n(13));
        // row-major placement on 4x5: N13 is cell 12
        assert_eq!(r.from, Coord::new(2, 2));
        assert!(r.from.is_adjacent(r.to));
        assert_eq!(r.rebind_count, 3);
        assert!(r.end_time > r.start_time && r.start_time >= r.predicted_at);
        assert_eq!(o.round_results, o.expected_results);
    }

    #[test]
    fn leaf_migration_rebinds_feed_and_parent() {
        let cfg = ExperimentConfig::default();
        let run = run_trial(&cfg, 5, &FaultSchedule::single(n(3), 200.0)).unwrap();
        assert!(run.outcome.survived, "{:?}", run.outcome.failure);
        assert_eq!(run.outcome.migration_records[0].rebind_count, 2);
    }

    #[test]
    fn root_migration_rebinds_inputs_only() {
        let cfg = ExperimentConfig::default();
        let run = run_trial(&cfg, 5, &FaultSchedule::single(n(15), 200.0)).unwrap();
        assert!(run.outcome.survived, "{:?}", run.outcome.failure);
        assert_eq!(run.outcome.migration_records[0].rebind_count, 2);
        let mut acked: Vec<TaskId> = run
            .trace
            .iter()
            .filter_map(|e| match &e.event {
                TraceEvent::RebindUpdate { task, dep, .. } if *dep == n(15) => Some(*task),
                _ => None,
            })
            .collect();
        acked.sort();
        assert_eq!(acked, vec![n(13), n(14)]);
    }

    #[test]
    fn surrounded_node_has_no_escape() {
        // N15 alone in the bottom-right corner, every neighbor already dead.
        let mut placement: Vec<Coord> = (0..13).map(|i| Coord::new(i / 5, i % 5)).collect();
        placement.push(Coord::new(3, 0));
        placement.push(Coord::new(3, 4));
        let cfg = ExperimentConfig {
            placement: Some(placement),
            pre_failed: vec![Coord::new(2, 3), Coord::new(2, 4), Coord::new(3, 3)],
            ..Default::default()
        };
        let o = run_trial(&cfg, 1, &FaultSchedule::single(n(15), 200.0))
            .unwrap()
            .outcome;
        assert!(!o.survived);
        assert!(
            matches!(o.failure, Some(FailureReason::NoEscapeRoute { task, at }) if task == n(15) && at == Coord::new(3, 4)),
            "{:?}",
            o.failure
        );
    }

    #[test]
    fn slow_spawn_blows_the_grace_window() {
        let mut cfg = ExperimentConfig::default();
        cfg.costs.spawn_ms = 2000.0;
        let o = run_trial(&cfg, 2, &FaultSchedule::single(n(13), 200.0))
            .unwrap()
            .outcome;
        assert!(!o.survived);
        assert!(matches!(o.failure, Some(FailureReason::TransferIncomplete { .. })));

        let mut cfg = ExperimentConfig::default();
        cfg.costs.rebind_ms_per_dep = 400.0;
        cfg.costs.spawn_ms = 100.0;
        let o = run_trial(&cfg, 2, &FaultSchedule::single(n(13), 200.0))
            .unwrap()
            .outcome;
        assert!(
            matches!(o.failure, Some(FailureReason::GraceWindowExceeded { .. })),
            "{:?}",
            o.failure
        );
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = ExperimentConfig::default();
        let s = FaultSchedule::single(n(10), 180.0);
        let a = run_trial(&cfg, 99, &s).unwrap();
        let b = run_trial(&cfg, 99, &s).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.outcome, b.outcome);
        let c = run_trial(&cfg, 100, &s).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn time_never_runs_backwards() {
        let cfg = ExperimentConfig::default();
        let run = run_trial(&cfg, 4, &FaultSchedule::single(n(9), 150.0)).unwrap();
        assert!(run.trace.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn non_adjacent_hop_is_a_policy_violation() {
        let cfg = ExperimentConfig::default();
        let graph = cfg.validate().unwrap();
        let (mut sim, _) = Sim::new(&cfg, &graph, 1, &FaultSchedule::none()).unwrap();
        let mut env = Envelope {
            id: 1,
            src: Coord::new(0, 0),
            dst: Coord::new(3, 3),
            at: Coord::new(0, 0),
            to_task: Some(n(1)),
            sent_at: SimTime::ZERO,
            msg: Message::Data {
                round: 0,
                from: DepId::Feed(1),
                value: 1,
            },
        };
        sim.hop(Coord::new(0, 0), Coord::new(2, 2), &mut env, SimTime::ZERO);
        assert!(sim.queue.is_empty());
        assert!(matches!(&sim.trace[0].event, TraceEvent::Fault { reason, .. } if reason == "PolicyViolation"));
    }
}
