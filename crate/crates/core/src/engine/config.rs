use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sensor::SensorParams;
use super::EngineError;
use crate::taskgraph::{build_fanin_reduction, ReduceOp, TaskGraph, TaskId};
use crate::topology::Coord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub fn capacity(&self) -> usize {
        self.rows * self.cols
    }

    /// Smallest near-square grid with at least `cells` cells.
    pub fn fitting(cells: usize) -> Self {
        let rows = (cells as f64).sqrt().ceil().max(1.0) as usize;
        let cols = cells.div_ceil(rows).max(1);
        Self { rows, cols }
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for GridDims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected RxC, got {s:?}"))?;
        let rows = r.trim().parse().map_err(|e| format!("bad row count {r:?}: {e}"))?;
        let cols = c.trim().parse().map_err(|e| format!("bad column count {c:?}: {e}"))?;
        Ok(Self { rows, cols })
    }
}

/// Durations that make a migration take time. All values in simulated ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub spawn_ms: f64,
    pub transfer_ms_per_value: f64,
    /// Serial handling of each rebind acknowledgement on the new process.
    pub rebind_ms_per_dep: f64,
    pub hop_latency_ms: f64,
    /// Uniform multiplicative jitter, in percent, applied to every cost.
    pub jitter_pct: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            spawn_ms: 300.0,
            transfer_ms_per_value: 2.0,
            rebind_ms_per_dep: 8.0,
            hop_latency_ms: 1.0,
            jitter_pct: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub target: TaskId,
    pub ramp_start_ms: f64,
    /// Degrees per ms. Falls back to the sensor default when absent.
    #[serde(default)]
    pub ramp_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    #[serde(default)]
    pub entries: Vec<FaultEntry>,
}

impl FaultSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(target: TaskId, ramp_start_ms: f64) -> Self {
        Self {
            entries: vec![FaultEntry {
                target,
                ramp_start_ms,
                ramp_rate: None,
            }],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSource {
    /// One trial per computational node per trial index, each with a single
    /// seeded ramp on that node.
    #[default]
    AutoPerNode,
    None,
    Fixed(FaultSchedule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub grid: GridDims,
    pub leaves: usize,
    pub fan_in: usize,
    pub operator: ReduceOp,
    pub rounds: u32,
    pub round_gap_ms: f64,
    pub threshold: f64,
    pub grace_window_ms: f64,
    pub costs: CostModel,
    pub sensor: SensorParams,
    pub probe_timeout_ms: f64,
    pub rebind_timeout_ms: f64,
    pub trials: usize,
    pub base_seed: u64,
    pub schedule: ScheduleSource,
    /// Window for seeded ramp starts of the automatic schedule.
    pub ramp_window_ms: (f64, f64),
    /// Largest feed value; feeds are drawn from `0..=feed_max`.
    pub feed_max: i64,
    /// Cell of each task, indexed by task id - 1. Row-major when absent.
    pub placement: Option<Vec<Coord>>,
    /// Nodes that are already dead when the trial starts.
    pub pre_failed: Vec<Coord>,
    pub allow_concurrent_faults: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridDims { rows: 4, cols: 5 },
            leaves: 8,
            fan_in: 2,
            operator: ReduceOp::Sum,
            rounds: 10,
            round_gap_ms: 100.0,
            threshold: 70.0,
            grace_window_ms: 1000.0,
            costs: CostModel::default(),
            sensor: SensorParams::default(),
            probe_timeout_ms: 10.0,
            rebind_timeout_ms: 20.0,
            trials: 30,
            base_seed: 42,
            schedule: ScheduleSource::AutoPerNode,
            ramp_window_ms: (150.0, 450.0),
            feed_max: 1000,
            placement: None,
            pre_failed: Vec::new(),
            allow_concurrent_faults: false,
        }
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), EngineError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(EngineError::ConfigInvalid(format!(
            "{name} must be a finite non-negative number, got {v}"
        )))
    }
}

fn positive(name: &str, v: f64) -> Result<(), EngineError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(EngineError::ConfigInvalid(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn task_graph(&self) -> Result<TaskGraph, EngineError> {
        build_fanin_reduction(self.leaves, self.fan_in)
            .map(|g| g.with_operator(self.operator))
            .map_err(|e| EngineError::ConfigInvalid(e.to_string()))
    }

    pub fn placement_for(&self, graph: &TaskGraph) -> Vec<Coord> {
        match &self.placement {
            Some(p) => p.clone(),
            None => (0..graph.len())
                .map(|i| Coord::new(i / self.grid.cols, i % self.grid.cols))
                .collect(),
        }
    }

    fn ramp_rate(&self, entry: &FaultEntry) -> f64 {
        entry.ramp_rate.unwrap_or(self.sensor.ramp_rate)
    }

    /// Interval during which a fault keeps its node busy: ramp start until
    /// the noiseless crossing plus the grace window.
    pub fn fault_window(&self, entry: &FaultEntry) -> (f64, f64) {
        let rate = self.ramp_rate(entry);
        let climb =
            ((self.threshold - self.sensor.baseline).max(0.0) + NOISE_HEADROOM_SIGMAS * self.sensor.noise_sigma) / rate;
        let start = entry.ramp_start_ms;
        (start, start + climb + self.sensor.tick_ms + self.grace_window_ms)
    }

    pub fn validate_schedule(&self, graph: &TaskGraph, schedule: &FaultSchedule) -> Result<(), EngineError> {
        for e in &schedule.entries {
            if graph.node(e.target).is_none() {
                return Err(EngineError::ConfigInvalid(format!(
                    "schedule targets unknown node {}",
                    e.target
                )));
            }
            non_negative("ramp_start_ms", e.ramp_start_ms)?;
            positive("ramp_rate", self.ramp_rate(e))?;
        }
        if !self.allow_concurrent_faults {
            let mut windows: Vec<(f64, f64)> = schedule.entries.iter().map(|e| self.fault_window(e)).collect();
            windows.sort_by(|a, b| a.0.total_cmp(&b.0));
            if windows.windows(2).any(|w| w[1].0 < w[0].1) {
                return Err(EngineError::ConfigInvalid(
                    "fault entries overlap in time; enable allow_concurrent_faults to permit this".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<TaskGraph, EngineError> {
        let graph = self.task_graph()?;
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(EngineError::ConfigInvalid(format!("grid {} has no cells", self.grid)));
        }
        if self.grid.capacity() < graph.len() {
            return Err(EngineError::ConfigInvalid(format!(
                "grid {} has {} cells but the task graph needs {}",
                self.grid,
                self.grid.capacity(),
                graph.len()
            )));
        }
        if self.trials == 0 {
            return Err(EngineError::ConfigInvalid("trials must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(EngineError::ConfigInvalid("rounds must be at least 1".into()));
        }
        for (name, v) in [
            ("spawn_ms", self.costs.spawn_ms),
            ("transfer_ms_per_value", self.costs.transfer_ms_per_value),
            ("rebind_ms_per_dep", self.costs.rebind_ms_per_dep),
            ("hop_latency_ms", self.costs.hop_latency_ms),
            ("grace_window_ms", self.grace_window_ms),
            ("round_gap_ms", self.round_gap_ms),
            ("probe_timeout_ms", self.probe_timeout_ms),
            ("rebind_timeout_ms", self.rebind_timeout_ms),
            ("noise_sigma", self.sensor.noise_sigma),
            ("ramp_window start", self.ramp_window_ms.0),
        ] {
            non_negative(name, v)?;
        }
        if !(0.0..100.0).contains(&self.costs.jitter_pct) {
            return Err(EngineError::ConfigInvalid(format!(
                "jitter_pct must be in [0, 100), got {}",
                self.costs.jitter_pct
            )));
        }
        positive("tick_ms", self.sensor.tick_ms)?;
        positive("ramp_rate", self.sensor.ramp_rate)?;
        if !self.threshold.is_finite() || !self.sensor.baseline.is_finite() {
            return Err(EngineError::ConfigInvalid(
                "threshold and baseline must be finite".into(),
            ));
        }
        if self.ramp_window_ms.1 < self.ramp_window_ms.0 {
            return Err(EngineError::ConfigInvalid("ramp window end precedes its start".into()));
        }
        if self.feed_max < 0 {
            return Err(EngineError::ConfigInvalid("feed_max must be non-negative".into()));
        }

        let placement = self.placement_for(&graph);
        if placement.len() != graph.len() {
            return Err(EngineError::ConfigInvalid(format!(
                "placement lists {} cells for {} tasks",
                placement.len(),
                graph.len()
            )));
        }
        let mut used = std::collections::BTreeSet::new();
        for c in &placement {
            if c.row >= self.grid.rows || c.col >= self.grid.cols {
                return Err(EngineError::ConfigInvalid(format!(
                    "placement cell {c} is outside the grid"
                )));
            }
            if !used.insert(*c) {
                return Err(EngineError::ConfigInvalid(format!("placement uses cell {c} twice")));
            }
        }
        for c in &self.pre_failed {
            if c.row >= self.grid.rows || c.col >= self.grid.cols {
                return Err(EngineError::ConfigInvalid(format!(
                    "pre-failed cell {c} is outside the grid"
                )));
            }
            if used.contains(c) {
                return Err(EngineError::ConfigInvalid(format!("pre-failed cell {c} hosts a task")));
            }
        }
        if let ScheduleSource::Fixed(s) = &self.schedule {
            self.validate_schedule(&graph, s)?;
        }
        Ok(graph)
    }
}

/// Extra climb allowed for noise when estimating how long a ramp takes.
const NOISE_HEADROOM_SIGMAS: f64 = 4.0;
