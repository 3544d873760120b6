//! Many independent trials, run in parallel and reported in a fixed order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FaultSchedule, ScheduleSource};
use super::sim::{run_seed, run_validated, stream, TrialRun};
use super::trace::write_jsonl;
use super::{EngineError, TrialOutcome};
use crate::taskgraph::{TaskGraph, TaskId};

const STREAM_SCHEDULE: u64 = 5;

/// One trial of a campaign before it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrial {
    pub trial_id: usize,
    pub seed: u64,
    pub target: Option<TaskId>,
    pub schedule: FaultSchedule,
}

/// Expands a campaign into its trials. Trial `i` uses seed `base_seed + i`;
/// the automatic schedule runs it once per target with a seeded ramp start.
pub fn plan_campaign(
    config: &ExperimentConfig,
    graph: &TaskGraph,
    trials: usize,
    base_seed: u64,
    targets: Option<&[TaskId]>,
) -> Vec<PlannedTrial> {
    let default_targets = graph.computational_nodes();
    let targets = targets.unwrap_or(&default_targets);
    let mut plan = Vec::new();
    for trial_id in 0..trials {
        let seed = base_seed.wrapping_add(trial_id as u64);
        match &config.schedule {
            ScheduleSource::AutoPerNode => {
                for &t in targets {
                    let (lo, hi) = config.ramp_window_ms;
                    let start = if hi > lo {
                        stream(run_seed(seed, Some(t)), STREAM_SCHEDULE).random_range(lo..hi)
                    } else {
                        lo
                    };
                    // whole microseconds keep the schedule exact in the trace
                    let start = (start * 1000.0).round() / 1000.0;
                    plan.push(PlannedTrial {
                        trial_id,
                        seed,
                        target: Some(t),
                        schedule: FaultSchedule::single(t, start),
                    });
                }
            }
            ScheduleSource::None => plan.push(PlannedTrial {
                trial_id,
                seed,
                target: None,
                schedule: FaultSchedule::none(),
            }),
            ScheduleSource::Fixed(s) => plan.push(PlannedTrial {
                trial_id,
                seed,
                target: None,
                schedule: s.clone(),
            }),
        }
    }
    plan
}

/// Runs every planned trial in parallel and hands each finished run to `f`.
/// Results come back in plan order regardless of scheduling.
pub fn for_each_trial<T, F>(
    config: &ExperimentConfig,
    trials: usize,
    base_seed: u64,
    targets: Option<&[TaskId]>,
    f: F,
) -> Result<Vec<T>, EngineError>
where
    T: Send,
    F: Fn(TrialRun) -> T + Sync,
{
    if trials == 0 {
        return Err(EngineError::ConfigInvalid("trials must be at least 1".into()));
    }
    let graph = config.validate()?;
    if let Some(ts) = targets {
        if let Some(bad) = ts.iter().find(|t| graph.node(**t).is_none()) {
            return Err(EngineError::ConfigInvalid(format!("unknown target {bad}")));
        }
    }
    let plan = plan_campaign(config, &graph, trials, base_seed, targets);
    plan.par_iter()
        .map(|p| run_validated(config, &graph, p.trial_id, p.seed, p.target, &p.schedule).map(&f))
        .collect()
}

pub fn run_campaign(
    config: &ExperimentConfig,
    trials: usize,
    base_seed: u64,
) -> Result<Vec<TrialOutcome>, EngineError> {
    run_campaign_on(config, trials, base_seed, None, None)
}

/// Like [`run_campaign`], optionally restricted to some fault targets and
/// writing each trial's trace under `trace_dir`.
pub fn run_campaign_on(
    config: &ExperimentConfig,
    trials: usize,
    base_seed: u64,
    targets: Option<&[TaskId]>,
    trace_dir: Option<&Path>,
) -> Result<Vec<TrialOutcome>, EngineError> {
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let results = for_each_trial(
        config,
        trials,
        base_seed,
        targets,
        |run| -> Result<TrialOutcome, EngineError> {
            let mut outcome = run.outcome;
            if let Some(dir) = trace_dir {
                let path = dir.join(trace_file_name(outcome.trial_id, outcome.target));
                let file = BufWriter::new(File::create(&path)?);
                write_jsonl(file, &run.trace)?;
                outcome.trace_path = Some(path);
            }
            Ok(outcome)
        },
    )?;
    results.into_iter().collect()
}

pub fn trace_file_name(trial_id: usize, target: Option<TaskId>) -> PathBuf {
    match target {
        Some(t) => format!("trace_t{trial_id:03}_n{}.jsonl", t.0),
        None => format!("trace_t{trial_id:03}.jsonl"),
    }
    .into()
}

/// One line of the campaign summary CSV. Times are simulated milliseconds;
/// failed trials leave them empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub trial_id: usize,
    pub seed: u64,
    pub node_id: u32,
    pub level: u32,
    pub t_start_ms: Option<f64>,
    pub t_end_ms: Option<f64>,
    pub rebinds: Option<usize>,
    pub survived: bool,
}

impl CampaignRow {
    pub fn duration_ms(&self) -> Option<f64> {
        Some(self.t_end_ms? - self.t_start_ms?)
    }
}

/// One row per migration; a failed trial without a finished migration of its
/// target still gets a row so the failure is visible.
pub fn campaign_rows(graph: &TaskGraph, outcomes: &[TrialOutcome]) -> Vec<CampaignRow> {
    let level = |t: TaskId| graph.node(t).map_or(0, |n| n.level);
    let mut rows = Vec::new();
    for o in outcomes {
        for r in &o.migration_records {
            rows.push(CampaignRow {
                trial_id: o.trial_id,
                seed: o.seed,
                node_id: r.task_id.0,
                level: level(r.task_id),
                t_start_ms: Some(r.start_time.as_ms()),
                t_end_ms: Some(r.end_time.as_ms()),
                rebinds: Some(r.rebind_count),
                survived: o.survived,
            });
        }
        if let (false, Some(t)) = (o.survived, o.target) {
            if !o.migration_records.iter().any(|r| r.task_id == t) {
                rows.push(CampaignRow {
                    trial_id: o.trial_id,
                    seed: o.seed,
                    node_id: t.0,
                    level: level(t),
                    t_start_ms: None,
                    t_end_ms: None,
                    rebinds: None,
                    survived: false,
                });
            }
        }
    }
    rows
}

pub fn write_campaign_csv<W: Write>(out: W, rows: &[CampaignRow]) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "trial_id",
        "seed",
        "node_id",
        "level",
        "t_start_ms",
        "t_end_ms",
        "rebinds",
        "survived",
    ])?;
    let ms = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.trial_id.to_string(),
            r.seed.to_string(),
            r.node_id.to_string(),
            r.level.to_string(),
            ms(r.t_start_ms),
            ms(r.t_end_ms),
            r.rebinds.map(|n| n.to_string()).unwrap_or_default(),
            r.survived.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_campaign_csv<R: std::io::Read>(input: R) -> Result<Vec<CampaignRow>, EngineError> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(EngineError::from)).collect()
}
