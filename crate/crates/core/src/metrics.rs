//! Reinstatement statistics: per-node, per-level and overall means, plus the
//! fan-in dependency sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::campaign::{for_each_trial, read_campaign_csv, CampaignRow};
use crate::engine::{EngineError, ExperimentConfig, GridDims, ScheduleSource};
use crate::taskgraph::{TaskGraph, TaskId};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("node N{0} is not in the sample matrix")]
    UnknownNode(u32),
    #[error("node N{node} is missing samples for {missing} trial(s)")]
    IncompleteRow { node: u32, missing: usize },
    #[error("level {level} has no mean for node N{node}")]
    MissingNodeMean { level: u32, node: u32 },
    #[error("level {0} has no nodes")]
    EmptyLevel(u32),
    #[error("cannot aggregate: {0}")]
    MissingEntries(String),
    #[error("incomplete data: {0}")]
    IncompleteData(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Durations indexed by node and trial. Cells stay empty until filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    node_ids: Vec<u32>,
    trials: usize,
    samples: Vec<Vec<Option<f64>>>,
}

impl SampleMatrix {
    pub fn new(node_ids: Vec<u32>, trials: usize) -> Self {
        let samples = vec![vec![None; trials]; node_ids.len()];
        Self {
            node_ids,
            trials,
            samples,
        }
    }

    /// Builds a full matrix from one row of samples per node.
    pub fn from_rows(rows: Vec<(u32, Vec<f64>)>) -> Result<Self, MetricsError> {
        let trials = rows.first().map_or(0, |(_, r)| r.len());
        let mut m = Self::new(rows.iter().map(|(n, _)| *n).collect(), trials);
        for (node, row) in rows {
            if row.len() != trials {
                return Err(MetricsError::Parse(format!(
                    "row N{node} has {} samples, expected {trials}",
                    row.len()
                )));
            }
            for (t, v) in row.into_iter().enumerate() {
                m.set(node, t, v)?;
            }
        }
        Ok(m)
    }

    pub fn node_ids(&self) -> &[u32] {
        &self.node_ids
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    fn index(&self, node: u32) -> Result<usize, MetricsError> {
        self.node_ids
            .iter()
            .position(|&n| n == node)
            .ok_or(MetricsError::UnknownNode(node))
    }

    pub fn set(&mut self, node: u32, trial: usize, value: f64) -> Result<(), MetricsError> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(MetricsError::Parse(format!(
                "duration {value} for N{node} is not a non-negative number"
            )));
        }
        if trial >= self.trials {
            return Err(MetricsError::Parse(format!(
                "trial {trial} out of range 0..{}",
                self.trials
            )));
        }
        let i = self.index(node)?;
        self.samples[i][trial] = Some(value);
        Ok(())
    }

    pub fn get(&self, node: u32, trial: usize) -> Option<f64> {
        let i = self.index(node).ok()?;
        self.samples[i].get(trial).copied().flatten()
    }

    pub fn row(&self, node: u32) -> Result<&[Option<f64>], MetricsError> {
        Ok(&self.samples[self.index(node)?])
    }

    /// Reorders trial columns; `order[k]` is the old index of new column `k`.
    pub fn permute_trials(&self, order: &[usize]) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|row| order.iter().map(|&k| row[k]).collect())
            .collect();
        Self {
            node_ids: self.node_ids.clone(),
            trials: order.len(),
            samples,
        }
    }
}

/// Arithmetic mean of one node's samples over every trial.
pub fn mean_node_time(samples: &SampleMatrix, node: u32) -> Result<f64, MetricsError> {
    let row = samples.row(node)?;
    let missing = row.iter().filter(|v| v.is_none()).count();
    if row.is_empty() || missing > 0 {
        return Err(MetricsError::IncompleteRow {
            node,
            missing: missing.max(1),
        });
    }
    Ok(row.iter().flatten().sum::<f64>() / row.len() as f64)
}

/// Which nodes make up each level. Only computational levels are listed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelIndex(pub BTreeMap<u32, Vec<u32>>);

impl From<&TaskGraph> for LevelIndex {
    fn from(graph: &TaskGraph) -> Self {
        Self(
            graph
                .levels()
                .iter()
                .filter(|(&l, _)| l >= 2)
                .map(|(&l, ids)| (l, ids.iter().map(|t| t.0).collect()))
                .collect(),
        )
    }
}

impl LevelIndex {
    pub fn level_of(&self, node: u32) -> Option<u32> {
        self.0.iter().find(|(_, ns)| ns.contains(&node)).map(|(&l, _)| l)
    }
}

/// Mean of the per-node means within `level`.
pub fn mean_level_time(per_node: &BTreeMap<u32, f64>, levels: &LevelIndex, level: u32) -> Result<f64, MetricsError> {
    let nodes = levels
        .0
        .get(&level)
        .filter(|n| !n.is_empty())
        .ok_or(MetricsError::EmptyLevel(level))?;
    let mut sum = 0.0;
    for &node in nodes {
        sum += per_node
            .get(&node)
            .ok_or(MetricsError::MissingNodeMean { level, node })?;
    }
    Ok(sum / nodes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallMean {
    /// Mean over nodes; the canonical figure.
    pub by_node: f64,
    /// Mean over level means. Differs from `by_node` when levels have
    /// unequal sizes.
    pub by_level: f64,
}

pub fn overall_mean(
    per_node: &BTreeMap<u32, f64>,
    per_level: &BTreeMap<u32, f64>,
) -> Result<OverallMean, MetricsError> {
    if per_node.is_empty() || per_level.is_empty() {
        return Err(MetricsError::MissingEntries("no node or level means".into()));
    }
    Ok(OverallMean {
        by_node: per_node.values().sum::<f64>() / per_node.len() as f64,
        by_level: per_level.values().sum::<f64>() / per_level.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub per_node: BTreeMap<u32, f64>,
    pub per_level: BTreeMap<u32, f64>,
    pub overall_by_node: f64,
    pub overall_by_level: f64,
}

impl MetricsTable {
    pub fn compute(samples: &SampleMatrix, levels: &LevelIndex) -> Result<Self, MetricsError> {
        let per_node = levels
            .0
            .values()
            .flatten()
            .map(|&n| Ok((n, mean_node_time(samples, n)?)))
            .collect::<Result<BTreeMap<_, _>, MetricsError>>()?;
        Self::from_node_means(per_node, levels)
    }

    pub fn from_node_means(per_node: BTreeMap<u32, f64>, levels: &LevelIndex) -> Result<Self, MetricsError> {
        let per_level = levels
            .0
            .keys()
            .map(|&l| Ok((l, mean_level_time(&per_node, levels, l)?)))
            .collect::<Result<BTreeMap<_, _>, MetricsError>>()?;
        let overall = overall_mean(&per_node, &per_level)?;
        Ok(Self {
            per_node,
            per_level,
            overall_by_node: overall.by_node,
            overall_by_level: overall.by_level,
        })
    }

    /// Human-readable table, three decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "node");
        for n in self.per_node.keys() {
            let _ = write!(s, "{:>8}", format!("N{n}"));
        }
        let _ = write!(s, "\n{:<8}", "MT_Nn");
        for v in self.per_node.values() {
            let _ = write!(s, "{v:>8.3}");
        }
        let _ = write!(s, "\n{:<8}", "level");
        for l in self.per_level.keys() {
            let _ = write!(s, "{:>8}", format!("L{l}"));
        }
        let _ = write!(s, "\n{:<8}", "MT_Lp");
        for v in self.per_level.values() {
            let _ = write!(s, "{v:>8.3}");
        }
        let _ = writeln!(
            s,
            "\n{:<8}{:>8.3}  (by node; {:.3} by level)",
            "MT_NN", self.overall_by_node, self.overall_by_level
        );
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "id", "value"]).map_err(csv_err)?;
        for (n, v) in &self.per_node {
            w.write_record(["node", &n.to_string(), &format!("{v:.6}")])
                .map_err(csv_err)?;
        }
        for (l, v) in &self.per_level {
            w.write_record(["level", &l.to_string(), &format!("{v:.6}")])
                .map_err(csv_err)?;
        }
        w.write_record(["overall_by_node", "", &format!("{:.6}", self.overall_by_node)])
            .map_err(csv_err)?;
        w.write_record(["overall_by_level", "", &format!("{:.6}", self.overall_by_level)])
            .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> MetricsError {
    MetricsError::Parse(e.to_string())
}

/// Samples read back from a CSV, ready for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    /// Durations in seconds.
    pub matrix: SampleMatrix,
    pub levels: LevelIndex,
    /// Original trial id of each matrix column.
    pub trial_ids: Vec<usize>,
    /// Trials dropped because some run in them did not survive.
    pub excluded_trials: Vec<usize>,
}

impl Ingested {
    pub fn table(&self) -> Result<MetricsTable, MetricsError> {
        MetricsTable::compute(&self.matrix, &self.levels)
    }
}

#[derive(Deserialize)]
struct SampleRow {
    trial_id: usize,
    node_id: u32,
    level: u32,
    duration_s: f64,
}

struct Cell {
    trial: usize,
    node: u32,
    level: u32,
    seconds: Option<f64>,
}

/// Reads either a campaign CSV (simulated ms) or a plain samples CSV with
/// columns `trial_id,node_id,level,duration_s`.
pub fn ingest_csv<R: Read>(mut input: R) -> Result<Ingested, MetricsError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let header = text.lines().next().unwrap_or("").trim();
    let cells: Vec<Cell> = if header.split(',').any(|h| h.trim() == "duration_s") {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize::<SampleRow>()
            .map(|r| {
                let r = r.map_err(csv_err)?;
                Ok(Cell {
                    trial: r.trial_id,
                    node: r.node_id,
                    level: r.level,
                    seconds: Some(r.duration_s),
                })
            })
            .collect::<Result<_, MetricsError>>()?
    } else if header.starts_with("trial_id,seed,node_id") {
        read_campaign_csv(text.as_bytes())
            .map_err(|e| MetricsError::Parse(e.to_string()))?
            .into_iter()
            .map(|r: CampaignRow| Cell {
                trial: r.trial_id,
                node: r.node_id,
                level: r.level,
                seconds: r.duration_ms().filter(|_| r.survived).map(|ms| ms / 1000.0),
            })
            .collect()
    } else if header.is_empty() {
        Vec::new()
    } else {
        return Err(MetricsError::Parse(format!("unrecognised header {header:?}")));
    };
    build_ingested(cells)
}

fn build_ingested(cells: Vec<Cell>) -> Result<Ingested, MetricsError> {
    if cells.is_empty() {
        return Err(MetricsError::IncompleteData("no samples".into()));
    }
    let excluded: BTreeSet<usize> = cells.iter().filter(|c| c.seconds.is_none()).map(|c| c.trial).collect();
    let trial_ids: Vec<usize> = cells
        .iter()
        .map(|c| c.trial)
        .filter(|t| !excluded.contains(t))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if trial_ids.is_empty() {
        return Err(MetricsError::IncompleteData("every trial failed".into()));
    }
    let mut level_of: BTreeMap<u32, u32> = BTreeMap::new();
    for c in &cells {
        if let Some(&l) = level_of.get(&c.node) {
            if l != c.level {
                return Err(MetricsError::Parse(format!(
                    "N{} listed at levels {l} and {}",
                    c.node, c.level
                )));
            }
        }
        level_of.insert(c.node, c.level);
    }
    let mut levels = LevelIndex::default();
    for (&node, &level) in &level_of {
        levels.0.entry(level).or_default().push(node);
    }
    let column: BTreeMap<usize, usize> = trial_ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut matrix = SampleMatrix::new(level_of.keys().copied().collect(), trial_ids.len());
    for c in &cells {
        let (Some(&col), Some(v)) = (column.get(&c.trial), c.seconds) else {
            continue;
        };
        if matrix.get(c.node, col).is_some() {
            return Err(MetricsError::Parse(format!(
                "duplicate sample for N{} in trial {}",
                c.node, c.trial
            )));
        }
        matrix.set(c.node, col, v)?;
    }
    Ok(Ingested {
        matrix,
        levels,
        trial_ids,
        excluded_trials: excluded.into_iter().collect(),
    })
}

/// Trial index against each node's duration for one level, with the level
/// mean repeated as the last column.
pub fn write_level_figure<W: Write>(
    out: W,
    data: &Ingested,
    table: &MetricsTable,
    level: u32,
) -> Result<(), MetricsError> {
    let nodes = data.levels.0.get(&level).ok_or(MetricsError::EmptyLevel(level))?;
    let mean = table.per_level.get(&level).ok_or(MetricsError::EmptyLevel(level))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["trial".to_string()];
    header.extend(nodes.iter().map(|n| format!("N{n}")));
    header.push("level_mean".into());
    w.write_record(&header).map_err(csv_err)?;
    for (col, trial) in data.trial_ids.iter().enumerate() {
        let mut rec = vec![trial.to_string()];
        for &n in nodes {
            rec.push(data.matrix.get(n, col).map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        rec.push(format!("{mean:.6}"));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fan_in: usize,
    /// Inputs plus the output of each measured node.
    pub total_dependencies: usize,
    pub mean_reinstatement_ms: f64,
    pub samples: usize,
    pub failed: usize,
}

/// Configuration for one sweep point: a two-level tree with `fan_in²`
/// leaves on a grid with room to spare.
pub fn sweep_config(base: &ExperimentConfig, fan_in: usize) -> ExperimentConfig {
    let leaves = fan_in * fan_in;
    let tasks = leaves + fan_in + 1;
    let spares = (tasks / 3).max(5);
    ExperimentConfig {
        fan_in,
        leaves,
        grid: GridDims::fitting(tasks + spares),
        schedule: ScheduleSource::AutoPerNode,
        placement: None,
        pre_failed: Vec::new(),
        ..base.clone()
    }
}

/// Mean reinstatement time against dependency count, one campaign per
/// fan-in. Faults hit the middle level only, where every node has
/// `fan_in` inputs and one output.
pub fn dependency_sweep(
    config: &ExperimentConfig,
    fan_ins: RangeInclusive<usize>,
    trials: usize,
    base_seed: u64,
) -> Result<Vec<SweepRow>, MetricsError> {
    let mut rows = Vec::new();
    for fan_in in fan_ins {
        let cfg = sweep_config(config, fan_in);
        let graph = cfg.validate()?;
        let targets: Vec<TaskId> = graph.levels()[&2].clone();
        let outcomes = for_each_trial(&cfg, trials, base_seed, Some(&targets), |run| run.outcome)?;
        let durations: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.survived)
            .flat_map(|o| o.migration_records.iter().map(|r| r.reinstatement().as_ms()))
            .collect();
        if durations.is_empty() {
            return Err(MetricsError::IncompleteData(format!(
                "no migration survived at fan-in {fan_in}"
            )));
        }
        rows.push(SweepRow {
            fan_in,
            total_dependencies: fan_in + 1,
            mean_reinstatement_ms: durations.iter().sum::<f64>() / durations.len() as f64,
            samples: durations.len(),
            failed: outcomes.iter().filter(|o| !o.survived).count(),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "fan_in",
        "total_dependencies",
        "mean_reinstatement_ms",
        "samples",
        "failed",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.fan_in.to_string(),
            r.total_dependencies.to_string(),
            format!("{:.3}", r.mean_reinstatement_ms),
            r.samples.to_string(),
            r.failed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgraph::build_binary_reduction;
    use proptest::prelude::*;

    const TABLE1: [(u32, f64); 7] = [
        (9, 0.339),
        (10, 0.349),
        (11, 0.352),
        (12, 0.345),
        (13, 0.347),
        (14, 0.340),
        (15, 0.341),
    ];

    fn eight_leaf_levels() -> LevelIndex {
        LevelIndex::from(&build_binary_reduction(8).unwrap())
    }

    #[test]
    fn constant_and_two_point_means() {
        let m = SampleMatrix::from_rows(vec![(9, vec![0.25; 5]), (10, vec![0.2, 0.4, 0.3, 0.3, 0.3])]).unwrap();
        assert_eq!(mean_node_time(&m, 9).unwrap(), 0.25);
        let m = SampleMatrix::from_rows(vec![(9, vec![0.2, 0.4])]).unwrap();
        assert!((mean_node_time(&m, 9).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(mean_node_time(&m, 4), Err(MetricsError::UnknownNode(4))));
    }

    #[test]
    fn missing_cell_is_rejected() {
        let mut m = SampleMatrix::new(vec![9], 3);
        m.set(9, 0, 1.0).unwrap();
        m.set(9, 2, 1.0).unwrap();
        assert!(matches!(
            mean_node_time(&m, 9),
            Err(MetricsError::IncompleteRow { node: 9, missing: 1 })
        ));
        assert!(m.set(9, 1, -1.0).is_err());
    }

    #[test]
    fn table1_levels() {
        let per_node: BTreeMap<u32, f64> = TABLE1.into_iter().collect();
        let t = MetricsTable::from_node_means(per_node, &eight_leaf_levels()).unwrap();
        assert!((t.per_level[&2] - 0.346).abs() <= 0.0005 + 1e-12);
        assert!((t.per_level[&3] - 0.3435).abs() < 1e-12);
        assert_eq!(t.per_level[&4], 0.341);
        assert!((t.overall_by_node - 0.344_714_285_714).abs() < 1e-9);
        assert!((t.overall_by_level - 0.343_5).abs() < 1e-3);
        assert!((t.overall_by_node - 0.344).abs() <= 0.002);
    }

    #[test]
    fn overall_from_published_level_means() {
        let per_node: BTreeMap<u32, f64> = TABLE1.into_iter().collect();
        let per_level: BTreeMap<u32, f64> = [(2, 0.346), (3, 0.343), (4, 0.341)].into_iter().collect();
        let o = overall_mean(&per_node, &per_level).unwrap();
        assert!((o.by_level - 0.343_333_333_333).abs() < 1e-9);
        assert!((o.by_node - 0.344_714_285_714).abs() < 1e-9);
    }

    #[test]
    fn missing_node_mean() {
        let per_node: BTreeMap<u32, f64> = TABLE1[..3].iter().copied().collect();
        assert!(matches!(
            mean_level_time(&per_node, &eight_leaf_levels(), 2),
            Err(MetricsError::MissingNodeMean { level: 2, node: 12 })
        ));
    }

    #[test]
    fn constant_data_aggregates_exactly() {
        let v = 0.3125;
        let m = SampleMatrix::from_rows((9..=15).map(|n| (n, vec![v; 4])).collect()).unwrap();
        let t = MetricsTable::compute(&m, &eight_leaf_levels()).unwrap();
        assert_eq!(t.overall_by_node, v);
        assert_eq!(t.overall_by_level, v);
    }

    #[test]
    fn ingest_samples_csv() {
        let mut csv = String::from("trial_id,node_id,level,duration_s\n");
        for (n, v) in TABLE1 {
            let level = match n {
                9..=12 => 2,
                13 | 14 => 3,
                _ => 4,
            };
            csv.push_str(&format!("0,{n},{level},{v}\n"));
        }
        let data = ingest_csv(csv.as_bytes()).unwrap();
        let t = data.table().unwrap();
        for (level, want) in [(2, 0.346), (3, 0.343), (4, 0.341)] {
            assert!(
                (t.per_level[&level] - want).abs() <= 0.001,
                "L{level}: {}",
                t.per_level[&level]
            );
        }
        let text = t.to_text();
        assert!(text.contains("MT_Lp      0.346"), "{text}");
    }

    #[test]
    fn ingest_campaign_csv_excludes_failed_trials() {
        let csv = "trial_id,seed,node_id,level,t_start_ms,t_end_ms,rebinds,survived\n\
                   0,1,9,2,100.000,400.000,3,true\n\
                   1,2,9,2,,,,false\n\
                   2,3,9,2,100.000,300.000,3,true\n";
        let data = ingest_csv(csv.as_bytes()).unwrap();
        assert_eq!(data.trial_ids, vec![0, 2]);
        assert_eq!(data.excluded_trials, vec![1]);
        assert!((mean_node_time(&data.matrix, 9).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_incomplete() {
        assert!(matches!(ingest_csv(&b""[..]), Err(MetricsError::IncompleteData(_))));
        let header_only = "trial_id,seed,node_id,level,t_start_ms,t_end_ms,rebinds,survived\n";
        assert!(matches!(
            ingest_csv(header_only.as_bytes()),
            Err(MetricsError::IncompleteData(_))
        ));
    }

    #[test]
    fn sweep_point_shape() {
        let cfg = sweep_config(&ExperimentConfig::default(), 4);
        let g = cfg.validate().unwrap();
        assert_eq!(g.len(), 21);
        assert!(cfg.grid.capacity() >= 26);
        assert!(g.levels()[&2]
            .iter()
            .all(|t| g.node(*t).unwrap().total_dependencies() == 5));
    }

    fn naive_mean(xs: &[f64]) -> f64 {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        s / xs.len() as f64
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
    }

    proptest! {
        #[test]
        fn aggregates_match_naive(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 1..20), 7..=7)) {
            let trials = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(trials, 1.0); r }).collect();
            let m = SampleMatrix::from_rows((9..=15).zip(rows.clone()).collect()).unwrap();
            let t = MetricsTable::compute(&m, &eight_leaf_levels()).unwrap();
            let node_means: Vec<f64> = rows.iter().map(|r| naive_mean(r)).collect();
            for (i, n) in (9..=15).enumerate() {
                prop_assert!(close(t.per_node[&n], node_means[i]));
            }
            let l2 = naive_mean(&node_means[0..4]);
            let l3 = naive_mean(&node_means[4..6]);
            let l4 = node_means[6];
            prop_assert!(close(t.per_level[&2], l2));
            prop_assert!(close(t.per_level[&3], l3));
            prop_assert!(close(t.per_level[&4], l4));
            prop_assert!(close(t.overall_by_node, naive_mean(&node_means)));
            prop_assert!(close(t.overall_by_level, naive_mean(&[l2, l3, l4])));
        }

        #[test]
        fn permuting_trials_changes_nothing(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 6..=6), 7..=7),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let m = SampleMatrix::from_rows((9..=15).zip(rows).collect()).unwrap();
            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = MetricsTable::compute(&m, &eight_leaf_levels()).unwrap();
            let b = MetricsTable::compute(&m.permute_trials(&order), &eight_leaf_levels()).unwrap();
            for (x, y) in a.per_level.values().zip(b.per_level.values()) {
                prop_assert!(close(*x, *y));
            }
            prop_assert!(close(a.overall_by_node, b.overall_by_node));
            prop_assert!(close(a.overall_by_level, b.overall_by_level));
        }
    }
}
