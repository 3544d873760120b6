//! Command-line front end: `simulate`, `report`, `sweep`, `validate-config`.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 at least one
//! trial failed.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::engine::campaign::{campaign_rows, run_campaign_on, write_campaign_csv};
use crate::engine::{EngineError, ExperimentConfig, FaultSchedule, GridDims, ScheduleSource};
use crate::metrics::{dependency_sweep, ingest_csv, write_level_figure, write_sweep_csv, MetricsError};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn file_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "agentft",
    version,
    about = "Simulate agent-based proactive fault tolerance on a grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a campaign and write the summary CSV plus one trace per trial.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        fan_in: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Skip writing per-trial traces.
        #[arg(long)]
        no_traces: bool,
    },
    /// Aggregate a campaign or samples CSV into per-node, per-level and overall means.
    Report {
        csv: PathBuf,
        /// Directory for the table and per-level figure data.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean reinstatement time against dependency count over a fan-in range.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Inclusive range such as `2..8`.
        #[arg(long, default_value = "2..8", value_parser = parse_range)]
        fan_in: RangeInclusive<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration and print it fully resolved as JSON.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        fan_in: Option<usize>,
    },
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: Option<GridDims>,
    #[arg(long)]
    leaves: Option<usize>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Simulated ms between prediction and hard failure.
    #[arg(long)]
    grace_window: Option<f64>,
    #[arg(long)]
    spawn_cost: Option<f64>,
    /// Simulated ms per dependency rebind.
    #[arg(long)]
    rebind_cost: Option<f64>,
    /// Simulated ms per carried value.
    #[arg(long)]
    transfer_cost: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    /// `auto` (one fault per computational node per trial), `none`, or a JSON schedule file.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    allow_concurrent_faults: bool,
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let (a, b) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .ok_or_else(|| format!("expected LO..HI, got {s:?}"))?;
    let lo: usize = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: usize = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if lo > hi {
        return Err(format!("empty range {s:?}"));
    }
    Ok(lo..=hi)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

impl ConfigArgs {
    fn resolve(&self, fan_in: Option<usize>) -> Result<ExperimentConfig, CliError> {
        let mut c: ExperimentConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag {
                    c.$($field)+ = v;
                }
            };
        }
        set!(self.grid => grid);
        set!(self.leaves => leaves);
        set!(fan_in => fan_in);
        set!(self.rounds => rounds);
        set!(self.trials => trials);
        set!(self.seed => base_seed);
        set!(self.threshold => threshold);
        set!(self.grace_window => grace_window_ms);
        set!(self.spawn_cost => costs.spawn_ms);
        set!(self.rebind_cost => costs.rebind_ms_per_dep);
        set!(self.transfer_cost => costs.transfer_ms_per_value);
        set!(self.jitter => costs.jitter_pct);
        if self.allow_concurrent_faults {
            c.allow_concurrent_faults = true;
        }
        if let Some(s) = &self.schedule {
            c.schedule = match s.as_str() {
                "auto" => ScheduleSource::AutoPerNode,
                "none" => ScheduleSource::None,
                path => ScheduleSource::Fixed(read_json::<FaultSchedule>(Path::new(path))?),
            };
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Simulate {
            config,
            fan_in,
            out,
            no_traces,
        } => simulate(&config.resolve(fan_in)?, &out, !no_traces),
        Command::Report { csv, out } => report(&csv, out.as_deref()),
        Command::Sweep { config, fan_in, out } => sweep(&config.resolve(None)?, fan_in, out.as_deref()),
        Command::ValidateConfig { config, fan_in } => {
            let c = config.resolve(fan_in)?;
            let json = serde_json::to_string_pretty(&c).map_err(EngineError::from)?;
            println!("{json}");
            Ok(0)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(file_err(path))
}

fn simulate(cfg: &ExperimentConfig, out: &Path, traces: bool) -> Result<i32, CliError> {
    fs::create_dir_all(out).map_err(file_err(out))?;
    let graph = cfg.validate()?;
    let trace_dir = out.join("traces");
    if traces && trace_dir.exists() {
        // stale traces from an earlier run would mix with this one
        for entry in fs::read_dir(&trace_dir).map_err(file_err(&trace_dir))? {
            let path = entry.map_err(file_err(&trace_dir))?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                fs::remove_file(&path).map_err(file_err(&path))?;
            }
        }
    }
    let outcomes = run_campaign_on(
        cfg,
        cfg.trials,
        cfg.base_seed,
        None,
        traces.then_some(trace_dir.as_path()),
    )?;
    let rows = campaign_rows(&graph, &outcomes);
    let csv_path = out.join("campaign.csv");
    write_campaign_csv(create(&csv_path)?, &rows)?;

    let failed: Vec<_> = outcomes.iter().filter(|o| !o.survived).collect();
    let durations: Vec<f64> = rows
        .iter()
        .filter(|r| r.survived)
        .filter_map(|r| r.duration_ms())
        .collect();
    println!(
        "runs: {}  survived: {}  failed: {}",
        outcomes.len(),
        outcomes.len() - failed.len(),
        failed.len()
    );
    if !durations.is_empty() {
        let mean = durations.iter().sum::<f64>() / durations.len() as f64;
        println!("migrations: {}  mean reinstatement: {:.1} ms", durations.len(), mean);
    }
    for o in &failed {
        if let Some(f) = &o.failure {
            eprintln!("trial {} target {:?}: {f}", o.trial_id, o.target.map(|t| t.0));
        }
    }
    println!("wrote {}", csv_path.display());
    Ok(if failed.is_empty() { 0 } else { 2 })
}

fn report(csv: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    let data = ingest_csv(File::open(csv).map_err(file_err(csv))?)?;
    let table = data.table()?;
    let text = table.to_text();
    print!("{text}");
    if !data.excluded_trials.is_empty() {
        println!("excluded failed trials: {:?}", data.excluded_trials);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
        let p = dir.join("table.txt");
        create(&p)?.write_all(text.as_bytes()).map_err(file_err(&p))?;
        table.write_csv(create(&dir.join("table.csv"))?)?;
        for &level in data.levels.0.keys() {
            write_level_figure(
                create(&dir.join(format!("level{level}_trials.csv")))?,
                &data,
                &table,
                level,
            )?;
        }
    }
    Ok(0)
}

fn sweep(cfg: &ExperimentConfig, fan_in: RangeInclusive<usize>, out: Option<&Path>) -> Result<i32, CliError> {
    if *fan_in.start() < 2 {
        return Err(CliError::Usage("fan-in starts at 2".into()));
    }
    let rows = dependency_sweep(cfg, fan_in, cfg.trials, cfg.base_seed)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(file_err(dir))?;
            let p = dir.join("dependency_sweep.csv");
            write_sweep_csv(create(&p)?, &rows)?;
            println!("wrote {}", p.display());
        }
        None => write_sweep_csv(io::stdout().lock(), &rows)?,
    }
    let failed: usize = rows.iter().map(|r| r.failed).sum();
    Ok(if failed == 0 { 0 } else { 2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("2..8").unwrap(), 2..=8);
        assert_eq!(parse_range("3..=3").unwrap(), 3..=3);
        assert!(parse_range("5..2").is_err());
        assert!(parse_range("7").is_err());
    }

    #[test]
    fn flags_override_defaults() {
        let args = ConfigArgs {
            grid: Some(GridDims { rows: 5, cols: 5 }),
            spawn_cost: Some(120.0),
            schedule: Some("none".into()),
            ..Default::default()
        };
        let c = args.resolve(Some(2)).unwrap();
        assert_eq!(c.grid.capacity(), 25);
        assert_eq!(c.costs.spawn_ms, 120.0);
        assert_eq!(c.schedule, ScheduleSource::None);
    }

    #[test]
    fn tiny_grid_is_a_config_error() {
        assert_eq!(run(["agentft", "validate-config", "--grid", "2x2"]), 1);
        assert_eq!(run(["agentft", "validate-config"]), 0);
        assert_eq!(run(["agentft", "bogus"]), 1);
    }
}
