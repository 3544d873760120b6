//! Run one simulated trial with a heat ramp on N13 and print its timeline.
//!
//! `cargo run --example single_trial -- 200` sets the ramp start in ms.

use agentft::engine::sim::run_trial;
use agentft::engine::trace::TraceEvent;
use agentft::engine::validate::validate_trace;
use agentft::engine::{ExperimentConfig, FaultSchedule};
use agentft::taskgraph::TaskId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200.0);
    let cfg = ExperimentConfig::default();
    let run = run_trial(&cfg, 42, &FaultSchedule::single(TaskId(13), start))?;

    for e in &run.trace {
        let line = match &e.event {
            TraceEvent::FaultRampStart { target, node, .. } => format!("ramp starts under {target} at {node}"),
            TraceEvent::Prediction {
                node,
                temperature,
                hard_fail_at,
            } => {
                format!("{node} reads {temperature:.1}, predicted to fail at {hard_fail_at}")
            }
            TraceEvent::Perception { task, target, .. } => match target {
                Some(t) => format!("{task} picks {t}"),
                None => format!("{task} has nowhere to go"),
            },
            TraceEvent::SpawnComplete { task, at } => format!("process for {task} ready on {at}"),
            TraceEvent::OwnershipTransfer { task, from, to, .. } => format!("{task} now owned at {to} (was {from})"),
            TraceEvent::MigrationComplete(r) => {
                format!(
                    "{} reinstated after {} with {} rebinds",
                    r.task_id,
                    r.reinstatement(),
                    r.rebind_count
                )
            }
            TraceEvent::NodeHardFail { node } => format!("{node} dies"),
            TraceEvent::RoundEnd { round, value } => format!("round {round} = {value}"),
            _ => continue,
        };
        println!("{:>10}  {line}", e.time.to_string());
    }
    let o = &run.outcome;
    println!(
        "survived: {}  results match: {}",
        o.survived,
        o.round_results == o.expected_results
    );
    println!("protocol violations: {}", validate_trace(&run.trace).len());
    Ok(())
}
