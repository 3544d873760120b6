use std::io::BufReader;

use agentft::engine::campaign::{run_campaign, run_campaign_on};
use agentft::engine::sim::run_trial;
use agentft::engine::trace::{read_jsonl, TraceEvent};
use agentft::engine::validate::validate_trace;
use agentft::engine::{ExperimentConfig, FailureReason, FaultEntry, FaultSchedule};
use agentft::taskgraph::TaskId;
use proptest::prelude::*;

#[test]
fn same_base_seed_same_outcomes() {
    let cfg = ExperimentConfig {
        rounds: 4,
        ..Default::default()
    };
    let a = serde_json::to_vec(&run_campaign(&cfg, 3, 11).unwrap()).unwrap();
    let b = serde_json::to_vec(&run_campaign(&cfg, 3, 11).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn traces_on_disk_round_trip_and_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        rounds: 3,
        ..Default::default()
    };
    let outcomes = run_campaign_on(&cfg, 2, 1, Some(&[TaskId(13)]), Some(tmp.path())).unwrap();
    assert_eq!(outcomes.len(), 2);
    for o in outcomes {
        let path = o.trace_path.unwrap();
        let trace = read_jsonl(BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
        assert!(matches!(trace[0].event, TraceEvent::TrialHeader { .. }));
        assert!(validate_trace(&trace).is_empty());
        let records: Vec<_> = trace
            .iter()
            .filter_map(|e| match &e.event {
                TraceEvent::MigrationComplete(r) => Some(r.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(records, o.migration_records);
    }
}

#[test]
fn sequential_faults_each_migrate_once() {
    let cfg = ExperimentConfig::default();
    let schedule = FaultSchedule {
        entries: vec![
            FaultEntry {
                target: TaskId(9),
                ramp_start_ms: 100.0,
                ramp_rate: None,
            },
            FaultEntry {
                target: TaskId(14),
                ramp_start_ms: 1500.0,
                ramp_rate: None,
            },
        ],
    };
    let run = run_trial(&cfg, 3, &schedule).unwrap();
    assert!(run.outcome.survived, "{:?}", run.outcome.failure);
    let moved: Vec<u32> = run.outcome.migration_records.iter().map(|r| r.task_id.0).collect();
    assert_eq!(moved, vec![9, 14]);
    assert!(validate_trace(&run.trace).is_empty());
}

#[test]
fn overlapping_faults_need_opt_in() {
    let cfg = ExperimentConfig::default();
    let schedule = FaultSchedule {
        entries: vec![
            FaultEntry {
                target: TaskId(9),
                ramp_start_ms: 100.0,
                ramp_rate: None,
            },
            FaultEntry {
                target: TaskId(10),
                ramp_start_ms: 120.0,
                ramp_rate: None,
            },
        ],
    };
    assert!(run_trial(&cfg, 1, &schedule).is_err());
    let cfg = ExperimentConfig {
        allow_concurrent_faults: true,
        ..cfg
    };
    assert!(run_trial(&cfg, 1, &schedule).is_ok());
}

#[test]
fn ack_timeout_when_acks_are_slower_than_the_retry() {
    // a rebind round trip takes at least two hops, longer than the timeout
    let cfg = ExperimentConfig {
        rebind_timeout_ms: 0.5,
        ..Default::default()
    };
    let o = run_trial(&cfg, 1, &FaultSchedule::single(TaskId(13), 200.0))
        .unwrap()
        .outcome;
    assert!(
        matches!(o.failure, Some(FailureReason::AckTimeout { .. })),
        "{:?}",
        o.failure
    );
}

#[test]
fn reinstatement_equals_end_minus_start() {
    let cfg = ExperimentConfig::default();
    for o in run_campaign(&cfg, 2, 9).unwrap() {
        for r in &o.migration_records {
            assert_eq!(r.reinstatement(), r.end_time - r.start_time);
            assert!(r.start_time >= r.predicted_at);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_single_fault_survives_with_exact_results(seed in any::<u64>(), target in 1u32..=15, start in 0.0f64..800.0) {
        let cfg = ExperimentConfig { rounds: 5, ..Default::default() };
        let run = run_trial(&cfg, seed, &FaultSchedule::single(TaskId(target), start)).unwrap();
        prop_assert!(run.outcome.survived, "{:?}", run.outcome.failure);
        prop_assert_eq!(&run.outcome.round_results, &run.outcome.expected_results);
        prop_assert!(validate_trace(&run.trace).is_empty());
        prop_assert!(run.trace.windows(2).all(|w| w[0].time <= w[1].time));
    }
}
