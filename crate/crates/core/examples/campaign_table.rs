//! Thirty trials per computational node of the 8-leaf tree, aggregated into
//! per-node, per-level and overall mean reinstatement times.

use agentft::engine::campaign::{campaign_rows, run_campaign, write_campaign_csv};
use agentft::engine::ExperimentConfig;
use agentft::metrics::ingest_csv;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let graph = cfg.validate()?;
    let outcomes = run_campaign(&cfg, cfg.trials, cfg.base_seed)?;
    let survived = outcomes.iter().filter(|o| o.survived).count();
    println!("{survived}/{} trials survived", outcomes.len());

    let mut csv = Vec::new();
    write_campaign_csv(&mut csv, &campaign_rows(&graph, &outcomes))?;
    let table = ingest_csv(&csv[..])?.table()?;
    print!("{}", table.to_text());
    Ok(())
}
