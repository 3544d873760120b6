//! Mean reinstatement time as the number of dependencies grows.

use agentft::engine::ExperimentConfig;
use agentft::metrics::{dependency_sweep, write_sweep_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let rows = dependency_sweep(&cfg, 2..=8, 30, cfg.base_seed)?;
    write_sweep_csv(std::io::stdout().lock(), &rows)?;

    let mut free = cfg.clone();
    free.costs.rebind_ms_per_dep = 0.0;
    let flat = dependency_sweep(&free, 2..=8, 30, cfg.base_seed)?;
    let means: Vec<String> = flat.iter().map(|r| format!("{:.1}", r.mean_reinstatement_ms)).collect();
    println!("with free rebinds: {}", means.join(" "));
    Ok(())
}
