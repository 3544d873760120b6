//! Re-aggregate published per-node means without running the simulator.

use agentft::metrics::ingest_csv;

const PUBLISHED: &str = "trial_id,node_id,level,duration_s
0,9,2,0.339
0,10,2,0.349
0,11,2,0.352
0,12,2,0.345
0,13,3,0.347
0,14,3,0.340
0,15,4,0.341
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = ingest_csv(PUBLISHED.as_bytes())?.table()?;
    print!("{}", table.to_text());
    println!(
        "overall: {:.4} by node, {:.4} by level",
        table.overall_by_node, table.overall_by_level
    );
    Ok(())
}
