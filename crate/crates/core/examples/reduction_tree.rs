//! Build fan-in reduction trees and check them against the flat oracle.

use agentft::taskgraph::{build_binary_reduction, build_fanin_reduction, ReduceOp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = build_binary_reduction(8)?;
    for (level, ids) in g.levels() {
        let names: Vec<String> = ids.iter().map(|t| t.to_string()).collect();
        println!("level {level}: {}", names.join(" "));
    }
    let n13 = g.node(agentft::taskgraph::TaskId(13)).expect("8-leaf tree has N13");
    println!(
        "N13 takes {:?}, feeds {:?}: {} dependencies",
        n13.input_deps,
        n13.output_dep,
        n13.total_dependencies()
    );

    let feed: Vec<i64> = (1..=8).collect();
    println!("sum of 1..=8 = {}", g.reduce_reference(&feed)?);

    let wide = build_fanin_reduction(16, 4)?.with_operator(ReduceOp::Max);
    let feed: Vec<i64> = (0..16).map(|i| (i * 7) % 13).collect();
    println!(
        "fan-in 4 over 16 leaves: {} tasks, max = {}",
        wide.len(),
        wide.reduce_reference(&feed)?
    );

    match build_fanin_reduction(12, 2) {
        Ok(_) => unreachable!(),
        Err(e) => println!("12 leaves at fan-in 2: {e}"),
    }
    Ok(())
}
