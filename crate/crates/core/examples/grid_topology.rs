//! Lay a grid over the cluster, mark a node as failing and route around it.

use agentft::topology::{build_grid, Coord, NodeStatus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut grid = build_grid(20, 4, 5)?;
    let centre = Coord::new(1, 2);

    println!("{} cells on a {}x{} grid", grid.len(), grid.rows(), grid.cols());
    println!("physical node under {centre}: {}", grid.physical_at(centre)?);
    let ns: Vec<String> = grid.neighbors(centre)?.iter().map(|c| c.to_string()).collect();
    println!("neighbors of {centre}: {}", ns.join(" "));

    grid.set_status(Coord::new(1, 1), NodeStatus::Failed)?;
    grid.set_status(Coord::new(2, 1), NodeStatus::PredictedFailing)?;
    let healthy: Vec<String> = grid.healthy_neighbors(centre)?.iter().map(|c| c.to_string()).collect();
    println!(
        "healthy neighbors once (1,1) died and (2,1) runs hot: {}",
        healthy.join(" ")
    );

    // walk a message hop by hop, skipping dead cells
    let (mut at, to) = (Coord::new(1, 0), Coord::new(1, 4));
    let mut path = vec![at];
    while at != to {
        at = grid
            .next_hop(at, to, |c| grid.status(c) == Ok(NodeStatus::Failed))
            .ok_or("no route")?;
        path.push(at);
    }
    let hops: Vec<String> = path.iter().map(|c| c.to_string()).collect();
    println!("route: {}", hops.join(" -> "));
    Ok(())
}
