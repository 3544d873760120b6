//! Drive one agent through perceive, decide, migrate and rebind by hand,
//! without the engine.

use agentft::agents::{decide_target, perceive, Agent, ProbeReply, ProbeRound};
use agentft::engine::sensor::SensorReading;
use agentft::taskgraph::{build_binary_reduction, DepId, TaskId};
use agentft::time::SimTime;
use agentft::topology::{build_grid, Coord, NodeStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn reading(node: Coord, temperature: f64) -> SensorReading {
    SensorReading {
        node,
        temperature,
        timestamp: SimTime::from_ms(250.0),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = build_binary_reduction(8)?;
    let grid = build_grid(20, 4, 5)?;
    let locate = |t: TaskId| Coord::new((t.0 as usize - 1) / 5, (t.0 as usize - 1) % 5);
    let node = graph.node(TaskId(13)).expect("N13 exists");
    let home = locate(node.id);
    let mut agent = Agent::new(13, node, home, locate);

    agent.accept_input(0, DepId::Node(TaskId(9)), 40, graph.operator())?;

    let replies = grid
        .neighbors(home)?
        .into_iter()
        .map(|c| ProbeReply {
            node: c,
            status: if c == Coord::new(1, 1) {
                NodeStatus::Failed
            } else {
                NodeStatus::Healthy
            },
            residents: vec![],
            reading: reading(c, 41.0),
        })
        .collect();
    let round = ProbeRound {
        own_reading: reading(home, 73.2),
        threshold: 70.0,
        replies,
    };
    let seen = perceive(&mut agent, &round)?;
    println!(
        "{} at {home} sees {} live neighbors",
        agent.task_id,
        seen.alive_nodes.len()
    );

    let target = decide_target(&mut agent, &seen, &mut ChaCha8Rng::seed_from_u64(1))?;
    agent.begin_migration(target)?;
    let state = agent.snapshot();
    println!("moving to {target} carrying {:?}", state.work.values());

    agent.install(state, target)?;
    let notices = agent.notify_dependents(target);
    for n in &notices {
        println!("  rebind {:?} -> {}", n.to, n.location);
        agent.acknowledge(n.to)?;
    }
    let rebound = agent.finish_rebinding()?;
    println!("{} idle at {} after {rebound} rebinds", agent.task_id, agent.location());
    Ok(())
}
