//! Agent-based proactive fault tolerance on a simulated grid.
//!
//! A fan-in reduction tree runs over a 2-D grid of nodes. When a node's
//! simulated temperature crosses a threshold, the agent hosting each affected
//! task probes its Moore neighborhood, moves its state to a healthy neighbor
//! and rebinds every input and output dependency before the node dies.

pub mod agents;
pub mod cli;
pub mod engine;
pub mod metrics;
pub mod taskgraph;
pub mod time;
pub mod topology;
