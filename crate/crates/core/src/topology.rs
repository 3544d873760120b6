//! Logical grid abstraction over a fully connected set of physical nodes.
//!
//! Physical nodes are assigned to grid cells in row-major order. A process may
//! only talk to a process on a vertically, horizontally or diagonally adjacent
//! cell, so the grid is also the authority for routing and migration targets.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("grid {rows}x{cols} does not hold {node_count} nodes")]
    DimensionMismatch {
        node_count: usize,
        rows: usize,
        cols: usize,
    },
    #[error("coordinate {0} is outside the grid")]
    InvalidCoordinate(Coord),
    #[error("illegal status transition for node {id}: {from:?} -> {to:?}")]
    IllegalTransition {
        id: usize,
        from: NodeStatus,
        to: NodeStatus,
    },
}

/// Cell position on the logical grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Chebyshev distance, i.e. the number of grid hops between two cells.
    pub fn hops_to(self, other: Coord) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }

    pub fn is_adjacent(self, other: Coord) -> bool {
        self != other && self.hops_to(other) == 1
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Healthy,
    PredictedFailing,
    Failed,
}

impl NodeStatus {
    fn can_become(self, next: NodeStatus) -> bool {
        use NodeStatus::*;
        matches!(
            (self, next),
            (Healthy, PredictedFailing) | (Healthy, Failed) | (PredictedFailing, Failed)
        ) || self == next
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalNode {
    pub id: usize,
    pub status: NodeStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalNode {
    pub coord: Coord,
    pub physical: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridTopology {
    rows: usize,
    cols: usize,
    /// Row-major; `cells[i].physical == i`.
    cells: Vec<LogicalNode>,
    nodes: Vec<PhysicalNode>,
}

/// Builds a `rows` x `cols` grid over `node_count` physical nodes.
pub fn build_grid(node_count: usize, rows: usize, cols: usize) -> Result<GridTopology, TopologyError> {
    if node_count == 0 || rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(node_count) {
        return Err(TopologyError::DimensionMismatch { node_count, rows, cols });
    }
    let cells = (0..node_count)
        .map(|id| LogicalNode {
            coord: Coord::new(id / cols, id % cols),
            physical: id,
        })
        .collect();
    let nodes = (0..node_count)
        .map(|id| PhysicalNode {
            id,
            status: NodeStatus::Healthy,
        })
        .collect();
    Ok(GridTopology {
        rows,
        cols,
        cells,
        nodes,
    })
}

impl GridTopology {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, at: Coord) -> bool {
        at.row < self.rows && at.col < self.cols
    }

    fn check(&self, at: Coord) -> Result<(), TopologyError> {
        if self.contains(at) {
            Ok(())
        } else {
            Err(TopologyError::InvalidCoordinate(at))
        }
    }

    pub fn cell(&self, at: Coord) -> Result<LogicalNode, TopologyError> {
        self.check(at)?;
        Ok(self.cells[at.row * self.cols + at.col])
    }

    pub fn physical_at(&self, at: Coord) -> Result<usize, TopologyError> {
        self.cell(at).map(|c| c.physical)
    }

    pub fn coord_of(&self, physical: usize) -> Option<Coord> {
        self.cells.get(physical).map(|c| c.coord)
    }

    /// All coordinates in row-major order.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        self.cells.iter().map(|c| c.coord)
    }

    pub fn status(&self, at: Coord) -> Result<NodeStatus, TopologyError> {
        let id = self.physical_at(at)?;
        Ok(self.nodes[id].status)
    }

    pub fn physical_nodes(&self) -> &[PhysicalNode] {
        &self.nodes
    }

    /// Moves a node forward in its lifecycle. Backwards transitions are rejected.
    pub fn set_status(&mut self, at: Coord, status: NodeStatus) -> Result<(), TopologyError> {
        let id = self.physical_at(at)?;
        let node = &mut self.nodes[id];
        if !node.status.can_become(status) {
            return Err(TopologyError::IllegalTransition {
                id,
                from: node.status,
                to: status,
            });
        }
        node.status = status;
        Ok(())
    }

    /// Moore neighborhood of `at`, clipped at the borders (no wrap-around).
    pub fn neighbors(&self, at: Coord) -> Result<BTreeSet<Coord>, TopologyError> {
        self.check(at)?;
        let mut out = BTreeSet::new();
        for row in at.row.saturating_sub(1)..=(at.row + 1).min(self.rows - 1) {
            for col in at.col.saturating_sub(1)..=(at.col + 1).min(self.cols - 1) {
                let c = Coord::new(row, col);
                if c != at {
                    out.insert(c);
                }
            }
        }
        Ok(out)
    }

    pub fn healthy_neighbors(&self, at: Coord) -> Result<BTreeSet<Coord>, TopologyError> {
        Ok(self
            .neighbors(at)?
            .into_iter()
            .filter(|c| self.nodes[self.cells[c.row * self.cols + c.col].physical].status == NodeStatus::Healthy)
            .collect())
    }

    /// Next hop from `from` towards `to`, stepping so the Chebyshev distance
    /// drops by one. The straight diagonal step is tried first; cells for which
    /// `blocked` returns true are skipped. `None` when `from == to` or every
    /// distance-reducing neighbor is blocked.
    pub fn next_hop(&self, from: Coord, to: Coord, blocked: impl Fn(Coord) -> bool) -> Option<Coord> {
        if from == to || !self.contains(from) || !self.contains(to) {
            return None;
        }
        let step = |a: usize, b: usize| -> usize {
            match a.cmp(&b) {
                std::cmp::Ordering::Less => a + 1,
                std::cmp::Ordering::Greater => a - 1,
                std::cmp::Ordering::Equal => a,
            }
        };
        let greedy = Coord::new(step(from.row, to.row), step(from.col, to.col));
        if !blocked(greedy) {
            return Some(greedy);
        }
        let dist = from.hops_to(to);
        self.neighbors(from)
            .ok()?
            .into_iter()
            .find(|&c| c.hops_to(to) + 1 == dist && !blocked(c))
    }
}
