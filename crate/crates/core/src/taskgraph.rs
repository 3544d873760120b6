//! Fan-in reduction trees.
//!
//! Leaves sit on level 1 and each ingests one external feed. Every internal
//! node combines the values of its `fan_in` children and hands the result to
//! exactly one parent; the root hands it to the trial sink instead. Ids are
//! handed out level by level starting at 1, so an 8-leaf binary tree has
//! leaves 1..=8, then 9..=12, 13..=14 and the root 15.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskGraphError {
    #[error("leaf count {leaf_count} is not a positive power of fan-in {fan_in}")]
    InvalidLeafCount { leaf_count: usize, fan_in: usize },
    #[error("fan-in must be at least 2, got {0}")]
    InvalidFanIn(usize),
    #[error("feed has {got} values but the tree has {expected} leaves")]
    FeedSizeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

/// Something a node receives from or yields to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepId {
    Node(TaskId),
    /// External input feed `I_i`, numbered like the leaf it feeds.
    Feed(u32),
}

impl fmt::Display for DepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepId::Node(t) => write!(f, "{t}"),
            DepId::Feed(i) => write!(f, "I{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceOp {
    #[default]
    Sum,
    Min,
    Max,
}

impl ReduceOp {
    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            ReduceOp::Sum => a + b,
            ReduceOp::Min => a.min(b),
            ReduceOp::Max => a.max(b),
        }
    }

    /// Folds a non-empty slice left to right.
    pub fn fold(self, values: &[i64]) -> Option<i64> {
        values.iter().copied().reduce(|a, b| self.apply(a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionNode {
    pub id: TaskId,
    pub level: u32,
    pub input_deps: Vec<DepId>,
    pub output_dep: Option<TaskId>,
    #[serde(default)]
    pub data: Vec<i64>,
}

impl ReductionNode {
    pub fn is_leaf(&self) -> bool {
        self.level == 1
    }

    pub fn is_root(&self) -> bool {
        self.output_dep.is_none()
    }

    /// Input dependencies plus the output dependency, if any.
    pub fn total_dependencies(&self) -> usize {
        self.input_deps.len() + usize::from(self.output_dep.is_some())
    }

    pub fn dependencies(&self) -> impl Iterator<Item = DepId> + '_ {
        self.input_deps.iter().copied().chain(self.output_dep.map(DepId::Node))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    nodes: BTreeMap<TaskId, ReductionNode>,
    levels: BTreeMap<u32, Vec<TaskId>>,
    fan_in: usize,
    #[serde(default)]
    operator: ReduceOp,
}

pub fn build_binary_reduction(leaf_count: usize) -> Result<TaskGraph, TaskGraphError> {
    build_fanin_reduction(leaf_count, 2)
}

pub fn build_fanin_reduction(leaf_count: usize, fan_in: usize) -> Result<TaskGraph, TaskGraphError> {
    if fan_in < 2 {
        return Err(TaskGraphError::InvalidFanIn(fan_in));
    }
    // A single leaf would be its own root, which has no reduction work to do.
    let mut width = leaf_count;
    if width < fan_in {
        return Err(TaskGraphError::InvalidLeafCount { leaf_count, fan_in });
    }
    while width > 1 {
        if !width.is_multiple_of(fan_in) {
            return Err(TaskGraphError::InvalidLeafCount { leaf_count, fan_in });
        }
        width /= fan_in;
    }

    let mut nodes = BTreeMap::new();
    let mut levels = BTreeMap::new();
    let mut next_id = 1u32;

    let leaves: Vec<TaskId> = (0..leaf_count)
        .map(|_| {
            let id = TaskId(next_id);
            next_id += 1;
            id
        })
        .collect();
    for (i, &id) in leaves.iter().enumerate() {
        nodes.insert(
            id,
            ReductionNode {
                id,
                level: 1,
                input_deps: vec![DepId::Feed(i as u32 + 1)],
                output_dep: None,
                data: Vec::new(),
            },
        );
    }
    levels.insert(1, leaves.clone());

    let mut below = leaves;
    let mut level = 1;
    while below.len() > 1 {
        level += 1;
        let mut current = Vec::with_capacity(below.len() / fan_in);
        for children in below.chunks(fan_in) {
            let id = TaskId(next_id);
            next_id += 1;
            for child in children {
                nodes.get_mut(child).expect("child was inserted").output_dep = Some(id);
            }
            nodes.insert(
                id,
                ReductionNode {
                    id,
                    level,
                    input_deps: children.iter().copied().map(DepId::Node).collect(),
                    output_dep: None,
                    data: Vec::new(),
                },
            );
            current.push(id);
        }
        levels.insert(level, current.clone());
        below = current;
    }

    Ok(TaskGraph {
        nodes,
        levels,
        fan_in,
        operator: ReduceOp::Sum,
    })
}

impl TaskGraph {
    pub fn with_operator(mut self, operator: ReduceOp) -> Self {
        self.operator = operator;
        self
    }

    pub fn operator(&self) -> ReduceOp {
        self.operator
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: TaskId) -> Option<&ReductionNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ReductionNode> {
        self.nodes.values()
    }

    pub fn levels(&self) -> &BTreeMap<u32, Vec<TaskId>> {
        &self.levels
    }

    pub fn depth(&self) -> u32 {
        self.levels.keys().next_back().copied().unwrap_or(0)
    }

    pub fn leaves(&self) -> &[TaskId] {
        self.levels.get(&1).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn root(&self) -> TaskId {
        self.levels[&self.depth()][0]
    }

    /// Non-leaf nodes, level-ascending then id-ascending.
    pub fn computational_nodes(&self) -> Vec<TaskId> {
        self.levels
            .iter()
            .filter(|(&level, _)| level >= 2)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect()
    }

    /// Tasks that consume `id`'s output or feed it an input.
    pub fn dependents_of(&self, id: TaskId) -> Vec<TaskId> {
        self.nodes
            .get(&id)
            .map(|n| {
                n.dependencies()
                    .filter_map(|d| match d {
                        DepId::Node(t) => Some(t),
                        DepId::Feed(_) => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Folds the whole feed with the tree's operator. Independent of the tree
    /// shape; used as the correctness oracle for simulated rounds.
    pub fn reduce_reference(&self, feed: &[i64]) -> Result<i64, TaskGraphError> {
        if feed.len() != self.leaf_count() {
            return Err(TaskGraphError::FeedSizeMismatch {
                expected: self.leaf_count(),
                got: feed.len(),
            });
        }
        Ok(self.operator.fold(feed).expect("trees have at least two leaves"))
    }
}

pub fn computational_nodes(graph: &TaskGraph) -> Vec<TaskId> {
    graph.computational_nodes()
}

pub fn reduce_reference(graph: &TaskGraph, feed: &[i64]) -> Result<i64, TaskGraphError> {
    graph.reduce_reference(feed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(range: std::ops::RangeInclusive<u32>) -> Vec<TaskId> {
        range.map(TaskId).collect()
    }

    #[test]
    fn eight_leaf_binary_tree() {
        let g = build_binary_reduction(8).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.depth(), 4);
        assert_eq!(g.levels()[&1], ids(1..=8));
        assert_eq!(g.levels()[&2], ids(9..=12));
        assert_eq!(g.levels()[&3], ids(13..=14));
        assert_eq!(g.levels()[&4], ids(15..=15));

        let n13 = g.node(TaskId(13)).unwrap();
        assert_eq!(n13.input_deps, vec![DepId::Node(TaskId(9)), DepId::Node(TaskId(10))]);
        assert_eq!(n13.output_dep, Some(TaskId(15)));
        assert_eq!(n13.total_dependencies(), 3);

        let n1 = g.node(TaskId(1)).unwrap();
        assert_eq!(n1.input_deps, vec![DepId::Feed(1)]);
        assert_eq!(n1.output_dep, Some(TaskId(9)));
        assert!(g.node(TaskId(15)).unwrap().is_root());
    }

    #[test]
    fn smallest_tree() {
        let g = build_binary_reduction(2).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(
            g.node(TaskId(3)).unwrap().input_deps,
            vec![DepId::Node(TaskId(1)), DepId::Node(TaskId(2))]
        );
        assert_eq!(g.computational_nodes(), vec![TaskId(3)]);
    }

    #[test]
    fn sixteen_leaves_level_sizes() {
        let g = build_binary_reduction(16).unwrap();
        let sizes: Vec<usize> = g.levels().values().map(Vec::len).collect();
        assert_eq!(sizes, vec![16, 8, 4, 2, 1]);
        assert_eq!(g.len(), 31);
        assert_eq!(g.computational_nodes().len(), 15);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert_eq!(
            build_binary_reduction(6),
            Err(TaskGraphError::InvalidLeafCount {
                leaf_count: 6,
                fan_in: 2
            })
        );
        assert!(build_binary_reduction(1).is_err());
        assert!(build_binary_reduction(0).is_err());
        assert_eq!(build_fanin_reduction(8, 1), Err(TaskGraphError::InvalidFanIn(1)));
        assert!(build_fanin_reduction(8, 3).is_err());
    }

    #[test]
    fn fan_in_three_and_four() {
        let g = build_fanin_reduction(9, 3).unwrap();
        assert_eq!(g.len(), 13);
        let sizes: Vec<usize> = g.levels().values().map(Vec::len).collect();
        assert_eq!(sizes, vec![9, 3, 1]);

        let g = build_fanin_reduction(16, 4).unwrap();
        for id in g.levels()[&2].iter() {
            let n = g.node(*id).unwrap();
            assert_eq!(n.input_deps.len(), 4);
            assert_eq!(n.total_dependencies(), 5);
        }
        assert_eq!(g.node(g.root()).unwrap().total_dependencies(), 4);
    }

    #[test]
    fn fan_in_two_matches_binary_builder() {
        for leaves in [2, 4, 8, 16, 32] {
            assert_eq!(
                build_fanin_reduction(leaves, 2).unwrap(),
                build_binary_reduction(leaves).unwrap()
            );
        }
    }

    #[test]
    fn reference_reduction() {
        let g = build_binary_reduction(8).unwrap();
        assert_eq!(g.reduce_reference(&[1; 8]).unwrap(), 8);
        assert_eq!(g.reduce_reference(&[0; 8]).unwrap(), 0);
        let feed = [3, 1, 4, 1, 5, 9, 2, 6];
        let mut total = 0;
        for v in feed {
            total += v;
        }
        assert_eq!(g.reduce_reference(&feed).unwrap(), total);
        assert_eq!(
            g.reduce_reference(&[1, 2]),
            Err(TaskGraphError::FeedSizeMismatch { expected: 8, got: 2 })
        );
        let g = g.with_operator(ReduceOp::Max);
        assert_eq!(g.reduce_reference(&feed).unwrap(), 9);
    }

    #[test]
    fn json_carries_structure() {
        let g = build_binary_reduction(4).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: TaskGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert!(text.contains("\"input_deps\":[{\"node\":1},{\"node\":2}]"));
    }

    fn shapes() -> impl Strategy<Value = (usize, usize)> {
        (2usize..=5, 1u32..=4).prop_filter_map("tree too large", |(fan_in, depth)| {
            let leaves = fan_in.checked_pow(depth)?;
            (leaves <= 1024).then_some((leaves, fan_in))
        })
    }

    proptest! {
        #[test]
        fn structural_invariants((leaves, fan_in) in shapes()) {
            let g = build_fanin_reduction(leaves, fan_in).unwrap();
            // geometric series: (f*L - 1) / (f - 1)
            prop_assert_eq!(g.len(), (fan_in * leaves - 1) / (fan_in - 1));
            let root = g.root();
            for n in g.nodes() {
                if n.is_leaf() {
                    prop_assert_eq!(n.input_deps.len(), 1);
                    prop_assert!(n.output_dep.is_some());
                } else {
                    prop_assert_eq!(n.input_deps.len(), fan_in);
                    let max_child = n.input_deps.iter().map(|d| match d {
                        DepId::Node(t) => g.node(*t).unwrap().level,
                        DepId::Feed(_) => 0,
                    }).max().unwrap();
                    prop_assert_eq!(n.level, max_child + 1);
                }
                match n.output_dep {
                    Some(parent) => prop_assert_eq!(g.node(parent).unwrap().level, n.level + 1),
                    None => prop_assert_eq!(n.id, root),
                }
            }
            // connected: every node reaches the root
            for n in g.nodes() {
                let mut at = n.id;
                let mut steps = 0;
                while let Some(p) = g.node(at).unwrap().output_dep {
                    at = p;
                    steps += 1;
                    prop_assert!(steps <= g.depth());
                }
                prop_assert_eq!(at, root);
            }
        }

        #[test]
        fn reference_is_permutation_invariant(mut feed in proptest::collection::vec(0i64..=1000, 16), seed in any::<u64>()) {
            let g = build_binary_reduction(16).unwrap();
            let expected = g.reduce_reference(&feed).unwrap();
            // deterministic shuffle driven by the seed
            let mut s = seed;
            for i in (1..feed.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                feed.swap(i, j);
            }
            prop_assert_eq!(g.reduce_reference(&feed).unwrap(), expected);
        }
    }
}
