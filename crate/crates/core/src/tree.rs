//! Finite non-recombining scenario trees.
//!
//! A [`MarketTree`] is the discrete canonical space: every node is a path
//! prefix, the root sits at the origin, and all leaves live at the terminal
//! time. Node ids are assigned in breadth-first order, so every report that
//! references ids is reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub time: usize,
    pub spot: Vec<f64>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketTree {
    dim: usize,
    depth: usize,
    nodes: Vec<Node>,
}

/// A child offset: a bare number is accepted for one-dimensional trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Offset {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Offset {
    fn to_vec(&self, dim: usize) -> Result<Vec<f64>> {
        let v = match self {
            Offset::Scalar(x) => vec![*x],
            Offset::Vector(v) => v.clone(),
        };
        if v.len() != dim {
            return Err(Error::InvalidTree(format!(
                "offset {v:?} has {} components, tree dimension is {dim}",
                v.len()
            )));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Generator {
    /// Offsets `{-u, +u}` per coordinate (`2^d` children).
    Binomial { u: f64 },
    /// Offsets `{-u, 0, +u}` per coordinate (`3^d` children).
    Trinomial { u: f64 },
    /// Either the same `offsets` at every node, or per-node offset lists in
    /// breadth-first order (`nodes`, one entry per non-leaf node).
    Explicit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offsets: Option<Vec<Offset>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nodes: Option<Vec<Vec<Offset>>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub dim: usize,
    pub depth: usize,
    pub generator: Generator,
}

fn product_offsets(dim: usize, levels: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(out.len() * levels.len());
        for prefix in &out {
            for &l in levels {
                let mut v = prefix.clone();
                v.push(l);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

impl MarketTree {
    /// Builds a tree breadth-first; `offsets` is called once per non-leaf node
    /// with the node's id, time and spot, in id order.
    pub fn from_offsets<F>(dim: usize, depth: usize, mut offsets: F) -> Result<Self>
    where
        F: FnMut(NodeId, usize, &[f64]) -> Result<Vec<Vec<f64>>>,
    {
        if dim == 0 {
            return Err(Error::InvalidTree("dimension must be positive".into()));
        }
        if depth == 0 {
            return Err(Error::InvalidTree("depth must be positive".into()));
        }
        let mut nodes = vec![Node {
            id: NodeId(0),
            time: 0,
            spot: vec![0.0; dim],
            parent: None,
            children: Vec::new(),
        }];
        let mut cursor = 0;
        while cursor < nodes.len() {
            let (id, time, spot) = {
                let n = &nodes[cursor];
                (n.id, n.time, n.spot.clone())
            };
            cursor += 1;
            if time == depth {
                continue;
            }
            let offs = offsets(id, time, &spot)?;
            if offs.is_empty() {
                return Err(Error::InvalidTree(format!("node {id} has an empty child list")));
            }
            let mut kids = Vec::with_capacity(offs.len());
            for off in offs {
                if off.len() != dim {
                    return Err(Error::InvalidTree(format!(
                        "offset at node {id} has {} components, expected {dim}",
                        off.len()
                    )));
                }
                let child_spot: Vec<f64> = spot.iter().zip(&off).map(|(s, o)| s + o).collect();
                if child_spot.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidTree(format!("non-finite spot below node {id}")));
                }
                let cid = NodeId(nodes.len());
                nodes.push(Node {
                    id: cid,
                    time: time + 1,
                    spot: child_spot,
                    parent: Some(id),
                    children: Vec::new(),
                });
                kids.push(cid);
            }
            nodes[id.0].children = kids;
        }
        Ok(MarketTree { dim, depth, nodes })
    }

    pub fn build(spec: &TreeSpec) -> Result<Self> {
        let dim = spec.dim;
        match &spec.generator {
            Generator::Binomial { u } => {
                let offs = product_offsets(dim, &[-u, *u]);
                Self::from_offsets(dim, spec.depth, |_, _, _| Ok(offs.clone()))
            }
            Generator::Trinomial { u } => {
                let offs = product_offsets(dim, &[-u, 0.0, *u]);
                Self::from_offsets(dim, spec.depth, |_, _, _| Ok(offs.clone()))
            }
            Generator::Explicit { offsets, nodes } => match (offsets, nodes) {
                (Some(offs), None) => {
                    let offs = offs
                        .iter()
                        .map(|o| o.to_vec(dim))
                        .collect::<Result<Vec<_>>>()?;
                    Self::from_offsets(dim, spec.depth, |_, _, _| Ok(offs.clone()))
                }
                (None, Some(per_node)) => {
                    let mut next = 0usize;
                    Self::from_offsets(dim, spec.depth, |id, _, _| {
                        let entry = per_node.get(next).ok_or_else(|| {
                            Error::InvalidTree(format!("no explicit offsets for node {id}"))
                        })?;
                        next += 1;
                        entry.iter().map(|o| o.to_vec(dim)).collect()
                    })
                }
                _ => Err(Error::InvalidTree(
                    "explicit generator needs exactly one of `offsets` or `nodes`".into(),
                )),
            },
        }
    }

    /// Explicit per-node description of this tree (round-trips through [`build`](Self::build)).
    pub fn to_spec(&self) -> TreeSpec {
        let nodes = self
            .nodes
            .iter()
            .filter(|n| !n.children.is_empty())
            .map(|n| {
                n.children
                    .iter()
                    .map(|&c| {
                        let inc = self.increment(n.id, c);
                        if self.dim == 1 {
                            Offset::Scalar(inc[0])
                        } else {
                            Offset::Vector(inc)
                        }
                    })
                    .collect()
            })
            .collect();
        TreeSpec {
            dim: self.dim,
            depth: self.depth,
            generator: Generator::Explicit {
                offsets: None,
                nodes: Some(nodes),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn spot(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].spot
    }

    pub fn time(&self, id: NodeId) -> usize {
        self.nodes[id.0].time
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].children.is_empty()
    }

    /// `x_child - x_parent`.
    pub fn increment(&self, parent: NodeId, child: NodeId) -> Vec<f64> {
        self.spot(child)
            .iter()
            .zip(self.spot(parent))
            .map(|(c, p)| c - p)
            .collect()
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.children.is_empty()).map(|n| n.id)
    }

    pub fn non_leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| !n.children.is_empty()).map(|n| n.id)
    }

    pub fn level(&self, t: usize) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(move |n| n.time == t).map(|n| n.id)
    }

    /// Nodes of the subtree rooted at `n` (including `n`), in increasing id order.
    pub fn subtree(&self, n: NodeId) -> Vec<NodeId> {
        let mut out = vec![n];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(self.children(out[i]));
            i += 1;
        }
        out.sort();
        out
    }

    pub fn leaves_below(&self, n: NodeId) -> Vec<NodeId> {
        self.subtree(n).into_iter().filter(|&m| self.is_leaf(m)).collect()
    }

    /// True iff `a` is an ancestor of `b` or equal to it.
    pub fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            if self.time(c) <= self.time(a) {
                return false;
            }
            cur = self.parent(c);
        }
        false
    }

    /// Root-to-node path.
    pub fn path_to(&self, n: NodeId) -> TreePath {
        let mut ids = vec![n];
        let mut cur = self.parent(n);
        while let Some(p) = cur {
            ids.push(p);
            cur = self.parent(p);
        }
        ids.reverse();
        TreePath(ids)
    }

    /// Path from `from` down to its descendant `to`.
    pub fn path_between(&self, from: NodeId, to: NodeId) -> Option<TreePath> {
        let full = self.path_to(to);
        let start = full.0.iter().position(|&m| m == from)?;
        Some(TreePath(full.0[start..].to_vec()))
    }

    /// Child of `n` on the way to the descendant `d`.
    pub fn child_towards(&self, n: NodeId, d: NodeId) -> Option<NodeId> {
        let mut cur = d;
        while let Some(p) = self.parent(cur) {
            if p == n {
                return Some(cur);
            }
            cur = p;
        }
        None
    }
}

/// A sequence of node ids, each the parent of the next.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TreePath(pub Vec<NodeId>);

impl TreePath {
    pub fn first(&self) -> Option<NodeId> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<NodeId> {
        self.0.last().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn is_consistent(&self, tree: &MarketTree) -> bool {
        !self.0.is_empty()
            && self.0.iter().all(|&n| tree.contains(n))
            && self.edges().all(|(a, b)| tree.parent(b) == Some(a))
    }

    /// A full root-to-leaf path of the tree.
    pub fn is_full(&self, tree: &MarketTree) -> bool {
        self.is_consistent(tree)
            && self.first() == Some(tree.root())
            && self.last().is_some_and(|l| tree.is_leaf(l))
            && self.0.len() == tree.depth() + 1
    }

    /// Splits at `n`: returns (prefix ending at `n`, suffix starting at `n`).
    pub fn split_at_node(&self, n: NodeId) -> Option<(TreePath, TreePath)> {
        let k = self.0.iter().position(|&m| m == n)?;
        Some((TreePath(self.0[..=k].to_vec()), TreePath(self.0[k..].to_vec())))
    }
}

/// Concatenates a prefix ending at node `n` with a suffix starting at `n`.
pub fn concat_path(tree: &MarketTree, prefix: &TreePath, suffix: &TreePath) -> Result<TreePath> {
    let (Some(end), Some(start)) = (prefix.last(), suffix.first()) else {
        return Err(Error::InvalidPath("empty path".into()));
    };
    if end != start {
        return Err(Error::InvalidPath(format!(
            "suffix starts at node {start}, prefix ends at node {end}"
        )));
    }
    if !prefix.is_consistent(tree) || !suffix.is_consistent(tree) {
        return Err(Error::InvalidPath("path is not a parent/child chain".into()));
    }
    let mut ids = prefix.0.clone();
    ids.extend_from_slice(&suffix.0[1..]);
    Ok(TreePath(ids))
}

/// A set of nodes meeting every path below its origin exactly once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StoppingTime(pub BTreeSet<NodeId>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoppingViolation {
    UnknownNode(NodeId),
    OutsideSubtree(NodeId),
    AncestorPair(NodeId, NodeId),
    PathMissed(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoppingTimeCheck {
    pub ok: bool,
    pub violations: Vec<StoppingViolation>,
}

impl StoppingTime {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        StoppingTime(nodes.into_iter().collect())
    }

    pub fn root(tree: &MarketTree) -> Self {
        Self::new([tree.root()])
    }

    pub fn leaves(tree: &MarketTree) -> Self {
        Self::new(tree.leaves())
    }

    /// The deterministic time `t`.
    pub fn at_level(tree: &MarketTree, t: usize) -> Self {
        Self::new(tree.level(t))
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.0.contains(&n)
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().copied()
    }

    /// Member of this stopping time on the path from `origin` to `leaf`.
    pub fn hit(&self, tree: &MarketTree, leaf: NodeId) -> Option<NodeId> {
        tree.path_to(leaf).0.into_iter().find(|n| self.contains(*n))
    }

    /// True iff every path meets `self` no later than `later`.
    pub fn precedes(&self, tree: &MarketTree, later: &StoppingTime) -> bool {
        tree.leaves().all(|l| match (self.hit(tree, l), later.hit(tree, l)) {
            (Some(a), Some(b)) => tree.time(a) <= tree.time(b),
            _ => false,
        })
    }
}

/// Checks that `set` is an antichain meeting every root-to-leaf path once.
pub fn validate_stopping_time(tree: &MarketTree, set: &StoppingTime) -> StoppingTimeCheck {
    validate_stopping_time_from(tree, tree.root(), set)
}

/// Same as [`validate_stopping_time`] for paths starting at `origin`.
pub fn validate_stopping_time_from(
    tree: &MarketTree,
    origin: NodeId,
    set: &StoppingTime,
) -> StoppingTimeCheck {
    let mut violations = Vec::new();
    for n in set.iter() {
        if !tree.contains(n) {
            violations.push(StoppingViolation::UnknownNode(n));
        } else if !tree.is_ancestor_or_self(origin, n) {
            violations.push(StoppingViolation::OutsideSubtree(n));
        }
    }
    if violations.is_empty() {
        for a in set.iter() {
            for b in set.iter() {
                if a != b && tree.is_ancestor_or_self(a, b) {
                    violations.push(StoppingViolation::AncestorPair(a, b));
                }
            }
        }
        for leaf in tree.leaves_below(origin) {
            let hits = tree
                .path_between(origin, leaf)
                .map(|p| p.0.iter().filter(|n| set.contains(**n)).count())
                .unwrap_or(0);
            if hits == 0 {
                violations.push(StoppingViolation::PathMissed(leaf));
            }
        }
    }
    StoppingTimeCheck {
        ok: violations.is_empty(),
        violations,
    }
}

pub use crate::claim::Claim;

/// Restriction of a claim to the leaves below `n`.
pub fn shift_claim(tree: &MarketTree, claim: &Claim, n: NodeId) -> Claim {
    let leaves: BTreeSet<NodeId> = tree.leaves_below(n).into_iter().collect();
    Claim {
        values: claim
            .values
            .iter()
            .filter(|(k, _)| leaves.contains(k))
            .map(|(k, v)| (*k, v.clone()))
            .collect::<BTreeMap<_, _>>(),
    }
}
