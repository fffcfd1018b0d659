//! Directed acyclic causal graphs: sampling, validation, ordering,
//! controlled perturbation, and edge-level comparison.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub const MIN_NODES: usize = 3;
pub const MAX_NODES: usize = 7;

/// Upper bound on candidate draws for one rejection-sampled graph.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A directed edge `(parent, child)`.
pub type Edge = (NodeId, NodeId);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DagError {
    #[error("graph size {0} outside the supported range {MIN_NODES}..={MAX_NODES}")]
    InvalidSize(usize),
    #[error("cycle detected")]
    CycleDetected,
    #[error("invalid graph: {}", display_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("no valid {kind} perturbation: {reason}")]
    NoValidPerturbation { kind: PerturbKind, reason: String },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("rejection sampling gave up after {0} attempts")]
    RejectionExhausted(usize),
}

fn display_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// One broken graph invariant, as reported by [`Dag::validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    NodeOutOfRange { edge: Edge },
    SelfLoop { node: NodeId },
    DuplicateEdge { edge: Edge },
    Cycle,
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeOutOfRange { edge } => {
                write!(f, "edge {}->{} references a missing node", edge.0, edge.1)
            }
            Violation::SelfLoop { node } => write!(f, "self-loop on {node}"),
            Violation::DuplicateEdge { edge } => {
                write!(f, "duplicate edge {}->{}", edge.0, edge.1)
            }
            Violation::Cycle => f.write_str("cycle"),
            Violation::Disconnected => f.write_str("disconnected"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    Chain,
    Fork,
    Collider,
    MultiParent,
    Mixed,
}

impl Motif {
    pub const ALL: [Motif; 5] = [
        Motif::Chain,
        Motif::Fork,
        Motif::Collider,
        Motif::MultiParent,
        Motif::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motif::Chain => "chain",
            Motif::Fork => "fork",
            Motif::Collider => "collider",
            Motif::MultiParent => "multi_parent",
            Motif::Mixed => "mixed",
        }
    }
}

impl FromStr for Motif {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Motif::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown motif `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    EdgeDeletion,
    FalseEdge,
    DirectionReversal,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 3] = [
        PerturbKind::EdgeDeletion,
        PerturbKind::FalseEdge,
        PerturbKind::DirectionReversal,
    ];

    pub fn code(self) -> &'static str {
        match self {
            PerturbKind::EdgeDeletion => "ED",
            PerturbKind::FalseEdge => "FE",
            PerturbKind::DirectionReversal => "DR",
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PerturbKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ed" | "edge_deletion" => Ok(PerturbKind::EdgeDeletion),
            "fe" | "false_edge" => Ok(PerturbKind::FalseEdge),
            "dr" | "direction_reversal" => Ok(PerturbKind::DirectionReversal),
            _ => Err(format!("unknown perturbation kind `{s}`")),
        }
    }
}

/// Audit entry for one edge changed by [`perturb_graph`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbRecord {
    pub kind: PerturbKind,
    /// The edge as it was before the change (`None` for an injected edge).
    pub original: Option<Edge>,
    /// The edge after the change (`None` for a deleted edge).
    pub replacement: Option<Edge>,
    /// Whether the graph was weakly disconnected after this change.
    pub disconnected: bool,
}

/// A directed graph over dense node indices `0..node_count`.
///
/// Values built with [`Dag::new`] or [`sample_dag`] satisfy every
/// invariant; [`Dag::from_edges_unchecked`] exists so invalid graphs can be
/// represented and reported by [`Dag::validate`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dag {
    node_count: usize,
    edges: Vec<Edge>,
}

impl Dag {
    /// Builds a graph and checks every invariant.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self, DagError> {
        let dag = Self::from_edges_unchecked(node_count, edges);
        dag.validate().map_err(DagError::Invalid)?;
        Ok(dag)
    }

    /// Builds a graph without validation. Edges are sorted; duplicates are
    /// kept so that [`Dag::validate`] can report them.
    pub fn from_edges_unchecked(node_count: usize, edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut edges: Vec<Edge> = edges.into_iter().collect();
        edges.sort_unstable();
        Dag { node_count, edges }
    }

    pub(crate) fn from_pairs(node_count: usize, pairs: &[(usize, usize)]) -> Self {
        Self::from_edges_unchecked(
            node_count,
            pairs.iter().map(|&(a, b)| (NodeId(a), NodeId(b))),
        )
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count).map(NodeId)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.0 < self.node_count
    }

    pub fn has_edge(&self, parent: NodeId, child: NodeId) -> bool {
        self.edges.binary_search(&(parent, child)).is_ok()
    }

    /// Parents of `node` in ascending order.
    pub fn parents(&self, node: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|e| e.1 == node)
            .map(|e| e.0)
            .collect()
    }

    /// Children of `node` in ascending order.
    pub fn children(&self, node: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|e| e.0 == node)
            .map(|e| e.1)
            .collect()
    }

    pub fn is_root(&self, node: NodeId) -> bool {
        !self.edges.iter().any(|e| e.1 == node)
    }

    pub fn is_sink(&self, node: NodeId) -> bool {
        !self.edges.iter().any(|e| e.0 == node)
    }

    pub fn roots(&self) -> Vec<NodeId> {
        self.nodes().filter(|&v| self.is_root(v)).collect()
    }

    fn child_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.edges {
            if a.0 < self.node_count && b.0 < self.node_count {
                out[a.0].push(b.0);
            }
        }
        out
    }

    /// Kahn's algorithm; ties broken by ascending node index.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, DagError> {
        let n = self.node_count;
        let children = self.child_lists();
        let mut indegree = vec![0usize; n];
        for kids in &children {
            for &c in kids {
                indegree[c] += 1;
            }
        }
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(NodeId(v));
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(DagError::CycleDetected)
        }
    }

    pub fn is_acyclic(&self) -> bool {
        self.topo_order().is_ok()
    }

    pub fn is_weakly_connected(&self) -> bool {
        let n = self.node_count;
        if n <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            if a.0 < n && b.0 < n {
                adj[a.0].push(b.0);
                adj[b.0].push(a.0);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// True when a directed path of length ≥ 1 leads from `from` to `to`.
    pub fn has_path(&self, from: NodeId, to: NodeId) -> bool {
        let children = self.child_lists();
        let mut seen = vec![false; self.node_count];
        let mut stack: Vec<usize> = children.get(from.0).cloned().unwrap_or_default();
        while let Some(v) = stack.pop() {
            if v == to.0 {
                return true;
            }
            if !seen[v] {
                seen[v] = true;
                stack.extend(children[v].iter().copied());
            }
        }
        false
    }

    /// Nodes reachable from `node` by a directed path, excluding `node`.
    pub fn descendants(&self, node: NodeId) -> BTreeSet<NodeId> {
        let children = self.child_lists();
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = children.get(node.0).cloned().unwrap_or_default();
        while let Some(v) = stack.pop() {
            if out.insert(NodeId(v)) {
                stack.extend(children[v].iter().copied());
            }
        }
        out
    }

    /// Checks every invariant and lists each one that fails.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        let mut seen = BTreeSet::new();
        for &edge in &self.edges {
            if !self.contains(edge.0) || !self.contains(edge.1) {
                violations.push(Violation::NodeOutOfRange { edge });
            }
            if edge.0 == edge.1 {
                violations.push(Violation::SelfLoop { node: edge.0 });
            }
            if !seen.insert(edge) {
                violations.push(Violation::DuplicateEdge { edge });
            }
        }
        if !self.is_acyclic() {
            violations.push(Violation::Cycle);
        }
        if !self.is_weakly_connected() {
            violations.push(Violation::Disconnected);
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    fn with_edges(&self, edges: Vec<Edge>) -> Dag {
        Dag::from_edges_unchecked(self.node_count, edges)
    }

    /// Number of topological orderings, by dynamic programming over node
    /// subsets. Only meaningful for acyclic graphs up to [`MAX_NODES`].
    pub fn linear_extensions(&self) -> u64 {
        let n = self.node_count;
        let mut parent_mask = vec![0u32; n];
        for &(a, b) in &self.edges {
            parent_mask[b.0] |= 1 << a.0;
        }
        let mut ways = vec![0u64; 1 << n];
        ways[0] = 1;
        for set in 0..(1u32 << n) {
            let w = ways[set as usize];
            if w == 0 {
                continue;
            }
            for v in 0..n {
                if set & (1 << v) == 0 && parent_mask[v] & !set == 0 {
                    ways[(set | (1 << v)) as usize] += w;
                }
            }
        }
        ways[(1 << n) - 1]
    }
}

/// Renders the graph one edge per line as `Parent -> Child`.
pub fn graph_text<F>(dag: &Dag, mut label: F) -> String
where
    F: FnMut(NodeId) -> String,
{
    let mut out = String::new();
    for &(a, b) in dag.edges() {
        out.push_str(&label(a));
        out.push_str(" -> ");
        out.push_str(&label(b));
        out.push('\n');
    }
    out
}

/// Samples a connected DAG of the given motif. Node indices of the
/// constructive motifs follow a topological order; `mixed` returns a
/// uniformly random labelled connected DAG.
pub fn sample_dag(seed: u64, node_count: usize, motif: Motif) -> Result<Dag, DagError> {
    if !(MIN_NODES..=MAX_NODES).contains(&node_count) {
        return Err(DagError::InvalidSize(node_count));
    }
    let mut rng = seed::rng(seed);
    let n = node_count;
    let dag = match motif {
        Motif::Chain => Dag::from_pairs(n, &(0..n - 1).map(|i| (i, i + 1)).collect::<Vec<_>>()),
        Motif::Fork => {
            let fanout = rng.gen_range(2..n);
            let mut pairs: Vec<(usize, usize)> = (1..=fanout).map(|c| (0, c)).collect();
            for v in fanout + 1..n {
                pairs.push((rng.gen_range(0..v), v));
            }
            Dag::from_pairs(n, &pairs)
        }
        Motif::Collider => {
            let sink = n - 1;
            let fanin = rng.gen_range(2..n);
            let mut pairs: Vec<(usize, usize)> = (sink - fanin..sink).map(|p| (p, sink)).collect();
            for v in 0..sink - fanin {
                pairs.push((v, rng.gen_range(v + 1..sink)));
            }
            Dag::from_pairs(n, &pairs)
        }
        Motif::MultiParent => sample_uniform(&mut rng, n, |d| {
            d.edge_count() >= n && d.nodes().any(|v| d.parents(v).len() >= 2)
        })?,
        Motif::Mixed => sample_uniform(&mut rng, n, |_| true)?,
    };
    debug_assert!(dag.validate().is_ok());
    Ok(dag)
}

/// Uniform sampling over connected labelled DAGs satisfying `accept`.
///
/// A candidate is a random node order plus independent fair-coin forward
/// edges. That proposal hits a DAG with probability proportional to its
/// number of linear extensions, so each candidate is kept with probability
/// `1 / extensions`, which flattens the distribution; disconnected or
/// rejected candidates are discarded.
fn sample_uniform<F>(rng: &mut seed::Rng, n: usize, accept: F) -> Result<Dag, DagError>
where
    F: Fn(&Dag) -> bool,
{
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        order.shuffle(rng);
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.5) {
                    pairs.push((order[i], order[j]));
                }
            }
        }
        let candidate = Dag::from_pairs(n, &pairs);
        let extensions = candidate.linear_extensions() as f64;
        if rng.gen::<f64>() >= 1.0 / extensions {
            continue;
        }
        if candidate.is_weakly_connected() && accept(&candidate) {
            return Ok(candidate);
        }
    }
    Err(DagError::RejectionExhausted(MAX_REJECTION_ATTEMPTS))
}

/// Applies one pinned perturbation to `edge`.
///
/// For [`PerturbKind::FalseEdge`], `edge` is the edge to inject.
pub fn apply_perturbation(
    dag: &Dag,
    kind: PerturbKind,
    edge: Edge,
) -> Result<(Dag, PerturbRecord), DagError> {
    let no_valid = |reason: String| DagError::NoValidPerturbation { kind, reason };
    for node in [edge.0, edge.1] {
        if !dag.contains(node) {
            return Err(DagError::UnknownNode(node));
        }
    }
    let mut edges = dag.edges().to_vec();
    let (original, replacement) = match kind {
        PerturbKind::EdgeDeletion => {
            let pos = edges
                .iter()
                .position(|&e| e == edge)
                .ok_or_else(|| no_valid(format!("edge {}->{} is absent", edge.0, edge.1)))?;
            edges.remove(pos);
            (Some(edge), None)
        }
        PerturbKind::FalseEdge => {
            if edge.0 == edge.1 || dag.has_edge(edge.0, edge.1) {
                return Err(no_valid(format!(
                    "edge {}->{} cannot be added",
                    edge.0, edge.1
                )));
            }
            if dag.has_path(edge.1, edge.0) {
                return Err(no_valid(format!(
                    "adding {}->{} closes a cycle",
                    edge.0, edge.1
                )));
            }
            edges.push(edge);
            (None, Some(edge))
        }
        PerturbKind::DirectionReversal => {
            let pos = edges
                .iter()
                .position(|&e| e == edge)
                .ok_or_else(|| no_valid(format!("edge {}->{} is absent", edge.0, edge.1)))?;
            edges.remove(pos);
            let without = dag.with_edges(edges.clone());
            if without.has_path(edge.0, edge.1) {
                return Err(no_valid(format!(
                    "reversing {}->{} closes a cycle",
                    edge.0, edge.1
                )));
            }
            let flipped = (edge.1, edge.0);
            edges.push(flipped);
            (Some(edge), Some(flipped))
        }
    };
    let out = dag.with_edges(edges);
    let record = PerturbRecord {
        kind,
        original,
        replacement,
        disconnected: !out.is_weakly_connected(),
    };
    Ok((out, record))
}

/// Applies `count` distinct random perturbations of one kind, keeping the
/// graph acyclic. Deletions may disconnect the graph; that is recorded.
pub fn perturb_graph(
    dag: &Dag,
    kind: PerturbKind,
    count: usize,
    seed: u64,
) -> Result<(Dag, Vec<PerturbRecord>), DagError> {
    let no_valid = |reason: String| DagError::NoValidPerturbation { kind, reason };
    if count == 0 {
        return Err(no_valid("count must be at least 1".into()));
    }
    if kind != PerturbKind::FalseEdge && dag.edge_count() < count {
        return Err(no_valid(format!(
            "graph has {} edges, {count} requested",
            dag.edge_count()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut current = dag.clone();
    let mut records = Vec::with_capacity(count);
    match kind {
        PerturbKind::EdgeDeletion => {
            let mut picked: Vec<Edge> = sample_indices(&mut rng, dag.edge_count(), count)
                .into_iter()
                .map(|i| dag.edges()[i])
                .collect();
            picked.sort_unstable();
            for edge in picked {
                let (next, record) = apply_perturbation(&current, kind, edge)?;
                current = next;
                records.push(record);
            }
        }
        PerturbKind::FalseEdge => {
            for _ in 0..count {
                let candidates: Vec<Edge> = current
                    .nodes()
                    .flat_map(|a| current.nodes().map(move |b| (a, b)))
                    .filter(|&(a, b)| {
                        a != b
                            && !current.has_edge(a, b)
                            && !current.has_edge(b, a)
                            && !current.has_path(b, a)
                    })
                    .collect();
                let edge = *candidates
                    .choose(&mut rng)
                    .ok_or_else(|| no_valid("every absent edge would close a cycle".into()))?;
                let (next, record) = apply_perturbation(&current, kind, edge)?;
                current = next;
                records.push(record);
            }
        }
        PerturbKind::DirectionReversal => {
            let mut untouched: Vec<Edge> = dag.edges().to_vec();
            for _ in 0..count {
                untouched.shuffle(&mut rng);
                let mut chosen = None;
                for (pos, &edge) in untouched.iter().enumerate() {
                    if let Ok(done) = apply_perturbation(&current, kind, edge) {
                        chosen = Some((pos, done));
                        break;
                    }
                }
                let (pos, (next, record)) =
                    chosen.ok_or_else(|| no_valid("every reversal would close a cycle".into()))?;
                untouched.swap_remove(pos);
                untouched.sort_unstable();
                current = next;
                records.push(record);
            }
        }
    }
    Ok((current, records))
}

/// Edge-level agreement between a predicted edge set and a reference graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl EdgeMetrics {
    /// Precision and recall are 0 when their denominator is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EdgeMetrics {
            precision,
            recall,
            f1,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }
}

/// Compares predicted edges against `truth`. Direction must match exactly:
/// a reversed edge is one false positive and one false negative.
pub fn edge_metrics<I>(predicted: I, truth: &Dag) -> Result<EdgeMetrics, DagError>
where
    I: IntoIterator<Item = Edge>,
{
    let mut set = BTreeSet::new();
    for edge in predicted {
        for node in [edge.0, edge.1] {
            if !truth.contains(node) {
                return Err(DagError::UnknownNode(node));
            }
        }
        set.insert(edge);
    }
    let truth_set: BTreeSet<Edge> = truth.edges().iter().copied().collect();
    let tp = set.intersection(&truth_set).count();
    let fp = set.len() - tp;
    let fn_ = truth_set.len() - tp;
    Ok(EdgeMetrics::from_counts(tp, fp, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> Dag {
        Dag::from_pairs(3, &[(0, 1), (1, 2)])
    }

    fn triangle() -> Dag {
        Dag::from_pairs(3, &[(0, 1), (1, 2), (0, 2)])
    }

    #[test]
    fn chain_of_three() {
        let dag = sample_dag(1, 3, Motif::Chain).unwrap();
        assert_eq!(dag, chain3());
    }

    #[test]
    fn size_outside_range_is_rejected() {
        assert_eq!(
            sample_dag(1, 2, Motif::Chain),
            Err(DagError::InvalidSize(2))
        );
        assert_eq!(
            sample_dag(1, 8, Motif::Mixed),
            Err(DagError::InvalidSize(8))
        );
    }

    #[test]
    fn motifs_have_their_shape() {
        for seed in 0..50 {
            for n in MIN_NODES..=MAX_NODES {
                let fork = sample_dag(seed, n, Motif::Fork).unwrap();
                assert!(fork.nodes().any(|v| fork.children(v).len() >= 2));
                let collider = sample_dag(seed, n, Motif::Collider).unwrap();
                assert!(collider.nodes().any(|v| collider.parents(v).len() >= 2));
                let multi = sample_dag(seed, n, Motif::MultiParent).unwrap();
                assert!(multi.nodes().any(|v| multi.parents(v).len() >= 2));
                assert!(multi.edge_count() >= n);
                let chain = sample_dag(seed, n, Motif::Chain).unwrap();
                assert_eq!(chain.edge_count(), n - 1);
                assert!(chain.nodes().all(|v| chain.children(v).len() <= 1));
            }
        }
    }

    #[test]
    fn validate_reports_each_problem() {
        assert_eq!(chain3().validate(), Ok(()));
        let cyclic = Dag::from_pairs(2, &[(0, 1), (1, 0)]);
        assert!(cyclic.validate().unwrap_err().contains(&Violation::Cycle));
        let split = Dag::from_pairs(3, &[(0, 1)]);
        assert_eq!(split.validate(), Err(vec![Violation::Disconnected]));
        let messy = Dag::from_pairs(3, &[(0, 1), (0, 1), (1, 1), (1, 2)]);
        let v = messy.validate().unwrap_err();
        assert!(v.contains(&Violation::SelfLoop { node: NodeId(1) }));
        assert!(v.contains(&Violation::DuplicateEdge {
            edge: (NodeId(0), NodeId(1))
        }));
        let out_of_range = Dag::from_pairs(3, &[(0, 1), (1, 2), (2, 5)]);
        assert!(matches!(
            out_of_range.validate().unwrap_err()[0],
            Violation::NodeOutOfRange { .. }
        ));
    }

    #[test]
    fn topo_order_ties_break_by_index() {
        let ids = |v: Vec<NodeId>| v.into_iter().map(|n| n.0).collect::<Vec<_>>();
        assert_eq!(ids(chain3().topo_order().unwrap()), vec![0, 1, 2]);
        let collider = Dag::from_pairs(3, &[(0, 2), (1, 2)]);
        assert_eq!(ids(collider.topo_order().unwrap()), vec![0, 1, 2]);
        let reversed = Dag::from_pairs(3, &[(2, 1), (1, 0)]);
        assert_eq!(ids(reversed.topo_order().unwrap()), vec![2, 1, 0]);
        let cyclic = Dag::from_pairs(2, &[(0, 1), (1, 0)]);
        assert_eq!(cyclic.topo_order(), Err(DagError::CycleDetected));
    }

    #[test]
    fn linear_extension_counts() {
        assert_eq!(chain3().linear_extensions(), 1);
        assert_eq!(Dag::from_pairs(3, &[(0, 2), (1, 2)]).linear_extensions(), 2);
        assert_eq!(Dag::from_pairs(4, &[]).linear_extensions(), 24);
    }

    #[test]
    fn pinned_deletion_and_reversal() {
        let e = |a, b| (NodeId(a), NodeId(b));
        let (g, rec) = apply_perturbation(&chain3(), PerturbKind::EdgeDeletion, e(0, 1)).unwrap();
        assert_eq!(g.edges(), &[e(1, 2)]);
        assert!(rec.disconnected);
        let (g, rec) =
            apply_perturbation(&chain3(), PerturbKind::DirectionReversal, e(1, 2)).unwrap();
        assert_eq!(g.edges(), &[e(0, 1), e(2, 1)]);
        assert!(g.is_acyclic());
        assert_eq!(rec.original, Some(e(1, 2)));
        assert_eq!(rec.replacement, Some(e(2, 1)));
    }

    #[test]
    fn reversal_closing_a_cycle_is_refused() {
        let e = |a, b| (NodeId(a), NodeId(b));
        let err = apply_perturbation(&triangle(), PerturbKind::DirectionReversal, e(0, 2));
        assert!(matches!(err, Err(DagError::NoValidPerturbation { .. })));
        // Oracle: the pinned reversal really would create 0->1->2->0.
        let forced = Dag::from_pairs(3, &[(0, 1), (1, 2), (2, 0)]);
        assert!(!forced.is_acyclic());
        for seed in 0..40 {
            let (g, recs) =
                perturb_graph(&triangle(), PerturbKind::DirectionReversal, 1, seed).unwrap();
            assert!(g.is_acyclic());
            assert_ne!(recs[0].original, Some(e(0, 2)));
        }
    }

    #[test]
    fn reversing_every_edge_flips_the_order() {
        for seed in 0..10 {
            let (g, _) =
                perturb_graph(&triangle(), PerturbKind::DirectionReversal, 3, seed).unwrap();
            assert_eq!(g, Dag::from_pairs(3, &[(1, 0), (2, 0), (2, 1)]));
        }
        let err = perturb_graph(&triangle(), PerturbKind::DirectionReversal, 4, 0).unwrap_err();
        assert!(matches!(err, DagError::NoValidPerturbation { .. }));
    }

    #[test]
    fn deletion_needs_enough_edges() {
        let err = perturb_graph(&chain3(), PerturbKind::EdgeDeletion, 3, 0).unwrap_err();
        assert!(matches!(err, DagError::NoValidPerturbation { .. }));
    }

    #[test]
    fn edge_metric_examples() {
        let e = |a, b| (NodeId(a), NodeId(b));
        let truth = chain3();
        let m = edge_metrics(truth.edges().to_vec(), &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = edge_metrics([e(0, 1)], &truth).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 0.5));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        let m = edge_metrics([e(1, 0), e(1, 2)], &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        assert_eq!(
            (m.true_positives, m.false_positives, m.false_negatives),
            (1, 1, 1)
        );
        assert_eq!(
            edge_metrics([e(0, 9)], &truth),
            Err(DagError::UnknownNode(NodeId(9)))
        );
        let m = edge_metrics(Vec::new(), &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("ED".parse(), Ok(PerturbKind::EdgeDeletion));
        assert_eq!("false_edge".parse(), Ok(PerturbKind::FalseEdge));
        assert_eq!("dr".parse(), Ok(PerturbKind::DirectionReversal));
        assert!("xx".parse::<PerturbKind>().is_err());
        assert_eq!("multi_parent".parse(), Ok(Motif::MultiParent));
    }
}
