//! Structural causal models over discrete variables.
//!
//! A model is a [`Dag`], one [`VariableMeta`] per node, and one [`Cpt`]
//! per node. Rows of a table are stored in canonical tuple order: parents
//! in ascending node order, first parent most significant, values in the
//! order of their domain. The domain value order also fixes the
//! inverse-CDF compilation used for counterfactuals (see
//! [`compile_canonical`]), so it is serialized with the model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{sample_dag, Dag, Motif, NodeId, Violation};
use crate::seed;

/// Tolerance for a probability row summing to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Binary,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarDomain {
    pub kind: DomainKind,
    pub values: Vec<String>,
}

impl VarDomain {
    pub fn binary() -> Self {
        VarDomain {
            kind: DomainKind::Binary,
            values: vec!["0".into(), "1".into()],
        }
    }

    pub fn categorical<S: Into<String>>(values: impl IntoIterator<Item = S>) -> Self {
        VarDomain {
            kind: DomainKind::Categorical,
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.kind == DomainKind::Binary
    }

    pub fn label(&self, value: usize) -> &str {
        &self.values[value]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.values.iter().position(|v| v == label)
    }

    fn problems(&self) -> Option<String> {
        if self.values.len() < 2 {
            return Some("fewer than two values".into());
        }
        let unique: BTreeSet<&String> = self.values.iter().collect();
        if unique.len() != self.values.len() {
            return Some("duplicate value labels".into());
        }
        if self.kind == DomainKind::Binary && self.values != ["0", "1"] {
            return Some("binary domain must be [0, 1]".into());
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    Observed,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cause,
    Mediator,
    Outcome,
    Symptom,
    Distractor,
    Confounder,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Cause => "cause",
            Role::Mediator => "mediator",
            Role::Outcome => "outcome",
            Role::Symptom => "symptom",
            Role::Distractor => "distractor",
            Role::Confounder => "confounder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariableMeta {
    pub node: NodeId,
    pub name: String,
    pub domain: VarDomain,
    pub observability: Observability,
    pub role: Role,
    pub scenario: String,
}

/// How a table was produced. Kept as provenance; inference reads only rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Mechanism {
    /// Written by hand (fixtures, user files).
    Specified,
    Prior,
    Table,
    /// `P(on | x) = 1 - (1 - leak) * prod_{j: x_j = 1} (1 - strength_j)`.
    NoisyOr {
        leak: f64,
        strengths: Vec<f64>,
    },
    /// `P(on | x) = ceiling * prod_{j: x_j = 0} (1 - inhibition_j)`.
    NoisyAnd {
        ceiling: f64,
        inhibitions: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CptRow {
    /// Parent values, in the order of [`Cpt::parents`].
    pub given: Vec<usize>,
    /// Distribution over the child's domain.
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cpt {
    pub child: NodeId,
    pub parents: Vec<NodeId>,
    #[serde(flatten)]
    pub mechanism: Mechanism,
    pub rows: Vec<CptRow>,
}

/// Every parent-value tuple in canonical order.
pub fn parent_tuples(cards: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = cards.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0usize; cards.len()];
    for _ in 0..total {
        out.push(cur.clone());
        for pos in (0..cards.len()).rev() {
            cur[pos] += 1;
            if cur[pos] < cards[pos] {
                break;
            }
            cur[pos] = 0;
        }
    }
    out
}

/// Partial or complete assignment of domain value indices to nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(BTreeMap<NodeId, usize>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, node: NodeId) -> Option<usize> {
        self.0.get(&node).copied()
    }

    pub fn insert(&mut self, node: NodeId, value: usize) -> Option<usize> {
        self.0.insert(node, value)
    }

    pub fn remove(&mut self, node: NodeId) -> Option<usize> {
        self.0.remove(&node)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.0.contains_key(&node)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.keys().copied()
    }
}

impl FromIterator<(NodeId, usize)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (NodeId, usize)>>(iter: T) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ScmViolation>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0} nodes have no metadata")]
    MissingMeta(usize),
}

/// One broken model invariant, as reported by [`validate_scm`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum ScmViolation {
    Graph {
        detail: Violation,
    },
    MetaCount {
        expected: usize,
        found: usize,
    },
    MetaNode {
        position: usize,
        node: NodeId,
    },
    DuplicateName {
        name: String,
    },
    Domain {
        node: NodeId,
        detail: String,
    },
    CptCount {
        expected: usize,
        found: usize,
    },
    CptChild {
        position: usize,
        node: NodeId,
    },
    ParentsMismatch {
        node: NodeId,
    },
    IncompleteTable {
        node: NodeId,
        expected: usize,
        found: usize,
    },
    RowKey {
        node: NodeId,
        row: usize,
    },
    RowWidth {
        node: NodeId,
        row: usize,
    },
    NegativeProbability {
        node: NodeId,
        row: usize,
    },
    NonNormalized {
        node: NodeId,
        row: usize,
        sum: f64,
    },
}

impl fmt::Display for ScmViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScmViolation::Graph { detail } => write!(f, "graph: {detail}"),
            ScmViolation::MetaCount { expected, found } => {
                write!(f, "expected {expected} variable records, found {found}")
            }
            ScmViolation::MetaNode { position, node } => {
                write!(f, "variable record {position} describes node {node}")
            }
            ScmViolation::DuplicateName { name } => write!(f, "duplicate variable name `{name}`"),
            ScmViolation::Domain { node, detail } => write!(f, "node {node} domain: {detail}"),
            ScmViolation::CptCount { expected, found } => {
                write!(f, "expected {expected} tables, found {found}")
            }
            ScmViolation::CptChild { position, node } => {
                write!(f, "table {position} describes node {node}")
            }
            ScmViolation::ParentsMismatch { node } => {
                write!(f, "table parents of node {node} differ from the graph")
            }
            ScmViolation::IncompleteTable {
                node,
                expected,
                found,
            } => {
                write!(
                    f,
                    "incomplete table for node {node}: {found} of {expected} rows"
                )
            }
            ScmViolation::RowKey { node, row } => {
                write!(
                    f,
                    "node {node} row {row} is keyed by the wrong parent tuple"
                )
            }
            ScmViolation::RowWidth { node, row } => {
                write!(f, "node {node} row {row} does not match the domain size")
            }
            ScmViolation::NegativeProbability { node, row } => {
                write!(
                    f,
                    "node {node} row {row} has a negative or non-finite entry"
                )
            }
            ScmViolation::NonNormalized { node, row, sum } => {
                write!(f, "non-normalized row {row} of node {node} (sum {sum})")
            }
        }
    }
}

/// Precomputed indexing for a validated model.
#[derive(Clone, Debug, Default, PartialEq)]
struct Layout {
    topo: Vec<usize>,
    parents: Vec<Vec<usize>>,
    strides: Vec<Vec<usize>>,
    cards: Vec<usize>,
}

/// A structural causal model. Construct with [`Scm::new`] to get a
/// validated value; deserialization validates too.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScmRecord", into = "ScmRecord")]
pub struct Scm {
    graph: Dag,
    metas: Vec<VariableMeta>,
    cpts: Vec<Cpt>,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct ScmRecord {
    graph: Dag,
    metas: Vec<VariableMeta>,
    cpts: Vec<Cpt>,
}

impl TryFrom<ScmRecord> for Scm {
    type Error = ScmError;

    fn try_from(r: ScmRecord) -> Result<Self, Self::Error> {
        Scm::new(r.graph, r.metas, r.cpts)
    }
}

impl From<Scm> for ScmRecord {
    fn from(s: Scm) -> Self {
        ScmRecord {
            graph: s.graph,
            metas: s.metas,
            cpts: s.cpts,
        }
    }
}

impl Scm {
    pub fn new(graph: Dag, metas: Vec<VariableMeta>, cpts: Vec<Cpt>) -> Result<Self, ScmError> {
        let scm = Self::from_parts_unchecked(graph, metas, cpts);
        validate_scm(&scm).map_err(ScmError::Invalid)?;
        Ok(scm)
    }

    /// Assembles a model without checking it; use [`validate_scm`] to list
    /// what is wrong with it. Inference on an invalid model may panic.
    pub fn from_parts_unchecked(graph: Dag, metas: Vec<VariableMeta>, cpts: Vec<Cpt>) -> Self {
        let n = graph.node_count();
        let topo = graph
            .topo_order()
            .map(|t| t.into_iter().map(NodeId::index).collect())
            .unwrap_or_default();
        let parents: Vec<Vec<usize>> = graph
            .nodes()
            .map(|v| graph.parents(v).into_iter().map(NodeId::index).collect())
            .collect();
        let cards: Vec<usize> = (0..n)
            .map(|i| metas.get(i).map_or(0, |m| m.domain.len()))
            .collect();
        let strides = parents
            .iter()
            .map(|ps| {
                let mut s = vec![1usize; ps.len()];
                for j in (0..ps.len().saturating_sub(1)).rev() {
                    s[j] = s[j + 1] * cards.get(ps[j + 1]).copied().unwrap_or(0);
                }
                s
            })
            .collect();
        Scm {
            graph,
            metas,
            cpts,
            layout: Layout {
                topo,
                parents,
                strides,
                cards,
            },
        }
    }

    pub fn graph(&self) -> &Dag {
        &self.graph
    }

    pub fn metas(&self) -> &[VariableMeta] {
        &self.metas
    }

    pub fn cpts(&self) -> &[Cpt] {
        &self.cpts
    }

    pub fn meta(&self, node: NodeId) -> &VariableMeta {
        &self.metas[node.0]
    }

    pub fn cpt(&self, node: NodeId) -> &Cpt {
        &self.cpts[node.0]
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn cardinality(&self, node: NodeId) -> usize {
        self.layout.cards[node.0]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.metas
            .iter()
            .find(|m| m.name.eq_ignore_ascii_case(name))
            .map(|m| m.node)
    }

    pub(crate) fn topo(&self) -> &[usize] {
        &self.layout.topo
    }

    pub(crate) fn cards(&self) -> &[usize] {
        &self.layout.cards
    }

    /// Row index of `node`'s table for the parent values in `world`.
    #[inline]
    pub(crate) fn row_index(&self, node: usize, world: &[usize]) -> usize {
        self.layout.parents[node]
            .iter()
            .zip(&self.layout.strides[node])
            .map(|(&p, &s)| world[p] * s)
            .sum()
    }

    #[inline]
    pub(crate) fn probs(&self, node: usize, row: usize) -> &[f64] {
        &self.cpts[node].rows[row].probs
    }

    /// Copy with `replace` substituted for the table of its child node.
    /// The result is validated.
    pub fn with_cpt(&self, replace: Cpt) -> Result<Scm, ScmError> {
        let mut cpts = self.cpts.clone();
        let at = replace.child.0;
        cpts[at] = replace;
        Scm::new(self.graph.clone(), self.metas.clone(), cpts)
    }

    /// Copy with `metas` replaced (labels, roles, observability).
    pub fn with_metas(&self, metas: Vec<VariableMeta>) -> Result<Scm, ScmError> {
        Scm::new(self.graph.clone(), metas, self.cpts.clone())
    }
}

/// Checks every model invariant and lists each one that fails.
pub fn validate_scm(scm: &Scm) -> Result<(), Vec<ScmViolation>> {
    let mut out = Vec::new();
    let n = scm.graph.node_count();
    if let Err(vs) = scm.graph.validate() {
        out.extend(vs.into_iter().map(|detail| ScmViolation::Graph { detail }));
        return Err(out);
    }
    if scm.metas.len() != n {
        out.push(ScmViolation::MetaCount {
            expected: n,
            found: scm.metas.len(),
        });
        return Err(out);
    }
    let mut names = BTreeSet::new();
    for (i, meta) in scm.metas.iter().enumerate() {
        if meta.node != NodeId(i) {
            out.push(ScmViolation::MetaNode {
                position: i,
                node: meta.node,
            });
        }
        if !names.insert(meta.name.to_ascii_lowercase()) {
            out.push(ScmViolation::DuplicateName {
                name: meta.name.clone(),
            });
        }
        if let Some(detail) = meta.domain.problems() {
            out.push(ScmViolation::Domain {
                node: NodeId(i),
                detail,
            });
        }
    }
    if scm.cpts.len() != n {
        out.push(ScmViolation::CptCount {
            expected: n,
            found: scm.cpts.len(),
        });
        return Err(out);
    }
    if !out.is_empty() {
        return Err(out);
    }
    for (i, cpt) in scm.cpts.iter().enumerate() {
        let node = NodeId(i);
        if cpt.child != node {
            out.push(ScmViolation::CptChild {
                position: i,
                node: cpt.child,
            });
            continue;
        }
        if cpt.parents != scm.graph.parents(node) {
            out.push(ScmViolation::ParentsMismatch { node });
            continue;
        }
        let cards: Vec<usize> = cpt
            .parents
            .iter()
            .map(|p| scm.metas[p.0].domain.len())
            .collect();
        let tuples = parent_tuples(&cards);
        if cpt.rows.len() != tuples.len() {
            out.push(ScmViolation::IncompleteTable {
                node,
                expected: tuples.len(),
                found: cpt.rows.len(),
            });
            continue;
        }
        let width = scm.metas[i].domain.len();
        for (r, (row, key)) in cpt.rows.iter().zip(&tuples).enumerate() {
            if &row.given != key {
                out.push(ScmViolation::RowKey { node, row: r });
            }
            if row.probs.len() != width {
                out.push(ScmViolation::RowWidth { node, row: r });
                continue;
            }
            if row.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                out.push(ScmViolation::NegativeProbability { node, row: r });
                continue;
            }
            let sum: f64 = row.probs.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                out.push(ScmViolation::NonNormalized { node, row: r, sum });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFamily {
    NoisyOr,
    NoisyAnd,
    Table,
}

/// Parameters for [`sample_mechanisms`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConfig {
    /// Families allowed for binary nodes with two or more binary parents.
    pub families: Vec<RuleFamily>,
    /// Lowest probability that may appear in a binary row.
    pub min_probability: f64,
    /// Highest probability that may appear in a binary row.
    pub max_probability: f64,
    /// Binary probabilities are kept at least this far from 0.5.
    pub min_separation: f64,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            families: vec![RuleFamily::NoisyOr, RuleFamily::NoisyAnd, RuleFamily::Table],
            min_probability: 0.05,
            max_probability: 0.95,
            min_separation: 0.0,
        }
    }
}

impl MechanismConfig {
    pub fn check(&self) -> Result<(), ScmError> {
        if self.families.is_empty() {
            return Err(ScmError::Config("no rule families enabled".into()));
        }
        let (lo, hi) = (self.min_probability, self.max_probability);
        if !(0.01..=0.99).contains(&lo) || !(0.01..=0.99).contains(&hi) || lo >= hi {
            return Err(ScmError::Config(format!(
                "probability bounds [{lo}, {hi}] must satisfy 0.01 <= lo < hi <= 0.99"
            )));
        }
        if !(0.0..0.5).contains(&self.min_separation)
            || (0.5 - self.min_separation < lo && 0.5 + self.min_separation > hi)
        {
            return Err(ScmError::Config(format!(
                "min_separation {} leaves no admissible probabilities",
                self.min_separation
            )));
        }
        Ok(())
    }
}

fn round_to(x: f64, steps: f64) -> f64 {
    (x * steps).round() / steps
}

struct ProbabilitySampler<'a> {
    cfg: &'a MechanismConfig,
}

impl ProbabilitySampler<'_> {
    /// Snaps to the 0.001 grid, clamps to the configured bounds, and pushes
    /// values out of the ambiguity band around 0.5.
    fn admit(&self, p: f64) -> f64 {
        let mut p = round_to(p, 1000.0);
        p = p.clamp(self.cfg.min_probability, self.cfg.max_probability);
        let sep = self.cfg.min_separation;
        if sep > 0.0 && (p - 0.5).abs() < sep {
            let down = round_to(0.5 - sep, 1000.0);
            let up = round_to(0.5 + sep, 1000.0);
            p = if (p <= 0.5 && down >= self.cfg.min_probability) || up > self.cfg.max_probability {
                down
            } else {
                up
            };
        }
        p
    }

    /// A fresh binary probability on the 0.01 grid.
    fn draw(&self, rng: &mut seed::Rng) -> f64 {
        let lo = (self.cfg.min_probability * 100.0).ceil() as u32;
        let hi = (self.cfg.max_probability * 100.0).floor() as u32;
        loop {
            let p = self.admit(rng.gen_range(lo..=hi) as f64 / 100.0);
            if (p - 0.5).abs() >= self.cfg.min_separation {
                return p;
            }
        }
    }

    fn draw_in(&self, rng: &mut seed::Rng, lo: u32, hi: u32) -> f64 {
        rng.gen_range(lo..=hi) as f64 / 100.0
    }
}

/// A random distribution over `k` values on the 0.01 grid, every entry ≥ 0.01.
fn stochastic_row(rng: &mut seed::Rng, k: usize) -> Vec<f64> {
    let weights: Vec<u32> = (0..k).map(|_| rng.gen_range(1..=10)).collect();
    let total: u32 = weights.iter().sum();
    let mut cents: Vec<u32> = weights.iter().map(|w| w * 100 / total).collect();
    let mut remainders: Vec<(u32, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (w * 100 % total, i))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = 100 - cents.iter().sum::<u32>();
    for &(_, i) in remainders.iter().take(short as usize) {
        cents[i] += 1;
    }
    cents.iter().map(|&c| c as f64 / 100.0).collect()
}

fn binary_row(p_on: f64) -> Vec<f64> {
    vec![round_to(1.0 - p_on, 1000.0), p_on]
}

/// Draws a full table for every node of `dag`.
///
/// Roots get a prior row. Binary nodes with two or more binary parents use
/// a family drawn from `config.families` (noisy-OR, noisy-AND, or a free
/// table); other binary nodes get a free table whose rows are not all
/// equal; categorical nodes get random stochastic rows.
pub fn sample_mechanisms(
    dag: &Dag,
    metas: &[VariableMeta],
    seed: u64,
    config: &MechanismConfig,
) -> Result<Scm, ScmError> {
    config.check()?;
    if metas.len() != dag.node_count() {
        return Err(ScmError::MissingMeta(
            dag.node_count().saturating_sub(metas.len()),
        ));
    }
    let mut rng = seed::rng(seed);
    let sampler = ProbabilitySampler { cfg: config };
    let mut cpts = Vec::with_capacity(dag.node_count());
    for node in dag.nodes() {
        let parents = dag.parents(node);
        let domain = &metas[node.0].domain;
        let cards: Vec<usize> = parents.iter().map(|p| metas[p.0].domain.len()).collect();
        let tuples = parent_tuples(&cards);
        let all_binary_parents = parents.iter().all(|p| metas[p.0].domain.is_binary());

        let (mechanism, rows): (Mechanism, Vec<Vec<f64>>) = if !domain.is_binary() {
            let rows = tuples
                .iter()
                .map(|_| stochastic_row(&mut rng, domain.len()))
                .collect();
            let mech = if parents.is_empty() {
                Mechanism::Prior
            } else {
                Mechanism::Table
            };
            (mech, rows)
        } else if parents.is_empty() {
            (Mechanism::Prior, vec![binary_row(sampler.draw(&mut rng))])
        } else if parents.len() >= 2 && all_binary_parents {
            let family = config.families[rng.gen_range(0..config.families.len())];
            match family {
                RuleFamily::NoisyOr => {
                    let leak = sampler.draw_in(&mut rng, 5, 30);
                    let strengths: Vec<f64> = parents
                        .iter()
                        .map(|_| sampler.draw_in(&mut rng, 40, 90))
                        .collect();
                    let rows = tuples
                        .iter()
                        .map(|t| {
                            let off: f64 = t
                                .iter()
                                .zip(&strengths)
                                .filter(|(v, _)| **v == 1)
                                .map(|(_, s)| 1.0 - s)
                                .product();
                            binary_row(sampler.admit(1.0 - (1.0 - leak) * off))
                        })
                        .collect();
                    (Mechanism::NoisyOr { leak, strengths }, rows)
                }
                RuleFamily::NoisyAnd => {
                    let ceiling = sampler.draw_in(&mut rng, 70, 95);
                    let inhibitions: Vec<f64> = parents
                        .iter()
                        .map(|_| sampler.draw_in(&mut rng, 30, 80))
                        .collect();
                    let rows = tuples
                        .iter()
                        .map(|t| {
                            let keep: f64 = t
                                .iter()
                                .zip(&inhibitions)
                                .filter(|(v, _)| **v == 0)
                                .map(|(_, s)| 1.0 - s)
                                .product();
                            binary_row(sampler.admit(ceiling * keep))
                        })
                        .collect();
                    (
                        Mechanism::NoisyAnd {
                            ceiling,
                            inhibitions,
                        },
                        rows,
                    )
                }
                RuleFamily::Table => (
                    Mechanism::Table,
                    free_rows(&mut rng, &sampler, tuples.len()),
                ),
            }
        } else {
            (
                Mechanism::Table,
                free_rows(&mut rng, &sampler, tuples.len()),
            )
        };
        cpts.push(Cpt {
            child: node,
            parents: parents.clone(),
            mechanism,
            rows: tuples
                .into_iter()
                .zip(rows)
                .map(|(given, probs)| CptRow { given, probs })
                .collect(),
        });
    }
    Scm::new(dag.clone(), metas.to_vec(), cpts)
}

fn free_rows(rng: &mut seed::Rng, sampler: &ProbabilitySampler<'_>, count: usize) -> Vec<Vec<f64>> {
    loop {
        let ps: Vec<f64> = (0..count).map(|_| sampler.draw(rng)).collect();
        if count < 2 || ps.iter().any(|&p| p != ps[0]) {
            return ps.into_iter().map(binary_row).collect();
        }
    }
}

/// Inverse-CDF lookup shared by sampling and canonical compilation:
/// the first value whose cumulative mass exceeds `u`, else the last value.
#[inline]
pub(crate) fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate().take(probs.len() - 1) {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}

/// A model over `node_count` binary variables named `X0, X1, ...` on a
/// graph of the given motif, with default mechanism settings.
pub fn random_binary_scm(seed: u64, node_count: usize, motif: Motif) -> Result<Scm, String> {
    let dag = sample_dag(seed::mix(seed), node_count, motif).map_err(|e| e.to_string())?;
    let metas = (0..node_count)
        .map(|i| {
            let node = NodeId(i);
            let role = if dag.is_root(node) {
                Role::Cause
            } else if dag.is_sink(node) {
                Role::Outcome
            } else {
                Role::Mediator
            };
            VariableMeta {
                node,
                name: format!("X{i}"),
                domain: VarDomain::binary(),
                observability: Observability::Observed,
                role,
                scenario: "synthetic".into(),
            }
        })
        .collect::<Vec<_>>();
    sample_mechanisms(&dag, &metas, seed, &MechanismConfig::default()).map_err(|e| e.to_string())
}

/// Reusable ancestral sampler writing into a caller-owned buffer.
pub struct WorldSampler<'a> {
    scm: &'a Scm,
    rng: seed::Rng,
}

impl<'a> WorldSampler<'a> {
    pub fn new(scm: &'a Scm, seed: u64) -> Self {
        WorldSampler {
            scm,
            rng: seed::rng(seed),
        }
    }

    /// Fills `world` (indexed by node) with one draw.
    pub fn sample_into(&mut self, world: &mut [usize]) {
        for &v in self.scm.topo() {
            let row = self.scm.row_index(v, world);
            let u: f64 = self.rng.gen();
            world[v] = inverse_cdf(self.scm.probs(v, row), u);
        }
    }
}

/// One complete world drawn in topological order.
pub fn sample_world(scm: &Scm, seed: u64) -> Assignment {
    let mut world = vec![0; scm.node_count()];
    WorldSampler::new(scm, seed).sample_into(&mut world);
    world
        .into_iter()
        .enumerate()
        .map(|(i, v)| (NodeId(i), v))
        .collect()
}

/// One response class: a sub-interval of the unit interval on which the
/// node's value is a fixed function of its parents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseClass {
    pub lower: f64,
    pub upper: f64,
    pub weight: f64,
    /// Child value for each table row, indexed like [`Cpt::rows`].
    pub responses: Vec<usize>,
}

/// Every node's mechanism as a mixture of deterministic response
/// functions, with mixture weights equal to interval lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalScm {
    pub classes: Vec<Vec<ResponseClass>>,
}

impl CanonicalScm {
    pub fn node(&self, node: NodeId) -> &[ResponseClass] {
        &self.classes[node.0]
    }

    /// Sum of class weights whose response to `row` is `value`.
    pub fn marginal(&self, node: NodeId, row: usize, value: usize) -> f64 {
        self.classes[node.0]
            .iter()
            .filter(|c| c.responses[row] == value)
            .map(|c| c.weight)
            .sum()
    }
}

/// Splits the unit interval of each node at every cumulative threshold of
/// every row (domain order), producing one response class per piece.
pub fn compile_canonical(scm: &Scm) -> CanonicalScm {
    let classes = scm
        .cpts()
        .iter()
        .map(|cpt| {
            let mut cuts = vec![0.0, 1.0];
            for row in &cpt.rows {
                let mut acc = 0.0;
                for &p in &row.probs[..row.probs.len() - 1] {
                    acc += p;
                    if acc > 0.0 && acc < 1.0 {
                        cuts.push(acc);
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            cuts.windows(2)
                .map(|w| {
                    let mid = 0.5 * (w[0] + w[1]);
                    ResponseClass {
                        lower: w[0],
                        upper: w[1],
                        weight: w[1] - w[0],
                        responses: cpt
                            .rows
                            .iter()
                            .map(|r| inverse_cdf(&r.probs, mid))
                            .collect(),
                    }
                })
                .collect()
        })
        .collect();
    CanonicalScm { classes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{sample_dag, Motif};
    use crate::fixtures;

    fn metas_for(dag: &Dag, categorical: &[usize]) -> Vec<VariableMeta> {
        dag.nodes()
            .map(|v| VariableMeta {
                node: v,
                name: format!("V{}", v.0),
                domain: if categorical.contains(&v.0) {
                    VarDomain::categorical(["low", "mid", "high"])
                } else {
                    VarDomain::binary()
                },
                observability: Observability::Observed,
                role: Role::Mediator,
                scenario: "test".into(),
            })
            .collect()
    }

    #[test]
    fn disease_fixture_is_valid() {
        assert_eq!(validate_scm(&fixtures::disease_scm()), Ok(()));
        assert_eq!(validate_scm(&fixtures::tutoring_scm()), Ok(()));
    }

    #[test]
    fn non_normalized_and_incomplete_rows_are_reported() {
        let scm = fixtures::disease_scm();
        let mut bad = scm.cpts().to_vec();
        bad[2].rows[1].probs = vec![0.05, 0.9];
        let broken = Scm::from_parts_unchecked(scm.graph().clone(), scm.metas().to_vec(), bad);
        let v = validate_scm(&broken).unwrap_err();
        assert!(matches!(v[0], ScmViolation::NonNormalized { row: 1, .. }));

        let mut short = scm.cpts().to_vec();
        short[1].rows.pop();
        let broken = Scm::from_parts_unchecked(scm.graph().clone(), scm.metas().to_vec(), short);
        let v = validate_scm(&broken).unwrap_err();
        assert_eq!(
            v,
            vec![ScmViolation::IncompleteTable {
                node: NodeId(1),
                expected: 2,
                found: 1
            }]
        );
        assert!(Scm::new(
            scm.graph().clone(),
            scm.metas().to_vec(),
            scm.cpts()[..2].to_vec()
        )
        .is_err());
    }

    #[test]
    fn table_shapes() {
        let dag = Dag::from_pairs(3, &[(0, 2), (1, 2)]);
        let scm =
            sample_mechanisms(&dag, &metas_for(&dag, &[]), 3, &MechanismConfig::default()).unwrap();
        assert_eq!(scm.cpt(NodeId(0)).rows.len(), 1);
        assert_eq!(scm.cpt(NodeId(2)).rows.len(), 4);
        let again =
            sample_mechanisms(&dag, &metas_for(&dag, &[]), 3, &MechanismConfig::default()).unwrap();
        assert_eq!(scm, again);
    }

    #[test]
    fn empty_family_set_is_a_config_error() {
        let dag = Dag::from_pairs(3, &[(0, 1), (1, 2)]);
        let cfg = MechanismConfig {
            families: vec![],
            ..Default::default()
        };
        assert!(matches!(
            sample_mechanisms(&dag, &metas_for(&dag, &[]), 0, &cfg),
            Err(ScmError::Config(_))
        ));
    }

    #[test]
    fn separation_keeps_binary_rows_off_the_middle() {
        let cfg = MechanismConfig {
            min_separation: 0.15,
            ..Default::default()
        };
        for seed in 0..30 {
            let dag = sample_dag(seed, 6, Motif::Mixed).unwrap();
            let scm = sample_mechanisms(&dag, &metas_for(&dag, &[]), seed, &cfg).unwrap();
            for cpt in scm.cpts() {
                for row in &cpt.rows {
                    assert!(
                        (row.probs[1] - 0.5).abs() >= 0.15 - 1e-12,
                        "{:?}",
                        row.probs
                    );
                }
            }
        }
    }

    #[test]
    fn categorical_rows_are_distributions() {
        let dag = Dag::from_pairs(4, &[(0, 1), (1, 2), (0, 3), (2, 3)]);
        let metas = metas_for(&dag, &[1, 3]);
        let scm = sample_mechanisms(&dag, &metas, 9, &MechanismConfig::default()).unwrap();
        assert_eq!(scm.cpt(NodeId(2)).rows.len(), 3);
        assert_eq!(scm.cpt(NodeId(3)).rows.len(), 4);
        assert_eq!(scm.cpt(NodeId(3)).rows[0].probs.len(), 3);
        for row in &scm.cpt(NodeId(1)).rows {
            assert_eq!(row.probs.len(), 3);
            assert!(row.probs.iter().all(|&p| p >= 0.01));
        }
    }

    #[test]
    fn deterministic_chain_samples_all_ones() {
        let dag = Dag::from_pairs(3, &[(0, 1), (1, 2)]);
        let metas = metas_for(&dag, &[]);
        let cpts = vec![
            Cpt {
                child: NodeId(0),
                parents: vec![],
                mechanism: Mechanism::Specified,
                rows: vec![CptRow {
                    given: vec![],
                    probs: vec![0.0, 1.0],
                }],
            },
            Cpt {
                child: NodeId(1),
                parents: vec![NodeId(0)],
                mechanism: Mechanism::Specified,
                rows: vec![
                    CptRow {
                        given: vec![0],
                        probs: vec![1.0, 0.0],
                    },
                    CptRow {
                        given: vec![1],
                        probs: vec![0.0, 1.0],
                    },
                ],
            },
            Cpt {
                child: NodeId(2),
                parents: vec![NodeId(1)],
                mechanism: Mechanism::Specified,
                rows: vec![
                    CptRow {
                        given: vec![0],
                        probs: vec![1.0, 0.0],
                    },
                    CptRow {
                        given: vec![1],
                        probs: vec![0.0, 1.0],
                    },
                ],
            },
        ];
        let scm = Scm::new(dag, metas, cpts).unwrap();
        for seed in 0..20 {
            let w = sample_world(&scm, seed);
            assert!(w.iter().all(|(_, v)| v == 1));
        }
        let canon = compile_canonical(&scm);
        assert!(canon.classes.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn disease_prior_frequency() {
        let scm = fixtures::disease_scm();
        let mut sampler = WorldSampler::new(&scm, 2024);
        let mut world = vec![0; 3];
        let mut infected = 0usize;
        for _ in 0..100_000 {
            sampler.sample_into(&mut world);
            infected += world[0];
        }
        let freq = infected as f64 / 100_000.0;
        assert!((freq - 0.1).abs() < 0.01, "{freq}");
    }

    #[test]
    fn recovery_classes_match_the_worked_example() {
        let canon = compile_canonical(&fixtures::disease_scm());
        let classes = canon.node(NodeId(2));
        assert_eq!(classes.len(), 3);
        // Rows: medicine = 0, medicine = 1. Responses are recovery values.
        let find = |resp: [usize; 2]| {
            classes
                .iter()
                .find(|c| c.responses == resp)
                .map(|c| c.weight)
                .unwrap()
        };
        assert!((find([1, 1]) - 0.4).abs() < 1e-12);
        assert!((find([0, 1]) - 0.5).abs() < 1e-12);
        assert!((find([0, 0]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn uniform_categorical_prior_has_three_classes() {
        let dag = Dag::from_pairs(3, &[(0, 1), (0, 2)]);
        let mut metas = metas_for(&dag, &[0]);
        metas[0].domain = VarDomain::categorical(["a", "b", "c"]);
        let third = 1.0 / 3.0;
        let mut cpts = sample_mechanisms(&dag, &metas, 1, &MechanismConfig::default())
            .unwrap()
            .cpts()
            .to_vec();
        cpts[0].rows[0].probs = vec![third, third, 1.0 - 2.0 * third];
        let scm = Scm::new(dag, metas, cpts).unwrap();
        let canon = compile_canonical(&scm);
        assert_eq!(canon.node(NodeId(0)).len(), 3);
        for c in canon.node(NodeId(0)) {
            assert!((c.weight - third).abs() < 1e-12);
        }
    }

    #[test]
    fn serde_round_trip_validates() {
        let scm = fixtures::disease_scm();
        let json = serde_json::to_string(&scm).unwrap();
        let back: Scm = serde_json::from_str(&json).unwrap();
        assert_eq!(back, scm);
        let tampered = json.replace("0.9", "0.8");
        assert!(serde_json::from_str::<Scm>(&tampered).is_err());
    }

    #[test]
    fn parent_tuple_order() {
        assert_eq!(
            parent_tuples(&[2, 3]),
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![1, 2]
            ]
        );
        assert_eq!(parent_tuples(&[]), vec![Vec::<usize>::new()]);
    }
}
