//! Exact observational, interventional, counterfactual, and attributional
//! inference by enumeration.
//!
//! Graphs hold at most seven variables, so every query is answered by
//! walking worlds in topological order with pruning on evidence.
//! Counterfactuals walk pairs of (factual, counterfactual) worlds that share
//! one response class per node (see [`crate::scm::compile_canonical`]).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dag::NodeId;
use crate::scm::{compile_canonical, Assignment, CanonicalScm, Scm};

/// Probabilities at or below this are treated as zero evidence.
const ZERO_EVIDENCE: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("evidence has probability zero")]
    ZeroEvidence,
    #[error("world is missing a value for node {0}")]
    IncompleteWorld(NodeId),
    #[error("node {0} is not in the model")]
    UnknownNode(NodeId),
    #[error("value {value} is outside the domain of node {node}")]
    ValueOutOfDomain { node: NodeId, value: usize },
    #[error("node {0} is not binary")]
    NonBinary(NodeId),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// A literal: `node` takes one of `values`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub node: NodeId,
    pub values: Vec<usize>,
}

/// Conjunction of literals over distinct variables.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Event(Vec<Literal>);

impl Event {
    pub fn empty() -> Self {
        Event(Vec::new())
    }

    /// One single-valued literal per pair; literals are kept sorted by node.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (NodeId, usize)>) -> Self {
        let mut lits: Vec<Literal> = pairs
            .into_iter()
            .map(|(node, v)| Literal {
                node,
                values: vec![v],
            })
            .collect();
        lits.sort_by_key(|l| l.node);
        Event(lits)
    }

    pub fn from_literals(mut literals: Vec<Literal>) -> Self {
        literals.sort_by_key(|l| l.node);
        Event(literals)
    }

    pub fn literals(&self) -> &[Literal] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().map(|l| l.node)
    }

    pub fn mentions(&self, node: NodeId) -> bool {
        self.0.iter().any(|l| l.node == node)
    }

    /// The single value this event pins `node` to, if any.
    pub fn value_of(&self, node: NodeId) -> Option<usize> {
        self.0
            .iter()
            .find(|l| l.node == node)
            .and_then(|l| (l.values.len() == 1).then_some(l.values[0]))
    }

    /// Single-valued literals as an assignment.
    pub fn as_assignment(&self) -> Assignment {
        self.0
            .iter()
            .filter(|l| l.values.len() == 1)
            .map(|l| (l.node, l.values[0]))
            .collect()
    }

    #[inline]
    pub fn holds(&self, world: &[usize]) -> bool {
        self.0.iter().all(|l| l.values.contains(&world[l.node.0]))
    }

    fn check(&self, scm: &Scm) -> Result<(), InferenceError> {
        let mut seen = Vec::new();
        for lit in &self.0 {
            if lit.node.0 >= scm.node_count() {
                return Err(InferenceError::UnknownNode(lit.node));
            }
            if seen.contains(&lit.node) {
                return Err(InferenceError::Precondition(format!(
                    "node {} appears twice in one event",
                    lit.node
                )));
            }
            seen.push(lit.node);
            let card = scm.cardinality(lit.node);
            if let Some(&bad) = lit.values.iter().find(|&&v| v >= card) {
                return Err(InferenceError::ValueOutOfDomain {
                    node: lit.node,
                    value: bad,
                });
            }
        }
        Ok(())
    }

    /// Per-node allowed-value masks; `None` means unconstrained.
    fn masks(&self, n: usize) -> Vec<Option<u64>> {
        let mut out = vec![None; n];
        for lit in &self.0 {
            out[lit.node.0] = Some(lit.values.iter().fold(0u64, |m, &v| m | (1 << v)));
        }
        out
    }
}

fn check_assignment(scm: &Scm, a: &Assignment) -> Result<(), InferenceError> {
    for (node, value) in a.iter() {
        if node.0 >= scm.node_count() {
            return Err(InferenceError::UnknownNode(node));
        }
        if value >= scm.cardinality(node) {
            return Err(InferenceError::ValueOutOfDomain { node, value });
        }
    }
    Ok(())
}

/// A probability carried as an exact decimal string with at most twelve
/// fractional digits. The value is rounded once on construction, so its
/// text form round-trips bit-exactly.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Prob(f64);

impl Prob {
    pub fn new(x: f64) -> Self {
        let rounded = (x * 1e12).round() / 1e12;
        Prob(if rounded == 0.0 { 0.0 } else { rounded })
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Prob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{}", self.0);
        if s.contains('.') || s.contains('e') {
            f.write_str(&s)
        } else {
            write!(f, "{s}.0")
        }
    }
}

impl std::str::FromStr for Prob {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let x: f64 = s
            .trim()
            .parse()
            .map_err(|e| format!("bad probability `{s}`: {e}"))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(format!("probability `{s}` outside [0, 1]"));
        }
        Ok(Prob::new(x))
    }
}

impl Serialize for Prob {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prob {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Observational,
    Interventional,
    Counterfactual,
    Attributional,
}

impl QueryKind {
    pub const ALL: [QueryKind; 4] = [
        QueryKind::Observational,
        QueryKind::Interventional,
        QueryKind::Counterfactual,
        QueryKind::Attributional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryKind::Observational => "observational",
            QueryKind::Interventional => "interventional",
            QueryKind::Counterfactual => "counterfactual",
            QueryKind::Attributional => "attributional",
        }
    }
}

/// Whether the rendered question expects a number or a yes/no verdict.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AnswerForm {
    #[default]
    Numeric,
    /// "Yes" when the probability is strictly above `threshold`.
    YesNo { threshold: f64 },
}

/// A typed causal question.
///
/// For attributional queries `target` names the outcome (pinned to 1),
/// `cause` the candidate cause, and `evidence` must pin both to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub kind: QueryKind,
    pub target: Event,
    #[serde(default)]
    pub evidence: Event,
    #[serde(default)]
    pub interventions: Assignment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<NodeId>,
    #[serde(default)]
    pub form: AnswerForm,
}

impl Query {
    pub fn observational(target: Event, evidence: Event) -> Self {
        Query {
            kind: QueryKind::Observational,
            target,
            evidence,
            interventions: Assignment::new(),
            cause: None,
            form: AnswerForm::Numeric,
        }
    }

    pub fn interventional(target: Event, interventions: Assignment, evidence: Event) -> Self {
        Query {
            kind: QueryKind::Interventional,
            interventions,
            ..Query::observational(target, evidence)
        }
    }

    pub fn counterfactual(target: Event, interventions: Assignment, evidence: Event) -> Self {
        Query {
            kind: QueryKind::Counterfactual,
            interventions,
            ..Query::observational(target, evidence)
        }
    }

    pub fn attributional(cause: NodeId, outcome: NodeId) -> Self {
        Query {
            kind: QueryKind::Attributional,
            target: Event::from_pairs([(outcome, 1)]),
            evidence: Event::from_pairs([(cause, 1), (outcome, 1)]),
            interventions: Assignment::new(),
            cause: Some(cause),
            form: AnswerForm::Numeric,
        }
    }

    pub fn with_form(mut self, form: AnswerForm) -> Self {
        self.form = form;
        self
    }

    /// Every node the query mentions, without repeats, ascending.
    pub fn variables(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self
            .target
            .nodes()
            .chain(self.evidence.nodes())
            .chain(self.interventions.nodes())
            .chain(self.cause)
            .collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Ground-truth answer stored with an instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Answer {
    Probability {
        value: Prob,
    },
    Boolean {
        value: bool,
        probability: Prob,
        threshold: f64,
    },
}

impl Answer {
    pub fn probability(&self) -> f64 {
        match self {
            Answer::Probability { value } => value.value(),
            Answer::Boolean { probability, .. } => probability.value(),
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Probability { value } => write!(f, "{value}"),
            Answer::Boolean { value: true, .. } => f.write_str("yes"),
            Answer::Boolean { value: false, .. } => f.write_str("no"),
        }
    }
}

/// Product of table entries along the topological order.
pub fn joint_probability(scm: &Scm, world: &Assignment) -> Result<f64, InferenceError> {
    check_assignment(scm, world)?;
    let mut values = vec![0usize; scm.node_count()];
    for node in scm.graph().nodes() {
        values[node.0] = world
            .get(node)
            .ok_or(InferenceError::IncompleteWorld(node))?;
    }
    Ok(scm
        .topo()
        .iter()
        .map(|&v| scm.probs(v, scm.row_index(v, &values))[values[v]])
        .product())
}

/// Depth-first walk over complete worlds in topological order.
///
/// Intervened nodes are clamped and contribute factor 1; nodes constrained
/// by `prune` only branch on allowed values. `visit` sees every world of
/// nonzero weight.
fn for_each_world<F>(scm: &Scm, clamp: &[Option<usize>], prune: &[Option<u64>], mut visit: F)
where
    F: FnMut(&[usize], f64),
{
    fn walk<F: FnMut(&[usize], f64)>(
        scm: &Scm,
        clamp: &[Option<usize>],
        prune: &[Option<u64>],
        depth: usize,
        weight: f64,
        world: &mut Vec<usize>,
        visit: &mut F,
    ) {
        let topo = scm.topo();
        if depth == topo.len() {
            visit(world, weight);
            return;
        }
        let v = topo[depth];
        let allowed = |x: usize| prune[v].is_none_or(|m| m & (1 << x) != 0);
        if let Some(x) = clamp[v] {
            if allowed(x) {
                world[v] = x;
                walk(scm, clamp, prune, depth + 1, weight, world, visit);
            }
            return;
        }
        let row = scm.row_index(v, world);
        for (x, &p) in scm.probs(v, row).iter().enumerate() {
            if p > 0.0 && allowed(x) {
                world[v] = x;
                walk(scm, clamp, prune, depth + 1, weight * p, world, visit);
            }
        }
    }
    let mut world = vec![0usize; scm.node_count()];
    walk(scm, clamp, prune, 0, 1.0, &mut world, &mut visit);
}

/// Visits every world of nonzero probability with its joint probability.
pub fn enumerate_joint<F: FnMut(&[usize], f64)>(scm: &Scm, visit: F) {
    let n = scm.node_count();
    for_each_world(scm, &vec![None; n], &vec![None; n], visit);
}

fn conditional(
    scm: &Scm,
    target: &Event,
    evidence: &Event,
    clamp: &[Option<usize>],
) -> Result<f64, InferenceError> {
    target.check(scm)?;
    evidence.check(scm)?;
    let prune = evidence.masks(scm.node_count());
    let (mut p_e, mut p_te) = (0.0, 0.0);
    for_each_world(scm, clamp, &prune, |world, w| {
        p_e += w;
        if target.holds(world) {
            p_te += w;
        }
    });
    if p_e <= ZERO_EVIDENCE {
        return Err(InferenceError::ZeroEvidence);
    }
    Ok((p_te / p_e).clamp(0.0, 1.0))
}

/// `P(target | evidence)` by full enumeration; empty evidence gives the
/// marginal.
pub fn query_probability(
    scm: &Scm,
    target: &Event,
    evidence: &Event,
) -> Result<f64, InferenceError> {
    conditional(scm, target, evidence, &vec![None; scm.node_count()])
}

/// `P(target | do(interventions), evidence)` by graph surgery: intervened
/// nodes lose their tables and are clamped (truncated factorization), and
/// evidence conditions the post-intervention distribution.
pub fn interventional_probability(
    scm: &Scm,
    target: &Event,
    interventions: &Assignment,
    evidence: &Event,
) -> Result<f64, InferenceError> {
    if interventions.is_empty() {
        return Err(InferenceError::Precondition(
            "empty intervention set; use query_probability".into(),
        ));
    }
    check_assignment(scm, interventions)?;
    if let Some(node) = evidence.nodes().find(|&n| interventions.contains(n)) {
        return Err(InferenceError::Precondition(format!(
            "evidence mentions intervened node {node}"
        )));
    }
    let mut clamp = vec![None; scm.node_count()];
    for (node, value) in interventions.iter() {
        clamp[node.0] = Some(value);
    }
    conditional(scm, target, evidence, &clamp)
}

/// Counterfactual `P(target_{do(interventions)} | factual_evidence)` by
/// abduction, action, and prediction over the canonical response model.
pub fn counterfactual_probability(
    scm: &Scm,
    factual_evidence: &Event,
    interventions: &Assignment,
    target: &Event,
) -> Result<f64, InferenceError> {
    let canon = compile_canonical(scm);
    counterfactual_with(scm, &canon, factual_evidence, interventions, target)
}

/// As [`counterfactual_probability`] with a precompiled canonical model.
///
/// Walks nodes in topological order carrying a factual and a
/// counterfactual world. At each node the response classes are grouped by
/// the pair of values they produce (factual row, counterfactual row); each
/// nonzero group is one branch. Pruning on factual evidence is the
/// abduction step; clamping the counterfactual copy is the action.
pub fn counterfactual_with(
    scm: &Scm,
    canon: &CanonicalScm,
    factual_evidence: &Event,
    interventions: &Assignment,
    target: &Event,
) -> Result<f64, InferenceError> {
    factual_evidence.check(scm)?;
    target.check(scm)?;
    check_assignment(scm, interventions)?;
    let n = scm.node_count();
    let prune = factual_evidence.masks(n);
    let mut clamp = vec![None; n];
    for (node, value) in interventions.iter() {
        clamp[node.0] = Some(value);
    }

    struct Walk<'a> {
        scm: &'a Scm,
        canon: &'a CanonicalScm,
        prune: Vec<Option<u64>>,
        clamp: Vec<Option<usize>>,
        target: &'a Event,
        fact: Vec<usize>,
        cf: Vec<usize>,
        p_e: f64,
        p_te: f64,
    }

    impl Walk<'_> {
        fn step(&mut self, depth: usize, weight: f64) {
            let topo = self.scm.topo();
            if depth == topo.len() {
                self.p_e += weight;
                if self.target.holds(&self.cf) {
                    self.p_te += weight;
                }
                return;
            }
            let v = topo[depth];
            let card = self.scm.cards()[v];
            let row_f = self.scm.row_index(v, &self.fact);
            let row_c = self.scm.row_index(v, &self.cf);
            let mut groups = vec![0.0f64; card * card];
            for class in &self.canon.classes[v] {
                let xf = class.responses[row_f];
                let xc = self.clamp[v].unwrap_or(class.responses[row_c]);
                groups[xf * card + xc] += class.weight;
            }
            for (slot, &w) in groups.iter().enumerate() {
                let (xf, xc) = (slot / card, slot % card);
                if w <= 0.0 || self.prune[v].is_some_and(|m| m & (1 << xf) == 0) {
                    continue;
                }
                self.fact[v] = xf;
                self.cf[v] = xc;
                self.step(depth + 1, weight * w);
            }
        }
    }

    let mut walk = Walk {
        scm,
        canon,
        prune,
        clamp,
        target,
        fact: vec![0; n],
        cf: vec![0; n],
        p_e: 0.0,
        p_te: 0.0,
    };
    walk.step(0, 1.0);
    if walk.p_e <= ZERO_EVIDENCE {
        return Err(InferenceError::ZeroEvidence);
    }
    Ok((walk.p_te / walk.p_e).clamp(0.0, 1.0))
}

/// Probability of necessity: given evidence in which cause and outcome
/// both hold, the probability the outcome would not have held had the
/// cause been absent.
pub fn probability_of_necessity(
    scm: &Scm,
    cause: NodeId,
    outcome: NodeId,
    factual_evidence: &Event,
) -> Result<f64, InferenceError> {
    for node in [cause, outcome] {
        if node.0 >= scm.node_count() {
            return Err(InferenceError::UnknownNode(node));
        }
        if !scm.meta(node).domain.is_binary() {
            return Err(InferenceError::NonBinary(node));
        }
    }
    if cause == outcome {
        return Err(InferenceError::Precondition(
            "cause and outcome coincide".into(),
        ));
    }
    for node in [cause, outcome] {
        if factual_evidence.value_of(node) != Some(1) {
            return Err(InferenceError::Precondition(format!(
                "evidence must pin node {node} to 1"
            )));
        }
    }
    let mut action = Assignment::new();
    action.insert(cause, 0);
    counterfactual_probability(
        scm,
        factual_evidence,
        &action,
        &Event::from_pairs([(outcome, 0)]),
    )
}

/// Checks the structural preconditions of `query` for its kind.
pub fn check_query(query: &Query) -> Result<(), InferenceError> {
    let pre = |m: &str| Err(InferenceError::Precondition(m.into()));
    match query.kind {
        QueryKind::Observational if !query.interventions.is_empty() => {
            pre("observational query with interventions")
        }
        QueryKind::Interventional | QueryKind::Counterfactual if query.interventions.is_empty() => {
            pre("query kind requires interventions")
        }
        QueryKind::Attributional => {
            let Some(cause) = query.cause else {
                return pre("attributional query without a cause");
            };
            let outcomes: Vec<NodeId> = query.target.nodes().collect();
            if outcomes.len() != 1 {
                return pre("attributional target must name exactly one outcome");
            }
            if query.evidence.value_of(cause) != Some(1)
                || query.evidence.value_of(outcomes[0]) != Some(1)
            {
                return pre("attributional evidence must entail cause = 1 and outcome = 1");
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Probability underlying `query`, before any yes/no rendering.
pub fn query_value(scm: &Scm, query: &Query) -> Result<f64, InferenceError> {
    check_query(query)?;
    match query.kind {
        QueryKind::Observational => query_probability(scm, &query.target, &query.evidence),
        QueryKind::Interventional => {
            interventional_probability(scm, &query.target, &query.interventions, &query.evidence)
        }
        QueryKind::Counterfactual => {
            counterfactual_probability(scm, &query.evidence, &query.interventions, &query.target)
        }
        QueryKind::Attributional => {
            let outcome = query.target.literals()[0].node;
            probability_of_necessity(scm, query.cause.expect("checked"), outcome, &query.evidence)
        }
    }
}

/// Dispatches on the query kind and renders the result in the query's
/// answer form.
pub fn answer_query(scm: &Scm, query: &Query) -> Result<Answer, InferenceError> {
    let p = Prob::new(query_value(scm, query)?);
    Ok(match query.form {
        AnswerForm::Numeric => Answer::Probability { value: p },
        AnswerForm::YesNo { threshold } => Answer::Boolean {
            value: p.value() > threshold,
            probability: p,
            threshold,
        },
    })
}
