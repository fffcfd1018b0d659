//! Structured noise injection.
//!
//! Each injector edits the rendered instance (statements, observations,
//! question) and never the model, so the stored answer is untouched. An
//! application is split into a [`NoisePlan`], which fixes every random
//! choice, and its execution, which records invertible [`Edit`]s.
//! [`revert`] undoes a record exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::NodeId;
use crate::inference::Answer;
use crate::scm::{Assignment, Observability, Role, Scm, VarDomain, VariableMeta};
use crate::seed;
use crate::textgen::{self, format_percent, Lexicon, Statement, StatementKind, TextgenError};

/// Stated probabilities never leave this range after a shift.
pub const PROBABILITY_FLOOR: f64 = 0.01;
pub const PROBABILITY_CEILING: f64 = 0.99;

#[allow(clippy::upper_case_acronyms)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Value perturbation.
    VP,
    /// Irrelevant variable.
    IV,
    /// Partial masking.
    PM,
    /// Causal swap.
    CS,
    /// Latent confounder.
    CI,
    /// Question perturbation.
    QP,
    /// Belief-inconsistent statement.
    BIP,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 7] = [
        NoiseKind::VP,
        NoiseKind::IV,
        NoiseKind::PM,
        NoiseKind::CS,
        NoiseKind::CI,
        NoiseKind::QP,
        NoiseKind::BIP,
    ];

    /// Composition order: insertions, then mutations, then masking, then
    /// question edits.
    pub const ORDER: [NoiseKind; 7] = [
        NoiseKind::IV,
        NoiseKind::CI,
        NoiseKind::BIP,
        NoiseKind::VP,
        NoiseKind::CS,
        NoiseKind::PM,
        NoiseKind::QP,
    ];

    pub fn code(self) -> &'static str {
        match self {
            NoiseKind::VP => "VP",
            NoiseKind::IV => "IV",
            NoiseKind::PM => "PM",
            NoiseKind::CS => "CS",
            NoiseKind::CI => "CI",
            NoiseKind::QP => "QP",
            NoiseKind::BIP => "BIP",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown noise kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStyle {
    /// Replace the masked statement with "(Missing)".
    #[default]
    Explicit,
    /// Drop the statement.
    Silent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Chance that each kind is applied to an instance.
    pub probabilities: BTreeMap<NoiseKind, f64>,
    /// When set, each instance instead gets a uniformly chosen number of
    /// distinct kinds from this list.
    pub combination_sizes: Option<Vec<usize>>,
    /// Probability shift used by value perturbation.
    pub vp_delta: f64,
    pub mask_style: MaskStyle,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            probabilities: NoiseKind::ALL.into_iter().map(|k| (k, 0.25)).collect(),
            combination_sizes: None,
            vp_delta: 0.1,
            mask_style: MaskStyle::Explicit,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig {
            probabilities: NoiseKind::ALL.into_iter().map(|k| (k, 0.0)).collect(),
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<(), NoiseError> {
        let bad = |m: String| Err(NoiseError::Config(m));
        for (k, p) in &self.probabilities {
            if !(0.0..=1.0).contains(p) {
                return bad(format!("probability for {k} is {p}, outside [0, 1]"));
            }
        }
        if !(self.vp_delta > 0.0 && self.vp_delta < PROBABILITY_CEILING - PROBABILITY_FLOOR) {
            return bad(format!("vp_delta {} out of range", self.vp_delta));
        }
        if let Some(sizes) = &self.combination_sizes {
            if sizes.is_empty() || sizes.iter().any(|&s| s == 0 || s > NoiseKind::ALL.len()) {
                return bad("combination sizes must lie in 1..=7".into());
            }
        }
        Ok(())
    }

    /// The kinds to apply to one instance.
    pub fn choose_kinds(&self, seed: u64) -> BTreeSet<NoiseKind> {
        let mut rng = seed::rng(seed);
        match &self.combination_sizes {
            Some(sizes) => {
                let k = sizes[rng.gen_range(0..sizes.len())];
                NoiseKind::ALL
                    .choose_multiple(&mut rng, k)
                    .copied()
                    .collect()
            }
            None => NoiseKind::ALL
                .into_iter()
                .filter(|k| {
                    let p = self.probabilities.get(k).copied().unwrap_or(0.0);
                    rng.gen::<f64>() < p
                })
                .collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("{kind} not applicable: {reason}")]
    NotApplicable { kind: NoiseKind, reason: String },
    #[error("noise configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Text(#[from] TextgenError),
}

/// The mutable surface of an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderableInstance {
    pub statements: Vec<Statement>,
    pub observations: Assignment,
    pub question: String,
    pub clean_answer: Answer,
    /// Variables introduced by noise; never part of the model.
    #[serde(default)]
    pub extra_variables: Vec<VariableMeta>,
}

/// One invertible change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "snake_case")]
pub enum Edit {
    InsertStatement {
        index: usize,
        statement: Statement,
    },
    ReplaceStatement {
        index: usize,
        before: Statement,
        after: Statement,
    },
    RemoveStatement {
        index: usize,
        statement: Statement,
    },
    SetObservation {
        node: NodeId,
        before: Option<usize>,
        after: Option<usize>,
    },
    ReplaceQuestion {
        before: String,
        after: String,
    },
    AddVariable {
        meta: VariableMeta,
    },
}

/// Every random choice of one noise application.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case")]
pub enum NoisePlan {
    ShiftProbability {
        statement: String,
        delta: f64,
    },
    FlipObservation {
        node: NodeId,
    },
    Distractor {
        label: String,
        outcome: NodeId,
        probability: f64,
    },
    MaskStatement {
        statement: String,
    },
    MaskObservation {
        node: NodeId,
    },
    ReverseClaim {
        cause: NodeId,
        effect: NodeId,
    },
    SwapObservations {
        a: NodeId,
        b: NodeId,
    },
    Confounder {
        label: String,
        up: NodeId,
        down: NodeId,
    },
    CertaintyQuestion {
        absent: NodeId,
        present: NodeId,
        outcome: NodeId,
    },
    ContradictedQuestion {
        cause: NodeId,
        effect: NodeId,
    },
    Belief {
        subject: NodeId,
        object: NodeId,
    },
}

impl NoisePlan {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoisePlan::ShiftProbability { .. } | NoisePlan::FlipObservation { .. } => NoiseKind::VP,
            NoisePlan::Distractor { .. } => NoiseKind::IV,
            NoisePlan::MaskStatement { .. } | NoisePlan::MaskObservation { .. } => NoiseKind::PM,
            NoisePlan::ReverseClaim { .. } | NoisePlan::SwapObservations { .. } => NoiseKind::CS,
            NoisePlan::Confounder { .. } => NoiseKind::CI,
            NoisePlan::CertaintyQuestion { .. } | NoisePlan::ContradictedQuestion { .. } => {
                NoiseKind::QP
            }
            NoisePlan::Belief { .. } => NoiseKind::BIP,
        }
    }
}

/// Audit trail of one application.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub kind: NoiseKind,
    pub plan: NoisePlan,
    /// Statement ids, `obs:<node>`, `question`, or `var:<label>`.
    pub affected: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
    pub edits: Vec<Edit>,
}

/// A kind that was requested but could not be applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSkip {
    pub kind: NoiseKind,
    pub reason: String,
}

fn not_applicable(kind: NoiseKind, reason: impl Into<String>) -> NoiseError {
    NoiseError::NotApplicable {
        kind,
        reason: reason.into(),
    }
}

fn obs_id(node: NodeId) -> String {
    format!("obs:{}", node.0)
}

fn position(inst: &RenderableInstance, id: &str) -> Option<usize> {
    inst.statements.iter().position(|s| s.id == id)
}

fn fresh_id(inst: &RenderableInstance, kind: NoiseKind) -> String {
    let base = format!("noise:{}", kind.code().to_ascii_lowercase());
    (0..)
        .map(|i| format!("{base}:{i}"))
        .find(|id| position(inst, id).is_none())
        .expect("unbounded")
}

fn shifted(p: f64, delta: f64) -> Option<f64> {
    let q = ((p + delta) * 1000.0).round() / 1000.0;
    (PROBABILITY_FLOOR..=PROBABILITY_CEILING)
        .contains(&q)
        .then_some(q)
}

fn flipped(domain: &VarDomain, v: usize) -> usize {
    (v + 1) % domain.len()
}

fn taken_labels(inst: &RenderableInstance, scm: &Scm) -> BTreeSet<String> {
    scm.metas()
        .iter()
        .chain(&inst.extra_variables)
        .map(|m| m.name.to_ascii_lowercase())
        .collect()
}

fn binary_nodes(scm: &Scm) -> Vec<NodeId> {
    scm.graph()
        .nodes()
        .filter(|&n| scm.meta(n).domain.is_binary())
        .collect()
}

/// Draws a plan for `kind`, or explains why none exists.
pub fn plan_noise(
    inst: &RenderableInstance,
    scm: &Scm,
    kind: NoiseKind,
    seed: u64,
    config: &NoiseConfig,
) -> Result<NoisePlan, NoiseError> {
    let lex = Lexicon::for_model(scm.metas())?;
    let mut rng = seed::rng(seed);
    let na = |r: &str| not_applicable(kind, r);
    let graph = scm.graph();
    match kind {
        NoiseKind::VP => {
            let shiftable: Vec<&Statement> = inst
                .statements
                .iter()
                .filter(|s| s.is_numeric() && s.probability.is_some())
                .collect();
            let flippable: Vec<NodeId> = inst.observations.nodes().collect();
            let flip = match (shiftable.is_empty(), flippable.is_empty()) {
                (true, true) => return Err(na("no stated probability or observation to perturb")),
                (true, false) => true,
                (false, true) => false,
                (false, false) => rng.gen_bool(0.5),
            };
            if flip {
                return Ok(NoisePlan::FlipObservation {
                    node: *flippable.choose(&mut rng).unwrap(),
                });
            }
            let s = shiftable.choose(&mut rng).unwrap();
            let p = s.probability.unwrap();
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let delta = [sign * config.vp_delta, -sign * config.vp_delta]
                .into_iter()
                .find(|&d| shifted(p, d).is_some())
                .ok_or_else(|| na("shift leaves the admissible range"))?;
            Ok(NoisePlan::ShiftProbability {
                statement: s.id.clone(),
                delta,
            })
        }
        NoiseKind::IV => {
            let taken = taken_labels(inst, scm);
            let free: Vec<_> = lex
                .vocab
                .distractors
                .iter()
                .filter(|d| !taken.contains(&d.label.to_ascii_lowercase()))
                .collect();
            let d = free
                .choose(&mut rng)
                .ok_or_else(|| na("every distractor is in use"))?;
            let with_claim: Vec<NodeId> = graph
                .nodes()
                .filter(|&n| lex.entry(n).spurious.is_some())
                .collect();
            let sinks: Vec<NodeId> = with_claim
                .iter()
                .copied()
                .filter(|&n| graph.is_sink(n))
                .collect();
            let pool = if sinks.is_empty() {
                &with_claim
            } else {
                &sinks
            };
            let outcome = *pool
                .choose(&mut rng)
                .ok_or_else(|| na("no outcome has a spurious claim"))?;
            let probability = rng.gen_range(12..=19) as f64 * 0.05;
            Ok(NoisePlan::Distractor {
                label: d.label.clone(),
                outcome,
                probability: (probability * 100.0).round() / 100.0,
            })
        }
        NoiseKind::PM => {
            let mut options: Vec<NoisePlan> = inst
                .statements
                .iter()
                .filter(|s| s.is_numeric())
                .map(|s| NoisePlan::MaskStatement {
                    statement: s.id.clone(),
                })
                .collect();
            options.extend(
                inst.observations
                    .nodes()
                    .map(|node| NoisePlan::MaskObservation { node }),
            );
            options
                .choose(&mut rng)
                .cloned()
                .ok_or_else(|| na("nothing left to mask"))
        }
        NoiseKind::CS => {
            let swaps: Vec<(NodeId, NodeId)> = graph
                .edges()
                .iter()
                .copied()
                .filter(
                    |&(a, b)| match (inst.observations.get(a), inst.observations.get(b)) {
                        (Some(x), Some(y)) => {
                            x != y && x < scm.cardinality(b) && y < scm.cardinality(a)
                        }
                        _ => false,
                    },
                )
                .collect();
            let claims: Vec<(NodeId, NodeId)> = graph
                .edges()
                .iter()
                .copied()
                .filter(|&(a, b)| textgen::reversed_claim(lex.entry(a), lex.entry(b)).is_some())
                .filter(|&(a, b)| {
                    let text = textgen::reversed_claim(lex.entry(a), lex.entry(b)).unwrap();
                    !inst.statements.iter().any(|s| s.text == text)
                })
                .collect();
            let swap = match (swaps.is_empty(), claims.is_empty()) {
                (true, true) => return Err(na("no edge can be reversed in text or observations")),
                (true, false) => false,
                (false, true) => true,
                (false, false) => rng.gen_bool(0.5),
            };
            if swap {
                let (a, b) = *swaps.choose(&mut rng).unwrap();
                Ok(NoisePlan::SwapObservations { a, b })
            } else {
                let (cause, effect) = *claims.choose(&mut rng).unwrap();
                Ok(NoisePlan::ReverseClaim { cause, effect })
            }
        }
        NoiseKind::CI => {
            let taken = taken_labels(inst, scm);
            let free: Vec<_> = lex
                .vocab
                .confounders
                .iter()
                .filter(|c| !taken.contains(&c.label.to_ascii_lowercase()))
                .collect();
            let c = free
                .choose(&mut rng)
                .ok_or_else(|| na("every confounder is in use"))?;
            let nodes = binary_nodes(scm);
            if nodes.len() < 2 {
                return Err(na("fewer than two binary variables"));
            }
            let pair: Vec<NodeId> = nodes.choose_multiple(&mut rng, 2).copied().collect();
            Ok(NoisePlan::Confounder {
                label: c.label.clone(),
                up: pair[0],
                down: pair[1],
            })
        }
        NoiseKind::QP => {
            let mut options = Vec::new();
            for &(u, v) in graph.edges() {
                for w in graph.nodes().filter(|&w| w != u && w != v) {
                    if textgen::certainty_question(lex.entry(u), lex.entry(v), lex.entry(w))
                        .is_some()
                        && graph.has_path(v, w)
                    {
                        options.push(NoisePlan::CertaintyQuestion {
                            absent: u,
                            present: v,
                            outcome: w,
                        });
                    }
                }
                if textgen::contradicted_question(lex.entry(u), lex.entry(v), "").is_some() {
                    options.push(NoisePlan::ContradictedQuestion {
                        cause: u,
                        effect: v,
                    });
                }
            }
            options
                .choose(&mut rng)
                .cloned()
                .ok_or_else(|| na("no question template fits"))
        }
        NoiseKind::BIP => {
            let mut pairs = Vec::new();
            for subject in graph.nodes() {
                for object in graph.nodes() {
                    if subject != object
                        && graph.has_path(object, subject)
                        && textgen::belief_sentence(lex.entry(subject), lex.entry(object)).is_some()
                    {
                        pairs.push((subject, object));
                    }
                }
            }
            let (subject, object) = *pairs
                .choose(&mut rng)
                .ok_or_else(|| na("no reversible pair"))?;
            Ok(NoisePlan::Belief { subject, object })
        }
    }
}

/// Executes `plan` against `inst`.
pub fn apply_plan(
    inst: &RenderableInstance,
    scm: &Scm,
    plan: &NoisePlan,
    config: &NoiseConfig,
) -> Result<(RenderableInstance, NoiseRecord), NoiseError> {
    let kind = plan.kind();
    let na = |r: String| not_applicable(kind, r);
    let lex = Lexicon::for_model(scm.metas())?;
    let node_ok = |n: NodeId| {
        if n.0 < scm.node_count() {
            Ok(n)
        } else {
            Err(not_applicable(
                kind,
                format!("node {n} is not in the model"),
            ))
        }
    };
    let mut edits = Vec::new();
    let mut affected = Vec::new();
    let (original, replacement);
    let append_at = inst.statements.len();
    let next_var = NodeId(scm.node_count() + inst.extra_variables.len());

    match plan {
        NoisePlan::ShiftProbability { statement, delta } => {
            let index = position(inst, statement)
                .ok_or_else(|| na(format!("no statement `{statement}`")))?;
            let before = inst.statements[index].clone();
            let p = before
                .probability
                .filter(|_| before.is_numeric())
                .ok_or_else(|| na(format!("statement `{statement}` states no probability")))?;
            let q =
                shifted(p, *delta).ok_or_else(|| na("shift leaves the admissible range".into()))?;
            let (old, new) = (format_percent(p), format_percent(q));
            if old == new || !before.text.contains(&old) {
                return Err(na(format!("cannot rewrite {old} in `{statement}`")));
            }
            let mut after = before.clone();
            after.text = before.text.replacen(&old, &new, 1);
            after.probability = Some(q);
            affected.push(statement.clone());
            original = Some(before.text.clone());
            replacement = Some(after.text.clone());
            edits.push(Edit::ReplaceStatement {
                index,
                before,
                after,
            });
        }
        NoisePlan::FlipObservation { node } => {
            let v = inst
                .observations
                .get(*node)
                .ok_or_else(|| na(format!("node {node} is not observed")))?;
            let w = flipped(&scm.meta(node_ok(*node)?).domain, v);
            affected.push(obs_id(*node));
            original = Some(v.to_string());
            replacement = Some(w.to_string());
            edits.push(Edit::SetObservation {
                node: *node,
                before: Some(v),
                after: Some(w),
            });
        }
        NoisePlan::Distractor {
            label,
            outcome,
            probability,
        } => {
            let d = lex
                .vocab
                .distractors
                .iter()
                .find(|d| d.label == *label)
                .ok_or_else(|| na(format!("no distractor `{label}`")))?;
            if taken_labels(inst, scm).contains(&label.to_ascii_lowercase()) {
                return Err(na(format!("`{label}` is already present")));
            }
            let text = textgen::distractor_sentence(d, lex.entry(node_ok(*outcome)?), *probability)
                .ok_or_else(|| na("outcome has no spurious claim".into()))?;
            let meta = VariableMeta {
                node: next_var,
                name: label.clone(),
                domain: VarDomain::binary(),
                observability: Observability::Observed,
                role: Role::Distractor,
                scenario: lex.vocab.domain.clone(),
            };
            let statement = Statement {
                node: Some(next_var),
                probability: Some(*probability),
                ..Statement::plain(
                    fresh_id(inst, kind),
                    StatementKind::Distractor,
                    text.clone(),
                )
            };
            affected.extend([statement.id.clone(), format!("var:{label}")]);
            original = None;
            replacement = Some(text);
            edits.push(Edit::AddVariable { meta });
            edits.push(Edit::InsertStatement {
                index: append_at,
                statement,
            });
        }
        NoisePlan::MaskStatement { statement } => {
            let index = position(inst, statement)
                .ok_or_else(|| na(format!("no statement `{statement}`")))?;
            let before = inst.statements[index].clone();
            if !before.is_numeric() {
                return Err(na(format!("statement `{statement}` carries no parameters")));
            }
            affected.push(statement.clone());
            original = Some(before.text.clone());
            match config.mask_style {
                MaskStyle::Explicit => {
                    let after = Statement {
                        probability: None,
                        text: "(Missing)".into(),
                        kind: StatementKind::Masked,
                        ..before.clone()
                    };
                    replacement = Some(after.text.clone());
                    edits.push(Edit::ReplaceStatement {
                        index,
                        before,
                        after,
                    });
                }
                MaskStyle::Silent => {
                    replacement = None;
                    edits.push(Edit::RemoveStatement {
                        index,
                        statement: before,
                    });
                }
            }
        }
        NoisePlan::MaskObservation { node } => {
            let v = inst
                .observations
                .get(*node)
                .ok_or_else(|| na(format!("node {node} is not observed")))?;
            affected.push(obs_id(*node));
            original = Some(v.to_string());
            replacement = None;
            edits.push(Edit::SetObservation {
                node: *node,
                before: Some(v),
                after: None,
            });
        }
        NoisePlan::ReverseClaim { cause, effect } => {
            if !scm.graph().has_edge(node_ok(*cause)?, node_ok(*effect)?) {
                return Err(na(format!("no edge {cause}->{effect}")));
            }
            let text = textgen::reversed_claim(lex.entry(*cause), lex.entry(*effect))
                .ok_or_else(|| na("variables lack claim phrases".into()))?;
            let index = inst
                .statements
                .iter()
                .position(|s| s.node == Some(*cause))
                .unwrap_or(append_at);
            let statement = Statement {
                node: Some(*effect),
                ..Statement::plain(
                    fresh_id(inst, kind),
                    StatementKind::ReversedClaim,
                    text.clone(),
                )
            };
            affected.push(statement.id.clone());
            original = None;
            replacement = Some(text);
            edits.push(Edit::InsertStatement { index, statement });
        }
        NoisePlan::SwapObservations { a, b } => {
            let (x, y) = match (inst.observations.get(*a), inst.observations.get(*b)) {
                (Some(x), Some(y)) if x != y => (x, y),
                _ => {
                    return Err(na(format!(
                        "nodes {a} and {b} are not both observed with distinct values"
                    )))
                }
            };
            if x >= scm.cardinality(node_ok(*b)?) || y >= scm.cardinality(node_ok(*a)?) {
                return Err(na("values do not fit the swapped domains".into()));
            }
            affected.extend([obs_id(*a), obs_id(*b)]);
            original = Some(format!("{a}={x}, {b}={y}"));
            replacement = Some(format!("{a}={y}, {b}={x}"));
            edits.push(Edit::SetObservation {
                node: *a,
                before: Some(x),
                after: Some(y),
            });
            edits.push(Edit::SetObservation {
                node: *b,
                before: Some(y),
                after: Some(x),
            });
        }
        NoisePlan::Confounder { label, up, down } => {
            let c = lex
                .vocab
                .confounders
                .iter()
                .find(|c| c.label == *label)
                .ok_or_else(|| na(format!("no confounder `{label}`")))?;
            if taken_labels(inst, scm).contains(&label.to_ascii_lowercase()) || up == down {
                return Err(na(format!("`{label}` cannot be added")));
            }
            let text = textgen::confounder_sentence(
                c,
                lex.entry(node_ok(*up)?),
                lex.entry(node_ok(*down)?),
            )
            .ok_or_else(|| na("confounded variables must be binary".into()))?;
            let meta = VariableMeta {
                node: next_var,
                name: label.clone(),
                domain: VarDomain::binary(),
                observability: Observability::Latent,
                role: Role::Confounder,
                scenario: lex.vocab.domain.clone(),
            };
            let statement = Statement {
                node: Some(next_var),
                ..Statement::plain(
                    fresh_id(inst, kind),
                    StatementKind::Confounder,
                    text.clone(),
                )
            };
            affected.extend([statement.id.clone(), format!("var:{label}")]);
            original = None;
            replacement = Some(text);
            edits.push(Edit::AddVariable { meta });
            edits.push(Edit::InsertStatement {
                index: append_at,
                statement,
            });
        }
        NoisePlan::CertaintyQuestion {
            absent,
            present,
            outcome,
        } => {
            let text = textgen::certainty_question(
                lex.entry(node_ok(*absent)?),
                lex.entry(node_ok(*present)?),
                lex.entry(node_ok(*outcome)?),
            )
            .ok_or_else(|| na("variables lack question phrases".into()))?;
            push_question(inst, text, &mut affected, &mut edits)?;
            original = Some(inst.question.clone());
            replacement = Some(match edits.last() {
                Some(Edit::ReplaceQuestion { after, .. }) => after.clone(),
                _ => unreachable!(),
            });
        }
        NoisePlan::ContradictedQuestion { cause, effect } => {
            let text = textgen::contradicted_question(
                lex.entry(node_ok(*cause)?),
                lex.entry(node_ok(*effect)?),
                &inst.question,
            )
            .ok_or_else(|| na("variables lack question phrases".into()))?;
            push_question(inst, text, &mut affected, &mut edits)?;
            original = Some(inst.question.clone());
            replacement = Some(match edits.last() {
                Some(Edit::ReplaceQuestion { after, .. }) => after.clone(),
                _ => unreachable!(),
            });
        }
        NoisePlan::Belief { subject, object } => {
            if !scm.graph().has_path(node_ok(*object)?, node_ok(*subject)?) {
                return Err(na(format!("{object} is not an ancestor of {subject}")));
            }
            let text = textgen::belief_sentence(lex.entry(*subject), lex.entry(*object))
                .ok_or_else(|| na("variables lack belief phrases".into()))?;
            let statement =
                Statement::plain(fresh_id(inst, kind), StatementKind::Belief, text.clone());
            affected.push(statement.id.clone());
            original = None;
            replacement = Some(text);
            edits.push(Edit::InsertStatement {
                index: append_at,
                statement,
            });
        }
    }

    let mut out = inst.clone();
    for edit in &edits {
        forward(&mut out, edit);
    }
    let record = NoiseRecord {
        kind,
        plan: plan.clone(),
        affected,
        original,
        replacement,
        edits,
    };
    Ok((out, record))
}

fn push_question(
    inst: &RenderableInstance,
    text: String,
    affected: &mut Vec<String>,
    edits: &mut Vec<Edit>,
) -> Result<(), NoiseError> {
    if text == inst.question {
        return Err(not_applicable(
            NoiseKind::QP,
            "question already perturbed this way",
        ));
    }
    affected.push("question".into());
    edits.push(Edit::ReplaceQuestion {
        before: inst.question.clone(),
        after: text,
    });
    Ok(())
}

fn forward(inst: &mut RenderableInstance, edit: &Edit) {
    match edit {
        Edit::InsertStatement { index, statement } => {
            inst.statements.insert(*index, statement.clone())
        }
        Edit::ReplaceStatement { index, after, .. } => inst.statements[*index] = after.clone(),
        Edit::RemoveStatement { index, .. } => {
            inst.statements.remove(*index);
        }
        Edit::SetObservation { node, after, .. } => set_obs(&mut inst.observations, *node, *after),
        Edit::ReplaceQuestion { after, .. } => inst.question = after.clone(),
        Edit::AddVariable { meta } => inst.extra_variables.push(meta.clone()),
    }
}

fn backward(inst: &mut RenderableInstance, edit: &Edit) {
    match edit {
        Edit::InsertStatement { index, .. } => {
            inst.statements.remove(*index);
        }
        Edit::ReplaceStatement { index, before, .. } => inst.statements[*index] = before.clone(),
        Edit::RemoveStatement { index, statement } => {
            inst.statements.insert(*index, statement.clone())
        }
        Edit::SetObservation { node, before, .. } => {
            set_obs(&mut inst.observations, *node, *before)
        }
        Edit::ReplaceQuestion { before, .. } => inst.question = before.clone(),
        Edit::AddVariable { meta } => {
            if let Some(pos) = inst.extra_variables.iter().rposition(|m| m == meta) {
                inst.extra_variables.remove(pos);
            }
        }
    }
}

fn set_obs(obs: &mut Assignment, node: NodeId, value: Option<usize>) {
    match value {
        Some(v) => {
            obs.insert(node, v);
        }
        None => {
            obs.remove(node);
        }
    }
}

/// Plans and applies one noise kind.
pub fn apply_noise(
    inst: &RenderableInstance,
    scm: &Scm,
    kind: NoiseKind,
    seed: u64,
    config: &NoiseConfig,
) -> Result<(RenderableInstance, NoiseRecord), NoiseError> {
    let plan = plan_noise(inst, scm, kind, seed, config)?;
    apply_plan(inst, scm, &plan, config)
}

/// Applies `kinds` in [`NoiseKind::ORDER`], skipping kinds that do not
/// apply. Each kind draws from its own seed stream.
pub fn compose_noise(
    inst: &RenderableInstance,
    scm: &Scm,
    kinds: &BTreeSet<NoiseKind>,
    seed: u64,
    config: &NoiseConfig,
) -> (RenderableInstance, Vec<NoiseRecord>, Vec<NoiseSkip>) {
    let mut current = inst.clone();
    let mut records = Vec::new();
    let mut skips = Vec::new();
    for kind in NoiseKind::ORDER.into_iter().filter(|k| kinds.contains(k)) {
        let kind_seed = seed::mix(seed ^ seed::mix(0x4E4F_4953_4500 + kind as u64));
        match apply_noise(&current, scm, kind, kind_seed, config) {
            Ok((next, record)) => {
                current = next;
                records.push(record);
            }
            Err(e) => skips.push(NoiseSkip {
                kind,
                reason: e.to_string(),
            }),
        }
    }
    (current, records, skips)
}

/// Undoes one record. Records must be reverted newest first.
pub fn revert(inst: &RenderableInstance, record: &NoiseRecord) -> RenderableInstance {
    let mut out = inst.clone();
    for edit in record.edits.iter().rev() {
        backward(&mut out, edit);
    }
    out
}

/// Undoes a whole composition.
pub fn revert_all(inst: &RenderableInstance, records: &[NoiseRecord]) -> RenderableInstance {
    records
        .iter()
        .rev()
        .fold(inst.clone(), |acc, r| revert(&acc, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::inference::answer_query;

    fn disease() -> (Scm, RenderableInstance) {
        let scm = fixtures::disease_scm();
        let q = fixtures::still_infected_query();
        let inst = RenderableInstance {
            statements: textgen::render_background(&scm, 0).unwrap(),
            observations: Assignment::new(),
            question: textgen::render_question(&q, scm.metas(), 0).unwrap(),
            clean_answer: answer_query(&scm, &q).unwrap(),
            extra_variables: vec![],
        };
        (scm, inst)
    }

    #[test]
    fn codes_round_trip() {
        for k in NoiseKind::ALL {
            assert_eq!(k.code().parse::<NoiseKind>().unwrap(), k);
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.code())
            );
        }
    }

    #[test]
    fn every_kind_applies_to_the_disease_instance_and_reverts() {
        let (scm, inst) = disease();
        let mut observed = inst.clone();
        observed.observations = [(NodeId(1), 1), (NodeId(2), 0)].into_iter().collect();
        let cfg = NoiseConfig::default();
        for base in [&inst, &observed] {
            for kind in NoiseKind::ALL {
                for seed in 0..10 {
                    let (out, rec) = apply_noise(base, &scm, kind, seed, &cfg).unwrap();
                    assert_eq!(rec.kind, kind);
                    assert_ne!(rec.original, rec.replacement);
                    assert_ne!(&out, base);
                    assert_eq!(out.clean_answer, base.clean_answer);
                    assert_eq!(&revert(&out, &rec), base);
                }
            }
        }
    }

    #[test]
    fn silent_masking_removes_the_statement() {
        let (scm, inst) = disease();
        let cfg = NoiseConfig {
            mask_style: MaskStyle::Silent,
            ..Default::default()
        };
        let plan = NoisePlan::MaskStatement {
            statement: "cond:1:1".into(),
        };
        let (out, rec) = apply_plan(&inst, &scm, &plan, &cfg).unwrap();
        assert_eq!(out.statements.len(), inst.statements.len() - 1);
        assert!(out.statements.iter().all(|s| s.id != "cond:1:1"));
        assert_eq!(revert(&out, &rec), inst);
    }

    #[test]
    fn composition_order_and_skips() {
        let (scm, inst) = disease();
        let all: BTreeSet<NoiseKind> = NoiseKind::ALL.into_iter().collect();
        let (out, recs, skips) = compose_noise(&inst, &scm, &all, 7, &NoiseConfig::default());
        let order: Vec<NoiseKind> = recs.iter().map(|r| r.kind).collect();
        let expected: Vec<NoiseKind> = NoiseKind::ORDER
            .into_iter()
            .filter(|k| !skips.iter().any(|s| s.kind == *k))
            .collect();
        assert_eq!(order, expected);
        assert_eq!(recs.len() + skips.len(), 7);
        assert_eq!(revert_all(&out, &recs), inst);
    }

    #[test]
    fn shift_that_leaves_the_range_is_refused() {
        let (scm, mut inst) = disease();
        inst.statements[1].probability = Some(0.99);
        let plan = NoisePlan::ShiftProbability {
            statement: "prior:0".into(),
            delta: 0.1,
        };
        assert!(matches!(
            apply_plan(&inst, &scm, &plan, &NoiseConfig::default()),
            Err(NoiseError::NotApplicable {
                kind: NoiseKind::VP,
                ..
            })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = NoiseConfig::default();
        cfg.probabilities.insert(NoiseKind::PM, 1.5);
        assert!(cfg.check().is_err());
        let cfg = NoiseConfig {
            combination_sizes: Some(vec![8]),
            ..Default::default()
        };
        assert!(cfg.check().is_err());
        let cfg = NoiseConfig {
            combination_sizes: Some(vec![3]),
            ..Default::default()
        };
        assert_eq!(cfg.choose_kinds(5).len(), 3);
        assert!(NoiseConfig::disabled().choose_kinds(5).is_empty());
    }
}
