//! Semantic grounding and template rendering.
//!
//! Each scenario domain ships a TOML vocabulary under `vocab/`. Entries
//! carry a display label, the roles they fit, and short verb phrases per
//! domain value; templates in this module splice those phrases together.
//! Every template family has a small fixed set of variants, picked by the
//! caller; variant 0 is the canonical wording.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Dag, NodeId};
use crate::inference::{AnswerForm, Event, Literal, Query, QueryKind};
use crate::scm::{Observability, Role, Scm, VarDomain, VariableMeta};
use crate::seed;

/// Number of wording variants per template family.
pub const TEMPLATE_VARIANTS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextgenError {
    #[error("vocabulary has {available} usable entries, graph needs {needed}")]
    VocabExhausted { needed: usize, available: usize },
    #[error("no template for {0}")]
    TemplateMissing(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("bad vocabulary: {0}")]
    BadVocabulary(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioDomain {
    Medicine,
    Education,
    Economics,
}

impl ScenarioDomain {
    pub const ALL: [ScenarioDomain; 3] = [
        ScenarioDomain::Medicine,
        ScenarioDomain::Education,
        ScenarioDomain::Economics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioDomain::Medicine => "medicine",
            ScenarioDomain::Education => "education",
            ScenarioDomain::Economics => "economics",
        }
    }

    fn source(self) -> &'static str {
        match self {
            ScenarioDomain::Medicine => include_str!("../vocab/medicine.toml"),
            ScenarioDomain::Education => include_str!("../vocab/education.toml"),
            ScenarioDomain::Economics => include_str!("../vocab/economics.toml"),
        }
    }

    /// The shipped vocabulary, parsed once.
    pub fn vocabulary(self) -> &'static Vocabulary {
        static CACHE: OnceLock<Vec<Vocabulary>> = OnceLock::new();
        let all = CACHE.get_or_init(|| {
            ScenarioDomain::ALL
                .iter()
                .map(|d| Vocabulary::parse(d.source()).expect("shipped vocabulary is valid"))
                .collect()
        });
        &all[self as usize]
    }
}

impl fmt::Display for ScenarioDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioDomain {
    type Err = TextgenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioDomain::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TextgenError::UnknownScenario(s.to_string()))
    }
}

/// One groundable variable.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabEntry {
    pub label: String,
    pub noun: String,
    pub roles: Vec<Role>,
    /// Core entries are preferred over the rest of their role class.
    #[serde(default)]
    pub core: bool,
    /// Value labels; absent means binary.
    #[serde(default)]
    pub values: Option<Vec<String>>,
    /// "people that {state}" / "if they {state}".
    pub state: Vec<String>,
    /// "people will {bare}".
    pub bare: Vec<String>,
    /// "if people {past}".
    pub past: Vec<String>,
    /// "if they {had}" in counterfactual questions.
    pub had: Vec<String>,
    /// Conjunction introducing a condition on this variable.
    #[serde(default)]
    pub connector: Option<Vec<String>>,
    /// "people who {short}", present tense, value 1.
    #[serde(default)]
    pub short: Option<String>,
    /// "have {perfect}", value 1.
    #[serde(default)]
    pub perfect: Option<String>,
    /// "{gerund} increases ...", value 1.
    #[serde(default)]
    pub gerund: Option<String>,
    /// Claimed effect of an irrelevant variable on this outcome.
    #[serde(default)]
    pub spurious: Option<String>,
    /// Claimed effect of a hidden confounder on this variable.
    #[serde(default)]
    pub boost: Option<String>,
}

impl VocabEntry {
    pub fn domain(&self) -> VarDomain {
        match &self.values {
            None => VarDomain::binary(),
            Some(vs) => VarDomain::categorical(vs.iter().cloned()),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.values.is_none()
    }

    fn connector(&self, value: usize) -> &str {
        self.connector.as_ref().map_or("if", |c| c[value].as_str())
    }

    fn check(&self) -> Result<(), String> {
        let k = self.values.as_ref().map_or(2, Vec::len);
        if k < 2 {
            return Err(format!("{}: fewer than two values", self.label));
        }
        let phrases = [&self.state, &self.bare, &self.past, &self.had];
        if phrases.iter().any(|p| p.len() != k) {
            return Err(format!(
                "{}: phrase lists must have {k} entries",
                self.label
            ));
        }
        if self.connector.as_ref().is_some_and(|c| c.len() != k) {
            return Err(format!(
                "{}: connector list must have {k} entries",
                self.label
            ));
        }
        if self.roles.is_empty() {
            return Err(format!("{}: no roles", self.label));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorEntry {
    pub label: String,
    /// "people who {state}".
    pub state: String,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfounderEntry {
    pub label: String,
    /// Sentence subject, e.g. "people with strong immune systems".
    pub phrase: String,
}

/// A fixed phrasing for a specific conjunction of literals.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Idiom {
    pub when: Vec<(String, usize)>,
    pub state: String,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    pub domain: String,
    pub intro: String,
    #[serde(rename = "entry")]
    pub entries: Vec<VocabEntry>,
    #[serde(rename = "distractor", default)]
    pub distractors: Vec<DistractorEntry>,
    #[serde(rename = "confounder", default)]
    pub confounders: Vec<ConfounderEntry>,
    #[serde(rename = "idiom", default)]
    pub idioms: Vec<Idiom>,
}

impl Vocabulary {
    pub fn parse(text: &str) -> Result<Self, TextgenError> {
        let vocab: Vocabulary =
            toml::from_str(text).map_err(|e| TextgenError::BadVocabulary(e.to_string()))?;
        let mut labels: Vec<String> = vocab
            .entries
            .iter()
            .map(|e| e.label.to_ascii_lowercase())
            .chain(
                vocab
                    .distractors
                    .iter()
                    .map(|d| d.label.to_ascii_lowercase()),
            )
            .chain(
                vocab
                    .confounders
                    .iter()
                    .map(|c| c.label.to_ascii_lowercase()),
            )
            .collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(TextgenError::BadVocabulary("duplicate labels".into()));
        }
        for entry in &vocab.entries {
            entry.check().map_err(TextgenError::BadVocabulary)?;
        }
        Ok(vocab)
    }

    /// Vocabulary named by a variable's `scenario` field.
    pub fn for_scenario(name: &str) -> Result<&'static Vocabulary, TextgenError> {
        Ok(name.parse::<ScenarioDomain>()?.vocabulary())
    }

    pub fn entry(&self, label: &str) -> Option<&VocabEntry> {
        self.entries
            .iter()
            .find(|e| e.label.eq_ignore_ascii_case(label))
    }
}

/// Vocabulary entries for every variable of a model, indexed by node.
pub struct Lexicon<'a> {
    pub vocab: &'a Vocabulary,
    entries: Vec<&'a VocabEntry>,
    metas: &'a [VariableMeta],
}

impl<'a> Lexicon<'a> {
    pub fn new(vocab: &'a Vocabulary, metas: &'a [VariableMeta]) -> Result<Self, TextgenError> {
        let entries = metas
            .iter()
            .map(|m| {
                let e = vocab.entry(&m.name).ok_or_else(|| {
                    TextgenError::TemplateMissing(format!("variable `{}`", m.name))
                })?;
                if e.domain().len() != m.domain.len() {
                    return Err(TextgenError::TemplateMissing(format!(
                        "variable `{}` with {} values",
                        m.name,
                        m.domain.len()
                    )));
                }
                Ok(e)
            })
            .collect::<Result<_, _>>()?;
        Ok(Lexicon {
            vocab,
            entries,
            metas,
        })
    }

    /// Looks up the vocabulary from the first variable's scenario.
    pub fn for_model(metas: &'a [VariableMeta]) -> Result<Self, TextgenError> {
        let scenario = metas
            .first()
            .map(|m| m.scenario.as_str())
            .ok_or_else(|| TextgenError::TemplateMissing("empty model".into()))?;
        Lexicon::new(Vocabulary::for_scenario(scenario)?, metas)
    }

    pub fn entry(&self, node: NodeId) -> &'a VocabEntry {
        self.entries[node.0]
    }

    pub fn meta(&self, node: NodeId) -> &'a VariableMeta {
        &self.metas[node.0]
    }

    fn state(&self, node: NodeId, value: usize) -> &'a str {
        &self.entries[node.0].state[value]
    }

    fn bare(&self, node: NodeId, value: usize) -> &'a str {
        &self.entries[node.0].bare[value]
    }

    fn had(&self, node: NodeId, value: usize) -> &'a str {
        &self.entries[node.0].had[value]
    }
}

/// Assigns each node a distinct vocabulary entry.
///
/// Roots draw from cause-like entries, sinks from outcome-like entries and
/// the rest from mediators, in topological order. Core entries come first
/// within a class; the others are shuffled by `seed`. A node whose class is
/// used up takes any remaining entry.
pub fn ground_graph(
    dag: &Dag,
    domain: ScenarioDomain,
    seed: u64,
) -> Result<Vec<VariableMeta>, TextgenError> {
    ground_with(dag, domain.vocabulary(), seed)
}

pub fn ground_with(
    dag: &Dag,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<Vec<VariableMeta>, TextgenError> {
    let n = dag.node_count();
    if vocab.entries.len() < n {
        return Err(TextgenError::VocabExhausted {
            needed: n,
            available: vocab.entries.len(),
        });
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..vocab.entries.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| !vocab.entries[i].core);
    let mut used = vec![false; vocab.entries.len()];
    let mut chosen = vec![None; n];
    let topo = dag
        .topo_order()
        .map_err(|e| TextgenError::TemplateMissing(e.to_string()))?;
    for &node in &topo {
        let role = if dag.is_root(node) {
            Role::Cause
        } else if dag.is_sink(node) {
            Role::Outcome
        } else {
            Role::Mediator
        };
        let pick = order
            .iter()
            .copied()
            .find(|&i| !used[i] && vocab.entries[i].roles.first() == Some(&role))
            .or_else(|| {
                order
                    .iter()
                    .copied()
                    .find(|&i| !used[i] && vocab.entries[i].roles.contains(&role))
            })
            .or_else(|| order.iter().copied().find(|&i| !used[i]))
            .ok_or(TextgenError::VocabExhausted {
                needed: n,
                available: vocab.entries.len(),
            })?;
        used[pick] = true;
        chosen[node.0] = Some((pick, role));
    }
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let (idx, role) = c.expect("every node visited");
            let e = &vocab.entries[idx];
            VariableMeta {
                node: NodeId(i),
                name: e.label.clone(),
                domain: e.domain(),
                observability: Observability::Observed,
                role,
                scenario: vocab.domain.clone(),
            }
        })
        .collect())
}

/// Integer percent when exact, otherwise one decimal place.
pub fn format_percent(p: f64) -> String {
    let tenths = (p * 1000.0).round() as i64;
    if tenths % 10 == 0 {
        format!("{}%", tenths / 10)
    } else {
        format!("{}.{}%", tenths / 10, tenths % 10)
    }
}

/// Inverse of [`format_percent`] on the 0.001 grid.
pub fn parse_percent(s: &str) -> Option<f64> {
    let body = s.trim().strip_suffix('%')?;
    let (int, frac) = body.split_once('.').unwrap_or((body, "0"));
    if frac.len() != 1 || int.is_empty() {
        return None;
    }
    let tenths = int.parse::<i64>().ok()? * 10 + frac.parse::<i64>().ok()?;
    Some(tenths as f64 / 1000.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementKind {
    Intro,
    Prior,
    Conditional,
    Distractor,
    Confounder,
    Belief,
    ReversedClaim,
    Masked,
}

/// One sentence of an instance background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub id: String,
    pub kind: StatementKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    /// The probability a binary statement states, as rendered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

impl Statement {
    pub fn plain(id: impl Into<String>, kind: StatementKind, text: impl Into<String>) -> Self {
        Statement {
            id: id.into(),
            kind,
            text: text.into(),
            node: None,
            row: None,
            probability: None,
        }
    }

    /// Whether the statement carries model parameters.
    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, StatementKind::Prior | StatementKind::Conditional)
    }
}

fn join_and(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Intro line plus one statement per root prior and per conditional row.
///
/// Nodes are visited in topological order. Conditional rows appear in
/// reverse tuple order, so the all-ones parent context comes first.
pub fn render_background(scm: &Scm, variant: usize) -> Result<Vec<Statement>, TextgenError> {
    let lex = Lexicon::for_model(scm.metas())?;
    let variant = variant % TEMPLATE_VARIANTS;
    let mut out = vec![Statement::plain(
        "intro",
        StatementKind::Intro,
        lex.vocab.intro.clone(),
    )];
    for node in scm
        .graph()
        .topo_order()
        .map_err(|e| TextgenError::TemplateMissing(e.to_string()))?
    {
        let cpt = scm.cpt(node);
        let entry = lex.entry(node);
        if cpt.parents.is_empty() {
            let probs = &cpt.rows[0].probs;
            let (text, probability) = if entry.is_binary() {
                let p = format_percent(probs[1]);
                let text = match variant {
                    0 => format!("Now we know that {p} people {}.", entry.bare[1]),
                    _ => format!("About {p} of people {}.", entry.bare[1]),
                };
                (text, Some(probs[1]))
            } else {
                let parts: Vec<String> = probs
                    .iter()
                    .enumerate()
                    .map(|(v, &p)| format!("{} people {}", format_percent(p), entry.bare[v]))
                    .collect();
                (format!("Now we know that {}.", join_and(&parts)), None)
            };
            out.push(Statement {
                id: format!("prior:{}", node.0),
                kind: StatementKind::Prior,
                text,
                node: Some(node),
                row: Some(0),
                probability,
            });
            continue;
        }
        for (r, row) in cpt.rows.iter().enumerate().rev() {
            let conds: Vec<String> = cpt
                .parents
                .iter()
                .zip(&row.given)
                .map(|(&p, &v)| lex.state(p, v).to_string())
                .collect();
            let cond = join_and(&conds);
            let conn = if cpt.parents.len() == 1 {
                lex.entry(cpt.parents[0]).connector(row.given[0])
            } else {
                "if"
            };
            let (text, probability) = if entry.is_binary() {
                let p = format_percent(row.probs[1]);
                let text = match variant {
                    0 => format!("{p} people will {} {conn} they {cond}.", entry.bare[1]),
                    _ => format!("Among people who {cond}, {p} will {}.", entry.bare[1]),
                };
                (text, Some(row.probs[1]))
            } else {
                let parts: Vec<String> = row
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(v, &p)| format!("{} {}", format_percent(p), entry.bare[v]))
                    .collect();
                (
                    format!("Among people who {cond}, {}.", join_and(&parts)),
                    None,
                )
            };
            out.push(Statement {
                id: format!("cond:{}:{r}", node.0),
                kind: StatementKind::Conditional,
                text,
                node: Some(node),
                row: Some(r),
                probability,
            });
        }
    }
    Ok(out)
}

fn literal_phrase(lit: &Literal, pick: impl Fn(NodeId, usize) -> String) -> String {
    lit.values
        .iter()
        .map(|&v| pick(lit.node, v))
        .collect::<Vec<_>>()
        .join(" or ")
}

fn event_states(lex: &Lexicon<'_>, event: &Event) -> String {
    let key: Vec<(String, usize)> = event
        .literals()
        .iter()
        .filter(|l| l.values.len() == 1)
        .map(|l| (lex.meta(l.node).name.clone(), l.values[0]))
        .collect();
    if key.len() == event.literals().len() {
        if let Some(idiom) = lex.vocab.idioms.iter().find(|i| {
            i.when.len() == key.len()
                && i.when.iter().all(|(name, v)| {
                    key.iter()
                        .any(|(k, kv)| k.eq_ignore_ascii_case(name) && kv == v)
                })
        }) {
            return idiom.state.clone();
        }
    }
    let parts: Vec<String> = event
        .literals()
        .iter()
        .map(|l| literal_phrase(l, |n, v| lex.state(n, v).to_string()))
        .collect();
    join_and(&parts)
}

fn event_bare(lex: &Lexicon<'_>, event: &Event) -> String {
    let parts: Vec<String> = event
        .literals()
        .iter()
        .map(|l| literal_phrase(l, |n, v| lex.bare(n, v).to_string()))
        .collect();
    join_and(&parts)
}

fn intervention_bare(lex: &Lexicon<'_>, query: &Query) -> String {
    let parts: Vec<String> = query
        .interventions
        .iter()
        .map(|(n, v)| lex.bare(n, v).to_string())
        .collect();
    join_and(&parts)
}

fn intervention_had(lex: &Lexicon<'_>, query: &Query) -> String {
    let parts: Vec<String> = query
        .interventions
        .iter()
        .map(|(n, v)| lex.had(n, v).to_string())
        .collect();
    join_and(&parts)
}

/// The question text for `query`, phrased for its answer form.
pub fn render_question(
    query: &Query,
    metas: &[VariableMeta],
    variant: usize,
) -> Result<String, TextgenError> {
    for node in query.variables() {
        if node.0 >= metas.len() {
            return Err(TextgenError::TemplateMissing(format!(
                "node {node} has no variable record"
            )));
        }
    }
    let lex = Lexicon::for_model(metas)?;
    let variant = variant % TEMPLATE_VARIANTS;
    let among = |e: &Event| {
        if e.is_empty() {
            String::new()
        } else {
            format!("Among people who {}, ", event_states(&lex, e))
        }
    };
    let threshold = match query.form {
        AnswerForm::Numeric => None,
        AnswerForm::YesNo { threshold } => Some(format_percent(threshold)),
    };
    let text = match query.kind {
        QueryKind::Observational => {
            let t = event_states(&lex, &query.target);
            let prefix = among(&query.evidence);
            match (&threshold, variant) {
                (Some(th), _) => capitalize(&format!(
                    "{prefix}is the ratio of people that {t} above {th}?"
                )),
                (None, 0) => capitalize(&format!("{prefix}what's the ratio of people that {t}?")),
                (None, _) => capitalize(&format!("{prefix}what fraction of people {t}?")),
            }
        }
        QueryKind::Interventional => {
            let t = event_bare(&lex, &query.target);
            let prefix = among(&query.evidence);
            match (&threshold, variant) {
                (Some(th), _) => capitalize(&format!(
                    "{prefix}if people were made to {}, would the ratio of people that would {t} be above {th}?",
                    intervention_bare(&lex, query)
                )),
                (None, 0) => capitalize(&format!(
                    "{prefix}if people were made to {}, what's the ratio of people that would {t}?",
                    intervention_bare(&lex, query)
                )),
                (None, _) => capitalize(&format!(
                    "{prefix}if everyone {}, what's the ratio of people that would {t}?",
                    intervention_had(&lex, query)
                )),
            }
        }
        QueryKind::Counterfactual => {
            let t = event_bare(&lex, &query.target);
            let e = event_states(&lex, &query.evidence);
            let had = intervention_had(&lex, query);
            match (&threshold, variant) {
                (Some(th), _) => format!(
                    "Among people who {e}, if they {had}, would the ratio of them that would {t} be above {th}?"
                ),
                (None, 0) => format!("Among people who {e}, what's the ratio that would {t} if they {had}?"),
                (None, _) => format!("Consider people who {e}. If they {had}, what's the ratio that would {t}?"),
            }
        }
        QueryKind::Attributional => {
            let cause = query.cause.ok_or_else(|| {
                TextgenError::TemplateMissing("attributional query without cause".into())
            })?;
            let outcome = query.target.literals()[0].node;
            let e = event_states(&lex, &query.evidence);
            let gerund = lex.entry(cause).gerund.as_deref();
            match (&threshold, variant, gerund) {
                (Some(th), _, _) => format!(
                    "Among people who {e}, would the ratio that would {} if they {} be above {th}?",
                    lex.bare(outcome, 0),
                    lex.had(cause, 0)
                ),
                (None, 1, Some(g)) => format!(
                    "Among people who {e}, how likely is it that {g} caused their {}?",
                    lex.entry(outcome).noun
                ),
                (None, _, _) => format!(
                    "Among people who {e}, what's the ratio that would {} if they {}?",
                    lex.bare(outcome, 0),
                    lex.had(cause, 0)
                ),
            }
        }
    };
    Ok(text)
}

/// "Also, 90% of people who live in sunny areas recover faster."
pub fn distractor_sentence(d: &DistractorEntry, outcome: &VocabEntry, p: f64) -> Option<String> {
    let claim = outcome.spurious.as_deref()?;
    Some(format!(
        "Also, {} of people who {} {claim}.",
        format_percent(p),
        d.state
    ))
}

/// Hidden common cause said to raise one variable and lower another.
pub fn confounder_sentence(
    c: &ConfounderEntry,
    up: &VocabEntry,
    down: &VocabEntry,
) -> Option<String> {
    if !up.is_binary() || !down.is_binary() {
        return None;
    }
    let raised = up
        .boost
        .clone()
        .unwrap_or_else(|| format!("are more likely to {}", up.bare[1]));
    Some(format!(
        "Also, {} tend to both {raised} and are less likely to {}.",
        c.phrase, down.bare[1]
    ))
}

/// A claim that `effect` makes `cause` more likely, reversing the edge.
pub fn reversed_claim(cause: &VocabEntry, effect: &VocabEntry) -> Option<String> {
    Some(format!(
        "People who {} are more likely to have {}.",
        effect.short.as_deref()?,
        cause.perfect.as_deref()?
    ))
}

/// A belief that `subject` raises the chance of `object`.
pub fn belief_sentence(subject: &VocabEntry, object: &VocabEntry) -> Option<String> {
    Some(format!(
        "Many people believe that {} increases the chance of {}.",
        subject.gerund.as_deref()?,
        object.noun
    ))
}

/// A question presupposing that `outcome` is certain once `absent` is 0
/// and `present` is 1.
pub fn certainty_question(
    absent: &VocabEntry,
    present: &VocabEntry,
    outcome: &VocabEntry,
) -> Option<String> {
    if !absent.is_binary() || !present.is_binary() {
        return None;
    }
    Some(format!(
        "If people {} but still {}, will they definitely {}?",
        absent.past[0],
        present.past[1],
        outcome.short.as_deref()?
    ))
}

/// Prefixes `question` with a false claim that `cause` rules out `effect`.
pub fn contradicted_question(
    cause: &VocabEntry,
    effect: &VocabEntry,
    question: &str,
) -> Option<String> {
    if !cause.is_binary() || !effect.is_binary() {
        return None;
    }
    Some(format!(
        "Suppose people who {} never {}. {question}",
        cause.short.as_deref()?,
        effect.bare[1]
    ))
}

/// Rendered percentages of a statement, in order of appearance.
pub fn percents_in(text: &str) -> Vec<f64> {
    text.split_whitespace()
        .filter_map(|w| parse_percent(w.trim_end_matches([',', '.'])))
        .collect()
}

/// The value labels of `meta` keyed by index, for observation blocks.
pub fn value_label(meta: &VariableMeta, value: usize) -> &str {
    meta.domain.label(value)
}

/// Label lookup for graph rendering.
pub fn labels(metas: &[VariableMeta]) -> BTreeMap<NodeId, String> {
    metas.iter().map(|m| (m.node, m.name.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn shipped_vocabularies_parse() {
        for d in ScenarioDomain::ALL {
            let v = d.vocabulary();
            assert_eq!(v.domain, d.name());
            assert!(v.entries.len() >= 7, "{d}");
            assert!(!v.distractors.is_empty() && !v.confounders.is_empty());
        }
    }

    #[test]
    fn chain_grounds_to_disease_story() {
        let dag = Dag::from_pairs(3, &[(0, 1), (1, 2)]);
        for seed in 0..5 {
            let metas = ground_graph(&dag, ScenarioDomain::Medicine, seed).unwrap();
            let names: Vec<&str> = metas.iter().map(|m| m.name.as_str()).collect();
            assert_eq!(names, ["Infection", "Medicine", "Recovery"]);
        }
    }

    #[test]
    fn grounding_is_deterministic_and_injective() {
        for d in ScenarioDomain::ALL {
            for seed in 0..20 {
                let dag = crate::dag::sample_dag(seed, 7, crate::dag::Motif::Mixed).unwrap();
                let a = ground_graph(&dag, d, seed).unwrap();
                assert_eq!(a, ground_graph(&dag, d, seed).unwrap());
                let mut names: Vec<_> = a.iter().map(|m| m.name.clone()).collect();
                names.sort();
                names.dedup();
                assert_eq!(names.len(), 7);
            }
        }
    }

    #[test]
    fn small_vocabulary_is_exhausted() {
        let mut vocab = ScenarioDomain::Medicine.vocabulary().clone();
        vocab.entries.truncate(2);
        let dag = Dag::from_pairs(3, &[(0, 1), (1, 2)]);
        assert_eq!(
            ground_with(&dag, &vocab, 0),
            Err(TextgenError::VocabExhausted {
                needed: 3,
                available: 2
            })
        );
    }

    #[test]
    fn disease_background_matches_golden_text() {
        let golden = include_str!("../fixtures/golden/disease_clean.txt");
        let statements = render_background(&fixtures::disease_scm(), 0).unwrap();
        let q = render_question(
            &fixtures::still_infected_query(),
            fixtures::disease_scm().metas(),
            0,
        )
        .unwrap();
        let mut text: Vec<String> = statements.into_iter().map(|s| s.text).collect();
        text.push(format!("Question: {q}"));
        assert_eq!(text.join("\n"), golden.trim_end());
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(0.345), "34.5%");
        assert_eq!(format_percent(0.1), "10%");
        assert_eq!(format_percent(0.05), "5%");
        assert_eq!(format_percent(0.999), "99.9%");
        assert_eq!(parse_percent("34.5%"), Some(0.345));
        assert_eq!(parse_percent("10%"), Some(0.1));
        assert_eq!(parse_percent("ten%"), None);
    }

    #[test]
    fn question_families() {
        let scm = fixtures::disease_scm();
        let (a, b, c) = (NodeId(0), NodeId(1), NodeId(2));
        let q = Query::interventional(
            Event::from_pairs([(c, 1)]),
            [(b, 0)].into_iter().collect(),
            Event::empty(),
        );
        assert_eq!(
            render_question(&q, scm.metas(), 1).unwrap(),
            "If everyone had not taken medicine, what's the ratio of people that would recover in three days?"
        );
        let q = Query::counterfactual(
            Event::from_pairs([(c, 1)]),
            [(a, 0)].into_iter().collect(),
            Event::from_pairs([(a, 1), (c, 1)]),
        )
        .with_form(AnswerForm::YesNo { threshold: 0.5 });
        assert_eq!(
            render_question(&q, scm.metas(), 0).unwrap(),
            "Among people who are infected and recover in three days, if they had not been infected, \
             would the ratio of them that would recover in three days be above 50%?"
        );
        let q = Query::attributional(b, c);
        assert_eq!(
            render_question(&q, scm.metas(), 1).unwrap(),
            "Among people who take medicine and recover in three days, how likely is it that taking medicine caused their recovery?"
        );
    }

    #[test]
    fn unknown_labels_have_no_template() {
        let mut metas = fixtures::disease_scm().metas().to_vec();
        metas[1].name = "Broth".into();
        assert!(matches!(
            Lexicon::for_model(&metas),
            Err(TextgenError::TemplateMissing(_))
        ));
    }
}
