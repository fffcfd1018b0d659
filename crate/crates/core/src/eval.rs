//! Scoring answerers against stored ground truth.
//!
//! Prompts are built from an instance plus a graph, sent to a
//! [`ModelBackend`], parsed back into [`ParsedAnswer`]s and scored. The
//! built-in [`OracleBackend`] reads the graph out of the prompt, so a
//! perturbed graph reaches it only through the text it is given.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{self, Dag, DagError, Edge, EdgeMetrics, NodeId, PerturbKind, PerturbRecord};
use crate::dataset::{Instance, Variant};
use crate::inference::{self, Answer, InferenceError, Query, QueryKind};
use crate::noise::NoiseKind;
use crate::par::{self, Execution};
use crate::scm::{parent_tuples, Cpt, CptRow, Mechanism, Scm, VariableMeta};
use crate::seed;
use crate::textgen::{value_label, StatementKind};

/// Absolute tolerance used when none is given.
pub const DEFAULT_TOLERANCE: f64 = 0.01;

/// Slack for decimal strings that do not land exactly on an `f64`.
const REPRESENTATION_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no valid `A -> B` edge found")]
    EmptyParse,
    #[error("no response for {} instance(s): {}", .0.len(), .0.join(", "))]
    MissingResponse(Vec<String>),
    #[error("no predicted graph for {} instance(s): {}", .0.len(), .0.join(", "))]
    MissingPrediction(Vec<String>),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("backend `{backend}` failed on `{id}`: {message}")]
    Backend {
        backend: String,
        id: String,
        message: String,
    },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

// ---------------------------------------------------------------------------
// Prompts

fn label_of(metas: &[VariableMeta], node: NodeId) -> String {
    metas
        .get(node.0)
        .map_or_else(|| node.to_string(), |m| m.name.clone())
}

/// Structured prompt: the scenario line, then `[Causal Graph]`,
/// `[Observed Variables]` and `[Numbers]` blocks, then the question.
pub fn build_structured_prompt(
    instance: &Instance,
    graph: &Dag,
    metas: &[VariableMeta],
    variant: Variant,
) -> String {
    let view = instance.view(variant);
    let mut out = String::new();
    if let Some(intro) = view
        .statements
        .iter()
        .find(|s| s.kind == StatementKind::Intro)
    {
        out.push_str(&intro.text);
        out.push_str("\n\n");
    }
    out.push_str("[Causal Graph]\n");
    out.push_str(&dag::graph_text(graph, |n| label_of(metas, n)));
    out.push_str("\n[Observed Variables]\n");
    for (node, value) in view.observations.iter() {
        match metas.get(node.0) {
            Some(meta) => {
                let _ = writeln!(out, "{} = {}", meta.name, value_label(meta, value));
            }
            None => {
                let _ = writeln!(out, "{node} = {value}");
            }
        }
    }
    out.push_str("\n[Numbers]\n");
    for s in view
        .statements
        .iter()
        .filter(|s| s.kind != StatementKind::Intro)
    {
        out.push_str(&s.text);
        out.push('\n');
    }
    out.push_str("\nQuestion: ");
    out.push_str(question_body(&view.question));
    out.push('\n');
    out
}

fn question_body(question: &str) -> &str {
    question.strip_prefix("Question: ").unwrap_or(question)
}

/// Natural prompt: the background story followed by the question.
pub fn build_natural_prompt(instance: &Instance, variant: Variant) -> String {
    let view = instance.view(variant);
    let mut out = String::new();
    for s in &view.statements {
        out.push_str(&s.text);
        out.push('\n');
    }
    out.push_str("Question: ");
    out.push_str(question_body(&view.question));
    out.push('\n');
    out
}

/// Edges read from a model's graph output.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedGraph {
    pub edges: BTreeSet<Edge>,
    /// Arrow lines naming a label that is not a variable.
    pub skipped: usize,
}

fn arrow_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(.+?)\s*->\s*(.+?)\s*$").expect("valid regex"))
}

/// Reads `A -> B` lines, matching labels case-insensitively.
pub fn parse_graph_response(text: &str, metas: &[VariableMeta]) -> Result<ParsedGraph, EvalError> {
    let by_name: HashMap<String, NodeId> = metas
        .iter()
        .map(|m| (m.name.to_lowercase(), m.node))
        .collect();
    let mut parsed = ParsedGraph::default();
    for line in text.lines() {
        let Some(caps) = arrow_re().captures(line) else {
            continue;
        };
        let a = by_name.get(&caps[1].to_lowercase());
        let b = by_name.get(&caps[2].to_lowercase());
        match (a, b) {
            (Some(&a), Some(&b)) => {
                parsed.edges.insert((a, b));
            }
            _ => parsed.skipped += 1,
        }
    }
    if parsed.edges.is_empty() {
        return Err(EvalError::EmptyParse);
    }
    Ok(parsed)
}

/// The `[Causal Graph]` block of a structured prompt; an empty block is an
/// empty edge set, not an error.
fn prompt_graph(prompt: &str, metas: &[VariableMeta]) -> Result<ParsedGraph, EvalError> {
    let block: String = prompt
        .lines()
        .skip_while(|l| l.trim() != "[Causal Graph]")
        .skip(1)
        .take_while(|l| !l.trim().is_empty() && !l.trim_start().starts_with('['))
        .map(|l| format!("{l}\n"))
        .collect();
    match parse_graph_response(&block, metas) {
        Err(EvalError::EmptyParse) if block.trim().is_empty() => Ok(ParsedGraph::default()),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Answers

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ParsedAnswer {
    Numeric(f64),
    Boolean(bool),
    Unparseable,
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(\d+(?:\.\d+)?|\.\d+)\s*(?:(%)|out\s+of\s+(\d+(?:\.\d+)?))?")
            .expect("valid regex")
    })
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").expect("valid regex"))
}

/// The last probability-like token, else the last yes/no word.
pub fn parse_model_answer(text: &str) -> ParsedAnswer {
    let mut last = None;
    for caps in number_re().captures_iter(text) {
        let Ok(n) = caps[1].parse::<f64>() else {
            continue;
        };
        let value = if caps.get(2).is_some() {
            n / 100.0
        } else if let Some(den) = caps.get(3) {
            match den.as_str().parse::<f64>() {
                Ok(d) if d > 0.0 => n / d,
                _ => continue,
            }
        } else {
            n
        };
        if (0.0..=1.0).contains(&value) {
            last = Some(value);
        }
    }
    if let Some(v) = last {
        return ParsedAnswer::Numeric(v);
    }
    match yes_no_re().find_iter(text).last() {
        Some(m) => ParsedAnswer::Boolean(m.as_str().eq_ignore_ascii_case("yes")),
        None => ParsedAnswer::Unparseable,
    }
}

// ---------------------------------------------------------------------------
// Backends

/// Something that answers prompts.
pub trait ModelBackend: Sync {
    fn name(&self) -> &str;

    fn respond(&self, prompt: &str, id: &str) -> Result<String, EvalError>;

    /// Serial backends are never called concurrently.
    fn is_serial(&self) -> bool {
        false
    }
}

struct OracleCase {
    scm: Scm,
    query: Query,
}

/// Answers exactly from the true model, restricted to the graph it is shown.
///
/// When the prompt's graph equals the true graph the stored model is used
/// unchanged. Otherwise each variable gets P(v | parents in the shown
/// graph) under the true joint, so the answer reflects the graph error.
pub struct OracleBackend {
    cases: HashMap<String, OracleCase>,
}

pub const ORACLE_UNPARSEABLE: &str = "cannot answer: the graph is not a DAG";

impl OracleBackend {
    pub fn new<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Self {
        let cases = instances
            .into_iter()
            .map(|i| {
                (
                    i.id.clone(),
                    OracleCase {
                        scm: i.scm.clone(),
                        query: i.query.clone(),
                    },
                )
            })
            .collect();
        OracleBackend { cases }
    }

    /// The answer for one instance given the graph it is shown.
    pub fn answer_for(
        &self,
        id: &str,
        graph: &BTreeSet<Edge>,
    ) -> Result<Option<Answer>, EvalError> {
        let case = self
            .cases
            .get(id)
            .ok_or_else(|| EvalError::UnknownInstance(id.to_string()))?;
        let truth: BTreeSet<Edge> = case.scm.graph().edges().iter().copied().collect();
        if *graph == truth {
            return Ok(Some(inference::answer_query(&case.scm, &case.query)?));
        }
        let shown = Dag::from_edges_unchecked(case.scm.node_count(), graph.iter().copied());
        let Some(projected) = project_onto(&case.scm, &shown) else {
            return Ok(None);
        };
        Ok(Some(inference::answer_query(&projected, &case.query)?))
    }
}

impl ModelBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn respond(&self, prompt: &str, id: &str) -> Result<String, EvalError> {
        let case = self
            .cases
            .get(id)
            .ok_or_else(|| EvalError::UnknownInstance(id.to_string()))?;
        let graph = prompt_graph(prompt, case.scm.metas())?;
        Ok(match self.answer_for(id, &graph.edges)? {
            Some(answer) => answer.to_string(),
            None => ORACLE_UNPARSEABLE.to_string(),
        })
    }
}

/// Refits `scm`'s joint onto `graph`; `None` if `graph` has a cycle.
/// Parent configurations of zero mass get a uniform row.
pub fn project_onto(scm: &Scm, graph: &Dag) -> Option<Scm> {
    if graph.node_count() != scm.node_count() || !graph.is_acyclic() {
        return None;
    }
    let n = scm.node_count();
    let cards: Vec<usize> = (0..n).map(|v| scm.cardinality(NodeId(v))).collect();
    let parents: Vec<Vec<NodeId>> = (0..n).map(|v| graph.parents(NodeId(v))).collect();
    let mut mass: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|v| {
            let rows: usize = parents[v].iter().map(|p| cards[p.0]).product();
            vec![vec![0.0; cards[v]]; rows]
        })
        .collect();
    inference::enumerate_joint(scm, |world, p| {
        for v in 0..n {
            let row = parents[v]
                .iter()
                .fold(0, |acc, p| acc * cards[p.0] + world[p.0]);
            mass[v][row][world[v]] += p;
        }
    });
    let cpts = (0..n)
        .map(|v| {
            let pcards: Vec<usize> = parents[v].iter().map(|p| cards[p.0]).collect();
            let rows = parent_tuples(&pcards)
                .into_iter()
                .zip(&mass[v])
                .map(|(given, m)| {
                    let total: f64 = m.iter().sum();
                    let probs = if total > 0.0 {
                        m.iter().map(|x| x / total).collect()
                    } else {
                        vec![1.0 / cards[v] as f64; cards[v]]
                    };
                    CptRow { given, probs }
                })
                .collect();
            Cpt {
                child: NodeId(v),
                parents: parents[v].clone(),
                mechanism: Mechanism::Specified,
                rows,
            }
        })
        .collect();
    Some(Scm::from_parts_unchecked(
        graph.clone(),
        scm.metas().to_vec(),
        cpts,
    ))
}

/// One line of a response file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub response: String,
}

/// Replays responses recorded earlier, keyed by instance id.
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(records: impl IntoIterator<Item = ResponseRecord>) -> Self {
        ReplayBackend {
            responses: records.into_iter().map(|r| (r.id, r.response)).collect(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, EvalError> {
        Ok(Self::new(read_jsonl::<ResponseRecord>(path)?))
    }
}

impl ModelBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn respond(&self, _prompt: &str, id: &str) -> Result<String, EvalError> {
        self.responses
            .get(id)
            .cloned()
            .ok_or_else(|| EvalError::MissingResponse(vec![id.to_string()]))
    }
}

/// Reads line-delimited JSON records, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Sends `(id, prompt)` pairs to `backend`, in parallel unless it is serial.
pub fn collect_responses(
    backend: &dyn ModelBackend,
    prompts: &[(String, String)],
    exec: Execution,
) -> Result<BTreeMap<String, String>, EvalError> {
    let exec = if backend.is_serial() {
        Execution::Sequential
    } else {
        exec
    };
    par::map_slice(prompts, exec, |(id, prompt)| {
        backend.respond(prompt, id).map(|r| (id.clone(), r))
    })
    .into_iter()
    .collect()
}

/// Structured prompts built on each instance's own graph.
pub fn structured_prompts(instances: &[Instance], variant: Variant) -> Vec<(String, String)> {
    instances
        .iter()
        .map(|i| {
            (
                i.id.clone(),
                build_structured_prompt(i, i.scm.graph(), i.scm.metas(), variant),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scoring

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub query_kind: QueryKind,
    pub truth: Answer,
    pub parsed: ParsedAnswer,
    pub correct: bool,
    pub noise_kinds: Vec<NoiseKind>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl GroupScore {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub variant: Variant,
    pub tolerance: f64,
    pub overall: GroupScore,
    /// Instances carrying each noise kind; an instance counts in every
    /// kind it carries.
    pub by_noise_kind: BTreeMap<NoiseKind, GroupScore>,
    /// Instances scored without any noise.
    pub without_noise: GroupScore,
    /// Keyed by the number of distinct kinds applied; partitions the verdicts.
    pub by_combination_size: BTreeMap<usize, GroupScore>,
    pub by_query_kind: BTreeMap<QueryKind, GroupScore>,
    pub verdicts: Vec<Verdict>,
}

fn is_correct(truth: &Answer, parsed: ParsedAnswer, tolerance: f64) -> bool {
    match (truth, parsed) {
        (Answer::Probability { value }, ParsedAnswer::Numeric(x)) => {
            (x - value.value()).abs() <= tolerance + REPRESENTATION_SLACK
        }
        (Answer::Boolean { value, .. }, ParsedAnswer::Boolean(b)) => *value == b,
        (
            Answer::Boolean {
                value, threshold, ..
            },
            ParsedAnswer::Numeric(x),
        ) => *value == (x > *threshold),
        _ => false,
    }
}

/// Scores one response per instance. `variant` says which text the
/// responses answered, which decides the noise grouping.
pub fn score_answers(
    instances: &[Instance],
    responses: &BTreeMap<String, String>,
    tolerance: f64,
    variant: Variant,
) -> Result<ScoreReport, EvalError> {
    let missing: Vec<String> = instances
        .iter()
        .filter(|i| !responses.contains_key(&i.id))
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingResponse(missing));
    }
    let mut report = ScoreReport {
        variant,
        tolerance,
        overall: GroupScore::default(),
        by_noise_kind: BTreeMap::new(),
        without_noise: GroupScore::default(),
        by_combination_size: BTreeMap::new(),
        by_query_kind: BTreeMap::new(),
        verdicts: Vec::with_capacity(instances.len()),
    };
    for inst in instances {
        let parsed = parse_model_answer(&responses[&inst.id]);
        let correct = is_correct(&inst.answer, parsed, tolerance);
        let kinds: Vec<NoiseKind> = match variant {
            Variant::Clean => Vec::new(),
            Variant::Noisy => inst
                .noise_records
                .iter()
                .map(|r| r.kind)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        report.overall.add(correct);
        if kinds.is_empty() {
            report.without_noise.add(correct);
        }
        for &k in &kinds {
            report.by_noise_kind.entry(k).or_default().add(correct);
        }
        report
            .by_combination_size
            .entry(kinds.len())
            .or_default()
            .add(correct);
        report
            .by_query_kind
            .entry(inst.query.kind)
            .or_default()
            .add(correct);
        report.verdicts.push(Verdict {
            id: inst.id.clone(),
            query_kind: inst.query.kind,
            truth: inst.answer,
            parsed,
            correct,
            noise_kinds: kinds,
        });
    }
    Ok(report)
}

fn pct(g: Option<&GroupScore>) -> String {
    match g {
        Some(g) if g.total > 0 => format!("{:.1}", g.accuracy * 100.0),
        _ => "-".into(),
    }
}

/// Column order of the accuracy table.
pub const TABLE_KINDS: [NoiseKind; 7] = [
    NoiseKind::VP,
    NoiseKind::IV,
    NoiseKind::CS,
    NoiseKind::PM,
    NoiseKind::CI,
    NoiseKind::QP,
    NoiseKind::BIP,
];

impl ScoreReport {
    /// Accuracy (%) by noise kind, then by combination size.
    pub fn to_table(&self, method: &str) -> String {
        let mut out = String::new();
        let mut header = vec!["Method".to_string(), "W/O Noise".into()];
        header.extend(TABLE_KINDS.iter().map(|k| k.code().to_string()));
        header.push("Overall".into());
        let mut row = vec![method.to_string(), pct(Some(&self.without_noise))];
        row.extend(TABLE_KINDS.iter().map(|k| pct(self.by_noise_kind.get(k))));
        row.push(pct(Some(&self.overall)));
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        let _ = writeln!(out, "| {} |", row.join(" | "));
        out.push('\n');
        let _ = writeln!(out, "| Noise types | Instances | Accuracy |");
        let _ = writeln!(out, "|---|---|---|");
        for (size, g) in &self.by_combination_size {
            let _ = writeln!(out, "| {size} | {} | {} |", g.total, pct(Some(g)));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Graph sensitivity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub kind: PerturbKind,
    pub count: usize,
    pub evaluated: usize,
    pub skipped: Vec<SkippedInstance>,
    pub accuracy: f64,
    /// Every perturbed graph passed the acyclicity check.
    pub all_acyclic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub backend: String,
    pub baseline: GroupScore,
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Graph | Errors | Evaluated | Skipped | Accuracy |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        let _ = writeln!(
            out,
            "| oracle graph | 0 | {} | 0 | {} |",
            self.baseline.total,
            pct(Some(&self.baseline))
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.1} |",
                r.kind.code(),
                r.count,
                r.evaluated,
                r.skipped.len(),
                r.accuracy * 100.0
            );
        }
        out
    }
}

/// A perturbed graph for one instance, or why there is none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedPrompt {
    pub id: String,
    pub prompt: Option<String>,
    pub records: Vec<PerturbRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

fn perturb_seed(seed: u64, kind: PerturbKind, count: usize, index: usize) -> u64 {
    let tag = ((kind as u64) << 56) ^ ((count as u64) << 32) ^ index as u64;
    seed::mix(seed ^ seed::mix(tag))
}

/// Perturbs each instance's graph and rebuilds its structured prompt.
pub fn perturbed_prompts(
    instances: &[Instance],
    kind: PerturbKind,
    count: usize,
    seed: u64,
    variant: Variant,
    exec: Execution,
) -> Vec<PerturbedPrompt> {
    par::map_indices(instances.len(), exec, |i| {
        let inst = &instances[i];
        match dag::perturb_graph(
            inst.scm.graph(),
            kind,
            count,
            perturb_seed(seed, kind, count, i),
        ) {
            Ok((graph, records)) => PerturbedPrompt {
                id: inst.id.clone(),
                prompt: Some(build_structured_prompt(
                    inst,
                    &graph,
                    inst.scm.metas(),
                    variant,
                )),
                records,
                skipped: None,
            },
            Err(e) => PerturbedPrompt {
                id: inst.id.clone(),
                prompt: None,
                records: Vec::new(),
                skipped: Some(e.to_string()),
            },
        }
    })
}

/// Accuracy under graph errors of each (kind, count), plus the clean-graph
/// baseline. Instances whose graph cannot take a perturbation are skipped
/// and listed.
pub fn run_sensitivity_suite(
    instances: &[Instance],
    kinds: &[PerturbKind],
    counts: &[usize],
    backend: &dyn ModelBackend,
    seed: u64,
    exec: Execution,
) -> Result<SensitivityReport, EvalError> {
    let variant = Variant::Clean;
    let baseline_responses =
        collect_responses(backend, &structured_prompts(instances, variant), exec)?;
    let baseline =
        score_answers(instances, &baseline_responses, DEFAULT_TOLERANCE, variant)?.overall;
    let mut rows = Vec::new();
    for &kind in kinds {
        for &count in counts {
            let perturbed = perturbed_prompts(instances, kind, count, seed, variant, exec);
            let mut skipped = Vec::new();
            let mut prompts = Vec::new();
            let mut kept = Vec::new();
            let mut all_acyclic = true;
            for (inst, p) in instances.iter().zip(perturbed) {
                match p.prompt {
                    Some(prompt) => {
                        let graph = prompt_graph(&prompt, inst.scm.metas())?;
                        let dag = Dag::from_edges_unchecked(inst.scm.node_count(), graph.edges);
                        all_acyclic &= dag.is_acyclic();
                        prompts.push((p.id, prompt));
                        kept.push(inst.clone());
                    }
                    None => skipped.push(SkippedInstance {
                        id: p.id,
                        reason: p.skipped.unwrap_or_default(),
                    }),
                }
            }
            let responses = collect_responses(backend, &prompts, exec)?;
            let report = score_answers(&kept, &responses, DEFAULT_TOLERANCE, variant)?;
            rows.push(SensitivityRow {
                kind,
                count,
                evaluated: kept.len(),
                skipped,
                accuracy: report.overall.accuracy,
                all_acyclic,
            });
        }
    }
    Ok(SensitivityReport {
        backend: backend.name().to_string(),
        baseline,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Structure discovery

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    /// Always "micro": totals are summed before dividing.
    pub averaging: String,
    pub micro: EdgeMetrics,
    pub per_instance: BTreeMap<String, EdgeMetrics>,
}

impl StructureReport {
    pub fn to_table(&self, method: &str) -> String {
        format!(
            "| Method | Precision | Recall | F1 |\n|---|---|---|---|\n| {method} | {:.3} | {:.3} | {:.3} |\n",
            self.micro.precision, self.micro.recall, self.micro.f1
        )
    }
}

/// Edge-level scores of predicted graphs, micro-averaged over instances.
pub fn score_structure_discovery(
    predicted: &BTreeMap<String, BTreeSet<Edge>>,
    instances: &[Instance],
) -> Result<StructureReport, EvalError> {
    let missing: Vec<String> = instances
        .iter()
        .filter(|i| !predicted.contains_key(&i.id))
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingPrediction(missing));
    }
    let mut per_instance = BTreeMap::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for inst in instances {
        let m = dag::edge_metrics(predicted[&inst.id].iter().copied(), inst.scm.graph())?;
        tp += m.true_positives;
        fp += m.false_positives;
        fn_ += m.false_negatives;
        per_instance.insert(inst.id.clone(), m);
    }
    Ok(StructureReport {
        averaging: "micro".into(),
        micro: EdgeMetrics::from_counts(tp, fp, fn_),
        per_instance,
    })
}

/// One line of a predicted-graph file: the model's raw `A -> B` output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphPrediction {
    pub id: String,
    pub graph: String,
}

/// Parses predictions against each instance's variables; an unparseable
/// prediction becomes the empty edge set.
pub fn parse_predictions(
    predictions: &[GraphPrediction],
    instances: &[Instance],
) -> BTreeMap<String, BTreeSet<Edge>> {
    let metas: HashMap<&str, &[VariableMeta]> = instances
        .iter()
        .map(|i| (i.id.as_str(), i.scm.metas()))
        .collect();
    predictions
        .iter()
        .filter_map(|p| {
            let m = metas.get(p.id.as_str())?;
            let edges = parse_graph_response(&p.graph, m)
                .map(|g| g.edges)
                .unwrap_or_default();
            Some((p.id.clone(), edges))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::disease_instance;

    #[test]
    fn structured_prompt_has_three_blocks() {
        let inst = disease_instance();
        let p = build_structured_prompt(&inst, inst.scm.graph(), inst.scm.metas(), Variant::Clean);
        assert!(p.contains("[Causal Graph]\nInfection -> Medicine\nMedicine -> Recovery\n"));
        assert!(p.contains("[Observed Variables]"));
        assert!(p.contains("[Numbers]\n"));
        assert!(p.contains("10% people get infected"));
        assert!(p.ends_with("Question: What's the ratio of people that are still infected?\n"));
        assert_eq!(
            p,
            build_structured_prompt(&inst, inst.scm.graph(), inst.scm.metas(), Variant::Clean)
        );
    }

    #[test]
    fn graph_parsing() {
        let metas = disease_instance().scm.metas().to_vec();
        let g =
            parse_graph_response("Infection -> Medicine\nMedicine -> Recovery", &metas).unwrap();
        assert_eq!(g.edges.len(), 2);
        let g = parse_graph_response(
            "  infection->MEDICINE \nTea -> Recovery\nInfection -> Medicine",
            &metas,
        )
        .unwrap();
        assert_eq!((g.edges.len(), g.skipped), (1, 1));
        assert!(matches!(
            parse_graph_response("no arrows here", &metas),
            Err(EvalError::EmptyParse)
        ));
    }

    #[test]
    fn answer_parsing() {
        assert_eq!(
            parse_model_answer("The answer is 2.5%."),
            ParsedAnswer::Numeric(0.025)
        );
        assert_eq!(
            parse_model_answer("25 out of 1000"),
            ParsedAnswer::Numeric(0.025)
        );
        assert_eq!(parse_model_answer("0.025"), ParsedAnswer::Numeric(0.025));
        assert_eq!(
            parse_model_answer("Yes, they will recover."),
            ParsedAnswer::Boolean(true)
        );
        assert_eq!(parse_model_answer("no"), ParsedAnswer::Boolean(false));
        assert_eq!(parse_model_answer("It depends."), ParsedAnswer::Unparseable);
        // 3 days is not a probability; 0.4 is.
        assert_eq!(
            parse_model_answer("0.4 after 3 days"),
            ParsedAnswer::Numeric(0.4)
        );
    }

    #[test]
    fn oracle_answers_disease() {
        let inst = disease_instance();
        let oracle = OracleBackend::new([&inst]);
        let prompts = structured_prompts(std::slice::from_ref(&inst), Variant::Clean);
        assert_eq!(oracle.respond(&prompts[0].1, &inst.id).unwrap(), "0.025");
    }

    #[test]
    fn tolerance_rule() {
        let inst = disease_instance();
        let score = |r: &str, tol| {
            let map = BTreeMap::from([(inst.id.clone(), r.to_string())]);
            score_answers(std::slice::from_ref(&inst), &map, tol, Variant::Clean)
                .unwrap()
                .overall
                .accuracy
        };
        assert_eq!(score("0.024", 0.01), 1.0);
        assert_eq!(score("0.05", 0.01), 0.0);
        assert_eq!(score("0.025", 0.0), 1.0);
        assert_eq!(score("I am not sure", 0.01), 0.0);
        assert!(matches!(
            score_answers(std::slice::from_ref(&inst), &BTreeMap::new(), 0.01, Variant::Clean),
            Err(EvalError::MissingResponse(ids)) if ids == vec!["disease".to_string()]
        ));
    }

    #[test]
    fn projection_onto_true_graph_is_identity() {
        let scm = crate::fixtures::disease_scm();
        let p = project_onto(&scm, scm.graph()).unwrap();
        let q = crate::fixtures::still_infected_query();
        let a = inference::query_value(&scm, &q).unwrap();
        let b = inference::query_value(&p, &q).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
