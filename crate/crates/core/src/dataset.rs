//! Instance assembly, generation campaigns, and the JSONL record format.
//!
//! Instance `i` of a campaign with master seed `m` draws everything from
//! `seed::instance_seed(m, i)`, split into per-stage streams, so instances
//! can be produced by any number of workers and still come out identical.
//! Records are written in index order, one JSON object per line; a sidecar
//! manifest holds the SHA-256 of the file and the generating config.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dag::{sample_dag, Motif, NodeId};
use crate::inference::{answer_query, Answer, AnswerForm, Event, Query, QueryKind};
use crate::noise::{
    compose_noise, NoiseConfig, NoiseKind, NoiseRecord, NoiseSkip, RenderableInstance,
};
use crate::par::{map_indices, Execution};
use crate::scm::{
    sample_mechanisms, Assignment, MechanismConfig, Observability, Scm, VariableMeta,
};
use crate::seed::{self, Stage};
use crate::textgen::{self, ScenarioDomain, Statement, TEMPLATE_VARIANTS};

pub const FORMAT_VERSION: u32 = 1;

/// Instances generated and written per batch by [`write_dataset`].
const BATCH: usize = 1024;

const MIX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("instance {index}: {stage} stage failed: {message}")]
    Stage {
        index: u64,
        stage: &'static str,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: format version {found}, expected {expected}")]
    SchemaVersionMismatch {
        line: usize,
        found: u64,
        expected: u32,
    },
}

fn stage_err(index: u64, stage: &'static str, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Stage {
        index,
        stage,
        message: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parameters of a generation campaign. Mixes are weights that must sum
/// to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub seed: u64,
    pub count: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub motifs: BTreeMap<Motif, f64>,
    pub scenarios: BTreeMap<ScenarioDomain, f64>,
    pub questions: BTreeMap<QueryKind, f64>,
    /// Share of questions asked in yes/no form.
    pub yes_no_fraction: f64,
    pub yes_no_threshold: f64,
    pub mechanisms: MechanismConfig,
    pub noise: NoiseConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn uniform<K: Ord + Copy>(keys: &[K]) -> BTreeMap<K, f64> {
    keys.iter().map(|&k| (k, 1.0 / keys.len() as f64)).collect()
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            seed: 0,
            count: 100,
            min_nodes: 3,
            max_nodes: 7,
            motifs: uniform(&Motif::ALL),
            scenarios: uniform(&ScenarioDomain::ALL),
            questions: uniform(&QueryKind::ALL),
            yes_no_fraction: 0.2,
            yes_no_threshold: 0.5,
            mechanisms: MechanismConfig::default(),
            noise: NoiseConfig::default(),
            output: None,
        }
    }
}

fn check_mix<K: std::fmt::Debug>(name: &str, mix: &BTreeMap<K, f64>) -> Result<(), DatasetError> {
    if mix.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(DatasetError::Config(format!(
            "{name} mix has a negative weight"
        )));
    }
    let total: f64 = mix.values().sum();
    if (total - 1.0).abs() > MIX_TOLERANCE {
        return Err(DatasetError::Config(format!(
            "{name} mix sums to {total}, not 1"
        )));
    }
    Ok(())
}

fn draw<K: Copy>(rng: &mut seed::Rng, mix: &BTreeMap<K, f64>) -> K {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (&k, &w) in mix {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(k);
        if u < acc {
            return k;
        }
    }
    last.expect("mix was checked")
}

impl GenerationConfig {
    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let cfg: GenerationConfig =
            toml::from_str(text).map_err(|e| DatasetError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        if self.count == 0 {
            return Err(DatasetError::Config("count must be positive".into()));
        }
        if self.min_nodes < 3 || self.max_nodes > 7 || self.min_nodes > self.max_nodes {
            return Err(DatasetError::Config(format!(
                "node range {}..={} must lie within 3..=7",
                self.min_nodes, self.max_nodes
            )));
        }
        check_mix("motif", &self.motifs)?;
        check_mix("scenario", &self.scenarios)?;
        check_mix("question", &self.questions)?;
        if !(0.0..=1.0).contains(&self.yes_no_fraction)
            || !(0.0..1.0).contains(&self.yes_no_threshold)
        {
            return Err(DatasetError::Config(
                "yes/no fraction and threshold must lie in [0, 1)".into(),
            ));
        }
        self.mechanisms
            .check()
            .map_err(|e| DatasetError::Config(e.to_string()))?;
        self.noise
            .check()
            .map_err(|e| DatasetError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Where an instance came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub index: u64,
    pub master_seed: u64,
    pub instance_seed: u64,
    pub node_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motif: Option<Motif>,
    pub scenario: String,
    pub template_variant: usize,
    /// Kinds drawn for this instance, including skipped ones.
    pub noise_kinds: Vec<NoiseKind>,
    #[serde(default)]
    pub noise_skips: Vec<NoiseSkip>,
    /// Variables introduced by noise, present only in the noisy text.
    #[serde(default)]
    pub noise_variables: Vec<VariableMeta>,
}

/// One benchmark record holding the clean and noisy variants side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    #[serde(flatten)]
    pub scm: Scm,
    pub background_clean: Vec<Statement>,
    pub background_noisy: Vec<Statement>,
    pub question_clean: String,
    pub question_noisy: String,
    pub observations_clean: Assignment,
    pub observations_noisy: Assignment,
    pub query: Query,
    pub answer: Answer,
    pub noise_records: Vec<NoiseRecord>,
    pub metadata: Metadata,
    pub format_version: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Clean,
    Noisy,
}

impl Instance {
    /// A clean instance for a given model and query.
    pub fn assemble(
        id: impl Into<String>,
        scm: Scm,
        query: Query,
        variant: usize,
        metadata: Metadata,
    ) -> Result<Instance, DatasetError> {
        let index = metadata.index;
        let answer = answer_query(&scm, &query).map_err(|e| stage_err(index, "answer", e))?;
        let background =
            textgen::render_background(&scm, variant).map_err(|e| stage_err(index, "render", e))?;
        let question = textgen::render_question(&query, scm.metas(), variant)
            .map_err(|e| stage_err(index, "render", e))?;
        let observations = observed_evidence(&scm, &query.evidence);
        Ok(Instance {
            id: id.into(),
            scm,
            background_noisy: background.clone(),
            background_clean: background,
            question_noisy: question.clone(),
            question_clean: question,
            observations_noisy: observations.clone(),
            observations_clean: observations,
            query,
            answer,
            noise_records: Vec::new(),
            metadata,
            format_version: FORMAT_VERSION,
        })
    }

    pub fn view(&self, variant: Variant) -> RenderableInstance {
        match variant {
            Variant::Clean => RenderableInstance {
                statements: self.background_clean.clone(),
                observations: self.observations_clean.clone(),
                question: self.question_clean.clone(),
                clean_answer: self.answer,
                extra_variables: Vec::new(),
            },
            Variant::Noisy => RenderableInstance {
                statements: self.background_noisy.clone(),
                observations: self.observations_noisy.clone(),
                question: self.question_noisy.clone(),
                clean_answer: self.answer,
                extra_variables: self.metadata.noise_variables.clone(),
            },
        }
    }

    /// Replaces the noisy variant with `noisy` and its provenance.
    pub fn set_noisy(&mut self, noisy: RenderableInstance, records: Vec<NoiseRecord>) {
        debug_assert_eq!(noisy.clean_answer, self.answer);
        self.background_noisy = noisy.statements;
        self.observations_noisy = noisy.observations;
        self.question_noisy = noisy.question;
        self.metadata.noise_variables = noisy.extra_variables;
        self.noise_records = records;
    }

    /// Number of distinct noise kinds applied.
    pub fn combination_size(&self) -> usize {
        self.noise_records
            .iter()
            .map(|r| r.kind)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Evidence values on observed variables.
pub fn observed_evidence(scm: &Scm, evidence: &Event) -> Assignment {
    evidence
        .as_assignment()
        .iter()
        .filter(|&(n, _)| scm.meta(n).observability == Observability::Observed)
        .collect()
}

pub fn instance_id(master: u64, index: u64) -> String {
    format!("s{master}-{index:06}")
}

/// A random query of `kind`, or `None` when the graph cannot host it.
fn build_query(scm: &Scm, kind: QueryKind, rng: &mut seed::Rng) -> Option<Query> {
    let g = scm.graph();
    let value = |rng: &mut seed::Rng, n: NodeId| rng.gen_range(0..scm.cardinality(n));
    let sinks: Vec<NodeId> = g.nodes().filter(|&n| g.is_sink(n)).collect();
    let target = *sinks.choose(rng)?;
    let ancestors: Vec<NodeId> = g
        .nodes()
        .filter(|&a| a != target && g.has_path(a, target))
        .collect();
    match kind {
        QueryKind::Observational => {
            let t = Event::from_pairs([(target, value(rng, target))]);
            let evidence = if rng.gen_bool(0.5) {
                let others: Vec<NodeId> = g.nodes().filter(|&n| n != target).collect();
                let e = *others.choose(rng)?;
                Event::from_pairs([(e, value(rng, e))])
            } else {
                Event::empty()
            };
            Some(Query::observational(t, evidence))
        }
        QueryKind::Interventional => {
            let x = *ancestors.choose(rng)?;
            let t = Event::from_pairs([(target, value(rng, target))]);
            let action: Assignment = [(x, value(rng, x))].into_iter().collect();
            let evidence = if rng.gen_bool(0.3) {
                let others: Vec<NodeId> = g.nodes().filter(|&n| n != target && n != x).collect();
                match others.choose(rng) {
                    Some(&e) => Event::from_pairs([(e, value(rng, e))]),
                    None => Event::empty(),
                }
            } else {
                Event::empty()
            };
            Some(Query::interventional(t, action, evidence))
        }
        QueryKind::Counterfactual => {
            let x = *ancestors.choose(rng)?;
            let xf = value(rng, x);
            let xc = (xf + rng.gen_range(1..scm.cardinality(x))) % scm.cardinality(x);
            let evidence = Event::from_pairs([(x, xf), (target, value(rng, target))]);
            let t = Event::from_pairs([(target, value(rng, target))]);
            Some(Query::counterfactual(
                t,
                [(x, xc)].into_iter().collect(),
                evidence,
            ))
        }
        QueryKind::Attributional => {
            let binary = |n: NodeId| scm.meta(n).domain.is_binary();
            let mut pairs = Vec::new();
            for y in g.nodes().filter(|&y| binary(y)) {
                for x in g
                    .nodes()
                    .filter(|&x| x != y && binary(x) && g.has_path(x, y))
                {
                    pairs.push((x, y));
                }
            }
            let &(x, y) = pairs.choose(rng)?;
            Some(Query::attributional(x, y))
        }
    }
}

/// Runs every stage for instance `index` of the campaign.
pub fn generate_instance(config: &GenerationConfig, index: u64) -> Result<Instance, DatasetError> {
    let seed = seed::instance_seed(config.seed, index);
    let mut layout = seed::rng(seed::stage_seed(seed, Stage::Layout));
    let node_count = layout.gen_range(config.min_nodes..=config.max_nodes);
    let motif = draw(&mut layout, &config.motifs);
    let scenario = draw(&mut layout, &config.scenarios);
    let mut kind = draw(&mut layout, &config.questions);
    let variant = layout.gen_range(0..TEMPLATE_VARIANTS);
    let yes_no = layout.gen::<f64>() < config.yes_no_fraction;

    let dag = sample_dag(seed::stage_seed(seed, Stage::Graph), node_count, motif)
        .map_err(|e| stage_err(index, "graph", e))?;
    let metas = textgen::ground_graph(&dag, scenario, seed::stage_seed(seed, Stage::Grounding))
        .map_err(|e| stage_err(index, "grounding", e))?;
    let scm = sample_mechanisms(
        &dag,
        &metas,
        seed::stage_seed(seed, Stage::Mechanisms),
        &config.mechanisms,
    )
    .map_err(|e| stage_err(index, "mechanisms", e))?;

    let mut qrng = seed::rng(seed::stage_seed(seed, Stage::Query));
    let mut query = build_query(&scm, kind, &mut qrng);
    if query.is_none() && kind == QueryKind::Attributional {
        // No binary cause-outcome pair: ask a counterfactual instead.
        kind = QueryKind::Counterfactual;
        query = build_query(&scm, kind, &mut qrng);
    }
    let mut query = query.ok_or_else(|| {
        stage_err(
            index,
            "query",
            format!("graph cannot host a {} query", kind.name()),
        )
    })?;
    if yes_no {
        query.form = AnswerForm::YesNo {
            threshold: config.yes_no_threshold,
        };
    }

    let metadata = Metadata {
        index,
        master_seed: config.seed,
        instance_seed: seed,
        node_count,
        motif: Some(motif),
        scenario: scenario.name().to_string(),
        template_variant: variant,
        noise_kinds: Vec::new(),
        noise_skips: Vec::new(),
        noise_variables: Vec::new(),
    };
    let mut inst = Instance::assemble(
        instance_id(config.seed, index),
        scm,
        query,
        variant,
        metadata,
    )?;

    let noise_seed = seed::stage_seed(seed, Stage::Noise);
    let kinds = config.noise.choose_kinds(noise_seed);
    if !kinds.is_empty() {
        let (noisy, records, skips) = compose_noise(
            &inst.view(Variant::Clean),
            &inst.scm,
            &kinds,
            seed::mix(noise_seed),
            &config.noise,
        );
        inst.metadata.noise_kinds = kinds.into_iter().collect();
        inst.metadata.noise_skips = skips;
        inst.set_noisy(noisy, records);
    }
    Ok(inst)
}

/// Generates instances `range` of the campaign, in index order.
pub fn generate_range(
    config: &GenerationConfig,
    range: std::ops::Range<u64>,
    exec: Execution,
) -> Result<Vec<Instance>, DatasetError> {
    let start = range.start;
    let len = (range.end - range.start) as usize;
    map_indices(len, exec, |i| generate_instance(config, start + i as u64))
        .into_iter()
        .collect()
}

/// The whole campaign in memory.
pub fn generate_dataset(
    config: &GenerationConfig,
    exec: Execution,
) -> Result<Vec<Instance>, DatasetError> {
    config.check()?;
    generate_range(config, 0..config.count as u64, exec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub count: usize,
    /// `sha256:` followed by the hex digest of the record file.
    pub digest: String,
    pub config: GenerationConfig,
}

/// `data.jsonl` → `data.jsonl.manifest.json`.
pub fn manifest_path(records: &Path) -> PathBuf {
    let mut name = records.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    records.with_file_name(name)
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_line<W: Write>(w: &mut W, inst: &Instance) -> io::Result<()> {
    serde_json::to_writer(&mut *w, inst)?;
    w.write_all(b"\n")
}

/// Writes one record per line and returns the `sha256:` digest.
pub fn write_records(instances: &[Instance], path: &Path) -> Result<String, DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = HashingWriter {
        inner: BufWriter::new(file),
        hasher: Sha256::new(),
    };
    for inst in instances {
        write_line(&mut w, inst).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(format!("sha256:{}", hex(&w.hasher.finalize())))
}

/// Generates the campaign batch by batch, writing records in index order,
/// then writes the manifest next to them.
pub fn write_dataset(
    config: &GenerationConfig,
    path: &Path,
    exec: Execution,
) -> Result<DatasetManifest, DatasetError> {
    config.check()?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = HashingWriter {
        inner: BufWriter::new(file),
        hasher: Sha256::new(),
    };
    let total = config.count as u64;
    let mut start = 0;
    while start < total {
        let end = (start + BATCH as u64).min(total);
        for inst in generate_range(config, start..end, exec)? {
            write_line(&mut w, &inst).map_err(io_err(path))?;
        }
        start = end;
    }
    w.flush().map_err(io_err(path))?;
    let mut echo = config.clone();
    echo.output = None;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        count: config.count,
        digest: format!("sha256:{}", hex(&w.hasher.finalize())),
        config: echo,
    };
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&mpath, text).map_err(io_err(&mpath))?;
    Ok(manifest)
}

/// `sha256:` digest of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, DatasetError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(format!("sha256:{}", hex(&Sha256::digest(&bytes))))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Parses one record line; `line` is 1-based, for error messages.
pub fn parse_record(text: &str, line: usize) -> Result<Instance, DatasetError> {
    let parse = |e: serde_json::Error| DatasetError::Parse {
        line,
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse)?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| DatasetError::Parse {
            line,
            message: "missing format_version".into(),
        })?;
    if found != FORMAT_VERSION as u64 {
        return Err(DatasetError::SchemaVersionMismatch {
            line,
            found,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(parse)
}

/// Reads every record; blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<Instance>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_text = line.map_err(io_err(path))?;
        if line_text.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line_text, i + 1)?);
    }
    Ok(out)
}

/// The disease model asked "what share is still infected", with no noise.
pub fn disease_instance() -> Instance {
    let scm = crate::fixtures::disease_scm();
    let metadata = Metadata {
        index: 0,
        master_seed: 0,
        instance_seed: 0,
        node_count: scm.node_count(),
        motif: Some(Motif::Chain),
        scenario: "medicine".into(),
        template_variant: 0,
        noise_kinds: Vec::new(),
        noise_skips: Vec::new(),
        noise_variables: Vec::new(),
    };
    Instance::assemble(
        "disease",
        scm,
        crate::fixtures::still_infected_query(),
        0,
        metadata,
    )
    .expect("disease fixture renders")
}
