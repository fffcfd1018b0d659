//! `causalbench`: generate datasets, answer queries exactly, and score
//! answerers.
//!
//! Exit status is 0 on success, 1 when validation or an assertion fails,
//! and 2 on a usage error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use causalbench::dataset::{self, GenerationConfig, Variant};
use causalbench::eval::{self, GraphPrediction, OracleBackend, ReplayBackend};
use causalbench::fixtures;
use causalbench::inference::{self, Query};
use causalbench::noise::{NoiseConfig, NoiseKind};
use causalbench::par::Execution;
use causalbench::PerturbKind;

#[derive(Parser)]
#[command(
    name = "causalbench",
    version,
    about = "Noisy causal-reasoning benchmark toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and its manifest from a config file.
    Generate(GenerateArgs),
    /// Answer a query on a model file exactly.
    Infer(InferArgs),
    /// Perturb each instance's graph and write the structured prompts.
    Perturb(PerturbArgs),
    /// Score a response file against a dataset.
    Score(ScoreArgs),
    /// Score predicted graphs against a dataset.
    DiscoverScore(DiscoverArgs),
    /// Run the oracle end to end and require perfect clean accuracy.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct Workers {
    /// Worker threads; 1 runs sequentially. Defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

impl Workers {
    fn execution(&self) -> Execution {
        Execution::with_workers(self.workers)
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML generation config.
    #[arg(long, env = "CAUSALBENCH_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
    /// Record file; the manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Apply exactly these noise kinds, e.g. `VP,IV`; `none` disables noise.
    #[arg(long)]
    noise: Option<String>,
    /// Also write structured prompts (clean and noisy) to this file.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args)]
struct InferArgs {
    /// Model file with named queries.
    model: PathBuf,
    /// Name of a query stored in the model file.
    #[arg(
        long,
        conflicts_with = "query_json",
        required_unless_present = "query_json"
    )]
    query: Option<String>,
    /// A query given inline as JSON.
    #[arg(long)]
    query_json: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Clean,
    Noisy,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Clean => Variant::Clean,
            VariantArg::Noisy => Variant::Noisy,
        }
    }
}

#[derive(Args)]
struct PerturbArgs {
    dataset: PathBuf,
    /// ED, FE or DR.
    #[arg(long, value_parser = parse_perturb_kind)]
    perturb_kind: PerturbKind,
    #[arg(long, default_value_t = 1)]
    perturb_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "clean")]
    variant: VariantArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args)]
struct ScoreArgs {
    dataset: PathBuf,
    /// Line-delimited `{"id", "response"}` records.
    #[arg(long)]
    responses: PathBuf,
    #[arg(long, default_value_t = eval::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Which text the responses answered.
    #[arg(long, value_enum, default_value = "noisy")]
    variant: VariantArg,
    /// Directory for `score.json` and `score.md`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiscoverArgs {
    dataset: PathBuf,
    /// Line-delimited `{"id", "graph"}` records with `A -> B` lines.
    #[arg(long)]
    predictions: PathBuf,
    /// Directory for `structure.json` and `structure.md`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    #[command(flatten)]
    workers: Workers,
}

fn parse_perturb_kind(s: &str) -> Result<PerturbKind, String> {
    s.parse()
}

/// A failure reported on stderr with exit status 1.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Infer(a) => infer(a),
        Command::Perturb(a) => perturb(a),
        Command::Score(a) => score(a),
        Command::DiscoverScore(a) => discover_score(a),
        Command::OracleCheck(a) => oracle_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn noise_for(spec: &str) -> Result<NoiseConfig, Failure> {
    let mut cfg = NoiseConfig::disabled();
    if spec.trim().eq_ignore_ascii_case("none") {
        return Ok(cfg);
    }
    for code in spec.split(',').filter(|s| !s.trim().is_empty()) {
        let kind: NoiseKind = code.parse().map_err(Failure)?;
        cfg.probabilities.insert(kind, 1.0);
    }
    Ok(cfg)
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(path) => GenerationConfig::from_toml(&read_text(path)?)?,
        None => GenerationConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(count) = a.count {
        cfg.count = count;
    }
    if let Some(spec) = &a.noise {
        let base = noise_for(spec)?;
        cfg.noise = NoiseConfig {
            probabilities: base.probabilities,
            combination_sizes: None,
            ..cfg.noise
        };
    }
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| {
            Failure("no output path: pass --out or set `output` in the config".into())
        })?;
    let exec = a.workers.execution();
    let manifest = dataset::write_dataset(&cfg, &out, exec)?;
    if let Some(path) = &a.prompts {
        let instances = dataset::read_records(&out)?;
        let mut text = String::new();
        for variant in [Variant::Clean, Variant::Noisy] {
            for (id, prompt) in eval::structured_prompts(&instances, variant) {
                let line = serde_json::json!({ "id": id, "variant": variant, "prompt": prompt });
                text.push_str(&line.to_string());
                text.push('\n');
            }
        }
        write_text(path, &text)?;
    }
    println!(
        "wrote {} instances to {} ({})",
        manifest.count,
        out.display(),
        manifest.digest
    );
    Ok(())
}

fn infer(a: InferArgs) -> Result<(), Failure> {
    let model = fixtures::load_model_file(&read_text(&a.model)?)
        .map_err(|e| Failure(format!("{}: {e}", a.model.display())))?;
    let query: Query = match (&a.query, &a.query_json) {
        (Some(name), _) => model.queries.get(name).cloned().ok_or_else(|| {
            let known: Vec<&str> = model.queries.keys().map(String::as_str).collect();
            Failure(format!("no query `{name}`; known: {}", known.join(", ")))
        })?,
        (None, Some(json)) => {
            serde_json::from_str(json).map_err(|e| Failure(format!("--query-json: {e}")))?
        }
        (None, None) => unreachable!("clap requires one of the two"),
    };
    println!("{}", inference::answer_query(&model.scm, &query)?);
    Ok(())
}

fn perturb(a: PerturbArgs) -> Result<(), Failure> {
    let instances = dataset::read_records(&a.dataset)?;
    let prompts = eval::perturbed_prompts(
        &instances,
        a.perturb_kind,
        a.perturb_count,
        a.seed,
        a.variant.into(),
        a.workers.execution(),
    );
    let mut text = String::new();
    let mut skipped = 0;
    for p in &prompts {
        skipped += usize::from(p.prompt.is_none());
        text.push_str(&serde_json::to_string(p)?);
        text.push('\n');
    }
    write_text(&a.out, &text)?;
    println!(
        "wrote {} perturbed prompts to {} ({skipped} skipped)",
        prompts.len() - skipped,
        a.out.display()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<(), Failure> {
    let instances = dataset::read_records(&a.dataset)?;
    let backend = ReplayBackend::from_path(&a.responses)?;
    let variant: Variant = a.variant.into();
    let responses: BTreeMap<String, String> = eval::collect_responses(
        &backend,
        &eval::structured_prompts(&instances, variant),
        Execution::Sequential,
    )?;
    let report = eval::score_answers(&instances, &responses, a.tolerance, variant)?;
    let table = report.to_table("responses");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| Failure(format!("{}: {e}", dir.display())))?;
        write_text(
            &dir.join("score.json"),
            &serde_json::to_string_pretty(&report)?,
        )?;
        write_text(&dir.join("score.md"), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn discover_score(a: DiscoverArgs) -> Result<(), Failure> {
    let instances = dataset::read_records(&a.dataset)?;
    let predictions: Vec<GraphPrediction> = eval::read_jsonl(&a.predictions)?;
    let parsed = eval::parse_predictions(&predictions, &instances);
    let report = eval::score_structure_discovery(&parsed, &instances)?;
    let table = report.to_table("predictions");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| Failure(format!("{}: {e}", dir.display())))?;
        write_text(
            &dir.join("structure.json"),
            &serde_json::to_string_pretty(&report)?,
        )?;
        write_text(&dir.join("structure.md"), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn oracle_check(a: OracleArgs) -> Result<(), Failure> {
    let manifest = dataset::manifest_path(&a.dataset);
    if manifest.exists() {
        let m = dataset::read_manifest(&manifest)?;
        let digest = dataset::file_digest(&a.dataset)?;
        if digest != m.digest {
            return Err(Failure(format!(
                "digest {digest} does not match manifest {}",
                m.digest
            )));
        }
    }
    let instances = dataset::read_records(&a.dataset)?;
    let oracle = OracleBackend::new(&instances);
    let exec = a.workers.execution();
    let mut out = std::io::stdout().lock();
    let mut clean_accuracy = 0.0;
    for variant in [Variant::Clean, Variant::Noisy] {
        let responses = eval::collect_responses(
            &oracle,
            &eval::structured_prompts(&instances, variant),
            exec,
        )?;
        let report = eval::score_answers(&instances, &responses, a.tolerance, variant)?;
        let name = match variant {
            Variant::Clean => "clean",
            Variant::Noisy => "noisy",
        };
        writeln!(
            out,
            "{name}: {}/{} correct (accuracy {})",
            report.overall.correct, report.overall.total, report.overall.accuracy
        )?;
        if variant == Variant::Clean {
            clean_accuracy = report.overall.accuracy;
        }
    }
    if clean_accuracy != 1.0 {
        return Err(Failure(format!(
            "oracle clean accuracy {clean_accuracy}, expected 1.0"
        )));
    }
    writeln!(out, "oracle-check passed")?;
    Ok(())
}
