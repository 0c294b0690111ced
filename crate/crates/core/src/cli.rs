//! Command-line entry point.
//!
//! Settings resolve as flags, then the TOML file given by `--config`, then
//! built-in defaults. Every command writes its artifacts plus a
//! `run_<command>.json` manifest into the output directory.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bounds::{bootstrap_lower_bound, upper_bound, BootstrapReport};
use crate::dataset_ops::{detect_overlap, export_training, split, ExportMode, OVERLAP_THRESHOLD};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate, evaluate, fit_scaling, human_distributions, intergroup_matrix, write_records_csv,
    AggregateBy, GroupDistributions, SkippedPair, SourceKind,
};
use crate::metrics::{uniform, MetricConfig};
use crate::mock::{MockConfig, MockServer};
use crate::model_client::{
    extract_distribution, sha256_hex, ClientConfig, CompletionsEndpoint, EmbeddingEndpoint,
    EmbeddingVector, ModelClient,
};
use crate::prompting::{
    build_fewshot_prompt, build_prompt, parse_verbalized_distribution, select_fewshot,
    FewShotConfig, PromptStyle,
};
use crate::survey::{letter_at, load_dataset, Distribution, Question, Subpopulation, SurveyDataset};
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ZeroShot,
    FewShot,
    Uniform,
    Human,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::ZeroShot => "zero-shot",
            Method::FewShot => "few-shot",
            Method::Uniform => "uniform",
            Method::Human => "human",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub style: PromptStyle,
    pub fewshot_k: usize,
    /// Generation budget for verbalized few-shot answers.
    pub fewshot_max_tokens: u32,
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection {
            style: PromptStyle::Qa,
            fewshot_k: 5,
            fewshot_max_tokens: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection {
            replicates: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub method: Method,
    pub workers: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            method: Method::ZeroShot,
            workers: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub completions_url: Option<String>,
    pub model: String,
    /// Cache namespace; defaults to the completions URL.
    pub tag: Option<String>,
    pub top_logprobs: u32,
    pub embeddings_url: Option<String>,
    pub embedding_model: String,
    /// Environment variable holding the API key, if any.
    pub api_key_env: String,
    /// Serve both endpoints from the built-in deterministic mock.
    pub mock: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            completions_url: None,
            model: "base".into(),
            tag: None,
            top_logprobs: 20,
            embeddings_url: None,
            embedding_model: "embed".into(),
            api_key_env: "OPINION_DIST_API_KEY".into(),
            mock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// `explicit`, `one_hot` or `augment(N)`.
    pub mode: String,
    pub train_fraction: Option<f64>,
    pub split_seed: u64,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            mode: "explicit".into(),
            train_fraction: None,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlapSection {
    pub threshold: f64,
}

impl Default for OverlapSection {
    fn default() -> Self {
        OverlapSection {
            threshold: OVERLAP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// `trait: group` labels; empty selects every subpopulation.
    pub groups: Vec<String>,
    /// Question ids; empty selects every question.
    pub questions: Vec<String>,
    pub metric: MetricConfig,
    pub prompt: PromptSection,
    pub bootstrap: BootstrapSection,
    pub eval: EvalSection,
    pub model: ModelSection,
    pub client: ClientConfig,
    pub export: ExportSection,
    pub overlap: OverlapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            output_dir: PathBuf::from("out"),
            groups: Vec::new(),
            questions: Vec::new(),
            metric: MetricConfig::default(),
            prompt: PromptSection::default(),
            bootstrap: BootstrapSection::default(),
            eval: EvalSection::default(),
            model: ModelSection::default(),
            client: ClientConfig::default(),
            export: ExportSection::default(),
            overlap: OverlapSection::default(),
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .map(|line| format!("line {line}"))
                .unwrap_or_else(|| "<file>".into());
            config_error(&field, e.message().to_string())
        })
    }

    pub fn validate(&self) -> Result<()> {
        let dataset = self
            .dataset
            .as_ref()
            .ok_or_else(|| config_error("dataset", "no dataset path given"))?;
        if !dataset.is_dir() {
            return Err(config_error(
                "dataset",
                format!("{} is not a directory", dataset.display()),
            ));
        }
        self.metric.validate()?;
        if self.prompt.fewshot_k == 0 {
            return Err(config_error("prompt.fewshot_k", "must be at least 1"));
        }
        if self.bootstrap.replicates == 0 {
            return Err(config_error("bootstrap.replicates", "must be at least 1"));
        }
        if self.eval.workers == 0 {
            return Err(config_error("eval.workers", "must be at least 1"));
        }
        if self.client.max_in_flight == 0 {
            return Err(config_error("client.max_in_flight", "must be at least 1"));
        }
        if self.model.top_logprobs == 0 {
            return Err(config_error("model.top_logprobs", "must be at least 1"));
        }
        self.export
            .mode
            .parse::<ExportMode>()
            .map_err(|e| config_error("export.mode", e.to_string()))?;
        if let Some(f) = self.export.train_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(config_error("export.train_fraction", format!("{f} is outside (0, 1]")));
            }
        }
        if !(-1.0..=1.0).contains(&self.overlap.threshold) {
            return Err(config_error("overlap.threshold", "must lie in [-1, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "opinion-dist", version, about = "Score model-predicted survey answer distributions")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long = "out", global = true)]
    pub output_dir: Option<PathBuf>,
    /// Restrict to a subpopulation, as `trait: group`. Repeatable.
    #[arg(long = "group", global = true)]
    pub groups: Vec<String>,
    /// Restrict to a question id. Repeatable.
    #[arg(long = "question", global = true)]
    pub questions: Vec<String>,
    #[arg(long, global = true)]
    pub style: Option<PromptStyle>,
    #[arg(long, global = true)]
    pub normalize_wd: Option<bool>,
    #[arg(long, global = true)]
    pub kl_epsilon: Option<f64>,
    /// Serve model endpoints from the built-in deterministic mock.
    #[arg(long, global = true)]
    pub mock: bool,
    #[arg(long, global = true)]
    pub completions_url: Option<String>,
    #[arg(long, global = true)]
    pub embeddings_url: Option<String>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
pub enum Command {
    /// Validate a dataset and summarize it.
    Ingest,
    /// Weighted answer distributions per group and question.
    Dists,
    /// Uniform upper bound and bootstrap lower bound per group.
    Bounds {
        #[arg(long = "R")]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a predictor against the human distributions.
    Eval {
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Intergroup disagreement matrix.
    Disagree {
        /// Restrict the axis to groups of one trait.
        #[arg(long = "trait")]
        trait_name: Option<String>,
        /// Use zero-shot model predictions as the sources.
        #[arg(long)]
        model_sources: bool,
    },
    /// Write fine-tuning JSONL and its manifest.
    Export {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Near-duplicate questions between this dataset and another.
    Overlap {
        #[arg(long)]
        other: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Log-log fit of WD against training fraction.
    Scaling {
        /// CSV with `fraction,wd` columns.
        #[arg(long)]
        points: Option<PathBuf>,
        /// Inline point `fraction,wd`. Repeatable.
        #[arg(long = "point")]
        point: Vec<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Dists => "dists",
            Command::Bounds { .. } => "bounds",
            Command::Eval { .. } => "eval",
            Command::Disagree { .. } => "disagree",
            Command::Export { .. } => "export",
            Command::Overlap { .. } => "overlap",
            Command::Scaling { .. } => "scaling",
        }
    }
}

/// Merges flags over the optional config file over defaults.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error("config", format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &cli.output_dir {
        cfg.output_dir = o.clone();
    }
    if !cli.groups.is_empty() {
        cfg.groups = cli.groups.clone();
    }
    if !cli.questions.is_empty() {
        cfg.questions = cli.questions.clone();
    }
    if let Some(s) = cli.style {
        cfg.prompt.style = s;
    }
    if let Some(n) = cli.normalize_wd {
        cfg.metric.normalize_wd = n;
    }
    if let Some(e) = cli.kl_epsilon {
        cfg.metric.kl_epsilon = e;
    }
    if cli.mock {
        cfg.model.mock = true;
    }
    if let Some(u) = &cli.completions_url {
        cfg.model.completions_url = Some(u.clone());
    }
    if let Some(u) = &cli.embeddings_url {
        cfg.model.embeddings_url = Some(u.clone());
    }
    if let Some(c) = &cli.cache_dir {
        cfg.client.cache_dir = Some(c.clone());
    }
    match &cli.command {
        Command::Bounds { replicates, seed } => {
            if let Some(r) = replicates {
                cfg.bootstrap.replicates = *r;
            }
            if let Some(s) = seed {
                cfg.bootstrap.seed = *s;
            }
        }
        Command::Eval { method, workers } => {
            if let Some(m) = method {
                cfg.eval.method = *m;
            }
            if let Some(w) = workers {
                cfg.eval.workers = *w;
            }
        }
        Command::Export {
            mode,
            train_fraction,
            split_seed,
        } => {
            if let Some(m) = mode {
                cfg.export.mode = m.clone();
            }
            if train_fraction.is_some() {
                cfg.export.train_fraction = *train_fraction;
            }
            if let Some(s) = split_seed {
                cfg.export.split_seed = *s;
            }
        }
        Command::Overlap {
            threshold: Some(t), ..
        } => cfg.overlap.threshold = *t,
        _ => {}
    }
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a Command,
    config_hash: String,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    started_at: String,
    finished_at: String,
    cache: crate::model_client::CacheStats,
    skipped: Vec<SkippedPair>,
    warnings: Vec<String>,
    outputs: Vec<OutputFile>,
}

/// Endpoints and client for model-backed commands; keeps the mock alive.
struct Backend {
    client: ModelClient,
    completions: Option<CompletionsEndpoint>,
    embeddings: Option<EmbeddingEndpoint>,
    _mock: Option<MockServer>,
}

impl Backend {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let api_key = std::env::var(&cfg.model.api_key_env).ok().filter(|k| !k.is_empty());
        let (mock, completions_url, embeddings_url, tag) = if cfg.model.mock {
            let server = MockServer::start(MockConfig::default())?;
            let c = server.completions_url();
            let e = server.embeddings_url();
            (Some(server), Some(c), Some(e), Some("mock".to_string()))
        } else {
            (
                None,
                cfg.model.completions_url.clone(),
                cfg.model.embeddings_url.clone(),
                cfg.model.tag.clone(),
            )
        };
        let completions = completions_url.map(|url| CompletionsEndpoint {
            url,
            model: cfg.model.model.clone(),
            tag: tag.clone(),
            top_logprobs: cfg.model.top_logprobs,
            api_key: api_key.clone(),
        });
        let embeddings = embeddings_url.map(|url| EmbeddingEndpoint {
            url,
            model: cfg.model.embedding_model.clone(),
            tag: tag.clone(),
            api_key,
        });
        Ok(Backend {
            client: ModelClient::new(cfg.client.clone()),
            completions,
            embeddings,
            _mock: mock,
        })
    }

    fn completions(&self) -> Result<&CompletionsEndpoint> {
        self.completions
            .as_ref()
            .ok_or_else(|| config_error("model.completions_url", "required for this command"))
    }

    fn embeddings(&self) -> Result<&EmbeddingEndpoint> {
        self.embeddings
            .as_ref()
            .ok_or_else(|| config_error("model.embeddings_url", "required for this command"))
    }

    fn embed_all(&self, questions: &[Question]) -> Result<HashMap<String, EmbeddingVector>> {
        let ep = self.embeddings()?;
        questions
            .par_iter()
            .map(|q| Ok((q.id.clone(), self.client.fetch_embedding(ep, &q.id, &q.text)?)))
            .collect()
    }

    fn zero_shot(
        &self,
        group: &Subpopulation,
        question: &Question,
        style: PromptStyle,
    ) -> Result<Distribution> {
        let prompt = build_prompt(group, question, style)?;
        let letters: Vec<char> = question.letters().collect();
        let result = self
            .client
            .fetch_option_logprobs(self.completions()?, &prompt, &letters)?;
        extract_distribution(&result, question)
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    outputs: Vec<OutputFile>,
    skipped: Vec<SkippedPair>,
    warnings: Vec<String>,
    backend: Option<Backend>,
}

impl Run<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(name, bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn backend(&mut self) -> Result<&Backend> {
        if self.backend.is_none() {
            self.backend = Some(Backend::new(self.cfg)?);
        }
        Ok(self.backend.as_ref().expect("just set"))
    }
}

fn select_groups<'d>(ds: &'d SurveyDataset, labels: &[String]) -> Result<Vec<&'d Subpopulation>> {
    if labels.is_empty() {
        return Ok(ds.subpopulations().iter().collect());
    }
    labels
        .iter()
        .map(|label| {
            let (t, g) = label
                .split_once(':')
                .ok_or_else(|| config_error("groups", format!("`{label}` is not `trait: group`")))?;
            ds.subpopulations()
                .iter()
                .find(|s| s.trait_name == t.trim() && s.group == g.trim())
                .ok_or_else(|| config_error("groups", format!("unknown subpopulation `{label}`")))
        })
        .collect()
}

fn select_questions<'d>(ds: &'d SurveyDataset, ids: &[String]) -> Result<Vec<&'d Question>> {
    if ids.is_empty() {
        return Ok(ds.questions().iter().collect());
    }
    ids.iter()
        .map(|id| {
            ds.question(id)
                .map_err(|_| config_error("questions", format!("unknown question `{id}`")))
        })
        .collect()
}

fn file_inputs(dir: &Path) -> BTreeMap<String, String> {
    ["questions.jsonl", "respondents.csv", "responses.csv", "dataset.json"]
        .iter()
        .filter_map(|f| {
            std::fs::read(dir.join(f))
                .ok()
                .map(|b| (f.to_string(), sha256_hex(&b)))
        })
        .collect()
}

/// Parses arguments, runs one command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(warnings) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => 2,
                _ => 1,
            }
        }
    }
}

/// Runs the parsed command; returns warnings on success.
pub fn execute(cli: &Cli) -> Result<Vec<String>> {
    let cfg = resolve_config(cli)?;
    cfg.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let dataset_dir = cfg.dataset.clone().expect("validated");
    let ds = load_dataset(&dataset_dir)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;

    let mut run = Run {
        cfg: &cfg,
        out: cfg.output_dir.clone(),
        outputs: Vec::new(),
        skipped: Vec::new(),
        warnings: Vec::new(),
        backend: None,
    };
    let groups = select_groups(&ds, &cfg.groups)?;
    let questions = select_questions(&ds, &cfg.questions)?;

    match &cli.command {
        Command::Ingest => ingest(&mut run, &ds)?,
        Command::Dists => dists(&mut run, &ds, &groups, &questions)?,
        Command::Bounds { .. } => bounds(&mut run, &ds, &groups, &questions)?,
        Command::Eval { .. } => eval(&mut run, &ds, &groups, &questions)?,
        Command::Disagree {
            trait_name,
            model_sources,
        } => {
            let groups: Vec<&Subpopulation> = groups
                .into_iter()
                .filter(|g| trait_name.as_ref().is_none_or(|t| &g.trait_name == t))
                .collect();
            disagree(&mut run, &ds, &groups, &questions, *model_sources)?
        }
        Command::Export { .. } => export(&mut run, &ds, &groups, &questions)?,
        Command::Overlap { other, .. } => overlap(&mut run, &questions, other)?,
        Command::Scaling { points, point } => scaling(&mut run, points.as_deref(), point)?,
    }

    let mut inputs = file_inputs(&dataset_dir);
    if let Command::Overlap { other, .. } = &cli.command {
        for (k, v) in file_inputs(other) {
            inputs.insert(format!("other/{k}"), v);
        }
    }
    let hashed = json!({ "command": &cli.command, "config": &cfg });
    let manifest = RunManifest {
        command: &cli.command,
        config_hash: sha256_hex(serde_json::to_string(&hashed)?.as_bytes()),
        config: &cfg,
        inputs,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        cache: run
            .backend
            .as_ref()
            .map(|b| b.client.stats())
            .unwrap_or_default(),
        skipped: std::mem::take(&mut run.skipped),
        warnings: run.warnings.clone(),
        outputs: std::mem::take(&mut run.outputs),
    };
    let path = run.out.join(format!("run_{}.json", cli.command.name()));
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(run.warnings)
}

fn ingest(run: &mut Run<'_>, ds: &SurveyDataset) -> Result<()> {
    let groups: Vec<_> = ds
        .subpopulations()
        .iter()
        .map(|g| {
            let members = ds.members(g)?;
            let weight: f64 = members
                .iter()
                .filter_map(|id| ds.respondent(id))
                .map(|r| r.weight)
                .sum();
            Ok(json!({ "group": g.label(), "members": members.len(), "total_weight": weight }))
        })
        .collect::<Result<_>>()?;
    let summary = json!({
        "source_family": ds.source_family(),
        "questions": ds.questions().len(),
        "respondents": ds.respondents().len(),
        "responses": ds.responses().len(),
        "waves": ds.waves(),
        "subpopulations": groups,
    });
    run.write_json("ingest_summary.json", &summary)
}

fn dists(
    run: &mut Run<'_>,
    ds: &SurveyDataset,
    groups: &[&Subpopulation],
    questions: &[&Question],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "question_id", "wave", "option", "probability"])?;
    for g in groups {
        for q in questions {
            match ds.weighted_distribution(g, q) {
                Ok(d) => {
                    for (i, p) in d.probs().iter().enumerate() {
                        w.write_record([
                            g.label(),
                            q.id.clone(),
                            q.wave.clone(),
                            letter_at(i).to_string(),
                            format!("{p:.12}"),
                        ])?;
                    }
                }
                Err(e @ Error::NoData { .. }) => run.skipped.push(SkippedPair {
                    group: g.label(),
                    question_id: q.id.clone(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    run.write("distributions.csv", &bytes)
}

#[derive(Serialize)]
struct BoundsRow {
    group: String,
    upper_bound: f64,
    lower_bound: BootstrapReport,
}

fn bounds(
    run: &mut Run<'_>,
    ds: &SurveyDataset,
    groups: &[&Subpopulation],
    questions: &[&Question],
) -> Result<()> {
    let cfg = run.cfg;
    let mut rows = Vec::new();
    for g in groups {
        let result = upper_bound(ds, g, questions, &cfg.metric).and_then(|ub| {
            let lb = bootstrap_lower_bound(
                ds,
                g,
                questions,
                cfg.bootstrap.replicates,
                cfg.bootstrap.seed,
                &cfg.metric,
            )?;
            Ok(BoundsRow {
                group: g.label(),
                upper_bound: ub,
                lower_bound: lb,
            })
        });
        match result {
            Ok(r) => rows.push(r),
            Err(e @ Error::NoData { .. }) => {
                run.warnings.push(format!("{}: {e}", g.label()));
                run.skipped.push(SkippedPair {
                    group: g.label(),
                    question_id: "*".into(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "upper_bound", "lower_bound", "ci_low", "ci_high", "R", "seed"])?;
    for r in &rows {
        w.write_record([
            r.group.clone(),
            format!("{:.12}", r.upper_bound),
            format!("{:.12}", r.lower_bound.mean_wd),
            format!("{:.12}", r.lower_bound.ci_low),
            format!("{:.12}", r.lower_bound.ci_high),
            r.lower_bound.replicates.to_string(),
            r.lower_bound.seed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    run.write("bounds.csv", &bytes)?;
    run.write_json("bounds.json", &rows)
}

fn eval(
    run: &mut Run<'_>,
    ds: &SurveyDataset,
    groups: &[&Subpopulation],
    questions: &[&Question],
) -> Result<()> {
    let cfg = run.cfg;
    let method = cfg.eval.method;
    let style = cfg.prompt.style;
    let outcome = match method {
        Method::Human => {
            let p = |g: &Subpopulation, q: &Question| ds.weighted_distribution(g, q);
            evaluate(ds, groups, questions, &p, method.tag(), &cfg.metric, cfg.eval.workers)?
        }
        Method::Uniform => {
            let p = |_: &Subpopulation, q: &Question| Ok(uniform(q));
            evaluate(ds, groups, questions, &p, method.tag(), &cfg.metric, cfg.eval.workers)?
        }
        Method::ZeroShot => {
            let backend = run.backend()?;
            backend.completions()?;
            let p = |g: &Subpopulation, q: &Question| backend.zero_shot(g, q, style);
            evaluate(ds, groups, questions, &p, method.tag(), &cfg.metric, cfg.eval.workers)?
        }
        Method::FewShot => {
            let backend = run.backend()?;
            let endpoint = backend.completions()?;
            let embeddings = backend.embed_all(ds.questions())?;
            let fewshot = FewShotConfig {
                k: cfg.prompt.fewshot_k,
                ..FewShotConfig::default()
            };
            let p = |g: &Subpopulation, q: &Question| {
                let pool: Vec<Question> = ds
                    .questions()
                    .iter()
                    .filter(|p| p.id != q.id && ds.weighted_distribution(g, p).is_ok())
                    .cloned()
                    .collect();
                let chosen = select_fewshot(q, &pool, &embeddings, &fewshot)?;
                let dists: Vec<Distribution> = chosen
                    .iter()
                    .map(|c| ds.weighted_distribution(g, c))
                    .collect::<Result<_>>()?;
                let examples: Vec<(&Question, &Distribution)> =
                    chosen.iter().copied().zip(dists.iter()).collect();
                let prompt = build_fewshot_prompt(g, &examples, q, &fewshot)?;
                let text =
                    backend
                        .client
                        .complete_text(endpoint, &prompt, cfg.prompt.fewshot_max_tokens)?;
                parse_verbalized_distribution(&text, q)
            };
            evaluate(ds, groups, questions, &p, method.tag(), &cfg.metric, cfg.eval.workers)?
        }
    };

    let tag = method.tag();
    let mut csv_bytes = Vec::new();
    write_records_csv(&outcome.records, &mut csv_bytes)?;
    run.write(&format!("records_{tag}.csv"), &csv_bytes)?;
    let aggregates = json!({
        "method": tag,
        "style": style,
        "records": outcome.records.len(),
        "skipped": outcome.skipped.len(),
        "overall": aggregate(&outcome.records, AggregateBy::Overall),
        "by_group": aggregate(&outcome.records, AggregateBy::Group),
        "by_wave": aggregate(&outcome.records, AggregateBy::Wave),
    });
    run.write_json(&format!("aggregates_{tag}.json"), &aggregates)?;
    if !outcome.skipped.is_empty() {
        run.warnings.push(format!(
            "{} of {} pairs skipped; causes are listed in the run manifest",
            outcome.skipped.len(),
            outcome.skipped.len() + outcome.records.len()
        ));
    }
    run.skipped.extend(outcome.skipped);
    Ok(())
}

fn disagree(
    run: &mut Run<'_>,
    ds: &SurveyDataset,
    groups: &[&Subpopulation],
    questions: &[&Question],
    model_sources: bool,
) -> Result<()> {
    if groups.is_empty() {
        return Err(config_error("groups", "no subpopulations selected"));
    }
    let cfg = run.cfg;
    let targets = human_distributions(ds, groups, questions)?;
    let (sources, kind): (GroupDistributions, SourceKind) = if model_sources {
        let backend = run.backend()?;
        let style = cfg.prompt.style;
        let mut sources = Vec::new();
        for g in groups {
            let dists: Vec<(String, Distribution)> = questions
                .par_iter()
                .map(|q| Ok((q.id.clone(), backend.zero_shot(g, q, style)?)))
                .collect::<Result<_>>()?;
            sources.push((g.label(), dists.into_iter().collect()));
        }
        (sources, SourceKind::Model)
    } else {
        (targets.clone(), SourceKind::Human)
    };
    let matrix = intergroup_matrix(&targets, &sources, questions, kind, &cfg.metric)?;
    let stem = match kind {
        SourceKind::Human => "disagreement_human",
        SourceKind::Model => "disagreement_model",
    };
    run.write_json(&format!("{stem}.json"), &matrix)?;
    run.write(&format!("{stem}.svg"), svg::heatmap(&matrix).as_bytes())
}

fn export(
    run: &mut Run<'_>,
    ds: &SurveyDataset,
    groups: &[&Subpopulation],
    questions: &[&Question],
) -> Result<()> {
    let cfg = run.cfg;
    let mode: ExportMode = cfg.export.mode.parse()?;
    let selected: Vec<&Question> = match cfg.export.train_fraction {
        Some(f) => {
            let (train, heldout) = split(ds, f, cfg.export.split_seed)?;
            run.write_json(
                "split.json",
                &json!({ "fraction": f, "seed": cfg.export.split_seed, "train": train, "heldout": heldout }),
            )?;
            questions
                .iter()
                .copied()
                .filter(|q| train.binary_search(&q.id).is_ok())
                .collect()
        }
        None => questions.to_vec(),
    };
    let name = format!("train_{}.jsonl", mode.to_string().replace(['(', ')'], ""));
    let path = run.out.join(&name);
    let manifest = export_training(ds, groups, &selected, cfg.prompt.style, mode, &path)?;
    let jsonl = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    run.record(&name, &jsonl);
    let mpath = crate::dataset_ops::manifest_path(&path);
    let mbytes = std::fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mname = mpath
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    run.record(&mname, &mbytes);
    if !manifest.skipped.is_empty() {
        run.warnings
            .push(format!("{} pairs without human data were not exported", manifest.skipped.len()));
    }
    run.skipped.extend(manifest.skipped);
    Ok(())
}

fn overlap(run: &mut Run<'_>, questions: &[&Question], other: &Path) -> Result<()> {
    if !other.is_dir() {
        return Err(config_error("overlap.other", format!("{} is not a directory", other.display())));
    }
    let threshold = run.cfg.overlap.threshold;
    let other_ds = load_dataset(other)?;
    let backend = run.backend()?;
    let mine: Vec<Question> = questions.iter().map(|q| (*q).clone()).collect();
    let emb_a = backend.embed_all(&mine)?;
    let emb_b = backend.embed_all(other_ds.questions())?;
    let other_refs: Vec<&Question> = other_ds.questions().iter().collect();
    let pairs = detect_overlap(questions, &emb_a, &other_refs, &emb_b, threshold)?;
    run.write_json(
        "overlap.json",
        &json!({ "threshold": threshold, "pairs": pairs }),
    )
}

fn parse_point(s: &str) -> Result<(f64, f64)> {
    let bad = || config_error("scaling.point", format!("`{s}` is not `fraction,wd`"));
    let (f, w) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        f.trim().parse().map_err(|_| bad())?,
        w.trim().parse().map_err(|_| bad())?,
    ))
}

fn scaling(run: &mut Run<'_>, file: Option<&Path>, inline: &[String]) -> Result<()> {
    let mut points = Vec::new();
    if let Some(path) = file {
        let mut rdr = csv::Reader::from_path(path)?;
        for rec in rdr.deserialize::<(f64, f64)>() {
            points.push(rec?);
        }
    }
    for p in inline {
        points.push(parse_point(p)?);
    }
    if points.is_empty() {
        return Err(config_error("scaling.points", "no points given"));
    }
    let fit = fit_scaling(&points)?;
    let residuals = fit.residuals();
    run.write_json(
        "scaling.json",
        &json!({
            "slope": fit.slope,
            "intercept": fit.intercept,
            "points": fit.points,
            "residuals": residuals,
        }),
    )?;
    run.write("scaling.svg", svg::scaling_plot(&fit).as_bytes())
}
