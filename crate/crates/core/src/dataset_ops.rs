//! Fine-tuning export, reference losses, cross-dataset overlap and splits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::SkippedPair;
use crate::metrics::{argmax, kl_forward, quantize_counts, wasserstein, MetricConfig};
use crate::model_client::{cosine_similarity, sha256_hex, EmbeddingVector};
use crate::prompting::{build_prompt, PromptStyle};
use crate::survey::{letter_at, Distribution, Question, Subpopulation, SurveyDataset};

/// Default cosine threshold above which two questions count as duplicates.
pub const OVERLAP_THRESHOLD: f64 = 0.87;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExportMode {
    /// One example per pair carrying the full distribution.
    Explicit,
    /// One example per pair carrying the most probable letter.
    OneHot,
    /// `n` single-letter examples per pair, apportioned by the distribution.
    Augment { n: u32 },
}

impl fmt::Display for ExportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExportMode::Explicit => f.write_str("explicit"),
            ExportMode::OneHot => f.write_str("one_hot"),
            ExportMode::Augment { n } => write!(f, "augment({n})"),
        }
    }
}

impl FromStr for ExportMode {
    type Err = Error;

    /// Accepts `explicit`, `one_hot` / `one-hot`, and `augment(N)` / `augment:N`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "explicit" => return Ok(ExportMode::Explicit),
            "one_hot" | "one-hot" | "onehot" => return Ok(ExportMode::OneHot),
            _ => {}
        }
        let n = lower
            .strip_prefix("augment")
            .map(|rest| rest.trim_matches(|c| c == '(' || c == ')' || c == ':' || c == '='))
            .and_then(|n| n.parse::<u32>().ok())
            .filter(|n| *n >= 1)
            .ok_or_else(|| {
                Error::invalid(
                    "export mode",
                    format!("`{s}` is not explicit, one_hot or augment(N) with N >= 1"),
                )
            })?;
        Ok(ExportMode::Augment { n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Distribution(BTreeMap<String, f64>),
    Letter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub group: String,
    pub question_id: String,
    pub target: Target,
    /// File name of the manifest describing the export; not part of the line.
    #[serde(skip)]
    pub manifest_ref: String,
}

/// Recorded for the external trainer; nothing here is executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyperparameters {
    pub objective: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub lora_init_std: f64,
    pub lora_target_modules: Vec<String>,
    pub optimizer: String,
    pub weight_decay: f64,
}

impl Default for TrainingHyperparameters {
    fn default() -> Self {
        TrainingHyperparameters {
            objective: "forward_kl".into(),
            lora_rank: 8,
            lora_alpha: 32,
            lora_dropout: 0.05,
            lora_init_std: 0.02,
            lora_target_modules: vec!["q_proj".into(), "v_proj".into()],
            optimizer: "AdamW".into(),
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub mode: ExportMode,
    pub style: PromptStyle,
    pub jsonl_file: String,
    pub sha256: String,
    pub n_examples: usize,
    pub n_pairs: usize,
    pub n_groups: usize,
    pub n_questions: usize,
    pub skipped: Vec<SkippedPair>,
    pub hyperparameters: TrainingHyperparameters,
}

/// Path of the manifest written next to `jsonl_path`.
pub fn manifest_path(jsonl_path: &Path) -> PathBuf {
    let mut name = jsonl_path
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    jsonl_path.with_file_name(name)
}

/// Examples for one `(group, question)` pair under `mode`.
pub fn training_examples(
    group: &Subpopulation,
    question: &Question,
    target: &Distribution,
    style: PromptStyle,
    mode: ExportMode,
) -> Result<Vec<TrainingExample>> {
    let prompt = build_prompt(group, question, style)?;
    let example = |target: Target| TrainingExample {
        prompt: prompt.clone(),
        group: group.label(),
        question_id: question.id.clone(),
        target,
        manifest_ref: String::new(),
    };
    Ok(match mode {
        ExportMode::Explicit => vec![example(Target::Distribution(target.to_letter_map()))],
        ExportMode::OneHot => vec![example(Target::Letter(
            letter_at(argmax(target.probs())).to_string(),
        ))],
        ExportMode::Augment { n } => {
            if n == 0 {
                return Err(Error::invalid("export mode", "augment factor must be at least 1"));
            }
            quantize_counts(target, n)
                .into_iter()
                .enumerate()
                .flat_map(|(i, c)| (0..c).map(move |_| letter_at(i)))
                .map(|l| example(Target::Letter(l.to_string())))
                .collect()
        }
    })
}

/// Streams training examples for every `(group, question)` pair to a JSONL
/// file and writes a manifest alongside. Pairs without human data are
/// skipped and listed in the manifest.
pub fn export_training(
    dataset: &SurveyDataset,
    groups: &[&Subpopulation],
    questions: &[&Question],
    style: PromptStyle,
    mode: ExportMode,
    out_path: &Path,
) -> Result<ExportManifest> {
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut out = BufWriter::new(file);
    let mut n_examples = 0;
    let mut n_pairs = 0;
    let mut skipped = Vec::new();
    for g in groups {
        for q in questions {
            let target = match dataset.weighted_distribution(g, q) {
                Ok(d) => d,
                Err(e @ Error::NoData { .. }) => {
                    skipped.push(SkippedPair {
                        group: g.label(),
                        question_id: q.id.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            n_pairs += 1;
            for ex in training_examples(g, q, &target, style, mode)? {
                serde_json::to_writer(&mut out, &ex)?;
                out.write_all(b"\n").map_err(|e| Error::io(out_path, e))?;
                n_examples += 1;
            }
        }
    }
    out.flush().map_err(|e| Error::io(out_path, e))?;
    drop(out);

    let bytes = std::fs::read(out_path).map_err(|e| Error::io(out_path, e))?;
    let manifest = ExportManifest {
        mode,
        style,
        jsonl_file: out_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_hex(&bytes),
        n_examples,
        n_pairs,
        n_groups: groups.len(),
        n_questions: questions.len(),
        skipped,
        hyperparameters: TrainingHyperparameters::default(),
    };
    let mpath = manifest_path(out_path);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Reads an exported JSONL file back.
pub fn read_training_jsonl(path: &Path) -> Result<Vec<TrainingExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let manifest_ref = manifest_path(path)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut ex: TrainingExample = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            file: path.display().to_string(),
            line: i + 1,
            field: "<row>".into(),
            message: e.to_string(),
        })?;
        ex.manifest_ref = manifest_ref.clone();
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Kl,
    Wd,
}

/// Mean per-pair loss; the reference value an external trainer should match.
pub fn batch_loss(
    targets: &[Distribution],
    predictions: &[Distribution],
    objective: Objective,
    questions: &[&Question],
    cfg: &MetricConfig,
) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            actual: predictions.len(),
        });
    }
    if questions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            actual: questions.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    let mut total = 0.0;
    for ((t, p), q) in targets.iter().zip(predictions).zip(questions) {
        total += match objective {
            Objective::Kl => kl_forward(t, p, cfg)?,
            Objective::Wd => wasserstein(t, p, q, cfg)?,
        };
    }
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub id_a: String,
    pub id_b: String,
    pub similarity: f64,
}

/// Cross pairs with cosine similarity at or above `threshold`, most similar
/// first. Each side is looked up in its own embedding map.
pub fn detect_overlap(
    questions_a: &[&Question],
    embeddings_a: &HashMap<String, EmbeddingVector>,
    questions_b: &[&Question],
    embeddings_b: &HashMap<String, EmbeddingVector>,
    threshold: f64,
) -> Result<Vec<OverlapPair>> {
    let lookup = |m: &'_ HashMap<String, EmbeddingVector>, id: &str| {
        m.get(id)
            .cloned()
            .ok_or_else(|| Error::invalid("embeddings", format!("no embedding for question `{id}`")))
    };
    let a: Vec<(String, EmbeddingVector)> = questions_a
        .iter()
        .map(|q| Ok((q.id.clone(), lookup(embeddings_a, &q.id)?)))
        .collect::<Result<_>>()?;
    let b: Vec<(String, EmbeddingVector)> = questions_b
        .iter()
        .map(|q| Ok((q.id.clone(), lookup(embeddings_b, &q.id)?)))
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    for (ia, ea) in &a {
        for (ib, eb) in &b {
            let similarity = cosine_similarity(ea, eb)?;
            if similarity >= threshold {
                pairs.push(OverlapPair {
                    id_a: ia.clone(),
                    id_b: ib.clone(),
                    similarity,
                });
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.similarity
            .total_cmp(&x.similarity)
            .then_with(|| x.id_a.cmp(&y.id_a))
            .then_with(|| x.id_b.cmp(&y.id_b))
    });
    Ok(pairs)
}

/// Question-level train/held-out split, stratified by wave.
///
/// The train set holds `floor(fraction * N)` questions. Each wave gets the
/// floor of its proportional share; leftover slots go to the waves with the
/// largest fractional shares, ties to the later-sorted wave tag. Within a
/// wave, ids are sorted then shuffled by a ChaCha20 stream seeded from `seed`.
pub fn split(dataset: &SurveyDataset, fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("train fraction", format!("{fraction} is outside (0, 1]")));
    }
    let mut by_wave: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for q in dataset.questions() {
        by_wave.entry(q.wave.as_str()).or_default().push(q.id.as_str());
    }
    let total = dataset.questions().len();
    // Guard against 0.29 * 100 = 28.999...
    let target = (fraction * total as f64 + 1e-9).floor() as usize;

    let shares: Vec<(usize, f64)> = by_wave
        .values()
        .map(|ids| {
            let exact = fraction * ids.len() as f64 + 1e-9;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut quotas: Vec<usize> = shares.iter().map(|(f, _)| *f).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| shares[b].1.total_cmp(&shares[a].1).then(b.cmp(&a)));
    let leftover = target.saturating_sub(quotas.iter().sum());
    for &w in order.iter().take(leftover) {
        quotas[w] += 1;
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(target);
    let mut heldout = Vec::with_capacity(total - target);
    for ((_, ids), quota) in by_wave.into_iter().zip(quotas) {
        let mut ids: Vec<&str> = ids;
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        train.extend(ids[..quota].iter().map(|s| s.to_string()));
        heldout.extend(ids[quota..].iter().map(|s| s.to_string()));
    }
    train.sort();
    heldout.sort();
    Ok((train, heldout))
}
