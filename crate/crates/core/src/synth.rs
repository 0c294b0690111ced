//! Seeded synthetic survey data for examples, tests and benchmarks.
//!
//! Each group answers every question from a discretized normal over the
//! ordinal scale centred at a group-specific position, so groups placed
//! further apart along the scale disagree more.

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::survey::{GroupKey, Question, Respondent, ResponseRecord, Subpopulation, SurveyDataset};

const TOPICS: [&str; 16] = [
    "taxes",
    "immigration",
    "climate policy",
    "public schools",
    "health insurance",
    "gun laws",
    "the minimum wage",
    "trade agreements",
    "police funding",
    "student loans",
    "social media regulation",
    "nuclear energy",
    "foreign aid",
    "housing costs",
    "voting access",
    "artificial intelligence",
];

const FIVE_POINT: [&str; 5] = [
    "Strongly disagree",
    "Somewhat disagree",
    "Neither agree nor disagree",
    "Somewhat agree",
    "Strongly agree",
];

#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub trait_name: String,
    pub group: String,
    pub respondents: usize,
    /// Position on the ordinal scale in `[0, 1]`.
    pub center: f64,
}

impl GroupSpec {
    pub fn new(trait_name: &str, group: &str, respondents: usize, center: f64) -> Self {
        GroupSpec {
            trait_name: trait_name.into(),
            group: group.into(),
            respondents,
            center,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_questions: usize,
    /// Substantive options per question, 2..=9.
    pub n_options: usize,
    pub n_waves: usize,
    /// Every `refusal_every`-th question gets a refusal option; 0 disables.
    pub refusal_every: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_questions: 12,
            n_options: 5,
            n_waves: 3,
            refusal_every: 3,
            seed: 0,
        }
    }
}

/// Questions only, deterministic in `cfg`.
pub fn questions(cfg: &SynthConfig) -> Vec<Question> {
    let labels: Vec<String> = if cfg.n_options == 5 {
        FIVE_POINT.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=cfg.n_options).map(|i| format!("Level {i}")).collect()
    };
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    (0..cfg.n_questions)
        .map(|i| {
            let topic = TOPICS[i % TOPICS.len()];
            let round = i / TOPICS.len();
            let text = if round == 0 {
                format!("How much do you agree that the government should do more about {topic}?")
            } else {
                format!("Survey round {round}: how much do you agree that {topic} deserve more attention?")
            };
            let refusal = (cfg.refusal_every > 0 && i % cfg.refusal_every == cfg.refusal_every - 1)
                .then_some("Refused");
            Question::ordinal(
                format!("Q{:03}", i + 1),
                format!("W{}", i % cfg.n_waves.max(1) + 1),
                text,
                &refs,
                refusal,
            )
            .expect("synthetic question is valid")
        })
        .collect()
}

fn discretized_normal(n: usize, mean: f64, sd: f64) -> Vec<f64> {
    (0..n)
        .map(|a| {
            let z = (a as f64 - mean) / sd;
            (-0.5 * z * z).exp()
        })
        .collect()
}

/// Dataset with one membership per respondent, as listed in `groups`.
pub fn generate(groups: &[GroupSpec], cfg: &SynthConfig) -> Result<SurveyDataset> {
    let questions = questions(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let shape: Vec<(f64, f64)> = questions
        .iter()
        .map(|_| (rng.gen_range(-0.15..0.15), rng.gen_range(0.6..1.3)))
        .collect();

    let mut respondents = Vec::new();
    let mut responses = Vec::new();
    let mut subpopulations: Vec<Subpopulation> = Vec::new();
    for spec in groups {
        let key = GroupKey::new(&spec.trait_name, &spec.group);
        if !subpopulations.iter().any(|s| s.key() == key) {
            subpopulations.push(Subpopulation::new(&spec.trait_name, &spec.group));
        }
        let samplers: Vec<WeightedIndex<f64>> = questions
            .iter()
            .zip(&shape)
            .map(|(q, (offset, sd))| {
                let n_sub = q.n_substantive();
                let mean = (spec.center + offset).clamp(0.0, 1.0) * (n_sub - 1) as f64;
                let mut w = discretized_normal(n_sub, mean, *sd);
                if q.n_options() > n_sub {
                    let total: f64 = w.iter().sum();
                    w.push(total * 0.05);
                }
                WeightedIndex::new(w).expect("positive weights")
            })
            .collect();
        for _ in 0..spec.respondents {
            let id = format!("r{:06}", respondents.len() + 1);
            for (q, sampler) in questions.iter().zip(&samplers) {
                responses.push(ResponseRecord {
                    respondent_id: id.clone(),
                    question_id: q.id.clone(),
                    option_index: sampler.sample(&mut rng),
                });
            }
            respondents.push(Respondent {
                id,
                group_memberships: [key.clone()].into(),
                weight: rng.gen_range(0.5..2.0),
            });
        }
    }
    SurveyDataset::new("synthetic", questions, respondents, responses, subpopulations)
}

/// Groups evenly spaced along one ordinal trait, from one end of the
/// scale to the other.
pub fn gradient_groups(n_groups: usize, respondents: usize) -> Vec<GroupSpec> {
    const NAMES: [&str; 5] = [
        "Very liberal",
        "Liberal",
        "Moderate",
        "Conservative",
        "Very conservative",
    ];
    (0..n_groups)
        .map(|i| {
            let name = if n_groups <= NAMES.len() {
                let offset = (NAMES.len() - n_groups) / 2;
                NAMES[i + offset].to_string()
            } else {
                format!("Position {}", i + 1)
            };
            let center = if n_groups == 1 {
                0.5
            } else {
                i as f64 / (n_groups - 1) as f64
            };
            GroupSpec::new("ideology", &name, respondents, center)
        })
        .collect()
}

/// The four US census regions with mild differences between them.
pub fn region_groups(respondents: usize) -> Vec<GroupSpec> {
    [("Northeast", 0.35), ("Midwest", 0.5), ("South", 0.62), ("West", 0.42)]
        .into_iter()
        .map(|(g, c)| GroupSpec::new("region", g, respondents, c))
        .collect()
}
