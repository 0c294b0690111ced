//! Uniform-predictor upper bound and respondent-level bootstrap lower bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{uniform, wasserstein, MetricConfig};
use crate::survey::{weighted_shares, Distribution, Question, Subpopulation, SurveyDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub group: String,
    pub mean_wd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(rename = "R")]
    pub replicates: usize,
    pub seed: u64,
    /// Questions with human data for the group.
    pub questions_used: usize,
    /// Replicates in which no question had a sampled answer.
    pub empty_replicates: usize,
}

/// Mean Wasserstein distance between the group's human distribution and the
/// uniform distribution, over the listed questions with data.
pub fn upper_bound(
    dataset: &SurveyDataset,
    group: &Subpopulation,
    questions: &[&Question],
    cfg: &MetricConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for q in questions {
        let human = match dataset.weighted_distribution(group, q) {
            Ok(d) => d,
            Err(Error::NoData { .. }) => continue,
            Err(e) => return Err(e),
        };
        match wasserstein(&human, &uniform(q), q, cfg) {
            Ok(wd) => {
                total += wd;
                n += 1;
            }
            Err(Error::NoData { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(Error::no_data(group.label(), "<all listed questions>"));
    }
    Ok(total / n as f64)
}

/// Nearest-rank percentile of ascending-sorted values, `pct` in `(0, 100]`.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per-question data for one group, indexed by member position.
struct GroupTable<'a> {
    question: &'a Question,
    human: Distribution,
    answers: Vec<Option<usize>>,
}

/// Replicate `r`'s generator: ChaCha20 keyed by `seed`, stream `r`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Respondent-level bootstrap of the mean human-vs-resample Wasserstein
/// distance for one group.
///
/// Each replicate draws `n_g` members with replacement; weights travel with
/// the drawn respondents, and a question nobody in the draw answered is left
/// out of that replicate's mean.
pub fn bootstrap_lower_bound(
    dataset: &SurveyDataset,
    group: &Subpopulation,
    questions: &[&Question],
    replicates: usize,
    seed: u64,
    cfg: &MetricConfig,
) -> Result<BootstrapReport> {
    if replicates == 0 {
        return Err(Error::invalid("bootstrap", "R must be at least 1"));
    }
    let members = dataset.member_indices(group)?;
    if members.is_empty() {
        return Err(Error::no_data(group.label(), "<any>"));
    }
    let weights: Vec<f64> = members.iter().map(|&r| dataset.weight(r)).collect();

    let mut tables = Vec::new();
    for &q in questions {
        let human = match dataset.weighted_distribution(group, q) {
            Ok(d) => d,
            Err(Error::NoData { .. }) => continue,
            Err(e) => return Err(e),
        };
        if q.n_substantive() < 2 || crate::metrics::substantive_in_ordinal_order(&human, q).is_none() {
            continue;
        }
        let qi = dataset.question_position(q)?;
        let answers = members.iter().map(|&r| dataset.answer(r, qi)).collect();
        tables.push(GroupTable {
            question: q,
            human,
            answers,
        });
    }
    if tables.is_empty() {
        return Err(Error::no_data(group.label(), "<all listed questions>"));
    }

    let n = members.len();
    let run = |r: usize| -> Result<Option<f64>> {
        let mut rng = replicate_rng(seed, r as u64);
        let draw: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let mut total = 0.0;
        let mut used = 0usize;
        for t in &tables {
            let shares = weighted_shares(
                t.question.n_options(),
                draw.iter()
                    .filter_map(|&i| t.answers[i].map(|a| (weights[i], a))),
            );
            let Some(resampled) = shares.and_then(|s| Distribution::from_masses(&t.question.id, &s))
            else {
                continue;
            };
            match wasserstein(&t.human, &resampled, t.question, cfg) {
                Ok(wd) => {
                    total += wd;
                    used += 1;
                }
                Err(Error::NoData { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok((used > 0).then(|| total / used as f64))
    };
    let outcomes: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(run)
        .collect::<Result<_>>()?;

    let mut means: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let empty_replicates = replicates - means.len();
    if means.is_empty() {
        return Err(Error::no_data(group.label(), "<every replicate empty>"));
    }
    let mean_wd = means.iter().sum::<f64>() / means.len() as f64;
    means.sort_by(f64::total_cmp);
    Ok(BootstrapReport {
        group: group.label(),
        mean_wd,
        ci_low: nearest_rank(&means, 2.5),
        ci_high: nearest_rank(&means, 97.5),
        replicates,
        seed,
        questions_used: tables.len(),
        empty_replicates,
    })
}
