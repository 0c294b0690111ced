//! Distances between answer distributions and distribution transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::{Distribution, Question};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Divide the Wasserstein distance by `n_substantive - 1`, mapping it to `[0, 1]`.
    pub normalize_wd: bool,
    /// Floor applied to model probabilities inside the KL logarithm.
    pub kl_epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            normalize_wd: true,
            kl_epsilon: 1e-10,
        }
    }
}

impl MetricConfig {
    pub fn unnormalized() -> Self {
        MetricConfig {
            normalize_wd: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kl_epsilon > 0.0 && self.kl_epsilon <= 1e-3) {
            return Err(Error::Config {
                field: "metric.kl_epsilon".into(),
                message: format!("{} is outside (0, 1e-3]", self.kl_epsilon),
            });
        }
        Ok(())
    }
}

/// Substantive mass of `p` reordered by ordinal position and renormalized.
/// `None` when the distribution puts no mass on substantive options.
pub fn substantive_in_ordinal_order(p: &Distribution, question: &Question) -> Option<Vec<f64>> {
    let probs = p.probs();
    let masses: Vec<f64> = question.ordinal_order().iter().map(|&i| probs[i]).collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    Some(masses.into_iter().map(|m| m / total).collect())
}

/// Unnormalized 1-D Wasserstein distance between two probability vectors
/// on unit-spaced ordinal positions: `Σ_i |F_p(i) - F_q(i)|`.
pub fn wasserstein_ordinal(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    // The final CDF values are both 1.
    for (a, b) in p.iter().zip(q).take(p.len().saturating_sub(1)) {
        cp += a;
        cq += b;
        total += (cp - cq).abs();
    }
    total
}

/// Wasserstein distance between two distributions aligned to `question`.
///
/// Refusal options are dropped and the remaining mass renormalized before
/// transport over ordinal positions.
pub fn wasserstein(
    p: &Distribution,
    q: &Distribution,
    question: &Question,
    cfg: &MetricConfig,
) -> Result<f64> {
    p.check_aligned(question)?;
    q.check_aligned(question)?;
    let n_sub = question.n_substantive();
    if n_sub < 2 {
        return Err(Error::invalid(
            format!("question `{}`", question.id),
            "needs at least two substantive options for a Wasserstein distance",
        ));
    }
    let no_data = || Error::no_data("<all-refusal distribution>", &question.id);
    let ps = substantive_in_ordinal_order(p, question).ok_or_else(no_data)?;
    let qs = substantive_in_ordinal_order(q, question).ok_or_else(no_data)?;
    let wd = wasserstein_ordinal(&ps, &qs);
    Ok(if cfg.normalize_wd {
        wd / (n_sub - 1) as f64
    } else {
        wd
    })
}

/// Forward KL divergence `D(p_h || p_theta)` in nats, with `p_theta`
/// floored at `cfg.kl_epsilon`.
pub fn kl_forward(p_h: &Distribution, p_theta: &Distribution, cfg: &MetricConfig) -> Result<f64> {
    if p_h.len() != p_theta.len() {
        return Err(Error::LengthMismatch {
            expected: p_h.len(),
            actual: p_theta.len(),
        });
    }
    let kl: f64 = p_h
        .probs()
        .iter()
        .zip(p_theta.probs())
        .filter(|(h, _)| **h > 0.0)
        .map(|(h, t)| h * (h / t.max(cfg.kl_epsilon)).ln())
        .sum();
    // The floor can lift the model mass fractionally above one.
    Ok(kl.max(0.0))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Point mass on the most probable option.
pub fn one_hot(p: &Distribution) -> Distribution {
    let mut probs = vec![0.0; p.len()];
    probs[argmax(p.probs())] = 1.0;
    Distribution::new(p.question_id.clone(), probs).expect("one-hot vector is normalized")
}

/// Integer counts summing to `n` whose shares `c/n` best approximate `p`
/// (largest-remainder apportionment, ties to the lower index).
///
/// # Panics
///
/// Panics if `n == 0`.
pub fn quantize_counts(p: &Distribution, n: u32) -> Vec<u32> {
    assert!(n >= 1, "quantize_counts needs n >= 1");
    let scaled: Vec<f64> = p.probs().iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<u32> = scaled.iter().map(|s| s.floor() as u32).collect();
    let remainders: Vec<f64> = scaled
        .iter()
        .zip(&counts)
        .map(|(s, c)| s - *c as f64)
        .collect();

    // Stable sort keeps index order among equal remainders.
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| remainders[b].total_cmp(&remainders[a]));

    let assigned: i64 = counts.iter().map(|&c| c as i64).sum();
    let deficit = n as i64 - assigned;
    if deficit >= 0 {
        for &i in order.iter().cycle().take(deficit as usize) {
            counts[i] += 1;
        }
    } else {
        // Only reachable when p sums fractionally above one.
        let mut excess = -deficit;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}

/// Equal mass over substantive options, zero on refusals.
pub fn uniform(question: &Question) -> Distribution {
    let n_sub = question.n_substantive();
    let probs: Vec<f64> = question
        .options
        .iter()
        .map(|o| if o.is_refusal { 0.0 } else { 1.0 / n_sub as f64 })
        .collect();
    Distribution::from_masses(question.id.clone(), &probs)
        .expect("a valid question has at least one substantive option")
}
