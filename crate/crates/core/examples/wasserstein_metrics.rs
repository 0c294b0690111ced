//! Compare a few hand-written distributions with the ordinal Wasserstein
//! distance and forward KL.
//!
//! cargo run --example wasserstein_metrics

use opinion_dist::metrics::{kl_forward, one_hot, quantize_counts, uniform, wasserstein, MetricConfig};
use opinion_dist::{Distribution, Question};

fn main() -> opinion_dist::Result<()> {
    let q = Question::ordinal(
        "FIN1",
        "W1",
        "How would you rate economic conditions in this country today?",
        &["Excellent", "Good", "Only fair", "Poor"],
        Some("Refused"),
    )?;
    let human = Distribution::new("FIN1", vec![0.05, 0.25, 0.40, 0.25, 0.05])?;
    let candidates = [
        ("uniform", uniform(&q)),
        ("one-hot of human", one_hot(&human)),
        ("optimistic", Distribution::new("FIN1", vec![0.50, 0.30, 0.15, 0.05, 0.0])?),
        ("pessimistic", Distribution::new("FIN1", vec![0.0, 0.10, 0.30, 0.60, 0.0])?),
    ];

    let cfg = MetricConfig::default();
    let raw = MetricConfig::unnormalized();
    println!("{:<18} {:>8} {:>8} {:>8}", "prediction", "WD", "WD raw", "KL");
    for (name, p) in &candidates {
        println!(
            "{name:<18} {:>8.4} {:>8.4} {:>8.4}",
            wasserstein(&human, p, &q, &cfg)?,
            wasserstein(&human, p, &q, &raw)?,
            kl_forward(&human, p, &cfg)?
        );
    }

    println!("\n40 training replicas of the human distribution: {:?}", quantize_counts(&human, 40));
    Ok(())
}
