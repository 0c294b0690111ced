//! Bracket achievable scores for each group: the uniform predictor as an
//! upper bound and a respondent bootstrap as a lower bound.
//!
//! cargo run --release --example bootstrap_bounds

use opinion_dist::bounds::{bootstrap_lower_bound, upper_bound};
use opinion_dist::synth::{generate, region_groups, SynthConfig};
use opinion_dist::{MetricConfig, Question};

fn main() -> opinion_dist::Result<()> {
    let ds = generate(&region_groups(150), &SynthConfig::default())?;
    let questions: Vec<&Question> = ds.questions().iter().collect();
    let cfg = MetricConfig::default();
    println!("{:<20} {:>8} {:>8} {:>18}", "group", "upper", "lower", "95% CI");
    for group in ds.subpopulations() {
        let upper = upper_bound(&ds, group, &questions, &cfg)?;
        let lower = bootstrap_lower_bound(&ds, group, &questions, 500, 7, &cfg)?;
        println!(
            "{:<20} {upper:>8.4} {:>8.4}   [{:.4}, {:.4}]",
            group.label(),
            lower.mean_wd,
            lower.ci_low,
            lower.ci_high
        );
    }
    Ok(())
}
