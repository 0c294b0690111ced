//! Pairwise disagreement between groups spread along an opinion gradient,
//! written as JSON and an SVG heatmap.
//!
//! cargo run --example intergroup_disagreement [out_dir]

use opinion_dist::evaluation::{human_distributions, intergroup_matrix, SourceKind};
use opinion_dist::svg::heatmap;
use opinion_dist::synth::{generate, gradient_groups, SynthConfig};
use opinion_dist::{MetricConfig, Question, Subpopulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let ds = generate(&gradient_groups(6, 120), &SynthConfig::default())?;
    let groups: Vec<&Subpopulation> = ds.subpopulations().iter().collect();
    let questions: Vec<&Question> = ds.questions().iter().collect();
    let human = human_distributions(&ds, &groups, &questions)?;
    let m = intergroup_matrix(&human, &human, &questions, SourceKind::Human, &MetricConfig::default())?;

    for (label, row) in m.axis.iter().zip(&m.values) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("{label:<16} {}", cells.join(" "));
    }
    std::fs::create_dir_all(&out_dir)?;
    let svg = out_dir.join("disagreement.svg");
    std::fs::write(&svg, heatmap(&m))?;
    std::fs::write(out_dir.join("disagreement.json"), serde_json::to_string_pretty(&m)?)?;
    println!("wrote {}", svg.display());
    Ok(())
}
