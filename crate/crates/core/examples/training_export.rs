//! Split questions into train and held-out sets and export fine-tuning
//! examples in each target mode.
//!
//! cargo run --example training_export [out_dir]

use opinion_dist::dataset_ops::{export_training, read_training_jsonl, split, ExportMode};
use opinion_dist::synth::{generate, region_groups, SynthConfig};
use opinion_dist::{PromptStyle, Question, Subpopulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("opinion-dist-export"));
    std::fs::create_dir_all(&out_dir)?;
    let ds = generate(&region_groups(80), &SynthConfig { n_questions: 20, ..Default::default() })?;
    let (train, held_out) = split(&ds, 0.5, 11)?;
    println!("train: {}\nheld out: {}", train.join(" "), held_out.join(" "));

    let groups: Vec<&Subpopulation> = ds.subpopulations().iter().collect();
    let questions = train.iter().map(|id| ds.question(id)).collect::<opinion_dist::Result<Vec<&Question>>>()?;
    for (name, mode) in [
        ("explicit", ExportMode::Explicit),
        ("augment", ExportMode::Augment { n: 20 }),
        ("onehot", ExportMode::OneHot),
    ] {
        let path = out_dir.join(format!("train_{name}.jsonl"));
        let manifest = export_training(&ds, &groups, &questions, PromptStyle::Qa, mode, &path)?;
        let first = &read_training_jsonl(&path)?[0];
        println!(
            "{name:<9} {:>5} examples  sha256 {}  first target {:?}",
            manifest.n_examples,
            &manifest.sha256[..12],
            first.target
        );
    }
    Ok(())
}
