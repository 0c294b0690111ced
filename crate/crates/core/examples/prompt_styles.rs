//! Render one question under each steering style, then a two-shot prompt.
//!
//! cargo run --example prompt_styles

use std::collections::HashMap;

use opinion_dist::model_client::EmbeddingVector;
use opinion_dist::prompting::{build_fewshot_prompt, build_prompt, select_fewshot, FewShotConfig};
use opinion_dist::{load_dataset, GroupKey, PromptStyle};

fn main() -> opinion_dist::Result<()> {
    let ds = load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tiny"))?;
    let group = ds.subpopulation(&GroupKey::new("party", "Republican"))?;
    let target = ds.question("ECON1")?;

    for style in PromptStyle::ALL {
        println!("----- {style} -----\n{}\n", build_prompt(group, target, style)?);
    }

    // Hand-made embeddings stand in for an embedding endpoint.
    let vector = |id: &str, values: Vec<f64>| {
        (id.to_string(), EmbeddingVector { id: id.into(), values, model_tag: "example".into() })
    };
    let embeddings: HashMap<String, EmbeddingVector> = [
        vector("ECON1", vec![1.0, 0.2]),
        vector("MEDIA2", vec![0.1, 1.0]),
        vector("WAGE3", vec![0.9, 0.5]),
    ]
    .into();
    let cfg = FewShotConfig { k: 2, decimals: 2 };
    let chosen = select_fewshot(target, ds.questions(), &embeddings, &cfg)?;
    let dists = chosen
        .iter()
        .map(|q| ds.weighted_distribution(group, q))
        .collect::<opinion_dist::Result<Vec<_>>>()?;
    let examples: Vec<_> = chosen.iter().copied().zip(&dists).collect();
    println!("----- few-shot -----\n{}", build_fewshot_prompt(group, &examples, target, &cfg)?);
    Ok(())
}
