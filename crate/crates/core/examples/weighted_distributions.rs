//! Load the bundled tiny dataset and print each group's weighted answer
//! distribution per question.
//!
//! cargo run --example weighted_distributions [dataset_dir]

use opinion_dist::{load_dataset, Error};

fn main() -> opinion_dist::Result<()> {
    let root = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tiny").to_string());
    let ds = load_dataset(&root)?;
    println!(
        "{}: {} questions, {} respondents",
        ds.source_family(),
        ds.questions().len(),
        ds.respondents().len()
    );
    for group in ds.subpopulations() {
        println!("\n{}", group.label());
        for q in ds.questions() {
            match ds.weighted_distribution(group, q) {
                Ok(d) => {
                    let cells: Vec<String> = q
                        .options
                        .iter()
                        .zip(d.probs())
                        .map(|(o, p)| format!("{}={p:.3}", o.letter))
                        .collect();
                    println!("  {:<8} {}", q.id, cells.join("  "));
                }
                Err(Error::NoData { .. }) => println!("  {:<8} (no substantive answers)", q.id),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}
