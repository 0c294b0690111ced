//! Flag questions that appear, possibly reworded, in two question banks,
//! using embeddings from the mock server.
//!
//! cargo run --example overlap_detection

use std::collections::HashMap;

use opinion_dist::dataset_ops::{detect_overlap, OVERLAP_THRESHOLD};
use opinion_dist::mock::{MockConfig, MockServer};
use opinion_dist::model_client::{ClientConfig, EmbeddingEndpoint, EmbeddingVector, ModelClient};
use opinion_dist::Question;

fn main() -> opinion_dist::Result<()> {
    let opts = ["Yes", "No"];
    let bank_a = [
        Question::ordinal("A1", "W1", "Do you favor raising the federal minimum wage?", &opts, None)?,
        Question::ordinal("A2", "W1", "Do you trust national news organizations?", &opts, None)?,
        Question::ordinal("A3", "W1", "Have you used a public library in the past year?", &opts, None)?,
    ];
    let bank_b = [
        Question::ordinal("B1", "W9", "Do you favor raising the federal minimum wage to $15?", &opts, None)?,
        Question::ordinal("B2", "W9", "Is climate change a major threat to the country?", &opts, None)?,
    ];

    let server = MockServer::start(MockConfig::default())?;
    let endpoint = EmbeddingEndpoint::new(server.embeddings_url(), "mock-embed");
    let client = ModelClient::new(ClientConfig::default());
    let embed = |qs: &[Question]| -> opinion_dist::Result<HashMap<String, EmbeddingVector>> {
        qs.iter()
            .map(|q| Ok((q.id.clone(), client.fetch_embedding(&endpoint, &q.id, &q.text)?)))
            .collect()
    };
    let (ea, eb) = (embed(&bank_a)?, embed(&bank_b)?);
    let ra: Vec<&Question> = bank_a.iter().collect();
    let rb: Vec<&Question> = bank_b.iter().collect();

    for pair in detect_overlap(&ra, &ea, &rb, &eb, OVERLAP_THRESHOLD)? {
        println!("{} ~ {}  cos={:.3}", pair.id_a, pair.id_b, pair.similarity);
    }
    Ok(())
}
