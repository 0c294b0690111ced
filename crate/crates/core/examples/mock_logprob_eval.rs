//! Zero-shot evaluation against the bundled mock completions server.
//!
//! Swap the mock URL for a real logprob-capable endpoint to evaluate a model.
//!
//! cargo run --example mock_logprob_eval

use opinion_dist::evaluation::{aggregate, evaluate, AggregateBy};
use opinion_dist::mock::{MockConfig, MockServer};
use opinion_dist::model_client::{extract_distribution, ClientConfig, CompletionsEndpoint, ModelClient};
use opinion_dist::prompting::build_prompt;
use opinion_dist::synth::{generate, region_groups, SynthConfig};
use opinion_dist::{MetricConfig, PromptStyle, Question, Subpopulation};

fn main() -> opinion_dist::Result<()> {
    let ds = generate(&region_groups(60), &SynthConfig::default())?;
    let server = MockServer::start(MockConfig::default())?;
    let endpoint = CompletionsEndpoint::new(server.completions_url(), "mock");
    let client = ModelClient::new(ClientConfig::default());

    let predict = |g: &Subpopulation, q: &Question| {
        let prompt = build_prompt(g, q, PromptStyle::Portray)?;
        let letters: Vec<char> = q.letters().collect();
        let r = client.fetch_option_logprobs(&endpoint, &prompt, &letters)?;
        extract_distribution(&r, q)
    };
    let groups: Vec<&Subpopulation> = ds.subpopulations().iter().collect();
    let questions: Vec<&Question> = ds.questions().iter().collect();
    let out = evaluate(&ds, &groups, &questions, &predict, "zero-shot", &MetricConfig::default(), 4)?;

    for row in aggregate(&out.records, AggregateBy::Group) {
        println!("{:<20} n={:<3} WD={:.4} KL={:.4}", row.key, row.n, row.mean_wd, row.mean_kl);
    }
    let stats = client.stats();
    println!(
        "{} records, {} skipped, {} requests to the server",
        out.records.len(),
        out.skipped.len(),
        stats.network_requests
    );
    Ok(())
}
