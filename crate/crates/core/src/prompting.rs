//! Steering prompts, few-shot prompts and parsing of verbalized distributions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_client::{cosine_similarity, EmbeddingVector};
use crate::survey::{letter_at, Distribution, Question, Subpopulation};

/// Final line of every scoring prompt; the next token is the bare option letter.
pub const ANSWER_CUE: &str = "Answer: ";

/// Cue line for few-shot example answers and the final request.
pub const DISTRIBUTION_CUE: &str = "Answer distribution: ";

const FEWSHOT_HEADER: &str = "The following survey questions are shown together with the distribution \
of answers given by a group of respondents. The group is described below.";

const FEWSHOT_INSTRUCTION: &str = "Predict the distribution of answers this group gives to the last \
question. Reply with a JSON object mapping each option letter to a probability, in the same format \
as above.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptStyle {
    #[serde(rename = "QA")]
    Qa,
    #[serde(rename = "BIO")]
    Bio,
    #[serde(rename = "PORTRAY")]
    Portray,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 3] = [PromptStyle::Qa, PromptStyle::Bio, PromptStyle::Portray];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::Qa => "QA",
            PromptStyle::Bio => "BIO",
            PromptStyle::Portray => "PORTRAY",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "QA" => Ok(PromptStyle::Qa),
            "BIO" => Ok(PromptStyle::Bio),
            "PORTRAY" => Ok(PromptStyle::Portray),
            _ => Err(Error::invalid(
                "prompt style",
                format!("`{s}` is not one of QA, BIO, PORTRAY"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    pub k: usize,
    /// Decimal places for probabilities rendered as JSON.
    pub decimals: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig { k: 5, decimals: 3 }
    }
}

impl FewShotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config {
                field: "prompt.fewshot_k".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

struct TraitTemplate {
    qa_question: &'static str,
    bio: &'static str,
    portray: &'static str,
}

fn trait_template(trait_name: &str) -> Option<TraitTemplate> {
    let key: String = trait_name
        .chars()
        .filter(char::is_ascii_alphanumeric)
        .collect::<String>()
        .to_ascii_lowercase();
    let t = |qa_question, bio, portray| {
        Some(TraitTemplate {
            qa_question,
            bio,
            portray,
        })
    };
    if key.contains("region") {
        t(
            "In which part of the United States do you currently live?",
            "I currently reside in the {}.",
            "Answer the following question as if you currently reside in the {}.",
        )
    } else if key.contains("educ") {
        t(
            "What is the highest level of schooling or degree that you have completed?",
            "The highest level of education I have completed is {}.",
            "Answer the following question as if the highest level of education you have completed is {}.",
        )
    } else if key.contains("gender") || key == "sex" {
        t(
            "What is your gender?",
            "My gender is {}.",
            "Answer the following question as if your gender is {}.",
        )
    } else if key.contains("race") || key.contains("ethnic") {
        t(
            "What is your race or ethnicity?",
            "My race or ethnicity is {}.",
            "Answer the following question as if your race or ethnicity is {}.",
        )
    } else if key.contains("income") {
        t(
            "Last year, what was your total family income from all sources, before taxes?",
            "Last year, my total family income from all sources, before taxes, was {}.",
            "Answer the following question as if last year your total family income from all sources, before taxes, was {}.",
        )
    } else if key.contains("party") {
        t(
            "In politics today, do you consider yourself a",
            "In politics today, I consider myself a {}.",
            "Answer the following question as if in politics today you consider yourself a {}.",
        )
    } else if key.contains("ideolog") {
        t(
            "In general, would you describe your political views as",
            "In general, I would describe my political views as {}.",
            "Answer the following question as if in general you would describe your political views as {}.",
        )
    } else if key.contains("relig") {
        t(
            "What is your present religion, if any?",
            "My present religion is {}.",
            "Answer the following question as if your present religion is {}.",
        )
    } else if key == "age" {
        t(
            "What is your age?",
            "I am {} years old.",
            "Answer the following question as if you are {} years old.",
        )
    } else {
        None
    }
}

/// Built-in QA/BIO/PORTRAY steering texts for a `(trait, group)` pair.
///
/// Known traits (region, education, gender, race/ethnicity, income, party,
/// ideology, religion, age) use fixed templates; any other trait falls back
/// to a generic `"your <trait> is <group>"` phrasing.
pub fn default_steering_texts(trait_name: &str, group: &str) -> BTreeMap<PromptStyle, String> {
    let (qa, bio, portray) = match trait_template(trait_name) {
        Some(t) => (
            format!("Question: {}\nAnswer: {group}", t.qa_question),
            t.bio.replace("{}", group),
            t.portray.replace("{}", group),
        ),
        None => {
            let name = trait_name.to_lowercase();
            (
                format!("Question: What is your {name}?\nAnswer: {group}"),
                format!("My {name} is {group}."),
                format!("Answer the following question as if your {name} is {group}."),
            )
        }
    };
    BTreeMap::from([
        (PromptStyle::Qa, qa),
        (PromptStyle::Bio, bio),
        (PromptStyle::Portray, portray),
    ])
}

fn steering_text(group: &Subpopulation, style: PromptStyle) -> Result<&str> {
    group
        .steering_texts
        .get(&style)
        .map(String::as_str)
        .ok_or_else(|| {
            Error::invalid(
                format!("subpopulation `{}`", group.label()),
                format!("no {style} steering text"),
            )
        })
}

/// `Question: ...` followed by one `X. option` line per option.
pub fn question_block(question: &Question) -> String {
    let mut out = format!("Question: {}\n", question.text);
    for opt in &question.options {
        out.push_str(&format!("{}. {}\n", opt.letter, opt.text));
    }
    out
}

/// Zero-shot scoring prompt: steering text, the question, and [`ANSWER_CUE`].
pub fn build_prompt(group: &Subpopulation, question: &Question, style: PromptStyle) -> Result<String> {
    let steering = steering_text(group, style)?;
    Ok(format!("{steering}\n\n{}{ANSWER_CUE}", question_block(question)))
}

/// Renders `{"A": 0.500, "B": 0.500}` with a fixed number of decimals.
pub fn render_distribution_json(d: &Distribution, decimals: usize) -> String {
    let body: Vec<String> = d
        .probs()
        .iter()
        .enumerate()
        .map(|(i, p)| format!("\"{}\": {:.*}", letter_at(i), decimals, p))
        .collect();
    format!("{{{}}}", body.join(", "))
}

/// Picks the `cfg.k` pool questions most similar to `target`, returned in
/// ascending similarity so the closest example sits next to the target.
/// Pool entries sharing the target's id are ignored; ties rank by id.
pub fn select_fewshot<'a>(
    target: &Question,
    pool: &'a [Question],
    embeddings: &HashMap<String, EmbeddingVector>,
    cfg: &FewShotConfig,
) -> Result<Vec<&'a Question>> {
    cfg.validate()?;
    let embedding = |id: &str| {
        embeddings
            .get(id)
            .ok_or_else(|| Error::invalid("embeddings", format!("no embedding for question `{id}`")))
    };
    let target_vec = embedding(&target.id)?;
    let mut scored = Vec::with_capacity(pool.len());
    for q in pool.iter().filter(|q| q.id != target.id) {
        scored.push((cosine_similarity(target_vec, embedding(&q.id)?)?, q));
    }
    if scored.len() < cfg.k {
        return Err(Error::invalid(
            "few-shot pool",
            format!("{} candidates for k = {}", scored.len(), cfg.k),
        ));
    }
    scored.sort_by(|(sa, qa), (sb, qb)| sb.total_cmp(sa).then_with(|| qa.id.cmp(&qb.id)));
    scored.truncate(cfg.k);
    Ok(scored.into_iter().rev().map(|(_, q)| q).collect())
}

/// Few-shot prompt: group description, `k` solved examples with their JSON
/// distributions, then the target question and an output instruction.
pub fn build_fewshot_prompt(
    group: &Subpopulation,
    examples: &[(&Question, &Distribution)],
    target: &Question,
    cfg: &FewShotConfig,
) -> Result<String> {
    cfg.validate()?;
    if examples.len() != cfg.k {
        return Err(Error::invalid(
            "few-shot examples",
            format!("got {} examples for k = {}", examples.len(), cfg.k),
        ));
    }
    let mut out = format!("{FEWSHOT_HEADER}\n{}\n\n", steering_text(group, PromptStyle::Qa)?);
    for (question, dist) in examples {
        if dist.question_id != question.id {
            return Err(Error::invalid(
                "few-shot example",
                format!(
                    "distribution for `{}` paired with question `{}`",
                    dist.question_id, question.id
                ),
            ));
        }
        dist.check_aligned(question)?;
        out.push_str(&question_block(question));
        out.push_str(DISTRIBUTION_CUE);
        out.push_str(&render_distribution_json(dist, cfg.decimals));
        out.push_str("\n\n");
    }
    out.push_str(&question_block(target));
    out.push_str(FEWSHOT_INSTRUCTION);
    out.push('\n');
    out.push_str(DISTRIBUTION_CUE);
    Ok(out)
}

fn snippet(text: &str) -> String {
    text.chars().take(80).collect()
}

/// Extracts a distribution from free text: the first JSON object whose keys
/// are all option letters of `question`. Missing letters get zero and the
/// values are renormalized.
pub fn parse_verbalized_distribution(text: &str, question: &Question) -> Result<Distribution> {
    let letters: Vec<String> = question.letters().map(String::from).collect();
    for (start, _) in text.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&text[start..]).into_iter::<serde_json::Value>();
        let Some(Ok(serde_json::Value::Object(map))) = stream.next() else {
            continue;
        };
        if map.is_empty() || !map.keys().all(|k| letters.iter().any(|l| l == k.trim())) {
            continue;
        }
        let mut masses = vec![0.0; letters.len()];
        for (k, v) in &map {
            let value = v.as_f64().ok_or_else(|| Error::ParseDistribution {
                message: format!("value for `{k}` is not a number"),
                snippet: snippet(&text[start..]),
            })?;
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::ParseDistribution {
                    message: format!("value {value} for `{k}` is negative or not finite"),
                    snippet: snippet(&text[start..]),
                });
            }
            let idx = letters.iter().position(|l| l == k.trim()).expect("checked above");
            masses[idx] += value;
        }
        return Distribution::from_masses(question.id.clone(), &masses).ok_or_else(|| {
            Error::ParseDistribution {
                message: "all probabilities are zero".into(),
                snippet: snippet(&text[start..]),
            }
        });
    }
    Err(Error::ParseDistribution {
        message: "no JSON object keyed by option letters".into(),
        snippet: snippet(text),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn question(n: usize) -> Question {
        let labels: Vec<String> = (0..n).map(|i| format!("Option {i}")).collect();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        Question::ordinal("q1", "W1", "How likely is it?", &refs, None).unwrap()
    }

    #[test]
    fn bio_and_portray_prefixes() {
        let south = Subpopulation::new("region", "South");
        let q = question(2);
        let bio = build_prompt(&south, &q, PromptStyle::Bio).unwrap();
        assert!(bio.starts_with("I currently reside in the South.\n"));
        let portray = build_prompt(&south, &q, PromptStyle::Portray).unwrap();
        assert!(portray.starts_with(
            "Answer the following question as if you currently reside in the South.\n"
        ));
    }

    #[test]
    fn qa_prompt_layout() {
        let south = Subpopulation::new("Region", "South");
        let q = Question::ordinal(
            "q1",
            "W1",
            "What do you think the chances are?",
            &["Very likely", "Somewhat likely", "Not very likely", "Very unlikely"],
            Some("Refused"),
        )
        .unwrap();
        let p = build_prompt(&south, &q, PromptStyle::Qa).unwrap();
        let expected = "Question: In which part of the United States do you currently live?\n\
Answer: South\n\n\
Question: What do you think the chances are?\n\
A. Very likely\nB. Somewhat likely\nC. Not very likely\nD. Very unlikely\nE. Refused\n\
Answer: ";
        assert_eq!(p, expected);
        assert_eq!(p, build_prompt(&south, &q, PromptStyle::Qa).unwrap());
    }

    #[test]
    fn missing_steering_text() {
        let mut g = Subpopulation::new("region", "South");
        g.steering_texts.remove(&PromptStyle::Bio);
        assert!(build_prompt(&g, &question(2), PromptStyle::Bio).is_err());
    }

    #[test]
    fn generic_trait_fallback() {
        let texts = default_steering_texts("Marital status", "Married");
        assert_eq!(texts[&PromptStyle::Bio], "My marital status is Married.");
    }

    #[test]
    fn json_rendering() {
        let d = Distribution::new("q1", vec![0.5, 0.5]).unwrap();
        assert_eq!(render_distribution_json(&d, 3), "{\"A\": 0.500, \"B\": 0.500}");
    }

    #[test]
    fn parse_examples() {
        let q2 = question(2);
        let d = parse_verbalized_distribution(r#"{"A":0.7,"B":0.3}"#, &q2).unwrap();
        assert_eq!(d.probs(), &[0.7, 0.3]);
        let d = parse_verbalized_distribution(r#"{"A":2,"B":2}"#, &q2).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
        let q3 = question(3);
        let d = parse_verbalized_distribution(r#"Sure! {"A":0.6,"B":0.2}"#, &q3).unwrap();
        assert!((d.probs()[0] - 0.75).abs() < 1e-12);
        assert!((d.probs()[1] - 0.25).abs() < 1e-12);
        assert_eq!(d.probs()[2], 0.0);
    }

    #[test]
    fn parse_skips_unrelated_objects() {
        let q2 = question(2);
        let text = r#"{"note": 1} then {"A": 0.1, "B": 0.9}"#;
        let d = parse_verbalized_distribution(text, &q2).unwrap();
        assert_eq!(d.probs(), &[0.1, 0.9]);
    }

    #[test]
    fn parse_errors() {
        let q2 = question(2);
        for bad in ["no json here", r#"{"A": -0.1, "B": 1.1}"#, r#"{"A": 0, "B": 0}"#, "{broken"] {
            assert!(
                matches!(
                    parse_verbalized_distribution(bad, &q2),
                    Err(Error::ParseDistribution { .. })
                ),
                "{bad}"
            );
        }
    }

    fn emb(id: &str, v: Vec<f64>) -> (String, EmbeddingVector) {
        (
            id.to_string(),
            EmbeddingVector {
                id: id.to_string(),
                values: v,
                model_tag: "test".into(),
            },
        )
    }

    fn pool_question(id: &str) -> Question {
        Question { id: id.into(), ..question(2) }
    }

    #[test]
    fn fewshot_selection_order() {
        let target = pool_question("t");
        let pool: Vec<Question> = ["a", "b", "c", "dup"].iter().map(|i| pool_question(i)).collect();
        let embeddings: HashMap<_, _> = [
            emb("t", vec![1.0, 0.0]),
            emb("a", vec![0.0, 1.0]),
            emb("b", vec![1.0, 1.0]),
            emb("c", vec![1.0, 0.2]),
            emb("dup", vec![2.0, 0.0]),
        ]
        .into_iter()
        .collect();
        let cfg = FewShotConfig { k: 3, decimals: 3 };
        let picked = select_fewshot(&target, &pool, &embeddings, &cfg).unwrap();
        let ids: Vec<&str> = picked.iter().map(|q| q.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c", "dup"]);

        let cfg = FewShotConfig { k: 4, decimals: 3 };
        let all = select_fewshot(&target, &pool, &embeddings, &cfg).unwrap();
        assert_eq!(all.first().unwrap().id, "a");

        let cfg = FewShotConfig { k: 5, decimals: 3 };
        assert!(select_fewshot(&target, &pool, &embeddings, &cfg).is_err());
    }

    #[test]
    fn fewshot_prompt_rejects_bad_input() {
        let g = Subpopulation::new("region", "South");
        let q = question(2);
        let d = Distribution::new("q1", vec![0.5, 0.5]).unwrap();
        let zero = FewShotConfig { k: 0, decimals: 3 };
        assert!(build_fewshot_prompt(&g, &[], &q, &zero).is_err());
        let other = Distribution::new("other", vec![0.5, 0.5]).unwrap();
        let one = FewShotConfig { k: 1, decimals: 3 };
        assert!(build_fewshot_prompt(&g, &[(&q, &other)], &q, &one).is_err());
        assert!(build_fewshot_prompt(&g, &[(&q, &d)], &q, &one).is_ok());
    }

    proptest! {
        #[test]
        fn render_then_parse_round_trips(
            raw in prop::collection::vec(0.0f64..1.0, 2..=6),
            decimals in 2usize..=6,
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-3);
            let n = raw.len();
            let q = question(n);
            let d = Distribution::new("q1", raw.iter().map(|x| x / total).collect()).unwrap();
            let text = format!("Here you go: {}", render_distribution_json(&d, decimals));
            let back = parse_verbalized_distribution(&text, &q).unwrap();
            let tol = 10f64.powi(-(decimals as i32)) * n as f64;
            for (a, b) in d.probs().iter().zip(back.probs()) {
                prop_assert!((a - b).abs() <= tol);
            }
        }

        #[test]
        fn selection_ignores_pool_order(seed in any::<u64>()) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut embeddings = HashMap::new();
            let target = pool_question("target");
            embeddings.insert("target".to_string(), EmbeddingVector {
                id: "target".into(), values: vec![1.0, 0.5, 0.25], model_tag: "t".into(),
            });
            let mut pool = Vec::new();
            for i in 0..12 {
                let id = format!("p{i:02}");
                // Coarse values so ties occur.
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(0..3) as f64 + 0.5).collect();
                embeddings.insert(id.clone(), EmbeddingVector { id: id.clone(), values: v, model_tag: "t".into() });
                pool.push(pool_question(&id));
            }
            let cfg = FewShotConfig::default();
            let a: Vec<String> = select_fewshot(&target, &pool, &embeddings, &cfg).unwrap()
                .into_iter().map(|q| q.id.clone()).collect();
            pool.shuffle(&mut rng);
            let b: Vec<String> = select_fewshot(&target, &pool, &embeddings, &cfg).unwrap()
                .into_iter().map(|q| q.id.clone()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
