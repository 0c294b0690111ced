//! Survey data model and weighted answer distributions.
//!
//! A dataset directory holds three required files:
//!
//! - `questions.jsonl`: one [`Question`] per line.
//! - `respondents.csv`: `id,weight,<trait>...`; an empty trait cell means the
//!   respondent has no group for that trait.
//! - `responses.csv`: `respondent_id,question_id,option_letter`.
//!
//! An optional `dataset.json` may carry `source_family` and an explicit list of
//! subpopulations with their steering texts. Without it, subpopulations are the
//! distinct non-empty `(trait, value)` cells of `respondents.csv` and steering
//! texts come from [`crate::prompting::default_steering_texts`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::{default_steering_texts, PromptStyle};

/// Tolerance for a probability vector to count as normalized.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Curation limit on the number of listed options.
pub const MAX_OPTIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: char,
    pub text: String,
    /// 1-based position on the ordinal scale; `None` exactly for refusals.
    pub ordinal: Option<u32>,
    #[serde(default)]
    pub is_refusal: bool,
}

impl AnswerOption {
    pub fn substantive(letter: char, text: impl Into<String>, ordinal: u32) -> Self {
        AnswerOption {
            letter,
            text: text.into(),
            ordinal: Some(ordinal),
            is_refusal: false,
        }
    }

    pub fn refusal(letter: char, text: impl Into<String>) -> Self {
        AnswerOption {
            letter,
            text: text.into(),
            ordinal: None,
            is_refusal: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub wave: String,
    pub text: String,
    pub options: Vec<AnswerOption>,
}

impl Question {
    /// Builds a question whose options are listed in ordinal order, with an
    /// optional trailing refusal option.
    pub fn ordinal(
        id: impl Into<String>,
        wave: impl Into<String>,
        text: impl Into<String>,
        options: &[&str],
        refusal: Option<&str>,
    ) -> Result<Self> {
        let mut opts: Vec<AnswerOption> = options
            .iter()
            .enumerate()
            .map(|(i, t)| AnswerOption::substantive(letter_at(i), *t, i as u32 + 1))
            .collect();
        if let Some(r) = refusal {
            opts.push(AnswerOption::refusal(letter_at(opts.len()), r));
        }
        let q = Question {
            id: id.into(),
            wave: wave.into(),
            text: text.into(),
            options: opts,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let what = || format!("question `{}`", self.id);
        if self.id.is_empty() {
            return Err(Error::invalid("question", "empty id"));
        }
        let n = self.options.len();
        if !(2..=MAX_OPTIONS).contains(&n) {
            return Err(Error::invalid(
                what(),
                format!("has {n} options, expected 2..={MAX_OPTIONS}"),
            ));
        }
        for (i, opt) in self.options.iter().enumerate() {
            if opt.letter != letter_at(i) {
                return Err(Error::invalid(
                    what(),
                    format!(
                        "option {} has letter `{}`, expected `{}`",
                        i,
                        opt.letter,
                        letter_at(i)
                    ),
                ));
            }
            if opt.is_refusal == opt.ordinal.is_some() {
                return Err(Error::invalid(
                    what(),
                    format!(
                        "option `{}`: ordinal must be absent exactly when the option is a refusal",
                        opt.letter
                    ),
                ));
            }
        }
        let mut ordinals: Vec<u32> = self.options.iter().filter_map(|o| o.ordinal).collect();
        ordinals.sort_unstable();
        if ordinals
            .iter()
            .enumerate()
            .any(|(i, &o)| o != i as u32 + 1)
        {
            return Err(Error::invalid(
                what(),
                format!("ordinals {ordinals:?} are not a permutation of 1..={}", ordinals.len()),
            ));
        }
        Ok(())
    }

    pub fn n_options(&self) -> usize {
        self.options.len()
    }

    pub fn n_substantive(&self) -> usize {
        self.options.iter().filter(|o| !o.is_refusal).count()
    }

    pub fn letters(&self) -> impl Iterator<Item = char> + '_ {
        self.options.iter().map(|o| o.letter)
    }

    pub fn option_index(&self, letter: char) -> Option<usize> {
        self.options.iter().position(|o| o.letter == letter)
    }

    /// Option indices of the substantive options, sorted by ordinal.
    pub fn ordinal_order(&self) -> Vec<usize> {
        let mut idx: Vec<(u32, usize)> = self
            .options
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.ordinal.map(|ord| (ord, i)))
            .collect();
        idx.sort_unstable();
        idx.into_iter().map(|(_, i)| i).collect()
    }
}

/// Letter for the option at `index` (`0 -> 'A'`).
pub fn letter_at(index: usize) -> char {
    (b'A' + index as u8) as char
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subpopulation {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub group: String,
    pub steering_texts: BTreeMap<PromptStyle, String>,
}

impl Subpopulation {
    /// Subpopulation with the built-in steering texts for its trait.
    pub fn new(trait_name: impl Into<String>, group: impl Into<String>) -> Self {
        let trait_name = trait_name.into();
        let group = group.into();
        let steering_texts = default_steering_texts(&trait_name, &group);
        Subpopulation {
            trait_name,
            group,
            steering_texts,
        }
    }

    pub fn key(&self) -> GroupKey {
        GroupKey::new(&self.trait_name, &self.group)
    }

    /// Display label, e.g. `Region: South`.
    pub fn label(&self) -> String {
        self.key().to_string()
    }

    pub fn validate(&self) -> Result<()> {
        if self.group.is_empty() {
            return Err(Error::invalid(
                format!("subpopulation of trait `{}`", self.trait_name),
                "empty group",
            ));
        }
        for style in PromptStyle::ALL {
            if !self.steering_texts.contains_key(&style) {
                return Err(Error::invalid(
                    format!("subpopulation `{}`", self.label()),
                    format!("missing {style} steering text"),
                ));
            }
        }
        Ok(())
    }
}

/// `(trait, group)` pair identifying a subpopulation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub group: String,
}

impl GroupKey {
    pub fn new(trait_name: impl Into<String>, group: impl Into<String>) -> Self {
        GroupKey {
            trait_name: trait_name.into(),
            group: group.into(),
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.trait_name, self.group)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Respondent {
    pub id: String,
    pub group_memberships: BTreeSet<GroupKey>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub respondent_id: String,
    pub question_id: String,
    pub option_index: usize,
}

/// Probability vector over a question's options, in listed option order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub question_id: String,
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(question_id: impl Into<String>, probs: Vec<f64>) -> Result<Self> {
        let question_id = question_id.into();
        if probs.is_empty() {
            return Err(Error::invalid(
                format!("distribution for `{question_id}`"),
                "empty probability vector",
            ));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(
                format!("distribution for `{question_id}`"),
                format!("entry {p} is not a nonnegative finite number"),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(
                format!("distribution for `{question_id}`"),
                format!("probabilities sum to {sum}"),
            ));
        }
        Ok(Distribution { question_id, probs })
    }

    /// Normalizes nonnegative masses; `None` when the total mass is zero.
    pub fn from_masses(question_id: impl Into<String>, masses: &[f64]) -> Option<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() || masses.iter().any(|m| *m < 0.0) {
            return None;
        }
        Some(Distribution {
            question_id: question_id.into(),
            probs: masses.iter().map(|m| m / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn check_aligned(&self, question: &Question) -> Result<()> {
        if self.probs.len() != question.n_options() {
            return Err(Error::LengthMismatch {
                expected: question.n_options(),
                actual: self.probs.len(),
            });
        }
        Ok(())
    }

    /// Letter-keyed view, e.g. `{"A": 0.5, "B": 0.5}`.
    pub fn to_letter_map(&self) -> BTreeMap<String, f64> {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (letter_at(i).to_string(), *p))
            .collect()
    }
}

/// `Σ w·1[x=a] / Σ w` over `(weight, option)` pairs; `None` when the total
/// weight is not positive.
pub fn weighted_shares(
    n_options: usize,
    answers: impl IntoIterator<Item = (f64, usize)>,
) -> Option<Vec<f64>> {
    let mut mass = vec![0.0; n_options];
    let mut total = 0.0;
    for (w, a) in answers {
        mass[a] += w;
        total += w;
    }
    if !(total > 0.0) {
        return None;
    }
    for m in &mut mass {
        *m /= total;
    }
    Some(mass)
}

/// Validated, immutable survey dataset.
#[derive(Debug, Clone)]
pub struct SurveyDataset {
    source_family: String,
    questions: Vec<Question>,
    question_index: HashMap<String, usize>,
    /// Sorted by id, so resampling is independent of file order.
    respondents: Vec<Respondent>,
    respondent_index: HashMap<String, usize>,
    responses: Vec<ResponseRecord>,
    subpopulations: Vec<Subpopulation>,
    members: HashMap<GroupKey, Vec<usize>>,
    /// Per respondent: question index -> option index.
    answers: Vec<HashMap<usize, usize>>,
}

impl SurveyDataset {
    pub fn new(
        source_family: impl Into<String>,
        questions: Vec<Question>,
        mut respondents: Vec<Respondent>,
        responses: Vec<ResponseRecord>,
        subpopulations: Vec<Subpopulation>,
    ) -> Result<Self> {
        let mut question_index = HashMap::new();
        for (i, q) in questions.iter().enumerate() {
            q.validate()?;
            if question_index.insert(q.id.clone(), i).is_some() {
                return Err(Error::invalid(
                    format!("question `{}`", q.id),
                    "duplicate question id",
                ));
            }
        }

        respondents.sort_by(|a, b| a.id.cmp(&b.id));
        let mut respondent_index = HashMap::new();
        for (i, r) in respondents.iter().enumerate() {
            if !(r.weight >= 0.0) || !r.weight.is_finite() {
                return Err(Error::invalid(
                    format!("respondent `{}`", r.id),
                    format!("weight {} must be a nonnegative finite number", r.weight),
                ));
            }
            if respondent_index.insert(r.id.clone(), i).is_some() {
                return Err(Error::invalid(
                    format!("respondent `{}`", r.id),
                    "duplicate respondent id",
                ));
            }
        }

        let mut answers = vec![HashMap::new(); respondents.len()];
        for rec in &responses {
            let &ri = respondent_index.get(&rec.respondent_id).ok_or_else(|| {
                Error::DanglingReference {
                    from_kind: "response for question",
                    from_id: rec.question_id.clone(),
                    to_kind: "respondent",
                    to_id: rec.respondent_id.clone(),
                }
            })?;
            let &qi = question_index.get(&rec.question_id).ok_or_else(|| {
                Error::DanglingReference {
                    from_kind: "response of respondent",
                    from_id: rec.respondent_id.clone(),
                    to_kind: "question",
                    to_id: rec.question_id.clone(),
                }
            })?;
            if rec.option_index >= questions[qi].n_options() {
                return Err(Error::invalid(
                    format!("response `{}`/`{}`", rec.respondent_id, rec.question_id),
                    format!(
                        "option index {} out of range for {} options",
                        rec.option_index,
                        questions[qi].n_options()
                    ),
                ));
            }
            if answers[ri].insert(qi, rec.option_index).is_some() {
                return Err(Error::invalid(
                    format!("response `{}`/`{}`", rec.respondent_id, rec.question_id),
                    "more than one response for this respondent and question",
                ));
            }
        }

        let mut seen = HashSet::new();
        for s in &subpopulations {
            s.validate()?;
            if !seen.insert(s.key()) {
                return Err(Error::invalid(
                    format!("subpopulation `{}`", s.label()),
                    "declared twice",
                ));
            }
        }
        let mut members: HashMap<GroupKey, Vec<usize>> =
            seen.into_iter().map(|k| (k, Vec::new())).collect();
        for (i, r) in respondents.iter().enumerate() {
            for k in &r.group_memberships {
                if let Some(v) = members.get_mut(k) {
                    v.push(i);
                }
            }
        }

        Ok(SurveyDataset {
            source_family: source_family.into(),
            questions,
            question_index,
            respondents,
            respondent_index,
            responses,
            subpopulations,
            members,
            answers,
        })
    }

    pub fn source_family(&self) -> &str {
        &self.source_family
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn question(&self, id: &str) -> Result<&Question> {
        self.question_index
            .get(id)
            .map(|&i| &self.questions[i])
            .ok_or_else(|| Error::UnknownQuestion(id.to_string()))
    }

    pub fn respondents(&self) -> &[Respondent] {
        &self.respondents
    }

    pub fn respondent(&self, id: &str) -> Option<&Respondent> {
        self.respondent_index.get(id).map(|&i| &self.respondents[i])
    }

    pub fn responses(&self) -> &[ResponseRecord] {
        &self.responses
    }

    pub fn subpopulations(&self) -> &[Subpopulation] {
        &self.subpopulations
    }

    pub fn subpopulation(&self, key: &GroupKey) -> Result<&Subpopulation> {
        self.subpopulations
            .iter()
            .find(|s| &s.key() == key)
            .ok_or_else(|| Error::UnknownGroup(key.to_string()))
    }

    /// Distinct wave tags in first-seen question order.
    pub fn waves(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.questions
            .iter()
            .filter(|q| seen.insert(q.wave.as_str()))
            .map(|q| q.wave.clone())
            .collect()
    }

    /// Ids of the group's respondents.
    pub fn members(&self, group: &Subpopulation) -> Result<BTreeSet<String>> {
        Ok(self
            .member_indices(group)?
            .iter()
            .map(|&i| self.respondents[i].id.clone())
            .collect())
    }

    /// Internal respondent indices of the group, in ascending id order.
    pub(crate) fn member_indices(&self, group: &Subpopulation) -> Result<&[usize]> {
        self.members
            .get(&group.key())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownGroup(group.label()))
    }

    pub(crate) fn question_position(&self, question: &Question) -> Result<usize> {
        self.question_index
            .get(&question.id)
            .copied()
            .ok_or_else(|| Error::UnknownQuestion(question.id.clone()))
    }

    pub(crate) fn answer(&self, respondent: usize, question: usize) -> Option<usize> {
        self.answers[respondent].get(&question).copied()
    }

    pub(crate) fn weight(&self, respondent: usize) -> f64 {
        self.respondents[respondent].weight
    }

    /// Weighted share of each option among the group's respondents who
    /// answered `question`.
    pub fn weighted_distribution(
        &self,
        group: &Subpopulation,
        question: &Question,
    ) -> Result<Distribution> {
        let qi = self.question_position(question)?;
        let members = self.member_indices(group)?;
        let answers = members
            .iter()
            .filter_map(|&r| self.answer(r, qi).map(|a| (self.weight(r), a)));
        weighted_shares(question.n_options(), answers)
            .map(|probs| Distribution {
                question_id: question.id.clone(),
                probs,
            })
            .ok_or_else(|| Error::no_data(group.label(), &question.id))
    }
}

#[derive(Debug, Default, Deserialize)]
struct DatasetMeta {
    #[serde(default)]
    source_family: Option<String>,
    #[serde(default)]
    subpopulations: Option<Vec<Subpopulation>>,
}

/// Loads and fully validates a dataset directory.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<SurveyDataset> {
    let root = root.as_ref();
    let questions = read_questions(&root.join("questions.jsonl"))?;
    let (respondents, traits) = read_respondents(&root.join("respondents.csv"))?;
    let responses = read_responses(&root.join("responses.csv"), &questions)?;

    let meta_path = root.join("dataset.json");
    let meta: DatasetMeta = if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            file: "dataset.json".into(),
            line: e.line(),
            field: "dataset.json".into(),
            message: e.to_string(),
        })?
    } else {
        DatasetMeta::default()
    };

    let subpopulations = match meta.subpopulations {
        Some(s) => s,
        None => derive_subpopulations(&respondents, &traits),
    };
    SurveyDataset::new(
        meta.source_family.unwrap_or_else(|| "unspecified".into()),
        questions,
        respondents,
        responses,
        subpopulations,
    )
}

fn derive_subpopulations(respondents: &[Respondent], traits: &[String]) -> Vec<Subpopulation> {
    let mut out = Vec::new();
    for t in traits {
        let groups: BTreeSet<&str> = respondents
            .iter()
            .flat_map(|r| r.group_memberships.iter())
            .filter(|k| &k.trait_name == t)
            .map(|k| k.group.as_str())
            .collect();
        out.extend(groups.into_iter().map(|g| Subpopulation::new(t.clone(), g)));
    }
    out
}

fn read_questions(path: &Path) -> Result<Vec<Question>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            file: "questions.jsonl".into(),
            line: i + 1,
            field: json_error_field(&e),
            message: e.to_string(),
        })?;
        q.validate().map_err(|e| Error::Malformed {
            file: "questions.jsonl".into(),
            line: i + 1,
            field: "options".into(),
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

fn json_error_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<row>".into())
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_respondents(path: &Path) -> Result<(Vec<Respondent>, Vec<String>)> {
    let name = file_name(path);
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers()?.clone();
    let col = |h: &str| headers.iter().position(|x| x == h);
    let missing = |field: &str| Error::Malformed {
        file: name.clone(),
        line: 1,
        field: field.into(),
        message: "required column missing from header".into(),
    };
    let id_col = col("id").ok_or_else(|| missing("id"))?;
    let weight_col = col("weight").ok_or_else(|| missing("weight"))?;
    let traits: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id_col && *i != weight_col)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Malformed {
            file: name.clone(),
            line,
            field: "<row>".into(),
            message: e.to_string(),
        })?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(Error::Malformed {
                file: name.clone(),
                line,
                field: "id".into(),
                message: "empty id".into(),
            });
        }
        let raw = rec.get(weight_col).unwrap_or_default();
        let weight: f64 = raw.parse().map_err(|_| Error::Malformed {
            file: name.clone(),
            line,
            field: "weight".into(),
            message: format!("`{raw}` is not a number"),
        })?;
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Malformed {
                file: name.clone(),
                line,
                field: "weight".into(),
                message: format!("weight {weight} must be nonnegative"),
            });
        }
        let group_memberships = traits
            .iter()
            .filter_map(|(i, t)| {
                rec.get(*i)
                    .filter(|v| !v.is_empty())
                    .map(|v| GroupKey::new(t.clone(), v))
            })
            .collect();
        out.push(Respondent {
            id,
            group_memberships,
            weight,
        });
    }
    Ok((out, traits.into_iter().map(|(_, t)| t).collect()))
}

fn read_responses(path: &Path, questions: &[Question]) -> Result<Vec<ResponseRecord>> {
    let name = file_name(path);
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers()?.clone();
    let col = |h: &str| {
        headers.iter().position(|x| x == h).ok_or_else(|| Error::Malformed {
            file: name.clone(),
            line: 1,
            field: h.into(),
            message: "required column missing from header".into(),
        })
    };
    let (rc, qc, lc) = (col("respondent_id")?, col("question_id")?, col("option_letter")?);

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Malformed {
            file: name.clone(),
            line,
            field: "<row>".into(),
            message: e.to_string(),
        })?;
        let respondent_id = rec.get(rc).unwrap_or_default().to_string();
        let question_id = rec.get(qc).unwrap_or_default().to_string();
        let letter = rec.get(lc).unwrap_or_default();
        let q = by_id.get(question_id.as_str()).ok_or_else(|| Error::DanglingReference {
            from_kind: "response of respondent",
            from_id: respondent_id.clone(),
            to_kind: "question",
            to_id: question_id.clone(),
        })?;
        let mut chars = letter.chars();
        let option_index = match (chars.next(), chars.next()) {
            (Some(c), None) => q.option_index(c),
            _ => None,
        }
        .ok_or_else(|| Error::Malformed {
            file: name.clone(),
            line,
            field: "option_letter".into(),
            message: format!("`{letter}` is not an option of question `{question_id}`"),
        })?;
        out.push(ResponseRecord {
            respondent_id,
            question_id,
            option_index,
        });
    }
    Ok(out)
}

/// Writes `dataset` in the directory layout read by [`load_dataset`],
/// including a `dataset.json` with the subpopulations and steering texts.
pub fn write_dataset(dataset: &SurveyDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut lines = String::new();
    for q in dataset.questions() {
        lines.push_str(&serde_json::to_string(q)?);
        lines.push('\n');
    }
    let qpath = root.join("questions.jsonl");
    std::fs::write(&qpath, lines).map_err(|e| Error::io(&qpath, e))?;

    let mut traits: Vec<&str> = Vec::new();
    let all_keys = dataset
        .subpopulations()
        .iter()
        .map(|s| s.trait_name.as_str())
        .chain(
            dataset
                .respondents()
                .iter()
                .flat_map(|r| r.group_memberships.iter().map(|k| k.trait_name.as_str())),
        );
    for t in all_keys {
        if !traits.contains(&t) {
            traits.push(t);
        }
    }
    let rpath = root.join("respondents.csv");
    let mut w = csv::Writer::from_path(&rpath)?;
    let mut header = vec!["id", "weight"];
    header.extend(&traits);
    w.write_record(&header)?;
    for r in dataset.respondents() {
        let mut row = vec![r.id.clone(), r.weight.to_string()];
        for t in &traits {
            let groups: Vec<&str> = r
                .group_memberships
                .iter()
                .filter(|k| k.trait_name == *t)
                .map(|k| k.group.as_str())
                .collect();
            if groups.len() > 1 {
                return Err(Error::invalid(
                    format!("respondent `{}`", r.id),
                    format!("belongs to several `{t}` groups; the CSV layout holds one"),
                ));
            }
            row.push(groups.first().copied().unwrap_or_default().to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&rpath, e))?;

    let apath = root.join("responses.csv");
    let mut w = csv::Writer::from_path(&apath)?;
    w.write_record(["respondent_id", "question_id", "option_letter"])?;
    for rec in dataset.responses() {
        w.write_record([
            rec.respondent_id.as_str(),
            rec.question_id.as_str(),
            &letter_at(rec.option_index).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&apath, e))?;

    let meta = serde_json::json!({
        "source_family": dataset.source_family(),
        "subpopulations": dataset.subpopulations(),
    });
    let mpath = root.join("dataset.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_option() -> Question {
        Question::ordinal("q1", "W1", "Agree?", &["Yes", "No"], None).unwrap()
    }

    fn respondent(id: &str, weight: f64, groups: &[(&str, &str)]) -> Respondent {
        Respondent {
            id: id.into(),
            group_memberships: groups.iter().map(|(t, g)| GroupKey::new(*t, *g)).collect(),
            weight,
        }
    }

    fn resp(r: &str, q: &str, o: usize) -> ResponseRecord {
        ResponseRecord {
            respondent_id: r.into(),
            question_id: q.into(),
            option_index: o,
        }
    }

    #[test]
    fn question_validation() {
        let mut q = two_option();
        q.options[1].letter = 'C';
        assert!(q.validate().is_err());

        let mut q = two_option();
        q.options[1].ordinal = None;
        assert!(q.validate().is_err(), "ordinal missing on substantive");

        let mut q = two_option();
        q.options[1].ordinal = Some(3);
        assert!(q.validate().is_err(), "not a permutation");

        let one = Question {
            options: vec![AnswerOption::substantive('A', "x", 1)],
            ..two_option()
        };
        assert!(one.validate().is_err());

        let labels: Vec<String> = (0..11).map(|i| i.to_string()).collect();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        assert!(Question::ordinal("big", "W", "t", &refs, None).is_err());
    }

    #[test]
    fn ordinal_order_follows_ordinals_not_listing() {
        let q = Question {
            id: "q".into(),
            wave: "w".into(),
            text: "t".into(),
            options: vec![
                AnswerOption::substantive('A', "mid", 2),
                AnswerOption::substantive('B', "low", 1),
                AnswerOption::refusal('C', "Refused"),
                AnswerOption::substantive('D', "high", 3),
            ],
        };
        q.validate().unwrap();
        assert_eq!(q.ordinal_order(), vec![1, 0, 3]);
        assert_eq!(q.n_substantive(), 3);
    }

    #[test]
    fn weighted_example_from_hand_count() {
        let q = two_option();
        let ds = SurveyDataset::new(
            "test",
            vec![q.clone()],
            vec![
                respondent("r1", 1.0, &[("region", "South")]),
                respondent("r2", 1.0, &[("region", "South")]),
                respondent("r3", 2.0, &[("region", "South")]),
            ],
            vec![resp("r1", "q1", 0), resp("r2", "q1", 0), resp("r3", "q1", 1)],
            vec![Subpopulation::new("region", "South")],
        )
        .unwrap();
        let g = &ds.subpopulations()[0];
        let d = ds.weighted_distribution(g, &q).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn single_respondent_is_one_hot() {
        let q = Question::ordinal("q1", "W1", "t", &["a", "b", "c"], None).unwrap();
        let ds = SurveyDataset::new(
            "test",
            vec![q.clone()],
            vec![respondent("r1", 0.7, &[("region", "South")])],
            vec![resp("r1", "q1", 2)],
            vec![Subpopulation::new("region", "South")],
        )
        .unwrap();
        let d = ds
            .weighted_distribution(&ds.subpopulations()[0], &q)
            .unwrap();
        assert_eq!(d.probs(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_weight_or_no_answers_is_no_data() {
        let q = two_option();
        let ds = SurveyDataset::new(
            "test",
            vec![q.clone()],
            vec![
                respondent("r1", 0.0, &[("region", "South")]),
                respondent("r2", 1.0, &[("region", "Northeast")]),
            ],
            vec![resp("r1", "q1", 0)],
            vec![
                Subpopulation::new("region", "South"),
                Subpopulation::new("region", "Northeast"),
            ],
        )
        .unwrap();
        for g in ds.subpopulations() {
            assert!(matches!(
                ds.weighted_distribution(g, &q),
                Err(Error::NoData { .. })
            ));
        }
    }

    #[test]
    fn membership_semantics() {
        let ds = SurveyDataset::new(
            "test",
            vec![two_option()],
            vec![
                respondent("r1", 1.0, &[("region", "South"), ("party", "Democrat")]),
                respondent("r2", 1.0, &[("region", "South")]),
                respondent("r3", 1.0, &[("region", "South")]),
                respondent("r4", 1.0, &[("region", "Northeast")]),
            ],
            vec![],
            vec![
                Subpopulation::new("region", "South"),
                Subpopulation::new("region", "Northeast"),
                Subpopulation::new("party", "Democrat"),
                Subpopulation::new("party", "Republican"),
            ],
        )
        .unwrap();
        let subs = ds.subpopulations();
        assert_eq!(ds.members(&subs[0]).unwrap().len(), 3);
        assert_eq!(ds.members(&subs[1]).unwrap().len(), 1);
        assert!(ds.members(&subs[0]).unwrap().contains("r1"));
        assert!(ds.members(&subs[2]).unwrap().contains("r1"));
        assert!(ds.members(&subs[3]).unwrap().is_empty());
        let unknown = Subpopulation::new("region", "West");
        assert!(matches!(ds.members(&unknown), Err(Error::UnknownGroup(_))));
    }

    #[test]
    fn integrity_errors() {
        let err = SurveyDataset::new(
            "test",
            vec![two_option()],
            vec![respondent("r1", 1.0, &[])],
            vec![resp("r1", "nope", 0)],
            vec![],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nope") && msg.contains("r1"), "{msg}");

        let err = SurveyDataset::new(
            "test",
            vec![two_option()],
            vec![respondent("r1", -1.0, &[])],
            vec![],
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("weight"));

        let dup = SurveyDataset::new(
            "test",
            vec![two_option()],
            vec![respondent("r1", 1.0, &[])],
            vec![resp("r1", "q1", 0), resp("r1", "q1", 1)],
            vec![],
        );
        assert!(dup.is_err());
    }

    #[test]
    fn distribution_constructor_checks() {
        assert!(Distribution::new("q", vec![0.5, 0.5]).is_ok());
        assert!(Distribution::new("q", vec![0.5, 0.6]).is_err());
        assert!(Distribution::new("q", vec![1.5, -0.5]).is_err());
        assert!(Distribution::from_masses("q", &[0.0, 0.0]).is_none());
    }

    fn brute_force(n: usize, answers: &[(f64, usize)]) -> Vec<f64> {
        let total: f64 = answers.iter().map(|(w, _)| *w).sum();
        (0..n)
            .map(|a| {
                let mut num = 0.0;
                for (w, x) in answers {
                    if *x == a {
                        num += *w;
                    }
                }
                num / total
            })
            .collect()
    }

    fn answers_strategy() -> impl Strategy<Value = (usize, Vec<(f64, usize)>)> {
        (2usize..=6).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((0.01f64..10.0, 0..n), 1..40),
            )
        })
    }

    proptest! {
        #[test]
        fn formula_matches_brute_force((n, answers) in answers_strategy()) {
            let fast = weighted_shares(n, answers.iter().copied()).unwrap();
            let slow = brute_force(n, &answers);
            let sum: f64 = fast.iter().sum();
            prop_assert!((sum - 1.0).abs() < SUM_TOLERANCE);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn weight_scaling_invariance((n, answers) in answers_strategy(), c in 0.001f64..1000.0) {
            let base = weighted_shares(n, answers.iter().copied()).unwrap();
            let scaled = weighted_shares(n, answers.iter().map(|(w, a)| (w * c, *a))).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn dropping_refusal_preserves_ratios((n, answers) in answers_strategy()) {
            // Treat the last option as the refusal.
            let refusal = n - 1;
            let full = weighted_shares(n, answers.iter().copied()).unwrap();
            let refusal_weight: f64 = answers.iter().filter(|(_, a)| *a == refusal).map(|(w, _)| w).sum();
            let total: f64 = answers.iter().map(|(w, _)| w).sum();
            prop_assert!((full[refusal] - refusal_weight / total).abs() < 1e-12);
            let substantive: Vec<(f64, usize)> =
                answers.iter().copied().filter(|(_, a)| *a != refusal).collect();
            if let Some(dropped) = weighted_shares(n, substantive) {
                let keep = 1.0 - full[refusal];
                for a in 0..refusal {
                    prop_assert!((dropped[a] * keep - full[a]).abs() < 1e-12);
                }
            }
        }
    }
}
