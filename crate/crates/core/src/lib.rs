//! Measuring how well language models reproduce the answer distributions of
//! survey subpopulations.
//!
//! The crate loads weighted survey data, computes per-group answer
//! distributions, scores predicted distributions with an ordinal Wasserstein
//! distance and forward KL, brackets scores between a uniform upper bound and
//! a bootstrap lower bound, builds steering and few-shot prompts, queries a
//! logprob-capable completions endpoint, and exports fine-tuning data.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod dataset_ops;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod mock;
pub mod model_client;
pub mod prompting;
pub mod survey;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
pub use metrics::MetricConfig;
pub use prompting::PromptStyle;
pub use survey::{
    load_dataset, write_dataset, AnswerOption, Distribution, GroupKey, Question, Respondent,
    ResponseRecord, Subpopulation, SurveyDataset,
};
