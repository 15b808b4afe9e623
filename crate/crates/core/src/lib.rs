//! Emotion distributions for ambiguous speech, read from a model's
//! generated text or from its token logits, and scored against
//! multi-annotator ground truth.
//!
//! The two prediction routes:
//!
//! * text: [`parser::ResponseParser`] pulls "Class: P%" pairs out of a
//!   response and normalizes them;
//! * token: [`logits::aggregate_trace`] averages emotion-subword logits over
//!   subwords and generation steps, then [`logits::logits_to_distribution`]
//!   turns the averages into probabilities.
//!
//! [`run::evaluate`] drives either route over a corpus described by an
//! [`io::CorpusManifest`] and produces a [`report::EvalReport`].

pub mod error;
pub mod ground_truth;
pub mod io;
pub mod logits;
pub mod metrics;
pub mod par;
pub mod parser;
pub mod prompts;
pub mod report;
pub mod run;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use ground_truth::{build_distribution, majority_label, AnnotationRecord};
pub use logits::{aggregate_trace, logits_to_distribution, AggregationScope, LogitStep, LogitTrace, NormalizationPolicy};
pub use metrics::{bhattacharyya, kl_divergence, r2_score, MetricConfig};
pub use parser::{parse_response, TextResponse};
pub use report::EvalReport;
pub use types::{EmotionDistribution, EmotionSet, EmotionTokenMap, InvalidReason};
