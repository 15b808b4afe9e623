//! Token-level route: per-step emotion logits are averaged over each emotion
//! word's subword tokens, then over generated steps, then normalized into a
//! distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmotionDistribution, EmotionSet, EmotionTokenMap, InvalidReason, UtteranceRef};

/// Leading markers tokenizers use for a preceding space.
const WHITESPACE_MARKERS: [char; 3] = ['▁', 'Ġ', ' '];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitStep {
    /// 1-based position in the generated sequence.
    pub index: usize,
    pub token_text: String,
    pub token_id: u32,
    /// Logit of every mapped subword token at this step, keyed by token string.
    pub emotion_logits: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitTrace {
    #[serde(flatten)]
    pub utterance: UtteranceRef,
    pub prompt_id: String,
    pub generated_text: String,
    pub steps: Vec<LogitStep>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationScope {
    #[default]
    AllTokens,
    EmotionWordTokens,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationPolicy {
    /// Divide each averaged logit by their sum.
    #[default]
    PaperDivision,
    /// Subtract the minimum logit, then divide by the sum.
    ShiftMinZero,
    Softmax,
}

macro_rules! kebab_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl ::std::str::FromStr for $ty {
            type Err = $crate::error::Error;

            fn from_str(s: &str) -> ::std::result::Result<Self, $crate::error::Error> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err($crate::error::Error::Config(format!(
                        "unknown value '{other}' (expected one of: {})",
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}
pub(crate) use kebab_enum;

kebab_enum!(AggregationScope {
    AggregationScope::AllTokens => "all-tokens",
    AggregationScope::EmotionWordTokens => "emotion-word-tokens",
});

kebab_enum!(NormalizationPolicy {
    NormalizationPolicy::PaperDivision => "paper-division",
    NormalizationPolicy::ShiftMinZero => "shift-min-zero",
    NormalizationPolicy::Softmax => "softmax",
});

/// Strips one leading whitespace marker and lowercases, for matching
/// generated tokens against map entries.
pub fn normalize_token(token: &str) -> String {
    token
        .strip_prefix(WHITESPACE_MARKERS)
        .unwrap_or(token)
        .to_lowercase()
}

/// Concatenation of generated tokens with whitespace markers turned back
/// into spaces.
pub fn detokenize(steps: &[LogitStep]) -> String {
    let mut out = String::new();
    for s in steps {
        match s.token_text.strip_prefix(['▁', 'Ġ']) {
            Some(rest) => {
                out.push(' ');
                out.push_str(rest);
            }
            None => out.push_str(&s.token_text),
        }
    }
    out
}

impl LogitTrace {
    /// Checks the per-record invariants against `map`: at least one step,
    /// 1-based consecutive indices, exactly the mapped subword keys, finite
    /// logits.
    pub fn validate(&self, map: &EmotionTokenMap) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::EmptyTrace);
        }
        for (pos, step) in self.steps.iter().enumerate() {
            if step.index != pos + 1 {
                return Err(Error::Config(format!(
                    "step {} has index {} (expected {})",
                    pos + 1,
                    step.index,
                    pos + 1
                )));
            }
            for tok in map.subword_tokens() {
                match step.emotion_logits.get(tok) {
                    None => {
                        return Err(Error::MissingSubword {
                            step: step.index,
                            token: tok.to_string(),
                        })
                    }
                    Some(v) if !v.is_finite() => {
                        return Err(Error::NonFinite(format!("step {} logit '{tok}'", step.index)))
                    }
                    Some(_) => {}
                }
            }
            if step.emotion_logits.len() != map.total_subwords() {
                let extra = step
                    .emotion_logits
                    .keys()
                    .find(|k| !map.subword_tokens().any(|t| t == k.as_str()))
                    .cloned()
                    .unwrap_or_default();
                return Err(Error::TokenMap(format!(
                    "step {} carries unmapped subword '{extra}'",
                    step.index
                )));
            }
        }
        Ok(())
    }

    /// Whether the detokenized steps reproduce `generated_text` (ignoring
    /// surrounding whitespace).
    pub fn text_matches(&self) -> bool {
        detokenize(&self.steps).trim() == self.generated_text.trim()
    }
}

/// Mean subword logit per emotion at one step, in set order.
pub fn step_emotion_logits(step: &LogitStep, map: &EmotionTokenMap) -> Result<Vec<f64>> {
    map.entries()
        .iter()
        .map(|e| {
            let mut mean = 0.0;
            for (k, sw) in e.subwords.iter().enumerate() {
                let z = step.emotion_logits.get(&sw.token).ok_or_else(|| Error::MissingSubword {
                    step: step.index,
                    token: sw.token.clone(),
                })?;
                mean += (z - mean) / (k + 1) as f64;
            }
            Ok(mean)
        })
        .collect()
}

/// Steps contributing to the sequence average.
///
/// For [`AggregationScope::EmotionWordTokens`] these are the runs of
/// generated tokens that spell out an emotion word's subword sequence,
/// matched greedily left to right, longest word first.
pub fn select_steps<'t>(
    trace: &'t LogitTrace,
    map: &EmotionTokenMap,
    scope: AggregationScope,
) -> Result<Vec<&'t LogitStep>> {
    if trace.steps.is_empty() {
        return Err(Error::EmptyTrace);
    }
    match scope {
        AggregationScope::AllTokens => Ok(trace.steps.iter().collect()),
        AggregationScope::EmotionWordTokens => {
            let mut words: Vec<Vec<String>> = map
                .entries()
                .iter()
                .map(|e| e.subwords.iter().map(|s| normalize_token(&s.token)).collect())
                .collect();
            words.sort_by_key(|w| std::cmp::Reverse(w.len()));
            let generated: Vec<String> = trace.steps.iter().map(|s| normalize_token(&s.token_text)).collect();

            let mut selected = Vec::new();
            let mut i = 0;
            while i < generated.len() {
                let hit = words.iter().find(|w| {
                    generated.len() - i >= w.len() && w.iter().zip(&generated[i..]).all(|(a, b)| a == b)
                });
                match hit {
                    Some(w) => {
                        selected.extend(&trace.steps[i..i + w.len()]);
                        i += w.len();
                    }
                    None => i += 1,
                }
            }
            if selected.is_empty() {
                Err(Error::NoEmotionTokens)
            } else {
                Ok(selected)
            }
        }
    }
}

/// Sequence-level emotion logits: mean of per-step emotion vectors over the
/// selected steps.
pub fn aggregate_trace(trace: &LogitTrace, map: &EmotionTokenMap, scope: AggregationScope) -> Result<Vec<f64>> {
    let steps = select_steps(trace, map, scope)?;
    // running mean: a run of identical step vectors reproduces them exactly
    let mut mean = vec![0.0; map.len()];
    for (k, step) in steps.iter().enumerate() {
        let weight = (k + 1) as f64;
        for (m, z) in mean.iter_mut().zip(step_emotion_logits(step, map)?) {
            *m += (z - *m) / weight;
        }
    }
    Ok(mean)
}

pub fn logits_to_distribution(
    z: &[f64],
    policy: NormalizationPolicy,
    set: &EmotionSet,
) -> Result<EmotionDistribution> {
    if z.len() != set.len() {
        return Err(Error::LengthMismatch {
            expected: set.len(),
            got: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aggregated logits".into()));
    }
    match policy {
        NormalizationPolicy::PaperDivision => {
            let sum: f64 = z.iter().sum();
            if sum == 0.0 {
                return Ok(EmotionDistribution::invalid(InvalidReason::ZeroSum));
            }
            if sum < 0.0 || z.iter().any(|&v| v < 0.0) {
                return Ok(EmotionDistribution::invalid(InvalidReason::NegativeMass));
            }
            EmotionDistribution::from_values(z, set)
        }
        NormalizationPolicy::ShiftMinZero => {
            let min = z.iter().copied().fold(f64::INFINITY, f64::min);
            let shifted: Vec<f64> = z.iter().map(|v| v - min).collect();
            if shifted.iter().all(|&v| v == 0.0) {
                // all logits equal: no preference between classes
                return EmotionDistribution::from_values(&vec![1.0; z.len()], set);
            }
            EmotionDistribution::from_values(&shifted, set)
        }
        NormalizationPolicy::Softmax => {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            EmotionDistribution::from_values(&exps, set)
        }
    }
}

/// Full token-level route for one trace.
pub fn trace_distribution(
    trace: &LogitTrace,
    map: &EmotionTokenMap,
    scope: AggregationScope,
    policy: NormalizationPolicy,
    set: &EmotionSet,
) -> Result<EmotionDistribution> {
    let z = aggregate_trace(trace, map, scope)?;
    logits_to_distribution(&z, policy, set)
}
