//! Shared domain types: the emotion class set, probability distributions over
//! it, utterance references and the emotion-word subword token map.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical class order used when no other set is configured.
pub const DEFAULT_EMOTIONS: [&str; 4] = ["anger", "happiness", "neutral", "sadness"];

/// Tolerance on the sum of a valid distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Ordered set of emotion classes. The order fixes vector indexing and
/// tie-breaking for the whole run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EmotionSet {
    classes: Vec<String>,
}

impl EmotionSet {
    pub fn new<I, S>(classes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let classes: Vec<String> = classes
            .into_iter()
            .map(|c| normalize_name(c.as_ref()))
            .collect();
        if classes.len() < 2 {
            return Err(Error::EmotionSet(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.is_empty() {
                return Err(Error::EmotionSet("empty class name".into()));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::EmotionSet(format!("duplicate class '{c}'")));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    /// Position of `name` (case-insensitive) in canonical order.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let name = normalize_name(name);
        self.classes.iter().position(|c| *c == name)
    }
}

impl Default for EmotionSet {
    fn default() -> Self {
        Self {
            classes: DEFAULT_EMOTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TryFrom<Vec<String>> for EmotionSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EmotionSet> for Vec<String> {
    fn from(s: EmotionSet) -> Self {
        s.classes
    }
}

pub(crate) fn normalize_name(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Why a distribution could not be formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidReason {
    Unparseable,
    ZeroSum,
    NegativeMass,
    MissingClasses,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidReason::Unparseable => "unparseable",
            InvalidReason::ZeroSum => "zero-sum",
            InvalidReason::NegativeMass => "negative-mass",
            InvalidReason::MissingClasses => "missing-classes",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "reason")]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

/// Probability vector aligned with an [`EmotionSet`].
///
/// Invalid distributions carry a reason and no usable probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionDistribution {
    probs: Vec<f64>,
    validity: Validity,
}

impl EmotionDistribution {
    /// Normalizes `values` by their sum. Negative entries or a non-positive
    /// sum give an invalid distribution; a wrong length is a hard error.
    pub fn from_values(values: &[f64], set: &EmotionSet) -> Result<Self> {
        if values.len() != set.len() {
            return Err(Error::LengthMismatch {
                expected: set.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distribution values".into()));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Ok(Self::invalid(InvalidReason::NegativeMass));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Ok(Self::invalid(InvalidReason::ZeroSum));
        }
        Ok(Self {
            probs: values.iter().map(|v| v / sum).collect(),
            validity: Validity::Valid,
        })
    }

    pub fn invalid(reason: InvalidReason) -> Self {
        Self {
            probs: Vec::new(),
            validity: Validity::Invalid(reason),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validity == Validity::Valid
    }

    pub fn validity(&self) -> Validity {
        self.validity
    }

    pub fn invalid_reason(&self) -> Option<InvalidReason> {
        match self.validity {
            Validity::Valid => None,
            Validity::Invalid(r) => Some(r),
        }
    }

    /// Probabilities; empty for invalid distributions.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn try_probs(&self) -> Result<&[f64]> {
        match self.validity {
            Validity::Valid => Ok(&self.probs),
            Validity::Invalid(r) => Err(Error::InvalidDistribution(r)),
        }
    }

    /// Index of the most probable class; ties go to the earliest class.
    pub fn argmax(&self) -> Result<usize> {
        let probs = self.try_probs()?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

pub fn make_distribution(values: &[f64], set: &EmotionSet) -> Result<EmotionDistribution> {
    EmotionDistribution::from_values(values, set)
}

/// Most likely class name, ties resolved by canonical set order.
pub fn argmax_label<'a>(d: &EmotionDistribution, set: &'a EmotionSet) -> Result<&'a str> {
    let i = d.argmax()?;
    if d.probs().len() != set.len() {
        return Err(Error::LengthMismatch {
            expected: set.len(),
            got: d.probs().len(),
        });
    }
    Ok(set.name(i))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UtteranceRef {
    pub utterance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
}

impl UtteranceRef {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            utterance_id: id.into(),
            audio_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subword {
    pub token: String,
    pub id: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionTokens {
    pub emotion: String,
    pub subwords: Vec<Subword>,
}

/// Subword tokenization of every emotion word, held in [`EmotionSet`] order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmotionTokenMap {
    entries: Vec<EmotionTokens>,
}

impl EmotionTokenMap {
    /// Validates `entries` against `set` and reorders them to canonical order.
    pub fn new(entries: Vec<EmotionTokens>, set: &EmotionSet) -> Result<Self> {
        let mut slots: Vec<Option<EmotionTokens>> = vec![None; set.len()];
        for mut e in entries {
            e.emotion = normalize_name(&e.emotion);
            let i = set
                .index_of(&e.emotion)
                .ok_or_else(|| Error::TokenMap(format!("'{}' is not in the emotion set", e.emotion)))?;
            if e.subwords.is_empty() {
                return Err(Error::TokenMap(format!("'{}' has no subword tokens", e.emotion)));
            }
            if slots[i].is_some() {
                return Err(Error::TokenMap(format!("duplicate entry for '{}'", e.emotion)));
            }
            slots[i] = Some(e);
        }
        let mut ids = HashSet::new();
        let mut tokens = HashSet::new();
        let mut out = Vec::with_capacity(set.len());
        for (i, slot) in slots.into_iter().enumerate() {
            let e = slot.ok_or_else(|| Error::TokenMap(format!("no entry for '{}'", set.name(i))))?;
            for sw in &e.subwords {
                if !ids.insert(sw.id) {
                    return Err(Error::TokenMap(format!("subword id {} used twice", sw.id)));
                }
                if !tokens.insert(sw.token.clone()) {
                    return Err(Error::TokenMap(format!("subword token '{}' used twice", sw.token)));
                }
            }
            out.push(e);
        }
        Ok(Self { entries: out })
    }

    pub fn entries(&self) -> &[EmotionTokens] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every subword token string, emotion by emotion.
    pub fn subword_tokens(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .flat_map(|e| e.subwords.iter().map(|s| s.token.as_str()))
    }

    pub fn total_subwords(&self) -> usize {
        self.entries.iter().map(|e| e.subwords.len()).sum()
    }
}
