//! Text-level route: reads emotion percentages out of a generated response.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{normalize_name, EmotionDistribution, EmotionSet, InvalidReason, UtteranceRef};

/// Raw percentages may drift this far from 100 before the outcome counts as
/// renormalized.
pub const PERCENT_SUM_TOLERANCE: f64 = 0.5;

/// Largest number accepted as a percentage; bigger values are treated as
/// years, IDs and the like.
pub const MAX_PERCENT_VALUE: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextResponse {
    #[serde(flatten)]
    pub utterance: UtteranceRef,
    pub prompt_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseOutcome {
    pub distribution: EmotionDistribution,
    /// Values as read, keyed by canonical class name.
    pub raw_percentages: BTreeMap<String, f64>,
    pub normalized: bool,
}

/// Surface forms that name each class, e.g. "angry" for anger. Class names
/// themselves always match.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymTable {
    entries: BTreeMap<String, String>,
}

impl SynonymTable {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, surface: &str, class: &str) {
        self.entries.insert(normalize_name(surface), normalize_name(class));
    }

    pub fn extend(&mut self, other: &SynonymTable) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.entries.get(&normalize_name(surface)).map(String::as_str)
    }

    /// Every surface form mapped to its class index in `set`, including the
    /// class names. Synonyms for classes outside `set` are dropped.
    fn surfaces(&self, set: &EmotionSet) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = set
            .classes()
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        for (surface, class) in &self.entries {
            if let Some(i) = set.index_of(class) {
                if !out.iter().any(|(s, _)| s == surface) {
                    out.push((surface.clone(), i));
                }
            }
        }
        out
    }
}

impl Default for SynonymTable {
    fn default() -> Self {
        let mut t = Self::empty();
        for (s, c) in [
            ("angry", "anger"),
            ("happy", "happiness"),
            ("neutrality", "neutral"),
            ("sad", "sadness"),
        ] {
            t.insert(s, c);
        }
        t
    }
}

/// Compiled matcher for one emotion set and synonym table.
#[derive(Clone, Debug)]
pub struct ResponseParser {
    set: EmotionSet,
    surfaces: BTreeMap<String, usize>,
    pair: Regex,
    word: Regex,
    require_all_classes: bool,
}

impl ResponseParser {
    pub fn new(set: &EmotionSet, synonyms: &SynonymTable) -> Self {
        let mut surfaces = synonyms.surfaces(set);
        // longest first so alternation prefers "sadness" over "sad"
        surfaces.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        let words = surfaces
            .iter()
            .map(|(s, _)| regex::escape(s))
            .collect::<Vec<_>>()
            .join("|");
        let pair = Regex::new(&format!(
            r"(?i)\b({words})\b[ \t]*(?:[:=(][ \t]*|[-–][ \t]+|(?:is|at|of)[ \t]+)?(-)?(\d+(?:\.\d+)?)"
        ))
        .expect("pair pattern");
        let word = Regex::new(&format!(r"(?i)\b({words})\b")).expect("word pattern");
        Self {
            set: set.clone(),
            surfaces: surfaces.into_iter().collect(),
            pair,
            word,
            require_all_classes: false,
        }
    }

    /// Treat responses that omit any class as invalid (`missing-classes`)
    /// instead of filling the gaps with zero.
    pub fn require_all_classes(mut self, yes: bool) -> Self {
        self.require_all_classes = yes;
        self
    }

    pub fn set(&self) -> &EmotionSet {
        &self.set
    }

    fn class_of(&self, surface: &str) -> usize {
        self.surfaces[&surface.to_lowercase()]
    }

    pub fn parse(&self, r: &TextResponse) -> ParseOutcome {
        let n = self.set.len();
        let mut found: Vec<Option<f64>> = vec![None; n];
        for cap in self.pair.captures_iter(&r.text) {
            let value: f64 = match cap[3].parse() {
                Ok(v) => v,
                Err(_) => continue,
            };
            if value > MAX_PERCENT_VALUE {
                continue;
            }
            let value = if cap.get(2).is_some() { -value } else { value };
            // later mentions overwrite earlier ones
            found[self.class_of(&cap[1])] = Some(value);
        }

        let raw_percentages: BTreeMap<String, f64> = found
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (self.set.name(i).to_string(), v)))
            .collect();

        let invalid = |reason| ParseOutcome {
            distribution: EmotionDistribution::invalid(reason),
            raw_percentages: raw_percentages.clone(),
            normalized: false,
        };

        if raw_percentages.is_empty() {
            return invalid(InvalidReason::Unparseable);
        }
        if self.require_all_classes && found.iter().any(Option::is_none) {
            return invalid(InvalidReason::MissingClasses);
        }
        let values: Vec<f64> = found.iter().map(|v| v.unwrap_or(0.0)).collect();
        let distribution = EmotionDistribution::from_values(&values, &self.set)
            .expect("values are finite and sized to the set");
        let total: f64 = values.iter().sum();
        let normalized = distribution.is_valid() && (total - 100.0).abs() > PERCENT_SUM_TOLERANCE;
        ParseOutcome {
            distribution,
            raw_percentages,
            normalized,
        }
    }

    /// First class named in the text, by word-boundary match.
    pub fn parse_single_label(&self, r: &TextResponse) -> Option<usize> {
        self.word.find(&r.text).map(|m| self.class_of(m.as_str()))
    }
}

pub fn parse_response(r: &TextResponse, set: &EmotionSet) -> ParseOutcome {
    ResponseParser::new(set, &SynonymTable::default()).parse(r)
}

pub fn parse_single_label<'a>(r: &TextResponse, set: &'a EmotionSet) -> Option<&'a str> {
    ResponseParser::new(set, &SynonymTable::default())
        .parse_single_label(r)
        .map(|i| set.name(i))
}

/// Fraction of outcomes whose distribution is invalid.
pub fn exclusion_rate(outcomes: &[ParseOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty("no parse outcomes".into()));
    }
    let bad = outcomes.iter().filter(|o| !o.distribution.is_valid()).count();
    Ok(bad as f64 / outcomes.len() as f64)
}

pub(crate) fn title_case(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Renders `probs` as "Class: P%" pairs in the given class order.
pub fn render_percentages(probs: &[f64], set: &EmotionSet, order: &[usize]) -> String {
    order
        .iter()
        .map(|&i| format!("{}: {:.6}%", title_case(set.name(i)), probs[i] * 100.0))
        .collect::<Vec<_>>()
        .join(", ")
}
