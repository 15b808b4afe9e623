//! Prompt templates for distribution and single-label elicitation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parser::title_case;
use crate::types::EmotionSet;

pub const PLACEHOLDER: &str = "{emotion_list}";
pub const AMBIGUOUS_PROMPT_ID: &str = "paper-ambiguous-v1";
pub const SINGLE_PROMPT_ID: &str = "paper-single-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Ambiguous,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptComponent {
    DistributionPrediction,
    LogicalReasoning,
    OutputConstraints,
    SingleLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ListStyle {
    /// "a, b, and c"
    Prose,
    /// "[a, b, c]"
    Bracketed,
}

/// How the class list is spelled inside a template.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListFormat {
    pub style: ListStyle,
    pub title_case: bool,
    /// Preferred order; classes not listed follow in set order.
    pub order: Vec<String>,
    /// Per-class wording, e.g. anger -> "Angry".
    pub surface: BTreeMap<String, String>,
}

impl ListFormat {
    pub fn prose() -> Self {
        Self {
            style: ListStyle::Prose,
            title_case: false,
            order: Vec::new(),
            surface: BTreeMap::new(),
        }
    }

    pub fn render(&self, set: &EmotionSet) -> String {
        let mut classes: Vec<&str> = self
            .order
            .iter()
            .filter(|c| set.index_of(c).is_some())
            .map(String::as_str)
            .collect();
        for c in set.classes() {
            if !classes.contains(&c.as_str()) {
                classes.push(c);
            }
        }
        let words: Vec<String> = classes
            .iter()
            .map(|c| match self.surface.get(*c) {
                Some(s) => s.clone(),
                None if self.title_case => title_case(c),
                None => c.to_string(),
            })
            .collect();
        match self.style {
            ListStyle::Bracketed => format!("[{}]", words.join(", ")),
            ListStyle::Prose => match words.as_slice() {
                [] => String::new(),
                [one] => one.clone(),
                [a, b] => format!("{a} and {b}"),
                [init @ .., last] => format!("{}, and {last}", init.join(", ")),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub prompt_id: String,
    pub kind: PromptKind,
    pub text: String,
    pub components: BTreeSet<PromptComponent>,
    pub list: ListFormat,
}

impl PromptTemplate {
    pub fn new(
        prompt_id: impl Into<String>,
        kind: PromptKind,
        text: impl Into<String>,
        components: impl IntoIterator<Item = PromptComponent>,
        list: ListFormat,
    ) -> Result<Self> {
        let t = Self {
            prompt_id: prompt_id.into(),
            kind,
            text: text.into(),
            components: components.into_iter().collect(),
            list,
        };
        let required: &[PromptComponent] = match kind {
            PromptKind::Ambiguous => &[PromptComponent::DistributionPrediction, PromptComponent::LogicalReasoning],
            PromptKind::Single => &[PromptComponent::SingleLabel],
        };
        if let Some(c) = required.iter().find(|c| !t.components.contains(c)) {
            return Err(Error::Config(format!(
                "template '{}' of kind {:?} must declare {:?}",
                t.prompt_id, kind, c
            )));
        }
        Ok(t)
    }

    pub fn render(&self, set: &EmotionSet) -> Result<String> {
        render(self, set)
    }
}

pub fn render(t: &PromptTemplate, set: &EmotionSet) -> Result<String> {
    if !t.text.contains(PLACEHOLDER) {
        return Err(Error::MissingPlaceholder(t.prompt_id.clone()));
    }
    Ok(t.text.replace(PLACEHOLDER, &t.list.render(set)))
}

pub fn builtin_templates() -> Vec<PromptTemplate> {
    let ambiguous = PromptTemplate::new(
        AMBIGUOUS_PROMPT_ID,
        PromptKind::Ambiguous,
        "Provide the likelihood (in percentages) that this audio represents each of the following \
         emotions: {emotion_list}. Use logical reasoning to determine the percentages, but do not \
         include this reasoning in your response.",
        [
            PromptComponent::DistributionPrediction,
            PromptComponent::LogicalReasoning,
            PromptComponent::OutputConstraints,
        ],
        ListFormat {
            order: ["anger", "happiness", "sadness", "neutral"].map(String::from).to_vec(),
            ..ListFormat::prose()
        },
    )
    .expect("builtin ambiguous template");

    let single = PromptTemplate::new(
        SINGLE_PROMPT_ID,
        PromptKind::Single,
        "You are an expert in identifying emotions from speech. Predict the emotion of the audio \
         from the choices {emotion_list}. Respond with only one of the emotion labels.",
        [PromptComponent::SingleLabel],
        ListFormat {
            style: ListStyle::Bracketed,
            title_case: true,
            order: ["happiness", "sadness", "neutral", "anger"].map(String::from).to_vec(),
            surface: [("anger".to_string(), "Angry".to_string())].into_iter().collect(),
        },
    )
    .expect("builtin single template");

    vec![ambiguous, single]
}

pub fn find_builtin(prompt_id: &str) -> Option<PromptTemplate> {
    builtin_templates().into_iter().find(|t| t.prompt_id == prompt_id)
}

/// Writes each built-in template, rendered for `set`, to `<dir>/<prompt_id>.txt`.
pub fn export_templates(dir: &Path, set: &EmotionSet) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Write {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();
    for t in builtin_templates() {
        let path = dir.join(format!("{}.txt", t.prompt_id));
        fs::write(&path, render(&t, set)?).map_err(|e| Error::Write {
            path: path.clone(),
            source: e,
        })?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_registry() {
        let ts = builtin_templates();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].prompt_id, AMBIGUOUS_PROMPT_ID);
        assert_eq!(ts[1].prompt_id, SINGLE_PROMPT_ID);
        let set = EmotionSet::default();
        assert!(render(&ts[0], &set).unwrap().contains("Use logical reasoning to determine the percentages"));
        assert!(render(&ts[1], &set).unwrap().contains("Predict the emotion of the audio from the choices"));
        assert!(render(&ts[1], &set).unwrap().contains("[Happiness, Sadness, Neutral, Angry]"));
        assert!(render(&ts[0], &set)
            .unwrap()
            .ends_with("do not include this reasoning in your response."));
    }

    #[test]
    fn list_joining() {
        let two = EmotionSet::new(["calm", "tense"]).unwrap();
        assert_eq!(ListFormat::prose().render(&two), "calm and tense");
        let three = EmotionSet::new(["a", "b", "c"]).unwrap();
        assert_eq!(ListFormat::prose().render(&three), "a, b, and c");
        let t = &builtin_templates()[0];
        assert!(render(t, &two).unwrap().contains("emotions: calm and tense."));
    }

    #[test]
    fn render_is_stable() {
        let set = EmotionSet::default();
        for t in builtin_templates() {
            assert_eq!(render(&t, &set).unwrap(), render(&t, &set).unwrap());
        }
    }

    #[test]
    fn template_rules() {
        let no_placeholder = PromptTemplate::new(
            "x",
            PromptKind::Single,
            "Name the emotion.",
            [PromptComponent::SingleLabel],
            ListFormat::prose(),
        )
        .unwrap();
        assert!(matches!(
            render(&no_placeholder, &EmotionSet::default()),
            Err(Error::MissingPlaceholder(_))
        ));
        let r = PromptTemplate::new(
            "y",
            PromptKind::Ambiguous,
            "{emotion_list}",
            [PromptComponent::DistributionPrediction],
            ListFormat::prose(),
        );
        assert!(r.is_err());
    }
}
