//! Synthetic corpora with known answers.
//!
//! Each utterance draws a latent target distribution, `M` annotator labels
//! sampled from it, a logit trace and a text response. Traces are built by
//! inverse construction: the planted logits average back, through subword
//! and step means and division by the sum, to the planted target.
//!
//! Every utterance has its own random streams (`seed`, stream
//! `4 * u + purpose`), so any utterance can be regenerated alone and
//! generation order does not matter.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_truth::{build_distribution, AnnotationRecord};
use crate::io::{
    atomic_write, read_token_map, write_annotation_rows, write_line, write_manifest, write_token_map, ManifestFile,
    RunDefaults, ANNOTATION_HEADER,
};
use crate::logits::{LogitStep, LogitTrace};
use crate::metrics::MetricConfig;
use crate::par::Executor;
use crate::parser::{render_percentages, title_case, TextResponse};
use crate::prompts::AMBIGUOUS_PROMPT_ID;
use crate::types::{
    EmotionDistribution, EmotionSet, EmotionTokenMap, EmotionTokens, Subword, UtteranceRef, DEFAULT_EMOTIONS,
};

/// Planted logits are the target scaled by this constant.
pub const LOGIT_SCALE: f64 = 10.0;

const CHUNK: usize = 4096;

const LATENT: u64 = 0;
const ANNOTATION: u64 = 1;
const TRACE: u64 = 2;
const RESPONSE: u64 = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseStyle {
    /// "Class: P%" pairs in emotion-set order.
    #[default]
    Clean,
    /// The same pairs in a per-utterance random order.
    Shuffled,
    /// Clean responses, except that the given share is replaced by answers
    /// that yield no valid distribution.
    Malformed(f64),
}

/// What the traces and responses encode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plant {
    /// The distribution built from the sampled annotations, so a perfect
    /// pipeline scores exactly against ground truth.
    #[default]
    GroundTruth,
    /// The latent distribution the annotations were sampled from.
    Latent,
}

fn default_annotators() -> usize {
    3
}

fn default_true() -> bool {
    true
}

fn default_corpus_id() -> String {
    "synth".into()
}

fn default_prompt_id() -> String {
    AMBIGUOUS_PROMPT_ID.into()
}

fn default_emotions() -> Vec<String> {
    DEFAULT_EMOTIONS.map(String::from).to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_utterances: usize,
    /// Standard deviation of Gaussian noise added to every planted logit.
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub response_style: ResponseStyle,
    #[serde(default)]
    pub plant: Plant,
    #[serde(default = "default_annotators")]
    pub annotators: usize,
    /// Latent targets, cycled over utterances. Drawn uniformly from the
    /// simplex when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<Vec<f64>>,
    #[serde(default = "default_emotions")]
    pub emotions: Vec<String>,
    /// Token map file; a built-in tokenization is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_map: Option<PathBuf>,
    /// Spread subword logits within each emotion word.
    #[serde(default = "default_true")]
    pub jitter: bool,
    /// Vary the emotion logits from step to step.
    #[serde(default = "default_true")]
    pub step_spread: bool,
    #[serde(default = "default_corpus_id")]
    pub corpus_id: String,
    #[serde(default = "default_prompt_id")]
    pub prompt_id: String,
}

impl SynthSpec {
    pub fn new(seed: u64, n_utterances: usize) -> Self {
        Self {
            seed,
            n_utterances,
            noise_level: 0.0,
            response_style: ResponseStyle::Clean,
            plant: Plant::GroundTruth,
            annotators: default_annotators(),
            targets: Vec::new(),
            emotions: default_emotions(),
            token_map: None,
            jitter: true,
            step_spread: true,
            corpus_id: default_corpus_id(),
            prompt_id: default_prompt_id(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: SynthSpec = toml::from_str(&text).map_err(|e| Error::input(path, e.to_string()))?;
        if let Some(p) = &spec.token_map {
            if p.is_relative() {
                spec.token_map = Some(path.parent().unwrap_or(Path::new(".")).join(p));
            }
        }
        Ok(spec)
    }
}

/// Built-in subword split for the default classes; other names are cut
/// into three-letter pieces.
pub fn demo_token_map(set: &EmotionSet) -> EmotionTokenMap {
    let mut id = 1000;
    let entries = set
        .classes()
        .iter()
        .map(|c| {
            let pieces: Vec<String> = match c.as_str() {
                "anger" => vec!["ang".into(), "er".into()],
                "happiness" => vec!["h".into(), "app".into(), "iness".into()],
                "neutral" => vec!["ne".into(), "ut".into(), "ral".into()],
                "sadness" => vec!["sad".into(), "ness".into()],
                other => {
                    let chars: Vec<char> = other.chars().collect();
                    chars.chunks(3).map(|p| p.iter().collect()).collect()
                }
            };
            EmotionTokens {
                emotion: c.clone(),
                subwords: pieces
                    .into_iter()
                    .map(|token| {
                        id += 1;
                        Subword { token, id }
                    })
                    .collect(),
            }
        })
        .collect();
    EmotionTokenMap::new(entries, set).expect("three-letter pieces of distinct names are distinct")
}

/// Stand-in vocabulary ids for the non-emotion tokens of a response.
fn filler_id(token: &str) -> u32 {
    match token {
        "," => 11,
        ":" => 25,
        "%" => 4,
        t => {
            let (base, digit) = match t.strip_prefix('▁') {
                Some(d) => (40, d),
                None => (30, t),
            };
            base + digit.parse::<u32>().unwrap_or(9)
        }
    }
}

/// A validated spec, ready to generate from.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    spec: SynthSpec,
    set: EmotionSet,
    map: EmotionTokenMap,
    targets: Vec<EmotionDistribution>,
    malformed: Vec<bool>,
}

impl Synthesizer {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        let set = EmotionSet::new(&spec.emotions)?;
        if spec.n_utterances == 0 {
            return Err(Error::Config("n_utterances must be at least 1".into()));
        }
        if !(spec.noise_level.is_finite() && spec.noise_level >= 0.0) {
            return Err(Error::Config(format!("noise_level must be >= 0, got {}", spec.noise_level)));
        }
        if spec.annotators == 0 {
            return Err(Error::Config("annotators must be at least 1".into()));
        }
        let rate = match spec.response_style {
            ResponseStyle::Malformed(r) => r,
            _ => 0.0,
        };
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("malformed rate must lie in [0, 1], got {rate}")));
        }
        let targets = spec
            .targets
            .iter()
            .map(|t| {
                let d = EmotionDistribution::from_values(t, &set)?;
                if !d.is_valid() {
                    return Err(Error::Config(format!("target {t:?} is not a distribution")));
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()?;
        let map = match &spec.token_map {
            Some(p) => read_token_map(p, &set)?,
            None => demo_token_map(&set),
        };
        // an exact count, placed at seeded random positions
        let mut malformed = vec![false; spec.n_utterances];
        let count = (rate * spec.n_utterances as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(u64::MAX);
        for i in rand::seq::index::sample(&mut rng, spec.n_utterances, count) {
            malformed[i] = true;
        }
        Ok(Self {
            spec,
            set,
            map,
            targets,
            malformed,
        })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn set(&self) -> &EmotionSet {
        &self.set
    }

    pub fn token_map(&self) -> &EmotionTokenMap {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.spec.n_utterances
    }

    pub fn is_empty(&self) -> bool {
        self.spec.n_utterances == 0
    }

    pub fn is_malformed(&self, u: usize) -> bool {
        self.malformed[u]
    }

    pub fn n_malformed(&self) -> usize {
        self.malformed.iter().filter(|&&m| m).count()
    }

    pub fn utterance_id(&self, u: usize) -> String {
        let width = self.spec.n_utterances.saturating_sub(1).to_string().len().max(6);
        format!("{}-{u:0width$}", self.spec.corpus_id)
    }

    fn rng(&self, u: usize, purpose: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(4 * u as u64 + purpose);
        rng
    }

    pub fn latent_target(&self, u: usize) -> EmotionDistribution {
        if !self.targets.is_empty() {
            return self.targets[u % self.targets.len()].clone();
        }
        let mut rng = self.rng(u, LATENT);
        let draws: Vec<f64> = (0..self.set.len()).map(|_| Exp1.sample(&mut rng)).collect();
        EmotionDistribution::from_values(&draws, &self.set).expect("exponential draws are positive")
    }

    /// `M` annotators, each with one label drawn from the latent target.
    pub fn annotations(&self, u: usize) -> AnnotationRecord {
        let latent = self.latent_target(u);
        let pick = WeightedIndex::new(latent.probs()).expect("valid target has positive mass");
        let mut rng = self.rng(u, ANNOTATION);
        let labels: Vec<[&str; 1]> = (0..self.spec.annotators)
            .map(|_| [self.set.name(pick.sample(&mut rng))])
            .collect();
        AnnotationRecord::new(UtteranceRef::new(self.utterance_id(u)), labels, &self.set)
            .expect("sampled labels are in the set")
    }

    pub fn planted_target(&self, u: usize) -> EmotionDistribution {
        match self.spec.plant {
            Plant::GroundTruth => {
                build_distribution(&self.annotations(u), &self.set).expect("record built from the same set")
            }
            Plant::Latent => self.latent_target(u),
        }
    }

    /// Order in which classes are spoken in the response and trace text.
    fn class_order(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.set.len()).collect();
        if self.spec.response_style == ResponseStyle::Shuffled {
            order.shuffle(rng);
        }
        order
    }

    pub fn response(&self, u: usize) -> TextResponse {
        let target = self.planted_target(u);
        let mut rng = self.rng(u, RESPONSE);
        let order = self.class_order(&mut rng);
        let text = if self.malformed[u] {
            self.malformed_text(&mut rng, &order)
        } else {
            render_percentages(target.probs(), &self.set, &order)
        };
        TextResponse {
            utterance: UtteranceRef::new(self.utterance_id(u)),
            prompt_id: self.spec.prompt_id.clone(),
            text,
        }
    }

    fn malformed_text(&self, rng: &mut ChaCha8Rng, order: &[usize]) -> String {
        let listed = |values: &dyn Fn(usize) -> i64| {
            order
                .iter()
                .map(|&i| format!("{}: {}%", title_case(self.set.name(i)), values(i)))
                .collect::<Vec<_>>()
                .join(", ")
        };
        match rng.random_range(0..3) {
            0 => "I am unable to judge the emotional content of this recording.".to_string(),
            1 => listed(&|_| 0),
            _ => {
                let neg = order[0];
                listed(&|i| if i == neg { -20 } else { 40 })
            }
        }
    }

    /// Generated tokens mimicking "Anger: 65%, Happiness: 0%, ...", with
    /// a flag marking emotion-word subwords.
    fn tokens(&self, target: &EmotionDistribution, order: &[usize]) -> Vec<(String, u32, bool)> {
        let mut out = Vec::new();
        for (pos, &i) in order.iter().enumerate() {
            if pos > 0 {
                out.push((",".to_string(), filler_id(","), false));
            }
            for (k, sw) in self.map.entries()[i].subwords.iter().enumerate() {
                let text = if k == 0 { format!("▁{}", title_case(&sw.token)) } else { sw.token.clone() };
                out.push((text, sw.id, true));
            }
            out.push((":".to_string(), filler_id(":"), false));
            let pct = format!("{:.0}", target.probs()[i] * 100.0);
            for (d, ch) in pct.chars().enumerate() {
                let t = if d == 0 { format!("▁{ch}") } else { ch.to_string() };
                let id = filler_id(&t);
                out.push((t, id, false));
            }
            out.push(("%".to_string(), filler_id("%"), false));
        }
        out
    }

    pub fn trace(&self, u: usize) -> LogitTrace {
        let target = self.planted_target(u);
        let order = self.class_order(&mut self.rng(u, RESPONSE));
        let tokens = self.tokens(&target, &order);
        let mut rng = self.rng(u, TRACE);
        let n_steps = tokens.len();

        // step deviations come in +/- pairs within the emotion-word steps and
        // within the remaining steps, so both aggregation scopes average them out
        let groups: [Vec<usize>; 2] = [
            (0..n_steps).filter(|&j| tokens[j].2).collect(),
            (0..n_steps).filter(|&j| !tokens[j].2).collect(),
        ];
        let mut spread = vec![vec![0.0; n_steps]; self.set.len()];
        if self.spec.step_spread {
            for row in spread.iter_mut() {
                for g in &groups {
                    for pair in g.chunks_exact(2) {
                        let a = if rng.random_bool(0.5) { 0.25 } else { 0.5 };
                        row[pair[0]] = a;
                        row[pair[1]] = -a;
                    }
                }
            }
        }

        let noise = self.spec.noise_level;
        let steps = tokens
            .iter()
            .enumerate()
            .map(|(j, (text, id, _))| {
                let mut emotion_logits = BTreeMap::new();
                for (i, e) in self.map.entries().iter().enumerate() {
                    let level = LOGIT_SCALE * target.probs()[i];
                    let k = e.subwords.len();
                    let mut jitter = vec![0.0; k];
                    if self.spec.jitter {
                        for p in (0..k - k % 2).step_by(2) {
                            let b = if rng.random_bool(0.5) { 0.125 } else { 0.375 };
                            jitter[p] = b;
                            jitter[p + 1] = -b;
                        }
                    }
                    for (sw, dj) in e.subwords.iter().zip(&jitter) {
                        // zero targets stay exactly zero when noise is off
                        let mut z = level * (1.0 + spread[i][j] + dj);
                        if noise > 0.0 {
                            let n: f64 = StandardNormal.sample(&mut rng);
                            z += noise * n;
                        }
                        emotion_logits.insert(sw.token.clone(), z);
                    }
                }
                LogitStep {
                    index: j + 1,
                    token_text: text.clone(),
                    token_id: *id,
                    emotion_logits,
                }
            })
            .collect::<Vec<_>>();
        let generated_text = crate::logits::detokenize(&steps).trim().to_string();
        LogitTrace {
            utterance: UtteranceRef::new(self.utterance_id(u)),
            prompt_id: self.spec.prompt_id.clone(),
            generated_text,
            steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTarget {
    pub utterance_id: String,
    pub latent: Vec<f64>,
    pub planted: Vec<f64>,
    pub malformed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub annotations: PathBuf,
    pub traces: PathBuf,
    pub responses: PathBuf,
    pub token_map: PathBuf,
    pub targets: PathBuf,
    pub n_utterances: usize,
    pub n_malformed: usize,
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn jsonl_file<T, F>(path: &Path, synth: &Synthesizer, exec: &Executor, make: F) -> Result<()>
where
    T: Serialize + Send,
    F: Fn(usize) -> T + Sync + Send,
{
    atomic_write(path, |w| {
        for start in (0..synth.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(synth.len());
            for item in exec.map_range(start..end, &make) {
                write_line(w, path, &item)?;
            }
        }
        Ok(())
    })
}

/// Writes a complete corpus and its manifest into `dir`. Output bytes
/// depend only on the [`SynthSpec`], never on the executor.
pub fn write_corpus(synth: &Synthesizer, dir: &Path, exec: &Executor) -> Result<SynthOutput> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Write {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let out = SynthOutput {
        manifest: dir.join("manifest.toml"),
        annotations: dir.join("annotations.csv"),
        traces: dir.join("traces.jsonl"),
        responses: dir.join("responses.jsonl"),
        token_map: dir.join("token_map.json"),
        targets: dir.join("targets.jsonl"),
        n_utterances: synth.len(),
        n_malformed: synth.n_malformed(),
    };

    write_token_map(&out.token_map, synth.token_map())?;
    jsonl_file(&out.traces, synth, exec, |u| synth.trace(u))?;
    jsonl_file(&out.responses, synth, exec, |u| synth.response(u))?;
    jsonl_file(&out.targets, synth, exec, |u| PlantedTarget {
        utterance_id: synth.utterance_id(u),
        latent: synth.latent_target(u).probs().to_vec(),
        planted: synth.planted_target(u).probs().to_vec(),
        malformed: synth.is_malformed(u),
    })?;
    let path = &out.annotations;
    atomic_write(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(ANNOTATION_HEADER).map_err(write_err(path))?;
        for start in (0..synth.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(synth.len());
            for rec in exec.map_range(start..end, |u| synth.annotations(u)) {
                write_annotation_rows(&mut csv, &rec, synth.set()).map_err(write_err(path))?;
            }
        }
        csv.flush().map_err(|e| Error::Write {
            path: path.to_path_buf(),
            source: e,
        })
    })?;

    let manifest = ManifestFile {
        corpus_id: synth.spec().corpus_id.clone(),
        emotions: synth.set().classes().to_vec(),
        synonyms: BTreeMap::new(),
        token_map: Some("token_map.json".into()),
        annotations: "annotations.csv".into(),
        responses: vec!["responses.jsonl".into()],
        traces: vec!["traces.jsonl".into()],
        run: RunDefaults {
            prompt_id: Some(synth.spec().prompt_id.clone()),
            ..RunDefaults::default()
        },
        metrics: MetricConfig::default(),
        utterances: Vec::new(),
    };
    write_manifest(&out.manifest, &manifest)?;
    Ok(out)
}

/// Convenience for callers holding only an output sink.
pub fn write_traces_to<W: Write>(synth: &Synthesizer, w: &mut W) -> Result<()> {
    for u in 0..synth.len() {
        serde_json::to_writer(&mut *w, &synth.trace(u)).map_err(|e| Error::Serialize(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::Write {
            path: PathBuf::from("<stream>"),
            source: e,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logits::{aggregate_trace, trace_distribution, AggregationScope, NormalizationPolicy};
    use crate::parser::parse_response;

    fn latent(targets: Vec<Vec<f64>>, n: usize) -> SynthSpec {
        SynthSpec {
            targets,
            plant: Plant::Latent,
            ..SynthSpec::new(3, n)
        }
    }

    #[test]
    fn exact_recovery_with_a_zero_entry() {
        let s = Synthesizer::new(latent(vec![vec![0.5, 0.25, 0.25, 0.0]], 1)).unwrap();
        let t = s.trace(0);
        t.validate(s.token_map()).unwrap();
        assert!(t.text_matches());
        for scope in [AggregationScope::AllTokens, AggregationScope::EmotionWordTokens] {
            let d = trace_distribution(&t, s.token_map(), scope, NormalizationPolicy::PaperDivision, s.set()).unwrap();
            assert_eq!(d.probs()[3], 0.0);
            for (a, b) in d.probs().iter().zip([0.5, 0.25, 0.25, 0.0]) {
                assert!((a - b).abs() < 1e-15, "{:?}", d.probs());
            }
        }
    }

    #[test]
    fn uniform_without_variation_gives_flat_steps() {
        let spec = SynthSpec {
            jitter: false,
            step_spread: false,
            ..latent(vec![vec![0.25; 4]], 1)
        };
        let s = Synthesizer::new(spec).unwrap();
        let t = s.trace(0);
        let c = LOGIT_SCALE * 0.25;
        for step in &t.steps {
            assert!(step.emotion_logits.values().all(|&v| v == c));
        }
        assert_eq!(aggregate_trace(&t, s.token_map(), AggregationScope::AllTokens).unwrap(), vec![c; 4]);
    }

    #[test]
    fn subwords_are_jittered() {
        let s = Synthesizer::new(latent(vec![vec![0.4, 0.3, 0.2, 0.1]], 1)).unwrap();
        let t = s.trace(0);
        let step = &t.steps[0];
        assert_ne!(step.emotion_logits["ang"], step.emotion_logits["er"]);
        assert!(t.generated_text.starts_with("Anger: 40%, Happiness: 30%"), "{}", t.generated_text);
    }

    #[test]
    fn noisy_recovery_is_close_on_average() {
        // observed worst per-class error of the 100-trial mean: about 6e-6
        let target = [0.7, 0.1, 0.1, 0.1];
        let mut mean = [0.0; 4];
        let trials = 100;
        for seed in 0..trials {
            let spec = SynthSpec {
                seed,
                noise_level: 0.01,
                ..latent(vec![target.to_vec()], 1)
            };
            let s = Synthesizer::new(spec).unwrap();
            let d = trace_distribution(
                &s.trace(0),
                s.token_map(),
                AggregationScope::AllTokens,
                NormalizationPolicy::PaperDivision,
                s.set(),
            )
            .unwrap();
            for (m, p) in mean.iter_mut().zip(d.probs()) {
                *m += p / trials as f64;
            }
        }
        for (m, t) in mean.iter().zip(target) {
            assert!((m - t).abs() < 0.005, "{mean:?}");
        }
    }

    #[test]
    fn clean_responses_parse_back() {
        for style in [ResponseStyle::Clean, ResponseStyle::Shuffled] {
            let s = Synthesizer::new(SynthSpec {
                response_style: style,
                ..SynthSpec::new(11, 200)
            })
            .unwrap();
            for u in 0..s.len() {
                let out = parse_response(&s.response(u), s.set());
                let target = s.planted_target(u);
                for (a, b) in out.distribution.probs().iter().zip(target.probs()) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn malformed_share_is_exact() {
        let s = Synthesizer::new(SynthSpec {
            response_style: ResponseStyle::Malformed(0.021),
            ..SynthSpec::new(5, 1000)
        })
        .unwrap();
        assert_eq!(s.n_malformed(), 21);
        let bad = (0..s.len())
            .filter(|&u| !parse_response(&s.response(u), s.set()).distribution.is_valid())
            .count();
        assert_eq!(bad, 21);
    }

    #[test]
    fn one_hot_target_gives_unanimous_annotators() {
        let s = Synthesizer::new(latent(vec![vec![0.0, 0.0, 1.0, 0.0]], 20)).unwrap();
        for u in 0..s.len() {
            let rec = s.annotations(u);
            assert!(rec.labels().iter().all(|l| l.iter().eq([2].iter())));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = Synthesizer::new(SynthSpec::new(9, 50)).unwrap();
        let b = Synthesizer::new(SynthSpec::new(9, 50)).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_traces_to(&a, &mut x).unwrap();
        write_traces_to(&b, &mut y).unwrap();
        assert_eq!(x, y);
        let c = Synthesizer::new(SynthSpec::new(10, 50)).unwrap();
        let mut z = Vec::new();
        write_traces_to(&c, &mut z).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn spec_checks() {
        assert!(Synthesizer::new(SynthSpec::new(1, 0)).is_err());
        let bad_rate = SynthSpec {
            response_style: ResponseStyle::Malformed(1.5),
            ..SynthSpec::new(1, 10)
        };
        assert!(Synthesizer::new(bad_rate).is_err());
        assert!(Synthesizer::new(latent(vec![vec![0.5, 0.5]], 3)).is_err());
        let spec: SynthSpec =
            toml::from_str("seed = 1\nn_utterances = 5\nresponse_style = { malformed = 0.1 }\n").unwrap();
        assert_eq!(spec.response_style, ResponseStyle::Malformed(0.1));
    }
}
