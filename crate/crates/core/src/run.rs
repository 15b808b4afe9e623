//! Whole-corpus operations: evaluate, validate, synthesize.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ground_truth::{build_distribution, majority_index};
use crate::io::{read_annotations, read_responses, read_traces, Approach, CorpusManifest};
use crate::logits::{trace_distribution, AggregationScope, LogitTrace, NormalizationPolicy};
use crate::metrics::{accuracy_f1, bhattacharyya, kl_divergence, r2_detail, Bhattacharyya, F1Averaging, KlDirection};
use crate::par::Executor;
use crate::parser::{ResponseParser, TextResponse};
use crate::prompts::{find_builtin, PromptKind};
use crate::report::{
    CorpusMetrics, EvalReport, Exclusion, ExclusionReason, ExclusionStage, RunSettings, UtteranceResult,
    REPORT_FORMAT,
};
use crate::synth::{write_corpus, SynthOutput, SynthSpec, Synthesizer};
use crate::types::EmotionDistribution;

/// Records processed per parallel batch while streaming inputs.
pub const BATCH: usize = 4096;

/// Warnings kept verbatim in a report; the rest are counted.
pub const MAX_REPORT_WARNINGS: usize = 1000;

/// Overrides on top of the manifest's `[run]` and `[metrics]` sections.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub approach: Option<Approach>,
    pub scope: Option<AggregationScope>,
    pub normalization: Option<NormalizationPolicy>,
    pub prompt_id: Option<String>,
    pub strict: Option<bool>,
    pub kl_direction: Option<KlDirection>,
    pub epsilon: Option<f64>,
    pub f1_averaging: Option<F1Averaging>,
    pub condition: Option<String>,
}

struct Resolved {
    approach: Approach,
    scope: AggregationScope,
    normalization: NormalizationPolicy,
    prompt_id: Option<String>,
    strict: bool,
    settings: RunSettings,
}

fn resolve(m: &CorpusManifest, o: &EvalOptions) -> Result<Resolved> {
    let approach = o.approach.or(m.run.approach).unwrap_or(if m.traces.is_empty() {
        Approach::Text
    } else {
        Approach::Token
    });
    match approach {
        Approach::Token if m.traces.is_empty() => {
            return Err(Error::input(&m.path, "approach token needs trace files in the manifest"))
        }
        Approach::Text if m.responses.is_empty() => {
            return Err(Error::input(&m.path, "approach text needs response files in the manifest"))
        }
        _ => {}
    }
    let mut metrics = m.metrics;
    if let Some(d) = o.kl_direction {
        metrics.kl_direction = d;
    }
    if let Some(e) = o.epsilon {
        metrics.epsilon = e;
    }
    if let Some(f) = o.f1_averaging {
        metrics.f1_averaging = f;
    }
    metrics.validate()?;
    let scope = o.scope.or(m.run.scope).unwrap_or_default();
    let normalization = o.normalization.or(m.run.normalization).unwrap_or_default();
    let prompt_id = o.prompt_id.clone().or_else(|| m.run.prompt_id.clone());
    let token = approach == Approach::Token;
    Ok(Resolved {
        approach,
        scope,
        normalization,
        strict: o.strict.or(m.run.strict).unwrap_or(false),
        settings: RunSettings {
            approach,
            scope: token.then_some(scope),
            normalization: token.then_some(normalization),
            prompt_id: prompt_id.clone(),
            kl_direction: metrics.kl_direction,
            epsilon: metrics.epsilon,
            f1_averaging: metrics.f1_averaging,
        },
        prompt_id,
    })
}

struct GroundTruth {
    dist: EmotionDistribution,
    majority: Option<usize>,
}

#[derive(Clone, Debug)]
struct Prediction {
    /// `None` for single-label prompts.
    dist: Option<EmotionDistribution>,
    label: Option<usize>,
    failure: Option<ExclusionReason>,
}

struct Collector {
    strict: bool,
    warnings: Vec<String>,
}

impl Collector {
    /// Non-fatal problems become warnings, or errors in strict mode.
    fn soft(&mut self, e: Error) -> Result<()> {
        match e {
            Error::Record(_) if !self.strict => {
                log::warn!("{e}");
                self.warnings.push(e.to_string());
                Ok(())
            }
            e => Err(e),
        }
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Tracks the prompt id in use; mixing prompts without choosing one is fatal.
struct PromptFilter {
    chosen: Option<String>,
    explicit: bool,
    skipped: usize,
}

impl PromptFilter {
    fn accept(&mut self, prompt_id: &str, path: &Path) -> Result<bool> {
        match &self.chosen {
            Some(p) if p == prompt_id => Ok(true),
            Some(_) if self.explicit => {
                self.skipped += 1;
                Ok(false)
            }
            Some(p) => Err(Error::input(
                path,
                format!("records use several prompt ids ('{p}', '{prompt_id}'); choose one with --prompt-id"),
            )),
            None => {
                self.chosen = Some(prompt_id.to_string());
                Ok(true)
            }
        }
    }
}

fn insert_prediction(
    preds: &mut BTreeMap<String, Prediction>,
    id: String,
    p: Prediction,
    c: &mut Collector,
    path: &Path,
) -> Result<()> {
    if preds.contains_key(&id) {
        let msg = format!("{}: utterance '{id}' predicted twice; keeping the first", path.display());
        if c.strict {
            return Err(Error::input(path, msg));
        }
        c.warn(msg);
        return Ok(());
    }
    preds.insert(id, p);
    Ok(())
}

fn token_predictions(
    m: &CorpusManifest,
    r: &Resolved,
    exec: &Executor,
    filter: &mut PromptFilter,
    c: &mut Collector,
) -> Result<BTreeMap<String, Prediction>> {
    let map = m.token_map.as_ref().ok_or_else(|| Error::input(&m.path, "trace files need a token_map"))?;
    let mut preds = BTreeMap::new();
    for path in &m.traces {
        let mut reader = read_traces(path, map)?;
        loop {
            let mut batch: Vec<LogitTrace> = Vec::with_capacity(BATCH);
            for item in reader.by_ref() {
                match item {
                    Ok(t) => {
                        if filter.accept(&t.prompt_id, path)? {
                            batch.push(t);
                        }
                    }
                    Err(e) => c.soft(e)?,
                }
                if batch.len() == BATCH {
                    break;
                }
            }
            if batch.is_empty() {
                break;
            }
            let results = exec.map(&batch, |t| {
                match trace_distribution(t, map, r.scope, r.normalization, &m.set) {
                    Ok(d) => Ok(Prediction {
                        label: d.argmax().ok(),
                        failure: d.invalid_reason().map(Into::into),
                        dist: Some(d),
                    }),
                    Err(Error::NoEmotionTokens) => Ok(Prediction {
                        dist: None,
                        label: None,
                        failure: Some(ExclusionReason::NoEmotionTokens),
                    }),
                    Err(e) => Err(e),
                }
            });
            for (t, res) in batch.into_iter().zip(results) {
                insert_prediction(&mut preds, t.utterance.utterance_id, res?, c, path)?;
            }
        }
        for w in reader.take_warnings() {
            c.warnings.push(w.to_string());
        }
    }
    Ok(preds)
}

fn text_predictions(
    m: &CorpusManifest,
    exec: &Executor,
    filter: &mut PromptFilter,
    c: &mut Collector,
) -> Result<BTreeMap<String, Prediction>> {
    let parser = ResponseParser::new(&m.set, &m.synonyms);
    let mut preds = BTreeMap::new();
    for path in &m.responses {
        let mut reader = read_responses(path)?;
        loop {
            let mut batch: Vec<TextResponse> = Vec::with_capacity(BATCH);
            for item in reader.by_ref() {
                match item {
                    Ok(t) => {
                        if filter.accept(&t.prompt_id, path)? {
                            batch.push(t);
                        }
                    }
                    Err(e) => c.soft(e)?,
                }
                if batch.len() == BATCH {
                    break;
                }
            }
            if batch.is_empty() {
                break;
            }
            let results = exec.map(&batch, |resp| {
                let single = find_builtin(&resp.prompt_id).is_some_and(|t| t.kind == PromptKind::Single);
                if single {
                    let label = parser.parse_single_label(resp);
                    Prediction {
                        dist: None,
                        label,
                        failure: label.is_none().then_some(ExclusionReason::Unparseable),
                    }
                } else {
                    let out = parser.parse(resp);
                    Prediction {
                        label: out.distribution.argmax().ok(),
                        failure: out.distribution.invalid_reason().map(Into::into),
                        dist: Some(out.distribution),
                    }
                }
            });
            for (resp, p) in batch.into_iter().zip(results) {
                insert_prediction(&mut preds, resp.utterance.utterance_id, p, c, path)?;
            }
        }
    }
    Ok(preds)
}

fn ground_truth(m: &CorpusManifest, c: &mut Collector) -> Result<BTreeMap<String, GroundTruth>> {
    let mut gt = BTreeMap::new();
    let mut reader = read_annotations(&m.annotations, &m.set, &m.synonyms)?;
    for item in reader.by_ref() {
        match item {
            Ok(rec) => {
                let dist = build_distribution(&rec, &m.set)?;
                let majority = majority_index(&rec, &m.set);
                gt.insert(rec.utterance.utterance_id, GroundTruth { dist, majority });
            }
            Err(e) => c.soft(e)?,
        }
    }
    for w in reader.warnings() {
        c.warnings.push(w.to_string());
    }
    Ok(gt)
}

/// Runs one approach over the corpus and scores it against ground truth.
pub fn evaluate(m: &CorpusManifest, opts: &EvalOptions, exec: &Executor) -> Result<EvalReport> {
    let r = resolve(m, opts)?;
    let mut c = Collector {
        strict: r.strict,
        warnings: Vec::new(),
    };
    let gt = ground_truth(m, &mut c)?;
    let mut filter = PromptFilter {
        chosen: r.prompt_id.clone(),
        explicit: r.prompt_id.is_some(),
        skipped: 0,
    };
    let preds = match r.approach {
        Approach::Token => token_predictions(m, &r, exec, &mut filter, &mut c)?,
        Approach::Text => text_predictions(m, exec, &mut filter, &mut c)?,
    };
    if filter.skipped > 0 {
        log::info!("skipped {} records of other prompts", filter.skipped);
    }
    let universe: Vec<String> = if m.utterances.is_empty() {
        gt.keys().cloned().collect()
    } else {
        let mut ids: Vec<String> = m.utterances.iter().map(|u| u.utterance_id.clone()).collect();
        ids.sort();
        ids
    };
    let known: BTreeSet<&str> = universe.iter().map(String::as_str).collect();
    let orphans = preds.keys().filter(|k| !known.contains(k.as_str())).count();
    if orphans > 0 {
        c.warn(format!("{orphans} predictions have no ground truth and were ignored"));
    }
    if universe.is_empty() {
        return Err(Error::input(&m.annotations, "no usable ground-truth records"));
    }

    let cfg = r.settings.metric_config();
    let per_utterance: Vec<Result<UtteranceResult>> = exec.map(&universe, |id| {
        let g = gt.get(id);
        let p = preds.get(id);
        let mut res = UtteranceResult {
            utterance_id: id.clone(),
            ground_truth: g.map(|g| g.dist.probs().to_vec()),
            majority_label: g.and_then(|g| g.majority).map(|i| m.set.name(i).to_string()),
            predicted: p.and_then(|p| p.dist.as_ref()).filter(|d| d.is_valid()).map(|d| d.probs().to_vec()),
            predicted_label: p.and_then(|p| p.label).map(|i| m.set.name(i).to_string()),
            ..UtteranceResult::default()
        };
        res.excluded = match (g, p) {
            (None, _) => Some(ExclusionReason::MissingGroundTruth),
            (_, None) => Some(ExclusionReason::MissingPrediction),
            (_, Some(p)) => p.failure,
        };
        if let (Some(g), Some(Prediction { dist: Some(d), .. })) = (g, p) {
            if d.is_valid() {
                res.kl = Some(kl_divergence(&g.dist, d, &cfg)?);
                match bhattacharyya(&g.dist, d)? {
                    Bhattacharyya::Distance(v) => res.bd = Some(v),
                    Bhattacharyya::DisjointSupport => res.bd_disjoint = true,
                }
            }
        }
        Ok(res)
    });
    let per_utterance = per_utterance.into_iter().collect::<Result<Vec<_>>>()?;

    // sequential reduction in utterance-id order keeps results independent of
    // the worker count
    let has_distributions = preds.values().any(|p| p.dist.is_some());
    let mut exclusions = Vec::new();
    let mut kl_sum = 0.0;
    let mut bd_sum = 0.0;
    let (mut n_kl, mut n_bd, mut n_disjoint) = (0usize, 0usize, 0usize);
    let mut pairs = Vec::new();
    let mut pred_labels = BTreeMap::new();
    let mut gt_labels = BTreeMap::new();
    let mut n_label_excluded = 0;
    for res in &per_utterance {
        let id = &res.utterance_id;
        if has_distributions {
            match (res.excluded, res.kl) {
                (None, Some(kl)) => {
                    kl_sum += kl;
                    n_kl += 1;
                    let (g, p) = (&gt[id].dist, preds[id].dist.as_ref().expect("scored prediction"));
                    pairs.push((g, p));
                }
                (reason, _) => exclusions.push(Exclusion {
                    utterance_id: id.clone(),
                    stage: ExclusionStage::Distribution,
                    reason: reason.unwrap_or(ExclusionReason::MissingPrediction),
                }),
            }
            match res.bd {
                Some(bd) => {
                    bd_sum += bd;
                    n_bd += 1;
                }
                None if res.bd_disjoint => n_disjoint += 1,
                None => {}
            }
        }
        let label_gap = if res.predicted_label.is_none() {
            Some(res.excluded.unwrap_or(ExclusionReason::NoLabel))
        } else if res.majority_label.is_none() {
            Some(if gt.contains_key(id) {
                ExclusionReason::NoMajority
            } else {
                ExclusionReason::MissingGroundTruth
            })
        } else {
            None
        };
        match label_gap {
            Some(reason) => {
                n_label_excluded += 1;
                exclusions.push(Exclusion {
                    utterance_id: id.clone(),
                    stage: ExclusionStage::Label,
                    reason,
                });
            }
            None => {
                pred_labels.insert(id.clone(), res.predicted_label.clone().expect("checked"));
                gt_labels.insert(id.clone(), res.majority_label.clone().expect("checked"));
            }
        }
    }

    let n_total = per_utterance.len();
    let mut corpus = CorpusMetrics {
        n_total,
        n_label_excluded,
        n_bd_disjoint: n_disjoint,
        ..CorpusMetrics::default()
    };
    if has_distributions {
        corpus.n_evaluated = n_kl;
        corpus.n_excluded = n_total - n_kl;
        corpus.exclusion_rate = Some(corpus.n_excluded as f64 / n_total as f64);
        corpus.mean_kl = (n_kl > 0).then(|| kl_sum / n_kl as f64);
        corpus.mean_bd = (n_bd > 0).then(|| bd_sum / n_bd as f64);
        match r2_detail(pairs.iter().copied()) {
            Ok(r2) => {
                corpus.r2 = Some(r2.overall);
                corpus.r2_per_class = r2.per_class;
            }
            Err(e) => c.warn(format!("R² not reported: {e}")),
        }
    }
    corpus.n_label_evaluated = gt_labels.len();
    if !gt_labels.is_empty() {
        let scores = accuracy_f1(&pred_labels, &gt_labels, &m.set, &cfg)?;
        corpus.accuracy = Some(scores.accuracy);
        corpus.f1 = Some(scores.f1);
        corpus.per_class_f1 = scores.per_class_f1;
    } else {
        c.warn("accuracy and F1 not reported: no utterance has both labels".into());
    }

    let mut settings = r.settings;
    settings.prompt_id = filter.chosen.clone();
    let condition = opts.condition.clone().unwrap_or_else(|| default_condition(&settings));
    let mut warnings = c.warnings;
    if warnings.len() > MAX_REPORT_WARNINGS {
        let extra = warnings.len() - MAX_REPORT_WARNINGS;
        warnings.truncate(MAX_REPORT_WARNINGS);
        warnings.push(format!("... {extra} more warnings omitted"));
    }
    exclusions.sort();
    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        condition,
        corpus_id: m.corpus_id.clone(),
        emotions: m.set.classes().to_vec(),
        settings,
        corpus,
        per_utterance,
        exclusions,
        warnings,
    })
}

/// `approach:prompt`, plus the scope when it is not the default.
pub fn default_condition(s: &RunSettings) -> String {
    let prompt = s.prompt_id.as_deref().unwrap_or("no-prompt");
    match s.scope {
        Some(scope) if scope != AggregationScope::AllTokens => format!("{}:{prompt}:{scope}", s.approach),
        _ => format!("{}:{prompt}", s.approach),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileKind {
    Annotations,
    Traces,
    Responses,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileSummary {
    pub path: PathBuf,
    pub kind: FileKind,
    pub records: usize,
    pub errors: usize,
    pub warnings: usize,
    /// The first few problems, with line numbers.
    pub messages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationSummary {
    pub corpus_id: String,
    pub files: Vec<FileSummary>,
}

impl ValidationSummary {
    pub fn total_errors(&self) -> usize {
        self.files.iter().map(|f| f.errors).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("corpus {}\n", self.corpus_id);
        for f in &self.files {
            out.push_str(&format!(
                "{} ({:?}): {} records, {} errors, {} warnings\n",
                f.path.display(),
                f.kind,
                f.records,
                f.errors,
                f.warnings
            ));
            for msg in &f.messages {
                out.push_str(&format!("  {msg}\n"));
            }
        }
        out.push_str(&format!("total errors: {}\n", self.total_errors()));
        out
    }
}

const MAX_MESSAGES: usize = 20;

fn summarize<T, I>(path: &Path, kind: FileKind, items: I) -> Result<FileSummary>
where
    I: Iterator<Item = Result<T>>,
{
    let mut s = FileSummary {
        path: path.to_path_buf(),
        kind,
        records: 0,
        errors: 0,
        warnings: 0,
        messages: Vec::new(),
    };
    for item in items {
        match item {
            Ok(_) => s.records += 1,
            Err(e @ Error::Record(_)) => {
                s.errors += 1;
                if s.messages.len() < MAX_MESSAGES {
                    s.messages.push(e.to_string());
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(s)
}

/// Schema checks over every file a manifest names, without scoring.
pub fn validate(m: &CorpusManifest) -> Result<ValidationSummary> {
    let mut files = Vec::new();
    let mut reader = read_annotations(&m.annotations, &m.set, &m.synonyms)?;
    let mut s = summarize(&m.annotations, FileKind::Annotations, reader.by_ref())?;
    s.warnings = reader.warnings().len();
    files.push(s);
    if let Some(map) = &m.token_map {
        for path in &m.traces {
            let mut reader = read_traces(path, map)?;
            let mut s = summarize(path, FileKind::Traces, reader.by_ref())?;
            s.warnings = reader.warnings().len();
            files.push(s);
        }
    }
    for path in &m.responses {
        files.push(summarize(path, FileKind::Responses, read_responses(path)?)?);
    }
    Ok(ValidationSummary {
        corpus_id: m.corpus_id.clone(),
        files,
    })
}

/// Generates a corpus from a spec into `dir`.
pub fn synthesize(spec: SynthSpec, dir: &Path, exec: &Executor) -> Result<SynthOutput> {
    let synth = Synthesizer::new(spec)?;
    write_corpus(&synth, dir, exec)
}
