//! Evaluation reports and side-by-side comparison of several reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, Approach};
use crate::logits::{AggregationScope, NormalizationPolicy};
use crate::metrics::{F1Averaging, KlDirection, MetricConfig};
use crate::types::InvalidReason;

pub const REPORT_FORMAT: &str = "emodist-report/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub approach: Approach,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<AggregationScope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationPolicy>,
    #[serde(default)]
    pub prompt_id: Option<String>,
    pub kl_direction: KlDirection,
    pub epsilon: f64,
    pub f1_averaging: F1Averaging,
}

impl RunSettings {
    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            kl_direction: self.kl_direction,
            epsilon: self.epsilon,
            f1_averaging: self.f1_averaging,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionStage {
    /// Left out of KL, BD and R².
    Distribution,
    /// Left out of accuracy and F1.
    Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    Unparseable,
    ZeroSum,
    NegativeMass,
    MissingClasses,
    NoEmotionTokens,
    MissingPrediction,
    MissingGroundTruth,
    NoMajority,
    NoLabel,
}

impl From<InvalidReason> for ExclusionReason {
    fn from(r: InvalidReason) -> Self {
        match r {
            InvalidReason::Unparseable => ExclusionReason::Unparseable,
            InvalidReason::ZeroSum => ExclusionReason::ZeroSum,
            InvalidReason::NegativeMass => ExclusionReason::NegativeMass,
            InvalidReason::MissingClasses => ExclusionReason::MissingClasses,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub utterance_id: String,
    pub stage: ExclusionStage,
    pub reason: ExclusionReason,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub mean_kl: Option<f64>,
    pub mean_bd: Option<f64>,
    pub r2: Option<f64>,
    pub r2_per_class: Vec<Option<f64>>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub per_class_f1: Vec<f64>,
    /// Share of utterances with no usable predicted distribution.
    pub exclusion_rate: Option<f64>,
    pub n_total: usize,
    pub n_evaluated: usize,
    pub n_excluded: usize,
    /// Pairs with disjoint support, left out of `mean_bd`.
    pub n_bd_disjoint: usize,
    pub n_label_evaluated: usize,
    pub n_label_excluded: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub utterance_id: String,
    pub predicted: Option<Vec<f64>>,
    pub ground_truth: Option<Vec<f64>>,
    pub kl: Option<f64>,
    pub bd: Option<f64>,
    #[serde(default)]
    pub bd_disjoint: bool,
    pub predicted_label: Option<String>,
    pub majority_label: Option<String>,
    pub excluded: Option<ExclusionReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub condition: String,
    pub corpus_id: String,
    pub emotions: Vec<String>,
    pub settings: RunSettings,
    pub corpus: CorpusMetrics,
    pub per_utterance: Vec<UtteranceResult>,
    pub exclusions: Vec<Exclusion>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = self.to_json()?;
        atomic_write(path, |w| {
            w.write_all(json.as_bytes()).map_err(|e| Error::Write {
                path: path.to_path_buf(),
                source: e,
            })
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::input(path, format!("not a report: {e}")))?;
        if report.format != REPORT_FORMAT {
            return Err(Error::input(
                path,
                format!("unsupported report format '{}', expected '{REPORT_FORMAT}'", report.format),
            ));
        }
        Ok(report)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Kl,
    Bd,
    R2,
    Accuracy,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Kl, Metric::Bd, Metric::R2, Metric::Accuracy, Metric::F1];

    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Kl | Metric::Bd)
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Kl => "KL",
            Metric::Bd => "BD",
            Metric::R2 => "R2",
            Metric::Accuracy => "Accuracy",
            Metric::F1 => "F1",
        }
    }
}

/// Improvement of `value` over `base` in percent, signed so that positive
/// always means better.
pub fn relative_improvement(metric: Metric, base: f64, value: f64) -> Option<f64> {
    if base == 0.0 || !base.is_finite() || !value.is_finite() {
        return None;
    }
    let gain = if metric.lower_is_better() { base - value } else { value - base };
    Some(100.0 * gain / base.abs())
}

/// Externally published numbers, supplied by the user for context.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRow {
    pub condition: String,
    #[serde(default)]
    pub kl: Option<f64>,
    #[serde(default)]
    pub bd: Option<f64>,
    #[serde(default)]
    pub r2: Option<f64>,
    #[serde(default)]
    pub accuracy: Option<f64>,
    #[serde(default)]
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineFile {
    #[serde(default)]
    pub row: Vec<BaselineRow>,
}

impl BaselineFile {
    pub fn read(path: &Path) -> Result<Vec<BaselineRow>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: BaselineFile = toml::from_str(&text).map_err(|e| Error::input(path, e.to_string()))?;
        Ok(f.row)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: String,
    /// `false` for rows taken from a user baseline file.
    pub measured: bool,
    pub prompt_id: Option<String>,
    pub kl: Option<f64>,
    pub bd: Option<f64>,
    pub r2: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub exclusion_rate: Option<f64>,
}

impl ComparisonRow {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Kl => self.kl,
            Metric::Bd => self.bd,
            Metric::R2 => self.r2,
            Metric::Accuracy => self.accuracy,
            Metric::F1 => self.f1,
        }
    }

    fn from_report(r: &EvalReport) -> Self {
        Self {
            condition: r.condition.clone(),
            measured: true,
            prompt_id: r.settings.prompt_id.clone(),
            kl: r.corpus.mean_kl,
            bd: r.corpus.mean_bd,
            r2: r.corpus.r2,
            accuracy: r.corpus.accuracy,
            f1: r.corpus.f1,
            exclusion_rate: r.corpus.exclusion_rate,
        }
    }

    fn from_baseline(b: &BaselineRow) -> Self {
        Self {
            condition: b.condition.clone(),
            measured: false,
            prompt_id: None,
            kl: b.kl,
            bd: b.bd,
            r2: b.r2,
            accuracy: b.accuracy,
            f1: b.f1,
            exclusion_rate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub condition: String,
    pub metric: Metric,
    /// Percent; positive means better than the reference.
    pub relative_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub emotions: Vec<String>,
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
    pub improvements: Vec<Improvement>,
}

/// Lines up reports (and optional baseline rows) by condition. The
/// reference condition defaults to the first report.
pub fn compare(reports: &[EvalReport], baseline: &[BaselineRow], reference: Option<&str>) -> Result<Comparison> {
    if reports.len() + baseline.len() < 2 {
        return Err(Error::Config("comparison needs at least two conditions".into()));
    }
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("comparison needs at least one report".into()))?;
    for r in &reports[1..] {
        if r.emotions != first.emotions {
            return Err(Error::Config(format!(
                "report '{}' uses emotions [{}] but '{}' uses [{}]",
                r.condition,
                r.emotions.join(", "),
                first.condition,
                first.emotions.join(", ")
            )));
        }
    }
    let rows: Vec<ComparisonRow> = reports
        .iter()
        .map(ComparisonRow::from_report)
        .chain(baseline.iter().map(ComparisonRow::from_baseline))
        .collect();
    let mut seen = BTreeSet::new();
    for r in &rows {
        if !seen.insert(r.condition.as_str()) {
            return Err(Error::Config(format!("condition label '{}' appears twice", r.condition)));
        }
    }
    let reference = reference.unwrap_or(&first.condition).to_string();
    let base = rows
        .iter()
        .find(|r| r.condition == reference)
        .ok_or_else(|| Error::Config(format!("reference condition '{reference}' not found")))?;
    let improvements = rows
        .iter()
        .filter(|r| r.condition != reference)
        .flat_map(|r| {
            Metric::ALL.iter().map(move |&m| Improvement {
                condition: r.condition.clone(),
                metric: m,
                relative_pct: match (base.get(m), r.get(m)) {
                    (Some(b), Some(v)) => relative_improvement(m, b, v),
                    _ => None,
                },
            })
        })
        .collect();
    Ok(Comparison {
        emotions: first.emotions.clone(),
        reference,
        rows,
        improvements,
    })
}

impl Comparison {
    pub fn improvement(&self, condition: &str, metric: Metric) -> Option<f64> {
        self.improvements
            .iter()
            .find(|i| i.condition == condition && i.metric == metric)
            .and_then(|i| i.relative_pct)
    }

    /// Metrics as rows, conditions as columns, then relative improvements.
    pub fn to_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut header = vec!["metric".to_string()];
        header.extend(self.rows.iter().map(|r| {
            if r.measured {
                r.condition.clone()
            } else {
                format!("{} (external)", r.condition)
            }
        }));
        let mut lines = vec![header];
        for m in Metric::ALL {
            let mut line = vec![m.label().to_string()];
            line.extend(self.rows.iter().map(|r| fmt_opt(r.get(m))));
            lines.push(line);
        }
        let mut line = vec!["Excluded".to_string()];
        line.extend(
            self.rows
                .iter()
                .map(|r| r.exclusion_rate.map_or_else(|| "-".into(), |v| format!("{:.2}%", v * 100.0))),
        );
        lines.push(line);

        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }

        let others: Vec<&ComparisonRow> = self.rows.iter().filter(|r| r.condition != self.reference).collect();
        if !others.is_empty() {
            let _ = writeln!(out, "\nrelative improvement over {}:", self.reference);
            for r in others {
                let parts: Vec<String> = Metric::ALL
                    .iter()
                    .filter_map(|&m| self.improvement(&r.condition, m).map(|v| format!("{} {v:+.2}%", m.label())))
                    .collect();
                let body = if parts.is_empty() { "-".to_string() } else { parts.join(", ") };
                let _ = writeln!(out, "  {}: {body}", r.condition);
            }
        }
        out
    }

    /// Long format, one `(condition, metric)` pair per line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ser = |e: csv::Error| Error::Serialize(e.to_string());
        w.write_record(["condition", "measured", "metric", "value", "relative_improvement_pct"])
            .map_err(ser)?;
        for r in &self.rows {
            for m in Metric::ALL {
                let value = r.get(m).map(|v| v.to_string()).unwrap_or_default();
                let rel = self.improvement(&r.condition, m).map(|v| v.to_string()).unwrap_or_default();
                w.write_record([r.condition.as_str(), &r.measured.to_string(), m.label(), &value, &rel])
                    .map_err(ser)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
    }
}
