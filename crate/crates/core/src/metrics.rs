//! Distribution-level metrics (KL, Bhattacharyya distance, R²) and
//! single-label metrics (accuracy, F1).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::kebab_enum;
use crate::types::{EmotionDistribution, EmotionSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// KL(ground truth ‖ prediction)
    #[default]
    GtToPred,
    /// KL(prediction ‖ ground truth)
    PredToGt,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Averaging {
    #[default]
    Macro,
    Weighted,
}

kebab_enum!(KlDirection {
    KlDirection::GtToPred => "gt-to-pred",
    KlDirection::PredToGt => "pred-to-gt",
});

kebab_enum!(F1Averaging {
    F1Averaging::Macro => "macro",
    F1Averaging::Weighted => "weighted",
});

pub const DEFAULT_EPSILON: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub kl_direction: KlDirection,
    /// Added to every entry before KL, followed by renormalization.
    pub epsilon: f64,
    pub f1_averaging: F1Averaging,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            kl_direction: KlDirection::default(),
            epsilon: DEFAULT_EPSILON,
            f1_averaging: F1Averaging::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1e-3) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1e-3), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn both_probs<'a>(
    p: &'a EmotionDistribution,
    q: &'a EmotionDistribution,
) -> Result<(&'a [f64], &'a [f64])> {
    let (a, b) = (p.try_probs()?, q.try_probs()?);
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok((a, b))
}

fn smooth(p: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = p.iter().map(|v| v + eps).sum();
    p.iter().map(|v| (v + eps) / total).collect()
}

/// KL divergence between ground truth `gt` and prediction `pred` after
/// epsilon smoothing, oriented by `cfg.kl_direction`.
pub fn kl_divergence(gt: &EmotionDistribution, pred: &EmotionDistribution, cfg: &MetricConfig) -> Result<f64> {
    let (p, q) = both_probs(gt, pred)?;
    let (p, q) = (smooth(p, cfg.epsilon), smooth(q, cfg.epsilon));
    let (a, b) = match cfg.kl_direction {
        KlDirection::GtToPred => (p, q),
        KlDirection::PredToGt => (q, p),
    };
    let kl: f64 = a.iter().zip(&b).map(|(x, y)| x * (x / y).ln()).sum();
    Ok(kl.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bhattacharyya {
    Distance(f64),
    /// Supports do not overlap; the distance is infinite.
    DisjointSupport,
}

impl Bhattacharyya {
    pub fn value(self) -> f64 {
        match self {
            Bhattacharyya::Distance(d) => d,
            Bhattacharyya::DisjointSupport => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Bhattacharyya::Distance(d) => Some(d),
            Bhattacharyya::DisjointSupport => None,
        }
    }
}

pub fn bhattacharyya(p: &EmotionDistribution, q: &EmotionDistribution) -> Result<Bhattacharyya> {
    let (a, b) = both_probs(p, q)?;
    let coefficient: f64 = a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum();
    if coefficient <= 0.0 {
        return Ok(Bhattacharyya::DisjointSupport);
    }
    // coefficient can exceed 1 by rounding; clamp also removes -0.0
    Ok(Bhattacharyya::Distance((-coefficient.ln()).max(0.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2 {
    /// Over all utterance × class values flattened together.
    pub overall: f64,
    /// Per class, `None` when that class has zero ground-truth variance.
    pub per_class: Vec<Option<f64>>,
}

fn r2_of(y: &[f64], yhat: &[f64]) -> Option<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Coefficient of determination over `(ground truth, prediction)` pairs.
pub fn r2_detail<'a, I>(pairs: I) -> Result<R2>
where
    I: IntoIterator<Item = (&'a EmotionDistribution, &'a EmotionDistribution)>,
{
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    let mut width = None;
    let mut count = 0usize;
    for (gt, pred) in pairs {
        let (a, b) = both_probs(gt, pred)?;
        match width {
            None => width = Some(a.len()),
            Some(w) if w != a.len() => return Err(Error::LengthMismatch { expected: w, got: a.len() }),
            _ => {}
        }
        y.extend_from_slice(a);
        yhat.extend_from_slice(b);
        count += 1;
    }
    if count < 2 {
        return Err(Error::Undefined(format!("R² needs at least 2 pairs, got {count}")));
    }
    let overall = r2_of(&y, &yhat).ok_or_else(|| Error::Undefined("ground truth has zero variance".into()))?;
    let n = width.unwrap_or(0);
    let per_class = (0..n)
        .map(|c| {
            let yc: Vec<f64> = y.iter().skip(c).step_by(n).copied().collect();
            let hc: Vec<f64> = yhat.iter().skip(c).step_by(n).copied().collect();
            r2_of(&yc, &hc)
        })
        .collect();
    Ok(R2 { overall, per_class })
}

pub fn r2_score<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a EmotionDistribution, &'a EmotionDistribution)>,
{
    r2_detail(pairs).map(|r| r.overall)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub accuracy: f64,
    pub f1: f64,
    pub per_class_f1: Vec<f64>,
    pub n: usize,
}

/// Accuracy and F1 over utterances labelled in both maps. F1 is averaged
/// over every class of `set`; classes never seen score 0.
pub fn accuracy_f1(
    pred_labels: &BTreeMap<String, String>,
    gt_labels: &BTreeMap<String, String>,
    set: &EmotionSet,
    cfg: &MetricConfig,
) -> Result<LabelScores> {
    let n = set.len();
    let idx = |name: &str| set.index_of(name).ok_or_else(|| Error::UnknownClass(name.to_string()));
    let mut tp = vec![0usize; n];
    let mut fp = vec![0usize; n];
    let mut fn_ = vec![0usize; n];
    let mut support = vec![0usize; n];
    let mut total = 0usize;
    let mut correct = 0usize;
    for (utt, gt) in gt_labels {
        let Some(pred) = pred_labels.get(utt) else { continue };
        let (g, p) = (idx(gt)?, idx(pred)?);
        total += 1;
        support[g] += 1;
        if g == p {
            correct += 1;
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("no utterance has both a predicted and a ground-truth label".into()));
    }
    let per_class_f1: Vec<f64> = (0..n)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let f1 = match cfg.f1_averaging {
        F1Averaging::Macro => per_class_f1.iter().sum::<f64>() / n as f64,
        F1Averaging::Weighted => {
            per_class_f1
                .iter()
                .zip(&support)
                .map(|(f, &s)| f * s as f64)
                .sum::<f64>()
                / total as f64
        }
    };
    Ok(LabelScores {
        accuracy: correct as f64 / total as f64,
        f1,
        per_class_f1,
        n: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_distribution, InvalidReason};

    fn d(v: &[f64]) -> EmotionDistribution {
        make_distribution(v, &EmotionSet::default()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let cfg = MetricConfig::default();
        assert_eq!(kl_divergence(&d(&[0.25; 4]), &d(&[0.25; 4]), &cfg).unwrap(), 0.0);

        let kl = kl_divergence(&d(&[1.0, 0.0, 0.0, 0.0]), &d(&[0.25; 4]), &cfg).unwrap();
        assert!((kl - 4f64.ln()).abs() < 1e-8, "{kl}");

        // direct summation over smoothed entries (computed independently)
        let p = d(&[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]);
        let q = d(&[0.65, 0.0, 0.0, 0.35]);
        let kl = kl_divergence(&p, &q, &cfg).unwrap();
        assert!((kl - 0.000_615_150_599_320_300_1).abs() < 1e-12, "{kl}");
        let rev = MetricConfig {
            kl_direction: KlDirection::PredToGt,
            ..cfg
        };
        let kl_rev = kl_divergence(&p, &q, &rev).unwrap();
        assert!((kl_rev - 0.000_619_982_269_112_098_7).abs() < 1e-12, "{kl_rev}");
    }

    #[test]
    fn kl_is_asymmetric() {
        let cfg = MetricConfig::default();
        let p = d(&[0.9, 0.05, 0.05, 0.0]);
        let q = d(&[0.25; 4]);
        let a = kl_divergence(&p, &q, &cfg).unwrap();
        let b = kl_divergence(&q, &p, &cfg).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn bd_examples() {
        let p = d(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(bhattacharyya(&p, &p).unwrap().value(), 0.0);
        assert_eq!(
            bhattacharyya(&d(&[1.0, 0.0, 0.0, 0.0]), &d(&[0.0, 1.0, 0.0, 0.0])).unwrap(),
            Bhattacharyya::DisjointSupport
        );
        let bd = bhattacharyya(&d(&[0.5, 0.5, 0.0, 0.0]), &d(&[0.25; 4])).unwrap().value();
        assert!((bd - 0.346_573_590_279_972_6).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_are_errors() {
        let bad = EmotionDistribution::invalid(InvalidReason::ZeroSum);
        let ok = d(&[0.25; 4]);
        assert!(kl_divergence(&bad, &ok, &MetricConfig::default()).is_err());
        assert!(bhattacharyya(&ok, &bad).is_err());
        assert!(r2_score([(&ok, &bad), (&ok, &ok)]).is_err());
    }

    #[test]
    fn r2_examples() {
        let y = [d(&[1.0, 0.0, 0.0, 0.0]), d(&[0.0, 1.0, 0.0, 0.0])];
        assert_eq!(r2_score(y.iter().zip(&y)).unwrap(), 1.0);

        let mean = d(&[0.25; 4]);
        let r = r2_score(y.iter().map(|g| (g, &mean))).unwrap();
        assert!(r.abs() < 1e-12);

        // flattened y = [1,0,0,0, 0,1,0,0], mean 0.25, ss_tot = 1.5, ss_res = 1.0
        let half = d(&[0.5, 0.5, 0.0, 0.0]);
        let r = r2_score(y.iter().map(|g| (g, &half))).unwrap();
        assert!((r - (1.0 - 1.0 / 1.5)).abs() < 1e-12);

        // adversarial constant predictor is worse than the mean
        let bad = d(&[0.0, 0.0, 1.0, 0.0]);
        assert!(r2_score(y.iter().map(|g| (g, &bad))).unwrap() < 0.0);

        assert!(r2_score([(&y[0], &y[0])]).is_err());
        let flat = d(&[0.25; 4]);
        assert!(matches!(r2_score([(&flat, &y[0]), (&flat, &y[1])]), Err(Error::Undefined(_))));
    }

    fn labels(v: &[(&str, &str)]) -> BTreeMap<String, String> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn accuracy_f1_examples() {
        let set = EmotionSet::default();
        let cfg = MetricConfig::default();
        let classes = crate::types::DEFAULT_EMOTIONS;
        let gt: BTreeMap<String, String> = (0..16).map(|i| (format!("u{i:02}"), classes[i % 4].to_string())).collect();

        let s = accuracy_f1(&gt, &gt, &set, &cfg).unwrap();
        assert_eq!((s.accuracy, s.f1), (1.0, 1.0));

        // confusion-matrix oracle: anger tp=4 fp=12 -> F1 = 8/20; others 0
        let all_anger: BTreeMap<String, String> = gt.keys().map(|k| (k.clone(), "anger".to_string())).collect();
        let s = accuracy_f1(&all_anger, &gt, &set, &cfg).unwrap();
        assert_eq!(s.accuracy, 0.25);
        assert_eq!(s.per_class_f1, vec![0.4, 0.0, 0.0, 0.0]);
        assert!((s.f1 - 0.1).abs() < 1e-15);
        let weighted = MetricConfig {
            f1_averaging: F1Averaging::Weighted,
            ..cfg
        };
        assert!((accuracy_f1(&all_anger, &gt, &set, &weighted).unwrap().f1 - 0.1).abs() < 1e-15);

        let gt2 = labels(&[("a", "anger"), ("b", "sadness")]);
        let pred2 = labels(&[("a", "sadness"), ("b", "anger")]);
        let s = accuracy_f1(&pred2, &gt2, &set, &cfg).unwrap();
        assert_eq!((s.accuracy, s.f1), (0.0, 0.0));

        assert!(accuracy_f1(&labels(&[("x", "anger")]), &gt2, &set, &cfg).is_err());
        assert!(accuracy_f1(&labels(&[("a", "joy")]), &gt2, &set, &cfg).is_err());
    }

    #[test]
    fn epsilon_bounds() {
        assert!(MetricConfig::default().validate().is_ok());
        for eps in [0.0, -1.0, 1e-3, 0.5] {
            let cfg = MetricConfig { epsilon: eps, ..Default::default() };
            assert!(cfg.validate().is_err());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dist() -> impl Strategy<Value = EmotionDistribution> {
            prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 4)
                .prop_filter("mass", |v| v.iter().sum::<f64>() > 1e-6)
                .prop_map(|v| d(&v))
        }

        proptest! {
            #[test]
            fn identities(p in dist(), q in dist()) {
                let cfg = MetricConfig::default();
                prop_assert!(kl_divergence(&p, &p, &cfg).unwrap().abs() < 1e-9);
                prop_assert!(bhattacharyya(&p, &p).unwrap().value() < 1e-9);
                prop_assert!(kl_divergence(&p, &q, &cfg).unwrap() >= 0.0);
                prop_assert_eq!(bhattacharyya(&p, &q).unwrap(), bhattacharyya(&q, &p).unwrap());
                prop_assert!(bhattacharyya(&p, &q).unwrap().value() >= 0.0);
            }

            #[test]
            fn accuracy_invariant_under_relabeling(
                pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40),
                perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
            ) {
                let set = EmotionSet::default();
                let cfg = MetricConfig::default();
                let names = crate::types::DEFAULT_EMOTIONS;
                let mk = |f: &dyn Fn(usize) -> usize, pick: &dyn Fn(&(usize, usize)) -> usize| -> BTreeMap<String, String> {
                    pairs.iter().enumerate().map(|(i, p)| (format!("u{i}"), names[f(pick(p))].to_string())).collect()
                };
                let id = |c: usize| c;
                let pm = |c: usize| perm[c];
                let a = accuracy_f1(&mk(&id, &|p| p.0), &mk(&id, &|p| p.1), &set, &cfg).unwrap();
                let b = accuracy_f1(&mk(&pm, &|p| p.0), &mk(&pm, &|p| p.1), &set, &cfg).unwrap();
                prop_assert_eq!(a.accuracy, b.accuracy);
            }
        }
    }
}
