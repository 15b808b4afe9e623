//! Ground-truth distributions and majority labels from multi-annotator records.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::types::{EmotionDistribution, EmotionSet, UtteranceRef};

/// Labels given to one utterance by `M` annotators. Each annotator picks a
/// non-empty set of classes, stored as indices into the [`EmotionSet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub utterance: UtteranceRef,
    annotator_labels: Vec<BTreeSet<usize>>,
}

impl AnnotationRecord {
    /// Builds a record from class names. Out-of-set names and empty label
    /// sets are rejected.
    pub fn new<L, S>(utterance: UtteranceRef, labels: L, set: &EmotionSet) -> Result<Self>
    where
        L: IntoIterator,
        L::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut annotator_labels = Vec::new();
        for (a, names) in labels.into_iter().enumerate() {
            let mut ls = BTreeSet::new();
            for name in names {
                let i = set
                    .index_of(name.as_ref())
                    .ok_or_else(|| Error::UnknownClass(name.as_ref().to_string()))?;
                ls.insert(i);
            }
            if ls.is_empty() {
                return Err(Error::EmptyLabelSet {
                    utterance: utterance.utterance_id.clone(),
                    annotator: a,
                });
            }
            annotator_labels.push(ls);
        }
        if annotator_labels.is_empty() {
            return Err(Error::NoAnnotators(utterance.utterance_id));
        }
        Ok(Self {
            utterance,
            annotator_labels,
        })
    }

    pub fn annotators(&self) -> usize {
        self.annotator_labels.len()
    }

    pub fn labels(&self) -> &[BTreeSet<usize>] {
        &self.annotator_labels
    }

    /// Label names per annotator, in canonical order within each set.
    pub fn label_names<'a>(&'a self, set: &'a EmotionSet) -> impl Iterator<Item = Vec<&'a str>> + 'a {
        self.annotator_labels
            .iter()
            .map(move |ls| ls.iter().map(|&i| set.name(i)).collect())
    }
}

/// Each annotator carries mass `1/M`, split evenly across the labels they
/// chose.
///
/// Contributions are first bucketed by label-set size so the floating-point
/// result does not depend on annotator order.
pub fn build_distribution(rec: &AnnotationRecord, set: &EmotionSet) -> Result<EmotionDistribution> {
    let n = set.len();
    let max_size = rec.labels().iter().map(|l| l.len()).max().unwrap_or(1);
    // by_size[c][s - 1] = annotators of set-size s that chose class c
    let mut by_size = vec![vec![0u32; max_size]; n];
    for ls in rec.labels() {
        for &c in ls {
            if c >= n {
                return Err(Error::LengthMismatch { expected: n, got: c + 1 });
            }
            by_size[c][ls.len() - 1] += 1;
        }
    }
    let m = rec.annotators() as f64;
    let mass: Vec<f64> = by_size
        .iter()
        .map(|counts| {
            counts
                .iter()
                .enumerate()
                .map(|(s, &k)| k as f64 / (s + 1) as f64)
                .sum::<f64>()
                / m
        })
        .collect();
    EmotionDistribution::from_values(&mass, set)
}

/// Number of annotators that included each class.
pub fn label_counts(rec: &AnnotationRecord, n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for ls in rec.labels() {
        for &c in ls {
            if c < n {
                counts[c] += 1;
            }
        }
    }
    counts
}

/// Class whose annotator count strictly exceeds every other class; `None`
/// when the top count is shared.
pub fn majority_index(rec: &AnnotationRecord, set: &EmotionSet) -> Option<usize> {
    let counts = label_counts(rec, set.len());
    let top = *counts.iter().max()?;
    let mut winners = counts.iter().enumerate().filter(|(_, &c)| c == top);
    let (first, _) = winners.next()?;
    if winners.next().is_some() {
        None
    } else {
        Some(first)
    }
}

pub fn majority_label<'a>(rec: &AnnotationRecord, set: &'a EmotionSet) -> Option<&'a str> {
    majority_index(rec, set).map(|i| set.name(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::argmax_label;

    fn rec(labels: &[&[&str]]) -> AnnotationRecord {
        AnnotationRecord::new(
            UtteranceRef::new("u"),
            labels.iter().map(|l| l.iter().copied()),
            &EmotionSet::default(),
        )
        .unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    // Exact rational accounting: annotator a contributes 1/(M*|L_a|) to each of its labels.
    fn oracle(labels: &[&[&str]]) -> Vec<f64> {
        let set = EmotionSet::default();
        let m = labels.len() as u64;
        // common denominator M * lcm(1..=4) is enough for four classes
        let denom = m * 12;
        let mut num = vec![0u64; set.len()];
        for l in labels {
            for name in *l {
                num[set.index_of(name).unwrap()] += 12 / l.len() as u64;
            }
        }
        assert_eq!(num.iter().sum::<u64>(), denom);
        num.iter().map(|&k| k as f64 / denom as f64).collect()
    }

    #[test]
    fn build_distribution_examples() {
        let s = EmotionSet::default();
        let d = build_distribution(&rec(&[&["anger"], &["anger"], &["sadness"]]), &s).unwrap();
        assert_close(d.probs(), &[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]);

        let d = build_distribution(&rec(&[&["happiness"], &["happiness"], &["happiness"]]), &s).unwrap();
        assert_eq!(d.probs(), &[0.0, 1.0, 0.0, 0.0]);

        let labels: &[&[&str]] = &[&["anger", "sadness"], &["anger"], &["neutral"]];
        let expected = oracle(labels);
        assert_close(&expected, &[0.5, 0.0, 1.0 / 3.0, 1.0 / 6.0]);
        let d = build_distribution(&rec(labels), &s).unwrap();
        assert_close(d.probs(), &expected);
    }

    #[test]
    fn majority_examples() {
        let s = EmotionSet::default();
        assert_eq!(majority_label(&rec(&[&["anger"], &["anger"], &["sadness"]]), &s), Some("anger"));
        assert_eq!(majority_label(&rec(&[&["anger"], &["sadness"], &["neutral"]]), &s), None);
        assert_eq!(
            majority_label(&rec(&[&["anger", "sadness"], &["sadness"], &["neutral"]]), &s),
            Some("sadness")
        );
    }

    #[test]
    fn rejects_bad_records() {
        let s = EmotionSet::default();
        let r = AnnotationRecord::new(UtteranceRef::new("u"), [vec!["frustration"]], &s);
        assert!(matches!(r, Err(Error::UnknownClass(_))));
        let r = AnnotationRecord::new(UtteranceRef::new("u"), [vec!["anger"], vec![]], &s);
        assert!(matches!(r, Err(Error::EmptyLabelSet { annotator: 1, .. })));
        let r = AnnotationRecord::new(UtteranceRef::new("u"), Vec::<Vec<&str>>::new(), &s);
        assert!(matches!(r, Err(Error::NoAnnotators(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label_sets() -> impl Strategy<Value = Vec<Vec<usize>>> {
            prop::collection::vec(prop::collection::btree_set(0usize..4, 1..=4), 1..=6)
                .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
        }

        fn to_rec(sets: &[Vec<usize>]) -> AnnotationRecord {
            let s = EmotionSet::default();
            let names: Vec<Vec<&str>> = sets
                .iter()
                .map(|l| l.iter().map(|&i| DEFAULT[i]).collect())
                .collect();
            AnnotationRecord::new(UtteranceRef::new("u"), names, &s).unwrap()
        }

        const DEFAULT: [&str; 4] = crate::types::DEFAULT_EMOTIONS;

        proptest! {
            #[test]
            fn sums_to_one_and_permutation_invariant(sets in label_sets(), rot in 0usize..6) {
                let s = EmotionSet::default();
                let d = build_distribution(&to_rec(&sets), &s).unwrap();
                prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let mut permuted = sets.clone();
                let k = rot % permuted.len();
                permuted.rotate_left(k);
                permuted.reverse();
                let d2 = build_distribution(&to_rec(&permuted), &s).unwrap();
                prop_assert_eq!(d.probs(), d2.probs());
                prop_assert_eq!(majority_index(&to_rec(&sets), &s), majority_index(&to_rec(&permuted), &s));
            }

            #[test]
            fn unanimous_is_one_hot(c in 0usize..4, m in 1usize..6) {
                let s = EmotionSet::default();
                let r = to_rec(&vec![vec![c]; m]);
                let d = build_distribution(&r, &s).unwrap();
                for (i, p) in d.probs().iter().enumerate() {
                    prop_assert_eq!(*p, if i == c { 1.0 } else { 0.0 });
                }
                prop_assert_eq!(majority_index(&r, &s), Some(c));
            }

            #[test]
            fn majority_agrees_with_argmax_for_singletons(labels in prop::collection::vec(0usize..4, 1..8)) {
                let s = EmotionSet::default();
                let r = to_rec(&labels.iter().map(|&c| vec![c]).collect::<Vec<_>>());
                if let Some(m) = majority_label(&r, &s) {
                    let d = build_distribution(&r, &s).unwrap();
                    prop_assert_eq!(argmax_label(&d, &s).unwrap(), m);
                }
            }
        }
    }
}
