//! Entity-level precision, recall and F1 with exact span matching, and
//! mean/standard deviation over repeated runs.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::corpus::{spans_from_labels, EntitySpan, LabelSet, LabeledSentence};
use crate::error::{Error, Result};

/// Span counts for one entity type or the whole corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    fn add(&mut self, other: &Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.correct += other.correct;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub per_type: BTreeMap<String, Counts>,
    /// F1 of every run folded into this report.
    pub runs: Vec<f64>,
    pub mean_f1: f64,
    /// Sample (n − 1) standard deviation; 0 for a single run.
    pub std_f1: f64,
}

impl EvalReport {
    fn from_counts(counts: Counts, per_type: BTreeMap<String, Counts>, runs: Vec<f64>) -> Self {
        let (mean_f1, std_f1) = mean_std(&runs);
        Self {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
            per_type,
            runs,
            mean_f1,
            std_f1,
        }
    }

    pub fn single_run(&self) -> bool {
        self.runs.len() <= 1
    }

    /// `key=value` lines for scripts; `prefix` namespaces every key.
    pub fn to_key_values(&self, prefix: &str) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{prefix}{k}={v}");
        };
        kv("precision", format!("{:.6}", self.precision));
        kv("recall", format!("{:.6}", self.recall));
        kv("f1", format!("{:.6}", self.f1));
        kv("gold", self.counts.gold.to_string());
        kv("predicted", self.counts.predicted.to_string());
        kv("correct", self.counts.correct.to_string());
        kv("runs", self.runs.len().to_string());
        kv(
            "run_f1",
            self.runs.iter().map(|f| format!("{f:.6}")).collect::<Vec<_>>().join(","),
        );
        kv("mean_f1", format!("{:.6}", self.mean_f1));
        kv("std_f1", format!("{:.6}", self.std_f1));
        for (t, c) in &self.per_type {
            kv(&format!("type.{t}.precision"), format!("{:.6}", c.precision()));
            kv(&format!("type.{t}.recall"), format!("{:.6}", c.recall()));
            kv(&format!("type.{t}.f1"), format!("{:.6}", c.f1()));
        }
        out
    }

    /// Aligned table for people.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}", "type", "precision", "recall", "f1", "gold", "pred", "correct");
        let mut row = |name: &str, c: &Counts| {
            let _ = writeln!(
                out,
                "{:<8} {:>9.2} {:>9.2} {:>9.2} {:>7} {:>7} {:>7}",
                name,
                100.0 * c.precision(),
                100.0 * c.recall(),
                100.0 * c.f1(),
                c.gold,
                c.predicted,
                c.correct
            );
        };
        for (t, c) in &self.per_type {
            row(t, c);
        }
        row("overall", &self.counts);
        if !self.single_run() {
            let _ = writeln!(
                out,
                "F1 over {} runs: {:.2} (± {:.2})",
                self.runs.len(),
                100.0 * self.mean_f1,
                100.0 * self.std_f1
            );
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (0.0, 0.0),
        1 => (values[0], 0.0),
        n => {
            // Running mean: identical runs give exactly zero spread.
            let mut mean = 0.0;
            for (k, v) in values.iter().enumerate() {
                mean += (v - mean) / (k + 1) as f64;
            }
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

/// Micro-averaged exact-match scores of `predicted` against `gold`.
pub fn evaluate(gold: &[LabeledSentence], predicted: &[Vec<usize>], label_set: &LabelSet) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::validation(
            gold.len().min(predicted.len()),
            0,
            format!("{} gold sentences but {} predictions", gold.len(), predicted.len()),
        ));
    }
    let mut total = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = label_set
        .entity_types()
        .iter()
        .map(|t| (t.clone(), Counts::default()))
        .collect();
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.labels.len() != p.len() {
            return Err(Error::validation(
                i,
                g.labels.len().min(p.len()),
                format!("gold has {} tokens, prediction {}", g.labels.len(), p.len()),
            ));
        }
        let reindex = |e: Error| match e {
            Error::Validation { position, message, .. } => Error::validation(i, position, message),
            other => other,
        };
        let gold_spans = spans_from_labels(&g.labels, label_set).map_err(reindex)?;
        let pred_spans = spans_from_labels(p, label_set).map_err(reindex)?;
        let gold_set: HashSet<&EntitySpan> = gold_spans.iter().collect();
        for span in &gold_spans {
            per_type.get_mut(&span.entity_type).expect("known type").gold += 1;
        }
        for span in &pred_spans {
            let entry = per_type.get_mut(&span.entity_type).expect("known type");
            entry.predicted += 1;
            if gold_set.contains(span) {
                entry.correct += 1;
            }
        }
    }
    for c in per_type.values() {
        total.add(c);
    }
    let report = EvalReport::from_counts(total, per_type, Vec::new());
    let f1 = report.f1;
    Ok(EvalReport {
        runs: vec![f1],
        mean_f1: f1,
        ..report
    })
}

/// Pools span counts over runs and summarizes their per-run F1.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::config("nothing to aggregate"));
    }
    let mut total = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    let mut runs = Vec::new();
    for r in reports {
        total.add(&r.counts);
        for (t, c) in &r.per_type {
            per_type.entry(t.clone()).or_default().add(c);
        }
        runs.extend_from_slice(&r.runs);
    }
    Ok(EvalReport::from_counts(total, per_type, runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag;
    use proptest::prelude::*;

    fn sentence(labels: &[&str]) -> LabeledSentence {
        let set = LabelSet::conll();
        LabeledSentence {
            tokens: (0..labels.len()).map(|i| format!("w{i}")).collect(),
            labels: labels.iter().map(|l| set.id(l).unwrap()).collect(),
        }
    }

    fn ids(labels: &[&str]) -> Vec<usize> {
        sentence(labels).labels
    }

    #[test]
    fn perfect_predictions() {
        let gold = vec![sentence(&["B-PER", "I-PER", "O", "B-LOC"])];
        let pred = vec![gold[0].labels.clone()];
        let r = evaluate(&gold, &pred, &LabelSet::conll()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!(r.single_run());
    }

    #[test]
    fn boundary_mismatch_scores_zero() {
        let gold = vec![sentence(&["B-PER", "I-PER"])];
        let r = evaluate(&gold, &[ids(&["B-PER", "O"])], &LabelSet::conll()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn type_mismatch_counts_against_both() {
        let gold = vec![sentence(&["B-PER", "I-PER", "O", "B-LOC"])];
        let pred = vec![ids(&["B-PER", "I-PER", "O", "B-ORG"])];
        let r = evaluate(&gold, &pred, &LabelSet::conll()).unwrap();
        assert_eq!(r.counts, Counts { gold: 2, predicted: 2, correct: 1 });
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        assert_eq!(r.per_type["ORG"], Counts { gold: 0, predicted: 1, correct: 0 });
    }

    #[test]
    fn invalid_predictions_are_rejected() {
        let gold = vec![sentence(&["O", "O"])];
        assert!(evaluate(&gold, &[ids(&["O"])], &LabelSet::conll()).is_err());
        match evaluate(&gold, &[ids(&["O", "I-PER"])], &LabelSet::conll()) {
            Err(Error::Validation { sentence, position, .. }) => assert_eq!((sentence, position), (0, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(evaluate(&gold, &[], &LabelSet::conll()).is_err());
    }

    fn with_runs(f1s: &[f64]) -> Vec<EvalReport> {
        f1s.iter()
            .map(|&f| EvalReport::from_counts(Counts::default(), BTreeMap::new(), vec![f]))
            .collect()
    }

    #[test]
    fn aggregate_statistics() {
        let one = aggregate(&with_runs(&[0.8])).unwrap();
        assert_eq!((one.mean_f1, one.std_f1), (0.8, 0.0));
        assert!(one.single_run());
        let flat = aggregate(&with_runs(&[0.8, 0.8, 0.8])).unwrap();
        assert!((flat.mean_f1 - 0.8).abs() < 1e-15);
        assert_eq!(flat.std_f1, 0.0);
        let two = aggregate(&with_runs(&[0.7, 0.9])).unwrap();
        assert!((two.mean_f1 - 0.8).abs() < 1e-12);
        // sqrt(((0.1)^2 + (0.1)^2) / 1)
        assert!((two.std_f1 - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((two.std_f1 - 0.1414).abs() < 1e-4);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn order_and_empty_sentences_do_not_matter() {
        let gold = vec![sentence(&["B-PER", "O"]), sentence(&["B-LOC", "I-LOC", "B-ORG"])];
        let pred = vec![ids(&["B-PER", "O"]), ids(&["B-LOC", "O", "B-ORG"])];
        let base = evaluate(&gold, &pred, &LabelSet::conll()).unwrap();
        let swapped = evaluate(
            &[gold[1].clone(), gold[0].clone()],
            &[pred[1].clone(), pred[0].clone()],
            &LabelSet::conll(),
        )
        .unwrap();
        assert_eq!(base, swapped);
        let mut g = gold.clone();
        let mut p = pred.clone();
        g.push(sentence(&["O", "O", "O"]));
        p.push(ids(&["O", "O", "O"]));
        assert_eq!(evaluate(&g, &p, &LabelSet::conll()).unwrap(), base);
        let kv = base.to_key_values("x.");
        assert!(kv.contains("x.f1="));
        assert!(base.to_table().contains("overall"));
    }

    fn valid_labels(raw: Vec<usize>) -> Vec<usize> {
        let set = LabelSet::conll();
        let mut out: Vec<usize> = Vec::with_capacity(raw.len());
        for y in raw {
            let y = match set.tag(y) {
                Tag::Inside(t) if !set.allows(out.last().copied(), y) => set.begin(t),
                _ => y,
            };
            out.push(y);
        }
        out
    }

    /// Gold and predicted label sequences of equal length.
    fn pair() -> impl Strategy<Value = (LabeledSentence, Vec<usize>)> {
        (1usize..8).prop_flat_map(|n| {
            (prop::collection::vec(0usize..9, n), prop::collection::vec(0usize..9, n)).prop_map(|(g, p)| {
                let labels = valid_labels(g);
                let tokens = (0..labels.len()).map(|i| format!("w{i}")).collect();
                (LabeledSentence { tokens, labels }, valid_labels(p))
            })
        })
    }

    proptest! {
        #[test]
        fn counts_add_across_shards(
            a in prop::collection::vec(pair(), 0..6),
            b in prop::collection::vec(pair(), 0..6),
        ) {
            let set = LabelSet::conll();
            let score = |v: &[(LabeledSentence, Vec<usize>)]| {
                let (g, p): (Vec<_>, Vec<_>) = v.iter().cloned().unzip();
                evaluate(&g, &p, &set).unwrap()
            };
            let (ra, rb) = (score(&a), score(&b));
            let whole: Vec<_> = a.iter().chain(&b).cloned().collect();
            let rw = score(&whole);
            prop_assert_eq!(rw.counts.gold, ra.counts.gold + rb.counts.gold);
            prop_assert_eq!(rw.counts.predicted, ra.counts.predicted + rb.counts.predicted);
            prop_assert_eq!(rw.counts.correct, ra.counts.correct + rb.counts.correct);
            let reversed: Vec<_> = whole.iter().rev().cloned().collect();
            prop_assert_eq!(score(&reversed), rw.clone());
            prop_assert!(rw.counts.correct <= rw.counts.gold.min(rw.counts.predicted));
        }
    }
}
