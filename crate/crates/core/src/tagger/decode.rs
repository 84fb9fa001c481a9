//! Per-token argmax and BIO-constrained Viterbi decoding.
//!
//! Decoding has no learned transition scores: the BIO scheme only decides
//! which transitions exist, and the best valid sequence maximizes the sum of
//! per-token log probabilities.

use super::ProbRows;
use crate::corpus::LabelSet;
use crate::error::{Error, Result};

/// Probabilities are clamped to this value before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Highest-probability class per row; ties go to the lower class id.
pub fn argmax_labels(rows: &ProbRows) -> Vec<usize> {
    rows.rows()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// `Σ_i log max(p_i[y_i], floor)`.
pub fn sequence_score(rows: &ProbRows, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| rows.row(i)[y].max(PROBABILITY_FLOOR).ln())
        .sum()
}

fn check_rows(rows: &ProbRows, label_set: &LabelSet) -> Result<()> {
    if rows.classes() != label_set.len() {
        return Err(Error::validation(
            0,
            0,
            format!("rows have {} classes, label set has {}", rows.classes(), label_set.len()),
        ));
    }
    for (i, row) in rows.rows().enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::validation(0, i, "probability row has negative or non-finite entries"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::validation(0, i, format!("probability row sums to {sum}")));
        }
    }
    Ok(())
}

/// Best BIO-valid label sequence under the summed log probabilities.
///
/// Every step keeps the lowest-id predecessor among equal scores, and the
/// final state is the lowest-id maximizer.
pub fn viterbi_decode(rows: &ProbRows, label_set: &LabelSet) -> Result<Vec<usize>> {
    check_rows(rows, label_set)?;
    let n = rows.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let classes = rows.classes();
    let log_row = |i: usize| -> Vec<f64> { rows.row(i).iter().map(|p| p.max(PROBABILITY_FLOOR).ln()).collect() };

    // `None` marks a state no valid prefix reaches.
    let emit = log_row(0);
    let mut score: Vec<Option<f64>> = (0..classes)
        .map(|c| label_set.allows(None, c).then_some(emit[c]))
        .collect();
    let mut back = vec![vec![0usize; classes]; n];

    for (i, back_i) in back.iter_mut().enumerate().skip(1) {
        let emit = log_row(i);
        let mut next = vec![None; classes];
        for cur in 0..classes {
            let mut best: Option<(usize, f64)> = None;
            for (prev, s) in score.iter().enumerate() {
                let Some(s) = *s else { continue };
                if !label_set.allows(Some(prev), cur) {
                    continue;
                }
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((prev, s));
                }
            }
            if let Some((prev, s)) = best {
                back_i[cur] = prev;
                next[cur] = Some(s + emit[cur]);
            }
        }
        score = next;
    }

    let mut last: Option<(usize, f64)> = None;
    for (c, s) in score.iter().enumerate() {
        if let Some(s) = *s {
            if last.is_none_or(|(_, b)| s > b) {
                last = Some((c, s));
            }
        }
    }
    let (mut state, _) = last.expect("O is reachable at every position");
    let mut path = vec![0; n];
    for i in (0..n).rev() {
        path[i] = state;
        state = back[i][state];
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag;
    use proptest::prelude::*;

    fn rows(data: Vec<f64>) -> ProbRows {
        ProbRows::new(9, data).unwrap()
    }

    #[test]
    fn uniform_rows_decode_to_outside() {
        let set = LabelSet::conll();
        let p = rows(vec![1.0 / 9.0; 27]);
        assert_eq!(viterbi_decode(&p, &set).unwrap(), vec![0, 0, 0]);
        assert_eq!(argmax_labels(&p), vec![0, 0, 0]);
    }

    #[test]
    fn inside_cannot_start_a_sentence() {
        let set = LabelSet::conll();
        let i_per = set.id("I-PER").unwrap();
        let b_per = set.id("B-PER").unwrap();
        let mut row = vec![0.0; 9];
        row[i_per] = 0.6;
        row[0] = 0.3;
        row[b_per] = 0.1;
        let p = rows(row);
        assert_eq!(viterbi_decode(&p, &set).unwrap(), vec![0]);
        assert_eq!(argmax_labels(&p), vec![i_per]);
    }

    #[test]
    fn inside_after_begin_is_kept() {
        let set = LabelSet::conll();
        let (b, i) = (set.id("B-ORG").unwrap(), set.id("I-ORG").unwrap());
        let mut data = vec![0.0; 18];
        data[b] = 0.55;
        data[0] = 0.45;
        data[9 + i] = 0.9;
        data[9] = 0.1;
        assert_eq!(viterbi_decode(&rows(data), &set).unwrap(), vec![b, i]);
    }

    #[test]
    fn empty_and_malformed_inputs() {
        let set = LabelSet::conll();
        assert!(viterbi_decode(&ProbRows::from_raw(9, vec![]), &set).unwrap().is_empty());
        let bad = ProbRows::from_raw(9, vec![0.5; 9]);
        assert!(matches!(viterbi_decode(&bad, &set), Err(Error::Validation { .. })));
        let wrong_width = ProbRows::new(2, vec![0.5, 0.5]).unwrap();
        assert!(viterbi_decode(&wrong_width, &set).is_err());
    }

    /// Rewrites each invalid `I-X` as `B-X`, the cheapest repair of an argmax path.
    fn project_to_valid(labels: &[usize], set: &LabelSet) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::with_capacity(labels.len());
        for &y in labels {
            let fixed = match set.tag(y) {
                Tag::Inside(t) if !set.allows(out.last().copied(), y) => set.begin(t),
                _ => y,
            };
            out.push(fixed);
        }
        out
    }

    fn prob_rows() -> impl Strategy<Value = ProbRows> {
        (1usize..7).prop_flat_map(|n| {
            prop::collection::vec(0.001f64..1.0, n * 9).prop_map(move |mut w| {
                for row in w.chunks_mut(9) {
                    let sum: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= sum);
                }
                ProbRows::new(9, w).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn viterbi_is_valid_and_beats_projected_argmax(p in prob_rows()) {
            let set = LabelSet::conll();
            let path = viterbi_decode(&p, &set).unwrap();
            prop_assert_eq!(path.len(), p.len());
            prop_assert!(set.first_violation(&path).is_none());
            let projected = project_to_valid(&argmax_labels(&p), &set);
            prop_assert!(set.first_violation(&projected).is_none());
            prop_assert!(sequence_score(&p, &path) >= sequence_score(&p, &projected) - 1e-12);
        }
    }
}
