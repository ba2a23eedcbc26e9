//! Confusion matrix, accuracy, per-class precision/recall/F1 and weighted F1.
//!
//! A precision (recall) whose denominator is zero is reported as 0, and so
//! is an F1 whose precision and recall are both 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::{PollutantLabel, NUM_CLASSES};

/// Rows are true labels, columns predicted labels, both in class-code order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }

    pub fn get(&self, truth: PollutantLabel, predicted: PollutantLabel) -> u64 {
        self.counts[truth.code()][predicted.code()]
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn column_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|row| row[k]).sum()
    }

    /// `truth,background,ash,sand,candle` header then one row per true label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for label in PollutantLabel::ALL {
            out.push(',');
            out.push_str(label.as_str());
        }
        out.push('\n');
        for label in PollutantLabel::ALL {
            out.push_str(label.as_str());
            for c in self.counts[label.code()] {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(truth: &[PollutantLabel], predicted: &[PollutantLabel]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(predicted) {
        m.counts[t.code()][p.code()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: PollutantLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub total: u64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::Argument("cannot evaluate zero predictions".into()));
        }
        let mut per_class = Vec::with_capacity(NUM_CLASSES);
        let mut weighted = 0.0;
        for label in PollutantLabel::ALL {
            let k = label.code();
            let tp = confusion.counts[k][k];
            let support = confusion.row_sum(k);
            let precision = ratio(tp, confusion.column_sum(k));
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            weighted += support as f64 * f1;
            per_class.push(ClassMetrics {
                label,
                precision,
                recall,
                f1,
                support,
            });
        }
        Ok(Self {
            accuracy: ratio(confusion.trace(), total),
            per_class,
            weighted_f1: weighted / total as f64,
            total,
            confusion,
        })
    }

    pub fn class(&self, label: PollutantLabel) -> &ClassMetrics {
        &self.per_class[label.code()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table, percentages with two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "points      {}", self.total);
        let _ = writeln!(out, "accuracy    {:.2}%", 100.0 * self.accuracy);
        let _ = writeln!(out, "weighted F1 {:.2}", 100.0 * self.weighted_f1);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<12}{:>10}{:>10}{:>10}{:>9}",
            "class", "precision", "recall", "F1", "support"
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<12}{:>10.2}{:>10.2}{:>10.2}{:>9}",
                c.label.as_str(),
                100.0 * c.precision,
                100.0 * c.recall,
                100.0 * c.f1,
                c.support
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "confusion (rows = truth, columns = predicted)");
        let _ = write!(out, "{:<12}", "");
        for label in PollutantLabel::ALL {
            let _ = write!(out, "{:>11}", label.as_str());
        }
        let _ = writeln!(out);
        for label in PollutantLabel::ALL {
            let _ = write!(out, "{:<12}", label.as_str());
            for c in self.confusion.counts[label.code()] {
                let _ = write!(out, "{c:>11}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

pub fn evaluate(truth: &[PollutantLabel], predicted: &[PollutantLabel]) -> Result<EvalReport> {
    EvalReport::from_confusion(confusion(truth, predicted)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use PollutantLabel::*;

    #[test]
    fn perfect_predictions() {
        let y = [Background, Ash, Ash, Sand, Candle, Candle];
        let r = evaluate(&y, &y).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|c| c.f1 == 1.0));
        assert_eq!(r.weighted_f1, 1.0);
    }

    #[test]
    fn ash_row_counts() {
        // 81 correct, 27 predicted as sand.
        let mut truth = vec![Ash; 108];
        let mut predicted = vec![Ash; 81];
        predicted.extend(vec![Sand; 27]);
        // 14 candle frames predicted as ash.
        truth.extend(vec![Candle; 14]);
        predicted.extend(vec![Ash; 14]);
        let r = evaluate(&truth, &predicted).unwrap();
        assert_eq!(r.confusion.get(Ash, Sand), 27);
        assert_eq!(r.confusion.get(Candle, Ash), 14);
        assert_eq!(r.class(Ash).recall, 0.75);
        assert_eq!(r.class(Ash).support, 108);
        assert_eq!(r.class(Ash).precision, 81.0 / 95.0);
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let r = evaluate(&[Candle, Candle, Ash], &[Ash, Ash, Ash]).unwrap();
        let c = r.class(Candle);
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
        // absent class: no support, nothing predicted
        assert_eq!(r.class(Sand).f1, 0.0);
        assert_eq!(r.class(Sand).support, 0);
    }

    #[test]
    fn disjoint_predictions_have_empty_diagonal() {
        let m = confusion(&[Ash, Sand, Candle], &[Sand, Candle, Ash]).unwrap();
        assert_eq!(m.trace(), 0);
        assert_eq!(m.total(), 3);
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(matches!(evaluate(&[Ash], &[]), Err(Error::Argument(_))));
        assert!(evaluate(&[], &[]).is_err());
    }

    #[test]
    fn csv_export() {
        let m = confusion(&[Ash, Ash], &[Ash, Sand]).unwrap();
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "truth,background,ash,sand,candle");
        assert_eq!(lines[2], "ash,0,1,1,0");
    }

    fn labels(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
        proptest::collection::vec((0..4usize, 0..4usize), 1..n)
    }

    proptest! {
        #[test]
        fn report_invariants(pairs in labels(200), seed in any::<u64>()) {
            let truth: Vec<_> = pairs.iter().map(|p| PollutantLabel::ALL[p.0]).collect();
            let pred: Vec<_> = pairs.iter().map(|p| PollutantLabel::ALL[p.1]).collect();
            let r = evaluate(&truth, &pred).unwrap();
            let m = &r.confusion;
            prop_assert_eq!(m.total(), truth.len() as u64);
            prop_assert_eq!(r.accuracy, m.trace() as f64 / m.total() as f64);

            let supported: Vec<f64> = r.per_class.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
            let lo = supported.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = supported.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.weighted_f1 >= lo - 1e-12 && r.weighted_f1 <= hi + 1e-12);

            // jointly permuting the pairs changes nothing
            let mut idx: Vec<usize> = (0..truth.len()).collect();
            let n = idx.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (s >> 33) as usize % (i + 1));
            }
            let t2: Vec<_> = idx.iter().map(|&i| truth[i]).collect();
            let p2: Vec<_> = idx.iter().map(|&i| pred[i]).collect();
            prop_assert_eq!(evaluate(&t2, &p2).unwrap(), r);
        }
    }
}
