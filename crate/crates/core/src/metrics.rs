//! Confusion matrices and per-gesture recall, precision and accuracy.
//!
//! Rows are actual labels, columns predicted labels. Per-gesture figures come
//! from the one-vs-rest collapse of the matrix; ratios with a zero
//! denominator are `None` and print as `—`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::Prediction;
use crate::model::GestureLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label {0} is not in the matrix label set")]
    UnknownLabel(GestureLabel),
    #[error("label {0} listed twice")]
    DuplicateLabel(GestureLabel),
    #[error("count matrix must be {n}x{n}")]
    Shape { n: usize },
    #[error("confusion matrix holds no predictions")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<GestureLabel>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<GestureLabel>) -> Result<Self, MetricsError> {
        let n = labels.len();
        Self::from_counts(labels, vec![vec![0; n]; n])
    }

    pub fn from_counts(labels: Vec<GestureLabel>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(MetricsError::DuplicateLabel(*l));
            }
        }
        let n = labels.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(MetricsError::Shape { n });
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn labels(&self) -> &[GestureLabel] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn position(&self, label: GestureLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn get(&self, actual: GestureLabel, predicted: GestureLabel) -> Option<u64> {
        Some(self.counts[self.position(actual)?][self.position(predicted)?])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn record(&mut self, actual: GestureLabel, predicted: GestureLabel) -> Result<(), MetricsError> {
        let i = self.position(actual).ok_or(MetricsError::UnknownLabel(actual))?;
        let j = self.position(predicted).ok_or(MetricsError::UnknownLabel(predicted))?;
        self.counts[i][j] += 1;
        Ok(())
    }

    /// Rows divided by their totals; zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        (0..self.labels.len())
            .map(|i| {
                let total = self.row_total(i);
                self.counts[i]
                    .iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }

    /// Table with a recall column and a precision row.
    pub fn to_text(&self) -> String {
        let metrics = per_gesture_metrics(self);
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for l in &self.labels {
            let _ = write!(out, " {:>width$}", l.to_string());
        }
        let _ = writeln!(out, " {:>width$}", "Recall");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = write!(out, "{:<10}", l.to_string());
            for c in &self.counts[i] {
                let _ = write!(out, " {c:>width$}");
            }
            let _ = writeln!(out, " {:>width$}", fmt_ratio(metrics[i].recall));
        }
        let _ = write!(out, "{:<10}", "Precision");
        for m in &metrics {
            let _ = write!(out, " {:>width$}", fmt_ratio(m.precision));
        }
        out.push('\n');
        out
    }

    /// Comma-separated counts with a header row of predicted labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&l.to_string());
            for c in &self.counts[i] {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Two-decimal ratio, or an em dash when undefined.
pub fn fmt_ratio(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.2}"),
        None => "—".to_string(),
    }
}

/// Tallies predictions into a matrix over `labels`.
pub fn confusion(predictions: &[Prediction], labels: &[GestureLabel]) -> Result<ConfusionMatrix, MetricsError> {
    let mut cm = ConfusionMatrix::zeros(labels.to_vec())?;
    for p in predictions {
        cm.record(p.actual, p.predicted)?;
    }
    Ok(cm)
}

/// Sorted union of every actual and predicted label.
pub fn observed_labels(predictions: &[Prediction]) -> Vec<GestureLabel> {
    let mut labels: Vec<GestureLabel> = predictions.iter().flat_map(|p| [p.actual, p.predicted]).collect();
    labels.sort();
    labels.dedup();
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureMetrics {
    pub label: GestureLabel,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// One-vs-rest metrics for every label of `cm`, in label order.
pub fn per_gesture_metrics(cm: &ConfusionMatrix) -> Vec<GestureMetrics> {
    let total = cm.total();
    cm.labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let tp = cm.counts[i][i];
            let fn_ = cm.row_total(i) - tp;
            let fp = cm.column_total(i) - tp;
            let tn = total - tp - fn_ - fp;
            GestureMetrics {
                label,
                tp,
                fn_,
                fp,
                tn,
                recall: ratio(tp, tp + fn_),
                precision: ratio(tp, tp + fp),
                accuracy: ratio(tp + tn, total),
            }
        })
        .collect()
}

/// Multiclass accuracy: trace over total.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(cm.trace() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Prediction;
    use proptest::prelude::*;

    fn g(k: u32) -> GestureLabel {
        GestureLabel::new(k).unwrap()
    }

    fn pred(actual: u32, predicted: u32) -> Prediction {
        Prediction {
            segment_id: String::new(),
            predicted: g(predicted),
            actual: g(actual),
            neighbors: Vec::new(),
        }
    }

    fn suturing_labels() -> Vec<GestureLabel> {
        [1, 2, 3, 4, 5, 6, 8, 11].iter().map(|&k| g(k)).collect()
    }

    // Suturing LOUO confusion counts as printed in the source table.
    fn suturing_counts() -> Vec<Vec<u64>> {
        vec![
            vec![1240, 75, 0, 0, 0, 0, 0, 0],
            vec![571, 6452, 130, 2, 94, 0, 0, 0],
            vec![37, 596, 5775, 11, 1038, 17, 66, 34],
            vec![177, 29, 0, 4453, 47, 287, 509, 2],
            vec![244, 512, 0, 0, 909, 0, 33, 0],
            vec![433, 213, 1, 245, 0, 6577, 54, 3],
            vec![241, 223, 73, 681, 63, 168, 725, 0],
            vec![237, 238, 67, 172, 25, 32, 25, 999],
        ]
    }

    #[test]
    fn confusion_examples() {
        let labels = vec![g(1), g(2), g(3)];
        let cm = confusion(&[pred(1, 1), pred(2, 2), pred(3, 3), pred(2, 2)], &labels).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(overall_accuracy(&cm).unwrap(), 1.0);

        let empty = confusion(&[], &labels).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(overall_accuracy(&empty), Err(MetricsError::Empty));

        assert_eq!(confusion(&[pred(1, 4)], &labels), Err(MetricsError::UnknownLabel(g(4))));

        let cm = ConfusionMatrix::from_counts(suturing_labels(), suturing_counts()).unwrap();
        assert_eq!(cm.row_total(0), 1315);
    }

    #[test]
    fn suturing_table_metrics() {
        let cm = ConfusionMatrix::from_counts(suturing_labels(), suturing_counts()).unwrap();
        let m = per_gesture_metrics(&cm);
        assert_eq!((m[0].tp, m[0].fn_), (1240, 75));
        assert!((m[0].recall.unwrap() - 1240.0 / 1315.0).abs() < 1e-15);
        // G3 column: 0 + 130 + 5775 + 0 + 0 + 1 + 73 + 67
        assert_eq!(m[2].fp, 271);
        assert!((m[2].precision.unwrap() - 5775.0 / 6046.0).abs() < 1e-15);
        assert_eq!(format!("{:.2}", m[6].recall.unwrap()), "0.33");
        // trace 27130 over total 34835
        assert_eq!((cm.trace(), cm.total()), (27130, 34835));
        assert!((overall_accuracy(&cm).unwrap() - 27130.0 / 34835.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_two_label_accuracy() {
        let cm = ConfusionMatrix::from_counts(vec![g(1), g(2)], vec![vec![5, 5], vec![5, 5]]).unwrap();
        assert_eq!(overall_accuracy(&cm).unwrap(), 0.5);
    }

    #[test]
    fn absent_label_has_undefined_ratios() {
        let cm = confusion(&[pred(1, 1), pred(1, 2), pred(2, 2)], &[g(1), g(2), g(3)]).unwrap();
        let m = &per_gesture_metrics(&cm)[2];
        assert_eq!((m.recall, m.precision), (None, None));
        assert_eq!(m.tn, 3);
        assert_eq!(m.accuracy, Some(1.0));
        assert!(cm.to_text().contains('—'));
    }

    #[test]
    fn exports_carry_labels() {
        let cm = ConfusionMatrix::from_counts(vec![g(1), g(11)], vec![vec![3, 1], vec![0, 2]]).unwrap();
        assert_eq!(cm.to_csv(), "actual,G1,G11\nG1,3,1\nG11,0,2\n");
        let text = cm.to_text();
        assert!(text.contains("Recall") && text.contains("Precision"));
        assert!(text.contains("0.75"));
        let json = serde_json::to_string(&cm).unwrap();
        assert_eq!(serde_json::from_str::<ConfusionMatrix>(&json).unwrap(), cm);
    }

    fn predictions() -> impl Strategy<Value = Vec<Prediction>> {
        let label = proptest::sample::select(vec![1u32, 2, 3, 5, 11]);
        proptest::collection::vec((label.clone(), label), 0..80)
            .prop_map(|v| v.into_iter().map(|(a, p)| pred(a, p)).collect())
    }

    proptest! {
        #[test]
        fn one_vs_rest_sums(preds in predictions()) {
            let labels: Vec<_> = [1, 2, 3, 5, 11].iter().map(|&k| g(k)).collect();
            let cm = confusion(&preds, &labels).unwrap();
            let m = per_gesture_metrics(&cm);
            prop_assert_eq!(m.iter().map(|x| x.tp + x.fn_).sum::<u64>(), preds.len() as u64);
            prop_assert_eq!(m.iter().map(|x| x.tp).sum::<u64>(), cm.trace());
            for x in &m {
                prop_assert_eq!(x.tp + x.fn_ + x.fp + x.tn, preds.len() as u64);
                for r in [x.recall, x.precision, x.accuracy].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&r));
                }
            }
        }

        #[test]
        fn order_invariant(preds in predictions(), seed in 0usize..1000) {
            let labels: Vec<_> = [1, 2, 3, 5, 11].iter().map(|&k| g(k)).collect();
            let mut shuffled = preds.clone();
            if !shuffled.is_empty() {
                let n = shuffled.len();
                shuffled.rotate_left(seed % n);
                shuffled.reverse();
            }
            prop_assert_eq!(confusion(&preds, &labels).unwrap(), confusion(&shuffled, &labels).unwrap());
        }
    }
}
