//! Per-surgeon skill assessment.
//!
//! Covers gesture frequency profiles, expert/expert versus expert/novice
//! DTW distance summaries, per-gesture recall/precision reports with
//! training recommendations, and plot-ready delimited exports.
//!
//! Distance pairs always compare segments carrying the same gesture label
//! and taken from different trials. With `per_gesture` off those pairs are
//! pooled into one summary per group.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{KnnConfig, Prediction};
use crate::distance::{dtw, DistanceError, DtwConfig};
use crate::eval::{make_louo_folds_excluding, run_fold, EvalError, EvalOptions};
use crate::metrics::{confusion, fmt_ratio, observed_labels, overall_accuracy, per_gesture_metrics, ConfusionMatrix, GestureMetrics, MetricsError};
use crate::model::{slice_usable_segments, validate_dataset, Dataset, GestureLabel, ModelError, Skill, Task, Trial, Violation};
use crate::par::Execution;

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("no {task} trials{}", skill.map(|s| format!(" for {s} surgeons")).unwrap_or_default())]
    NoTrials { task: Task, skill: Option<Skill> },
    #[error("{group} needs {needed}, found {found} segment(s)")]
    InsufficientSegments { group: DistanceGroup, needed: &'static str, found: usize },
    #[error("{group}: no qualifying pairs (same label, different trials)")]
    NoPairs { group: DistanceGroup },
    #[error("no predictions for surgeon {0}")]
    EmptyFold(String),
    #[error("threshold {name} = {value} is outside [0, 1]")]
    Threshold { name: &'static str, value: f64 },
    #[error("new trial breaks dataset invariants; first: {}", .0[0])]
    Invalid(Vec<Violation>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureFrequency {
    pub label: GestureLabel,
    pub mean_per_trial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub task: Task,
    /// `None` covers every skill level.
    pub skill: Option<Skill>,
    pub trials: usize,
    /// Every label of the task vocabulary, in label order.
    pub gestures: Vec<GestureFrequency>,
}

impl FrequencyProfile {
    pub fn mean(&self, label: GestureLabel) -> Option<f64> {
        self.gestures.iter().find(|g| g.label == label).map(|g| g.mean_per_trial)
    }
}

/// Mean transcript occurrences of each gesture per matching trial.
pub fn gesture_frequency(d: &Dataset, task: Task, skill: Option<Skill>) -> Result<FrequencyProfile, AssessError> {
    let trials: Vec<&Trial> = d
        .task_trials(task)
        .filter(|t| skill.is_none_or(|s| t.skill == s))
        .collect();
    if trials.is_empty() {
        return Err(AssessError::NoTrials { task, skill });
    }
    let labels = task.labels();
    let mut counts = vec![0usize; labels.len()];
    for t in &trials {
        for a in &t.annotations {
            if let Some(i) = labels.iter().position(|&l| l == a.label) {
                counts[i] += 1;
            }
        }
    }
    let n = trials.len() as f64;
    Ok(FrequencyProfile {
        task,
        skill,
        trials: trials.len(),
        gestures: labels
            .into_iter()
            .zip(counts)
            .map(|(label, c)| GestureFrequency {
                label,
                mean_per_trial: c as f64 / n,
            })
            .collect(),
    })
}

/// `gesture,<profile>...` with one column per profile, rows over the union of labels.
pub fn frequency_csv(profiles: &[FrequencyProfile]) -> String {
    let mut labels: Vec<GestureLabel> = profiles.iter().flat_map(|p| p.gestures.iter().map(|g| g.label)).collect();
    labels.sort();
    labels.dedup();
    let mut out = String::from("gesture");
    for p in profiles {
        let name = p.skill.map(|s| s.to_string()).unwrap_or_else(|| "all".into());
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    for l in labels {
        write!(out, "{l}").unwrap();
        for p in profiles {
            match p.mean(l) {
                Some(v) => write!(out, ",{v}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistanceGroup {
    ExpertExpert,
    ExpertNovice,
}

impl fmt::Display for DistanceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceGroup::ExpertExpert => "E/E",
            DistanceGroup::ExpertNovice => "E/N",
        })
    }
}

/// Five-number summary plus mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    /// Quartiles use linear interpolation between order statistics at
    /// rank `(n - 1) * p` (the inclusive method). `None` for empty input.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Summary {
            count: v.len(),
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        v[lo]
    } else {
        // never leaves [v[lo], v[hi]] even with rounding
        (v[lo] + frac * (v[hi] - v[lo])).clamp(v[lo], v[hi])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub group: DistanceGroup,
    /// `None` for the summary pooled over all gestures.
    pub label: Option<GestureLabel>,
    pub summary: Summary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistanceOptions {
    /// One summary per (group, gesture) instead of one per group.
    pub per_gesture: bool,
    /// Count intermediate surgeons on the novice side of E/N.
    pub include_intermediate: bool,
    pub execution: Execution,
}

struct Side {
    trial: usize,
    label: GestureLabel,
    segment: usize,
}

/// E/E and E/N distance summaries for `task`, sorted by group then label.
/// Per-gesture mode emits only the (group, label) cells that have pairs.
pub fn distance_stats(d: &Dataset, task: Task, opts: &DistanceOptions, cfg: &DtwConfig) -> Result<Vec<DistanceStats>, AssessError> {
    cfg.check()?;
    let mut segments = Vec::new();
    let mut experts = Vec::new();
    let mut novices = Vec::new();
    for (ti, t) in d.task_trials(task).enumerate() {
        let side = match t.skill {
            Skill::Expert => &mut experts,
            Skill::Novice => &mut novices,
            Skill::Intermediate if opts.include_intermediate => &mut novices,
            Skill::Intermediate => continue,
        };
        for s in slice_usable_segments(t, &d.channel_selection)?.0 {
            side.push(Side {
                trial: ti,
                label: s.label,
                segment: segments.len(),
            });
            segments.push(s);
        }
    }
    if experts.len() < 2 {
        return Err(AssessError::InsufficientSegments {
            group: DistanceGroup::ExpertExpert,
            needed: "at least 2 expert segments",
            found: experts.len(),
        });
    }
    if novices.is_empty() {
        return Err(AssessError::InsufficientSegments {
            group: DistanceGroup::ExpertNovice,
            needed: "at least 1 novice segment",
            found: 0,
        });
    }

    let mut pairs: Vec<(DistanceGroup, GestureLabel, usize, usize)> = Vec::new();
    for (i, a) in experts.iter().enumerate() {
        for b in &experts[i + 1..] {
            if a.label == b.label && a.trial != b.trial {
                pairs.push((DistanceGroup::ExpertExpert, a.label, a.segment, b.segment));
            }
        }
    }
    for a in &experts {
        for b in &novices {
            if a.label == b.label {
                pairs.push((DistanceGroup::ExpertNovice, a.label, a.segment, b.segment));
            }
        }
    }
    let distances = opts
        .execution
        .try_map(&pairs, |&(_, _, i, j)| dtw(&segments[i].series, &segments[j].series, cfg))?;

    let mut out = Vec::new();
    for group in [DistanceGroup::ExpertExpert, DistanceGroup::ExpertNovice] {
        let in_group = |&(k, &(g, ..)): &(usize, &(DistanceGroup, GestureLabel, usize, usize))| (g == group).then_some(k);
        let idx: Vec<usize> = pairs.iter().enumerate().filter_map(|e| in_group(&e)).collect();
        if idx.is_empty() {
            return Err(AssessError::NoPairs { group });
        }
        if opts.per_gesture {
            let mut labels: Vec<GestureLabel> = idx.iter().map(|&k| pairs[k].1).collect();
            labels.sort();
            labels.dedup();
            for label in labels {
                let values: Vec<f64> = idx.iter().filter(|&&k| pairs[k].1 == label).map(|&k| distances[k]).collect();
                out.push(DistanceStats {
                    group,
                    label: Some(label),
                    summary: Summary::of(&values).expect("label drawn from these pairs"),
                });
            }
        } else {
            let values: Vec<f64> = idx.iter().map(|&k| distances[k]).collect();
            out.push(DistanceStats {
                group,
                label: None,
                summary: Summary::of(&values).expect("non-empty group"),
            });
        }
    }
    Ok(out)
}

/// Boxplot rows: `group,gesture,count,min,q1,median,q3,max,mean`.
pub fn boxplot_csv(stats: &[DistanceStats]) -> String {
    let mut out = String::from("group,gesture,count,min,q1,median,q3,max,mean\n");
    for s in stats {
        let label = s.label.map(|l| l.to_string()).unwrap_or_else(|| "all".into());
        let m = &s.summary;
        writeln!(
            out,
            "{},{label},{},{},{},{},{},{},{}",
            s.group, m.count, m.min, m.q1, m.median, m.q3, m.max, m.mean
        )
        .unwrap();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub recall: f64,
    pub precision: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            recall: 0.6,
            precision: 0.6,
        }
    }
}

impl Thresholds {
    pub fn check(&self) -> Result<(), AssessError> {
        for (name, value) in [("recall", self.recall), ("precision", self.precision)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(AssessError::Threshold { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Recall,
    Precision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecommendationKind {
    /// Low recall: the surgeon's execution does not match other surgeons'.
    MoreTraining,
    /// Low precision: other gestures are mistaken for this one.
    DefinitionReview,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub metric: Metric,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub label: GestureLabel,
    pub kind: RecommendationKind,
    pub evidence: Evidence,
}

impl fmt::Display for Recommendation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (what, metric) = match (self.kind, self.evidence.metric) {
            (RecommendationKind::MoreTraining, m) => ("more training", m),
            (RecommendationKind::DefinitionReview, m) => ("review gesture definition", m),
        };
        let metric = match metric {
            Metric::Recall => "recall",
            Metric::Precision => "precision",
        };
        write!(
            f,
            "{} ({}): {what}; {metric} {:.2} < {:.2}",
            self.label,
            self.label.description(),
            self.evidence.value,
            self.evidence.threshold
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub surgeon_id: String,
    pub task: Task,
    pub thresholds: Thresholds,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub gestures: Vec<GestureMetrics>,
    pub recommendations: Vec<Recommendation>,
}

impl AssessmentReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "surgeon {} ({}), accuracy {:.2}%\n\ngesture  recall  precision\n",
            self.surgeon_id,
            self.task,
            100.0 * self.accuracy
        );
        for g in &self.gestures {
            writeln!(out, "{:<8} {:>6}  {:>9}", g.label.to_string(), fmt_ratio(g.recall), fmt_ratio(g.precision)).unwrap();
        }
        out.push_str("\nrecommendations:\n");
        if self.recommendations.is_empty() {
            out.push_str("  none\n");
        }
        for r in &self.recommendations {
            writeln!(out, "  {r}").unwrap();
        }
        out
    }
}

/// Report for one surgeon from the predictions of their held-out fold.
pub fn assess_surgeon(surgeon_id: &str, task: Task, predictions: &[Prediction], thresholds: &Thresholds) -> Result<AssessmentReport, AssessError> {
    if predictions.is_empty() {
        return Err(AssessError::EmptyFold(surgeon_id.to_string()));
    }
    let cm = confusion(predictions, &observed_labels(predictions))?;
    assess_confusion(surgeon_id, task, cm, thresholds)
}

/// Report from an already tallied confusion matrix.
pub fn assess_confusion(surgeon_id: &str, task: Task, cm: ConfusionMatrix, thresholds: &Thresholds) -> Result<AssessmentReport, AssessError> {
    thresholds.check()?;
    let accuracy = overall_accuracy(&cm).map_err(|_| AssessError::EmptyFold(surgeon_id.to_string()))?;
    let gestures = per_gesture_metrics(&cm);
    let mut recommendations = Vec::new();
    for g in &gestures {
        let checks = [
            (g.recall, thresholds.recall, Metric::Recall, RecommendationKind::MoreTraining),
            (g.precision, thresholds.precision, Metric::Precision, RecommendationKind::DefinitionReview),
        ];
        for (value, threshold, metric, kind) in checks {
            if let Some(value) = value.filter(|&v| v < threshold) {
                recommendations.push(Recommendation {
                    label: g.label,
                    kind,
                    evidence: Evidence { metric, value, threshold },
                });
            }
        }
    }
    Ok(AssessmentReport {
        surgeon_id: surgeon_id.to_string(),
        task,
        thresholds: *thresholds,
        accuracy,
        confusion: cm,
        gestures,
        recommendations,
    })
}

/// Runs the LOUO fold of `surgeon` and reports on it.
pub fn assess_fold(
    d: &Dataset,
    task: Task,
    surgeon: &str,
    knn: &KnnConfig,
    opts: &EvalOptions,
    thresholds: &Thresholds,
) -> Result<AssessmentReport, AssessError> {
    let plan = make_louo_folds_excluding(d, task, &opts.exclude)?;
    let predictions = run_fold(&plan, surgeon, knn, opts)?;
    assess_surgeon(surgeon, task, &predictions, thresholds)
}

/// Row-normalized confusion fractions:
/// `actual,<label>...,empty_row`, where `empty_row` is 1 for rows without
/// any actual segment (emitted as zeros) and 0 otherwise.
pub fn heatmap_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("actual");
    for l in cm.labels() {
        write!(out, ",{l}").unwrap();
    }
    out.push_str(",empty_row\n");
    for (i, row) in cm.row_normalized().iter().enumerate() {
        write!(out, "{}", cm.labels()[i]).unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{}", u8::from(cm.row_total(i) == 0)).unwrap();
    }
    out
}

pub fn heatmap_export(cm: &ConfusionMatrix, path: &Path) -> Result<(), AssessError> {
    write_file(path, &heatmap_csv(cm))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), AssessError> {
    fs::write(path, text).map_err(|source| AssessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Keeps a surgeon's report current as their trials arrive: each new trial
/// is validated into the dataset and the surgeon's fold is rerun.
#[derive(Clone, Debug)]
pub struct FeedbackSession {
    dataset: Dataset,
    task: Task,
    surgeon: String,
    knn: KnnConfig,
    options: EvalOptions,
    thresholds: Thresholds,
}

impl FeedbackSession {
    pub fn new(dataset: Dataset, task: Task, surgeon: &str, knn: KnnConfig, options: EvalOptions, thresholds: Thresholds) -> Self {
        FeedbackSession {
            dataset,
            task,
            surgeon: surgeon.to_string(),
            knn,
            options,
            thresholds,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn report(&self) -> Result<AssessmentReport, AssessError> {
        assess_fold(&self.dataset, self.task, &self.surgeon, &self.knn, &self.options, &self.thresholds)
    }

    /// Adds `trial` and returns the regenerated report. On error the
    /// dataset is left unchanged.
    pub fn add_trial(&mut self, trial: Trial) -> Result<AssessmentReport, AssessError> {
        self.dataset.trials.push(trial);
        let violations = validate_dataset(&self.dataset);
        if !violations.is_empty() {
            self.dataset.trials.pop();
            return Err(AssessError::Invalid(violations));
        }
        let report = self.report();
        if report.is_err() {
            self.dataset.trials.pop();
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::ramp_trial;
    use crate::model::{Annotation, TimeSeries};
    use proptest::prelude::*;

    fn g(k: u32) -> GestureLabel {
        GestureLabel::new(k).unwrap()
    }

    fn labels(ks: &[u32]) -> Vec<GestureLabel> {
        ks.iter().map(|&k| g(k)).collect()
    }

    fn suturing_table() -> ConfusionMatrix {
        ConfusionMatrix::from_counts(
            labels(&[1, 2, 3, 4, 5, 6, 8, 11]),
            vec![
                vec![1240, 75, 0, 0, 0, 0, 0, 0],
                vec![571, 6452, 130, 2, 94, 0, 0, 0],
                vec![37, 596, 5775, 11, 1038, 17, 66, 34],
                vec![177, 29, 0, 4453, 47, 287, 509, 2],
                vec![244, 512, 0, 0, 909, 0, 33, 0],
                vec![433, 213, 1, 245, 0, 6577, 54, 3],
                vec![241, 223, 73, 681, 63, 168, 725, 0],
                vec![237, 238, 67, 172, 25, 32, 25, 999],
            ],
        )
        .unwrap()
    }

    fn knot_tying_table() -> ConfusionMatrix {
        ConfusionMatrix::from_counts(
            labels(&[1, 11, 12, 13, 14, 15]),
            vec![
                vec![674, 0, 53, 93, 130, 0],
                vec![0, 1560, 0, 14, 136, 0],
                vec![282, 340, 1704, 667, 291, 0],
                vec![3, 155, 270, 2939, 167, 0],
                vec![127, 252, 111, 206, 3927, 61],
                vec![81, 354, 158, 297, 312, 2250],
            ],
        )
        .unwrap()
    }

    fn kinds_for(r: &AssessmentReport, label: u32) -> Vec<RecommendationKind> {
        r.recommendations.iter().filter(|x| x.label == g(label)).map(|x| x.kind).collect()
    }

    #[test]
    fn suturing_table_flags_g8_both_ways() {
        let r = assess_confusion("all", Task::Suturing, suturing_table(), &Thresholds::default()).unwrap();
        assert_eq!(kinds_for(&r, 8), vec![RecommendationKind::MoreTraining, RecommendationKind::DefinitionReview]);
        assert_eq!(kinds_for(&r, 5), vec![RecommendationKind::MoreTraining, RecommendationKind::DefinitionReview]);
        assert!(kinds_for(&r, 2).is_empty());
        let g8 = r.recommendations.iter().find(|x| x.label == g(8)).unwrap();
        assert_eq!(format!("{:.2}", g8.evidence.value), "0.33");
        assert!(r.to_text().contains("G8 (Orienting needle)"), "{}", r.to_text());
    }

    #[test]
    fn knot_tying_table_flags_g12() {
        let r = assess_confusion("all", Task::KnotTying, knot_tying_table(), &Thresholds::default()).unwrap();
        assert_eq!(kinds_for(&r, 12), vec![RecommendationKind::MoreTraining]);
        let e = r.recommendations.iter().find(|x| x.label == g(12)).unwrap().evidence;
        assert_eq!((e.metric, format!("{:.2}", e.value), e.threshold), (Metric::Recall, "0.52".into(), 0.6));
    }

    fn pred(actual: u32, predicted: u32) -> Prediction {
        Prediction {
            segment_id: String::new(),
            predicted: g(predicted),
            actual: g(actual),
            neighbors: Vec::new(),
        }
    }

    #[test]
    fn all_correct_fold_has_no_recommendations() {
        let preds: Vec<Prediction> = [1, 2, 3, 2, 1].iter().map(|&k| pred(k, k)).collect();
        let r = assess_surgeon("S1", Task::Suturing, &preds, &Thresholds::default()).unwrap();
        assert!(r.recommendations.is_empty());
        assert_eq!(r.accuracy, 1.0);
        assert!(matches!(
            assess_surgeon("S1", Task::Suturing, &[], &Thresholds::default()),
            Err(AssessError::EmptyFold(_))
        ));
        let bad = Thresholds { recall: 1.5, precision: 0.6 };
        assert!(matches!(assess_surgeon("S1", Task::Suturing, &preds, &bad), Err(AssessError::Threshold { .. })));
    }

    #[test]
    fn never_predicted_gesture_is_flagged_for_training_only() {
        // G3 always mistaken for G2: recall 0, precision undefined
        let preds = vec![pred(3, 2), pred(3, 2), pred(2, 2)];
        let r = assess_surgeon("S1", Task::Suturing, &preds, &Thresholds::default()).unwrap();
        assert_eq!(kinds_for(&r, 3), vec![RecommendationKind::MoreTraining]);
        assert_eq!(kinds_for(&r, 2), vec![RecommendationKind::DefinitionReview]);
    }

    #[test]
    fn heatmap_rows() {
        let text = heatmap_csv(&suturing_table());
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "actual,G1,G2,G3,G4,G5,G6,G8,G11,empty_row");
        let g1: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(g1[0], "G1");
        let v: Vec<f64> = g1[1..9].iter().map(|s| s.parse().unwrap()).collect();
        assert!((v[0] - 0.943).abs() < 5e-4 && (v[1] - 0.057).abs() < 5e-4);
        assert!(v[2..].iter().all(|&x| x == 0.0));
        assert_eq!(g1[9], "0");

        let diag = ConfusionMatrix::from_counts(labels(&[1, 2]), vec![vec![3, 0], vec![0, 0]]).unwrap();
        assert_eq!(heatmap_csv(&diag), "actual,G1,G2,empty_row\nG1,1,0,0\nG2,0,0,1\n");

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        heatmap_export(&diag, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), heatmap_csv(&diag));
        assert!(heatmap_export(&diag, &dir.path().join("no/such/dir.csv")).is_err());
    }

    fn trial_with(surgeon: &str, index: u32, skill: Skill, rows: &[(usize, usize, u32)], level: f64) -> Trial {
        let frames = rows.iter().map(|r| r.1).max().unwrap_or(1);
        let mut t = ramp_trial(surgeon, index, frames, 1, rows);
        t.skill = skill;
        t.kinematics = TimeSeries::univariate(&vec![level; frames]).unwrap();
        t
    }

    #[test]
    fn frequency_counts() {
        let t = trial_with("S1", 1, Skill::Expert, &[(0, 2, 1), (2, 4, 2), (4, 6, 3), (6, 8, 2)], 0.0);
        let d = Dataset::new(vec![t.clone()]);
        let p = gesture_frequency(&d, Task::Suturing, None).unwrap();
        assert_eq!((p.mean(g(2)), p.mean(g(1)), p.mean(g(9))), (Some(2.0), Some(1.0), Some(0.0)));
        assert_eq!(p.gestures.len(), Task::Suturing.labels().len());

        let mut t2 = t.clone();
        t2.trial_index = 2;
        let twice = gesture_frequency(&Dataset::new(vec![t, t2]), Task::Suturing, None).unwrap();
        assert_eq!(twice.gestures, p.gestures);

        assert!(matches!(
            gesture_frequency(&d, Task::Suturing, Some(Skill::Novice)),
            Err(AssessError::NoTrials { .. })
        ));
        let csv = frequency_csv(&[p]);
        assert!(csv.starts_with("gesture,all\nG1,1\nG2,2\n"), "{csv}");
    }

    #[test]
    fn identical_experts_give_zero_summary() {
        let d = Dataset::new(vec![
            trial_with("S1", 1, Skill::Expert, &[(0, 4, 1)], 1.0),
            trial_with("S2", 1, Skill::Expert, &[(0, 4, 1)], 1.0),
            trial_with("S3", 1, Skill::Novice, &[(0, 4, 1)], 3.0),
        ]);
        let stats = distance_stats(&d, Task::Suturing, &DistanceOptions::default(), &DtwConfig::default()).unwrap();
        let ee = stats[0].summary;
        assert_eq!(stats[0].group, DistanceGroup::ExpertExpert);
        assert_eq!((ee.count, ee.min, ee.q1, ee.median, ee.q3, ee.max, ee.mean), (1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let en = stats[1].summary;
        assert_eq!((en.count, en.median), (2, 8.0));
    }

    #[test]
    fn pairs_need_a_second_trial() {
        // G2 only appears in S1's trial (twice), so it forms no E/E pair
        let d = Dataset::new(vec![
            trial_with("S1", 1, Skill::Expert, &[(0, 4, 1), (4, 8, 2), (8, 12, 2)], 1.0),
            trial_with("S2", 1, Skill::Expert, &[(0, 4, 1)], 1.0),
            trial_with("S3", 1, Skill::Novice, &[(0, 4, 1), (4, 8, 2)], 2.0),
        ]);
        let opts = DistanceOptions {
            per_gesture: true,
            ..Default::default()
        };
        let stats = distance_stats(&d, Task::Suturing, &opts, &DtwConfig::default()).unwrap();
        let cells: Vec<(DistanceGroup, Option<GestureLabel>, usize)> = stats.iter().map(|s| (s.group, s.label, s.summary.count)).collect();
        assert_eq!(
            cells,
            vec![
                (DistanceGroup::ExpertExpert, Some(g(1)), 1),
                (DistanceGroup::ExpertNovice, Some(g(1)), 2),
                (DistanceGroup::ExpertNovice, Some(g(2)), 2),
            ]
        );
        let csv = boxplot_csv(&stats);
        assert!(csv.lines().nth(1).unwrap().starts_with("E/E,G1,1,0,"), "{csv}");
    }

    #[test]
    fn insufficient_groups() {
        let one_expert = Dataset::new(vec![
            trial_with("S1", 1, Skill::Expert, &[(0, 4, 1)], 1.0),
            trial_with("S3", 1, Skill::Novice, &[(0, 4, 1)], 2.0),
        ]);
        assert!(matches!(
            distance_stats(&one_expert, Task::Suturing, &DistanceOptions::default(), &DtwConfig::default()),
            Err(AssessError::InsufficientSegments { group: DistanceGroup::ExpertExpert, .. })
        ));
        let intermediate = Dataset::new(vec![
            trial_with("S1", 1, Skill::Expert, &[(0, 4, 1)], 1.0),
            trial_with("S2", 1, Skill::Expert, &[(0, 4, 1)], 1.0),
            trial_with("S3", 1, Skill::Intermediate, &[(0, 4, 1)], 2.0),
        ]);
        assert!(matches!(
            distance_stats(&intermediate, Task::Suturing, &DistanceOptions::default(), &DtwConfig::default()),
            Err(AssessError::InsufficientSegments { group: DistanceGroup::ExpertNovice, .. })
        ));
        let widened = DistanceOptions {
            include_intermediate: true,
            ..Default::default()
        };
        assert!(distance_stats(&intermediate, Task::Suturing, &widened, &DtwConfig::default()).is_ok());
    }

    #[test]
    fn quartiles_interpolate_linearly() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max, s.mean), (1.0, 1.75, 2.5, 3.25, 4.0, 2.5));
        let s = Summary::of(&[5.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (5.0, 5.0, 5.0));
        assert!(Summary::of(&[]).is_none());
    }

    proptest! {
        #[test]
        fn order_statistics_are_ordered(v in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
            let s = Summary::of(&v).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        }

        #[test]
        fn heatmap_rows_sum_to_one(counts in proptest::collection::vec(proptest::collection::vec(0u64..50, 4), 4)) {
            let cm = ConfusionMatrix::from_counts(labels(&[1, 2, 3, 4]), counts).unwrap();
            for line in heatmap_csv(&cm).lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                let sum: f64 = f[1..5].iter().map(|s| s.parse::<f64>().unwrap()).sum();
                if f[5] == "0" {
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                } else {
                    prop_assert_eq!(sum, 0.0);
                }
            }
        }

        #[test]
        fn recommendations_cite_low_metrics(
            counts in proptest::collection::vec(proptest::collection::vec(0u64..20, 3), 3),
            recall in 0.0f64..1.0,
            precision in 0.0f64..1.0,
        ) {
            let cm = ConfusionMatrix::from_counts(labels(&[1, 2, 3]), counts).unwrap();
            prop_assume!(cm.total() > 0);
            let th = Thresholds { recall, precision };
            let r = assess_confusion("S", Task::Suturing, cm, &th).unwrap();
            for rec in &r.recommendations {
                let m = r.gestures.iter().find(|m| m.label == rec.label).unwrap();
                match rec.kind {
                    RecommendationKind::MoreTraining => {
                        prop_assert_eq!(rec.evidence.metric, Metric::Recall);
                        prop_assert!(m.recall.unwrap() < recall && rec.evidence.value == m.recall.unwrap());
                    }
                    RecommendationKind::DefinitionReview => {
                        prop_assert_eq!(rec.evidence.metric, Metric::Precision);
                        prop_assert!(m.precision.unwrap() < precision && rec.evidence.value == m.precision.unwrap());
                    }
                }
            }
            let expected = r.gestures.iter().map(|m| {
                usize::from(m.recall.is_some_and(|v| v < recall)) + usize::from(m.precision.is_some_and(|v| v < precision))
            }).sum::<usize>();
            prop_assert_eq!(r.recommendations.len(), expected);
        }
    }

    #[test]
    fn feedback_session_tracks_new_trials() {
        let rows = [(0, 4, 1), (4, 8, 2)];
        let mk = |s: &str, i: u32, skill, shift: f64| {
            let mut t = trial_with(s, i, skill, &rows, 0.0);
            let values: Vec<f64> = (0..8).map(|f| if f < 4 { shift } else { 10.0 + shift }).collect();
            t.kinematics = TimeSeries::univariate(&values).unwrap();
            t
        };
        let d = Dataset::new(vec![mk("S1", 1, Skill::Expert, 0.0), mk("S2", 1, Skill::Novice, 0.5)]);
        let mut session = FeedbackSession::new(
            d,
            Task::Suturing,
            "S2",
            KnnConfig::default(),
            EvalOptions::default(),
            Thresholds::default(),
        );
        let first = session.report().unwrap();
        assert_eq!(first.confusion.total(), 2);
        let second = session.add_trial(mk("S2", 2, Skill::Novice, 0.2)).unwrap();
        assert_eq!(second.confusion.total(), 4);
        assert_eq!(second.accuracy, 1.0);

        let mut bad = mk("S2", 3, Skill::Novice, 0.0);
        bad.annotations.push(Annotation::new(6, 7, g(3)));
        assert!(matches!(session.add_trial(bad), Err(AssessError::Invalid(_))));
        assert_eq!(session.dataset().trials.len(), 3);
        assert!(matches!(
            assess_fold(session.dataset(), Task::Suturing, "S9", &KnnConfig::default(), &EvalOptions::default(), &Thresholds::default()),
            Err(AssessError::Eval(EvalError::UnknownSurgeon(_)))
        ));
    }
}
