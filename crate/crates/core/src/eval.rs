//! Leave-one-user-out cross-validation.
//!
//! Each fold holds out every segment of one surgeon and classifies them
//! against the segments of all other surgeons performing the same task.
//! DTW-kNN is deterministic, so a fold run once is the fold run any number
//! of times; repeated runs are still supported and checked for equality.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{check_pool, classify_all_with, classify_with_distances, ClassifyError, KnnConfig, Prediction, SearchOptions};
use crate::distance::dtw_unchecked;
use crate::model::{slice_usable_segments, Dataset, GestureLabel, GestureSegment, ModelError, Skill, Task};
use crate::par::Execution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("leave-one-user-out needs at least 2 surgeons for {task}, found {found}")]
    TooFewSurgeons { task: Task, found: usize },
    #[error("surgeon {0} has no usable segments for this task")]
    UnknownSurgeon(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("repetition {0} produced different predictions")]
    NonDeterministic(usize),
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
}

/// Segments of one task with their owners; folds index into it.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPool {
    pub segments: Vec<GestureSegment>,
    pub surgeons: Vec<String>,
    pub skills: Vec<Skill>,
}

impl SegmentPool {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LouoFold {
    pub held_out_surgeon: String,
    pub skill: Skill,
    /// Pool indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldPlan {
    pub task: Task,
    pub pool: SegmentPool,
    pub folds: Vec<LouoFold>,
    /// Transcript rows dropped for having fewer than 2 frames.
    pub excluded_short: usize,
    /// Transcript rows dropped by the label exclusion list.
    pub excluded_by_label: usize,
}

impl FoldPlan {
    pub fn fold(&self, surgeon: &str) -> Option<&LouoFold> {
        self.folds.iter().find(|f| f.held_out_surgeon == surgeon)
    }

    /// Every (fold, segment) placement that breaks the LOUO partition.
    pub fn leakage(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for f in &self.folds {
            for &i in &f.train {
                if self.pool.surgeons[i] == f.held_out_surgeon {
                    problems.push(format!("fold {}: {} in training", f.held_out_surgeon, self.pool.segments[i].id()));
                }
            }
            for &i in &f.test {
                if self.pool.surgeons[i] != f.held_out_surgeon {
                    problems.push(format!("fold {}: foreign {} in test", f.held_out_surgeon, self.pool.segments[i].id()));
                }
            }
            let train: BTreeSet<usize> = f.train.iter().copied().collect();
            let test: BTreeSet<usize> = f.test.iter().copied().collect();
            if train.intersection(&test).next().is_some() {
                problems.push(format!("fold {}: train and test overlap", f.held_out_surgeon));
            }
            if train.len() + test.len() != self.pool.len() || train.union(&test).count() != self.pool.len() {
                problems.push(format!("fold {}: does not cover the pool", f.held_out_surgeon));
            }
        }
        problems
    }
}

/// Folds for `task` with every transcript label included.
pub fn make_louo_folds(d: &Dataset, task: Task) -> Result<FoldPlan, EvalError> {
    make_louo_folds_excluding(d, task, &[])
}

/// Folds for `task`, skipping rows labelled with any of `exclude`.
pub fn make_louo_folds_excluding(d: &Dataset, task: Task, exclude: &[GestureLabel]) -> Result<FoldPlan, EvalError> {
    let mut pool = SegmentPool {
        segments: Vec::new(),
        surgeons: Vec::new(),
        skills: Vec::new(),
    };
    let mut excluded_short = 0;
    let mut excluded_by_label = 0;
    for t in d.task_trials(task) {
        let (segments, short) = slice_usable_segments(t, &d.channel_selection)?;
        excluded_short += short;
        for s in segments {
            if exclude.contains(&s.label) {
                excluded_by_label += 1;
                continue;
            }
            pool.surgeons.push(t.surgeon_id.clone());
            pool.skills.push(t.skill);
            pool.segments.push(s);
        }
    }

    // surgeons in order of first appearance, only those with segments left
    let mut surgeons: Vec<(String, Skill)> = Vec::new();
    for (s, &k) in pool.surgeons.iter().zip(&pool.skills) {
        if !surgeons.iter().any(|(x, _)| x == s) {
            surgeons.push((s.clone(), k));
        }
    }
    if surgeons.len() < 2 {
        return Err(EvalError::TooFewSurgeons {
            task,
            found: surgeons.len(),
        });
    }
    let folds = surgeons
        .into_iter()
        .map(|(surgeon, skill)| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..pool.len()).partition(|&i| pool.surgeons[i] == surgeon);
            LouoFold {
                held_out_surgeon: surgeon,
                skill,
                train,
                test,
            }
        })
        .collect();
    Ok(FoldPlan {
        task,
        pool,
        folds,
        excluded_short,
        excluded_by_label,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub exclude: Vec<GestureLabel>,
    pub repetitions: usize,
    pub execution: Execution,
    /// Envelope pruning for banded configs.
    pub prune: bool,
    /// Precompute all cross-surgeon distances once when the full pool
    /// matrix fits in this many bytes; each pair is then evaluated once
    /// instead of once per fold it appears in.
    pub memo_budget_bytes: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exclude: Vec::new(),
            repetitions: 1,
            execution: Execution::default(),
            prune: true,
            memo_budget_bytes: 512 << 20,
        }
    }
}

impl EvalOptions {
    /// Exclusions matching the published confusion tables, which leave out
    /// the rare suturing gestures G9 and G10.
    pub fn table_exclusions(task: Task) -> Vec<GestureLabel> {
        match task {
            Task::Suturing => vec![GestureLabel::new(9).unwrap(), GestureLabel::new(10).unwrap()],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub surgeon_id: String,
    pub skill: Skill,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: Task,
    pub knn: KnnConfig,
    pub per_fold: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over folds; absent with a single fold.
    pub std_accuracy: Option<f64>,
    pub excluded_short: usize,
    pub excluded_by_label: usize,
    pub excluded_labels: Vec<GestureLabel>,
    pub repetitions: usize,
}

/// Arithmetic mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

pub fn run_louo(d: &Dataset, task: Task, cfg: &KnnConfig) -> Result<EvalResult, EvalError> {
    run_louo_with(d, task, cfg, &EvalOptions::default())
}

pub fn run_louo_with(d: &Dataset, task: Task, cfg: &KnnConfig, opts: &EvalOptions) -> Result<EvalResult, EvalError> {
    let plan = make_louo_folds_excluding(d, task, &opts.exclude)?;
    evaluate_plan(&plan, cfg, opts)
}

/// Runs every fold of a prepared plan.
pub fn evaluate_plan(plan: &FoldPlan, cfg: &KnnConfig, opts: &EvalOptions) -> Result<EvalResult, EvalError> {
    if opts.repetitions == 0 {
        return Err(EvalError::ZeroRepetitions);
    }
    let mut first: Option<Vec<Vec<Prediction>>> = None;
    for rep in 0..opts.repetitions {
        let preds = predict_folds(plan, cfg, opts)?;
        match &first {
            None => first = Some(preds),
            Some(f) if *f != preds => return Err(EvalError::NonDeterministic(rep)),
            Some(_) => {}
        }
    }
    let predictions = first.expect("at least one repetition");

    let per_fold: Vec<FoldResult> = plan
        .folds
        .iter()
        .zip(predictions)
        .map(|(f, predictions)| {
            let correct = predictions.iter().filter(|p| p.is_correct()).count();
            let total = predictions.len();
            FoldResult {
                surgeon_id: f.held_out_surgeon.clone(),
                skill: f.skill,
                correct,
                total,
                accuracy: correct as f64 / total as f64,
                predictions,
            }
        })
        .collect();
    let accs: Vec<f64> = per_fold.iter().map(|f| f.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    Ok(EvalResult {
        task: plan.task,
        knn: *cfg,
        per_fold,
        mean_accuracy,
        std_accuracy,
        excluded_short: plan.excluded_short,
        excluded_by_label: plan.excluded_by_label,
        excluded_labels: opts.exclude.clone(),
        repetitions: opts.repetitions,
    })
}

/// Predictions of the fold holding out `surgeon`.
pub fn run_fold(plan: &FoldPlan, surgeon: &str, cfg: &KnnConfig, opts: &EvalOptions) -> Result<Vec<Prediction>, EvalError> {
    let fold = plan.fold(surgeon).ok_or_else(|| EvalError::UnknownSurgeon(surgeon.to_string()))?;
    let train: Vec<GestureSegment> = fold.train.iter().map(|&i| plan.pool.segments[i].clone()).collect();
    let test: Vec<GestureSegment> = fold.test.iter().map(|&i| plan.pool.segments[i].clone()).collect();
    Ok(classify_all_with(
        &test,
        &train,
        cfg,
        SearchOptions {
            execution: opts.execution,
            prune: opts.prune,
            exclude_self: false,
        },
    )?)
}

fn predict_folds(plan: &FoldPlan, cfg: &KnnConfig, opts: &EvalOptions) -> Result<Vec<Vec<Prediction>>, EvalError> {
    let n = plan.pool.len();
    let memo_bytes = n.saturating_mul(n).saturating_mul(std::mem::size_of::<f64>());
    if memo_bytes <= opts.memo_budget_bytes {
        let memo = cross_surgeon_distances(plan, cfg, opts.execution)?;
        plan.folds
            .iter()
            .map(|f| {
                let train: Vec<&GestureSegment> = f.train.iter().map(|&j| &plan.pool.segments[j]).collect();
                opts.execution.try_map(&f.test, |&i| {
                    let row: Vec<f64> = f.train.iter().map(|&j| memo[i * n + j]).collect();
                    classify_with_distances(&plan.pool.segments[i], &train, &row, cfg).map_err(EvalError::from)
                })
            })
            .collect()
    } else {
        plan.folds
            .iter()
            .map(|f| run_fold(plan, &f.held_out_surgeon, cfg, opts))
            .collect()
    }
}

/// Row-major `n x n` distances between segments of different surgeons;
/// same-surgeon entries are NaN and never read.
fn cross_surgeon_distances(plan: &FoldPlan, cfg: &KnnConfig, exec: Execution) -> Result<Vec<f64>, EvalError> {
    let pool = &plan.pool;
    let n = pool.len();
    check_pool(&pool.segments, cfg)?;
    let rows = exec.map_range(n, |i| {
        ((i + 1)..n)
            .map(|j| {
                if pool.surgeons[i] == pool.surgeons[j] {
                    f64::NAN
                } else {
                    dtw_unchecked(&pool.segments[i].series, &pool.segments[j].series, &cfg.dtw, f64::INFINITY)
                        .expect("unbounded")
                }
            })
            .collect::<Vec<f64>>()
    });
    let mut out = vec![f64::NAN; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

impl EvalResult {
    /// Per-surgeon accuracy table (percent) with average and std rows.
    pub fn table_text(&self) -> String {
        accuracy_table(std::slice::from_ref(self))
    }

    /// Tab-separated per-fold rows for plotting.
    pub fn folds_tsv(&self) -> String {
        let mut out = String::from("surgeon\tskill\tcorrect\ttotal\taccuracy\n");
        for f in &self.per_fold {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", f.surgeon_id, f.skill, f.correct, f.total, f.accuracy);
        }
        out
    }

    pub fn all_predictions(&self) -> impl Iterator<Item = &Prediction> {
        self.per_fold.iter().flat_map(|f| f.predictions.iter())
    }
}

/// Accuracy table over several tasks: one row per surgeon, `-` where a
/// surgeon has no fold for a task.
pub fn accuracy_table(results: &[EvalResult]) -> String {
    let mut surgeons: Vec<&str> = Vec::new();
    for r in results {
        for f in &r.per_fold {
            if !surgeons.contains(&f.surgeon_id.as_str()) {
                surgeons.push(&f.surgeon_id);
            }
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "");
    for r in results {
        let _ = write!(out, "{:>16}", title_case(&r.task.to_string()));
    }
    out.push('\n');
    for s in surgeons {
        let _ = write!(out, "{s:<8}");
        for r in results {
            match r.per_fold.iter().find(|f| f.surgeon_id == s) {
                Some(f) => {
                    let _ = write!(out, "{:>16.2}", 100.0 * f.accuracy);
                }
                None => {
                    let _ = write!(out, "{:>16}", "-");
                }
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<8}", "Avg.");
    for r in results {
        let _ = write!(out, "{:>16.2}", 100.0 * r.mean_accuracy);
    }
    out.push('\n');
    let _ = write!(out, "{:<8}", "Std.");
    for r in results {
        match r.std_accuracy {
            Some(s) => {
                let _ = write!(out, "{:>16.2}", 100.0 * s);
            }
            None => {
                let _ = write!(out, "{:>16}", "—");
            }
        }
    }
    out.push('\n');
    out
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Annotation, TimeSeries, Trial};

    fn g(k: u32) -> GestureLabel {
        GestureLabel::new(k).unwrap()
    }

    /// Trial built by concatenating one fixed template per gesture.
    fn templated_trial(surgeon: &str, skill: Skill, index: u32, gestures: &[u32], task: Task) -> Trial {
        let mut data = Vec::new();
        let mut annotations = Vec::new();
        for &k in gestures {
            let start = data.len() / 2;
            for i in 0..6 {
                let x = i as f64;
                data.extend([k as f64 + (x * 0.7 + k as f64).sin(), (k as f64) * x * 0.1]);
            }
            annotations.push(Annotation::new(start, data.len() / 2, g(k)));
        }
        Trial {
            surgeon_id: surgeon.into(),
            task,
            trial_index: index,
            skill,
            kinematics: TimeSeries::new(data, 2, 30.0).unwrap(),
            annotations,
        }
    }

    fn shared_template_dataset(surgeons: usize) -> Dataset {
        let mut trials = Vec::new();
        for s in 0..surgeons {
            let skill = if s % 2 == 0 { Skill::Expert } else { Skill::Novice };
            for t in 1..=2 {
                trials.push(templated_trial(&format!("S{}", s + 1), skill, t, &[1, 2, 3, 2, 6, 11], Task::Suturing));
            }
        }
        trials.push(templated_trial("S9", Skill::Expert, 1, &[1, 12, 13], Task::KnotTying));
        Dataset::new(trials)
    }

    #[test]
    fn one_fold_per_surgeon() {
        let d = shared_template_dataset(8);
        let plan = make_louo_folds(&d, Task::Suturing).unwrap();
        assert_eq!(plan.folds.len(), 8);
        assert!(plan.leakage().is_empty());
        assert!(plan.folds.iter().all(|f| f.held_out_surgeon != "S9"));
    }

    #[test]
    fn two_surgeon_partition() {
        let d = shared_template_dataset(2);
        let plan = make_louo_folds(&d, Task::Suturing).unwrap();
        let a = plan.fold("S1").unwrap();
        assert!(a.test.iter().all(|&i| plan.pool.surgeons[i] == "S1"));
        assert!(a.train.iter().all(|&i| plan.pool.surgeons[i] == "S2"));
        assert_eq!(a.train.len() + a.test.len(), plan.pool.len());
    }

    #[test]
    fn single_surgeon_is_an_error() {
        let d = shared_template_dataset(1);
        assert!(matches!(
            make_louo_folds(&d, Task::Suturing),
            Err(EvalError::TooFewSurgeons { found: 1, .. })
        ));
        assert!(matches!(
            make_louo_folds(&d, Task::KnotTying),
            Err(EvalError::TooFewSurgeons { .. })
        ));
    }

    #[test]
    fn shared_templates_classify_perfectly() {
        let d = shared_template_dataset(4);
        let r = run_louo(&d, Task::Suturing, &KnnConfig::default()).unwrap();
        assert_eq!(r.per_fold.len(), 4);
        assert!(r.per_fold.iter().all(|f| f.accuracy == 1.0));
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.std_accuracy, Some(0.0));
        assert!(r.table_text().contains("Avg."));
    }

    #[test]
    fn single_gesture_dataset() {
        let trials = (1..=3)
            .map(|s| {
                let mut t = templated_trial(&format!("S{s}"), Skill::Novice, 1, &[3, 3, 3], Task::Suturing);
                // perturb so distances are non-zero
                let raw: Vec<f64> = t.kinematics.as_slice().iter().map(|v| v * (1.0 + s as f64 / 10.0)).collect();
                t.kinematics = TimeSeries::new(raw, 2, 30.0).unwrap();
                t
            })
            .collect();
        let r = run_louo(&Dataset::new(trials), Task::Suturing, &KnnConfig::default()).unwrap();
        assert_eq!(r.mean_accuracy, 1.0);
    }

    #[test]
    fn memo_and_direct_paths_agree() {
        let mut d = shared_template_dataset(4);
        for (n, t) in d.trials.iter_mut().enumerate() {
            let raw: Vec<f64> = t
                .kinematics
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, v)| v + ((i * 31 + n * 7) % 13) as f64 * 0.05)
                .collect();
            t.kinematics = TimeSeries::new(raw, 2, 30.0).unwrap();
        }
        let cfg = KnnConfig {
            k: 3,
            ..Default::default()
        };
        let memo = run_louo_with(&d, Task::Suturing, &cfg, &EvalOptions::default()).unwrap();
        let direct = run_louo_with(
            &d,
            Task::Suturing,
            &cfg,
            &EvalOptions {
                memo_budget_bytes: 0,
                execution: Execution::Sequential,
                repetitions: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(memo.per_fold, direct.per_fold);
        assert_eq!(direct.repetitions, 3);
    }

    #[test]
    fn aggregates_recompute() {
        let d = shared_template_dataset(3);
        let mut trials = d.trials.clone();
        // surgeon S2 performs a gesture nobody else does
        trials[2] = templated_trial("S2", Skill::Novice, 1, &[1, 5, 8, 4], Task::Suturing);
        let r = run_louo(&Dataset::new(trials), Task::Suturing, &KnnConfig::default()).unwrap();
        let accs: Vec<f64> = r.per_fold.iter().map(|f| f.accuracy).collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64;
        assert!((r.mean_accuracy - mean).abs() < 1e-12);
        assert!((r.std_accuracy.unwrap() - var.sqrt()).abs() < 1e-12);
        assert!(r.mean_accuracy < 1.0);
    }

    #[test]
    fn exclusions_are_counted() {
        let trials = (1..=2)
            .map(|s| templated_trial(&format!("S{s}"), Skill::Expert, 1, &[1, 9, 10, 2], Task::Suturing))
            .collect();
        let d = Dataset::new(trials);
        let opts = EvalOptions {
            exclude: EvalOptions::table_exclusions(Task::Suturing),
            ..Default::default()
        };
        let r = run_louo_with(&d, Task::Suturing, &KnnConfig::default(), &opts).unwrap();
        assert_eq!(r.excluded_by_label, 4);
        assert_eq!(r.per_fold[0].total, 2);
    }

    #[test]
    fn zero_repetitions_rejected() {
        let d = shared_template_dataset(2);
        let opts = EvalOptions {
            repetitions: 0,
            ..Default::default()
        };
        assert_eq!(
            run_louo_with(&d, Task::Suturing, &KnnConfig::default(), &opts),
            Err(EvalError::ZeroRepetitions)
        );
    }

    #[test]
    fn multi_task_table_marks_missing() {
        let mut t = shared_template_dataset(3).trials;
        t.push(templated_trial("S1", Skill::Expert, 1, &[1, 2, 3], Task::NeedlePassing));
        t.push(templated_trial("S2", Skill::Novice, 1, &[1, 2, 3], Task::NeedlePassing));
        let d = Dataset::new(t);
        let su = run_louo(&d, Task::Suturing, &KnnConfig::default()).unwrap();
        let np = run_louo(&d, Task::NeedlePassing, &KnnConfig::default()).unwrap();
        let table = accuracy_table(&[su, np]);
        let s3 = table.lines().find(|l| l.starts_with("S3")).unwrap();
        assert!(s3.trim_end().ends_with('-'), "{table}");
        assert!(table.contains("Needle Passing"));
    }
}
