//! DTW k-nearest-neighbour gesture classifier.
//!
//! Neighbours are ranked by `(distance, segment id)`, so the neighbour set
//! does not depend on the order of the training list. Votes are resolved by
//! count, then by the configured tie-break.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{dtw_unchecked, envelope_lower_bound_unchecked, DistanceError, DtwConfig};
use crate::model::{GestureLabel, GestureSegment};
use crate::par::Execution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("segment {id}: {source}")]
    Distance {
        id: String,
        #[source]
        source: DistanceError,
    },
    #[error("{given} precomputed distances for {expected} training segments")]
    DistanceCount { given: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Smallest mean neighbour distance, then smallest gesture index.
    #[default]
    SmallestMeanDistance,
    SmallestLabelIndex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub dtw: DtwConfig,
    pub tie_break: TieBreak,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 1,
            dtw: DtwConfig::default(),
            tie_break: TieBreak::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub label: GestureLabel,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub segment_id: String,
    pub predicted: GestureLabel,
    pub actual: GestureLabel,
    /// Nearest training segments, ascending by distance.
    pub neighbors: Vec<Neighbor>,
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.predicted == self.actual
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    pub execution: Execution,
    /// Skip candidates with the envelope lower bound and abandon DTW early.
    /// Only takes effect for banded configs.
    pub prune: bool,
    /// Ignore training segments whose id equals the query's.
    pub exclude_self: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            execution: Execution::default(),
            prune: true,
            exclude_self: false,
        }
    }
}

fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id))
}

/// Bounded sorted list of the best `k` candidates seen so far.
struct Nearest {
    k: usize,
    items: Vec<Neighbor>,
}

impl Nearest {
    fn new(k: usize) -> Self {
        Nearest {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    /// Distance a candidate must not exceed to possibly enter the list.
    fn threshold(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].distance
        }
    }

    fn offer(&mut self, n: Neighbor) {
        if self.items.len() == self.k && rank(&n, &self.items[self.k - 1]) != Ordering::Less {
            return;
        }
        let pos = self.items.partition_point(|x| rank(x, &n) == Ordering::Less);
        self.items.insert(pos, n);
        self.items.truncate(self.k);
    }
}

fn vote(neighbors: &[Neighbor], tie_break: TieBreak) -> GestureLabel {
    let mut tally: BTreeMap<GestureLabel, (usize, f64)> = BTreeMap::new();
    for n in neighbors {
        let e = tally.entry(n.label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += n.distance;
    }
    let top = tally.values().map(|v| v.0).max().expect("at least one neighbour");
    // BTreeMap iterates by ascending label index
    let tied = tally.iter().filter(|(_, v)| v.0 == top);
    match tie_break {
        TieBreak::SmallestLabelIndex => *tied.map(|(l, _)| l).next().expect("non-empty"),
        TieBreak::SmallestMeanDistance => {
            let mut best: Option<(GestureLabel, f64)> = None;
            for (&label, &(count, sum)) in tied {
                let mean = sum / count as f64;
                if best.is_none_or(|(_, m)| mean < m) {
                    best = Some((label, mean));
                }
            }
            best.expect("non-empty").0
        }
    }
}

fn check_inputs(query: &GestureSegment, train: &[GestureSegment], cfg: &KnnConfig) -> Result<(), ClassifyError> {
    if cfg.k == 0 {
        return Err(ClassifyError::ZeroK);
    }
    if train.is_empty() {
        return Err(ClassifyError::EmptyTraining);
    }
    let err = |source| ClassifyError::Distance { id: query.id(), source };
    cfg.dtw.check().map_err(err)?;
    let m = query.series.channels();
    for s in std::iter::once(query).chain(train) {
        if s.series.channels() != m {
            return Err(ClassifyError::Distance {
                id: s.id(),
                source: DistanceError::ChannelMismatch {
                    left: m,
                    right: s.series.channels(),
                },
            });
        }
        if s.series.frames() < 2 {
            return Err(ClassifyError::Distance {
                id: s.id(),
                source: DistanceError::TooShort(s.series.frames()),
            });
        }
    }
    Ok(())
}

/// Checks the config and that every segment is usable with every other.
pub(crate) fn check_pool(segments: &[GestureSegment], cfg: &KnnConfig) -> Result<(), ClassifyError> {
    match segments.first() {
        Some(first) => check_inputs(first, segments, cfg),
        None if cfg.k == 0 => Err(ClassifyError::ZeroK),
        None => Ok(()),
    }
}

/// Exhaustive kNN: computes the full DTW distance to every training segment.
pub fn knn_classify(query: &GestureSegment, train: &[GestureSegment], cfg: &KnnConfig) -> Result<Prediction, ClassifyError> {
    check_inputs(query, train, cfg)?;
    search(query, train, cfg, false, false)
}

fn search(
    query: &GestureSegment,
    train: &[GestureSegment],
    cfg: &KnnConfig,
    prune: bool,
    exclude_self: bool,
) -> Result<Prediction, ClassifyError> {
    let query_id = query.id();
    let prune = prune && cfg.dtw.band_radius.is_some();
    let mut best = Nearest::new(cfg.k);
    for cand in train {
        let id = cand.id();
        if exclude_self && id == query_id {
            continue;
        }
        let distance = if prune {
            let threshold = best.threshold();
            if threshold.is_finite() && envelope_lower_bound_unchecked(&query.series, &cand.series, &cfg.dtw) > threshold {
                continue;
            }
            // partial costs bound nothing once divided by the path length
            let cutoff = if cfg.dtw.normalize_by_path_length {
                f64::INFINITY
            } else {
                threshold
            };
            match dtw_unchecked(&query.series, &cand.series, &cfg.dtw, cutoff) {
                Some(d) => d,
                None => continue,
            }
        } else {
            dtw_unchecked(&query.series, &cand.series, &cfg.dtw, f64::INFINITY).expect("unbounded")
        };
        best.offer(Neighbor {
            id,
            label: cand.label,
            distance,
        });
    }
    if best.items.is_empty() {
        return Err(ClassifyError::EmptyTraining);
    }
    Ok(finish(query_id, query.label, best.items, cfg))
}

fn finish(segment_id: String, actual: GestureLabel, neighbors: Vec<Neighbor>, cfg: &KnnConfig) -> Prediction {
    let predicted = vote(&neighbors, cfg.tie_break);
    Prediction {
        segment_id,
        predicted,
        actual,
        neighbors,
    }
}

/// Classifies every query against `train` with default search options.
pub fn classify_all(queries: &[GestureSegment], train: &[GestureSegment], cfg: &KnnConfig) -> Result<Vec<Prediction>, ClassifyError> {
    classify_all_with(queries, train, cfg, SearchOptions::default())
}

pub fn classify_all_with(
    queries: &[GestureSegment],
    train: &[GestureSegment],
    cfg: &KnnConfig,
    opts: SearchOptions,
) -> Result<Vec<Prediction>, ClassifyError> {
    let Some(first) = queries.first() else {
        return Ok(Vec::new());
    };
    check_inputs(first, train, cfg)?;
    for q in queries {
        check_inputs(q, &train[..1], cfg)?;
    }
    opts.execution
        .try_map(queries, |q| search(q, train, cfg, opts.prune, opts.exclude_self))
}

/// kNN from precomputed distances, `distances[j]` being the distance from
/// `query` to `train[j]`.
pub fn classify_with_distances(
    query: &GestureSegment,
    train: &[&GestureSegment],
    distances: &[f64],
    cfg: &KnnConfig,
) -> Result<Prediction, ClassifyError> {
    if cfg.k == 0 {
        return Err(ClassifyError::ZeroK);
    }
    if train.is_empty() {
        return Err(ClassifyError::EmptyTraining);
    }
    if distances.len() != train.len() {
        return Err(ClassifyError::DistanceCount {
            given: distances.len(),
            expected: train.len(),
        });
    }
    let mut best = Nearest::new(cfg.k);
    for (cand, &distance) in train.iter().zip(distances) {
        best.offer(Neighbor {
            id: cand.id(),
            label: cand.label,
            distance,
        });
    }
    Ok(finish(query.id(), query.label, best.items, cfg))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::model::{GestureLabel, GestureSegment, TimeSeries};

    pub fn segment(trial: &str, ordinal: usize, label: u32, values: &[f64], channels: usize) -> GestureSegment {
        let series = TimeSeries::new(values.to_vec(), channels, 30.0).unwrap();
        GestureSegment {
            trial_id: trial.to_string(),
            ordinal,
            label: GestureLabel::new(label).unwrap(),
            start_frame: 0,
            end_frame: series.frames(),
            series,
        }
    }

    /// Constant univariate segment at `level`.
    pub fn flat(trial: &str, ordinal: usize, label: u32, level: f64, len: usize) -> GestureSegment {
        segment(trial, ordinal, label, &vec![level; len], 1)
    }
}
