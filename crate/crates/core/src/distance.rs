//! Distance kernels: pointwise `L_n`, multivariate DTW with an optional
//! Sakoe-Chiba band, and an envelope lower bound for pruning kNN search.
//!
//! The DTW recurrence is
//!
//! ```text
//! g(i, j) = d(a_i, b_j) + min{ g(i-1, j-1), g(i, j-1), g(i-1, j) }
//! g(0, 0) = d(a_0, b_0),  g = +inf outside the grid (and outside the band)
//! ```
//!
//! with `d` the order-`n` Minkowski norm over channels (Euclidean for the
//! default `n = 2`). The kernel keeps two rolling rows over the shorter
//! series. Every cell value is invariant under swapping the arguments, so
//! `dtw(a, b)` and `dtw(b, a)` are bit-identical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GestureSegment, TimeSeries};
use crate::par::Execution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistanceError {
    #[error("series lengths differ: {left} vs {right} frames")]
    LengthMismatch { left: usize, right: usize },
    #[error("channel counts differ: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },
    #[error("norm order must be at least 1")]
    ZeroNormOrder,
    #[error("series has {0} frames, DTW needs at least 2")]
    TooShort(usize),
    #[error("envelope lower bound needs a band radius")]
    Unbanded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtwConfig {
    /// Order `n` of the per-frame local distance.
    pub local_norm_order: u32,
    /// Sakoe-Chiba radius; widened to `|p - q|` when narrower.
    pub band_radius: Option<usize>,
    /// Divide the optimal cost by the number of cells on the optimal path.
    pub normalize_by_path_length: bool,
}

impl Default for DtwConfig {
    fn default() -> Self {
        DtwConfig {
            local_norm_order: 2,
            band_radius: None,
            normalize_by_path_length: false,
        }
    }
}

impl DtwConfig {
    pub fn banded(radius: usize) -> Self {
        DtwConfig {
            band_radius: Some(radius),
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<(), DistanceError> {
        if self.local_norm_order == 0 {
            return Err(DistanceError::ZeroNormOrder);
        }
        Ok(())
    }

    /// Radius actually applied to a `p x q` grid, `None` when unconstrained.
    pub fn effective_band(&self, p: usize, q: usize) -> Option<usize> {
        self.band_radius.map(|r| r.max(p.abs_diff(q)))
    }
}

#[inline]
fn minkowski(a: &[f64], b: &[f64], n: u32) -> f64 {
    match n {
        2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        _ => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs().powi(n as i32))
            .sum::<f64>()
            .powf(1.0 / n as f64),
    }
}

fn same_channels(a: &TimeSeries, b: &TimeSeries) -> Result<(), DistanceError> {
    if a.channels() != b.channels() {
        return Err(DistanceError::ChannelMismatch {
            left: a.channels(),
            right: b.channels(),
        });
    }
    Ok(())
}

/// Euclidean distance between two frames.
pub fn point_distance(a: &[f64], b: &[f64]) -> Result<f64, DistanceError> {
    if a.len() != b.len() {
        return Err(DistanceError::ChannelMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(minkowski(a, b, 2))
}

/// Lock-step distance `(sum_i |a_i - b_i|^n)^(1/n)`, where `|.|` is the
/// Euclidean norm of the frame difference.
pub fn ln_distance(a: &TimeSeries, b: &TimeSeries, n: u32) -> Result<f64, DistanceError> {
    same_channels(a, b)?;
    if n == 0 {
        return Err(DistanceError::ZeroNormOrder);
    }
    if a.frames() != b.frames() {
        return Err(DistanceError::LengthMismatch {
            left: a.frames(),
            right: b.frames(),
        });
    }
    let total: f64 = a
        .iter_frames()
        .zip(b.iter_frames())
        .map(|(x, y)| minkowski(x, y, 2).powi(n as i32))
        .sum();
    Ok(total.powf(1.0 / n as f64))
}

fn check_pair(a: &TimeSeries, b: &TimeSeries, cfg: &DtwConfig) -> Result<(), DistanceError> {
    cfg.check()?;
    same_channels(a, b)?;
    for s in [a, b] {
        if s.frames() < 2 {
            return Err(DistanceError::TooShort(s.frames()));
        }
    }
    Ok(())
}

/// DTW distance under `cfg`.
pub fn dtw(a: &TimeSeries, b: &TimeSeries, cfg: &DtwConfig) -> Result<f64, DistanceError> {
    check_pair(a, b, cfg)?;
    Ok(dtw_unchecked(a, b, cfg, f64::INFINITY).expect("infinite cutoff never abandons"))
}

/// DTW that gives up once every cell of some row exceeds `cutoff`.
///
/// Returns `None` when abandoned, which implies the distance is strictly
/// greater than `cutoff`. A finite cutoff is ignored when the config
/// normalizes by path length, since partial costs then say nothing about
/// the final value.
pub fn dtw_bounded(a: &TimeSeries, b: &TimeSeries, cfg: &DtwConfig, cutoff: f64) -> Result<Option<f64>, DistanceError> {
    check_pair(a, b, cfg)?;
    let cutoff = if cfg.normalize_by_path_length {
        f64::INFINITY
    } else {
        cutoff
    };
    Ok(dtw_unchecked(a, b, cfg, cutoff))
}

pub(crate) fn dtw_unchecked(a: &TimeSeries, b: &TimeSeries, cfg: &DtwConfig, cutoff: f64) -> Option<f64> {
    // rows over the longer series, rolling buffers over the shorter one
    let (rows, cols) = if a.frames() >= b.frames() { (a, b) } else { (b, a) };
    let (r, c) = (rows.frames(), cols.frames());
    let band = cfg.effective_band(r, c).unwrap_or(r.max(c));
    let n = cfg.local_norm_order;
    let track = cfg.normalize_by_path_length;

    let mut prev = vec![f64::INFINITY; c];
    let mut curr = vec![f64::INFINITY; c];
    let (mut prev_len, mut curr_len) = if track {
        (vec![0u32; c], vec![0u32; c])
    } else {
        (Vec::new(), Vec::new())
    };

    for i in 0..r {
        let lo = i.saturating_sub(band);
        let hi = (i + band).min(c - 1);
        if lo > 0 {
            curr[lo - 1] = f64::INFINITY;
        }
        let ai = rows.frame(i);
        let mut row_min = f64::INFINITY;
        for j in lo..=hi {
            let d = minkowski(ai, cols.frame(j), n);
            let (best, len) = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = f64::INFINITY;
                let mut len = u32::MAX;
                let mut offer = |cost: f64, l: u32| {
                    if cost < best || (cost == best && l < len) {
                        best = cost;
                        len = l;
                    }
                };
                let pick = |v: &[u32], k: usize| if track { v[k] } else { 0 };
                if i > 0 && j > 0 {
                    offer(prev[j - 1], pick(&prev_len, j - 1));
                }
                if i > 0 {
                    offer(prev[j], pick(&prev_len, j));
                }
                if j > 0 {
                    offer(curr[j - 1], pick(&curr_len, j - 1));
                }
                (best, len)
            };
            let v = d + best;
            curr[j] = v;
            if track {
                curr_len[j] = len.saturating_add(1);
            }
            if v < row_min {
                row_min = v;
            }
        }
        if row_min > cutoff {
            return None;
        }
        std::mem::swap(&mut prev, &mut curr);
        if track {
            std::mem::swap(&mut prev_len, &mut curr_len);
        }
    }
    let cost = prev[c - 1];
    if track {
        Some(cost / prev_len[c - 1] as f64)
    } else {
        Some(cost)
    }
}

/// Optimal alignment with its warping path, from a full cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DtwAlignment {
    /// Value [`dtw`] returns for the same inputs.
    pub distance: f64,
    /// Unnormalized cumulative cost.
    pub cost: f64,
    /// Warping path from `(0, 0)` to `(p - 1, q - 1)` as `(index in a, index in b)`.
    pub path: Vec<(usize, usize)>,
    pub effective_band: Option<usize>,
}

/// Debug variant of [`dtw`] that keeps the whole `p x q` matrix to recover
/// the optimal path. Quadratic memory.
pub fn dtw_alignment(a: &TimeSeries, b: &TimeSeries, cfg: &DtwConfig) -> Result<DtwAlignment, DistanceError> {
    check_pair(a, b, cfg)?;
    let (p, q) = (a.frames(), b.frames());
    let band = cfg.effective_band(p, q);
    let inside = |i: usize, j: usize| band.is_none_or(|r| i.abs_diff(j) <= r);
    let idx = |i: usize, j: usize| i * q + j;
    let mut g = vec![f64::INFINITY; p * q];
    let mut steps = vec![u32::MAX; p * q];
    for i in 0..p {
        for j in 0..q {
            if !inside(i, j) {
                continue;
            }
            let d = minkowski(a.frame(i), b.frame(j), cfg.local_norm_order);
            if i == 0 && j == 0 {
                g[0] = d;
                steps[0] = 1;
                continue;
            }
            let mut best = (f64::INFINITY, u32::MAX);
            for (pi, pj) in predecessors(i, j) {
                let cand = (g[idx(pi, pj)], steps[idx(pi, pj)]);
                if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
            g[idx(i, j)] = d + best.0;
            steps[idx(i, j)] = best.1.saturating_add(1);
        }
    }

    let mut path = vec![(p - 1, q - 1)];
    let (mut i, mut j) = (p - 1, q - 1);
    while (i, j) != (0, 0) {
        let mut best: Option<(f64, u32, usize, usize)> = None;
        for (pi, pj) in predecessors(i, j) {
            let cand = (g[idx(pi, pj)], steps[idx(pi, pj)]);
            if best.is_none_or(|b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1)) {
                best = Some((cand.0, cand.1, pi, pj));
            }
        }
        let (_, _, pi, pj) = best.expect("non-origin cell has a predecessor");
        i = pi;
        j = pj;
        path.push((i, j));
    }
    path.reverse();

    let cost = g[idx(p - 1, q - 1)];
    let distance = if cfg.normalize_by_path_length {
        cost / steps[idx(p - 1, q - 1)] as f64
    } else {
        cost
    };
    Ok(DtwAlignment {
        distance,
        cost,
        path,
        effective_band: band,
    })
}

fn predecessors(i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> {
    let diag = (i > 0 && j > 0).then(|| (i - 1, j - 1));
    let up = (i > 0).then(|| (i - 1, j));
    let left = (j > 0).then(|| (i, j - 1));
    [diag, up, left].into_iter().flatten()
}

/// Lower bound on banded [`dtw`] computed from the running envelope of `b`.
///
/// Every warping path visits each frame `a_i` at least once, inside the band
/// window of `b`. The per-channel max/min of `b` over that window bounds how
/// close any visited `b_j` can be, so summing the distance from `a_i` to the
/// envelope box underestimates the path cost. Linear in `p + q`.
pub fn envelope_lower_bound(a: &TimeSeries, b: &TimeSeries, cfg: &DtwConfig) -> Result<f64, DistanceError> {
    if cfg.band_radius.is_none() {
        return Err(DistanceError::Unbanded);
    }
    check_pair(a, b, cfg)?;
    Ok(envelope_lower_bound_unchecked(a, b, cfg))
}

pub(crate) fn envelope_lower_bound_unchecked(a: &TimeSeries, b: &TimeSeries, cfg: &DtwConfig) -> f64 {
    let (p, q) = (a.frames(), b.frames());
    let m = a.channels();
    let band = cfg.effective_band(p, q).expect("caller checks band");
    let env = Envelope::build(b, p, band);
    let mut gap = vec![0.0; m];
    let origin = vec![0.0; m];
    let mut total = 0.0;
    for i in 0..p {
        let ai = a.frame(i);
        let (upper, lower) = (env.upper(i), env.lower(i));
        for c in 0..m {
            gap[c] = (ai[c] - upper[c]).max(lower[c] - ai[c]).max(0.0);
        }
        total += minkowski(&gap, &origin, cfg.local_norm_order);
    }
    if cfg.normalize_by_path_length {
        total / (p + q - 1) as f64
    } else {
        total
    }
}

/// Per-channel running max/min of a series over the windows
/// `[i - r, i + r]` clipped to the series, for `i` in `0..len`.
struct Envelope {
    channels: usize,
    upper: Vec<f64>,
    lower: Vec<f64>,
}

impl Envelope {
    fn build(s: &TimeSeries, len: usize, radius: usize) -> Self {
        let m = s.channels();
        let q = s.frames();
        let mut upper = vec![0.0; len * m];
        let mut lower = vec![0.0; len * m];
        let mut maxq = std::collections::VecDeque::with_capacity(q);
        let mut minq = std::collections::VecDeque::with_capacity(q);
        for c in 0..m {
            maxq.clear();
            minq.clear();
            let val = |j: usize| s.frame(j)[c];
            let mut next = 0usize;
            for i in 0..len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(q - 1);
                while next <= hi {
                    let v = val(next);
                    while maxq.back().is_some_and(|&k| val(k) <= v) {
                        maxq.pop_back();
                    }
                    maxq.push_back(next);
                    while minq.back().is_some_and(|&k| val(k) >= v) {
                        minq.pop_back();
                    }
                    minq.push_back(next);
                    next += 1;
                }
                while maxq.front().is_some_and(|&k| k < lo) {
                    maxq.pop_front();
                }
                while minq.front().is_some_and(|&k| k < lo) {
                    minq.pop_front();
                }
                upper[i * m + c] = val(*maxq.front().expect("window is non-empty"));
                lower[i * m + c] = val(*minq.front().expect("window is non-empty"));
            }
        }
        Envelope {
            channels: m,
            upper,
            lower,
        }
    }

    fn upper(&self, i: usize) -> &[f64] {
        &self.upper[i * self.channels..(i + 1) * self.channels]
    }

    fn lower(&self, i: usize) -> &[f64] {
        &self.lower[i * self.channels..(i + 1) * self.channels]
    }
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    size: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(size: usize) -> Self {
        DistanceMatrix {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    fn set_pair(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.size + j] = v;
        self.data[j * self.size + i] = v;
    }
}

/// All pairwise DTW distances between segments.
pub fn dtw_matrix(segments: &[GestureSegment], cfg: &DtwConfig) -> Result<DistanceMatrix, DistanceError> {
    dtw_matrix_with(segments, cfg, Execution::default())
}

pub fn dtw_matrix_with(segments: &[GestureSegment], cfg: &DtwConfig, exec: Execution) -> Result<DistanceMatrix, DistanceError> {
    let series: Vec<&TimeSeries> = segments.iter().map(|s| &s.series).collect();
    series_matrix(&series, cfg, exec)
}

pub fn series_matrix(series: &[&TimeSeries], cfg: &DtwConfig, exec: Execution) -> Result<DistanceMatrix, DistanceError> {
    cfg.check()?;
    if let Some(first) = series.first() {
        for s in series {
            same_channels(first, s)?;
            if s.frames() < 2 {
                return Err(DistanceError::TooShort(s.frames()));
            }
        }
    }
    let n = series.len();
    let rows = exec.map_range(n, |i| {
        ((i + 1)..n)
            .map(|j| dtw_unchecked(series[i], series[j], cfg, f64::INFINITY).expect("unbounded"))
            .collect::<Vec<f64>>()
    });
    let mut out = DistanceMatrix::zeros(n);
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            out.set_pair(i, i + 1 + k, v);
        }
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::oracle::brute_force_dtw;
    use super::*;
    use proptest::prelude::*;

    fn uni(v: &[f64]) -> TimeSeries {
        TimeSeries::univariate(v).unwrap()
    }

    fn series(m: usize) -> impl Strategy<Value = TimeSeries> {
        (2usize..=6).prop_flat_map(move |p| {
            proptest::collection::vec(-5.0f64..5.0, p * m).prop_map(move |v| TimeSeries::new(v, m, 30.0).unwrap())
        })
    }

    fn pair() -> impl Strategy<Value = (TimeSeries, TimeSeries)> {
        (1usize..=3).prop_flat_map(|m| (series(m), series(m)))
    }

    fn equal_len_pair(max: usize) -> impl Strategy<Value = (TimeSeries, TimeSeries)> {
        (1usize..=3, 2usize..=max).prop_flat_map(|(m, p)| {
            let s = proptest::collection::vec(-5.0f64..5.0, p * m).prop_map(move |v| TimeSeries::new(v, m, 30.0).unwrap());
            (s.clone(), s)
        })
    }

    #[test]
    fn point_and_ln_examples() {
        assert_eq!(point_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(point_distance(&[1.0], &[-1.0]).unwrap(), 2.0);
        assert_eq!(point_distance(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        assert!(point_distance(&[1.0], &[1.0, 2.0]).is_err());

        let a = uni(&[0.0, 0.0, 0.0]);
        let b = uni(&[1.0, 1.0, 1.0]);
        assert!((ln_distance(&a, &b, 2).unwrap() - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(ln_distance(&uni(&[0.0, 3.0]), &uni(&[4.0, 3.0]), 1).unwrap(), 4.0);
        assert_eq!(ln_distance(&a, &a, 2).unwrap(), 0.0);
        assert!(matches!(
            ln_distance(&a, &uni(&[1.0, 2.0]), 2),
            Err(DistanceError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn dtw_examples() {
        let cfg = DtwConfig::default();
        let a = uni(&[1.0, 2.0, 3.0]);
        let b = uni(&[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(brute_force_dtw(&a, &b, 2, None, false), 0.0);
        assert_eq!(dtw(&a, &b, &cfg).unwrap(), 0.0);
        assert_eq!(dtw(&b, &b, &cfg).unwrap(), 0.0);

        let two = TimeSeries::univariate(&[1.0, 2.0]).unwrap();
        let other = TimeSeries::new(vec![1.0, 2.0, 3.0, 4.0], 2, 30.0).unwrap();
        assert!(matches!(dtw(&two, &other, &cfg), Err(DistanceError::ChannelMismatch { .. })));
        let one = TimeSeries::from_raw(vec![1.0], 1, 30.0).unwrap();
        assert!(matches!(dtw(&one, &two, &cfg), Err(DistanceError::TooShort(1))));
    }

    #[test]
    fn alignment_path_is_valid() {
        let a = uni(&[0.0, 1.0, 2.0, 3.0, 2.0]);
        let b = uni(&[0.0, 2.0, 3.0]);
        let al = dtw_alignment(&a, &b, &DtwConfig::default()).unwrap();
        assert_eq!(al.path.first(), Some(&(0, 0)));
        assert_eq!(al.path.last(), Some(&(4, 2)));
        for w in al.path.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(matches!((di, dj), (1, 1) | (1, 0) | (0, 1)));
        }
        let path_cost: f64 = al.path.iter().map(|&(i, j)| (a.frame(i)[0] - b.frame(j)[0]).abs()).sum();
        assert!((path_cost - al.cost).abs() < 1e-12);
        assert_eq!(al.distance, dtw(&a, &b, &DtwConfig::default()).unwrap());
    }

    #[test]
    fn narrow_band_is_widened() {
        let a = uni(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = uni(&[0.0, 5.0]);
        let cfg = DtwConfig::banded(0);
        assert_eq!(cfg.effective_band(6, 2), Some(4));
        let al = dtw_alignment(&a, &b, &cfg).unwrap();
        assert_eq!(al.effective_band, Some(4));
        assert!(dtw(&a, &b, &cfg).unwrap().is_finite());
    }

    #[test]
    fn lower_bound_needs_band() {
        let a = uni(&[1.0, 2.0, 3.0]);
        assert_eq!(envelope_lower_bound(&a, &a, &DtwConfig::default()), Err(DistanceError::Unbanded));
        assert_eq!(envelope_lower_bound(&a, &a, &DtwConfig::banded(1)).unwrap(), 0.0);
    }

    #[test]
    fn matrix_examples() {
        let seg = |v: &[f64]| GestureSegment {
            trial_id: "t".into(),
            ordinal: 0,
            label: crate::model::GestureLabel::new(1).unwrap(),
            start_frame: 0,
            end_frame: v.len(),
            series: uni(v),
        };
        let cfg = DtwConfig::default();
        let m1 = dtw_matrix(&[seg(&[1.0, 2.0])], &cfg).unwrap();
        assert_eq!(m1, DistanceMatrix::zeros(1));
        let s = seg(&[3.0, 1.0, 4.0]);
        let m2 = dtw_matrix(&[s.clone(), s.clone()], &cfg).unwrap();
        assert_eq!(m2, DistanceMatrix::zeros(2));

        let segs: Vec<_> = [
            &[0.0, 1.0, 2.0][..],
            &[2.0, 2.0, 1.0, 0.0],
            &[5.0, -1.0],
            &[0.5, 0.5, 0.5, 0.5, 3.0],
            &[1.0, 4.0, 1.0],
        ]
        .iter()
        .map(|v| seg(v))
        .collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let m = dtw_matrix_with(&segs, &cfg, exec).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let direct = dtw(&segs[i].series, &segs[j].series, &cfg).unwrap();
                    assert!((m.get(i, j) - direct).abs() <= 1e-12);
                    assert_eq!(m.get(i, j), m.get(j, i));
                }
                assert_eq!(m.get(i, i), 0.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn dp_matches_exhaustive_paths((a, b) in pair(), band in proptest::option::of(0usize..4), n in 1u32..=3, normalize: bool) {
            let cfg = DtwConfig { local_norm_order: n, band_radius: band, normalize_by_path_length: normalize };
            let expected = brute_force_dtw(&a, &b, n, band, normalize);
            let got = dtw(&a, &b, &cfg).unwrap();
            prop_assert!((got - expected).abs() <= 1e-9, "dp {got} vs oracle {expected}");
            let full = dtw_alignment(&a, &b, &cfg).unwrap();
            prop_assert!((full.distance - expected).abs() <= 1e-9);
        }

        #[test]
        fn symmetric_nonnegative_and_self_zero((a, b) in pair(), band in proptest::option::of(0usize..4), normalize: bool) {
            let cfg = DtwConfig { band_radius: band, normalize_by_path_length: normalize, ..Default::default() };
            let ab = dtw(&a, &b, &cfg).unwrap();
            let ba = dtw(&b, &a, &cfg).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(dtw(&a, &a, &cfg).unwrap(), 0.0);
        }

        #[test]
        fn diagonal_path_bounds_equal_lengths((a, b) in equal_len_pair(12)) {
            let diag: f64 = a.iter_frames().zip(b.iter_frames()).map(|(x, y)| point_distance(x, y).unwrap()).sum();
            prop_assert!(dtw(&a, &b, &DtwConfig::default()).unwrap() <= diag + 1e-12);
        }

        #[test]
        fn wider_band_never_increases((a, b) in pair(), r in 0usize..5) {
            let narrow = dtw(&a, &b, &DtwConfig::banded(r)).unwrap();
            let wide = dtw(&a, &b, &DtwConfig::banded(r + 1)).unwrap();
            let free = dtw(&a, &b, &DtwConfig::default()).unwrap();
            prop_assert!(wide <= narrow);
            prop_assert!(free <= wide);
        }

        #[test]
        fn envelope_bound_is_below_dtw((a, b) in equal_len_pair(64), r in 0usize..8, normalize: bool) {
            let cfg = DtwConfig { band_radius: Some(r), normalize_by_path_length: normalize, ..Default::default() };
            let lb = envelope_lower_bound(&a, &b, &cfg).unwrap();
            let d = dtw(&a, &b, &cfg).unwrap();
            prop_assert!(lb >= 0.0);
            prop_assert!(lb <= d + 1e-12, "lb {lb} > dtw {d}");
        }

        #[test]
        fn envelope_bound_unequal_lengths((a, b) in pair(), r in 0usize..4, n in 1u32..=3) {
            let cfg = DtwConfig { band_radius: Some(r), local_norm_order: n, ..Default::default() };
            prop_assert!(envelope_lower_bound(&a, &b, &cfg).unwrap() <= dtw(&a, &b, &cfg).unwrap() + 1e-12);
        }

        #[test]
        fn bounded_dtw_agrees_or_exceeds((a, b) in pair(), cutoff in 0.0f64..20.0) {
            let cfg = DtwConfig::banded(2);
            let full = dtw(&a, &b, &cfg).unwrap();
            match dtw_bounded(&a, &b, &cfg, cutoff).unwrap() {
                Some(v) => prop_assert_eq!(v.to_bits(), full.to_bits()),
                None => prop_assert!(full > cutoff),
            }
        }
    }
}
