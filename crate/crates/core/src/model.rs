//! Domain model shared by every stage of the pipeline.
//!
//! A [`Trial`] is one execution of a task by one surgeon: a kinematic
//! recording plus the manual gesture transcript that partitions it. The
//! classifiable unit is a [`GestureSegment`], materialized from a transcript
//! row by [`slice_segments`]. All types are plain immutable values once
//! constructed and can be shared freely across threads.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Channel count of a JIGSAWS-style kinematics file.
pub const KINEMATIC_CHANNELS: usize = 76;
/// Capture rate of the recording API.
pub const KINEMATIC_SAMPLE_RATE_HZ: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("series needs at least one channel")]
    NoChannels,
    #[error("{len} values do not divide into {channels} channels")]
    Shape { len: usize, channels: usize },
    #[error("series has {0} frames, at least 2 are required")]
    TooShort(usize),
    #[error("non-finite sample at frame {frame}, channel {channel}")]
    NonFinite { frame: usize, channel: usize },
    #[error("sample rate must be positive and finite, got {0}")]
    SampleRate(f64),
    #[error("G{0} is not a gesture index")]
    InvalidGesture(u32),
    #[error("cannot parse gesture label {0:?}")]
    BadLabel(String),
    #[error("gesture {label} does not belong to the {task} vocabulary")]
    GestureNotInTask { label: GestureLabel, task: Task },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("unknown skill level {0:?}")]
    UnknownSkill(String),
    #[error("channel selection is empty")]
    EmptySelection,
    #[error("channel {index} out of range for {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },
    #[error("channel {0} selected twice")]
    DuplicateChannel(usize),
    #[error("trial {trial}: segment [{start}, {end}) is empty or reversed")]
    EmptySegment { trial: String, start: usize, end: usize },
    #[error("trial {trial}: segment [{start}, {end}) exceeds {frames} kinematic frames")]
    SegmentOutOfBounds {
        trial: String,
        start: usize,
        end: usize,
        frames: usize,
    },
    #[error("trial {trial}: segment [{start}, {end}) has fewer than 2 frames")]
    SegmentTooShort { trial: String, start: usize, end: usize },
    #[error("downsample factor must be at least 1")]
    ZeroDownsample,
}

/// Multichannel series stored frame-major: frame `i` is the contiguous slice
/// `data[i * channels..(i + 1) * channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    data: Vec<f64>,
    channels: usize,
    sample_rate_hz: f64,
}

impl TimeSeries {
    /// Builds a series and checks every invariant (length, finiteness, rate).
    pub fn new(data: Vec<f64>, channels: usize, sample_rate_hz: f64) -> Result<Self, ModelError> {
        let series = Self::from_raw(data, channels, sample_rate_hz)?;
        series.check()?;
        Ok(series)
    }

    /// Builds a series checking only that the buffer is rectangular.
    ///
    /// Use [`TimeSeries::check`] or [`validate_dataset`] to find invariant
    /// violations afterwards.
    pub fn from_raw(data: Vec<f64>, channels: usize, sample_rate_hz: f64) -> Result<Self, ModelError> {
        if channels == 0 {
            return Err(ModelError::NoChannels);
        }
        if !data.len().is_multiple_of(channels) {
            return Err(ModelError::Shape {
                len: data.len(),
                channels,
            });
        }
        Ok(TimeSeries {
            data,
            channels,
            sample_rate_hz,
        })
    }

    pub fn from_frames<F: AsRef<[f64]>>(frames: &[F], sample_rate_hz: f64) -> Result<Self, ModelError> {
        let channels = frames.first().map(|f| f.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(frames.len() * channels);
        for f in frames {
            let f = f.as_ref();
            if f.len() != channels {
                return Err(ModelError::Shape {
                    len: data.len() + f.len(),
                    channels,
                });
            }
            data.extend_from_slice(f);
        }
        Self::new(data, channels, sample_rate_hz)
    }

    /// Univariate helper, mostly for tests and examples.
    pub fn univariate(values: &[f64]) -> Result<Self, ModelError> {
        Self::new(values.to_vec(), 1, KINEMATIC_SAMPLE_RATE_HZ)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.frames() < 2 {
            return Err(ModelError::TooShort(self.frames()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(ModelError::SampleRate(self.sample_rate_hz));
        }
        if let Some(&(frame, channel)) = self.non_finite_frames().first() {
            return Err(ModelError::NonFinite { frame, channel });
        }
        Ok(())
    }

    /// First non-finite channel of every frame containing one.
    pub fn non_finite_frames(&self) -> Vec<(usize, usize)> {
        self.iter_frames()
            .enumerate()
            .filter_map(|(i, f)| f.iter().position(|v| !v.is_finite()).map(|c| (i, c)))
            .collect()
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    #[inline]
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn iter_frames(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    /// Frames `[start, end)` restricted to `selection`, in selection order.
    pub fn extract(&self, start: usize, end: usize, selection: &[usize]) -> Result<TimeSeries, ModelError> {
        check_selection(selection, self.channels)?;
        let end = end.min(self.frames());
        let mut data = Vec::with_capacity(end.saturating_sub(start) * selection.len());
        for i in start..end {
            let f = self.frame(i);
            data.extend(selection.iter().map(|&c| f[c]));
        }
        TimeSeries::from_raw(data, selection.len(), self.sample_rate_hz)
    }

    /// Keeps frames `0, factor, 2 * factor, ...`; the rate shrinks accordingly.
    pub fn decimate(&self, factor: usize) -> Result<TimeSeries, ModelError> {
        if factor == 0 {
            return Err(ModelError::ZeroDownsample);
        }
        let data = self
            .iter_frames()
            .step_by(factor)
            .flat_map(|f| f.iter().copied())
            .collect();
        TimeSeries::from_raw(data, self.channels, self.sample_rate_hz / factor as f64)
    }
}

fn check_selection(selection: &[usize], channels: usize) -> Result<(), ModelError> {
    if selection.is_empty() {
        return Err(ModelError::EmptySelection);
    }
    let mut seen = BTreeSet::new();
    for &index in selection {
        if index >= channels {
            return Err(ModelError::ChannelOutOfRange { index, channels });
        }
        if !seen.insert(index) {
            return Err(ModelError::DuplicateChannel(index));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Suturing,
    NeedlePassing,
    KnotTying,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Suturing, Task::NeedlePassing, Task::KnotTying];

    pub fn code(self) -> &'static str {
        match self {
            Task::Suturing => "su",
            Task::NeedlePassing => "np",
            Task::KnotTying => "kt",
        }
    }

    /// Gesture indices that may appear in a transcript of this task.
    pub fn vocabulary(self) -> &'static [u32] {
        match self {
            Task::Suturing => &[1, 2, 3, 4, 5, 6, 8, 9, 10, 11],
            Task::NeedlePassing => &[1, 2, 3, 4, 5, 6, 8, 11],
            Task::KnotTying => &[1, 11, 12, 13, 14, 15],
        }
    }

    pub fn labels(self) -> Vec<GestureLabel> {
        self.vocabulary().iter().map(|&k| GestureLabel(k as u8)).collect()
    }

    pub fn allows(self, label: GestureLabel) -> bool {
        self.vocabulary().contains(&label.index())
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Suturing => "suturing",
            Task::NeedlePassing => "needle passing",
            Task::KnotTying => "knot tying",
        })
    }
}

impl FromStr for Task {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "su" | "suturing" => Ok(Task::Suturing),
            "np" | "needlepassing" => Ok(Task::NeedlePassing),
            "kt" | "knottying" => Ok(Task::KnotTying),
            _ => Err(ModelError::UnknownTask(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Expert,
    Intermediate,
    Novice,
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Skill::Expert => "expert",
            Skill::Intermediate => "intermediate",
            Skill::Novice => "novice",
        })
    }
}

impl FromStr for Skill {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "e" | "expert" => Ok(Skill::Expert),
            "i" | "intermediate" => Ok(Skill::Intermediate),
            "n" | "novice" => Ok(Skill::Novice),
            _ => Err(ModelError::UnknownSkill(s.to_string())),
        }
    }
}

/// Gesture (surgeme) index. G7 does not exist in the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GestureLabel(u8);

impl GestureLabel {
    pub const VALID: [u32; 14] = [1, 2, 3, 4, 5, 6, 8, 9, 10, 11, 12, 13, 14, 15];

    pub fn new(index: u32) -> Result<Self, ModelError> {
        if Self::VALID.contains(&index) {
            Ok(GestureLabel(index as u8))
        } else {
            Err(ModelError::InvalidGesture(index))
        }
    }

    pub fn index(self) -> u32 {
        self.0 as u32
    }

    pub fn for_task(index: u32, task: Task) -> Result<Self, ModelError> {
        let label = Self::new(index)?;
        if task.allows(label) {
            Ok(label)
        } else {
            Err(ModelError::GestureNotInTask { label, task })
        }
    }

    pub fn description(self) -> &'static str {
        match self.0 {
            1 => "Reaching for needle with right hand",
            2 => "Positioning needle",
            3 => "Pushing needle through tissue",
            4 => "Transferring needle from left to right",
            5 => "Moving to center with needle in grip",
            6 => "Pulling suture with left hand",
            8 => "Orienting needle",
            9 => "Using right hand to help tighten suture",
            10 => "Loosening more suture",
            11 => "Dropping suture at end and moving to end points",
            12 => "Reaching for needle with left hand",
            13 => "Making C loop around right hand",
            14 => "Reaching for suture with right hand",
            15 => "Pulling suture with both hands",
            _ => unreachable!("label constructed through validation"),
        }
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}", self.0)
    }
}

impl FromStr for GestureLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = t
            .strip_prefix('G')
            .or_else(|| t.strip_prefix('g'))
            .ok_or_else(|| ModelError::BadLabel(s.to_string()))?;
        let index: u32 = digits.parse().map_err(|_| ModelError::BadLabel(s.to_string()))?;
        GestureLabel::new(index)
    }
}

impl TryFrom<String> for GestureLabel {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<GestureLabel> for String {
    fn from(l: GestureLabel) -> String {
        l.to_string()
    }
}

/// One transcript row: frames `[start, end)` carry `label`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub label: GestureLabel,
}

impl Annotation {
    pub fn new(start: usize, end: usize, label: GestureLabel) -> Self {
        Annotation { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub surgeon_id: String,
    pub task: Task,
    pub trial_index: u32,
    pub skill: Skill,
    pub kinematics: TimeSeries,
    pub annotations: Vec<Annotation>,
}

impl Trial {
    pub fn id(&self) -> String {
        format!("{}-{}-{:03}", self.task.code(), self.surgeon_id, self.trial_index)
    }

    /// Decimates the kinematics by `factor` and rescales the transcript.
    ///
    /// A row `[s, e)` keeps exactly the retained frames `k * factor` with
    /// `s <= k * factor < e`, i.e. it maps to `[ceil(s / f), ceil(e / f))`.
    /// Rows left with no frame are dropped; the count is returned.
    pub fn downsample(&self, factor: usize) -> Result<(Trial, usize), ModelError> {
        let kinematics = self.kinematics.decimate(factor)?;
        let mut dropped = 0;
        let annotations = self
            .annotations
            .iter()
            .filter_map(|a| {
                let mapped = Annotation::new(a.start.div_ceil(factor), a.end.div_ceil(factor), a.label);
                if mapped.is_empty() {
                    dropped += 1;
                    None
                } else {
                    Some(mapped)
                }
            })
            .collect();
        Ok((
            Trial {
                kinematics,
                annotations,
                ..self.clone()
            },
            dropped,
        ))
    }
}

/// A labeled contiguous slice of a trial, restricted to the selected channels.
#[derive(Clone, Debug, PartialEq)]
pub struct GestureSegment {
    pub trial_id: String,
    /// Position of the source row in the trial transcript.
    pub ordinal: usize,
    pub label: GestureLabel,
    pub start_frame: usize,
    pub end_frame: usize,
    pub series: TimeSeries,
}

impl GestureSegment {
    pub fn id(&self) -> String {
        format!("{}#{}", self.trial_id, self.ordinal)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub trials: Vec<Trial>,
    pub channel_selection: Vec<usize>,
}

impl Dataset {
    /// Dataset selecting every channel of the first trial.
    pub fn new(trials: Vec<Trial>) -> Self {
        let channel_selection = trials
            .first()
            .map(|t| (0..t.kinematics.channels()).collect())
            .unwrap_or_default();
        Dataset {
            trials,
            channel_selection,
        }
    }

    pub fn with_selection(trials: Vec<Trial>, channel_selection: Vec<usize>) -> Self {
        Dataset {
            trials,
            channel_selection,
        }
    }

    pub fn channels(&self) -> Option<usize> {
        self.trials.first().map(|t| t.kinematics.channels())
    }

    pub fn task_trials(&self, task: Task) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(move |t| t.task == task)
    }

    /// Surgeon ids in order of first appearance.
    pub fn surgeons(&self, task: Option<Task>) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.trials {
            if task.is_some_and(|task| t.task != task) {
                continue;
            }
            if !out.contains(&t.surgeon_id) {
                out.push(t.surgeon_id.clone());
            }
        }
        out
    }

    /// Applies [`Trial::downsample`] to every trial; returns the total
    /// number of transcript rows that vanished.
    pub fn downsample(&self, factor: usize) -> Result<(Dataset, usize), ModelError> {
        if factor == 1 {
            return Ok((self.clone(), 0));
        }
        let mut dropped = 0;
        let mut trials = Vec::with_capacity(self.trials.len());
        for t in &self.trials {
            let (t, d) = t.downsample(factor)?;
            dropped += d;
            trials.push(t);
        }
        Ok((
            Dataset {
                trials,
                channel_selection: self.channel_selection.clone(),
            },
            dropped,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    SeriesTooShort,
    SampleRate,
    NonFinite,
    ChannelCount,
    EmptySurgeonId,
    TrialIndex,
    EmptySegment,
    SegmentOutOfBounds,
    SegmentOrder,
    GestureNotInTask,
    EmptySelection,
    SelectionOutOfRange,
    SelectionDuplicate,
}

/// One broken invariant, located as precisely as the rule allows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub trial: Option<String>,
    pub segment: Option<usize>,
    pub frame: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.trial {
            write!(f, "trial {t}")?;
        } else {
            write!(f, "dataset")?;
        }
        if let Some(s) = self.segment {
            write!(f, " segment {s}")?;
        }
        if let Some(fr) = self.frame {
            write!(f, " frame {fr}")?;
        }
        write!(f, ": {:?}: {}", self.rule, self.detail)
    }
}

/// Checks every model invariant; an empty list means the dataset is valid.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let reference_channels = d.channels();

    for trial in &d.trials {
        let id = trial.id();
        let v = |segment: Option<usize>, frame: Option<usize>, rule: Rule, detail: String| Violation {
            trial: Some(id.clone()),
            segment,
            frame,
            rule,
            detail,
        };
        let k = &trial.kinematics;

        if trial.surgeon_id.trim().is_empty() {
            out.push(v(None, None, Rule::EmptySurgeonId, "surgeon id is empty".into()));
        }
        if trial.trial_index == 0 {
            out.push(v(None, None, Rule::TrialIndex, "trial index must be positive".into()));
        }
        if k.frames() < 2 {
            out.push(v(
                None,
                None,
                Rule::SeriesTooShort,
                format!("{} frames, at least 2 required", k.frames()),
            ));
        }
        if !(k.sample_rate_hz().is_finite() && k.sample_rate_hz() > 0.0) {
            out.push(v(
                None,
                None,
                Rule::SampleRate,
                format!("sample rate {} is not positive", k.sample_rate_hz()),
            ));
        }
        for (frame, channel) in k.non_finite_frames() {
            out.push(v(
                None,
                Some(frame),
                Rule::NonFinite,
                format!("channel {channel} holds {}", k.frame(frame)[channel]),
            ));
        }
        if let Some(c) = reference_channels {
            if k.channels() != c {
                out.push(v(
                    None,
                    None,
                    Rule::ChannelCount,
                    format!("{} channels, dataset uses {c}", k.channels()),
                ));
            }
        }

        let mut prev_end = 0usize;
        for (i, a) in trial.annotations.iter().enumerate() {
            if a.end <= a.start {
                out.push(v(
                    Some(i),
                    None,
                    Rule::EmptySegment,
                    format!("[{}, {}) is empty", a.start, a.end),
                ));
            } else if a.end > k.frames() {
                out.push(v(
                    Some(i),
                    None,
                    Rule::SegmentOutOfBounds,
                    format!("[{}, {}) exceeds {} frames", a.start, a.end, k.frames()),
                ));
            }
            if i > 0 && a.start < prev_end {
                out.push(v(
                    Some(i),
                    None,
                    Rule::SegmentOrder,
                    format!("starts at {} before previous row ends at {prev_end}", a.start),
                ));
            }
            prev_end = prev_end.max(a.end);
            if !trial.task.allows(a.label) {
                out.push(v(
                    Some(i),
                    None,
                    Rule::GestureNotInTask,
                    format!("{} is not a {} gesture", a.label, trial.task),
                ));
            }
        }
    }

    if let Some(channels) = reference_channels {
        let dv = |rule: Rule, detail: String| Violation {
            trial: None,
            segment: None,
            frame: None,
            rule,
            detail,
        };
        if d.channel_selection.is_empty() {
            out.push(dv(Rule::EmptySelection, "channel selection is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for &c in &d.channel_selection {
            if c >= channels {
                out.push(dv(
                    Rule::SelectionOutOfRange,
                    format!("channel {c} out of range for {channels} channels"),
                ));
            }
            if !seen.insert(c) {
                out.push(dv(Rule::SelectionDuplicate, format!("channel {c} selected twice")));
            }
        }
    }
    out
}

/// One segment per transcript row, restricted to `selection`.
pub fn slice_segments(t: &Trial, selection: &[usize]) -> Result<Vec<GestureSegment>, ModelError> {
    let (segments, short) = slice_inner(t, selection)?;
    if let Some(a) = short.first() {
        return Err(ModelError::SegmentTooShort {
            trial: t.id(),
            start: a.start,
            end: a.end,
        });
    }
    Ok(segments)
}

/// Like [`slice_segments`] but skips rows shorter than two frames, returning
/// how many were skipped.
pub fn slice_usable_segments(t: &Trial, selection: &[usize]) -> Result<(Vec<GestureSegment>, usize), ModelError> {
    slice_inner(t, selection).map(|(s, short)| (s, short.len()))
}

fn slice_inner(t: &Trial, selection: &[usize]) -> Result<(Vec<GestureSegment>, Vec<Annotation>), ModelError> {
    check_selection(selection, t.kinematics.channels())?;
    let trial_id = t.id();
    let frames = t.kinematics.frames();
    let mut segments = Vec::with_capacity(t.annotations.len());
    let mut short = Vec::new();
    for (ordinal, a) in t.annotations.iter().enumerate() {
        if a.end <= a.start {
            return Err(ModelError::EmptySegment {
                trial: trial_id,
                start: a.start,
                end: a.end,
            });
        }
        if a.end > frames {
            return Err(ModelError::SegmentOutOfBounds {
                trial: trial_id,
                start: a.start,
                end: a.end,
                frames,
            });
        }
        if a.len() < 2 {
            short.push(*a);
            continue;
        }
        segments.push(GestureSegment {
            trial_id: trial_id.clone(),
            ordinal,
            label: a.label,
            start_frame: a.start,
            end_frame: a.end,
            series: t.kinematics.extract(a.start, a.end, selection)?,
        });
    }
    Ok((segments, short))
}
