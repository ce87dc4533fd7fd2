//! Readers and writers for on-disk datasets.
//!
//! Two layouts are supported:
//!
//! * **Text layout**: one kinematics file per trial (one frame per line,
//!   exactly 76 whitespace-separated reals), one transcript file per trial
//!   (`start end G<k>` per line, half-open absolute frame numbers, `#`
//!   comments), and a JSON manifest tying them together.
//! * **Bundle**: a single binary file holding a JSON header and the raw
//!   little-endian `f64` sample blocks, for bit-exact round trips.
//!
//! Manifest schema (paths are relative to the manifest's directory):
//!
//! ```json
//! {
//!   "task": "suturing",
//!   "channel_selection": [0, 1, 2],
//!   "trials": [
//!     { "surgeon_id": "S1", "trial_index": 1, "skill": "expert",
//!       "kinematics": "kinematics/su-S1-001.txt",
//!       "transcript": "transcriptions/su-S1-001.txt" }
//!   ]
//! }
//! ```
//!
//! `channel_selection` is optional and defaults to every channel.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_dataset, Annotation, Dataset, GestureLabel, Skill, Task, TimeSeries, Trial, Violation, KINEMATIC_CHANNELS,
    KINEMATIC_SAMPLE_RATE_HZ,
};
use crate::par::Execution;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("trial {trial}: {source}")]
    Trial {
        trial: String,
        #[source]
        source: Box<IngestError>,
    },
    #[error("dataset has {} invariant violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("malformed bundle: {0}")]
    Bundle(String),
    #[error("bundle format {found} is not readable by this version (supports {supported}.x)")]
    BundleVersion { found: String, supported: u32 },
    #[error("cannot write {channels} channels into a {limit}-column kinematics file")]
    TooManyChannels { channels: usize, limit: usize },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for failures to reach or write a file, as opposed to bad content.
    pub fn is_io(&self) -> bool {
        match self {
            IngestError::Io { .. } => true,
            IngestError::Trial { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| IngestError::io(path, e))
}

/// Reads a kinematics file: 76 channels at 30 Hz.
pub fn parse_kinematics(path: &Path) -> Result<TimeSeries, IngestError> {
    parse_kinematics_str(&read_text(path)?, path)
}

/// Parses kinematics text; `origin` is only used in error messages.
/// Blank lines are skipped.
pub fn parse_kinematics_str(text: &str, origin: &Path) -> Result<TimeSeries, IngestError> {
    let err = |line: usize, message: String| IngestError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut data = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for (c, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(lineno, format!("field {}: cannot parse {tok:?} as a number", c + 1)))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("field {}: non-finite value {tok}", c + 1)));
            }
            data.push(v);
        }
        let fields = data.len() - before;
        if fields != KINEMATIC_CHANNELS {
            return Err(err(lineno, format!("expected {KINEMATIC_CHANNELS} fields, found {fields}")));
        }
    }
    let series = TimeSeries::from_raw(data, KINEMATIC_CHANNELS, KINEMATIC_SAMPLE_RATE_HZ).expect("rectangular by construction");
    series
        .check()
        .map_err(|e| IngestError::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    Ok(series)
}

pub fn parse_transcript(path: &Path, task: Task) -> Result<Vec<Annotation>, IngestError> {
    parse_transcript_str(&read_text(path)?, task, path)
}

/// Parses `start end G<k>` rows, checking order, overlap and vocabulary.
pub fn parse_transcript_str(text: &str, task: Task, origin: &Path) -> Result<Vec<Annotation>, IngestError> {
    let err = |line: usize, message: String| IngestError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut rows: Vec<Annotation> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(err(lineno, format!("expected `start end G<k>`, found {} fields", toks.len())));
        }
        let frame = |t: &str| t.parse::<usize>().map_err(|_| err(lineno, format!("bad frame number {t:?}")));
        let (start, end) = (frame(toks[0])?, frame(toks[1])?);
        let label: GestureLabel = toks[2].parse().map_err(|e| err(lineno, format!("{e}")))?;
        if !task.allows(label) {
            return Err(err(lineno, format!("{label} is not a {task} gesture")));
        }
        if end <= start {
            return Err(err(lineno, format!("end {end} is not after start {start}")));
        }
        if let Some(prev) = rows.last() {
            if start < prev.end {
                return Err(err(lineno, format!("row starting at {start} overlaps previous row ending at {}", prev.end)));
            }
        }
        rows.push(Annotation::new(start, end, label));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub surgeon_id: String,
    pub trial_index: u32,
    pub skill: Skill,
    pub kinematics: PathBuf,
    pub transcript: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    #[serde(default)]
    pub trials: Vec<ManifestTrial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_selection: Option<Vec<usize>>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = read_text(path)?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| IngestError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        for t in &m.trials {
            if t.surgeon_id.trim().is_empty() {
                return Err(IngestError::Manifest {
                    path: path.to_path_buf(),
                    message: "empty surgeon_id".into(),
                });
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| IngestError::io(path, e))
    }
}

/// Loads and validates the dataset a manifest file describes.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, IngestError> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_manifest(&manifest, base, Execution::default())
}

/// Loads `manifest`, resolving relative paths against `base`. Trials are
/// parsed independently and kept in manifest order.
pub fn load_manifest(manifest: &DatasetManifest, base: &Path, exec: Execution) -> Result<Dataset, IngestError> {
    let trials = exec.try_map(&manifest.trials, |entry| {
        let trial_name = format!("{}-{}-{:03}", manifest.task.code(), entry.surgeon_id, entry.trial_index);
        let wrap = |e: IngestError| IngestError::Trial {
            trial: trial_name.clone(),
            source: Box::new(e),
        };
        let kinematics = parse_kinematics(&base.join(&entry.kinematics)).map_err(wrap)?;
        let annotations = parse_transcript(&base.join(&entry.transcript), manifest.task).map_err(wrap)?;
        Ok::<_, IngestError>(Trial {
            surgeon_id: entry.surgeon_id.clone(),
            task: manifest.task,
            trial_index: entry.trial_index,
            skill: entry.skill,
            kinematics,
            annotations,
        })
    })?;
    let dataset = match &manifest.channel_selection {
        Some(sel) => Dataset::with_selection(trials, sel.clone()),
        None => Dataset::with_selection(trials, (0..KINEMATIC_CHANNELS).collect()),
    };
    let violations = validate_dataset(&dataset);
    if !violations.is_empty() {
        return Err(IngestError::Invalid(violations));
    }
    Ok(dataset)
}

/// Writes the `task` trials of `d` in the text layout under `dir`, padding
/// kinematics with zero channels up to 76. Returns the manifest path.
pub fn write_text_layout(d: &Dataset, task: Task, dir: &Path) -> Result<PathBuf, IngestError> {
    let kin_dir = dir.join("kinematics");
    let tr_dir = dir.join("transcriptions");
    for p in [&kin_dir, &tr_dir] {
        fs::create_dir_all(p).map_err(|e| IngestError::io(p, e))?;
    }
    let mut entries = Vec::new();
    for t in d.task_trials(task) {
        let m = t.kinematics.channels();
        if m > KINEMATIC_CHANNELS {
            return Err(IngestError::TooManyChannels {
                channels: m,
                limit: KINEMATIC_CHANNELS,
            });
        }
        let name = format!("{}.txt", t.id());
        let kin_rel = Path::new("kinematics").join(&name);
        let tr_rel = Path::new("transcriptions").join(&name);

        let path = dir.join(&kin_rel);
        let file = File::create(&path).map_err(|e| IngestError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let write_err = |e| IngestError::io(&path, e);
        for frame in t.kinematics.iter_frames() {
            let mut line = String::with_capacity(KINEMATIC_CHANNELS * 12);
            for c in 0..KINEMATIC_CHANNELS {
                if c > 0 {
                    line.push(' ');
                }
                // shortest representation that parses back to the same bits
                line.push_str(&frame.get(c).copied().unwrap_or(0.0).to_string());
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(write_err)?;
        }
        w.flush().map_err(write_err)?;

        let mut tr = format!("# {} transcript, half-open frame ranges\n", t.id());
        for a in &t.annotations {
            tr.push_str(&format!("{} {} {}\n", a.start, a.end, a.label));
        }
        let path = dir.join(&tr_rel);
        fs::write(&path, tr).map_err(|e| IngestError::io(&path, e))?;

        entries.push(ManifestTrial {
            surgeon_id: t.surgeon_id.clone(),
            trial_index: t.trial_index,
            skill: t.skill,
            kinematics: kin_rel,
            transcript: tr_rel,
        });
    }
    let manifest = DatasetManifest {
        task,
        trials: entries,
        channel_selection: Some(d.channel_selection.clone()),
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

const BUNDLE_MAGIC: &[u8; 8] = b"SSKBNDL\0";
/// Major version written and accepted by this reader.
pub const BUNDLE_MAJOR: u32 = 1;
pub const BUNDLE_MINOR: u32 = 0;

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    format_version: String,
    channel_selection: Vec<usize>,
    trials: Vec<BundleTrial>,
}

#[derive(Serialize, Deserialize)]
struct BundleTrial {
    surgeon_id: String,
    task: Task,
    trial_index: u32,
    skill: Skill,
    channels: usize,
    frames: usize,
    /// IEEE-754 bits, so the rate survives bit-exact.
    sample_rate_bits: u64,
    annotations: Vec<Annotation>,
}

/// Writes `d` as a bundle:
///
/// ```text
/// magic "SSKBNDL\0" | u64 LE header length | UTF-8 JSON header
/// | per trial, in header order: frames * channels f64 LE, frame-major
/// ```
pub fn save_bundle(d: &Dataset, path: &Path) -> Result<(), IngestError> {
    let header = BundleHeader {
        format_version: format!("{BUNDLE_MAJOR}.{BUNDLE_MINOR}"),
        channel_selection: d.channel_selection.clone(),
        trials: d
            .trials
            .iter()
            .map(|t| BundleTrial {
                surgeon_id: t.surgeon_id.clone(),
                task: t.task,
                trial_index: t.trial_index,
                skill: t.skill,
                channels: t.kinematics.channels(),
                frames: t.kinematics.frames(),
                sample_rate_bits: t.kinematics.sample_rate_hz().to_bits(),
                annotations: t.annotations.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| IngestError::io(path, e);
    w.write_all(BUNDLE_MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for t in &d.trials {
        for v in t.kinematics.as_slice() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_bundle(path: &Path) -> Result<Dataset, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_bundle(BufReader::new(file))
}

fn truncated(what: &str) -> impl Fn(std::io::Error) -> IngestError + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IngestError::Bundle(format!("truncated {what}"))
        } else {
            IngestError::Bundle(format!("reading {what}: {e}"))
        }
    }
}

/// Streams a bundle from any reader.
pub fn read_bundle<R: Read>(mut r: R) -> Result<Dataset, IngestError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if &magic != BUNDLE_MAGIC {
        return Err(IngestError::Bundle("not a bundle (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(truncated("header length"))?;
    let len = u64::from_le_bytes(len);
    if len > (1 << 32) {
        return Err(IngestError::Bundle(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(truncated("header"))?;
    let header: BundleHeader = serde_json::from_slice(&json).map_err(|e| IngestError::Bundle(format!("header: {e}")))?;

    let major: u32 = header
        .format_version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| IngestError::Bundle(format!("bad format_version {:?}", header.format_version)))?;
    if major != BUNDLE_MAJOR {
        return Err(IngestError::BundleVersion {
            found: header.format_version,
            supported: BUNDLE_MAJOR,
        });
    }

    let mut trials = Vec::with_capacity(header.trials.len());
    for bt in header.trials {
        let count = bt
            .channels
            .checked_mul(bt.frames)
            .ok_or_else(|| IngestError::Bundle("sample count overflows".into()))?;
        let mut data = Vec::with_capacity(count.min(1 << 24));
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(truncated("sample block"))?;
            data.push(f64::from_le_bytes(buf));
        }
        let kinematics = TimeSeries::from_raw(data, bt.channels, f64::from_bits(bt.sample_rate_bits))
            .map_err(|e| IngestError::Bundle(e.to_string()))?;
        trials.push(Trial {
            surgeon_id: bt.surgeon_id,
            task: bt.task,
            trial_index: bt.trial_index,
            skill: bt.skill,
            kinematics,
            annotations: bt.annotations,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(truncated("trailer"))? != 0 {
        return Err(IngestError::Bundle("trailing bytes after last sample block".into()));
    }
    Ok(Dataset::with_selection(trials, header.channel_selection))
}
