//! Command-line driver: argument parsing, configuration merging and the
//! subcommands. Exit codes: 0 success, 1 data or validation failure,
//! 2 usage or I/O failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use surgskill::assess::{
    assess_fold, boxplot_csv, distance_stats, frequency_csv, gesture_frequency, heatmap_csv, AssessError, DistanceOptions, Thresholds,
};
use surgskill::classify::{classify_all_with, ClassifyError, KnnConfig, SearchOptions, TieBreak};
use surgskill::distance::DtwConfig;
use surgskill::eval::{accuracy_table, run_louo_with, EvalError, EvalOptions};
use surgskill::ingest::{load_bundle, load_dataset, save_bundle, write_text_layout, IngestError};
use surgskill::metrics::{confusion, observed_labels, MetricsError};
use surgskill::model::{slice_usable_segments, validate_dataset, Dataset, GestureLabel, ModelError, Task, Violation};
use surgskill::synth::{benchmark_preset, generate, SynthConfig, SynthError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invariant violation(s)", .0.len())]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Assess(#[from] AssessError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Ingest(e) if e.is_io() => 2,
            CliError::Assess(AssessError::Io { .. }) => 2,
            _ => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "surgskill", version, about = "DTW kNN surgical gesture classification and skill assessment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: GlobalOpts,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate {
        /// Novice noise deviation (overrides the preset).
        #[arg(long)]
        novice_noise: Option<f64>,
        /// JSON file with a complete generator configuration.
        #[arg(long)]
        synth_config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Check a dataset; prints one violation per line.
    Validate,
    /// Classify the segments of a query dataset against the training data.
    Classify {
        /// Manifest of the query trials.
        #[arg(long)]
        query: PathBuf,
    },
    /// Leave-one-user-out evaluation with per-surgeon accuracy table.
    Evaluate,
    /// Assessment report for one surgeon's held-out fold.
    Assess {
        #[arg(long)]
        surgeon: String,
    },
    /// Expert/expert and expert/novice DTW distance summaries.
    Distances {
        #[arg(long)]
        per_gesture: bool,
        /// Count intermediate surgeons on the novice side.
        #[arg(long)]
        include_intermediate: bool,
    },
    /// Mean gesture occurrences per trial by skill level.
    Frequency,
    /// Convert a dataset between the text layout and the bundle format.
    Export {
        #[arg(long, value_enum)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Bundle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreakArg {
    MeanDistance,
    LabelIndex,
}

#[derive(Args, Debug, Default)]
pub struct GlobalOpts {
    /// Dataset manifest (JSON).
    #[arg(long, global = true, conflicts_with = "bundle")]
    pub manifest: Option<PathBuf>,
    /// Dataset bundle.
    #[arg(long, global = true)]
    pub bundle: Option<PathBuf>,
    /// Task: su, np or kt. Repeatable for `evaluate`.
    #[arg(long, global = true, value_parser = parse_task)]
    pub task: Vec<Task>,
    /// Channel selection, e.g. `0-5,38,41-43`.
    #[arg(long, global = true)]
    pub channels: Option<String>,
    /// Keep every n-th frame.
    #[arg(long, global = true)]
    pub downsample: Option<usize>,
    /// Number of nearest neighbours (default 1).
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Sakoe-Chiba band radius in frames.
    #[arg(long, global = true)]
    pub band: Option<usize>,
    /// Divide DTW cost by the optimal path length.
    #[arg(long, global = true)]
    pub normalize_path: bool,
    /// Order of the per-frame local distance norm.
    #[arg(long, global = true)]
    pub local_norm: Option<u32>,
    /// Vote tie-break rule for k > 1.
    #[arg(long, global = true, value_enum)]
    pub tie_break: Option<TieBreakArg>,
    /// Disable lower-bound pruning (requires --band).
    #[arg(long, global = true)]
    pub no_prune: bool,
    /// Gesture labels to leave out, e.g. `G9,G10`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub exclude_gestures: Vec<String>,
    /// Recall below this flags a gesture for more training (default 0.6).
    #[arg(long, global = true)]
    pub recall_threshold: Option<f64>,
    /// Precision below this flags a gesture definition for review (default 0.6).
    #[arg(long, global = true)]
    pub precision_threshold: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Generator seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with defaults for any of these options.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "su" => Ok(Task::Suturing),
        "np" => Ok(Task::NeedlePassing),
        "kt" => Ok(Task::KnotTying),
        _ => Err(format!("unknown task {s:?}; expected su, np or kt")),
    }
}

/// Options file; every field is optional and command-line flags win.
/// Relative paths are resolved against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub task: Option<Vec<String>>,
    pub channels: Option<String>,
    pub downsample: Option<usize>,
    pub k: Option<usize>,
    pub band: Option<usize>,
    pub normalize_path: Option<bool>,
    pub local_norm: Option<u32>,
    pub tie_break: Option<TieBreakArg>,
    pub no_prune: Option<bool>,
    pub exclude_gestures: Option<Vec<String>>,
    pub recall_threshold: Option<f64>,
    pub precision_threshold: Option<f64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

/// Fully resolved options for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub tasks: Vec<Task>,
    pub channels: Option<Vec<usize>>,
    pub downsample: usize,
    pub knn: KnnConfig,
    pub prune: bool,
    pub exclude: Vec<GestureLabel>,
    pub thresholds: Thresholds,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub verbose: bool,
}

/// Parses `0-5,38,41-43` into channel indices.
pub fn parse_channels(list: &str) -> Result<Vec<usize>, CliError> {
    let bad = || usage(format!("bad channel list {list:?}"));
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn parse_labels(items: &[String]) -> Result<Vec<GestureLabel>, CliError> {
    items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<GestureLabel>().map_err(|e| usage(format!("--exclude-gestures: {e}"))))
        .collect()
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: FileConfig = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.manifest, &mut cfg.bundle, &mut cfg.out].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn resolve(opts: &GlobalOpts) -> Result<RunConfig, CliError> {
        let file = match &opts.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let (manifest, bundle) = if opts.manifest.is_some() || opts.bundle.is_some() {
            (opts.manifest.clone(), opts.bundle.clone())
        } else {
            (file.manifest, file.bundle)
        };
        if manifest.is_some() && bundle.is_some() {
            return Err(usage("give either a manifest or a bundle, not both"));
        }
        let tasks = if !opts.task.is_empty() {
            opts.task.clone()
        } else {
            file.task
                .unwrap_or_default()
                .iter()
                .map(|t| parse_task(t).map_err(usage))
                .collect::<Result<_, _>>()?
        };
        let channels = match opts.channels.as_ref().or(file.channels.as_ref()) {
            Some(s) => Some(parse_channels(s)?),
            None => None,
        };
        let downsample = opts.downsample.or(file.downsample).unwrap_or(1);
        if downsample == 0 {
            return Err(usage("--downsample must be at least 1"));
        }
        let k = opts.k.or(file.k).unwrap_or(1);
        if k == 0 {
            return Err(usage("--k must be at least 1"));
        }
        let local_norm = opts.local_norm.or(file.local_norm).unwrap_or(2);
        if local_norm == 0 {
            return Err(usage("--local-norm must be at least 1"));
        }
        let band = opts.band.or(file.band);
        let no_prune = opts.no_prune || file.no_prune.unwrap_or(false);
        if no_prune && band.is_none() {
            return Err(usage("--no-prune only applies to banded search; add --band"));
        }
        let tie_break = match opts.tie_break.or(file.tie_break) {
            Some(TieBreakArg::LabelIndex) => TieBreak::SmallestLabelIndex,
            _ => TieBreak::SmallestMeanDistance,
        };
        let knn = KnnConfig {
            k,
            dtw: DtwConfig {
                local_norm_order: local_norm,
                band_radius: band,
                normalize_by_path_length: opts.normalize_path || file.normalize_path.unwrap_or(false),
            },
            tie_break,
        };
        let exclude = if !opts.exclude_gestures.is_empty() {
            parse_labels(&opts.exclude_gestures)?
        } else {
            parse_labels(&file.exclude_gestures.unwrap_or_default())?
        };
        let defaults = Thresholds::default();
        let thresholds = Thresholds {
            recall: opts.recall_threshold.or(file.recall_threshold).unwrap_or(defaults.recall),
            precision: opts.precision_threshold.or(file.precision_threshold).unwrap_or(defaults.precision),
        };
        thresholds.check().map_err(|e| usage(e.to_string()))?;
        let workers = opts.workers.or(file.workers);
        if workers == Some(0) {
            return Err(usage("--workers must be at least 1"));
        }
        Ok(RunConfig {
            manifest,
            bundle,
            tasks,
            channels,
            downsample,
            knn,
            prune: !no_prune,
            exclude,
            thresholds,
            out: opts.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            workers,
            seed: opts.seed.or(file.seed),
            verbose: opts.verbose,
        })
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            exclude: self.exclude.clone(),
            prune: self.prune,
            ..EvalOptions::default()
        }
    }

    fn single_task(&self, d: &Dataset) -> Result<Task, CliError> {
        match self.tasks.as_slice() {
            [t] => Ok(*t),
            [] => {
                let present = tasks_in(d);
                match present.as_slice() {
                    [t] => Ok(*t),
                    [] => Err(usage("dataset has no trials; pass --task")),
                    _ => Err(usage("dataset holds several tasks; pick one with --task")),
                }
            }
            _ => Err(usage("this command takes a single --task")),
        }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn tasks_in(d: &Dataset) -> Vec<Task> {
    let mut v: Vec<Task> = d.trials.iter().map(|t| t.task).collect();
    v.sort();
    v.dedup();
    v
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable output") + "\n"
}

/// Loads the input dataset and applies channel selection and downsampling.
fn load_input(rc: &RunConfig, manifest: Option<&Path>) -> Result<Dataset, CliError> {
    let mut d = match (manifest.or(rc.manifest.as_deref()), &rc.bundle) {
        (Some(m), _) => load_dataset(m).map_err(invalid_or)?,
        (None, Some(b)) => load_bundle(b)?,
        (None, None) => return Err(usage("no input: pass --manifest or --bundle")),
    };
    rc.note(format!("loaded {} trial(s)", d.trials.len()));
    if let Some(sel) = &rc.channels {
        d.channel_selection = sel.clone();
    }
    if rc.downsample > 1 {
        let (down, dropped) = d.downsample(rc.downsample)?;
        rc.note(format!("downsampled by {}, dropped {dropped} transcript row(s)", rc.downsample));
        d = down;
    }
    let violations = validate_dataset(&d);
    if !violations.is_empty() {
        return Err(CliError::Invalid(violations));
    }
    Ok(d)
}

fn invalid_or(e: IngestError) -> CliError {
    match e {
        IngestError::Invalid(vs) => CliError::Invalid(vs),
        e => e.into(),
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    arguments: Vec<String>,
    started_unix_seconds: u64,
    elapsed_seconds: f64,
    outputs: Vec<String>,
}

fn cmd_generate(rc: &RunConfig, novice_noise: Option<f64>, synth_config: Option<&Path>, format: Format) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = match synth_config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str::<SynthConfig>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => benchmark_preset(),
    };
    if let Some(seed) = rc.seed {
        cfg.seed = seed;
    }
    match rc.tasks.as_slice() {
        [] => {}
        [t] => cfg.task = *t,
        _ => return Err(usage("generate takes a single --task")),
    }
    if let Some(s) = novice_noise {
        cfg.novice_noise = s;
    }
    let d = generate(&cfg)?;
    let mut outputs = vec![write_out(&rc.out, "synth_config.json", &to_json(&cfg))?];
    match format {
        Format::Text => outputs.push(write_text_layout(&d, cfg.task, &rc.out)?),
        Format::Bundle => {
            fs::create_dir_all(&rc.out).map_err(io_err(&rc.out))?;
            let p = rc.out.join("dataset.bundle");
            save_bundle(&d, &p)?;
            outputs.push(p);
        }
    }
    println!("{}", outputs.last().unwrap().display());
    Ok(outputs)
}

fn cmd_validate(rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let d = match load_input(rc, None) {
        Err(CliError::Invalid(vs)) => {
            for v in &vs {
                println!("{v}");
            }
            return Err(CliError::Invalid(vs));
        }
        other => other?,
    };
    let segments: usize = d.trials.iter().map(|t| t.annotations.len()).sum();
    println!("ok: {} trial(s), {segments} transcript row(s), {} channel(s) selected", d.trials.len(), d.channel_selection.len());
    Ok(Vec::new())
}

fn cmd_classify(rc: &RunConfig, query: &Path) -> Result<Vec<PathBuf>, CliError> {
    let train_d = load_input(rc, None)?;
    let query_d = load_input(rc, Some(query))?;
    let task = rc.single_task(&train_d)?;
    let segments = |d: &Dataset| -> Result<Vec<_>, CliError> {
        let mut out = Vec::new();
        for t in d.task_trials(task) {
            out.extend(slice_usable_segments(t, &d.channel_selection)?.0.into_iter().filter(|s| !rc.exclude.contains(&s.label)));
        }
        Ok(out)
    };
    let (train, queries) = (segments(&train_d)?, segments(&query_d)?);
    let opts = SearchOptions {
        prune: rc.prune,
        ..SearchOptions::default()
    };
    let preds = classify_all_with(&queries, &train, &rc.knn, opts)?;
    let mut tsv = String::from("segment\tactual\tpredicted\tdistance\n");
    for p in &preds {
        let dist = p.neighbors.first().map(|n| n.distance).unwrap_or(f64::NAN);
        tsv.push_str(&format!("{}\t{}\t{}\t{dist}\n", p.segment_id, p.actual, p.predicted));
    }
    let correct = preds.iter().filter(|p| p.is_correct()).count();
    println!("{correct} of {} segment(s) classified as transcribed", preds.len());
    Ok(vec![
        write_out(&rc.out, "predictions.json", &to_json(&preds))?,
        write_out(&rc.out, "predictions.tsv", &tsv)?,
    ])
}

fn cmd_evaluate(rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let d = load_input(rc, None)?;
    let tasks = if rc.tasks.is_empty() { tasks_in(&d) } else { rc.tasks.clone() };
    if tasks.is_empty() {
        return Err(usage("dataset has no trials; nothing to evaluate"));
    }
    let opts = rc.eval_options();
    let mut results = Vec::new();
    let mut outputs = Vec::new();
    for task in tasks {
        rc.note(format!("evaluating {task}"));
        let r = run_louo_with(&d, task, &rc.knn, &opts)?;
        let preds: Vec<_> = r.all_predictions().cloned().collect();
        let cm = confusion(&preds, &observed_labels(&preds))?;
        let code = task.code();
        outputs.push(write_out(&rc.out, &format!("folds_{code}.tsv"), &r.folds_tsv())?);
        outputs.push(write_out(&rc.out, &format!("confusion_{code}.csv"), &cm.to_csv())?);
        outputs.push(write_out(&rc.out, &format!("confusion_{code}.txt"), &cm.to_text())?);
        outputs.push(write_out(&rc.out, &format!("heatmap_{code}.csv"), &heatmap_csv(&cm))?);
        results.push(r);
    }
    let table = accuracy_table(&results);
    print!("{table}");
    outputs.push(write_out(&rc.out, "accuracy.txt", &table)?);
    outputs.push(write_out(&rc.out, "evaluation.json", &to_json(&results))?);
    Ok(outputs)
}

fn cmd_assess(rc: &RunConfig, surgeon: &str) -> Result<Vec<PathBuf>, CliError> {
    let d = load_input(rc, None)?;
    let task = rc.single_task(&d)?;
    if !d.task_trials(task).any(|t| t.surgeon_id == surgeon) {
        return Err(CliError::Eval(EvalError::UnknownSurgeon(surgeon.to_string())));
    }
    let report = assess_fold(&d, task, surgeon, &rc.knn, &rc.eval_options(), &rc.thresholds)?;
    let text = report.to_text();
    print!("{text}");
    let stem = format!("assessment_{}_{surgeon}", task.code());
    Ok(vec![
        write_out(&rc.out, &format!("{stem}.txt"), &text)?,
        write_out(&rc.out, &format!("{stem}.json"), &to_json(&report))?,
        write_out(&rc.out, &format!("heatmap_{}_{surgeon}.csv", task.code()), &heatmap_csv(&report.confusion))?,
    ])
}

fn cmd_distances(rc: &RunConfig, per_gesture: bool, include_intermediate: bool) -> Result<Vec<PathBuf>, CliError> {
    let d = load_input(rc, None)?;
    let task = rc.single_task(&d)?;
    let opts = DistanceOptions {
        per_gesture,
        include_intermediate,
        ..DistanceOptions::default()
    };
    let stats = distance_stats(&d, task, &opts, &rc.knn.dtw)?;
    let csv = boxplot_csv(&stats);
    print!("{csv}");
    let code = task.code();
    Ok(vec![
        write_out(&rc.out, &format!("boxplot_{code}.csv"), &csv)?,
        write_out(&rc.out, &format!("distances_{code}.json"), &to_json(&stats))?,
    ])
}

fn cmd_frequency(rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    use surgskill::model::Skill;
    let d = load_input(rc, None)?;
    let task = rc.single_task(&d)?;
    let mut profiles = Vec::new();
    for skill in [Some(Skill::Expert), Some(Skill::Intermediate), Some(Skill::Novice), None] {
        match gesture_frequency(&d, task, skill) {
            Ok(p) => profiles.push(p),
            Err(AssessError::NoTrials { .. }) if skill.is_some() => {}
            Err(e) => return Err(e.into()),
        }
    }
    let csv = frequency_csv(&profiles);
    print!("{csv}");
    let code = task.code();
    Ok(vec![
        write_out(&rc.out, &format!("frequency_{code}.csv"), &csv)?,
        write_out(&rc.out, &format!("frequency_{code}.json"), &to_json(&profiles))?,
    ])
}

fn cmd_export(rc: &RunConfig, format: Format) -> Result<Vec<PathBuf>, CliError> {
    let d = load_input(rc, None)?;
    let outputs = match format {
        Format::Bundle => {
            fs::create_dir_all(&rc.out).map_err(io_err(&rc.out))?;
            let p = rc.out.join("dataset.bundle");
            save_bundle(&d, &p)?;
            vec![p]
        }
        Format::Text => {
            let tasks = if rc.tasks.is_empty() { tasks_in(&d) } else { rc.tasks.clone() };
            let mut v = Vec::new();
            for task in tasks {
                v.push(write_text_layout(&d, task, &rc.out.join(task.code()))?);
            }
            v
        }
    };
    for p in &outputs {
        println!("{}", p.display());
    }
    Ok(outputs)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate { .. } => "generate",
        Command::Validate => "validate",
        Command::Classify { .. } => "classify",
        Command::Evaluate => "evaluate",
        Command::Assess { .. } => "assess",
        Command::Distances { .. } => "distances",
        Command::Frequency => "frequency",
        Command::Export { .. } => "export",
    }
}

fn dispatch(cli: &Cli, rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Generate {
            novice_noise,
            synth_config,
            format,
        } => cmd_generate(rc, *novice_noise, synth_config.as_deref(), *format),
        Command::Validate => cmd_validate(rc),
        Command::Classify { query } => cmd_classify(rc, query),
        Command::Evaluate => cmd_evaluate(rc),
        Command::Assess { surgeon } => cmd_assess(rc, surgeon),
        Command::Distances {
            per_gesture,
            include_intermediate,
        } => cmd_distances(rc, *per_gesture, *include_intermediate),
        Command::Frequency => cmd_frequency(rc),
        Command::Export { format } => cmd_export(rc, *format),
    }
}

/// Runs the command line `args` (including the program name) and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let started = SystemTime::now();
    let clock = Instant::now();
    let result = RunConfig::resolve(&cli.opts).and_then(|rc| {
        if let Some(n) = rc.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| usage(format!("--workers: {e}")))?;
        }
        let outputs = dispatch(&cli, &rc)?;
        if !outputs.is_empty() {
            let meta = Metadata {
                tool: "surgskill",
                version: env!("CARGO_PKG_VERSION"),
                command: command_name(&cli.command),
                arguments: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
                started_unix_seconds: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                elapsed_seconds: clock.elapsed().as_secs_f64(),
                outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            };
            write_out(&rc.out, "metadata.json", &to_json(&meta))?;
        }
        Ok(())
    });
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => 0,
        Err(e) => {
            if let (CliError::Invalid(vs), false) = (&e, matches!(cli.command, Command::Validate)) {
                for v in vs {
                    eprintln!("{v}");
                }
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
