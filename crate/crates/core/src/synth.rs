//! Deterministic synthetic datasets with controllable skill separation.
//!
//! Every gesture of the task gets a smooth base template: per channel, a
//! sum of three low-frequency sinusoids plus an offset. Each transcript row
//! of a generated trial is an instance of its gesture's template:
//!
//! * experts: the template plus Gaussian noise of deviation `expert_noise`;
//! * novices: the template resampled through a random monotone
//!   piecewise-linear time warp with slopes in `[2^-w, 2^w]`
//!   (`w = novice_warp <= 1`, so within `[0.5, 2]`), plus Gaussian noise of
//!   deviation `novice_noise`;
//! * intermediates: the midpoint of both settings.
//!
//! Consecutive rows are separated by 0 to 2 unannotated idle frames that
//! interpolate between the neighbouring rows. After each throw a correction
//! gesture is inserted with the surgeon's extra-gesture rate.
//!
//! Randomness comes from ChaCha8 seeded with `seed`. Stream 0 draws the
//! templates and stream `1 + n` draws the `n`-th trial (surgeons in id
//! order, trials in index order), so trials can be generated in any order
//! or in parallel with identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Annotation, Dataset, GestureLabel, Skill, Task, TimeSeries, Trial, KINEMATIC_SAMPLE_RATE_HZ};
use crate::par::Execution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub task: Task,
    pub experts: usize,
    pub intermediates: usize,
    pub novices: usize,
    pub trials_per_surgeon: usize,
    pub channels: usize,
    /// Inclusive range of template lengths in frames.
    pub template_len: (usize, usize),
    pub expert_noise: f64,
    pub novice_noise: f64,
    /// Time-warp intensity in `[0, 1]`; 0 disables warping.
    pub novice_warp: f64,
    /// Probability of a correction gesture after each throw.
    pub expert_extra_rate: f64,
    pub novice_extra_rate: f64,
    /// Repetitions of the core gesture cycle per trial.
    pub throws: usize,
}

/// Novice noise levels of increasing difficulty for the benchmark preset;
/// the first is the preset's own value.
pub const BENCHMARK_NOVICE_NOISE: [f64; 3] = [2.0, 3.5, 5.0];

/// The frozen benchmark configuration.
///
/// Seed 42, suturing, 4 experts and 4 novices with 5 trials each,
/// 6 channels, templates of 20 to 40 frames, expert noise 0.1, novice
/// noise [`BENCHMARK_NOVICE_NOISE`]`[0]`, warp 0.5, correction rates 0.2
/// (experts) and 0.4 (novices), 3 throws per trial.
pub fn benchmark_preset() -> SynthConfig {
    SynthConfig {
        seed: 42,
        task: Task::Suturing,
        experts: 4,
        intermediates: 0,
        novices: 4,
        trials_per_surgeon: 5,
        channels: 6,
        template_len: (20, 40),
        expert_noise: 0.1,
        novice_noise: BENCHMARK_NOVICE_NOISE[0],
        novice_warp: 0.5,
        expert_extra_rate: 0.2,
        novice_extra_rate: 0.4,
        throws: 3,
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.experts == 0 || self.novices == 0 {
            return fail("need at least one expert and one novice");
        }
        if self.trials_per_surgeon == 0 || self.channels == 0 || self.throws == 0 {
            return fail("trials_per_surgeon, channels and throws must be at least 1");
        }
        let (lo, hi) = self.template_len;
        if lo < 2 || hi < lo {
            return fail("template_len must satisfy 2 <= min <= max");
        }
        let finite = [self.expert_noise, self.novice_noise, self.novice_warp, self.expert_extra_rate, self.novice_extra_rate];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("parameters must be finite");
        }
        if self.expert_noise < 0.0 || self.novice_noise < self.expert_noise {
            return fail("noise must satisfy 0 <= expert_noise <= novice_noise");
        }
        if !(0.0..=1.0).contains(&self.novice_warp) {
            return fail("novice_warp must lie in [0, 1]");
        }
        for r in [self.expert_extra_rate, self.novice_extra_rate] {
            if !(0.0..=1.0).contains(&r) {
                return fail("extra-gesture rates must lie in [0, 1]");
            }
        }
        Ok(())
    }

    fn surgeon_skills(&self) -> Vec<Skill> {
        let mut v = vec![Skill::Expert; self.experts];
        v.extend(std::iter::repeat_n(Skill::Intermediate, self.intermediates));
        v.extend(std::iter::repeat_n(Skill::Novice, self.novices));
        v
    }

    fn profile(&self, skill: Skill) -> Profile {
        let expert = Profile {
            noise: self.expert_noise,
            warp: 0.0,
            extra_rate: self.expert_extra_rate,
        };
        let novice = Profile {
            noise: self.novice_noise,
            warp: self.novice_warp,
            extra_rate: self.novice_extra_rate,
        };
        match skill {
            Skill::Expert => expert,
            Skill::Novice => novice,
            Skill::Intermediate => Profile {
                noise: (expert.noise + novice.noise) / 2.0,
                warp: (expert.warp + novice.warp) / 2.0,
                extra_rate: (expert.extra_rate + novice.extra_rate) / 2.0,
            },
        }
    }
}

#[derive(Clone, Copy)]
struct Profile {
    noise: f64,
    warp: f64,
    extra_rate: f64,
}

fn g(k: u32) -> GestureLabel {
    GestureLabel::new(k).expect("valid label")
}

/// Gesture order of one trial before correction gestures are inserted.
fn base_script(task: Task, throws: usize) -> Vec<Vec<GestureLabel>> {
    let cycle: Vec<GestureLabel> = match task {
        Task::Suturing | Task::NeedlePassing => [2, 3, 6, 4, 8].map(g).to_vec(),
        Task::KnotTying => [12, 13, 14, 15].map(g).to_vec(),
    };
    let mut parts = vec![match task {
        Task::Suturing => vec![g(1), g(5)],
        _ => vec![g(1)],
    }];
    parts.extend(std::iter::repeat_n(cycle, throws));
    parts.push(match task {
        Task::NeedlePassing => vec![g(5), g(11)],
        _ => vec![g(11)],
    });
    parts
}

fn corrections(task: Task) -> Vec<GestureLabel> {
    match task {
        Task::Suturing => vec![g(9), g(10)],
        Task::NeedlePassing => vec![g(8)],
        Task::KnotTying => vec![g(14)],
    }
}

/// Per-label templates, frame-major.
struct Templates {
    labels: Vec<GestureLabel>,
    series: Vec<TimeSeries>,
}

impl Templates {
    fn get(&self, label: GestureLabel) -> &TimeSeries {
        let i = self.labels.iter().position(|&l| l == label).expect("template exists for vocabulary");
        &self.series[i]
    }
}

fn make_templates(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Templates {
    let labels = cfg.task.labels();
    let series = labels
        .iter()
        .map(|_| {
            let len = rng.random_range(cfg.template_len.0..=cfg.template_len.1);
            let waves: Vec<[(f64, f64, f64); 3]> = (0..cfg.channels)
                .map(|_| {
                    std::array::from_fn(|_| {
                        (
                            rng.random_range(0.5..1.5),                       // amplitude
                            rng.random_range(0.25..2.0),                      // cycles over the gesture
                            rng.random_range(0.0..std::f64::consts::TAU), // phase
                        )
                    })
                })
                .collect();
            let offsets: Vec<f64> = (0..cfg.channels).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut data = Vec::with_capacity(len * cfg.channels);
            for t in 0..len {
                let x = t as f64 / (len - 1) as f64;
                for c in 0..cfg.channels {
                    let v: f64 = waves[c].iter().map(|&(a, f, p)| a * (std::f64::consts::TAU * f * x + p).sin()).sum();
                    data.push(v + offsets[c]);
                }
            }
            TimeSeries::new(data, cfg.channels, KINEMATIC_SAMPLE_RATE_HZ).expect("finite template")
        })
        .collect();
    Templates { labels, series }
}

/// Sample positions into a template of `len` frames. Without warp these are
/// exactly `0, 1, ..., len - 1`.
fn warp_positions(len: usize, warp: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if warp == 0.0 {
        return (0..len).map(|k| k as f64).collect();
    }
    const PIECES: usize = 3;
    let slopes: [f64; PIECES] = std::array::from_fn(|_| 2f64.powf(warp * rng.random_range(-1.0..1.0)));
    let span = (len - 1) as f64;
    let mean_slope = slopes.iter().sum::<f64>() / PIECES as f64;
    let out_len = ((span / mean_slope).round() as usize + 1).max(2);
    let width = (out_len - 1) as f64 / PIECES as f64;
    // rescale so the warp ends exactly on the last template frame
    let scale = span / (width * slopes.iter().sum::<f64>());
    (0..out_len)
        .map(|k| {
            let u = k as f64;
            let piece = ((u / width) as usize).min(PIECES - 1);
            let base: f64 = slopes[..piece].iter().map(|s| s * width * scale).sum();
            (base + slopes[piece] * scale * (u - piece as f64 * width)).clamp(0.0, span)
        })
        .collect()
}

fn sample_at(template: &TimeSeries, pos: f64, out: &mut Vec<f64>) {
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        out.extend_from_slice(template.frame(lo));
    } else {
        let (a, b) = (template.frame(lo), template.frame(lo + 1));
        out.extend(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)));
    }
}

fn make_trial(cfg: &SynthConfig, templates: &Templates, surgeon: usize, skill: Skill, index: u32, ordinal: u64) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + ordinal);
    let profile = cfg.profile(skill);
    let noise = Normal::new(0.0, profile.noise).expect("checked noise");
    let extras = corrections(cfg.task);
    let parts = base_script(cfg.task, cfg.throws);

    let mut script = Vec::new();
    for (i, part) in parts.iter().enumerate() {
        script.extend_from_slice(part);
        let is_throw = i > 0 && i + 1 < parts.len();
        if is_throw && rng.random_bool(profile.extra_rate) {
            script.push(extras[rng.random_range(0..extras.len())]);
        }
    }

    let m = cfg.channels;
    let mut data: Vec<f64> = Vec::new();
    let mut annotations = Vec::with_capacity(script.len());
    for (i, &label) in script.iter().enumerate() {
        let template = templates.get(label);
        let positions = warp_positions(template.frames(), profile.warp, &mut rng);
        let mut segment = Vec::with_capacity(positions.len() * m);
        for &p in &positions {
            sample_at(template, p, &mut segment);
        }
        for v in &mut segment {
            *v += noise.sample(&mut rng);
        }
        if i > 0 {
            let gap = rng.random_range(0..=2usize);
            let prev = data[data.len() - m..].to_vec();
            for step in 1..=gap {
                let f = step as f64 / (gap + 1) as f64;
                data.extend(prev.iter().zip(&segment[..m]).map(|(a, b)| a + f * (b - a)));
            }
        }
        let start = data.len() / m;
        data.extend_from_slice(&segment);
        annotations.push(Annotation::new(start, data.len() / m, label));
    }

    Trial {
        surgeon_id: format!("S{}", surgeon + 1),
        task: cfg.task,
        trial_index: index,
        skill,
        kinematics: TimeSeries::new(data, m, KINEMATIC_SAMPLE_RATE_HZ).expect("finite samples"),
        annotations,
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    generate_with(cfg, Execution::default())
}

/// Generates the dataset, drawing trials with `exec`. The result does not
/// depend on `exec`.
pub fn generate_with(cfg: &SynthConfig, exec: Execution) -> Result<Dataset, SynthError> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let templates = make_templates(cfg, &mut rng);
    let jobs: Vec<(usize, Skill, u32)> = cfg
        .surgeon_skills()
        .into_iter()
        .enumerate()
        .flat_map(|(s, skill)| (1..=cfg.trials_per_surgeon as u32).map(move |i| (s, skill, i)))
        .collect();
    let trials = exec.map_range(jobs.len(), |n| {
        let (s, skill, i) = jobs[n];
        make_trial(cfg, &templates, s, skill, i, n as u64)
    });
    Ok(Dataset::with_selection(trials, (0..cfg.channels).collect()))
}
