//! Long-horizon prediction and its stability metrics.
//!
//! Schemes, applied to frame-pair planes `X̂`:
//!
//! * `high_dim_latent`: `X̂ ← g_D ∘ g_E (X̂)`
//! * `through_nsv`: `X̂ ← g_D ∘ h_D ∘ h_E ∘ g_E (X̂)`
//! * `hybrid(N)`: step `s` (counting from 1) goes through the neural state
//!   variables when `s` is a multiple of `N + 1`, otherwise high-dim.

use std::time::Instant;

use nnkit::Parallelism;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stage1::{Stage1Error, Stage1Model};
use crate::statevars::{encode_nsv_planes, LatentDynamicsModel, Stage2Model, StateVarError};
use crate::systems::{extract_physical, FramePair, SystemSpec};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("scheme `{0}` needs a stage-2 model")]
    MissingStage2(String),
    #[error("steps must be >= 1")]
    NoSteps,
    #[error("hybrid N must be >= 1")]
    HybridN,
    #[error("need at least {min} sequences, got {got}")]
    TooFew { min: usize, got: usize },
    #[error("sequence lengths differ ({0} vs {1})")]
    Misaligned(usize, usize),
    #[error("{0} needs series of equal length >= 3")]
    SeriesLength(&'static str),
    #[error("correlation undefined for a constant series")]
    Constant,
    #[error("perturbation level {0} outside (0, 1]")]
    Level(f64),
    #[error("no object-free place for a {side}px square after {attempts} attempts")]
    Placement { side: usize, attempts: usize },
    #[error(transparent)]
    Stage1(#[from] Stage1Error),
    #[error(transparent)]
    StateVars(#[from] StateVarError),
}

pub type Result<T> = std::result::Result<T, RolloutError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum RolloutScheme {
    HighDimLatent,
    ThroughNsv,
    Hybrid { n: usize },
}

impl RolloutScheme {
    pub fn tag(&self) -> String {
        match self {
            RolloutScheme::HighDimLatent => "high_dim_latent".into(),
            RolloutScheme::ThroughNsv => "through_nsv".into(),
            RolloutScheme::Hybrid { n } => format!("hybrid_{n}"),
        }
    }

    /// Whether prediction step `s` (1-based) goes through the state variables.
    pub fn projects_at(&self, s: usize) -> bool {
        match *self {
            RolloutScheme::HighDimLatent => false,
            RolloutScheme::ThroughNsv => true,
            RolloutScheme::Hybrid { n } => s % (n + 1) == 0,
        }
    }
}

impl std::fmt::Display for RolloutScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.tag())
    }
}

impl std::str::FromStr for RolloutScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "high_dim_latent" => Ok(RolloutScheme::HighDimLatent),
            "through_nsv" => Ok(RolloutScheme::ThroughNsv),
            _ => s
                .strip_prefix("hybrid_")
                .or_else(|| s.strip_prefix("hybrid"))
                .and_then(|n| {
                    if n.is_empty() {
                        Some(4)
                    } else {
                        n.parse().ok()
                    }
                })
                .filter(|&n| n >= 1)
                .map(|n| RolloutScheme::Hybrid { n })
                .ok_or_else(|| {
                    format!("unknown scheme `{s}` (high_dim_latent, through_nsv, hybrid_<N>)")
                }),
        }
    }
}

/// Trained networks a rollout may use.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub stage1: &'a Stage1Model,
    pub stage2: Option<&'a Stage2Model>,
    pub dynamics: Option<&'a LatentDynamicsModel>,
}

impl Models<'_> {
    fn stage2_for(&self, scheme: RolloutScheme) -> Result<Option<&Stage2Model>> {
        let needs = scheme != RolloutScheme::HighDimLatent;
        match self.stage2 {
            Some(s2) => {
                s2.check_compatible(self.stage1)?;
                Ok(Some(s2))
            }
            None if needs => Err(RolloutError::MissingStage2(scheme.tag())),
            None => Ok(None),
        }
    }
}

/// Predicted frame-pair planes, `frames[i][s]` for initial state `i` after
/// `s + 1` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub scheme: RolloutScheme,
    pub frames: Vec<Vec<Vec<f64>>>,
}

/// Runs `scheme` from every initial pair in lock step.
pub fn rollout(
    scheme: RolloutScheme,
    models: Models<'_>,
    initial: &[Vec<f64>],
    steps: usize,
    mode: Parallelism,
) -> Result<RolloutResult> {
    if steps == 0 {
        return Err(RolloutError::NoSteps);
    }
    if let RolloutScheme::Hybrid { n: 0 } = scheme {
        return Err(RolloutError::HybridN);
    }
    let s2 = models.stage2_for(scheme)?;
    let s1 = models.stage1;
    let mut frames: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); initial.len()];
    let mut cur = initial.to_vec();
    for s in 1..=steps {
        let t0 = Instant::now();
        let mut lat = s1.encode_planes(&cur, mode)?;
        if scheme.projects_at(s) {
            let s2 = s2.expect("checked above");
            lat = s2.decode_states(&s2.encode_latents(&lat, mode)?, mode)?;
        }
        cur = s1.decode_latents(&lat, mode)?;
        for (seq, x) in frames.iter_mut().zip(&cur) {
            seq.push(x.clone());
        }
        log::debug!("{scheme} step {s}: {:.3} s", t0.elapsed().as_secs_f64());
    }
    Ok(RolloutResult { scheme, frames })
}

fn check_aligned(seqs: &[Vec<Vec<f64>>]) -> Result<usize> {
    let len = seqs.first().map_or(0, |s| s.len());
    for s in seqs {
        if s.len() != len {
            return Err(RolloutError::Misaligned(len, s.len()));
        }
    }
    Ok(len)
}

/// Fraction of sequences whose frame pair at each step is rejected by the
/// physical-variable extractor.
pub fn reject_ratio(
    spec: &SystemSpec,
    obs_dt: f64,
    size: usize,
    seqs: &[Vec<Vec<f64>>],
    mode: Parallelism,
) -> Result<Vec<f64>> {
    if seqs.len() < 2 {
        return Err(RolloutError::TooFew {
            min: 2,
            got: seqs.len(),
        });
    }
    let len = check_aligned(seqs)?;
    let k = seqs.len();
    let flags = nnkit::par::map_range(k * len, mode, |j| {
        let (i, s) = (j / len, j % len);
        extract_physical(spec, &FramePair::from_planes(size, &seqs[i][s]), obs_dt).is_err()
    });
    Ok((0..len)
        .map(|s| (0..k).filter(|&i| flags[i * len + s]).count() as f64 / k as f64)
        .collect())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean `‖V(X̂_t) − F̂_V(V(X̂_{t−1}))‖` per step over sequences given as NSV
/// rows: `states[i][0]` is the state of the initial pair, so the series has
/// one entry fewer than each sequence.
pub fn neural_stability_states(
    dynamics: &LatentDynamicsModel,
    states: &[Vec<Vec<f64>>],
    mode: Parallelism,
) -> Result<Vec<f64>> {
    let len = check_aligned(states)?;
    if len < 2 {
        return Err(RolloutError::SeriesLength("neural stability"));
    }
    let k = states.len();
    let mut series = vec![0.0; len - 1];
    for seq in states {
        let pred = dynamics.step(&seq[..len - 1], mode)?;
        for (t, p) in pred.iter().enumerate() {
            series[t] += distance(&seq[t + 1], p) / k as f64;
        }
    }
    Ok(series)
}

/// `M_S^neur` per step for frame sequences, each starting with the initial
/// pair it was rolled out from.
pub fn neural_stability(
    stage1: &Stage1Model,
    stage2: &Stage2Model,
    dynamics: &LatentDynamicsModel,
    seqs: &[Vec<Vec<f64>>],
    mode: Parallelism,
) -> Result<Vec<f64>> {
    check_aligned(seqs)?;
    let states = seqs
        .iter()
        .map(|seq| encode_nsv_planes(stage1, stage2, seq, mode).map_err(RolloutError::from))
        .collect::<Result<Vec<_>>>()?;
    neural_stability_states(dynamics, &states, mode)
}

/// Mean squared pixel difference per step.
pub fn pixel_error(pred: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(RolloutError::Misaligned(pred.len(), truth.len()));
    }
    let len = check_aligned(pred)?;
    if check_aligned(truth)? != len {
        return Err(RolloutError::Misaligned(len, truth[0].len()));
    }
    if pred.is_empty() {
        return Ok(Vec::new());
    }
    let k = pred.len() as f64;
    Ok((0..len)
        .map(|s| {
            pred.iter()
                .zip(truth)
                .map(|(p, t)| nnkit::train::mse(&p[s], &t[s]))
                .sum::<f64>()
                / k
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    OcclusionSquare,
    BackgroundSquare,
    GaussianNoise,
}

impl std::str::FromStr for PerturbationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "occlusion_square" => Ok(PerturbationKind::OcclusionSquare),
            "background_square" => Ok(PerturbationKind::BackgroundSquare),
            "gaussian_noise" => Ok(PerturbationKind::GaussianNoise),
            _ => Err(format!("unknown perturbation `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Area fraction for squares, noise standard deviation for noise.
    pub level: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn label(&self) -> String {
        let kind = match self.kind {
            PerturbationKind::OcclusionSquare => "occlusion_square",
            PerturbationKind::BackgroundSquare => "background_square",
            PerturbationKind::GaussianNoise => "gaussian_noise",
        };
        format!("{kind}@{}", self.level)
    }

    /// Square side in pixels for a `size`×`size` frame.
    pub fn side(&self, size: usize) -> usize {
        ((self.level * (size * size) as f64).sqrt().round() as usize).clamp(1, size)
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;

fn is_object(planes: &[f64], n: usize, p: usize) -> bool {
    (0..3).any(|c| planes[c * n + p] < 0.5)
}

/// Applies one perturbation to both frames of a pair given as planes.
pub fn perturb(planes: &[f64], size: usize, spec: &PerturbationSpec) -> Result<Vec<f64>> {
    let level = spec.level;
    let noise = spec.kind == PerturbationKind::GaussianNoise;
    if !(level.is_finite() && (if noise { level >= 0.0 } else { level > 0.0 }) && level <= 1.0) {
        return Err(RolloutError::Level(level));
    }
    let n = size * size;
    let mut out = planes.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        PerturbationKind::GaussianNoise => {
            if level > 0.0 {
                let dist = Normal::new(0.0, level).expect("valid std");
                for v in out.iter_mut() {
                    *v = (*v + dist.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
        }
        PerturbationKind::OcclusionSquare | PerturbationKind::BackgroundSquare => {
            let side = spec.side(size);
            let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let mut place = || {
                (
                    rng.random_range(0..=size - side),
                    rng.random_range(0..=size - side),
                )
            };
            let (x0, y0) = if spec.kind == PerturbationKind::OcclusionSquare {
                place()
            } else {
                let mut found = None;
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let (x0, y0) = place();
                    let clear = (y0..y0 + side).all(|y| {
                        (x0..x0 + side).all(|x| {
                            let p = y * size + x;
                            !is_object(&planes[..3 * n], n, p) && !is_object(&planes[3 * n..], n, p)
                        })
                    });
                    if clear {
                        found = Some((x0, y0));
                        break;
                    }
                }
                found.ok_or(RolloutError::Placement {
                    side,
                    attempts: PLACEMENT_ATTEMPTS,
                })?
            };
            for frame in 0..2 {
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        for (c, value) in color.iter().enumerate() {
                            out[frame * 3 * n + c * n + y * size + x] = *value;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(RolloutError::SeriesLength("pearson"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(RolloutError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-step metrics of one scheme under one (optional) perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub scheme: String,
    pub perturbation: Option<String>,
    pub initial_states: usize,
    pub reject_ratio: Vec<f64>,
    pub msn_mean: Vec<f64>,
    pub pixel_mse: Vec<f64>,
}

impl StabilityReport {
    /// CSV rows `step,scheme,perturbation,reject_ratio,msn_mean,pixel_mse`.
    pub fn csv_rows(&self) -> Vec<[String; 6]> {
        (0..self.reject_ratio.len())
            .map(|s| {
                [
                    (s + 1).to_string(),
                    self.scheme.clone(),
                    self.perturbation.clone().unwrap_or_else(|| "none".into()),
                    format!("{:?}", self.reject_ratio[s]),
                    format!("{:?}", self.msn_mean[s]),
                    format!("{:?}", self.pixel_mse[s]),
                ]
            })
            .collect()
    }
}

/// Rolls out `scheme` from `initial` and scores it against `truth`
/// (`truth[i][s]` aligned with prediction step `s + 1`).
#[allow(clippy::too_many_arguments)]
pub fn stability_report(
    scheme: RolloutScheme,
    models: Models<'_>,
    spec: &SystemSpec,
    obs_dt: f64,
    initial: &[Vec<f64>],
    truth: &[Vec<Vec<f64>>],
    perturbation: Option<&PerturbationSpec>,
    mode: Parallelism,
) -> Result<StabilityReport> {
    let steps = check_aligned(truth)?;
    let start: Vec<Vec<f64>> = match perturbation {
        Some(p) => initial
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let spec_i = PerturbationSpec {
                    seed: p.seed.wrapping_add(i as u64),
                    ..*p
                };
                perturb(x, models.stage1.size(), &spec_i)
            })
            .collect::<Result<_>>()?,
        None => initial.to_vec(),
    };
    let res = rollout(scheme, models, &start, steps, mode)?;
    let size = models.stage1.size();
    let reject = reject_ratio(spec, obs_dt, size, &res.frames, mode)?;
    let pixel = pixel_error(&res.frames, truth)?;
    let msn = match (models.stage2, models.dynamics) {
        (Some(s2), Some(d)) => {
            let seqs: Vec<Vec<Vec<f64>>> = start
                .iter()
                .zip(res.frames)
                .map(|(x0, mut seq)| {
                    seq.insert(0, x0.clone());
                    seq
                })
                .collect();
            neural_stability(models.stage1, s2, d, &seqs, mode)?
        }
        _ => vec![f64::NAN; steps],
    };
    Ok(StabilityReport {
        scheme: scheme.tag(),
        perturbation: perturbation.map(|p| p.label()),
        initial_states: initial.len(),
        reject_ratio: reject,
        msn_mean: msn,
        pixel_mse: pixel,
    })
}
