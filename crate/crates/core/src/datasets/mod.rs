//! Frame-pair datasets: generation, on-disk layout, splits and iteration.
//!
//! A sample spans three consecutive frames of one trajectory: the input pair
//! is `(f_t, f_{t+1})`, the target pair `(f_{t+1}, f_{t+2})`.

mod store;

use std::path::PathBuf;

use nnkit::par::{map_range, Parallelism};
use nnkit::train::{epoch_permutation, SampleSource};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::systems::{observe, render, Frame, FramePair, StateVector, SystemError, SystemSpec};

pub use store::{read_ppm, write_ppm};

/// Attempts per trajectory before generation gives up on a spec.
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    BadFile { path: PathBuf, reason: String },
    #[error("{path}: checksum mismatch")]
    Checksum { path: PathBuf },
    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("split `{0}` has no samples")]
    EmptySplit(Split),
    #[error("trajectory {traj}: no renderable initial state after {attempts} attempts ({last})")]
    Unrenderable {
        traj: usize,
        attempts: usize,
        last: SystemError,
    },
    #[error(transparent)]
    System(#[from] SystemError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (train, val, test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub trajectories: usize,
    /// Frames per trajectory.
    pub steps: usize,
    pub size: usize,
    pub seed: u64,
    /// Seconds between frames.
    pub obs_dt: f64,
    /// Fractions of trajectories assigned to train, val and test.
    pub split: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            trajectories: 200,
            steps: 60,
            size: 64,
            seed: 0,
            obs_dt: 1.0 / 60.0,
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.trajectories == 0 {
            bad.push("trajectories must be >= 1".to_string());
        }
        if self.steps < 3 {
            bad.push(format!(
                "steps must be >= 3 (a sample spans 3 frames), got {}",
                self.steps
            ));
        }
        if self.size < 32 {
            bad.push(format!("frame size must be >= 32, got {}", self.size));
        }
        if !(self.obs_dt.is_finite() && self.obs_dt > 0.0) {
            bad.push("obs_dt must be > 0".to_string());
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            bad.push(format!(
                "split fractions must be >= 0 and sum to 1, got {:?}",
                self.split
            ));
        }
        bad
    }
}

/// Everything needed to regenerate a dataset, plus its split assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: SystemSpec,
    pub config: DatasetConfig,
    /// Split of each trajectory, by index.
    pub splits: Vec<Split>,
    /// Initial states discarded because the trajectory left the canvas or
    /// stopped being finite.
    pub resamples: usize,
    /// SHA-256 over each trajectory's frame files in order, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksums: Option<Vec<String>>,
}

/// One training sample: frames `t`, `t+1`, `t+2` of trajectory `traj`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub traj: usize,
    pub t: usize,
}

/// Frames (8-bit) and ground-truth states held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    manifest: Manifest,
    // frames[traj] holds `steps` consecutive size×size×3 rasters
    frames: Vec<Vec<u8>>,
    states: Vec<Vec<StateVector>>,
}

/// Shuffles trajectory indices with `seed` and cuts them by `fractions`.
pub fn assign_splits(n: usize, fractions: [f64; 3], seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17);
    order.shuffle(&mut rng);
    let n_val = (fractions[1] * n as f64).round() as usize;
    let n_test = ((fractions[2] * n as f64).round() as usize).min(n - n_val.min(n));
    let n_train = n - n_val.min(n) - n_test;
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

fn trajectory(
    spec: &SystemSpec,
    cfg: &DatasetConfig,
    traj: usize,
) -> Result<(Vec<StateVector>, Vec<u8>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(traj as u64);
    let mut last = None;
    for attempt in 0..MAX_RESAMPLES {
        let s0 = crate::systems::sample_state(spec, &mut rng);
        let states = match observe(spec, &s0, cfg.steps, cfg.obs_dt) {
            Ok(s) => s,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        let mut bytes = Vec::with_capacity(cfg.steps * cfg.size * cfg.size * 3);
        let mut ok = true;
        for s in &states {
            match render(spec, s, cfg.size) {
                Ok(f) => bytes.extend(f.to_u8()),
                Err(e @ (SystemError::OutOfFrame { .. } | SystemError::NonFinite { .. })) => {
                    last = Some(e);
                    ok = false;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if ok {
            return Ok((states, bytes, attempt));
        }
    }
    Err(DatasetError::Unrenderable {
        traj,
        attempts: MAX_RESAMPLES,
        last: last.expect("at least one attempt failed"),
    })
}

/// Simulates and renders `cfg.trajectories` trajectories. Each trajectory
/// draws from its own stream of the seeded generator, so the result does not
/// depend on `mode`.
pub fn generate_dataset(
    spec: &SystemSpec,
    cfg: &DatasetConfig,
    mode: Parallelism,
) -> Result<Dataset> {
    spec.validate()?;
    let bad = cfg.validate();
    if !bad.is_empty() {
        return Err(DatasetError::Config(bad.join("; ")));
    }
    let parts = map_range(cfg.trajectories, mode, |i| trajectory(spec, cfg, i));
    let mut frames = Vec::with_capacity(cfg.trajectories);
    let mut states = Vec::with_capacity(cfg.trajectories);
    let mut resamples = 0;
    for p in parts {
        let (s, f, r) = p?;
        states.push(s);
        frames.push(f);
        resamples += r;
    }
    if resamples > 0 {
        log::info!(
            "{resamples} initial states resampled ({} trajectories)",
            cfg.trajectories
        );
    }
    Ok(Dataset {
        manifest: Manifest {
            spec: spec.clone(),
            config: cfg.clone(),
            splits: assign_splits(cfg.trajectories, cfg.split, cfg.seed),
            resamples,
            checksums: None,
        },
        frames,
        states,
    })
}

impl Dataset {
    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.manifest.spec
    }

    pub fn size(&self) -> usize {
        self.manifest.config.size
    }

    pub fn steps(&self) -> usize {
        self.manifest.config.steps
    }

    pub fn obs_dt(&self) -> f64 {
        self.manifest.config.obs_dt
    }

    pub fn trajectories(&self) -> usize {
        self.frames.len()
    }

    pub fn split_trajectories(&self, split: Split) -> Vec<usize> {
        (0..self.trajectories())
            .filter(|&i| self.manifest.splits[i] == split)
            .collect()
    }

    pub fn frame_bytes(&self, traj: usize, t: usize) -> &[u8] {
        let n = self.size() * self.size() * 3;
        &self.frames[traj][t * n..(t + 1) * n]
    }

    pub fn frame(&self, traj: usize, t: usize) -> Frame {
        Frame::from_u8(self.size(), self.frame_bytes(traj, t))
            .expect("stored frame has the manifest size")
    }

    /// Frames `t` and `t+1`.
    pub fn pair(&self, traj: usize, t: usize) -> FramePair {
        FramePair {
            first: self.frame(traj, t),
            second: self.frame(traj, t + 1),
        }
    }

    pub fn state(&self, traj: usize, t: usize) -> &StateVector {
        &self.states[traj][t]
    }

    pub fn states(&self, traj: usize) -> &[StateVector] {
        &self.states[traj]
    }

    /// All samples of a split, ordered by trajectory then time.
    pub fn samples(&self, split: Split) -> Vec<SampleRef> {
        let per = self.steps() - 2;
        self.split_trajectories(split)
            .into_iter()
            .flat_map(|traj| (0..per).map(move |t| SampleRef { traj, t }))
            .collect()
    }

    pub fn input(&self, s: SampleRef) -> FramePair {
        self.pair(s.traj, s.t)
    }

    pub fn target(&self, s: SampleRef) -> FramePair {
        self.pair(s.traj, s.t + 1)
    }

    /// Writes the six channel planes of frames `t`, `t+1` into `out`.
    pub fn fill_planes(&self, traj: usize, t: usize, out: &mut [f64]) {
        let n = self.size() * self.size();
        for (k, frame) in [t, t + 1].into_iter().enumerate() {
            let bytes = self.frame_bytes(traj, frame);
            let planes = &mut out[k * 3 * n..(k + 1) * 3 * n];
            for (p, px) in bytes.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    planes[c * n + p] = px[c] as f64 / 255.0;
                }
            }
        }
    }

    pub fn planes(&self, traj: usize, t: usize) -> Vec<f64> {
        let mut v = vec![0.0; 6 * self.size() * self.size()];
        self.fill_planes(traj, t, &mut v);
        v
    }

    /// A training view over one split.
    pub fn source(&self, split: Split) -> Result<PairSource<'_>> {
        let refs = self.samples(split);
        if refs.is_empty() {
            return Err(DatasetError::EmptySplit(split));
        }
        Ok(PairSource { data: self, refs })
    }
}

/// Shuffled batches of one split for epoch `epoch`. The order is the same
/// permutation the trainer uses for `(seed, epoch)`.
pub fn iterate_samples(
    data: &Dataset,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<SampleRef>>> {
    if batch_size == 0 {
        return Err(DatasetError::Config("batch size must be >= 1".into()));
    }
    let refs = data.samples(split);
    if refs.is_empty() {
        return Err(DatasetError::EmptySplit(split));
    }
    let order = epoch_permutation(refs.len(), seed, epoch);
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| refs[i]).collect())
        .collect())
}

/// Samples of a split as network inputs `[6, S, S]` and targets `[6, S, S]`.
pub struct PairSource<'a> {
    data: &'a Dataset,
    refs: Vec<SampleRef>,
}

impl<'a> PairSource<'a> {
    pub fn from_refs(data: &'a Dataset, refs: Vec<SampleRef>) -> Self {
        Self { data, refs }
    }

    pub fn refs(&self) -> &[SampleRef] {
        &self.refs
    }
}

impl SampleSource for PairSource<'_> {
    fn len(&self) -> usize {
        self.refs.len()
    }

    fn input_shape(&self) -> Vec<usize> {
        let s = self.data.size();
        vec![6, s, s]
    }

    fn target_shape(&self) -> Vec<usize> {
        self.input_shape()
    }

    fn fill(&self, index: usize, input: &mut [f64], target: &mut [f64]) {
        let r = self.refs[index];
        self.data.fill_planes(r.traj, r.t, input);
        self.data.fill_planes(r.traj, r.t + 1, target);
    }
}
