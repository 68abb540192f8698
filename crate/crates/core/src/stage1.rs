//! Dynamics predictive autoencoder: `g_E` maps a frame pair to a latent
//! vector of width LD, `g_D` maps it back to the following frame pair.
//!
//! Reference architecture (desk-v1), for S×S frames with S divisible by 8:
//!
//! ```text
//! encoder  [6,S,S] conv 16 k3 s2 ─ relu ─ conv 32 k3 s2 ─ relu ─ conv 64 k3 s2 ─ relu
//!          ─ flatten ─ dense LD
//! decoder  dense 64·(S/8)² ─ relu ─ reshape [64,S/8,S/8]
//!          ─ up2 ─ conv 32 k3 ─ relu ─ up2 ─ conv 16 k3 ─ relu ─ up2 ─ conv 6 k3 ─ sigmoid
//! ```

use std::path::Path;

use nnkit::checkpoint::{self, CheckpointMeta};
use nnkit::train::{predict_rows, train, SampleSource, TrainConfig};
use nnkit::{Network, NetworkBuilder, NnError, Parallelism};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Dataset, DatasetError, SampleRef, Split};
use crate::systems::{BaselineKind, FramePair};
use crate::table::SampleRows;

const ENCODER_LAYERS: usize = 8;

#[derive(Debug, Error)]
pub enum Stage1Error {
    #[error("frame size {got} does not match the model's {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("latent width {got} does not match the model's {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("frame size {0} must be a multiple of 8 and at least 32")]
    BadSize(usize),
    #[error("invalid stage-1 config: {0}")]
    Config(String),
    #[error("{path}: not a stage-1 checkpoint ({reason})")]
    NotStage1 { path: String, reason: String },
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, Stage1Error>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    /// Latent width LD.
    pub ld: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            ld: 64,
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            patience: Some(20),
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.ld == 0 {
            bad.push("stage1.ld must be >= 1".to_string());
        }
        if self.epochs == 0 {
            bad.push("stage1.epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            bad.push("stage1.batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad.push("stage1.learning_rate must be > 0".to_string());
        }
        bad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub config: Stage1Config,
    pub system: String,
    pub size: usize,
    pub parameters: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub val_mse: f64,
    pub val_copy_mse: f64,
    pub val_linear_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Model {
    encoder: Network,
    decoder: Network,
}

/// The desk-v1 autoencoder as a single network (encoder layers first).
pub fn desk_v1(size: usize, ld: usize, seed: u64) -> Result<Network> {
    if size % 8 != 0 || size < 32 {
        return Err(Stage1Error::BadSize(size));
    }
    let c = size / 8;
    Ok(NetworkBuilder::new(vec![6, size, size])
        .conv2d(16, 3, 2, 1)
        .relu()
        .conv2d(32, 3, 2, 1)
        .relu()
        .conv2d(64, 3, 2, 1)
        .relu()
        .flatten()
        .dense(ld)
        .dense(64 * c * c)
        .relu()
        .reshape(vec![64, c, c])
        .upsample(2)
        .conv2d(32, 3, 1, 1)
        .relu()
        .upsample(2)
        .conv2d(16, 3, 1, 1)
        .relu()
        .upsample(2)
        .conv2d(6, 3, 1, 1)
        .sigmoid()
        .build(seed)?)
}

impl Stage1Model {
    pub fn new(size: usize, ld: usize, seed: u64) -> Result<Self> {
        Self::from_autoencoder(desk_v1(size, ld, seed)?)
    }

    pub fn from_autoencoder(net: Network) -> Result<Self> {
        let (encoder, decoder) = net.split_at(ENCODER_LAYERS)?;
        Ok(Self { encoder, decoder })
    }

    pub fn autoencoder(&self) -> Network {
        self.encoder.chain(&self.decoder).expect("halves compose")
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn ld(&self) -> usize {
        self.encoder.output_len()
    }

    pub fn size(&self) -> usize {
        self.encoder.input_shape()[1]
    }

    fn check_pair(&self, x: &FramePair) -> Result<()> {
        if x.size() != self.size() {
            return Err(Stage1Error::SizeMismatch {
                expected: self.size(),
                got: x.size(),
            });
        }
        Ok(())
    }

    fn check_planes(&self, rows: &[Vec<f64>]) -> Result<()> {
        let n = self.encoder.input_len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Stage1Error::SizeMismatch {
                expected: self.size(),
                got: ((r.len() / 6) as f64).sqrt() as usize,
            });
        }
        Ok(())
    }

    fn check_latents(&self, rows: &[Vec<f64>]) -> Result<()> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.ld()) {
            return Err(Stage1Error::WidthMismatch {
                expected: self.ld(),
                got: r.len(),
            });
        }
        Ok(())
    }

    /// `g_E` over many frame-pair plane vectors.
    pub fn encode_planes(&self, rows: &[Vec<f64>], mode: Parallelism) -> Result<Vec<Vec<f64>>> {
        self.check_planes(rows)?;
        Ok(predict_rows(&self.encoder, rows, mode)?)
    }

    /// `g_D` over many latent vectors; outputs are frame-pair planes.
    pub fn decode_latents(&self, rows: &[Vec<f64>], mode: Parallelism) -> Result<Vec<Vec<f64>>> {
        self.check_latents(rows)?;
        Ok(predict_rows(&self.decoder, rows, mode)?)
    }

    /// `g_D ∘ g_E` over many plane vectors.
    pub fn predict_planes(&self, rows: &[Vec<f64>], mode: Parallelism) -> Result<Vec<Vec<f64>>> {
        let l = self.encode_planes(rows, mode)?;
        self.decode_latents(&l, mode)
    }

    pub fn encode(&self, x: &FramePair) -> Result<Vec<f64>> {
        self.check_pair(x)?;
        Ok(self
            .encode_planes(&[x.to_planes()], Parallelism::Sequential)?
            .remove(0))
    }

    pub fn decode(&self, latent: &[f64]) -> Result<FramePair> {
        let planes = self
            .decode_latents(&[latent.to_vec()], Parallelism::Sequential)?
            .remove(0);
        Ok(FramePair::from_planes(self.size(), &planes))
    }

    pub fn predict_next(&self, x: &FramePair) -> Result<FramePair> {
        self.check_pair(x)?;
        let planes = self
            .predict_planes(&[x.to_planes()], Parallelism::Sequential)?
            .remove(0);
        Ok(FramePair::from_planes(self.size(), &planes))
    }

    pub fn save(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut meta = CheckpointMeta::default();
        meta.meta.push(("role".into(), "stage1".into()));
        meta.meta
            .push(("encoder_layers".into(), ENCODER_LAYERS.to_string()));
        for (k, v) in extra {
            meta.meta.push((k.to_string(), v.clone()));
        }
        Ok(checkpoint::save(&self.autoencoder(), &meta, path)?)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (net, meta) = checkpoint::load(path)?;
        let not = |reason: &str| Stage1Error::NotStage1 {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        if meta.get("role") != Some("stage1") {
            return Err(not("role is not stage1"));
        }
        if meta.get("encoder_layers") != Some(&ENCODER_LAYERS.to_string()) {
            return Err(not("unexpected encoder depth"));
        }
        Ok((Self::from_autoencoder(net)?, meta))
    }
}

fn baseline_planes(data: &Dataset, r: SampleRef, kind: BaselineKind) -> Vec<f64> {
    let planes = data.planes(r.traj, r.t);
    let n = planes.len() / 2;
    let (prev, last) = planes.split_at(n);
    let mut out = last.to_vec();
    match kind {
        BaselineKind::Copy => out.extend_from_slice(last),
        BaselineKind::LinearExtrapolation => out.extend(
            last.iter()
                .zip(prev)
                .map(|(b, a)| (2.0 * b - a).clamp(0.0, 1.0)),
        ),
    }
    out
}

/// Pixel-space baseline prediction of the target pair of `r`: copy repeats
/// the latest frame, linear extrapolation continues each pixel.
pub fn pixel_baseline(data: &Dataset, r: SampleRef, kind: BaselineKind) -> FramePair {
    FramePair::from_planes(data.size(), &baseline_planes(data, r, kind))
}

/// Mean pixel MSE of a pixel baseline over a split.
pub fn pixel_baseline_mse(data: &Dataset, split: Split, kind: BaselineKind) -> Result<f64> {
    let src = data.source(split)?;
    let per = 6 * data.size() * data.size();
    let mut tgt = vec![0.0; per];
    let mut inp = vec![0.0; per];
    let mut sum = 0.0;
    for i in 0..src.len() {
        src.fill(i, &mut inp, &mut tgt);
        let p = baseline_planes(data, src.refs()[i], kind);
        sum += p
            .iter()
            .zip(&tgt)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(sum / (src.len() * per) as f64)
}

/// Starts the sigmoid head at the mean target intensity of each plane.
fn set_output_prior(net: &mut Network, src: &dyn SampleSource) {
    let planes = src.target_shape()[0];
    let per = src.target_shape().iter().product::<usize>() / planes;
    let mut input = vec![0.0; src.input_shape().iter().product()];
    let mut target = vec![0.0; planes * per];
    let mut mean = vec![0.0; planes];
    for i in 0..src.len() {
        src.fill(i, &mut input, &mut target);
        for (m, plane) in mean.iter_mut().zip(target.chunks(per)) {
            *m += plane.iter().sum::<f64>();
        }
    }
    let n = (src.len() * per) as f64;
    if let Some(bias) = net.params_mut().pop() {
        for (b, m) in bias.iter_mut().zip(&mean) {
            let p = (m / n).clamp(0.01, 0.99);
            *b = (p / (1.0 - p)).ln();
        }
    }
}

/// Trains desk-v1 on the train split, early-stopping on val.
pub fn train_stage1(
    data: &Dataset,
    cfg: &Stage1Config,
    mode: Parallelism,
) -> Result<(Stage1Model, Stage1Report)> {
    let bad = cfg.validate();
    if !bad.is_empty() {
        return Err(Stage1Error::Config(bad.join("; ")));
    }
    let train_src = data.source(Split::Train)?;
    let val_src = data.source(Split::Val)?;
    let mut net = desk_v1(data.size(), cfg.ld, cfg.seed)?;
    set_output_prior(&mut net, &train_src);
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        learning_rate: cfg.learning_rate,
        shuffle: true,
        patience: cfg.patience,
        parallelism: mode,
    };
    log::info!(
        "stage 1: {} parameters, {} train / {} val samples",
        net.param_count(),
        train_src.len(),
        val_src.len()
    );
    let rep = train(&mut net, &train_src, Some(&val_src), &tc)?;
    let val_mse = nnkit::train::evaluate(&net, &val_src, mode)?;
    let report = Stage1Report {
        config: cfg.clone(),
        system: data.spec().system.to_string(),
        size: data.size(),
        parameters: net.param_count(),
        train_samples: train_src.len(),
        val_samples: val_src.len(),
        train_loss: rep.train_loss,
        val_loss: rep.val_loss,
        best_epoch: rep.best_epoch,
        stopped_early: rep.stopped_early,
        val_mse,
        val_copy_mse: pixel_baseline_mse(data, Split::Val, BaselineKind::Copy)?,
        val_linear_mse: pixel_baseline_mse(data, Split::Val, BaselineKind::LinearExtrapolation)?,
    };
    Ok((Stage1Model::from_autoencoder(net)?, report))
}

/// Uniform sample (without replacement, seeded) of at most `max_n` samples
/// of a split, returned in dataset order.
pub fn sample_refs(data: &Dataset, split: Split, max_n: usize, seed: u64) -> Vec<SampleRef> {
    let mut refs = data.samples(split);
    if refs.len() > max_n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        refs.shuffle(&mut rng);
        refs.truncate(max_n);
        refs.sort();
    }
    refs
}

/// Latent vectors `g_E(input)` for up to `max_n` samples of a split.
pub fn collect_latents(
    model: &Stage1Model,
    data: &Dataset,
    split: Split,
    max_n: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<SampleRows> {
    let index = sample_refs(data, split, max_n, seed);
    latents_for(model, data, index, mode)
}

pub fn latents_for(
    model: &Stage1Model,
    data: &Dataset,
    index: Vec<SampleRef>,
    mode: Parallelism,
) -> Result<SampleRows> {
    if data.size() != model.size() {
        return Err(Stage1Error::SizeMismatch {
            expected: model.size(),
            got: data.size(),
        });
    }
    let mut rows = Vec::with_capacity(index.len());
    // bounded batches keep the plane buffers small
    for chunk in index.chunks(256) {
        let planes: Vec<Vec<f64>> = chunk.iter().map(|r| data.planes(r.traj, r.t)).collect();
        rows.extend(model.encode_planes(&planes, mode)?);
    }
    Ok(SampleRows { index, rows })
}
