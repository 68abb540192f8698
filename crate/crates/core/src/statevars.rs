//! Stage 2: a latent-reconstruction autoencoder whose bottleneck of width ID
//! yields the neural state variables `V = h_E(L)`, and the latent dynamics
//! network `F̂_V` that advances them by one frame.
//!
//! ```text
//! h_E  dense LD→128 ─ relu ─ 128→64 ─ relu ─ 64→ID
//! h_D  dense ID→64 ─ relu ─ 64→128 ─ relu ─ 128→LD
//! F̂_V  dense ID→64 ─ relu ─ 64→64 ─ relu ─ 64→ID
//! ```

use std::path::Path;

use nnkit::checkpoint::{self, CheckpointMeta};
use nnkit::train::{predict_rows, train, PairSource, TrainConfig};
use nnkit::{Network, NetworkBuilder, NnError, Parallelism};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Dataset, DatasetError, SampleRef, Split};
use crate::stage1::{latents_for, Stage1Error, Stage1Model};
use crate::systems::{extract_physical, FramePair};
use crate::table::SampleRows;

const ENCODER_LAYERS: usize = 5;

#[derive(Debug, Error)]
pub enum StateVarError {
    #[error("stage-2 model expects LD={expected}, stage-1 model has LD={got}")]
    LatentWidth { expected: usize, got: usize },
    #[error("state vector has {got} entries, ID is {expected}")]
    StateWidth { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: not a {role} checkpoint")]
    WrongCheckpoint { path: String, role: &'static str },
    #[error("split `{0}` has no consecutive sample pairs")]
    NoPairs(Split),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Stage1(#[from] Stage1Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, StateVarError>;

/// Training settings shared by the stage-2 and latent dynamics networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub patience: Option<usize>,
}

impl Default for DenseTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            patience: Some(30),
        }
    }
}

impl DenseTrainConfig {
    pub fn validate(&self, prefix: &str) -> Vec<String> {
        let mut bad = Vec::new();
        if self.epochs == 0 {
            bad.push(format!("{prefix}.epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            bad.push(format!("{prefix}.batch_size must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad.push(format!("{prefix}.learning_rate must be > 0"));
        }
        bad
    }

    fn to_train(&self, mode: Parallelism) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            learning_rate: self.learning_rate,
            shuffle: true,
            patience: self.patience,
            parallelism: mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Model {
    encoder: Network,
    decoder: Network,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub config: DenseTrainConfig,
    pub id: usize,
    pub ld: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    /// `Σ‖L̂ − L‖² / Σ‖L‖²` over val latents.
    pub val_relative_error: f64,
    /// Pixel MSE of `g_D ∘ h_D ∘ h_E ∘ g_E` against the val targets.
    pub val_pixel_mse: f64,
    /// Pixel MSE of `g_D ∘ g_E` on the same samples.
    pub val_stage1_pixel_mse: f64,
    /// Fraction of val predictions through the NSVs that extraction accepts.
    pub val_valid_fraction: f64,
}

pub fn stage2_network(ld: usize, id: usize, seed: u64) -> Result<Network> {
    Ok(NetworkBuilder::new(vec![ld])
        .dense(128)
        .relu()
        .dense(64)
        .relu()
        .dense(id)
        .dense(64)
        .relu()
        .dense(128)
        .relu()
        .dense(ld)
        .build(seed)?)
}

impl Stage2Model {
    pub fn new(ld: usize, id: usize, seed: u64) -> Result<Self> {
        Self::from_net(stage2_network(ld, id, seed)?)
    }

    fn from_net(net: Network) -> Result<Self> {
        let (encoder, decoder) = net.split_at(ENCODER_LAYERS)?;
        Ok(Self { encoder, decoder })
    }

    pub fn id(&self) -> usize {
        self.encoder.output_len()
    }

    pub fn ld(&self) -> usize {
        self.encoder.input_len()
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn network(&self) -> Network {
        self.encoder.chain(&self.decoder).expect("halves compose")
    }

    pub fn check_compatible(&self, stage1: &Stage1Model) -> Result<()> {
        if stage1.ld() != self.ld() {
            return Err(StateVarError::LatentWidth {
                expected: self.ld(),
                got: stage1.ld(),
            });
        }
        Ok(())
    }

    /// `h_E` over latent rows.
    pub fn encode_latents(&self, rows: &[Vec<f64>], mode: Parallelism) -> Result<Vec<Vec<f64>>> {
        Ok(predict_rows(&self.encoder, rows, mode)?)
    }

    /// `h_D` over state rows.
    pub fn decode_states(&self, rows: &[Vec<f64>], mode: Parallelism) -> Result<Vec<Vec<f64>>> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.id()) {
            return Err(StateVarError::StateWidth {
                expected: self.id(),
                got: r.len(),
            });
        }
        Ok(predict_rows(&self.decoder, rows, mode)?)
    }

    pub fn save(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut meta = CheckpointMeta::default();
        meta.meta.push(("role".into(), "stage2".into()));
        meta.meta
            .push(("encoder_layers".into(), ENCODER_LAYERS.to_string()));
        for (k, v) in extra {
            meta.meta.push((k.to_string(), v.clone()));
        }
        Ok(checkpoint::save(&self.network(), &meta, path)?)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (net, meta) = checkpoint::load(path)?;
        if meta.get("role") != Some("stage2")
            || meta.get("encoder_layers") != Some(&ENCODER_LAYERS.to_string())
        {
            return Err(StateVarError::WrongCheckpoint {
                path: path.display().to_string(),
                role: "stage2",
            });
        }
        Ok((Self::from_net(net)?, meta))
    }
}

/// Neural state variables of frame-pair planes: `h_E ∘ g_E`.
pub fn encode_nsv_planes(
    s1: &Stage1Model,
    s2: &Stage2Model,
    planes: &[Vec<f64>],
    mode: Parallelism,
) -> Result<Vec<Vec<f64>>> {
    s2.check_compatible(s1)?;
    let l = s1.encode_planes(planes, mode)?;
    s2.encode_latents(&l, mode)
}

/// Frame-pair planes of neural state variables: `g_D ∘ h_D`.
pub fn decode_nsv_planes(
    s1: &Stage1Model,
    s2: &Stage2Model,
    states: &[Vec<f64>],
    mode: Parallelism,
) -> Result<Vec<Vec<f64>>> {
    s2.check_compatible(s1)?;
    let l = s2.decode_states(states, mode)?;
    Ok(s1.decode_latents(&l, mode)?)
}

pub fn encode_nsv(s1: &Stage1Model, s2: &Stage2Model, x: &FramePair) -> Result<Vec<f64>> {
    if x.size() != s1.size() {
        return Err(Stage1Error::SizeMismatch {
            expected: s1.size(),
            got: x.size(),
        }
        .into());
    }
    Ok(encode_nsv_planes(s1, s2, &[x.to_planes()], Parallelism::Sequential)?.remove(0))
}

pub fn decode_nsv(s1: &Stage1Model, s2: &Stage2Model, v: &[f64]) -> Result<FramePair> {
    let planes = decode_nsv_planes(s1, s2, &[v.to_vec()], Parallelism::Sequential)?.remove(0);
    Ok(FramePair::from_planes(s1.size(), &planes))
}

/// Neural state variables for every listed sample.
pub fn nsv_for(
    s1: &Stage1Model,
    s2: &Stage2Model,
    data: &Dataset,
    index: Vec<SampleRef>,
    mode: Parallelism,
) -> Result<SampleRows> {
    s2.check_compatible(s1)?;
    let lat = latents_for(s1, data, index, mode)?;
    Ok(SampleRows {
        rows: s2.encode_latents(&lat.rows, mode)?,
        index: lat.index,
    })
}

fn sum_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Trains `h_D ∘ h_E` on the frozen stage-1 latents of the train split.
pub fn train_stage2(
    s1: &Stage1Model,
    data: &Dataset,
    id: usize,
    cfg: &DenseTrainConfig,
    mode: Parallelism,
) -> Result<(Stage2Model, Stage2Report)> {
    if id == 0 {
        return Err(StateVarError::Config("ID must be >= 1".into()));
    }
    let bad = cfg.validate("stage2");
    if !bad.is_empty() {
        return Err(StateVarError::Config(bad.join("; ")));
    }
    let train_l = latents_for(s1, data, data.samples(Split::Train), mode)?;
    let val_l = latents_for(s1, data, data.samples(Split::Val), mode)?;
    let train_src = PairSource::from_rows(train_l.rows.clone(), train_l.rows.clone())?;
    let val_src = PairSource::from_rows(val_l.rows.clone(), val_l.rows.clone())?;
    let mut net = stage2_network(s1.ld(), id, cfg.seed)?;
    let rep = train(&mut net, &train_src, Some(&val_src), &cfg.to_train(mode))?;
    let model = Stage2Model::from_net(net)?;

    let recon = predict_rows(&model.network(), &val_l.rows, mode)?;
    let num: f64 = recon
        .iter()
        .zip(&val_l.rows)
        .map(|(a, b)| sum_sq(a, b))
        .sum();
    let den: f64 = val_l
        .rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .sum();

    let mut px = 0.0;
    let mut px1 = 0.0;
    let mut count = 0usize;
    let mut valid = 0usize;
    for (chunk_idx, chunk) in val_l.index.chunks(256).enumerate() {
        let lat = &val_l.rows[chunk_idx * 256..chunk_idx * 256 + chunk.len()];
        let through = s1.decode_latents(
            &model.decode_states(&model.encode_latents(lat, mode)?, mode)?,
            mode,
        )?;
        let direct = s1.decode_latents(lat, mode)?;
        for ((r, a), b) in chunk.iter().zip(&through).zip(&direct) {
            let target = data.planes(r.traj, r.t + 1);
            px += sum_sq(a, &target);
            px1 += sum_sq(b, &target);
            count += target.len();
            let pair = FramePair::from_planes(s1.size(), a);
            if extract_physical(data.spec(), &pair, data.obs_dt()).is_ok() {
                valid += 1;
            }
        }
    }
    let report = Stage2Report {
        config: cfg.clone(),
        id,
        ld: s1.ld(),
        train_samples: train_l.len(),
        val_samples: val_l.len(),
        train_loss: rep.train_loss,
        val_loss: rep.val_loss,
        best_epoch: rep.best_epoch,
        val_relative_error: num / den,
        val_pixel_mse: px / count as f64,
        val_stage1_pixel_mse: px1 / count as f64,
        val_valid_fraction: valid as f64 / val_l.len() as f64,
    };
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDynamicsModel {
    pub net: Network,
    /// Mean and standard deviation of `‖F̂_V(V_t) − V_{t+1}‖` on val.
    pub residual_mean: f64,
    pub residual_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub config: DenseTrainConfig,
    pub id: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub residual_mean: f64,
    pub residual_std: f64,
    /// Mean `‖V_t − V_{t+1}‖` on val: the error of predicting no change.
    pub identity_residual_mean: f64,
}

pub fn dynamics_network(id: usize, seed: u64) -> Result<Network> {
    Ok(NetworkBuilder::new(vec![id])
        .dense(64)
        .relu()
        .dense(64)
        .relu()
        .dense(id)
        .build(seed)?)
}

/// Consecutive `(V_t, V_{t+1})` pairs within trajectories, from NSVs of
/// every sample of the split.
fn nsv_pairs(
    s1: &Stage1Model,
    s2: &Stage2Model,
    data: &Dataset,
    split: Split,
    mode: Parallelism,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let v = nsv_for(s1, s2, data, data.samples(split), mode)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 1..v.len() {
        let (a, b) = (v.index[i - 1], v.index[i]);
        if a.traj == b.traj && a.t + 1 == b.t {
            xs.push(v.rows[i - 1].clone());
            ys.push(v.rows[i].clone());
        }
    }
    if xs.is_empty() {
        return Err(StateVarError::NoPairs(split));
    }
    Ok((xs, ys))
}

fn residuals(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> (f64, f64) {
    let r: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| sum_sq(a, b).sqrt())
        .collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let std = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, std)
}

/// Fits `F̂_V(V_t) ≈ V_{t+1}` on neural state variables of ground-truth frames.
pub fn train_latent_dynamics(
    s1: &Stage1Model,
    s2: &Stage2Model,
    data: &Dataset,
    cfg: &DenseTrainConfig,
    mode: Parallelism,
) -> Result<(LatentDynamicsModel, DynamicsReport)> {
    let bad = cfg.validate("dynamics");
    if !bad.is_empty() {
        return Err(StateVarError::Config(bad.join("; ")));
    }
    let (tx, ty) = nsv_pairs(s1, s2, data, Split::Train, mode)?;
    let (vx, vy) = nsv_pairs(s1, s2, data, Split::Val, mode)?;
    let train_src = PairSource::from_rows(tx.clone(), ty)?;
    let val_src = PairSource::from_rows(vx.clone(), vy.clone())?;
    let mut net = dynamics_network(s2.id(), cfg.seed)?;
    let rep = train(&mut net, &train_src, Some(&val_src), &cfg.to_train(mode))?;
    let pred = predict_rows(&net, &vx, mode)?;
    let (mean, std) = residuals(&pred, &vy);
    let (identity, _) = residuals(&vx, &vy);
    let report = DynamicsReport {
        config: cfg.clone(),
        id: s2.id(),
        train_pairs: tx.len(),
        val_pairs: vx.len(),
        train_loss: rep.train_loss,
        val_loss: rep.val_loss,
        best_epoch: rep.best_epoch,
        residual_mean: mean,
        residual_std: std,
        identity_residual_mean: identity,
    };
    Ok((
        LatentDynamicsModel {
            net,
            residual_mean: mean,
            residual_std: std,
        },
        report,
    ))
}

impl LatentDynamicsModel {
    pub fn id(&self) -> usize {
        self.net.input_len()
    }

    pub fn step(&self, states: &[Vec<f64>], mode: Parallelism) -> Result<Vec<Vec<f64>>> {
        if let Some(r) = states.iter().find(|r| r.len() != self.id()) {
            return Err(StateVarError::StateWidth {
                expected: self.id(),
                got: r.len(),
            });
        }
        Ok(predict_rows(&self.net, states, mode)?)
    }

    pub fn save(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut meta = CheckpointMeta::default();
        meta.meta.push(("role".into(), "latent_dynamics".into()));
        meta.meta
            .push(("residual_mean".into(), format!("{:?}", self.residual_mean)));
        meta.meta
            .push(("residual_std".into(), format!("{:?}", self.residual_std)));
        for (k, v) in extra {
            meta.meta.push((k.to_string(), v.clone()));
        }
        Ok(checkpoint::save(&self.net, &meta, path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (net, meta) = checkpoint::load(path)?;
        let wrong = || StateVarError::WrongCheckpoint {
            path: path.display().to_string(),
            role: "latent_dynamics",
        };
        if meta.get("role") != Some("latent_dynamics") {
            return Err(wrong());
        }
        let num = |k: &str| {
            meta.get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(wrong)
        };
        Ok(Self {
            residual_mean: num("residual_mean")?,
            residual_std: num("residual_std")?,
            net,
        })
    }
}
