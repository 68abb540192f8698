//! Probing what the neural state variables encode: supervised regression of
//! physical variables from NSVs against the same regression from the top
//! principal components of stage-1 latents, plus a 2-D PCA export of NSVs.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use nnkit::train::{predict_rows, train, PairSource, TrainConfig};
use nnkit::{NetworkBuilder, NnError, Parallelism};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Dataset, SampleRef, Split};
use crate::stage1::{latents_for, Stage1Error, Stage1Model};
use crate::statevars::{Stage2Model, StateVarError};
use crate::systems::{physical_from_state, wrap_degrees, PhysicalVariables, Variable};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("cannot take {m} components: data rank is {rank}")]
    Rank { m: usize, rank: usize },
    #[error("need at least {min} rows, got {got}")]
    TooFewRows { min: usize, got: usize },
    #[error("rows have inconsistent width")]
    Ragged,
    #[error("{0} features but {1} label rows")]
    Misaligned(usize, usize),
    #[error("labeled fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("variable `{0}` is not available for this system")]
    Variable(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Stage1(#[from] Stage1Error),
    #[error(transparent)]
    StateVars(#[from] StateVarError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `m` orthonormal rows of length `D`.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance for the kept components.
    pub explained_variance: Vec<f64>,
    /// Kept variance over total variance, per component.
    pub explained_fraction: Vec<f64>,
}

fn width(rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows.first().map_or(0, |r| r.len());
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(AnalysisError::Ragged);
    }
    Ok(d)
}

/// Centered PCA from the dense eigendecomposition of the sample covariance.
pub fn fit_pca(rows: &[Vec<f64>], m: usize) -> Result<PcaBasis> {
    if rows.len() < 2 {
        return Err(AnalysisError::TooFewRows {
            min: 2,
            got: rows.len(),
        });
    }
    let d = width(rows)?;
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 * d as f64;
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if m == 0 || m > rank {
        return Err(AnalysisError::Rank { m, rank });
    }
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Vec::with_capacity(m);
    let mut variance = Vec::with_capacity(m);
    for &i in &order[..m] {
        let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = c
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if lead < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(c);
        variance.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaBasis {
        mean,
        explained_fraction: variance.iter().map(|v| v / total).collect(),
        explained_variance: variance,
        components,
    })
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((c, x), m)| c * (x - m))
                    .sum()
            })
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += w * ci;
            }
        }
        x
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.project(r)).collect()
    }

    /// Mean squared reconstruction error over rows.
    pub fn reconstruction_error(&self, rows: &[Vec<f64>]) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|r| {
                let back = self.reconstruct(&self.project(r));
                r.iter()
                    .zip(&back)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        total / rows.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub labeled_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Cap on samples drawn from the dataset for a comparison.
    pub max_samples: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            labeled_fraction: 0.3,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            max_samples: 5000,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let f = self.labeled_fraction;
        if !(f > 0.0 && f <= 1.0) {
            bad.push(format!("probe.labeled_fraction must be in (0, 1], got {f}"));
        }
        if self.epochs == 0 {
            bad.push("probe.epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            bad.push("probe.batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad.push(format!(
                "probe.learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.max_samples < 10 {
            bad.push("probe.max_samples must be >= 10".into());
        }
        bad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetError {
    pub variable: String,
    pub unit: String,
    pub mae: f64,
    /// `mae` divided by the held-out standard deviation of the target.
    pub mae_normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub source: String,
    pub features: usize,
    pub labeled_fraction: f64,
    pub labeled: usize,
    pub held_out: usize,
    pub targets: Vec<TargetError>,
    pub warnings: Vec<String>,
}

impl RegressionReport {
    pub fn mae(&self, variable: &str) -> Option<f64> {
        self.targets
            .iter()
            .find(|t| t.variable == variable)
            .map(|t| t.mae)
    }
}

/// Label columns of a probe: a name, a unit and whether errors wrap at 360.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelColumn {
    pub name: String,
    pub unit: String,
    pub angle: bool,
}

impl From<Variable> for LabelColumn {
    fn from(v: Variable) -> Self {
        Self {
            name: v.name().into(),
            unit: v.unit().into(),
            angle: v.is_angle(),
        }
    }
}

fn stats(cols: usize, rows: &[&Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; cols];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x / n;
        }
    }
    let mut sd = vec![0.0; cols];
    for r in rows {
        for ((s, x), m) in sd.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    (mean, sd.into_iter().map(f64::sqrt).collect())
}

fn scale(row: &[f64], mean: &[f64], sd: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(mean)
        .zip(sd)
        .map(|((x, m), s)| if *s > 0.0 { (x - m) / s } else { 0.0 })
        .collect()
}

/// The labeled subset for `n` rows: a seeded shuffle cut at `fraction`,
/// keeping at least one row on each side when `fraction < 1`.
pub fn labeled_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9E0B_E5EE));
    let mut cut = ((fraction * n as f64).round() as usize).clamp(1, n);
    if fraction < 1.0 && cut == n && n > 1 {
        cut = n - 1;
    }
    let held = idx.split_off(cut);
    (idx, held)
}

/// Trains an `f→64→64→64→p` MLP on a seeded labeled subset and reports MAE
/// per label on the complement (on the training rows when the fraction is 1).
pub fn train_probe(
    source: &str,
    features: &[Vec<f64>],
    labels: &[Vec<f64>],
    columns: &[LabelColumn],
    cfg: &ProbeConfig,
    mode: Parallelism,
) -> Result<RegressionReport> {
    let bad = cfg.validate();
    if !bad.is_empty() {
        return Err(AnalysisError::Config(bad.join("; ")));
    }
    if features.len() != labels.len() {
        return Err(AnalysisError::Misaligned(features.len(), labels.len()));
    }
    if features.len() < 2 {
        return Err(AnalysisError::TooFewRows {
            min: 2,
            got: features.len(),
        });
    }
    let f = width(features)?;
    let p = width(labels)?;
    if p != columns.len() {
        return Err(AnalysisError::Ragged);
    }
    let (lab, held) = labeled_split(features.len(), cfg.labeled_fraction, cfg.seed);
    let held = if held.is_empty() { lab.clone() } else { held };
    let lab_x: Vec<&Vec<f64>> = lab.iter().map(|&i| &features[i]).collect();
    let lab_y: Vec<&Vec<f64>> = lab.iter().map(|&i| &labels[i]).collect();
    let (xm, xs) = stats(f, &lab_x);
    let (ym, ys) = stats(p, &lab_y);
    let mut warnings = Vec::new();
    for (c, s) in columns.iter().zip(&ys) {
        if *s < 1e-12 {
            warnings.push(format!(
                "label `{}` has no variance on the labeled subset",
                c.name
            ));
        }
    }
    let tx: Vec<Vec<f64>> = lab_x.iter().map(|r| scale(r, &xm, &xs)).collect();
    let ty: Vec<Vec<f64>> = lab_y.iter().map(|r| scale(r, &ym, &ys)).collect();
    let mut net = NetworkBuilder::new(vec![f])
        .dense(64)
        .relu()
        .dense(64)
        .relu()
        .dense(64)
        .relu()
        .dense(p)
        .build(cfg.seed)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        learning_rate: cfg.learning_rate,
        shuffle: true,
        patience: None,
        parallelism: mode,
    };
    train(&mut net, &PairSource::from_rows(tx, ty)?, None, &tc)?;
    let hx: Vec<Vec<f64>> = held
        .iter()
        .map(|&i| scale(&features[i], &xm, &xs))
        .collect();
    let pred = predict_rows(&net, &hx, mode)?;
    let held_y: Vec<&Vec<f64>> = held.iter().map(|&i| &labels[i]).collect();
    let (_, hs) = stats(p, &held_y);
    let targets = columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mae = pred
                .iter()
                .zip(&held_y)
                .map(|(z, y)| {
                    let v = z[j] * if ys[j] > 0.0 { ys[j] } else { 1.0 } + ym[j];
                    let d = v - y[j];
                    if c.angle {
                        wrap_degrees(d).abs()
                    } else {
                        d.abs()
                    }
                })
                .sum::<f64>()
                / held.len() as f64;
            TargetError {
                variable: c.name.clone(),
                unit: c.unit.clone(),
                mae,
                mae_normalized: if hs[j] > 0.0 { mae / hs[j] } else { f64::NAN },
            }
        })
        .collect();
    Ok(RegressionReport {
        source: source.into(),
        features: f,
        labeled_fraction: cfg.labeled_fraction,
        labeled: lab.len(),
        held_out: held.len(),
        targets,
        warnings,
    })
}

/// Ground-truth label of a sample: the state at its second frame.
pub fn sample_truth(data: &Dataset, r: SampleRef) -> PhysicalVariables {
    physical_from_state(data.spec(), data.state(r.traj, r.t + 1))
}

fn label_rows(data: &Dataset, index: &[SampleRef], targets: &[Variable]) -> Result<Vec<Vec<f64>>> {
    index
        .iter()
        .map(|&r| {
            let v = sample_truth(data, r);
            targets
                .iter()
                .map(|&t| {
                    v.get(t)
                        .ok_or_else(|| AnalysisError::Variable(t.name().into()))
                })
                .collect()
        })
        .collect()
}

/// Samples used by the probes: every split pooled, capped at `max_n`.
pub fn probe_samples(data: &Dataset, max_n: usize, seed: u64) -> Vec<SampleRef> {
    let mut all: Vec<SampleRef> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .flat_map(|&s| data.samples(s))
        .collect();
    all.sort();
    if all.len() > max_n {
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        all.truncate(max_n);
        all.sort();
    }
    all
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub system: String,
    pub id: usize,
    pub samples: usize,
    pub config: ProbeConfig,
    pub pca_explained_fraction: Vec<f64>,
    pub nsv: RegressionReport,
    pub pca_latent: RegressionReport,
}

/// Probes with identical settings on NSVs and on the top-ID principal
/// components of the stage-1 latents of the same samples.
pub fn compare_nsv_vs_pca(
    s1: &Stage1Model,
    s2: &Stage2Model,
    data: &Dataset,
    targets: &[Variable],
    cfg: &ProbeConfig,
    mode: Parallelism,
) -> Result<ProbeComparison> {
    let bad = cfg.validate();
    if !bad.is_empty() {
        return Err(AnalysisError::Config(bad.join("; ")));
    }
    s2.check_compatible(s1)?;
    let index = probe_samples(data, cfg.max_samples, cfg.seed);
    let labels = label_rows(data, &index, targets)?;
    let latents = latents_for(s1, data, index.clone(), mode)?.rows;
    let nsv = s2.encode_latents(&latents, mode)?;
    let pca = fit_pca(&latents, s2.id())?;
    let pcs = pca.transform(&latents);
    let columns: Vec<LabelColumn> = targets.iter().map(|&v| v.into()).collect();
    let nsv_rep = train_probe("nsv", &nsv, &labels, &columns, cfg, mode)?;
    let pca_rep = train_probe("pca_latent", &pcs, &labels, &columns, cfg, mode)?;
    Ok(ProbeComparison {
        system: data.spec().system.name().into(),
        id: s2.id(),
        samples: index.len(),
        config: cfg.clone(),
        pca_explained_fraction: pca.explained_fraction,
        nsv: nsv_rep,
        pca_latent: pca_rep,
    })
}

/// Plot-ready rows: two PCA coordinates of the NSVs and the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct NsvVisualization {
    pub index: Vec<SampleRef>,
    pub coords: Vec<[f64; 2]>,
    pub variables: Vec<Variable>,
    pub truth: Vec<Vec<f64>>,
}

/// Projects NSV rows on their first two principal components (one when the
/// NSVs are one-dimensional, the second coordinate is then zero).
pub fn export_nsv_visualization(
    index: Vec<SampleRef>,
    nsv: &[Vec<f64>],
    truth: &[PhysicalVariables],
    variables: &[Variable],
) -> Result<NsvVisualization> {
    if nsv.len() != truth.len() || nsv.len() != index.len() {
        return Err(AnalysisError::Misaligned(nsv.len(), truth.len()));
    }
    let d = width(nsv)?;
    let basis = fit_pca(nsv, d.min(2))?;
    let coords = nsv
        .iter()
        .map(|r| {
            let z = basis.project(r);
            [z[0], z.get(1).copied().unwrap_or(0.0)]
        })
        .collect();
    let truth = truth
        .iter()
        .map(|v| {
            variables
                .iter()
                .map(|&x| {
                    v.get(x)
                        .ok_or_else(|| AnalysisError::Variable(x.name().into()))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(NsvVisualization {
        index,
        coords,
        variables: variables.to_vec(),
        truth,
    })
}

impl NsvVisualization {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["traj".to_string(), "t".into(), "pc1".into(), "pc2".into()];
        header.extend(self.variables.iter().map(|v| v.name().to_string()));
        w.write_record(&header)?;
        for ((r, c), t) in self.index.iter().zip(&self.coords).zip(&self.truth) {
            let mut rec = vec![
                r.traj.to_string(),
                r.t.to_string(),
                format!("{:?}", c[0]),
                format!("{:?}", c[1]),
            ];
            rec.extend(t.iter().map(|x| format!("{x:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| AnalysisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }
}
