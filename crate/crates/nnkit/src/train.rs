//! Mini-batch training with mean-squared-error loss.
//!
//! A batch is split into fixed-size chunks that may run in parallel; chunk
//! gradients are summed in chunk order so results do not depend on the
//! thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, AdamConfig};
use crate::network::{Gradients, Network};
use crate::par::{map_chunks, Parallelism};
use crate::tensor::Tensor;
use crate::{NnError, Result};

/// Samples per parallel work item. Fixed so that reductions are reproducible.
pub const CHUNK: usize = 4;

/// Random-access supply of `(input, target)` training pairs.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn input_shape(&self) -> Vec<usize>;
    fn target_shape(&self) -> Vec<usize>;
    /// Writes sample `index` into the provided buffers.
    fn fill(&self, index: usize, input: &mut [f64], target: &mut [f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// In-memory sample set.
#[derive(Clone, Debug)]
pub struct PairSource {
    input_shape: Vec<usize>,
    target_shape: Vec<usize>,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl PairSource {
    pub fn new(
        input_shape: Vec<usize>,
        target_shape: Vec<usize>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let ni: usize = input_shape.iter().product();
        let nt: usize = target_shape.iter().product();
        if inputs.len() != targets.len() {
            return Err(NnError::Config(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.iter().any(|x| x.len() != ni) || targets.iter().any(|t| t.len() != nt) {
            return Err(NnError::Config("sample length disagrees with shape".into()));
        }
        Ok(Self {
            input_shape,
            target_shape,
            inputs,
            targets,
        })
    }

    /// Convenience for flat vectors.
    pub fn from_rows(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        let ni = inputs.first().map_or(0, |r| r.len());
        let nt = targets.first().map_or(0, |r| r.len());
        Self::new(vec![ni], vec![nt], inputs, targets)
    }
}

impl SampleSource for PairSource {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn input_shape(&self) -> Vec<usize> {
        self.input_shape.clone()
    }
    fn target_shape(&self) -> Vec<usize> {
        self.target_shape.clone()
    }
    fn fill(&self, index: usize, input: &mut [f64], target: &mut [f64]) {
        input.copy_from_slice(&self.inputs[index]);
        target.copy_from_slice(&self.targets[index]);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub shuffle: bool,
    /// Stop after this many epochs without validation improvement and
    /// restore the best parameters. Ignored without a validation set.
    pub patience: Option<usize>,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            learning_rate: AdamConfig::default().learning_rate,
            shuffle: true,
            patience: None,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(NnError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(
                "learning rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean squared error over all training entries, measured during each
    /// epoch (before each batch's update).
    pub train_loss: Vec<f64>,
    /// Validation MSE after each epoch (empty without validation data).
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Seeded permutation of `0..n` for a given epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mixed = seed
        ^ (epoch as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Mean squared error between two equal-length slices.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn load_chunk(src: &dyn SampleSource, idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let ishape = src.input_shape();
    let tshape = src.target_shape();
    let ni: usize = ishape.iter().product();
    let nt: usize = tshape.iter().product();
    let mut xin = vec![0.0; ni * idx.len()];
    let mut tgt = vec![0.0; nt * idx.len()];
    for (k, &i) in idx.iter().enumerate() {
        src.fill(
            i,
            &mut xin[k * ni..(k + 1) * ni],
            &mut tgt[k * nt..(k + 1) * nt],
        );
    }
    let mut s = vec![idx.len()];
    s.extend(ishape);
    let mut t = vec![idx.len()];
    t.extend(tshape);
    Ok((Tensor::new(s, xin)?, Tensor::new(t, tgt)?))
}

/// Per-sample sum of squared errors and the summed parameter gradient of
/// `sum_sq / norm` over the given indices.
pub fn batch_gradient(
    net: &Network,
    src: &dyn SampleSource,
    idx: &[usize],
    norm: f64,
    mode: Parallelism,
) -> Result<(Vec<f64>, Gradients)> {
    let parts = map_chunks(idx, CHUNK, mode, |chunk| -> Result<(Vec<f64>, Gradients)> {
        let (x, t) = load_chunk(src, chunk)?;
        let (y, cache) = net.forward(&x)?;
        let per = y.sample_len();
        let mut sse = Vec::with_capacity(chunk.len());
        let mut dy = Vec::with_capacity(y.len());
        for (ys, ts) in y.data().chunks_exact(per).zip(t.data().chunks_exact(per)) {
            let mut s = 0.0;
            for (a, b) in ys.iter().zip(ts) {
                let d = a - b;
                s += d * d;
                dy.push(2.0 * d / norm);
            }
            sse.push(s);
        }
        let g = net.backward_params(&cache, &Tensor::new(y.shape().to_vec(), dy)?)?;
        Ok((sse, g))
    });
    let mut total = Gradients::zeros_like(net);
    let mut sse = Vec::with_capacity(idx.len());
    for p in parts {
        let (s, g) = p?;
        sse.extend(s);
        total.add_assign(&g);
    }
    Ok((sse, total))
}

/// Runs `net` over many samples in chunks of [`CHUNK`]; outputs follow the
/// input order.
pub fn predict_rows(net: &Network, rows: &[Vec<f64>], mode: Parallelism) -> Result<Vec<Vec<f64>>> {
    let parts = map_chunks(rows, CHUNK, mode, |chunk| -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&[f64]> = chunk.iter().map(|r| r.as_slice()).collect();
        let y = net.predict(&Tensor::stack(net.input_shape(), &refs)?)?;
        Ok(y.data()
            .chunks_exact(y.sample_len())
            .map(|r| r.to_vec())
            .collect())
    });
    let mut out = Vec::with_capacity(rows.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean squared error of `net` over a whole source.
pub fn evaluate(net: &Network, src: &dyn SampleSource, mode: Parallelism) -> Result<f64> {
    if src.is_empty() {
        return Err(NnError::EmptySamples);
    }
    let idx: Vec<usize> = (0..src.len()).collect();
    let parts = map_chunks(&idx, CHUNK, mode, |chunk| -> Result<f64> {
        let (x, t) = load_chunk(src, chunk)?;
        let y = net.predict(&x)?;
        Ok(y.data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    });
    let mut s = 0.0;
    for p in parts {
        s += p?;
    }
    let per: usize = src.target_shape().iter().product();
    Ok(s / (src.len() * per) as f64)
}

/// Trains `net` in place with Adam on mean squared error.
pub fn train(
    net: &mut Network,
    train_set: &dyn SampleSource,
    val_set: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptySamples);
    }
    if train_set.input_shape() != net.input_shape()
        || train_set.target_shape() != net.output_shape()
    {
        return Err(NnError::Shape {
            expected: net.input_shape().to_vec(),
            got: train_set.input_shape(),
        });
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        net,
    );
    let n = train_set.len();
    let per: usize = net.output_len();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Network)> = None;
    for epoch in 0..cfg.epochs {
        let order = if cfg.shuffle {
            epoch_permutation(n, cfg.seed, epoch)
        } else {
            (0..n).collect()
        };
        let mut per_sample = vec![0.0; n];
        for batch in order.chunks(cfg.batch_size) {
            let norm = (batch.len() * per) as f64;
            let (sse, grads) = batch_gradient(net, train_set, batch, norm, cfg.parallelism)?;
            if sse.iter().any(|v| !v.is_finite()) {
                return Err(NnError::Diverged { epoch });
            }
            for (&i, s) in batch.iter().zip(sse) {
                per_sample[i] = s;
            }
            adam.step(net, &grads).map_err(|e| match e {
                NnError::NonFiniteGradient { .. } => NnError::Diverged { epoch },
                other => other,
            })?;
        }
        let loss = per_sample.iter().sum::<f64>() / (n * per) as f64;
        if !loss.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        report.train_loss.push(loss);
        if let Some(val) = val_set {
            let vl = evaluate(net, val, cfg.parallelism)?;
            if !vl.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            report.val_loss.push(vl);
            log::info!("epoch {epoch}: train {loss:.6e} val {vl:.6e}");
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, net.clone()));
                report.best_epoch = epoch;
            } else if let Some(p) = cfg.patience {
                if epoch - report.best_epoch >= p {
                    report.stopped_early = true;
                    break;
                }
            }
        } else {
            log::info!("epoch {epoch}: train {loss:.6e}");
            report.best_epoch = epoch;
        }
    }
    if cfg.patience.is_some() {
        if let Some((_, b)) = best {
            net.load_params_from(&b)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Dense, Layer};
    use crate::network::NetworkBuilder;

    fn linear_w(w: f64) -> Network {
        Network::from_layers(
            vec![1],
            vec![Layer::Dense(Dense::new(1, 1, vec![w], vec![0.0]))],
            0,
        )
        .unwrap()
    }

    #[test]
    fn one_parameter_fit_converges() {
        // Dense layers always carry a bias, so a second point pins the unique
        // minimum of the quadratic at w = 2, b = 0.
        let mut net = linear_w(0.0);
        let src =
            PairSource::from_rows(vec![vec![1.0], vec![2.0]], vec![vec![2.0], vec![4.0]]).unwrap();
        let cfg = TrainConfig {
            epochs: 4000,
            batch_size: 2,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        train(&mut net, &src, None, &cfg).unwrap();
        assert!(
            (net.params()[0][0] - 2.0).abs() < 1e-3,
            "{:?}",
            net.params()
        );
    }

    #[test]
    fn same_seed_same_curve() {
        let make = || {
            NetworkBuilder::new(vec![2])
                .dense(8)
                .relu()
                .dense(1)
                .build(3)
                .unwrap()
        };
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 20.0])
            .collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * x[1]]).collect();
        let src = PairSource::from_rows(xs, ys).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut a = make();
        let mut b = make();
        let ra = train(&mut a, &src, None, &cfg).unwrap();
        let rb = train(&mut b, &src, None, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(ra.train_loss.len(), 5);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let mut net = NetworkBuilder::new(vec![1])
            .dense(3)
            .relu()
            .dense(1)
            .build(5)
            .unwrap();
        let src = PairSource::from_rows(
            (0..9).map(|i| vec![i as f64]).collect(),
            (0..9).map(|i| vec![(i * i) as f64]).collect(),
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let r = train(&mut net, &src, None, &cfg).unwrap();
        assert!(
            r.train_loss.windows(2).all(|w| w[0] == w[1]),
            "{:?}",
            r.train_loss
        );
    }

    #[test]
    fn empty_samples_rejected() {
        let mut net = linear_w(1.0);
        let src = PairSource::new(vec![1], vec![1], vec![], vec![]).unwrap();
        assert!(matches!(
            train(&mut net, &src, None, &TrainConfig::default()),
            Err(NnError::EmptySamples)
        ));
    }

    #[test]
    fn divergence_reports_epoch() {
        let mut net = linear_w(1.0);
        let src = PairSource::from_rows(vec![vec![1e200]], vec![vec![-1e200]]).unwrap();
        let err = train(&mut net, &src, None, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, NnError::Diverged { epoch: 0 }), "{err}");
    }

    #[test]
    fn permutation_depends_on_epoch_and_seed() {
        assert_eq!(epoch_permutation(50, 1, 0), epoch_permutation(50, 1, 0));
        assert_ne!(epoch_permutation(50, 1, 0), epoch_permutation(50, 1, 1));
        assert_ne!(epoch_permutation(50, 1, 0), epoch_permutation(50, 2, 0));
    }

    #[test]
    fn parallel_and_sequential_gradients_match_bitwise() {
        let net = NetworkBuilder::new(vec![3])
            .dense(5)
            .relu()
            .dense(2)
            .build(9)
            .unwrap();
        let xs: Vec<Vec<f64>> = (0..13).map(|i| vec![i as f64 * 0.1, -0.2, 0.3]).collect();
        let ys: Vec<Vec<f64>> = (0..13).map(|i| vec![i as f64, 1.0]).collect();
        let src = PairSource::from_rows(xs, ys).unwrap();
        let idx: Vec<usize> = (0..13).collect();
        let a = batch_gradient(&net, &src, &idx, 26.0, Parallelism::Sequential).unwrap();
        let b = batch_gradient(&net, &src, &idx, 26.0, Parallelism::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_stopping_restores_best() {
        let mut net = NetworkBuilder::new(vec![1])
            .dense(4)
            .relu()
            .dense(1)
            .build(2)
            .unwrap();
        let tr = PairSource::from_rows(
            (0..8).map(|i| vec![i as f64 / 8.0]).collect(),
            (0..8).map(|i| vec![i as f64 / 4.0]).collect(),
        )
        .unwrap();
        // Validation target unrelated to training: gets worse as training fits.
        let va = PairSource::from_rows(vec![vec![0.5]], vec![vec![-5.0]]).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 8,
            learning_rate: 1e-2,
            patience: Some(5),
            ..TrainConfig::default()
        };
        let r = train(&mut net, &tr, Some(&va), &cfg).unwrap();
        let best = r.val_loss[r.best_epoch];
        assert!((evaluate(&net, &va, Parallelism::Sequential).unwrap() - best).abs() < 1e-12);
    }
}
