use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layer::{Conv2d, Dense, Layer};
use crate::tensor::Tensor;
use crate::{NnError, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// An ordered stack of layers with validated, composing shapes.
#[derive(Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    // shapes[i] is the per-sample input shape of layer i; the last entry is
    // the network output shape.
    shapes: Vec<Vec<usize>>,
    seed: u64,
    id: u64,
    generation: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            seed: self.seed,
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

/// Activations recorded by [`Network::forward`], consumed by
/// [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    generation: u64,
    acts: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("cache always holds the output")
    }

    /// Input of layer `i` (or the output when `i == layers`).
    pub fn activation(&self, i: usize) -> &Tensor {
        &self.acts[i]
    }
}

/// Parameter gradients in the order of [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            tensors: net.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors
            .iter_mut()
            .flat_map(|t| t.iter_mut())
            .for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Network {
    /// Validates that the layers compose starting from `input_shape`.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::InvalidLayer(format!(
                "invalid input shape {input_shape:?}"
            )));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|detail| NnError::LayerShape {
                    layer: i,
                    kind: layer.kind(),
                    detail,
                })?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            seed,
            id: fresh_id(),
            generation: 0,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Per-sample shape flowing into layer `i`.
    pub fn layer_input_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Splits into layers `..at` and `at..`. Both halves keep this seed.
    pub fn split_at(&self, at: usize) -> Result<(Network, Network)> {
        if at == 0 || at >= self.layers.len() {
            return Err(NnError::InvalidLayer(format!(
                "split point {at} outside 1..{}",
                self.layers.len()
            )));
        }
        let head = Network::from_layers(
            self.input_shape.clone(),
            self.layers[..at].to_vec(),
            self.seed,
        )?;
        let tail = Network::from_layers(
            self.shapes[at].clone(),
            self.layers[at..].to_vec(),
            self.seed,
        )?;
        Ok((head, tail))
    }

    /// `self` followed by `next`.
    pub fn chain(&self, next: &Network) -> Result<Network> {
        if self.output_shape() != next.input_shape() {
            return Err(NnError::Shape {
                expected: self.output_shape().to_vec(),
                got: next.input_shape().to_vec(),
            });
        }
        let mut layers = self.layers.clone();
        layers.extend(next.layers.iter().cloned());
        Network::from_layers(self.input_shape.clone(), layers, self.seed)
    }

    /// Copies every parameter from `other`, which must share the layout.
    pub fn load_params_from(&mut self, other: &Network) -> Result<()> {
        if other.layers.len() != self.layers.len() || other.shapes != self.shapes {
            return Err(NnError::GradientLayout(
                "networks have different layouts".into(),
            ));
        }
        let src: Vec<Vec<f64>> = other.params().iter().map(|p| p.to_vec()).collect();
        for (dst, s) in self.params_mut().into_iter().zip(src) {
            dst.copy_from_slice(&s);
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1
            || input.sample_shape() != self.input_shape.as_slice()
        {
            let mut expected = vec![input.shape()[0]];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::LayerShape {
                layer: 0,
                kind: self.layers[0].kind(),
                detail: format!("expected input {expected:?}, got {:?}", input.shape()),
            });
        }
        Ok(())
    }

    /// Inference without recording activations.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = self.layers[0].forward(input, &self.shapes[1]);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            x = layer.forward(&x, &self.shapes[i + 1]);
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&acts[i], &self.shapes[i + 1]);
            acts.push(y);
        }
        let out = acts.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                net_id: self.id,
                generation: self.generation,
                acts,
            },
        ))
    }

    /// Backpropagates `grad_out` through the cached activations.
    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<(Gradients, Tensor)> {
        let (g, dx) = self.backward_impl(cache, grad_out, true)?;
        Ok((g, dx.expect("input gradient requested")))
    }

    /// Like [`Network::backward`] but skips the input gradient.
    pub fn backward_params(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<Gradients> {
        Ok(self.backward_impl(cache, grad_out, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Gradients, Option<Tensor>)> {
        if cache.net_id != self.id {
            return Err(NnError::StaleCache(
                "cache came from another network".into(),
            ));
        }
        if cache.generation != self.generation {
            return Err(NnError::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        if grad_out.shape() != cache.output().shape() {
            return Err(NnError::Shape {
                expected: cache.output().shape().to_vec(),
                got: grad_out.shape().to_vec(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        // Parameter tensor offset for each layer.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.params().len();
        }
        let mut dy = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let np = layer.params().len();
            let slot = &mut grads.tensors[offsets[i]..offsets[i] + np];
            let need_dx = i > 0 || need_input_grad;
            match layer.backward(&cache.acts[i], &cache.acts[i + 1], &dy, slot, need_dx) {
                Some(dx) => dy = dx,
                None => {
                    debug_assert_eq!(i, 0);
                    return Ok((grads, None));
                }
            }
        }
        Ok((grads, Some(dy)))
    }
}

enum Plan {
    Dense(usize),
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Upsample(usize),
    Relu,
    Sigmoid,
    Flatten,
    Reshape(Vec<usize>),
}

/// Builds a network layer by layer, inferring input widths and drawing
/// Glorot-uniform weights from a seeded generator. Biases start at zero.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    plan: Vec<Plan>,
}

impl NetworkBuilder {
    pub fn new(input_shape: Vec<usize>) -> Self {
        Self {
            input_shape,
            plan: Vec::new(),
        }
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        self.plan.push(Plan::Dense(outputs));
        self
    }

    pub fn conv2d(mut self, out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        self.plan.push(Plan::Conv {
            out,
            kernel,
            stride,
            padding,
        });
        self
    }

    pub fn upsample(mut self, factor: usize) -> Self {
        self.plan.push(Plan::Upsample(factor));
        self
    }

    pub fn relu(mut self) -> Self {
        self.plan.push(Plan::Relu);
        self
    }

    pub fn sigmoid(mut self) -> Self {
        self.plan.push(Plan::Sigmoid);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.plan.push(Plan::Flatten);
        self
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        self.plan.push(Plan::Reshape(shape));
        self
    }

    pub fn build(self, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.plan.len());
        for (i, p) in self.plan.into_iter().enumerate() {
            let layer = match p {
                Plan::Dense(outputs) => {
                    let inputs: usize = shape.iter().product();
                    if shape.len() != 1 {
                        return Err(NnError::LayerShape {
                            layer: i,
                            kind: "dense",
                            detail: format!("expects a flat input, got {shape:?}"),
                        });
                    }
                    let weight = glorot(&mut rng, inputs, outputs, inputs * outputs);
                    Layer::Dense(Dense::new(inputs, outputs, weight, vec![0.0; outputs]))
                }
                Plan::Conv {
                    out,
                    kernel,
                    stride,
                    padding,
                } => {
                    let cin = if shape.len() == 3 { shape[0] } else { 0 };
                    let k2 = kernel * kernel;
                    let weight = glorot(&mut rng, cin * k2, out * k2, out * cin * k2);
                    Layer::Conv2d(Conv2d {
                        in_channels: cin,
                        out_channels: out,
                        kernel,
                        stride,
                        padding,
                        weight,
                        bias: vec![0.0; out],
                    })
                }
                Plan::Upsample(f) => Layer::UpsampleNearest { factor: f },
                Plan::Relu => Layer::Relu,
                Plan::Sigmoid => Layer::Sigmoid,
                Plan::Flatten => Layer::Flatten,
                Plan::Reshape(s) => Layer::Reshape(s),
            };
            shape = layer
                .output_shape(&shape)
                .map_err(|detail| NnError::LayerShape {
                    layer: i,
                    kind: layer.kind(),
                    detail,
                })?;
            layers.push(layer);
        }
        Network::from_layers(self.input_shape, layers, seed)
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network {
        NetworkBuilder::new(vec![3])
            .dense(4)
            .relu()
            .dense(2)
            .build(7)
            .unwrap()
    }

    #[test]
    fn split_then_chain_is_the_same_function() {
        let net = small();
        let (a, b) = net.split_at(2).unwrap();
        assert_eq!(a.output_shape(), &[4]);
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.4, 0.9, 1.0, 2.0, -3.0]).unwrap();
        let direct = net.predict(&x).unwrap();
        let staged = b.predict(&a.predict(&x).unwrap()).unwrap();
        assert_eq!(direct, staged);
        assert_eq!(a.chain(&b).unwrap(), net);
        assert!(net.split_at(0).is_err());
        assert!(net.split_at(3).is_err());
        assert!(b.chain(&a).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = small();
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.3, 0.9, 1.0, 2.0, -1.0]).unwrap();
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.forward(&x).unwrap().0, a);
    }

    #[test]
    fn input_mismatch_names_layer() {
        let net = small();
        let x = Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap();
        let err = net.predict(&x).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
        assert!(err.contains("dense"), "{err}");
    }

    #[test]
    fn non_composing_layers_rejected() {
        let layers = vec![
            Layer::Dense(Dense::new(3, 2, vec![0.0; 6], vec![0.0; 2])),
            Layer::Dense(Dense::new(5, 1, vec![0.0; 5], vec![0.0])),
        ];
        let err = Network::from_layers(vec![3], layers, 0).unwrap_err();
        assert!(matches!(err, NnError::LayerShape { layer: 1, .. }));
        assert!(matches!(
            Network::from_layers(vec![3], vec![], 0),
            Err(NnError::EmptyNetwork)
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradients() {
        let net = small();
        let x = Tensor::new(vec![1, 3], vec![0.4, 0.2, -0.7]).unwrap();
        let (y, cache) = net.forward(&x).unwrap();
        let (g, dx) = net
            .backward(&cache, &Tensor::zeros(y.shape().to_vec()))
            .unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_dense_chain_rule() {
        let layers = vec![Layer::Dense(Dense::new(1, 1, vec![2.0], vec![0.5]))];
        let net = Network::from_layers(vec![1], layers, 0).unwrap();
        let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let (y, cache) = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[6.5]);
        let (g, dx) = net
            .backward(&cache, &Tensor::new(vec![1, 1], vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(dx.data(), &[2.0]);
        assert_eq!(g.tensors, vec![vec![3.0], vec![1.0]]);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = small();
        let x = Tensor::new(vec![1, 3], vec![0.4, 0.2, -0.7]).unwrap();
        let (y, cache) = net.forward(&x).unwrap();
        let other = small();
        assert!(matches!(
            other.backward(&cache, &y),
            Err(NnError::StaleCache(_))
        ));
        net.params_mut()[0][0] += 1.0;
        assert!(matches!(
            net.backward(&cache, &y),
            Err(NnError::StaleCache(_))
        ));
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(small(), small());
        let other = NetworkBuilder::new(vec![3])
            .dense(4)
            .relu()
            .dense(2)
            .build(8)
            .unwrap();
        assert_ne!(small(), other);
    }

    #[test]
    fn glorot_bounds_hold() {
        let net = NetworkBuilder::new(vec![10]).dense(20).build(1).unwrap();
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(net.params()[0].iter().all(|w| w.abs() <= limit));
        assert!(net.params()[1].iter().all(|b| *b == 0.0));
    }
}
