//! The fixed layer menu and its forward/backward kernels.
//!
//! Every kernel works on a whole batch; the leading tensor axis is the
//! batch axis. Relu uses the subgradient 0 at exactly 0.

use crate::linalg::gemm;
use crate::tensor::Tensor;

/// Fully connected layer, `y = W x + b` with `W` stored `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// 2-D convolution over CHW samples. `weight` is `out x (in * k * k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    UpsampleNearest { factor: usize },
    Relu,
    Sigmoid,
    Flatten,
    Reshape(Vec<usize>),
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let b = x.batch();
        let mut y = vec![0.0; b * self.outputs];
        gemm(
            b,
            self.inputs,
            self.outputs,
            1.0,
            x.data(),
            false,
            &self.weight,
            true,
            0.0,
            &mut y,
        );
        for row in y.chunks_exact_mut(self.outputs) {
            for (v, bias) in row.iter_mut().zip(&self.bias) {
                *v += bias;
            }
        }
        Tensor::from_parts(vec![b, self.outputs], y)
    }

    fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        dw: &mut [f64],
        db: &mut [f64],
        need_dx: bool,
    ) -> Option<Tensor> {
        let b = x.batch();
        gemm(
            self.outputs,
            b,
            self.inputs,
            1.0,
            dy.data(),
            true,
            x.data(),
            false,
            1.0,
            dw,
        );
        for row in dy.data().chunks_exact(self.outputs) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = vec![0.0; b * self.inputs];
        gemm(
            b,
            self.outputs,
            self.inputs,
            1.0,
            dy.data(),
            false,
            &self.weight,
            false,
            0.0,
            &mut dx,
        );
        Some(Tensor::from_parts(x.shape().to_vec(), dx))
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Conv2d {
    pub fn out_extent(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn geom(&self, shape: &[usize]) -> ConvGeom {
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        ConvGeom {
            c,
            h,
            w,
            ho: self.out_extent(h).unwrap(),
            wo: self.out_extent(w).unwrap(),
        }
    }

    /// Output columns `ox` whose input column `ox * stride + kx - padding`
    /// falls inside `0..w`.
    fn valid_cols(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > kx { (p - kx).div_ceil(s) } else { 0 };
        let hi = if w + p > kx {
            ((w + p - kx - 1) / s + 1).min(wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col(&self, g: &ConvGeom, x: &[f64], col: &mut [f64]) {
        let (k, s) = (self.kernel, self.stride);
        let n = g.ho * g.wo;
        for c in 0..g.c {
            let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * n..][..n];
                    let (lo, hi) = self.valid_cols(kx, g.w, g.wo);
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - self.padding as isize;
                        let out = &mut row[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize || lo >= hi {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        out[..lo].fill(0.0);
                        out[hi..].fill(0.0);
                        let first = lo * s + kx - self.padding;
                        if s == 1 {
                            out[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (o, v) in out[lo..hi].iter_mut().zip(src[first..].iter().step_by(s))
                            {
                                *o = *v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
        let (k, s) = (self.kernel, self.stride);
        let n = g.ho * g.wo;
        for c in 0..g.c {
            let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * n..][..n];
                    let (lo, hi) = self.valid_cols(kx, g.w, g.wo);
                    if lo >= hi {
                        continue;
                    }
                    let first = lo * s + kx - self.padding;
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let src = &row[oy * g.wo + lo..oy * g.wo + hi];
                        if s == 1 {
                            for (d, v) in dst[first..first + hi - lo].iter_mut().zip(src) {
                                *d += v;
                            }
                        } else {
                            for (d, v) in dst[first..].iter_mut().step_by(s).zip(src) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let g = self.geom(x.sample_shape());
        let kk = self.patch_len();
        let n = g.ho * g.wo;
        let b = x.batch();
        let mut col = vec![0.0; kk * n];
        let mut y = vec![0.0; b * self.out_channels * n];
        for (i, out) in y.chunks_exact_mut(self.out_channels * n).enumerate() {
            self.im2col(&g, x.sample(i), &mut col);
            gemm(
                self.out_channels,
                kk,
                n,
                1.0,
                &self.weight,
                false,
                &col,
                false,
                0.0,
                out,
            );
            for (plane, bias) in out.chunks_exact_mut(n).zip(&self.bias) {
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        Tensor::from_parts(vec![b, self.out_channels, g.ho, g.wo], y)
    }

    fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        dw: &mut [f64],
        db: &mut [f64],
        need_dx: bool,
    ) -> Option<Tensor> {
        let g = self.geom(x.sample_shape());
        let kk = self.patch_len();
        let n = g.ho * g.wo;
        let mut col = vec![0.0; kk * n];
        let mut dcol = if need_dx {
            vec![0.0; kk * n]
        } else {
            Vec::new()
        };
        let mut dx = if need_dx {
            vec![0.0; x.len()]
        } else {
            Vec::new()
        };
        let in_len = x.sample_len();
        for i in 0..x.batch() {
            let g_out = dy.sample(i);
            self.im2col(&g, x.sample(i), &mut col);
            gemm(
                self.out_channels,
                n,
                kk,
                1.0,
                g_out,
                false,
                &col,
                true,
                1.0,
                dw,
            );
            for (acc, plane) in db.iter_mut().zip(g_out.chunks_exact(n)) {
                *acc += plane.iter().sum::<f64>();
            }
            if need_dx {
                gemm(
                    kk,
                    self.out_channels,
                    n,
                    1.0,
                    &self.weight,
                    true,
                    g_out,
                    false,
                    0.0,
                    &mut dcol,
                );
                self.col2im(&g, &dcol, &mut dx[i * in_len..(i + 1) * in_len]);
            }
        }
        need_dx.then(|| Tensor::from_parts(x.shape().to_vec(), dx))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::UpsampleNearest { .. } => "upsample-nearest",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Flatten => "flatten",
            Layer::Reshape(_) => "reshape",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let numel: usize = input.iter().product();
        match self {
            Layer::Dense(d) => {
                if input.len() != 1 || input[0] != d.inputs {
                    return Err(format!("expects [{}], got {input:?}", d.inputs));
                }
                if d.weight.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
                    return Err("parameter sizes disagree with widths".into());
                }
                Ok(vec![d.outputs])
            }
            Layer::Conv2d(c) => {
                if c.kernel == 0 || c.stride == 0 {
                    return Err("kernel and stride must be >= 1".into());
                }
                if input.len() != 3 || input[0] != c.in_channels {
                    return Err(format!("expects [{}, H, W], got {input:?}", c.in_channels));
                }
                if c.weight.len() != c.out_channels * c.patch_len()
                    || c.bias.len() != c.out_channels
                {
                    return Err("parameter sizes disagree with channels".into());
                }
                let ho = c.out_extent(input[1]).ok_or("kernel larger than input")?;
                let wo = c.out_extent(input[2]).ok_or("kernel larger than input")?;
                Ok(vec![c.out_channels, ho, wo])
            }
            Layer::UpsampleNearest { factor } => {
                if *factor == 0 {
                    return Err("factor must be >= 1".into());
                }
                if input.len() != 3 {
                    return Err(format!("expects [C, H, W], got {input:?}"));
                }
                Ok(vec![input[0], input[1] * factor, input[2] * factor])
            }
            Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![numel]),
            Layer::Reshape(shape) => {
                if shape.is_empty() || shape.contains(&0) {
                    return Err(format!("invalid target shape {shape:?}"));
                }
                if shape.iter().product::<usize>() != numel {
                    return Err(format!("cannot reshape {input:?} into {shape:?}"));
                }
                Ok(shape.clone())
            }
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    pub(crate) fn forward(&self, x: &Tensor, out_sample_shape: &[usize]) -> Tensor {
        let mut out_shape = vec![x.batch()];
        out_shape.extend_from_slice(out_sample_shape);
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv2d(c) => c.forward(x),
            Layer::UpsampleNearest { factor } => {
                let f = *factor;
                let (ch, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let mut y = vec![0.0; x.len() * f * f];
                let (ho, wo) = (h * f, w * f);
                for (plane_in, plane_out) in x
                    .data()
                    .chunks_exact(h * w)
                    .zip(y.chunks_exact_mut(ho * wo))
                {
                    for oy in 0..ho {
                        let src = &plane_in[(oy / f) * w..(oy / f + 1) * w];
                        for (ox, o) in plane_out[oy * wo..(oy + 1) * wo].iter_mut().enumerate() {
                            *o = src[ox / f];
                        }
                    }
                }
                debug_assert_eq!(y.len(), x.batch() * ch * ho * wo);
                Tensor::from_parts(out_shape, y)
            }
            Layer::Relu => Tensor::from_parts(
                out_shape,
                x.data()
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { 0.0 })
                    .collect(),
            ),
            Layer::Sigmoid => {
                Tensor::from_parts(out_shape, x.data().iter().map(|&v| sigmoid(v)).collect())
            }
            Layer::Flatten | Layer::Reshape(_) => Tensor::from_parts(out_shape, x.data().to_vec()),
        }
    }

    /// Accumulates parameter gradients into `grads` (weight, bias order)
    /// and returns the input gradient when requested.
    pub(crate) fn backward(
        &self,
        x: &Tensor,
        y: &Tensor,
        dy: &Tensor,
        grads: &mut [Vec<f64>],
        need_dx: bool,
    ) -> Option<Tensor> {
        match self {
            Layer::Dense(d) => {
                let (dw, db) = grads.split_at_mut(1);
                d.backward(x, dy, &mut dw[0], &mut db[0], need_dx)
            }
            Layer::Conv2d(c) => {
                let (dw, db) = grads.split_at_mut(1);
                c.backward(x, dy, &mut dw[0], &mut db[0], need_dx)
            }
            _ if !need_dx => None,
            Layer::UpsampleNearest { factor } => {
                let f = *factor;
                let (h, w) = (x.shape()[2], x.shape()[3]);
                let (ho, wo) = (h * f, w * f);
                let mut dx = vec![0.0; x.len()];
                for (plane_dx, plane_dy) in dx
                    .chunks_exact_mut(h * w)
                    .zip(dy.data().chunks_exact(ho * wo))
                {
                    for oy in 0..ho {
                        let dst = &mut plane_dx[(oy / f) * w..(oy / f + 1) * w];
                        for (ox, g) in plane_dy[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            dst[ox / f] += g;
                        }
                    }
                }
                Some(Tensor::from_parts(x.shape().to_vec(), dx))
            }
            Layer::Relu => Some(Tensor::from_parts(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
            )),
            Layer::Sigmoid => Some(Tensor::from_parts(
                x.shape().to_vec(),
                y.data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect(),
            )),
            Layer::Flatten | Layer::Reshape(_) => {
                Some(Tensor::from_parts(x.shape().to_vec(), dy.data().to_vec()))
            }
        }
    }
}
