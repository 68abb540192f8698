//! Central finite-difference check of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::Network;
use crate::tensor::Tensor;
use crate::{NnError, Result};

/// Largest parameter count accepted by [`grad_check`].
pub const MAX_CHECKED_PARAMS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// (parameter tensor, entry) where the maximum occurred.
    pub worst: (usize, usize),
    /// Same statistic over input entries.
    pub max_input_rel_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance && self.max_input_rel_error < tolerance
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares backprop against central differences with step `h` on the loss
/// `0.5 * sum((net(input) - r)^2)`, where `r` is a fixed seeded target.
pub fn grad_check(net: &Network, input: &Tensor, h: f64) -> Result<GradCheck> {
    let n_params = net.param_count();
    if n_params > MAX_CHECKED_PARAMS {
        return Err(NnError::Config(format!(
            "{n_params} parameters exceed the finite-difference limit of {MAX_CHECKED_PARAMS}"
        )));
    }
    let (y, cache) = net.forward(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let target: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |out: &Tensor| -> f64 {
        0.5 * out
            .data()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    let dy: Vec<f64> = y.data().iter().zip(&target).map(|(a, b)| a - b).collect();
    let (grads, dx) = net.backward(&cache, &Tensor::new(y.shape().to_vec(), dy)?)?;

    let mut probe = net.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        max_input_rel_error: 0.0,
        checked: 0,
    };
    let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    for (t, &len) in shapes.iter().enumerate() {
        for j in 0..len {
            let orig = probe.params()[t][j];
            probe.params_mut()[t][j] = orig + h;
            let lp = loss(&probe.predict(input)?);
            probe.params_mut()[t][j] = orig - h;
            let lm = loss(&probe.predict(input)?);
            probe.params_mut()[t][j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let e = rel_err(grads.tensors[t][j], numeric);
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = (t, j);
            }
            report.checked += 1;
        }
    }
    let mut xin = input.clone();
    for j in 0..xin.len() {
        let orig = xin.data()[j];
        xin.data_mut()[j] = orig + h;
        let lp = loss(&net.predict(&xin)?);
        xin.data_mut()[j] = orig - h;
        let lm = loss(&net.predict(&xin)?);
        xin.data_mut()[j] = orig;
        let e = rel_err(dx.data()[j], (lp - lm) / (2.0 * h));
        report.max_input_rel_error = report.max_input_rel_error.max(e);
    }
    Ok(report)
}
