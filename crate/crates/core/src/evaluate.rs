//! One-step prediction quality of a stage-1 model against the copy and
//! linear-extrapolation baselines, in pixel space and in physical variables.

use nnkit::Parallelism;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, SampleRef, Split};
use crate::stage1::{pixel_baseline, sample_refs, Result, Stage1Model};
use crate::systems::{
    baseline_predict, extract_physical, physical_from_state, BaselineKind, FramePair,
    PhysicalVariables, Variable,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableErrors {
    pub variable: String,
    pub unit: String,
    pub model: f64,
    pub linear: f64,
    pub copy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub system: String,
    pub split: Split,
    pub samples: usize,
    /// Samples whose input pair could not be read; excluded everywhere.
    pub input_rejects: usize,
    /// Samples whose predicted pair could not be read; excluded from the
    /// model column only.
    pub model_rejects: usize,
    pub model_pixel_mse: f64,
    pub linear_pixel_mse: f64,
    pub copy_pixel_mse: f64,
    pub variables: Vec<VariableErrors>,
}

impl PredictionReport {
    pub fn errors(&self, v: Variable) -> Option<&VariableErrors> {
        self.variables.iter().find(|e| e.variable == v.name())
    }
}

/// Variables one frame ahead of `v` under constant rates: the history
/// `[back, v]` where `back` rewinds every angle and length by one step.
fn linear_from_pair(v: &PhysicalVariables, obs_dt: f64) -> Option<PhysicalVariables> {
    let mut back = v.clone();
    back.theta1 = Some(v.theta1? - v.theta1_dot? * obs_dt);
    if let (Some(t), Some(w)) = (v.theta2, v.theta2_dot) {
        back.theta2 = Some(t - w * obs_dt);
    }
    if let (Some(z), Some(w)) = (v.z, v.z_dot) {
        back.z = Some(z - w * obs_dt);
    }
    baseline_predict(BaselineKind::LinearExtrapolation, &[back, v.clone()]).ok()
}

/// Scores up to `max_n` samples of a split.
pub fn evaluate_prediction(
    model: &Stage1Model,
    data: &Dataset,
    split: Split,
    max_n: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<PredictionReport> {
    let spec = data.spec();
    let obs_dt = data.obs_dt();
    let vars = Variable::for_system(spec.system);
    let refs: Vec<SampleRef> = sample_refs(data, split, max_n, seed);
    let mut sums = vec![[0.0f64; 3]; vars.len()];
    let (mut n_in, mut n_model) = (0usize, 0usize);
    let (mut input_rejects, mut model_rejects) = (0usize, 0usize);
    let mut sq = [0.0f64; 3];
    let per = 6 * data.size() * data.size();
    for chunk in refs.chunks(128) {
        let planes: Vec<Vec<f64>> = chunk.iter().map(|r| data.planes(r.traj, r.t)).collect();
        let pred = model.predict_planes(&planes, mode)?;
        for (r, p) in chunk.iter().zip(&pred) {
            let target = data.planes(r.traj, r.t + 1);
            let err = |x: &[f64]| {
                x.iter()
                    .zip(&target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            };
            sq[0] += err(p);
            sq[1] += err(&pixel_baseline(data, *r, BaselineKind::LinearExtrapolation).to_planes());
            sq[2] += err(&pixel_baseline(data, *r, BaselineKind::Copy).to_planes());
            let truth = physical_from_state(spec, data.state(r.traj, r.t + 2));
            let Ok(input) = extract_physical(spec, &data.pair(r.traj, r.t), obs_dt) else {
                input_rejects += 1;
                continue;
            };
            n_in += 1;
            let linear = linear_from_pair(&input, obs_dt).unwrap_or_else(|| input.clone());
            for (s, &v) in sums.iter_mut().zip(&vars) {
                s[1] += linear.abs_error(&truth, v).unwrap_or(0.0);
                s[2] += input.abs_error(&truth, v).unwrap_or(0.0);
            }
            match extract_physical(spec, &FramePair::from_planes(data.size(), p), obs_dt) {
                Ok(m) => {
                    n_model += 1;
                    for (s, &v) in sums.iter_mut().zip(&vars) {
                        s[0] += m.abs_error(&truth, v).unwrap_or(0.0);
                    }
                }
                Err(_) => model_rejects += 1,
            }
        }
    }
    let mean = |x: f64, n: usize| if n == 0 { f64::NAN } else { x / n as f64 };
    Ok(PredictionReport {
        system: spec.system.name().into(),
        split,
        samples: refs.len(),
        input_rejects,
        model_rejects,
        model_pixel_mse: sq[0] / (refs.len() * per).max(1) as f64,
        linear_pixel_mse: sq[1] / (refs.len() * per).max(1) as f64,
        copy_pixel_mse: sq[2] / (refs.len() * per).max(1) as f64,
        variables: vars
            .iter()
            .zip(&sums)
            .map(|(v, s)| VariableErrors {
                variable: v.name().into(),
                unit: v.unit().into(),
                model: mean(s[0], n_model),
                linear: mean(s[1], n_in),
                copy: mean(s[2], n_in),
            })
            .collect(),
    })
}
