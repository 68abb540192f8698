//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Environment:
//! - Trained runs are kept under `CARGO_TARGET_TMPDIR/acceptance` and reused
//!   when their config is unchanged. `NSV_ACCEPTANCE_CACHE=<dir>` moves them
//!   and `NSV_ACCEPTANCE_FRESH=1` discards them first.
//! - `NSV_ACCEPTANCE_ONLY=1,2,3` runs a subset.
//! - `NSV_ACCEPTANCE_STRETCH=1` also trains the elastic double pendulum and
//!   reports its estimate (never gated).
//! - `NSV_ACCEPTANCE_STRICT=1` exits non-zero when a criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nnkit::layer::Layer;
use nnkit::{grad_check, Network, NetworkBuilder, Parallelism, Tensor};
use nsv::intdim::{estimate_id_cd, estimate_id_lb, FitRange, PointCloud};
use nsv::rollout::{PerturbationKind, PerturbationSpec};
use nsv::systems::{
    advance, extract_physical, physical_from_state, render, sample_state, simulate, state_energy,
    FramePair, StateVector, SystemKind, SystemSpec, Variable,
};
use nsv_cli::commands::{self, Ctx};
use nsv_cli::config::{validate_config, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

const MODE: Parallelism = Parallelism::Parallel;
const OBS_DT: f64 = 1.0 / 60.0;
const STAGE1_BUDGET: Duration = Duration::from_secs(30 * 60);
/// Stage-1 epochs for the budgeted ID-recovery runs.
const ID_EPOCHS: usize = 7;
/// Stage-1 epochs for the rigid model behind criteria 5 to 10.
const RIGID_EPOCHS: usize = 24;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn random_input(shape: &[usize], batch: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut full = vec![batch];
    full.extend_from_slice(shape);
    let n: usize = full.iter().product();
    Tensor::new(full, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// An input with every relu pre-activation at least 1e-3 from the kink.
fn input_off_kinks(net: &Network, seed: u64) -> Tensor {
    for attempt in 0..500 {
        let x = random_input(net.input_shape(), 2, seed * 1000 + attempt);
        let (_, cache) = net.forward(&x).unwrap();
        let clear = net.layers().iter().enumerate().all(|(i, l)| {
            !matches!(l, Layer::Relu) || cache.activation(i).data().iter().all(|v| v.abs() > 1e-3)
        });
        if clear {
            return x;
        }
    }
    panic!("no kink-free input for network {seed}");
}

fn random_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=3);
    let s = 2 * rng.random_range(2..=4);
    let mut b = NetworkBuilder::new(vec![c, s, s])
        .conv2d(rng.random_range(2..=4), 3, 2, 1)
        .relu();
    if rng.random_bool(0.5) {
        b = b.upsample(2).conv2d(2, 3, 1, 1).sigmoid();
    }
    b.flatten()
        .dense(rng.random_range(3..=8))
        .relu()
        .dense(rng.random_range(1..=4))
        .build(seed)
        .unwrap()
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let nets: Vec<(String, Network)> = vec![
        (
            "dense".into(),
            NetworkBuilder::new(vec![5]).dense(4).build(1).unwrap(),
        ),
        (
            "conv s1 p0".into(),
            NetworkBuilder::new(vec![2, 6, 6])
                .conv2d(3, 3, 1, 0)
                .build(2)
                .unwrap(),
        ),
        (
            "conv s2 p1".into(),
            NetworkBuilder::new(vec![2, 6, 6])
                .conv2d(3, 3, 2, 1)
                .build(2)
                .unwrap(),
        ),
        (
            "upsample".into(),
            NetworkBuilder::new(vec![2, 3, 3])
                .upsample(2)
                .conv2d(1, 3, 1, 1)
                .build(3)
                .unwrap(),
        ),
        (
            "relu".into(),
            NetworkBuilder::new(vec![6])
                .dense(8)
                .relu()
                .dense(3)
                .build(4)
                .unwrap(),
        ),
        (
            "sigmoid".into(),
            NetworkBuilder::new(vec![4])
                .dense(5)
                .sigmoid()
                .build(5)
                .unwrap(),
        ),
        (
            "flatten/reshape".into(),
            NetworkBuilder::new(vec![1, 4, 4])
                .conv2d(2, 3, 2, 1)
                .flatten()
                .dense(8)
                .reshape(vec![2, 2, 2])
                .conv2d(1, 1, 1, 0)
                .build(6)
                .unwrap(),
        ),
    ]
    .into_iter()
    .chain([11, 12, 13].map(|s| (format!("random #{s}"), random_network(s))))
    .collect();
    let mut worst = (0.0f64, String::new());
    for (i, (name, net)) in nets.iter().enumerate() {
        let g = grad_check(net, &input_off_kinks(net, i as u64 + 1), 1e-5).unwrap();
        let e = g.max_rel_error.max(g.max_input_rel_error);
        if e >= worst.0 {
            worst = (e, name.clone());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-4 && secs < 60.0,
        format!(
            "{} networks, max rel error {:.2e} ({}), {secs:.1} s",
            nets.len(),
            worst.0,
            worst.1
        ),
    )
}

// ---------------------------------------------------------------- 2, 3

fn rotated_cube(n: usize, d: usize, dim: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < d {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let p: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            (0..dim)
                .map(|k| p.iter().zip(&cols).map(|(x, c)| x * c[k]).sum())
                .collect()
        })
        .collect();
    PointCloud::new(&rows).unwrap()
}

fn estimators() -> Outcome {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [1usize, 2, 4, 6, 8] {
        let cloud = rotated_cube(2000, d, 64, 100 + d as u64);
        let lb = estimate_id_lb(&cloud, 20, MODE).unwrap().raw;
        let ok = (lb - d as f64).abs() <= 0.15 * d as f64;
        pass &= ok;
        let mut part = format!("d={d} LB {lb:.2}{}", if ok { "" } else { "!" });
        if d <= 2 {
            let cd = estimate_id_cd(&cloud, &FitRange::default(), MODE)
                .unwrap()
                .raw;
            let ok = (cd - d as f64).abs() <= 0.15 * d as f64;
            pass &= ok;
            part += &format!(" CD {cd:.2}{}", if ok { "" } else { "!" });
        }
        parts.push(part);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        pass && secs < 120.0,
        format!("{}; {secs:.1} s", parts.join(", ")),
    )
}

fn hand_arithmetic() -> Outcome {
    let cloud = PointCloud::new(&[
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![3.0, 0.0],
        vec![7.0, 0.0],
    ])
    .unwrap();
    let est = estimate_id_lb(&cloud, 3, MODE).unwrap();
    let s = est.mean_log_ratio.unwrap();
    let printed: Vec<f64> = est.local.iter().map(|v| (v * 1e5).round() / 1e5).collect();
    let printed_mean = printed.iter().sum::<f64>() / printed.len() as f64;
    let pass = (printed_mean - 1.84455).abs() < 5e-6 && (est.raw - 0.5421).abs() <= 1e-4;
    outcome(
        pass,
        format!(
            "terms {printed:?}, mean {printed_mean:.5} (exact {s:.7}), raw {:.5}",
            est.raw
        ),
    )
}

// ---------------------------------------------------------------- pipeline

struct Pipeline {
    runs_dir: PathBuf,
}

fn desk_config(system: SystemKind, epochs: usize, runs_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: format!("{system}-e{epochs}"),
        runs_dir: runs_dir.to_path_buf(),
        system,
        ..Default::default()
    };
    cfg.stage1.epochs = epochs;
    cfg.stage1.patience = None;
    cfg.id = Some(system.true_id());
    cfg.evaluate.split = nsv::datasets::Split::Val;
    cfg.rollout.initial_states = 20;
    cfg.rollout.steps = 60;
    cfg.rollout.perturbations = vec![PerturbationSpec {
        kind: PerturbationKind::OcclusionSquare,
        level: 1.0 / 64.0,
        seed: 1000,
    }];
    validate_config(cfg).unwrap()
}

type Step = fn(&Ctx) -> nsv_cli::error::Result<PathBuf>;

impl Pipeline {
    fn new(runs_dir: PathBuf) -> Self {
        Self { runs_dir }
    }

    /// A context whose run directory holds nothing stale: earlier outputs
    /// are kept only when the stored config matches.
    fn ctx(&self, system: SystemKind, epochs: usize) -> Ctx {
        let cfg = desk_config(system, epochs, &self.runs_dir);
        let dir = cfg.run_dir();
        let stored = fs::read_to_string(dir.join("config.json")).ok();
        let fresh = serde_json::to_string_pretty(&cfg).unwrap() + "\n";
        if stored.as_deref() != Some(fresh.as_str()) {
            let _ = fs::remove_dir_all(&dir);
        }
        Ctx::new(cfg, MODE).unwrap()
    }

    /// Runs `step` unless its output is already present; returns the
    /// recorded wall time in seconds.
    fn ensure(&self, ctx: &Ctx, output: &str, step: Step) -> f64 {
        let timing = ctx.run.path("acceptance_timing.json");
        let mut times: BTreeMap<String, f64> = fs::read_to_string(&timing)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        if ctx.run.path(output).exists() {
            if let Some(t) = times.get(output) {
                return *t;
            }
        }
        let t0 = Instant::now();
        step(ctx).unwrap_or_else(|e| panic!("{output}: {e}"));
        let secs = t0.elapsed().as_secs_f64();
        times.insert(output.into(), secs);
        fs::write(&timing, serde_json::to_string_pretty(&times).unwrap()).unwrap();
        secs
    }

    fn json(&self, ctx: &Ctx, file: &str) -> Value {
        ctx.run
            .read_json(file)
            .unwrap()
            .unwrap_or_else(|| panic!("{file} missing"))
    }

    /// Dataset, stage 1 and the ID estimate; returns the stage-1 wall time.
    fn stage1(&self, system: SystemKind, epochs: usize) -> (Ctx, f64) {
        let ctx = self.ctx(system, epochs);
        let mut secs = self.ensure(&ctx, "data", commands::generate);
        secs += self.ensure(&ctx, "stage1.json", commands::train_stage1_cmd);
        secs += self.ensure(&ctx, "intdim.json", commands::estimate_id);
        (ctx, secs)
    }

    fn rigid(&self) -> Ctx {
        let (ctx, _) = self.stage1(SystemKind::RigidDoublePendulum, RIGID_EPOCHS);
        ctx
    }
}

fn id_recovery(p: &Pipeline) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for system in [
        SystemKind::SinglePendulum,
        SystemKind::CircularMotion,
        SystemKind::RigidDoublePendulum,
    ] {
        let (ctx, secs) = p.stage1(system, ID_EPOCHS);
        let v = p.json(&ctx, "intdim.json");
        let raw = v["latent"]["raw"].as_f64().unwrap();
        let rounded = v["latent"]["rounded"].as_u64().unwrap() as usize;
        let truth = system.true_id();
        let ok = rounded == truth
            && (raw - truth as f64).abs() <= 1.0
            && secs <= STAGE1_BUDGET.as_secs_f64();
        pass &= ok;
        parts.push(format!(
            "{system} raw {raw:.2} -> {rounded} (true {truth}, {:.0} min){}",
            secs / 60.0,
            if ok { "" } else { "!" }
        ));
    }
    if std::env::var_os("NSV_ACCEPTANCE_STRETCH").is_some() {
        let (ctx, secs) = p.stage1(SystemKind::ElasticDoublePendulum, ID_EPOCHS);
        let v = p.json(&ctx, "intdim.json");
        parts.push(format!(
            "elastic (not gated) raw {:.2} -> {} (true 6, {:.0} min)",
            v["latent"]["raw"].as_f64().unwrap(),
            v["latent"]["rounded"],
            secs / 60.0
        ));
    }
    outcome(pass, parts.join("; "))
}

fn competence(p: &Pipeline) -> Outcome {
    let ctx = p.rigid();
    p.ensure(&ctx, "evaluate.json", commands::evaluate_cmd);
    let r = &p.json(&ctx, "evaluate.json")["report"];
    let f = |k: &str| r[k].as_f64().unwrap_or(f64::NAN);
    let (m, l, c) = (
        f("model_pixel_mse"),
        f("linear_pixel_mse"),
        f("copy_pixel_mse"),
    );
    let th = r["variables"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["variable"] == Variable::Theta1.name())
        .unwrap();
    let g = |k: &str| th[k].as_f64().unwrap_or(f64::NAN);
    let (tm, tl, tc) = (g("model"), g("linear"), g("copy"));
    outcome(
        m < l && l < c && tm < tl && tl < tc,
        format!(
            "pixel MSE {m:.2e} / {l:.2e} / {c:.2e}; theta1 error {tm:.2} / {tl:.2} / {tc:.2} deg (model / linear / copy), {} of {} predictions rejected",
            r["model_rejects"], r["samples"]
        ),
    )
}

fn stage2_validity(p: &Pipeline) -> Outcome {
    let ctx = p.rigid();
    p.ensure(&ctx, "stage2.json", commands::train_stage2_cmd);
    let r = &p.json(&ctx, "stage2.json")["report"];
    let frac = r["val_valid_fraction"].as_f64().unwrap();
    outcome(
        r["id"] == 4 && frac >= 0.9,
        format!(
            "ID {}, {:.1}% of val predictions extractable",
            r["id"],
            100.0 * frac
        ),
    )
}

fn rollouts(p: &Pipeline) -> (Ctx, Value) {
    let ctx = p.rigid();
    p.ensure(&ctx, "stage2.json", commands::train_stage2_cmd);
    p.ensure(&ctx, "dynamics.json", commands::train_dynamics_cmd);
    p.ensure(&ctx, "stability.json", commands::rollout_cmd);
    let v = p.json(&ctx, "stability.json");
    (ctx, v)
}

fn series<'a>(v: &'a Value, scheme: &str, perturbed: bool) -> &'a Value {
    v["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["scheme"] == scheme && r["perturbation"].is_null() != perturbed)
        .unwrap_or_else(|| panic!("no {scheme} report"))
}

fn at(r: &Value, key: &str, step: usize) -> f64 {
    r[key][step - 1].as_f64().unwrap_or(f64::NAN)
}

fn mean_first(r: &Value, key: &str, steps: usize) -> f64 {
    (1..=steps).map(|s| at(r, key, s)).sum::<f64>() / steps as f64
}

fn stability_ordering(p: &Pipeline) -> Outcome {
    let (_, v) = rollouts(p);
    let steps = v["steps"].as_u64().unwrap() as usize;
    let n = v["initial_states"].as_u64().unwrap();
    let hi = series(&v, "high_dim_latent", false);
    let nsv = series(&v, "through_nsv", false);
    let hy = series(&v, "hybrid_4", false);
    let (rh, rn, ry) = (
        at(hi, "reject_ratio", steps),
        at(nsv, "reject_ratio", steps),
        at(hy, "reject_ratio", steps),
    );
    let (pn, py) = (
        mean_first(nsv, "pixel_mse", 10),
        mean_first(hy, "pixel_mse", 10),
    );
    outcome(
        n >= 20 && steps >= 60 && rn <= rh && ry <= rh && py <= pn,
        format!(
            "{n} states x {steps} steps; final reject ratio high-dim {rh:.2}, through-NSV {rn:.2}, hybrid(4) {ry:.2}; pixel MSE 1-10 hybrid {py:.2e} vs through-NSV {pn:.2e}"
        ),
    )
}

fn indicator_correlation(p: &Pipeline) -> Outcome {
    let (_, v) = rollouts(p);
    let r = v["pearson_reject_vs_msn"].as_f64().unwrap_or(f64::NAN);
    outcome(r > 0.5, format!("pooled Pearson r = {r:.3}"))
}

fn robustness(p: &Pipeline) -> Outcome {
    let (_, v) = rollouts(p);
    let hi = series(&v, "high_dim_latent", true);
    let nsv = series(&v, "through_nsv", true);
    let (rh, rn) = (at(hi, "reject_ratio", 10), at(nsv, "reject_ratio", 10));
    outcome(
        rn <= rh,
        format!(
            "{}: step-10 reject ratio through-NSV {rn:.2} vs high-dim {rh:.2}",
            hi["perturbation"]
        ),
    )
}

fn probes(p: &Pipeline) -> Outcome {
    let ctx = p.rigid();
    p.ensure(&ctx, "stage2.json", commands::train_stage2_cmd);
    p.ensure(&ctx, "regress.json", commands::regress_cmd);
    let c = &p.json(&ctx, "regress.json")["comparison"];
    let mae = |side: &str, var: Variable| {
        c[side]["targets"]
            .as_array()
            .unwrap()
            .iter()
            .find(|t| t["variable"] == var.name())
            .and_then(|t| t["mae"].as_f64())
            .unwrap_or(f64::NAN)
    };
    let mut pass = c["config"]["labeled_fraction"].as_f64() == Some(0.3);
    let mut parts = Vec::new();
    for var in [Variable::Theta1Dot, Variable::Theta2Dot] {
        let (a, b) = (mae("nsv", var), mae("pca_latent", var));
        pass &= a < b;
        parts.push(format!(
            "{}: NSV {a:.1} vs PCA {b:.1} {}",
            var.name(),
            var.unit()
        ));
    }
    outcome(
        pass,
        format!("{} ({} features each)", parts.join(", "), c["id"]),
    )
}

// ---------------------------------------------------------------- 11

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if p.file_name().is_some_and(|n| n != "logs") {
                    stack.push(p);
                }
            } else if p.extension().is_some_and(|x| x == "json" || x == "csv") {
                out.insert(
                    p.strip_prefix(root).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism(scratch: &Path) -> Outcome {
    let config = scratch.join("tiny.json");
    let cfg = serde_json::json!({
        "name": "tiny",
        "runs_dir": scratch.join("runs"),
        "system": "single_pendulum",
        "dataset": { "trajectories": 10, "steps": 8, "size": 32 },
        "stage1": { "ld": 8, "epochs": 1 },
        "intdim": { "k": 5, "max_points": 40 },
        "stage2": { "epochs": 2 },
        "dynamics": { "epochs": 2 },
        "rollout": { "steps": 4, "initial_states": 3 },
        "evaluate": { "max_samples": 20 },
        "probe": { "epochs": 2, "max_samples": 60 },
    });
    fs::write(&config, cfg.to_string()).unwrap();
    let commands = [
        "generate",
        "train-stage1",
        "estimate-id",
        "train-stage2",
        "train-latent-dynamics",
        "rollout",
        "evaluate",
        "regress",
        "report",
    ];
    let run = || {
        for c in commands {
            let out = Command::new(env!("CARGO_BIN_EXE_nsv"))
                .args([c, "--config"])
                .arg(&config)
                .env("RUST_LOG", "warn")
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "nsv {c}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        snapshot(&scratch.join("runs"))
    };
    let first = run();
    let second = run();
    let differing: Vec<&String> = first
        .keys()
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    outcome(
        differing.is_empty() && first.len() == second.len() && first.len() >= 10,
        if differing.is_empty() {
            format!(
                "{} subcommands rerun, {} JSON/CSV files identical",
                commands.len(),
                first.len()
            )
        } else {
            format!("differing: {differing:?}")
        },
    )
}

// ---------------------------------------------------------------- 12

fn random_states(spec: &SystemSpec, n: usize, seed: u64) -> Vec<StateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let s = sample_state(spec, &mut rng);
        let s1 = advance(spec, &s, OBS_DT).unwrap();
        if render(spec, &s, 64).is_ok() && render(spec, &s1, 64).is_ok() {
            out.push(s);
        }
    }
    out
}

fn physics() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in SystemKind::ALL {
        let spec = SystemSpec::preset(kind);
        let states = random_states(&spec, 100, 17);
        let mut drift = 0.0f64;
        let floor = 0.3 * spec.mass1 * spec.gravity * spec.length1;
        for s0 in states
            .iter()
            .filter(|s| state_energy(&spec, s).map_or(false, |e| e.abs() >= floor))
            .take(10)
        {
            let traj = simulate(&spec, s0, 1000).unwrap();
            let e0 = state_energy(&spec, s0).unwrap();
            for s in &traj {
                drift = drift.max(((state_energy(&spec, s).unwrap() - e0) / e0).abs());
            }
        }
        let mut worst = 0.0f64;
        let mut rejected = 0;
        for s0 in &states {
            let s1 = advance(&spec, s0, OBS_DT).unwrap();
            let pair = FramePair::new(
                render(&spec, s0, 64).unwrap(),
                render(&spec, &s1, 64).unwrap(),
            )
            .unwrap();
            match extract_physical(&spec, &pair, OBS_DT) {
                Ok(v) => {
                    let truth = physical_from_state(&spec, &s1);
                    for var in [Variable::Theta1, Variable::Theta2] {
                        if let Some(e) = v.abs_error(&truth, var) {
                            worst = worst.max(e);
                        }
                    }
                }
                Err(_) => rejected += 1,
            }
        }
        let ok = drift < 1e-6 && worst < 2.0 && rejected == 0;
        pass &= ok;
        parts.push(format!(
            "{kind}: drift {drift:.1e}, angle error {worst:.2} deg{}{}",
            if rejected > 0 {
                format!(", {rejected} rejected")
            } else {
                String::new()
            },
            if ok { "" } else { "!" }
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- driver

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let only: Option<Vec<usize>> = std::env::var("NSV_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let scratch = tempfile::tempdir().unwrap();
    let runs_dir = std::env::var_os("NSV_ACCEPTANCE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    if std::env::var_os("NSV_ACCEPTANCE_FRESH").is_some() {
        let _ = fs::remove_dir_all(&runs_dir);
    }
    fs::create_dir_all(&runs_dir).unwrap();
    let pipeline = Pipeline::new(runs_dir);
    let det_dir = scratch.path().join("determinism");
    fs::create_dir_all(&det_dir).unwrap();

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "gradient correctness", Box::new(gradients)),
        (2, "estimator correctness", Box::new(estimators)),
        (
            3,
            "hand-arithmetic estimator check",
            Box::new(hand_arithmetic),
        ),
        (4, "ID recovery", Box::new(|| id_recovery(&pipeline))),
        (5, "stage-1 competence", Box::new(|| competence(&pipeline))),
        (
            6,
            "stage-2 validity",
            Box::new(|| stage2_validity(&pipeline)),
        ),
        (
            7,
            "stability ordering",
            Box::new(|| stability_ordering(&pipeline)),
        ),
        (
            8,
            "stability-indicator correlation",
            Box::new(|| indicator_correlation(&pipeline)),
        ),
        (9, "robustness ordering", Box::new(|| robustness(&pipeline))),
        (10, "probe comparison", Box::new(|| probes(&pipeline))),
        (11, "determinism", Box::new(|| determinism(&det_dir))),
        (12, "physics oracles", Box::new(physics)),
    ];

    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, name, run) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(n)) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("error: {msg}"))
        });
        if !result.pass {
            failed.push(*n);
        }
        println!(
            "criterion {n:>2} {name}: {} - {} [{:.1} s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {ran} criteria passed",
        ran - failed.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        if std::env::var_os("NSV_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
