use std::path::PathBuf;
use std::time::Instant;

use nnkit::Parallelism;
use nsv::analysis::{compare_nsv_vs_pca, export_nsv_visualization, probe_samples, sample_truth};
use nsv::datasets::{generate_dataset, Dataset, DatasetConfig, Split};
use nsv::evaluate::evaluate_prediction;
use nsv::intdim::{
    estimate_id_cd, estimate_id_lb, estimate_id_lb_band, estimate_on_raw_frames, FitRange,
    PointCloud,
};
use nsv::rollout::{pearson, stability_report, Models, StabilityReport};
use nsv::stage1::{collect_latents, train_stage1, Stage1Model};
use nsv::statevars::{
    nsv_for, train_latent_dynamics, train_stage2, LatentDynamicsModel, Stage2Model,
};
use nsv::systems::Variable;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, IdMethod};
use crate::error::{CliError, Result};
use crate::run::{RunDir, DATA, DYNAMICS, INTDIM, STAGE1, STAGE2};

/// Report wrapper that carries the resolved config.
#[derive(Serialize)]
struct WithConfig<'a, T: Serialize> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    body: T,
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub run: RunDir,
    pub mode: Parallelism,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, mode: Parallelism) -> Result<Self> {
        let run = RunDir::create(&cfg.run_dir())?;
        run.write_json("config.json", &cfg)?;
        Ok(Self { cfg, run, mode })
    }

    fn write<T: Serialize>(&self, file: &str, body: T) -> Result<PathBuf> {
        self.run.write_json(
            file,
            &WithConfig {
                config: &self.cfg,
                body,
            },
        )
    }

    fn config_meta(&self) -> Vec<(&'static str, String)> {
        vec![(
            "config",
            serde_json::to_string(&self.cfg).expect("config serializes"),
        )]
    }

    fn dataset(&self) -> Result<Dataset> {
        Ok(Dataset::load(&self.run.require(DATA)?)?)
    }

    fn stage1(&self) -> Result<Stage1Model> {
        Ok(Stage1Model::load(&self.run.require(STAGE1)?)?.0)
    }

    fn stage2(&self) -> Result<Stage2Model> {
        Ok(Stage2Model::load(&self.run.require(STAGE2)?)?.0)
    }

    fn dynamics(&self) -> Result<LatentDynamicsModel> {
        Ok(LatentDynamicsModel::load(&self.run.require(DYNAMICS)?)?)
    }
}

pub fn generate(ctx: &Ctx) -> Result<PathBuf> {
    let t0 = Instant::now();
    let data = generate_dataset(&ctx.cfg.system_spec(), &ctx.cfg.dataset, ctx.mode)?;
    let root = ctx.run.path(DATA.file);
    data.save(&root, true)?;
    log::info!(
        "{} trajectories ({} resamples) in {:.1} s",
        data.trajectories(),
        data.manifest().resamples,
        t0.elapsed().as_secs_f64()
    );
    Ok(root)
}

pub fn train_stage1_cmd(ctx: &Ctx) -> Result<PathBuf> {
    let data = ctx.dataset()?;
    let t0 = Instant::now();
    let (model, report) = train_stage1(&data, &ctx.cfg.stage1, ctx.mode)?;
    log::info!("stage 1 trained in {:.1} s", t0.elapsed().as_secs_f64());
    let meta = ctx.config_meta();
    let extra: Vec<(&str, String)> = meta.iter().map(|(k, v)| (*k, v.clone())).collect();
    model.save(&ctx.run.path(STAGE1.file), &extra)?;
    ctx.write("stage1.json", json!({ "report": report }))
}

pub fn estimate_id(ctx: &Ctx) -> Result<PathBuf> {
    let data = ctx.dataset()?;
    let model = ctx.stage1()?;
    let ic = &ctx.cfg.intdim;
    let lat = collect_latents(&model, &data, ic.split, ic.max_points, ic.seed, ctx.mode)?;
    lat.write_csv(&ctx.run.path("latents.csv"), "l")?;
    let cloud = PointCloud::new(&lat.rows)?;
    let est = match (ic.method, ic.k_band) {
        (IdMethod::LevinaBickel, None) => estimate_id_lb(&cloud, ic.k, ctx.mode)?,
        (IdMethod::LevinaBickel, Some([lo, hi])) => estimate_id_lb_band(&cloud, lo, hi, ctx.mode)?,
        (IdMethod::CorrelationDimension, _) => {
            estimate_id_cd(&cloud, &FitRange::default(), ctx.mode)?
        }
    };
    log::info!("latent ID {} (raw {:.3})", est.rounded, est.raw);
    let raw = if ic.raw_frames {
        let r = estimate_on_raw_frames(&data, ic.split, ic.k, ic.max_points, ic.seed, ctx.mode)?;
        log::info!("raw-frame ID {} (raw {:.3})", r.rounded, r.raw);
        Some(r)
    } else {
        None
    };
    ctx.write(
        INTDIM.file,
        json!({
            "system": data.spec().system,
            "true_id": data.spec().true_id(),
            "latent": est,
            "raw_frames": raw,
        }),
    )
}

/// The stage-2 width: configured, or the rounded latent estimate.
pub fn resolve_id(ctx: &Ctx) -> Result<usize> {
    if let Some(id) = ctx.cfg.id {
        return Ok(id);
    }
    let path = ctx.run.require(INTDIM)?;
    let v = ctx.run.read_json(INTDIM.file)?.unwrap_or_default();
    v["latent"]["rounded"]
        .as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| CliError::BadArtifact {
            path: path.display().to_string(),
            reason: "no latent.rounded field".into(),
        })
}

pub fn train_stage2_cmd(ctx: &Ctx) -> Result<PathBuf> {
    let id = resolve_id(ctx)?;
    let data = ctx.dataset()?;
    let s1 = ctx.stage1()?;
    let t0 = Instant::now();
    let (s2, report) = train_stage2(&s1, &data, id, &ctx.cfg.stage2, ctx.mode)?;
    log::info!(
        "stage 2 (ID {id}) trained in {:.1} s",
        t0.elapsed().as_secs_f64()
    );
    let meta = ctx.config_meta();
    let extra: Vec<(&str, String)> = meta.iter().map(|(k, v)| (*k, v.clone())).collect();
    s2.save(&ctx.run.path(STAGE2.file), &extra)?;
    let v = nsv_for(&s1, &s2, &data, data.samples(Split::Val), ctx.mode)?;
    v.write_csv(&ctx.run.path("nsv.csv"), "v")?;
    ctx.write("stage2.json", json!({ "report": report }))
}

pub fn train_dynamics_cmd(ctx: &Ctx) -> Result<PathBuf> {
    let data = ctx.dataset()?;
    let s1 = ctx.stage1()?;
    let s2 = ctx.stage2()?;
    let (dynamics, report) = train_latent_dynamics(&s1, &s2, &data, &ctx.cfg.dynamics, ctx.mode)?;
    let meta = ctx.config_meta();
    let extra: Vec<(&str, String)> = meta.iter().map(|(k, v)| (*k, v.clone())).collect();
    dynamics.save(&ctx.run.path(DYNAMICS.file), &extra)?;
    ctx.write("dynamics.json", json!({ "report": report }))
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilitySummary {
    pub initial_states: usize,
    pub steps: usize,
    pub reports: Vec<StabilityReport>,
    /// Pooled over every step of every report.
    pub pearson_reject_vs_msn: Option<f64>,
}

/// Ground-truth test trajectories of `steps + 2` frames for rollouts.
pub fn rollout_truth(
    cfg: &ExperimentConfig,
    mode: Parallelism,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
    let r = &cfg.rollout;
    let dcfg = DatasetConfig {
        trajectories: r.initial_states,
        steps: r.steps + 2,
        seed: r.seed,
        ..cfg.dataset.clone()
    };
    let data = generate_dataset(&cfg.system_spec(), &dcfg, mode)?;
    let initial = (0..r.initial_states).map(|i| data.planes(i, 0)).collect();
    let truth = (0..r.initial_states)
        .map(|i| (1..=r.steps).map(|s| data.planes(i, s)).collect())
        .collect();
    Ok((initial, truth))
}

pub fn pooled_pearson(reports: &[StabilityReport]) -> Option<f64> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in reports {
        for (x, y) in r.reject_ratio.iter().zip(&r.msn_mean) {
            if x.is_finite() && y.is_finite() {
                xs.push(*x);
                ys.push(*y);
            }
        }
    }
    pearson(&xs, &ys).ok()
}

pub fn stability(
    cfg: &ExperimentConfig,
    models: Models<'_>,
    mode: Parallelism,
) -> Result<StabilitySummary> {
    let spec = cfg.system_spec();
    let (initial, truth) = rollout_truth(cfg, mode)?;
    let mut reports = Vec::new();
    let perturbations = std::iter::once(None).chain(cfg.rollout.perturbations.iter().map(Some));
    for p in perturbations {
        for &scheme in &cfg.rollout.schemes {
            let t0 = Instant::now();
            let rep = stability_report(
                scheme,
                models,
                &spec,
                cfg.dataset.obs_dt,
                &initial,
                &truth,
                p,
                mode,
            )?;
            log::info!(
                "{scheme} / {}: final reject ratio {:.2} ({:.1} s)",
                p.map_or("clean".to_string(), |p| p.label()),
                rep.reject_ratio.last().copied().unwrap_or(f64::NAN),
                t0.elapsed().as_secs_f64()
            );
            reports.push(rep);
        }
    }
    Ok(StabilitySummary {
        initial_states: cfg.rollout.initial_states,
        steps: cfg.rollout.steps,
        pearson_reject_vs_msn: pooled_pearson(&reports),
        reports,
    })
}

pub fn rollout_cmd(ctx: &Ctx) -> Result<PathBuf> {
    let s1 = ctx.stage1()?;
    let s2 = ctx.stage2()?;
    let dynamics = ctx.dynamics()?;
    let models = Models {
        stage1: &s1,
        stage2: Some(&s2),
        dynamics: Some(&dynamics),
    };
    let summary = stability(&ctx.cfg, models, ctx.mode)?;
    let csv_path = ctx.run.path("stability.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "step",
        "scheme",
        "perturbation",
        "reject_ratio",
        "msn_mean",
        "pixel_mse",
    ])?;
    for r in &summary.reports {
        for row in r.csv_rows() {
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    ctx.write("stability.json", &summary)
}

pub fn evaluate_cmd(ctx: &Ctx) -> Result<PathBuf> {
    let data = ctx.dataset()?;
    let s1 = ctx.stage1()?;
    let e = &ctx.cfg.evaluate;
    let report = evaluate_prediction(&s1, &data, e.split, e.max_samples, e.seed, ctx.mode)?;
    ctx.write("evaluate.json", json!({ "report": report }))
}

pub fn regress_cmd(ctx: &Ctx) -> Result<PathBuf> {
    let data = ctx.dataset()?;
    let s1 = ctx.stage1()?;
    let s2 = ctx.stage2()?;
    let targets = Variable::for_system(data.spec().system);
    let cmp = compare_nsv_vs_pca(&s1, &s2, &data, &targets, &ctx.cfg.probe, ctx.mode)?;
    let index = probe_samples(&data, ctx.cfg.probe.max_samples, ctx.cfg.probe.seed);
    let truth: Vec<_> = index.iter().map(|&r| sample_truth(&data, r)).collect();
    let v = nsv_for(&s1, &s2, &data, index.clone(), ctx.mode)?;
    let vis = export_nsv_visualization(index, &v.rows, &truth, &targets)?;
    vis.write_csv(&ctx.run.path("nsv_pca.csv"))?;
    ctx.write("regress.json", json!({ "comparison": cmp }))
}
