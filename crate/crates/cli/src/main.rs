use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use nnkit::Parallelism;
use nsv::datasets::Split;
use nsv::systems::SystemKind;
use nsv_cli::commands::{self, Ctx};
use nsv_cli::config::IdMethod;
use nsv_cli::{report, validate_config, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nsv", version, about = "Neural state variable experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults fill every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run name; outputs go to `<runs-dir>/<name>/`.
    #[arg(long, global = true)]
    name: Option<String>,
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    system: Option<SystemKind>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and render the dataset.
    Generate {
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the frame-pair autoencoder.
    TrainStage1 {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        ld: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the intrinsic dimension of stage-1 latents.
    EstimateId {
        /// levina-bickel or cd
        #[arg(long)]
        method: Option<IdMethod>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        max_points: Option<usize>,
        /// Also estimate on flattened raw frames.
        #[arg(long)]
        raw_frames: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train the latent autoencoder with an ID-wide bottleneck.
    TrainStage2 {
        #[arg(long)]
        id: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the one-step dynamics model on neural state variables.
    TrainLatentDynamics {
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Long-horizon rollouts with stability metrics.
    Rollout {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        initial_states: Option<usize>,
        #[arg(long)]
        hybrid_n: Option<usize>,
        /// Only the unperturbed rollouts.
        #[arg(long)]
        no_perturbations: bool,
        #[command(flatten)]
        common: Common,
    },
    /// One-step prediction errors against the copy and linear baselines.
    Evaluate {
        #[arg(long)]
        split: Option<Split>,
        #[command(flatten)]
        common: Common,
    },
    /// Regression probes from NSVs and from PCA of latents.
    Regress {
        #[arg(long)]
        labeled_fraction: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Tables over every run under the runs directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common, .. }
            | Command::TrainStage1 { common, .. }
            | Command::EstimateId { common, .. }
            | Command::TrainStage2 { common, .. }
            | Command::TrainLatentDynamics { common, .. }
            | Command::Rollout { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Regress { common, .. }
            | Command::Report { common } => common,
        }
    }

    fn log_name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::TrainStage1 { .. } => "train-stage1",
            Command::EstimateId { .. } => "estimate-id",
            Command::TrainStage2 { .. } => "train-stage2",
            Command::TrainLatentDynamics { .. } => "train-latent-dynamics",
            Command::Rollout { .. } => "rollout",
            Command::Evaluate { .. } => "evaluate",
            Command::Regress { .. } => "regress",
            Command::Report { .. } => "report",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        let c = self.common();
        if let Some(n) = &c.name {
            cfg.name = n.clone();
        }
        if let Some(d) = &c.runs_dir {
            cfg.runs_dir = d.clone();
        }
        if let Some(s) = c.system {
            cfg.system = s;
        }
        match self {
            Command::Generate {
                trajectories, seed, ..
            } => {
                set(&mut cfg.dataset.trajectories, *trajectories);
                set(&mut cfg.dataset.seed, *seed);
            }
            Command::TrainStage1 { epochs, ld, .. } => {
                set(&mut cfg.stage1.epochs, *epochs);
                set(&mut cfg.stage1.ld, *ld);
            }
            Command::EstimateId {
                method,
                k,
                max_points,
                raw_frames,
                ..
            } => {
                set(&mut cfg.intdim.method, *method);
                set(&mut cfg.intdim.k, *k);
                set(&mut cfg.intdim.max_points, *max_points);
                cfg.intdim.raw_frames |= raw_frames;
            }
            Command::TrainStage2 { id, epochs, .. } => {
                if id.is_some() {
                    cfg.id = *id;
                }
                set(&mut cfg.stage2.epochs, *epochs);
            }
            Command::TrainLatentDynamics { epochs, .. } => set(&mut cfg.dynamics.epochs, *epochs),
            Command::Rollout {
                steps,
                initial_states,
                hybrid_n,
                no_perturbations,
                ..
            } => {
                set(&mut cfg.rollout.steps, *steps);
                set(&mut cfg.rollout.initial_states, *initial_states);
                set(&mut cfg.rollout.hybrid_n, *hybrid_n);
                if *no_perturbations {
                    cfg.rollout.perturbations.clear();
                }
            }
            Command::Evaluate { split, .. } => set(&mut cfg.evaluate.split, *split),
            Command::Regress {
                labeled_fraction, ..
            } => set(&mut cfg.probe.labeled_fraction, *labeled_fraction),
            Command::Report { .. } => {}
        }
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

/// Log lines go to stderr and to the subcommand's log file.
struct Tee(Mutex<File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        self.0.lock().expect("log file lock").write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.lock().expect("log file lock").flush()
    }
}

fn init_logging(ctx: &Ctx, name: &str) {
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Ok(f) = File::create(ctx.run.path(&format!("logs/{name}.log"))) {
        builder.target(env_logger::Target::Pipe(Box::new(Tee(Mutex::new(f)))));
    }
    let _ = builder.try_init();
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let common = cli.command.common();
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cli.command.apply(&mut cfg);
    let cfg = validate_config(cfg)?;
    if let Some(n) = std::env::var("NSV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        nnkit::par::limit_threads(n);
    }
    let mode = if common.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::default()
    };
    let ctx = Ctx::new(cfg, mode)?;
    init_logging(&ctx, cli.command.log_name());
    match cli.command {
        Command::Generate { .. } => commands::generate(&ctx),
        Command::TrainStage1 { .. } => commands::train_stage1_cmd(&ctx),
        Command::EstimateId { .. } => commands::estimate_id(&ctx),
        Command::TrainStage2 { .. } => commands::train_stage2_cmd(&ctx),
        Command::TrainLatentDynamics { .. } => commands::train_dynamics_cmd(&ctx),
        Command::Rollout { .. } => commands::rollout_cmd(&ctx),
        Command::Evaluate { .. } => commands::evaluate_cmd(&ctx),
        Command::Regress { .. } => commands::regress_cmd(&ctx),
        Command::Report { .. } => report::report_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
