//! Command-line front end for the affect-analysis pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use affectkit::dataio::{SyntheticSpec, Task};
use affectkit::pipeline::{
    cmd_evaluate, cmd_predict, cmd_sweep, cmd_synth, cmd_train, evaluate_predictions, sweep_csv,
    PipelineConfig, PipelineError, SweepParam, ThresholdMode,
};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "affectkit",
    version,
    about = "Train, evaluate and post-process frame-level affect heads"
)]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the task head and write the model plus a training log.
    Train(Common),
    /// Evaluate one or two models (and/or an external member) on labeled data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        members: Members,
        /// Score an existing prediction file instead of running models.
        #[arg(long, conflicts_with = "model")]
        predictions: Option<PathBuf>,
    },
    /// Write post-processed per-frame predictions for every frame.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        members: Members,
    },
    /// Evaluate one post-processing parameter over a list of values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        members: Members,
        /// k, blend_weight or au_threshold_grid.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0,5,15,25.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Generate a synthetic split (features.csv and labels/).
    Synth {
        #[arg(long, value_enum, default_value = "va")]
        task: TaskArg,
        #[arg(long, default_value_t = 8)]
        videos: usize,
        #[arg(long, default_value_t = 500)]
        frames: usize,
        /// Standard deviation of the feature noise.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Va,
    Expr,
    Au,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Va => Task::Va,
            TaskArg::Expr => Task::Expr,
            TaskArg::Au => Task::Au,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdArg {
    Fixed,
    Search,
    File,
}

/// Settings shared by the pipeline commands; flags override the config file.
#[derive(Args)]
struct Common {
    /// JSON pipeline config; omitted keys take their defaults (see below).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Smoothing half-width; the box filter spans 2k+1 frames.
    #[arg(long)]
    k: Option<usize>,
    /// Weight of the first member when blending two.
    #[arg(long)]
    blend_weight: Option<f64>,
    /// Action-unit threshold mode.
    #[arg(long, value_enum)]
    thresholds: Option<ThresholdArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Feature file (overrides paths.features).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Label directory (overrides paths.labels).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct Members {
    /// Model file; repeat to blend two models.
    #[arg(long)]
    model: Vec<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(t) = self.task {
            cfg.task = t.into();
        }
        if let Some(k) = self.k {
            cfg.post.k = k;
        }
        if let Some(w) = self.blend_weight {
            cfg.post.blend_weight = w;
        }
        if let Some(t) = self.thresholds {
            cfg.post.thresholds = match t {
                ThresholdArg::Fixed => ThresholdMode::Fixed,
                ThresholdArg::Search => ThresholdMode::Search,
                ThresholdArg::File => ThresholdMode::File,
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.paths.output = o.clone();
        }
        if let Some(f) = &self.features {
            cfg.paths.features = Some(f.clone());
        }
        if let Some(l) = &self.labels {
            cfg.paths.labels = Some(l.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = cmd_train(&cfg)?;
            println!("{}", out.model_path.display());
            eprintln!("log: {} ({} frames)", out.log_path.display(), out.frames);
        }
        Command::Evaluate {
            common,
            members,
            predictions,
        } => {
            let cfg = common.resolve()?;
            let report = match predictions {
                Some(p) => evaluate_predictions(&cfg, &p)?,
                None => cmd_evaluate(&cfg, &members.model)?,
            };
            print!("{}", report.to_json());
        }
        Command::Predict { common, members } => {
            let cfg = common.resolve()?;
            println!("{}", cmd_predict(&cfg, &members.model)?.display());
        }
        Command::Sweep {
            common,
            members,
            param,
            values,
        } => {
            let cfg = common.resolve()?;
            let param: SweepParam = param.parse()?;
            let points = cmd_sweep(&cfg, &members.model, param, &values)?;
            print!("{}", sweep_csv(param, &points));
        }
        Command::Synth {
            task,
            videos,
            frames,
            noise,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                task: task.into(),
                n_videos: videos,
                frames_per_video: frames,
                noise_sigma: noise,
                seed,
            };
            let (features, labels) = cmd_synth(spec, &out)?;
            println!("{}", features.display());
            println!("{}", labels.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let defaults = format!(
        "Config defaults (va uses batch_size 4096 and selector logits_va; expr/au use 512 and embeddings):\n{}",
        PipelineConfig::default().to_json()
    );
    let matches = Cli::command().after_long_help(defaults).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
