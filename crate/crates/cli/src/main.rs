mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use boxfield::boundary::Strategy;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "boxfield", version, about = "Implicit-field 3D box fitting experiments on synthetic LiDAR scenes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration merged over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set pipeline.boundary.angles=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random stream (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory; defaults to `$BOXFIELD_OUTPUT_ROOT/<command>` or `runs/<command>`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Log progress (`-vv` for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes as JSON documents.
    Gen(GenArgs),
    /// Fit boxes in every scene of a directory.
    Fit(FitArgs),
    /// Train the implicit classifier, the shift head and the refinement head.
    Train(TrainArgs),
    /// Recall and average precision of fitted detections.
    Eval(EvalArgs),
    /// Center-shift versus point-masking robustness experiment.
    Robustness(InputArgs),
    /// Sweep the number of angle partitions with oracle centers and values.
    AblateH(AblateArgs),
    /// Render SVG plots for the CSV tables in a directory.
    Report(InputArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    /// Noiseless, clutter-free scenes with this many surface points per object.
    #[arg(long, value_name = "POINTS")]
    dense: Option<usize>,
    /// Also write each point cloud as packed little-endian `.bin`.
    #[arg(long)]
    bin: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Oracle,
    Learned,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Directory of scene JSON files.
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Candidate centers: ground-truth shifted seeds or the trained shift head.
    #[arg(long, value_enum, default_value_t = Source::Oracle)]
    centers: Source,
    /// Implicit values: ground-truth membership or the trained classifier.
    #[arg(long, value_enum, default_value_t = Source::Oracle)]
    values: Source,
    /// Apply the trained refinement head.
    #[arg(long)]
    refine: bool,
    /// Directory written by `train`.
    #[arg(long, value_name = "DIR")]
    model: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Implicit,
    Shift,
    Head,
    All,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Held-out scenes for the classifier's final accuracy.
    #[arg(long, value_name = "DIR")]
    holdout: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Part::All)]
    part: Part,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of scene JSON files (ground truth).
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Directory written by `fit`.
    #[arg(long, value_name = "DIR")]
    detections: PathBuf,
}

#[derive(Args, Debug)]
pub struct InputArgs {
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Comma-separated angle counts.
    #[arg(long, value_delimiter = ',')]
    h: Vec<usize>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

/// Runtime failures exit 1, configuration problems 3; usage errors are reported by clap with 2.
pub enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::resolve(cli.global.config.as_deref(), &cli.global.overrides)?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
        cfg.apply_seed();
    }
    let name = match &cli.command {
        Command::Gen(a) => {
            if let Some(p) = a.dense {
                cfg.scene.points_per_object_at_10m = p;
                cfg.scene.density_exponent = 0.0;
                cfg.scene.noise_sigma = 0.0;
                cfg.scene.clutter_fraction = 0.0;
            }
            "gen"
        }
        Command::Fit(a) => {
            if let Some(s) = a.strategy {
                cfg.pipeline.boundary.strategy = s;
            }
            "fit"
        }
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Robustness(_) => "robustness",
        Command::AblateH(a) => {
            if !a.h.is_empty() {
                cfg.ablation.h_values = a.h.clone();
            }
            "ablate-h"
        }
        Command::Report(_) => "report",
    };
    cfg.validate()?;
    log::info!("effective configuration:\n{}", cfg.to_toml());

    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(ConfigError("--jobs must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(anyhow::anyhow!("thread pool: {e}")))?;
    }

    let out = output::prepare(cli.global.out.as_deref(), name, &cfg)?;
    match cli.command {
        Command::Gen(a) => commands::gen(&cfg, &a, &out),
        Command::Fit(a) => commands::fit(&cfg, &a, &out),
        Command::Train(a) => commands::train(&cfg, &a, &out),
        Command::Eval(a) => commands::eval(&cfg, &a, &out),
        Command::Robustness(a) => commands::robustness(&cfg, &a, &out),
        Command::AblateH(a) => commands::ablate_h(&cfg, &a, &out),
        Command::Report(a) => commands::report(&a, &out),
    }
    .map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: invalid configuration: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
