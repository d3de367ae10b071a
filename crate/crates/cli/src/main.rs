//! `rvad`: subcommand front-end for the region-discovery anomaly
//! detection pipeline. Stages communicate only through files in the
//! output directory, and the effective configuration is echoed next to
//! every artifact.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rvad_core::io::RunConfig;
use rvad_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rvad", version, about = "Spatial-context video anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-zone scene with optional anomalies.
    Simulate(SimulateArgs),
    /// Run the rule-table toy experiment end to end and report AUC.
    Toy(ToyArgs),
    /// Discover scene regions from accumulated tracklet activity.
    Discover(DiscoverArgs),
    /// Pick the region count by the mean inter-region divergence.
    SelectK(SelectKArgs),
    /// Train per-region normalcy mixtures bound to a region map.
    Train(TrainArgs),
    /// Score tracklets and frames against trained models.
    Score(ScoreArgs),
    /// Compute frame AUC, RBDC, and TBDC from score artifacts.
    Evaluate(EvaluateArgs),
    /// List prototypical events per region.
    Explain(ExplainArgs),
    /// Render region maps and score curves for inspection.
    Render(RenderArgs),
}

/// Flags shared by every subcommand: config file, output directory,
/// seed, and one override flag per config key.
#[derive(Args)]
struct CommonArgs {
    /// Key = value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory artifacts are written to (created if missing).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Master seed for every random decision in the run.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

/// One flag per configuration key, mirrored verbatim.
#[derive(Args)]
struct Overrides {
    #[arg(long = "height", value_name = "PIXELS")]
    height: Option<String>,
    #[arg(long = "width", value_name = "PIXELS")]
    width: Option<String>,
    #[arg(long = "n_frames", value_name = "N")]
    n_frames: Option<String>,
    #[arg(long = "anomaly_rate", value_name = "REAL")]
    anomaly_rate: Option<String>,
    #[arg(long = "anomaly_kinds", value_name = "LIST")]
    anomaly_kinds: Option<String>,
    #[arg(long = "n_train", value_name = "N")]
    n_train: Option<String>,
    #[arg(long = "n_test", value_name = "N")]
    n_test: Option<String>,
    #[arg(long = "t_w", value_name = "FRAMES")]
    t_w: Option<String>,
    #[arg(long = "kernel", value_name = "POLICY")]
    kernel: Option<String>,
    #[arg(long = "min_mass", value_name = "REAL")]
    min_mass: Option<String>,
    #[arg(long = "k", value_name = "N")]
    k: Option<String>,
    #[arg(long = "k_candidates", value_name = "LIST")]
    k_candidates: Option<String>,
    #[arg(long = "method", value_name = "NAME")]
    method: Option<String>,
    #[arg(long = "spatial_affinity", value_name = "REAL")]
    spatial_affinity: Option<String>,
    #[arg(long = "subsample", value_name = "N")]
    subsample: Option<String>,
    #[arg(long = "k_max", value_name = "N")]
    k_max: Option<String>,
    #[arg(long = "min_samples", value_name = "N")]
    min_samples: Option<String>,
    #[arg(long = "smoothing_sigma", value_name = "REAL")]
    smoothing_sigma: Option<String>,
    #[arg(long = "iou_threshold", value_name = "REAL")]
    iou_threshold: Option<String>,
    #[arg(long = "track_fraction", value_name = "REAL")]
    track_fraction: Option<String>,
}

impl Overrides {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        let pairs: [(&str, &Option<String>); 20] = [
            ("height", &self.height),
            ("width", &self.width),
            ("n_frames", &self.n_frames),
            ("anomaly_rate", &self.anomaly_rate),
            ("anomaly_kinds", &self.anomaly_kinds),
            ("n_train", &self.n_train),
            ("n_test", &self.n_test),
            ("t_w", &self.t_w),
            ("kernel", &self.kernel),
            ("min_mass", &self.min_mass),
            ("k", &self.k),
            ("k_candidates", &self.k_candidates),
            ("method", &self.method),
            ("spatial_affinity", &self.spatial_affinity),
            ("subsample", &self.subsample),
            ("k_max", &self.k_max),
            ("min_samples", &self.min_samples),
            ("smoothing_sigma", &self.smoothing_sigma),
            ("iou_threshold", &self.iou_threshold),
            ("track_fraction", &self.track_fraction),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        Ok(())
    }
}

impl CommonArgs {
    /// defaults -> config file -> flag overrides, then one validation.
    fn effective_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => {
                require_input(path)?;
                let text = std::fs::read_to_string(path)?;
                RunConfig::parse(&text, &path.display().to_string())?
            }
            None => RunConfig::default(),
        };
        self.overrides.apply(&mut config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    /// Create the output directory and echo the effective config there.
    fn prepare(&self) -> Result<(RunConfig, PathBuf)> {
        let config = self.effective_config()?;
        std::fs::create_dir_all(&self.out_dir)?;
        config.write(&self.out_dir.join("config.txt"))?;
        Ok((config, self.out_dir.clone()))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ToyArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct DiscoverArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tracklet record table to accumulate.
    #[arg(long)]
    tracklets: PathBuf,
}

#[derive(Args)]
struct SelectKArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tracklet record table to accumulate.
    #[arg(long)]
    tracklets: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training tracklet record table.
    #[arg(long)]
    tracklets: PathBuf,
    /// Region map graymap (its .json sidecar must sit next to it).
    #[arg(long)]
    regions: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tracklet record table to score.
    #[arg(long)]
    tracklets: PathBuf,
    /// Region map graymap.
    #[arg(long)]
    regions: PathBuf,
    /// Trained regional model set.
    #[arg(long)]
    models: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Per-frame score table from `score`.
    #[arg(long)]
    frame_scores: PathBuf,
    /// Per-tracklet score table from `score`.
    #[arg(long)]
    tracklet_scores: PathBuf,
    /// Ground-truth annotation table.
    #[arg(long)]
    annotations: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training tracklet record table (prototype lookup).
    #[arg(long)]
    tracklets: PathBuf,
    /// Region map graymap.
    #[arg(long)]
    regions: PathBuf,
    /// Trained regional model set.
    #[arg(long)]
    models: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Region map graymap to render.
    #[arg(long)]
    regions: PathBuf,
    /// Optional frame score table to plot.
    #[arg(long)]
    frame_scores: Option<PathBuf>,
}

fn require_input(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid_argument(format!(
            "missing input: {}",
            path.display()
        )))
    }
}

/// Sidecar JSON lives next to the graymap with the same stem.
fn sidecar_of(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let (config, out) = args.common.prepare()?;
            commands::simulate(&config, &out)
        }
        Command::Toy(args) => {
            let (config, out) = args.common.prepare()?;
            commands::toy(&config, &out)
        }
        Command::Discover(args) => {
            require_input(&args.tracklets)?;
            let (config, out) = args.common.prepare()?;
            commands::discover(&config, &out, &args.tracklets)
        }
        Command::SelectK(args) => {
            require_input(&args.tracklets)?;
            let (config, out) = args.common.prepare()?;
            commands::select_k(&config, &out, &args.tracklets)
        }
        Command::Train(args) => {
            require_input(&args.tracklets)?;
            require_input(&args.regions)?;
            require_input(&sidecar_of(&args.regions))?;
            let (config, out) = args.common.prepare()?;
            commands::train(&config, &out, &args.tracklets, &args.regions)
        }
        Command::Score(args) => {
            require_input(&args.tracklets)?;
            require_input(&args.regions)?;
            require_input(&sidecar_of(&args.regions))?;
            require_input(&args.models)?;
            let (config, out) = args.common.prepare()?;
            commands::score(&config, &out, &args.tracklets, &args.regions, &args.models)
        }
        Command::Evaluate(args) => {
            require_input(&args.frame_scores)?;
            require_input(&args.tracklet_scores)?;
            require_input(&args.annotations)?;
            let (config, out) = args.common.prepare()?;
            commands::evaluate(
                &config,
                &out,
                &args.frame_scores,
                &args.tracklet_scores,
                &args.annotations,
            )
        }
        Command::Explain(args) => {
            require_input(&args.tracklets)?;
            require_input(&args.regions)?;
            require_input(&sidecar_of(&args.regions))?;
            require_input(&args.models)?;
            let (config, out) = args.common.prepare()?;
            commands::explain(&config, &out, &args.tracklets, &args.regions, &args.models)
        }
        Command::Render(args) => {
            require_input(&args.regions)?;
            require_input(&sidecar_of(&args.regions))?;
            if let Some(fs) = &args.frame_scores {
                require_input(fs)?;
            }
            let (config, out) = args.common.prepare()?;
            commands::render(&config, &out, &args.regions, args.frame_scores.as_deref())
        }
    }
}

/// 1 for anything the caller can fix by changing inputs; 2 for faults.
fn exit_code(error: &Error) -> u8 {
    match error {
        Error::InvalidArgument(_)
        | Error::UndefinedMetric(_)
        | Error::Format { .. }
        | Error::Validation { .. }
        | Error::ArtifactMismatch(_) => 1,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 1,
        Error::Io(_) | Error::Internal(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
