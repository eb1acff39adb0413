//! `segkit` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segkit::config::PartialConfig;
use segkit::zoo::Family;

#[derive(Debug, Parser)]
#[command(
    name = "segkit",
    version,
    about = "Building footprint segmentation: tiling, training, evaluation, figures, benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of rectangle-roof rasters (img/ and msk/).
    Synth(SynthArgs),
    /// Cut rasters into tiles, split them and write a dataset with a manifest.
    Tile(TileArgs),
    /// Train one model; writes logs/<model>/ and checkpoints/<model>/.
    Train(TrainArgs),
    /// Score a checkpoint on one dataset split.
    Evaluate(EvaluateArgs),
    /// Render quality maps and outlines into result/.
    Visualize(VisualizeArgs),
    /// Measure training and testing throughput.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat TOML file with run settings; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root of logs/, checkpoints/ and result/ [default: .]
    #[arg(long, value_name = "DIR")]
    pub workdir: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of rasters.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Raster side length in pixels, a multiple of 32.
    #[arg(long, default_value_t = 448)]
    pub size: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Directory holding img/<id>.png and msk/<id>.png pairs.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Dataset root to create.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Tile side length [default: 224]
    #[arg(long)]
    pub size: Option<usize>,
    /// Window step [default: the tile size]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Minimum building coverage for train and val tiles [default: 0.05]
    #[arg(long)]
    pub min_coverage: Option<f64>,
    /// Train, val and test fractions [default: 0.7,0.15,0.15]
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub fractions: Option<Vec<f64>>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Architecture name, e.g. UNet or BR-Net [default: UNet]
    #[arg(long, value_parser = parse_family)]
    pub model: Option<Family>,
    /// Dataset root written by `tile` [default: dataset]
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Encoder width at stage 1 [default: 16]
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Adam learning rate [default: 0.0002]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Adam beta1 [default: 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam beta2 [default: 0.999]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Tiles per step [default: 24]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Optimizer steps [default: 5000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Steps between validations [default: 100]
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset root [default: dataset]
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Split to score.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Single,
    Compare,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// One checkpoint per model; compare mode needs at least two.
    #[arg(long = "checkpoint", value_name = "FILE", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Dataset root [default: dataset]
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Split to draw samples from.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Number of randomly chosen samples [default: 8]
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Single)]
    pub mode: Mode,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// `all` or a comma-separated list of architecture names.
    #[arg(long, default_value = "all")]
    pub models: String,
    /// Batch size [default: 4]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Input side length [default: 224]
    #[arg(long)]
    pub size: Option<usize>,
    /// Encoder width at stage 1 [default: 16]
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Untimed iterations [default: 5]
    #[arg(long)]
    pub warmup_iters: Option<usize>,
    /// Timed iterations [default: 50]
    #[arg(long)]
    pub timed_iters: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse::<Family>().map_err(|e| e.to_string())
}

impl Common {
    fn layer(&self) -> PartialConfig {
        PartialConfig {
            workdir: self.workdir.clone(),
            seed: self.seed,
            ..Default::default()
        }
    }
}

impl TileArgs {
    fn layer(&self) -> PartialConfig {
        PartialConfig {
            tile_size: self.size,
            stride: self.stride.map(Some),
            min_coverage: self.min_coverage,
            fractions: self.fractions.as_ref().map(|f| (f[0], f[1], f[2])),
            ..self.common.layer()
        }
    }
}

impl TrainArgs {
    fn layer(&self) -> PartialConfig {
        PartialConfig {
            model: self.model,
            data: self.data.clone(),
            base_channels: self.base_channels,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size,
            iterations: self.iterations,
            eval_every: self.eval_every,
            ..self.common.layer()
        }
    }
}

impl EvaluateArgs {
    fn layer(&self) -> PartialConfig {
        PartialConfig {
            data: self.data.clone(),
            ..self.common.layer()
        }
    }
}

impl VisualizeArgs {
    fn layer(&self) -> PartialConfig {
        PartialConfig {
            data: self.data.clone(),
            samples: self.samples,
            ..self.common.layer()
        }
    }
}

impl BenchmarkArgs {
    fn layer(&self) -> PartialConfig {
        PartialConfig {
            bench_batch_size: self.batch_size,
            bench_size: self.size,
            base_channels: self.base_channels,
            warmup_iters: self.warmup_iters,
            timed_iters: self.timed_iters,
            ..self.common.layer()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
