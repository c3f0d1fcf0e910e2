//! `polyocc`: dataset generation, partitioning, query sampling, training,
//! prediction, reconstruction, evaluation and artifact inspection.

mod commands;
mod config;
mod error;
mod inspect;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polyocc::sampling::SamplingStrategy;

use error::CliError;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(
    name = "polyocc",
    version,
    about = "Building reconstruction by polyhedral cell classification"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for every random choice (overrides config files).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with optional [dataset], [train] and [eval] tables, or a run's config.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-building parallelism; 1 makes every output reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Per-building time limit for prediction and reconstruction.
    #[arg(long, global = true)]
    pub timeout_secs: Option<f64>,
    /// Log format on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    pub log_format: LogFormat,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Text,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Skeleton,
    Boundary,
    Volume,
}

impl From<Strategy> for SamplingStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Skeleton => SamplingStrategy::Skeleton,
            Strategy::Boundary => SamplingStrategy::Boundary,
            Strategy::Volume => SamplingStrategy::Volume,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoder {
    Conv,
    Plain,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Reduced widths, 256 points, 50 epochs, batch 16.
    Desk,
    /// Full widths, 4096 points, 150 epochs, batch 64.
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic buildings into a dataset directory.
    GenData {
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Number of buildings (default 640).
        #[arg(long)]
        count: Option<usize>,
        /// Queries per cell.
        #[arg(long)]
        k: Option<usize>,
        /// Query sampling strategy stored with each building.
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
        /// Points kept per stored scan.
        #[arg(long)]
        max_points: Option<usize>,
    },
    /// Partition the bounding box of a point cloud by its planar primitives.
    Partition {
        /// XYZ text, or binary float32 triplets with a .bin/.f32 extension.
        #[arg(long)]
        points: PathBuf,
        /// Primitives JSON.
        #[arg(long)]
        primitives: PathBuf,
        /// Complex JSON to write.
        #[arg(long)]
        out: PathBuf,
        /// Split every cell by every primitive plane instead of only the crossed ones.
        #[arg(long)]
        exhaustive: bool,
    },
    /// Draw k query points in every cell of a complex.
    SampleQueries {
        /// Complex JSON from `partition`.
        #[arg(long)]
        complex: PathBuf,
        /// Queries JSON to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        k: usize,
        /// How queries are placed inside each cell.
        #[arg(long, value_enum, default_value_t = Strategy::Skeleton)]
        strategy: Strategy,
    },
    /// Train a model on a dataset's train split, selecting on val.
    Train {
        /// Dataset directory from `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for config, log and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Model and schedule size.
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long, value_enum)]
        encoder: Option<Encoder>,
        /// Override the preset's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Train on queries drawn with this strategy.
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
        /// Drop the cell adjacency from graph convolution.
        #[arg(long)]
        no_adjacency: bool,
        /// Continue from the newest epoch checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Per-cell interior probabilities and labels.
    Predict {
        /// Run directory (uses best.pgnn) or a .pgnn file beside its config.toml.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Query file for --complex inputs; drawn with the model's k when absent.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Predictions JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the surface between interior and exterior cells as OBJ.
    Reconstruct {
        /// Complex file (with --labels).
        #[arg(long, conflicts_with = "data")]
        complex: Option<PathBuf>,
        /// Dataset directory (with --id).
        #[arg(long, requires = "id")]
        data: Option<PathBuf>,
        #[arg(long)]
        id: Option<u64>,
        /// JSON array of 0/1, or a predict output.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Use the dataset's ground-truth labels.
        #[arg(long, requires = "data", conflicts_with = "labels")]
        oracle: bool,
        /// OBJ file to write.
        #[arg(long)]
        out: PathBuf,
        /// Write triangles instead of planar polygons.
        #[arg(long)]
        triangulate: bool,
    },
    /// Reconstruct and score a dataset split.
    Eval {
        /// Dataset directory from `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// Run directory or checkpoint, as for `predict`.
        #[arg(long, required_unless_present = "oracle")]
        model: Option<PathBuf>,
        /// Score the ground-truth labels instead of a model.
        #[arg(long)]
        oracle: bool,
        /// Which buildings to score.
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Surface samples per mesh for the Hausdorff distance.
        #[arg(long)]
        samples: Option<usize>,
        /// JSON report path.
        #[arg(long)]
        report: PathBuf,
        /// Optional per-building CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Describe any artifact file and print its checksum.
    Inspect {
        /// File or dataset directory.
        #[arg(required_unless_present = "formats")]
        path: Option<PathBuf>,
        /// Print the file format reference.
        #[arg(long)]
        formats: bool,
    },
}

/// Buildings from a dataset, or one raw building.
#[derive(Args, Debug)]
pub struct Source {
    /// Dataset directory from `gen-data`.
    #[arg(long, conflicts_with_all = ["points", "complex"])]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Comma-separated building ids (default: the whole split).
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<u64>,
    /// Point cloud in the model's normalized frame (with --complex).
    #[arg(long, requires = "complex")]
    pub points: Option<PathBuf>,
    /// Complex JSON of the raw building.
    #[arg(long, requires = "points")]
    pub complex: Option<PathBuf>,
}

fn init_logging(format: LogFormat) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if format == LogFormat::Json {
        b.format(|buf, record| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    b.init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::BadInput("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let g = &cli.global;
    match cli.command {
        Command::GenData {
            out,
            count,
            k,
            strategy,
            max_points,
        } => commands::gen_data(g, &out, count, k, strategy, max_points),
        Command::Partition {
            points,
            primitives,
            out,
            exhaustive,
        } => commands::partition(g, &points, &primitives, &out, exhaustive),
        Command::SampleQueries {
            complex,
            out,
            k,
            strategy,
        } => commands::sample_queries(g, &complex, &out, k, strategy.into()),
        Command::Train {
            data,
            out,
            preset,
            encoder,
            epochs,
            batch_size,
            strategy,
            no_adjacency,
            resume,
        } => {
            let over = commands::TrainOverrides {
                preset,
                encoder,
                epochs,
                batch_size,
                strategy,
                no_adjacency,
            };
            commands::train(g, &data, &out, &over, resume)
        }
        Command::Predict {
            model,
            source,
            queries,
            out,
        } => commands::predict(g, &model, &source, queries.as_deref(), &out),
        Command::Reconstruct {
            complex,
            data,
            id,
            labels,
            oracle,
            out,
            triangulate,
        } => commands::reconstruct(
            g,
            complex.as_deref(),
            data.as_deref(),
            id,
            labels.as_deref(),
            oracle,
            &out,
            triangulate,
        ),
        Command::Eval {
            data,
            model,
            oracle,
            split,
            samples,
            report,
            csv,
        } => commands::eval(
            g,
            &data,
            model.as_deref(),
            oracle,
            split,
            samples,
            &report,
            csv.as_deref(),
        ),
        Command::Inspect { path, formats } => {
            if formats {
                print!("{}", inspect::FORMATS);
                return Ok(());
            }
            inspect::inspect(path.as_deref().expect("clap requires a path"))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.log_format);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
