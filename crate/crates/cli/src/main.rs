//! `spi-defect`: generate synthetic line data, inspect SPI/AOI exports, and
//! run the cross-validated defect pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use spi_defect::gbdt::SplitMethod;
use spi_defect::pipeline::ComponentMode;
use spi_defect::{ErrorKind, Level};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_IO: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "spi-defect", version, about = "Defect detection from solder paste inspection data")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic SPI/AOI pair
    Generate(GenerateArgs),
    /// Summarize an SPI or AOI file
    Inspect(InspectArgs),
    /// Cross-validate models for one task and fuse their verdicts
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML configuration file ([generator] table)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path of the SPI CSV
    #[arg(long)]
    pub out_spi: PathBuf,
    /// Output path of the AOI CSV
    #[arg(long)]
    pub out_aoi: PathBuf,
    /// Number of panels (8 boards each by default)
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub panels: Option<u32>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Strength of the planted volume/defect link (0 = none)
    #[arg(long)]
    pub signal: Option<f64>,
    /// Per-pin defect probability
    #[arg(long)]
    pub defect_rate: Option<f64>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["spi", "aoi"])))]
pub struct InspectArgs {
    /// TOML configuration file (schema taken from [run.schema])
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// SPI CSV to summarize
    #[arg(long)]
    pub spi: Option<PathBuf>,
    /// AOI CSV to summarize
    #[arg(long)]
    pub aoi: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    C1,
    C2,
    C3,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Pin,
    Component,
    Board,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Level {
        match l {
            LevelArg::Pin => Level::Pin,
            LevelArg::Component => Level::Component,
            LevelArg::Board => Level::Board,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    PerComponent,
    Combined,
}

impl From<ModeArg> for ComponentMode {
    fn from(m: ModeArg) -> ComponentMode {
        match m {
            ModeArg::PerComponent => ComponentMode::PerComponent,
            ModeArg::Combined => ComponentMode::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Exact,
    Histogram,
}

impl From<SplitArg> for SplitMethod {
    fn from(s: SplitArg) -> SplitMethod {
        match s {
            SplitArg::Exact => SplitMethod::Exact,
            SplitArg::Histogram => SplitMethod::Histogram,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration file ([run] table)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// SPI CSV
    #[arg(long)]
    pub spi: PathBuf,
    /// AOI CSV
    #[arg(long)]
    pub aoi: PathBuf,
    /// Classification task
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Aggregation levels, comma separated
    #[arg(long, value_enum, value_delimiter = ',')]
    pub levels: Option<Vec<LevelArg>>,
    /// One model per component or one combined model
    #[arg(long, value_enum)]
    pub component_mode: Option<ModeArg>,
    /// Board-level models for the N most defective components
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_n: Option<u64>,
    /// Fusion rule: any-positive, majority-vote or mean-probability:<t>
    #[arg(long)]
    pub fusion: Option<String>,
    /// Number of cross-validation folds
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: Option<u64>,
    /// Seed for fold assignment and subsampling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum tree depth
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Boosting rounds
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Split search: exact or histogram
    #[arg(long, value_enum)]
    pub split_method: Option<SplitArg>,
    /// Train on the K most important features only
    #[arg(long)]
    pub top_k_features: Option<usize>,
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Directory for the report, metric tables, ROC curves and models
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Training => EXIT_TRAINING,
        ErrorKind::Io => EXIT_IO,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Inspect(a) => commands::inspect(&a),
        Command::Run(a) => commands::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
