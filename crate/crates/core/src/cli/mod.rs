//! The `condid` command line: one verb per pipeline stage, all reading and
//! writing a single output directory.

mod commands;
mod config;
mod layout;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::PipelineConfig;
pub use layout::{Corpus, Layout, OutputLock};

use crate::affect::AffectError;
use crate::analysis::AnalysisError;
use crate::corpus::{CocoFormat, CorpusError, SplitName, SplitRatios};
use crate::inference::{InferenceError, Mode};
use crate::instructions::{InstructionError, TaskId};
use crate::scoring::ScoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("missing {}: run `condid {producer}` first", artifact.display())]
    Dependency { artifact: PathBuf, producer: &'static str },
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::Dependency { .. } => EXIT_DATA,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(CorpusError, InstructionError, ScoreError, AnalysisError);

impl From<AffectError> for CliError {
    fn from(e: AffectError) -> Self {
        match e {
            AffectError::ProviderUnavailable { .. } => CliError::Backend(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Config(_) => CliError::Usage(e.to_string()),
            InferenceError::Empty => CliError::Data(e.to_string()),
            InferenceError::Preflight(_) => CliError::Backend(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "condid",
    version,
    about = "Conspiracy-detection instruction benchmark pipeline"
)]
struct Cli {
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the raw corpora and store normalized copies.
    Ingest(IngestArgs),
    /// Assign records to train/dev/test.
    Split(SplitArgs),
    /// Compute or look up affective profiles for corpus texts.
    AnnotateAffect(AffectArgs),
    /// Build task instruction datasets.
    Build(BuildArgs),
    /// Query a model backend over built datasets.
    Run(RunArgs),
    /// Score run manifests against their datasets.
    Score(ScoreArgs),
    /// Affective distributions by gold class.
    Analyze(AnalyzeArgs),
    /// Collate all scores into result tables.
    Report,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    coco: Option<PathBuf>,
    #[arg(long)]
    coco_format: Option<CocoFormat>,
    #[arg(long)]
    loco: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// train,dev,test fractions.
    #[arg(long)]
    ratios: Option<SplitRatios>,
    #[arg(long)]
    coco_manifest: Option<PathBuf>,
    #[arg(long)]
    loco_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CorpusChoice {
    Coco,
    Loco,
    All,
}

#[derive(Debug, Args)]
struct AffectArgs {
    #[arg(long, value_enum, default_value = "all")]
    corpus: CorpusChoice,
    /// Restrict to one split (needs `split`); default is every record.
    #[arg(long)]
    split: Option<SplitName>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TaskSelection {
    /// Task number (1-5); repeatable or comma separated. Default: all.
    #[arg(long = "task", value_delimiter = ',')]
    tasks: Vec<TaskId>,
    #[arg(long)]
    split: Option<SplitName>,
    /// Use the affect-augmented prompts.
    #[arg(long)]
    affect: bool,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    select: TaskSelection,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    select: TaskSelection,
    /// mock-echo, mock-constant:<reply> or http.
    #[arg(long, default_value = "http")]
    backend: BackendChoice,
    /// Run name used in tables; defaults to the backend or model name.
    #[arg(long)]
    name: Option<String>,
    /// Run this dataset file instead of the built one (single task only).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Chat,
    Completion,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Chat => Mode::Chat,
            ModeArg::Completion => Mode::Completion,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum BackendChoice {
    Echo,
    Constant(String),
    Http,
}

impl std::str::FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock-echo" => Ok(BackendChoice::Echo),
            "http" => Ok(BackendChoice::Http),
            _ => match s.strip_prefix("mock-constant:") {
                Some(reply) => Ok(BackendChoice::Constant(reply.to_string())),
                None => Err(format!(
                    "unknown backend `{s}` (expected mock-echo, mock-constant:<reply> or http)"
                )),
            },
        }
    }
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Run manifest to score; repeatable. Default: every run in the output directory.
    #[arg(long = "run")]
    runs: Vec<PathBuf>,
    /// Dataset for a single third-party run manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    bins: Option<usize>,
    /// Add Gaussian-kernel smoothed curves to the SVG plots.
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    no_svg: bool,
    #[arg(long)]
    cache: Option<PathBuf>,
}

/// Runs the command line from the process arguments; returns the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    apply_overrides(&mut config, &cli.command);
    config.check_paths()?;

    let layout = Layout::new(&config.output_dir);
    let _lock = OutputLock::acquire(&layout)?;
    match cli.command {
        Command::Ingest(_) => commands::ingest(&config, &layout),
        Command::Split(_) => commands::split(&config, &layout),
        Command::AnnotateAffect(a) => {
            let corpora = match a.corpus {
                CorpusChoice::Coco => vec![Corpus::Coco],
                CorpusChoice::Loco => vec![Corpus::Loco],
                CorpusChoice::All => vec![Corpus::Coco, Corpus::Loco],
            };
            commands::annotate_affect(&config, &layout, &corpora, a.split, a.parallelism)
        }
        Command::Build(_) => commands::build(&config, &layout),
        Command::Run(r) => {
            let backend = match r.backend {
                BackendChoice::Echo => commands::RunBackend::Echo,
                BackendChoice::Constant(reply) => commands::RunBackend::Constant(reply),
                BackendChoice::Http => commands::RunBackend::Http,
            };
            commands::run(&config, &layout, backend, r.name, r.dataset)
        }
        Command::Score(s) => commands::score(&config, &layout, &s.runs, s.dataset),
        Command::Analyze(_) => commands::analyze(&config, &layout),
        Command::Report => commands::report(&config, &layout),
    }
}

fn apply_selection(config: &mut PipelineConfig, select: &TaskSelection) {
    if !select.tasks.is_empty() {
        config.tasks = select.tasks.clone();
    }
    if let Some(split) = select.split {
        config.split = split;
    }
    config.affect |= select.affect;
}

fn apply_overrides(config: &mut PipelineConfig, command: &Command) {
    match command {
        Command::Ingest(a) => {
            if a.coco.is_some() {
                config.coco = a.coco.clone();
            }
            if a.coco_format.is_some() {
                config.coco_format = a.coco_format;
            }
            if a.loco.is_some() {
                config.loco = a.loco.clone();
            }
        }
        Command::Split(a) => {
            if let Some(r) = a.ratios {
                config.ratios = r;
            }
            if a.coco_manifest.is_some() {
                config.coco_split_manifest = a.coco_manifest.clone();
            }
            if a.loco_manifest.is_some() {
                config.loco_split_manifest = a.loco_manifest.clone();
            }
        }
        Command::AnnotateAffect(a) => {
            if a.cache.is_some() {
                config.cache = a.cache.clone();
            }
        }
        Command::Build(a) => {
            apply_selection(config, &a.select);
            if a.cache.is_some() {
                config.cache = a.cache.clone();
            }
        }
        Command::Run(r) => {
            apply_selection(config, &r.select);
            let b = &mut config.backend;
            if let Some(v) = &r.endpoint {
                b.endpoint = v.clone();
            }
            if let Some(v) = &r.model {
                b.model = v.clone();
            }
            if let Some(v) = r.mode {
                b.mode = v.into();
            }
            if let Some(v) = r.temperature {
                b.temperature = v;
            }
            if let Some(v) = r.max_tokens {
                b.max_output_tokens = v;
            }
            if let Some(v) = r.parallelism {
                b.parallelism = v;
            }
        }
        Command::Analyze(a) => {
            if let Some(bins) = a.bins {
                config.analysis.bins = bins;
            }
            config.analysis.smooth |= a.smooth;
            if a.no_svg {
                config.analysis.svg = false;
            }
            if a.cache.is_some() {
                config.cache = a.cache.clone();
            }
        }
        Command::Score(_) | Command::Report => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_choice_parses() {
        assert_eq!("mock-echo".parse::<BackendChoice>().unwrap(), BackendChoice::Echo);
        assert_eq!(
            "mock-constant:0. Unrelated".parse::<BackendChoice>().unwrap(),
            BackendChoice::Constant("0. Unrelated".into())
        );
        assert!("gpt".parse::<BackendChoice>().is_err());
    }

    #[test]
    fn unknown_verb_is_usage_error() {
        assert_eq!(run_from(["condid", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_from(["condid", "build", "--help"]), EXIT_OK);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["condid", "build", "--task", "3,1", "--split", "dev", "--affect"]).unwrap();
        let mut config = PipelineConfig::default();
        apply_overrides(&mut config, &cli.command);
        assert_eq!(config.tasks, vec![TaskId::PerCategory, TaskId::Intention]);
        assert_eq!(config.split, SplitName::Dev);
        assert!(config.affect);
    }
}
