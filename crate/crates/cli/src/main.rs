use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod error;
mod output;

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "probekit",
    version,
    about = "Bias extractability probing and toy debiasing pipelines"
)]
struct Cli {
    /// Worker threads for independent runs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a balanced probing dataset from one split of an NLU JSONL file.
    BuildDataset(BuildDatasetArgs),
    /// Measure online-code compression of a probing task over representations.
    Probe(ProbeArgs),
    /// Train toy models under a debiasing objective and probe them for the bias.
    Toy(ToyArgs),
    /// Correlate bias extractability with robustness over model records.
    Correlate(CorrelateArgs),
    /// Print the header of an RPRB representation file.
    ExportInfo(ExportInfoArgs),
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// NLU JSONL file.
    #[arg(long)]
    pub input: PathBuf,
    /// snli, mnli or fever.
    #[arg(long)]
    pub schema: probekit::Schema,
    /// train, valid (or dev) or test.
    #[arg(long)]
    pub split: probekit::Split,
    /// negwords, overlap or subsequence.
    #[arg(long)]
    pub task: probekit::ProbingProperty,
    #[arg(long, env = "PROBEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Directory for `<schema>_<task>_<split>.jsonl` and its manifest.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// One RPRB file holding the rows of every split.
    #[arg(long, conflicts_with_all = ["train_reprs", "valid_reprs", "test_reprs"])]
    pub reprs: Option<PathBuf>,
    /// RPRB file for the train split (per-split layout).
    #[arg(long, requires = "train")]
    pub train_reprs: Option<PathBuf>,
    #[arg(long)]
    pub valid_reprs: Option<PathBuf>,
    #[arg(long)]
    pub test_reprs: Option<PathBuf>,
    /// Probing JSONL for the train split.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Online-code configuration JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, env = "PROBEKIT_SEED")]
    pub seed: Option<u64>,
    /// Code every block with the zero probe.
    #[arg(long)]
    pub diagnostic_uniform: bool,
    /// Report JSON path.
    #[arg(long, default_value = "probe_report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct ToyArgs {
    #[command(subcommand)]
    pub sweep: Option<ToyCommand>,
    /// ce, dfl, poe or confreg.
    #[arg(long, default_value = "ce")]
    pub objective: String,
    /// DFL focusing parameter (default 2).
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub common: ToyCommon,
}

#[derive(Debug, Subcommand)]
pub enum ToyCommand {
    /// DFL runs over several γ values plus the CE baseline.
    SweepGamma(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,2,3,4",
        allow_negative_numbers = true
    )]
    pub gammas: Vec<f64>,
    #[command(flatten)]
    pub common: ToyCommon,
}

#[derive(Debug, Args)]
pub struct ToyCommon {
    /// Number of seeds; runs use `seed, seed+1, ...`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// First training seed.
    #[arg(long, env = "PROBEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Train the bias model jointly with the main model.
    #[arg(long)]
    pub end_to_end: bool,
    /// explicit, weak or subset.
    #[arg(long)]
    pub bias_model: Option<probekit::lab::BiasModelKind>,
    /// Toy run configuration JSON (data, training and probe settings).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "toy_runs")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Records CSV files; rows are concatenated.
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "bias,dataset")]
    pub group_by: Vec<probekit::analysis::GroupKey>,
    /// median, mean or per-seed.
    #[arg(long, default_value = "median")]
    pub aggregation: probekit::analysis::Aggregation,
    /// γ values the sweep must cover; by default every γ found in DFL records.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportInfoArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Decode and validate the whole payload, not just the header.
    #[arg(long)]
    pub check: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::new(error::code::OTHER, e.to_string()))?;
    }
    match cli.command {
        Command::BuildDataset(args) => commands::build_dataset(&args),
        Command::Probe(args) => commands::probe(&args),
        Command::Toy(args) => match &args.sweep {
            Some(ToyCommand::SweepGamma(sweep)) => commands::toy_sweep(sweep),
            None => commands::toy(&args),
        },
        Command::Correlate(args) => commands::correlate(&args),
        Command::ExportInfo(args) => commands::export_info(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors share the generic failure code; 2 is reserved for I/O.
            return if e.use_stderr() {
                ExitCode::from(error::code::OTHER)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
