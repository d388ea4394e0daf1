//! `vireid`: generate synthetic data, train, evaluate, run ablations and
//! check gradients.
//!
//! Exit codes: 0 success, 1 usage or configuration error (nothing written),
//! 2 failure while running.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod cmd;
mod failure;
mod runconf;

#[derive(Parser, Debug)]
#[command(name = "vireid", version, about = "Cross-modality metric learning on synthetic re-identification data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset file.
    Generate(GenerateArgs),
    /// Train a model; all outputs go to a new run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train config variants over several seeds and tabulate final metrics.
    Ablate(AblateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Start from a named generator preset; other flags override it.
    #[arg(long, value_enum)]
    pub preset: Option<GenPreset>,
    /// Number of identities.
    #[arg(long)]
    pub ids: Option<usize>,
    /// Samples per identity and modality.
    #[arg(long)]
    pub per_modality: Option<usize>,
    #[arg(long)]
    pub shared_dims: Option<usize>,
    #[arg(long)]
    pub color_dims: Option<usize>,
    #[arg(long)]
    pub modality_dims: Option<usize>,
    /// Modality gap strength.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Per-sample noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub color_scale: Option<f64>,
    #[arg(long)]
    pub prototype_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a held-out set of new identities from the same generator.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GenPreset {
    Default,
    Benchmark,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file (flat `key = value`). Defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set stage1_epochs=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Training data; overrides `data.train`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out evaluation data; overrides `data.eval`.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Run directory; must not exist or be empty.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Do not print per-epoch lines.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = DirectionArg::T2v)]
    pub direction: DirectionArg,
    /// Write `eval_<direction>.txt` and `eval_<direction>_table.csv` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    /// Infrared queries against a visible gallery.
    T2v,
    /// Visible queries against an infrared gallery.
    V2t,
    Both,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Built-in variant sets. Repeatable.
    #[arg(long, value_enum)]
    pub preset: Vec<AblatePreset>,
    /// Custom variant `name:key=value,key=value`. Repeatable.
    #[arg(long)]
    pub variant: Vec<String>,
    /// Seeds; each seed draws fresh data (benchmark) and initialization.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Base config. Without one the benchmark recipe is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Fixed training data instead of the per-seed benchmark split.
    #[arg(long, requires = "eval_data")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub eval_data: Option<PathBuf>,
    /// Use the per-seed benchmark split even if the config names data files.
    #[arg(long, conflicts_with = "data")]
    pub benchmark: bool,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AblatePreset {
    Modality,
    Losses,
    Lambda1,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random instances per component.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Seed of the instance generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Restrict to these components. Repeatable.
    #[arg(long)]
    pub component: Vec<String>,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FaultArg {
    MselSignFlip,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd::generate::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Ablate(a) => cmd::ablate::run(a),
        Command::Gradcheck(a) => cmd::gradcheck::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = match f {
                failure::Failure::Usage(_) => "error",
                failure::Failure::Runtime(_) => "failed",
            };
            eprintln!("vireid: {kind}: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
