use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "evseg", version, about = "Evidential semi-supervised tumor segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom cases.
    Gen(GenArgs),
    /// Train a model on a directory of cases.
    Train(TrainArgs),
    /// Evaluate a model and write a per-case metrics report.
    Eval(EvalArgs),
    /// Export the conflict map of one case as a PGM image.
    Uncertainty(UncertaintyArgs),
    /// Write an untrained model (debugging aid).
    #[command(hide = true)]
    Init(InitArgs),
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 160)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Supervised,
    Semi,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Semi)]
    pub mode: Mode,
    #[arg(long = "labeled-frac", default_value_t = 0.5)]
    pub labeled_frac: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long = "lr-backbone", default_value_t = 0.001)]
    pub lr_backbone: f64,
    #[arg(long = "lr-enn", default_value_t = 0.01)]
    pub lr_enn: f64,
    #[arg(long, default_value_t = 8)]
    pub prototypes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub fusion: Switch,
    /// Score the ground truth against itself instead of the model output.
    #[arg(long = "debug-truth-as-prediction", hide = true)]
    pub truth_as_prediction: bool,
}

#[derive(Args)]
pub struct UncertaintyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub prototypes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Make the evidential head ignore every input (all mass on the frame).
    #[arg(long = "vacuous-enn")]
    pub vacuous_enn: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Uncertainty(a) => commands::uncertainty(&a),
        Command::Init(a) => commands::init(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("evseg: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
