use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod plot;

/// Train, evaluate and compare communicating multi-agent policies across agent counts.
#[derive(Parser, Debug)]
#[command(name = "metacpr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run per seed (and per config for multi-run variants).
    Train(TrainArgs),
    /// Zero-shot evaluation of a trained run on unseen agent counts.
    Eval(EvalArgs),
    /// Train, evaluate and compare several variants over several seeds.
    Ablate(AblateArgs),
    /// Export flattened trajectories for a 2-D projection.
    Embed(EmbedArgs),
    /// Learning curves with standard-error bands from metrics logs.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct OutArg {
    /// Output root; $METACPR_OUT when set, else the config's `run.out_dir`, else ./runs.
    #[arg(long, env = "METACPR_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seeds; repeatable.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Derive this variant from the config (which must describe the full method).
    #[arg(long)]
    pub variant: Option<String>,
    #[command(flatten)]
    pub out: OutArg,
    /// Continue from the run directory's latest checkpoint if present.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many updates in this invocation.
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory containing `checkpoint.json`.
    #[arg(long)]
    pub run: PathBuf,
    /// Comma-separated agent counts; defaults to the run's adaptation counts.
    #[arg(long, value_delimiter = ',')]
    pub adapt: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Discount applied to reported returns.
    #[arg(long, default_value_t = 1.0)]
    pub discount: f64,
    /// Allow counts the run was trained on (oracle baselines).
    #[arg(long)]
    pub in_distribution: bool,
    /// Report file; defaults to `<run>/eval.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated variant names; defaults to the config's `run.variants`.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Comma-separated agent counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub greedy: bool,
    /// Matrix file; defaults to `<run>/embeddings.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Metrics logs (`metrics.jsonl`); runs of the same variant are pooled as seeds.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Moving-average window in updates.
    #[arg(long, default_value_t = 10)]
    pub smooth: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Embed(a) => commands::embed(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
