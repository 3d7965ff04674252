use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use telegraph_cli::{catalog, config, execute, CliError};

#[derive(Parser)]
#[command(name = "tgm", version, about = "Jump-telegraph experiments: volatility curves, moments, densities, martingale checks and pricing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Configuration file, or the name of a bundled experiment.
    config: String,
    /// Override a configuration entry, e.g. `--set task.seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for the CSV files and the report.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Replaces `task.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run any experiment configuration.
    Run(RunArgs),
    /// Simulate price paths.
    Simulate(RunArgs),
    /// Mean and variance curves, optionally against Monte Carlo.
    Moments(RunArgs),
    /// Density of X(t) with its no-switch atom.
    Density(RunArgs),
    /// Martingale residual of a regime and sojourn laws.
    MartingaleCheck(RunArgs),
    /// Check a change of switching rates by reweighting.
    MeasureCheck(RunArgs),
    /// Price a European claim by PDE, fundamental equation and Monte Carlo.
    Price(RunArgs),
    /// Historical volatility curves and their limits.
    Hv(RunArgs),
    /// List the bundled experiments.
    List,
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("TGM_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Parse(format!("TGM_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(CliError::Parse("TGM_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn list() -> Result<(), CliError> {
    for (name, text) in catalog::BUNDLED {
        let cfg = config::parse(text, &[], None)?;
        let group = if catalog::is_figure(name) { "figure" } else { "validation" };
        println!("{name}\t{group}\t{}\t{}", cfg.task.kind(), cfg.description);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    configure_threads()?;
    let (args, kind) = match cli.command {
        Command::List => return list().map(|_| true),
        Command::Run(a) => (a, None),
        Command::Simulate(a) => (a, Some("simulate")),
        Command::Moments(a) => (a, Some("moments")),
        Command::Density(a) => (a, Some("density")),
        Command::MartingaleCheck(a) => (a, Some("martingale-check")),
        Command::MeasureCheck(a) => (a, Some("measure-check")),
        Command::Price(a) => (a, Some("price")),
        Command::Hv(a) => (a, Some("hv")),
    };
    let report = execute(&args.config, &args.overrides, args.seed, &args.out, kind)?;
    println!("{}", report.summary_line());
    if let Some(l) = report.results.get("limits") {
        if !l.is_null() {
            println!("limits: {l}");
        }
    }
    Ok(report.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("tgm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
