use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use gustpp_cli::config::{parse_methods, RunConfig};
use gustpp_cli::{exit_code, pipeline};

#[derive(Parser, Debug)]
#[command(name = "gustpp", version, about = "Postprocessing of wind gust ensemble forecasts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated subset of epc,raw,emos,mbm,idr,emos-gb,qrf,drn,bqn,hen.
    #[arg(long, global = true)]
    methods: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Draw a synthetic scenario into `<out>/data`.
    Generate,
    /// Fit the selected methods and write `<out>/models`.
    Train,
    /// Write 125 test-year quantiles per case to `<out>/forecasts`.
    Predict,
    /// Scores and calibration of the test year in `<out>/reports`.
    Evaluate,
    /// DM tests with BH correction and the best method per station.
    Compare,
    /// Feature importance of the predictor-based methods.
    Importance,
    /// generate (unless a data file is configured), train, predict,
    /// evaluate, compare and importance.
    Run,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &cli.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.out.clone_from(o);
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    cfg.apply_seed();
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global()?;
    }
    match cli.command {
        Command::Generate => pipeline::generate(&cfg),
        Command::Train => pipeline::train(&cfg),
        Command::Predict => pipeline::predict(&cfg),
        Command::Evaluate => pipeline::evaluate(&cfg),
        Command::Compare => pipeline::compare(&cfg),
        Command::Importance => pipeline::importance(&cfg),
        Command::Run => pipeline::run_all(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
