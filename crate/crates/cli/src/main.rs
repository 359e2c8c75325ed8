use apcrw::config::{config_from_flags, load_config, ExperimentKind, Overrides};
use apcrw::harness::run_experiment;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Monte Carlo experiments for a walker driven by a Poisson cloud of lazy
/// drifted random walks.
#[derive(Parser)]
#[command(name = "apcrw", version)]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "APCRW_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config, or a manifest.json to replay.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Number of replicas (overrides the config).
    #[arg(long, value_name = "N")]
    replicas: Option<u64>,

    /// Output directory [default: out/<experiment>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Speed estimate from end displacements.
    Speed(Common),
    /// Speed over a grid of densities and refresh periods.
    SpeedCurve(Common),
    /// Many-to-one coupling of two finite-range walkers.
    Coupling(Common),
    /// Convergence of the speed along dyadic refresh periods.
    Dyadic(Common),
    /// Frequencies of large deviations of X_n / n.
    Deviation(Common),
    /// Frequencies of falling behind a line of given slope.
    Ballisticity(Common),
    /// Regeneration-based speed estimate.
    Renewal(Common),
    /// Single-site marginal of the evolved environment.
    Stationarity(Common),
    /// Dump of an exact heat kernel.
    Kernel(Common),
    /// Soft local time domination and endpoint law.
    Slt(Common),
    /// Empirical checks of the environment conditions.
    VerifyConditions(Common),
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        use ExperimentKind as K;
        match self {
            Command::Speed(c) => (K::Speed, c),
            Command::SpeedCurve(c) => (K::SpeedCurve, c),
            Command::Coupling(c) => (K::Coupling, c),
            Command::Dyadic(c) => (K::Dyadic, c),
            Command::Deviation(c) => (K::Deviation, c),
            Command::Ballisticity(c) => (K::Ballisticity, c),
            Command::Renewal(c) => (K::Renewal, c),
            Command::Stationarity(c) => (K::Stationarity, c),
            Command::Kernel(c) => (K::Kernel, c),
            Command::Slt(c) => (K::Slt, c),
            Command::VerifyConditions(c) => (K::VerifyConditions, c),
        }
    }
}

fn run(cli: Cli) -> apcrw::Result<()> {
    if let Some(n) = cli.threads {
        apcrw::par::init_threads(n)?;
    }
    let (kind, common) = cli.command.split();
    let overrides = Overrides {
        experiment: Some(kind),
        seed: common.seed,
        replicas: common.replicas,
    };
    let cfg = match &common.config {
        Some(path) => load_config(path, &overrides)?,
        None => config_from_flags(&overrides)?,
    };
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    let out = common
        .out
        .unwrap_or_else(|| PathBuf::from("out").join(kind.as_str()));
    let manifest = run_experiment(&cfg, &out)?;
    for w in manifest.warnings.iter().skip(cfg.warnings.len()) {
        eprintln!("warning: {w}");
    }
    for line in &manifest.summary {
        println!("{line}");
    }
    println!(
        "wrote {} files to {} in {:.1}s",
        manifest.outputs.len() + 1,
        out.display(),
        manifest.wall_time_s
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
