//! `loadcast` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use loadcast::pipeline::Method;
use loadcast::{Error, ErrorKind, Result};

use config::{parse_index_list, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "loadcast", version, about = "Two-stage probabilistic load forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a synthetic hourly dataset with DC power flow.
    Simulate,
    /// Run the two-stage forecast over customers and days.
    Forecast,
    /// Sensitivity report for one customer and day.
    Gsa,
    /// Aggregate forecast directories into summary tables.
    Evaluate,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args, Debug, Default)]
struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `8-bus`, `14-bus` or a system TOML file.
    #[arg(long, global = true)]
    system: Option<String>,
    /// Horizon in days for `simulate`; prediction days (`100-119`) otherwise.
    #[arg(long, global = true)]
    days: Option<String>,
    /// Customer buses, e.g. `0,2-4`.
    #[arg(long, global = true)]
    customers: Option<String>,
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true, value_enum)]
    gsa: Option<Switch>,
    /// Central interval probability.
    #[arg(long, global = true)]
    level: Option<f64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Forecast directories for `evaluate`.
    #[arg(global = true)]
    inputs: Vec<PathBuf>,
}

fn resolve(command: Command, flags: &Common) -> Result<RunConfig> {
    let mut c = match &flags.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = flags.seed {
        c.seed = s;
    }
    c.forecast.pipeline.seed = c.seed;
    if let Some(s) = &flags.system {
        c.system = s.clone();
    }
    if let Some(d) = &flags.days {
        if command == Command::Simulate {
            c.simulate.days = d
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("--days for simulate is a day count, got {d:?}")))?;
        } else {
            c.forecast.days = parse_index_list(d)?;
        }
    }
    if let Some(s) = &flags.customers {
        c.forecast.customers = parse_index_list(s)?;
    }
    if let Some(m) = flags.method {
        c.forecast.pipeline.method = m;
    }
    if let Some(g) = flags.gsa {
        c.forecast.pipeline.gsa.enabled = g == Switch::On;
    }
    if let Some(l) = flags.level {
        c.forecast.pipeline.second.interval_level = l;
    }
    if let Some(j) = flags.jobs {
        c.jobs = j;
    }
    if let Some(o) = &flags.out {
        c.out = o.clone();
    }
    if !flags.inputs.is_empty() {
        if command != Command::Evaluate {
            return Err(Error::Config("positional inputs are only accepted by evaluate".into()));
        }
        c.evaluate.inputs = flags.inputs.clone();
    }
    if !(c.forecast.pipeline.second.interval_level > 0.0 && c.forecast.pipeline.second.interval_level < 1.0) {
        return Err(Error::Config("--level must lie in (0, 1)".into()));
    }
    Ok(c)
}

fn run(cli: &Cli) -> Result<()> {
    let config = resolve(cli.command, &cli.common)?;
    if config.jobs > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build_global();
    }
    match cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::Forecast => commands::forecast(&config),
        Command::Gsa => commands::gsa(&config),
        Command::Evaluate => commands::evaluate(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}
