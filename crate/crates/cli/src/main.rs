use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use ttosc_core::harness::checks::{bench, oracle_suites};
use ttosc_core::harness::experiments::{plotdata, sweep, ExperimentSpec, SweepAxis};
use ttosc_core::harness::{episode_trace, run, RunOptions, Scheme};
use ttosc_core::workload::write_trace;
use ttosc_core::{ConfigFile, Error};

/// Two-timescale edge computing simulator.
#[derive(Parser)]
#[command(name = "ttosc", version)]
struct Cli {
    /// JSON configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Configuration helpers.
    #[command(subcommand)]
    Config(ConfigCommand),
    /// Train and evaluate one scheme.
    Run(RunArgs),
    /// Repeat runs over a parameter axis.
    Sweep(SweepArgs),
    /// Time slot scheduling and deployment steps.
    Bench(BenchArgs),
    /// Compare the solvers against brute-force references.
    OracleCheck(OracleArgs),
    /// Aggregate run outputs into plot tables.
    Plotdata(PlotArgs),
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Write the default configuration.
    Init {
        /// Destination; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// ttosc, cloud, popularity, greedy or random.
    #[arg(long, default_value = "ttosc")]
    scheme: String,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    eval_episodes: usize,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSVs and checkpoints.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write per-service delays.
    #[arg(long)]
    service_delays: bool,
    /// Also write the first episode's arrivals as `trace.csv`.
    #[arg(long)]
    trace: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "ttosc,cloud,popularity,greedy,random")]
    schemes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 10)]
    eval_episodes: usize,
    #[arg(long, short, default_value = "sweep-out")]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Episodes run before timing starts.
    #[arg(long, default_value_t = 4)]
    warmup: usize,
    #[arg(long, default_value_t = 2)]
    episodes: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short, default_value = "plots")]
    output: PathBuf,
    /// Sliding window for reward curves.
    #[arg(long, default_value_t = 100)]
    window: usize,
}

/// Signals that a check ran but did not pass.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ConfigFile::default()),
    }
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_config(cmd: ConfigCommand) -> anyhow::Result<()> {
    match cmd {
        ConfigCommand::Init { output, force } => {
            let json = ConfigFile::default().to_json()?;
            match output {
                Some(path) => {
                    if path.exists() && !force {
                        return Err(Error::InvalidArgument(format!(
                            "{} exists; pass --force to overwrite",
                            path.display()
                        ))
                        .into());
                    }
                    std::fs::write(&path, json + "\n").map_err(Error::from)?;
                    eprintln!("wrote {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
    }
}

fn cmd_run(config: Option<&Path>, args: RunArgs) -> anyhow::Result<()> {
    let mut file = load_config(config)?;
    if let Some(seed) = args.seed {
        file.seed = seed;
    }
    let cfg = file.resolve()?;
    let scheme: Scheme = args.scheme.parse()?;
    let opts = RunOptions {
        eval_episodes: args.eval_episodes,
        record_service_delays: args.service_delays,
        ..RunOptions::new(scheme, args.episodes)
    };
    let quiet = args.quiet;
    let out = run(&cfg, &opts, &mut |e| {
        if !quiet {
            eprintln!(
                "episode {:>5} {:>5} eps {:.3} reward {:.5} delay {}",
                e.episode,
                format!("{:?}", e.phase).to_lowercase(),
                e.epsilon,
                e.mean_reward,
                e.mean_delay.map_or("-".into(), |d| format!("{d:.5}")),
            );
        }
    })?;
    if let Some(dir) = &args.output {
        out.write_dir(dir)?;
        file.save(dir.join("config.json"))?;
        if args.trace {
            let trace = episode_trace(&cfg, 0)?;
            let writer = std::fs::File::create(dir.join("trace.csv")).map_err(Error::from)?;
            write_trace(writer, &trace)?;
        }
    }
    print_json(&json!({
        "scheme": scheme.name(),
        "seed": cfg.seed,
        "episodes": args.episodes,
        "eval_episodes": args.eval_episodes,
        "mean_delay": out.metrics.summary_delay(),
        "final_reward": out.metrics.episodes.last().map(|e| e.mean_reward),
    }))
}

fn cmd_sweep(config: Option<&Path>, args: SweepArgs) -> anyhow::Result<()> {
    let file = load_config(config)?;
    let schemes = args
        .schemes
        .iter()
        .map(|s| s.parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()?;
    let spec = ExperimentSpec {
        schemes,
        episodes: args.episodes,
        eval_episodes: args.eval_episodes,
        axis: Some(args.axis.parse::<SweepAxis>()?),
        values: args.values,
        seeds: args.seeds,
        output: args.output,
    };
    let rows = sweep(&file, &spec, &mut |r| {
        eprintln!(
            "{}={} {} seed {}: delay {}",
            r.axis,
            r.value,
            r.scheme,
            r.seed,
            r.mean_delay.map_or("-".into(), |d| format!("{d:.5}"))
        );
    })?;
    print_json(&json!({
        "runs": rows.len(),
        "summary": spec.output.join("summary.csv"),
    }))
}

fn cmd_bench(config: Option<&Path>, args: BenchArgs) -> anyhow::Result<()> {
    let cfg = load_config(config)?.resolve()?;
    let report = bench(&cfg, args.warmup, args.episodes)?;
    print_json(&serde_json::to_value(report)?)
}

fn cmd_oracle(args: OracleArgs) -> anyhow::Result<()> {
    let reports = oracle_suites(args.seed)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    print_json(&serde_json::to_value(&reports)?)?;
    if !failed.is_empty() {
        bail!(CheckFailed(format!("failed suites: {}", failed.join(", "))));
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> anyhow::Result<()> {
    let written = plotdata(&args.input, &args.output, args.window)?;
    print_json(&json!({ "written": written }))
}

/// Exit code and machine-readable category for an error.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return (10, "check-failed");
    }
    match err.downcast_ref::<Error>() {
        Some(e) => {
            let code = match e {
                Error::InvalidArgument(_) => 2,
                Error::Config(_) => 3,
                Error::Io(_) => 4,
                Error::Csv(_) | Error::Json(_) => 5,
                Error::Dimension(_) => 6,
                Error::Infeasible(_) => 7,
                Error::Numerical(_) => 8,
                Error::TooLarge(_) => 9,
            };
            (code, e.category())
        }
        None => (1, "internal"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Config(cmd) => cmd_config(cmd),
        Command::Run(args) => cmd_run(config, args),
        Command::Sweep(args) => cmd_sweep(config, args),
        Command::Bench(args) => cmd_bench(config, args),
        Command::OracleCheck(args) => cmd_oracle(args),
        Command::Plotdata(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, category) = classify(&err);
            eprintln!(
                "{}",
                json!({ "error": category, "message": format!("{err:#}") })
            );
            ExitCode::from(code)
        }
    }
}
