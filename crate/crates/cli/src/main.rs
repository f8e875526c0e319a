use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedlaw_cli::{
    cmd_project, cmd_run, cmd_sweep, fmt_f64, load_config, output_dir, parse_vector, partition_stats, CliError,
    CliResult, SweepParam,
};

/// Byzantine-robust federated learning simulator.
#[derive(Parser)]
#[command(name = "fedlaw", version)]
struct Cli {
    /// Worker threads for parallel execution (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write CSVs plus a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Base seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a config once per value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// beta, malicious_fraction, q or aggregator.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Project a vector onto the sparse capped simplex.
    Project {
        /// Comma-separated entries.
        #[arg(long, allow_hyphen_values = true)]
        input: String,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        t: f64,
    },
    /// Print per-client partition statistics as CSV.
    PartitionStats {
        #[arg(long)]
        config: PathBuf,
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Run { config, output, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = output_dir(output, &cfg)?;
            let results = cmd_run(&cfg, &out)?;
            for r in &results {
                match &r.outcome.divergence {
                    Some(d) => eprintln!("run {}: diverged at epoch {}: {}", r.run, d.epoch, d.reason),
                    None => eprintln!(
                        "run {}: final accuracy {:.4}",
                        r.run,
                        r.final_accuracy().unwrap_or(f64::NAN)
                    ),
                }
            }
        }
        Command::Sweep {
            config,
            output,
            seed,
            param,
            values,
        } => {
            let param: SweepParam = param.parse()?;
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = output_dir(output, &cfg)?;
            for row in cmd_sweep(&cfg, param, &values, &out)? {
                eprintln!(
                    "{} = {}: {:.4} +- {:.4}",
                    param.name(),
                    row.value,
                    row.final_mean,
                    row.final_std
                );
            }
        }
        Command::Project { input, s, t } => {
            let w = cmd_project(&parse_vector(&input)?, s, t)?;
            println!("{}", w.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
        }
        Command::PartitionStats { config, output, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let table = partition_stats(&cfg)?;
            match output {
                Some(path) => {
                    std::fs::write(&path, table).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
                }
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedlaw: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
