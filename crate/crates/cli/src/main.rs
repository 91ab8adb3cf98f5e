use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use mirrorquant::checks::{run_all, CheckOptions};
use mirrorquant::convex_bench::{convex_summary_csv, write_convex_csv, ConvexConfig, ConvexJobResult};
use mirrorquant::harness::{train, TrainConfig};
use mirrorquant::optimizers::epsilon_gamma;
use mirrorquant::Error;

/// Exit status for a failed invariant, bound or training run.
const EXIT_FAILURE: u8 = 1;
/// Exit status for bad flags or configuration files.
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mirrorquant", version, about = "Mirror descent for quantized networks")]
struct Cli {
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every invariant suite.
    Check {
        /// Flip the sign of the stable step (self-test of the equivalence suite).
        #[arg(long, hide = true)]
        inject_ste_bug: bool,
    },
    /// Compare averaged-iterate gaps with the convergence bound.
    Convex {
        /// JSON config; the default suite when omitted.
        config: Option<PathBuf>,
    },
    /// Train a network from a JSON config.
    Train { config: PathBuf },
    /// Smallest dual magnitude that forces tanh(B x) within eps of +-1.
    Gamma {
        #[arg(long = "B")]
        cap: f64,
        #[arg(long)]
        eps: f64,
    },
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) | Error::Domain(_) => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check { inject_ste_bug } => cmd_check(&cli, *inject_ste_bug),
        Command::Convex { config } => cmd_convex(&cli, config.as_deref()),
        Command::Train { config } => cmd_train(&cli, config),
        Command::Gamma { cap, eps } => cmd_gamma(&cli, *cap, *eps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn cmd_check(cli: &Cli, inject_ste_bug: bool) -> Result<(), Failure> {
    let opts = CheckOptions {
        seed: cli.seed.unwrap_or(0),
        inject_ste_bug,
    };
    let results = run_all(&opts);
    for r in &results {
        if !cli.quiet || !r.passed {
            println!("{r}");
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("failed suites: {}", failed.join(", "))))
    }
}

fn thread_count() -> Result<usize, Failure> {
    match std::env::var("MIRRORQUANT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::Usage(format!("MIRRORQUANT_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn cmd_convex(cli: &Cli, config: Option<&Path>) -> Result<(), Failure> {
    let config = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            ConvexConfig::from_json(&text)?
        }
        None => ConvexConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(Error::from)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Failure::Run(e.to_string()))?;
    let results: Vec<ConvexJobResult> = pool.install(|| {
        config
            .jobs()
            .par_iter()
            .map(|job| job.run())
            .collect::<mirrorquant::Result<_>>()
    })?;
    for res in &results {
        write_convex_csv(&out.join(res.file_name()), &res.reports)?;
    }
    let summary = convex_summary_csv(&results);
    fs::write(out.join("convex_summary.csv"), &summary).map_err(Error::from)?;
    if !cli.quiet {
        print!("{summary}");
    }
    let violations = results
        .iter()
        .flat_map(|r| r.reports.iter())
        .filter(|r| !r.within_bound())
        .count();
    if violations > 0 {
        return Err(Failure::Run(format!("{violations} gap(s) above the bound")));
    }
    Ok(())
}

fn cmd_train(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut config = TrainConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    if config.output.is_none() {
        config.output = Some(PathBuf::from("out"));
    }
    let outcome = train(&config)?;
    if !cli.quiet {
        let s = &outcome.summary;
        println!(
            "iterations {} best_iter {} float_test_acc {} quantized_test_acc {}",
            s.iterations, s.best_iter, s.float_test_acc, s.quantized_test_acc
        );
        if let Some(dir) = &config.output {
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn cmd_gamma(cli: &Cli, cap: f64, eps: f64) -> Result<(), Failure> {
    let gamma = epsilon_gamma(cap, eps)?;
    if cli.quiet {
        println!("{gamma}");
    } else {
        println!("gamma = {gamma}");
        println!("every dual |x| > {gamma} gives 1 - |tanh({cap} x)| < {eps}");
    }
    Ok(())
}
