use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use fsd_harness::bench::{bench, bench_match_decide};
use fsd_harness::{generate, oracle_check, parse_scenario, render_metrics, replay, Config, Divergence, MetricsFormat};

#[derive(Parser)]
#[command(name = "fsd", about = "Replay, check and benchmark the geo-matching pipeline")]
struct Cli {
    /// Format for metrics written to stderr.
    #[arg(long, global = true, default_value = "csv")]
    metrics_format: MetricsFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a scenario on a simulated clock and print the action log.
    Replay {
        scenario: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the log here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pipeline concurrently against the wall clock.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Also run with twice the candidates and report both.
        #[arg(long)]
        scaling: bool,
        /// Operations for the single-threaded match-and-decide measurement.
        #[arg(long, default_value_t = 200_000)]
        match_ops: usize,
    },
    /// Compare the pipeline with brute-force matching and a reference model.
    Oracle {
        /// Scenario file; a generated scenario is used when absent.
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Config::parse(&text)?)
        }
        None => Ok(Config::default()),
    }
}

fn load_scenario(path: &PathBuf) -> Result<Vec<fsd_harness::ScenarioEvent>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    let fmt = cli.metrics_format;
    match cli.command {
        Command::Replay { scenario, config, out } => {
            let cfg = load_config(&config)?;
            let report = replay(&load_scenario(&scenario)?, &cfg)?;
            match out {
                Some(p) => fs::write(&p, report.log_text()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", report.log_text()),
            }
            eprint!("{}", render_metrics(&report.metrics(), fmt));
            Ok(report.conservation.holds())
        }
        Command::Bench {
            config,
            seconds,
            seed,
            scaling,
            match_ops,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.generator.seed = s;
            }
            let mut runs = vec![cfg.clone()];
            if scaling {
                let mut doubled = cfg.clone();
                doubled.generator.candidates *= 2;
                runs.push(doubled);
            }
            let mut ok = true;
            for c in &runs {
                let report = bench(c, seconds)?;
                let mut metrics = vec![fsd_harness::Metric::new(
                    "bench.candidates",
                    c.generator.candidates as f64,
                    "count",
                )];
                metrics.extend(report.metrics());
                metrics.extend(bench_match_decide(c, c.generator.candidates, match_ops).metrics());
                print!("{}", render_metrics(&metrics, fmt));
                ok &= report.conservation.holds();
            }
            Ok(ok)
        }
        Command::Oracle { scenario, seed, config } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.generator.seed = s;
            }
            let events = match &scenario {
                Some(p) => load_scenario(p)?,
                None => generate(&cfg.generator),
            };
            let r = oracle_check(&events, &cfg)?;
            match &r.divergence {
                None => println!("pass: {} match queries, {} log lines agree", r.match_queries, r.log_lines),
                Some(Divergence::Match { event, detail }) => println!("FAIL at event {}: {detail}", event + 1),
                Some(Divergence::Log { line, pipeline, oracle }) => println!(
                    "FAIL at log line {}: pipeline {:?}, oracle {:?}",
                    line + 1,
                    pipeline.as_deref().unwrap_or("<end>"),
                    oracle.as_deref().unwrap_or("<end>")
                ),
            }
            Ok(r.passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
