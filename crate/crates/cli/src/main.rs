use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use lcr_core::exec::Execution;
use lcr_core::experiment::{compile_text, derived_fixtures, oracle_check, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "lcr", version, about = "Constrained sampling from autoregressive models by local resampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a constraint file into a circuit and print its statistics.
    Compile {
        constraint: PathBuf,
        /// Comma-separated position order, e.g. `2,0,1`.
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        /// Where to write the circuit; omitted means no circuit file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured method and write the results CSV.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Results CSV path; stdout when omitted. Timings go to `<out>.timing.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable the thread pool.
        #[arg(long)]
        sequential: bool,
    },
    /// Check sampler output and circuit queries against brute-force enumeration.
    OracleCheck {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the derived constants used by the test suite.
    Fixtures {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    temp: Option<f64>,
    /// Per-position truncation; `none` disables it.
    #[arg(long)]
    top_k: Option<String>,
}

impl Overrides {
    fn apply(&self, path: &Path) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(path)
            .with_context(|| format!("loading {}", path.display()))?
            .with_env_seed()?;
        if let Some(s) = self.seed {
            cfg = cfg.with("seed", &s.to_string())?;
        }
        if let Some(n) = self.particles {
            cfg = cfg.with("particles", &n.to_string())?;
        }
        if let Some(t) = self.temp {
            cfg = cfg.with("temperature", &t.to_string())?;
        }
        if let Some(k) = &self.top_k {
            cfg = cfg.with("top_k", k)?;
        }
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Compile { constraint, order, out } => {
            let text = fs::read_to_string(&constraint)
                .with_context(|| format!("reading {}", constraint.display()))?;
            let start = Instant::now();
            let s = compile_text(&text, order)
                .with_context(|| format!("compiling {}", constraint.display()))?;
            let elapsed = start.elapsed();
            let p = &s.properties;
            println!("nodes {}", p.nodes);
            println!("edges {}", p.edges);
            println!("depth {}", p.depth);
            println!("decomposable {}", p.decomposable);
            println!("smooth {}", p.smooth);
            println!("deterministic {}", p.deterministic);
            println!("models {}", s.log_model_count.exp().round());
            println!("compile_seconds {:.3}", elapsed.as_secs_f64());
            if let Some(path) = out {
                fs::write(&path, s.circuit.to_text()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, overrides, out, sequential } => {
            let cfg = overrides.apply(&config)?;
            let exec = if sequential { Execution::Sequential } else { Execution::default() };
            let report = run_experiment(&cfg, exec)?;
            emit(out.as_deref(), &report.to_csv())?;
            eprint!("{}", report.timing_csv());
            if let Some(p) = &out {
                let mut t = p.clone().into_os_string();
                t.push(".timing.csv");
                fs::write(&t, report.timing_csv())?;
            }
            if report.had_failures() {
                eprintln!("error: some LCR runs ended with every particle dead");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck { config, overrides, out } => {
            let cfg = overrides.apply(&config)?;
            let report = oracle_check(&cfg, Execution::default())?;
            emit(out.as_deref(), &report.to_csv())?;
            let failed = report.failed();
            if failed.is_empty() {
                eprintln!("oracle check passed ({} checks)", report.checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                for c in failed {
                    eprintln!(
                        "FAILED {} on instance {}: {} {} {}",
                        c.name, c.instance, c.measured, c.relation, c.threshold
                    );
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Fixtures { out } => {
            emit(out.as_deref(), &derived_fixtures()?.to_csv())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
