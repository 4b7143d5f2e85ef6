use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use contextguard::config::{resolve_config, Config};
use contextguard::endpoint::HttpEndpoint;
use contextguard_bench::corpus::{self, read_jsonl, write_jsonl, BenchmarkSample, GenSettings};
use contextguard_bench::judge::{self, Judge, Pair};
use contextguard_bench::report;
use contextguard_bench::runner::{self, BackendChoice, Mode, RunOptions, RunRecord};
use contextguard_bench::{attack, scenarios};

/// Benchmark harness: corpus generation, runs, reports and judging.
#[derive(Debug, Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Paper40,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a corpus.
    Gen {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Preset::Paper40)]
        preset: Preset,
        /// Multiply the per-quadrant sample counts.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a corpus in guarded or baseline mode.
    Run {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = BackendChoice::Extractive)]
        backend: BackendChoice,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Configuration file; defaults to the built-in one.
        #[arg(long, env = "CONTEXTGUARD_CONFIG")]
        config: Option<PathBuf>,
        /// Send to the configured endpoints instead of in-process mocks.
        #[arg(long)]
        live: bool,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Aggregate raw results into report.csv and quadrants.csv.
    Report {
        raw: PathBuf,
        #[arg(short, long, default_value = "report.csv")]
        output: PathBuf,
        /// Defaults to quadrants.csv next to the report.
        #[arg(long)]
        quadrants: Option<PathBuf>,
    },
    /// Join a baseline and a guarded run into judge pairs.
    Pair {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        guarded: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Tally judge preferences over pairs.
    Judge {
        pairs: PathBuf,
        /// `mock` or the URL of a chat-completion endpoint.
        #[arg(long, default_value = "mock")]
        judge: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Decomposed log-triage cost scenario.
    Triage {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = scenarios::TRIAGE_SAMPLES)]
        samples: usize,
    },
    /// Long session under the memory budget.
    Lifo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = scenarios::LIFO_TURNS)]
        turns: usize,
    },
    /// Memory extraction attack against configured endpoints.
    Attack {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = "CONTEXTGUARD_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn load<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn save<T: serde::Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_jsonl(items, BufWriter::new(f))?;
    Ok(())
}

fn config(path: Option<&Path>) -> anyhow::Result<Config> {
    Ok(resolve_config(path)?)
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Gen {
            seed,
            preset: Preset::Paper40,
            scale,
            output,
        } => {
            let settings = GenSettings::paper40().scaled(scale);
            let samples = corpus::generate(seed, &settings);
            corpus::self_check(&samples, &settings)?;
            save(&output, &samples)?;
            let secrets: usize = samples.iter().map(|s| s.injected_secrets.len()).sum();
            eprintln!(
                "{} samples, {secrets} secrets -> {}",
                samples.len(),
                output.display()
            );
        }
        Cmd::Run {
            mode,
            backend,
            corpus,
            output,
            config: cfg,
            live,
            workers,
        } => {
            let samples: Vec<BenchmarkSample> = load(&corpus)?;
            if samples.is_empty() {
                bail!("corpus {} is empty", corpus.display());
            }
            let mut opts = RunOptions::new(mode, backend);
            opts.config = config(cfg.as_deref())?;
            opts.live = live;
            opts.workers = workers;
            let start = Instant::now();
            let records = runner::run(&samples, &opts)?;
            save(&output, &records)?;
            let failed = records
                .iter()
                .filter(|r| r.status == runner::Status::Failed)
                .count();
            eprintln!(
                "{} rows ({failed} failed) in {:.2}s -> {}",
                records.len(),
                start.elapsed().as_secs_f64(),
                output.display()
            );
        }
        Cmd::Report {
            raw,
            output,
            quadrants,
        } => {
            let records: Vec<RunRecord> = load(&raw)?;
            let rep = report::report(&records)?;
            report::write_report_csv(&rep, File::create(&output)?)?;
            let qpath = quadrants.unwrap_or_else(|| output.with_file_name("quadrants.csv"));
            report::write_quadrants_csv(&rep, File::create(&qpath)?)?;
            print!("{}", report::summary(&rep));
        }
        Cmd::Pair {
            baseline,
            guarded,
            output,
        } => {
            let pairs = judge::pair_runs(&load(&baseline)?, &load(&guarded)?);
            save(&output, &pairs)?;
            eprintln!("{} pairs -> {}", pairs.len(), output.display());
        }
        Cmd::Judge {
            pairs,
            judge: j,
            seed,
        } => {
            let pairs: Vec<Pair> = load(&pairs)?;
            let backend = if j == "mock" {
                Judge::Mock
            } else {
                Judge::Endpoint(Arc::new(HttpEndpoint::new(
                    "judge",
                    j,
                    Duration::from_secs(60),
                )?))
            };
            let t = judge::judge(&pairs, &backend, seed)?;
            println!("{}", serde_json::to_string_pretty(&t)?);
        }
        Cmd::Triage { seed, samples } => {
            let corpus = scenarios::triage_corpus(seed, samples);
            let out = scenarios::run_triage(&corpus, &Config::default_config())?;
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::Lifo { seed, turns } => {
            let t = scenarios::lifo_turns(seed, turns, scenarios::LIFO_TURN_TOKENS);
            let out = scenarios::run_lifo(&t, &Config::default_config())?;
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::Attack {
            corpus,
            config: cfg,
            limit,
        } => {
            let mut samples: Vec<BenchmarkSample> = load(&corpus)?;
            if let Some(n) = limit {
                samples.truncate(n);
            }
            let out = attack::extraction_attack(&samples, &config(cfg.as_deref())?)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}
