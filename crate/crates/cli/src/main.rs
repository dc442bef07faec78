use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bitserial::autotune::{machine_tag, ConfigStore, Lookup, MACHINE_TAG_ENV};
use bitserial::{ConvStrategy, DotSpec, WordWidth};
use bitserial_cli::baseline::Baseline;
use bitserial_cli::layers::{layer, parse_layers, parse_precisions};
use bitserial_cli::report::BenchReport;
use bitserial_cli::runner::{
    conv_workload, run_layer_bench, run_limit_study, run_matmul_bench, tune_layers, BenchOptions,
};
use bitserial_cli::verify::run_verify;
use bitserial_cli::{BenchError, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bitserial",
    version,
    about = "Bitserial kernel checks, benchmarks and tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomized oracle suites for every kernel.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cases per suite.
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
    /// ResNet-18 convolution layers against an integer baseline.
    BenchConv {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "2..12")]
        layers: String,
        #[arg(long, default_value = "w1a1,w1a2,w2a2")]
        precision: String,
        #[arg(long, default_value = "int16")]
        baseline: Baseline,
    },
    /// Square matrix multiplies against an integer baseline.
    BenchMatmul {
        #[command(flatten)]
        common: Common,
        /// Comma separated square sizes.
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        sizes: Vec<usize>,
        #[arg(long, default_value = "w1a1,w1a2,w2a2")]
        precision: String,
        #[arg(long, default_value = "int8")]
        baseline: Baseline,
    },
    /// All 1..4 bit weight and activation pairs on one layer.
    LimitStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "9")]
        layers: String,
        #[arg(long, default_value = "int16")]
        baseline: Baseline,
    },
    /// Searches schedules for each layer and precision and saves the best.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "2..12")]
        layers: String,
        #[arg(long, default_value = "w1a1,w1a2,w2a2")]
        precision: String,
        #[arg(long, default_value_t = 200)]
        budget: usize,
    },
    /// Prints the stored schedule for each layer and precision.
    ShowConfig {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "2..12")]
        layers: String,
        #[arg(long, default_value = "w1a1,w1a2,w2a2")]
        precision: String,
    },
}

#[derive(Args)]
struct Common {
    /// Channel divisor.
    #[arg(long, default_value_t = 4)]
    scale: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value = "direct")]
    strategy: ConvStrategy,
    /// Packing word width in bits.
    #[arg(long, default_value_t = 64)]
    word_bits: u32,
    /// Tuned configuration store.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Machine tag for store keys.
    #[arg(long, env = MACHINE_TAG_ENV)]
    machine: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl Common {
    fn options(&self) -> Result<BenchOptions> {
        let store = match &self.store {
            Some(path) if path.exists() => Some(load_store(path)?),
            _ => None,
        };
        Ok(BenchOptions {
            scale: self.scale,
            threads: self.threads.max(1),
            warmup: self.warmup,
            repeats: self.repeats.max(1),
            seed: self.seed,
            strategy: self.strategy,
            width: WordWidth::from_bits(self.word_bits)?,
            store,
            machine: self.machine.clone().unwrap_or_else(machine_tag),
            ..BenchOptions::default()
        })
    }
}

fn load_store(path: &Path) -> Result<ConfigStore> {
    let (store, warnings) = ConfigStore::load(path)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(store)
}

fn emit(report: &BenchReport, csv: Option<&Path>) -> Result<bool> {
    print!("{}", report.render_table());
    if let Some(path) = csv {
        report.write_csv(BufWriter::new(File::create(path)?))?;
        log::info!("wrote {}", path.display());
    }
    Ok(report.all_ok())
}

fn specs(precision: &str) -> Result<Vec<DotSpec>> {
    parse_precisions(precision)
}

/// Runs a command; `Ok(false)` means a correctness check failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify { seed, cases } => {
            let checks = run_verify(seed, cases)?;
            let mut out = io::stdout().lock();
            for c in &checks {
                writeln!(out, "{c}")?;
            }
            Ok(checks.iter().all(|c| c.passed()))
        }
        Command::BenchConv {
            common,
            layers,
            precision,
            baseline,
        } => {
            let opts = common.options()?;
            let report = run_layer_bench(
                &parse_layers(&layers)?,
                &specs(&precision)?,
                baseline,
                &opts,
            )?;
            emit(&report, common.csv.as_deref())
        }
        Command::BenchMatmul {
            common,
            sizes,
            precision,
            baseline,
        } => {
            let opts = common.options()?;
            let report = run_matmul_bench(&sizes, &specs(&precision)?, baseline, &opts)?;
            emit(&report, common.csv.as_deref())
        }
        Command::LimitStudy {
            common,
            layers,
            baseline,
        } => {
            let opts = common.options()?;
            let mut report = BenchReport::default();
            for name in parse_layers(&layers)? {
                for row in run_limit_study(name, baseline, &opts)?.rows() {
                    report.push(row.clone());
                }
            }
            emit(&report, common.csv.as_deref())
        }
        Command::Tune {
            common,
            layers,
            precision,
            budget,
        } => {
            let path = common
                .store
                .clone()
                .ok_or_else(|| BenchError::InvalidArgument("tune needs --store".into()))?;
            let opts = common.options()?;
            let mut store = opts.store.clone().unwrap_or_default();
            let results = tune_layers(
                &parse_layers(&layers)?,
                &specs(&precision)?,
                budget,
                &mut store,
                &opts,
            )?;
            for (workload, outcome) in &results {
                println!(
                    "{workload}: {} min {} ns ({} trials, {} rejected)",
                    outcome.best.config,
                    outcome.best.min_ns,
                    outcome.trace.len(),
                    outcome.failures().len()
                );
            }
            store.save(&path)?;
            Ok(true)
        }
        Command::ShowConfig {
            common,
            layers,
            precision,
        } => {
            let opts = common.options()?;
            let store = opts.store.clone().unwrap_or_default();
            for name in parse_layers(&layers)? {
                let p = layer(name)?.params(opts.scale)?;
                for spec in specs(&precision)? {
                    let workload = conv_workload(&p, &spec, &opts);
                    let line = match store.lookup(&workload, &opts.machine) {
                        Lookup::Found(e) => format!("{} min {} ns", e.config, e.min_ns),
                        Lookup::OtherMachine { machine, entry } => {
                            format!("{} (tuned on {machine}, not used)", entry.config)
                        }
                        Lookup::NotFound => "default".to_string(),
                    };
                    println!("{}: {line}", workload.key(&opts.machine));
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("correctness check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
