use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use xsync_harness::bench::{self, BenchConfig};
use xsync_harness::fuzz::{self, FuzzConfig};
use xsync_harness::serve::{self, ServeConfig, DEFAULT_PORT};
use xsync_harness::{run_scenario, Result, Scenario};

#[derive(Parser)]
#[command(name = "harness", about = "Scenario runner, benchmarks and live serve mode for the sync engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or bundled scenario name; exit 0 iff it converged cleanly.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json and timeline.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latency table across topologies.
    Bench {
        /// Link config; defaults to the bundled calibrated config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long, value_enum, default_value = "off")]
        jitter: OnOff,
        /// Directory for bench.csv and bench.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RTT per payload size and topology.
    Payload {
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 1024, 16384])]
        sizes: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = bench::DEFAULT_PER_BYTE_MS)]
        per_byte_ms: f64,
    },
    /// Host live replicas for playground clients.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Scenario whose default link and strategy are used for hosted replicas.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = serve::DEFAULT_TICK_MS)]
        tick_ms: u64,
    },
    /// Convergence fuzzing over generated scenarios.
    Fuzz {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        start: u64,
        /// Where minimized failing scenarios are written.
        #[arg(long, default_value = "fuzz-failures")]
        dump: PathBuf,
    },
}

fn bench_config(path: Option<PathBuf>) -> Result<BenchConfig> {
    match path {
        Some(p) => BenchConfig::load(&p),
        None => Ok(BenchConfig::bundled()),
    }
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { scenario, seed, out } => {
            let mut s = Scenario::resolve(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let report = run_scenario(s)?;
            println!("{}", report.summary());
            for e in &report.invariant_errors {
                println!("  invariant: {e}");
            }
            match out {
                Some(dir) => report.write_to(&dir)?,
                None => println!("{}", report.to_json()),
            }
            Ok(report.ok())
        }
        Command::Bench { config, reps, jitter, out } => {
            let cfg = bench_config(config)?;
            let table = bench::run_bench(&cfg, reps, matches!(jitter, OnOff::On))?;
            let text = table.render_text();
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("bench.csv"), table.csv_string())?;
                std::fs::write(dir.join("bench.txt"), &text)?;
            } else {
                print!("{}", table.csv_string());
            }
            Ok(table.ordering_violations().is_empty())
        }
        Command::Payload { sizes, config, per_byte_ms } => {
            let cfg = bench_config(config)?;
            let rows = bench::run_payload_bench(&cfg, &sizes, per_byte_ms)?;
            print!("{}", bench::payload_csv(&rows)?);
            Ok(true)
        }
        Command::Serve { port, scenario, tick_ms } => {
            let mut cfg = match scenario {
                Some(name) => ServeConfig::from_scenario(port, &Scenario::resolve(&name)?),
                None => ServeConfig { port, ..ServeConfig::default() },
            };
            cfg.tick_ms = tick_ms;
            let handle = serve::spawn(cfg)?;
            println!("listening on {}", handle.local_addr());
            handle.join();
            Ok(true)
        }
        Command::Fuzz { seeds, start, dump } => {
            let cfg = FuzzConfig::default();
            let mut failures = 0;
            for seed in start..start + seeds {
                match fuzz::run_seed(seed, &cfg)? {
                    Ok(_) => {}
                    Err(f) => {
                        failures += 1;
                        let path = fuzz::dump_failure(&f, &dump)?;
                        println!(
                            "seed {seed}: FAILED, minimized to {} action(s), written to {}",
                            f.minimized.script.len(),
                            path.display()
                        );
                    }
                }
            }
            println!("{} of {seeds} seeds converged", seeds - failures);
            Ok(failures == 0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HARNESS_LOG", "warn")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
