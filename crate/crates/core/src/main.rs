use clap::{Parser, Subcommand};
use coop_ofdm::config::{preset, ConfigError, ExperimentConfig, Manifest, PRESETS};
use coop_ofdm::harness::{output::write_outputs, run_points};
use coop_ofdm::selftest::{run_selftest, FaultInjection};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "coopsim", version, about = "Cooperative OFDM relaying simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment sweep and write CSV/JSON outputs.
    Run {
        /// TOML experiment config, or a manifest.json from an earlier run.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Built-in experiment preset.
        #[arg(long)]
        preset: Option<String>,
        /// Output directory (default: out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Packets (or estimates) per point override.
        #[arg(long)]
        packets: Option<u64>,
    },
    /// Run the fast invariant suite.
    Selftest {
        #[arg(long, hide = true, default_value_t = 1.0)]
        inject_constellation_scale: f64,
    },
    /// List the built-in presets.
    Presets,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { config, preset: name, out, seed, workers, packets } => {
            let cfg = match load_config(config, name, seed, packets) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let out = out.unwrap_or_else(|| cfg.default_out_dir());
            match run(&cfg, &out, workers) {
                Ok(n) => {
                    println!("{n} points written to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("runtime error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Selftest { inject_constellation_scale } => {
            let report = run_selftest(&FaultInjection { constellation_scale: inject_constellation_scale });
            print!("{}", report.log());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SELFTEST)
            }
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            ExitCode::SUCCESS
        }
    }
}

fn load_config(
    path: Option<PathBuf>,
    name: Option<String>,
    seed: Option<u64>,
    packets: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match (path, name) {
        (Some(p), _) => ExperimentConfig::load(&p)?,
        (None, Some(n)) => preset(&n)?,
        (None, None) => unreachable!("clap requires --config or --preset"),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = packets {
        cfg.packets = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig, out: &std::path::Path, workers: usize) -> Result<usize, Box<dyn std::error::Error>> {
    let points = cfg.expand()?;
    let results = run_points(&points, workers)?;
    write_outputs(out, &results, &Manifest::new(cfg, &points))?;
    Ok(points.len())
}
