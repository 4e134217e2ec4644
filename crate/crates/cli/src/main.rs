use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cinecam_core::io::{emit_outputs, summarize_dir, Summary};
use cinecam_core::presets;
use cinecam_core::scenario::{load_scenario, ScenarioConfig, ScenarioError};
use cinecam_core::sim::{run_closed_loop, RunLog};

#[derive(Parser)]
#[command(
    name = "cinecam",
    version,
    about = "Closed-loop cinematography scenario runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write per-run CSVs, summary.json and aggregate.csv.
    Run {
        scenario: PathBuf,
        /// First seed; defaults to the scenario's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of repetitions; defaults to the scenario's count.
        #[arg(long)]
        reps: Option<usize>,
        /// Output directory; defaults to out/<scenario name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file and list every violation.
    Validate { scenario: PathBuf },
    /// Recompute summary.json and aggregate.csv from run CSVs in a directory.
    Summarize { dir: PathBuf },
    /// Write the built-in scenarios as JSON files into a directory.
    Presets { dir: PathBuf },
}

fn run_all(config: &ScenarioConfig, seeds: &[u64]) -> Vec<RunLog> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut logs = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(workers) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| s.spawn(move || run_closed_loop(config, seed)))
                .collect();
            logs.extend(
                handles
                    .into_iter()
                    .map(|h| h.join().expect("run thread panicked")),
            );
        });
    }
    logs
}

fn print_summary(s: &Summary) {
    println!("scenario {}: {} run(s)", s.scenario, s.runs.len());
    for m in &s.runs {
        println!(
            "  seed {:>4}: rows {:>4}  pixel err {:>8.3}  min dist {:>7.3}  dof err {:>6.3}  dolly spread {:>7.4}  collided {}  visible at end {}",
            m.seed,
            m.rows,
            m.steady_state_pixel_error,
            m.min_distance,
            m.dof_near_error,
            m.dolly_ratio_spread,
            m.collided,
            m.filmed_visible_at_end,
        );
    }
    println!(
        "  mean pixel err {:.3} ± {:.3}, min dist {:.3} ± {:.3}, collisions {}, visible at end {}",
        s.steady_state_pixel_error.mean,
        s.steady_state_pixel_error.std,
        s.min_distance.mean,
        s.min_distance.std,
        s.collisions,
        s.visible_at_end,
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            reps,
            out,
        } => {
            let config = load_scenario(&scenario)?;
            let first = seed.unwrap_or(config.runs.base_seed);
            let count = reps.unwrap_or(config.runs.repetitions);
            let seeds: Vec<u64> = (0..count as u64).map(|i| first + i).collect();
            let out = out.unwrap_or_else(|| PathBuf::from("out").join(&config.name));
            let logs = run_all(&config, &seeds);
            let summary = emit_outputs(&config, &logs, &out)
                .with_context(|| format!("writing outputs to {}", out.display()))?;
            print_summary(&summary);
            println!("outputs written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(c) => {
                println!("{}: valid scenario '{}'", scenario.display(), c.name);
                Ok(ExitCode::SUCCESS)
            }
            Err(ScenarioError::Validation(issues)) => {
                println!("{}: {} violation(s)", scenario.display(), issues.len());
                for i in issues {
                    println!("  {i}");
                }
                Ok(ExitCode::FAILURE)
            }
            Err(e) => Err(e.into()),
        },
        Command::Summarize { dir } => {
            let summary = summarize_dir(&dir)?;
            print_summary(&summary);
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { dir } => {
            std::fs::create_dir_all(&dir)?;
            for c in presets::all() {
                let path = dir.join(format!("{}.json", c.name));
                std::fs::write(&path, c.to_json() + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
