use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crowdnav::config::Config;
use crowdnav::experiment::{read_csv, run_experiment, write_csv, EpisodeRow, ExperimentSpec, MetricsTable, RunOptions};
use crowdnav::fmm::solve_environment;
use crowdnav::planner::PlannerKind;
use crowdnav::prm::build_roadmap;
use crowdnav::world::{build_scenario, Environment, ScenarioId};

#[derive(Parser)]
#[command(name = "crowdnav", version, about = "Run and summarize crowd-navigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (population, trial, planner) episode in a spec file.
    Run {
        spec: PathBuf,
        /// Base seed; overrides the spec.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-step planning budget in seconds; overrides the spec.
        #[arg(long)]
        budget: Option<f64>,
        /// Trials per population; overrides the spec.
        #[arg(long)]
        trials: Option<usize>,
        /// Search iterations per step instead of a time budget (reproducible runs).
        #[arg(long)]
        iterations: Option<usize>,
        /// Output directory for episodes.csv, table.txt and trajectory logs.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Also write a JSON-lines trajectory per episode.
        #[arg(long)]
        log: bool,
        /// Exit with status 2 if any trajectory was unsafe.
        #[arg(long)]
        strict_safety: bool,
    },
    /// Aggregate an episode CSV into the metrics table.
    Table {
        csv: PathBuf,
        /// Planner to compare against (default LS_ASTAR when present).
        #[arg(long)]
        baseline: Option<PlannerKind>,
    },
    /// Dump the travel-time field and roadmap for a scenario as CSV.
    SolveField {
        #[arg(long, default_value = "OPEN_FIELD")]
        scenario: ScenarioId,
        /// Scenario file overriding the bundled geometry.
        #[arg(long)]
        scenario_file: Option<PathBuf>,
        /// Config file with fmm/prm settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn progress(r: &EpisodeRow) {
    eprintln!(
        "{} pop {} trial {} {}: {:.1}s {}{}",
        r.scenario,
        r.population,
        r.trial,
        r.planner,
        r.travel_time_s,
        r.outcome,
        if r.is_unsafe { " UNSAFE" } else { "" }
    );
}

fn run(cli: Cli) -> crowdnav::Result<ExitCode> {
    match cli.command {
        Command::Run { spec, seed, budget, trials, iterations, out, workers, log, strict_safety } => {
            let mut spec = ExperimentSpec::from_file(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(b) = budget {
                spec.budget_s = b;
            }
            if let Some(t) = trials {
                spec.trials = t;
            }
            if iterations.is_some() {
                spec.iteration_cap = iterations;
            }
            std::fs::create_dir_all(&out)?;
            let opts = RunOptions { workers, log_dir: log.then(|| out.join("logs")), progress: Some(progress) };
            let result = run_experiment(&spec, &opts)?;
            write_csv(&result.rows, BufWriter::new(File::create(out.join("episodes.csv"))?))?;
            std::fs::write(out.join("table.txt"), result.table.to_string())?;
            print!("{}", result.table);
            let unsafe_runs = result.table.total_unsafe();
            if strict_safety && unsafe_runs > 0 {
                eprintln!("{unsafe_runs} unsafe trajectories");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Table { csv, baseline } => {
            let rows = read_csv(File::open(&csv)?)?;
            let baseline = baseline.unwrap_or_else(|| {
                if rows.iter().any(|r| r.planner == PlannerKind::LsAstar) {
                    PlannerKind::LsAstar
                } else {
                    rows.first().map_or(PlannerKind::LsAstar, |r| r.planner)
                }
            });
            print!("{}", MetricsTable::from_rows(&rows, baseline)?);
        }
        Command::SolveField { scenario, scenario_file, config, seed, out } => {
            let env = match scenario_file {
                Some(p) => Environment::from_file(p)?,
                None => build_scenario(scenario),
            };
            let cfg = match config {
                Some(p) => Config::from_file(p)?,
                None => Config::default(),
            };
            std::fs::create_dir_all(&out)?;
            let field = solve_environment(&env, &cfg.planner.fmm)?;
            field.write_csv(BufWriter::new(File::create(out.join("travel_time.csv"))?))?;
            let roadmap = build_roadmap(&env, &cfg.planner.prm, seed)?;
            roadmap.write_nodes_csv(BufWriter::new(File::create(out.join("roadmap_nodes.csv"))?))?;
            roadmap.write_edges_csv(BufWriter::new(File::create(out.join("roadmap_edges.csv"))?))?;
            println!(
                "{}: travel time at start {:.2} m, roadmap route {:.2} m, {} nodes",
                env.name,
                field.time_at(env.vehicle_start),
                roadmap.path_length_from(env.vehicle_start),
                roadmap.nodes.len()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
