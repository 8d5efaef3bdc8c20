use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spillsense::harness::output::{CONFIG_FILE, METRICS_FILE};
use spillsense::harness::{
    plan_from_state, recompute_metrics, render_plots, run_twin_experiment, write_metrics_csv, write_twin_outputs, ScenarioConfig, Strategy,
};
use spillsense::placement::{write_waypoints_csv, WAYPOINT_CSV_HEADER};
use spillsense::{Point, Result};

/// Oil spill monitoring with planned mobile sensors.
#[derive(Parser)]
#[command(name = "spillsense", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Scenario TOML; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop test model against the truth (no sensors).
    Simulate,
    /// One planning cycle from a saved state.
    Plan {
        /// FLD1 file with `presence`, `u`, `v` and optionally `q`, `var_x`, `var_y`.
        #[arg(long)]
        state: PathBuf,
        /// Time of the saved state, s after the spill.
        #[arg(long, default_value_t = 0.0)]
        time: f64,
        /// Sensor positions as `x,y`; repeat per sensor. Defaults to the fleet base.
        #[arg(long = "at", value_parser = parse_point)]
        at: Vec<Point>,
    },
    /// Ladder-path runs with and without current replacement.
    Baseline,
    /// Every configured strategy against one truth.
    Twin {
        /// Comma-separated subset of none, industry, industry-no-velocity, model-based.
        #[arg(long, value_delimiter = ',', value_parser = Strategy::parse)]
        strategies: Option<Vec<Strategy>>,
    },
    /// Recomputes metrics from the field snapshots in the output directory.
    Metrics,
    /// Redraws the plots from the files in the output directory.
    Plot,
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("bad coordinate `{v}`: {e}"));
    Ok(Point::new(num(x)?, num(y)?))
}

fn load_config(g: &Global) -> Result<ScenarioConfig> {
    let mut cfg = match &g.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_strategies(g: &Global, mut cfg: ScenarioConfig, strategies: Option<Vec<Strategy>>) -> Result<()> {
    if let Some(s) = strategies {
        cfg.strategies = s;
    }
    cfg.validate()?;
    let result = run_twin_experiment(&cfg)?;
    write_twin_outputs(&g.out, &cfg, &result)?;
    let (a, b) = (cfg.fleet.active_start, cfg.fleet.active_end);
    println!("{:<22}{:>18}{:>18}{:>16}{:>18}", "strategy", "oil err active", "oil err after", "final oil err", "current err after");
    for s in result.series() {
        println!(
            "{:<22}{:>15.3} km²{:>15.3} km²{:>13.3} km²{:>14.4} m/s",
            s.strategy,
            s.mean_oil_error(a, b) / 1e6,
            s.mean_oil_error(b, f64::INFINITY) / 1e6,
            s.final_oil_error() / 1e6,
            s.mean_current_error(b, f64::INFINITY)
        );
    }
    println!("outputs written to {}", g.out.display());
    Ok(())
}

fn plan(g: &Global, cfg: ScenarioConfig, state: &Path, time: f64, at: Vec<Point>) -> Result<()> {
    let fields = spillsense::fld::read_file(state)?;
    let sensors = if at.is_empty() { vec![cfg.base(); cfg.fleet.sensors] } else { at };
    let plan = plan_from_state(&cfg, &fields, time, sensors)?;
    std::fs::create_dir_all(&g.out)?;
    let path = g.out.join("plan_waypoints.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(WAYPOINT_CSV_HEADER)?;
    write_waypoints_csv(&mut w, 0, time, cfg.planner.interval_s, &plan)?;
    w.flush()?;
    for (h, cost) in &plan.costs {
        println!("horizon {h}: J = {cost:.6}");
    }
    println!("chose horizon {}; waypoints written to {}", plan.best.horizon, path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| spillsense::Error::Config(format!("thread pool: {e}")))?;
    }
    let g = &cli.global;
    match cli.command {
        Command::Simulate => run_strategies(g, load_config(g)?, Some(vec![Strategy::None])),
        Command::Baseline => run_strategies(g, load_config(g)?, Some(vec![Strategy::Industry, Strategy::IndustryNoVelocity])),
        Command::Twin { strategies } => run_strategies(g, load_config(g)?, strategies),
        Command::Plan { state, time, at } => plan(g, load_config(g)?, &state, time, at),
        Command::Metrics => {
            let series = recompute_metrics(&g.out)?;
            let path = g.out.join("metrics_from_snapshots.csv");
            write_metrics_csv(std::fs::File::create(&path)?, &series)?;
            println!("{} series recomputed into {}", series.len(), path.display());
            Ok(())
        }
        Command::Plot => {
            if !g.out.join(METRICS_FILE).exists() || !g.out.join(CONFIG_FILE).exists() {
                return Err(spillsense::Error::Config(format!("{} holds no run to plot", g.out.display())));
            }
            for p in render_plots(&g.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
