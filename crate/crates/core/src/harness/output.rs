//! Run directory layout: metrics, waypoints, tracks, fields, particles and
//! plots. Plots are drawn from the files alone so they can be regenerated.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::domain::{GridSpec, Point, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::fld;
use crate::oil::{write_particles_csv, PARTICLE_CSV_HEADER};

use super::config::{ScenarioConfig, Strategy};
use super::metrics::{oil_presence_error, read_metrics_csv, rms_current_error_where_oil, write_metrics_csv, MetricRow, MetricsSeries};
use super::plot::{error_curves_svg, final_map_svg, Metric};
use super::twin::{write_waypoint_rows, Snapshot, StrategyRun, TwinResult};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRUTH_FINAL_FILE: &str = "truth_final.fld";

pub fn final_fields_file(s: Strategy) -> String {
    format!("final_{}.fld", s.name())
}

pub fn tracks_file(s: Strategy) -> String {
    format!("tracks_{}.csv", s.name())
}

pub fn waypoints_file(s: Strategy) -> String {
    format!("waypoints_{}.csv", s.name())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_state(path: PathBuf, grid: &GridSpec, presence: &ScalarField, current: &VectorField, extra: &[(&str, &ScalarField)]) -> Result<()> {
    let mut fields = vec![("presence", presence), ("u", &current.u), ("v", &current.v)];
    fields.extend_from_slice(extra);
    fld::write_file(path, grid, &fields)
}

fn write_snapshots(dir: &Path, grid: &GridSpec, name: &str, snaps: &[Snapshot]) -> Result<()> {
    for s in snaps {
        write_state(dir.join(format!("snap_{name}_{:06}.fld", s.step)), grid, &s.presence, &s.current, &[])?;
    }
    Ok(())
}

pub const TRACK_CSV_HEADER: [&str; 4] = ["t", "sensor", "x", "y"];

fn write_tracks(dir: &Path, run: &StrategyRun) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, &tracks_file(run.strategy))?);
    w.write_record(TRACK_CSV_HEADER)?;
    for (t, pos) in &run.tracks {
        for (s, p) in pos.iter().enumerate() {
            w.write_record([t.to_string(), s.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sensor tracks from a tracks CSV, one polyline per sensor.
pub fn read_tracks(path: impl AsRef<Path>) -> Result<Vec<Vec<Point>>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut tracks: Vec<Vec<Point>> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::Format(format!("bad track value `{}`: {e}", &rec[i])));
        let s: usize = rec[1].parse().map_err(|e| Error::Format(format!("bad sensor `{}`: {e}", &rec[1])))?;
        if tracks.len() <= s {
            tracks.resize(s + 1, Vec::new());
        }
        tracks[s].push(Point::new(num(2)?, num(3)?));
    }
    Ok(tracks)
}

/// Writes every artifact of a twin run into `dir`.
pub fn write_twin_outputs(dir: &Path, cfg: &ScenarioConfig, result: &TwinResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    write_metrics_csv(create(dir, METRICS_FILE)?, &result.series())?;
    let grid = &result.grid;
    let truth = &result.truth;
    write_state(dir.join(TRUTH_FINAL_FILE), grid, &truth.final_presence, truth.current.last().expect("truth has steps"), &[])?;
    write_snapshots(dir, grid, "truth", &truth.snapshots)?;
    for run in &result.runs {
        let name = run.strategy.name();
        let extra: Vec<(&str, &ScalarField)> = match &run.final_uncertainty {
            Some(u) => vec![("q", &u.q), ("var_x", &u.var_x), ("var_y", &u.var_y)],
            None => Vec::new(),
        };
        write_state(dir.join(final_fields_file(run.strategy)), grid, &run.final_presence, &run.final_current, &extra)?;
        write_snapshots(dir, grid, name, &run.snapshots)?;
        if !run.waypoints.is_empty() {
            write_waypoint_rows(create(dir, &waypoints_file(run.strategy))?, &run.waypoints)?;
        }
        if !run.tracks.is_empty() {
            write_tracks(dir, run)?;
        }
        if !run.particle_dumps.is_empty() {
            let mut w = csv::Writer::from_writer(create(dir, &format!("particles_{name}.csv"))?);
            w.write_record(PARTICLE_CSV_HEADER)?;
            for (step, ens) in &run.particle_dumps {
                write_particles_csv(&mut w, *step, ens)?;
            }
            w.flush()?;
        }
    }
    if cfg.output.plots {
        render_plots(dir)?;
    }
    Ok(())
}

/// Draws the error curves and final maps from the files in a run directory.
/// Returns the plot paths written.
pub fn render_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = ScenarioConfig::load(dir.join(CONFIG_FILE))?;
    let series = read_metrics_csv(File::open(dir.join(METRICS_FILE))?)?;
    let active = (cfg.fleet.active_start, cfg.fleet.active_end);
    let mut written = Vec::new();
    for (metric, name) in [(Metric::OilError, "oil_error.svg"), (Metric::CurrentError, "current_error.svg")] {
        let path = dir.join(name);
        std::fs::write(&path, error_curves_svg(&series, metric, active))?;
        written.push(path);
    }
    let truth = fld::read_file(dir.join(TRUTH_FINAL_FILE))?;
    let grid = truth.grid.clone();
    let thr = cfg.measurement.presence_threshold;
    for s in Strategy::ALL {
        let path = dir.join(final_fields_file(s));
        if !path.exists() {
            continue;
        }
        let est = fld::read_file(&path)?;
        let tracks_path = dir.join(tracks_file(s));
        let tracks = if tracks_path.exists() { read_tracks(tracks_path)? } else { Vec::new() };
        let title = format!("{} at t = {:.1} h", s.name(), cfg.time.duration / 3600.0);
        let svg = final_map_svg(&grid, truth.require("presence")?, est.require("presence")?, thr, &tracks, &title)?;
        let out = dir.join(format!("map_{}.svg", s.name()));
        std::fs::write(&out, svg)?;
        written.push(out);
    }
    Ok(written)
}

fn snapshot_steps(dir: &Path, name: &str) -> Result<Vec<usize>> {
    let prefix = format!("snap_{name}_");
    let mut steps = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let file = entry?.file_name();
        let file = file.to_string_lossy();
        if let Some(step) = file.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".fld")) {
            if let Ok(k) = step.parse::<usize>() {
                steps.push(k);
            }
        }
    }
    steps.sort_unstable();
    Ok(steps)
}

fn vector_of(set: &fld::FieldSet) -> Result<VectorField> {
    VectorField::new(set.require("u")?.clone(), set.require("v")?.clone())
}

/// Metric rows recomputed from the field snapshots of a run directory, at
/// the steps where both the truth and the strategy were dumped.
pub fn recompute_metrics(dir: &Path) -> Result<Vec<MetricsSeries>> {
    let cfg = ScenarioConfig::load(dir.join(CONFIG_FILE))?;
    let thr = cfg.measurement.presence_threshold;
    let truth_steps = snapshot_steps(dir, "truth")?;
    let mut out = Vec::new();
    for s in Strategy::ALL {
        let steps: Vec<usize> = snapshot_steps(dir, s.name())?.into_iter().filter(|k| truth_steps.contains(k)).collect();
        if steps.is_empty() {
            continue;
        }
        let mut rows = Vec::with_capacity(steps.len());
        for k in steps {
            let truth = fld::read_file(dir.join(format!("snap_truth_{k:06}.fld")))?;
            let est = fld::read_file(dir.join(format!("snap_{}_{k:06}.fld", s.name())))?;
            let (tp, ep) = (truth.require("presence")?, est.require("presence")?);
            let mask: Vec<bool> = tp.values().iter().map(|p| *p >= thr).collect();
            rows.push(MetricRow {
                step: k,
                t: k as f64 * cfg.time.dt,
                oil_error_m2: oil_presence_error(&truth.grid, tp, ep, thr)?,
                rms_current_mps: rms_current_error_where_oil(&vector_of(&truth)?, &vector_of(&est)?, &mask).unwrap_or(f64::NAN),
                cost: f64::NAN,
            });
        }
        out.push(MetricsSeries {
            strategy: s.name().to_owned(),
            rows,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::twin::run_twin_experiment;

    #[test]
    fn run_directory_round_trips() {
        let mut cfg = ScenarioConfig::default();
        cfg.grid.nx = 12;
        cfg.grid.ny = 12;
        cfg.spill.x = 5_000.0;
        cfg.spill.y = 5_000.0;
        cfg.spill.particles = 200;
        cfg.spill.realizations = 1;
        cfg.time.spin_up = 3.0 * 3600.0;
        cfg.time.duration = 2.0 * 3600.0;
        cfg.fleet.sensors = 1;
        cfg.fleet.active_start = 900.0;
        cfg.fleet.active_end = 3600.0;
        cfg.rom.window = 12;
        cfg.planner.horizons = vec![1];
        cfg.strategies = vec![Strategy::None, Strategy::ModelBased];
        cfg.output.snapshot_every = 30;
        let res = run_twin_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_twin_outputs(dir.path(), &cfg, &res).unwrap();
        for f in [CONFIG_FILE, METRICS_FILE, TRUTH_FINAL_FILE, "oil_error.svg", "map_model-based.svg", "waypoints_model-based.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = read_metrics_csv(File::open(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].rows.len(), cfg.steps());

        let before = std::fs::read(dir.path().join("oil_error.svg")).unwrap();
        render_plots(dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("oil_error.svg")).unwrap(), before);

        let state = fld::read_file(dir.path().join(final_fields_file(Strategy::ModelBased))).unwrap();
        assert!(state.get("q").is_some() && state.get("var_x").is_some());

        // snapshot metrics agree with the live ones at the same steps
        let again = recompute_metrics(dir.path()).unwrap();
        assert_eq!(again.len(), 2);
        for (live, snap) in back.iter().zip(&again) {
            assert_eq!(snap.rows.len(), 5);
            assert_eq!(snap.rows[0].step, 0);
            for r in &snap.rows[1..] {
                let l = live.rows.iter().find(|x| x.step == r.step).expect("step present");
                assert_eq!(l.oil_error_m2, r.oil_error_m2);
                assert!(l.rms_current_mps.is_nan() && r.rms_current_mps.is_nan() || (l.rms_current_mps - r.rms_current_mps).abs() < 1e-12);
            }
        }
    }
}
