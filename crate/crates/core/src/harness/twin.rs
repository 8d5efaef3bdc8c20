//! Twin experiment. A truth model with the tide supplies readings to test
//! models without it, one test run per sensing strategy.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baseline::{follow_path, generate_ladder, value_replace, LadderPlan, Measurement, ValueReplacement, VelocityUpdate};
use crate::domain::{stack, GridSpec, Point, ScalarField, StateTrajectory, VectorField};
use crate::error::{Error, Result};
use crate::flow::{combined_drift, diffusion_correction, relaxation_source, step_layer, synthesize_forcing, DriftModel, FluidLayer, SyntheticForcing};
use crate::oil::{ensemble_probability, entropy_neighborhood, realization_seed, rescale_presence, ParticleEnsemble};
use crate::placement::{plan_receding_horizon, weighting_field, HorizonPlan, PlanningScenario};
use crate::rom::{default_process_noise, fit_dmd, interpolative_decomposition, kalman_step, measurement_map, pdmd_weighting, scale_modes, stabilize_operator, DmdModel, KalmanState, SnapshotMatrix};
use crate::uncertainty::{covariance_injection, sensor_mask, step_uncertainty, variance_increment, CovarianceInjection, TransportOp, UncertaintyParams, UncertaintyState};

use super::config::{ScenarioConfig, Strategy};
use super::metrics::{oil_presence_error, rms_current_error_where_oil, MetricRow, MetricsSeries};

/// Fields in the reduced-model state: current u, v, wind u, v, uncertainty tracer.
pub const STATE_FIELDS: usize = 5;

/// Current layer relaxed toward an external forcing.
#[derive(Debug, Clone)]
pub struct Ocean {
    pub forcing: SyntheticForcing,
    pub layer: FluidLayer,
    relaxation: f64,
}

impl Ocean {
    pub fn new(grid: &GridSpec, cfg: &ScenarioConfig, tide: bool, t0: f64) -> Result<Self> {
        let forcing = cfg.forcing.forcing.with_tide(tide);
        let (current, _) = synthesize_forcing(grid, &forcing, t0);
        Ok(Self {
            forcing,
            layer: FluidLayer::new(grid, current, cfg.forcing.viscosity, cfg.grid.edges)?,
            relaxation: cfg.forcing.relaxation,
        })
    }

    pub fn forcing_current(&self, grid: &GridSpec, t: f64) -> VectorField {
        synthesize_forcing(grid, &self.forcing, t).0
    }

    pub fn wind(&self, grid: &GridSpec, t: f64) -> VectorField {
        synthesize_forcing(grid, &self.forcing, t).1
    }

    pub fn current(&self) -> &VectorField {
        &self.layer.velocity
    }

    /// One step relaxing toward `target`.
    pub fn step(&mut self, grid: &GridSpec, dt: f64, target: &VectorField) -> Result<()> {
        self.layer.source = relaxation_source(grid, &self.layer.velocity, target, self.relaxation);
        self.layer = step_layer(grid, &self.layer, dt)?.0;
        Ok(())
    }
}

/// Particle drift and horizontal diffusivity for a current and wind.
pub fn drift_fields(grid: &GridSpec, model: &DriftModel, current: &VectorField, wind: &VectorField) -> Result<(VectorField, ScalarField)> {
    let wave = model.wave_field(grid, wind);
    let zero = VectorField::zeros(grid);
    let base = combined_drift(grid, current, wind, &wave, &zero, model)?;
    let d_h = model.diffusion_field(grid, &base);
    let corr = diffusion_correction(grid, &d_h)?;
    Ok((combined_drift(grid, current, wind, &wave, &corr, model)?, d_h))
}

/// Oil presence rescaled to a maximum of one, zero when nothing floats.
pub fn presence_of(grid: &GridSpec, ensembles: &[ParticleEnsemble]) -> Result<ScalarField> {
    match ensemble_probability(ensembles, grid) {
        Ok(map) => rescale_presence(&map),
        Err(Error::EmptySpill) => Ok(ScalarField::zeros(grid)),
        Err(e) => Err(e),
    }
}

fn release_all(grid: &GridSpec, cfg: &ScenarioConfig, realizations: std::ops::Range<u32>) -> Result<Vec<ParticleEnsemble>> {
    let s = &cfg.spill;
    realizations
        .map(|r| ParticleEnsemble::release(grid, r, realization_seed(cfg.seed, r), cfg.release_point(), s.particles, s.volume, s.spread))
        .collect()
}

fn state_vector(current: &VectorField, wind: &VectorField, tracer: &ScalarField) -> DVector<f64> {
    stack(&[&current.u, &current.v, &wind.u, &wind.v, tracer])
}

/// Truth trajectory seen by every strategy. Index `k` is time `k dt`.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    pub current: Vec<VectorField>,
    pub oil: Vec<Vec<bool>>,
    pub final_presence: ScalarField,
    pub final_particles: ParticleEnsemble,
    /// Presence and current at the snapshot steps requested in the output settings.
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub presence: ScalarField,
    pub current: VectorField,
}

fn wants_snapshot(cfg: &ScenarioConfig, step: usize) -> bool {
    let every = cfg.output.snapshot_every;
    every > 0 && step.is_multiple_of(every)
}

fn spin_up(grid: &GridSpec, cfg: &ScenarioConfig, tide: bool, window: Option<&mut StateTrajectory>) -> Result<Ocean> {
    let dt = cfg.time.dt;
    let t0 = -cfg.time.spin_up;
    let mut ocean = Ocean::new(grid, cfg, tide, t0)?;
    let stride = cfg.snapshot_stride();
    let zero = ScalarField::zeros(grid);
    let mut traj = window;
    for k in 0..=cfg.spin_up_steps() {
        let t = t0 + k as f64 * dt;
        if let Some(tr) = traj.as_deref_mut() {
            if k % stride == 0 {
                tr.push(state_vector(ocean.current(), &ocean.wind(grid, t), &zero))?;
                tr.truncate_front(cfg.rom.window);
            }
        }
        if k < cfg.spin_up_steps() {
            let target = ocean.forcing_current(grid, t);
            ocean.step(grid, dt, &target)?;
        }
    }
    Ok(ocean)
}

pub fn run_truth(grid: &GridSpec, cfg: &ScenarioConfig) -> Result<TruthRecord> {
    let dt = cfg.time.dt;
    let mut ocean = spin_up(grid, cfg, cfg.forcing.truth_tide, None)?;
    let mut oil = release_all(grid, cfg, 0..1)?;
    let thr = cfg.measurement.presence_threshold;
    let mut rec = TruthRecord {
        current: Vec::with_capacity(cfg.steps() + 1),
        oil: Vec::with_capacity(cfg.steps() + 1),
        final_presence: ScalarField::zeros(grid),
        final_particles: oil[0].clone(),
        snapshots: Vec::new(),
    };
    for k in 0..=cfg.steps() {
        let t = k as f64 * dt;
        let presence = presence_of(grid, &oil)?;
        rec.current.push(ocean.current().clone());
        rec.oil.push(presence.values().iter().map(|p| *p >= thr).collect());
        if wants_snapshot(cfg, k) {
            rec.snapshots.push(Snapshot {
                step: k,
                presence: presence.clone(),
                current: ocean.current().clone(),
            });
        }
        if k == cfg.steps() {
            rec.final_presence = presence;
            break;
        }
        let wind = ocean.wind(grid, t);
        let (drift, d_h) = drift_fields(grid, &cfg.drift, ocean.current(), &wind)?;
        for e in &mut oil {
            e.advect(grid, &drift, &d_h, dt)?;
        }
        let target = ocean.forcing_current(grid, t);
        ocean.step(grid, dt, &target)?;
    }
    rec.final_particles = oil.pop().expect("one truth ensemble");
    Ok(rec)
}

/// Test model state at the spill time, shared by all strategies.
#[derive(Debug, Clone)]
pub struct TestStart {
    pub ocean: Ocean,
    pub window: StateTrajectory,
}

pub fn spin_up_test(grid: &GridSpec, cfg: &ScenarioConfig) -> Result<TestStart> {
    let mut window = StateTrajectory::new();
    let ocean = spin_up(grid, cfg, cfg.forcing.test_tide, Some(&mut window))?;
    Ok(TestStart { ocean, window })
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One sensor reading of the truth. The noise depends only on the seed,
/// step and cell, so every strategy reading the same place at the same
/// time sees the same value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub cell: usize,
    pub oil: bool,
    pub current: (f64, f64),
    pub wind: (f64, f64),
}

pub fn read_truth(cfg: &ScenarioConfig, truth: &TruthRecord, wind: &VectorField, step: usize, cell: usize) -> Reading {
    let key = mix(cfg.seed ^ mix(step as u64 ^ mix(cell as u64).rotate_left(17)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let s = cfg.measurement.velocity_noise;
    let mut noise = || -> f64 { s * rng.sample::<f64, _>(StandardNormal) };
    let (cu, cv) = truth.current[step].at(cell);
    let (wu, wv) = wind.at(cell);
    let current = (cu + noise(), cv + noise());
    let wind = (wu + noise(), wv + noise());
    let flip = rng.random::<f64>() < cfg.measurement.oil_noise;
    Reading {
        cell,
        oil: truth.oil[step][cell] != flip,
        current,
        wind,
    }
}

fn cells_under(grid: &GridSpec, positions: &[Point]) -> Vec<usize> {
    let mut cells: Vec<usize> = positions.iter().filter_map(|p| grid.locate_index(*p).ok()).filter(|c| !grid.is_land(*c)).collect();
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// One row of a waypoint table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointRow {
    pub cycle: usize,
    pub sensor: usize,
    pub t: f64,
    pub pos: Point,
    pub committed: bool,
}

pub const WAYPOINT_TABLE_HEADER: [&str; 6] = ["cycle", "sensor", "t", "x", "y", "committed"];

pub fn write_waypoint_rows<W: std::io::Write>(w: W, rows: &[WaypointRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(WAYPOINT_TABLE_HEADER)?;
    for r in rows {
        w.write_record([
            r.cycle.to_string(),
            r.sensor.to_string(),
            r.t.to_string(),
            r.pos.x.to_string(),
            r.pos.y.to_string(),
            u8::from(r.committed).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub series: MetricsSeries,
    pub waypoints: Vec<WaypointRow>,
    /// Sensor positions at each step while active.
    pub tracks: Vec<(f64, Vec<Point>)>,
    pub snapshots: Vec<Snapshot>,
    pub particle_dumps: Vec<(usize, Vec<ParticleEnsemble>)>,
    pub final_presence: ScalarField,
    pub final_current: VectorField,
    pub final_uncertainty: Option<UncertaintyState>,
}

/// Reduced model and filter of the model-based strategy.
struct Assimilation {
    dmd: DmdModel,
    filter: KalmanState,
}

/// Where each sensor flies between two committed waypoints.
struct Leg {
    from: Vec<Point>,
    to: Vec<Point>,
    t0: f64,
    t1: f64,
}

impl Leg {
    fn at(&self, t: f64) -> Vec<Point> {
        let s = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
        self.from.iter().zip(&self.to).map(|(a, b)| *a + (*b - *a) * s).collect()
    }
}

struct Runner<'a> {
    grid: &'a GridSpec,
    cfg: &'a ScenarioConfig,
    truth: &'a TruthRecord,
    strategy: Strategy,
    ocean: Ocean,
    window: StateTrajectory,
    oil: Vec<ParticleEnsemble>,
    /// Relaxation target from the filter; the forcing when `None`.
    target: Option<VectorField>,
    assim: Option<Assimilation>,
    ladder: Option<(LadderPlan, f64)>,
    leg: Leg,
    params: UncertaintyParams,
    uncertainty: UncertaintyState,
    injection: CovarianceInjection,
    cost: f64,
    cycle: usize,
    waypoints: Vec<WaypointRow>,
    tracks: Vec<(f64, Vec<Point>)>,
}

impl<'a> Runner<'a> {
    fn active(&self, t: f64) -> bool {
        let f = &self.cfg.fleet;
        t >= f.active_start - 1e-9 && t < f.active_end - 1e-9
    }

    fn presence(&self) -> Result<ScalarField> {
        presence_of(self.grid, &self.oil)
    }

    fn replacement(&self) -> ValueReplacement {
        let velocity = match self.strategy {
            Strategy::Industry => VelocityUpdate::ReplaceInPlace,
            _ => VelocityUpdate::None,
        };
        ValueReplacement { velocity, ..self.cfg.replacement }
    }

    fn apply_readings(&mut self, readings: &[Reading]) -> Result<()> {
        let meas: Vec<Measurement> = readings
            .iter()
            .map(|r| Measurement {
                cell: r.cell,
                oil: r.oil,
                velocity: r.current,
            })
            .collect();
        let policy = self.replacement();
        value_replace(self.grid, &mut self.oil, &mut self.ocean.layer.velocity, &meas, &policy)
    }

    fn ladder_step(&mut self, k: usize, t: f64, wind: &VectorField) -> Result<()> {
        let replan = match &self.ladder {
            None => true,
            Some((_, t0)) => t - t0 >= self.cfg.ladder.replan_period - 1e-9,
        };
        if replan {
            let presence = self.presence()?;
            let swath = 2.0 * self.cfg.uncertainty.radius;
            let plan = generate_ladder(self.grid, &presence, swath, self.cfg.fleet.sensors, self.cfg.release_point(), &self.cfg.ladder)?;
            for (s, sec) in plan.sections.iter().enumerate() {
                for p in sec {
                    self.waypoints.push(WaypointRow {
                        cycle: self.cycle,
                        sensor: s,
                        t,
                        pos: *p,
                        committed: true,
                    });
                }
            }
            self.cycle += 1;
            self.ladder = Some((plan, t));
        }
        let (plan, t0) = self.ladder.as_ref().expect("planned above");
        let pos = follow_path(plan, self.cfg.fleet.v_sensor, t - t0);
        let readings: Vec<Reading> = cells_under(self.grid, &pos).into_iter().map(|c| read_truth(self.cfg, self.truth, wind, k, c)).collect();
        self.tracks.push((t, pos));
        self.apply_readings(&readings)
    }

    fn refit(&mut self, x: &DVector<f64>) -> Result<()> {
        let snap = SnapshotMatrix::from_trajectory(&self.window)?;
        let mut dmd = fit_dmd(&snap, self.cfg.rom.rank)?;
        log::debug!("dmd eigenvalues {:?}", dmd.eigenvalues().iter().map(|l| (l.norm(), l.arg())).collect::<Vec<_>>());
        if self.cfg.rom.stabilize {
            dmd.a_tilde = stabilize_operator(&dmd.a_tilde);
        }
        let q_proc = self.cfg.rom.process_noise_scale * default_process_noise(&dmd.singular);
        let r_meas = self.cfg.measurement.velocity_noise.powi(2).max(1e-12);
        let filter = match &self.assim {
            Some(a) => a.filter.reproject(&a.dmd.basis, &dmd.basis, q_proc),
            None => {
                let n = dmd.rank();
                KalmanState::new(dmd.project(x), DMatrix::identity(n, n) * q_proc, q_proc, r_meas)?
            }
        };
        self.assim = Some(Assimilation { dmd, filter });
        Ok(())
    }

    fn current_of(&self, z: &DVector<f64>) -> Result<VectorField> {
        let a = self.assim.as_ref().expect("filter running");
        let x = a.dmd.reconstruct(z);
        let n = self.grid.cell_count();
        let mut v = VectorField::new(
            ScalarField::from_values(self.grid, x.as_slice()[..n].to_vec())?,
            ScalarField::from_values(self.grid, x.as_slice()[n..2 * n].to_vec())?,
        )?;
        v.mask_land(self.grid);
        Ok(v)
    }

    fn retarget(&mut self) -> Result<()> {
        let z = self.assim.as_ref().expect("filter running").filter.z.clone();
        self.target = Some(self.current_of(&z)?);
        Ok(())
    }

    fn assimilate(&mut self, k: usize, wind: &VectorField, positions: &[Point]) -> Result<()> {
        let first = self.assim.is_none();
        let x = state_vector(self.ocean.current(), wind, &self.uncertainty.q.scaled(self.cfg.rom.tracer_weight));
        self.refit(&x)?;
        let cells = cells_under(self.grid, positions);
        let readings: Vec<Reading> = cells.iter().map(|c| read_truth(self.cfg, self.truth, wind, k, *c)).collect();
        let n = self.grid.cell_count();
        let mut rows = Vec::with_capacity(4 * cells.len());
        let mut y = Vec::with_capacity(4 * cells.len());
        for r in &readings {
            rows.extend([r.cell, n + r.cell, 2 * n + r.cell, 3 * n + r.cell]);
            y.extend([r.current.0, r.current.1, r.wind.0, r.wind.1]);
        }
        let a = self.assim.as_mut().expect("refit above");
        let h = measurement_map(&a.dmd.basis, &rows);
        // The first estimate is already at time t, so no prediction.
        let dim = a.dmd.rank();
        let propagator = if first { DMatrix::identity(dim, dim) } else { a.dmd.a_tilde.clone() };
        a.filter = kalman_step(&a.filter, &propagator, &h, &DVector::from_vec(y))?;
        self.injection = covariance_injection(&a.filter.cov, &a.dmd.basis, self.grid, 0, 1, self.cfg.uncertainty.injection_gain)?;
        self.retarget()?;
        self.apply_readings(&readings)
    }

    fn forecast_drifts(&self, t: f64) -> Result<Vec<VectorField>> {
        let a = self.assim.as_ref().expect("filter running");
        let n = self.grid.cell_count();
        let mut z = a.filter.z.clone();
        let mut out = Vec::with_capacity(self.cfg.planner.cycle_intervals);
        for j in 0..self.cfg.planner.cycle_intervals {
            let x = a.dmd.reconstruct(&z);
            let current = VectorField::new(
                ScalarField::from_values(self.grid, x.as_slice()[..n].to_vec())?,
                ScalarField::from_values(self.grid, x.as_slice()[n..2 * n].to_vec())?,
            )?;
            let wind = self.ocean.wind(self.grid, t + j as f64 * self.cfg.planner.interval_s);
            out.push(drift_fields(self.grid, &self.cfg.drift, &current, &wind)?.0);
            z = a.dmd.predict(&z);
        }
        Ok(out)
    }

    fn increments(&self, drift: &VectorField) -> (ScalarField, ScalarField) {
        let d_h = self.cfg.drift.diffusion_field(self.grid, drift);
        let (fx, fy) = self.params.floors(self.grid, drift);
        let dt = self.cfg.planner.model_dt;
        (
            variance_increment(&d_h, &fx, &self.injection.e_kx, dt, dt),
            variance_increment(&d_h, &fy, &self.injection.e_ky, dt, dt),
        )
    }

    fn weights(&self) -> Result<ScalarField> {
        let presence = self.presence()?;
        let entropy = entropy_neighborhood(self.grid, &presence);
        let a = self.assim.as_ref().expect("filter running");
        let scaled = scale_modes(&a.dmd.basis, &a.dmd.singular, self.cfg.rom.k_id);
        let count = self.cfg.fleet.sensors.min(scaled.nrows());
        let sel = interpolative_decomposition(&scaled, count, self.cfg.rom.k_id)?;
        let modes = match pdmd_weighting(&sel.cells(self.grid.cell_count()), &presence, self.grid) {
            Ok(w) => w,
            Err(Error::EmptySpill) => ScalarField::zeros(self.grid),
            Err(e) => return Err(e),
        };
        weighting_field(self.grid, &presence, &entropy, &modes, &self.cfg.weighting)
    }

    fn plan(&mut self, t: f64, positions: Vec<Point>) -> Result<HorizonPlan> {
        let drifts = self.forecast_drifts(t)?;
        log::debug!(
            "t {t}: model current {:.3} m/s, forecast drift max {:.3} m/s",
            self.ocean.current().max_speed(),
            drifts.iter().map(VectorField::max_speed).fold(0.0, f64::max)
        );
        let incs = self.increments(&drifts[0]);
        let weights = self.weights()?;
        let scn = PlanningScenario::new(
            self.grid,
            &self.cfg.grid.edges,
            &drifts,
            incs,
            weights,
            self.uncertainty.clone(),
            &self.params,
            positions,
            None,
            &self.cfg.planner,
        )?;
        plan_receding_horizon(&scn, &self.cfg.planner)
    }

    fn model_based_step(&mut self, k: usize, t: f64, wind: &VectorField) -> Result<()> {
        let stride = self.cfg.snapshot_stride();
        let active = self.active(t);
        if active {
            let pos = self.leg.at(t);
            self.tracks.push((t, pos.clone()));
            if k.is_multiple_of(stride) {
                self.assimilate(k, wind, &pos)?;
                let dt_i = self.cfg.planner.interval_s;
                let plan = match self.plan(t, pos.clone()) {
                    Ok(p) => p,
                    Err(e @ Error::Cfl { .. }) => {
                        log::warn!("t {t}: plan rejected ({e}); sensors hold position");
                        self.leg = Leg {
                            from: pos.clone(),
                            to: pos,
                            t0: t,
                            t1: t + dt_i,
                        };
                        return Ok(());
                    }
                    Err(e) => return Err(e),
                };
                let sensors = pos.len();
                for (j, chunk) in plan.best.waypoints.chunks(sensors).enumerate() {
                    for (s, p) in chunk.iter().enumerate() {
                        self.waypoints.push(WaypointRow {
                            cycle: self.cycle,
                            sensor: s,
                            t: t + (j + 1) as f64 * dt_i,
                            pos: *p,
                            committed: j == 0,
                        });
                    }
                }
                self.cycle += 1;
                self.cost = plan.best.cost;
                self.leg = Leg {
                    from: pos,
                    to: plan.committed,
                    t0: t,
                    t1: t + dt_i,
                };
            }
        } else if k.is_multiple_of(stride) && t >= self.cfg.fleet.active_end - 1e-9 {
            // Past the sensing window the filter keeps forecasting with the last fit.
            if let Some(a) = self.assim.as_mut() {
                let dim = a.dmd.rank();
                a.filter = kalman_step(&a.filter, &a.dmd.a_tilde, &DMatrix::zeros(0, dim), &DVector::zeros(0))?;
                log::debug!("t {t}: forecast amplitudes {:?}", a.filter.z.as_slice());
                self.retarget()?;
            }
        }
        Ok(())
    }

    fn uncertainty_step(&mut self, t: f64, drift: &VectorField) -> Result<()> {
        let model_dt = self.cfg.planner.model_dt;
        let op = TransportOp::new(self.grid, &self.cfg.grid.edges, drift, self.params.nu, model_dt)?;
        let coverage = if self.active(t) {
            sensor_mask(self.grid, &self.leg.at(t), &self.params, t - self.cfg.fleet.active_start)
        } else {
            ScalarField::zeros(self.grid)
        };
        let (ix, iy) = self.increments(drift);
        self.uncertainty = step_uncertainty(self.grid, &op, &self.uncertainty, &coverage, (&ix, &iy), &self.params);
        Ok(())
    }

    fn snapshot(&self, step: usize) -> Result<Snapshot> {
        Ok(Snapshot {
            step,
            presence: self.presence()?,
            current: self.ocean.current().clone(),
        })
    }

    fn metrics(&self, step: usize) -> Result<MetricRow> {
        let presence = self.presence()?;
        let truth_presence = ScalarField::from_values(self.grid, self.truth.oil[step].iter().map(|b| f64::from(u8::from(*b))).collect())?;
        Ok(MetricRow {
            step,
            t: step as f64 * self.cfg.time.dt,
            oil_error_m2: oil_presence_error(self.grid, &truth_presence, &presence, self.cfg.measurement.presence_threshold)?,
            rms_current_mps: rms_current_error_where_oil(&self.truth.current[step], self.ocean.current(), &self.truth.oil[step]).unwrap_or(f64::NAN),
            cost: self.cost,
        })
    }
}

/// Runs one strategy against a recorded truth.
pub fn run_strategy(grid: &GridSpec, cfg: &ScenarioConfig, truth: &TruthRecord, start: &TestStart, strategy: Strategy) -> Result<StrategyRun> {
    let dt = cfg.time.dt;
    let base = vec![cfg.base(); cfg.fleet.sensors];
    let params = UncertaintyParams::new(&cfg.uncertainty, grid, cfg.planner.model_dt, base.clone())?;
    let zero = ScalarField::zeros(grid);
    let mut run = Runner {
        grid,
        cfg,
        truth,
        strategy,
        ocean: start.ocean.clone(),
        window: start.window.clone(),
        oil: release_all(grid, cfg, 0..cfg.spill.realizations)?,
        target: None,
        assim: None,
        ladder: None,
        leg: Leg {
            from: base.clone(),
            to: base,
            t0: 0.0,
            t1: 1.0,
        },
        uncertainty: UncertaintyState::from_variances(zero.clone(), zero, params.k_chi),
        params,
        injection: CovarianceInjection::zeros(grid),
        cost: f64::NAN,
        cycle: 0,
        waypoints: Vec::new(),
        tracks: Vec::new(),
    };
    let stride = cfg.snapshot_stride();
    let ustride = cfg.uncertainty_stride();
    let mut rows = Vec::with_capacity(cfg.steps());
    let mut snapshots = Vec::new();
    let mut dumps = Vec::new();
    for k in 0..cfg.steps() {
        let t = k as f64 * dt;
        if wants_snapshot(cfg, k) {
            snapshots.push(run.snapshot(k)?);
        }
        let wind = run.ocean.wind(grid, t);
        match strategy {
            Strategy::None => {}
            Strategy::Industry | Strategy::IndustryNoVelocity => {
                if run.active(t) {
                    run.ladder_step(k, t, &wind)?;
                }
            }
            Strategy::ModelBased => run.model_based_step(k, t, &wind)?,
        }
        if cfg.output.particles_every > 0 && k % cfg.output.particles_every == 0 {
            dumps.push((k, run.oil.clone()));
        }
        let (drift, d_h) = drift_fields(grid, &cfg.drift, run.ocean.current(), &wind)?;
        if strategy == Strategy::ModelBased && k % ustride == 0 {
            run.uncertainty_step(t, &drift)?;
        }
        for e in &mut run.oil {
            e.advect(grid, &drift, &d_h, dt)?;
        }
        let target = match &run.target {
            Some(v) => v.clone(),
            None => run.ocean.forcing_current(grid, t),
        };
        run.ocean.step(grid, dt, &target)?;
        if strategy == Strategy::ModelBased && (k + 1) % stride == 0 {
            let t1 = t + dt;
            let x = state_vector(run.ocean.current(), &run.ocean.wind(grid, t1), &run.uncertainty.q.scaled(cfg.rom.tracer_weight));
            run.window.push(x)?;
            run.window.truncate_front(cfg.rom.window);
        }
        rows.push(run.metrics(k + 1)?);
    }
    if wants_snapshot(cfg, cfg.steps()) {
        snapshots.push(run.snapshot(cfg.steps())?);
    }
    let final_presence = run.presence()?;
    Ok(StrategyRun {
        strategy,
        series: MetricsSeries {
            strategy: strategy.name().to_owned(),
            rows,
        },
        waypoints: run.waypoints,
        tracks: run.tracks,
        snapshots,
        particle_dumps: dumps,
        final_presence,
        final_current: run.ocean.layer.velocity,
        final_uncertainty: (strategy == Strategy::ModelBased).then_some(run.uncertainty),
    })
}

#[derive(Debug, Clone)]
pub struct TwinResult {
    pub grid: GridSpec,
    pub truth: TruthRecord,
    pub runs: Vec<StrategyRun>,
}

impl TwinResult {
    pub fn series(&self) -> Vec<MetricsSeries> {
        self.runs.iter().map(|r| r.series.clone()).collect()
    }

    pub fn run(&self, s: Strategy) -> Option<&StrategyRun> {
        self.runs.iter().find(|r| r.strategy == s)
    }
}

/// Truth run, shared test spin-up, then every configured strategy in parallel.
pub fn run_twin_experiment(cfg: &ScenarioConfig) -> Result<TwinResult> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let (truth, start) = rayon::join(|| run_truth(&grid, cfg), || spin_up_test(&grid, cfg));
    let (truth, start) = (truth?, start?);
    let runs = cfg
        .strategies
        .par_iter()
        .map(|s| run_strategy(&grid, cfg, &truth, &start, *s))
        .collect::<Result<Vec<_>>>()?;
    log::info!("twin experiment finished with {} strategies", runs.len());
    Ok(TwinResult { grid, truth, runs })
}

/// One planning cycle from a saved state holding `presence`, `u`, `v` and
/// optionally `q`, `var_x`, `var_y`. The current persists over the cycle and
/// no reduced model is available, so the modal weighting term is zero.
pub fn plan_from_state(cfg: &ScenarioConfig, state: &crate::fld::FieldSet, t: f64, sensors: Vec<Point>) -> Result<HorizonPlan> {
    let grid = &state.grid;
    let presence = state.require("presence")?;
    let current = VectorField::new(state.require("u")?.clone(), state.require("v")?.clone())?;
    let wind = synthesize_forcing(grid, &cfg.forcing.forcing.with_tide(cfg.forcing.test_tide), t).1;
    let (drift, d_h) = drift_fields(grid, &cfg.drift, &current, &wind)?;
    let params = UncertaintyParams::new(&cfg.uncertainty, grid, cfg.planner.model_dt, sensors.clone())?;
    let uncertainty = match (state.get("var_x"), state.get("var_y")) {
        (Some(vx), Some(vy)) => {
            let mut u = UncertaintyState::from_variances(vx.clone(), vy.clone(), params.k_chi);
            if let Some(q) = state.get("q") {
                u.q = q.clone();
            }
            u
        }
        _ => {
            let zero = ScalarField::zeros(grid);
            UncertaintyState::from_variances(zero.clone(), zero, params.k_chi)
        }
    };
    let (fx, fy) = params.floors(grid, &drift);
    let zero = ScalarField::zeros(grid);
    let dt = cfg.planner.model_dt;
    let incs = (variance_increment(&d_h, &fx, &zero, dt, dt), variance_increment(&d_h, &fy, &zero, dt, dt));
    let entropy = entropy_neighborhood(grid, presence);
    let weights = weighting_field(grid, presence, &entropy, &zero, &cfg.weighting)?;
    let scn = PlanningScenario::new(grid, &cfg.grid.edges, &[drift], incs, weights, uncertainty, &params, sensors, None, &cfg.planner)?;
    plan_receding_horizon(&scn, &cfg.planner)
}
