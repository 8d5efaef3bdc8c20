//! Receding-horizon path planning: chains of block optimizations over
//! several horizon lengths, of which the cheapest is kept and only its first
//! waypoint committed.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{GridSpec, Point, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::flow::EdgeConditions;
use crate::placement::adjoint::{parameter_gradient, rollout, solve_adjoint};
use crate::placement::descent::{descend, initial_positions, DescentConfig, Objective};
use crate::placement::penalty::{PenaltyContext, PenaltyTerms};
use crate::placement::rollout::{mean_weighted_uncertainty, PlanningModel};
use crate::uncertainty::{TransportOp, UncertaintyParams, UncertaintyState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Candidate horizons in planning intervals; each must divide `cycle_intervals`.
    pub horizons: Vec<usize>,
    pub cycle_intervals: usize,
    /// Time between waypoints, s.
    pub interval_s: f64,
    /// Uncertainty step inside the planner, s.
    pub model_dt: f64,
    pub penalty_weight: f64,
    pub descent: DescentConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizons: vec![1, 2, 4],
            cycle_intervals: 4,
            interval_s: 900.0,
            model_dt: 300.0,
            penalty_weight: 0.1,
            descent: DescentConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn steps_per_interval(&self) -> usize {
        (self.interval_s / self.model_dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::Config("at least one planning horizon is required".into()));
        }
        if let Some(h) = self.horizons.iter().find(|&&h| h == 0 || !self.cycle_intervals.is_multiple_of(h)) {
            return Err(Error::Config(format!(
                "horizon {h} does not divide the {} interval cycle",
                self.cycle_intervals
            )));
        }
        let spi = self.interval_s / self.model_dt;
        if !(self.model_dt > 0.0) || spi < 1.0 || (spi - spi.round()).abs() > 1e-9 {
            return Err(Error::Config("planning interval must be a whole number of model steps".into()));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::Config("penalty weight must be non-negative".into()));
        }
        self.descent.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    /// Weighted uncertainty, relative to the empty-fleet value over the cycle.
    pub uncertainty: f64,
    pub penalty: f64,
    pub per_step: Vec<f64>,
}

/// Everything one planning cycle needs, frozen at the cycle start.
#[derive(Debug, Clone)]
pub struct PlanningScenario {
    pub grid: GridSpec,
    ops: Vec<TransportOp>,
    inc_x: ScalarField,
    inc_y: ScalarField,
    pub weights: ScalarField,
    pub state: UncertaintyState,
    pub start: Vec<Point>,
    pub penalty: PenaltyContext,
    k_s: f64,
    k_chi: f64,
    radius: f64,
    steps_per_interval: usize,
    dt: f64,
    unit: f64,
    penalty_weight: f64,
    intervals: usize,
    reference: f64,
}

impl PlanningScenario {
    /// `drifts` holds the forecast drift of each cycle interval; the last
    /// one is reused when fewer are given. `increments` are the variance
    /// sources per planner step.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &GridSpec,
        edges: &EdgeConditions,
        drifts: &[VectorField],
        increments: (ScalarField, ScalarField),
        weights: ScalarField,
        state: UncertaintyState,
        params: &UncertaintyParams,
        start: Vec<Point>,
        no_fly: Option<&[bool]>,
        cfg: &PlannerConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if drifts.is_empty() {
            return Err(Error::Config("planner needs at least one drift forecast".into()));
        }
        for f in [&increments.0, &increments.1, &weights, &state.q, &state.var_x, &state.var_y] {
            f.check_grid(grid)?;
        }
        let ops = (0..cfg.cycle_intervals)
            .map(|j| TransportOp::new(grid, edges, &drifts[j.min(drifts.len() - 1)], params.nu, cfg.model_dt))
            .collect::<Result<Vec<_>>>()?;
        let unit = grid.min_spacing();
        let reach = params.v_sensor * cfg.interval_s;
        let penalty = PenaltyContext::new(grid, &weights, &state.q, no_fly, reach, params.radius, unit);
        let mut scn = Self {
            grid: grid.clone(),
            ops,
            inc_x: increments.0,
            inc_y: increments.1,
            weights,
            state,
            start,
            penalty,
            k_s: params.k_s,
            k_chi: params.k_chi,
            radius: params.radius,
            steps_per_interval: cfg.steps_per_interval(),
            dt: cfg.model_dt,
            unit,
            penalty_weight: cfg.penalty_weight,
            intervals: cfg.cycle_intervals,
            reference: 1.0,
        };
        let x0 = PlanningModel::initial_state(&scn.state);
        let empty = rollout(&scn.model(0, scn.intervals, 0), x0, &[])?.cost();
        scn.reference = if empty > 0.0 { empty } else { 1.0 };
        Ok(scn)
    }

    pub fn sensors(&self) -> usize {
        self.start.len()
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Empty-fleet weighted uncertainty over the whole cycle.
    pub fn reference(&self) -> f64 {
        self.reference
    }

    /// Planner length unit, m.
    pub fn unit(&self) -> f64 {
        self.unit
    }

    fn model(&self, offset: usize, len: usize, sensors: usize) -> PlanningModel<'_> {
        PlanningModel {
            grid: &self.grid,
            ops: &self.ops[offset..offset + len],
            inc_x: &self.inc_x,
            inc_y: &self.inc_y,
            weights: &self.weights,
            k_s: self.k_s,
            k_chi: self.k_chi,
            radius: self.radius,
            sensors,
            intervals: len,
            steps_per_interval: self.steps_per_interval,
            dt: self.dt,
            unit: self.unit,
        }
    }

    /// Problem of choosing waypoints for intervals `offset..offset + len`
    /// from the given state and fleet positions.
    pub fn block(&self, offset: usize, len: usize, x0: Vec<f64>, prev: Vec<Point>) -> Result<PlanningProblem<'_>> {
        if len == 0 || offset + len > self.intervals {
            return Err(Error::Config(format!("block {offset}+{len} outside the {} interval cycle", self.intervals)));
        }
        if prev.len() != self.sensors() {
            return Err(Error::Config("fleet size mismatch".into()));
        }
        Ok(PlanningProblem {
            scenario: self,
            model: self.model(offset, len, self.sensors()),
            x0,
            prev,
        })
    }

    /// Problem over the whole cycle from the scenario start.
    pub fn full(&self) -> Result<PlanningProblem<'_>> {
        self.block(0, self.intervals, PlanningModel::initial_state(&self.state), self.start.clone())
    }
}

/// Cost of a block of waypoints. Positions handed to [`Objective`] are in
/// planner units (`unit` metres), interval-major.
pub struct PlanningProblem<'a> {
    scenario: &'a PlanningScenario,
    model: PlanningModel<'a>,
    x0: Vec<f64>,
    prev: Vec<Point>,
}

impl PlanningProblem<'_> {
    fn to_params(&self, p: &[Point]) -> Vec<f64> {
        p.iter().flat_map(|q| [q.x, q.y]).collect()
    }

    fn to_metres(&self, p: &[Point]) -> Vec<Point> {
        p.iter().map(|&q| q * self.model.unit).collect()
    }

    pub fn to_units(&self, p: &[Point]) -> Vec<Point> {
        p.iter().map(|&q| q * (1.0 / self.model.unit)).collect()
    }

    fn penalty(&self, p: &[Point]) -> (PenaltyTerms, Vec<Point>) {
        self.scenario.penalty.path_penalty(&self.prev, &self.to_metres(p))
    }

    pub fn evaluate(&self, p: &[Point]) -> Result<CostBreakdown> {
        let roll = rollout(&self.model, self.x0.clone(), &self.to_params(p))?;
        let per_step: Vec<f64> = roll.stage_costs.iter().map(|c| c / self.scenario.reference).collect();
        let uncertainty = per_step.iter().sum();
        let penalty = self.scenario.penalty_weight * self.penalty(p).0.total();
        Ok(CostBreakdown {
            total: uncertainty + penalty,
            uncertainty,
            penalty,
            per_step,
        })
    }

    /// Final planner state after flying `p`.
    pub fn final_state(&self, p: &[Point]) -> Result<Vec<f64>> {
        let mut roll = rollout(&self.model, self.x0.clone(), &self.to_params(p))?;
        Ok(roll.states.pop().expect("rollout has an initial state"))
    }

    /// Waypoints of a path that heads for the uncertainty peaks of the
    /// empty-fleet rollout, each sensor moving at most one reach per interval.
    pub fn initial_guess(&self) -> Result<Vec<Point>> {
        let n = self.model.sensors;
        let empty = PlanningModel { sensors: 0, ..self.model };
        let roll = rollout(&empty, self.x0.clone(), &[])?;
        let field = mean_weighted_uncertainty(&empty, &roll.states);
        let targets = initial_positions(&self.scenario.grid, &field, n);
        // greedy nearest pairing of sensors and peaks
        let mut sensor_free = vec![true; n];
        let mut target_free = vec![true; n];
        let mut goal = vec![Point::default(); n];
        for _ in 0..n {
            let mut best = (f64::INFINITY, 0, 0);
            for (i, p) in self.prev.iter().enumerate().filter(|(i, _)| sensor_free[*i]) {
                for (t, q) in targets.iter().enumerate().filter(|(t, _)| target_free[*t]) {
                    let d = p.dist(*q);
                    if d < best.0 {
                        best = (d, i, t);
                    }
                }
            }
            let (_, i, t) = best;
            sensor_free[i] = false;
            target_free[t] = false;
            goal[i] = targets[t];
        }
        let reach = self.scenario.penalty.reach;
        let mut path = Vec::with_capacity(n * self.model.intervals);
        for j in 1..=self.model.intervals {
            for i in 0..n {
                let (from, to) = (self.prev[i], goal[i]);
                let d = from.dist(to);
                let frac = if d > 0.0 { (j as f64 * reach / d).min(1.0) } else { 1.0 };
                path.push(from + (to - from) * frac);
            }
        }
        let path = self.scenario.penalty.clamp_path(&self.prev, &path);
        Ok(self.to_units(&path))
    }
}

impl Objective for PlanningProblem<'_> {
    fn value(&self, p: &[Point]) -> Result<f64> {
        Ok(self.evaluate(p)?.total)
    }

    fn value_and_gradient(&self, p: &[Point]) -> Result<(f64, Vec<Point>)> {
        let params = self.to_params(p);
        let roll = rollout(&self.model, self.x0.clone(), &params)?;
        let adj = solve_adjoint(&self.model, &roll, &params)?;
        let g = parameter_gradient(&self.model, &roll, &adj, &params);
        let r = self.scenario.reference;
        let (terms, pg) = self.penalty(p);
        let w = self.scenario.penalty_weight;
        let value = roll.cost() / r + w * terms.total();
        let grad = g
            .chunks_exact(2)
            .zip(&pg)
            .map(|(gu, gp)| Point::new(gu[0] / r, gu[1] / r) + *gp * (w * self.model.unit))
            .collect();
        Ok((value, grad))
    }

    fn clamp(&self, p: &[Point]) -> Vec<Point> {
        self.to_units(&self.scenario.penalty.clamp_path(&self.prev, &self.to_metres(p)))
    }
}

/// Result of one horizon chain over the cycle.
#[derive(Debug, Clone)]
pub struct ChainResult {
    pub horizon: usize,
    /// Waypoints in metres, interval-major.
    pub waypoints: Vec<Point>,
    pub cost: f64,
    pub iterations: usize,
    pub stalled: bool,
}

/// Plans the cycle with blocks of `horizon` intervals, each optimized from
/// the state the previous block leaves behind.
pub fn plan_chain(scn: &PlanningScenario, horizon: usize, cfg: &DescentConfig) -> Result<ChainResult> {
    if horizon == 0 || !scn.intervals.is_multiple_of(horizon) {
        return Err(Error::Config(format!("horizon {horizon} does not divide the cycle")));
    }
    let mut x = PlanningModel::initial_state(&scn.state);
    let mut prev = scn.start.clone();
    let mut waypoints = Vec::with_capacity(scn.sensors() * scn.intervals);
    let (mut cost, mut iterations, mut stalled) = (0.0, 0, false);
    for b in 0..scn.intervals / horizon {
        let problem = scn.block(b * horizon, horizon, x, prev)?;
        let guess = problem.initial_guess()?;
        let res = descend(&problem, &guess, cfg)?;
        iterations += res.iterations;
        stalled |= res.stalled;
        cost += res.value;
        let next_x = problem.final_state(&res.positions)?;
        let path = problem.to_metres(&res.positions);
        prev = path[path.len() - scn.sensors()..].to_vec();
        waypoints.extend(path);
        x = next_x;
    }
    Ok(ChainResult {
        horizon,
        waypoints,
        cost,
        iterations,
        stalled,
    })
}

#[derive(Debug, Clone)]
pub struct HorizonPlan {
    /// Winning chain.
    pub best: ChainResult,
    /// `(horizon, total cost)` of every chain, in candidate order.
    pub costs: Vec<(usize, f64)>,
    /// Positions the fleet is sent to for the next interval.
    pub committed: Vec<Point>,
    /// Set when every chain stalled in a line search.
    pub stalled: bool,
}

/// Runs one chain per horizon in parallel and keeps the cheapest, ties
/// going to the earlier candidate.
pub fn plan_receding_horizon(scn: &PlanningScenario, cfg: &PlannerConfig) -> Result<HorizonPlan> {
    cfg.validate()?;
    let chains: Vec<ChainResult> = cfg
        .horizons
        .par_iter()
        .map(|&h| plan_chain(scn, h, &cfg.descent))
        .collect::<Result<_>>()?;
    let costs = chains.iter().map(|c| (c.horizon, c.cost)).collect();
    let stalled = chains.iter().all(|c| c.stalled);
    let best = chains
        .into_iter()
        .reduce(|a, b| if b.cost < a.cost { b } else { a })
        .expect("validated non-empty horizons");
    if stalled {
        log::warn!("every planning chain stalled; committing the cheapest");
    }
    let committed = best.waypoints[..scn.sensors()].to_vec();
    Ok(HorizonPlan {
        best,
        costs,
        committed,
        stalled,
    })
}

pub const WAYPOINT_CSV_HEADER: [&str; 6] = ["cycle", "sensor_id", "t", "x", "y", "committed"];

/// Writes the planned path of one cycle starting at time `t0`.
pub fn write_waypoints_csv<W: Write>(
    w: &mut csv::Writer<W>,
    cycle: usize,
    t0: f64,
    interval_s: f64,
    plan: &HorizonPlan,
) -> Result<()> {
    let n = plan.committed.len();
    if n == 0 {
        return Ok(());
    }
    for (k, p) in plan.best.waypoints.iter().enumerate() {
        let j = k / n;
        w.write_record([
            cycle.to_string(),
            (k % n).to_string(),
            (t0 + (j + 1) as f64 * interval_s).to_string(),
            p.x.to_string(),
            p.y.to_string(),
            u8::from(j == 0).to_string(),
        ])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::UncertaintyConfig;

    /// 12x12 grid of 500 m cells, uniform eastward drift, uncertainty
    /// concentrated in a blob near the centre.
    fn scenario(start: Vec<Point>, cfg: &PlannerConfig, weight_scale: f64) -> PlanningScenario {
        let g = GridSpec::new(12, 12, 500.0, 500.0, Point::new(250.0, 250.0)).unwrap();
        let ucfg = UncertaintyConfig {
            radius: 600.0,
            v_sensor: 1.0,
            ..Default::default()
        };
        let params = UncertaintyParams::new(&ucfg, &g, cfg.model_dt, start.clone()).unwrap();
        let blob = |p: Point| (-((p.x - 3500.0).powi(2) + (p.y - 3000.0).powi(2)) / (2.0 * 900.0f64.powi(2))).exp();
        let var = ScalarField::from_fn(&g, |p| 8.0 * blob(p));
        let st = UncertaintyState::from_variances(var.clone(), var.clone(), params.k_chi);
        let inc = ScalarField::from_fn(&g, |p| 0.2 * blob(p));
        let drift = VectorField::uniform(&g, 0.05, 0.0);
        let weights = ScalarField::constant(&g, weight_scale);
        PlanningScenario::new(&g, &EdgeConditions::periodic(), &[drift], (inc.clone(), inc), weights, st, &params, start, None, cfg)
            .unwrap()
    }

    #[test]
    fn config_rejects_bad_horizons() {
        let mut c = PlannerConfig::default();
        assert!(c.validate().is_ok());
        c.horizons = vec![3];
        assert!(c.validate().is_err());
        c.horizons = vec![];
        assert!(c.validate().is_err());
        c = PlannerConfig {
            model_dt: 400.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn breakdown_adds_up_and_empty_fleet_is_reference() {
        let cfg = PlannerConfig::default();
        let scn = scenario(vec![Point::new(3250.0, 2750.0)], &cfg, 1.0);
        let pr = scn.full().unwrap();
        let far = pr.to_units(&[Point::new(5750.0, 5750.0); 4]);
        let b = pr.evaluate(&far).unwrap();
        assert!((b.total - b.uncertainty - b.penalty).abs() <= 1e-10);
        assert!((b.per_step.iter().sum::<f64>() - b.uncertainty).abs() <= 1e-12);
        // a sensor parked on the blob beats one far away
        let on = pr.to_units(&[Point::new(3500.0, 3000.0); 4]);
        assert!(pr.evaluate(&on).unwrap().uncertainty < b.uncertainty);
        assert!(b.uncertainty <= 1.0 + 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = PlannerConfig::default();
        let scn = scenario(vec![Point::new(3250.0, 2750.0), Point::new(4250.0, 3250.0)], &cfg, 1.0);
        let pr = scn.full().unwrap();
        // strictly inside the reach disks, away from the hinge kinks
        let p: Vec<Point> = (1..=4)
            .flat_map(|j| {
                let s = 300.0 * j as f64;
                [Point::new(3250.0 + s, 2750.0 + 0.5 * s), Point::new(4250.0 - 0.3 * s, 3250.0 - s)]
            })
            .collect();
        let p = pr.to_units(&p);
        let (f, g) = pr.value_and_gradient(&p).unwrap();
        assert!((f - pr.value(&p).unwrap()).abs() <= 1e-14 * f.abs());
        let h = 1e-4;
        for k in 0..p.len() {
            for axis in 0..2 {
                let bump = |s: f64| {
                    let mut q = p.clone();
                    if axis == 0 {
                        q[k].x += s;
                    } else {
                        q[k].y += s;
                    }
                    pr.value(&q).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = if axis == 0 { g[k].x } else { g[k].y };
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "k {k} axis {axis}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn penalty_only_gradient_is_the_penalty_gradient() {
        let cfg = PlannerConfig::default();
        let scn = scenario(vec![Point::new(250.0, 250.0)], &cfg, 0.0);
        let pr = scn.full().unwrap();
        // the third waypoint jumps beyond reach
        let path = pr.to_units(&[
            Point::new(250.0, 250.0),
            Point::new(750.0, 250.0),
            Point::new(4750.0, 250.0),
            Point::new(4750.0, 750.0),
        ]);
        let (_, g) = pr.value_and_gradient(&path).unwrap();
        let (_, pg) = scn.penalty.path_penalty(&[Point::new(250.0, 250.0)], &pr.to_metres(&path));
        for (a, b) in g.iter().zip(&pg) {
            let expect = *b * (cfg.penalty_weight * scn.unit());
            assert!((a.x - expect.x).abs() < 1e-12 && (a.y - expect.y).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_weights_leaves_plan_unchanged() {
        let cfg = PlannerConfig {
            horizons: vec![2],
            penalty_weight: 0.0,
            ..Default::default()
        };
        let start = vec![Point::new(2750.0, 2750.0)];
        let a = plan_receding_horizon(&scenario(start.clone(), &cfg, 1.0), &cfg).unwrap();
        let b = plan_receding_horizon(&scenario(start, &cfg, 3.0), &cfg).unwrap();
        for (p, q) in a.best.waypoints.iter().zip(&b.best.waypoints) {
            assert!(p.dist(*q) < 1e-6 * 500.0, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn receding_plan_is_feasible_and_picks_argmin() {
        let cfg = PlannerConfig::default();
        let start = vec![Point::new(1250.0, 1250.0), Point::new(5250.0, 4750.0)];
        let scn = scenario(start.clone(), &cfg, 1.0);
        let plan = plan_receding_horizon(&scn, &cfg).unwrap();
        assert!(scn.penalty.is_feasible(&start, &plan.best.waypoints));
        let reach = scn.penalty.reach;
        for (p, s) in plan.committed.iter().zip(&start) {
            assert!(p.dist(*s) <= reach * (1.0 + 1e-9));
        }
        let min = plan.costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        assert_eq!(plan.best.cost, min);
        assert_eq!(plan.costs.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2, 4]);
        // the plan does better than leaving the fleet where it is
        let pr = scn.full().unwrap();
        let parked: Vec<Point> = (0..4).flat_map(|_| start.clone()).collect();
        let stay = pr.evaluate(&pr.to_units(&parked)).unwrap().total;
        assert!(plan.best.cost < stay);
    }

    #[test]
    fn single_horizon_equals_chained_descent() {
        let cfg = PlannerConfig {
            horizons: vec![1],
            ..Default::default()
        };
        let scn = scenario(vec![Point::new(2250.0, 3250.0)], &cfg, 1.0);
        let plan = plan_receding_horizon(&scn, &cfg).unwrap();
        let chain = plan_chain(&scn, 1, &cfg.descent).unwrap();
        assert_eq!(plan.best.waypoints, chain.waypoints);
        assert_eq!(plan.costs, vec![(1, chain.cost)]);
    }

    #[test]
    fn waypoint_csv_layout() {
        let cfg = PlannerConfig {
            horizons: vec![4],
            ..Default::default()
        };
        let scn = scenario(vec![Point::new(2250.0, 3250.0), Point::new(3250.0, 3250.0)], &cfg, 1.0);
        let plan = plan_receding_horizon(&scn, &cfg).unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(WAYPOINT_CSV_HEADER).unwrap();
        write_waypoints_csv(&mut w, 3, 7200.0, cfg.interval_s, &plan).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "cycle,sensor_id,t,x,y,committed");
        assert_eq!(lines.len(), 1 + 8);
        assert!(lines[1].starts_with("3,0,8100,") && lines[1].ends_with(",1"));
        assert!(lines[3].starts_with("3,0,9000,") && lines[3].ends_with(",0"));
    }
}
