//! Uncertainty rollout driven by sensor waypoints, used as the forward
//! model of the placement optimizer.
//!
//! Sensors remove uncertainty through a smooth footprint
//! `w(d) = (exp(-d²/(2(r/2)²)) - e⁻⁸) / (1 - e⁻⁸)` for `d < 2r`, so the
//! cost is differentiable in the waypoints. Overlapping footprints combine
//! as a union: `coverage = 1 - Π(1 - w_i)`.

use crate::domain::{GridSpec, Point, ScalarField};
use crate::error::Result;
use crate::placement::adjoint::SteppedSystem;
use crate::uncertainty::{TransportOp, UncertaintyState};

const FLOOR: f64 = 3.354_626_279_025_118_4e-4; // e^-8

/// Smooth footprint weight at distance `d` for radius `r`.
pub fn footprint_weight(d: f64, r: f64) -> f64 {
    if d >= 2.0 * r {
        return 0.0;
    }
    let s2 = 0.25 * r * r;
    (((-d * d / (2.0 * s2)).exp() - FLOOR) / (1.0 - FLOOR)).max(0.0)
}

/// `dw/dd`
pub fn footprint_slope(d: f64, r: f64) -> f64 {
    if d >= 2.0 * r {
        return 0.0;
    }
    let s2 = 0.25 * r * r;
    -(d / s2) * (-d * d / (2.0 * s2)).exp() / (1.0 - FLOOR)
}

/// Per-step inputs of a planning rollout. Waypoint `j` holds during steps
/// `j * steps_per_interval .. (j + 1) * steps_per_interval`.
#[derive(Debug, Clone, Copy)]
pub struct PlanningModel<'a> {
    pub grid: &'a GridSpec,
    /// Transport operator per interval; the last one is reused past the end.
    pub ops: &'a [TransportOp],
    pub inc_x: &'a ScalarField,
    pub inc_y: &'a ScalarField,
    pub weights: &'a ScalarField,
    pub k_s: f64,
    pub k_chi: f64,
    pub radius: f64,
    pub sensors: usize,
    pub intervals: usize,
    pub steps_per_interval: usize,
    pub dt: f64,
    /// Length of one parameter unit, m.
    pub unit: f64,
}

struct Footprint {
    /// `(cell, w, dw/dP)` per touched cell.
    cells: Vec<(usize, f64, Point)>,
}

impl<'a> PlanningModel<'a> {
    fn cells(&self) -> usize {
        self.grid.cell_count()
    }

    fn interval(&self, k: usize) -> usize {
        (k / self.steps_per_interval).min(self.intervals.saturating_sub(1))
    }

    fn op(&self, k: usize) -> &TransportOp {
        &self.ops[self.interval(k).min(self.ops.len() - 1)]
    }

    pub fn position(&self, p: &[f64], j: usize, i: usize) -> Point {
        let b = 2 * (j * self.sensors + i);
        Point::new(p[b] * self.unit, p[b + 1] * self.unit)
    }

    fn footprint(&self, at: Point) -> Footprint {
        let g = self.grid;
        let reach = 2.0 * self.radius;
        let o = g.origin();
        let span = |c: f64, o: f64, h: f64, n: usize| -> (usize, usize) {
            let lo = ((c - reach - o) / h).floor().max(0.0) as usize;
            let hi = (((c + reach - o) / h).ceil().max(-1.0) as i64).min(n as i64 - 1);
            (lo, if hi < 0 { 0 } else { hi as usize + 1 })
        };
        let (i0, i1) = span(at.x, o.x, g.dx(), g.nx());
        let (j0, j1) = span(at.y, o.y, g.dy(), g.ny());
        let mut cells = Vec::new();
        for j in j0..j1 {
            for i in i0..i1 {
                let c = g.index(i, j);
                if g.is_land(c) {
                    continue;
                }
                let d = at - g.center_unchecked(i, j);
                let dist = d.norm();
                let w = footprint_weight(dist, self.radius);
                if w <= 0.0 {
                    continue;
                }
                let grad = if dist > 0.0 {
                    d * (footprint_slope(dist, self.radius) / dist)
                } else {
                    Point::default()
                };
                cells.push((c, w, grad));
            }
        }
        Footprint { cells }
    }

    /// Fraction kept per cell, `1 - k_s coverage`, and the footprints.
    fn keep(&self, k: usize, p: &[f64]) -> (Vec<f64>, Vec<Footprint>) {
        let n = self.cells();
        let j = self.interval(k);
        let prints: Vec<Footprint> = (0..self.sensors).map(|i| self.footprint(self.position(p, j, i))).collect();
        let mut miss = vec![1.0; n];
        for f in &prints {
            for &(c, w, _) in &f.cells {
                miss[c] *= 1.0 - w;
            }
        }
        let keep = miss.iter().map(|m| 1.0 - self.k_s * (1.0 - m)).collect();
        (keep, prints)
    }

    fn pre(&self, k: usize, var: &[f64], inc: &ScalarField) -> Vec<f64> {
        let mut out = vec![0.0; var.len()];
        self.op(k).apply(var, &mut out);
        for (c, o) in out.iter_mut().enumerate() {
            *o = if self.grid.is_land(c) { 0.0 } else { *o + inc.values()[c] };
        }
        out
    }

    pub fn initial_state(state: &UncertaintyState) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * state.q.values().len());
        x.extend_from_slice(state.var_x.values());
        x.extend_from_slice(state.var_y.values());
        x.extend_from_slice(state.q.values());
        x
    }

    /// Unpacks a rollout state into `(var_x, var_y, q)` slices.
    pub fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64], &'x [f64]) {
        let n = self.cells();
        (&x[..n], &x[n..2 * n], &x[2 * n..])
    }

    pub fn flatten(points: &[Point], unit: f64) -> Vec<f64> {
        points.iter().flat_map(|p| [p.x / unit, p.y / unit]).collect()
    }

    fn stage_scale(&self) -> f64 {
        self.grid.cell_area() * self.dt
    }
}

impl SteppedSystem for PlanningModel<'_> {
    fn steps(&self) -> usize {
        self.intervals * self.steps_per_interval
    }

    fn param_len(&self) -> usize {
        2 * self.sensors * self.intervals
    }

    fn step(&self, k: usize, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let n = self.cells();
        let (sx, sy, q) = self.split(x);
        let (keep, _) = self.keep(k, p);
        let px = self.pre(k, sx, self.inc_x);
        let py = self.pre(k, sy, self.inc_y);
        let k2 = self.k_chi * self.k_chi;
        let mut out = vec![0.0; 3 * n];
        for c in 0..n {
            let nx = (keep[c] * px[c]).max(0.0);
            let ny = (keep[c] * py[c]).max(0.0);
            out[c] = nx;
            out[n + c] = ny;
            out[2 * n + c] = (q[c] + k2 * (sx[c] * (ny - sy[c]) + sy[c] * (nx - sx[c]))).clamp(0.0, 1.0);
        }
        Ok(out)
    }

    fn state_vjp(&self, k: usize, x: &[f64], p: &[f64], lambda: &[f64]) -> Vec<f64> {
        let n = self.cells();
        let (sx, sy, q) = self.split(x);
        let (keep, _) = self.keep(k, p);
        let px = self.pre(k, sx, self.inc_x);
        let py = self.pre(k, sy, self.inc_y);
        let k2 = self.k_chi * self.k_chi;
        let mut bx = vec![0.0; n];
        let mut by = vec![0.0; n];
        let mut out = vec![0.0; 3 * n];
        for c in 0..n {
            let (vx, vy) = (keep[c] * px[c], keep[c] * py[c]);
            let (nx, ny) = (vx.max(0.0), vy.max(0.0));
            let raw = q[c] + k2 * (sx[c] * (ny - sy[c]) + sy[c] * (nx - sx[c]));
            let mu = if raw > 0.0 && raw < 1.0 { lambda[2 * n + c] } else { 0.0 };
            let ax = lambda[c] + k2 * sy[c] * mu;
            let ay = lambda[n + c] + k2 * sx[c] * mu;
            bx[c] = if vx > 0.0 { keep[c] * ax } else { 0.0 };
            by[c] = if vy > 0.0 { keep[c] * ay } else { 0.0 };
            out[c] = k2 * (ny - 2.0 * sy[c]) * mu;
            out[n + c] = k2 * (nx - 2.0 * sx[c]) * mu;
            out[2 * n + c] = mu;
        }
        let mut tmp = vec![0.0; n];
        self.op(k).apply_transpose(&bx, &mut tmp);
        out[..n].iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        self.op(k).apply_transpose(&by, &mut tmp);
        out[n..2 * n].iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        out
    }

    fn param_vjp(&self, k: usize, x: &[f64], p: &[f64], lambda: &[f64], grad: &mut [f64]) {
        if self.sensors == 0 {
            return;
        }
        let n = self.cells();
        let (sx, sy, q) = self.split(x);
        let (keep, prints) = self.keep(k, p);
        let px = self.pre(k, sx, self.inc_x);
        let py = self.pre(k, sy, self.inc_y);
        let k2 = self.k_chi * self.k_chi;
        // dJ/dkeep per touched cell
        let mut d_keep = vec![0.0; n];
        let mut seen = vec![false; n];
        for f in &prints {
            for &(c, _, _) in &f.cells {
                if std::mem::replace(&mut seen[c], true) {
                    continue;
                }
                let (vx, vy) = (keep[c] * px[c], keep[c] * py[c]);
                let (nx, ny) = (vx.max(0.0), vy.max(0.0));
                let raw = q[c] + k2 * (sx[c] * (ny - sy[c]) + sy[c] * (nx - sx[c]));
                let mu = if raw > 0.0 && raw < 1.0 { lambda[2 * n + c] } else { 0.0 };
                let ax = lambda[c] + k2 * sy[c] * mu;
                let ay = lambda[n + c] + k2 * sx[c] * mu;
                let mut d = 0.0;
                if vx > 0.0 {
                    d += px[c] * ax;
                }
                if vy > 0.0 {
                    d += py[c] * ay;
                }
                d_keep[c] = d;
            }
        }
        let mut wmat = vec![0.0; self.sensors * n];
        for (i, f) in prints.iter().enumerate() {
            for &(c, w, _) in &f.cells {
                wmat[i * n + c] = w;
            }
        }
        let j = self.interval(k);
        for (i, f) in prints.iter().enumerate() {
            let b = 2 * (j * self.sensors + i);
            for &(c, _, dw) in &f.cells {
                let others: f64 = (0..self.sensors).filter(|&l| l != i).map(|l| 1.0 - wmat[l * n + c]).product();
                let s = d_keep[c] * (-self.k_s * others) * self.unit;
                grad[b] += s * dw.x;
                grad[b + 1] += s * dw.y;
            }
        }
    }

    fn stage_cost(&self, _: usize, x: &[f64]) -> f64 {
        let (_, _, q) = self.split(x);
        let s = self.stage_scale();
        q.iter().zip(self.weights.values()).map(|(q, e)| e * q * q).sum::<f64>() * s
    }

    fn stage_cost_grad(&self, _: usize, x: &[f64]) -> Vec<f64> {
        let n = self.cells();
        let (_, _, q) = self.split(x);
        let s = self.stage_scale();
        let mut g = vec![0.0; 3 * n];
        for c in 0..n {
            g[2 * n + c] = 2.0 * self.weights.values()[c] * q[c] * s;
        }
        g
    }
}

/// Time mean of `E q²` over the states of a rollout, per cell.
pub fn mean_weighted_uncertainty(model: &PlanningModel, states: &[Vec<f64>]) -> ScalarField {
    let n = model.grid.cell_count();
    let mut acc = vec![0.0; n];
    let count = states.len().saturating_sub(1).max(1);
    for x in states.iter().skip(1) {
        let (_, _, q) = model.split(x);
        for c in 0..n {
            acc[c] += model.weights.values()[c] * q[c] * q[c];
        }
    }
    acc.iter_mut().for_each(|v| *v /= count as f64);
    ScalarField::from_values(model.grid, acc).expect("finite uncertainty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::EdgeConditions;
    use crate::placement::adjoint::{parameter_gradient, rollout, solve_adjoint};
    use crate::domain::VectorField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn footprint_shape() {
        assert_eq!(footprint_weight(0.0, 100.0), 1.0);
        assert_eq!(footprint_weight(200.0, 100.0), 0.0);
        assert!(footprint_weight(199.999, 100.0) < 1e-7);
        let h = 1e-6;
        for d in [10.0, 50.0, 120.0, 180.0] {
            let fd = (footprint_weight(d + h, 100.0) - footprint_weight(d - h, 100.0)) / (2.0 * h);
            assert!((fd - footprint_slope(d, 100.0)).abs() < 1e-8);
        }
    }

    struct Case {
        grid: GridSpec,
        ops: Vec<TransportOp>,
        inc_x: ScalarField,
        inc_y: ScalarField,
        weights: ScalarField,
        x0: Vec<f64>,
    }

    fn case(seed: u64, n: usize, intervals: usize) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::new(n, n, 100.0, 100.0, Point::new(50.0, 50.0)).unwrap();
        let ops = (0..intervals)
            .map(|_| {
                let drift = VectorField::from_fn(&grid, |_| (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)));
                TransportOp::new(&grid, &EdgeConditions::periodic(), &drift, 20.0, 30.0).unwrap()
            })
            .collect();
        let inc_x = ScalarField::from_fn(&grid, |_| rng.random_range(0.5..1.5));
        let inc_y = ScalarField::from_fn(&grid, |_| rng.random_range(0.5..1.5));
        let weights = ScalarField::from_fn(&grid, |_| rng.random_range(0.0..1.0));
        let vx = ScalarField::from_fn(&grid, |_| rng.random_range(5.0..20.0));
        let vy = ScalarField::from_fn(&grid, |_| rng.random_range(5.0..20.0));
        let st = UncertaintyState::from_variances(vx, vy, 2e-3);
        Case {
            x0: PlanningModel::initial_state(&st),
            grid,
            ops,
            inc_x,
            inc_y,
            weights,
        }
    }

    fn model<'a>(c: &'a Case, sensors: usize, intervals: usize, radius: f64) -> PlanningModel<'a> {
        PlanningModel {
            grid: &c.grid,
            ops: &c.ops,
            inc_x: &c.inc_x,
            inc_y: &c.inc_y,
            weights: &c.weights,
            k_s: 0.8,
            k_chi: 2e-3,
            radius,
            sensors,
            intervals,
            steps_per_interval: 2,
            dt: 30.0,
            unit: 100.0,
        }
    }

    #[test]
    fn adjoint_gradient_matches_fine_finite_differences() {
        let c = case(1, 8, 3);
        let m = model(&c, 2, 3, 150.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..m.param_len()).map(|_| rng.random_range(2.0..6.0)).collect();
        let roll = rollout(&m, c.x0.clone(), &p).unwrap();
        let adj = solve_adjoint(&m, &roll, &p).unwrap();
        let g = parameter_gradient(&m, &roll, &adj, &p);
        let h = 1e-5;
        for k in 0..p.len() {
            let mut pp = p.clone();
            pp[k] += h;
            let fp = rollout(&m, c.x0.clone(), &pp).unwrap().cost();
            pp[k] -= 2.0 * h;
            let fm = rollout(&m, c.x0.clone(), &pp).unwrap().cost();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3 * roll.cost()), "k {k}: fd {fd} adj {}", g[k]);
        }
    }

    #[test]
    fn adjoint_satisfies_transposed_stepping_equations() {
        // dense jacobians by central differences of the step map as oracle
        let c = case(3, 4, 3);
        let m = model(&c, 1, 3, 120.0);
        let p = vec![1.7, 2.2, 2.4, 1.1, 1.9, 2.9];
        let roll = rollout(&m, c.x0.clone(), &p).unwrap();
        let adj = solve_adjoint(&m, &roll, &p).unwrap();
        let dim = c.x0.len();
        let mut worst: f64 = 0.0;
        for k in 0..m.steps() {
            let x = &roll.states[k];
            let mut lhs = vec![0.0; dim];
            for col in 0..dim {
                let h = 1e-6 * x[col].abs().max(1e-3);
                let mut xp = x.clone();
                xp[col] += h;
                let fp = m.step(k, &xp, &p).unwrap();
                xp[col] -= 2.0 * h;
                let fm = m.step(k, &xp, &p).unwrap();
                lhs[col] = (0..dim).map(|r| (fp[r] - fm[r]) / (2.0 * h) * adj.lambda[k + 1][r]).sum();
            }
            if k > 0 {
                let g = m.stage_cost_grad(k, x);
                lhs.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let num: f64 = lhs.iter().zip(&adj.lambda[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = adj.lambda[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
        assert!(worst <= 1e-8, "relative adjoint residual {worst}");
    }

    #[test]
    fn no_weights_no_cost_and_zero_adjoint() {
        let mut c = case(4, 6, 2);
        c.weights = ScalarField::zeros(&c.grid);
        let m = model(&c, 1, 2, 150.0);
        let p = vec![3.0, 3.0, 3.2, 2.8];
        let roll = rollout(&m, c.x0.clone(), &p).unwrap();
        assert_eq!(roll.cost(), 0.0);
        let adj = solve_adjoint(&m, &roll, &p).unwrap();
        assert!(adj.lambda.iter().flatten().all(|&v| v == 0.0));
        assert!(parameter_gradient(&m, &roll, &adj, &p).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sensor_over_uncertainty_lowers_cost() {
        let c = case(5, 6, 2);
        let empty = model(&c, 0, 2, 150.0);
        let j0 = rollout(&empty, c.x0.clone(), &[]).unwrap().cost();
        let one = model(&c, 1, 2, 150.0);
        let j1 = rollout(&one, c.x0.clone(), &[3.0, 3.0, 3.0, 3.0]).unwrap().cost();
        assert!(j1 < j0);
        // doubling the weights doubles the cost exactly
        let w2 = c.weights.scaled(2.0);
        let doubled = PlanningModel { weights: &w2, ..one };
        let j2 = rollout(&doubled, c.x0.clone(), &[3.0, 3.0, 3.0, 3.0]).unwrap().cost();
        assert!((j2 - 2.0 * j1).abs() <= 1e-14 * j2);
    }
}
