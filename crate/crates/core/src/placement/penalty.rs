//! Constraint penalties on sensor waypoints: reachability, distance to the
//! region of interest, and excluded areas.

use crate::domain::{GridSpec, Point, ScalarField};

#[derive(Debug, Clone)]
pub struct PenaltyContext {
    grid: GridSpec,
    excluded: Vec<bool>,
    /// Centers of cells with positive weighted uncertainty.
    interest: Vec<Point>,
    permitted: Vec<Point>,
    /// Distance a sensor can cover between waypoints, m.
    pub reach: f64,
    pub radius: f64,
    /// Length scale of the penalty, m.
    pub unit: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PenaltyTerms {
    pub reach: f64,
    pub interest: f64,
    pub excluded: f64,
}

impl PenaltyTerms {
    pub fn total(&self) -> f64 {
        self.reach + self.interest + self.excluded
    }
}

fn unit_vec(d: Point) -> Point {
    let n = d.norm();
    if n > 0.0 {
        d * (1.0 / n)
    } else {
        Point::default()
    }
}

fn nearest(points: &[Point], p: Point) -> Option<(Point, f64)> {
    points
        .iter()
        .map(|&c| (c, c.dist(p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

impl PenaltyContext {
    /// `no_fly` marks extra excluded cells on top of land.
    pub fn new(
        grid: &GridSpec,
        weights: &ScalarField,
        q: &ScalarField,
        no_fly: Option<&[bool]>,
        reach: f64,
        radius: f64,
        unit: f64,
    ) -> Self {
        let excluded: Vec<bool> = (0..grid.cell_count())
            .map(|c| grid.is_land(c) || no_fly.is_some_and(|m| m[c]))
            .collect();
        let interest = (0..grid.cell_count())
            .filter(|&c| !excluded[c] && weights.values()[c] * q.values()[c] > 0.0)
            .map(|c| grid.center_of(c))
            .collect();
        let permitted = (0..grid.cell_count())
            .filter(|&c| !excluded[c])
            .map(|c| grid.center_of(c))
            .collect();
        Self {
            grid: grid.clone(),
            excluded,
            interest,
            permitted,
            reach,
            radius,
            unit,
        }
    }

    pub fn is_excluded(&self, p: Point) -> bool {
        match self.grid.locate_index(p) {
            Ok(c) => self.excluded[c],
            Err(_) => true,
        }
    }

    pub fn interest_count(&self) -> usize {
        self.interest.len()
    }

    /// Penalty of one sensor at `p` that left `prev` one planning interval
    /// earlier, with gradients with respect to `p` and `prev`.
    pub fn penalty(&self, p: Point, prev: Point) -> (PenaltyTerms, Point, Point) {
        let u = self.unit;
        let mut terms = PenaltyTerms::default();
        let mut grad = Point::default();
        let mut grad_prev = Point::default();

        let step = p - prev;
        let excess = step.norm() - self.reach;
        if excess > 0.0 {
            terms.reach = (excess / u).powi(2);
            let g = unit_vec(step) * (2.0 * excess / (u * u));
            grad = grad + g;
            grad_prev = grad_prev - g;
        }

        if let Some((c, d)) = nearest(&self.interest, p) {
            if d > self.radius {
                terms.interest = (d - self.radius) / u;
                grad = grad + unit_vec(p - c) * (1.0 / u);
            }
        }

        if self.is_excluded(p) {
            if let Some((c, d)) = nearest(&self.permitted, p) {
                terms.excluded = d / u;
                grad = grad + unit_vec(p - c) * (1.0 / u);
            }
        }
        (terms, grad, grad_prev)
    }

    /// Summed penalty of a path of waypoints stored interval-major
    /// (`waypoints[j * n + i]` is sensor `i` at interval `j`).
    pub fn path_penalty(&self, start: &[Point], waypoints: &[Point]) -> (PenaltyTerms, Vec<Point>) {
        let n = start.len();
        let mut total = PenaltyTerms::default();
        let mut grad = vec![Point::default(); waypoints.len()];
        for (k, &p) in waypoints.iter().enumerate() {
            let prev = if k < n { start[k] } else { waypoints[k - n] };
            let (t, g, gp) = self.penalty(p, prev);
            total.reach += t.reach;
            total.interest += t.interest;
            total.excluded += t.excluded;
            grad[k] = grad[k] + g;
            if k >= n {
                grad[k - n] = grad[k - n] + gp;
            }
        }
        (total, grad)
    }

    /// Projects a path onto the feasible set: each waypoint within reach of
    /// the previous one, inside the domain and outside excluded cells.
    pub fn clamp_path(&self, start: &[Point], waypoints: &[Point]) -> Vec<Point> {
        let n = start.len();
        let reach = self.reach * (1.0 - 1e-12);
        let (lo, hi) = self.grid.bounds();
        let mut out: Vec<Point> = Vec::with_capacity(waypoints.len());
        for (k, &p) in waypoints.iter().enumerate() {
            let prev = if k < n { start[k] } else { out[k - n] };
            let mut q = Point::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
            let step = q - prev;
            if step.norm() > reach {
                q = prev + unit_vec(step) * reach;
            }
            if self.is_excluded(q) {
                q = self
                    .permitted
                    .iter()
                    .filter(|c| c.dist(prev) <= reach)
                    .min_by(|a, b| a.dist(q).total_cmp(&b.dist(q)))
                    .copied()
                    .unwrap_or(prev);
            }
            out.push(q);
        }
        out
    }

    /// True when every waypoint is within reach and permitted.
    pub fn is_feasible(&self, start: &[Point], waypoints: &[Point]) -> bool {
        let n = start.len();
        waypoints.iter().enumerate().all(|(k, &p)| {
            let prev = if k < n { start[k] } else { waypoints[k - n] };
            p.dist(prev) <= self.reach * (1.0 + 1e-9) && (!self.is_excluded(p) || p == prev)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PenaltyContext {
        // 10x10 grid of 100 m cells, land in the three leftmost columns
        let land: Vec<bool> = (0..100).map(|c| c % 10 < 3).collect();
        let g = GridSpec::with_land(10, 10, 100.0, 100.0, Point::new(50.0, 50.0), land).unwrap();
        let mut e = ScalarField::zeros(&g);
        e.set(6, 6, 1.0);
        let q = ScalarField::constant(&g, 0.5);
        PenaltyContext::new(&g, &e, &q, None, 500.0, 150.0, 1.0)
    }

    #[test]
    fn inactive_penalties_are_zero() {
        let c = ctx();
        let (t, g, gp) = c.penalty(Point::new(650.0, 600.0), Point::new(600.0, 600.0));
        assert_eq!(t.total(), 0.0);
        assert_eq!((g, gp), (Point::default(), Point::default()));
    }

    #[test]
    fn reach_hinge_value_and_gradient() {
        let c = ctx();
        let prev = Point::new(650.0, 650.0);
        // 600 m east of prev: 100 m beyond reach, interest at (650,650) is 600 m away
        let p = Point::new(650.0, 650.0) + Point::new(0.0, 0.0);
        let (t0, _, _) = c.penalty(p, prev);
        assert_eq!(t0.total(), 0.0);
        let far = Point::new(650.0, 50.0);
        let (t, g, gp) = c.penalty(far, prev);
        assert!((t.reach - 100.0f64.powi(2)).abs() < 1e-9);
        // interest hinge also active: distance 600 - radius 150
        assert!((t.interest - 450.0).abs() < 1e-9);
        // reach gradient: magnitude 200, pointing away from prev (descent moves toward prev)
        assert!((gp.norm() - 200.0).abs() < 1e-9);
        assert!((gp.y - 200.0).abs() < 1e-9);
        assert!((g.y + 201.0).abs() < 1e-9);
    }

    #[test]
    fn excluded_gradient_points_away_from_nearest_water() {
        let c = ctx();
        // inside land at column 0; nearest water center is (350, 450) along x
        let p = Point::new(40.0, 450.0);
        let (t, g, _) = c.penalty(p, p);
        assert!((t.excluded - 310.0).abs() < 1e-9);
        // descent direction -g points toward water (+x); interest pull adds a component
        let (_, g_int, _) = {
            let mut only = c.clone();
            only.interest.clear();
            only.penalty(p, p)
        };
        assert!((g_int.x + 1.0).abs() < 1e-12 && g_int.y.abs() < 1e-12);
        assert!(g.x < 0.0);
    }

    #[test]
    fn path_gradient_matches_finite_differences() {
        let c = ctx();
        let start = [Point::new(450.0, 450.0), Point::new(950.0, 150.0)];
        let mut path = vec![
            Point::new(820.0, 300.0),
            Point::new(420.0, 830.0),
            Point::new(140.0, 260.0),
            Point::new(610.0, 710.0),
        ];
        let (_, grad) = c.path_penalty(&start, &path);
        let h = 1e-4;
        for k in 0..path.len() {
            for axis in 0..2 {
                let orig = path[k];
                let bump = |s: f64| if axis == 0 { Point::new(orig.x + s, orig.y) } else { Point::new(orig.x, orig.y + s) };
                path[k] = bump(h);
                let fp = c.path_penalty(&start, &path).0.total();
                path[k] = bump(-h);
                let fm = c.path_penalty(&start, &path).0.total();
                path[k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = if axis == 0 { grad[k].x } else { grad[k].y };
                assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "k {k} axis {axis}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn clamp_produces_feasible_paths() {
        let c = ctx();
        let start = [Point::new(450.0, 450.0)];
        let path = [Point::new(990.0, 990.0), Point::new(50.0, 990.0), Point::new(-300.0, 5000.0)];
        let out = c.clamp_path(&start, &path);
        assert!(c.is_feasible(&start, &out));
        assert!(!c.is_feasible(&start, &path));
        let ok = [Point::new(550.0, 450.0)];
        assert_eq!(c.clamp_path(&start, &ok), ok.to_vec());
    }
}
