//! Projected-at-the-end gradient descent with per-block Armijo
//! backtracking, and the peak-based initial placement.

use serde::{Deserialize, Serialize};

use crate::domain::{GridSpec, Point, ScalarField};
use crate::error::{Error, Result};

/// A differentiable cost over a set of 2D points.
pub trait Objective {
    fn value(&self, p: &[Point]) -> Result<f64>;
    fn value_and_gradient(&self, p: &[Point]) -> Result<(f64, Vec<Point>)>;
    /// Projection onto the feasible set.
    fn clamp(&self, p: &[Point]) -> Vec<Point> {
        p.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentConfig {
    pub zeta_g: f64,
    pub max_iters: usize,
    pub c1: f64,
    pub backtrack: f64,
    /// Length of the first trial move of each point.
    pub step_length: f64,
    pub max_halvings: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            zeta_g: 1e-3,
            max_iters: 100,
            c1: 1e-4,
            backtrack: 0.5,
            step_length: 1.0,
            max_halvings: 30,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 < 1.0) || !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config("Armijo constant and backtrack factor must lie in (0,1)".into()));
        }
        if !(self.step_length > 0.0) || !(self.zeta_g > 0.0) {
            return Err(Error::Config("step length and gradient threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DescentResult {
    pub positions: Vec<Point>,
    pub value: f64,
    pub iterations: usize,
    pub stalled: bool,
    /// Cost of every accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

fn max_norm(g: &[Point]) -> f64 {
    g.iter().fold(0.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()))
}

/// Minimizes `obj` from `p0`. Each point gets its own step `γ_i` scaled so
/// the first trial moves it by `step_length`; all steps are halved together
/// until the Armijo condition holds. The result is projected with
/// [`Objective::clamp`]; if that projection is worse than a feasible start,
/// the start is returned.
pub fn descend<O: Objective + ?Sized>(obj: &O, p0: &[Point], cfg: &DescentConfig) -> Result<DescentResult> {
    cfg.validate()?;
    let mut p = p0.to_vec();
    let (mut f, mut g) = obj.value_and_gradient(&p)?;
    let f0 = f;
    let mut history = vec![f];
    let mut iterations = 0;
    let mut stalled = false;
    while iterations < cfg.max_iters && max_norm(&g) >= cfg.zeta_g {
        let gamma: Vec<f64> = g
            .iter()
            .map(|gi| {
                let n = gi.norm();
                if n > 0.0 {
                    cfg.step_length / n
                } else {
                    0.0
                }
            })
            .collect();
        let slope: f64 = g.iter().zip(&gamma).map(|(gi, s)| s * (gi.x * gi.x + gi.y * gi.y)).sum();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<Point> = p.iter().zip(&g).zip(&gamma).map(|((pi, gi), s)| *pi - *gi * (s * scale)).collect();
            let ft = obj.value(&trial)?;
            if ft <= f - cfg.c1 * scale * slope {
                accepted = Some((trial, ft));
                break;
            }
            scale *= cfg.backtrack;
        }
        let Some((trial, ft)) = accepted else {
            stalled = true;
            break;
        };
        iterations += 1;
        p = trial;
        let (fv, gv) = obj.value_and_gradient(&p)?;
        debug_assert!((fv - ft).abs() <= 1e-12 * fv.abs().max(1.0));
        f = fv;
        g = gv;
        history.push(f);
    }
    let clamped = obj.clamp(&p);
    if clamped != p {
        let fc = obj.value(&clamped)?;
        let start_feasible = obj.clamp(p0) == p0;
        if fc > f0 && start_feasible {
            log::debug!("projected optimum is worse than the start; keeping the start");
            p = p0.to_vec();
            f = f0;
        } else {
            p = clamped;
            f = fc;
        }
    }
    Ok(DescentResult {
        positions: p,
        value: f,
        iterations,
        stalled,
        history,
    })
}

/// Highest local maxima of `field` (strictly above the 8 neighbors, ties on
/// plateaus resolved toward the lowest index), best first. Missing sensors
/// are placed around the global maximum at one-cell offsets; an all-zero
/// field gives the domain centroid.
pub fn initial_positions(grid: &GridSpec, field: &ScalarField, count: usize) -> Vec<Point> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let v = field.values();
    let mut peaks: Vec<usize> = Vec::new();
    for c in 0..grid.cell_count() {
        if grid.is_land(c) || v[c] <= 0.0 {
            continue;
        }
        let (i, j) = grid.coords(c);
        let mut is_peak = true;
        'nb: for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii < 0 || jj < 0 || ii >= nx as i64 || jj >= ny as i64 {
                    continue;
                }
                let nb = grid.index(ii as usize, jj as usize);
                if v[nb] > v[c] || (v[nb] == v[c] && nb < c) {
                    is_peak = false;
                    break 'nb;
                }
            }
        }
        if is_peak {
            peaks.push(c);
        }
    }
    peaks.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut out: Vec<Point> = peaks.iter().take(count).map(|&c| grid.center_of(c)).collect();
    if out.len() < count {
        let anchor = match peaks.first() {
            Some(&c) => grid.center_of(c),
            None => {
                log::warn!("no uncertainty to place sensors on; using the domain centroid");
                let (lo, hi) = grid.bounds();
                let centroid = Point::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y));
                out.push(centroid);
                centroid
            }
        };
        let offsets = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
        let mut k = 0;
        while out.len() < count {
            let (ox, oy) = offsets[k % offsets.len()];
            let ring = (k / offsets.len() + 1) as f64;
            out.push(Point::new(anchor.x + ox * ring * grid.dx(), anchor.y + oy * ring * grid.dy()));
            k += 1;
        }
    }
    out
}
