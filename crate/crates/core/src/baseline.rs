//! Industry comparison strategy: ladder survey paths over the predicted
//! spill flown back and forth at full speed, with measurements written
//! straight into the model.

use serde::{Deserialize, Serialize};

use crate::domain::{GridSpec, Point, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::oil::{OilParticle, ParticleEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LadderConfig {
    pub overlap: f64,
    /// Presence above which a cell counts as predicted oil.
    pub presence_floor: f64,
    /// s
    pub replan_period: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            overlap: 0.10,
            presence_floor: 0.01,
            replan_period: 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderPlan {
    /// Survey legs in flight order.
    pub legs: Vec<(Point, Point)>,
    pub swath: f64,
    pub overlap: f64,
    /// Polyline flown by each sensor.
    pub sections: Vec<Vec<Point>>,
}

impl LadderPlan {
    pub fn spacing(&self) -> f64 {
        self.swath * (1.0 - self.overlap)
    }

    /// Cells whose centre lies within half a swath of a leg.
    pub fn covered_cells(&self, grid: &GridSpec) -> Vec<bool> {
        let half = 0.5 * self.swath;
        (0..grid.cell_count())
            .map(|c| {
                let p = grid.center_of(c);
                self.legs.iter().any(|&(a, b)| segment_distance(p, a, b) <= half * (1.0 + 1e-12))
            })
            .collect()
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(a + ab * t)
}

/// Boustrophedon legs over the bounding box of predicted oil, parallel to
/// the longer side, split into `sensors` contiguous sections.
/// `fallback` centres a one-swath box when nothing is predicted.
pub fn generate_ladder(
    grid: &GridSpec,
    presence: &ScalarField,
    swath: f64,
    sensors: usize,
    fallback: Point,
    cfg: &LadderConfig,
) -> Result<LadderPlan> {
    presence.check_grid(grid)?;
    if !(swath > 0.0) || sensors == 0 {
        return Err(Error::Config("ladder needs a positive swath and at least one sensor".into()));
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::Config(format!("overlap must lie in [0,1), got {}", cfg.overlap)));
    }
    let (hx, hy) = (0.5 * grid.dx(), 0.5 * grid.dy());
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in grid.water_cells().filter(|&c| presence.values()[c] > cfg.presence_floor) {
        let p = grid.center_of(c);
        lo = Point::new(lo.x.min(p.x - hx), lo.y.min(p.y - hy));
        hi = Point::new(hi.x.max(p.x + hx), hi.y.max(p.y + hy));
    }
    if !lo.x.is_finite() {
        log::warn!("no predicted oil; surveying around the release point");
        let h = 0.5 * swath;
        lo = Point::new(fallback.x - h, fallback.y - h);
        hi = Point::new(fallback.x + h, fallback.y + h);
    }
    let along_x = hi.x - lo.x >= hi.y - lo.y;
    // (along, across) extents
    let (a0, a1, c0, c1) = if along_x { (lo.x, hi.x, lo.y, hi.y) } else { (lo.y, hi.y, lo.x, hi.x) };
    let spacing = swath * (1.0 - cfg.overlap);
    let width = c1 - c0;
    let count = if width <= swath { 1 } else { ((width - swath) / spacing).ceil() as usize + 1 };
    let first = if count == 1 { 0.5 * (c0 + c1) } else { c0 + 0.5 * swath };
    let point = |along: f64, across: f64| if along_x { Point::new(along, across) } else { Point::new(across, along) };
    let legs: Vec<(Point, Point)> = (0..count)
        .map(|k| {
            let c = first + k as f64 * spacing;
            if k % 2 == 0 {
                (point(a0, c), point(a1, c))
            } else {
                (point(a1, c), point(a0, c))
            }
        })
        .collect();
    let per = legs.len() / sensors;
    let extra = legs.len() % sensors;
    let mut sections = Vec::with_capacity(sensors);
    let mut next = 0;
    for s in 0..sensors {
        let take = per + usize::from(s < extra);
        let mut poly: Vec<Point> = legs[next..next + take].iter().flat_map(|&(a, b)| [a, b]).collect();
        if poly.is_empty() {
            // more sensors than legs: share the last leg
            let (a, b) = legs[legs.len() - 1];
            poly = vec![a, b];
        }
        next += take;
        sections.push(poly);
    }
    Ok(LadderPlan {
        legs,
        swath,
        overlap: cfg.overlap,
        sections,
    })
}

fn polyline_length(poly: &[Point]) -> f64 {
    poly.windows(2).map(|w| w[0].dist(w[1])).sum()
}

fn point_at(poly: &[Point], mut s: f64) -> Point {
    for w in poly.windows(2) {
        let l = w[0].dist(w[1]);
        if s <= l {
            return if l > 0.0 { w[0] + (w[1] - w[0]) * (s / l) } else { w[0] };
        }
        s -= l;
    }
    *poly.last().expect("non-empty section")
}

/// Positions of every sensor at time `t` after the plan started. Each
/// sensor flies its section at `v_max` and turns back at either end, so
/// its position is continuous in time.
pub fn follow_path(plan: &LadderPlan, v_max: f64, t: f64) -> Vec<Point> {
    plan.sections
        .iter()
        .map(|poly| {
            let len = polyline_length(poly);
            if len <= 0.0 {
                return poly[0];
            }
            let s = (v_max * t).rem_euclid(2.0 * len);
            point_at(poly, if s <= len { s } else { 2.0 * len - s })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityUpdate {
    ReplaceInPlace,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub cell: usize,
    pub oil: bool,
    /// Observed current, m/s.
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueReplacement {
    pub velocity: VelocityUpdate,
    /// Particles seeded per side of the lattice in an oiled cell the model missed.
    pub lattice: usize,
}

impl Default for ValueReplacement {
    fn default() -> Self {
        Self {
            velocity: VelocityUpdate::ReplaceInPlace,
            lattice: 2,
        }
    }
}

/// Ids of inserted particles live above this offset.
pub const INSERTED_ID_BASE: u64 = 1 << 40;

/// Overwrites the model with readings. Clear readings deactivate the
/// particles in their cell; oil readings over a cell with no particles
/// seed a regular lattice of particles with the ensemble's mean volume.
/// Current readings replace the model current when enabled.
pub fn value_replace(
    grid: &GridSpec,
    ensembles: &mut [ParticleEnsemble],
    current: &mut VectorField,
    readings: &[Measurement],
    policy: &ValueReplacement,
) -> Result<()> {
    current.check_grid(grid)?;
    if let Some(m) = readings.iter().find(|m| m.cell >= grid.cell_count()) {
        return Err(Error::Domain(format!("reading in cell {} outside the grid", m.cell)));
    }
    for ens in ensembles.iter_mut() {
        let mean_volume = {
            let n = ens.particles.len().max(1);
            ens.total_volume() / n as f64
        };
        let mut occupied = vec![false; grid.cell_count()];
        let cell_of: Vec<Option<usize>> = ens
            .particles
            .iter()
            .map(|p| if p.active { grid.locate_index(p.pos).ok() } else { None })
            .collect();
        for c in cell_of.iter().flatten() {
            occupied[*c] = true;
        }
        for m in readings {
            if m.oil {
                if occupied[m.cell] || grid.is_land(m.cell) {
                    continue;
                }
                seed_lattice(grid, ens, m.cell, policy.lattice, mean_volume);
                occupied[m.cell] = true;
            } else {
                for (p, c) in ens.particles.iter_mut().zip(&cell_of) {
                    if *c == Some(m.cell) {
                        p.active = false;
                    }
                }
            }
        }
    }
    if policy.velocity == VelocityUpdate::ReplaceInPlace {
        for m in readings.iter().filter(|m| !grid.is_land(m.cell)) {
            current.u.values_mut()[m.cell] = m.velocity.0;
            current.v.values_mut()[m.cell] = m.velocity.1;
        }
    }
    Ok(())
}

fn seed_lattice(grid: &GridSpec, ens: &mut ParticleEnsemble, cell: usize, side: usize, volume: f64) {
    let side = side.max(1);
    let centre = grid.center_of(cell);
    for k in 0..side * side {
        let (a, b) = (k % side, k / side);
        let off = |i: usize, h: f64| ((i as f64 + 0.5) / side as f64 - 0.5) * h;
        let pos = Point::new(centre.x + off(a, grid.dx()), centre.y + off(b, grid.dy()));
        let id = INSERTED_ID_BASE + cell as u64 * 1000 + k as u64;
        match ens.particles.iter_mut().find(|p| p.id == id) {
            Some(p) => {
                p.pos = pos;
                p.active = true;
            }
            None => ens.particles.push(OilParticle {
                id,
                pos,
                volume,
                active: true,
            }),
        }
    }
}
