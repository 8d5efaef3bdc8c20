//! Lagrangian surface oil particles and the drift probability maps built
//! from them.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{GridSpec, Point, ScalarField, VectorField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OilParticle {
    pub id: u64,
    pub pos: Point,
    /// m³
    pub volume: f64,
    pub active: bool,
}

/// Particles of one stochastic realization with their own random stream.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub realization: u32,
    pub seed: u64,
    pub particles: Vec<OilParticle>,
    rng: ChaCha8Rng,
}

impl PartialEq for ParticleEnsemble {
    fn eq(&self, other: &Self) -> bool {
        self.realization == other.realization && self.seed == other.seed && self.particles == other.particles
    }
}

/// Seed of realization `r` derived from a scenario seed.
pub fn realization_seed(seed: u64, realization: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(u64::from(realization).wrapping_mul(0xD1B5_4A32_D192_ED03))
        ^ 0x0005_DEEC_E66D
}

impl ParticleEnsemble {
    pub fn new(realization: u32, seed: u64, particles: Vec<OilParticle>) -> Self {
        Self {
            realization,
            seed,
            particles,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Releases `count` particles of equal volume around `at`, scattered
    /// with a Gaussian of standard deviation `spread` meters.
    pub fn release(
        grid: &GridSpec,
        realization: u32,
        seed: u64,
        at: Point,
        count: usize,
        total_volume: f64,
        spread: f64,
    ) -> Result<Self> {
        if count == 0 || !(total_volume > 0.0) {
            return Err(Error::Config("release needs particles and positive volume".into()));
        }
        let mut ens = Self::new(realization, seed, Vec::with_capacity(count));
        let vol = total_volume / count as f64;
        for id in 0..count as u64 {
            let (a, b): (f64, f64) = (StandardNormal.sample(&mut ens.rng), StandardNormal.sample(&mut ens.rng));
            let pos = Point::new(at.x + spread * a, at.y + spread * b);
            let active = grid.locate_index(pos).is_ok_and(|c| !grid.is_land(c));
            ens.particles.push(OilParticle {
                id,
                pos,
                volume: vol,
                active,
            });
        }
        Ok(ens)
    }

    pub fn active_volume(&self) -> f64 {
        self.particles.iter().filter(|p| p.active).map(|p| p.volume).sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.particles.iter().map(|p| p.volume).sum()
    }

    pub fn active_count(&self) -> usize {
        self.particles.iter().filter(|p| p.active).count()
    }

    /// In-place version of [`advect_particles`].
    pub fn advect(&mut self, grid: &GridSpec, drift: &VectorField, d_h: &ScalarField, dt: f64) -> Result<()> {
        drift.check_grid(grid)?;
        d_h.check_grid(grid)?;
        if dt == 0.0 {
            return Ok(());
        }
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("dt must be non-negative, got {dt}")));
        }
        for p in self.particles.iter_mut().filter(|p| p.active) {
            let Ok(cell) = grid.locate_index(p.pos) else {
                p.active = false;
                continue;
            };
            let (u, v) = drift.interpolate_unchecked(grid, p.pos);
            let sigma = (2.0 * d_h.values()[cell].max(0.0) * dt).sqrt();
            let (ex, ey) = if sigma > 0.0 {
                let a: f64 = StandardNormal.sample(&mut self.rng);
                let b: f64 = StandardNormal.sample(&mut self.rng);
                (sigma * a, sigma * b)
            } else {
                (0.0, 0.0)
            };
            p.pos = Point::new(p.pos.x + u * dt + ex, p.pos.y + v * dt + ey);
            p.active = grid.locate_index(p.pos).is_ok_and(|c| !grid.is_land(c));
        }
        Ok(())
    }
}

/// One forward step of every active particle: drift plus a Gaussian random
/// walk of per-axis variance `2 D_h dt`. Particles leaving the water are
/// deactivated.
pub fn advect_particles(
    ens: &ParticleEnsemble,
    grid: &GridSpec,
    drift: &VectorField,
    d_h: &ScalarField,
    dt: f64,
) -> Result<ParticleEnsemble> {
    let mut out = ens.clone();
    out.advect(grid, drift, d_h, dt)?;
    Ok(out)
}

/// Per-cell probability of oil drift location.
#[derive(Debug, Clone, PartialEq)]
pub struct OilProbabilityMap {
    pub prob: ScalarField,
    pub realizations: usize,
}

/// Volume fraction of active particles in each cell.
pub fn probability_single(ens: &ParticleEnsemble, grid: &GridSpec) -> Result<OilProbabilityMap> {
    let total = ens.active_volume();
    if !(total > 0.0) {
        return Err(Error::EmptySpill);
    }
    let mut vals = vec![0.0; grid.cell_count()];
    for p in ens.particles.iter().filter(|p| p.active) {
        if let Ok(c) = grid.locate_index(p.pos) {
            vals[c] += p.volume;
        }
    }
    vals.iter_mut().for_each(|v| *v /= total);
    Ok(OilProbabilityMap {
        prob: ScalarField::from_values(grid, vals)?,
        realizations: 1,
    })
}

/// Cellwise mean over realizations.
pub fn probability_mean(maps: &[OilProbabilityMap]) -> Result<OilProbabilityMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Domain("no probability maps to average".into()))?;
    let shape = first.prob.shape();
    if maps.iter().any(|m| m.prob.shape() != shape) {
        return Err(Error::Domain("probability maps on different grids".into()));
    }
    let mut prob = first.prob.clone();
    let n = maps.len() as f64;
    for (k, v) in prob.values_mut().iter_mut().enumerate() {
        *v = maps.iter().map(|m| m.prob.values()[k]).sum::<f64>() / n;
    }
    Ok(OilProbabilityMap {
        prob,
        realizations: maps.len(),
    })
}

/// Mean probability map of a set of ensembles; realizations with no active
/// oil are skipped.
pub fn ensemble_probability(ensembles: &[ParticleEnsemble], grid: &GridSpec) -> Result<OilProbabilityMap> {
    let maps: Vec<OilProbabilityMap> = ensembles
        .iter()
        .filter_map(|e| probability_single(e, grid).ok())
        .collect();
    if maps.is_empty() {
        return Err(Error::EmptySpill);
    }
    probability_mean(&maps)
}

/// Probability divided by its maximum over the domain.
pub fn rescale_presence(map: &OilProbabilityMap) -> Result<ScalarField> {
    let max = map.prob.max();
    if !(max > 0.0) {
        return Err(Error::EmptySpill);
    }
    Ok(map.prob.map(|v| if v == max { 1.0 } else { v / max }))
}

/// Shannon entropy (natural log) of each clipped 3×3 neighborhood of the
/// presence field, min-max normalized to [0, 1].
pub fn entropy_neighborhood(grid: &GridSpec, presence: &ScalarField) -> ScalarField {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut ent = ScalarField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx {
            let (i0, i1) = (i.saturating_sub(1), (i + 1).min(nx - 1));
            let (j0, j1) = (j.saturating_sub(1), (j + 1).min(ny - 1));
            let mut total = 0.0;
            for jj in j0..=j1 {
                for ii in i0..=i1 {
                    total += presence.get(ii, jj).max(0.0);
                }
            }
            if total <= 0.0 {
                continue;
            }
            let mut h = 0.0;
            for jj in j0..=j1 {
                for ii in i0..=i1 {
                    let p = presence.get(ii, jj).max(0.0) / total;
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                }
            }
            ent.set(i, j, h);
        }
    }
    let (lo, hi) = (ent.min(), ent.max());
    if hi - lo <= 0.0 {
        return ScalarField::zeros(grid);
    }
    ent.map(|v| (v - lo) / (hi - lo))
}

/// Appends rows `realization,step,particle_id,x,y,volume,active`.
pub fn write_particles_csv<W: Write>(w: &mut csv::Writer<W>, step: usize, ensembles: &[ParticleEnsemble]) -> Result<()> {
    for e in ensembles {
        for p in &e.particles {
            w.write_record([
                e.realization.to_string(),
                step.to_string(),
                p.id.to_string(),
                p.pos.x.to_string(),
                p.pos.y.to_string(),
                p.volume.to_string(),
                u8::from(p.active).to_string(),
            ])?;
        }
    }
    Ok(())
}

pub const PARTICLE_CSV_HEADER: [&str; 7] = ["realization", "step", "particle_id", "x", "y", "volume", "active"];
