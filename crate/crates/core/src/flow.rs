//! Incompressible 2D flow layers (current and wind), the combined drift
//! velocity, and the analytic forcing used in place of external data.
//!
//! Momentum is advanced with a forward-Euler step of the conservative
//! central-difference form, then projected onto the discrete divergence-free
//! space. The projection uses the central gradient `G` and the divergence
//! `D = -Gᵀ` (plus the inflow boundary data), so `GᵀG p = -D u*` is a
//! symmetric semi-definite system solved by conjugate gradients and the
//! residual of that solve is exactly the divergence left in the field.

use serde::{Deserialize, Serialize};

use crate::domain::{GridSpec, ScalarField, VectorField};
use crate::error::{Error, Result};

pub const CFL_LIMIT: f64 = 0.9;

/// Edge treatment for one side of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Inflow { u: f64, v: f64 },
    Outflow,
    NoSlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeConditions {
    pub west: Boundary,
    pub east: Boundary,
    pub south: Boundary,
    pub north: Boundary,
}

impl EdgeConditions {
    pub const fn periodic() -> Self {
        Self {
            west: Boundary::Periodic,
            east: Boundary::Periodic,
            south: Boundary::Periodic,
            north: Boundary::Periodic,
        }
    }

    /// Fixed inflow on the upstream edge of `(u, v)`, outflow elsewhere.
    pub fn upstream_inflow(u: f64, v: f64) -> Self {
        let inflow = Boundary::Inflow { u, v };
        let mut e = Self {
            west: Boundary::Outflow,
            east: Boundary::Outflow,
            south: Boundary::Outflow,
            north: Boundary::Outflow,
        };
        if u.abs() >= v.abs() {
            if u >= 0.0 {
                e.west = inflow;
            } else {
                e.east = inflow;
            }
        } else if v >= 0.0 {
            e.south = inflow;
        } else {
            e.north = inflow;
        }
        e
    }

    fn validate(&self) -> Result<()> {
        let pw = matches!(self.west, Boundary::Periodic);
        let pe = matches!(self.east, Boundary::Periodic);
        let ps = matches!(self.south, Boundary::Periodic);
        let pn = matches!(self.north, Boundary::Periodic);
        if pw != pe || ps != pn {
            return Err(Error::Config("periodic edges must come in opposite pairs".into()));
        }
        Ok(())
    }
}

impl Default for EdgeConditions {
    fn default() -> Self {
        Self::periodic()
    }
}

/// One incompressible layer (ocean current or wind).
#[derive(Debug, Clone)]
pub struct FluidLayer {
    pub velocity: VectorField,
    pub pressure: ScalarField,
    pub viscosity: f64,
    pub source: VectorField,
    pub edges: EdgeConditions,
}

impl FluidLayer {
    pub fn new(grid: &GridSpec, velocity: VectorField, viscosity: f64, edges: EdgeConditions) -> Result<Self> {
        if !(viscosity > 0.0) {
            return Err(Error::Config(format!("viscosity must be positive, got {viscosity}")));
        }
        velocity.check_grid(grid)?;
        edges.validate()?;
        let mut velocity = velocity;
        velocity.mask_land(grid);
        Ok(Self {
            velocity,
            pressure: ScalarField::zeros(grid),
            viscosity,
            source: VectorField::zeros(grid),
            edges,
        })
    }
}

/// Diagnostics for one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub cg_iterations: usize,
    /// `max|D u| * min(dx, dy) / velocity_scale` after projection.
    pub relative_divergence: f64,
}

#[derive(Clone, Copy)]
enum Ghost {
    Cell(usize),
    /// Boundary value (inflow) or zero (wall, land).
    Fixed(f64, f64),
    /// Zero-gradient copy of the cell itself.
    Copy,
}

#[derive(Clone, Copy)]
enum PressureGhost {
    Cell(usize),
    Zero,
    Neg,
}

/// Neighbor topology of a grid under a set of edge conditions.
struct Stencil {
    /// [east, west, north, south] per cell.
    nb: Vec<[Ghost; 4]>,
    pnb: Vec<[PressureGhost; 4]>,
}

impl Stencil {
    fn new(grid: &GridSpec, edges: &EdgeConditions) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let edge_ghost = |b: Boundary| match b {
            Boundary::Inflow { u, v } => Ghost::Fixed(u, v),
            Boundary::Outflow => Ghost::Copy,
            Boundary::NoSlip => Ghost::Fixed(0.0, 0.0),
            Boundary::Periodic => unreachable!("periodic handled by wrapping"),
        };
        let mut nb = Vec::with_capacity(grid.cell_count());
        for c in 0..grid.cell_count() {
            let (i, j) = grid.coords(c);
            let step = |di: isize, dj: isize, edge: Boundary| -> Ghost {
                let ii = i as isize + di;
                let jj = j as isize + dj;
                let inside = ii >= 0 && jj >= 0 && (ii as usize) < nx && (jj as usize) < ny;
                let target = if inside {
                    Some(grid.index(ii as usize, jj as usize))
                } else if matches!(edge, Boundary::Periodic) {
                    Some(grid.index(ii.rem_euclid(nx as isize) as usize, jj.rem_euclid(ny as isize) as usize))
                } else {
                    None
                };
                match target {
                    Some(t) if grid.is_land(t) => Ghost::Fixed(0.0, 0.0),
                    Some(t) => Ghost::Cell(t),
                    None => edge_ghost(edge),
                }
            };
            nb.push([
                step(1, 0, edges.east),
                step(-1, 0, edges.west),
                step(0, 1, edges.north),
                step(0, -1, edges.south),
            ]);
        }
        let pnb = nb
            .iter()
            .map(|n| {
                n.map(|g| match g {
                    Ghost::Cell(t) => PressureGhost::Cell(t),
                    Ghost::Fixed(..) => PressureGhost::Zero,
                    Ghost::Copy => PressureGhost::Neg,
                })
            })
            .collect();
        Self { nb, pnb }
    }

    #[inline]
    fn vel(&self, f: &VectorField, c: usize, k: usize) -> (f64, f64) {
        match self.nb[c][k] {
            Ghost::Cell(t) => f.at(t),
            Ghost::Fixed(u, v) => (u, v),
            Ghost::Copy => f.at(c),
        }
    }

    #[inline]
    fn scalar(&self, f: &[f64], c: usize, k: usize) -> f64 {
        match self.pnb[c][k] {
            PressureGhost::Cell(t) => f[t],
            PressureGhost::Zero => 0.0,
            PressureGhost::Neg => -f[c],
        }
    }
}

/// Central divergence including boundary data.
fn divergence(grid: &GridSpec, st: &Stencil, f: &VectorField) -> Vec<f64> {
    let (hx, hy) = (0.5 / grid.dx(), 0.5 / grid.dy());
    (0..grid.cell_count())
        .map(|c| {
            if grid.is_land(c) {
                return 0.0;
            }
            let (ue, _) = st.vel(f, c, 0);
            let (uw, _) = st.vel(f, c, 1);
            let (_, vn) = st.vel(f, c, 2);
            let (_, vs) = st.vel(f, c, 3);
            (ue - uw) * hx + (vn - vs) * hy
        })
        .collect()
}

fn gradient_into(grid: &GridSpec, st: &Stencil, p: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    let (hx, hy) = (0.5 / grid.dx(), 0.5 / grid.dy());
    for c in 0..grid.cell_count() {
        if grid.is_land(c) {
            gx[c] = 0.0;
            gy[c] = 0.0;
            continue;
        }
        gx[c] = (st.scalar(p, c, 0) - st.scalar(p, c, 1)) * hx;
        gy[c] = (st.scalar(p, c, 2) - st.scalar(p, c, 3)) * hy;
    }
}

/// Exact transpose of [`gradient_into`].
fn gradient_transpose_into(grid: &GridSpec, st: &Stencil, gx: &[f64], gy: &[f64], out: &mut [f64]) {
    let (hx, hy) = (0.5 / grid.dx(), 0.5 / grid.dy());
    out.iter_mut().for_each(|o| *o = 0.0);
    for c in 0..grid.cell_count() {
        if grid.is_land(c) {
            continue;
        }
        let terms = [(0, gx[c] * hx), (1, -gx[c] * hx), (2, gy[c] * hy), (3, -gy[c] * hy)];
        for (k, w) in terms {
            match st.pnb[c][k] {
                PressureGhost::Cell(t) => out[t] += w,
                PressureGhost::Zero => {}
                PressureGhost::Neg => out[c] -= w,
            }
        }
    }
}

/// Projects `vel` onto the discrete divergence-free space in place, warm
/// starting from (and updating) `pressure`. Returns CG iterations and the
/// achieved max divergence relative to the pre-projection speed scale.
fn project(
    grid: &GridSpec,
    st: &Stencil,
    vel: &mut VectorField,
    pressure: &mut ScalarField,
    dt: f64,
) -> Result<(usize, f64)> {
    let n = grid.cell_count();
    let scale = vel.max_speed().max(f64::MIN_POSITIVE);
    let h = grid.min_spacing();
    // Absolute divergence target well below 1e-8 of the velocity scale.
    let tol = 1e-11 * scale / h;

    // Solve GᵀG φ = -D u*, u = u* - G φ; pressure = φ / dt.
    let rhs: Vec<f64> = divergence(grid, st, vel).iter().map(|d| -d).collect();
    let mut phi: Vec<f64> = pressure.values().iter().map(|p| p * dt).collect();
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut ap = vec![0.0; n];
    let apply = |x: &[f64], gx: &mut [f64], gy: &mut [f64], out: &mut [f64]| {
        gradient_into(grid, st, x, gx, gy);
        gradient_transpose_into(grid, st, gx, gy, out);
    };
    apply(&phi, &mut gx, &mut gy, &mut ap);
    let mut r: Vec<f64> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut iterations = 0;
    if inf(&r) > tol {
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|x| x * x).sum();
        let max_iter = 20 * n + 100;
        loop {
            apply(&p, &mut gx, &mut gy, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            for k in 0..n {
                phi[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            iterations += 1;
            if inf(&r) <= tol {
                break;
            }
            if iterations >= max_iter {
                return Err(Error::Solver {
                    iterations,
                    residual: inf(&r),
                });
            }
            let rr_new: f64 = r.iter().map(|x| x * x).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..n {
                p[k] = r[k] + beta * p[k];
            }
        }
    }
    gradient_into(grid, st, &phi, &mut gx, &mut gy);
    for c in 0..n {
        vel.u.values_mut()[c] -= gx[c];
        vel.v.values_mut()[c] -= gy[c];
    }
    vel.mask_land(grid);
    for (pv, f) in pressure.values_mut().iter_mut().zip(&phi) {
        *pv = f / dt;
    }
    let div = inf(&divergence(grid, st, vel));
    Ok((iterations, div * h / scale))
}

/// Max courant number of `vel` for step `dt`.
pub fn courant(grid: &GridSpec, vel: &VectorField, dt: f64) -> f64 {
    vel.max_speed() * dt / grid.min_spacing()
}

pub(crate) fn check_cfl(c: f64) -> Result<()> {
    if c > CFL_LIMIT {
        return Err(Error::Cfl {
            courant: c,
            limit: CFL_LIMIT,
            substeps: (c / CFL_LIMIT).ceil() as usize,
        });
    }
    Ok(())
}

/// Advances a layer by `dt`: forward-Euler advection, diffusion and source,
/// followed by pressure projection.
pub fn step_layer(grid: &GridSpec, layer: &FluidLayer, dt: f64) -> Result<(FluidLayer, StepReport)> {
    layer.velocity.check_grid(grid)?;
    layer.source.check_grid(grid)?;
    check_cfl(courant(grid, &layer.velocity, dt))?;
    let st = Stencil::new(grid, &layer.edges);
    let f = &layer.velocity;
    let (hx, hy) = (0.5 / grid.dx(), 0.5 / grid.dy());
    let (ix2, iy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    let nu = layer.viscosity;
    let mut next = VectorField::zeros(grid);
    for c in 0..grid.cell_count() {
        if grid.is_land(c) {
            continue;
        }
        let (u, v) = f.at(c);
        let (ue, ve) = st.vel(f, c, 0);
        let (uw, vw) = st.vel(f, c, 1);
        let (un, vn) = st.vel(f, c, 2);
        let (us, vs) = st.vel(f, c, 3);
        // conservative fluxes: d(uu)/dx + d(vu)/dy, d(uv)/dx + d(vv)/dy
        let adv_u = (ue * ue - uw * uw) * hx + (vn * un - vs * us) * hy;
        let adv_v = (ue * ve - uw * vw) * hx + (vn * vn - vs * vs) * hy;
        let lap_u = (ue - 2.0 * u + uw) * ix2 + (un - 2.0 * u + us) * iy2;
        let lap_v = (ve - 2.0 * v + vw) * ix2 + (vn - 2.0 * v + vs) * iy2;
        let (su, sv) = layer.source.at(c);
        next.u.values_mut()[c] = u + dt * (-adv_u + nu * lap_u + su);
        next.v.values_mut()[c] = v + dt * (-adv_v + nu * lap_v + sv);
    }
    let mut pressure = layer.pressure.clone();
    let (cg_iterations, relative_divergence) = project(grid, &st, &mut next, &mut pressure, dt)?;
    let report = StepReport {
        cg_iterations,
        relative_divergence,
    };
    if next.u.values().iter().chain(next.v.values()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite velocity after flow step".into()));
    }
    Ok((
        FluidLayer {
            velocity: next,
            pressure,
            viscosity: layer.viscosity,
            source: layer.source.clone(),
            edges: layer.edges,
        },
        report,
    ))
}

/// Max-norm discrete divergence (with boundary data) of `vel`.
pub fn max_divergence(grid: &GridSpec, edges: &EdgeConditions, vel: &VectorField) -> f64 {
    let st = Stencil::new(grid, edges);
    divergence(grid, &st, vel).iter().fold(0.0, |m, d| m.max(d.abs()))
}

/// Relaxation forcing pulling `vel` toward `target` with time scale `tau`.
pub fn relaxation_source(grid: &GridSpec, vel: &VectorField, target: &VectorField, tau: f64) -> VectorField {
    let k = 1.0 / tau;
    let mut s = VectorField::zeros(grid);
    for c in grid.water_cells() {
        let (u, v) = vel.at(c);
        let (tu, tv) = target.at(c);
        s.u.values_mut()[c] = (tu - u) * k;
        s.v.values_mut()[c] = (tv - v) * k;
    }
    s
}

/// How the horizontal diffusion coefficient is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionSpec {
    Constant { value: f64 },
    /// `k_d * |U| * min(dx, dy)`.
    VelocityScaled { k_d: f64 },
}

/// Linear drift map `U = a_c U_c + a_w U_w + a_wave U_wave + U_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftModel {
    pub current_factor: f64,
    pub wind_factor: f64,
    pub wave_factor: f64,
    /// Stokes drift prescribed as this fraction of the wind.
    pub wave_fraction_of_wind: f64,
    pub diffusion: DiffusionSpec,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            current_factor: 1.0,
            wind_factor: 0.03,
            wave_factor: 1.0,
            wave_fraction_of_wind: 0.01,
            diffusion: DiffusionSpec::Constant { value: 1.0 },
        }
    }
}

impl DriftModel {
    pub fn validate(&self) -> Result<()> {
        let neg = [self.current_factor, self.wind_factor, self.wave_factor, self.wave_fraction_of_wind]
            .iter()
            .any(|f| !(*f >= 0.0));
        let dneg = match self.diffusion {
            DiffusionSpec::Constant { value } => !(value >= 0.0),
            DiffusionSpec::VelocityScaled { k_d } => !(k_d >= 0.0),
        };
        if neg || dneg {
            return Err(Error::Config("drift factors and diffusion must be non-negative".into()));
        }
        Ok(())
    }

    pub fn wave_field(&self, grid: &GridSpec, wind: &VectorField) -> VectorField {
        let mut w = wind.clone();
        w.u = w.u.scaled(self.wave_fraction_of_wind);
        w.v = w.v.scaled(self.wave_fraction_of_wind);
        w.mask_land(grid);
        w
    }

    /// `D_h` on the grid given a reference drift field.
    pub fn diffusion_field(&self, grid: &GridSpec, drift: &VectorField) -> ScalarField {
        let mut d = match self.diffusion {
            DiffusionSpec::Constant { value } => ScalarField::constant(grid, value),
            DiffusionSpec::VelocityScaled { k_d } => {
                let h = grid.min_spacing();
                let vals = (0..grid.cell_count())
                    .map(|c| {
                        let (u, v) = drift.at(c);
                        k_d * u.hypot(v) * h
                    })
                    .collect();
                ScalarField::from_values(grid, vals).expect("grid-sized")
            }
        };
        d.mask_land(grid);
        d
    }
}

pub fn combined_drift(
    grid: &GridSpec,
    current: &VectorField,
    wind: &VectorField,
    wave: &VectorField,
    correction: &VectorField,
    model: &DriftModel,
) -> Result<VectorField> {
    for f in [current, wind, wave, correction] {
        f.check_grid(grid)?;
    }
    let mut out = VectorField::zeros(grid);
    for c in grid.water_cells() {
        let comb = |a: f64, b: f64, w: f64, d: f64| {
            model.current_factor * a + model.wind_factor * b + model.wave_factor * w + d
        };
        out.u.values_mut()[c] = comb(
            current.u.values()[c],
            wind.u.values()[c],
            wave.u.values()[c],
            correction.u.values()[c],
        );
        out.v.values_mut()[c] = comb(
            current.v.values()[c],
            wind.v.values()[c],
            wave.v.values()[c],
            correction.v.values()[c],
        );
    }
    Ok(out)
}

/// Random-walk drift correction `U_d = ∇D_h`, central differences in the
/// interior and one-sided next to edges and land.
pub fn diffusion_correction(grid: &GridSpec, d_h: &ScalarField) -> Result<VectorField> {
    d_h.check_grid(grid)?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let val = d_h.values();
    let water = |i: isize, j: isize| -> Option<usize> {
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            return None;
        }
        let idx = grid.index(i as usize, j as usize);
        (!grid.is_land(idx)).then_some(idx)
    };
    let deriv = |c: usize, a: Option<usize>, b: Option<usize>, h: f64| -> f64 {
        match (a, b) {
            (Some(p), Some(m)) => (val[p] - val[m]) / (2.0 * h),
            (Some(p), None) => (val[p] - val[c]) / h,
            (None, Some(m)) => (val[c] - val[m]) / h,
            (None, None) => 0.0,
        }
    };
    let mut out = VectorField::zeros(grid);
    for c in grid.water_cells() {
        let (i, j) = grid.coords(c);
        let (i, j) = (i as isize, j as isize);
        out.u.values_mut()[c] = deriv(c, water(i + 1, j), water(i - 1, j), grid.dx());
        out.v.values_mut()[c] = deriv(c, water(i, j + 1), water(i, j - 1), grid.dy());
    }
    Ok(out)
}

/// Sinusoidal component along a fixed direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    /// m/s
    pub amplitude: f64,
    /// s
    pub period: f64,
    /// rad
    pub phase: f64,
    /// Direction of the oscillating velocity, radians counter-clockwise from east.
    pub direction: f64,
    /// Wavelength across the flow direction, m; 0 for a uniform oscillation.
    /// The cross-stream wave keeps the field divergence free.
    #[serde(default)]
    pub wavelength: f64,
}

impl Oscillation {
    /// Value of a uniform oscillation, or of the wave at the origin.
    pub fn value(&self, t: f64) -> (f64, f64) {
        self.value_at(crate::domain::Point::default(), t)
    }

    pub fn value_at(&self, p: crate::domain::Point, t: f64) -> (f64, f64) {
        let tau = 2.0 * std::f64::consts::PI;
        let (sd, cd) = self.direction.sin_cos();
        let cross = if self.wavelength > 0.0 { tau * (-sd * p.x + cd * p.y) / self.wavelength } else { 0.0 };
        let s = self.amplitude * (tau * t / self.period + self.phase - cross).sin();
        (s * cd, s * sd)
    }
}

/// Divergence-free analytic velocity: a mean flow, a cellular eddy pattern
/// from the stream function `ψ = A L/2π sin(2πx/L) sin(2πy/L)`, and an
/// optional uniform oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticField {
    pub mean_u: f64,
    pub mean_v: f64,
    pub eddy_amplitude: f64,
    pub eddy_wavelength: f64,
    pub oscillation: Option<Oscillation>,
}

impl Default for AnalyticField {
    fn default() -> Self {
        Self {
            mean_u: 0.0,
            mean_v: 0.0,
            eddy_amplitude: 0.0,
            eddy_wavelength: 1.0,
            oscillation: None,
        }
    }
}

impl AnalyticField {
    pub fn evaluate(&self, grid: &GridSpec, t: f64) -> VectorField {
        let k = 2.0 * std::f64::consts::PI / self.eddy_wavelength;
        let mut f = VectorField::from_fn(grid, |p| {
            let (ou, ov) = self.oscillation.map_or((0.0, 0.0), |o| o.value_at(p, t));
            let (sx, cx) = (k * p.x).sin_cos();
            let (sy, cy) = (k * p.y).sin_cos();
            // u = ∂ψ/∂y, v = -∂ψ/∂x
            (
                self.mean_u + ou + self.eddy_amplitude * sx * cy,
                self.mean_v + ov - self.eddy_amplitude * cx * sy,
            )
        });
        f.mask_land(grid);
        f
    }
}

/// Analytic stand-in for external current and wind data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticForcing {
    pub current: AnalyticField,
    pub wind: AnalyticField,
    pub tide: Oscillation,
    pub include_tide: bool,
}

impl SyntheticForcing {
    pub fn validate(&self) -> Result<()> {
        if self.include_tide && !(self.tide.period > 0.0) {
            return Err(Error::Config("tidal period must be positive".into()));
        }
        Ok(())
    }

    /// Same forcing with the tidal component switched on or off.
    pub fn with_tide(mut self, on: bool) -> Self {
        self.include_tide = on;
        self
    }
}

/// External current and wind at time `t`.
pub fn synthesize_forcing(grid: &GridSpec, spec: &SyntheticForcing, t: f64) -> (VectorField, VectorField) {
    let mut current = spec.current.evaluate(grid, t);
    if spec.include_tide {
        for c in grid.water_cells() {
            let (tu, tv) = spec.tide.value_at(grid.center_of(c), t);
            current.u.values_mut()[c] += tu;
            current.v.values_mut()[c] += tv;
        }
    }
    (current, spec.wind.evaluate(grid, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Point;
    use std::f64::consts::PI;

    fn periodic_grid(n: usize, len: f64) -> GridSpec {
        let h = len / n as f64;
        GridSpec::new(n, n, h, h, Point::new(0.5 * h, 0.5 * h)).unwrap()
    }

    #[test]
    fn uniform_flow_is_steady() {
        let g = periodic_grid(16, 16.0);
        let layer = FluidLayer::new(&g, VectorField::uniform(&g, 0.4, -0.3), 0.1, EdgeConditions::periodic()).unwrap();
        let (next, rep) = step_layer(&g, &layer, 0.5).unwrap();
        for c in 0..g.cell_count() {
            assert!((next.velocity.u.values()[c] - 0.4).abs() < 1e-10);
            assert!((next.velocity.v.values()[c] + 0.3).abs() < 1e-10);
        }
        assert!(rep.relative_divergence <= 1e-8);
    }

    #[test]
    fn single_euler_source_step_is_projected() {
        let g = periodic_grid(8, 8.0);
        let mut layer = FluidLayer::new(&g, VectorField::zeros(&g), 0.1, EdgeConditions::periodic()).unwrap();
        layer.source = VectorField::uniform(&g, 2.0, 0.0);
        // a uniform field is already divergence free: projection leaves a*dt
        let (next, _) = step_layer(&g, &layer, 0.25).unwrap();
        for c in 0..g.cell_count() {
            assert!((next.velocity.u.values()[c] - 0.5).abs() < 1e-12);
            assert!(next.velocity.v.values()[c].abs() < 1e-12);
        }
        // a divergent source gets its divergence removed
        layer.source = VectorField::from_fn(&g, |p| ((2.0 * PI * p.x / 8.0).sin(), 0.0));
        let (next, rep) = step_layer(&g, &layer, 0.25).unwrap();
        assert!(rep.relative_divergence <= 1e-8);
        // the source is a pure gradient mode, so almost nothing survives
        assert!(max_divergence(&g, &layer.edges, &next.velocity) * g.dx() <= 1e-8 * 0.25);
        assert!(next.velocity.max_speed() < 1e-9);
    }

    #[test]
    fn cfl_violation_is_rejected_with_substeps() {
        let g = periodic_grid(8, 8.0);
        let layer = FluidLayer::new(&g, VectorField::uniform(&g, 2.0, 0.0), 0.1, EdgeConditions::periodic()).unwrap();
        match step_layer(&g, &layer, 1.0) {
            Err(Error::Cfl { substeps, .. }) => assert_eq!(substeps, 3),
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn periodic_momentum_is_conserved() {
        let g = periodic_grid(24, 2.0 * PI);
        let v0 = VectorField::from_fn(&g, |p| {
            (0.3 + p.x.sin() * p.y.cos() + 0.2 * (2.0 * p.y).sin(), -p.x.cos() * p.y.sin())
        });
        let mut layer = FluidLayer::new(&g, v0, 0.02, EdgeConditions::periodic()).unwrap();
        for _ in 0..10 {
            let before = (layer.velocity.u.sum(), layer.velocity.v.sum());
            let (next, _) = step_layer(&g, &layer, 0.01).unwrap();
            let after = (next.velocity.u.sum(), next.velocity.v.sum());
            let scale = layer.velocity.u.values().iter().map(|x| x.abs()).sum::<f64>();
            assert!((after.0 - before.0).abs() <= 1e-8 * scale);
            assert!((after.1 - before.1).abs() <= 1e-8 * scale);
            layer = next;
        }
    }

    #[test]
    fn inflow_outflow_channel_with_island_projects() {
        let mut land = vec![false; 20 * 12];
        for j in 5..7 {
            for i in 8..10 {
                land[j * 20 + i] = true;
            }
        }
        let g = GridSpec::with_land(20, 12, 100.0, 100.0, Point::new(50.0, 50.0), land).unwrap();
        let edges = EdgeConditions::upstream_inflow(0.5, 0.0);
        let mut layer = FluidLayer::new(&g, VectorField::uniform(&g, 0.5, 0.0), 5.0, edges).unwrap();
        for _ in 0..20 {
            let (next, rep) = step_layer(&g, &layer, 20.0).unwrap();
            assert!(rep.relative_divergence <= 1e-8, "{rep:?}");
            for c in 0..g.cell_count() {
                if g.is_land(c) {
                    assert_eq!(next.velocity.at(c), (0.0, 0.0));
                }
            }
            layer = next;
        }
    }

    #[test]
    fn combined_drift_examples() {
        let g = periodic_grid(4, 4.0);
        let z = VectorField::zeros(&g);
        let m = DriftModel::default();
        assert_eq!(combined_drift(&g, &z, &z, &z, &z, &m).unwrap(), z);
        let m = DriftModel {
            wind_factor: 0.03,
            wave_factor: 0.0,
            ..DriftModel::default()
        };
        let d = combined_drift(&g, &VectorField::uniform(&g, 1.0, 0.0), &VectorField::uniform(&g, 10.0, 0.0), &z, &z, &m).unwrap();
        for c in 0..16 {
            assert!((d.u.values()[c] - 1.3).abs() < 1e-15);
            assert_eq!(d.v.values()[c], 0.0);
        }
        let other = GridSpec::new(5, 4, 1.0, 1.0, Point::default()).unwrap();
        assert!(combined_drift(&g, &VectorField::zeros(&other), &z, &z, &z, &m).is_err());
    }

    #[test]
    fn combined_drift_superposition() {
        let g = periodic_grid(5, 5.0);
        let m = DriftModel::default();
        let a = VectorField::from_fn(&g, |p| (p.x.sin(), p.y));
        let b = VectorField::from_fn(&g, |p| (p.y * 0.3, -p.x));
        let z = VectorField::zeros(&g);
        let sum = VectorField::new(
            ScalarField::from_values(&g, a.u.values().iter().zip(b.u.values()).map(|(x, y)| x + y).collect()).unwrap(),
            ScalarField::from_values(&g, a.v.values().iter().zip(b.v.values()).map(|(x, y)| x + y).collect()).unwrap(),
        )
        .unwrap();
        let da = combined_drift(&g, &z, &a, &z, &z, &m).unwrap();
        let db = combined_drift(&g, &z, &b, &z, &z, &m).unwrap();
        let ds = combined_drift(&g, &z, &sum, &z, &z, &m).unwrap();
        for c in 0..g.cell_count() {
            assert!((ds.u.values()[c] - da.u.values()[c] - db.u.values()[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn diffusion_correction_examples() {
        let g = GridSpec::new(7, 6, 2.0, 3.0, Point::default()).unwrap();
        let u = diffusion_correction(&g, &ScalarField::constant(&g, 4.0)).unwrap();
        assert!(u.u.values().iter().chain(u.v.values()).all(|&x| x == 0.0));
        let u = diffusion_correction(&g, &ScalarField::from_fn(&g, |p| 0.25 * p.x)).unwrap();
        for c in 0..g.cell_count() {
            assert!((u.u.values()[c] - 0.25).abs() < 1e-14);
            assert!(u.v.values()[c].abs() < 1e-14);
        }
    }

    #[test]
    fn diffusion_correction_matches_stencil_oracle() {
        let g = GridSpec::new(9, 8, 1.5, 0.5, Point::new(0.2, 0.1)).unwrap();
        let d = ScalarField::from_fn(&g, |p| 1.0 + 0.3 * (0.7 * p.x).sin() * (1.1 * p.y).cos());
        let u = diffusion_correction(&g, &d).unwrap();
        for j in 1..7 {
            for i in 1..8 {
                let ex = (d.get(i + 1, j) - d.get(i - 1, j)) / 3.0;
                let ey = (d.get(i, j + 1) - d.get(i, j - 1)) / 1.0;
                assert!((u.u.get(i, j) - ex).abs() < 1e-12);
                assert!((u.v.get(i, j) - ey).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forcing_examples() {
        let g = periodic_grid(4, 4.0);
        let spec = SyntheticForcing {
            current: AnalyticField {
                mean_u: 0.2,
                ..AnalyticField::default()
            },
            wind: AnalyticField {
                mean_u: 5.0,
                ..AnalyticField::default()
            },
            tide: Oscillation {
                amplitude: 0.5,
                period: 1000.0,
                phase: 0.0,
                direction: PI / 2.0,
                wavelength: 0.0,
            },
            include_tide: false,
        };
        let (c, w) = synthesize_forcing(&g, &spec, 250.0);
        assert_eq!(c.at(3), (0.2, 0.0));
        assert_eq!(w.at(3), (5.0, 0.0));
        let (c, _) = synthesize_forcing(&g, &spec.with_tide(true), 250.0);
        assert!((c.at(0).1 - 0.5).abs() < 1e-12);
        // mean of the tide over one period, midpoint quadrature
        let n = 4000;
        let mean: f64 = (0..n)
            .map(|k| spec.tide.value((k as f64 + 0.5) * 1000.0 / n as f64).1)
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn cross_stream_tide_is_divergence_free() {
        let g = periodic_grid(32, 32_000.0);
        let spec = SyntheticForcing {
            current: AnalyticField::default(),
            wind: AnalyticField::default(),
            tide: Oscillation {
                amplitude: 0.4,
                period: 44_712.0,
                phase: 0.3,
                direction: PI / 4.0,
                wavelength: 32_000.0 / 2.0f64.sqrt(),
            },
            include_tide: true,
        };
        let (c, _) = synthesize_forcing(&g, &spec, 5000.0);
        assert!(max_divergence(&g, &EdgeConditions::periodic(), &c) < 1e-15);
        assert!(c.max_speed() > 0.39);
    }

    #[test]
    fn eddy_pattern_is_divergence_free_in_continuum() {
        // the analytic eddy evaluated on a periodic grid is nearly projected already
        let g = periodic_grid(32, 32_000.0);
        let f = AnalyticField {
            eddy_amplitude: 0.3,
            eddy_wavelength: 32_000.0,
            ..AnalyticField::default()
        };
        let v = f.evaluate(&g, 0.0);
        assert!(max_divergence(&g, &EdgeConditions::periodic(), &v) < 1e-15);
    }
}
