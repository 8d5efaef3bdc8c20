//! Directional drift variances and the normalized uncertainty tracer they
//! drive, with removal by sensor readings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{GridSpec, Point, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::flow::{check_cfl, courant, Boundary, EdgeConditions};

/// Inverse CDF of the chi-squared distribution with two degrees of freedom.
pub fn chi_squared_2dof(zeta: f64) -> f64 {
    -2.0 * (-zeta).ln_1p()
}

/// Variance of the external current data when none is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceFloor {
    Constant { x: f64, y: f64 },
    /// Fraction of the local squared drift speed.
    DriftFraction { fraction: f64 },
}

impl Default for VarianceFloor {
    fn default() -> Self {
        VarianceFloor::DriftFraction { fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintyConfig {
    /// m²/s
    pub nu: f64,
    pub zeta: f64,
    pub k_s: f64,
    /// Footprint radius, m.
    pub radius: f64,
    /// m/s
    pub v_sensor: f64,
    pub floor: VarianceFloor,
    /// Gain applied to the covariance-derived sources.
    pub injection_gain: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            nu: 10.0,
            zeta: 0.95,
            k_s: 0.9,
            radius: 1500.0,
            v_sensor: 26.8224,
            floor: VarianceFloor::default(),
            injection_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyParams {
    pub nu: f64,
    pub zeta: f64,
    pub chi: f64,
    pub k_chi: f64,
    pub k_s: f64,
    pub radius: f64,
    pub v_sensor: f64,
    pub floor: VarianceFloor,
    pub injection_gain: f64,
    pub start: Vec<Point>,
    pub dt: f64,
}

impl UncertaintyParams {
    pub fn new(cfg: &UncertaintyConfig, grid: &GridSpec, dt: f64, start: Vec<Point>) -> Result<Self> {
        if !(cfg.zeta > 0.0 && cfg.zeta < 1.0) {
            return Err(Error::Config(format!("zeta must lie in (0,1), got {}", cfg.zeta)));
        }
        if !(0.0..=1.0).contains(&cfg.k_s) {
            return Err(Error::Config(format!("k_s must lie in [0,1], got {}", cfg.k_s)));
        }
        if !(cfg.radius > 0.0) || !(cfg.v_sensor > 0.0) || !(dt > 0.0) || cfg.nu < 0.0 {
            return Err(Error::Config("radius, sensor speed and dt must be positive, nu non-negative".into()));
        }
        let area = grid.domain_area();
        if !(area > 0.0) {
            return Err(Error::Domain("domain has no water area".into()));
        }
        let chi = chi_squared_2dof(cfg.zeta);
        Ok(Self {
            nu: cfg.nu,
            zeta: cfg.zeta,
            chi,
            k_chi: std::f64::consts::PI * dt * dt * chi / area,
            k_s: cfg.k_s,
            radius: cfg.radius,
            v_sensor: cfg.v_sensor,
            floor: cfg.floor,
            injection_gain: cfg.injection_gain,
            start,
            dt,
        })
    }

    /// External variance floors (x, y) for a drift field.
    pub fn floors(&self, grid: &GridSpec, drift: &VectorField) -> (ScalarField, ScalarField) {
        match self.floor {
            VarianceFloor::Constant { x, y } => {
                let mut fx = ScalarField::constant(grid, x);
                let mut fy = ScalarField::constant(grid, y);
                fx.mask_land(grid);
                fy.mask_land(grid);
                (fx, fy)
            }
            VarianceFloor::DriftFraction { fraction } => {
                let vals: Vec<f64> = (0..grid.cell_count())
                    .map(|c| {
                        let (u, v) = drift.at(c);
                        fraction * (u * u + v * v)
                    })
                    .collect();
                let f = ScalarField::from_values(grid, vals).expect("finite drift");
                (f.clone(), f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyState {
    pub q: ScalarField,
    pub var_x: ScalarField,
    pub var_y: ScalarField,
}

impl UncertaintyState {
    /// State whose tracer is consistent with the given variances.
    pub fn from_variances(var_x: ScalarField, var_y: ScalarField, k_chi: f64) -> Self {
        let q = ScalarField::from_values_unchecked(
            var_x.shape(),
            var_x
                .values()
                .iter()
                .zip(var_y.values())
                .map(|(a, b)| (k_chi * k_chi * a * b).clamp(0.0, 1.0))
                .collect(),
        );
        Self { q, var_x, var_y }
    }
}

/// Covariance-derived variance sources.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceInjection {
    pub e_kx: ScalarField,
    pub e_ky: ScalarField,
}

impl CovarianceInjection {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            e_kx: ScalarField::zeros(grid),
            e_ky: ScalarField::zeros(grid),
        }
    }
}

/// Whether a sensor that set out from `start` can have reached `pos` by
/// time `elapsed`.
pub fn sensor_active(pos: Point, start: Point, elapsed: f64, v_sensor: f64) -> bool {
    elapsed >= pos.dist(start) / v_sensor
}

/// Cells whose centers lie within the footprint of an active sensor.
pub fn sensor_mask(grid: &GridSpec, positions: &[Point], params: &UncertaintyParams, elapsed: f64) -> ScalarField {
    let mut mask = ScalarField::zeros(grid);
    let r2 = params.radius * params.radius;
    for (k, &p) in positions.iter().enumerate() {
        let start = params.start.get(k).copied().unwrap_or(p);
        if !sensor_active(p, start, elapsed, params.v_sensor) {
            continue;
        }
        for c in grid.water_cells() {
            let d = grid.center_of(c) - p;
            if d.x * d.x + d.y * d.y <= r2 {
                mask.values_mut()[c] = 1.0;
            }
        }
    }
    mask
}

/// Sparse matrix of one explicit transport step
/// `I + dt (-U·∇ + ν∇²)` with upwind advection and central diffusion.
/// Periodic edges wrap; other edges and land are zero-gradient.
#[derive(Debug, Clone)]
pub struct TransportOp {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

fn neighbor(grid: &GridSpec, edges: &EdgeConditions, c: usize, dir: usize) -> usize {
    let (i, j) = grid.coords(c);
    let (nx, ny) = (grid.nx(), grid.ny());
    let periodic = |b: Boundary| matches!(b, Boundary::Periodic);
    let n = match dir {
        0 if i + 1 < nx => Some(grid.index(i + 1, j)),
        0 => periodic(edges.east).then(|| grid.index(0, j)),
        1 if i > 0 => Some(grid.index(i - 1, j)),
        1 => periodic(edges.west).then(|| grid.index(nx - 1, j)),
        2 if j + 1 < ny => Some(grid.index(i, j + 1)),
        2 => periodic(edges.north).then(|| grid.index(i, 0)),
        3 if j > 0 => Some(grid.index(i, j - 1)),
        _ => periodic(edges.south).then(|| grid.index(i, ny - 1)),
    };
    match n {
        Some(n) if !grid.is_land(n) => n,
        _ => c,
    }
}

impl TransportOp {
    pub fn new(grid: &GridSpec, edges: &EdgeConditions, drift: &VectorField, nu: f64, dt: f64) -> Result<Self> {
        drift.check_grid(grid)?;
        check_cfl(courant(grid, drift, dt))?;
        let (dx, dy) = (grid.dx(), grid.dy());
        let diffusion_number = nu * dt * (1.0 / (dx * dx) + 1.0 / (dy * dy));
        if diffusion_number > 0.5 {
            return Err(Error::Numerical(format!(
                "explicit diffusion unstable: nu dt (1/dx² + 1/dy²) = {diffusion_number:.3} > 0.5"
            )));
        }
        let n = grid.cell_count();
        let mut op = Self {
            offsets: Vec::with_capacity(n + 1),
            cols: Vec::with_capacity(5 * n),
            vals: Vec::with_capacity(5 * n),
        };
        op.offsets.push(0);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(5);
        for c in 0..n {
            row.clear();
            if !grid.is_land(c) {
                let (u, v) = drift.at(c);
                let [e, w, nn, s] = [0, 1, 2, 3].map(|d| neighbor(grid, edges, c, d));
                row.push((c, 1.0));
                // upwind: -u (x_c - x_w)/dx for u > 0, -u (x_e - x_c)/dx otherwise
                let (cu, cv) = (u * dt / dx, v * dt / dy);
                if u > 0.0 {
                    row.push((c, -cu));
                    row.push((w, cu));
                } else {
                    row.push((e, -cu));
                    row.push((c, cu));
                }
                if v > 0.0 {
                    row.push((c, -cv));
                    row.push((s, cv));
                } else {
                    row.push((nn, -cv));
                    row.push((c, cv));
                }
                let (kx, ky) = (nu * dt / (dx * dx), nu * dt / (dy * dy));
                row.extend([(e, kx), (w, kx), (c, -2.0 * kx - 2.0 * ky), (nn, ky), (s, ky)]);
                row.sort_by_key(|&(k, _)| k);
                let mut last = usize::MAX;
                for &(k, w) in &row {
                    if k == last {
                        *op.vals.last_mut().expect("pushed") += w;
                    } else {
                        op.cols.push(k);
                        op.vals.push(w);
                        last = k;
                    }
                }
            }
            op.offsets.push(op.cols.len());
        }
        Ok(op)
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.offsets[c], self.offsets[c + 1]);
            *o = self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(&k, &w)| w * x[k]).sum();
        }
    }

    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, &yc) in y.iter().enumerate() {
            if yc == 0.0 {
                continue;
            }
            for k in self.offsets[c]..self.offsets[c + 1] {
                out[self.cols[k]] += self.vals[k] * yc;
            }
        }
    }
}

/// Variance added over one step of length `step_dt`:
/// `step_dt (D_h / model_dt + ε + E_k)`. For `step_dt = model_dt` this is
/// `D_h + dt (ε + E_k)`.
pub fn variance_increment(
    d_h: &ScalarField,
    floor: &ScalarField,
    injection: &ScalarField,
    model_dt: f64,
    step_dt: f64,
) -> ScalarField {
    let vals = d_h
        .values()
        .iter()
        .zip(floor.values())
        .zip(injection.values())
        .map(|((d, e), k)| step_dt * (d / model_dt + e + k))
        .collect();
    ScalarField::from_values_unchecked(d_h.shape(), vals)
}

/// One variance step with a prebuilt transport operator. Transport and
/// sources are applied first, then a fraction `k_s * coverage` of the
/// result is removed; the result is clamped at zero.
pub fn step_variance_with(
    grid: &GridSpec,
    op: &TransportOp,
    var: &ScalarField,
    coverage: &ScalarField,
    increment: &ScalarField,
    k_s: f64,
) -> ScalarField {
    let mut out = vec![0.0; grid.cell_count()];
    op.apply(var.values(), &mut out);
    for (c, o) in out.iter_mut().enumerate() {
        if grid.is_land(c) {
            *o = 0.0;
            continue;
        }
        let keep = 1.0 - k_s * coverage.values()[c];
        *o = (keep * (*o + increment.values()[c])).max(0.0);
    }
    ScalarField::from_values_unchecked(var.shape(), out)
}

/// One forward-Euler variance step for a drift field and sensor mask.
#[allow(clippy::too_many_arguments)]
pub fn step_variance(
    grid: &GridSpec,
    edges: &EdgeConditions,
    var: &ScalarField,
    drift: &VectorField,
    mask: &ScalarField,
    increment: &ScalarField,
    params: &UncertaintyParams,
    dt: f64,
) -> Result<ScalarField> {
    var.check_grid(grid)?;
    mask.check_grid(grid)?;
    increment.check_grid(grid)?;
    let op = TransportOp::new(grid, edges, drift, params.nu, dt)?;
    Ok(step_variance_with(grid, &op, var, mask, increment, params.k_s))
}

/// Tracer update from the variance change over one step:
/// `q += k_χ² (σx² Δσy² + σy² Δσx²)`, clamped to [0, 1].
pub fn step_tracer(
    q: &ScalarField,
    var_x: &ScalarField,
    var_y: &ScalarField,
    next_x: &ScalarField,
    next_y: &ScalarField,
    k_chi: f64,
) -> ScalarField {
    let k2 = k_chi * k_chi;
    let vals = (0..q.values().len())
        .map(|c| {
            let (sx, sy) = (var_x.values()[c], var_y.values()[c]);
            let (dx, dy) = (next_x.values()[c] - sx, next_y.values()[c] - sy);
            (q.values()[c] + k2 * (sx * dy + sy * dx)).clamp(0.0, 1.0)
        })
        .collect();
    ScalarField::from_values_unchecked(q.shape(), vals)
}

/// Advances the full uncertainty state by one step.
pub fn step_uncertainty(
    grid: &GridSpec,
    op: &TransportOp,
    state: &UncertaintyState,
    coverage: &ScalarField,
    increments: (&ScalarField, &ScalarField),
    params: &UncertaintyParams,
) -> UncertaintyState {
    let var_x = step_variance_with(grid, op, &state.var_x, coverage, increments.0, params.k_s);
    let var_y = step_variance_with(grid, op, &state.var_y, coverage, increments.1, params.k_s);
    let q = step_tracer(&state.q, &state.var_x, &state.var_y, &var_x, &var_y, params.k_chi);
    UncertaintyState { q, var_x, var_y }
}

/// Diagonal of `B C Bᵀ` on the rows of two state fields, scaled by `gain`.
/// The state stacks `field_count` grid fields; `x_field` and `y_field`
/// select the velocity components.
pub fn covariance_injection(
    cov: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    grid: &GridSpec,
    x_field: usize,
    y_field: usize,
    gain: f64,
) -> Result<CovarianceInjection> {
    let n = grid.cell_count();
    if cov.nrows() != cov.ncols() || basis.ncols() != cov.nrows() {
        return Err(Error::Domain(format!(
            "covariance {}x{} incompatible with basis {}x{}",
            cov.nrows(),
            cov.ncols(),
            basis.nrows(),
            basis.ncols()
        )));
    }
    if basis.nrows() < n * (x_field.max(y_field) + 1) {
        return Err(Error::Domain("basis has too few rows for the requested fields".into()));
    }
    let bc = basis * cov;
    let diag = |row: usize| -> Result<f64> {
        let d = bc.row(row).dot(&basis.row(row));
        if d < -1e-10 {
            return Err(Error::Numerical(format!("covariance not positive semidefinite (diagonal {d:.3e})")));
        }
        Ok(gain * d.max(0.0))
    };
    let mut e_kx = ScalarField::zeros(grid);
    let mut e_ky = ScalarField::zeros(grid);
    for c in grid.water_cells() {
        e_kx.values_mut()[c] = diag(x_field * n + c)?;
        e_ky.values_mut()[c] = diag(y_field * n + c)?;
    }
    Ok(CovarianceInjection { e_kx, e_ky })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec::new(10, 10, 100.0, 100.0, Point::new(50.0, 50.0)).unwrap()
    }

    fn params(g: &GridSpec, k_s: f64, start: Vec<Point>) -> UncertaintyParams {
        let cfg = UncertaintyConfig {
            nu: 0.0,
            k_s,
            radius: 150.0,
            v_sensor: 10.0,
            ..Default::default()
        };
        UncertaintyParams::new(&cfg, g, 1.0, start).unwrap()
    }

    #[test]
    fn chi_matches_numeric_quantile() {
        let g = grid();
        let p = params(&g, 1.0, vec![]);
        assert!((p.chi - 5.991).abs() < 1e-3);
        // oracle: Simpson integration of the 2-dof density up to chi
        let pdf = |x: f64| 0.5 * (-0.5 * x).exp();
        let n = 2000;
        let h = p.chi / n as f64;
        let mut s = pdf(0.0) + pdf(p.chi);
        for k in 1..n {
            s += pdf(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert!((s * h / 3.0 - 0.95).abs() < 1e-10);
        let expected_k = std::f64::consts::PI * p.chi / 1.0e6;
        assert!((p.k_chi - expected_k).abs() < 1e-18);
    }

    #[test]
    fn sensor_mask_examples() {
        let g = grid();
        let at = Point::new(450.0, 450.0);
        let p = params(&g, 1.0, vec![at]);
        let m = sensor_mask(&g, &[at], &p, 0.0);
        let expected = g.water_cells().filter(|&c| g.center_of(c).dist(at) <= 150.0).count();
        assert_eq!(m.sum() as usize, expected);
        assert_eq!(m.get(4, 4), 1.0);
        assert_eq!(m.get(2, 4), 0.0);

        let far = Point::new(at.x + 600.0, at.y);
        assert_eq!(sensor_mask(&g, &[far], &p, 30.0).sum(), 0.0);
        assert!(sensor_mask(&g, &[far], &p, 60.0).sum() > 0.0);

        let mut small = p.clone();
        small.radius = 30.0;
        assert!(sensor_mask(&g, &[Point::new(430.0, 470.0)], &small, 0.0).sum() <= 1.0);
    }

    fn still_op(g: &GridSpec) -> TransportOp {
        TransportOp::new(g, &EdgeConditions::periodic(), &VectorField::zeros(g), 0.0, 1.0).unwrap()
    }

    #[test]
    fn variance_step_examples() {
        let g = grid();
        let op = still_op(&g);
        let zero = ScalarField::zeros(&g);
        let ones = ScalarField::constant(&g, 1.0);
        let full = step_variance_with(&g, &op, &ScalarField::constant(&g, 3.0), &ones, &zero, 1.0);
        assert_eq!(full.max(), 0.0);
        let grow = step_variance_with(&g, &op, &ScalarField::constant(&g, 3.0), &zero, &ScalarField::constant(&g, 0.5), 1.0);
        assert!(grow.values().iter().all(|&v| v == 3.5));
        let half = step_variance_with(&g, &op, &ScalarField::constant(&g, 4.0), &ones, &zero, 0.5);
        assert!(half.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn transport_matches_direct_upwind_oracle() {
        let g = grid();
        let edges = EdgeConditions::periodic();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let drift = VectorField::from_fn(&g, |_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let x = ScalarField::from_fn(&g, |p| (p.x * 0.01).sin() + (p.y * 0.02).cos());
        let (nu, dt) = (20.0, 10.0);
        let op = TransportOp::new(&g, &edges, &drift, nu, dt).unwrap();
        let mut out = vec![0.0; 100];
        op.apply(x.values(), &mut out);
        for j in 0..10usize {
            for i in 0..10usize {
                let at = |a: usize, b: usize| x.get(a % 10, b % 10);
                let c = x.get(i, j);
                let (e, w, n, s) = (at(i + 1, j), at(i + 9, j), at(i, j + 1), at(i, j + 9));
                let (u, v) = drift.at(g.index(i, j));
                let ddx = if u > 0.0 { (c - w) / 100.0 } else { (e - c) / 100.0 };
                let ddy = if v > 0.0 { (c - s) / 100.0 } else { (n - c) / 100.0 };
                let lap = (e + w + n + s - 4.0 * c) / 1.0e4;
                let expect = c + dt * (-u * ddx - v * ddy + nu * lap);
                assert!((out[g.index(i, j)] - expect).abs() < 1e-12);
            }
        }
        // transpose consistency: <Lx, y> = <x, Lᵀy>
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut lty = vec![0.0; 100];
        op.apply_transpose(&y, &mut lty);
        let a: f64 = out.iter().zip(&y).map(|(p, q)| p * q).sum();
        let b: f64 = x.values().iter().zip(&lty).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn transport_rejects_cfl_violation() {
        let g = grid();
        let fast = VectorField::uniform(&g, 20.0, 0.0);
        assert!(matches!(
            TransportOp::new(&g, &EdgeConditions::periodic(), &fast, 0.0, 10.0),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn tracer_examples() {
        let g = grid();
        let vx = ScalarField::constant(&g, 2.0);
        let vy = ScalarField::constant(&g, 3.0);
        let q = ScalarField::constant(&g, 0.3);
        assert_eq!(step_tracer(&q, &vx, &vy, &vx, &vy, 0.1), q);
        let top = ScalarField::constant(&g, 1.0);
        let up = ScalarField::constant(&g, 5.0);
        assert_eq!(step_tracer(&top, &vx, &vy, &up, &up, 0.1).min(), 1.0);
    }

    #[test]
    fn tracer_tracks_variance_product() {
        // uniform growth σx² = a + s t, σy² = b + s t; closed form q = k²σx²σy²
        let g = grid();
        let op = still_op(&g);
        let (a, b, s, k) = (2.0, 5.0, 0.01, 0.05);
        let zero = ScalarField::zeros(&g);
        let inc = ScalarField::constant(&g, s);
        let mut st = UncertaintyState::from_variances(ScalarField::constant(&g, a), ScalarField::constant(&g, b), k);
        let p = UncertaintyParams {
            k_chi: k,
            ..params(&g, 0.0, vec![])
        };
        let steps = 100;
        for _ in 0..steps {
            st = step_uncertainty(&g, &op, &st, &zero, (&inc, &inc), &p);
        }
        let t = steps as f64;
        let exact = k * k * (a + s * t) * (b + s * t);
        // each step misses k² s² (second-order term)
        let err = (st.q.get(3, 3) - exact).abs();
        assert!(err <= 1.01 * k * k * s * s * t, "err {err}");
    }

    #[test]
    fn stationary_full_sensor_zeroes_its_cells() {
        let g = grid();
        let at = Point::new(450.0, 450.0);
        let p = params(&g, 1.0, vec![at]);
        let drift = VectorField::uniform(&g, 1.0, 0.5);
        let op = TransportOp::new(&g, &EdgeConditions::periodic(), &drift, 5.0, 1.0).unwrap();
        let mask = sensor_mask(&g, &[at], &p, 0.0);
        let inc = ScalarField::constant(&g, 0.2);
        let mut st = UncertaintyState::from_variances(ScalarField::constant(&g, 1.0), ScalarField::constant(&g, 1.0), p.k_chi);
        for _ in 0..20 {
            st = step_uncertainty(&g, &op, &st, &mask, (&inc, &inc), &p);
            for c in 0..100 {
                if mask.values()[c] == 1.0 {
                    assert_eq!(st.var_x.values()[c], 0.0);
                    assert_eq!(st.var_y.values()[c], 0.0);
                }
            }
        }
    }

    #[test]
    fn injection_examples() {
        let mut land = vec![false; 9];
        land[4] = true;
        let g = GridSpec::with_land(3, 3, 1.0, 1.0, Point::new(0.5, 0.5), land).unwrap();
        // orthonormal basis over 2 stacked fields (18 rows), 3 modes
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::from_fn(18, 3, |_, _| rng.random_range(-1.0..1.0));
        let basis = m.qr().q();
        let zero = covariance_injection(&DMatrix::zeros(3, 3), &basis, &g, 0, 1, 1.0).unwrap();
        assert_eq!(zero.e_kx.max(), 0.0);
        let id = covariance_injection(&DMatrix::identity(3, 3), &basis, &g, 0, 1, 2.0).unwrap();
        for c in g.water_cells() {
            let rx = basis.row(c).norm_squared();
            let ry = basis.row(9 + c).norm_squared();
            assert!((id.e_kx.values()[c] - 2.0 * rx).abs() < 1e-14);
            assert!((id.e_ky.values()[c] - 2.0 * ry).abs() < 1e-14);
        }
        assert_eq!(id.e_kx.values()[4], 0.0);
        let c = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let cov = &c * c.transpose();
        let a = covariance_injection(&cov, &basis, &g, 0, 1, 1.0).unwrap();
        let b = covariance_injection(&(&cov * 2.0), &basis, &g, 0, 1, 1.0).unwrap();
        for k in 0..9 {
            assert!((b.e_kx.values()[k] - 2.0 * a.e_kx.values()[k]).abs() < 1e-12);
        }
        assert!(covariance_injection(&(-DMatrix::identity(3, 3)), &basis, &g, 0, 1, 1.0).is_err());
    }

    #[test]
    fn tracer_non_decreasing_without_sensors() {
        let g = grid();
        let op = still_op(&g);
        let p = params(&g, 1.0, vec![]);
        let zero = ScalarField::zeros(&g);
        let inc = ScalarField::from_fn(&g, |pt| 1e-3 * pt.x);
        let mut st = UncertaintyState::from_variances(ScalarField::constant(&g, 1.0), ScalarField::constant(&g, 2.0), 1e-2);
        for _ in 0..50 {
            let next = step_uncertainty(&g, &op, &st, &zero, (&inc, &inc), &p);
            for c in 0..100 {
                assert!(next.q.values()[c] >= st.q.values()[c]);
            }
            st = next;
        }
    }

    proptest::proptest! {
        #[test]
        fn variances_stay_non_negative(seed in 0u64..5000) {
            let g = grid();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let drift = VectorField::from_fn(&g, |_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)));
            let op = TransportOp::new(&g, &EdgeConditions::periodic(), &drift, rng.random_range(0.0..100.0), 5.0).unwrap();
            let var = ScalarField::from_fn(&g, |_| rng.random_range(0.0..10.0));
            let cov = ScalarField::from_fn(&g, |_| rng.random_range(0.0..1.0));
            let inc = ScalarField::from_fn(&g, |_| rng.random_range(0.0..1.0));
            let out = step_variance_with(&g, &op, &var, &cov, &inc, rng.random_range(0.0..1.0));
            proptest::prop_assert!(out.min() >= 0.0);
            proptest::prop_assert!(out.values().iter().all(|v| v.is_finite()));
        }
    }
}
