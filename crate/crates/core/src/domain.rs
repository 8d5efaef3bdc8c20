//! Grid, time axis and field containers shared by every other module.
//!
//! Cells are addressed by `(i, j)` with `i` running west to east and `j`
//! south to north. Storage is row-major over cells: the flat index of
//! `(i, j)` is `j * nx + i`. All fields are cell-centered on one co-located
//! grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Regular planar grid over the sea surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    origin: Point,
    land: Vec<bool>,
}

impl GridSpec {
    /// All-water grid.
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, origin: Point) -> Result<Self> {
        Self::with_land(nx, ny, dx, dy, origin, vec![false; nx * ny])
    }

    pub fn with_land(
        nx: usize,
        ny: usize,
        dx: f64,
        dy: f64,
        origin: Point,
        land: Vec<bool>,
    ) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Domain(format!("grid must be at least 3x3, got {nx}x{ny}")));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::Domain(format!("cell spacings must be positive, got ({dx}, {dy})")));
        }
        if land.len() != nx * ny {
            return Err(Error::Domain(format!(
                "land mask has {} entries, expected {}",
                land.len(),
                nx * ny
            )));
        }
        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            origin,
            land,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn origin(&self) -> Point {
        self.origin
    }
    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }
    pub fn min_spacing(&self) -> f64 {
        self.dx.min(self.dy)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn is_land(&self, idx: usize) -> bool {
        self.land[idx]
    }

    pub fn land_mask(&self) -> &[bool] {
        &self.land
    }

    pub fn water_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cell_count()).filter(move |&c| !self.land[c])
    }

    /// Total water area in m².
    pub fn domain_area(&self) -> f64 {
        self.cell_area() * self.water_cells().count() as f64
    }

    /// Lower-left and upper-right corners of the cell-edge bounding box.
    pub fn bounds(&self) -> (Point, Point) {
        let lo = Point::new(self.origin.x - 0.5 * self.dx, self.origin.y - 0.5 * self.dy);
        let hi = Point::new(
            self.origin.x + (self.nx as f64 - 0.5) * self.dx,
            self.origin.y + (self.ny as f64 - 0.5) * self.dy,
        );
        (lo, hi)
    }

    pub fn contains(&self, p: Point) -> bool {
        let (lo, hi) = self.bounds();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Result<Point> {
        if i >= self.nx || j >= self.ny {
            return Err(Error::Domain(format!(
                "cell ({i}, {j}) outside {}x{} grid",
                self.nx, self.ny
            )));
        }
        Ok(self.center_unchecked(i, j))
    }

    #[inline]
    pub fn center_unchecked(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.origin.x + i as f64 * self.dx,
            self.origin.y + j as f64 * self.dy,
        )
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        self.center_unchecked(i, j)
    }

    /// Cell containing `p`. Points on a shared edge belong to the lower index.
    pub fn locate(&self, p: Point) -> Result<(usize, usize)> {
        if !self.contains(p) {
            return Err(Error::OutOfDomain { x: p.x, y: p.y });
        }
        let i = axis_cell((p.x - self.origin.x) / self.dx, self.nx);
        let j = axis_cell((p.y - self.origin.y) / self.dy, self.ny);
        Ok((i, j))
    }

    pub fn locate_index(&self, p: Point) -> Result<usize> {
        let (i, j) = self.locate(p)?;
        Ok(self.index(i, j))
    }
}

fn axis_cell(s: f64, n: usize) -> usize {
    // s is the position in cell units relative to the center of cell 0.
    let k = (s + 0.5).ceil() - 1.0;
    k.clamp(0.0, (n - 1) as f64) as usize
}

/// Uniform time axis `t_k = t0 + k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, dt: f64) -> Result<Self> {
        if !(tf > t0) {
            return Err(Error::Domain(format!("tf ({tf}) must exceed t0 ({t0})")));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        let steps = ((tf - t0) / dt).round() as usize;
        Ok(Self { t0, tf, dt, steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// Cell-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &GridSpec, value: f64) -> Self {
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            values: vec![value; grid.cell_count()],
        }
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::Domain(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field value {bad}")));
        }
        Ok(Self {
            nx: grid.nx(),
            ny: grid.ny(),
            values,
        })
    }

    /// Builds a field of the given shape without validating values.
    pub(crate) fn from_values_unchecked(shape: (usize, usize), values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.0 * shape.1);
        Self {
            nx: shape.0,
            ny: shape.1,
            values,
        }
    }

    /// Evaluates `f` at every cell center.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(Point) -> f64) -> Self {
        let values = (0..grid.cell_count()).map(|c| f(grid.center_of(c))).collect();
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn matches(&self, grid: &GridSpec) -> bool {
        self.nx == grid.nx() && self.ny == grid.ny()
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.matches(grid) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "field is {}x{}, grid is {}x{}",
                self.nx,
                self.ny,
                grid.nx(),
                grid.ny()
            )))
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.nx + i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            nx: self.nx,
            ny: self.ny,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Sets land cells to zero.
    pub fn mask_land(&mut self, grid: &GridSpec) {
        for (v, &l) in self.values.iter_mut().zip(grid.land_mask()) {
            if l {
                *v = 0.0;
            }
        }
    }
}

/// Two-component cell-centered vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub u: ScalarField,
    pub v: ScalarField,
}

impl VectorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            u: ScalarField::zeros(grid),
            v: ScalarField::zeros(grid),
        }
    }

    pub fn uniform(grid: &GridSpec, u: f64, v: f64) -> Self {
        let mut f = Self {
            u: ScalarField::constant(grid, u),
            v: ScalarField::constant(grid, v),
        };
        f.mask_land(grid);
        f
    }

    pub fn new(u: ScalarField, v: ScalarField) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::Domain("vector components on different grids".into()));
        }
        Ok(Self { u, v })
    }

    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(Point) -> (f64, f64)) -> Self {
        let mut u = Vec::with_capacity(grid.cell_count());
        let mut v = Vec::with_capacity(grid.cell_count());
        for c in 0..grid.cell_count() {
            let (a, b) = f(grid.center_of(c));
            u.push(a);
            v.push(b);
        }
        Self {
            u: ScalarField {
                nx: grid.nx(),
                ny: grid.ny(),
                values: u,
            },
            v: ScalarField {
                nx: grid.nx(),
                ny: grid.ny(),
                values: v,
            },
        }
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        self.u.check_grid(grid)?;
        self.v.check_grid(grid)
    }

    pub fn mask_land(&mut self, grid: &GridSpec) {
        self.u.mask_land(grid);
        self.v.mask_land(grid);
    }

    #[inline]
    pub fn at(&self, idx: usize) -> (f64, f64) {
        (self.u.values[idx], self.v.values[idx])
    }

    pub fn max_speed(&self) -> f64 {
        self.u
            .values
            .iter()
            .zip(&self.v.values)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Bilinear interpolation between cell centers. Within half a cell of the
    /// outer boundary the nearest interior value is used.
    pub fn interpolate(&self, grid: &GridSpec, p: Point) -> Result<(f64, f64)> {
        if !grid.contains(p) {
            return Err(Error::OutOfDomain { x: p.x, y: p.y });
        }
        Ok(self.interpolate_unchecked(grid, p))
    }

    pub(crate) fn interpolate_unchecked(&self, grid: &GridSpec, p: Point) -> (f64, f64) {
        let sx = ((p.x - grid.origin().x) / grid.dx()).clamp(0.0, (grid.nx() - 1) as f64);
        let sy = ((p.y - grid.origin().y) / grid.dy()).clamp(0.0, (grid.ny() - 1) as f64);
        let i0 = (sx.floor() as usize).min(grid.nx() - 2);
        let j0 = (sy.floor() as usize).min(grid.ny() - 2);
        let fx = sx - i0 as f64;
        let fy = sy - j0 as f64;
        let w = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let ids = [
            grid.index(i0, j0),
            grid.index(i0 + 1, j0),
            grid.index(i0, j0 + 1),
            grid.index(i0 + 1, j0 + 1),
        ];
        let mut out = (0.0, 0.0);
        for (wk, &c) in w.iter().zip(&ids) {
            out.0 += wk * self.u.values[c];
            out.1 += wk * self.v.values[c];
        }
        out
    }
}

/// Stacks fields into one state column: fields in the given order, each
/// row-major over cells.
pub fn stack(fields: &[&ScalarField]) -> DVector<f64> {
    let n: usize = fields.iter().map(|f| f.values.len()).sum();
    let mut out = DVector::zeros(n);
    let mut o = 0;
    for f in fields {
        out.rows_mut(o, f.values.len()).copy_from_slice(&f.values);
        o += f.values.len();
    }
    out
}

/// Inverse of [`stack`].
pub fn unstack(grid: &GridSpec, state: &DVector<f64>, field_count: usize) -> Result<Vec<ScalarField>> {
    let n = grid.cell_count();
    if state.len() != n * field_count {
        return Err(Error::Domain(format!(
            "state length {} is not {} fields of {} cells",
            state.len(),
            field_count,
            n
        )));
    }
    Ok((0..field_count)
        .map(|k| ScalarField {
            nx: grid.nx(),
            ny: grid.ny(),
            values: state.as_slice()[k * n..(k + 1) * n].to_vec(),
        })
        .collect())
}

/// Time-ordered snapshots of equal length.
#[derive(Debug, Clone, Default)]
pub struct StateTrajectory {
    snapshots: Vec<DVector<f64>>,
}

impl StateTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: DVector<f64>) -> Result<()> {
        if let Some(first) = self.snapshots.first() {
            if first.len() != x.len() {
                return Err(Error::Domain(format!(
                    "snapshot length {} differs from trajectory length {}",
                    x.len(),
                    first.len()
                )));
            }
        }
        self.snapshots.push(x);
        Ok(())
    }

    /// Drops the oldest snapshots so at most `window` remain.
    pub fn truncate_front(&mut self, window: usize) {
        if self.snapshots.len() > window {
            let extra = self.snapshots.len() - window;
            self.snapshots.drain(..extra);
        }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[DVector<f64>] {
        &self.snapshots
    }

    pub fn last(&self) -> Option<&DVector<f64>> {
        self.snapshots.last()
    }

    /// Snapshots as matrix columns.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let rows = self.snapshots.first().map_or(0, |s| s.len());
        DMatrix::from_columns(&self.snapshots).resize(rows, self.snapshots.len(), 0.0)
    }
}
