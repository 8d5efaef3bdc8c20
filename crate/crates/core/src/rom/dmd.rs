//! Truncated SVD and exact DMD on a snapshot history.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};

use crate::domain::StateTrajectory;
use crate::error::{Error, Result};

/// Snapshot pairs `X = [x_0 .. x_{k-2}]`, `X' = [x_1 .. x_{k-1}]`.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    x: DMatrix<f64>,
    x_next: DMatrix<f64>,
}

impl SnapshotMatrix {
    /// Splits a time-ordered column matrix into shifted pairs.
    pub fn from_columns(data: &DMatrix<f64>) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(Error::Domain("DMD needs at least two snapshots".into()));
        }
        let k = data.ncols();
        Ok(Self {
            x: data.columns(0, k - 1).into_owned(),
            x_next: data.columns(1, k - 1).into_owned(),
        })
    }

    pub fn from_trajectory(traj: &StateTrajectory) -> Result<Self> {
        Self::from_columns(&traj.to_matrix())
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn x_next(&self) -> &DMatrix<f64> {
        &self.x_next
    }

    pub fn pairs(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct DmdModel {
    /// Left singular vectors, one column per mode.
    pub basis: DMatrix<f64>,
    pub singular: DVector<f64>,
    /// Right singular vectors transposed, rank × pairs.
    pub right: DMatrix<f64>,
    /// Reduced linear operator on modal amplitudes.
    pub a_tilde: DMatrix<f64>,
    /// Singular values that were discarded by the truncation.
    pub discarded: DVector<f64>,
}

const RANK_TOL: f64 = 1e-12;

/// Fits a rank-`rank` DMD model. The rank is reduced (with a warning) when
/// the trailing singular values fall below `1e-12 S_1`.
pub fn fit_dmd(snap: &SnapshotMatrix, rank: usize) -> Result<DmdModel> {
    let max_rank = snap.x.nrows().min(snap.x.ncols());
    if rank == 0 || rank > max_rank {
        return Err(Error::Domain(format!(
            "DMD rank {rank} outside 1..={max_rank} ({} snapshot pairs)",
            snap.pairs()
        )));
    }
    let svd = snap.x.clone().svd(true, true);
    // nalgebra does not order singular values; sort descending
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_all: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    if !(s_all[0] > 0.0) {
        return Err(Error::Numerical("snapshot matrix is zero".into()));
    }
    let usable = s_all.iter().take_while(|&&s| s >= RANK_TOL * s_all[0]).count();
    let r = if usable < rank {
        log::warn!("DMD rank reduced from {rank} to {usable}: trailing singular values below tolerance");
        usable
    } else {
        rank
    };
    let u_all = svd.u.as_ref().expect("requested U");
    let vt_all = svd.v_t.as_ref().expect("requested V^T");
    let basis = DMatrix::from_fn(u_all.nrows(), r, |i, j| u_all[(i, order[j])]);
    let right = DMatrix::from_fn(r, vt_all.ncols(), |i, j| vt_all[(order[i], j)]);
    let singular = DVector::from_iterator(r, s_all.iter().take(r).copied());
    let discarded = DVector::from_iterator(s_all.len() - r, s_all.iter().skip(r).copied());
    // Ã = Uᵀ X' V S⁻¹
    let mut xv = basis.transpose() * &snap.x_next * right.transpose();
    for (j, s) in singular.iter().enumerate() {
        xv.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(DmdModel {
        basis,
        singular,
        right,
        a_tilde: xv,
        discarded,
    })
}

impl DmdModel {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn state_len(&self) -> usize {
        self.basis.nrows()
    }

    /// Modal amplitudes of a full state, `Uᵀ x`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * x
    }

    /// Full state from modal amplitudes, `U z`.
    pub fn reconstruct(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.basis * z
    }

    pub fn predict(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a_tilde * z
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        self.a_tilde.complex_eigenvalues().iter().copied().collect()
    }

    /// Frobenius norm of the discarded singular values.
    pub fn truncation_residual(&self) -> f64 {
        self.discarded.norm()
    }

    /// `‖X' - U Ã Uᵀ X‖_F`
    pub fn training_residual(&self, snap: &SnapshotMatrix) -> f64 {
        let fit = &self.basis * (&self.a_tilde * (self.basis.transpose() * &snap.x));
        (&snap.x_next - fit).norm()
    }

    /// Writes `Ã`, `S` and the selected rows as plain text.
    pub fn export<W: Write>(&self, mut w: W, rows: &[usize]) -> Result<()> {
        writeln!(w, "rank {}", self.rank())?;
        writeln!(w, "singular_values")?;
        let s: Vec<String> = self.singular.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{}", s.join(" "))?;
        writeln!(w, "a_tilde")?;
        for i in 0..self.rank() {
            let row: Vec<String> = (0..self.rank()).map(|j| format!("{:.17e}", self.a_tilde[(i, j)])).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        writeln!(w, "selected_rows")?;
        let j: Vec<String> = rows.iter().map(ToString::to_string).collect();
        writeln!(w, "{}", j.join(" "))?;
        Ok(())
    }
}

/// `a` with every eigenvalue of modulus above one moved radially onto the
/// unit circle, eigenvectors kept. Falls back to dividing by the spectral
/// radius when the eigenvector matrix is too ill-conditioned to invert.
pub fn stabilize_operator(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = a.complex_eigenvalues();
    let radius = eig.iter().fold(0.0f64, |m, l| m.max(l.norm()));
    if radius <= 1.0 {
        return a.clone();
    }
    let ac = a.map(|x| Complex::new(x, 0.0));
    let mut vecs = DMatrix::<Complex<f64>>::zeros(n, n);
    for (k, l) in eig.iter().enumerate() {
        let shifted = &ac - DMatrix::<Complex<f64>>::identity(n, n) * *l;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.expect("requested V^H");
        let smallest = (0..n).min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j])).unwrap_or(0);
        vecs.set_column(k, &vt.row(smallest).adjoint());
    }
    let clipped = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        eig.iter().map(|l| if l.norm() > 1.0 { *l / l.norm() } else { *l }),
    ));
    let original = DMatrix::from_diagonal(&DVector::from_iterator(n, eig.iter().copied()));
    if let Some(inv) = vecs.clone().try_inverse() {
        let check = (&vecs * &original * &inv).map(|c| c.re);
        if (check - a).norm() <= 1e-8 * a.norm().max(1.0) {
            return (&vecs * clipped * inv).map(|c| c.re);
        }
    }
    log::warn!("operator not safely diagonalizable; scaling by its spectral radius {radius}");
    a / radius
}
