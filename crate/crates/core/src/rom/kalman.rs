//! Time-varying Kalman filter over modal amplitudes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub z: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Process noise.
    pub q: DMatrix<f64>,
    /// Measurement noise variance per reading.
    pub r_meas: f64,
}

/// Default process noise scale `1e-4 (Σ S)² / n_z`.
pub fn default_process_noise(singular: &DVector<f64>) -> f64 {
    1e-4 * singular.sum().powi(2) / singular.len() as f64
}

impl KalmanState {
    pub fn new(z: DVector<f64>, cov: DMatrix<f64>, q_proc: f64, r_meas: f64) -> Result<Self> {
        let n = z.len();
        if cov.shape() != (n, n) {
            return Err(Error::Domain("covariance does not match the estimate".into()));
        }
        if q_proc < 0.0 || r_meas < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(Self {
            z,
            cov,
            q: DMatrix::identity(n, n) * q_proc,
            r_meas,
        })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Moves the estimate to a new modal basis: `T = U_newᵀ U_old`.
    pub fn reproject(&self, old_basis: &DMatrix<f64>, new_basis: &DMatrix<f64>, q_proc: f64) -> Self {
        let t = new_basis.transpose() * old_basis;
        let n = t.nrows();
        let mut cov = &t * &self.cov * t.transpose();
        symmetrize(&mut cov);
        Self {
            z: &t * &self.z,
            cov,
            q: DMatrix::identity(n, n) * q_proc,
            r_meas: self.r_meas,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cov.symmetric_eigenvalues().min()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Measurement map: the rows of the basis at the measured state entries.
pub fn measurement_map(basis: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    basis.select_rows(rows.iter())
}

/// Predict with `Ã` and update with readings `y = H z + noise`. An empty
/// `H` gives a pure prediction step.
pub fn kalman_step(state: &KalmanState, a_tilde: &DMatrix<f64>, h: &DMatrix<f64>, y: &DVector<f64>) -> Result<KalmanState> {
    let n = state.dim();
    if a_tilde.shape() != (n, n) {
        return Err(Error::Domain("operator does not match the modal state".into()));
    }
    if h.nrows() != y.len() || (h.nrows() > 0 && h.ncols() != n) {
        return Err(Error::Domain("measurement map does not match the readings".into()));
    }
    let z_pred = a_tilde * &state.z;
    let mut p_pred = a_tilde * &state.cov * a_tilde.transpose() + &state.q;
    symmetrize(&mut p_pred);
    if h.nrows() == 0 {
        return Ok(KalmanState {
            z: z_pred,
            cov: p_pred,
            ..state.clone()
        });
    }
    let m = h.nrows();
    let r = DMatrix::identity(m, m) * state.r_meas;
    let mut s = h * &p_pred * h.transpose() + &r;
    symmetrize(&mut s);
    let pht = &p_pred * h.transpose();
    // K = P Hᵀ S⁻¹ via Cholesky, falling back to a pseudo-inverse
    let gain = match s.clone().cholesky() {
        Some(ch) => ch.solve(&pht.transpose()).transpose(),
        None => {
            log::warn!("singular innovation covariance, using a regularized inverse");
            let scale = s.diagonal().amax().max(f64::MIN_POSITIVE);
            let pinv = s
                .pseudo_inverse(1e-12 * scale)
                .map_err(|e| Error::Numerical(format!("innovation inverse failed: {e}")))?;
            pht * pinv
        }
    };
    let innovation = y - h * &z_pred;
    let z = z_pred + &gain * innovation;
    // Joseph form keeps the covariance symmetric positive semidefinite
    let i_kh = DMatrix::identity(n, n) - &gain * h;
    let mut cov = &i_kh * &p_pred * i_kh.transpose() + &gain * r * gain.transpose();
    symmetrize(&mut cov);
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Kalman covariance".into()));
    }
    Ok(KalmanState {
        z,
        cov,
        q: state.q.clone(),
        r_meas: state.r_meas,
    })
}
