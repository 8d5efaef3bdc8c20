//! Reduced-order modeling: DMD, sensing-location selection and a Kalman
//! filter over modal amplitudes.

pub mod dmd;
pub mod id;
pub mod kalman;

pub use dmd::{fit_dmd, stabilize_operator, DmdModel, SnapshotMatrix};
pub use id::{id_residual, interpolative_decomposition, pdmd_weighting, qr_pivot_selection, scale_modes, IdSelection, RRQR_F};
pub use kalman::{default_process_noise, kalman_step, measurement_map, KalmanState};
