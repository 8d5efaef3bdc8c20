//! Sensing-location selection from modal bases: singular-value scaling,
//! strong rank-revealing QR interpolative decomposition, plain pivoted QR,
//! and the oil-proximity weighting of selected locations.

use nalgebra::{DMatrix, DVector};

use crate::domain::{GridSpec, ScalarField};
use crate::error::{Error, Result};

/// Quality parameter of the strong RRQR swap test.
pub const RRQR_F: f64 = 2.0;

/// `U diag((S/‖S‖₂)^k)`.
pub fn scale_modes(basis: &DMatrix<f64>, singular: &DVector<f64>, k_id: f64) -> DMatrix<f64> {
    if k_id == 0.0 {
        return basis.clone();
    }
    let norm = singular.norm();
    let mut out = basis.clone();
    for (j, s) in singular.iter().enumerate() {
        out.column_mut(j).scale_mut((s / norm).powf(k_id));
    }
    out
}

#[derive(Debug, Clone)]
pub struct IdSelection {
    /// Selected state rows.
    pub rows: Vec<usize>,
    /// Interpolation matrix with `U_S ≈ K U_S(J,:)`.
    pub k: DMatrix<f64>,
    pub k_id: f64,
}

impl IdSelection {
    /// Grid cell of each selected row for a state of stacked fields.
    pub fn cells(&self, cell_count: usize) -> Vec<usize> {
        self.rows.iter().map(|r| r % cell_count).collect()
    }
}

/// Column order of a Householder QR with largest-remaining-norm pivoting.
pub fn pivoted_qr_order(a: &DMatrix<f64>) -> Vec<usize> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..m.min(n) {
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..n {
            let nrm = w.view((k, j), (m - k, 1)).norm_squared();
            if nrm > best_norm {
                best_norm = nrm;
                best = j;
            }
        }
        w.swap_columns(k, best);
        perm.swap(k, best);
        let mut v: DVector<f64> = w.view((k, k), (m - k, 1)).column(0).into_owned();
        let alpha = v.norm();
        if alpha == 0.0 {
            continue;
        }
        v[0] += alpha.copysign(v[0]);
        let vn = v.norm_squared();
        for j in k..n {
            let mut col = w.view_mut((k, j), (m - k, 1));
            let d = v.dot(&col.column(0));
            col.column_mut(0).axpy(-2.0 * d / vn, &v, 1.0);
        }
    }
    perm
}

/// Rows selected by column-pivoted QR of `Uᵀ`. Only defined when the sensor
/// count equals the number of modes.
pub fn qr_pivot_selection(basis: &DMatrix<f64>, count: usize) -> Result<Vec<usize>> {
    if count != basis.ncols() {
        return Err(Error::Domain(format!(
            "pivoted QR selection needs as many sensors as modes ({count} != {})",
            basis.ncols()
        )));
    }
    Ok(pivoted_qr_order(&basis.transpose()).into_iter().take(count).collect())
}

/// Strong RRQR (Gu and Eisenstat) column selection of `a` with `k` columns.
fn strong_rrqr(a: &DMatrix<f64>, k: usize, f: f64) -> Vec<usize> {
    let (m, n) = a.shape();
    let mut perm = pivoted_qr_order(a);
    if k >= n || k > m {
        return perm;
    }
    let max_swaps = 10 * n + 100;
    for _ in 0..max_swaps {
        let permuted = DMatrix::from_fn(m, n, |i, j| a[(i, perm[j])]);
        let r = permuted.qr().r();
        let r11 = r.view((0, 0), (k, k)).into_owned();
        let scale = r11.diagonal().amax();
        if scale == 0.0 || r11.diagonal().iter().any(|d| d.abs() <= 1e-14 * scale) {
            break;
        }
        let Some(inv) = r11.clone().try_inverse() else { break };
        let w = &inv * r.view((0, k), (k, n - k));
        let inv_row_norms: Vec<f64> = (0..k).map(|i| inv.row(i).norm()).collect();
        let gammas: Vec<f64> = (0..n - k)
            .map(|j| if k < m { r.view((k, k + j), (m - k, 1)).norm() } else { 0.0 })
            .collect();
        let mut worst = (f * f, None);
        for i in 0..k {
            for j in 0..n - k {
                let g = gammas[j] * inv_row_norms[i];
                let v = w[(i, j)] * w[(i, j)] + g * g;
                if v > worst.0 {
                    worst = (v, Some((i, j)));
                }
            }
        }
        match worst.1 {
            Some((i, j)) => perm.swap(i, k + j),
            None => break,
        }
    }
    perm
}

/// Interpolative decomposition of the rows of `scaled`:
/// `J` from strong RRQR of `scaledᵀ`, `K = U_S pinv(U_S(J,:))`.
pub fn interpolative_decomposition(scaled: &DMatrix<f64>, count: usize, k_id: f64) -> Result<IdSelection> {
    let (n, modes) = scaled.shape();
    if count == 0 || count > n {
        return Err(Error::Domain(format!("cannot select {count} rows out of {n}")));
    }
    let at = scaled.transpose();
    let lead = count.min(modes);
    let mut rows: Vec<usize> = strong_rrqr(&at, lead, RRQR_F).into_iter().take(lead).collect();
    if count > lead {
        // more sensors than modes: fill with the largest remaining rows
        let mut rest: Vec<usize> = (0..n).filter(|r| !rows.contains(r)).collect();
        rest.sort_by(|&a, &b| scaled.row(b).norm_squared().total_cmp(&scaled.row(a).norm_squared()).then(a.cmp(&b)));
        rows.extend(rest.into_iter().take(count - lead));
    }
    let sub = scaled.select_rows(rows.iter());
    let pinv = sub
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
    Ok(IdSelection {
        k: scaled * pinv,
        rows,
        k_id,
    })
}

/// Residual `‖U_S - K U_S(J,:)‖₂` of a selection.
pub fn id_residual(scaled: &DMatrix<f64>, sel: &IdSelection) -> f64 {
    let approx = &sel.k * scaled.select_rows(sel.rows.iter());
    (scaled - approx).singular_values().amax()
}

/// Inverse distance from each selected cell to the nearest oil, normalized
/// so the closest location has weight 1. Distances are floored at one cell
/// width.
pub fn pdmd_weighting(cells: &[usize], presence: &ScalarField, grid: &GridSpec) -> Result<ScalarField> {
    presence.check_grid(grid)?;
    if cells.is_empty() {
        return Err(Error::Domain("no selected locations".into()));
    }
    let oil: Vec<usize> = (0..grid.cell_count()).filter(|&c| presence.values()[c] != 0.0).collect();
    if oil.is_empty() {
        return Err(Error::EmptySpill);
    }
    let floor = grid.min_spacing();
    let dist: Vec<f64> = cells
        .iter()
        .map(|&c| {
            let p = grid.center_of(c);
            oil.iter()
                .map(|&o| grid.center_of(o).dist(p))
                .fold(f64::INFINITY, f64::min)
                .max(floor)
        })
        .collect();
    let nearest = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w = ScalarField::zeros(grid);
    for (&c, d) in cells.iter().zip(&dist) {
        let v = if *d == nearest { 1.0 } else { nearest / d };
        let slot = &mut w.values_mut()[c];
        *slot = slot.max(v);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn scaling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random(&mut rng, 6, 2);
        let s = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(scale_modes(&u, &s, 0.0), u);
        let one = scale_modes(&u, &s, 1.0);
        assert!((one.column(0) - u.column(0) * 0.6).amax() < 1e-15);
        assert!((one.column(1) - u.column(1) * 0.8).amax() < 1e-15);
        let half = scale_modes(&u, &s, 0.5);
        assert!((half.column(0) - u.column(0) * 0.6f64.sqrt()).amax() < 1e-15);
    }

    #[test]
    fn full_rank_selection_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random(&mut rng, 50, 4).qr().q();
        let sel = interpolative_decomposition(&u, 4, 0.0).unwrap();
        assert_eq!(sel.rows.len(), 4);
        assert!(id_residual(&u, &sel) < 1e-10);
        let mut sorted = sel.rows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn rank_one_single_row_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 30, 1);
        let b = random(&mut rng, 1, 3);
        let m = &a * &b;
        let sel = interpolative_decomposition(&m, 1, 0.0).unwrap();
        assert!(id_residual(&m, &sel) < 1e-10);
    }

    #[test]
    fn residual_respects_strong_rrqr_bound() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let m = random(&mut rng, 200, 5);
            let np = 3;
            let sel = interpolative_decomposition(&m, np, 0.0).unwrap();
            let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            let bound = sv[np] * (1.0 + RRQR_F * RRQR_F * (np * (200 - np)) as f64).sqrt();
            assert!(id_residual(&m, &sel) <= bound, "seed {seed}");
        }
        assert!(interpolative_decomposition(&DMatrix::zeros(3, 2), 4, 0.0).is_err());
    }

    #[test]
    fn swap_test_holds_after_selection() {
        // the strong RRQR condition must hold for the returned permutation
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(&mut rng, 5, 40);
        let k = 3;
        let perm = strong_rrqr(&a, k, RRQR_F);
        let permuted = DMatrix::from_fn(5, 40, |i, j| a[(i, perm[j])]);
        let r = permuted.qr().r();
        let inv = r.view((0, 0), (k, k)).into_owned().try_inverse().unwrap();
        let w = &inv * r.view((0, k), (k, 40 - k));
        for i in 0..k {
            for j in 0..40 - k {
                let g = r.view((k, k + j), (2, 1)).norm() * inv.row(i).norm();
                assert!(w[(i, j)].powi(2) + g * g <= RRQR_F * RRQR_F + 1e-9);
            }
        }
    }

    #[test]
    fn pivoted_qr_examples() {
        let mut u = DMatrix::zeros(6, 3);
        u[(0, 0)] = 1.0;
        u[(1, 1)] = 1.0;
        u[(2, 2)] = 1.0;
        assert_eq!(qr_pivot_selection(&u, 3).unwrap(), vec![0, 1, 2]);
        assert!(qr_pivot_selection(&u, 2).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random(&mut rng, 3, 3).qr().q();
        let mut p = DMatrix::zeros(7, 3);
        for (r, src) in [(5, 0), (1, 1), (3, 2)] {
            p.row_mut(r).copy_from(&q.row(src));
        }
        let mut sel = qr_pivot_selection(&p, 3).unwrap();
        sel.sort_unstable();
        assert_eq!(sel, vec![1, 3, 5]);
    }

    #[test]
    fn pivoted_qr_diagonal_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&mut rng, 4, 30);
        let perm = pivoted_qr_order(&a);
        let permuted = DMatrix::from_fn(4, 30, |i, j| a[(i, perm[j])]);
        let r = permuted.qr().r();
        let d: Vec<f64> = (0..4).map(|i| r[(i, i)].abs()).collect();
        assert!(d.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn id_and_pivoted_qr_agree_on_well_conditioned_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = random(&mut rng, 100, 4).qr().q();
        let id = interpolative_decomposition(&u, 4, 0.0).unwrap();
        let qr = qr_pivot_selection(&u, 4).unwrap();
        // principal angle between the spans of the selected row sets
        let span = |rows: &[usize]| u.select_rows(rows.iter()).transpose().qr().q();
        let (a, b) = (span(&id.rows), span(&qr));
        let cosines = (a.transpose() * b).singular_values();
        let min_cos = cosines.iter().copied().fold(1.0f64, f64::min);
        assert!(min_cos.acos().to_degrees() < 30.0);
    }

    #[test]
    fn pdmd_weight_examples() {
        let g = GridSpec::new(20, 5, 100.0, 100.0, Point::new(50.0, 50.0)).unwrap();
        let mut p = ScalarField::zeros(&g);
        p.set(2, 2, 0.7);
        let w = pdmd_weighting(&[g.index(2, 2)], &p, &g).unwrap();
        assert_eq!(w.get(2, 2), 1.0);
        assert_eq!(w.sum(), 1.0);
        let w = pdmd_weighting(&[g.index(5, 2), g.index(8, 2)], &p, &g).unwrap();
        assert_eq!(w.get(5, 2), 1.0);
        assert!((w.get(8, 2) - 0.5).abs() < 1e-15);
        assert_eq!(w.values().iter().filter(|&&v| v != 0.0).count(), 2);
        assert!(matches!(pdmd_weighting(&[0], &ScalarField::zeros(&g), &g), Err(Error::EmptySpill)));
    }
}
