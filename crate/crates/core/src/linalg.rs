//! Dense least-squares helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal entries of R below `RANK_TOLERANCE · |R₀₀|` count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: DVector<f64>,
    pub rank: usize,
    /// |R_jj| in pivot order.
    pub r_diag: Vec<f64>,
}

/// Householder QR with column pivoting on the largest remaining column norm,
/// returning the minimizer of `‖A·x − b‖²`. Fails with [`Error::RankDeficient`]
/// when the numerical rank is below the column count.
pub fn lstsq_col_piv_qr(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LeastSquares> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::LengthMismatch { what: "rows of A and b", left: m, right: b.len() });
    }
    if m < n {
        return Err(Error::RankDeficient { rank: m, unknowns: n });
    }
    let mut r = a.clone();
    let mut qtb = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut r_diag = Vec::with_capacity(n);

    for j in 0..n {
        let (p, _) = (j..n)
            .map(|c| (c, r.view_range(j.., c).norm_squared()))
            .fold((j, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if p != j {
            r.swap_columns(j, p);
            perm.swap(j, p);
        }

        let norm = r.view_range(j.., j).norm();
        if norm == 0.0 {
            r_diag.extend(std::iter::repeat_n(0.0, n - j));
            break;
        }
        let alpha = if r[(j, j)] > 0.0 { -norm } else { norm };
        let mut v = r.view_range(j.., j).into_owned();
        v[0] -= alpha;
        let vtv = v.norm_squared();
        if vtv > 0.0 {
            for c in j..n {
                let proj = 2.0 * v.dot(&r.view_range(j.., c)) / vtv;
                let mut col = r.view_range_mut(j.., c);
                col.axpy(-proj, &v, 1.0);
            }
            let proj = 2.0 * v.dot(&qtb.rows_range(j..)) / vtv;
            qtb.rows_range_mut(j..).axpy(-proj, &v, 1.0);
        }
        r[(j, j)] = alpha;
        r.view_range_mut(j + 1.., j).fill(0.0);
        r_diag.push(alpha.abs());
    }

    let lead = r_diag.first().copied().unwrap_or(0.0);
    let rank = r_diag.iter().filter(|d| **d > RANK_TOLERANCE * lead && lead > 0.0).count();
    if rank < n {
        return Err(Error::RankDeficient { rank, unknowns: n });
    }

    let mut y = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut acc = qtb[i];
        for k in i + 1..n {
            acc -= r[(i, k)] * y[k];
        }
        y[i] = acc / r[(i, i)];
    }
    let mut x = DVector::zeros(n);
    for (i, &col) in perm.iter().enumerate() {
        x[col] = y[i];
    }
    Ok(LeastSquares { x, rank, r_diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 30, 12);
            let b = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
            let x = lstsq_col_piv_qr(&a, &b).unwrap().x;
            let pinv = a.clone().pseudo_inverse(1e-14).unwrap();
            let oracle = pinv * &b;
            assert!((x - &oracle).norm() <= 1e-10 * oracle.norm());
        }
    }

    #[test]
    fn exact_square_system() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 3.0, 0.0, 1.0, 0.0, 4.0]);
        let x_true = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = lstsq_col_piv_qr(&a, &(&a * &x_true)).unwrap().x;
        assert!((x - x_true).norm() < 1e-14);
    }

    #[test]
    fn detects_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = random_matrix(&mut rng, 10, 4);
        let dup = a.column(1) * 2.0 - a.column(0);
        a.set_column(3, &dup);
        let b = DVector::from_element(10, 1.0);
        assert!(matches!(
            lstsq_col_piv_qr(&a, &b),
            Err(Error::RankDeficient { rank: 3, unknowns: 4 })
        ));
        let z = DMatrix::zeros(5, 2);
        assert!(matches!(lstsq_col_piv_qr(&z, &DVector::zeros(5)), Err(Error::RankDeficient { rank: 0, .. })));
    }

    #[test]
    fn handles_badly_scaled_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = random_matrix(&mut rng, 20, 5);
        a.column_mut(2).scale_mut(1e-4);
        a.column_mut(4).scale_mut(1e3);
        let x_true = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let x = lstsq_col_piv_qr(&a, &(&a * &x_true)).unwrap().x;
        assert!((x - x_true).norm() < 1e-7);
    }
}
