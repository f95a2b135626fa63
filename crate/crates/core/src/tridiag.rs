//! Factor-once/solve-many tridiagonal systems (Thomas elimination).
//!
//! Every 1D sub-problem of an ADI sweep shares one matrix per (axis, kappa^2,
//! boundary closure), so the factorization is computed once and then applied
//! to thousands of right-hand sides. No pivoting: the sweep matrices are
//! strictly diagonally dominant by construction, and a breakdown guard turns
//! accidental misuse into a typed error instead of NaNs.

use crate::error::{Error, Result};

/// Relative pivot threshold below which elimination reports a breakdown.
const PIVOT_RELATIVE_FLOOR: f64 = 1e-14;

/// Reusable LU factors of a tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct TridiagFactorization {
    inv_pivot: Vec<f64>,
    mult: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagFactorization {
    /// Factor a tridiagonal matrix given its three bands.
    ///
    /// `lower` and `upper` hold `m - 1` entries, `diag` holds `m >= 2`.
    /// O(m); errs when a pivot magnitude falls below
    /// `1e-14 * max|diag|`.
    pub fn factorize(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let m = diag.len();
        if m < 2 || lower.len() != m - 1 || upper.len() != m - 1 {
            return Err(Error::InvalidArgument(format!(
                "band lengths ({}, {}, {}) are not (m-1, m, m-1)",
                lower.len(),
                m,
                upper.len()
            )));
        }
        let scale = diag.iter().fold(0.0f64, |s, d| s.max(d.abs()));
        let floor = PIVOT_RELATIVE_FLOOR * scale;

        let mut inv_pivot = vec![0.0; m];
        let mut mult = vec![0.0; m];
        let mut pivot = diag[0];
        if pivot.abs() < floor || !pivot.is_finite() {
            return Err(Error::TridiagBreakdown {
                row: 0,
                pivot: pivot.abs(),
            });
        }
        inv_pivot[0] = 1.0 / pivot;
        for i in 1..m {
            mult[i] = lower[i - 1] * inv_pivot[i - 1];
            pivot = diag[i] - mult[i] * upper[i - 1];
            if pivot.abs() < floor || !pivot.is_finite() {
                return Err(Error::TridiagBreakdown {
                    row: i,
                    pivot: pivot.abs(),
                });
            }
            inv_pivot[i] = 1.0 / pivot;
        }
        Ok(Self {
            inv_pivot,
            mult,
            upper: upper.to_vec(),
        })
    }

    /// System size `m`.
    #[inline]
    pub fn size(&self) -> usize {
        self.inv_pivot.len()
    }

    /// Solve in place: `rhs` enters as the right-hand side and leaves as the
    /// solution. O(m), allocation-free, reusable across many right-hand sides.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let m = self.size();
        debug_assert_eq!(rhs.len(), m);
        for i in 1..m {
            rhs[i] -= self.mult[i] * rhs[i - 1];
        }
        rhs[m - 1] *= self.inv_pivot[m - 1];
        for i in (0..m - 1).rev() {
            rhs[i] = (rhs[i] - self.upper[i] * rhs[i + 1]) * self.inv_pivot[i];
        }
    }

    /// Solve into a caller-provided buffer, leaving `rhs` untouched.
    pub fn solve_into(&self, rhs: &[f64], x: &mut [f64]) {
        x.copy_from_slice(rhs);
        self.solve_in_place(x);
    }
}

/// Multiply a tridiagonal matrix by a vector; shared by residual checks.
pub fn tridiag_matvec(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64], out: &mut [f64]) {
    let m = diag.len();
    for i in 0..m {
        let mut v = diag[i] * x[i];
        if i > 0 {
            v += lower[i - 1] * x[i - 1];
        }
        if i + 1 < m {
            v += upper[i] * x[i + 1];
        }
        out[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Dense Gaussian elimination with partial pivoting; the independent
    /// oracle the tridiagonal path is checked against.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let m = b.len();
        let mut aug: Vec<Vec<f64>> = a
            .iter()
            .zip(b)
            .map(|(row, &bi)| {
                let mut r = row.clone();
                r.push(bi);
                r
            })
            .collect();
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&p, &q| aug[p][col].abs().total_cmp(&aug[q][col].abs()))
                .unwrap();
            aug.swap(col, piv);
            for row in col + 1..m {
                let f = aug[row][col] / aug[col][col];
                for c in col..=m {
                    aug[row][c] -= f * aug[col][c];
                }
            }
        }
        let mut x = vec![0.0; m];
        for row in (0..m).rev() {
            let mut s = aug[row][m];
            for c in row + 1..m {
                s -= aug[row][c] * x[c];
            }
            x[row] = s / aug[row][row];
        }
        x
    }

    fn bands_to_dense(lower: &[f64], diag: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
        let m = diag.len();
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            a[i][i] = diag[i];
            if i > 0 {
                a[i][i - 1] = lower[i - 1];
            }
            if i + 1 < m {
                a[i][i + 1] = upper[i];
            }
        }
        a
    }

    #[test]
    fn solves_a_hand_checked_3x3() {
        // [2 1 0; 1 3 1; 0 1 2] x = [3, 10, 9]  =>  x = [0.5, 2, 3.5]
        let f = TridiagFactorization::factorize(&[1.0, 1.0], &[2.0, 3.0, 2.0], &[1.0, 1.0])
            .unwrap();
        let mut x = [3.0, 10.0, 9.0];
        f.solve_in_place(&mut x);
        for (got, want) in x.iter().zip([0.5, 2.0, 3.5]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn matches_dense_oracle_on_sweep_matrices() {
        // The exact matrix shape the sweeps build: diag 1 + lambda,
        // off-diagonals -lambda/2, here with lambda spanning regimes.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for &lambda in &[1e-3, 0.5, 4.0, 1e4] {
            let m = 17;
            let lower = vec![-lambda / 2.0; m - 1];
            let diag = vec![1.0 + lambda; m];
            let upper = vec![-lambda / 2.0; m - 1];
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = TridiagFactorization::factorize(&lower, &diag, &upper).unwrap();
            let mut x = b.clone();
            f.solve_in_place(&mut x);
            let oracle = dense_solve(&bands_to_dense(&lower, &diag, &upper), &b);
            for (got, want) in x.iter().zip(&oracle) {
                assert!((got - want).abs() < 1e-11 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn residual_stays_tiny_up_to_1025() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &m in &[5usize, 64, 257, 1025] {
            let lambda = 37.5;
            let lower = vec![-lambda / 2.0; m - 1];
            let diag = vec![1.0 + lambda; m];
            let upper = vec![-lambda / 2.0; m - 1];
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = TridiagFactorization::factorize(&lower, &diag, &upper).unwrap();
            let mut x = b.clone();
            f.solve_in_place(&mut x);
            let mut ax = vec![0.0; m];
            tridiag_matvec(&lower, &diag, &upper, &x, &mut ax);
            let bmax = b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            let rmax = ax
                .iter()
                .zip(&b)
                .fold(0.0f64, |s, (a, b)| s.max((a - b).abs()));
            assert!(rmax <= 1e-12 * bmax, "m = {m}: residual {rmax:e}");
        }
    }

    #[test]
    fn factor_once_solve_many_is_deterministic() {
        let f =
            TridiagFactorization::factorize(&[-0.5; 9], &[2.5; 10], &[-0.5; 9]).unwrap();
        let b: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let mut x1 = vec![0.0; 10];
        let mut x2 = vec![0.0; 10];
        f.solve_into(&b, &mut x1);
        f.solve_into(&b, &mut x2);
        assert_eq!(x1, x2, "same factorization, same rhs, same bits");
    }

    #[test]
    fn reports_breakdown_row_for_singular_matrix() {
        // Second pivot cancels exactly: diag[1] - (1/1)*1 = 0.
        let err = TridiagFactorization::factorize(&[1.0, 1.0], &[1.0, 1.0, 1.0], &[1.0, 1.0])
            .unwrap_err();
        match err {
            Error::TridiagBreakdown { row, .. } => assert_eq!(row, 1),
            other => panic!("expected breakdown, got {other}"),
        }
    }

    proptest! {
        /// Solving then multiplying reproduces any rhs on diagonally
        /// dominant systems of the sweep shape.
        #[test]
        fn prop_solve_then_matvec_roundtrips(
            m in 2usize..80,
            lambda in 1e-6f64..1e6,
            seed in 0u64..u64::MAX,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let lower = vec![-lambda / 2.0; m - 1];
            let diag = vec![1.0 + lambda; m];
            let upper = vec![-lambda / 2.0; m - 1];
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = TridiagFactorization::factorize(&lower, &diag, &upper).unwrap();
            let mut x = b.clone();
            f.solve_in_place(&mut x);
            let mut ax = vec![0.0; m];
            tridiag_matvec(&lower, &diag, &upper, &x, &mut ax);
            let bmax = b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            for (a, b) in ax.iter().zip(&b) {
                prop_assert!((a - b).abs() <= 1e-12 * bmax.max(1e-300));
            }
        }
    }
}
