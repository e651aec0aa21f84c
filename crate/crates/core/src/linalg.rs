//! Dense complex linear algebra used by the network matrices.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

/// Pivots smaller than this fraction of the largest entry are treated as zero.
const PIVOT_EPS: f64 = 1e-13;

/// Row-pivoted LU factorization `P·A = L·U` of a square complex matrix.
///
/// `L` (unit lower) and `U` share the `lu` storage; `perm[i]` is the original
/// row that ended up in position `i`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Array2<Complex64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factorizes `a`. On a (numerically) zero pivot returns the column index
    /// where elimination broke down.
    pub fn factor(a: &Array2<Complex64>) -> Result<Self, usize> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let scale = a.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
        let tiny = if scale > 0.0 { scale * PIVOT_EPS } else { f64::MIN_POSITIVE };

        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, best) = (k..n)
                .map(|i| (i, lu[[i, k]].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= tiny {
                return Err(k);
            }
            if p != k {
                for j in 0..n {
                    lu.swap([k, j], [p, j]);
                }
                perm.swap(k, p);
            }
            let pivot = lu[[k, k]];
            for i in (k + 1)..n {
                let factor = lu[[i, k]] / pivot;
                lu[[i, k]] = factor;
                if factor == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in (k + 1)..n {
                    let ukj = lu[[k, j]];
                    lu[[i, j]] -= factor * ukj;
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: ArrayView1<Complex64>) -> Array1<Complex64> {
        let n = self.dim();
        let mut x: Array1<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[[i, j]] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[[i, j]] * x[j];
            }
            x[i] = acc / self.lu[[i, i]];
        }
        x
    }

    /// Full inverse, one column at a time.
    pub fn inverse(&self) -> Array2<Complex64> {
        let n = self.dim();
        let mut inv = Array2::zeros((n, n));
        let mut e = Array1::zeros(n);
        for j in 0..n {
            e.fill(Complex64::new(0.0, 0.0));
            e[j] = Complex64::new(1.0, 0.0);
            let col = self.solve(e.view());
            inv.column_mut(j).assign(&col);
        }
        inv
    }
}

/// Inverse of a square complex matrix via [`Lu`].
pub fn invert(a: &Array2<Complex64>) -> Result<Array2<Complex64>, usize> {
    Lu::factor(a).map(|lu| lu.inverse())
}

/// Complex matrix-vector product.
pub fn matvec(a: &Array2<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(a.ncols(), x.len());
    a.rows()
        .into_iter()
        .map(|row| row.iter().zip(x).map(|(&aij, &xj)| aij * xj).sum())
        .collect()
}

/// `max |A·B − I|` over all entries.
pub fn identity_residual(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..b.ncols() {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..a.ncols() {
                acc += a[[i, k]] * b[[k, j]];
            }
            if i == j {
                acc -= Complex64::new(1.0, 0.0);
            }
            worst = worst.max(acc.norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn inverse_of_small_matrix() {
        let a = array![[c(2.0, 1.0), c(0.5, -0.3), c(0.0, 0.0)],
                       [c(0.5, -0.3), c(3.0, 0.0), c(1.0, 1.0)],
                       [c(0.0, 0.0), c(1.0, 1.0), c(0.0, 0.0)]];
        let inv = invert(&a).unwrap();
        assert!(identity_residual(&a, &inv) < 1e-14);
        assert!(identity_residual(&inv, &a) < 1e-14);
    }

    #[test]
    fn zero_row_is_singular() {
        let a = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        assert_eq!(invert(&a).unwrap_err(), 1);
    }

    #[test]
    fn solve_matches_inverse() {
        let a = array![[c(4.0, -1.0), c(1.0, 0.2)], [c(0.3, 0.0), c(2.0, 2.0)]];
        let b = array![c(1.0, 1.0), c(-2.0, 0.5)];
        let lu = Lu::factor(&a).unwrap();
        let x = lu.solve(b.view());
        let back = matvec(&a, x.as_slice().unwrap());
        for (u, v) in back.iter().zip(b.iter()) {
            assert!((u - v).norm() < 1e-14);
        }
    }
}
