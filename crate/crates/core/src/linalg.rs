//! Dense complex matrices: assembly, matvec and LU solves with a condition estimate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par;

pub type CMatrix = DMatrix<Complex64>;

/// Assemble the `n x n` matrix with entries `f(k, l)`. Columns are filled in parallel.
pub fn assemble<F>(n: usize, f: F) -> CMatrix
where
    F: Fn(usize, usize) -> Complex64 + Sync + Send,
{
    let mut data = vec![Complex64::new(0.0, 0.0); n * n];
    if n > 0 {
        par::fill_chunks(&mut data, n, |l, col| {
            for (k, v) in col.iter_mut().enumerate() {
                *v = f(k, l);
            }
        });
    }
    CMatrix::from_vec(n, n, data)
}

/// `y = A x`, rows computed in parallel.
pub fn matvec(a: &CMatrix, x: &[Complex64]) -> Vec<Complex64> {
    let n = a.ncols();
    debug_assert_eq!(n, x.len());
    par::map_range(a.nrows(), |k| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (l, xl) in x.iter().enumerate() {
            acc += a[(k, l)] * xl;
        }
        acc
    })
}

/// Sup norm of `a - b`.
pub fn sup_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn one_norm(a: &CMatrix) -> f64 {
    (0..a.ncols())
        .map(|l| a.column(l).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization of a square system with partial pivoting.
#[derive(Debug, Clone)]
pub struct Factored {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    norm1: f64,
}

impl Factored {
    pub fn new(a: CMatrix) -> Result<Self> {
        let norm1 = one_norm(&a);
        let lu = a.lu();
        let u = lu.u();
        let pivot_floor = norm1 * f64::EPSILON * 1e-3;
        if !norm1.is_finite() || u.diagonal().iter().any(|p| p.norm() <= pivot_floor) {
            return Err(Error::SingularMatrix);
        }
        Ok(Self { lu, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.lu.l().nrows()
    }

    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let rhs = DVector::from_column_slice(b);
        let x = self.lu.solve(&rhs).ok_or(Error::SingularMatrix)?;
        Ok(x.as_slice().to_vec())
    }

    /// Solve `A^H x = b`.
    pub fn solve_adjoint(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        // P A = L U, so A^H = U^H L^H P and A^H x = b reads P x = L^-H U^-H b.
        let mut y = DVector::from_column_slice(b);
        let u = self.lu.u();
        let l = self.lu.l();
        if !u.ad_solve_upper_triangular_mut(&mut y) || !l.ad_solve_lower_triangular_mut(&mut y) {
            return Err(Error::SingularMatrix);
        }
        self.lu.p().inv_permute_rows(&mut y);
        Ok(y.as_slice().to_vec())
    }

    /// Hager-Higham estimate of the 1-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let mut x = vec![Complex64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        for _ in 0..5 {
            let Ok(y) = self.solve(&x) else {
                return f64::INFINITY;
            };
            let new_est: f64 = y.iter().map(|v| v.norm()).sum();
            let sign: Vec<Complex64> = y
                .iter()
                .map(|v| if v.norm() > 0.0 { v / v.norm() } else { Complex64::new(1.0, 0.0) })
                .collect();
            let Ok(z) = self.solve_adjoint(&sign) else {
                return f64::INFINITY;
            };
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.norm()))
                .fold((0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
            let zx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if new_est <= est || zmax <= zx {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            x = vec![Complex64::new(0.0, 0.0); n];
            x[j] = Complex64::new(1.0, 0.0);
        }
        est * self.norm1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sample(n: usize) -> CMatrix {
        assemble(n, |k, l| {
            let base = if k == l { c(4.0, 1.0) } else { c(0.0, 0.0) };
            base + c(((k * 7 + l * 3) % 5) as f64 * 0.1, ((k + 2 * l) % 3) as f64 * 0.2)
        })
    }

    #[test]
    fn solve_and_adjoint_solve() {
        let a = sample(9);
        let b: Vec<Complex64> = (0..9).map(|k| c(k as f64, 1.0 - k as f64)).collect();
        let f = Factored::new(a.clone()).unwrap();
        let x = f.solve(&b).unwrap();
        assert!(sup_diff(&matvec(&a, &x), &b) < 1e-13);
        let y = f.solve_adjoint(&b).unwrap();
        assert!(sup_diff(&matvec(&a.adjoint(), &y), &b) < 1e-13);
    }

    #[test]
    fn condition_estimate_is_close_to_exact() {
        let a = sample(7);
        let f = Factored::new(a.clone()).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        let exact = one_norm(&a) * one_norm(&inv);
        let est = f.condition_estimate();
        assert!(est <= exact * (1.0 + 1e-12) && est >= exact / 10.0, "{est} vs {exact}");
        let id = assemble(5, |k, l| if k == l { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert!((Factored::new(id).unwrap().condition_estimate() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = assemble(3, |k, _| c(k as f64, 0.0));
        assert!(matches!(Factored::new(a), Err(Error::SingularMatrix)));
    }
}
