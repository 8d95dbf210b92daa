//! Dense direct solvers: Cholesky (ridge systems), LU with partial pivoting,
//! and a cyclic Jacobi eigensolver used for condition-number estimates.

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::scalar::{real, Real};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

pub fn cholesky<T: Real>(a: &Matrix<T>) -> Result<Cholesky<T>> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "cholesky expects a square matrix");
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc = acc - l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if acc <= T::zero() || !acc.is_finite() {
                    return Err(CoreError::NotPositiveDefinite {
                        pivot: acc.as_f64(),
                        index: i,
                    });
                }
                l[(i, j)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Ok(Cholesky { l })
}

impl<T: Real> Cholesky<T> {
    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        assert_eq!(b.len(), n, "cholesky solve rhs length mismatch");
        let mut y = b.to_vec();
        // forward substitution L y = b
        for i in 0..n {
            let mut acc = y[i];
            for k in 0..i {
                acc = acc - self.l[(i, k)] * y[k];
            }
            y[i] = acc / self.l[(i, i)];
        }
        // back substitution L^T x = y
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..n {
                acc = acc - self.l[(k, i)] * y[k];
            }
            y[i] = acc / self.l[(i, i)];
        }
        y
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: &Matrix<T>) -> Matrix<T> {
        let n = self.l.rows();
        assert_eq!(b.rows(), n, "cholesky solve rhs row mismatch");
        let mut out = Matrix::zeros(n, b.cols());
        let mut col = vec![T::zero(); n];
        for j in 0..b.cols() {
            for i in 0..n {
                col[i] = b[(i, j)];
            }
            let x = self.solve_vec(&col);
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        out
    }
}

/// Solves `(A + lambda I) x = b` for symmetric PSD `A` via Cholesky.
///
/// `A` must be symmetric to within `1e-8` and `A + lambda I` positive
/// definite; the residual satisfies `|(A+lambda I)x - b| <= 1e-8 (|b|+1)`
/// for reasonably conditioned systems.
pub fn ridge_solve<T: Real>(a: &Matrix<T>, b: &[T], lambda: T) -> Result<Vec<T>> {
    let sys = ridge_system(a, lambda)?;
    let chol = cholesky(&sys)?;
    Ok(chol.solve_vec(b))
}

/// Matrix-rhs variant of [`ridge_solve`].
pub fn ridge_solve_mat<T: Real>(a: &Matrix<T>, b: &Matrix<T>, lambda: T) -> Result<Matrix<T>> {
    let sys = ridge_system(a, lambda)?;
    let chol = cholesky(&sys)?;
    Ok(chol.solve_mat(b))
}

fn ridge_system<T: Real>(a: &Matrix<T>, lambda: T) -> Result<Matrix<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(CoreError::Dimension {
            context: "ridge_solve",
            expected: "square matrix".into(),
            got: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    if lambda < T::zero() {
        return Err(CoreError::Argument("ridge lambda must be >= 0".into()));
    }
    let sym_tol = real::<T>(1e-8) * (T::one() + a.max_abs());
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > sym_tol {
                return Err(CoreError::Argument(format!(
                    "ridge_solve requires a symmetric matrix; |A[{i},{j}] - A[{j},{i}]| = {}",
                    (a[(i, j)] - a[(j, i)]).abs()
                )));
            }
        }
    }
    let mut sys = a.clone();
    for i in 0..n {
        sys[(i, i)] += lambda;
    }
    Ok(sys)
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    sign: T,
}

pub fn lu_factor<T: Real>(a: &Matrix<T>) -> Result<Lu<T>> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "lu_factor expects a square matrix");
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = T::one();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = lu[(col, col)].abs();
        for r in col + 1..n {
            let v = lu[(r, col)].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val == T::zero() || !pivot_val.is_finite() {
            return Err(CoreError::Singular { column: col });
        }
        if pivot_row != col {
            perm.swap(pivot_row, col);
            sign = -sign;
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = tmp;
            }
        }
        let inv_p = T::one() / lu[(col, col)];
        for r in col + 1..n {
            let factor = lu[(r, col)] * inv_p;
            lu[(r, col)] = factor;
            for j in col + 1..n {
                let sub = factor * lu[(col, j)];
                lu[(r, j)] -= sub;
            }
        }
    }
    Ok(Lu { lu, perm, sign })
}

impl<T: Real> Lu<T> {
    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for k in 0..i {
                acc = acc - self.lu[(i, k)] * x[k];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..n {
                acc = acc - self.lu[(i, k)] * x[k];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    pub fn det(&self) -> T {
        let mut d = self.sign;
        for i in 0..self.lu.rows() {
            d = d * self.lu[(i, i)];
        }
        d
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lu.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.solve_vec(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
            e[j] = T::zero();
        }
        inv
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues<T: Real>(a: &Matrix<T>) -> Vec<T> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "sym_eigenvalues expects a square matrix");
    let mut m = a.clone();
    let tol = real::<T>(1e-14) * (T::one() + m.max_abs());
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(m[(i, j)].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (real::<T>(2.0) * apq);
                let t = {
                    let s = if theta >= T::zero() {
                        T::one()
                    } else {
                        -T::one()
                    };
                    s / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

/// Singular values of an arbitrary matrix via the eigenvalues of `M^T M`.
pub fn singular_values<T: Real>(m: &Matrix<T>) -> Vec<T> {
    let gram = if m.rows() >= m.cols() {
        m.matmul_ta(m)
    } else {
        m.matmul_tb(m)
    };
    let mut eig = sym_eigenvalues(&gram);
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig.into_iter().map(|e| e.max(T::zero()).sqrt()).collect()
}

/// Reciprocal 2-norm condition number (sigma_min / sigma_max), 0 if singular.
pub fn reciprocal_condition<T: Real>(m: &Matrix<T>) -> T {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if max > T::zero() => min / max,
        _ => T::zero(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_spd(n: usize, rng: &mut Rng) -> Matrix<f64> {
        let b: Matrix<f64> = rng.normal_matrix(n, n);
        let mut a = b.matmul_ta(&b);
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        a
    }

    #[test]
    fn ridge_identity_cases() {
        let a = Matrix::<f64>::eye(3);
        let b = vec![1.0, -2.0, 3.0];
        let x = ridge_solve(&a, &b, 0.0).unwrap();
        assert_eq!(x, b);
        let x2 = ridge_solve(&a, &b, 1.0).unwrap();
        for (xi, bi) in x2.iter().zip(&b) {
            assert!((xi - bi / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn ridge_residual_bound_on_random_systems() {
        let mut rng = Rng::seed_from(11);
        for trial in 0..100 {
            let n = 2 + rng.below(8);
            let a = random_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let x = ridge_solve(&a, &b, 0.0).unwrap();
            let bx = a.matmul(&Matrix::col_vector(&x));
            let b_norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let resid: f64 = bx
                .data()
                .iter()
                .zip(&b)
                .map(|(r, v)| (r - v).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(
                resid <= 1e-8 * (b_norm + 1.0),
                "trial {trial}: residual {resid} too large"
            );
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        match cholesky(&a) {
            Err(CoreError::NotPositiveDefinite { pivot, index }) => {
                assert!(pivot <= 0.0);
                assert_eq!(index, 1);
            }
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn ridge_rejects_asymmetric() {
        let a = Matrix::new(2, 2, vec![1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            ridge_solve(&a, &[1.0, 1.0], 0.1),
            Err(CoreError::Argument(_))
        ));
    }

    #[test]
    fn lu_solves_and_det() {
        let a = Matrix::new(3, 3, vec![2.0, 1.0, 1.0, 4.0, -6.0, 0.0, -2.0, 7.0, 2.0]);
        let lu = lu_factor(&a).unwrap();
        let x = lu.solve_vec(&[5.0, -2.0, 9.0]);
        let ax = a.matmul(&Matrix::col_vector(&x));
        for (got, want) in ax.data().iter().zip(&[5.0, -2.0, 9.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // det(A) = -16 by cofactor expansion
        assert!((lu.det() - -16.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_eigenvalues_of_diagonal_plus_rotation() {
        // A = Q diag(1, 4, 9) Q^T must report {1, 4, 9}.
        let theta: f64 = 0.3;
        let q = Matrix::new(
            3,
            3,
            vec![
                theta.cos(),
                -theta.sin(),
                0.0,
                theta.sin(),
                theta.cos(),
                0.0,
                0.0,
                0.0,
                1.0,
            ],
        );
        let d = Matrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 9.0]);
        let a = q.matmul(&d).matmul_tb(&q);
        let mut eig = sym_eigenvalues(&a);
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((eig[0] - 1.0).abs() < 1e-10);
        assert!((eig[1] - 4.0).abs() < 1e-10);
        assert!((eig[2] - 9.0).abs() < 1e-10);
    }

    #[test]
    fn reciprocal_condition_detects_rank_deficiency() {
        let mut a = Matrix::<f64>::zeros(3, 3);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        // third row/col zero -> singular
        assert!(reciprocal_condition(&a) < 1e-12);
        assert!(reciprocal_condition(&Matrix::<f64>::eye(5)) > 0.99);
    }
}
