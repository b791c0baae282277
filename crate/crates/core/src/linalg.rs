//! Dense symmetric eigensolver (cyclic Jacobi) and SPD solves.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigen-decomposition of a symmetric matrix: ascending eigenvalues and the
/// matching orthonormal eigenvectors stored as the columns of `eigenvectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Tensor,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.eigenvectors.get(i, k)).collect()
    }

    /// `max_k ‖A φ_k − λ_k φ_k‖∞`.
    pub fn residual(&self, a: &Tensor) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += a.get(i, j) * self.eigenvectors.get(j, k);
                }
                let r = (s - self.eigenvalues[k] * self.eigenvectors.get(i, k)).abs();
                worst = worst.max(r);
            }
        }
        worst
    }

    /// `max |Φᵀ Φ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for p in 0..n {
            for q in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += self.eigenvectors.get(i, p) * self.eigenvectors.get(i, q);
                }
                let target = if p == q { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls below
/// `tol · ‖A‖_F`. The sweep budget is `100 · n`.
///
/// Eigenvalues come back ascending (ties keep rotation order); each
/// eigenvector is sign-fixed so its largest-magnitude entry (first one on
/// ties) is positive.
pub fn sym_eig(matrix: &Tensor, tol: f64) -> Result<Spectrum> {
    let n = matrix.rows();
    if matrix.cols() != n {
        return Err(Error::Shape {
            op: "sym_eig",
            lhs: matrix.shape().to_vec(),
            rhs: vec![n, n],
        });
    }
    let norm = libm::sqrt(matrix.values().iter().map(|v| v * v).sum::<f64>());
    let sym_tol = 1e-12 * norm.max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            if (matrix.get(i, j) - matrix.get(j, i)).abs() > sym_tol {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }
    let mut a = matrix.values().to_vec();
    // symmetrize exactly so rotations see one value per pair
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut v = Tensor::identity(n).into_values();
    let target = tol * norm.max(f64::MIN_POSITIVE);
    let max_sweeps = (100 * n).max(1);
    let mut converged = n <= 1;
    for _ in 0..max_sweeps {
        if off_diagonal(&a, n) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, n, p, q);
            }
        }
    }
    if !converged {
        let off = off_diagonal(&a, n);
        if off > target {
            return Err(Error::NoConvergence {
                sweeps: max_sweeps,
                residual: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].total_cmp(&a[y * n + y]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vecs = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|i| v[i * n + src]).collect();
        let big = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let lead = col
            .iter()
            .position(|x| x.abs() >= big * (1.0 - 1e-12))
            .unwrap_or(0);
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vecs[i * n + dst] = sign * col[i];
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors: Tensor::from_rows(n, n, vecs),
    })
}

fn off_diagonal(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += 2.0 * a[i * n + j] * a[i * n + j];
        }
    }
    libm::sqrt(s)
}

fn rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let (app, aqq) = (a[p * n + p], a[q * n + q]);
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        let s = if theta >= 0.0 { 1.0 } else { -1.0 };
        s / (theta.abs() + libm::sqrt(theta * theta + 1.0))
    };
    let c = 1.0 / libm::sqrt(t * t + 1.0);
    let s = t * c;
    for k in 0..n {
        let (akp, akq) = (a[k * n + p], a[k * n + q]);
        a[k * n + p] = c * akp - s * akq;
        a[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let (apk, aqk) = (a[p * n + k], a[q * n + k]);
        a[p * n + k] = c * apk - s * aqk;
        a[q * n + k] = s * apk + c * aqk;
    }
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    for k in 0..n {
        let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
        v[k * n + p] = c * vkp - s * vkq;
        v[k * n + q] = s * vkp + c * vkq;
    }
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
pub fn solve_spd(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::Shape {
            op: "solve_spd",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let scale = (0..n)
        .map(|i| a.get(i, i).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 1e-12 * scale {
            return Err(Error::Singular(format!(
                "pivot {j} is {d:e}; the matrix is not positive definite"
            )));
        }
        let d = libm::sqrt(d);
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    let m = b.cols();
    let mut x = b.values().to_vec();
    for c in 0..m {
        for i in 0..n {
            let mut s = x[i * m + c];
            for k in 0..i {
                s -= l[i * n + k] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i * m + c];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
    }
    Ok(Tensor::from_rows(n, m, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_sorted() {
        let s = sym_eig(
            &Tensor::from_nested(&[vec![2.0, 0.0], vec![0.0, 1.0]]),
            1e-14,
        )
        .unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 2.0]);
        assert_eq!(s.vector(0), vec![0.0, 1.0]);
    }

    #[test]
    fn path_p2() {
        let l = Tensor::from_nested(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let s = sym_eig(&l, 1e-14).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-12);
        assert!((s.eigenvalues[1] - 2.0).abs() < 1e-12);
        let v0 = s.vector(0);
        assert!((v0[0] - v0[1]).abs() < 1e-12 && v0[0] > 0.0);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Tensor::from_nested(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(
            sym_eig(&m, 1e-14),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn spd_solve() {
        let a = Tensor::from_nested(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let b = Tensor::from_rows(2, 1, vec![1.0, 2.0]);
        let x = solve_spd(&a, &b).unwrap();
        assert!((x.get(0, 0) - 1.0 / 11.0).abs() < 1e-14);
        assert!((x.get(1, 0) - 7.0 / 11.0).abs() < 1e-14);
        let sing = Tensor::from_nested(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(solve_spd(&sing, &b), Err(Error::Singular(_))));
    }
}
