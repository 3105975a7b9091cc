//! Small dense matrices for action-space covariances and precision maps.
//!
//! The action dimension in every control problem here is tiny (the built-in
//! presets are scalar), so matrices live inline up to 2×2 and spill to the
//! heap beyond that.

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::scalar::Real;

type Storage<T> = SmallVec<[T; 4]>;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Storage<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: SmallVec::from_elem(T::zero(), n * n) }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// 1×1 matrix.
    pub fn scalar(v: T) -> Self {
        Self { n: 1, data: SmallVec::from_elem(v, 1) }
    }

    pub fn from_row_major(n: usize, data: &[T]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Domain(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data: SmallVec::from_slice(data) })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| {
            (0..i).all(|j| {
                let (a, b) = (self.get(i, j), self.get(j, i));
                (a - b).abs() <= tol * (T::one() + a.abs().max(b.abs()))
            })
        })
    }

    pub fn mul_vec(&self, v: &[T], out: &mut [T]) {
        for i in 0..self.n {
            out[i] = (0..self.n).map(|j| self.get(i, j) * v[j]).sum();
        }
    }

    /// Quadratic form `vᵀ M v`.
    pub fn quad_form(&self, v: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                acc += v[i] * self.get(i, j) * v[j];
            }
        }
        acc
    }

    /// Cholesky factorisation; fails unless the matrix is symmetric positive definite.
    pub fn cholesky(&self) -> Result<Cholesky<T>> {
        let n = self.n;
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        if !self.is_symmetric(T::of(1e-10)) {
            return Err(Error::Domain("matrix is not symmetric".into()));
        }
        let mut l = Self::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > T::zero()) {
                return Err(Error::Domain(format!("matrix is not positive definite (pivot {j})")));
            }
            let djj = d.sqrt();
            l.set(j, j, djj);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / djj);
            }
        }
        Ok(Cholesky { lower: l })
    }
}

/// Lower-triangular factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: SquareMatrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn lower(&self) -> &SquareMatrix<T> {
        &self.lower
    }

    pub fn log_det(&self) -> T {
        let n = self.lower.dim();
        (0..n).map(|i| self.lower.get(i, i).ln()).sum::<T>() * T::two()
    }

    /// `out = L v`.
    pub fn mul_lower(&self, v: &[T], out: &mut [T]) {
        let n = self.lower.dim();
        for i in 0..n {
            out[i] = (0..=i).map(|j| self.lower.get(i, j) * v[j]).sum();
        }
    }

    /// Solves `M y = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.lower.dim();
        let l = &self.lower;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l.get(i, k) * b[k];
            }
            b[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= l.get(k, i) * b[k];
            }
            b[i] = s / l.get(i, i);
        }
    }

    /// `bᵀ M⁻¹ b`.
    pub fn inv_quad_form(&self, b: &[T]) -> T {
        // ‖L⁻¹ b‖²
        let n = self.lower.dim();
        let l = &self.lower;
        let mut y: SmallVec<[T; 4]> = SmallVec::from_slice(b);
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        y.iter().map(|&v| v * v).sum()
    }

    pub fn inverse(&self) -> SquareMatrix<T> {
        let n = self.lower.dim();
        let mut inv = SquareMatrix::zeros(n);
        let mut col: SmallVec<[T; 4]> = SmallVec::from_elem(T::zero(), n);
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = T::zero());
            col[j] = T::one();
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_two_by_two() {
        let m = SquareMatrix::from_row_major(2, &[4.0, 2.0, 2.0, 3.0]).unwrap();
        let c = m.cholesky().unwrap();
        assert!((c.log_det() - 8.0f64.ln()).abs() < 1e-14);
        let inv = c.inverse();
        // [4 2;2 3]^-1 = 1/8 [3 -2;-2 4]
        assert!((inv.get(0, 0) - 0.375).abs() < 1e-15);
        assert!((inv.get(0, 1) + 0.25).abs() < 1e-15);
        assert!((c.inv_quad_form(&[1.0, 1.0]) - (3.0 - 4.0 + 4.0) / 8.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        assert!(SquareMatrix::scalar(-1.0f64).cholesky().is_err());
        assert!(SquareMatrix::scalar(0.0f64).cholesky().is_err());
        let asym = SquareMatrix::from_row_major(2, &[1.0f64, 0.5, 0.0, 1.0]).unwrap();
        assert!(asym.cholesky().is_err());
    }
}
