//! Small dense linear solves for the Newton systems (a few dozen unknowns).

use crate::Real;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Matrix<T> {
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Matrix { dim, data: vec![T::zero(); dim * dim] }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.dim + col] += v;
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.dim + col] = v;
    }

    /// Copies the upper triangle onto the lower one.
    pub fn symmetrize_from_upper(&mut self) {
        for row in 0..self.dim {
            for col in 0..row {
                let v = self.at(col, row);
                self.set(row, col, v);
            }
        }
    }

    /// Solves `self · x = rhs` by Gaussian elimination with partial pivoting.
    /// Returns `None` when a pivot vanishes relative to the matrix scale.
    pub fn solve(&self, rhs: &[T]) -> Option<Vec<T>> {
        let n = self.dim;
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !(scale > T::zero()) || !scale.is_finite() {
            return (n == 0).then(Vec::new);
        }
        let tiny = scale * T::epsilon() * T::lit(n as f64);
        for col in 0..n {
            let pivot =
                (col..n).max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap()).unwrap();
            if !(a[pivot * n + col].abs() > tiny) {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                }
                b.swap(pivot, col);
            }
            let diag = a[col * n + col];
            for row in col + 1..n {
                let factor = a[row * n + col] / diag;
                if factor == T::zero() {
                    continue;
                }
                for k in col..n {
                    let v = a[col * n + k];
                    a[row * n + k] -= factor * v;
                }
                let v = b[col];
                b[row] -= factor * v;
            }
        }
        let mut x = vec![T::zero(); n];
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= a[row * n + k] * x[k];
            }
            x[row] = acc / a[row * n + row];
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}
