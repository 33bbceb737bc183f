//! Small dense helpers for the normal equations.

use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out.set(a, b, self.get(i, j));
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum()).collect()
    }
}

/// Lower Cholesky factor, or `None` if the matrix is not positive definite.
pub fn cholesky<T: Scalar>(a: &SquareMatrix<T>) -> Option<SquareMatrix<T>> {
    let n = a.n;
    let mut l = SquareMatrix::zeros(n);
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(T::zero(), T::max);
    let floor = scale * T::epsilon() * T::from_usize_lossy(n.max(1)) * T::lit(16.0);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Some(l)
}

/// Solves `L L' x = b`.
pub fn cholesky_solve<T: Scalar>(l: &SquareMatrix<T>, b: &[T]) -> Vec<T> {
    let n = l.n;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    y
}

/// Inverse of a positive-definite matrix via its Cholesky factor.
pub fn spd_inverse<T: Scalar>(a: &SquareMatrix<T>) -> Option<SquareMatrix<T>> {
    let l = cholesky(a)?;
    let n = a.n;
    let mut inv = SquareMatrix::zeros(n);
    for j in 0..n {
        let mut e = vec![T::zero(); n];
        e[j] = T::one();
        let col = cholesky_solve(&l, &e);
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = SquareMatrix { n: 2, data: vec![4.0, 2.0, 2.0, 3.0] };
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0f64).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0f64).abs() < 1e-14);
        let inv = spd_inverse(&a).unwrap();
        assert!((inv.get(0, 0) - 3.0 / 8.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_singular() {
        let a = SquareMatrix { n: 2, data: vec![1.0, 1.0, 1.0, 1.0f64] };
        assert!(cholesky(&a).is_none());
    }
}
