//! Dense symmetric positive-definite factorization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result, Scalar};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors `a`, reading only its lower triangle.
    pub fn factor(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d = d - l[[j, k]] * l[[j, k]];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Singular { pivot: j });
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s = s - l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    /// Solves `L z = b`.
    pub fn forward(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let n = self.dim();
        let mut z = Array1::<T>::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - self.lower[[i, k]] * z[k];
            }
            z[i] = s / self.lower[[i, i]];
        }
        z
    }

    /// Solves `Lᵀ x = z`.
    pub fn backward(&self, z: ArrayView1<'_, T>) -> Array1<T> {
        let n = self.dim();
        let mut x = Array1::<T>::zeros(n);
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s = s - self.lower[[k, i]] * x[k];
            }
            x[i] = s / self.lower[[i, i]];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let z = self.forward(b);
        self.backward(z.view())
    }

    /// Diagonal of `A⁻¹`, via `[A⁻¹]ᵢᵢ = ‖L⁻¹ eᵢ‖²`.
    pub fn inverse_diagonal(&self) -> Array1<T> {
        let n = self.dim();
        // Column i of L⁻¹ is zero above row i.
        let mut out = Array1::<T>::zeros(n);
        let mut col = vec![T::zero(); n];
        for i in 0..n {
            col[i] = T::one() / self.lower[[i, i]];
            for r in (i + 1)..n {
                let mut s = T::zero();
                for k in i..r {
                    s = s + self.lower[[r, k]] * col[k];
                }
                col[r] = -s / self.lower[[r, r]];
            }
            out[i] = col[i..].iter().map(|&c| c * c).sum();
        }
        out
    }
}
