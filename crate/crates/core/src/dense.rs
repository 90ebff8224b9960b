//! Small column-major dense matrices for coupling blocks, spike tips and the
//! reduced interface systems.

use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Build from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows);
        let mut out = Self::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            for p in 0..self.cols {
                let r = rhs[(p, j)];
                if r.is_zero() {
                    continue;
                }
                let col = &self.data[p * self.rows..(p + 1) * self.rows];
                let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
                for (d, &a) in dst.iter_mut().zip(col) {
                    *d += a * r;
                }
            }
        }
        out
    }

    /// `y -= self * x`
    pub fn gemv_sub(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (j, &xj) in x.iter().enumerate() {
            if xj.is_zero() {
                continue;
            }
            for (yi, &a) in y.iter_mut().zip(self.column(j)) {
                *yi -= a * xj;
            }
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.rows];
        self.gemv_sub(x, &mut y);
        y.iter_mut().for_each(|v| *v = -*v);
        y
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn convert<U: Real>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.widen())).collect(),
        }
    }

    /// In-place LU without pivoting. Pivots smaller than `eps * ||A||_inf`
    /// are replaced by `±eps * ||A||_inf` (sign kept, zero counts as +).
    /// Returns the number of boosted pivots.
    pub fn lu_in_place_boosted(&mut self, eps: T) -> usize {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let scale = self.norm_inf();
        let scale = if scale > T::zero() { scale } else { T::one() };
        let threshold = eps * scale;
        let mut boosted = 0;
        for c in 0..n {
            let mut piv = self[(c, c)];
            if piv.abs() < threshold {
                piv = if piv < T::zero() {
                    -threshold
                } else {
                    threshold
                };
                self[(c, c)] = piv;
                boosted += 1;
            }
            for r in c + 1..n {
                self[(r, c)] /= piv;
            }
            for j in c + 1..n {
                let u = self[(c, j)];
                if u.is_zero() {
                    continue;
                }
                for r in c + 1..n {
                    let l = self[(r, c)];
                    self[(r, j)] -= l * u;
                }
            }
        }
        boosted
    }

    /// Solve with factors produced by [`Self::lu_in_place_boosted`].
    pub fn lu_solve_in_place(&self, x: &mut [T]) {
        let n = self.rows;
        debug_assert_eq!(x.len(), n);
        for c in 0..n {
            let xc = x[c];
            for r in c + 1..n {
                x[r] -= self[(r, c)] * xc;
            }
        }
        for c in (0..n).rev() {
            x[c] /= self[(c, c)];
            let xc = x[c];
            for r in 0..c {
                x[r] -= self[(r, c)] * xc;
            }
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[j * self.rows + i]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[j * self.rows + i]
    }
}
