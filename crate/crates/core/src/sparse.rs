//! Compressed-row sparse matrices, drop-off and band assembly.

use crate::banded::BandedMatrix;
use crate::error::{Result, SapError};
use crate::krylov::LinearOperator;

/// Square or rectangular CSR matrix with sorted, duplicate-free column
/// indices in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from 0-based triplets. Repeated positions are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in entries {
            if i >= nrows || j >= ncols {
                return Err(SapError::IndexOutOfRange {
                    row: i,
                    col: j,
                    n: nrows.max(ncols),
                });
            }
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; entries.len()];
        let mut vals = vec![0.0; entries.len()];
        for &(i, j, v) in entries {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|p| (cols[p], vals[p])));
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in &row {
                if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Order of a square matrix.
    pub fn n(&self) -> usize {
        self.nrows
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn norm_fro(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t).expect("transposed indices are in range")
    }

    pub fn scale(&self, gamma: f64) -> Self {
        let mut s = self.clone();
        s.values.iter_mut().for_each(|v| *v *= gamma);
        s
    }

    /// `B[i][j] = A[row_perm[i]][col_perm[j]]`, each permutation given as
    /// `new -> old`.
    pub fn permute(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        assert_eq!(row_perm.len(), self.nrows);
        assert_eq!(col_perm.len(), self.ncols);
        let col_inv = invert_permutation(col_perm);
        let t: Vec<_> = row_perm
            .iter()
            .enumerate()
            .flat_map(|(new_i, &old_i)| self.row(old_i).map(move |(j, v)| (new_i, j, v)))
            .map(|(i, j, v)| (i, col_inv[j], v))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &t).expect("permuted indices are in range")
    }

    /// `diag(row_scale) A diag(col_scale)`.
    pub fn scale_rows_cols(&self, row_scale: &[f64], col_scale: &[f64]) -> Self {
        let mut s = self.clone();
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s.values[p] *= row_scale[i] * col_scale[self.col_idx[p]];
            }
        }
        s
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// Half-bandwidth `max |i - j|` over stored entries; 0 when there are
    /// none.
    pub fn half_bandwidth(&self) -> usize {
        self.triplets()
            .map(|(i, j, _)| i.abs_diff(j))
            .max()
            .unwrap_or(0)
    }

    /// Copy without explicitly stored zeros.
    pub fn prune_zeros(&self) -> Self {
        let t: Vec<_> = self.triplets().filter(|&(_, _, v)| v != 0.0).collect();
        Self::from_triplets(self.nrows, self.ncols, &t).expect("indices unchanged")
    }

    pub fn is_pattern_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, _)| {
            let r = self.row_ptr[j]..self.row_ptr[j + 1];
            self.col_idx[r].binary_search(&i).is_ok()
        })
    }
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

/// `inv[p[i]] = i`
pub fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &v) in p.iter().enumerate() {
        inv[v] = i;
    }
    inv
}

/// True when `p` is a bijection on `0..p.len()`.
pub fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter()
        .all(|&v| v < p.len() && !std::mem::replace(&mut seen[v], true))
}

/// Half-bandwidth of a pattern given as `(row, col)` pairs.
pub fn half_bandwidth<I: IntoIterator<Item = (usize, usize)>>(pattern: I) -> usize {
    pattern
        .into_iter()
        .map(|(i, j)| i.abs_diff(j))
        .max()
        .unwrap_or(0)
}

/// Smallest half-bandwidth `k` such that the Frobenius norm of the entries
/// farther than `k` from the diagonal is at most `tol * ||A||_F`; those
/// entries are removed. `tol = 0` returns `a` unchanged.
pub fn drop_off(a: &SparseMatrix, tol: f64) -> Result<(SparseMatrix, usize)> {
    if !(0.0..=1.0).contains(&tol) {
        return Err(SapError::InvalidArgument(format!(
            "drop tolerance {tol} not in [0, 1]"
        )));
    }
    let full_k = a.half_bandwidth();
    if tol == 0.0 {
        return Ok((a.clone(), full_k));
    }
    // squared mass per distance from the diagonal
    let mut mass = vec![0.0f64; full_k + 1];
    for (i, j, v) in a.triplets() {
        mass[i.abs_diff(j)] += v * v;
    }
    let budget = (tol * a.norm_fro()).powi(2);
    let mut dropped = 0.0;
    let mut k = full_k;
    while k > 0 && dropped + mass[k] <= budget {
        dropped += mass[k];
        k -= 1;
    }
    let t: Vec<_> = a
        .triplets()
        .filter(|&(i, j, _)| i.abs_diff(j) <= k)
        .collect();
    Ok((SparseMatrix::from_triplets(a.nrows(), a.ncols(), &t)?, k))
}

/// Copy `a` into banded storage of half-bandwidth `k`. Returns the banded
/// matrix and its fill fraction (nonzeros over in-band positions).
pub fn assemble_banded(a: &SparseMatrix, k: usize) -> Result<(BandedMatrix, f64)> {
    if !a.is_square() {
        return Err(SapError::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let mut b = BandedMatrix::zeros(a.n(), k);
    for (i, j, v) in a.triplets() {
        b.set(i, j, v)?;
    }
    let positions = b.band_positions();
    let fill = if positions > 0 {
        b.nnz() as f64 / positions as f64
    } else {
        0.0
    };
    Ok((b, fill))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiagonal(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let a =
            SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 0, 2.0), (0, 1, 3.0)]).unwrap();
        assert_eq!(a.col_idx(), &[0, 1]);
        assert_eq!(a.values(), &[2.0, 4.0]);
        assert_eq!(a.row_ptr(), &[0, 2, 2]);
    }

    #[test]
    fn half_bandwidth_cases() {
        assert_eq!(SparseMatrix::identity(5).half_bandwidth(), 0);
        assert_eq!(tridiagonal(5).half_bandwidth(), 1);
        assert_eq!(half_bandwidth([(0, 4)]), 4);
        assert_eq!(half_bandwidth(std::iter::empty()), 0);
    }

    #[test]
    fn drop_nothing_at_zero_tolerance() {
        let a = tridiagonal(10);
        let (b, k) = drop_off(&a, 0.0).unwrap();
        assert_eq!(b, a);
        assert_eq!(k, 1);
    }

    #[test]
    fn drops_tiny_far_entry() {
        let n = 110;
        let mut t: Vec<_> = tridiagonal(n).triplets().collect();
        t.push((0, 100, 1e-12));
        let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
        assert_eq!(a.half_bandwidth(), 100);
        let (b, k) = drop_off(&a, 1e-6).unwrap();
        assert_eq!(k, 1);
        assert_eq!(b.get(0, 100), 0.0);
        assert_eq!(b.nnz(), a.nnz() - 1);
    }

    #[test]
    fn drop_everything_at_unit_tolerance() {
        let (b, k) = drop_off(&tridiagonal(8), 1.0).unwrap();
        assert_eq!(k, 0);
        assert_eq!(b.nnz(), 8);
    }

    #[test]
    fn drop_rejects_bad_tolerance() {
        assert!(drop_off(&tridiagonal(3), 1.5).is_err());
    }

    #[test]
    fn assemble_tridiagonal() {
        let (b, fill) = assemble_banded(&tridiagonal(6), 1).unwrap();
        assert_eq!(fill, 1.0);
        assert_eq!(b.get(2, 3), -1.0);
        assert_eq!(b.get(3, 3), 4.0);
        let (d, _) = assemble_banded(&SparseMatrix::identity(4), 0).unwrap();
        assert_eq!(d.storage(), &[1.0; 4]);
        assert!(matches!(
            assemble_banded(&tridiagonal(6), 0),
            Err(SapError::OutOfBand { .. })
        ));
    }

    #[test]
    fn permute_and_invert() {
        let a =
            SparseMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 3.0)]).unwrap();
        let p = vec![2, 0, 1];
        let b = a.permute(&p, &p);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(b.get(i, j), a.get(p[i], p[j]));
            }
        }
        assert_eq!(invert_permutation(&p), vec![1, 2, 0]);
        assert!(is_permutation(&p));
        assert!(!is_permutation(&[0, 0, 1]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn drop_off_monotone(entries in proptest::collection::vec((0usize..30, 0usize..30, -5.0f64..5.0), 1..120),
                                 t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
                let a = SparseMatrix::from_triplets(30, 30, &entries).unwrap();
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let (_, k_lo) = drop_off(&a, lo).unwrap();
                let (_, k_hi) = drop_off(&a, hi).unwrap();
                prop_assert!(k_hi <= k_lo);
            }

            #[test]
            fn assembled_values_round_trip(entries in proptest::collection::vec((0usize..25, 0usize..25, -5.0f64..5.0), 1..100)) {
                let a = SparseMatrix::from_triplets(25, 25, &entries).unwrap();
                let (b, _) = assemble_banded(&a, a.half_bandwidth()).unwrap();
                for i in 0..25 {
                    for j in 0..25 {
                        prop_assert_eq!(b.get(i, j), a.get(i, j));
                    }
                }
            }
        }
    }
}
