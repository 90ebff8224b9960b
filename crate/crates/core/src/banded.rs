//! Dense banded storage, partitioning into diagonal blocks, and no-pivot
//! block LU/UL factorization with pivot boosting.
//!
//! Storage is "tall and thin": one contiguous run of `2k + 1` slots per
//! column, so entry `(i, j)` (0-based, `|i - j| <= k`) lives at
//! `j * (2k + 1) + (i - j + k)`. The diagonal therefore sits at offset `k`
//! of every column run, and padding slots (which fall outside the matrix at
//! the first and last `k` columns) are kept at zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Result, SapError};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix<T = f64> {
    n: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Real> BandedMatrix<T> {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            data: vec![T::zero(); n * (2 * k + 1)],
        }
    }

    /// Build from 0-based `(row, col, value)` triplets. Every triplet must lie
    /// inside the band and no position may repeat; in-band positions that are
    /// not listed are zero.
    pub fn from_triplets(entries: &[(usize, usize, T)], n: usize, k: usize) -> Result<Self> {
        let mut m = Self::zeros(n, k);
        let mut seen = vec![false; m.data.len()];
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(SapError::IndexOutOfRange { row: i, col: j, n });
            }
            let s = m
                .slot(i, j)
                .ok_or(SapError::OutOfBand { row: i, col: j, k })?;
            if std::mem::replace(&mut seen[s], true) {
                return Err(SapError::DuplicateEntry { row: i, col: j });
            }
            m.data[s] = v;
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Half-bandwidth of the storage (not necessarily of the nonzeros).
    pub fn k(&self) -> usize {
        self.k
    }

    /// Slots per column, `2k + 1`.
    pub fn width(&self) -> usize {
        2 * self.k + 1
    }

    /// Raw column-major band storage, padding included.
    pub fn storage(&self) -> &[T] {
        &self.data
    }

    /// Storage slot of `(i, j)`, or `None` outside the band or the matrix.
    #[inline]
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || i.abs_diff(j) > self.k {
            return None;
        }
        Some(j * self.width() + (i + self.k - j))
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        j * (2 * self.k + 1) + (i + self.k - j)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> T {
        self.slot(i, j).map_or(T::zero(), |s| self.data[s])
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(SapError::IndexOutOfRange {
                row: i,
                col: j,
                n: self.n,
            });
        }
        let s = self.slot(i, j).ok_or(SapError::OutOfBand {
            row: i,
            col: j,
            k: self.k,
        })?;
        self.data[s] = v;
        Ok(())
    }

    /// Row range of the in-band entries of column `j`.
    #[inline]
    fn col_rows(&self, j: usize) -> std::ops::Range<usize> {
        j.saturating_sub(self.k)..(j + self.k + 1).min(self.n)
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.iter_mut().for_each(|v| *v = T::zero());
        for (j, &xj) in x.iter().enumerate() {
            if xj.is_zero() {
                continue;
            }
            for i in self.col_rows(j) {
                y[i] += self.data[self.at(i, j)] * xj;
            }
        }
    }

    pub fn norm_inf(&self) -> T {
        let mut rows = vec![T::zero(); self.n];
        for j in 0..self.n {
            for i in self.col_rows(j) {
                rows[i] += self.data[self.at(i, j)].abs();
            }
        }
        rows.into_iter().fold(T::zero(), T::max)
    }

    pub fn norm_fro(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Number of nonzero in-band values.
    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| !v.is_zero()).count()
    }

    /// Number of in-band positions inside the matrix (padding excluded).
    pub fn band_positions(&self) -> usize {
        let k = self.k.min(self.n.saturating_sub(1));
        self.n * (2 * k + 1) - k * (k + 1)
    }

    /// Degree of diagonal dominance: the largest `d` with
    /// `|a_ii| >= d * sum_{j != i} |a_ij|` for every row. Rows without
    /// off-diagonal mass impose no bound; `None` means no row bounds `d`.
    pub fn diagonal_dominance(&self) -> Option<f64> {
        let mut off = vec![0.0f64; self.n];
        let mut diag = vec![0.0f64; self.n];
        for j in 0..self.n {
            for i in self.col_rows(j) {
                let v = self.data[self.at(i, j)].widen().abs();
                if i == j {
                    diag[i] = v;
                } else {
                    off[i] += v;
                }
            }
        }
        diag.iter()
            .zip(&off)
            .filter(|(_, &o)| o > 0.0)
            .map(|(&d, &o)| d / o)
            .reduce(f64::min)
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        DenseMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn convert<U: Real>(&self) -> BandedMatrix<U> {
        BandedMatrix {
            n: self.n,
            k: self.k,
            data: self.data.iter().map(|v| U::from_f64(v.widen())).collect(),
        }
    }

    /// Copy of the diagonal block starting at `start` of order `size`,
    /// stored with half-bandwidth `k` (which may be smaller than the
    /// source's; entries beyond it must be zero).
    fn diagonal_block(&self, start: usize, size: usize, k: usize) -> BandedMatrix<T> {
        let mut b = BandedMatrix::zeros(size, k);
        for j in 0..size {
            for i in j.saturating_sub(k)..(j + k + 1).min(size) {
                let s = b.at(i, j);
                b.data[s] = self.get(start + i, start + j);
            }
        }
        b
    }

    /// Diagonal block under a symmetric local permutation: entry `(a, b)` of
    /// the result is source entry `(start + perm[a], start + perm[b])`.
    fn permuted_block(&self, start: usize, perm: &[usize], k: usize) -> Result<BandedMatrix<T>> {
        let size = perm.len();
        let mut inv = vec![0; size];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut b = BandedMatrix::zeros(size, k);
        for jo in 0..size {
            for io in jo.saturating_sub(self.k)..(jo + self.k + 1).min(size) {
                let v = self.get(start + io, start + jo);
                if v.is_zero() {
                    continue;
                }
                b.set(inv[io], inv[jo], v)?;
            }
        }
        Ok(b)
    }

    /// `J A J` where `J` reverses the index order.
    fn reversed(&self) -> BandedMatrix<T> {
        let n = self.n;
        let mut r = BandedMatrix::zeros(n, self.k);
        for j in 0..n {
            for i in self.col_rows(j) {
                let s = r.at(n - 1 - i, n - 1 - j);
                r.data[s] = self.data[self.at(i, j)];
            }
        }
        r
    }

    /// In-place LU without pivoting: `L` (unit lower) strictly below the
    /// diagonal, `U` on and above. No fill ever leaves the band.
    fn lu_in_place(&mut self, boost_eps: T) -> Vec<PivotBoost> {
        let (n, k) = (self.n, self.k);
        let scale = self.norm_inf();
        let threshold = boost_eps * if scale > T::zero() { scale } else { T::one() };
        let mut boosts = Vec::new();
        for c in 0..n {
            let last = (c + k).min(n - 1);
            let dslot = self.at(c, c);
            let mut piv = self.data[dslot];
            if piv.abs() < threshold {
                let boosted = if piv < T::zero() {
                    -threshold
                } else {
                    threshold
                };
                boosts.push(PivotBoost {
                    index: c,
                    delta: (boosted - piv).widen(),
                });
                piv = boosted;
                self.data[dslot] = piv;
            }
            if last == c {
                continue;
            }
            // multipliers: rows c+1..=last of column c are contiguous
            let lo = dslot + 1;
            let hi = dslot + (last - c);
            for v in &mut self.data[lo..=hi] {
                *v /= piv;
            }
            for jj in c + 1..=last {
                let u = self.data[self.at(c, jj)];
                if u.is_zero() {
                    continue;
                }
                let base = self.at(c + 1, jj);
                for t in 0..(last - c) {
                    let l = self.data[lo + t];
                    self.data[base + t] -= l * u;
                }
            }
        }
        boosts
    }

    /// Forward then backward substitution on LU factors stored in-band,
    /// applied to rows `from..n` only. With `from = 0` this is a full solve;
    /// with `from = n - w` it solves for the trailing `w` rows of a
    /// right-hand side that vanishes above row `from`.
    fn lu_solve_from(&self, x: &mut [T], from: usize) {
        let (n, k) = (self.n, self.k);
        debug_assert_eq!(x.len(), n - from);
        for c in from..n {
            let xc = x[c - from];
            if xc.is_zero() {
                continue;
            }
            let last = (c + k).min(n - 1);
            let base = self.at(c + 1, c);
            for (t, r) in (c + 1..=last).enumerate() {
                x[r - from] -= self.data[base + t] * xc;
            }
        }
        for c in (from..n).rev() {
            x[c - from] /= self.data[self.at(c, c)];
            let xc = x[c - from];
            if xc.is_zero() {
                continue;
            }
            let first = c.saturating_sub(k).max(from);
            for r in first..c {
                x[r - from] -= self.data[self.at(r, c)] * xc;
            }
        }
    }
}

/// A pivot replaced during factorization: `delta` was added to the diagonal
/// entry at local `index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotBoost {
    pub index: usize,
    pub delta: f64,
}

/// Split of `n` rows into `p` diagonal blocks. The first `remainder` blocks
/// have `n / p + 1` rows, the rest `n / p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionLayout {
    n: usize,
    k: usize,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    remainder: usize,
    per_partition_k: Vec<usize>,
}

impl PartitionLayout {
    pub fn new(n: usize, p: usize, k: usize) -> Result<Self> {
        if n == 0 {
            return Err(SapError::InvalidArgument(
                "matrix order must be positive".into(),
            ));
        }
        if p == 0 {
            return Err(SapError::InvalidArgument(
                "partition count must be at least 1".into(),
            ));
        }
        let max_feasible = Self::max_partitions(n, k);
        if p > max_feasible {
            return Err(SapError::PartitionTooLarge {
                requested: p,
                max_feasible,
                n,
                k,
            });
        }
        let base = n / p;
        let remainder = n % p;
        let sizes: Vec<usize> = (0..p).map(|i| base + usize::from(i < remainder)).collect();
        let mut offsets = Vec::with_capacity(p + 1);
        offsets.push(0);
        for s in &sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Ok(Self {
            n,
            k,
            sizes,
            offsets,
            remainder,
            per_partition_k: vec![k; p],
        })
    }

    /// Largest `p` keeping every block at least `2k` rows (and at least one
    /// row). A single partition has no interfaces and is always feasible.
    pub fn max_partitions(n: usize, k: usize) -> usize {
        if k == 0 {
            n.max(1)
        } else {
            (n / (2 * k)).max(1)
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Global half-bandwidth the layout was built for.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Prefix sums of the sizes, `p + 1` entries starting at zero.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn remainder(&self) -> usize {
        self.remainder
    }

    pub fn per_partition_k(&self) -> &[usize] {
        &self.per_partition_k
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Replace the per-partition bandwidths (third-stage reordering).
    pub fn with_partition_bandwidths(mut self, ks: Vec<usize>) -> Result<Self> {
        if ks.len() != self.p() {
            return Err(SapError::DimensionMismatch {
                expected: self.p(),
                found: ks.len(),
            });
        }
        if let Some(i) = (0..ks.len()).find(|&i| ks[i] > self.k) {
            return Err(SapError::InvalidArgument(format!(
                "partition {i} bandwidth {} exceeds global K = {}",
                ks[i], self.k
            )));
        }
        self.per_partition_k = ks;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorMode {
    LuOnly,
    LuAndUl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveVariant {
    Lu,
    Ul,
}

/// Factors of one diagonal block. The UL factorization is kept as the LU
/// factorization of the index-reversed block, since `A = U L` exactly when
/// `J A J = (J U J)(J L J)`.
#[derive(Debug, Clone)]
struct PartitionFactor<T> {
    lu: BandedMatrix<T>,
    ul: Option<BandedMatrix<T>>,
    // third-stage symmetric permutation: local row `a` of the factored block
    // is row `perm[a]` of the original block
    perm: Option<Vec<usize>>,
    lu_boosts: Vec<PivotBoost>,
    ul_boosts: Vec<PivotBoost>,
}

/// Per-partition LU (and optional UL) factors of the diagonal blocks.
#[derive(Debug, Clone)]
pub struct BlockFactors<T = f64> {
    layout: PartitionLayout,
    parts: Vec<PartitionFactor<T>>,
    boost_eps: f64,
}

impl<T: Real> BlockFactors<T> {
    /// Factor every diagonal block of `a` without pivoting. A pivot with
    /// magnitude below `boost_eps * ||A_i||_inf` is replaced by
    /// `±boost_eps * ||A_i||_inf`.
    pub fn factor(
        a: &BandedMatrix<T>,
        layout: &PartitionLayout,
        mode: FactorMode,
        boost_eps: f64,
    ) -> Result<Self> {
        check_layout(a, layout)?;
        check_eps(boost_eps)?;
        let eps = T::from_f64(boost_eps);
        let parts = (0..layout.p())
            .into_par_iter()
            .map(|i| {
                let block = a.diagonal_block(
                    layout.offsets[i],
                    layout.sizes[i],
                    layout.per_partition_k[i].min(a.k),
                );
                let ul = (mode == FactorMode::LuAndUl).then(|| {
                    let mut r = block.reversed();
                    let boosts = r.lu_in_place(eps);
                    (r, boosts)
                });
                let mut lu = block;
                let lu_boosts = lu.lu_in_place(eps);
                let (ul, ul_boosts) = match ul {
                    Some((r, b)) => (Some(r), b),
                    None => (None, Vec::new()),
                };
                PartitionFactor {
                    lu,
                    ul,
                    perm: None,
                    lu_boosts,
                    ul_boosts,
                }
            })
            .collect();
        Ok(Self {
            layout: layout.clone(),
            parts,
            boost_eps,
        })
    }

    /// LU-factor each diagonal block after applying its local symmetric
    /// permutation (`perms[i][new] = old`), using the layout's
    /// per-partition bandwidths. Solves take and return vectors in the
    /// original (unpermuted) block ordering.
    pub fn factor_reordered(
        a: &BandedMatrix<T>,
        layout: &PartitionLayout,
        perms: &[Vec<usize>],
        boost_eps: f64,
    ) -> Result<Self> {
        check_layout(a, layout)?;
        check_eps(boost_eps)?;
        if perms.len() != layout.p() {
            return Err(SapError::DimensionMismatch {
                expected: layout.p(),
                found: perms.len(),
            });
        }
        for (i, p) in perms.iter().enumerate() {
            if p.len() != layout.sizes[i] {
                return Err(SapError::DimensionMismatch {
                    expected: layout.sizes[i],
                    found: p.len(),
                });
            }
        }
        let eps = T::from_f64(boost_eps);
        let parts = (0..layout.p())
            .into_par_iter()
            .map(|i| {
                let mut lu =
                    a.permuted_block(layout.offsets[i], &perms[i], layout.per_partition_k[i])?;
                let lu_boosts = lu.lu_in_place(eps);
                Ok(PartitionFactor {
                    lu,
                    ul: None,
                    perm: Some(perms[i].clone()),
                    lu_boosts,
                    ul_boosts: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout: layout.clone(),
            parts,
            boost_eps,
        })
    }

    pub fn layout(&self) -> &PartitionLayout {
        &self.layout
    }

    pub fn boost_eps(&self) -> f64 {
        self.boost_eps
    }

    pub fn has_ul(&self) -> bool {
        self.parts.iter().all(|p| p.ul.is_some())
    }

    pub fn is_reordered(&self) -> bool {
        self.parts.iter().any(|p| p.perm.is_some())
    }

    /// Number of boosted pivots in the LU factors of partition `i`.
    pub fn boost_count(&self, i: usize) -> usize {
        self.parts[i].lu_boosts.len()
    }

    pub fn boosts(&self, i: usize, variant: SolveVariant) -> &[PivotBoost] {
        match variant {
            SolveVariant::Lu => &self.parts[i].lu_boosts,
            SolveVariant::Ul => &self.parts[i].ul_boosts,
        }
    }

    pub fn total_boosts(&self) -> usize {
        self.parts
            .iter()
            .map(|p| p.lu_boosts.len() + p.ul_boosts.len())
            .sum()
    }

    /// Dense `L`, `U` of partition `i` (in the factored, possibly permuted,
    /// ordering).
    pub fn lu_dense(&self, i: usize) -> (DenseMatrix<T>, DenseMatrix<T>) {
        let f = &self.parts[i].lu;
        let n = f.n();
        let l = DenseMatrix::from_fn(n, n, |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Equal => T::one(),
            std::cmp::Ordering::Greater => f.get(r, c),
            std::cmp::Ordering::Less => T::zero(),
        });
        let u = DenseMatrix::from_fn(n, n, |r, c| if r <= c { f.get(r, c) } else { T::zero() });
        (l, u)
    }

    /// Half-bandwidth of the stored factors of partition `i`.
    pub fn factor_bandwidth(&self, i: usize) -> usize {
        self.parts[i].lu.k()
    }

    /// Solve `(A_i + dA_i) X = rhs` in place; `rhs` is column-major
    /// `N_i x m`.
    pub fn solve(&self, i: usize, rhs: &mut [T], m: usize, variant: SolveVariant) -> Result<()> {
        let part = &self.parts[i];
        let n = self.layout.sizes[i];
        if rhs.len() != n * m {
            return Err(SapError::DimensionMismatch {
                expected: n * m,
                found: rhs.len(),
            });
        }
        match variant {
            SolveVariant::Lu => {
                let mut scratch = part.perm.as_ref().map(|_| vec![T::zero(); n]);
                for col in rhs.chunks_exact_mut(n) {
                    match (&part.perm, scratch.as_mut()) {
                        (Some(perm), Some(tmp)) => {
                            for (a, &p) in perm.iter().enumerate() {
                                tmp[a] = col[p];
                            }
                            part.lu.lu_solve_from(tmp, 0);
                            for (a, &p) in perm.iter().enumerate() {
                                col[p] = tmp[a];
                            }
                        }
                        _ => part.lu.lu_solve_from(col, 0),
                    }
                }
            }
            SolveVariant::Ul => {
                let ul = part.ul.as_ref().ok_or(SapError::VariantNotFactored {
                    partition: i,
                    variant: "UL",
                })?;
                for col in rhs.chunks_exact_mut(n) {
                    col.reverse();
                    ul.lu_solve_from(col, 0);
                    col.reverse();
                }
            }
        }
        Ok(())
    }

    /// Bottom `w` rows of `A_i^{-1} [0; rhs]`, using only the trailing
    /// `w x w` parts of the LU factors. `rhs` is column-major `w x m` and is
    /// overwritten.
    pub(crate) fn solve_trailing(&self, i: usize, rhs: &mut [T], w: usize) -> Result<()> {
        let part = &self.parts[i];
        if part.perm.is_some() {
            return Err(SapError::InvalidArgument(
                "truncated spike solves need unpermuted blocks".into(),
            ));
        }
        let n = part.lu.n();
        for col in rhs.chunks_exact_mut(w) {
            part.lu.lu_solve_from(col, n - w);
        }
        Ok(())
    }

    /// Top `w` rows of `A_i^{-1} [rhs; 0]`, using only the leading `w x w`
    /// parts of the UL factors.
    pub(crate) fn solve_leading(&self, i: usize, rhs: &mut [T], w: usize) -> Result<()> {
        let part = &self.parts[i];
        let ul = part.ul.as_ref().ok_or(SapError::VariantNotFactored {
            partition: i,
            variant: "UL",
        })?;
        let n = ul.n();
        for col in rhs.chunks_exact_mut(w) {
            col.reverse();
            ul.lu_solve_from(col, n - w);
            col.reverse();
        }
        Ok(())
    }
}

fn check_layout<T: Real>(a: &BandedMatrix<T>, layout: &PartitionLayout) -> Result<()> {
    if layout.n() != a.n() {
        return Err(SapError::DimensionMismatch {
            expected: a.n(),
            found: layout.n(),
        });
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SapError::InvalidArgument(format!(
            "boost_eps must be positive, got {eps}"
        )));
    }
    Ok(())
}
