//! Coupled (truncated SPIKE) and decoupled (block-Jacobi) preconditioners
//! built on [`BlockFactors`].
//!
//! Interfaces are numbered `0..p-1`; interface `i` joins partition `i` to
//! partition `i + 1`. Its super-diagonal coupling `B` sits in the last `w`
//! rows of block `i` and first `w` columns of block `i + 1`; the
//! sub-diagonal coupling `C` in the first `w` rows of block `i + 1` and last
//! `w` columns of block `i`, where `w` is the layout's global half-bandwidth.
//!
//! The right spike of partition `i` is `V = A_i^{-1} [0; B]` and the left
//! spike of partition `i + 1` is `W = A_{i+1}^{-1} [C; 0]`. Truncation keeps
//! only the bottom `w` rows of `V` and the top `w` rows of `W`, which couple
//! neighbouring partitions through the small system
//! `(I - W_top V_bottom) x_top = g_top - W_top g_bottom`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{BandedMatrix, BlockFactors, PartitionLayout, SolveVariant};
use crate::dense::DenseMatrix;
use crate::error::{Result, SapError};
use crate::krylov::LinearOperator;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlocks<T = f64> {
    widths: Vec<usize>,
    b: Vec<DenseMatrix<T>>,
    c: Vec<DenseMatrix<T>>,
}

impl<T: Real> CouplingBlocks<T> {
    /// Copy the corner couplings of every interface out of `a`.
    pub fn extract(a: &BandedMatrix<T>, layout: &PartitionLayout) -> Result<Self> {
        if layout.n() != a.n() {
            return Err(SapError::DimensionMismatch {
                expected: a.n(),
                found: layout.n(),
            });
        }
        let w = layout.k();
        let p = layout.p();
        let mut widths = Vec::with_capacity(p.saturating_sub(1));
        let mut b = Vec::with_capacity(p.saturating_sub(1));
        let mut c = Vec::with_capacity(p.saturating_sub(1));
        for i in 0..p.saturating_sub(1) {
            let edge = layout.offsets()[i + 1];
            widths.push(w);
            b.push(DenseMatrix::from_fn(w, w, |r, s| {
                a.get(edge - w + r, edge + s)
            }));
            c.push(DenseMatrix::from_fn(w, w, |r, s| {
                a.get(edge + r, edge - w + s)
            }));
        }
        Ok(Self { widths, b, c })
    }

    pub fn interfaces(&self) -> usize {
        self.b.len()
    }

    pub fn width(&self, i: usize) -> usize {
        self.widths[i]
    }

    /// Super-diagonal coupling of interface `i`.
    pub fn b(&self, i: usize) -> &DenseMatrix<T> {
        &self.b[i]
    }

    /// Sub-diagonal coupling of interface `i`.
    pub fn c(&self, i: usize) -> &DenseMatrix<T> {
        &self.c[i]
    }

    pub fn zeroed(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            b: self
                .b
                .iter()
                .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                .collect(),
            c: self
                .c
                .iter()
                .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }
}

/// Spike tips, optional full spikes, and the factored reduced blocks
/// `R = I - W_top V_bottom` of every interface.
#[derive(Debug, Clone)]
pub struct SpikeSet<T = f64> {
    v_bottom: Vec<DenseMatrix<T>>,
    w_top: Vec<DenseMatrix<T>>,
    v_full: Option<Vec<DenseMatrix<T>>>,
    w_full: Option<Vec<DenseMatrix<T>>>,
    reduced: Vec<DenseMatrix<T>>,
    reduced_lu: Vec<DenseMatrix<T>>,
    reduced_boosts: Vec<usize>,
}

impl<T: Real> SpikeSet<T> {
    /// Spike tips from the trailing LU and leading UL sub-factors only.
    /// Reduced blocks are formed but not yet factored.
    pub fn tips(f: &BlockFactors<T>, cb: &CouplingBlocks<T>) -> Result<Self> {
        if !f.has_ul() {
            return Err(SapError::InvalidArgument(
                "spike tips need both LU and UL factors".into(),
            ));
        }
        check_interfaces(f, cb)?;
        let tips = (0..cb.interfaces())
            .into_par_iter()
            .map(|i| {
                let w = cb.width(i);
                let mut v = cb.b(i).as_slice().to_vec();
                f.solve_trailing(i, &mut v, w)?;
                let mut wt = cb.c(i).as_slice().to_vec();
                f.solve_leading(i + 1, &mut wt, w)?;
                Ok((
                    DenseMatrix::from_col_major(w, w, v),
                    DenseMatrix::from_col_major(w, w, wt),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (v_bottom, w_top) = tips.into_iter().unzip();
        Ok(Self::with_tips(v_bottom, w_top, None, None))
    }

    /// Entire spikes from multi-right-hand-side block solves; tips are read
    /// off their ends. Works with reordered (third-stage) factors.
    pub fn full(f: &BlockFactors<T>, cb: &CouplingBlocks<T>) -> Result<Self> {
        check_interfaces(f, cb)?;
        let sizes = f.layout().sizes();
        let spikes = (0..cb.interfaces())
            .into_par_iter()
            .map(|i| {
                let w = cb.width(i);
                let (ni, nj) = (sizes[i], sizes[i + 1]);
                let mut v = vec![T::zero(); ni * w];
                let mut wl = vec![T::zero(); nj * w];
                for s in 0..w {
                    for r in 0..w {
                        v[s * ni + ni - w + r] = cb.b(i)[(r, s)];
                        wl[s * nj + r] = cb.c(i)[(r, s)];
                    }
                }
                f.solve(i, &mut v, w, SolveVariant::Lu)?;
                f.solve(i + 1, &mut wl, w, SolveVariant::Lu)?;
                Ok((
                    DenseMatrix::from_col_major(ni, w, v),
                    DenseMatrix::from_col_major(nj, w, wl),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut v_bottom = Vec::new();
        let mut w_top = Vec::new();
        let mut v_full = Vec::new();
        let mut w_full = Vec::new();
        for (i, (v, wl)) in spikes.into_iter().enumerate() {
            let w = cb.width(i);
            let ni = v.rows();
            v_bottom.push(DenseMatrix::from_fn(w, w, |r, s| v[(ni - w + r, s)]));
            w_top.push(DenseMatrix::from_fn(w, w, |r, s| wl[(r, s)]));
            v_full.push(v);
            w_full.push(wl);
        }
        Ok(Self::with_tips(v_bottom, w_top, Some(v_full), Some(w_full)))
    }

    fn with_tips(
        v_bottom: Vec<DenseMatrix<T>>,
        w_top: Vec<DenseMatrix<T>>,
        v_full: Option<Vec<DenseMatrix<T>>>,
        w_full: Option<Vec<DenseMatrix<T>>>,
    ) -> Self {
        let reduced = v_bottom
            .iter()
            .zip(&w_top)
            .map(|(v, w)| DenseMatrix::identity(v.rows()).sub(&w.matmul(v)))
            .collect();
        Self {
            v_bottom,
            w_top,
            v_full,
            w_full,
            reduced,
            reduced_lu: Vec::new(),
            reduced_boosts: Vec::new(),
        }
    }

    /// Factor every reduced block by no-pivot LU with the same boosting
    /// policy as the diagonal blocks.
    pub fn factor_reduced(&mut self, boost_eps: f64) -> Result<()> {
        let eps = T::from_f64(boost_eps);
        let factored: Vec<(DenseMatrix<T>, usize)> = self
            .reduced
            .par_iter()
            .map(|r| {
                let mut lu = r.clone();
                let boosts = lu.lu_in_place_boosted(eps);
                (lu, boosts)
            })
            .collect();
        for (i, (lu, _)) in factored.iter().enumerate() {
            if lu.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(SapError::PrecondConstruction {
                    interface: i,
                    reason: "reduced block factorization produced non-finite values".into(),
                });
            }
        }
        let (lu, boosts) = factored.into_iter().unzip();
        self.reduced_lu = lu;
        self.reduced_boosts = boosts;
        Ok(())
    }

    pub fn is_factored(&self) -> bool {
        self.reduced_lu.len() == self.reduced.len()
    }

    pub fn interfaces(&self) -> usize {
        self.v_bottom.len()
    }

    pub fn v_bottom(&self, i: usize) -> &DenseMatrix<T> {
        &self.v_bottom[i]
    }

    pub fn w_top(&self, i: usize) -> &DenseMatrix<T> {
        &self.w_top[i]
    }

    /// Full right spike of partition `i` (interface `i`), if computed.
    pub fn v_full(&self, i: usize) -> Option<&DenseMatrix<T>> {
        self.v_full.as_ref().map(|v| &v[i])
    }

    /// Full left spike of partition `i + 1` (interface `i`), if computed.
    pub fn w_full(&self, i: usize) -> Option<&DenseMatrix<T>> {
        self.w_full.as_ref().map(|v| &v[i])
    }

    /// The unfactored reduced block `I - W_top V_bottom` of interface `i`.
    pub fn reduced(&self, i: usize) -> &DenseMatrix<T> {
        &self.reduced[i]
    }

    pub fn reduced_boosts(&self) -> &[usize] {
        &self.reduced_boosts
    }
}

fn check_interfaces<T: Real>(f: &BlockFactors<T>, cb: &CouplingBlocks<T>) -> Result<()> {
    let expected = f.layout().p().saturating_sub(1);
    if cb.interfaces() != expected {
        return Err(SapError::DimensionMismatch {
            expected,
            found: cb.interfaces(),
        });
    }
    Ok(())
}

/// Tips and factored reduced blocks, ready for the coupled preconditioner.
pub fn compute_spike_tips<T: Real>(
    f: &BlockFactors<T>,
    cb: &CouplingBlocks<T>,
) -> Result<SpikeSet<T>> {
    let mut s = SpikeSet::tips(f, cb)?;
    s.factor_reduced(f.boost_eps())?;
    Ok(s)
}

/// Full spikes and factored reduced blocks.
pub fn compute_full_spikes<T: Real>(
    f: &BlockFactors<T>,
    cb: &CouplingBlocks<T>,
) -> Result<SpikeSet<T>> {
    let mut s = SpikeSet::full(f, cb)?;
    s.factor_reduced(f.boost_eps())?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondKind {
    /// Truncated SPIKE.
    Coupled,
    /// Block Jacobi.
    Decoupled,
    Diagonal,
    None,
}

impl std::str::FromStr for PrecondKind {
    type Err = SapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(Self::Coupled),
            "decoupled" => Ok(Self::Decoupled),
            "diag" | "diagonal" => Ok(Self::Diagonal),
            "none" => Ok(Self::None),
            other => Err(SapError::InvalidArgument(format!(
                "unknown preconditioner '{other}'"
            ))),
        }
    }
}

// built once per solve, so the size gap between variants is irrelevant
#[allow(clippy::large_enum_variant)]
enum Inner<T> {
    Coupled {
        factors: BlockFactors<T>,
        coupling: CouplingBlocks<T>,
        spikes: SpikeSet<T>,
    },
    Decoupled(BlockFactors<T>),
    Diagonal(Vec<T>),
    None,
}

/// A constructed preconditioner of one [`PrecondKind`], applied in
/// precision `T`.
pub struct SpikePreconditioner<T = f64> {
    n: usize,
    inner: Inner<T>,
}

impl<T: Real> SpikePreconditioner<T> {
    pub fn coupled(
        factors: BlockFactors<T>,
        coupling: CouplingBlocks<T>,
        spikes: SpikeSet<T>,
    ) -> Result<Self> {
        if factors.layout().p() < 2 {
            return Err(SapError::InvalidArgument(
                "the coupled preconditioner needs at least two partitions".into(),
            ));
        }
        check_interfaces(&factors, &coupling)?;
        if spikes.interfaces() != coupling.interfaces() || !spikes.is_factored() {
            return Err(SapError::InvalidArgument(
                "spike set incomplete or unfactored".into(),
            ));
        }
        Ok(Self {
            n: factors.layout().n(),
            inner: Inner::Coupled {
                factors,
                coupling,
                spikes,
            },
        })
    }

    pub fn decoupled(factors: BlockFactors<T>) -> Self {
        Self {
            n: factors.layout().n(),
            inner: Inner::Decoupled(factors),
        }
    }

    /// Inverse of the diagonal of `a`, with near-zero diagonal entries
    /// boosted to `±boost_eps * ||A||_inf`.
    pub fn diagonal(a: &BandedMatrix<T>, boost_eps: f64) -> Self {
        let scale = a.norm_inf();
        let scale = if scale > T::zero() { scale } else { T::one() };
        let threshold = T::from_f64(boost_eps) * scale;
        let inv = (0..a.n())
            .map(|i| {
                let d = a.get(i, i);
                let d = if d.abs() < threshold {
                    if d < T::zero() {
                        -threshold
                    } else {
                        threshold
                    }
                } else {
                    d
                };
                T::one() / d
            })
            .collect();
        Self {
            n: a.n(),
            inner: Inner::Diagonal(inv),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            inner: Inner::None,
        }
    }

    pub fn kind(&self) -> PrecondKind {
        match self.inner {
            Inner::Coupled { .. } => PrecondKind::Coupled,
            Inner::Decoupled(_) => PrecondKind::Decoupled,
            Inner::Diagonal(_) => PrecondKind::Diagonal,
            Inner::None => PrecondKind::None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn factors(&self) -> Option<&BlockFactors<T>> {
        match &self.inner {
            Inner::Coupled { factors, .. } | Inner::Decoupled(factors) => Some(factors),
            _ => None,
        }
    }

    /// Apply the preconditioner to `b`.
    pub fn apply(&self, b: &[T]) -> Result<Vec<T>> {
        if b.len() != self.n {
            return Err(SapError::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        match &self.inner {
            Inner::None => Ok(b.to_vec()),
            Inner::Diagonal(inv) => Ok(b.iter().zip(inv).map(|(&x, &d)| x * d).collect()),
            Inner::Decoupled(f) => {
                let mut g = b.to_vec();
                block_solve_all(f, &mut g)?;
                Ok(g)
            }
            Inner::Coupled {
                factors,
                coupling,
                spikes,
            } => apply_coupled(factors, coupling, spikes, b),
        }
    }
}

fn split_partitions<'a, T>(layout: &PartitionLayout, mut v: &'a mut [T]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(layout.p());
    for &s in layout.sizes() {
        let (head, tail) = v.split_at_mut(s);
        out.push(head);
        v = tail;
    }
    out
}

fn block_solve_all<T: Real>(f: &BlockFactors<T>, v: &mut [T]) -> Result<()> {
    split_partitions(f.layout(), v)
        .into_par_iter()
        .enumerate()
        .try_for_each(|(i, part)| f.solve(i, part, 1, SolveVariant::Lu))
}

fn apply_coupled<T: Real>(
    f: &BlockFactors<T>,
    cb: &CouplingBlocks<T>,
    s: &SpikeSet<T>,
    b: &[T],
) -> Result<Vec<T>> {
    let layout = f.layout();
    let mut g = b.to_vec();
    block_solve_all(f, &mut g)?;

    // per interface: R x_top = g_top - W_top g_bottom, x_bottom = g_bottom - V_bottom x_top
    let corrections: Vec<(Vec<T>, Vec<T>)> = (0..cb.interfaces())
        .into_par_iter()
        .map(|i| {
            let w = cb.width(i);
            let edge = layout.offsets()[i + 1];
            let g_bot = &g[edge - w..edge];
            let mut x_top = g[edge..edge + w].to_vec();
            s.w_top(i).gemv_sub(g_bot, &mut x_top);
            s.reduced_lu[i].lu_solve_in_place(&mut x_top);
            let mut x_bot = g_bot.to_vec();
            s.v_bottom(i).gemv_sub(&x_top, &mut x_bot);
            (x_top, x_bot)
        })
        .collect();

    let mut x = b.to_vec();
    for (i, (x_top, x_bot)) in corrections.iter().enumerate() {
        let w = cb.width(i);
        let edge = layout.offsets()[i + 1];
        cb.b(i).gemv_sub(x_top, &mut x[edge - w..edge]);
        cb.c(i).gemv_sub(x_bot, &mut x[edge..edge + w]);
    }
    block_solve_all(f, &mut x)?;
    Ok(x)
}

impl<T: Real> LinearOperator for SpikePreconditioner<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let xt: Vec<T> = x.iter().map(|&v| T::from_f64(v)).collect();
        let out = SpikePreconditioner::apply(self, &xt)
            .expect("preconditioner dimensions validated at construction");
        for (yi, v) in y.iter_mut().zip(out) {
            *yi = v.widen();
        }
    }
}
