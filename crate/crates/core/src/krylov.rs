//! Outer Krylov iterations: left-preconditioned BiCGStab(l) and
//! preconditioned CG.
//!
//! Convergence is always judged on the true, unpreconditioned residual
//! `||b - A x||_2 <= rel_tol * ||b||_2 + abs_tol`, recomputed from the
//! current iterate at every exit point. The initial guess is zero.
//!
//! BiCGStab(l) iteration counts are reported in fractions of a sweep: each
//! BiCG step `j = 1..l` is an exit point at `j / 2l`, the first partial
//! minimal-residual update another at `(2l - 1) / 2l`, and the full sweep
//! counts as one. For the default `l = 2` that gives exits at 0.25, 0.5 and
//! 0.75; other `l` are rounded up to the next quarter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};

/// A square linear map `y = Op(x)` on `f64` vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
}

/// The identity map of order `n`.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOperator<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

impl LinearOperator for crate::banded::BandedMatrix<f64> {
    fn dim(&self) -> usize {
        self.n()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

impl LinearOperator for crate::dense::DenseMatrix<f64> {
    fn dim(&self) -> usize {
        self.rows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.mul_vec(x));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrylovMethod {
    #[serde(rename = "bicgstab_l")]
    BiCgStabL,
    Cg,
    /// CG when the caller asserts SPD, otherwise BiCGStab(l).
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovOptions {
    pub method: KrylovMethod,
    pub ell: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Full sweeps (BiCGStab) or iterations (CG).
    pub max_iterations: usize,
    /// Run the preconditioner in single precision. The iteration itself is
    /// always double precision; the flag is consumed by preconditioner
    /// construction.
    pub mixed_precision: bool,
    /// Caller's assertion that the system is symmetric positive definite.
    pub spd: bool,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            method: KrylovMethod::BiCgStabL,
            ell: 2,
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_iterations: 1000,
            mixed_precision: false,
            spd: false,
        }
    }
}

impl KrylovOptions {
    pub fn validate(&self) -> Result<()> {
        if self.ell == 0 {
            return Err(SapError::InvalidArgument("ell must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0 && self.abs_tol >= 0.0) {
            return Err(SapError::InvalidArgument(
                "tolerances must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// The method actually run.
    pub fn resolved_method(&self) -> KrylovMethod {
        match self.method {
            KrylovMethod::Auto if self.spd => KrylovMethod::Cg,
            KrylovMethod::Auto => KrylovMethod::BiCgStabL,
            m => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Recurrence breakdown persisted after the single restart.
    Breakdown,
    /// NaN or infinity appeared in the iteration.
    NonFinite,
    /// CG found nonpositive curvature in `A` or the preconditioner.
    Indefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    /// Iterations to convergence, in quarters for BiCGStab(l).
    pub iterations: f64,
    /// Relative true residual at the start and at every exit point.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub final_relative_residual: f64,
    pub termination: Termination,
    pub restarts: usize,
}

/// `||b - A x||_2 / ||b||_2` (absolute norm when `b = 0`).
pub fn relative_residual(a: &dyn LinearOperator, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; b.len()];
    a.apply(x, &mut ax);
    let r = ax
        .iter()
        .zip(b)
        .map(|(&p, &q)| (q - p) * (q - p))
        .sum::<f64>()
        .sqrt();
    let bn = norm(b);
    if bn > 0.0 {
        r / bn
    } else {
        r
    }
}

/// Solve `A x = b` with the method selected by `opts`.
pub fn solve(
    a: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &[f64],
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    match opts.resolved_method() {
        KrylovMethod::Cg => solve_cg(a, m, b, opts),
        _ => solve_bicgstab_l(a, m, b, opts),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_dims(a: &dyn LinearOperator, m: &dyn LinearOperator, b: &[f64]) -> Result<()> {
    for found in [a.dim(), m.dim()] {
        if found != b.len() {
            return Err(SapError::DimensionMismatch {
                expected: b.len(),
                found,
            });
        }
    }
    Ok(())
}

/// Tracks the true residual and the stopping test.
struct Monitor<'a> {
    a: &'a dyn LinearOperator,
    b: &'a [f64],
    bnorm: f64,
    target: f64,
    scratch: Vec<f64>,
    history: Vec<f64>,
}

enum Check {
    Continue,
    Converged,
    NonFinite,
}

impl<'a> Monitor<'a> {
    fn new(a: &'a dyn LinearOperator, b: &'a [f64], opts: &KrylovOptions) -> Self {
        let bnorm = norm(b);
        Self {
            a,
            b,
            bnorm,
            target: opts.rel_tol * bnorm + opts.abs_tol,
            scratch: vec![0.0; b.len()],
            history: Vec::new(),
        }
    }

    fn relative(&self, r: f64) -> f64 {
        if self.bnorm > 0.0 {
            r / self.bnorm
        } else {
            r
        }
    }

    fn check(&mut self, x: &[f64]) -> Check {
        self.a.apply(x, &mut self.scratch);
        let r = self
            .scratch
            .iter()
            .zip(self.b)
            .map(|(&p, &q)| (q - p) * (q - p))
            .sum::<f64>()
            .sqrt();
        self.history.push(self.relative(r));
        if !r.is_finite() {
            Check::NonFinite
        } else if r <= self.target {
            Check::Converged
        } else {
            Check::Continue
        }
    }

    fn finish(
        self,
        x: &[f64],
        iterations: f64,
        termination: Termination,
        restarts: usize,
    ) -> SolveStats {
        SolveStats {
            iterations,
            final_relative_residual: relative_residual(self.a, x, self.b),
            residual_history: self.history,
            converged: termination == Termination::Converged,
            termination,
            restarts,
        }
    }
}

fn quarter(progress: f64) -> f64 {
    (progress * 4.0 - 1e-9).ceil() / 4.0
}

/// Left-preconditioned BiCGStab(l).
pub fn solve_bicgstab_l(
    a: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &[f64],
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    opts.validate()?;
    check_dims(a, m, b)?;
    let n = b.len();
    let ell = opts.ell;
    let mut mon = Monitor::new(a, b, opts);
    let mut x = vec![0.0; n];

    match mon.check(&x) {
        Check::Converged => return Ok((x.clone(), mon.finish(&x, 0.0, Termination::Converged, 0))),
        Check::NonFinite => return Ok((x.clone(), mon.finish(&x, 0.0, Termination::NonFinite, 0))),
        Check::Continue => {}
    }

    let mut tmp = vec![0.0; n];
    // preconditioned operator M^{-1} A
    let mhat = |v: &[f64], out: &mut [f64], tmp: &mut [f64]| {
        a.apply(v, tmp);
        m.apply(tmp, out);
    };

    let mut r: Vec<Vec<f64>> = vec![vec![0.0; n]; ell + 1];
    let mut u: Vec<Vec<f64>> = vec![vec![0.0; n]; ell + 1];
    m.apply(b, &mut r[0]);
    let mut shadow = r[0].clone();

    let mut rho0 = 1.0;
    let mut alpha = 0.0;
    let mut omega = 1.0;
    let mut sweeps = 0usize;
    let mut restarts = 0usize;

    let mut tau = vec![vec![0.0; ell + 1]; ell + 1];
    let mut sigma = vec![0.0; ell + 1];
    let mut gp = vec![0.0; ell + 1];
    let mut g = vec![0.0; ell + 1];
    let mut gpp = vec![0.0; ell + 1];

    macro_rules! exit_point {
        ($progress:expr) => {
            match mon.check(&x) {
                Check::Converged => {
                    let it = quarter($progress);
                    return Ok((
                        x.clone(),
                        mon.finish(&x, it, Termination::Converged, restarts),
                    ));
                }
                Check::NonFinite => {
                    let it = quarter($progress);
                    return Ok((
                        x.clone(),
                        mon.finish(&x, it, Termination::NonFinite, restarts),
                    ));
                }
                Check::Continue => {}
            }
        };
    }

    'outer: while sweeps < opts.max_iterations {
        rho0 *= -omega;
        let mut broke = false;

        // BiCG part
        for j in 0..ell {
            let rho1 = dot(&r[j], &shadow);
            if rho0 == 0.0 || !rho1.is_finite() {
                broke = true;
                break;
            }
            let beta = alpha * rho1 / rho0;
            rho0 = rho1;
            for i in 0..=j {
                let (ri, ui) = (&r[i], &mut u[i]);
                for (uv, &rv) in ui.iter_mut().zip(ri) {
                    *uv = rv - beta * *uv;
                }
            }
            {
                let (lo, hi) = u.split_at_mut(j + 1);
                mhat(&lo[j], &mut hi[0], &mut tmp);
            }
            let gamma = dot(&u[j + 1], &shadow);
            if gamma == 0.0 || !gamma.is_finite() {
                broke = true;
                break;
            }
            alpha = rho0 / gamma;
            for i in 0..=j {
                let ui1 = &u[i + 1];
                axpy(-alpha, ui1, &mut r[i]);
            }
            {
                let (lo, hi) = r.split_at_mut(j + 1);
                mhat(&lo[j], &mut hi[0], &mut tmp);
            }
            axpy(alpha, &u[0], &mut x);
            exit_point!(sweeps as f64 + (j + 1) as f64 / (2 * ell) as f64);
        }

        if !broke {
            // minimal residual part (modified Gram-Schmidt)
            for j in 1..=ell {
                for i in 1..j {
                    tau[i][j] = dot(&r[j], &r[i]) / sigma[i];
                    let t = tau[i][j];
                    let (lo, hi) = r.split_at_mut(j);
                    axpy(-t, &lo[i], &mut hi[0]);
                }
                sigma[j] = dot(&r[j], &r[j]);
                if sigma[j] == 0.0 || !sigma[j].is_finite() {
                    broke = true;
                    break;
                }
                gp[j] = dot(&r[0], &r[j]) / sigma[j];
            }
        }

        if broke {
            if restarts >= 1 {
                let it = sweeps as f64;
                return Ok((
                    x.clone(),
                    mon.finish(&x, it, Termination::Breakdown, restarts),
                ));
            }
            restarts += 1;
            sweeps += 1;
            // restart from the current iterate with a perturbed shadow vector
            a.apply(&x, &mut tmp);
            let res: Vec<f64> = b.iter().zip(&tmp).map(|(&p, &q)| p - q).collect();
            m.apply(&res, &mut r[0]);
            let scale = 1e-3 * norm(&r[0]) / (n as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            shadow = r[0]
                .iter()
                .map(|&v| v + scale * rng.random_range(-1.0..1.0))
                .collect();
            u[0].iter_mut().for_each(|v| *v = 0.0);
            rho0 = 1.0;
            alpha = 0.0;
            omega = 1.0;
            continue 'outer;
        }

        g[ell] = gp[ell];
        omega = g[ell];
        for j in (1..ell).rev() {
            g[j] = gp[j] - ((j + 1)..=ell).map(|i| tau[j][i] * g[i]).sum::<f64>();
        }
        for j in 1..ell {
            gpp[j] = g[j + 1] + ((j + 1)..ell).map(|i| tau[j][i] * g[i + 1]).sum::<f64>();
        }

        axpy(g[1], &r[0], &mut x);
        {
            let (lo, hi) = r.split_at_mut(ell);
            axpy(-gp[ell], &hi[0], &mut lo[0]);
        }
        {
            let (lo, hi) = u.split_at_mut(ell);
            axpy(-g[ell], &hi[0], &mut lo[0]);
        }
        if ell >= 2 {
            exit_point!(sweeps as f64 + (2 * ell - 1) as f64 / (2 * ell) as f64);
        }
        for j in 1..ell {
            {
                let (lo, hi) = u.split_at_mut(j);
                axpy(-g[j], &hi[0], &mut lo[0]);
            }
            axpy(gpp[j], &r[j], &mut x);
            {
                let (lo, hi) = r.split_at_mut(j);
                axpy(-gp[j], &hi[0], &mut lo[0]);
            }
        }
        sweeps += 1;
        exit_point!(sweeps as f64);
    }

    let it = sweeps as f64;
    Ok((
        x.clone(),
        mon.finish(&x, it, Termination::MaxIterations, restarts),
    ))
}

/// Preconditioned conjugate gradients for SPD `A` and SPD `M`.
pub fn solve_cg(
    a: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &[f64],
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    opts.validate()?;
    check_dims(a, m, b)?;
    let n = b.len();
    let mut mon = Monitor::new(a, b, opts);
    let mut x = vec![0.0; n];
    match mon.check(&x) {
        Check::Converged => return Ok((x.clone(), mon.finish(&x, 0.0, Termination::Converged, 0))),
        Check::NonFinite => return Ok((x.clone(), mon.finish(&x, 0.0, Termination::NonFinite, 0))),
        Check::Continue => {}
    }

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    if rz <= 0.0 {
        let term = if rz.is_finite() {
            Termination::Indefinite
        } else {
            Termination::NonFinite
        };
        return Ok((x.clone(), mon.finish(&x, 0.0, term, 0)));
    }

    for it in 1..=opts.max_iterations {
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !pq.is_finite() {
            return Ok((
                x.clone(),
                mon.finish(&x, (it - 1) as f64, Termination::NonFinite, 0),
            ));
        }
        if pq <= 0.0 {
            return Ok((
                x.clone(),
                mon.finish(&x, (it - 1) as f64, Termination::Indefinite, 0),
            ));
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        match mon.check(&x) {
            Check::Converged => {
                return Ok((
                    x.clone(),
                    mon.finish(&x, it as f64, Termination::Converged, 0),
                ))
            }
            Check::NonFinite => {
                return Ok((
                    x.clone(),
                    mon.finish(&x, it as f64, Termination::NonFinite, 0),
                ))
            }
            Check::Continue => {}
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        if !rz_new.is_finite() {
            return Ok((
                x.clone(),
                mon.finish(&x, it as f64, Termination::NonFinite, 0),
            ));
        }
        if rz_new <= 0.0 {
            return Ok((
                x.clone(),
                mon.finish(&x, it as f64, Termination::Indefinite, 0),
            ));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let it = opts.max_iterations as f64;
    Ok((x.clone(), mon.finish(&x, it, Termination::MaxIterations, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;

    fn dense(rows: &[&[f64]]) -> DenseMatrix {
        let n = rows.len();
        DenseMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn identity_system_is_immediate() {
        let b = vec![1.0, -2.0, 3.0];
        let (x, s) =
            solve_bicgstab_l(&Identity(3), &Identity(3), &b, &KrylovOptions::default()).unwrap();
        assert_eq!(x, b);
        assert!(s.converged);
        assert_eq!(s.iterations, 0.25);
        assert_eq!(*s.residual_history.last().unwrap(), 0.0);
    }

    #[test]
    fn upper_triangular_2x2() {
        let a = dense(&[&[2.0, 1.0], &[0.0, 3.0]]);
        let (x, s) =
            solve_bicgstab_l(&a, &Identity(2), &[3.0, 3.0], &KrylovOptions::default()).unwrap();
        assert!(s.converged);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        // quarter quantization
        assert_eq!((s.iterations * 4.0).fract(), 0.0);
    }

    #[test]
    fn cg_closed_form_2x2() {
        let a = dense(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let (x, s) = solve_cg(&a, &Identity(2), &[1.0, 2.0], &KrylovOptions::default()).unwrap();
        assert!(s.converged);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn cg_exact_preconditioner_one_iteration() {
        let n = 10;
        let a = DenseMatrix::from_fn(n, n, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        let m = DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / (i + 1) as f64 } else { 0.0 });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 2.0).collect();
        let (_, s) = solve_cg(&a, &m, &b, &KrylovOptions::default()).unwrap();
        assert!(s.converged);
        assert_eq!(s.iterations, 1.0);
    }

    #[test]
    fn cg_reports_indefinite() {
        let a = dense(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let (_, s) = solve_cg(&a, &Identity(2), &[0.0, 1.0], &KrylovOptions::default()).unwrap();
        assert_eq!(s.termination, Termination::Indefinite);
        assert!(!s.converged);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = dense(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let (x, s) =
            solve_bicgstab_l(&a, &Identity(2), &[0.0, 0.0], &KrylovOptions::default()).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(s.iterations, 0.0);
        assert!(s.converged);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(
            solve_bicgstab_l(
                &Identity(3),
                &Identity(2),
                &[1.0, 2.0, 3.0],
                &KrylovOptions::default()
            ),
            Err(SapError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nan_is_reported() {
        let a = FnOperator::new(2, |x: &[f64], y: &mut [f64]| {
            y[0] = x[0] * f64::NAN;
            y[1] = x[1];
        });
        let (_, s) =
            solve_bicgstab_l(&a, &Identity(2), &[1.0, 1.0], &KrylovOptions::default()).unwrap();
        assert_eq!(s.termination, Termination::NonFinite);
    }

    #[test]
    fn ell_one_and_three_converge() {
        let a = dense(&[&[4.0, 1.0, 0.0], &[-1.0, 4.0, 1.0], &[0.0, -1.0, 4.0]]);
        for ell in [1, 3, 4] {
            let opts = KrylovOptions {
                ell,
                ..Default::default()
            };
            let (x, s) = solve_bicgstab_l(&a, &Identity(3), &[1.0, 2.0, 3.0], &opts).unwrap();
            assert!(s.converged, "ell = {ell}");
            assert!(relative_residual(&a, &x, &[1.0, 2.0, 3.0]) <= 1e-10);
        }
    }
}
