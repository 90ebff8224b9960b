//! End-to-end sparse solve: diagonal boosting, CM reordering, drop-off,
//! band assembly, partitioning, optional third-stage reordering, block
//! factorization, spike construction and the preconditioned Krylov solve.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::banded::{BandedMatrix, BlockFactors, FactorMode, PartitionLayout};
use crate::cm;
use crate::db::{self, DbResult};
use crate::error::{Result, SapError};
use crate::krylov::{self, KrylovOptions, LinearOperator, SolveStats};
use crate::real::Real;
use crate::sparse::{self, SparseMatrix};
use crate::spike::{CouplingBlocks, PrecondKind, SpikePreconditioner, SpikeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub use_db: bool,
    pub db_scaling: bool,
    pub use_cm: bool,
    pub third_stage: bool,
    /// Requested partition count; reduced automatically when infeasible.
    pub p: usize,
    /// Drop-off tolerance in `[0, 1]`.
    pub drop_tol: f64,
    pub precond: PrecondKind,
    pub krylov: KrylovOptions,
    pub boost_eps: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            use_db: true,
            db_scaling: false,
            use_cm: true,
            third_stage: false,
            p: 8,
            drop_tol: 0.0,
            precond: PrecondKind::Decoupled,
            krylov: KrylovOptions::default(),
            boost_eps: 1e-10,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(SapError::InvalidArgument(
                "partition count must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_tol) {
            return Err(SapError::InvalidArgument(format!(
                "drop tolerance {} not in [0, 1]",
                self.drop_tol
            )));
        }
        if !(self.boost_eps > 0.0 && self.boost_eps.is_finite()) {
            return Err(SapError::InvalidArgument(
                "boost epsilon must be positive".into(),
            ));
        }
        self.krylov.validate()
    }
}

/// Wall-clock seconds per stage; stages that did not run report 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    #[serde(rename = "T_DB")]
    pub db: f64,
    #[serde(rename = "T_CM")]
    pub cm: f64,
    /// Host-device transfer; always 0 here.
    #[serde(rename = "T_Dtransf")]
    pub dtransf: f64,
    #[serde(rename = "T_Drop")]
    pub drop: f64,
    #[serde(rename = "T_Asmbl")]
    pub asmbl: f64,
    #[serde(rename = "T_BC")]
    pub bc: f64,
    /// Block factorization, including third-stage reordering.
    #[serde(rename = "T_LU")]
    pub lu: f64,
    #[serde(rename = "T_SPK")]
    pub spk: f64,
    #[serde(rename = "T_LUrdcd")]
    pub lu_rdcd: f64,
    #[serde(rename = "T_Kry")]
    pub kry: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.db
            + self.cm
            + self.dtransf
            + self.drop
            + self.asmbl
            + self.bc
            + self.lu
            + self.spk
            + self.lu_rdcd
            + self.kry
    }

    /// `(name, seconds)` for every stage, in pipeline order.
    pub fn entries(&self) -> [(&'static str, f64); 10] {
        [
            ("T_DB", self.db),
            ("T_CM", self.cm),
            ("T_Dtransf", self.dtransf),
            ("T_Drop", self.drop),
            ("T_Asmbl", self.asmbl),
            ("T_BC", self.bc),
            ("T_LU", self.lu),
            ("T_SPK", self.spk),
            ("T_LUrdcd", self.lu_rdcd),
            ("T_Kry", self.kry),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n: usize,
    pub nnz: usize,
    /// Global half-bandwidth after reordering and drop-off.
    pub k: usize,
    /// Half-bandwidth before drop-off.
    pub k_before_drop: usize,
    pub per_partition_k: Vec<usize>,
    pub p: usize,
    pub precond: PrecondKind,
    /// Nonzeros over in-band positions of the assembled matrix.
    pub fill: f64,
    /// Degree of diagonal dominance of the assembled matrix; `None` when no
    /// row has off-diagonal entries.
    pub d_estimate: Option<f64>,
    pub dropped_entries: usize,
    pub pivot_boosts: usize,
    pub timings: Timings,
    /// Stages that ran, in order.
    pub stages: Vec<String>,
    pub notes: Vec<String>,
    pub stats: Option<SolveStats>,
    pub success: bool,
}

impl PipelineReport {
    /// Empty report for `a` under `cfg`.
    pub fn new(a: &SparseMatrix, cfg: &PipelineConfig) -> Self {
        Self {
            n: a.n(),
            nnz: a.nnz(),
            k: 0,
            k_before_drop: 0,
            per_partition_k: Vec::new(),
            p: cfg.p,
            precond: cfg.precond,
            fill: 0.0,
            d_estimate: None,
            dropped_entries: 0,
            pivot_boosts: 0,
            timings: Timings::default(),
            stages: Vec::new(),
            notes: Vec::new(),
            stats: None,
            success: false,
        }
    }

    /// Copy with all timings zeroed, for run-to-run comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }
}

fn timed<R>(slot: &mut f64, f: impl FnOnce() -> R) -> R {
    let t = Instant::now();
    let r = f();
    *slot += t.elapsed().as_secs_f64();
    r
}

/// Recorded transforms between the original and the reordered system.
#[derive(Debug, Clone, PartialEq)]
pub struct Transforms {
    pub db: Option<DbResult>,
    /// Symmetric CM permutation, `perm[new] = old`.
    pub cm_perm: Vec<usize>,
}

impl Transforms {
    /// Right-hand side of the reordered system.
    pub fn forward_rhs(&self, b: &[f64]) -> Vec<f64> {
        let b1 = match &self.db {
            Some(d) => d.apply_rhs(b),
            None => b.to_vec(),
        };
        self.cm_perm.iter().map(|&old| b1[old]).collect()
    }

    /// Solution of the original system from that of the reordered one.
    pub fn backward_solution(&self, y: &[f64]) -> Vec<f64> {
        let mut y1 = vec![0.0; y.len()];
        for (new, &old) in self.cm_perm.iter().enumerate() {
            y1[old] = y[new];
        }
        match &self.db {
            Some(d) => d.recover_solution(&y1),
            None => y1,
        }
    }

    /// Inverse of [`Transforms::forward_rhs`].
    pub fn backward_rhs(&self, c: &[f64]) -> Vec<f64> {
        let mut c1 = vec![0.0; c.len()];
        for (new, &old) in self.cm_perm.iter().enumerate() {
            c1[old] = c[new];
        }
        match &self.db {
            Some(d) => {
                let mut b = vec![0.0; c.len()];
                for (new, &old) in d.perm.iter().enumerate() {
                    b[old] = c1[new] / d.row_scale[old];
                }
                b
            }
            None => c1,
        }
    }
}

/// Apply the DB and CM stages. Returns the reordered matrix and the
/// transforms.
pub fn reorder(
    a: &SparseMatrix,
    cfg: &PipelineConfig,
    report: &mut PipelineReport,
) -> Result<(SparseMatrix, Transforms)> {
    let n = a.n();
    let (a1, dbr) = if cfg.use_db {
        report.stages.push("DB".into());
        let r = timed(&mut report.timings.db, || {
            db::diagonal_boosting(a, cfg.db_scaling)
        })?;
        (r.apply(a), Some(r))
    } else {
        (a.clone(), None)
    };
    let (a2, cm_perm) = if cfg.use_cm {
        report.stages.push("CM".into());
        let (a2, perm, note) = timed(&mut report.timings.cm, || {
            let g = cm::build_graph(&a1);
            let r = cm::cm_reorder(&g, cfg.seed);
            let before = g.bandwidth_under(&(0..n).collect::<Vec<_>>());
            if r.achieved_k < before {
                (a1.permute(&r.perm, &r.perm), r.perm, None)
            } else {
                let note = format!(
                    "CM bandwidth {} not below {before}; order kept",
                    r.achieved_k
                );
                (a1, (0..n).collect(), Some(note))
            }
        });
        report.notes.extend(note);
        (a2, perm)
    } else {
        (a1, (0..n).collect())
    };
    Ok((a2, Transforms { db: dbr, cm_perm }))
}

type BoxedPrecond = Box<dyn LinearOperator + Send>;

fn build_precond<T: Real>(
    banded: &BandedMatrix<T>,
    layout: PartitionLayout,
    cfg: &PipelineConfig,
    report: &mut PipelineReport,
) -> Result<BoxedPrecond> {
    let mut kind = cfg.precond;
    if kind == PrecondKind::Coupled && layout.p() < 2 {
        report
            .notes
            .push("single partition: coupled preconditioner is a direct block solve".into());
        kind = PrecondKind::Decoupled;
    }
    let eps = cfg.boost_eps;
    let pre: BoxedPrecond = match kind {
        PrecondKind::None => Box::new(SpikePreconditioner::<T>::identity(banded.n())),
        PrecondKind::Diagonal => Box::new(SpikePreconditioner::diagonal(banded, eps)),
        PrecondKind::Decoupled | PrecondKind::Coupled => {
            let coupled = kind == PrecondKind::Coupled;
            report.stages.push("LU".into());
            let factors = timed(&mut report.timings.lu, || {
                if cfg.third_stage {
                    let (res, layout) = cm::third_stage(banded, &layout, cfg.seed)?;
                    let perms: Vec<Vec<usize>> = res.into_iter().map(|r| r.perm).collect();
                    BlockFactors::factor_reordered(banded, &layout, &perms, eps)
                } else {
                    let mode = if coupled {
                        FactorMode::LuAndUl
                    } else {
                        FactorMode::LuOnly
                    };
                    BlockFactors::factor(banded, &layout, mode, eps)
                }
            })?;
            if cfg.third_stage {
                report.stages.insert(report.stages.len() - 1, "CM3".into());
            }
            report.per_partition_k = factors.layout().per_partition_k().to_vec();
            report.pivot_boosts = factors.total_boosts();
            if coupled {
                report.stages.push("BC".into());
                let cb = timed(&mut report.timings.bc, || {
                    CouplingBlocks::extract(banded, factors.layout())
                })?;
                report.stages.push("SPK".into());
                let mut spikes = timed(&mut report.timings.spk, || {
                    if factors.has_ul() {
                        SpikeSet::tips(&factors, &cb)
                    } else {
                        SpikeSet::full(&factors, &cb)
                    }
                })?;
                report.stages.push("LUrdcd".into());
                timed(&mut report.timings.lu_rdcd, || spikes.factor_reduced(eps))?;
                Box::new(SpikePreconditioner::coupled(factors, cb, spikes)?)
            } else {
                Box::new(SpikePreconditioner::decoupled(factors))
            }
        }
    };
    report.precond = kind;
    Ok(pre)
}

/// Solve `A x = b` through the full pipeline. Returns the solution of the
/// original system and the stage report. A Krylov failure is returned as
/// [`SapError::NotConverged`] carrying the report.
pub fn solve_sparse(
    a: &SparseMatrix,
    b: &[f64],
    cfg: &PipelineConfig,
) -> Result<(Vec<f64>, PipelineReport)> {
    cfg.validate()?;
    if !a.is_square() {
        return Err(SapError::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let n = a.n();
    if b.len() != n {
        return Err(SapError::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let mut report = PipelineReport::new(a, cfg);

    let (a2, transforms) = reorder(a, cfg, &mut report)?;
    report.k_before_drop = a2.half_bandwidth();

    let (a3, k) = if cfg.drop_tol > 0.0 {
        report.stages.push("Drop".into());
        timed(&mut report.timings.drop, || {
            sparse::drop_off(&a2, cfg.drop_tol)
        })?
    } else {
        (a2.clone(), report.k_before_drop)
    };
    report.dropped_entries = a2.nnz() - a3.nnz();
    report.k = k;

    report.stages.push("Asmbl".into());
    let (banded, fill) = timed(&mut report.timings.asmbl, || {
        sparse::assemble_banded(&a3, k)
    })?;
    drop(a3);
    report.fill = fill;
    report.d_estimate = banded.diagonal_dominance();

    let max_p = PartitionLayout::max_partitions(n, k);
    let p = cfg.p.min(max_p).max(1);
    if p < cfg.p {
        report.notes.push(format!(
            "partition count reduced from {} to {p} (N = {n}, K = {k})",
            cfg.p
        ));
    }
    let layout = PartitionLayout::new(n, p, k)?;
    report.p = p;
    report.per_partition_k = vec![k; p];

    let precond = if cfg.krylov.mixed_precision {
        build_precond(&banded.convert::<f32>(), layout, cfg, &mut report)?
    } else {
        build_precond(&banded, layout, cfg, &mut report)?
    };
    drop(banded);

    let rhs = transforms.forward_rhs(b);
    report.stages.push("Kry".into());
    let (y, stats) = timed(&mut report.timings.kry, || {
        krylov::solve(&a2, precond.as_ref(), &rhs, &cfg.krylov)
    })?;
    report.success = stats.converged;
    let residual = stats.final_relative_residual;
    let termination = stats.termination;
    report.stats = Some(stats);
    if !report.success {
        return Err(SapError::NotConverged {
            reason: format!("{termination:?}"),
            residual,
            report: Box::new(report),
        });
    }
    Ok((transforms.backward_solution(&y), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use crate::krylov::KrylovMethod;
    use proptest::prelude::*;

    fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
        krylov::relative_residual(a, x, b)
    }

    #[test]
    fn banded_spd_direct_with_cg() {
        let a = gallery::poisson_2d(6);
        let b = gallery::random_vector(36, 1);
        let cfg = PipelineConfig {
            use_db: false,
            use_cm: false,
            p: 1,
            krylov: KrylovOptions {
                method: KrylovMethod::Cg,
                ..Default::default()
            },
            ..Default::default()
        };
        let (x, r) = solve_sparse(&a, &b, &cfg).unwrap();
        assert!(residual(&a, &x, &b) <= 1e-10);
        assert_eq!(r.timings.db, 0.0);
        assert!(!r.stages.contains(&"DB".to_string()));
    }

    #[test]
    fn shuffled_diagonal_restored_by_db() {
        let n = 20;
        let labels = gallery::shuffled_labels(n, 4);
        let t: Vec<_> = (0..n).map(|i| (labels[i], i, 1.0 + i as f64)).collect();
        let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
        let b = gallery::random_vector(n, 2);
        let cfg = PipelineConfig {
            p: 1,
            ..Default::default()
        };
        let (x, r) = solve_sparse(&a, &b, &cfg).unwrap();
        assert_eq!(r.k, 0);
        assert!(r.stats.as_ref().unwrap().iterations <= 1.0);
        assert!(residual(&a, &x, &b) <= 1e-12);
    }

    #[test]
    fn transforms_round_trip() {
        let a = gallery::random_sparse(40, 0.1, 9);
        let cfg = PipelineConfig {
            db_scaling: true,
            ..Default::default()
        };
        let mut report = PipelineReport::new(&a, &cfg);
        let (_, t) = reorder(&a, &cfg, &mut report).unwrap();
        let v = gallery::random_vector(40, 3);
        let back = t.backward_rhs(&t.forward_rhs(&v));
        for (p, q) in back.iter().zip(&v) {
            assert!((p - q).abs() <= 1e-14 * q.abs().max(1.0));
        }
    }

    #[test]
    fn reordered_system_equivalent() {
        // (reordered A) y = reordered b  <=>  A x = b
        let a = gallery::random_sparse(15, 0.2, 5);
        let cfg = PipelineConfig {
            db_scaling: true,
            ..Default::default()
        };
        let mut report = PipelineReport::new(&a, &cfg);
        let (a2, t) = reorder(&a, &cfg, &mut report).unwrap();
        let x = gallery::random_vector(15, 8);
        let b = a.mul_vec(&x);
        // y = D_c^{-1} P x
        let d = t.db.as_ref().unwrap();
        let y1: Vec<f64> = x.iter().zip(&d.col_scale).map(|(v, s)| v / s).collect();
        let y: Vec<f64> = t.cm_perm.iter().map(|&o| y1[o]).collect();
        let lhs = a2.mul_vec(&y);
        let rhs = t.forward_rhs(&b);
        for (p, q) in lhs.iter().zip(&rhs) {
            assert!((p - q).abs() <= 1e-10 * q.abs().max(1.0));
        }
        let xr = t.backward_solution(&y);
        for (p, q) in xr.iter().zip(&x) {
            assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
    }

    #[test]
    fn poisson_coupled_manufactured() {
        let a = gallery::poisson_2d(32);
        let xs = crate::io::manufactured_solution(a.n());
        let b = a.mul_vec(&xs);
        let cfg = PipelineConfig {
            p: 4,
            precond: PrecondKind::Coupled,
            ..Default::default()
        };
        let (x, _) = solve_sparse(&a, &b, &cfg).unwrap();
        assert!(crate::io::relative_error(&x, &xs) <= 0.01);
    }

    #[test]
    fn partition_count_reduced_with_note() {
        let a = gallery::poisson_2d(4);
        let b = vec![1.0; 16];
        let cfg = PipelineConfig {
            use_cm: false,
            use_db: false,
            p: 8,
            ..Default::default()
        };
        let (_, r) = solve_sparse(&a, &b, &cfg).unwrap();
        assert_eq!(r.k, 4);
        assert_eq!(r.p, 2);
        assert!(r.notes.iter().any(|s| s.contains("reduced")));
    }

    #[test]
    fn stage_set_follows_flags() {
        let a = gallery::convection_diffusion_2d(8, 1.0, 0.5);
        let b = vec![1.0; 64];
        let cfg = PipelineConfig {
            p: 2,
            drop_tol: 1e-3,
            precond: PrecondKind::Coupled,
            ..Default::default()
        };
        let (_, r) = solve_sparse(&a, &b, &cfg).unwrap();
        assert_eq!(
            r.stages,
            ["DB", "CM", "Drop", "Asmbl", "LU", "BC", "SPK", "LUrdcd", "Kry"]
        );
        let cfg = PipelineConfig {
            use_db: false,
            use_cm: false,
            third_stage: true,
            p: 2,
            ..Default::default()
        };
        let (_, r) = solve_sparse(&a, &b, &cfg).unwrap();
        assert_eq!(r.stages, ["Asmbl", "CM3", "LU", "Kry"]);
        assert!(r.timings.entries().iter().all(|&(_, t)| t >= 0.0));
        assert_eq!(r.timings.dtransf, 0.0);
    }

    #[test]
    fn non_convergence_carries_report() {
        let a = gallery::convection_diffusion_2d(10, 3.0, -2.0);
        let b = vec![1.0; 100];
        let cfg = PipelineConfig {
            precond: PrecondKind::None,
            krylov: KrylovOptions {
                max_iterations: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        match solve_sparse(&a, &b, &cfg) {
            Err(e @ SapError::NotConverged { .. }) => {
                assert_eq!(e.stage(), "Krylov");
                if let SapError::NotConverged { report, .. } = e {
                    assert!(!report.success);
                    assert!(report.stats.is_some());
                }
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn singular_reported_from_db() {
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0), (2, 2, 1.0)],
        )
        .unwrap();
        let err = solve_sparse(&a, &[1.0; 3], &PipelineConfig::default()).unwrap_err();
        assert_eq!(err.stage(), "DB");
    }

    #[test]
    fn mixed_precision_converges() {
        let a = gallery::convection_diffusion_2d(12, 2.0, 1.0);
        let b = gallery::random_vector(144, 0);
        let cfg = PipelineConfig {
            p: 3,
            precond: PrecondKind::Coupled,
            krylov: KrylovOptions {
                mixed_precision: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let (x, _) = solve_sparse(&a, &b, &cfg).unwrap();
        assert!(residual(&a, &x, &b) <= 1e-9);
    }

    fn flags() -> impl Strategy<Value = (bool, bool, bool, bool, usize, PrecondKind)> {
        (
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            1usize..5,
            prop_oneof![
                Just(PrecondKind::Coupled),
                Just(PrecondKind::Decoupled),
                Just(PrecondKind::Diagonal),
                Just(PrecondKind::None)
            ],
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn solution_invariant_under_bookkeeping(seed in 0u64..1000, f in flags()) {
            let (use_db, db_scaling, use_cm, third_stage, p, precond) = f;
            let a = gallery::convection_diffusion_2d(7, 1.5, -0.5);
            let relabel = gallery::shuffled_labels(49, seed);
            let a = a.permute(&relabel, &(0..49).collect::<Vec<_>>());
            let b = gallery::random_vector(49, seed);
            let cfg = PipelineConfig { use_db, db_scaling, use_cm, third_stage, p, precond, seed, ..Default::default() };
            match solve_sparse(&a, &b, &cfg) {
                Ok((x, r)) => {
                    prop_assert!(residual(&a, &x, &b) <= cfg.krylov.rel_tol * 10.0);
                    prop_assert_eq!(r.stages.contains(&"DB".to_string()), use_db);
                    prop_assert_eq!(r.stages.contains(&"CM".to_string()), use_cm);
                }
                Err(SapError::NotConverged { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
