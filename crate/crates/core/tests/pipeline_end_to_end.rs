use sap_core::krylov::{KrylovMethod, KrylovOptions};
use sap_core::sparse::drop_off;
use sap_core::{gallery, solve_sparse, PipelineConfig, PrecondKind, SapError, SparseMatrix};

fn dense_solve(a: &SparseMatrix, b: &[f64]) -> Vec<f64> {
    let n = a.n();
    let mut m = a.to_dense();
    let mut x = b.to_vec();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        x.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for j in c..n {
                m[r][j] -= f * m[c][j];
            }
            x[r] -= f * x[c];
        }
    }
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|j| m[c][j] * x[j]).sum();
        x[c] = (x[c] - s) / m[c][c];
    }
    x
}

fn rel_diff(x: &[f64], y: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = y.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[test]
fn banded_spd_matches_dense_oracle() {
    let a = gallery::poisson_2d(10);
    let b = gallery::random_vector(100, 5);
    let cfg = PipelineConfig {
        p: 1,
        precond: PrecondKind::Decoupled,
        krylov: KrylovOptions {
            method: KrylovMethod::Cg,
            ..Default::default()
        },
        use_db: false,
        ..Default::default()
    };
    let (x, report) = solve_sparse(&a, &b, &cfg).unwrap();
    assert!(rel_diff(&x, &dense_solve(&a, &b)) <= 1e-10);
    assert_eq!(report.timings.db, 0.0);
}

#[test]
fn nonsymmetric_random_sparse_with_scaling() {
    for seed in 0..5 {
        let a = gallery::random_sparse(80, 0.05, seed);
        let b = gallery::random_vector(80, seed);
        let cfg = PipelineConfig {
            db_scaling: true,
            p: 2,
            precond: PrecondKind::Coupled,
            seed,
            ..Default::default()
        };
        match solve_sparse(&a, &b, &cfg) {
            Ok((x, _)) => assert!(rel_diff(&x, &dense_solve(&a, &b)) <= 1e-6, "seed {seed}"),
            Err(SapError::NotConverged { .. }) => {}
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
}

#[test]
fn drop_off_removes_tiny_far_entry() {
    let n = 200;
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 0.7));
        if i + 1 < n {
            t.push((i, i + 1, -0.1));
            t.push((i + 1, i, -0.1));
        }
    }
    t.push((0, 100, 1e-12));
    let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
    assert!((a.norm_fro() - 10.0).abs() < 0.2);
    let (d, k) = drop_off(&a, 1e-6).unwrap();
    assert_eq!(k, 1);
    assert_eq!(d.nnz(), a.nnz() - 1);
    assert_eq!(drop_off(&a, 1.0).unwrap().1, 0);
    let (same, k0) = drop_off(&a, 0.0).unwrap();
    assert_eq!((same, k0), (a.clone(), 100));

    let b = gallery::random_vector(n, 1);
    let cfg = PipelineConfig {
        use_db: false,
        use_cm: false,
        drop_tol: 1e-6,
        p: 4,
        ..Default::default()
    };
    let (x, report) = solve_sparse(&a, &b, &cfg).unwrap();
    assert_eq!(report.k, 1);
    assert_eq!(report.k_before_drop, 100);
    // Krylov runs on the undropped matrix
    assert!(rel_diff(&a.mul_vec(&x), &b) <= 1e-9);
}

#[test]
fn third_stage_pipeline_shrinks_partition_bandwidths() {
    let a = gallery::shuffled_path_blocks(60, 4, 10, 2);
    let t: Vec<_> = (0..a.n())
        .flat_map(|i| (i.saturating_sub(10)..(i + 11).min(a.n())).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, a.get(i, j)))
        .filter(|t| t.2 != 0.0)
        .collect();
    let s = SparseMatrix::from_triplets(a.n(), a.n(), &t).unwrap();
    let b = gallery::random_vector(a.n(), 3);
    for precond in [PrecondKind::Decoupled, PrecondKind::Coupled] {
        let cfg = PipelineConfig {
            use_db: false,
            use_cm: false,
            third_stage: true,
            p: 4,
            precond,
            ..Default::default()
        };
        let (x, report) = solve_sparse(&s, &b, &cfg).unwrap();
        assert!(
            report.per_partition_k.iter().all(|&k| k <= 2),
            "{:?}",
            report.per_partition_k
        );
        assert!(rel_diff(&s.mul_vec(&x), &b) <= 1e-9);
    }
}

#[test]
fn report_serializes_with_stage_names() {
    let a = gallery::convection_diffusion_2d(10, 1.0, 1.0);
    let (_, report) = solve_sparse(&a, &vec![1.0; 100], &PipelineConfig::default()).unwrap();
    let v = serde_json::to_value(&report).unwrap();
    for key in [
        "T_DB",
        "T_CM",
        "T_Dtransf",
        "T_Drop",
        "T_Asmbl",
        "T_BC",
        "T_LU",
        "T_SPK",
        "T_LUrdcd",
        "T_Kry",
    ] {
        assert!(v["timings"].get(key).is_some(), "{key}");
    }
    let back: sap_core::PipelineReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, report);
}
