//! Python bindings: sparse and banded matrices, the SPIKE preconditioners,
//! the Krylov solvers, the reorderings and the full sparse pipeline.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sap_core::banded::{BandedMatrix as CoreBanded, BlockFactors, FactorMode, PartitionLayout};
use sap_core::krylov::{self, KrylovMethod, KrylovOptions};
use sap_core::spike::{CouplingBlocks, PrecondKind, SpikePreconditioner as CorePrecond, SpikeSet};
use sap_core::{
    cm, db, gallery, io, PipelineConfig, SapError as CoreError, SparseMatrix as CoreSparse,
};

create_exception!(
    sap_py,
    SapError,
    PyException,
    "Solver failure; the message names the stage."
);
create_exception!(
    sap_py,
    NotConvergedError,
    SapError,
    "The Krylov iteration did not converge."
);
create_exception!(
    sap_py,
    StructurallySingularError,
    SapError,
    "No perfect matching exists."
);

fn to_py(e: CoreError) -> PyErr {
    let msg = format!("{} stage: {e}", e.stage());
    match e {
        CoreError::NotConverged { .. } => NotConvergedError::new_err(msg),
        CoreError::StructurallySingular { .. } => StructurallySingularError::new_err(msg),
        _ => SapError::new_err(msg),
    }
}

fn json_to_py<'py>(
    py: Python<'py>,
    text: serde_json::Result<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let text = text.map_err(|e| SapError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_kind(kind: &str) -> PyResult<PrecondKind> {
    kind.parse::<PrecondKind>()
        .map_err(|e| SapError::new_err(e.to_string()))
}

fn parse_method(name: &str) -> PyResult<KrylovMethod> {
    match name {
        "bicgstab2" | "bicgstab" | "bicgstab_l" => Ok(KrylovMethod::BiCgStabL),
        "cg" => Ok(KrylovMethod::Cg),
        "auto" => Ok(KrylovMethod::Auto),
        other => Err(SapError::new_err(format!(
            "unknown Krylov method {other:?}"
        ))),
    }
}

/// Compressed sparse row matrix.
#[pyclass(name = "SparseMatrix", module = "sap_py", frozen)]
struct SparseMatrix {
    inner: CoreSparse,
}

#[pymethods]
impl SparseMatrix {
    /// Square `n x n` matrix from coordinate lists (duplicates are summed).
    #[new]
    fn new(n: usize, rows: Vec<usize>, cols: Vec<usize>, values: Vec<f64>) -> PyResult<Self> {
        if rows.len() != cols.len() || rows.len() != values.len() {
            return Err(SapError::new_err(
                "rows, cols and values must have equal length",
            ));
        }
        let t: Vec<_> = rows
            .into_iter()
            .zip(cols)
            .zip(values)
            .map(|((i, j), v)| (i, j, v))
            .collect();
        Ok(Self {
            inner: CoreSparse::from_triplets(n, n, &t).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn identity(n: usize) -> Self {
        Self {
            inner: CoreSparse::identity(n),
        }
    }

    /// Read a Matrix Market file.
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_matrix_market(path).map_err(to_py)?,
        })
    }

    /// 5-point Laplacian on an `m x m` grid.
    #[staticmethod]
    fn poisson_2d(m: usize) -> Self {
        Self {
            inner: gallery::poisson_2d(m),
        }
    }

    /// Upwinded convection-diffusion operator on an `m x m` grid.
    #[staticmethod]
    fn convection_diffusion_2d(m: usize, bx: f64, by: f64) -> Self {
        Self {
            inner: gallery::convection_diffusion_2d(m, bx, by),
        }
    }

    fn write(&self, path: &str) -> PyResult<()> {
        io::write_matrix_market(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    fn half_bandwidth(&self) -> usize {
        self.inner.half_bandwidth()
    }

    fn matvec(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.inner.ncols() {
            return Err(SapError::new_err("dimension mismatch"));
        }
        Ok(self.inner.mul_vec(&x))
    }

    fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.inner.triplets().collect()
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        self.inner.to_dense()
    }

    fn __repr__(&self) -> String {
        format!(
            "SparseMatrix(n={}, nnz={})",
            self.inner.n(),
            self.inner.nnz()
        )
    }
}

/// Dense banded matrix of half-bandwidth `k`.
#[pyclass(name = "BandedMatrix", module = "sap_py", frozen)]
struct BandedMatrix {
    inner: CoreBanded,
}

#[pymethods]
impl BandedMatrix {
    /// From `(i, j, value)` entries, all within the band.
    #[new]
    fn new(n: usize, k: usize, entries: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreBanded::from_triplets(&entries, n, k).map_err(to_py)?,
        })
    }

    /// Random full-band matrix with degree of diagonal dominance `d`.
    #[staticmethod]
    fn random(n: usize, k: usize, d: f64, seed: u64) -> Self {
        Self {
            inner: gallery::random_banded(n, k, d, seed),
        }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    fn matvec(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.inner.n() {
            return Err(SapError::new_err("dimension mismatch"));
        }
        let mut y = vec![0.0; x.len()];
        self.inner.matvec(&x, &mut y);
        Ok(y)
    }

    /// Largest `d` with `|a_ii| >= d * sum_{j != i} |a_ij|` for every row.
    fn diagonal_dominance(&self) -> Option<f64> {
        self.inner.diagonal_dominance()
    }

    fn __repr__(&self) -> String {
        format!("BandedMatrix(n={}, k={})", self.inner.n(), self.inner.k())
    }
}

/// Coupled, decoupled, diagonal or identity preconditioner built from a
/// banded matrix split into `p` partitions.
#[pyclass(name = "SpikePreconditioner", module = "sap_py", frozen)]
struct SpikePreconditioner {
    inner: CorePrecond<f64>,
}

#[pymethods]
impl SpikePreconditioner {
    #[new]
    #[pyo3(signature = (a, p, kind = "coupled", boost_eps = 1e-10))]
    fn new(a: &BandedMatrix, p: usize, kind: &str, boost_eps: f64) -> PyResult<Self> {
        let a = &a.inner;
        let inner = match parse_kind(kind)? {
            PrecondKind::None => CorePrecond::identity(a.n()),
            PrecondKind::Diagonal => CorePrecond::diagonal(a, boost_eps),
            kind => {
                let layout = PartitionLayout::new(a.n(), p, a.k()).map_err(to_py)?;
                let coupled = kind == PrecondKind::Coupled && p > 1;
                let mode = if coupled {
                    FactorMode::LuAndUl
                } else {
                    FactorMode::LuOnly
                };
                let f = BlockFactors::factor(a, &layout, mode, boost_eps).map_err(to_py)?;
                if coupled {
                    let cb = CouplingBlocks::extract(a, &layout).map_err(to_py)?;
                    let mut s = SpikeSet::tips(&f, &cb).map_err(to_py)?;
                    s.factor_reduced(boost_eps).map_err(to_py)?;
                    CorePrecond::coupled(f, cb, s).map_err(to_py)?
                } else {
                    CorePrecond::decoupled(f)
                }
            }
        };
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.kind()).to_lowercase()
    }

    fn apply(&self, b: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.apply(&b).map_err(to_py)
    }
}

/// Preconditioned Krylov solve of a banded system. Returns `(x, stats)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (a, b, precond, method = "bicgstab2", ell = 2, tol = 1e-10, max_it = 1000))]
fn krylov_solve<'py>(
    py: Python<'py>,
    a: &BandedMatrix,
    b: Vec<f64>,
    precond: &SpikePreconditioner,
    method: &str,
    ell: usize,
    tol: f64,
    max_it: usize,
) -> PyResult<(Vec<f64>, Bound<'py, PyAny>)> {
    let opts = KrylovOptions {
        method: parse_method(method)?,
        ell,
        rel_tol: tol,
        max_iterations: max_it,
        ..Default::default()
    };
    let (x, stats) = py
        .detach(|| krylov::solve(&a.inner, &precond.inner, &b, &opts))
        .map_err(to_py)?;
    Ok((x, json_to_py(py, serde_json::to_string(&stats))?))
}

/// Solve `A x = b` through the full reordering and preconditioning pipeline.
/// Returns `(x, report)`.
#[pyfunction]
#[pyo3(signature = (
    a, b, *, precond = "decoupled", partitions = 8, drop_tol = 0.0, krylov = "bicgstab2", ell = 2,
    tol = 1e-10, max_it = 1000, use_db = true, use_cm = true, third_stage = false, db_scaling = false,
    mixed_precision = false, spd = false, boost_eps = 1e-10, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    a: &SparseMatrix,
    b: Vec<f64>,
    precond: &str,
    partitions: usize,
    drop_tol: f64,
    krylov: &str,
    ell: usize,
    tol: f64,
    max_it: usize,
    use_db: bool,
    use_cm: bool,
    third_stage: bool,
    db_scaling: bool,
    mixed_precision: bool,
    spd: bool,
    boost_eps: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Bound<'py, PyAny>)> {
    let cfg = PipelineConfig {
        use_db,
        db_scaling,
        use_cm,
        third_stage,
        p: partitions,
        drop_tol,
        precond: parse_kind(precond)?,
        krylov: KrylovOptions {
            method: parse_method(krylov)?,
            ell,
            rel_tol: tol,
            abs_tol: 0.0,
            max_iterations: max_it,
            mixed_precision,
            spd,
        },
        boost_eps,
        seed,
    };
    let (x, report) = py
        .detach(|| sap_core::solve_sparse(&a.inner, &b, &cfg))
        .map_err(to_py)?;
    Ok((x, json_to_py(py, serde_json::to_string(&report))?))
}

/// Row permutation (`perm[new] = old`) maximizing the diagonal product, with
/// optional row and column scalings.
#[pyfunction]
#[pyo3(signature = (a, scaling = false))]
fn diagonal_boosting<'py>(
    py: Python<'py>,
    a: &SparseMatrix,
    scaling: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let r = db::diagonal_boosting(&a.inner, scaling).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("perm", r.perm)?;
    d.set_item("row_scale", r.row_scale)?;
    d.set_item("col_scale", r.col_scale)?;
    Ok(d)
}

/// Cuthill-McKee symmetric permutation and the bandwidth it achieves.
#[pyfunction]
#[pyo3(signature = (a, seed = 0))]
fn cm_reorder(a: &SparseMatrix, seed: u64) -> (Vec<usize>, usize) {
    let r = cm::cm_reorder(&cm::build_graph(&a.inner), seed);
    (r.perm, r.achieved_k)
}

#[pyfunction]
fn manufactured_solution(n: usize) -> Vec<f64> {
    io::manufactured_solution(n)
}

#[pyfunction]
fn relative_error(x: Vec<f64>, x_star: Vec<f64>) -> PyResult<f64> {
    if x.len() != x_star.len() {
        return Err(SapError::new_err("dimension mismatch"));
    }
    Ok(io::relative_error(&x, &x_star))
}

#[pymodule]
fn sap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("SapError", py.get_type::<SapError>())?;
    m.add("NotConvergedError", py.get_type::<NotConvergedError>())?;
    m.add(
        "StructurallySingularError",
        py.get_type::<StructurallySingularError>(),
    )?;
    m.add_class::<SparseMatrix>()?;
    m.add_class::<BandedMatrix>()?;
    m.add_class::<SpikePreconditioner>()?;
    m.add_function(wrap_pyfunction!(krylov_solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(diagonal_boosting, m)?)?;
    m.add_function(wrap_pyfunction!(cm_reorder, m)?)?;
    m.add_function(wrap_pyfunction!(manufactured_solution, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    Ok(())
}
