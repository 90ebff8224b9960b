"""Smoke test for the sap_py extension. Run after `maturin develop`."""

import numpy as np

import sap_py


def check_banded():
    n, k = 400, 5
    a = sap_py.BandedMatrix.random(n, k, 1.0, 7)
    assert (a.n, a.k) == (n, k)
    assert a.diagonal_dominance() >= 1.0 - 1e-12
    dense = np.array([[a.get(i, j) for j in range(n)] for i in range(n)])
    b = np.random.default_rng(1).standard_normal(n)
    assert np.allclose(a.matvec(list(b)), dense @ b)

    m = sap_py.SpikePreconditioner(a, 4, kind="coupled")
    assert m.kind == "coupled"
    x, stats = sap_py.krylov_solve(a, list(b), m, tol=1e-10)
    assert stats["converged"], stats
    assert np.allclose(x, np.linalg.solve(dense, b), rtol=1e-7, atol=1e-9)


def check_pipeline():
    a = sap_py.SparseMatrix.convection_diffusion_2d(20, 1.0, 2.0)
    xs = sap_py.manufactured_solution(a.n)
    b = a.matvec(xs)
    x, report = sap_py.solve(a, b, precond="coupled", partitions=4)
    assert report["success"]
    assert "T_Kry" in report["timings"]
    assert sap_py.relative_error(x, xs) < 1e-6

    dense = np.array(a.to_dense())
    assert np.allclose(dense @ np.array(xs), b)


def check_reorderings():
    rows = [0, 1, 2]
    cols = [2, 0, 1]
    a = sap_py.SparseMatrix(3, rows, cols, [5.0, 3.0, 2.0])
    db = sap_py.diagonal_boosting(a, scaling=True)
    permuted = np.array(a.to_dense())[db["perm"], :]
    assert np.all(np.diag(permuted) != 0.0)

    p = sap_py.SparseMatrix.poisson_2d(8)
    perm, k = sap_py.cm_reorder(p, seed=0)
    assert sorted(perm) == list(range(p.n))
    assert k <= p.half_bandwidth()


def check_errors():
    singular = sap_py.SparseMatrix(3, [0, 1, 2], [0, 0, 2], [1.0, 1.0, 1.0])
    try:
        sap_py.solve(singular, [1.0, 1.0, 1.0])
    except sap_py.StructurallySingularError:
        pass
    else:
        raise AssertionError("expected StructurallySingularError")

    hard = sap_py.SparseMatrix.convection_diffusion_2d(20, 5.0, 5.0)
    try:
        sap_py.solve(hard, [1.0] * hard.n, precond="none", max_it=1)
    except sap_py.NotConvergedError:
        pass
    else:
        raise AssertionError("expected NotConvergedError")
    assert issubclass(sap_py.NotConvergedError, sap_py.SapError)


if __name__ == "__main__":
    check_banded()
    check_pipeline()
    check_reorderings()
    check_errors()
    print("sap_py smoke test passed")
