import numpy as np
import pytest

from fracdiffusion.krylov import SolveConfig, bicgstab


def test_solves_nonsymmetric_system(rng):
    n = 60
    A = np.eye(n) * 4 + rng.normal(scale=0.3, size=(n, n))
    b = rng.normal(size=n)
    res = bicgstab(lambda v: A @ v, None, b, cfg=SolveConfig(rtol=1e-12))
    assert res.converged and res.breakdown is None
    assert np.linalg.norm(b - A @ res.x) <= 1e-12 * np.linalg.norm(b)
    assert res.final_relative_residual <= 1e-12


def test_exact_preconditioner_converges_in_one_step(rng):
    n = 20
    A = np.eye(n) * 3 + np.triu(rng.normal(size=(n, n)), 1) * 0.2
    b = rng.normal(size=n)
    res = bicgstab(lambda v: A @ v, lambda v: np.linalg.solve(A, v), b)
    assert res.converged
    assert res.iterations <= 1


def test_half_step_counted_as_half():
    A = np.diag([2.0, 2.0, 2.0])
    res = bicgstab(lambda v: A @ v, None, np.ones(3))
    assert res.iterations == 0.5


def test_zero_rhs_returns_zero():
    res = bicgstab(lambda v: 5 * v, None, np.zeros(4))
    assert res.converged and res.iterations == 0
    np.testing.assert_array_equal(res.x, 0.0)


def test_initial_guess_is_used(rng):
    A = np.diag(np.arange(1.0, 11.0))
    b = rng.normal(size=10)
    x = np.linalg.solve(A, b)
    res = bicgstab(lambda v: A @ v, None, b, x0=x)
    assert res.iterations == 0


def test_iteration_cap_reports_nonconvergence(rng):
    n = 50
    A = np.diag(np.logspace(0, 8, n)) + np.diag(np.ones(n - 1), 1)
    b = rng.normal(size=n)
    res = bicgstab(lambda v: A @ v, None, b, cfg=SolveConfig(rtol=1e-14, max_iter=3))
    assert not res.converged
    assert res.iterations <= 3


def test_breakdown_reported():
    # rotation: the shadow residual becomes orthogonal to A p at once
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    res = bicgstab(lambda v: A @ v, None, np.array([1.0, 0.0]))
    assert res.breakdown in ("rho", "omega")


@pytest.mark.parametrize("kw", [{"rtol": 0.0}, {"max_iter": 0}, {"preconditioner": "ilu"}, {"bandwidth": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolveConfig(**kw)
