import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracdiffusion.errors import LinearSolveError
from fracdiffusion.kernels import WeightingFunction
from fracdiffusion.krylov import SolveConfig
from fracdiffusion.problems import example1, example2, exampleA1
from fracdiffusion.reference import dense_reference_solve, dense_wsgd_matrix
from fracdiffusion.solver import HistoryState, ProblemSpec, SolutionField, discretize, solve, step_direct, step_fast


def _heat_spec(gamma, alpha=2.0, p=0.5, b=0.0, xi=lambda x, t: 1.0 + 0 * x):
    return ProblemSpec(
        x_left=0.0, x_right=1.0, horizon=0.5, gamma=gamma, alpha=alpha, p=p,
        lam=WeightingFunction.tempered(b), xi=xi,
        source=lambda x, t: np.cos(t) * x * (1 - x),
        initial=lambda x: np.sin(np.pi * x), left=lambda t: 0.0, right=lambda t: 0.1 * t,
    )


def test_gamma_near_one_reduces_to_backward_euler():
    # c_0 -> 1/tau and c_k -> 0, so the scheme becomes implicit Euler with central differences
    spec = _heat_spec(1 - 1e-9)
    N, M = 16, 10
    disc = discretize(spec, N, M)
    field, _ = solve(spec, disc, SolveConfig(rtol=1e-14))
    h, tau = disc.h, disc.tau
    A = np.eye(N - 1) / tau - (np.diag(-2 * np.ones(N - 1)) + np.diag(np.ones(N - 2), 1)
                               + np.diag(np.ones(N - 2), -1)) / h**2
    u = spec.initial(disc.x)
    for n in range(1, M + 1):
        t = disc.t[n]
        rhs = u[1:-1] / tau + spec.source(disc.x[1:-1], t)
        rhs[-1] += spec.right(t) / h**2
        u = np.concatenate([[0.0], np.linalg.solve(A, rhs), [spec.right(t)]])
    np.testing.assert_allclose(field.final, u, atol=1e-7)


@settings(max_examples=12, deadline=None)
@given(
    st.sampled_from([0.2, 0.5, 0.9]),
    st.sampled_from([1.1, 1.5, 1.9]),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_direct_scheme_matches_dense_reference(gamma, alpha, p):
    spec = example1(gamma, alpha, 1.0, p).spec
    field, _ = solve(spec, discretize(spec, 17, 8), SolveConfig(rtol=1e-14))
    ref = dense_reference_solve(spec, 17, 8)
    assert np.max(np.abs(field.u - ref)) < 1e-10


def test_dense_reference_matrix_rows():
    A = dense_wsgd_matrix(2.0, 0.5, 6)
    np.testing.assert_allclose(A[3], [0, 0, 1, -2, 1, 0, 0], atol=1e-15)
    assert not A[0].any() and not A[-1].any()


@pytest.mark.parametrize("precond", ["skew_circulant", "banded", "none"])
def test_preconditioners_give_same_solution(precond):
    spec = example1(0.5, 1.5, 1.0, 0.3).spec
    disc = discretize(spec, 64, 8)
    base, _ = solve(spec, disc, SolveConfig(direct=True))
    field, report = solve(spec, disc, SolveConfig(rtol=1e-13, preconditioner=precond))
    assert report.path == "bicgstab"
    assert np.max(np.abs(field.u - base.u)) < 1e-10


def test_gsf_path_used_for_constant_coefficient_and_built_once():
    prob = example2(0.5, 1.5, 1.0, 0.5)
    disc = discretize(prob.auxiliary, 64, 16)
    field, report = solve(prob.auxiliary, disc)
    assert report.path == "gsf" and report.solver_builds == 1
    ref, _ = solve(prob.auxiliary, disc, SolveConfig(direct=True))
    assert np.max(np.abs(field.u - ref.u)) < 1e-11


def test_exact_gsf_rejected_for_variable_coefficient():
    spec = example1(0.5, 1.5, 1.0, 0.5).spec
    with pytest.raises(ValueError):
        solve(spec, discretize(spec, 16, 4), SolveConfig(preconditioner="exact_gsf"))


def test_constant_coefficient_detected_without_hint():
    spec = _heat_spec(0.5, alpha=1.5)
    _, report = solve(spec, discretize(spec, 32, 4))
    assert report.path == "gsf"


def test_fast_scheme_converges_to_direct_scheme_in_time():
    # the two schemes weight lambda differently on the first interval; the gap is O(tau^2)
    spec = exampleA1(0.5, 1.5, 1.0, 0.5).spec
    gaps = []
    for M in (50, 100, 200):
        direct, _ = solve(spec, discretize(spec, 10, M), SolveConfig(rtol=1e-14))
        fast, report = solve(spec, discretize(spec, 10, M, "fast", soe_epsilon=1e-12), SolveConfig(rtol=1e-14))
        assert report.n_exp > 0
        gaps.append(np.max(np.abs(fast.u - direct.u)))
    assert gaps[-1] < 1e-7
    assert math.log2(gaps[0] / gaps[1]) > 1.8 and math.log2(gaps[1] / gaps[2]) > 1.8


def test_fast_scheme_single_step_needs_no_history():
    spec = example1(0.4, 1.6, 2.0, 0.5).spec
    disc = discretize(spec, 20, 1, "fast")
    assert disc.soe is None
    fast, report = solve(spec, disc)
    assert report.n_exp == 0
    # one dense solve with the local weight on the diagonal
    lw, x = disc.local_weight, disc.x
    A = lw * np.eye(21) - spec.xi(x, 1.0)[:, None] * dense_wsgd_matrix(1.6, 0.5, 20) / disc.h**1.6
    rhs = lw * spec.initial(x) + spec.source(x, 1.0)
    u = np.linalg.solve(A[1:-1, 1:-1], rhs[1:-1])
    np.testing.assert_allclose(fast.final[1:-1], u, atol=1e-11)


def test_fast_scheme_rejects_non_exponential_weight():
    spec = example1(0.5, 1.5, 1.0, 0.5).spec
    custom = ProblemSpec(**{**spec.__dict__, "lam": WeightingFunction.custom(lambda t: 1 / (1 + np.asarray(t)))})
    with pytest.raises(ValueError):
        discretize(custom, 16, 4, "fast")


def test_final_storage_matches_full_storage():
    spec = example1(0.5, 1.5, 1.0, 0.5).spec
    for scheme in ("direct", "fast"):
        disc = discretize(spec, 32, 8, scheme)
        full, _ = solve(spec, disc)
        last, _ = solve(spec, disc, store="final")
        assert not last.is_full and last.levels.tolist() == [8]
        np.testing.assert_array_equal(last.final, full.final)


def test_steppers_agree_with_driver():
    spec = example1(0.3, 1.7, 1.0, 0.6).spec
    disc = discretize(spec, 24, 6)
    full, _ = solve(spec, disc)
    U = np.empty_like(full.u)
    U[0] = full.u[0]
    field = SolutionField(disc.x, disc.t, np.arange(7), U)
    for j in range(6):
        step_direct(field, j, spec, disc)
    np.testing.assert_allclose(U, full.u, atol=1e-13)

    disc = discretize(spec, 24, 6, "fast")
    full, _ = solve(spec, disc)
    state = HistoryState(np.zeros((disc.soe.n_exp, 23)), full.u[0, 1:-1].copy())
    for j in range(1, 7):
        u, _ = step_fast(state, spec, disc)
        np.testing.assert_allclose(u, full.u[j], atol=1e-13)


def test_run_report_accounting():
    spec = example1(0.5, 1.5, 1.0, 0.5).spec
    _, report = solve(spec, discretize(spec, 64, 8))
    assert len(report.iterations) == 8
    assert report.iters_avg == pytest.approx(np.mean(report.iterations))
    assert report.mem_bytes == 8 * report.stored_scalars > 0
    assert report.solver_builds == 8
    assert report.wall_time > 0


def test_linear_solve_failure_reports_level():
    spec = example1(0.5, 1.9, 1.0, 0.5).spec
    with pytest.raises(LinearSolveError) as info:
        solve(spec, discretize(spec, 256, 4), SolveConfig(preconditioner="none", max_iter=2))
    assert info.value.level == 1


@pytest.mark.parametrize("kw", [dict(N=4, M=4), dict(N=16, M=0)])
def test_discretize_validates_sizes(kw):
    with pytest.raises(ValueError):
        discretize(example1(0.5, 1.5, 1.0, 0.5).spec, **kw)


def test_problem_spec_validation():
    with pytest.raises(ValueError):
        _heat_spec(1.0)
    with pytest.raises(ValueError):
        _heat_spec(0.5, alpha=2.5)
    with pytest.raises(ValueError):
        _heat_spec(0.5, p=1.5)


def test_discrete_solution_decays_without_forcing(rng):
    # positive xi and homogeneous data: the weighted discrete norm never grows
    xi_vals = rng.uniform(0.2, 4.0, 65)
    x_grid = np.linspace(0, 1, 65)
    spec = ProblemSpec(
        x_left=0.0, x_right=1.0, horizon=1.0, gamma=0.6, alpha=1.7, p=0.3,
        lam=WeightingFunction.tempered(1.0), xi=lambda x, t: np.interp(x, x_grid, xi_vals),
        source=lambda x, t: 0 * x, initial=lambda x: np.sin(3 * np.pi * x) + x * (1 - x),
        left=lambda t: 0.0, right=lambda t: 0.0,
    )
    disc = discretize(spec, 64, 16)
    field, _ = solve(spec, disc)
    xi = np.interp(disc.x, x_grid, xi_vals)[1:-1]
    norms = [math.sqrt(disc.h * np.sum(u[1:-1] ** 2 / xi)) for u in field.u]
    assert max(norms) <= norms[0] + 1e-12
