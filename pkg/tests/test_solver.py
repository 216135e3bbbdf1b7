import numpy as np
import pytest
import scipy.sparse as sp

from pufem.solver import estimate_condition, lanczos_extremes, solve_components, solve_pcg


def spd(n, seed=0, shift=0.5):
    X = np.random.default_rng(seed).standard_normal((n, n))
    return X @ X.T + shift * np.eye(n)


def test_identity_one_iteration():
    b = np.arange(1.0, 6.0)
    r = solve_pcg(np.eye(5), b)
    assert r.iterations == 1 and r.converged
    np.testing.assert_allclose(r.coefficients, b)


def test_diagonal_system_one_iteration():
    A = sp.diags(np.arange(1.0, 11.0)).tocsr()
    r = solve_pcg(A, np.ones(10))
    assert r.iterations == 1
    np.testing.assert_allclose(r.coefficients, 1 / np.arange(1.0, 11.0))


def test_pcg_matches_direct_and_energy_monotone():
    A = spd(40)
    b = np.random.default_rng(1).standard_normal(40)
    r = solve_pcg(A, b, keep_iterates=True)
    x = np.linalg.solve(A, b)
    assert r.relative_residual <= 1e-12 and not r.breakdown
    np.testing.assert_allclose(r.coefficients, x, rtol=1e-8)
    energy = [(xi - x) @ A @ (xi - x) for xi in r.history]
    assert all(e1 <= e0 * (1 + 1e-12) + 1e-300 for e0, e1 in zip(energy, energy[1:]))


def test_breakdown_flag_on_indefinite():
    A = np.array([[1.0, 2.0], [2.0, 1.0]])
    r = solve_pcg(A, np.array([1.0, -1.0]))
    assert r.breakdown and not r.converged


def test_zero_diagonal_rejected():
    with pytest.raises(ValueError):
        solve_pcg(np.array([[0.0, 1.0], [1.0, 2.0]]), np.ones(2))


def test_zero_rhs_and_components():
    A = spd(5)
    assert solve_pcg(A, np.zeros(5)).iterations == 0
    reps = solve_components(A, np.ones((5, 2)))
    assert len(reps) == 2 and all(r.converged for r in reps)


def test_condition_trivial_cases():
    assert estimate_condition(np.eye(7)).cond == pytest.approx(1.0)
    assert estimate_condition(np.diag([1.0, 1e6])).cond == pytest.approx(1.0)
    assert estimate_condition(np.diag([1.0, 1e6]), scaled=False).cond == pytest.approx(1e6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_condition_matches_dense(seed):
    A = spd(50, seed)
    d = 1 / np.sqrt(np.diag(A))
    ev = np.linalg.eigvalsh(d[:, None] * A * d[None, :])
    est = estimate_condition(A)
    assert est.status == "ok" and est.converged
    assert est.cond == pytest.approx(ev[-1] / ev[0], rel=1e-2)


def test_condition_invariant_under_diagonal_rescaling():
    A = spd(30, 3)
    s = np.random.default_rng(4).uniform(0.1, 10, 30)
    B = s[:, None] * A * s[None, :]
    assert estimate_condition(A).cond == pytest.approx(estimate_condition(B).cond, rel=1e-8)


def test_indefinite_and_singular_flags():
    assert estimate_condition(np.array([[1.0, 2.0], [2.0, 1.0]])).status == "indefinite"
    sing = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert estimate_condition(sing).status == "singular"
    assert estimate_condition(np.diag([1.0, 0.0])).status == "singular"
    assert estimate_condition(np.diag([1.0, -2.0])).status == "indefinite"


def test_lanczos_extremes_diagonal():
    vals = np.linspace(1, 5, 100)
    lo, hi, _, conv = lanczos_extremes(lambda x: vals * x, 100, tol=1e-10)
    assert conv and lo == pytest.approx(1.0) and hi == pytest.approx(5.0)
