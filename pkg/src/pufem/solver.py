"""Jacobi-preconditioned CG and Lanczos condition estimates for the scaled system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal


class _MatrixOperator:
    def __init__(self, A):
        self.A = A

    def matvec(self, x):
        return self.A @ x

    def diagonal(self):
        return self.A.diagonal() if sp.issparse(self.A) else np.diag(self.A).copy()

    @property
    def n(self):
        return self.A.shape[0]


def _as_operator(system):
    if hasattr(system, "matvec") and hasattr(system, "diagonal"):
        return system
    return _MatrixOperator(system)


@dataclass
class SolveReport:
    coefficients: np.ndarray
    iterations: int
    relative_residual: float
    breakdown: bool = False
    converged: bool = False
    history: list = field(default_factory=list, repr=False)


def solve_pcg(system, rhs=None, tol: float = 1e-12, maxiter: int = 2000, x0=None,
              keep_iterates: bool = False) -> SolveReport:
    """CG with diagonal scaling; stops on the relative preconditioned residual.

    A non-positive curvature p^T A p marks a breakdown (indefinite operator);
    the current iterate is returned instead of raising.
    """
    op = _as_operator(system)
    b = np.asarray(system.rhs if rhs is None else rhs, dtype=float)
    diag = np.asarray(op.diagonal(), dtype=float)
    if np.any(diag == 0):
        raise ValueError("operator has a zero diagonal entry; Jacobi scaling undefined")
    dinv = 1.0 / diag

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - op.matvec(x) if x0 is not None else b.copy()
    z = dinv * r
    rz = float(r @ z)
    bnorm = np.sqrt(abs(float(b @ (dinv * b))))
    history = [x.copy()] if keep_iterates else []
    if bnorm == 0.0:
        return SolveReport(x, 0, 0.0, False, True, history)
    res = np.sqrt(abs(rz)) / bnorm
    if res <= tol:
        return SolveReport(x, 0, res, False, True, history)
    p = z.copy()
    for it in range(1, maxiter + 1):
        Ap = op.matvec(p)
        curv = float(p @ Ap)
        if curv <= 0.0:
            return SolveReport(x, it, res, True, False, history)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = float(r @ z)
        res = np.sqrt(abs(rz_new)) / bnorm
        if keep_iterates:
            history.append(x.copy())
        if res <= tol:
            return SolveReport(x, it, res, False, True, history)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return SolveReport(x, maxiter, res, False, False, history)


def solve_components(system, rhs, **kwargs) -> list[SolveReport]:
    rhs = np.asarray(rhs)
    if rhs.ndim == 1:
        return [solve_pcg(system, rhs, **kwargs)]
    return [solve_pcg(system, rhs[:, c], **kwargs) for c in range(rhs.shape[1])]


@dataclass(frozen=True)
class ConditionEstimate:
    """Extreme Ritz values of D^-1/2 A D^-1/2.

    ``status`` is "ok", "indefinite" or "singular"; ``cond`` is inf unless ok.
    """

    cond: float
    lambda_min: float
    lambda_max: float
    iterations: int
    status: str
    converged: bool


def lanczos_extremes(matvec, n: int, tol: float = 1e-8, maxiter: int | None = None,
                     seed: int = 0, singular_tol: float = 1e-10):
    """Extreme Ritz values by Lanczos with full reorthogonalisation.

    Returns (theta_min, theta_max, iterations, converged).  Stops early once the
    smallest Ritz value falls below ``singular_tol`` times the largest: Ritz
    values bound the spectrum from inside, so the flag is already certain.
    """
    maxiter = min(n, 1000) if maxiter is None else min(maxiter, n)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    V = np.zeros((maxiter + 1, n))
    V[0] = v
    alphas, betas = [], []
    beta = 0.0
    theta_min = theta_max = 0.0
    for j in range(maxiter):
        w = matvec(V[j])
        if j > 0:
            w -= beta * V[j - 1]
        a = float(w @ V[j])
        alphas.append(a)
        w -= a * V[j]
        for _ in range(2):
            w -= V[: j + 1].T @ (V[: j + 1] @ w)
        beta = float(np.linalg.norm(w))
        theta, s = eigh_tridiagonal(np.array(alphas), np.array(betas), select="a")
        theta_min, theta_max = theta[0], theta[-1]
        scale = max(abs(theta_min), abs(theta_max))
        if beta <= 1e-14 * max(scale, 1.0):
            return theta_min, theta_max, j + 1, True
        res_min = beta * abs(s[-1, 0])
        res_max = beta * abs(s[-1, -1])
        if res_min <= tol * scale and res_max <= tol * scale:
            return theta_min, theta_max, j + 1, True
        if theta_min <= singular_tol * theta_max and j >= 2:
            return theta_min, theta_max, j + 1, False
        betas.append(beta)
        V[j + 1] = w / beta
    return theta_min, theta_max, maxiter, False


def estimate_condition(system, scaled: bool = True, tol: float = 1e-8,
                       maxiter: int | None = None, seed: int = 0,
                       singular_tol: float = 1e-10) -> ConditionEstimate:
    """cond(D^-1 A) via the similar symmetric matrix D^-1/2 A D^-1/2."""
    op = _as_operator(system)
    diag = np.asarray(op.diagonal(), dtype=float)
    n = len(diag)
    if scaled:
        if np.any(diag < 0):
            return ConditionEstimate(np.inf, -np.inf, np.nan, 0, "indefinite", True)
        if np.any(diag == 0):
            return ConditionEstimate(np.inf, 0.0, np.nan, 0, "singular", True)
        s = 1.0 / np.sqrt(diag)
        matvec = lambda x: s * op.matvec(s * x)
    else:
        matvec = op.matvec
    lo, hi, its, conv = lanczos_extremes(matvec, n, tol, maxiter, seed, singular_tol)
    if lo < -singular_tol * abs(hi):
        status = "indefinite"
    elif lo <= singular_tol * abs(hi):
        status = "singular"
    else:
        status = "ok"
    cond = hi / lo if status == "ok" else np.inf
    return ConditionEstimate(float(cond), float(lo), float(hi), its, status, conv)
