"""Smoothed fields on a PUFEM space: evaluation, errors, moments, Biot-Savart."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numba
import numpy as np

from .mesh import ParticleField, QuadratureRule
from .space import PufemSpace, polynomial_coefficients

CHUNK = 32768

# the system TBB is too old for numba; avoid the warning unless the user picked a layer
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"


@dataclass(frozen=True)
class SmoothedField:
    """u = sum_k c_k psi_k; ``coefficients`` is (n,) or (n, n_components)."""

    space: PufemSpace
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape[0] != self.space.n:
            raise ValueError(f"expected {self.space.n} coefficients per component, got {c.shape[0]}")
        object.__setattr__(self, "coefficients", c)

    @property
    def n_components(self) -> int:
        return 1 if self.coefficients.ndim == 1 else self.coefficients.shape[1]

    def evaluate(self, x, chunk: int = CHUNK) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((len(x),) + self.coefficients.shape[1:])
        for s in range(0, len(x), chunk):
            dofs, vals = self.space.eval_basis(x[s : s + chunk])
            out[s : s + chunk] = np.einsum("ql,ql...->q...", vals, self.coefficients[dofs])
        return out

    def gradient(self, x, chunk: int = CHUNK) -> np.ndarray:
        """(N, d) for scalar fields, (N, n_components, d) otherwise."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.space.dim
        out = np.empty((len(x),) + self.coefficients.shape[1:] + (d,))
        for s in range(0, len(x), chunk):
            dofs, betas, vals = self.space.eval_basis_derivatives(x[s : s + chunk], 1)
            c = self.coefficients[dofs]
            for k in range(d):
                b = int(np.flatnonzero((betas.sum(axis=1) == 1) & (betas[:, k] == 1))[0])
                out[s : s + chunk, ..., k] = np.einsum("ql,ql...->q...", vals[b], c)
        return out

    def sample_csv(self, points, path):
        points = np.atleast_2d(points)
        vals = self.evaluate(points).reshape(len(points), -1)
        d = points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(d)] + [f"u{c}" for c in range(vals.shape[1])])
            for p, v in zip(points, vals):
                w.writerow([repr(float(t)) for t in (*p, *v)])


def _weighted_norm(rule: QuadratureRule, diff_fn, chunk: int) -> float:
    total = 0.0
    for s in range(0, len(rule), chunk):
        diff = diff_fn(rule.nodes[s : s + chunk])
        sq = diff.reshape(len(diff), -1) ** 2
        total += float(rule.weights[s : s + chunk] @ sq.sum(axis=1))
    return float(np.sqrt(total))


def l2_error(field: SmoothedField | None, reference, rule: QuadratureRule, chunk: int = CHUNK) -> float:
    """Discrete L2 norm of u_sigma - reference; ``field=None`` means the zero field."""

    def diff(x):
        ref = np.asarray(reference(x), dtype=float)
        return ref if field is None else field.evaluate(x).reshape(ref.shape) - ref

    return _weighted_norm(rule, diff, chunk)


def h1_seminorm_error(field: SmoothedField | None, reference_gradient, rule: QuadratureRule,
                      chunk: int = CHUNK) -> float:
    def diff(x):
        ref = np.asarray(reference_gradient(x), dtype=float)
        return ref if field is None else field.gradient(x).reshape(ref.shape) - ref

    return _weighted_norm(rule, diff, chunk)


def _monomial(x, alpha) -> np.ndarray:
    return np.prod(np.asarray(x, dtype=float) ** np.asarray(alpha), axis=-1)


def moment(source, alpha, rule: QuadratureRule | None = None) -> np.ndarray:
    """sum_i Gamma_i x_i^alpha for particles; sum_q w_q u(x_q) x_q^alpha for fields."""
    if isinstance(source, ParticleField):
        return _monomial(source.positions, alpha) @ source.circulations
    if rule is None:
        raise ValueError("a quadrature rule is required for field moments")
    return (rule.weights * _monomial(rule.nodes, alpha)) @ source.evaluate(rule.nodes)


def assembled_moment(field: SmoothedField, alpha, mass) -> np.ndarray:
    """a_h(u_sigma, x^alpha) through the assembled mass matrix.

    Pairs integrated by reference tables and by the particle rule are mixed in
    a_h, so this (not a single quadrature sum) is the functional that matches
    the particle moments to solver tolerance for |alpha| <= P.
    """
    p = polynomial_coefficients(field.space, {tuple(int(a) for a in alpha): 1.0})
    return (mass @ p) @ field.coefficients


def weak_error_proxy(field: SmoothedField, particles: ParticleField, rule: QuadratureRule,
                     n_tests: int = 8, seed: int = 0) -> float:
    """max_k |(u_sigma - omega_h)(g_k)| over a fixed family of smooth plane waves.

    Stands in for a negative-norm error, which has no practical evaluator.
    """
    rng = np.random.default_rng(seed)
    d = particles.positions.shape[1]
    ks = rng.normal(scale=2 * np.pi, size=(n_tests, d))
    phases = rng.uniform(0, 2 * np.pi, size=n_tests)
    u = field.evaluate(rule.nodes).reshape(len(rule), -1)
    gam = particles.circulations.reshape(particles.count, -1)
    worst = 0.0
    for k, ph in zip(ks, phases):
        gq = np.cos(rule.nodes @ k + ph)
        gp = np.cos(particles.positions @ k + ph)
        worst = max(worst, float(np.max(np.abs((rule.weights * gq) @ u - gp @ gam))))
    return worst


# Biot-Savart -----------------------------------------------------------------

@numba.njit(parallel=True, cache=True)
def _bs3(targets, src, w, om, eta2, om_t, subtract):
    n = targets.shape[0]
    out = np.zeros((n, 3))
    skipped = np.zeros(n, dtype=np.int64)
    for i in numba.prange(n):
        x0, x1, x2 = targets[i, 0], targets[i, 1], targets[i, 2]
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for q in range(src.shape[0]):
            r0 = x0 - src[q, 0]
            r1 = x1 - src[q, 1]
            r2 = x2 - src[q, 2]
            rr = r0 * r0 + r1 * r1 + r2 * r2
            if rr < eta2:
                skipped[i] += 1
                continue
            o0, o1, o2 = om[q, 0], om[q, 1], om[q, 2]
            if subtract:
                o0 -= om_t[i, 0]
                o1 -= om_t[i, 1]
                o2 -= om_t[i, 2]
            f = w[q] / (rr * np.sqrt(rr))
            a0 += f * (r1 * o2 - r2 * o1)
            a1 += f * (r2 * o0 - r0 * o2)
            a2 += f * (r0 * o1 - r1 * o0)
        c = -1.0 / (4.0 * np.pi)
        out[i, 0] = c * a0
        out[i, 1] = c * a1
        out[i, 2] = c * a2
    return out, skipped


@numba.njit(parallel=True, cache=True)
def _bs2(targets, src, w, om, eta2, om_t, subtract):
    n = targets.shape[0]
    out = np.zeros((n, 2))
    skipped = np.zeros(n, dtype=np.int64)
    for i in numba.prange(n):
        a0 = 0.0
        a1 = 0.0
        for q in range(src.shape[0]):
            r0 = targets[i, 0] - src[q, 0]
            r1 = targets[i, 1] - src[q, 1]
            rr = r0 * r0 + r1 * r1
            if rr < eta2:
                skipped[i] += 1
                continue
            o = om[q] - om_t[i] if subtract else om[q]
            f = w[q] * o / rr
            a0 -= f * r1
            a1 += f * r0
        out[i, 0] = a0 / (2.0 * np.pi)
        out[i, 1] = a1 / (2.0 * np.pi)
    return out, skipped


def _corner_sum(antiderivative, x, lo, hi):
    """int_box f(x - y) dy from an antiderivative H of f: u = x - y runs over [x - hi, x - lo]."""
    d = x.shape[1]
    total = np.zeros(len(x))
    for corner in np.ndindex(*(2,) * d):
        y = np.where(np.array(corner) == 1, hi, lo)
        sign = (-1) ** sum(corner)
        total += sign * antiderivative(x - y)
    return total


def _h3(u):
    """Antiderivative of u0/|u|^3 in all three variables."""
    a, b, c = u[:, 0], u[:, 1], u[:, 2]
    r = np.sqrt(a * a + b * b + c * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(a != 0, a * np.arctan(b * c / (a * r)), 0.0)
        lb = np.where(c != 0, c * np.log(b + r), 0.0)
        lc = np.where(b != 0, b * np.log(c + r), 0.0)
    return t - lb - lc


def _h2(u):
    """Antiderivative of u0/|u|^2 in both variables."""
    a, b = u[:, 0], u[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(a != 0, a * np.arctan(b / a), 0.0)
        lg = np.where(b != 0, 0.5 * b * np.log(a * a + b * b), 0.0)
    return t + lg


def box_kernel_integral(x, lo, hi) -> np.ndarray:
    """int_box (x - y)/|x - y|^d dy in closed form, for targets x (N, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = x.shape[1]
    h = _h3 if d == 3 else _h2
    out = np.empty_like(x)
    for k in range(d):
        perm = np.roll(np.arange(d), -k)
        out[:, k] = _corner_sum(h, x[:, perm], lo[perm], hi[perm])
    return out


@dataclass(frozen=True)
class VelocityResult:
    velocity: np.ndarray
    skipped: int


def biot_savart_direct(source_points, source_weights, source_values, targets,
                       eta: float, box=None, target_values=None) -> VelocityResult:
    """Direct-summation Biot-Savart velocity; terms with |x - y| < eta are skipped.

    3D: u(x) = -1/(4 pi) sum_q w_q (x - y_q)/|x - y_q|^3 x omega(y_q).
    2D: u(x) = 1/(2 pi) sum_q w_q (-(x-y)_2, (x-y)_1)/|x - y|^2 omega(y_q).

    With ``box=(lo, hi)`` and ``target_values`` = omega at the targets, omega(x)
    is subtracted under the sum and added back through the exact box integral
    of the kernel, which removes the leading near-field quadrature error.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    src = np.ascontiguousarray(source_points, dtype=float)
    tgt = np.ascontiguousarray(np.atleast_2d(targets), dtype=float)
    w = np.ascontiguousarray(source_weights, dtype=float)
    om = np.ascontiguousarray(source_values, dtype=float)
    d = src.shape[1]
    subtract = box is not None
    if subtract:
        if target_values is None:
            raise ValueError("singularity subtraction needs omega at the targets")
        om_t = np.ascontiguousarray(target_values, dtype=float)
    else:
        om_t = np.zeros((len(tgt), 3)) if d == 3 else np.zeros(len(tgt))
    kernel = _bs3 if d == 3 else _bs2
    vel, skipped = kernel(tgt, src, w, om, eta * eta, om_t, subtract)
    if subtract:
        g = box_kernel_integral(tgt, *box)
        if d == 3:
            vel += -np.cross(g, om_t) / (4 * np.pi)
        else:
            vel += np.stack([-g[:, 1], g[:, 0]], axis=1) * om_t[:, None] / (2 * np.pi)
    return VelocityResult(vel, int(skipped.sum()))
