"""Friedrichs' mollifier and the tabulated 1-D partition function phi_hat.

phi_hat(x) is the convolution of the indicator of (-1/2, 1/2) with the
mollifier; it has no closed form, so values are tabulated once and
interpolated with cubic Hermite splines.  Derivatives of order >= 1 are
evaluated in closed form through derivatives of the mollifier.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import CubicHermiteSpline

#: Normalisation constant of the mollifier, to 18 digits.
K_REFERENCE = 0.221996908084039719

MAX_DERIVATIVE_ORDER = 6
EDGE_TOLERANCE = 1e-12


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


@dataclass(frozen=True)
class MollifierConstant:
    K: float
    precision: float


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 0.5 - EDGE_TOLERANCE
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - 4.0 * xi * xi))
    return out


def _integrate(f, a, b, epsabs=1e-16, epsrel=1e-13, limit=200):
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, err = quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit)
        except IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    return value, err


def compute_normalization(tol: float = 1e-14) -> MollifierConstant:
    """K = integral of exp(-1/(1-4x^2)) over (-1/2, 1/2).

    ``precision`` is the (pessimistic) QUADPACK error estimate.
    """
    f = lambda t: float(_bump(t))
    half, err = _integrate(f, 0.0, 0.5)
    if 2 * err > tol:
        raise QuadratureError(f"normalisation error estimate {2 * err:g} exceeds {tol:g}")
    return MollifierConstant(K=2 * half, precision=2 * err)


@lru_cache(maxsize=None)
def _normalization() -> float:
    return compute_normalization().K


def zeta_1d(x):
    """One-dimensional mollifier; zero for |x| >= 1/2."""
    return _bump(x) / _normalization()


def zeta(x):
    """Tensor-product mollifier on R^d; ``x`` has shape (..., d)."""
    x = np.asarray(x, dtype=float)
    return np.prod(zeta_1d(x), axis=-1)


# zeta^(k) = R_k(x, u) * zeta with u = 1/(1-4x^2).  R_k is stored as a dict
# {(i, j): c} meaning c * x**i * u**j, using du/dx = 8 x u^2 and
# d/dx exp(-u) = -8 x u^2 exp(-u).
def _next_prefactor(r):
    out: dict[tuple[int, int], float] = {}

    def add(key, c):
        out[key] = out.get(key, 0.0) + c

    for (i, j), c in r.items():
        if i > 0:
            add((i - 1, j), i * c)
        if j > 0:
            add((i + 1, j + 1), 8.0 * j * c)
        add((i + 1, j + 2), -8.0 * c)
    return {k: v for k, v in out.items() if v != 0.0}


@lru_cache(maxsize=None)
def derivative_prefactor(k: int) -> tuple[tuple[int, int, float], ...]:
    """Rational prefactor R_k with zeta^(k) = R_k * zeta, as (i, j, coeff) terms."""
    r = {(0, 0): 1.0}
    for _ in range(k):
        r = _next_prefactor(r)
    return tuple((i, j, c) for (i, j), c in sorted(r.items()))


def zeta_derivative(x, k: int, max_order: int = MAX_DERIVATIVE_ORDER):
    """k-th derivative of the 1-D mollifier, exactly zero off the open support."""
    if k < 0 or k > max_order:
        raise ValueError(f"derivative order {k} outside [0, {max_order}]")
    x = np.asarray(x, dtype=float)
    z = zeta_1d(x)
    if k == 0:
        return z
    out = np.zeros_like(x)
    inside = z > 0
    xi = x[inside]
    u = 1.0 / (1.0 - 4.0 * xi * xi)
    r = np.zeros_like(xi)
    for i, j, c in derivative_prefactor(k):
        r += c * xi**i * u**j
    out[inside] = r * z[inside]
    return out


@dataclass(frozen=True)
class PartitionFunction:
    """Tabulated phi_hat on a uniform grid of [-1, 1].

    ``samples`` holds rows (abscissa, value, first derivative).
    """

    samples: np.ndarray
    resolution: int
    interpolant: CubicHermiteSpline = field(repr=False)
    max_order: int = MAX_DERIVATIVE_ORDER

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = self.interpolant(np.clip(x, -1.0, 1.0))
        out = np.where(np.abs(x) >= 1.0, 0.0, out)
        return np.clip(out, 0.0, 1.0)

    def derivative(self, x, k: int):
        return phi_hat_derivative(self, x, k)

    def derivatives(self, x, order: int):
        """Stack of phi_hat^(j)(x) for j = 0..order, shape (order+1, *x.shape)."""
        x = np.asarray(x, dtype=float)
        out = np.empty((order + 1,) + x.shape)
        out[0] = self.value(x)
        for j in range(1, order + 1):
            out[j] = phi_hat_derivative(self, x, j)
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "phi_hat"])
            for x, v in self.samples[:, :2]:
                w.writerow([repr(float(x)), repr(float(v))])


def phi_hat_exact(x):
    """phi_hat by adaptive quadrature (slow; used for reference integrals)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    K = _normalization()
    f = lambda t: float(_bump(t))
    out = np.empty_like(x)
    for n, xv in enumerate(x.ravel()):
        a = max(xv - 0.5, -0.5)
        b = min(xv + 0.5, 0.5)
        if b <= a:
            out.flat[n] = 0.0
            continue
        out.flat[n] = 1.0 if xv == 0.0 else _integrate(f, a, b)[0] / K
    return out


def build_phi_table(resolution: int = 4097) -> PartitionFunction:
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    x = np.linspace(-1.0, 1.0, resolution)
    K = _normalization()
    f = lambda t: float(_bump(t))

    # phi_hat(x) = int_{x-1/2}^{1/2} zeta for x in [0, 1]; accumulate from x = 1 down
    pos = x[x >= 0.0]
    lower = pos - 0.5
    pieces = np.zeros_like(pos)
    for n in range(len(pos) - 1):
        pieces[n] = _integrate(f, lower[n], lower[n + 1])[0]
    tails = np.cumsum(pieces[::-1])[::-1] / K
    values = np.empty_like(x)
    values[x >= 0.0] = tails
    values[x < 0.0] = tails[::-1][: np.count_nonzero(x < 0.0)]
    # enforce exact symmetry of the table
    values = 0.5 * (values + values[::-1])
    values[0] = values[-1] = 0.0

    deriv = zeta_1d(x + 0.5) - zeta_1d(x - 0.5)
    spline = CubicHermiteSpline(x, values, deriv)
    samples = np.column_stack([x, values, deriv])
    return PartitionFunction(samples=samples, resolution=resolution, interpolant=spline)


@lru_cache(maxsize=None)
def default_partition_function() -> PartitionFunction:
    return build_phi_table()


def phi_hat_derivative(pf: PartitionFunction, x, k: int):
    """k-th derivative (k >= 1) of phi_hat: zeta^(k-1)(x+1/2) - zeta^(k-1)(x-1/2)."""
    if k < 1 or k > pf.max_order:
        raise ValueError(f"derivative order {k} outside [1, {pf.max_order}]")
    x = np.asarray(x, dtype=float)
    return zeta_derivative(x + 0.5, k - 1, pf.max_order) - zeta_derivative(
        x - 0.5, k - 1, pf.max_order
    )


def pou_value(pf: PartitionFunction, node, sigma: float, x, origin=None):
    """phi_i(x) = prod_k phi_hat((x_k - origin_k - i_k sigma) / sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    node = np.asarray(node, dtype=float)
    origin = np.zeros(x.shape[-1]) if origin is None else np.asarray(origin, dtype=float)
    t = (x - origin - node * sigma) / sigma
    return np.prod(pf.value(t), axis=-1)
