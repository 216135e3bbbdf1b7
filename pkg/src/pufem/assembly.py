"""Assembly of the stabilised system A_h = a_h + eps * j and the particle rhs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
import scipy.sparse as sp

from .mesh import ParticleField, QuadratureRule
from .mollifier import default_partition_function, phi_hat_derivative, phi_hat_exact
from .space import PufemSpace, monomial_derivative, multi_indices

DEFAULT_EPSILON = 1e-3
MAX_QUAD_ORDER = 1024


class ReferenceTableError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReferenceIntegralTable:
    """Integrals over the reference element (0,1)^d of local basis products.

    Rows/columns follow the space's local ordering (corner m, then alpha).
    ``one_d[r][m, a, n, b]`` = int_0^1 D^r f_{m,a} D^r f_{n,b} with
    f_{m,a}(t) = phi_hat(t - m) (t - m)^a.
    """

    mass: np.ndarray
    stab: np.ndarray
    quad_order: int
    one_d: np.ndarray


def _one_d_factors(t, P: int, order: int):
    """D^r f_{m,a}(t) using phi_hat by adaptive quadrature; shape (order+1, 2, P+1, len(t))."""
    pf = default_partition_function()
    out = np.zeros((order + 1, 2, P + 1, len(t)))
    for m in (0, 1):
        s = t - m
        phi = [phi_hat_exact(s)] + [phi_hat_derivative(pf, s, j) for j in range(1, order + 1)]
        for a in range(P + 1):
            for r in range(order + 1):
                acc = np.zeros_like(s)
                for j in range(r + 1):
                    if r - j <= a:
                        acc += comb(r, j) * phi[j] * monomial_derivative(s, a, r - j)
                out[r, m, a] = acc
    return out


def _one_d_integrals(P: int, order: int, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    w = 0.5 * w
    f = _one_d_factors(t, P, order)
    return np.einsum("rmaq,rnbq,q->rmanb", f, f, w)


@lru_cache(maxsize=None)
def precompute_reference_tables(P: int, d: int, quad_order: int = 16, tol: float = 1e-12):
    """Gauss-Legendre reference integrals, doubling the order until entries settle.

    Convergence means no entry moves by more than ``tol`` times
    max(1, largest entry) when the order doubles.
    """
    if quad_order < 8:
        raise ValueError("quad_order must be at least 8")
    order = P + 1
    n = quad_order
    prev = _one_d_integrals(P, order, n)
    while True:
        if 2 * n > MAX_QUAD_ORDER:
            raise ReferenceTableError(f"reference integrals not converged at order {n}")
        cur = _one_d_integrals(P, order, 2 * n)
        n *= 2
        if np.max(np.abs(cur - prev)) <= tol * max(1.0, np.abs(cur).max()):
            break
        prev = cur
    one_d = cur

    corners = np.array(list(itertools.product((0, 1), repeat=d)))
    alphas = multi_indices(d, P)
    m = np.repeat(corners, len(alphas), axis=0)
    a = np.tile(alphas, (len(corners), 1))

    def product(gamma):
        out = np.ones((len(m), len(m)))
        for k in range(d):
            out *= one_d[gamma[k]][m[:, k][:, None], a[:, k][:, None], m[:, k][None, :], a[:, k][None, :]]
        return out

    mass = product(np.zeros(d, dtype=int))
    stab = sum(product(g) for g in multi_indices(d, P + 1, exact=True))
    mass = 0.5 * (mass + mass.T)
    stab = 0.5 * (stab + stab.T)
    return ReferenceIntegralTable(mass, stab, n, one_d)


def _symmetric(A: sp.spmatrix) -> sp.csr_matrix:
    """Rebuild from the upper triangle so A == A.T bitwise."""
    upper = sp.triu(A, format="csr")
    strict = sp.triu(A, k=1, format="csr")
    out = (upper + strict.T).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def _scatter(space: PufemSpace, elements, local, mask=None):
    dofs = space.element_dofs(elements)
    nl = space.n_local
    rows = np.broadcast_to(dofs[:, :, None], (len(dofs), nl, nl))
    cols = np.broadcast_to(dofs[:, None, :], (len(dofs), nl, nl))
    vals = np.broadcast_to(local, (len(dofs), nl, nl))
    if mask is not None:
        rows, cols, vals = rows[mask], cols[mask], vals[mask]
    return sp.coo_matrix(
        (np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=(space.n, space.n)
    ).tocsr()


def assemble_mass(space: PufemSpace, rule: QuadratureRule, quad_order: int = 16):
    """a_h(psi_k, psi_l).

    Pairs where either function has cut support (its patch is not covered by
    interior elements) are integrated with ``rule``; all other pairs use the
    reference tables on the interior elements they share.
    """
    ref = precompute_reference_tables(space.P, space.dim, quad_order)
    cut = space.dof_cut_support
    scale = space.sigma**space.dim

    interior = space.cls.interior
    A_ref = sp.csr_matrix((space.n, space.n))
    if len(interior):
        dofs = space.element_dofs(interior)
        unc = ~cut[dofs]
        mask = unc[:, :, None] & unc[:, None, :]
        A_ref = _scatter(space, interior, scale * ref.mass, mask)

    A_quad = sp.csr_matrix((space.n, space.n))
    if len(rule) and cut.any():
        eid, _, _ = space.locate(rule.nodes)
        el_has_cut = cut[space.element_dofs(space.cls.elements)].any(axis=1)
        keep = el_has_cut[eid]
        if keep.any():
            B = space.basis_matrix(rule.nodes[keep])
            W = sp.diags(rule.weights[keep])
            A_quad = (B.T @ W @ B).tocoo()
            sel = cut[A_quad.row] | cut[A_quad.col]
            A_quad = sp.coo_matrix(
                (A_quad.data[sel], (A_quad.row[sel], A_quad.col[sel])), shape=(space.n, space.n)
            ).tocsr()
    return _symmetric(A_ref + A_quad)


def assemble_stabilization(space: PufemSpace, quad_order: int = 16):
    """j(psi_k, psi_l): per cut element sigma^d times the reference stabilisation table."""
    ref = precompute_reference_tables(space.P, space.dim, quad_order)
    cut = space.cls.cut
    if len(cut) == 0:
        return sp.csr_matrix((space.n, space.n))
    return _symmetric(_scatter(space, cut, space.sigma**space.dim * ref.stab))


def assemble_rhs(space: PufemSpace, particles: ParticleField) -> np.ndarray:
    """b_k = sum_i Gamma_i psi_k(x_i); one column per component for vector fields."""
    B = space.basis_matrix(particles.positions)
    return np.asarray(B.T @ particles.circulations)


@dataclass(frozen=True)
class SystemBundle:
    """A = mass + epsilon * stab, applied lazily."""

    mass: sp.csr_matrix
    stab: sp.csr_matrix
    epsilon: float
    rhs: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    def matvec(self, x):
        y = self.mass @ x
        if self.epsilon:
            y = y + self.epsilon * (self.stab @ x)
        return y

    def diagonal(self) -> np.ndarray:
        return self.mass.diagonal() + self.epsilon * self.stab.diagonal()

    def matrix(self) -> sp.csr_matrix:
        return (self.mass + self.epsilon * self.stab).tocsr()

    def with_epsilon(self, epsilon: float) -> "SystemBundle":
        return SystemBundle(self.mass, self.stab, epsilon, self.rhs)


def build_system(mass, stab, epsilon: float = DEFAULT_EPSILON, rhs=None) -> SystemBundle:
    if mass.shape != stab.shape or mass.shape[0] != mass.shape[1]:
        raise ValueError(f"dimension mismatch: mass {mass.shape}, stab {stab.shape}")
    if rhs is not None and np.shape(rhs)[0] != mass.shape[0]:
        raise ValueError(f"rhs length {np.shape(rhs)[0]} does not match {mass.shape[0]}")
    return SystemBundle(mass, stab, float(epsilon), rhs)


def export_coo(matrix: sp.spmatrix, path):
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write("row col value\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
