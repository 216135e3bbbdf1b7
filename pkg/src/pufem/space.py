"""PUFEM space: active nodes times scaled monomials, basis evaluation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from math import comb, factorial

import numpy as np

from .grid import GridClassification, corner_offsets
from .mollifier import PartitionFunction, default_partition_function


class OutsideDomainError(ValueError):
    """A point does not lie in an active element."""


def multi_indices(d: int, max_degree: int, exact: bool = False) -> np.ndarray:
    """Graded-lexicographic multi-indices with |a| <= max_degree (or == when exact)."""
    degrees = [max_degree] if exact else range(max_degree + 1)
    out = []
    for deg in degrees:
        level = [a for a in itertools.product(range(deg + 1), repeat=d) if sum(a) == deg]
        out.extend(sorted(level, reverse=True))
    return np.array(out, dtype=np.int64).reshape(-1, d)


@dataclass(frozen=True)
class DofMap:
    """DOF k = node_id * n_alpha + a for node ``nodes[node_id]`` and monomial ``alphas[a]``."""

    nodes: np.ndarray  # (n_nodes, d), lexicographic
    alphas: np.ndarray  # (n_alpha, d)
    lo: np.ndarray
    lookup: np.ndarray  # dense node multi-index -> node id, -1 if inactive

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_alpha(self) -> int:
        return len(self.alphas)

    @property
    def n(self) -> int:
        return self.n_nodes * self.n_alpha

    @property
    def entries(self):
        """(node multi-index, alpha) for every DOF in order."""
        return [(tuple(nd), tuple(a)) for nd in self.nodes for a in self.alphas]

    def node_ids(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        rel = idx - self.lo
        shape = np.array(self.lookup.shape)
        ok = np.all((rel >= 0) & (rel < shape), axis=-1)
        out = np.full(idx.shape[:-1], -1, dtype=np.int64)
        r = rel[ok]
        out[ok] = self.lookup[tuple(r[..., k] for k in range(rel.shape[-1]))]
        return out

    def dof_range(self, node) -> range:
        nid = int(self.node_ids(np.asarray(node)[None])[0])
        if nid < 0:
            raise KeyError(f"node {tuple(node)} is not active")
        return range(nid * self.n_alpha, (nid + 1) * self.n_alpha)


def enumerate_dofs(cls: GridClassification, P: int) -> DofMap:
    d = cls.grid.dim
    nodes = (cls.elements[:, None, :] + corner_offsets(d)[None]).reshape(-1, d)
    nodes = np.unique(nodes, axis=0)  # lexicographic
    lo = nodes.min(axis=0)
    shape = tuple(int(s) for s in nodes.max(axis=0) - lo + 1)
    lookup = np.full(shape, -1, dtype=np.int64)
    lookup[tuple((nodes - lo).T)] = np.arange(len(nodes))
    return DofMap(nodes, multi_indices(d, P), lo, lookup)


def monomial_derivative(t, a: int, q: int):
    """d^q/dt^q t^a."""
    if q > a:
        return np.zeros_like(t)
    return (factorial(a) // factorial(a - q)) * t ** (a - q)


def factor_table(pf: PartitionFunction, t, P: int, order: int):
    """1-D factors D^r [phi_hat(t - m) (t - m)^a] for r <= order, m in {0,1}, a <= P.

    ``t`` are local coordinates in [0, 1]; result shape (order+1, 2, P+1, *t.shape).
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros((order + 1, 2, P + 1) + t.shape)
    for m in (0, 1):
        s = t - m
        phi = pf.derivatives(s, order)
        for a in range(P + 1):
            for r in range(order + 1):
                acc = np.zeros_like(s)
                for j in range(r + 1):
                    if r - j <= a:
                        acc += comb(r, j) * phi[j] * monomial_derivative(s, a, r - j)
                out[r, m, a] = acc
    return out


@dataclass(frozen=True)
class PufemSpace:
    cls: GridClassification
    P: int
    pf: PartitionFunction
    dofs: DofMap

    @classmethod
    def build(cls, classification: GridClassification, P: int, pf: PartitionFunction | None = None):
        pf = default_partition_function() if pf is None else pf
        return cls(classification, P, pf, enumerate_dofs(classification, P))

    @property
    def grid(self):
        return self.cls.grid

    @property
    def dim(self) -> int:
        return self.cls.grid.dim

    @property
    def sigma(self) -> float:
        return self.cls.grid.sigma

    @property
    def n(self) -> int:
        return self.dofs.n

    @cached_property
    def local_nodes(self) -> np.ndarray:
        """Local node offset m for each of the 2^d * n_alpha local basis functions."""
        return np.repeat(corner_offsets(self.dim), self.dofs.n_alpha, axis=0)

    @cached_property
    def local_alphas(self) -> np.ndarray:
        return np.tile(self.dofs.alphas, (2**self.dim, 1))

    @property
    def n_local(self) -> int:
        return 2**self.dim * self.dofs.n_alpha

    def element_dofs(self, elements) -> np.ndarray:
        """Global DOFs of the local basis functions of each element, (n_el, n_local)."""
        elements = np.asarray(elements, dtype=np.int64)
        nid = self.dofs.node_ids(elements[:, None, :] + corner_offsets(self.dim)[None])
        na = self.dofs.n_alpha
        return (nid[:, :, None] * na + np.arange(na)).reshape(len(elements), -1)

    @cached_property
    def node_cut_support(self) -> np.ndarray:
        """True where some element of the node's patch is not an interior element."""
        d = self.dim
        cand = self.dofs.nodes[:, None, :] - corner_offsets(d)[None]
        eid = self.cls.element_ids(cand)
        interior = np.zeros(self.cls.n_active + 1, dtype=bool)
        interior[:-1] = ~self.cls.is_cut
        return ~np.all(interior[eid], axis=1)

    @property
    def dof_cut_support(self) -> np.ndarray:
        return np.repeat(self.node_cut_support, self.dofs.n_alpha)

    def locate(self, x):
        """Element row, element multi-index and local coordinates for points (N, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        elems = self.grid.element_of(x)
        eid = self.cls.element_ids(elems)
        if np.any(eid < 0):
            bad = x[np.argmax(eid < 0)]
            raise OutsideDomainError(f"point {bad} lies outside the active elements")
        return eid, elems, self.grid.local_coordinates(x, elems)

    def _products(self, table, betas):
        """prod_k table[beta_k, m_k, alpha_k, :, k] -> (n_beta, N, n_local)."""
        m = self.local_nodes
        a = self.local_alphas
        out = None
        for k in range(self.dim):
            f = table[betas[:, k][:, None], m[:, k][None, :], a[:, k][None, :], :, k]
            out = f if out is None else out * f
        return np.transpose(out, (0, 2, 1))

    def eval_basis(self, x):
        """(dofs, values), each (N, n_local): psi_k(x) for every DOF whose patch holds x."""
        _, elems, xh = self.locate(x)
        table = factor_table(self.pf, xh, self.P, 0)
        vals = self._products(table, np.zeros((1, self.dim), dtype=np.int64))[0]
        return self.element_dofs(elems), vals

    def eval_basis_derivatives(self, x, order: int):
        """(dofs, betas, values) with values[b, q, l] = d^beta_b psi_l(x_q), |beta| <= order."""
        if order < 0 or order + 1 > self.pf.max_order + 1:
            raise ValueError(f"derivative order {order} out of range")
        _, elems, xh = self.locate(x)
        table = factor_table(self.pf, xh, self.P, order)
        betas = multi_indices(self.dim, order)
        vals = self._products(table, betas)
        vals *= self.sigma ** (-betas.sum(axis=1, dtype=float))[:, None, None]
        return self.element_dofs(elems), betas, vals

    def basis_matrix(self, x):
        """Sparse (N, n) evaluation matrix B with B[q, k] = psi_k(x_q)."""
        from scipy.sparse import csr_matrix

        dofs, vals = self.eval_basis(x)
        N = len(dofs)
        indptr = np.arange(0, N * self.n_local + 1, self.n_local)
        return csr_matrix((vals.ravel(), dofs.ravel(), indptr), shape=(N, self.n))


def polynomial_coefficients(space: PufemSpace, poly: dict) -> np.ndarray:
    """Coefficients reproducing sum_e c_e x^e exactly (total degree <= P).

    At node x_j, x^e = prod_k (x_jk + sigma t_k)^e_k is expanded in t = (x - x_j)/sigma.
    """
    d = space.dim
    sigma = space.sigma
    pos = space.grid.origin_array + sigma * space.dofs.nodes
    alphas = space.dofs.alphas
    coef = np.zeros((space.dofs.n_nodes, space.dofs.n_alpha))
    for e, c in poly.items():
        e = tuple(e)
        if sum(e) > space.P:
            raise ValueError(f"monomial {e} exceeds degree {space.P}")
        for ai, a in enumerate(alphas):
            if any(a[k] > e[k] for k in range(d)):
                continue
            term = np.full(len(pos), float(c))
            for k in range(d):
                term *= comb(e[k], int(a[k])) * pos[:, k] ** (e[k] - a[k]) * sigma ** int(a[k])
            coef[:, ai] += term
    return coef.ravel()
