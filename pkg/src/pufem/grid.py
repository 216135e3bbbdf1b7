"""Cartesian grid bookkeeping and fictitious-domain classification.

Element ``i`` is the open cube origin + sigma * (i + (0, 1)^d); node ``i`` sits
at origin + sigma * i and owns the patch of the 2^d elements around it.
"""

from __future__ import annotations

import csv
import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import SimplicialMesh


class ClassificationError(ValueError):
    pass


class ChainConditionError(ValueError):
    pass


def corner_offsets(d: int) -> np.ndarray:
    """The 2^d vertices of the unit cube, lexicographic with the last axis fastest."""
    return np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)


@dataclass(frozen=True)
class CartesianGrid:
    sigma: float
    origin: tuple = (0.0, 0.0, 0.0)
    dim: int = 3

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        origin = tuple(float(o) for o in np.broadcast_to(self.origin, (self.dim,)))
        object.__setattr__(self, "origin", origin)

    @property
    def origin_array(self) -> np.ndarray:
        return np.asarray(self.origin)

    def node(self, i) -> np.ndarray:
        return self.origin_array + self.sigma * np.asarray(i, dtype=float)

    def element_of(self, x) -> np.ndarray:
        return np.floor((np.asarray(x, dtype=float) - self.origin_array) / self.sigma).astype(
            np.int64
        )

    def local_coordinates(self, x, elements) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.origin_array) / self.sigma - elements


@dataclass(frozen=True)
class DomainGeometry:
    """Closed inside-predicate of the physical domain plus a mesh covering it."""

    inside: Callable[[np.ndarray], np.ndarray]
    mesh: SimplicialMesh
    box_bounds: tuple | None = None

    @classmethod
    def box(cls, lo, hi, mesh: SimplicialMesh):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        tol = 1e-12 * float(np.max(hi - lo))

        def inside(x):
            x = np.atleast_2d(x)
            return np.all((x >= lo - tol) & (x <= hi + tol), axis=1)

        return cls(inside, mesh, (lo, hi))

    @classmethod
    def from_mesh(cls, mesh: SimplicialMesh):
        return cls(mesh.contains, mesh)


@dataclass(frozen=True)
class GridClassification:
    """Active elements of a grid, split into cut and interior ones.

    ``elements`` is sorted lexicographically; ``lookup`` maps an element
    multi-index (shifted by ``lo``) to its row, -1 when inactive.
    """

    grid: CartesianGrid
    elements: np.ndarray  # (n_active, d)
    is_cut: np.ndarray  # (n_active,) bool
    chain_length: np.ndarray  # (n_active,) int, -1 = unreachable
    lo: np.ndarray
    lookup: np.ndarray

    @property
    def n_active(self) -> int:
        return len(self.elements)

    @property
    def active(self) -> np.ndarray:
        return self.elements

    @property
    def cut(self) -> np.ndarray:
        return self.elements[self.is_cut]

    @property
    def interior(self) -> np.ndarray:
        return self.elements[~self.is_cut]

    def element_ids(self, idx) -> np.ndarray:
        """Row numbers for element multi-indices (..., d); -1 where inactive."""
        idx = np.asarray(idx, dtype=np.int64)
        rel = idx - self.lo
        shape = np.array(self.lookup.shape)
        ok = np.all((rel >= 0) & (rel < shape), axis=-1)
        out = np.full(idx.shape[:-1], -1, dtype=np.int64)
        rel_ok = rel[ok]
        out[ok] = self.lookup[tuple(rel_ok[..., k] for k in range(rel.shape[-1]))]
        return out

    def to_csv(self, path):
        d = self.grid.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i{k}" for k in range(d)] + ["class", "chain_length"])
            for e, cut, k in zip(self.elements, self.is_cut, self.chain_length):
                w.writerow([*map(int, e), "cut" if cut else "interior", int(k)])


def _interior_samples(d: int, s: int) -> np.ndarray:
    t = (np.arange(s) + 0.5) / s
    return np.array(list(itertools.product(t, repeat=d)))


def classify_elements(
    grid: CartesianGrid,
    geom: DomainGeometry,
    samples_per_axis: int = 4,
    points=None,
) -> GridClassification:
    """Active: contains a mesh/particle point or an inside sample point.

    Interior: every corner and sample point satisfies the inside predicate.
    ``points`` defaults to the centroids of ``geom.mesh``; pass the particle
    positions so every particle lands in an active element.
    """
    if samples_per_axis < 2:
        raise ValueError("samples_per_axis must be at least 2")
    d = grid.dim
    pts = geom.mesh.centroids() if points is None else np.asarray(points, dtype=float)
    verts = geom.mesh.vertices
    lo = grid.element_of(verts.min(axis=0)) - 1
    hi = grid.element_of(verts.max(axis=0)) + 1
    shape = tuple(int(s) for s in hi - lo + 1)
    cand = np.stack(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij"), -1)
    cand = cand.reshape(-1, d)

    local = np.vstack([corner_offsets(d).astype(float), _interior_samples(d, samples_per_axis)])
    n_corner = 2**d
    xs = grid.origin_array + grid.sigma * (cand[:, None, :] + local[None, :, :])
    ins = geom.inside(xs.reshape(-1, d)).reshape(len(cand), len(local))

    flat = np.zeros(shape, dtype=bool)
    if len(pts):
        rel = grid.element_of(pts) - lo
        ok = np.all((rel >= 0) & (rel < np.array(shape)), axis=1)
        flat[tuple(rel[ok].T)] = True
    has_point = flat.reshape(-1)
    active = has_point | ins[:, n_corner:].any(axis=1)
    bounds = geom.box_bounds
    if bounds is not None:
        # exact meas(Q ∩ Ω) > 0 test for boxes catches slivers missed by sampling
        q_lo = grid.origin_array + grid.sigma * cand
        overlap = np.minimum(q_lo + grid.sigma, bounds[1]) - np.maximum(q_lo, bounds[0])
        active |= np.all(overlap > 1e-12 * grid.sigma, axis=1)
    if not active.any():
        raise ClassificationError("no grid element intersects the domain")
    interior = active & ins.all(axis=1)

    elements = cand[active]
    is_cut = ~interior[active]
    lookup = np.full(shape, -1, dtype=np.int64)
    lookup[tuple((elements - lo).T)] = np.arange(len(elements))
    chain = _chain_lengths(elements, is_cut, lo, lookup)
    return GridClassification(grid, elements, is_cut, chain, lo, lookup)


def neighbor_offsets(d: int) -> np.ndarray:
    offs = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
    return offs[np.any(offs != 0, axis=1)]


def _chain_lengths(elements, is_cut, lo, lookup) -> np.ndarray:
    """BFS distance from the interior set through node-sharing neighbours."""
    d = elements.shape[1]
    dist = np.where(is_cut, -1, 0).astype(np.int64)
    offs = neighbor_offsets(d)
    shape = np.array(lookup.shape)
    queue = deque(np.flatnonzero(~is_cut).tolist())
    while queue:
        e = queue.popleft()
        nb = elements[e] + offs - lo
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        for n in lookup[tuple(nb[ok].T)]:
            if n >= 0 and dist[n] < 0:
                dist[n] = dist[e] + 1
                queue.append(n)
    return dist


def verify_chain_condition(cls: GridClassification, K_max: int = 3) -> int:
    """Largest number of steps from a cut element to the interior set."""
    if np.any(cls.chain_length < 0):
        n = int(np.count_nonzero(cls.chain_length < 0))
        raise ChainConditionError(f"{n} cut elements cannot reach an interior element")
    longest = int(cls.chain_length.max(initial=0))
    if longest > K_max:
        raise ChainConditionError(f"chain length {longest} exceeds K_max={K_max}")
    return longest


def incident_nodes(element) -> np.ndarray:
    element = np.asarray(element, dtype=np.int64)
    return element + corner_offsets(len(element))


def incident_elements(node, cls: GridClassification) -> np.ndarray:
    """Active elements having ``node`` as a corner (at most 2^d)."""
    node = np.asarray(node, dtype=np.int64)
    cand = node - corner_offsets(len(node))
    return cand[cls.element_ids(cand) >= 0]
