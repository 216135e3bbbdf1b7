"""Simplicial meshes of the domain, quadrature rules and particle fields."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class SimplicialMesh:
    vertices: np.ndarray  # (nv, d)
    cells: np.ndarray  # (nc, d+1) vertex indices
    level: int = 0

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def signed_volumes(self) -> np.ndarray:
        v = self.vertices[self.cells]
        jac = v[:, 1:, :] - v[:, :1, :]
        return np.linalg.det(jac) / math.factorial(self.dim)

    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes())

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def max_edge_length(self) -> float:
        v = self.vertices[self.cells]
        d = self.dim
        return max(
            np.linalg.norm(v[:, a] - v[:, b], axis=1).max()
            for a in range(d + 1)
            for b in range(a + 1, d + 1)
        )

    def validate(self):
        nv = len(self.vertices)
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= nv):
            raise MeshError("cell references a vertex index out of range")
        vol = self.signed_volumes()
        if np.any(vol <= 0):
            bad = int(np.argmax(vol <= 0))
            raise MeshError(f"cell {bad} is inverted or degenerate (volume {vol[bad]:g})")
        return self

    def contains(self, points, tol=1e-12) -> np.ndarray:
        """Closed point-in-mesh test by barycentric coordinates (brute force over cells)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices[self.cells]
        jac = np.transpose(v[:, 1:, :] - v[:, :1, :], (0, 2, 1))
        inv = np.linalg.inv(jac)
        lo = v.min(axis=1) - tol
        hi = v.max(axis=1) + tol
        out = np.zeros(len(points), dtype=bool)
        for c in range(len(self.cells)):
            cand = np.flatnonzero(
                ~out & np.all(points >= lo[c], axis=1) & np.all(points <= hi[c], axis=1)
            )
            if cand.size == 0:
                continue
            lam = (points[cand] - v[c, 0]) @ inv[c].T
            ok = np.all(lam >= -tol, axis=1) & (lam.sum(axis=1) <= 1 + tol)
            out[cand[ok]] = True
        return out


def unit_cube_mesh(d: int = 3) -> SimplicialMesh:
    """(-1/2, 1/2)^d split about its centre: 4 triangles (d=2) or 24 tetrahedra (d=3)."""
    if d == 2:
        verts = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [0.0, 0.0]])
        cells = np.array([[4, k, (k + 1) % 4] for k in range(4)])
    elif d == 3:
        corners = np.array(
            [[x, y, z] for z in (-0.5, 0.5) for y in (-0.5, 0.5) for x in (-0.5, 0.5)]
        )
        verts = [*corners, np.zeros(3)]
        cells = []
        for axis in range(3):
            for side in (-0.5, 0.5):
                face = np.flatnonzero(np.isclose(corners[:, axis], side))
                fc = np.zeros(3)
                fc[axis] = side
                verts.append(fc)
                f_idx = len(verts) - 1
                # order the 4 face corners around the face centre
                others = [a for a in range(3) if a != axis]
                ang = np.arctan2(corners[face, others[1]], corners[face, others[0]])
                ring = face[np.argsort(ang)]
                for k in range(4):
                    cells.append([8, f_idx, ring[k], ring[(k + 1) % 4]])
        verts = np.array(verts)
        cells = np.array(cells)
    else:
        raise ValueError("d must be 2 or 3")
    return _orient(SimplicialMesh(verts, cells, 0)).validate()


def _orient(mesh: SimplicialMesh) -> SimplicialMesh:
    cells = mesh.cells.copy()
    neg = mesh.signed_volumes() < 0
    cells[neg, 0], cells[neg, 1] = mesh.cells[neg, 1], mesh.cells[neg, 0]
    return SimplicialMesh(mesh.vertices, cells, mesh.level)


def refine_uniform(mesh: SimplicialMesh) -> SimplicialMesh:
    """Red refinement: 4 children per triangle, 8 per tetrahedron.

    The interior octahedron of each tetrahedron is split along its shortest
    diagonal (ties go to the first of m01-m23, m02-m13, m03-m12).
    """
    d = mesh.dim
    cells = mesh.cells
    nv = len(mesh.vertices)
    pairs = [(a, b) for a in range(d + 1) for b in range(a + 1, d + 1)]
    edges = np.stack([np.sort(cells[:, [a, b]], axis=1) for a, b in pairs], axis=1)
    uniq, inv = np.unique(edges.reshape(-1, 2), axis=0, return_inverse=True)
    inv = inv.reshape(len(cells), len(pairs))
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    m = {pair: nv + inv[:, k] for k, pair in enumerate(pairs)}
    v = [cells[:, k] for k in range(d + 1)]

    if d == 2:
        children = [
            (v[0], m[0, 1], m[0, 2]),
            (m[0, 1], v[1], m[1, 2]),
            (m[0, 2], m[1, 2], v[2]),
            (m[0, 1], m[1, 2], m[0, 2]),
        ]
        new = np.stack([np.stack(c, axis=1) for c in children], axis=1).reshape(-1, 3)
    else:
        corner = [
            (v[0], m[0, 1], m[0, 2], m[0, 3]),
            (m[0, 1], v[1], m[1, 2], m[1, 3]),
            (m[0, 2], m[1, 2], v[2], m[2, 3]),
            (m[0, 3], m[1, 3], m[2, 3], v[3]),
        ]
        # diagonal endpoints and the 4-cycle of remaining octahedron vertices
        options = [
            ((0, 1), (2, 3), [(0, 2), (0, 3), (1, 3), (1, 2)]),
            ((0, 2), (1, 3), [(0, 1), (0, 3), (2, 3), (1, 2)]),
            ((0, 3), (1, 2), [(0, 1), (0, 2), (2, 3), (1, 3)]),
        ]
        lengths = np.stack(
            [np.linalg.norm(verts[m[a]] - verts[m[b]], axis=1) for a, b, _ in options], axis=1
        )
        choice = np.argmin(lengths + 1e-12 * np.arange(3), axis=1)
        inner = np.empty((len(cells), 4, 4), dtype=cells.dtype)
        for k, (a, b, ring) in enumerate(options):
            sel = choice == k
            for j in range(4):
                inner[sel, j] = np.stack(
                    [m[a][sel], m[b][sel], m[ring[j]][sel], m[ring[(j + 1) % 4]][sel]], axis=1
                )
        corners = np.stack([np.stack(c, axis=1) for c in corner], axis=1)
        new = np.concatenate([corners, inner], axis=1).reshape(-1, 4)
    return _orient(SimplicialMesh(verts, new, mesh.level + 1))


def refined_cube_mesh(d: int, level: int) -> SimplicialMesh:
    mesh = unit_cube_mesh(d)
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self):
        return len(self.weights)

    def integrate(self, f) -> float:
        vals = np.asarray(f(self.nodes))
        return np.tensordot(self.weights, vals, axes=(0, 0))


def midpoint_rule(mesh: SimplicialMesh) -> QuadratureRule:
    return QuadratureRule(mesh.centroids(), mesh.volumes(), 1)


@lru_cache(maxsize=None)
def _reference_simplex_rule(d: int, n: int):
    """Conical-product Gauss rule on the unit simplex, degree 2n-1, positive weights."""
    # collapsed coordinates: Gauss-Jacobi with weight (1-t)^(d-1-k) on axis k
    pts1, wts1 = [], []
    for k in range(d):
        x, w = roots_jacobi(n, d - 1 - k, 0)
        pts1.append(0.5 * (x + 1.0))
        wts1.append(w / 2.0 ** (d - k))
    grids = np.meshgrid(*pts1, indexing="ij")
    wgrid = np.meshgrid(*wts1, indexing="ij")
    t = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    xi = np.empty_like(t)
    scale = np.ones(len(t))
    for k in range(d):
        xi[:, k] = t[:, k] * scale
        scale = scale * (1.0 - t[:, k])
    return xi, w


def gauss_rule(mesh: SimplicialMesh, points_per_axis: int = 3) -> QuadratureRule:
    """Per-cell conical Gauss rule; exact for polynomials of degree 2n-1."""
    xi, w = _reference_simplex_rule(mesh.dim, points_per_axis)
    v = mesh.vertices[mesh.cells]
    jac = v[:, 1:, :] - v[:, :1, :]  # (nc, d, d), rows are edge vectors
    nodes = v[:, None, 0, :] + np.einsum("qk,ckj->cqj", xi, jac)
    det = np.abs(np.linalg.det(jac))
    weights = det[:, None] * w[None, :]
    return QuadratureRule(
        nodes.reshape(-1, mesh.dim), weights.ravel(), 2 * points_per_axis - 1
    )


def box_gauss_rule(lo, hi, cells_per_axis: int, points_per_axis: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule on a uniform subdivision of the box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = len(lo)
    x, w = np.polynomial.legendre.leggauss(points_per_axis)
    t = 0.5 * (x + 1.0)
    axes, wts = [], []
    for k in range(d):
        h = (hi[k] - lo[k]) / cells_per_axis
        starts = lo[k] + h * np.arange(cells_per_axis)
        axes.append((starts[:, None] + h * t[None, :]).ravel())
        wts.append(np.tile(0.5 * h * w, cells_per_axis))
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    weights = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), -1).reshape(-1, d), axis=1)
    return QuadratureRule(nodes, weights, 2 * points_per_axis - 1)


@dataclass(frozen=True)
class ParticleField:
    """Weighted Dirac deltas: positions (N, d), circulations (N,) or (N, c)."""

    positions: np.ndarray
    circulations: np.ndarray

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def n_components(self) -> int:
        return 1 if self.circulations.ndim == 1 else self.circulations.shape[1]

    def to_csv(self, path):
        d = self.positions.shape[1]
        gam = self.circulations.reshape(self.count, -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(d)] + [f"gamma{k}" for k in range(gam.shape[1])])
            for row in np.hstack([self.positions, gam]):
                w.writerow([repr(float(v)) for v in row])


def sample_particles(rule: QuadratureRule, u) -> ParticleField:
    """Gamma_i = w_i u(x_i)."""
    vals = np.asarray(u(rule.nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("u is not finite at every quadrature node")
    w = rule.weights.reshape((-1,) + (1,) * (vals.ndim - 1))
    return ParticleField(rule.nodes.copy(), w * vals)


def export_mesh(mesh: SimplicialMesh, path):
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {len(mesh.vertices)} {len(mesh.cells)}\n")
        for p in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")


def import_mesh(path, check_volume: float | None = None) -> SimplicialMesh:
    """Read the plain-text mesh format ("dim nv nc", vertex rows, cell rows)."""
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    try:
        d, nv, nc = (int(t) for t in lines[0])
        verts = np.array([[float(t) for t in ln] for ln in lines[1 : 1 + nv]])
        cells = np.array([[int(t) for t in ln] for ln in lines[1 + nv : 1 + nv + nc]])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from exc
    if d not in (2, 3) or verts.shape != (nv, d) or cells.shape != (nc, d + 1):
        raise MeshError(f"mesh file {path} does not match its header")
    mesh = SimplicialMesh(verts, cells, 0).validate()
    if check_volume is not None and abs(mesh.volumes().sum() - check_volume) > 1e-12:
        raise MeshError("cells do not cover the expected measure")
    return mesh
