"""Desk-scale convergence, velocity, conditioning and offset experiments with CSV output."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import assemble_mass, assemble_rhs, assemble_stabilization, build_system
from .fields import SmoothedField, assembled_moment, biot_savart_direct, l2_error, moment
from .grid import CartesianGrid, ChainConditionError, DomainGeometry, classify_elements, verify_chain_condition
from .mesh import gauss_rule, midpoint_rule, refined_cube_mesh, sample_particles
from .solver import estimate_condition, solve_components
from .space import PufemSpace, multi_indices

EXPERIMENTS = ("cosine-s1", "cosine-s2", "velocity", "condition", "offset-sweep")

_PRESETS = {
    "cosine-s1": dict(s=1, C=1.0, levels=(1, 4)),
    "cosine-s2": dict(s=2, C=0.375, levels=(1, 4)),
    "velocity": dict(s=2, C=0.375, levels=(1, 3)),
    "condition": dict(s=2, C=0.25, levels=(2, 3), epsilons=(0.0, 1e-3, 1e-2, 1e-1)),
    "offset-sweep": dict(s=2, C=0.375, levels=(3, 3)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "cosine-s2"
    dim: int = 3
    P: int = 1
    levels: tuple = (1, 4)
    s: int = 2
    C: float = 0.375
    epsilon: float = 1e-3
    offset: tuple = (0.0, 0.0, 0.0)
    out: str = "results"
    threads: int = 1
    epsilons: tuple = (0.0, 1e-3, 1e-2, 1e-1)
    n_offsets: int = 10
    seed: int = 0
    tol: float = 1e-12
    maxiter: int = 2000
    error_points: int = 3
    source_points: int = 2
    eta_factor: float = 1e-3
    singular_correction: bool = True

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.s not in (1, 2):
            raise ValueError("s must be 1 or 2")
        if self.C <= 0:
            raise ValueError("C must be positive")
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        offset = np.broadcast_to(np.asarray(self.offset, dtype=float), (self.dim,))
        object.__setattr__(self, "offset", tuple(float(o) for o in offset))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))

    @classmethod
    def create(cls, experiment: str = "cosine-s2", config_file=None, **overrides):
        """Preset for the experiment, then the JSON file, then explicit overrides."""
        values = {}
        if config_file is not None:
            values.update(json.loads(Path(config_file).read_text()))
        experiment = overrides.get("experiment") or values.get("experiment") or experiment
        merged = {**_PRESETS.get(experiment, {}), **values}
        merged.update({k: v for k, v in overrides.items() if v is not None})
        merged["experiment"] = experiment
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(merged) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**merged)

    def level_range(self) -> range:
        return range(self.levels[0], self.levels[1] + 1)

    def sigma(self, level: int) -> float:
        return self.C * (2.0**-level) ** (1.0 / self.s)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def parse_levels(text: str) -> tuple:
    """'a..b' or a single level 'a'."""
    a, sep, b = text.partition("..")
    return (int(a), int(b)) if sep else (int(a), int(a))


@dataclass
class ExperimentResult:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    runtimes: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


def empirical_orders(errors, hs) -> list:
    """log(e_{l-1}/e_l) / log(h_{l-1}/h_l); NaN for the first level."""
    out = [math.nan]
    for k in range(1, len(errors)):
        e0, e1 = errors[k - 1], errors[k]
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(hs[k - 1] / hs[k]))
        else:
            out.append(math.nan)
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(result: ExperimentResult, config: ExperimentConfig, out_dir=None) -> Path:
    """CSV with a '#' metadata block; per-level runtimes go to <name>.runtime.csv."""
    out_dir = Path(config.out if out_dir is None else out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{result.name}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# pufem {__version__}\n")
        fh.write(f"# experiment: {result.name}\n")
        fh.write(f"# config: {config.to_json()}\n")
        fh.write(f"# runtimes: {result.name}.runtime.csv\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(result.columns)
        for row in result.rows:
            w.writerow([_fmt(v) for v in row])
    with open(out_dir / f"{result.name}.runtime.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "seconds"])
        for key, sec in result.runtimes:
            w.writerow([key, f"{sec:.3f}"])
    return path


def read_csv(path) -> tuple:
    """(columns, rows as dicts of strings), skipping the metadata block."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return reader.fieldnames, list(reader)


# problem setup ------------------------------------------------------------------

def cosine_reference(x):
    return np.cos(4 * np.pi * x[:, 0])


def _bump(x):
    rho2 = np.sum(x * x, axis=1)
    inside = rho2 < 0.25
    g = np.zeros(len(x))
    q = np.zeros(len(x))
    den = 1.0 - 4.0 * rho2[inside]
    g[inside] = np.exp(-1.0 / den)
    q[inside] = -8.0 * g[inside] / den**2  # grad g = q x
    return g, q


def swirl_velocity(x):
    """(x2, -x1, 0) exp(-1/(1 - 4|x|^2)) in the ball |x| < 1/2, zero outside."""
    x = np.atleast_2d(x)
    g, _ = _bump(x)
    u = np.zeros_like(x)
    u[:, 0] = x[:, 1] * g
    u[:, 1] = -x[:, 0] * g
    return u


def swirl_vorticity(x):
    """Curl of swirl_velocity; in 2D the scalar out-of-plane component."""
    x = np.atleast_2d(x)
    g, q = _bump(x)
    w3 = -2.0 * g - q * (x[:, 0] ** 2 + x[:, 1] ** 2)
    if x.shape[1] == 2:
        return w3
    return np.stack([q * x[:, 0] * x[:, 2], q * x[:, 1] * x[:, 2], w3], axis=1)


@dataclass
class LevelSetup:
    level: int
    h: float
    sigma: float
    mesh: object
    rule: object
    space: PufemSpace
    mass: object
    stab: object
    chain_length: int

    @property
    def n_cut(self) -> int:
        return int(self.space.cls.is_cut.sum())


def setup_level(config: ExperimentConfig, level: int, offset=None) -> LevelSetup:
    """Mesh, midpoint particle rule, classification and assembled a_h, j.

    Raises ChainConditionError when a cut element is too far from the interior.
    """
    d = config.dim
    mesh = refined_cube_mesh(d, level)
    rule = midpoint_rule(mesh)
    sigma = config.sigma(level)
    origin = config.offset if offset is None else offset
    geom = DomainGeometry.box([-0.5] * d, [0.5] * d, mesh)
    cls = classify_elements(CartesianGrid(sigma, origin, d), geom, points=rule.nodes)
    chain = verify_chain_condition(cls)
    space = PufemSpace.build(cls, config.P)
    return LevelSetup(level, 2.0**-level, sigma, mesh, rule, space,
                      assemble_mass(space, rule), assemble_stabilization(space), chain)


def _set_threads(n: int):
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _solve_status(reports) -> str:
    if any(r.breakdown for r in reports):
        return "breakdown"
    if not all(r.converged for r in reports):
        return "maxiter"
    return "ok"


# experiments --------------------------------------------------------------------

COSINE_COLUMNS = ["level", "h", "sigma", "particles", "dofs", "cut_elements", "iterations",
                  "relative_residual", "status", "l2_error", "order", "moment_error"]


def run_cosine(config: ExperimentConfig) -> ExperimentResult:
    """Regularise particles sampled from cos(4 pi x1) and measure the L2 error."""
    _set_threads(config.threads)
    name = config.experiment.replace("-", "_")
    res = ExperimentResult(name, COSINE_COLUMNS)
    errors, hs = [], []
    for level in config.level_range():
        t0 = time.perf_counter()
        try:
            st = setup_level(config, level)
        except ChainConditionError:
            sigma = config.sigma(level)
            res.rows.append([level, 2.0**-level, sigma, 0, 0, 0, 0, math.nan, "chain-violation",
                             math.nan, math.nan, math.nan])
            res.runtimes.append((f"level {level}", time.perf_counter() - t0))
            continue
        particles = sample_particles(st.rule, cosine_reference)
        rhs = assemble_rhs(st.space, particles)
        system = build_system(st.mass, st.stab, config.epsilon, rhs)
        rep = solve_components(system, rhs, tol=config.tol, maxiter=config.maxiter)[0]
        fld = SmoothedField(st.space, rep.coefficients)
        err = l2_error(fld, cosine_reference, gauss_rule(st.mesh, config.error_points))
        scale = float(np.abs(particles.circulations).sum())
        mom = max(
            abs(float(assembled_moment(fld, a, st.mass)) - float(moment(particles, a))) / scale
            for a in multi_indices(config.dim, config.P)
        )
        errors.append(err)
        hs.append(st.h)
        res.rows.append([level, st.h, st.sigma, particles.count, st.space.n, st.n_cut,
                         rep.iterations, rep.relative_residual, _solve_status([rep]), err,
                         math.nan, mom])
        res.runtimes.append((f"level {level}", time.perf_counter() - t0))
    _fill_orders(res, "l2_error", "order")
    return res


def _fill_orders(res: ExperimentResult, err_col: str, order_col: str):
    ok = [i for i, r in enumerate(res.rows) if np.isfinite(r[res.columns.index(err_col)])]
    errs = [res.rows[i][res.columns.index(err_col)] for i in ok]
    hs = [res.rows[i][res.columns.index("h")] for i in ok]
    for i, o in zip(ok, empirical_orders(errs, hs)):
        res.rows[i][res.columns.index(order_col)] = o


VELOCITY_COLUMNS = ["level", "h", "sigma", "particles", "dofs", "iterations", "status",
                    "vorticity_l2", "vorticity_order", "velocity_l2", "velocity_order",
                    "skipped_terms"]


def run_velocity(config: ExperimentConfig) -> ExperimentResult:
    """Regularise the swirl vorticity, then recover its velocity by Biot-Savart."""
    _set_threads(config.threads)
    res = ExperimentResult("velocity", VELOCITY_COLUMNS)
    d = config.dim
    box = (np.full(d, -0.5), np.full(d, 0.5))
    for level in config.level_range():
        t0 = time.perf_counter()
        st = setup_level(config, level)
        particles = sample_particles(st.rule, swirl_vorticity)
        rhs = assemble_rhs(st.space, particles)
        system = build_system(st.mass, st.stab, config.epsilon, rhs)
        reports = solve_components(system, rhs, tol=config.tol, maxiter=config.maxiter)
        coef = np.stack([r.coefficients for r in reports], axis=1)
        fld = SmoothedField(st.space, coef if d == 3 else coef[:, 0])
        w_err = l2_error(fld, swirl_vorticity, gauss_rule(st.mesh, config.error_points))

        src = gauss_rule(st.mesh, config.source_points)
        om_src = fld.evaluate(src.nodes)
        targets = st.rule
        om_t = fld.evaluate(targets.nodes) if config.singular_correction else None
        vel = biot_savart_direct(src.nodes, src.weights, om_src, targets.nodes,
                                 config.eta_factor * st.sigma,
                                 box if config.singular_correction else None, om_t)
        diff = vel.velocity - swirl_velocity(targets.nodes)[:, :d]
        v_err = float(np.sqrt(targets.weights @ np.sum(diff * diff, axis=1)))
        res.rows.append([level, st.h, st.sigma, particles.count, st.space.n,
                         max(r.iterations for r in reports), _solve_status(reports),
                         w_err, math.nan, v_err, math.nan, vel.skipped])
        res.runtimes.append((f"level {level}", time.perf_counter() - t0))
    _fill_orders(res, "vorticity_l2", "vorticity_order")
    _fill_orders(res, "velocity_l2", "velocity_order")
    return res


CONDITION_COLUMNS = ["level", "h", "sigma", "dofs", "cut_elements", "epsilon", "status",
                     "cond", "lambda_min", "lambda_max", "lanczos_iterations"]


def run_condition(config: ExperimentConfig, epsilons=None) -> ExperimentResult:
    """Condition of D^-1 A_h per level and epsilon; indefinite or singular cases are flagged."""
    epsilons = config.epsilons if epsilons is None else tuple(epsilons)
    if not epsilons:
        raise ValueError("epsilon list is empty")
    _set_threads(config.threads)
    res = ExperimentResult("condition", CONDITION_COLUMNS)
    for level in config.level_range():
        t0 = time.perf_counter()
        st = setup_level(config, level)
        base = build_system(st.mass, st.stab, 0.0)
        for eps in epsilons:
            est = estimate_condition(base.with_epsilon(eps), seed=config.seed)
            res.rows.append([level, st.h, st.sigma, st.space.n, st.n_cut, eps, est.status,
                             est.cond, est.lambda_min, est.lambda_max, est.iterations])
        res.runtimes.append((f"level {level}", time.perf_counter() - t0))
    return res


def sweep_offsets(config: ExperimentConfig, n: int | None = None) -> np.ndarray:
    """Seeded uniform grid offsets in [0, sigma)^d."""
    n = config.n_offsets if n is None else n
    sigma = config.sigma(config.levels[0])
    return np.random.default_rng(config.seed).uniform(0, sigma, (n, config.dim))


def run_offset_sweep(config: ExperimentConfig, offsets=None) -> ExperimentResult:
    """Spectral bounds of the scaled system as the grid slides under a fixed domain."""
    _set_threads(config.threads)
    offsets = sweep_offsets(config) if offsets is None else np.atleast_2d(offsets)
    d = config.dim
    level = config.levels[0]
    cols = ["index"] + [f"offset_{k}" for k in range(d)] + [
        "dofs", "cut_elements", "chain_length", "status", "lambda_min", "lambda_max", "cond"]
    res = ExperimentResult("offset_sweep", cols)
    for i, off in enumerate(offsets):
        t0 = time.perf_counter()
        try:
            st = setup_level(config, level, offset=tuple(off))
        except ChainConditionError:
            res.rows.append([i, *map(float, off), 0, 0, -1, "chain-violation", math.nan, math.nan, math.nan])
            res.runtimes.append((f"offset {i}", time.perf_counter() - t0))
            continue
        est = estimate_condition(build_system(st.mass, st.stab, config.epsilon), seed=config.seed)
        res.rows.append([i, *map(float, off), st.space.n, st.n_cut, st.chain_length, est.status,
                         est.lambda_min, est.lambda_max, est.cond])
        res.runtimes.append((f"offset {i}", time.perf_counter() - t0))
    return res


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    if config.experiment in ("cosine-s1", "cosine-s2"):
        return run_cosine(config)
    return {"velocity": run_velocity, "condition": run_condition,
            "offset-sweep": run_offset_sweep}[config.experiment](config)
