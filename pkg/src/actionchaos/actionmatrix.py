"""Node sets and the classical action matrix.

Entry (k, l) is the action of the classical path from node k to node l in a
fixed travel time. Only the upper triangle is solved; the lower triangle is
a mirror, so the stored matrix is exactly symmetric.
"""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import (
    PolynomialPotential,
    ShootingConfig,
    SystemParams,
    evaluate_action,
    format_terms,
    parse_terms,
    solve_trajectory_bvp,
)
from .errors import AssemblyError, BVPFailure, InvalidGridError, OverlapRiskError, QuadratureWarning

FORMAT_TAG = "# actionchaos action-matrix v1"


@dataclass(frozen=True)
class NodeSet:
    nodes: np.ndarray
    extent: float
    spacing: float
    dim: int
    deformation: float = 0.0
    seed: int | None = None
    deformed: bool = False

    def __len__(self):
        return len(self.nodes)

    @property
    def regular_nodes(self):
        return _lattice(self.extent, self.spacing, self.dim)

    def metadata(self):
        return {"extent": self.extent, "spacing": self.spacing, "dim": self.dim,
                "deformation": self.deformation, "seed": self.seed, "deformed": self.deformed,
                "n_nodes": len(self)}


def _lattice(extent, spacing, dim):
    n = int(round(2 * extent / spacing))
    axis = -extent + spacing * np.arange(n + 1)
    if dim == 1:
        return axis.reshape(-1, 1)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def make_regular_grid(extent: float, spacing: float, dim: int = 1) -> NodeSet:
    """Lattice {-extent, -extent + spacing, ..., extent}^dim in row-major order."""
    if not (spacing > 0 and extent > 0):
        raise InvalidGridError(f"extent and spacing must be positive (got {extent}, {spacing})")
    ratio = 2 * extent / spacing
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise InvalidGridError(f"2*extent/spacing = {ratio} is not an integer")
    if dim not in (1, 2):
        raise InvalidGridError(f"dimension must be 1 or 2, got {dim}")
    return NodeSet(_lattice(extent, spacing, dim), float(extent), float(spacing), dim)


def _counter_uniform(seed: int, index: int) -> float:
    """Uniform [0, 1) draw that depends only on (seed, index)."""
    raw = np.random.Philox(key=seed, counter=index).random_raw()
    return (int(raw) >> 11) * 2.0**-53


def deform_grid(nodes: NodeSet, delta: float, seed: int) -> NodeSet:
    """Displace every coordinate by an independent uniform draw from [-delta, delta]."""
    if nodes.deformed:
        raise InvalidGridError("deform_grid expects a regular grid")
    if delta < 0:
        raise InvalidGridError(f"deformation must be non-negative, got {delta}")
    if delta >= nodes.spacing / 2:
        raise OverlapRiskError(f"deformation {delta} >= spacing/2 = {nodes.spacing / 2}; "
                               "neighbouring nodes could cross")
    if seed < 0 or seed >= 2**64:
        raise InvalidGridError("seed must be a 64-bit unsigned integer")
    base = nodes.nodes
    if delta == 0:
        return NodeSet(base.copy(), nodes.extent, nodes.spacing, nodes.dim, 0.0, seed, True)
    n, dim = base.shape
    u = np.array([[_counter_uniform(seed, k * dim + d) for d in range(dim)] for k in range(n)])
    return NodeSet(base + delta * (2.0 * u - 1.0), nodes.extent, nodes.spacing, nodes.dim,
                   float(delta), int(seed), True)


@dataclass(frozen=True)
class ActionMatrix:
    values: np.ndarray
    nodes: NodeSet
    T: float
    system: SystemParams
    potential: PolynomialPotential
    residuals: np.ndarray | None = None
    quadrature_error: float = 0.0
    caustic_pairs: int = 0

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def worst_residual(self):
        return float(np.max(self.residuals)) if self.residuals is not None else 0.0

    def metadata(self):
        return {"n": self.n, "T": self.T, "mass": self.system.mass, "hbar": self.system.hbar,
                "dim": self.system.dim, "potential": format_terms(self.potential),
                "grid": self.nodes.metadata(), "worst_residual": self.worst_residual,
                "quadrature_error": self.quadrature_error, "caustic_pairs": self.caustic_pairs}


def _upper_pairs(n):
    k, l = np.triu_indices(n)
    return list(zip(k.tolist(), l.tolist()))


def pair_action(system, potential, nodes, k, l, T, config):
    traj = solve_trajectory_bvp(system, potential, nodes[k], nodes[l], T, config)
    act = evaluate_action(system, potential, traj, tol=math.inf)
    return act.value, act.error_estimate, traj.residual, traj.caustic_warning


def assemble_action_matrix(system: SystemParams, potential: PolynomialPotential, nodes: NodeSet,
                           T: float, config: ShootingConfig = ShootingConfig(),
                           workers: int = 1) -> ActionMatrix:
    """Solve one boundary-value problem per upper-triangle pair and mirror.

    Every pair writes only its own slot, so the result does not depend on how
    pairs are scheduled across workers.
    """
    if potential.dim != nodes.dim or system.dim != nodes.dim:
        raise InvalidGridError("node, system and potential dimensions differ")
    pts = np.asarray(nodes.nodes, dtype=float)
    n = len(pts)
    values = np.empty((n, n))
    resid = np.zeros((n, n))
    qerr = np.zeros((n, n))
    caustic = np.zeros((n, n), dtype=bool)
    pairs = _upper_pairs(n)

    def run(chunk):
        for k, l in chunk:
            try:
                s, e, r, c = pair_action(system, potential, pts, k, l, T, config)
            except BVPFailure as exc:
                raise AssemblyError(str(exc), (k, l)) from exc
            values[k, l] = s
            resid[k, l] = r
            qerr[k, l] = e
            caustic[k, l] = c

    workers = max(1, int(workers))
    chunks = [pairs[i::workers] for i in range(workers)]
    if workers == 1:
        run(pairs)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(run, c) for c in chunks]:
                fut.result()
    iu = np.triu_indices(n, 1)
    values[(iu[1], iu[0])] = values[iu]
    resid[(iu[1], iu[0])] = resid[iu]
    if not np.all(np.isfinite(values)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(values))[0])
        raise AssemblyError("non-finite action", bad)
    return ActionMatrix(values, nodes, float(T), system, potential, resid,
                        float(qerr.max()), int(caustic.sum()))


def save_action_matrix(matrix: ActionMatrix, path) -> tuple[Path, Path]:
    """Write the text matrix and its JSON sidecar (``<path>.json``)."""
    path = Path(path)
    path.write_text(matrix_text(matrix))
    side = path.with_suffix(path.suffix + ".json")
    side.write_text(matrix_sidecar(matrix))
    return path, side


def matrix_text(matrix: ActionMatrix) -> str:
    g = matrix.nodes
    lines = [FORMAT_TAG,
             f"N = {matrix.n}",
             f"T = {matrix.T:.17g}",
             f"mass = {matrix.system.mass:.17g}",
             f"hbar = {matrix.system.hbar:.17g}",
             f"dim = {matrix.system.dim}",
             f"potential = {format_terms(matrix.potential)}",
             f"grid_extent = {g.extent:.17g}",
             f"grid_spacing = {g.spacing:.17g}",
             f"grid_deformation = {g.deformation:.17g}",
             f"grid_deformed = {str(g.deformed).lower()}",
             f"seed = {'none' if g.seed is None else g.seed}",
             "# values: N rows of N entries, row-major"]
    lines += [" ".join(format(v, ".17g") for v in row) for row in matrix.values]
    return "\n".join(lines) + "\n"


def matrix_sidecar(matrix: ActionMatrix) -> str:
    meta = matrix.metadata()
    meta["nodes"] = matrix.nodes.nodes.tolist()
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def load_action_matrix(path) -> ActionMatrix:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != FORMAT_TAG:
        raise ValueError(f"{path} is not an action-matrix file")
    header, body = {}, []
    for line in lines[1:]:
        if line.startswith("#") or not line.strip():
            continue
        if "=" in line:
            key, val = (s.strip() for s in line.split("=", 1))
            header[key] = val
        else:
            body.append([float(v) for v in line.split()])
    values = np.array(body)
    n = int(header["N"])
    if values.shape != (n, n):
        raise ValueError(f"expected {n}x{n} entries, found {values.shape}")
    dim = int(header["dim"])
    side = path.with_suffix(path.suffix + ".json")
    nodes_arr = (np.array(json.loads(side.read_text())["nodes"]) if side.exists()
                 else np.full((n, dim), np.nan))
    seed = None if header["seed"] == "none" else int(header["seed"])
    nodes = NodeSet(nodes_arr.reshape(n, dim), float(header["grid_extent"]),
                    float(header["grid_spacing"]), dim, float(header["grid_deformation"]), seed,
                    header["grid_deformed"] == "true")
    system = SystemParams(float(header["mass"]), float(header["hbar"]), dim)
    return ActionMatrix(values, nodes, float(header["T"]), system,
                        PolynomialPotential(parse_terms(header["potential"])))
