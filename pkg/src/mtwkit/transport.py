"""Discrete Kantorovich problems: measures, exact solves, c-transforms,
optimal maps, and Monge-Ampere residuals.

The solver is exact: costs are scaled to int64 at 1e-9 resolution and pivoted
by network simplex to exact termination, then the integer duals are rescaled.
Entropic regularization is deliberately absent; the regularity diagnostics
downstream need crisp argmin sets, which blurring would destroy.
"""

from __future__ import annotations

import csv
import dataclasses
import math

import numpy as np

from ._simplex import solve_transport_int
from .costs import CostFunction
from .errors import (
    EmptyMeasure,
    MassImbalance,
    NoQualifiedNodes,
    ScaleExceeded,
)

__all__ = [
    "DiscreteMeasure",
    "PotentialPair",
    "TransportPlan",
    "GridFunction",
    "normalize_and_validate",
    "solve_discrete",
    "c_transform",
    "MapExtraction",
    "extract_map",
    "MaResidualReport",
    "ma_residual",
    "measure_from_csv",
    "measure_to_csv",
]

COST_RESOLUTION = 1e-9
DESK_SCALE_CAP = 5000
FEASIBILITY_TOL = 1e-9


@dataclasses.dataclass
class DiscreteMeasure:
    """A weighted point cloud with positive weights summing to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.points.shape[0] != self.weights.size:
            raise ValueError("points and weights disagree in length")

    @property
    def size(self):
        return self.weights.size

    @property
    def dim(self):
        return self.points.shape[1]

    def weight_ratio(self):
        """max/min weight; a crude stand-in for the density bound constants."""
        return float(self.weights.max() / self.weights.min())

    def check(self):
        if self.size == 0:
            raise EmptyMeasure("measure has no points")
        if np.any(self.weights <= 0):
            raise EmptyMeasure("measure carries a nonpositive weight")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights do not sum to 1")
        return self


@dataclasses.dataclass
class PotentialPair:
    """Dual variables on the source and target samples, u(first source) = 0."""

    u: np.ndarray
    v: np.ndarray

    def feasibility_gap(self, cost_matrix):
        """max over pairs of u_i + v_j - c_ij (<= tol when feasible)."""
        return float(np.max(self.u[:, None] + self.v[None, :] - cost_matrix))


@dataclasses.dataclass
class TransportPlan:
    """Sparse optimal coupling: parallel arrays of (source, target, mass)."""

    source_idx: np.ndarray
    target_idx: np.ndarray
    mass: np.ndarray
    objective: float

    @property
    def size(self):
        return self.mass.size

    def row_sums(self, m):
        out = np.zeros(m)
        np.add.at(out, self.source_idx, self.mass)
        return out

    def col_sums(self, k):
        out = np.zeros(k)
        np.add.at(out, self.target_idx, self.mass)
        return out


@dataclasses.dataclass
class GridFunction:
    """Values on a regular rectangular lattice, with a domain mask.

    Nodes outside the mask hold NaN.  ``spacing`` is uniform per axis; the
    node at multi-index (i, j, ...) sits at origin + index * spacing.
    """

    origin: np.ndarray
    spacing: np.ndarray
    shape: tuple
    mask: np.ndarray
    values: np.ndarray | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(-1)
        self.spacing = np.asarray(self.spacing, dtype=float).reshape(-1)
        self.shape = tuple(int(s) for s in self.shape)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.shape)
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float).reshape(self.shape)

    @classmethod
    def over_box(cls, lo, hi, n_per_axis, mask_fn=None):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = (n_per_axis,) * lo.size
        spacing = (hi - lo) / (n_per_axis - 1)
        grid = cls(lo, spacing, shape, np.ones(shape, dtype=bool))
        if mask_fn is not None:
            grid.mask = mask_fn(grid.all_points()).reshape(shape)
        return grid

    @property
    def dim(self):
        return self.origin.size

    def all_points(self):
        axes = [
            self.origin[d] + self.spacing[d] * np.arange(self.shape[d])
            for d in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def masked_points(self):
        return self.all_points()[self.mask.ravel()]

    def with_masked_values(self, vals):
        """Return a copy carrying ``vals`` (given on masked nodes, C-order)."""
        full = np.full(self.shape, np.nan)
        full[self.mask] = np.asarray(vals, dtype=float)
        return GridFunction(self.origin, self.spacing, self.shape, self.mask, full)

    def interior_mask(self):
        """Nodes whose full 2*dim neighborhood lies inside the mask."""
        inner = self.mask.copy()
        for d in range(self.dim):
            inner &= np.roll(self.mask, 1, axis=d) & np.roll(self.mask, -1, axis=d)
            sl = [slice(None)] * self.dim
            sl[d] = 0
            inner[tuple(sl)] = False
            sl[d] = -1
            inner[tuple(sl)] = False
        return inner


def normalize_and_validate(f_raw, g_raw, normalize=True):
    """Build the source and target measures, normalizing masses to one.

    Rejects nonpositive weights (a vanishing density breaks the two-sided
    density bounds the theory assumes) and reports the weight ratios.  With
    ``normalize=False`` the totals must already agree to 1e-9.
    """
    out = []
    totals = []
    for name, raw in (("source", f_raw), ("target", g_raw)):
        pts = np.atleast_2d(np.asarray(raw[0], dtype=float))
        w = np.asarray(raw[1], dtype=float).reshape(-1)
        if w.size == 0:
            raise EmptyMeasure(f"{name} measure has no points")
        if np.any(w < 0):
            raise EmptyMeasure(f"{name} measure has a negative weight")
        if np.any(w == 0):
            bad = int(np.flatnonzero(w == 0)[0])
            raise EmptyMeasure(
                f"{name} measure carries zero weight at point index {bad}; "
                "the density bounds require strictly positive mass"
            )
        total = math.fsum(w)
        if total <= 0:
            raise EmptyMeasure(f"{name} measure has no mass")
        totals.append(total)
        out.append((pts, w, total))
    if not normalize and abs(totals[0] - totals[1]) > 1e-9:
        raise MassImbalance(
            f"totals differ ({totals[0]:.12g} vs {totals[1]:.12g}) and "
            "normalization is disabled"
        )
    measures = tuple(
        DiscreteMeasure(pts, w / total).check() for (pts, w, total) in out
    )
    return measures


def _integerize(cost_matrix):
    scale = max(1.0, float(np.max(np.abs(cost_matrix))))
    res = COST_RESOLUTION * scale
    return np.round(cost_matrix / res).astype(np.int64), res


def solve_discrete(
    cost: CostFunction,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    size_cap: int = DESK_SCALE_CAP,
):
    """Exact optimal plan and dual potentials for a discrete pair.

    Returns (plan, potentials, cost_matrix).  The duals satisfy
    u_i + v_j <= c_ij + 1e-9 everywhere with equality on the support (to the
    integerization resolution), and u is pinned by u[0] = 0.
    """
    mu.check()
    nu.check()
    if mu.size > size_cap or nu.size > size_cap:
        raise ScaleExceeded(
            f"instance {mu.size}x{nu.size} exceeds the desk-scale cap {size_cap}"
        )
    C = cost.eval_matrix(mu.points, nu.points)
    Ci, res = _integerize(C)
    a = mu.weights
    # Exact balance for the flow solver: rescale and pin the last coordinate.
    b = nu.weights * (math.fsum(a) / math.fsum(nu.weights))
    b = b.copy()
    b[-1] = math.fsum(a) - math.fsum(b[:-1])
    plan_mat, u_int, v_int, _ = solve_transport_int(Ci, a, b)

    u = u_int.astype(float) * res
    v = v_int.astype(float) * res
    shift = u[0]
    u = u - shift
    v = v + shift

    si, ti = np.nonzero(plan_mat > 0)
    mass = plan_mat[si, ti]
    objective = float(np.sum(mass * C[si, ti]))
    plan = TransportPlan(si, ti, mass, objective)
    return plan, PotentialPair(u, v), C


def _snap_quantum(*arrays):
    scale = max(float(np.max(np.abs(a))) for a in arrays if a.size)
    scale = max(scale, 1e-300)
    return 2.0 ** (math.ceil(math.log2(scale)) - 40)


def c_transform(cost_matrix, v, tie_tol: float = 1e-12):
    """The discrete transform u_i = min_j (c_ij - v_j), with argmin sets.

    Inputs are snapped to the nearest multiple of a power-of-two quantum
    (about 1e-12 relative) so every subtraction is exact; that makes the
    transform a true order-theoretic polarity and the triple-transform
    identity hold bitwise, which plain float subtraction misses by an ulp on
    roughly half of random instances.

    Returns (u, argmin_sets); ties within ``tie_tol`` of the minimum are all
    recorded.
    """
    C = np.asarray(cost_matrix, dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    q = _snap_quantum(C, v)
    Cq = np.round(C / q) * q
    vq = np.round(v / q) * q
    vals = Cq - vq[None, :]
    u = vals.min(axis=1)
    argmins = [np.flatnonzero(vals[i] <= u[i] + tie_tol) for i in range(C.shape[0])]
    return u, argmins


def c_transform_target(cost_matrix, u, tie_tol: float = 1e-12):
    """The symmetric transform v_j = min_i (c_ij - u_i)."""
    C = np.asarray(cost_matrix, dtype=float)
    u = np.asarray(u, dtype=float).reshape(-1)
    q = _snap_quantum(C, u)
    Cq = np.round(C / q) * q
    uq = np.round(u / q) * q
    vals = Cq - uq[:, None]
    v = vals.min(axis=0)
    argmins = [np.flatnonzero(vals[:, j] <= v[j] + tie_tol) for j in range(C.shape[1])]
    return v, argmins


@dataclasses.dataclass
class MapExtraction:
    """The a.e. optimal map read off the dual: argmins of c(x, .) - v."""

    target_of: np.ndarray          # index into Y, or -1 where multivalued
    multivalued: np.ndarray        # bool mask over sources
    argmin_sets: list
    tie_tol: float
    grad_residuals: np.ndarray | None = None   # |Du - D_x c(x, T(x))| where checked

    @property
    def multivalued_fraction(self):
        return float(np.mean(self.multivalued))


def extract_map(
    cost: CostFunction,
    cost_matrix,
    v,
    X,
    Y,
    u_grid: GridFunction | None = None,
    tie_tol: float | None = None,
) -> MapExtraction:
    """Argmin sets of c(x_i, .) - v over the target samples.

    Singletons define the map; larger sets get the multivalued marker (the
    discrete signature of a gradient jump).  When the source potential lives
    on a grid, the gradient identity |Du(x) - D_x c(x, T(x))| is verified by
    central differences at interior singleton nodes and returned per node.
    """
    C = np.asarray(cost_matrix, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if tie_tol is None:
        tie_tol = 1e-9 * max(1.0, float(np.max(np.abs(C))))
    vals = C - np.asarray(v, dtype=float)[None, :]
    mins = vals.min(axis=1)
    argmin_sets = [np.flatnonzero(vals[i] <= mins[i] + tie_tol) for i in range(len(X))]
    T = np.array([s[0] if s.size == 1 else -1 for s in argmin_sets], dtype=int)
    multi = T < 0

    residuals = None
    if u_grid is not None and u_grid.values is not None:
        residuals = np.full(len(X), np.nan)
        interior = u_grid.interior_mask()
        flat_idx = np.flatnonzero(u_grid.mask.ravel())
        vals_full = u_grid.values
        grads = _grid_gradient(vals_full, u_grid.spacing)
        for row, node in enumerate(flat_idx):
            if multi[row]:
                continue
            midx = np.unravel_index(node, u_grid.shape)
            if not interior[midx]:
                continue
            du = grads[midx]
            if np.any(np.isnan(du)):
                continue
            g = cost.grad_x(X[row], Y[T[row]])
            residuals[row] = float(np.linalg.norm(du - g))
    return MapExtraction(T, multi, argmin_sets, tie_tol, residuals)


def _grid_gradient(values, spacing):
    """Central-difference gradient field; NaN wherever the stencil leaves the mask."""
    dim = values.ndim
    out = np.full(values.shape + (dim,), np.nan)
    for d in range(dim):
        fwd = np.roll(values, -1, axis=d)
        bwd = np.roll(values, 1, axis=d)
        g = (fwd - bwd) / (2.0 * spacing[d])
        sl = [slice(None)] * dim
        sl[d] = 0
        g[tuple(sl)] = np.nan
        sl[d] = -1
        g[tuple(sl)] = np.nan
        out[..., d] = g
    return out


@dataclasses.dataclass
class MaResidualReport:
    residual: np.ndarray       # full grid array, NaN at unqualified nodes
    max_residual: float
    n_qualified: int


def ma_residual(
    cost: CostFunction,
    u_grid: GridFunction,
    extraction: MapExtraction,
    Y,
    f_values,
    g_values,
) -> MaResidualReport:
    """Pointwise Monge-Ampere residual of the discrete potential.

    At interior grid nodes where the map is single-valued (and no stencil
    neighbor is multivalued), compares det(D^2_x c - D^2 u) against
    |det c_{i,j}| f / g(T(x)) with nine-point second differences for D^2 u.
    The equation only holds where the potential is twice differentiable, so
    kinked nodes are excluded rather than averaged over.
    """
    if u_grid.values is None:
        raise ValueError("u_grid carries no values")
    if u_grid.dim != 2:
        raise ValueError("the residual check is implemented on 2-D grids")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    f_values = np.asarray(f_values, dtype=float).reshape(-1)
    g_values = np.asarray(g_values, dtype=float).reshape(-1)
    vals = u_grid.values
    h1, h2 = u_grid.spacing
    X = u_grid.all_points()
    flat_idx = np.flatnonzero(u_grid.mask.ravel())
    row_of_node = {int(n): r for r, n in enumerate(flat_idx)}

    multi_full = np.zeros(u_grid.shape, dtype=bool)
    for r, n in enumerate(flat_idx):
        if extraction.multivalued[r]:
            multi_full[np.unravel_index(n, u_grid.shape)] = True

    interior = u_grid.interior_mask()
    residual = np.full(u_grid.shape, np.nan)
    n_ok = 0
    ni, nj = u_grid.shape
    for i in range(1, ni - 1):
        for j in range(1, nj - 1):
            if not interior[i, j]:
                continue
            node = i * nj + j
            row = row_of_node.get(node)
            if row is None or extraction.multivalued[row]:
                continue
            # exclude nodes whose 9-point stencil touches a kink or the mask edge
            patch_mask = u_grid.mask[i - 1 : i + 2, j - 1 : j + 2]
            patch_multi = multi_full[i - 1 : i + 2, j - 1 : j + 2]
            if not patch_mask.all() or patch_multi.any():
                continue
            uxx = (vals[i + 1, j] - 2 * vals[i, j] + vals[i - 1, j]) / h1**2
            uyy = (vals[i, j + 1] - 2 * vals[i, j] + vals[i, j - 1]) / h2**2
            uxy = (
                vals[i + 1, j + 1] - vals[i + 1, j - 1] - vals[i - 1, j + 1] + vals[i - 1, j - 1]
            ) / (4 * h1 * h2)
            if np.any(np.isnan([uxx, uyy, uxy])):
                continue
            hess_u = np.array([[uxx, uxy], [uxy, uyy]])
            x = X[node]
            y = Y[extraction.target_of[row]]
            lhs = float(np.linalg.det(cost.hess_x(x, y) - hess_u))
            rhs = abs(float(np.linalg.det(cost.mixed_hessian(x, y)))) * (
                f_values[row] / g_values[extraction.target_of[row]]
            )
            residual[i, j] = abs(lhs - rhs)
            n_ok += 1
    if n_ok == 0:
        raise NoQualifiedNodes("no interior single-valued node with a clean stencil")
    return MaResidualReport(residual, float(np.nanmax(residual)), n_ok)


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------


def measure_from_csv(path) -> DiscreteMeasure:
    """Load a measure from rows of coords..., weight (header optional)."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                continue  # header line
    if not rows:
        raise EmptyMeasure(f"no numeric rows in {path}")
    arr = np.array(rows, dtype=float)
    pts, w = arr[:, :-1], arr[:, -1]
    (m, _unused) = normalize_and_validate((pts, w), (pts, w))
    return m


def measure_to_csv(measure: DiscreteMeasure, path):
    dim = measure.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{d + 1}" for d in range(dim)] + ["weight"])
        for p, w in zip(measure.points, measure.weights):
            writer.writerow([repr(float(c)) for c in p] + [repr(float(w))])
