"""Regularity diagnostics for solved transport scenarios.

Pointwise C^1 regularity is not decidable from discrete data, so the
criteria here are refinement-based: a genuine kink keeps a gradient jump of
fixed size as the grid is halved, while discretization noise contracts like
the spacing.  Dually, a strict contact shrinks to one sample as the target
resolution grows, while a flat piece keeps a fixed diameter.  The thresholds
(contraction factor 1.5, contact diameter 3 spacings) are our own discrete
proxies, not constants from the theory.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.spatial import cKDTree

from .costs import CostFunction, solve_y_from_gradient
from .errors import (
    BoundaryNode,
    MismatchedScenarios,
    MtwkitError,
    NotASupport,
)
from .geometry import CSupport
from .transport import GridFunction

__all__ = [
    "SuperdifferentialSample",
    "superdifferential",
    "gradient_jump_field",
    "c_superdifferential",
    "c_normal_map",
    "ContactSet",
    "contact_set",
    "contact_sets_from_plan",
    "RegularityReport",
    "regularity_report",
]


@dataclasses.dataclass
class SuperdifferentialSample:
    """Discrete supergradient set at a grid node: one-sided difference
    gradients from the adjacent cells, reduced to extreme points."""

    point: np.ndarray
    gradients: np.ndarray      # all collected one-sided gradients, (2^dim, dim)
    vertices: np.ndarray       # extreme points of their hull
    jump: float                # max pairwise distance
    set_dimension: int
    is_singleton: bool


def _extreme_points(pts, tol=1e-12):
    """Extreme points of a small point cloud, robust to degeneracy."""
    pts = np.asarray(pts, dtype=float)
    center = pts.mean(axis=0)
    spread = pts - center
    sv = np.linalg.svd(spread, compute_uv=False)
    scale = max(1.0, float(np.max(np.abs(pts))))
    rank = int(np.sum(sv > tol * scale * len(pts)))
    if rank == 0:
        return center[None, :], 0
    if rank == 1:
        direction = np.linalg.svd(spread, compute_uv=True)[2][0]
        proj = spread @ direction
        return pts[[int(np.argmin(proj)), int(np.argmax(proj))]], 1
    from scipy.spatial import ConvexHull

    hull = ConvexHull(pts)
    return pts[hull.vertices], rank


def superdifferential(
    u_grid: GridFunction,
    node,
    jump_tol: float | None = None,
    concavity_bound: float | None = None,
) -> SuperdifferentialSample:
    """One-sided difference gradients at an interior node, as a convex set.

    ``node`` is a grid multi-index.  Raises BoundaryNode when the full
    2*dim-neighborhood is not available (boundary diagnostics are out of
    scope; interior ones suffice for positive densities).  The semi-concavity
    precondition is checked as an upper bound on the pure second differences.
    """
    if u_grid.values is None:
        raise ValueError("grid carries no values")
    idx = tuple(int(i) for i in node)
    dim = u_grid.dim
    vals = u_grid.values
    for d in range(dim):
        if idx[d] <= 0 or idx[d] >= u_grid.shape[d] - 1:
            raise BoundaryNode(f"node {idx} has no interior stencil along axis {d}")
    if not u_grid.interior_mask()[idx]:
        raise BoundaryNode(f"node {idx} touches the domain mask")

    h = u_grid.spacing
    u0 = vals[idx]
    one_sided = np.empty((2, dim))
    for d in range(dim):
        up = list(idx)
        dn = list(idx)
        up[d] += 1
        dn[d] -= 1
        one_sided[0, d] = (vals[tuple(up)] - u0) / h[d]       # forward
        one_sided[1, d] = (u0 - vals[tuple(dn)]) / h[d]       # backward
        d2 = (vals[tuple(up)] - 2 * u0 + vals[tuple(dn)]) / h[d] ** 2
        if concavity_bound is not None and d2 > concavity_bound:
            raise MtwkitError(
                f"second difference {d2:.3e} exceeds the semi-concavity bound "
                f"{concavity_bound:.3e} at node {idx}"
            )

    grads = np.array(
        [[one_sided[s[d], d] for d in range(dim)] for s in np.ndindex(*(2,) * dim)]
    )
    jump = float(np.linalg.norm(one_sided[0] - one_sided[1]))
    if jump_tol is None:
        lip = max(1.0, float(np.max(np.abs(grads))))
        jump_tol = 2.0 * float(np.max(h)) * lip
    vertices, rank = _extreme_points(grads)
    singleton = jump <= jump_tol
    if singleton:
        vertices, rank = grads.mean(axis=0)[None, :], 0
    x0 = u_grid.origin + u_grid.spacing * np.array(idx, dtype=float)
    return SuperdifferentialSample(
        point=x0,
        gradients=grads,
        vertices=vertices,
        jump=jump,
        set_dimension=rank,
        is_singleton=singleton,
    )


def gradient_jump_field(u_grid: GridFunction):
    """|forward - backward| one-sided gradient gap per node (NaN off-interior).

    The 2^dim one-sided gradients form a box in gradient space, so the max
    pairwise distance is exactly the forward/backward diagonal.
    """
    if u_grid.values is None:
        raise ValueError("grid carries no values")
    vals = u_grid.values
    dim = u_grid.dim
    gap2 = np.zeros(u_grid.shape)
    for d in range(dim):
        fwd = (np.roll(vals, -1, axis=d) - vals) / u_grid.spacing[d]
        bwd = (vals - np.roll(vals, 1, axis=d)) / u_grid.spacing[d]
        gap2 = gap2 + (fwd - bwd) ** 2
    out = np.sqrt(gap2)
    out[~u_grid.interior_mask()] = np.nan
    return out


def c_superdifferential(cost: CostFunction, sample: SuperdifferentialSample, y_init=None):
    """Images of the supergradient extreme points under the inverse gradient map.

    Returns (points, failures) where failures lists (vertex, reason) for
    vertices whose Newton solve did not converge.
    """
    images = []
    failures = []
    for p in sample.vertices:
        try:
            images.append(solve_y_from_gradient(cost, sample.point, p, y_init=y_init))
        except MtwkitError as err:
            failures.append((p.copy(), str(err)))
    return (np.array(images) if images else np.empty((0, sample.point.size))), failures


def c_normal_map(cost, X, u, x0_index, Y, cost_matrix=None, tol: float = 1e-9):
    """Targets whose cost profile supports u globally at X[x0_index].

    Returns indices j with u(x) <= c(x, y_j) - c(x0, y_j) + u(x0) + tol for
    every sample x.  Always a subset of the c-superdifferential images.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    u = np.asarray(u, dtype=float).reshape(-1)
    C = cost.eval_matrix(X, Y) if cost_matrix is None else np.asarray(cost_matrix)
    i0 = int(x0_index)
    slack = C - C[i0][None, :] + u[i0] - u[:, None]
    return np.flatnonzero(np.min(slack, axis=0) >= -tol)


@dataclasses.dataclass
class ContactSet:
    """Where a c-support of v touches it, with its component structure."""

    support: CSupport
    members: np.ndarray
    n_components: int
    diameter: float
    radius: float
    contact_tol: float


def _components(points, radius):
    n = len(points)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(points[i] - points[j]) <= radius:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    return len({find(i) for i in range(n)})


def contact_set(
    cost: CostFunction,
    Y,
    v,
    support: CSupport,
    radius: float | None = None,
    contact_tol: float | None = None,
    support_tol: float = 1e-9,
    hstar=None,
) -> ContactSet:
    """Members of {y : h*(y) = v(y)} for a global c-support h* of v.

    Raises NotASupport if h* dips below v anywhere (beyond ``support_tol``).
    Components are computed on an r-neighborhood graph with r defaulting to
    twice the largest nearest-neighbor spacing of the target samples.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    v = np.asarray(v, dtype=float).reshape(-1)
    if hstar is None:
        hstar = support.values_over(cost, Y, side="target")
    gap = hstar - v
    worst = float(gap.min())
    if worst < -support_tol:
        raise NotASupport(
            f"h* dips {abs(worst):.3e} below v (tolerance {support_tol:g})"
        )
    if contact_tol is None:
        contact_tol = 2.0 * support_tol
    members = np.flatnonzero(gap <= contact_tol)
    if radius is None:
        if len(Y) > 1:
            dists, _ = cKDTree(Y).query(Y, k=2)
            radius = 2.0 * float(dists[:, 1].max())
        else:
            radius = 1.0
    pts = Y[members]
    if len(members) <= 1:
        diameter = 0.0
        n_comp = 1 if len(members) == 1 else 0
    else:
        diff = pts[:, None, :] - pts[None, :, :]
        diameter = float(np.sqrt((diff**2).sum(-1).max()))
        n_comp = _components(pts, radius)
    return ContactSet(support, members, n_comp, diameter, radius, contact_tol)


def contact_sets_from_plan(scenario, support_tol: float = 1e-9, max_supports=None):
    """Contact sets of v for the supports induced by the plan's pairs.

    Every support pair (i, j) of a solved instance gives the global support
    h*(y) = c(x_i, y) - u(x_i) of v touching at y_j; this returns the contact
    set of each (or of an evenly-spaced subset when max_supports is set).
    """
    plan = scenario.plan
    C = scenario.cost_matrix
    u = scenario.potentials.u
    v = scenario.potentials.v
    Y = scenario.nu.points
    idx = np.arange(plan.size)
    if max_supports is not None and plan.size > max_supports:
        idx = np.linspace(0, plan.size - 1, max_supports).astype(int)
    out = []
    for t in idx:
        i = int(plan.source_idx[t])
        sup = CSupport(point=scenario.mu.points[i].copy(), offset=-float(u[i]))
        hstar = C[i] - u[i]
        out.append(
            contact_set(
                scenario.cost,
                Y,
                v,
                sup,
                support_tol=support_tol,
                hstar=hstar,
            )
        )
    return out


@dataclasses.dataclass
class RegularityReport:
    """Refinement-based verdicts on Theorem-1 behavior for a scenario pair."""

    max_gradient_jump_coarse: float
    max_gradient_jump_fine: float
    jump_contraction: float
    multivalued_fraction_coarse: float
    multivalued_fraction_fine: float
    contact_diameters: list
    contact_components: list
    max_contact_diameter: float
    max_contact_components: int
    target_spacing: float
    local_global_violations: int
    kink_nodes_checked: int
    u_c1: bool
    v_strict: bool
    duality_consistent: bool
    spacings: dict
    thresholds: dict

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["contact_diameters"] = [float(x) for x in self.contact_diameters]
        d["contact_components"] = [int(x) for x in self.contact_components]
        return d


def _max_jump(scenario):
    grid = scenario.source_grid
    field = gradient_jump_field(grid)
    if np.all(np.isnan(field)):
        return 0.0
    return float(np.nanmax(field))


def regularity_report(
    coarse,
    fine,
    contraction_threshold: float = 1.5,
    contact_spacing_factor: float = 3.0,
    jump_atol: float | None = None,
    max_supports: int | None = None,
    max_kink_nodes: int = 200,
) -> RegularityReport:
    """Theorem-1 diagnostics from the same scenario solved at h and h/2.

    u is declared C^1 when the worst gradient jump contracts by at least the
    threshold under refinement (or is negligible outright); v is declared
    strictly c-concave when every plan-support contact set has diameter at
    most ``contact_spacing_factor`` target spacings on the fine solve.  The
    two verdicts are expected to agree under the strong-condition hypotheses;
    ``duality_consistent`` records whether they do.  Kink nodes additionally
    get the local-vs-global support comparison: a supergradient vertex whose
    image admits no global support is a breakdown witness.
    """
    if getattr(coarse, "fingerprint", None) != getattr(fine, "fingerprint", None):
        raise MismatchedScenarios(
            "the two solved inputs carry different scenario fingerprints"
        )
    if coarse.grid_n >= fine.grid_n:
        raise MismatchedScenarios("expected the first argument to be the coarser solve")

    jump_c = _max_jump(coarse)
    jump_f = _max_jump(fine)
    if jump_atol is None:
        lip = max(
            1.0, float(np.nanmax(np.abs(coarse.source_grid.values)))
        )
        jump_atol = 1e-10 * lip
    contraction = math.inf if jump_f <= jump_atol else jump_c / jump_f
    u_c1 = jump_f <= jump_atol or contraction >= contraction_threshold

    sets = contact_sets_from_plan(fine, max_supports=max_supports)
    diameters = [cs.diameter for cs in sets]
    components = [cs.n_components for cs in sets]
    target_spacing = float(np.max(fine.target_grid.spacing))
    max_diam = max(diameters) if diameters else 0.0
    v_strict = max_diam <= contact_spacing_factor * target_spacing

    # Local-vs-global comparison at the fine grid's kink nodes.  A node is a
    # kink when its one-sided gradient gap exceeds 2h times the Lipschitz
    # scale (discretization produces O(h) gaps, a crease an O(1) gap).  At a
    # kink, the supergradient vertices map to candidate targets; under the
    # strong condition every such local support is global, so a vertex image
    # failing the global test by more than the O(h^2) discretization slack is
    # a breakdown witness.
    violations = 0
    checked = 0
    grid = fine.source_grid
    field = gradient_jump_field(grid)
    X = fine.mu.points
    u = fine.potentials.u
    flat_nodes = np.flatnonzero(grid.mask.ravel())
    row_of_node = {int(n): r for r, n in enumerate(flat_nodes)}
    interior = grid.interior_mask()
    h_max = float(np.max(grid.spacing))
    lip = 1.0
    for d in range(grid.dim):
        g = np.abs(np.diff(grid.values, axis=d)) / grid.spacing[d]
        if np.any(np.isfinite(g)):
            lip = max(lip, float(np.nanmax(g)))
    jump_tol = 2.0 * h_max * lip
    global_tol = 10.0 * h_max**2 * lip
    kink_nodes = [
        int(n)
        for n in flat_nodes
        if interior[np.unravel_index(int(n), grid.shape)]
        and not np.isnan(field[np.unravel_index(int(n), grid.shape)])
        and field[np.unravel_index(int(n), grid.shape)] > jump_tol
    ]
    if len(kink_nodes) > max_kink_nodes:
        sel = np.linspace(0, len(kink_nodes) - 1, max_kink_nodes).astype(int)
        kink_nodes = [kink_nodes[s] for s in sel]
    for node in kink_nodes:
        midx = np.unravel_index(node, grid.shape)
        row = row_of_node[node]
        try:
            sample = superdifferential(grid, midx, jump_tol=jump_tol)
        except BoundaryNode:
            continue
        if sample.is_singleton:
            continue
        images, failures = c_superdifferential(fine.cost, sample)
        checked += 1
        bad = len(failures) > 0
        for y_star in images:
            prof = fine.cost.eval_matrix(X, y_star[None, :])[:, 0]
            slack = prof - fine.cost.eval(X[row], y_star) + u[row] - u
            if float(slack.min()) < -global_tol:
                bad = True
                break
        if bad:
            violations += 1

    return RegularityReport(
        max_gradient_jump_coarse=jump_c,
        max_gradient_jump_fine=jump_f,
        jump_contraction=float(contraction),
        multivalued_fraction_coarse=coarse.extraction.multivalued_fraction,
        multivalued_fraction_fine=fine.extraction.multivalued_fraction,
        contact_diameters=diameters,
        contact_components=components,
        max_contact_diameter=float(max_diam),
        max_contact_components=max(components) if components else 0,
        target_spacing=target_spacing,
        local_global_violations=violations,
        kink_nodes_checked=checked,
        u_c1=bool(u_c1),
        v_strict=bool(v_strict),
        duality_consistent=bool(u_c1 == v_strict),
        spacings={
            "source_coarse": float(np.max(coarse.source_grid.spacing)),
            "source_fine": float(np.max(grid.spacing)),
            "target_fine": target_spacing,
        },
        thresholds={
            "contraction": contraction_threshold,
            "contact_spacing_factor": contact_spacing_factor,
            "jump_atol": float(jump_atol),
        },
    )
