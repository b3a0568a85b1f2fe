"""Cross-curvature (MTW) tensor evaluation and condition classification.

Two equivalent forms are implemented.  The tensor form contracts closed-form
derivative tensors,

    S(x, y, xi, eta) = sum (c^{p,q} c_{ij,p} c_{q,rs} - c_{ij,rs})
                           c^{r,k} c^{s,l} xi_i xi_j eta_k eta_l,

and the z-form differentiates the pure x-Hessian along the dual variable,

    Z(x, y, xi, eta) = d^2/ds^2 [ c_{ij}(x, y(x, z0 + s*eta)) xi_i xi_j ]

with z0 = D_x c(x, y) and y(x, z) the inverse gradient map.  The two satisfy
S = -Z; checking that identity with finite differences is the module's core
correctness test.  Positivity of S on orthogonal frames over a domain pair is
the strong condition (reported as A3); the degenerate fence S >= 0 is the
weak one (A3w).
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from .costs import CostFunction, as_point, inverse_mixed_hessian, solve_y_from_gradient
from .errors import A2Violation

__all__ = [
    "FramePair",
    "MtwReport",
    "mtw_tensor",
    "mtw_tensor_z_form",
    "frame_grid",
    "classify_condition",
]

UNIT_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class FramePair:
    """An orthogonal pair of unit vectors (xi, eta)."""

    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        xi = as_point(self.xi)
        eta = as_point(self.eta, xi.size)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)
        if abs(np.linalg.norm(xi) - 1.0) > UNIT_TOL:
            raise ValueError("xi is not a unit vector")
        if abs(np.linalg.norm(eta) - 1.0) > UNIT_TOL:
            raise ValueError("eta is not a unit vector")
        if abs(float(xi @ eta)) > UNIT_TOL:
            raise ValueError("xi and eta are not orthogonal")


def _split_frame(frame, xi, eta):
    if frame is not None:
        return frame.xi, frame.eta
    if xi is None or eta is None:
        raise ValueError("provide either frame= or both xi= and eta=")
    return np.asarray(xi, dtype=float), np.asarray(eta, dtype=float)


def _tensor_core(cost, x, y):
    """The frame-independent part: A[i,j,k,l] with S = A xi_i xi_j eta_k eta_l."""
    cinv = inverse_mixed_hessian(cost, x, y)  # c^{p,q}: y-type first index
    d3_xxy = cost.d3_xxy(x, y)
    d3_xyy = cost.d3_xyy(x, y)
    d4 = cost.d4_xxyy(x, y)
    inner = np.einsum("pq,ijp,qrs->ijrs", cinv, d3_xxy, d3_xyy) - d4
    return np.einsum("ijrs,rk,sl->ijkl", inner, cinv, cinv)


def mtw_tensor(cost: CostFunction, x, y, xi=None, eta=None, frame: FramePair | None = None):
    """The cross-curvature contraction in its tensor form (positive = good).

    Accepts raw vectors (not necessarily unit or orthogonal; the value is
    quadratic in each argument) or a validated :class:`FramePair`.
    """
    x = as_point(x, cost.dimension)
    y = as_point(y, cost.dimension)
    cost.check_valid(x, y)
    xi, eta = _split_frame(frame, xi, eta)
    core = _tensor_core(cost, x, y)
    return float(np.einsum("ijkl,i,j,k,l->", core, xi, xi, eta, eta))


def mtw_tensor_z_form(
    cost: CostFunction,
    x,
    y,
    xi=None,
    eta=None,
    frame: FramePair | None = None,
    h: float | None = None,
    newton_tol: float = 1e-12,
):
    """The contraction via second z-differences of the x-Hessian (1.9 form).

    Equals minus the tensor form up to the FD truncation error.  The step
    defaults to 1e-3 times the local gradient scale; each stencil node
    inverts the gradient map by Newton iteration, warm-started from y.
    A step-halving consistency estimate guards against an unlucky step: the
    extrapolated value is returned.
    """
    x = as_point(x, cost.dimension)
    y = as_point(y, cost.dimension)
    cost.check_valid(x, y)
    xi, eta = _split_frame(frame, xi, eta)
    z0 = cost.grad_x(x, y)
    if h is None:
        h = 1e-3 * max(1.0, float(np.linalg.norm(z0)))

    def g(s):
        ys = solve_y_from_gradient(cost, x, z0 + s * eta, y_init=y, tol=newton_tol)
        hess = cost.hess_x(x, ys)
        return float(xi @ hess @ xi)

    g0 = g(0.0)

    def second_diff(step):
        return (g(step) - 2.0 * g0 + g(-step)) / step**2

    coarse = second_diff(h)
    fine = second_diff(0.5 * h)
    return float((4.0 * fine - coarse) / 3.0)


def frame_grid(dim: int, n_frames: int):
    """A deterministic grid of orthogonal unit frame pairs.

    In 2-D the pairs are rotations (cos t, sin t), (-sin t, cos t) over half a
    turn, which covers every orthogonal frame up to signs.  In 3-D, xi sweeps
    a latitude-longitude grid of the hemisphere and eta rotates in the plane
    orthogonal to xi.
    """
    frames = []
    if dim == 2:
        for t in np.linspace(0.0, math.pi, n_frames, endpoint=False):
            xi = np.array([math.cos(t), math.sin(t)])
            eta = np.array([-math.sin(t), math.cos(t)])
            frames.append(FramePair(xi, eta))
        return frames
    if dim == 3:
        n_xi = max(2, int(round(math.sqrt(n_frames))))
        n_eta = max(2, n_frames // n_xi)
        for a in np.linspace(0.0, math.pi, n_xi, endpoint=False):
            for b in np.linspace(0.0, math.pi, max(2, n_xi // 2), endpoint=False):
                xi = np.array(
                    [math.sin(b) * math.cos(a), math.sin(b) * math.sin(a), math.cos(b)]
                )
                u = np.array([0.0, 0.0, 1.0])
                if abs(xi @ u) > 0.9:
                    u = np.array([1.0, 0.0, 0.0])
                e1 = u - (u @ xi) * xi
                e1 /= np.linalg.norm(e1)
                e2 = np.cross(xi, e1)
                for t in np.linspace(0.0, math.pi, n_eta, endpoint=False):
                    eta = math.cos(t) * e1 + math.sin(t) * e2
                    frames.append(FramePair(xi, eta / np.linalg.norm(eta)))
        return frames
    raise ValueError("frame grids are implemented for dimensions 2 and 3")


@dataclasses.dataclass
class MtwReport:
    """Outcome of sampling the cross-curvature tensor over a domain pair."""

    inf_value: float
    argmin: dict
    c0_estimate: float
    classification: str
    n_pairs: int
    n_frames: int
    tol_pos: float
    refined: bool
    boundary_hits: int
    swapped_inf_value: float | None = None

    def to_json(self, **kwargs):
        d = dataclasses.asdict(self)
        d["argmin"] = {k: np.asarray(v).tolist() for k, v in self.argmin.items()}
        kwargs.setdefault("sort_keys", True)
        return json.dumps(d, **kwargs)


def _classify(inf_value, tol_pos):
    if inf_value >= tol_pos:
        return "A3"
    if inf_value < -tol_pos:
        return "VIOLATED"
    return "A3w"


def _domain_lattice(domain, per_axis):
    """Deterministic lattice of points inside a domain (closure of its box)."""
    lo, hi = domain.box
    axes = [np.linspace(lo[k], hi[k], per_axis) for k in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    mask = domain.contains(pts, closure=True)
    return pts[mask], int(np.sum(~domain.contains(pts[mask], closure=False)))


def _coordinate_descent(fun, u0, lo, hi, steps, n_sweeps=40, shrink=0.5):
    """Simple deterministic coordinate descent with box projection."""
    u = np.array(u0, dtype=float)
    best = fun(u)
    step = np.array(steps, dtype=float)
    for _ in range(n_sweeps):
        improved = False
        for k in range(u.size):
            for sgn in (1.0, -1.0):
                cand = u.copy()
                cand[k] = min(max(cand[k] + sgn * step[k], lo[k]), hi[k])
                if cand[k] == u[k]:
                    continue
                val = fun(cand)
                if val < best:
                    u, best = cand, val
                    improved = True
                    break
        if not improved:
            step *= shrink
            if np.max(step) < 1e-10:
                break
    return u, best


def classify_condition(
    cost: CostFunction,
    source,
    target,
    n_pairs: int = 1000,
    n_frames: int = 32,
    tol_pos: float = 1e-8,
    refine: bool = True,
    check_swapped: bool = False,
) -> MtwReport:
    """Estimate the infimum of the tensor form over a domain pair and classify.

    Samples a Cartesian lattice over each domain (closed boxes; boundary hits
    are counted in the report), a rotation grid over orthogonal frames, and
    optionally polishes the worst candidate by coordinate descent over
    (x, y, frame angle).  Classification: A3 when the infimum clears +tol_pos,
    VIOLATED when it drops below -tol_pos, A3w in the band between.
    """
    dim = cost.dimension
    per_axis = max(2, int(round(n_pairs ** (1.0 / (2 * dim)))))
    xs, bhx = _domain_lattice(source, per_axis)
    ys, bhy = _domain_lattice(target, per_axis)
    frames = frame_grid(dim, n_frames)
    xi_mat = np.stack([f.xi for f in frames])
    eta_mat = np.stack([f.eta for f in frames])

    best = math.inf
    arg = None
    n_eval = 0
    for x in xs:
        for y in ys:
            if not cost.is_valid(x, y):
                continue
            try:
                core = _tensor_core(cost, x, y)
            except A2Violation as err:
                err.x, err.y = x, y
                raise
            vals = np.einsum(
                "ijkl,fi,fj,fk,fl->f", core, xi_mat, xi_mat, eta_mat, eta_mat
            )
            n_eval += 1
            k = int(np.argmin(vals))
            if vals[k] < best:
                best = float(vals[k])
                arg = (x.copy(), y.copy(), frames[k].xi.copy(), frames[k].eta.copy())

    if arg is None:
        raise ValueError("no valid (x, y) pair found between the two domains")

    refined = False
    if refine and dim == 2:
        # Polish over (x, y, frame angle); spans stay inside the boxes.
        slo, shi = source.box
        tlo, thi = target.box
        x0, y0, xi0, _ = arg
        t0 = math.atan2(xi0[1], xi0[0])

        def fun(u):
            x = u[0:2]
            y = u[2:4]
            if not cost.is_valid(x, y):
                return math.inf
            xi = np.array([math.cos(u[4]), math.sin(u[4])])
            eta = np.array([-math.sin(u[4]), math.cos(u[4])])
            try:
                return mtw_tensor(cost, x, y, xi, eta)
            except A2Violation:
                return math.inf

        lo = np.concatenate([slo, tlo, [-2 * math.pi]])
        hi = np.concatenate([shi, thi, [2 * math.pi]])
        steps = np.concatenate([(shi - slo) / per_axis, (thi - tlo) / per_axis, [math.pi / n_frames]])
        u0 = np.concatenate([x0, y0, [t0]])
        u, val = _coordinate_descent(fun, u0, lo, hi, steps)
        if val < best and source.contains(u[None, 0:2], closure=True)[0] and target.contains(u[None, 2:4], closure=True)[0]:
            best = float(val)
            arg = (
                u[0:2],
                u[2:4],
                np.array([math.cos(u[4]), math.sin(u[4])]),
                np.array([-math.sin(u[4]), math.cos(u[4])]),
            )
            refined = True

    swapped_inf = None
    if check_swapped:
        from .costs import SwappedCost

        rep = classify_condition(
            SwappedCost(cost),
            target,
            source,
            n_pairs=n_pairs,
            n_frames=n_frames,
            tol_pos=tol_pos,
            refine=refine,
            check_swapped=False,
        )
        swapped_inf = rep.inf_value

    classification = _classify(best, tol_pos)
    return MtwReport(
        inf_value=best,
        argmin={"x": arg[0], "y": arg[1], "xi": arg[2], "eta": arg[3]},
        c0_estimate=best if classification == "A3" else 0.0,
        classification=classification,
        n_pairs=n_eval,
        n_frames=len(frames),
        tol_pos=tol_pos,
        refined=refined,
        boundary_hits=bhx + bhy,
        swapped_inf_value=swapped_inf,
    )
