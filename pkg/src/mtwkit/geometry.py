"""Domains, c-segments, c-convexity checks, and the support-interpolation
and level-set monotonicity diagnostics.

A domain is a sampled region: interior points, boundary points with outward
unit normals, an optional smooth defining function phi (phi < 0 inside,
phi = 0 with nonvanishing gradient on the boundary), and a bounding box.
Geometry checks are implemented for dimensions 2 and 3; convex hulls and
level-set reconstruction are desk-scale tools, the formulas themselves are
dimension-generic.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import ConvexHull

from .costs import CostFunction, as_point, inverse_mixed_hessian, solve_y_from_gradient
from .errors import (
    MissingDefiningFunction,
    NoConvergence,
    OutOfValidityDomain,
    RootBracketFailure,
)

__all__ = [
    "Phi",
    "Domain",
    "ball_domain",
    "ellipsoid_domain",
    "superellipse_domain",
    "dumbbell_domain",
    "box_domain",
    "annulus_sector_domain",
    "domain_from_json",
    "domain_to_json",
    "CSegment",
    "CSupport",
    "c_segment",
    "ConvexityVerdict",
    "image_c_convexity",
    "AnalyticConvexityReport",
    "analytic_c_convexity",
    "SupportInterpolationReport",
    "support_interpolation_check",
    "LevelSetProbe",
    "level_set_monotonicity",
    "y_frame_map",
]


# ---------------------------------------------------------------------------
# Defining functions and domains
# ---------------------------------------------------------------------------


class Phi:
    """A smooth defining function with gradient and Hessian evaluators."""

    form = "custom"
    params: dict = {}

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def spec(self):
        return {"form": self.form, **self.params}


class BallPhi(Phi):
    form = "ball"

    def __init__(self, center, radius):
        self.center = as_point(center)
        self.radius = float(radius)
        self.params = {"center": self.center.tolist(), "radius": self.radius}

    def value(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ d) - self.radius**2

    def grad(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.center)

    def hess(self, x):
        return 2.0 * np.eye(self.center.size)


class EllipsoidPhi(Phi):
    form = "ellipsoid"

    def __init__(self, center, semi_axes):
        self.center = as_point(center)
        self.semi = as_point(semi_axes, self.center.size)
        self.params = {"center": self.center.tolist(), "semi_axes": self.semi.tolist()}

    def value(self, x):
        d = (np.asarray(x, dtype=float) - self.center) / self.semi
        return float(d @ d) - 1.0

    def grad(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.center) / self.semi**2

    def hess(self, x):
        return np.diag(2.0 / self.semi**2)


class SuperellipsePhi(Phi):
    """phi = sum ((x_i - c_i)/a_i)^(2m) - 1; a smooth box-like convex domain."""

    form = "superellipse"

    def __init__(self, center, semi_axes, power=3):
        self.center = as_point(center)
        self.semi = as_point(semi_axes, self.center.size)
        self.m = int(power)
        self.params = {
            "center": self.center.tolist(),
            "semi_axes": self.semi.tolist(),
            "power": self.m,
        }

    def value(self, x):
        d = (np.asarray(x, dtype=float) - self.center) / self.semi
        return float(np.sum(d ** (2 * self.m))) - 1.0

    def grad(self, x):
        d = (np.asarray(x, dtype=float) - self.center) / self.semi
        return 2 * self.m * d ** (2 * self.m - 1) / self.semi

    def hess(self, x):
        d = (np.asarray(x, dtype=float) - self.center) / self.semi
        diag = 2 * self.m * (2 * self.m - 1) * d ** (2 * self.m - 2) / self.semi**2
        return np.diag(diag)


class DumbbellPhi(Phi):
    """A smooth nonconvex peanut in 2-D: phi = u^4 - waist*u^2 + v^2 - bulge,

    with (u, v) the coordinates of (x - center)/scale.  Star-shaped about its
    center, with a concave waist at u = 0 whenever waist > 0.
    """

    form = "dumbbell"

    def __init__(self, center=(0.0, 0.0), scale=1.0, waist=1.0, bulge=0.1):
        self.center = as_point(center, 2)
        self.scale = float(scale)
        self.waist = float(waist)
        self.bulge = float(bulge)
        self.params = {
            "center": self.center.tolist(),
            "scale": self.scale,
            "waist": self.waist,
            "bulge": self.bulge,
        }

    def _local(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def value(self, x):
        u, v = self._local(x)
        return u**4 - self.waist * u**2 + v**2 - self.bulge

    def grad(self, x):
        u, v = self._local(x)
        return np.array([4 * u**3 - 2 * self.waist * u, 2 * v]) / self.scale

    def hess(self, x):
        u, _ = self._local(x)
        return np.diag([12 * u**2 - 2 * self.waist, 2.0]) / self.scale**2


@dataclasses.dataclass
class Domain:
    """Sampled region with boundary normals and an optional defining function."""

    dim: int
    interior: np.ndarray            # (mi, dim)
    boundary: np.ndarray            # (mb, dim)
    normals: np.ndarray             # (mb, dim), outward unit normals
    box: tuple                      # (lo, hi) arrays
    phi: Phi | None = None
    name: str = "domain"

    def __post_init__(self):
        self.interior = np.atleast_2d(np.asarray(self.interior, dtype=float))
        self.boundary = np.atleast_2d(np.asarray(self.boundary, dtype=float))
        self.normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        lo, hi = self.box
        self.box = (as_point(lo, self.dim), as_point(hi, self.dim))
        norms = np.linalg.norm(self.normals, axis=1)
        if self.normals.size and np.max(np.abs(norms - 1.0)) > 1e-8:
            raise ValueError("boundary normals must be unit vectors")
        if self.phi is not None:
            bvals = np.array([self.phi.value(p) for p in self.boundary])
            if bvals.size and np.max(np.abs(bvals)) > 1e-8:
                raise ValueError("phi does not vanish on the boundary samples")
            ivals = np.array([self.phi.value(p) for p in self.interior])
            if ivals.size and np.max(ivals) >= 0:
                raise ValueError("phi is not negative at the interior samples")

    def contains(self, pts, closure=True):
        """Membership test; uses phi when present, else the bounding box."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.phi is not None:
            vals = np.array([self.phi.value(p) for p in pts])
            return vals <= 1e-12 if closure else vals < -1e-12
        lo, hi = self.box
        pad = 0.0 if closure else 1e-12
        return np.all((pts >= lo + pad) & (pts <= hi - pad), axis=1)

    def diameter(self):
        lo, hi = self.box
        return float(np.linalg.norm(hi - lo))


def _ray_cast_boundary(phi, center, directions, t_max):
    """Boundary points of a star-shaped phi-domain along the given rays."""
    pts = []
    for u in directions:
        f = lambda t: phi.value(center + t * u)
        if f(0.0) >= 0:
            raise ValueError("ray-cast center is not interior")
        hi = t_max
        while f(hi) <= 0:
            hi *= 1.5
            if hi > 1e6:
                raise ValueError("boundary not found along ray")
        t = brentq(f, 0.0, hi, xtol=1e-14, rtol=8.9e-16)
        pts.append(center + t * u)
    return np.array(pts)


def _circle_dirs(n):
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    return np.stack([np.cos(t), np.sin(t)], axis=-1)


def _sphere_dirs(n):
    # Fibonacci sphere: deterministic, near-uniform.
    k = np.arange(n)
    z = 1.0 - 2.0 * (k + 0.5) / n
    r = np.sqrt(1.0 - z**2)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    t = golden * k
    return np.stack([r * np.cos(t), r * np.sin(t), z], axis=-1)


def _lattice_in(phi_or_box, lo, hi, per_axis, keep):
    axes = [np.linspace(lo[k], hi[k], per_axis) for k in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return pts[keep(pts)]


def domain_from_phi(phi, center, dim, n_boundary=128, n_interior=200, name="domain", pad=1e-3):
    """Build a sampled Domain from a star-shaped defining function."""
    center = as_point(center, dim)
    dirs = _circle_dirs(n_boundary) if dim == 2 else _sphere_dirs(n_boundary)
    bnd = _ray_cast_boundary(phi, center, dirs, t_max=1.0)
    normals = np.array([phi.grad(p) for p in bnd])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    lo = bnd.min(axis=0)
    hi = bnd.max(axis=0)
    per_axis = max(3, int(round(n_interior ** (1.0 / dim))))
    margin = pad * np.maximum(hi - lo, 1e-12)
    inner = _lattice_in(
        phi,
        lo + margin,
        hi - margin,
        per_axis,
        keep=lambda pts: np.array([phi.value(p) < -1e-12 for p in pts]),
    )
    return Domain(dim, inner, bnd, normals, (lo, hi), phi=phi, name=name)


def ball_domain(center, radius, n_boundary=128, n_interior=200, name=None):
    center = as_point(center)
    phi = BallPhi(center, radius)
    return domain_from_phi(
        phi, center, center.size, n_boundary, n_interior, name=name or "ball"
    )


def ellipsoid_domain(center, semi_axes, n_boundary=128, n_interior=200, name=None):
    center = as_point(center)
    phi = EllipsoidPhi(center, semi_axes)
    return domain_from_phi(
        phi, center, center.size, n_boundary, n_interior, name=name or "ellipsoid"
    )


def superellipse_domain(center, semi_axes, power=3, n_boundary=128, n_interior=200, name=None):
    center = as_point(center)
    phi = SuperellipsePhi(center, semi_axes, power)
    return domain_from_phi(
        phi, center, center.size, n_boundary, n_interior, name=name or "superellipse"
    )


def dumbbell_domain(center=(0.0, 0.0), scale=1.0, waist=1.0, bulge=0.1,
                    n_boundary=192, n_interior=200, name=None):
    phi = DumbbellPhi(center, scale, waist, bulge)
    return domain_from_phi(
        phi, as_point(center, 2), 2, n_boundary, n_interior, name=name or "dumbbell"
    )


def box_domain(lo, hi, n_per_edge=32, n_interior=200, name=None):
    """An axis-aligned box sampled without a defining function (corners are
    not C^2, so analytic c-convexity does not apply; use a superellipse for
    that)."""
    lo = as_point(lo)
    hi = as_point(hi, lo.size)
    dim = lo.size
    if dim != 2:
        raise ValueError("sampled box domains are implemented in 2-D")
    t = np.linspace(0.0, 1.0, n_per_edge, endpoint=False)
    edges = []
    normals = []
    a, b = lo, hi
    edges.append(np.stack([a[0] + t * (b[0] - a[0]), np.full_like(t, a[1])], axis=-1))
    normals.append(np.tile([0.0, -1.0], (t.size, 1)))
    edges.append(np.stack([np.full_like(t, b[0]), a[1] + t * (b[1] - a[1])], axis=-1))
    normals.append(np.tile([1.0, 0.0], (t.size, 1)))
    edges.append(np.stack([b[0] - t * (b[0] - a[0]), np.full_like(t, b[1])], axis=-1))
    normals.append(np.tile([0.0, 1.0], (t.size, 1)))
    edges.append(np.stack([np.full_like(t, a[0]), b[1] - t * (b[1] - a[1])], axis=-1))
    normals.append(np.tile([-1.0, 0.0], (t.size, 1)))
    bnd = np.concatenate(edges)
    nrm = np.concatenate(normals)
    per_axis = max(3, int(round(math.sqrt(n_interior))))
    pad = 1e-3 * (hi - lo)
    inner = _lattice_in(None, lo + pad, hi - pad, per_axis, keep=lambda p: np.ones(len(p), bool))
    return Domain(dim, inner, bnd, nrm, (lo, hi), phi=None, name=name or "box")


def annulus_sector_domain(center, r_in, r_out, angle0, angle1,
                          n_arc=64, n_edge=16, n_interior=200, name=None):
    """A nonconvex 2-D annulus sector (no defining function)."""
    center = as_point(center, 2)
    t = np.linspace(angle0, angle1, n_arc)
    outer = center + r_out * np.stack([np.cos(t), np.sin(t)], axis=-1)
    inner = center + r_in * np.stack([np.cos(t), np.sin(t)], axis=-1)
    n_out = np.stack([np.cos(t), np.sin(t)], axis=-1)
    n_in = -n_out
    s = np.linspace(0.0, 1.0, n_edge, endpoint=False)[1:]
    pts = [outer, inner]
    nrm = [n_out, n_in]
    for ang, sgn in ((angle0, -1.0), (angle1, 1.0)):
        u = np.array([math.cos(ang), math.sin(ang)])
        tangent_normal = sgn * np.array([-u[1], u[0]])
        edge = center + (r_in + s[:, None] * (r_out - r_in)) * u
        pts.append(edge)
        nrm.append(np.tile(tangent_normal, (edge.shape[0], 1)))
    bnd = np.concatenate(pts)
    normals = np.concatenate(nrm)
    rr = np.linspace(r_in, r_out, max(3, int(math.sqrt(n_interior))))[1:-1]
    aa = np.linspace(angle0, angle1, max(3, int(math.sqrt(n_interior))))[1:-1]
    interior = np.array(
        [center + r * np.array([math.cos(a), math.sin(a)]) for r in rr for a in aa]
    )
    lo = bnd.min(axis=0)
    hi = bnd.max(axis=0)
    return Domain(2, interior, bnd, normals, (lo, hi), phi=None, name=name or "annulus-sector")


_PHI_FORMS = {
    "ball": lambda p: BallPhi(p["center"], p["radius"]),
    "ellipsoid": lambda p: EllipsoidPhi(p["center"], p["semi_axes"]),
    "superellipse": lambda p: SuperellipsePhi(p["center"], p["semi_axes"], p.get("power", 3)),
    "dumbbell": lambda p: DumbbellPhi(
        p.get("center", (0.0, 0.0)), p.get("scale", 1.0), p.get("waist", 1.0), p.get("bulge", 0.1)
    ),
}


def domain_to_json(domain: Domain, **kwargs) -> str:
    doc = {
        "dimension": domain.dim,
        "interior_samples": domain.interior.tolist(),
        "boundary_samples": [
            {"point": p.tolist(), "normal": n.tolist()}
            for p, n in zip(domain.boundary, domain.normals)
        ],
        "phi": domain.phi.spec() if domain.phi is not None else "none",
        "box": {"lo": domain.box[0].tolist(), "hi": domain.box[1].tolist()},
        "name": domain.name,
    }
    kwargs.setdefault("sort_keys", True)
    return json.dumps(doc, **kwargs)


def domain_from_json(text: str) -> Domain:
    doc = json.loads(text)
    dim = int(doc["dimension"])
    boundary = np.array([b["point"] for b in doc["boundary_samples"]], dtype=float)
    normals = np.array([b["normal"] for b in doc["boundary_samples"]], dtype=float)
    phi_spec = doc.get("phi", "none")
    phi = None
    if phi_spec != "none":
        form = phi_spec["form"]
        if form not in _PHI_FORMS:
            raise ValueError(f"unknown phi form '{form}'")
        phi = _PHI_FORMS[form](phi_spec)
    box = (np.array(doc["box"]["lo"], dtype=float), np.array(doc["box"]["hi"], dtype=float))
    return Domain(
        dim,
        np.array(doc["interior_samples"], dtype=float),
        boundary,
        normals,
        box,
        phi=phi,
        name=doc.get("name", "domain"),
    )


# ---------------------------------------------------------------------------
# c-segments and supports
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class CSegment:
    """A curve of targets y_t whose x-gradients trace a straight segment.

    samples holds (t, y_t, p_t) with p_t = (1-t) p_0 + t p_1 and
    D_x c(anchor, y_t) = p_t to the Newton tolerance.
    """

    anchor: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    samples: list

    def max_residual(self, cost):
        return max(
            float(np.linalg.norm(cost.grad_x(self.anchor, y) - p))
            for _, y, p in self.samples
        )


@dataclasses.dataclass
class CSupport:
    """The function h(.) = c(., point) + offset, touching a potential from above.

    ``point`` lives in the opposite space from the evaluation argument: a
    support of u anchors at a target point, a support of v at a source point.
    """

    point: np.ndarray
    offset: float

    def values_over(self, cost, pts, side="source"):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if side == "source":
            return cost.eval_matrix(pts, self.point[None, :])[:, 0] + self.offset
        return cost.eval_matrix(self.point[None, :], pts)[0, :] + self.offset


def c_segment(cost: CostFunction, anchor, y0, y1, m: int = 16, tol: float = 1e-10) -> CSegment:
    """The c-segment relative to ``anchor`` joining y0 and y1, with m+1 samples.

    Interior samples are solved by Newton iteration warm-started from the
    previous sample; the endpoints are reproduced exactly.
    """
    anchor = as_point(anchor, cost.dimension)
    y0 = as_point(y0, cost.dimension)
    y1 = as_point(y1, cost.dimension)
    p0 = cost.grad_x(anchor, y0)
    p1 = cost.grad_x(anchor, y1)
    samples = [(0.0, y0.copy(), p0.copy())]
    y_prev = y0
    for k in range(1, m):
        t = k / m
        p_t = (1.0 - t) * p0 + t * p1
        try:
            y_t = solve_y_from_gradient(cost, anchor, p_t, y_init=y_prev, tol=tol)
        except (NoConvergence, OutOfValidityDomain) as err:
            raise NoConvergence(
                f"c-segment left the cost's validity domain near t={t:.3f}: {err}"
            ) from err
        samples.append((t, y_t, p_t))
        y_prev = y_t
    samples.append((1.0, y1.copy(), p1.copy()))
    return CSegment(anchor=anchor, y0=y0, y1=y1, samples=samples)


# ---------------------------------------------------------------------------
# c-convexity of domains, two formulations
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ConvexityVerdict:
    is_convex: bool
    defect: float
    tolerance: float


def image_c_convexity(cost: CostFunction, U: Domain, y, tol_factor: float = 1e-6) -> ConvexityVerdict:
    """Convexity of the image of U's boundary under x -> D_y c(x, y).

    The defect is the largest penetration of a mapped boundary point into the
    interior of the mapped cloud's convex hull (zero when the image is
    convex, since every point of a convex curve lies on its hull).
    """
    y = as_point(y, cost.dimension)
    mapped = []
    for x in U.boundary:
        cost.check_valid(x, y)
        mapped.append(cost.grad_y(x, y))
    mapped = np.array(mapped)
    hull = ConvexHull(mapped)
    # hull.equations: rows [normal, offset] with normal . p + offset <= 0 inside
    signed = mapped @ hull.equations[:, :-1].T + hull.equations[:, -1]
    depth = -np.max(signed, axis=1)
    defect = float(np.max(depth))
    diam = float(np.linalg.norm(mapped.max(axis=0) - mapped.min(axis=0)))
    tol = tol_factor * max(diam, 1e-12)
    return ConvexityVerdict(is_convex=defect <= tol, defect=defect, tolerance=tol)


@dataclasses.dataclass
class AnalyticConvexityReport:
    min_eigenvalue: float
    is_c_convex: bool
    uniform_delta: float
    tolerance: float
    argmin_x: np.ndarray
    argmin_y: np.ndarray


def analytic_c_convexity(
    cost: CostFunction, U: Domain, V_samples, tol: float = 1e-9
) -> AnalyticConvexityReport:
    """Analytic c-convexity of U with respect to a set of target samples.

    Evaluates the matrix  phi_ij(x) - c^{k,l}(x,y) c_{ij,k}(x,y) phi_l(x)
    at every boundary sample x and target y and returns the minimum
    eigenvalue over tangent directions of the boundary.  The restriction to
    the tangent space is deliberate: the normal-normal component depends on
    the choice of defining function (adding K*phi^2/2 shifts it arbitrarily
    without changing the domain), while the tangential part is the invariant
    curvature content.  U is c-convex w.r.t. the samples when the minimum
    clears -tol, uniformly c-convex when it is strictly positive.
    """
    if U.phi is None:
        raise MissingDefiningFunction(
            f"domain '{U.name}' has no defining function; use the image-based check"
        )
    V_samples = np.atleast_2d(np.asarray(V_samples, dtype=float))
    best = math.inf
    arg = (None, None)
    for x in U.boundary:
        g = U.phi.grad(x)
        h = U.phi.hess(x)
        nu = g / np.linalg.norm(g)
        # orthonormal tangent basis from the full eigenbasis of nu nu^T
        eigvec = np.linalg.svd(np.eye(U.dim) - np.outer(nu, nu))[0]
        tang = eigvec[:, : U.dim - 1]
        for y in V_samples:
            cost.check_valid(x, y)
            cinv = inverse_mixed_hessian(cost, x, y)
            d3 = cost.d3_xxy(x, y)
            G = h - np.einsum("kl,ijk,l->ij", cinv, d3, g)
            tG = tang.T @ G @ tang
            lam = float(np.min(np.linalg.eigvalsh(0.5 * (tG + tG.T))))
            if lam < best:
                best = lam
                arg = (x.copy(), y.copy())
    return AnalyticConvexityReport(
        min_eigenvalue=best,
        is_c_convex=best >= -tol,
        uniform_delta=max(best, 0.0),
        tolerance=tol,
        argmin_x=arg[0],
        argmin_y=arg[1],
    )


# ---------------------------------------------------------------------------
# Support interpolation (the geometric heart of the strong condition)
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class SupportInterpolationReport:
    """Margins of h_t over min(h_0, h_1) on rings around the anchor.

    Under the strong condition the margin is strictly positive for x != x0;
    for the quadratic cost h_t is the exact linear interpolation and the
    margin degenerates to >= 0.  ``d2_along_segment`` holds the second
    t-derivative of xi . D^2_x c(x0, y_t) xi for unit xi orthogonal to the
    gradient direction of the segment: nonpositive (up to FD error) exactly
    when the interpolation inequality has its sign.
    """

    min_margin: float
    margins_by_radius: dict
    argmin: dict
    d2_max: float
    delta: float
    segment: CSegment


def support_interpolation_check(
    cost: CostFunction,
    x0,
    y0,
    y1,
    radii=None,
    m_t: int = 8,
    m_dir: int = 16,
) -> SupportInterpolationReport:
    """Check h_t(x) >= min(h_0(x), h_1(x)) near the anchor along a c-segment.

    h_t(x) = c(x, y_t) - c(x0, y_t), so all supports coincide (= 0) at x0.
    Ring radii default to {1e-2, 3e-2, 1e-1} of |y1 - y0|, exposing the
    second-order behavior in |x - x0|.
    """
    x0 = as_point(x0, cost.dimension)
    y0 = as_point(y0, cost.dimension)
    y1 = as_point(y1, cost.dimension)
    seg = c_segment(cost, x0, y0, y1, m=m_t)
    scale = max(float(np.linalg.norm(y1 - y0)), 1e-6)
    if radii is None:
        radii = [1e-2 * scale, 3e-2 * scale, 1e-1 * scale]

    dim = cost.dimension
    dirs = _circle_dirs(m_dir) if dim == 2 else _sphere_dirs(m_dir)

    def h(x, y_t):
        return cost.eval(x, y_t) - cost.eval(x0, y_t)

    min_margin = math.inf
    argmin = {}
    margins_by_radius = {}
    for r in radii:
        ring_min = math.inf
        for u in dirs:
            x = x0 + r * u
            h0 = h(x, y0)
            h1 = h(x, y1)
            base = min(h0, h1)
            for t, y_t, _ in seg.samples[1:-1]:
                margin = h(x, y_t) - base
                if margin < ring_min:
                    ring_min = margin
                if margin < min_margin:
                    min_margin = margin
                    argmin = {"x": x, "t": t, "radius": r}
        margins_by_radius[float(r)] = ring_min

    # Second t-derivative of the tangential x-Hessian contraction along the
    # segment, by central differences over the sample grid.
    p0 = seg.samples[0][2]
    p1 = seg.samples[-1][2]
    e = p1 - p0
    delta = float(np.linalg.norm(e))
    d2_max = -math.inf
    if delta > 0:
        e = e / delta
        basis = np.linalg.svd(np.eye(dim) - np.outer(e, e))[0][:, : dim - 1]
        g = np.empty((len(seg.samples), dim - 1))
        for i, (_, y_t, _) in enumerate(seg.samples):
            hess = cost.hess_x(x0, y_t)
            for k in range(dim - 1):
                xi = basis[:, k]
                g[i, k] = float(xi @ hess @ xi)
        dt = 1.0 / m_t
        for i in range(1, len(seg.samples) - 1):
            d2 = (g[i + 1] - 2.0 * g[i] + g[i - 1]) / dt**2
            d2_max = max(d2_max, float(np.max(d2)))

    return SupportInterpolationReport(
        min_margin=float(min_margin),
        margins_by_radius=margins_by_radius,
        argmin=argmin,
        d2_max=d2_max,
        delta=delta,
        segment=seg,
    )


# ---------------------------------------------------------------------------
# Level-set monotonicity
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class LevelSetProbe:
    """Reconstructed graphs of the level sets N_t = {h_t = h_0} near tangency.

    graphs maps t to arrays of (x', eta_t(x')) in the frame where the common
    tangent plane at the anchor is {last coordinate = 0}.  ordered reports
    whether eta_t >= eta_t' holds for every pair t > t' (within tol), and
    strict_margin the smallest gap between consecutive graphs at the probe
    radius.
    """

    anchor: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    ts: np.ndarray
    offsets: np.ndarray          # x' lattice, shape (npts, dim-1)
    graphs: np.ndarray           # eta values, shape (nt, npts)
    residuals: np.ndarray
    ordered: bool
    min_gap: float
    strict_margin: float
    tol: float


def level_set_monotonicity(
    cost: CostFunction,
    x0,
    y0,
    y1,
    m_t: int = 4,
    probe_radius: float = 0.05,
    n_offsets: int = 9,
    tol: float = 1e-8,
) -> LevelSetProbe:
    """Reconstruct the level sets N_t and check they stack monotonically in t.

    The sets N_t = {x : h_t(x) = h_0(x)} for the supports of a c-segment all
    pass through the anchor and share the tangent plane orthogonal to
    p_1 - p_0.  Each graph is recovered by a 1-D root solve along lines
    normal to that plane; under the strong condition the graphs for larger t
    lie above those for smaller t, touching only at the anchor.
    """
    x0 = as_point(x0, cost.dimension)
    y0 = as_point(y0, cost.dimension)
    y1 = as_point(y1, cost.dimension)
    dim = cost.dimension
    seg = c_segment(cost, x0, y0, y1, m=m_t)
    p0 = seg.samples[0][2]
    p1 = seg.samples[-1][2]
    e = p1 - p0
    ne = float(np.linalg.norm(e))
    if ne == 0.0:
        raise ValueError("y0 and y1 have identical gradients at the anchor")
    e = e / ne
    basis = np.linalg.svd(np.eye(dim) - np.outer(e, e))[0][:, : dim - 1]

    if dim == 2:
        offs = np.linspace(-probe_radius, probe_radius, n_offsets)[:, None]
    else:
        g = np.linspace(-probe_radius, probe_radius, max(3, int(math.sqrt(n_offsets))))
        offs = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)

    # h_t - h_0 with offsets chosen so every h_t agrees at the anchor
    def F(t_idx, x):
        _, y_t, _ = seg.samples[t_idx]
        a_t = cost.eval(x0, y0) - cost.eval(x0, y_t)
        return (cost.eval(x, y_t) + a_t) - cost.eval(x, y0)

    ts = np.array([s[0] for s in seg.samples[1:]])
    graphs = np.empty((ts.size, offs.shape[0]))
    residuals = np.empty_like(graphs)
    s_max = probe_radius
    for it in range(ts.size):
        t_idx = it + 1
        for ip, xp in enumerate(offs):
            base = x0 + basis @ xp

            def f(s):
                return F(t_idx, base + s * e)

            lo, hi = -s_max, s_max
            flo, fhi = f(lo), f(hi)
            if flo == 0.0:
                s_root = lo
            elif fhi == 0.0:
                s_root = hi
            elif flo * fhi > 0:
                raise RootBracketFailure(
                    f"level set N_t (t={ts[it]:.3f}) exits the probe box at "
                    f"offset {xp}"
                )
            else:
                s_root = brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16)
            graphs[it, ip] = s_root
            residuals[it, ip] = abs(f(s_root))

    gaps = graphs[1:] - graphs[:-1]
    min_gap = float(gaps.min()) if gaps.size else 0.0
    ordered = bool(min_gap >= -tol)
    edge = np.linalg.norm(offs, axis=1) >= 0.999 * probe_radius
    strict_margin = float(gaps[:, edge].min()) if gaps.size and edge.any() else 0.0
    return LevelSetProbe(
        anchor=x0,
        y0=y0,
        y1=y1,
        ts=ts,
        offsets=offs,
        graphs=graphs,
        residuals=residuals,
        ordered=ordered,
        min_gap=min_gap,
        strict_margin=strict_margin,
        tol=tol,
    )


# ---------------------------------------------------------------------------
# The local normalization c_{x_i, y_j} = delta_ij as an explicit transform
# ---------------------------------------------------------------------------


def y_frame_map(cost: CostFunction, x0, y0):
    """Linear change of y-coordinates making the mixed Hessian the identity
    at (x0, y0): y_hat = M y with M the mixed Hessian there.

    Returns (to_hat, from_hat) callables.  In the hatted coordinates the
    gradients p and displacements y_hat - y_hat0 agree to first order, which
    is the normalization the level-set arguments assume.
    """
    M = cost.mixed_hessian(as_point(x0, cost.dimension), as_point(y0, cost.dimension))
    Minv = np.linalg.inv(M)

    def to_hat(y):
        return M @ as_point(y, cost.dimension)

    def from_hat(y_hat):
        return Minv @ as_point(y_hat, cost.dimension)

    return to_hat, from_hat
