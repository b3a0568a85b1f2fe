"""Cost functions c(x, y) with derivative tensors up to fourth order.

Index convention (used throughout the toolkit): subscripts before the comma
differentiate in x, subscripts after it in y.  So ``c_i = d c / d x_i``,
``c_{i,j} = d^2 c / d x_i d y_j`` (the mixed Hessian), ``c_{ij,k}`` has two
x-derivatives and one y-derivative, and ``c_{ij,kl}`` two of each.

Every catalog cost is radial, c(x, y) = f(q) with q = |x - y|^2 / 2, so all
tensors come from the scalar derivatives of f in closed form.  User-supplied
costs may provide only an evaluator; their tensors are synthesized by
Richardson-extrapolated central differences (noisier at orders 3-4, see
:class:`NumericalCost`).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.optimize import brentq

from .errors import A2Violation, NoConvergence, OutOfValidityDomain, UnsupportedOrder

__all__ = [
    "CostFunction",
    "RadialCost",
    "QuadraticCost",
    "SqrtOnePlusCost",
    "SqrtOneMinusCost",
    "NegSqrtOneMinusCost",
    "NegLogCost",
    "PowerCost",
    "NumericalCost",
    "SwappedCost",
    "CostDerivatives",
    "make_cost",
    "cost_catalog",
    "derivatives",
    "fd_validate",
    "inverse_mixed_hessian",
    "solve_y_from_gradient",
]

# Margin kept between validity domains and singular sets; silent NaN
# propagation out of a singular cost is never acceptable.
SINGULAR_MARGIN = 1e-6

A2_DET_TOL = 1e-12


def as_point(x, dim=None):
    """Coerce to a finite 1-D float array, optionally checking its length."""
    p = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(p)):
        raise ValueError("point has non-finite entries")
    if dim is not None and p.size != dim:
        raise ValueError(f"point has dimension {p.size}, expected {dim}")
    return p


@dataclasses.dataclass
class CostDerivatives:
    """Bundle of derivative tensors of c at one pair, up to a given order.

    Tensors beyond the requested order are None.  ``hess_x`` (pure second
    x-derivatives) rides along with order 2 because the Monge-Ampere residual
    and the support-interpolation checks need it.
    """

    order: int
    value: float
    grad_x: np.ndarray | None = None
    grad_y: np.ndarray | None = None
    mixed: np.ndarray | None = None        # c_{i,j}
    hess_x: np.ndarray | None = None       # c_{ij}
    hess_y: np.ndarray | None = None
    d3_xxy: np.ndarray | None = None       # c_{ij,k}
    d3_xyy: np.ndarray | None = None       # c_{i,jk}
    d4_xxyy: np.ndarray | None = None      # c_{ij,kl}


class CostFunction:
    """Abstract transport cost on R^n x R^n with a validity predicate."""

    dimension: int
    name: str = "custom"
    params: dict = {}

    def is_valid(self, x, y) -> bool:
        raise NotImplementedError

    def check_valid(self, x, y):
        if not self.is_valid(x, y):
            raise OutOfValidityDomain(
                f"pair outside validity domain of cost '{self.name}': x={x}, y={y}"
            )

    def eval(self, x, y) -> float:
        raise NotImplementedError

    def grad_x(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def grad_y(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def mixed_hessian(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def hess_x(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def hess_y(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def d3_xxy(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def d3_xyy(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def d4_xxyy(self, x, y) -> np.ndarray:
        raise NotImplementedError

    # Vectorized evaluation over point clouds; subclasses may override with
    # something faster.  X: (m, n), Y: (k, n) -> (m, k).
    def eval_matrix(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out = np.empty((X.shape[0], Y.shape[0]))
        for i, x in enumerate(X):
            for j, y in enumerate(Y):
                out[i, j] = self.eval(x, y)
        return out

    def guess_y_from_gradient(self, x, z):
        """Initial iterate for the (A1) inverse map; quadratic-cost heuristic."""
        return as_point(x) - as_point(z)

    def spec(self):
        return {"name": self.name, "params": dict(self.params)}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{type(self).__name__}(n={self.dimension}{', ' + args if args else ''})"


class RadialCost(CostFunction):
    """Cost of the form c(x, y) = f(q), q = |x - y|^2 / 2.

    Subclasses provide the scalar derivatives ``f0 .. f4`` of f and a validity
    interval for r = |x - y|.  All tensors follow from the chain rule; with
    d = x - y:

        c_i      =  f' d_i
        c_{i,j}  = -f'' d_i d_j - f' delta_ij
        c_{ij}   =  f'' d_i d_j + f' delta_ij
        c_{ij,k} = -f''' d_i d_j d_k - f'' (delta_ik d_j + delta_jk d_i + delta_ij d_k)
        c_{i,jk} = -c_{ij,k}  (with the same index pattern)
        c_{ij,kl} = f'''' dddd + f''' (six delta-dd terms) + f'' (three delta-delta terms)
    """

    #: validity interval for r = |x - y|, inclusive of the margin
    r_min: float = 0.0
    r_max: float = math.inf

    def __init__(self, dimension):
        self.dimension = int(dimension)

    def f0(self, q):
        raise NotImplementedError

    def f1(self, q):
        raise NotImplementedError

    def f2(self, q):
        raise NotImplementedError

    def f3(self, q):
        raise NotImplementedError

    def f4(self, q):
        raise NotImplementedError

    def _d(self, x, y):
        return as_point(x, self.dimension) - as_point(y, self.dimension)

    def is_valid(self, x, y):
        r = float(np.linalg.norm(self._d(x, y)))
        return self.r_min <= r <= self.r_max

    def eval(self, x, y):
        d = self._d(x, y)
        self.check_valid(x, y)
        return float(self.f0(0.5 * float(d @ d)))

    def eval_matrix(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        diff = X[:, None, :] - Y[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        r = np.sqrt(r2)
        if np.any(r < self.r_min) or np.any(r > self.r_max):
            raise OutOfValidityDomain(
                f"some pair outside validity domain of cost '{self.name}'"
            )
        return self.f0(0.5 * r2)

    def grad_x(self, x, y):
        d = self._d(x, y)
        self.check_valid(x, y)
        return self.f1(0.5 * float(d @ d)) * d

    def grad_y(self, x, y):
        return -self.grad_x(x, y)

    def mixed_hessian(self, x, y):
        d = self._d(x, y)
        self.check_valid(x, y)
        q = 0.5 * float(d @ d)
        return -self.f2(q) * np.outer(d, d) - self.f1(q) * np.eye(self.dimension)

    def hess_x(self, x, y):
        return -self.mixed_hessian(x, y)

    def hess_y(self, x, y):
        return -self.mixed_hessian(x, y)

    def d3_xxy(self, x, y):
        d = self._d(x, y)
        self.check_valid(x, y)
        q = 0.5 * float(d @ d)
        n = self.dimension
        eye = np.eye(n)
        sym = (
            np.einsum("ik,j->ijk", eye, d)
            + np.einsum("jk,i->ijk", eye, d)
            + np.einsum("ij,k->ijk", eye, d)
        )
        return -self.f3(q) * np.einsum("i,j,k->ijk", d, d, d) - self.f2(q) * sym

    def d3_xyy(self, x, y):
        # The same index pattern with the opposite sign: one more y-derivative
        # flips the sign of every d-factor produced by the chain rule.
        return -self.d3_xxy(x, y)

    def d4_xxyy(self, x, y):
        d = self._d(x, y)
        self.check_valid(x, y)
        q = 0.5 * float(d @ d)
        n = self.dimension
        eye = np.eye(n)
        dd = np.einsum("i,j->ij", d, d)
        term4 = self.f4(q) * np.einsum("i,j,k,l->ijkl", d, d, d, d)
        term3 = self.f3(q) * (
            np.einsum("il,jk->ijkl", eye, dd)
            + np.einsum("jl,ik->ijkl", eye, dd)
            + np.einsum("kl,ij->ijkl", eye, dd)
            + np.einsum("ik,jl->ijkl", eye, dd)
            + np.einsum("jk,il->ijkl", eye, dd)
            + np.einsum("ij,kl->ijkl", eye, dd)
        )
        term2 = self.f2(q) * (
            np.einsum("ik,jl->ijkl", eye, eye)
            + np.einsum("jk,il->ijkl", eye, eye)
            + np.einsum("ij,kl->ijkl", eye, eye)
        )
        return term4 + term3 + term2

    def guess_y_from_gradient(self, x, z):
        """Solve f'(r^2/2) r = |z| for r on the validity interval, then aim d along z.

        Gives a near-exact starting point for the Newton polish in
        :func:`solve_y_from_gradient`; falls back to the quadratic heuristic
        when the scalar solve cannot bracket.
        """
        x = as_point(x, self.dimension)
        z = as_point(z, self.dimension)
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            if self.r_min <= 0.0:
                return x.copy()
            return x - self.r_min * 2.0 * np.ones(self.dimension) / math.sqrt(
                self.dimension
            )

        def g(r):
            return self.f1(0.5 * r * r) * r

        lo = self.r_min if self.r_min > 0 else 1e-12
        hi = self.r_max if math.isfinite(self.r_max) else max(10.0 * nz, 10.0)
        sign = 1.0 if g(0.5 * (lo + hi)) >= 0 else -1.0
        target = sign * nz
        try:
            glo, ghi = g(lo) - target, g(hi) - target
            if glo == 0.0:
                r = lo
            elif ghi == 0.0:
                r = hi
            elif glo * ghi < 0:
                r = brentq(lambda s: g(s) - target, lo, hi, xtol=1e-14, rtol=1e-14)
            else:
                return x - z
        except ValueError:
            return x - z
        return x - (sign * r / nz) * z


class QuadraticCost(RadialCost):
    """c(x, y) = |x - y|^2 / 2; the classical cost, valid everywhere."""

    name = "quadratic"

    def f0(self, q):
        return q

    def f1(self, q):
        return np.ones_like(q) if np.ndim(q) else 1.0

    def f2(self, q):
        return np.zeros_like(q) if np.ndim(q) else 0.0

    f3 = f2
    f4 = f2


class SqrtOnePlusCost(RadialCost):
    """c(x, y) = sqrt(1 + |x - y|^2), smooth and valid everywhere."""

    name = "sqrt1p"

    def f0(self, q):
        return np.sqrt(1.0 + 2.0 * q)

    def f1(self, q):
        return (1.0 + 2.0 * q) ** -0.5

    def f2(self, q):
        return -((1.0 + 2.0 * q) ** -1.5)

    def f3(self, q):
        return 3.0 * (1.0 + 2.0 * q) ** -2.5

    def f4(self, q):
        return -15.0 * (1.0 + 2.0 * q) ** -3.5


class NegSqrtOneMinusCost(RadialCost):
    """c(x, y) = -sqrt(1 - |x - y|^2), valid for |x - y| <= 1 - margin.

    Its cross-curvature is -(1 - r^2)^{3/2} on the extremal frames: strictly
    the anti-A3 member of the sqrt family.  See :class:`SqrtOneMinusCost`
    for the A3 member.
    """

    name = "neg-sqrt1m"
    r_max = 1.0 - SINGULAR_MARGIN

    def f0(self, q):
        return -np.sqrt(1.0 - 2.0 * q)

    def f1(self, q):
        return (1.0 - 2.0 * q) ** -0.5

    def f2(self, q):
        return (1.0 - 2.0 * q) ** -1.5

    def f3(self, q):
        return 3.0 * (1.0 - 2.0 * q) ** -2.5

    def f4(self, q):
        return 15.0 * (1.0 - 2.0 * q) ** -3.5


class SqrtOneMinusCost(RadialCost):
    """c(x, y) = +sqrt(1 - |x - y|^2), valid for |x - y| <= 1 - margin.

    Cross-curvature +(1 - r^2)^{3/2} on the extremal frames: the strong
    condition holds uniformly on any domain pair with separation below 1.
    """

    name = "sqrt1m"
    r_max = 1.0 - SINGULAR_MARGIN

    def f0(self, q):
        return np.sqrt(1.0 - 2.0 * q)

    def f1(self, q):
        return -((1.0 - 2.0 * q) ** -0.5)

    def f2(self, q):
        return -((1.0 - 2.0 * q) ** -1.5)

    def f3(self, q):
        return -3.0 * (1.0 - 2.0 * q) ** -2.5

    def f4(self, q):
        return -15.0 * (1.0 - 2.0 * q) ** -3.5


class NegLogCost(RadialCost):
    """c(x, y) = -log|x - y|, valid for |x - y| >= margin (coincidence excluded)."""

    name = "neg-log"
    r_min = SINGULAR_MARGIN

    def f0(self, q):
        return -0.5 * np.log(2.0 * q)

    def f1(self, q):
        return -0.5 / q

    def f2(self, q):
        return 0.5 / q**2

    def f3(self, q):
        return -1.0 / q**3

    def f4(self, q):
        return 3.0 / q**4


class PowerCost(RadialCost):
    """c(x, y) = |x - y|^p with p > 1, p != 2; coincidence excluded.

    The mixed Hessian degenerates at x = y for every such p, so validity
    keeps the margin away from the diagonal even when p is an even integer.
    """

    name = "power"
    r_min = SINGULAR_MARGIN

    def __init__(self, dimension, p):
        super().__init__(dimension)
        p = float(p)
        if not (p > 1.0) or p == 2.0:
            raise ValueError("power cost requires p > 1, p != 2")
        self.p = p
        self.params = {"p": p}

    def f0(self, q):
        return (2.0 * q) ** (0.5 * self.p)

    def f1(self, q):
        p = self.p
        return p * (2.0 * q) ** (0.5 * p - 1.0)

    def f2(self, q):
        p = self.p
        return p * (p - 2.0) * (2.0 * q) ** (0.5 * p - 2.0)

    def f3(self, q):
        p = self.p
        return p * (p - 2.0) * (p - 4.0) * (2.0 * q) ** (0.5 * p - 3.0)

    def f4(self, q):
        p = self.p
        return p * (p - 2.0) * (p - 4.0) * (p - 6.0) * (2.0 * q) ** (0.5 * p - 4.0)


class SwappedCost(CostFunction):
    """The cost with x and y exchanged: c*(x, y) = c(y, x).

    Used to check (A1)-(A3) in the swapped orientation, which the theory
    assumes as well.
    """

    def __init__(self, base: CostFunction):
        self.base = base
        self.dimension = base.dimension
        self.name = base.name + "-swapped"
        self.params = dict(base.params)

    def is_valid(self, x, y):
        return self.base.is_valid(y, x)

    def eval(self, x, y):
        return self.base.eval(y, x)

    def eval_matrix(self, X, Y):
        return self.base.eval_matrix(Y, X).T

    def grad_x(self, x, y):
        return self.base.grad_y(y, x)

    def grad_y(self, x, y):
        return self.base.grad_x(y, x)

    def mixed_hessian(self, x, y):
        return self.base.mixed_hessian(y, x).T

    def hess_x(self, x, y):
        return self.base.hess_y(y, x)

    def hess_y(self, x, y):
        return self.base.hess_x(y, x)

    def d3_xxy(self, x, y):
        # c*_{ij,k}(x,y) = c_{k,ij}(y,x): transpose the xyy tensor of the base.
        return np.transpose(self.base.d3_xyy(y, x), (1, 2, 0))

    def d3_xyy(self, x, y):
        return np.transpose(self.base.d3_xxy(y, x), (2, 0, 1))

    def d4_xxyy(self, x, y):
        return np.transpose(self.base.d4_xxyy(y, x), (2, 3, 0, 1))

    def guess_y_from_gradient(self, x, z):
        return self.base.guess_y_from_gradient(x, z)


def _fd_tensor(fn, x, y, x_idx, y_idx, h):
    """Central difference of fn(x, y) in the listed x and y directions.

    Each index produces one first-order central difference; repeated indices
    are applied sequentially (so (i, i) is the three-point second difference
    of the two shifted first differences, accurate to O(h^2)).
    """
    if x_idx:
        i = x_idx[0]
        e = np.zeros_like(x)
        e[i] = h
        a = _fd_tensor(fn, x + e, y, x_idx[1:], y_idx, h)
        b = _fd_tensor(fn, x - e, y, x_idx[1:], y_idx, h)
        return (a - b) / (2.0 * h)
    if y_idx:
        j = y_idx[0]
        e = np.zeros_like(y)
        e[j] = h
        a = _fd_tensor(fn, x, y + e, x_idx, y_idx[1:], h)
        b = _fd_tensor(fn, x, y - e, x_idx, y_idx[1:], h)
        return (a - b) / (2.0 * h)
    return fn(x, y)


def _fd_array(fn, x, y, nx, ny, h, extra_shape=()):
    """Assemble the full (n,)*nx + (n,)*ny central-difference tensor of fn.

    The difference indices come first in the output; ``extra_shape`` is the
    shape of fn's own value (empty for the scalar evaluator).
    """
    n = x.size
    out = np.empty((n,) * (nx + ny) + tuple(extra_shape), dtype=float)
    for idx in np.ndindex(*(n,) * (nx + ny)):
        out[idx] = _fd_tensor(fn, x, y, idx[:nx], idx[nx : nx + ny], h)
    return out


def _richardson(coarse, fine):
    """Second-order Richardson extrapolation of a step-halved central difference."""
    return (4.0 * fine - coarse) / 3.0


class NumericalCost(CostFunction):
    """Wrap a user evaluator; tensors come from Richardson central differences.

    Differences are chained: orders 1-2 difference the evaluator, orders 3-4
    difference the already-synthesized order-2 tensors.  Expect relative
    accuracy around 1e-6 at orders <= 2 and 1e-4 at orders 3-4; closed-form
    costs are preferred whenever the fourth-order tensor matters.
    """

    def __init__(self, dimension, eval_fn, validity_fn=None, step=1e-4, name="numeric"):
        self.dimension = int(dimension)
        self._eval = eval_fn
        self._validity = validity_fn
        self.step = float(step)
        self.name = name
        self.params = {"step": self.step}

    def is_valid(self, x, y):
        if self._validity is None:
            return True
        return bool(self._validity(as_point(x, self.dimension), as_point(y, self.dimension)))

    def _scale(self, x, y):
        return self.step * max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(y))))

    def eval(self, x, y):
        x = as_point(x, self.dimension)
        y = as_point(y, self.dimension)
        self.check_valid(x, y)
        return float(self._eval(x, y))

    def _fd(self, x, y, nx, ny, base_fn=None, shape=()):
        x = as_point(x, self.dimension)
        y = as_point(y, self.dimension)
        self.check_valid(x, y)
        fn = base_fn if base_fn is not None else (lambda a, b: float(self._eval(a, b)))
        h = self._scale(x, y)
        coarse = _fd_array(fn, x, y, nx, ny, h, shape)
        fine = _fd_array(fn, x, y, nx, ny, 0.5 * h, shape)
        return _richardson(coarse, fine)

    def grad_x(self, x, y):
        return self._fd(x, y, 1, 0)

    def grad_y(self, x, y):
        return self._fd(x, y, 0, 1)

    def mixed_hessian(self, x, y):
        return self._fd(x, y, 1, 1)

    def hess_x(self, x, y):
        return self._fd(x, y, 2, 0)

    def hess_y(self, x, y):
        return self._fd(x, y, 0, 2)

    def d3_xxy(self, x, y):
        n = self.dimension
        t = self._fd(x, y, 0, 1, base_fn=lambda a, b: self.hess_x(a, b), shape=(n, n))
        return np.moveaxis(t, 0, -1)  # [k,i,j] -> [i,j,k]

    def d3_xyy(self, x, y):
        n = self.dimension
        t = self._fd(x, y, 0, 2, base_fn=lambda a, b: self.grad_x(a, b), shape=(n,))
        return np.moveaxis(t, -1, 0)  # [j,k,i] -> [i,j,k]

    def d4_xxyy(self, x, y):
        n = self.dimension
        t = self._fd(x, y, 0, 2, base_fn=lambda a, b: self.hess_x(a, b), shape=(n, n))
        return np.moveaxis(t, (0, 1), (-2, -1))  # [k,l,i,j] -> [i,j,k,l]


def cost_catalog():
    """Names and constructors of the built-in costs."""
    return {
        "quadratic": QuadraticCost,
        "sqrt1p": SqrtOnePlusCost,
        "sqrt1m": SqrtOneMinusCost,
        "neg-sqrt1m": NegSqrtOneMinusCost,
        "neg-log": NegLogCost,
        "power": PowerCost,
    }


def make_cost(name, dimension, **params):
    """Instantiate a catalog cost by name, e.g. make_cost('power', 2, p=4)."""
    catalog = cost_catalog()
    if name not in catalog:
        raise KeyError(f"unknown cost '{name}'; catalog: {sorted(catalog)}")
    return catalog[name](dimension, **params)


def derivatives(cost: CostFunction, x, y, order: int) -> CostDerivatives:
    """All derivative tensors of the cost at (x, y) up to the requested order."""
    if order > 4 or order < 0:
        raise UnsupportedOrder(f"derivative order {order} not supported (0..4)")
    x = as_point(x, cost.dimension)
    y = as_point(y, cost.dimension)
    cost.check_valid(x, y)
    out = CostDerivatives(order=order, value=cost.eval(x, y))
    if order >= 1:
        out.grad_x = cost.grad_x(x, y)
        out.grad_y = cost.grad_y(x, y)
    if order >= 2:
        out.mixed = cost.mixed_hessian(x, y)
        out.hess_x = cost.hess_x(x, y)
        out.hess_y = cost.hess_y(x, y)
    if order >= 3:
        out.d3_xxy = cost.d3_xxy(x, y)
        out.d3_xyy = cost.d3_xyy(x, y)
    if order >= 4:
        out.d4_xxyy = cost.d4_xxyy(x, y)
    return out


def _stencil_valid(cost, x, y, h, reach):
    """Check validity on the full FD stencil box of half-width reach*h."""
    n = cost.dimension
    for sx in np.ndindex(*(3,) * n):
        dx = (np.array(sx) - 1) * reach * h
        for sy in np.ndindex(*(3,) * n):
            dy = (np.array(sy) - 1) * reach * h
            if not cost.is_valid(x + dx, y + dy):
                raise OutOfValidityDomain(
                    f"FD stencil of half-width {reach * h:g} exits the validity "
                    f"domain of cost '{cost.name}' at x={x}, y={y}"
                )


def _rel_err(analytic, approx):
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(approx))), 1.0)
    return float(np.max(np.abs(analytic - approx))) / scale


def fd_validate(cost: CostFunction, x, y, h: float, richardson: bool = True):
    """Max relative discrepancy between analytic and central-difference tensors.

    Orders 1 and 2 difference the evaluator directly.  Orders 3 and 4
    difference the analytic lower-order tensors (gradient and x-Hessian) in y,
    which keeps the roundoff amplification at second-difference level; pure
    fourth differences of the evaluator drown in cancellation noise at any
    usable step.

    Returns a dict {order: max relative error over that order's tensors}.
    """
    x = as_point(x, cost.dimension)
    y = as_point(y, cost.dimension)
    # Nested central differences reach at most 2h per coordinate; the
    # Richardson pass halves the step and stays inside the same box.
    _stencil_valid(cost, x, y, h, reach=2)

    def fd(fn, nx, ny, shape=()):
        coarse = _fd_array(fn, x, y, nx, ny, h, shape)
        if not richardson:
            return coarse
        fine = _fd_array(fn, x, y, nx, ny, 0.5 * h, shape)
        return _richardson(coarse, fine)

    ceval = lambda a, b: cost.eval(a, b)
    n = cost.dimension
    report = {}
    report[1] = max(
        _rel_err(cost.grad_x(x, y), fd(ceval, 1, 0)),
        _rel_err(cost.grad_y(x, y), fd(ceval, 0, 1)),
    )
    report[2] = max(
        _rel_err(cost.mixed_hessian(x, y), fd(ceval, 1, 1)),
        _rel_err(cost.hess_x(x, y), fd(ceval, 2, 0)),
        _rel_err(cost.hess_y(x, y), fd(ceval, 0, 2)),
    )
    hx = lambda a, b: cost.hess_x(a, b)
    gx = lambda a, b: cost.grad_x(a, b)
    report[3] = max(
        _rel_err(cost.d3_xxy(x, y), np.moveaxis(fd(hx, 0, 1, (n, n)), 0, -1)),
        _rel_err(cost.d3_xyy(x, y), np.moveaxis(fd(gx, 0, 2, (n,)), -1, 0)),
    )
    report[4] = _rel_err(
        cost.d4_xxyy(x, y), np.moveaxis(fd(hx, 0, 2, (n, n)), (0, 1), (-2, -1))
    )
    return report


def inverse_mixed_hessian(cost: CostFunction, x, y) -> np.ndarray:
    """Inverse of the mixed Hessian, with sum_p c_{q,p} c^{p,k} = delta_{qk}.

    The returned matrix has its first index of y-type and second of x-type,
    matching the contractions in the cross-curvature tensor.
    """
    x = as_point(x, cost.dimension)
    y = as_point(y, cost.dimension)
    cost.check_valid(x, y)
    m = cost.mixed_hessian(x, y)
    det = float(np.linalg.det(m))
    if abs(det) < A2_DET_TOL:
        raise A2Violation(
            f"mixed Hessian of '{cost.name}' is singular at x={x}, y={y} "
            f"(|det| = {abs(det):.3e})",
            x=x,
            y=y,
            det=det,
        )
    return np.linalg.inv(m)


def solve_y_from_gradient(
    cost: CostFunction,
    x,
    z,
    y_init=None,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> np.ndarray:
    """Solve D_x c(x, y) = z for y (the unique inverse promised by (A1)).

    Damped Newton iteration with the mixed Hessian as Jacobian; the step is
    halved until the residual decreases, which keeps the log-type costs from
    overshooting their singular set.
    """
    x = as_point(x, cost.dimension)
    z = as_point(z, cost.dimension)
    if y_init is None:
        y = cost.guess_y_from_gradient(x, z)
    else:
        y = as_point(y_init, cost.dimension).copy()
    if not cost.is_valid(x, y):
        raise OutOfValidityDomain(
            f"initial iterate invalid for cost '{cost.name}': x={x}, y_init={y}"
        )

    res = cost.grad_x(x, y) - z
    norm = float(np.linalg.norm(res))
    for _ in range(max_iter):
        if norm <= tol:
            return y
        jac = cost.mixed_hessian(x, y)
        det = float(np.linalg.det(jac))
        if abs(det) < A2_DET_TOL:
            raise A2Violation(
                f"Jacobian degenerated during Newton solve for '{cost.name}'",
                x=x,
                y=y,
                det=det,
            )
        step = np.linalg.solve(jac, -res)
        t = 1.0
        while t >= 2.0**-30:
            cand = y + t * step
            if cost.is_valid(x, cand):
                cand_res = cost.grad_x(x, cand) - z
                cand_norm = float(np.linalg.norm(cand_res))
                if cand_norm < norm:
                    y, res, norm = cand, cand_res, cand_norm
                    break
            t *= 0.5
        else:
            raise NoConvergence(
                f"backtracking stalled solving D_x c = z for '{cost.name}' "
                f"(residual {norm:.3e})",
                residual=norm,
            )
    if norm <= tol:
        return y
    raise NoConvergence(
        f"Newton did not reach tolerance {tol:g} in {max_iter} iterations "
        f"for '{cost.name}' (residual {norm:.3e}); z may lie outside the "
        "range of D_x c or the initial iterate is poor",
        residual=norm,
        iterations=max_iter,
    )
