"""Scenario configs and the end-to-end pipeline behind the command line.

A scenario is one JSON document: a catalog cost, source and target domains
with densities, two grid resolutions, and a seed.  Running it performs the
full chain -- derivative self-check, cross-curvature classification, target
c-convexity check, exact solves at both resolutions, regularity diagnosis --
and writes a deterministic report plus CSV artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time

import numpy as np

from . import geometry
from .costs import SwappedCost, fd_validate, make_cost
from .errors import ConfigError, MissingStage
from .geometry import (
    analytic_c_convexity,
    image_c_convexity,
)
from .mtw import classify_condition
from .regularity import contact_sets_from_plan, gradient_jump_field, regularity_report
from .transport import (
    DiscreteMeasure,
    GridFunction,
    extract_map,
    measure_from_csv,
    normalize_and_validate,
    solve_discrete,
)

__all__ = [
    "Scenario",
    "SolvedScenario",
    "RunResult",
    "load_scenario",
    "demo_names",
    "demo_config",
    "build_domain",
    "build_measure",
    "solve_scenario",
    "run_scenario",
    "write_artifacts",
    "emit_plot_data",
    "PLOT_KINDS",
]

STAGES = ("cost-check", "mtw-classify", "domain-check", "solve", "diagnose")
PLOT_KINDS = ("map-arrows", "gradient-jumps", "contact-diameters", "mtw-heat")

_DEMOS = {
    "quadratic-translate": {
        "name": "quadratic-translate",
        "seed": 0,
        "cost": {"name": "quadratic", "params": {}},
        "source": {
            "domain": {"shape": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]},
            "density": {"kind": "uniform"},
        },
        "target": {
            "domain": {"shape": "box", "lo": [0.5, 0.25], "hi": [1.5, 1.25]},
            "density": {"kind": "uniform"},
        },
        "grids": {"coarse": 24, "fine": 48},
        "mtw": {"n_pairs": 256, "n_frames": 16},
    },
    "a3-ball": {
        "name": "a3-ball",
        "seed": 0,
        "cost": {"name": "sqrt1m", "params": {}},
        "source": {
            "domain": {"shape": "ball", "center": [0.0, 0.0], "radius": 0.3},
            "density": {"kind": "uniform"},
        },
        "target": {
            "domain": {"shape": "ball", "center": [0.25, 0.0], "radius": 0.3},
            "density": {"kind": "uniform"},
        },
        "grids": {"coarse": 24, "fine": 48},
        "mtw": {"n_pairs": 256, "n_frames": 16},
    },
    "loeper-break": {
        "name": "loeper-break",
        "seed": 0,
        "cost": {"name": "power", "params": {"p": 4.0}},
        "source": {
            "domain": {"shape": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]},
            "density": {"kind": "uniform"},
        },
        "target": {
            "domain": {"shape": "box", "lo": [2.0, 0.0], "hi": [3.0, 1.0]},
            "density": {
                "kind": "gaussian-bumps",
                "centers": [[2.3, 0.2], [2.3, 0.8]],
                "sigmas": [0.12, 0.12],
                "amplitudes": [1.0, 1.0],
                "floor": 0.05,
            },
        },
        "grids": {"coarse": 24, "fine": 48},
        "mtw": {"n_pairs": 256, "n_frames": 16},
    },
}


def demo_names():
    return sorted(_DEMOS)


def demo_config(name):
    if name not in _DEMOS:
        raise ConfigError(f"unknown demo '{name}'; available: {', '.join(demo_names())}")
    return json.loads(json.dumps(_DEMOS[name]))  # deep copy


# ---------------------------------------------------------------------------
# Config parsing and validation
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class Scenario:
    name: str
    seed: int
    cost_spec: dict
    source_spec: dict
    target_spec: dict
    grid_coarse: int
    grid_fine: int
    mtw_opts: dict
    tolerances: dict
    raw: dict

    def make_cost(self, dim=2):
        return make_cost(self.cost_spec["name"], dim, **self.cost_spec.get("params", {}))

    def fingerprint(self):
        doc = dict(self.raw)
        doc.pop("grids", None)
        payload = json.dumps(doc, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _require(doc, field, types, where):
    if field not in doc:
        raise ConfigError("missing required field", field=f"{where}.{field}")
    if not isinstance(doc[field], types):
        raise ConfigError(
            f"expected {types} but found {type(doc[field]).__name__}",
            field=f"{where}.{field}",
        )
    return doc[field]


_DOMAIN_SHAPES = {"box", "ball", "ellipsoid", "superellipse", "dumbbell", "points"}
_DENSITY_KINDS = {"uniform", "gaussian-bumps", "file"}


def _validate_side(doc, where):
    dom = _require(doc, "domain", dict, where)
    shape = _require(dom, "shape", str, f"{where}.domain")
    if shape not in _DOMAIN_SHAPES:
        raise ConfigError(
            f"unknown shape '{shape}' (one of {sorted(_DOMAIN_SHAPES)})",
            field=f"{where}.domain.shape",
        )
    if shape == "box":
        _require(dom, "lo", list, f"{where}.domain")
        _require(dom, "hi", list, f"{where}.domain")
    elif shape in ("ball",):
        _require(dom, "center", list, f"{where}.domain")
        _require(dom, "radius", (int, float), f"{where}.domain")
    elif shape in ("ellipsoid", "superellipse"):
        _require(dom, "center", list, f"{where}.domain")
        _require(dom, "semi_axes", list, f"{where}.domain")
    dens = _require(doc, "density", dict, where)
    kind = _require(dens, "kind", str, f"{where}.density")
    if kind not in _DENSITY_KINDS:
        raise ConfigError(
            f"unknown density '{kind}' (one of {sorted(_DENSITY_KINDS)})",
            field=f"{where}.density.kind",
        )
    if kind == "gaussian-bumps":
        _require(dens, "centers", list, f"{where}.density")
        _require(dens, "sigmas", list, f"{where}.density")
    if kind == "file":
        _require(dens, "path", str, f"{where}.density")


def load_scenario(doc) -> Scenario:
    """Validate a parsed JSON document into a Scenario."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    name = doc.get("name", "scenario")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("must be an integer", field="seed")
    cost = _require(doc, "cost", dict, "")
    _require(cost, "name", str, "cost")
    for side in ("source", "target"):
        _validate_side(_require(doc, side, dict, ""), side)
    grids = _require(doc, "grids", dict, "")
    coarse = _require(grids, "coarse", int, "grids")
    fine = _require(grids, "fine", int, "grids")
    if not (2 <= coarse < fine):
        raise ConfigError("require 2 <= coarse < fine", field="grids")
    return Scenario(
        name=name,
        seed=seed,
        cost_spec=cost,
        source_spec=doc["source"],
        target_spec=doc["target"],
        grid_coarse=coarse,
        grid_fine=fine,
        mtw_opts=doc.get("mtw", {}),
        tolerances=doc.get("tolerances", {}),
        raw=doc,
    )


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def build_domain(spec) -> geometry.Domain:
    shape = spec["shape"]
    if shape == "box":
        return geometry.box_domain(spec["lo"], spec["hi"])
    if shape == "ball":
        return geometry.ball_domain(spec["center"], spec["radius"])
    if shape == "ellipsoid":
        return geometry.ellipsoid_domain(spec["center"], spec["semi_axes"])
    if shape == "superellipse":
        return geometry.superellipse_domain(
            spec["center"], spec["semi_axes"], spec.get("power", 3)
        )
    if shape == "dumbbell":
        return geometry.dumbbell_domain(
            spec.get("center", (0.0, 0.0)),
            spec.get("scale", 1.0),
            spec.get("waist", 1.0),
            spec.get("bulge", 0.1),
        )
    raise ConfigError(f"unsupported domain shape '{shape}'", field="domain.shape")


def _density_fn(spec):
    kind = spec["kind"]
    if kind == "uniform":
        return lambda pts: np.ones(len(pts))
    if kind == "gaussian-bumps":
        centers = np.atleast_2d(np.asarray(spec["centers"], dtype=float))
        sigmas = np.asarray(spec["sigmas"], dtype=float).reshape(-1)
        amps = np.asarray(spec.get("amplitudes", np.ones(len(centers))), dtype=float)
        floor = float(spec.get("floor", 0.0))

        def fn(pts):
            out = np.full(len(pts), floor)
            for c, s, a in zip(centers, sigmas, amps):
                d2 = ((pts - c) ** 2).sum(axis=1)
                out = out + a * np.exp(-0.5 * d2 / s**2)
            return out

        return fn
    raise ConfigError(f"density kind '{kind}' is not sampled on grids", field="density")


def build_measure(side_spec, n_per_axis):
    """Lattice measure over the domain with node weights from the density.

    Returns (measure, grid) where the grid mask marks the lattice nodes
    inside the domain and the measure lives on exactly those nodes.
    """
    dens = side_spec["density"]
    if dens["kind"] == "file":
        measure = measure_from_csv(dens["path"])
        lo = measure.points.min(axis=0)
        hi = measure.points.max(axis=0)
        grid = GridFunction.over_box(lo, hi, n_per_axis)
        return measure, grid
    domain = build_domain(side_spec["domain"])
    lo, hi = domain.box
    grid = GridFunction.over_box(lo, hi, n_per_axis, mask_fn=lambda pts: domain.contains(pts, closure=True))
    pts = grid.masked_points()
    w = _density_fn(dens)(pts)
    if np.any(w <= 0):
        raise ConfigError("density vanishes at a lattice node", field="density")
    measure = DiscreteMeasure(pts, w / math.fsum(w)).check()
    return measure, grid


@dataclasses.dataclass
class SolvedScenario:
    """One resolution of a scenario, solved, with its diagnostics inputs."""

    cost: object
    fingerprint: str
    grid_n: int
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    source_grid: GridFunction     # carries the potential u on its mask
    target_grid: GridFunction
    plan: object
    potentials: object
    cost_matrix: np.ndarray
    extraction: object

    def duality_gap(self):
        dual = float(self.mu.weights @ self.potentials.u + self.nu.weights @ self.potentials.v)
        return abs(self.plan.objective - dual)

    def summary(self):
        ext = self.extraction
        return {
            "grid_n": self.grid_n,
            "n_source": self.mu.size,
            "n_target": self.nu.size,
            "objective": self.plan.objective,
            "duality_gap": self.duality_gap(),
            "feasibility_gap": self.potentials.feasibility_gap(self.cost_matrix),
            "support_size": int(self.plan.size),
            "multivalued_fraction": ext.multivalued_fraction,
            "max_gradient_residual": (
                float(np.nanmax(ext.grad_residuals))
                if ext.grad_residuals is not None and np.any(np.isfinite(ext.grad_residuals))
                else None
            ),
            "weight_ratio_source": self.mu.weight_ratio(),
            "weight_ratio_target": self.nu.weight_ratio(),
        }


def solve_scenario(scenario: Scenario, n_per_axis: int) -> SolvedScenario:
    """Build the two lattice measures at one resolution and solve exactly."""
    cost = scenario.make_cost()
    mu, sgrid = build_measure(scenario.source_spec, n_per_axis)
    nu, tgrid = build_measure(scenario.target_spec, n_per_axis)
    mu, nu = normalize_and_validate(
        (mu.points, mu.weights), (nu.points, nu.weights)
    )
    plan, pot, C = solve_discrete(cost, mu, nu)
    u_grid = sgrid.with_masked_values(pot.u)
    extraction = extract_map(cost, C, pot.v, mu.points, nu.points, u_grid=u_grid)
    return SolvedScenario(
        cost=cost,
        fingerprint=scenario.fingerprint(),
        grid_n=n_per_axis,
        mu=mu,
        nu=nu,
        source_grid=u_grid,
        target_grid=tgrid,
        plan=plan,
        potentials=pot,
        cost_matrix=C,
        extraction=extraction,
    )


# ---------------------------------------------------------------------------
# The pipeline
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class RunResult:
    """Everything a run produced: the JSON-ready report, wall-clock timings,
    and the in-memory arrays the CSV emitters draw from."""

    report: dict
    timings: dict
    scenario: Scenario | None = None
    coarse: SolvedScenario | None = None
    fine: SolvedScenario | None = None
    mtw_report: object = None
    contact_sets: list | None = None

    def report_json(self):
        return json.dumps(self.report, sort_keys=True, indent=2) + "\n"


def _stage_list(stage):
    if stage is None:
        return list(STAGES)
    if stage not in STAGES:
        raise ConfigError(f"unknown stage '{stage}'; stages: {', '.join(STAGES)}")
    if stage == "diagnose":
        return ["solve", "diagnose"]
    return [stage]


def run_scenario(scenario: Scenario, stage=None, jobs=1) -> RunResult:
    """Execute the pipeline and assemble the deterministic run report."""
    rng = np.random.default_rng(scenario.seed)
    stages = _stage_list(stage)
    cost = scenario.make_cost()
    report = {
        "scenario": scenario.raw,
        "fingerprint": scenario.fingerprint(),
        "stages_run": stages,
    }
    timings = {}
    result = RunResult(report=report, timings=timings, scenario=scenario)

    source_domain = build_domain(scenario.source_spec["domain"])
    target_domain = build_domain(scenario.target_spec["domain"])

    if "cost-check" in stages:
        t0 = time.perf_counter()
        worst = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
        n_checked = 0
        attempts = 0
        while n_checked < 8 and attempts < 200:
            attempts += 1
            x = rng.uniform(*source_domain.box)
            y = rng.uniform(*target_domain.box)
            if not cost.is_valid(x, y):
                continue
            try:
                rep = fd_validate(cost, x, y, h=1e-3)
            except Exception:
                continue
            for k in worst:
                worst[k] = max(worst[k], rep[k])
            n_checked += 1
        report["cost_check"] = {
            "pairs_checked": n_checked,
            "max_rel_error_by_order": {str(k): worst[k] for k in sorted(worst)},
        }
        timings["cost-check"] = time.perf_counter() - t0

    if "mtw-classify" in stages:
        t0 = time.perf_counter()
        mtw = classify_condition(
            cost,
            source_domain,
            target_domain,
            n_pairs=int(scenario.mtw_opts.get("n_pairs", 256)),
            n_frames=int(scenario.mtw_opts.get("n_frames", 16)),
            tol_pos=float(scenario.tolerances.get("mtw.tol_pos", 1e-8)),
        )
        result.mtw_report = mtw
        report["mtw"] = json.loads(mtw.to_json())
        timings["mtw-classify"] = time.perf_counter() - t0

    if "domain-check" in stages:
        t0 = time.perf_counter()
        swapped = SwappedCost(cost)
        probes = source_domain.interior
        sel = np.linspace(0, len(probes) - 1, min(16, len(probes))).astype(int)
        defects = []
        all_convex = True
        for x in probes[sel]:
            verdict = image_c_convexity(swapped, target_domain, x)
            defects.append(verdict.defect)
            all_convex = all_convex and verdict.is_convex
        entry = {
            "target_c_convex_image": bool(all_convex),
            "worst_defect": float(max(defects)) if defects else 0.0,
            "n_source_probes": int(len(sel)),
        }
        if target_domain.phi is not None:
            analytic = analytic_c_convexity(swapped, target_domain, probes[sel])
            entry["analytic_min_eigenvalue"] = analytic.min_eigenvalue
            entry["target_c_convex_analytic"] = bool(analytic.is_c_convex)
        report["domain_check"] = entry
        timings["domain-check"] = time.perf_counter() - t0

    if "solve" in stages:
        t0 = time.perf_counter()
        result.coarse = solve_scenario(scenario, scenario.grid_coarse)
        timings["solve-coarse"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        result.fine = solve_scenario(scenario, scenario.grid_fine)
        timings["solve-fine"] = time.perf_counter() - t0
        report["solve"] = {
            "coarse": result.coarse.summary(),
            "fine": result.fine.summary(),
        }

    if "diagnose" in stages:
        t0 = time.perf_counter()
        reg = regularity_report(
            result.coarse,
            result.fine,
            contraction_threshold=float(
                scenario.tolerances.get("regularity.contraction", 1.5)
            ),
            contact_spacing_factor=float(
                scenario.tolerances.get("regularity.contact_spacing_factor", 3.0)
            ),
        )
        result.contact_sets = contact_sets_from_plan(result.fine)
        doc = reg.to_dict()
        # the full per-support lists go to CSV, keep the report compact
        doc["n_contact_sets"] = len(doc.pop("contact_diameters"))
        doc.pop("contact_components")
        report["regularity"] = doc
        timings["diagnose"] = time.perf_counter() - t0

    # invariant checks -> exit code 2 territory
    violations = []
    if "solve" in stages:
        for tag, solved in (("coarse", result.coarse), ("fine", result.fine)):
            if solved.duality_gap() > 1e-8 * max(1.0, abs(solved.plan.objective)):
                violations.append(f"duality gap at {tag} resolution")
            if solved.potentials.feasibility_gap(solved.cost_matrix) > 1e-9:
                violations.append(f"dual infeasibility at {tag} resolution")
    report["invariant_violations"] = violations
    return result


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _write_csv(path, header, rows):
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def write_artifacts(result: RunResult, out_dir):
    """Write report.json, timings.json, and the CSV artifact set."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(result.report_json())
    with open(os.path.join(out_dir, "timings.json"), "w") as fh:
        json.dump(result.timings, fh, indent=2, sort_keys=True)
        fh.write("\n")
    fine = result.fine
    if fine is not None:
        plan = fine.plan
        _write_csv(
            os.path.join(out_dir, "plan.csv"),
            ["source_index", "target_index", "mass"],
            zip(plan.source_idx.tolist(), plan.target_idx.tolist(), map(repr, plan.mass)),
        )
        dim = fine.mu.dim
        rows = []
        for side, pts, vals in (
            ("u", fine.mu.points, fine.potentials.u),
            ("v", fine.nu.points, fine.potentials.v),
        ):
            for i, (p, val) in enumerate(zip(pts, vals)):
                rows.append([side, i] + [repr(float(c)) for c in p] + [repr(float(val))])
        _write_csv(
            os.path.join(out_dir, "potentials.csv"),
            ["side", "index"] + [f"x{d + 1}" for d in range(dim)] + ["value"],
            rows,
        )
        _write_diagnostics_csv(result, os.path.join(out_dir, "diagnostics.csv"))
    for kind in PLOT_KINDS:
        try:
            emit_plot_data(result, kind, os.path.join(out_dir, f"{kind}.csv"))
        except MissingStage:
            pass


def _write_diagnostics_csv(result: RunResult, path):
    fine = result.fine
    grid = fine.source_grid
    jumps = gradient_jump_field(grid)
    flat_nodes = np.flatnonzero(grid.mask.ravel())
    diam_of_source = {}
    if result.contact_sets is not None:
        for cs, src in zip(result.contact_sets, fine.plan.source_idx):
            key = int(src)
            diam_of_source[key] = max(diam_of_source.get(key, 0.0), cs.diameter)
    rows = []
    pts = fine.mu.points
    for row, node in enumerate(flat_nodes):
        midx = np.unravel_index(int(node), grid.shape)
        j = jumps[midx]
        rows.append(
            [repr(float(c)) for c in pts[row]]
            + [
                repr(float(j)) if np.isfinite(j) else "",
                int(fine.extraction.multivalued[row]),
                repr(diam_of_source[row]) if row in diam_of_source else "",
            ]
        )
    _write_csv(
        path,
        [f"x{d + 1}" for d in range(fine.mu.dim)]
        + ["gradient_jump", "multivalued", "contact_diameter"],
        rows,
    )


def emit_plot_data(result: RunResult, kind, path):
    """Plain-CSV plot data for external plotters; one header line."""
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind '{kind}'; kinds: {', '.join(PLOT_KINDS)}")
    if kind == "map-arrows":
        fine = result.fine
        if fine is None:
            raise MissingStage("map-arrows requires the solve stage")
        ext = fine.extraction
        rows = []
        for i, t in enumerate(ext.target_of):
            if t < 0:
                continue
            rows.append(
                [repr(float(c)) for c in fine.mu.points[i]]
                + [repr(float(c)) for c in fine.nu.points[t]]
            )
        dim = fine.mu.dim
        _write_csv(
            path,
            [f"x{d + 1}" for d in range(dim)] + [f"T{d + 1}" for d in range(dim)],
            rows,
        )
        return
    if kind == "gradient-jumps":
        fine = result.fine
        if fine is None:
            raise MissingStage("gradient-jumps requires the solve stage")
        grid = fine.source_grid
        jumps = gradient_jump_field(grid)
        pts = grid.all_points()
        rows = [
            [repr(float(p[0])), repr(float(p[1])), repr(float(j))]
            for p, j in zip(pts, jumps.ravel())
            if np.isfinite(j)
        ]
        _write_csv(path, ["x1", "x2", "jump"], rows)
        return
    if kind == "contact-diameters":
        if result.contact_sets is None:
            raise MissingStage("contact-diameters requires the diagnose stage")
        fine = result.fine
        rows = []
        for cs, src in zip(result.contact_sets, fine.plan.source_idx):
            anchor = fine.mu.points[int(src)]
            rows.append(
                [repr(float(c)) for c in anchor]
                + [repr(float(cs.diameter)), int(cs.n_components)]
            )
        _write_csv(
            path,
            [f"x{d + 1}" for d in range(fine.mu.dim)] + ["diameter", "components"],
            rows,
        )
        return
    if kind == "mtw-heat":
        if result.mtw_report is None:
            raise MissingStage("mtw-heat requires the mtw-classify stage")
        raise MissingStage("mtw-heat needs the pair samples; use emit_mtw_heat")


def emit_mtw_heat(cost, source_domain, target_domain, path, per_axis=8, n_frames=16):
    """Min-over-frames tensor values on a pair lattice, as CSV rows."""
    from .mtw import frame_grid, mtw_tensor

    lo_s, hi_s = source_domain.box
    lo_t, hi_t = target_domain.box
    frames = frame_grid(cost.dimension, n_frames)
    xs = [np.linspace(lo_s[d], hi_s[d], per_axis) for d in range(cost.dimension)]
    ys = [np.linspace(lo_t[d], hi_t[d], per_axis) for d in range(cost.dimension)]
    xpts = np.stack([m.ravel() for m in np.meshgrid(*xs, indexing="ij")], axis=-1)
    ypts = np.stack([m.ravel() for m in np.meshgrid(*ys, indexing="ij")], axis=-1)
    xpts = xpts[source_domain.contains(xpts)]
    ypts = ypts[target_domain.contains(ypts)]
    rows = []
    for x in xpts:
        for y in ypts:
            if not cost.is_valid(x, y):
                continue
            val = min(mtw_tensor(cost, x, y, f.xi, f.eta) for f in frames)
            rows.append(
                [repr(float(c)) for c in x]
                + [repr(float(c)) for c in y]
                + [repr(float(val))]
            )
    dim = cost.dimension
    _write_csv(
        path,
        [f"x{d + 1}" for d in range(dim)] + [f"y{d + 1}" for d in range(dim)] + ["min_tensor"],
        rows,
    )
