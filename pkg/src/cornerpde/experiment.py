"""Reproducible experiment driver.

An :class:`ExperimentConfig` describes a complete study — domain, mesh
family, parabolic problem, optional semilinear stage, and the smoothness
diagnostics — as plain JSON-compatible dictionaries.  ``run_experiment``
executes the configured stages in order (pencil, solve, norms, rates,
write), collects per-stage timings, and writes a self-describing output
directory:

* one CSV per solved field (mesh listing plus nodal values),
* ``errors.csv`` and ``nterm.csv`` rate tables,
* ``iterations_n*.csv`` fixed-point logs when a semilinear stage ran,
* ``report.json`` with the config echo, pencil summaries, results, and a
  manifest of the data files,
* ``manifest.json`` hashing every output including ``report.json``,
* ``timings.txt``, written last and deliberately left out of the manifest.

Given the same config and seed, and with the linear-algebra backends
pinned to one thread, reruns reproduce every manifest-listed file byte for
byte; wall-clock timings are the only unstable output, which is why they
live outside the manifest.  Stage failures still produce ``report.json``
(with an ``error`` block naming the stage) and a manifest of whatever was
written before the exception is re-raised.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import time
import warnings
from contextlib import suppress
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import (PolygonalDomain, make_l_shape, make_sector, make_square,
                     mesh_graded, mesh_uniform, write_mesh_csv)
from .errors import NumericError, ValidationError
from .pde import (ParabolicProblem, SemilinearConfig, resolve_semilinear_config,
                  smallness_check, solve_linear, solve_semilinear)
from .pencil import (admissible_weights, heat_weight_bound,
                     laplace_pencil_closed_form, pencil_eigenvalues_numeric,
                     strip_delta)
from .smoothness import (KondratievParams, SmoothnessReport,
                         cross_family_l2_errors, estimate_rates, fit_loglog,
                         galerkin_energy_errors, hierarchical_coefficients,
                         kondratiev_norm, l2_error_against, nterm_error_sweep,
                         self_convergence_errors, sobolev_norm)

PENCIL_GRID = 2000
PENCIL_COUNT = 3


# ---------------------------------------------------------------------------
# source registry
# ---------------------------------------------------------------------------

def _f_one(t, pts):
    return np.ones(len(pts))


def _f_manufactured(t, pts):
    x, y = pts[:, 0], pts[:, 1]
    return x * (1 - x) * y * (1 - y) + 2.0 * t * (x * (1 - x) + y * (1 - y))


def _exact_manufactured(t, pts):
    x, y = pts[:, 0], pts[:, 1]
    return t * x * (1 - x) * y * (1 - y)


@dataclass(frozen=True)
class _Source:
    f: object                      # f(t, pts) -> values
    steady_value: float | None     # constant steady source, if f is one
    exact: object | None           # exact(t, pts) -> values, if known


_SOURCES = {
    # f = 1: the workhorse singular-rate problem (steady limit = Poisson).
    "one": _Source(f=_f_one, steady_value=1.0, exact=None),
    # manufactured smooth solution u = t * x(1-x)y(1-y) on the unit square.
    "manufactured-square": _Source(f=_f_manufactured, steady_value=None,
                                   exact=_exact_manufactured),
}

_DOMAIN_KINDS = ("square", "lshape", "sector")
_MESH_TYPES = ("uniform", "graded")
_STEP_RULES = ("fixed", "dt-h2")
_EPS_RULES = ("half-max", "value")
_ERROR_FLAVORS = ("galerkin-energy", "exact-l2", "self-l2")
_L2_REFERENCES = ("graded", "self", "exact")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


def _check_keys(section: dict, allowed, label: str) -> None:
    for k in section:
        if k not in allowed:
            raise ValidationError(f"{label}: unknown field {k!r}")


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment run.

    Every section is a plain dict mirroring the JSON config file format:

    ``domain``
        ``{"kind": "square" | "lshape" | "sector"}``; sectors add
        ``"theta"`` in ``(0, 2*pi]`` and an optional ``"radius"``.
    ``mesh`` (optional)
        ``{"type": "uniform" | "graded", "h_sequence": [...],
        "mu": ..., "reference_refinements": ...}``.  The ``h_sequence``
        must be strictly decreasing.  On a uniform family, ``mu`` requests
        a graded companion family (and enables the ``"graded"`` L2
        reference); on a graded family it is the grading exponent itself.
    ``problem`` (optional, requires ``mesh``)
        ``{"f": <registry name>, "T": ..., "n_steps": {"rule": "fixed",
        "value": k} | {"rule": "dt-h2", "factor": c}}``.  The ``dt-h2``
        rule targets ``dt = c * h^2`` on each level; ``fixed`` uses one
        common time grid across all levels.
    ``semilinear`` (optional, requires ``problem``)
        ``{"eps": {"rule": "half-max"} | {"rule": "value", "value": e},
        "M": ..., "r0": ..., "tol": ..., "max_iter": ..., "n_probes": ...}``.
        ``half-max`` sets ``eps`` to half the per-level smallness bound.
    ``smoothness`` (optional, requires ``problem`` on a uniform family)
        ``{"kondratiev": {"m":, "p":, "a":}, "nterm_log2_range": [lo, hi],
        "uniform_errors": "galerkin-energy" | "exact-l2" | "self-l2",
        "l2_reference": "graded" | "self" | "exact"}``.
    ``output_dir``
        Optional output root; resolved last, never echoed into reports, so
        identical configs produce identical report bytes wherever they run.
    """

    name: str
    domain: dict
    mesh: dict | None = None
    problem: dict | None = None
    semilinear: dict | None = None
    smoothness: dict | None = None
    seed: int = 0
    output_dir: str | None = None

    def to_dict(self) -> dict:
        """JSON-ready echo of the config; ``output_dir`` is excluded."""
        return copy.deepcopy({
            "name": self.name,
            "domain": self.domain,
            "mesh": self.mesh,
            "problem": self.problem,
            "semilinear": self.semilinear,
            "smoothness": self.smoothness,
            "seed": self.seed,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Build a config from a parsed JSON dict, rejecting unknown keys."""
        _require(isinstance(d, dict), "config must be a JSON object")
        allowed = ("name", "domain", "mesh", "problem", "semilinear",
                   "smoothness", "seed", "output_dir")
        _check_keys(d, allowed, "config")
        _require("name" in d, "config: missing field 'name'")
        _require("domain" in d, "config: missing field 'domain'")
        return cls(name=d["name"], domain=copy.deepcopy(d["domain"]),
                   mesh=copy.deepcopy(d.get("mesh")),
                   problem=copy.deepcopy(d.get("problem")),
                   semilinear=copy.deepcopy(d.get("semilinear")),
                   smoothness=copy.deepcopy(d.get("smoothness")),
                   seed=d.get("seed", 0), output_dir=d.get("output_dir"))

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        """Check every field and cross-field constraint; raise ValidationError
        naming the offending field before any computation starts."""
        _require(isinstance(self.name, str) and self.name != "",
                 "name must be a nonempty string")
        _require(isinstance(self.seed, int) and not isinstance(self.seed, bool)
                 and self.seed >= 0, f"seed must be an integer >= 0, got {self.seed!r}")
        self._validate_domain()
        if self.mesh is not None:
            self._validate_mesh()
        if self.problem is not None:
            _require(self.mesh is not None, "problem requires a mesh section")
            self._validate_problem()
        if self.semilinear is not None:
            _require(self.problem is not None, "semilinear requires a problem section")
            self._validate_semilinear()
        if self.smoothness is not None:
            _require(self.problem is not None, "smoothness requires a problem section")
            self._validate_smoothness()

    def _validate_domain(self) -> None:
        dom = self.domain
        _require(isinstance(dom, dict), "domain must be an object")
        _check_keys(dom, ("kind", "theta", "radius"), "domain")
        kind = dom.get("kind")
        _require(kind in _DOMAIN_KINDS,
                 f"domain.kind must be one of {_DOMAIN_KINDS}, got {kind!r}")
        if kind == "sector":
            _require("theta" in dom, "domain.theta is required for sectors")
            theta = dom["theta"]
            _require(isinstance(theta, (int, float))
                     and 0.0 < theta <= 2.0 * math.pi + 1e-15,
                     f"domain.theta must lie in (0, 2*pi], got {theta!r}")
            radius = dom.get("radius", 1.0)
            _require(isinstance(radius, (int, float)) and radius > 0,
                     f"domain.radius must be positive, got {radius!r}")
        else:
            _require("theta" not in dom, "domain.theta only applies to sectors")
            _require("radius" not in dom, "domain.radius only applies to sectors")

    def _validate_mesh(self) -> None:
        mesh = self.mesh
        _require(isinstance(mesh, dict), "mesh must be an object")
        _check_keys(mesh, ("type", "h_sequence", "mu", "reference_refinements"),
                    "mesh")
        _require(self.domain.get("kind") != "sector",
                 "mesh is not supported on sector domains; sectors run the "
                 "pencil stage only")
        mtype = mesh.get("type")
        _require(mtype in _MESH_TYPES,
                 f"mesh.type must be one of {_MESH_TYPES}, got {mtype!r}")
        hs = mesh.get("h_sequence")
        _require(isinstance(hs, (list, tuple)) and len(hs) >= 1,
                 "mesh.h_sequence must be a nonempty list")
        for h in hs:
            _require(isinstance(h, (int, float)) and h > 0,
                     f"mesh.h_sequence entries must be positive, got {h!r}")
        _require(all(b < a for a, b in zip(hs, hs[1:])),
                 "mesh.h_sequence must be strictly decreasing")
        if "mu" in mesh:
            mu = mesh["mu"]
            _require(isinstance(mu, (int, float)) and 0.0 < mu <= 1.0,
                     f"mesh.mu must lie in (0, 1], got {mu!r}")
            _require(self.domain.get("kind") == "lshape",
                     "mesh.mu grades toward a re-entrant corner; only the "
                     "L-shape supports it here")
        else:
            _require(mtype != "graded", "mesh.mu is required for graded meshes")
        rr = mesh.get("reference_refinements", 1)
        _require(isinstance(rr, int) and not isinstance(rr, bool) and rr >= 0,
                 f"mesh.reference_refinements must be an integer >= 0, got {rr!r}")

    def _validate_problem(self) -> None:
        prob = self.problem
        _require(isinstance(prob, dict), "problem must be an object")
        _check_keys(prob, ("f", "T", "n_steps"), "problem")
        _require(prob.get("f") in _SOURCES,
                 f"problem.f must be one of {tuple(_SOURCES)}, got {prob.get('f')!r}")
        T = prob.get("T")
        _require(isinstance(T, (int, float)) and T > 0,
                 f"problem.T must be positive, got {T!r}")
        rule = prob.get("n_steps")
        _require(isinstance(rule, dict) and rule.get("rule") in _STEP_RULES,
                 f"problem.n_steps.rule must be one of {_STEP_RULES}")
        if rule["rule"] == "fixed":
            _check_keys(rule, ("rule", "value"), "problem.n_steps")
            v = rule.get("value")
            _require(isinstance(v, int) and not isinstance(v, bool) and v >= 1,
                     f"problem.n_steps.value must be an integer >= 1, got {v!r}")
        else:
            _check_keys(rule, ("rule", "factor"), "problem.n_steps")
            c = rule.get("factor")
            _require(isinstance(c, (int, float)) and c > 0,
                     f"problem.n_steps.factor must be positive, got {c!r}")

    def _validate_semilinear(self) -> None:
        semi = self.semilinear
        _require(isinstance(semi, dict), "semilinear must be an object")
        _check_keys(semi, ("eps", "M", "r0", "tol", "max_iter", "n_probes"),
                    "semilinear")
        eps = semi.get("eps")
        _require(isinstance(eps, dict) and eps.get("rule") in _EPS_RULES,
                 f"semilinear.eps.rule must be one of {_EPS_RULES}")
        if eps["rule"] == "value":
            _check_keys(eps, ("rule", "value"), "semilinear.eps")
            v = eps.get("value")
            _require(isinstance(v, (int, float)) and v >= 0,
                     f"semilinear.eps.value must be >= 0, got {v!r}")
        else:
            _check_keys(eps, ("rule",), "semilinear.eps")
        # remaining fields are validated by SemilinearConfig itself; build one
        try:
            self._semilinear_base()
        except ValidationError as exc:
            raise ValidationError(f"semilinear: {exc}") from exc

    def _validate_smoothness(self) -> None:
        sm = self.smoothness
        _require(isinstance(sm, dict), "smoothness must be an object")
        _check_keys(sm, ("kondratiev", "nterm_log2_range", "uniform_errors",
                         "l2_reference"), "smoothness")
        kv = sm.get("kondratiev")
        _require(isinstance(kv, dict), "smoothness.kondratiev must be an object")
        _check_keys(kv, ("m", "p", "a"), "smoothness.kondratiev")
        m = kv.get("m")
        _require(isinstance(m, int) and not isinstance(m, bool) and 0 <= m <= 1,
                 f"smoothness.kondratiev.m must be 0 or 1 for P1 fields, got {m!r}")
        p = kv.get("p", 2.0)
        _require(isinstance(p, (int, float)) and p > 1,
                 f"smoothness.kondratiev.p must exceed 1, got {p!r}")
        a = kv.get("a", 0.0)
        _require(isinstance(a, (int, float)) and math.isfinite(a),
                 f"smoothness.kondratiev.a must be finite, got {a!r}")
        rng = sm.get("nterm_log2_range")
        _require(isinstance(rng, (list, tuple)) and len(rng) == 2
                 and all(isinstance(v, int) and not isinstance(v, bool) for v in rng)
                 and 1 <= rng[0] < rng[1] <= 24,
                 "smoothness.nterm_log2_range must be integers [lo, hi] with "
                 "1 <= lo < hi <= 24")
        flavor = sm.get("uniform_errors")
        _require(flavor in _ERROR_FLAVORS,
                 f"smoothness.uniform_errors must be one of {_ERROR_FLAVORS}, "
                 f"got {flavor!r}")
        l2ref = sm.get("l2_reference")
        _require(l2ref in _L2_REFERENCES,
                 f"smoothness.l2_reference must be one of {_L2_REFERENCES}, "
                 f"got {l2ref!r}")

        mesh, prob = self.mesh, self.problem
        _require(mesh.get("type") == "uniform",
                 "smoothness diagnostics need a uniform primary family "
                 "(mesh.type == 'uniform'); gradings enter via mesh.mu")
        _require(len(mesh["h_sequence"]) >= 4,
                 "smoothness rate fits need at least 4 mesh levels")
        source = _SOURCES[prob["f"]]
        if flavor == "galerkin-energy":
            _require(source.steady_value is not None,
                     "smoothness.uniform_errors 'galerkin-energy' needs a "
                     "time-independent source (problem.f with a steady value)")
            _require(prob["n_steps"]["rule"] == "fixed",
                     "smoothness.uniform_errors 'galerkin-energy' needs a "
                     "common time grid (problem.n_steps.rule == 'fixed'); "
                     "per-level grids leave a non-shared transient in the "
                     "energy functional")
        if flavor == "exact-l2" or l2ref == "exact":
            _require(source.exact is not None,
                     "an 'exact' error route needs a source with a known "
                     "solution (problem.f)")
        if flavor in ("galerkin-energy", "self-l2") or l2ref in ("graded", "self"):
            _require(mesh.get("reference_refinements", 1) >= 1,
                     "reference-based error routes need "
                     "mesh.reference_refinements >= 1")
        if l2ref == "graded":
            _require("mu" in mesh,
                     "smoothness.l2_reference 'graded' needs mesh.mu")
        if flavor == "galerkin-energy":
            ns = [self._level_n(h) for h in mesh["h_sequence"]]
            _require(all(b == 2 * a for a, b in zip(ns, ns[1:])),
                     "the 'galerkin-energy' route needs consecutive mesh "
                     "levels to double in resolution")

    # -- derived helpers ----------------------------------------------------

    def _level_n(self, h: float) -> int:
        extent = 1.0 if self.domain["kind"] != "sector" else self.domain.get("radius", 1.0)
        return max(1, round(extent / h))

    def _semilinear_base(self) -> SemilinearConfig:
        semi = self.semilinear
        eps = semi["eps"]
        eps_value = float(eps["value"]) if eps["rule"] == "value" else 0.0
        return SemilinearConfig(
            eps=eps_value, M=semi.get("M", 2), r0=semi.get("r0", 2.0),
            tol=semi.get("tol", 1e-9), max_iter=semi.get("max_iter", 50),
            n_probes=semi.get("n_probes", 8), seed=self.seed)


def presets() -> list:
    """The four shipped example configurations.

    ``square-smooth``
        Manufactured smooth solution on the square: every rate hits its
        full order and the adaptive-vs-uniform gap is ~0 (the control).
    ``lshape-linear``
        f = 1 on the L-shape, run to the steady limit on a common time
        grid: uniform energy rate is corner-limited, the graded companion
        restores first order, and the N-term slope opens a positive gap
        over the uniform L2-in-h rate.
    ``lshape-semilinear``
        Same domain with the contraction-monitored semilinear solve;
        reports smallness bounds, iteration logs, and self-convergence.
    ``slit-pencil``
        Slit disc (theta = 2*pi), pencil stage only: the worst-case corner
        spectrum and its admissible weight window.
    """
    return [
        ExperimentConfig(
            name="square-smooth",
            domain={"kind": "square"},
            mesh={"type": "uniform", "h_sequence": [1 / 8, 1 / 16, 1 / 32, 1 / 64],
                  "reference_refinements": 0},
            problem={"f": "manufactured-square", "T": 0.5,
                     "n_steps": {"rule": "dt-h2", "factor": 1.0}},
            smoothness={"kondratiev": {"m": 1, "p": 2.0, "a": 0.0},
                        "nterm_log2_range": [6, 11],
                        "uniform_errors": "exact-l2",
                        "l2_reference": "exact"},
            seed=0),
        ExperimentConfig(
            name="lshape-linear",
            domain={"kind": "lshape"},
            mesh={"type": "uniform", "h_sequence": [1 / 8, 1 / 16, 1 / 32, 1 / 64],
                  "mu": 2 / 3, "reference_refinements": 1},
            problem={"f": "one", "T": 1.0,
                     "n_steps": {"rule": "fixed", "value": 128}},
            smoothness={"kondratiev": {"m": 1, "p": 2.0, "a": -0.5},
                        "nterm_log2_range": [6, 12],
                        "uniform_errors": "galerkin-energy",
                        "l2_reference": "graded"},
            seed=0),
        ExperimentConfig(
            name="lshape-semilinear",
            domain={"kind": "lshape"},
            mesh={"type": "uniform", "h_sequence": [1 / 8, 1 / 16, 1 / 32, 1 / 64],
                  "reference_refinements": 1},
            problem={"f": "one", "T": 0.1,
                     "n_steps": {"rule": "fixed", "value": 64}},
            semilinear={"eps": {"rule": "half-max"}, "M": 2, "r0": 2.0,
                        "tol": 1e-9, "max_iter": 50, "n_probes": 8},
            smoothness={"kondratiev": {"m": 1, "p": 2.0, "a": -0.5},
                        "nterm_log2_range": [6, 12],
                        "uniform_errors": "self-l2",
                        "l2_reference": "self"},
            seed=0),
        ExperimentConfig(
            name="slit-pencil",
            domain={"kind": "sector", "theta": 2.0 * math.pi, "radius": 1.0},
            seed=0),
    ]


def preset(name: str) -> ExperimentConfig:
    """Fetch one preset by name."""
    for cfg in presets():
        if cfg.name == name:
            return cfg
    raise ValidationError(
        f"unknown preset {name!r}; available: {[c.name for c in presets()]}")


# ---------------------------------------------------------------------------
# deterministic serialization (17 significant digits everywhere)
# ---------------------------------------------------------------------------

def _fmt17(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise NumericError("non-finite value in output table")
    s = format(x, ".17g")
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def _json_scalar(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return _fmt17(x)
    if isinstance(x, str):
        return json.dumps(x)
    raise ValidationError(f"cannot serialize {type(x).__name__} to JSON")


def _dump_json(obj, lines: list, indent: int) -> None:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            lines.append("{}")
            return
        lines.append("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            lines.append(f"{pad}  {json.dumps(str(k))}: ")
            _dump_json(v, lines, indent + 1)
            lines.append(",\n" if i < len(items) - 1 else "\n")
        lines.append(pad + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            lines.append("[]")
            return
        lines.append("[\n")
        for i, v in enumerate(seq):
            lines.append(pad + "  ")
            _dump_json(v, lines, indent + 1)
            lines.append(",\n" if i < len(seq) - 1 else "\n")
        lines.append(pad + "]")
    else:
        lines.append(_json_scalar(obj))


def dumps_json(obj) -> str:
    """Serialize to JSON with 17-significant-digit floats and stable layout.

    The stdlib encoder formats floats with ``repr``, whose digit count
    depends on the value; pinning the format (and key order to insertion
    order) makes reports byte-stable across reruns.
    """
    lines: list = []
    _dump_json(obj, lines, 0)
    return "".join(lines) + "\n"


def _write_text(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(text)


def _sha256(path: str) -> tuple[str, int]:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest(), os.path.getsize(path)


# ---------------------------------------------------------------------------
# run report
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class RunReport:
    """In-memory result of one experiment run.

    ``manifest`` lists every hashed output file (including ``report.json``)
    as ``name -> {"sha256": ..., "bytes": ...}``.  ``timings`` holds
    wall-clock seconds per stage; they are reported in ``timings.txt`` but
    never hashed, keeping the manifest byte-reproducible.
    """

    config: dict
    out_dir: str
    pencil: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    smoothness: SmoothnessReport | None = None
    smoothness_extra: dict = field(default_factory=dict)
    iteration_log: object = None
    timings: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    error: dict | None = None

    def as_dict(self) -> dict:
        """JSON-ready report body (timings excluded; see class docstring)."""
        sm = None
        if self.smoothness is not None:
            sm = self.smoothness.as_dict()
            sm.update(self.smoothness_extra)
        body = {
            "config": self.config,
            "pencil": self.pencil,
            "results": self.results,
            "smoothness": sm,
            "iterations": None if self.iteration_log is None
            else self.iteration_log.as_dict(),
        }
        if self.error is not None:
            body["error"] = self.error
        return body


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _build_domain(dom: dict) -> PolygonalDomain:
    kind = dom["kind"]
    if kind == "square":
        return make_square()
    if kind == "lshape":
        return make_l_shape()
    return make_sector(float(dom["theta"]), float(dom.get("radius", 1.0)))


def _pencil_stage(domain: PolygonalDomain) -> list:
    """Per-corner pencil summary: spectrum, strip, weight windows."""
    cache: dict = {}
    out = []
    for i, (vertex, angle) in enumerate(zip(domain.vertices, domain.interior_angles)):
        key = round(float(angle), 14)
        if key not in cache:
            closed = laplace_pencil_closed_form(angle, PENCIL_COUNT)
            numeric = pencil_eigenvalues_numeric(angle, PENCIL_COUNT, PENCIL_GRID)
            pos_c = np.sort([ev.real for ev in closed.eigenvalues if ev.real > 0])
            pos_n = np.sort([ev.real for ev in numeric.eigenvalues if ev.real > 0])
            k = min(len(pos_c), len(pos_n))
            rel = float(np.max(np.abs(pos_n[:k] - pos_c[:k]) / pos_c[:k]))
            strips = strip_delta(closed)
            lin = admissible_weights(strips, m=1, nonlinear=False)
            nonlin = admissible_weights(strips, m=1, nonlinear=True)
            cache[key] = {
                "angle": float(angle),
                "eigenvalues_closed_form": [float(v) for v in pos_c],
                "eigenvalues_numeric": [float(v) for v in pos_n],
                "max_rel_error": rel,
                "delta_minus": float(strips.delta_minus),
                "delta_plus": float(strips.delta_plus),
                "weights_linear_m1": lin.as_dict(),
                "weights_nonlinear_m1": nonlin.as_dict(),
                "heat_weight_bound": float(heat_weight_bound(angle)),
            }
        entry = dict(cache[key])
        entry["vertex"] = [float(vertex[0]), float(vertex[1])]
        entry["singular"] = i in domain.singular_vertices
        # keep vertex/singular first for readability
        out.append({"vertex": entry.pop("vertex"),
                    "singular": entry.pop("singular"), **entry})
    return out


def _steps_for(problem_cfg: dict, n: int) -> int:
    rule = problem_cfg["n_steps"]
    if rule["rule"] == "fixed":
        return int(rule["value"])
    T = float(problem_cfg["T"])
    return max(1, int(round(T * n * n / float(rule["factor"]))))


@dataclass(eq=False)
class _SolveStage:
    """Everything the solve stage produced, by family."""

    levels: list                 # [{"h":, "n":, "n_steps":}]
    uniform: list                # terminal FieldSnapshots of the primary family
    graded: list                 # graded companions (may be empty)
    uniform_ref: object = None
    graded_ref: object = None
    semilinear: list = field(default_factory=list)   # per-solve summary rows
    logs: list = field(default_factory=list)         # (family, n, IterationLog)
    finest_log: object = None                        # finest primary-level log


def _solve_stage(config: ExperimentConfig, domain: PolygonalDomain) -> _SolveStage:
    mesh_cfg, prob_cfg = config.mesh, config.problem
    source = _SOURCES[prob_cfg["f"]]
    problem = ParabolicProblem(domain=domain, f=source.f, T=float(prob_cfg["T"]))
    mu = mesh_cfg.get("mu")
    primary_graded = mesh_cfg["type"] == "graded"
    want_companion = (not primary_graded) and mu is not None
    sm = config.smoothness or {}
    need_uniform_ref = sm.get("uniform_errors") in ("galerkin-energy", "self-l2") \
        or sm.get("l2_reference") == "self"
    need_graded_ref = sm.get("l2_reference") == "graded" or (
        want_companion and sm.get("uniform_errors") in ("galerkin-energy", "self-l2"))

    stage = _SolveStage(levels=[], uniform=[], graded=[])

    def solve_one(family, mesh, n_steps):
        if config.semilinear is None:
            return solve_linear(problem, mesh, n_steps).terminal
        resolved = resolve_semilinear_config(
            problem, mesh, n_steps, config._semilinear_base())
        max_eps = smallness_check(resolved).max_eps
        if config.semilinear["eps"]["rule"] == "half-max":
            resolved = replace(resolved, eps=0.5 * max_eps)
        traj, log = solve_semilinear(problem, mesh, n_steps, resolved)
        stage.semilinear.append({
            "family": family, "n": int(mesh.n), "eps": float(resolved.eps),
            "max_eps": float(log.max_eps), "smallness_ok": bool(log.smallness_ok),
            "n_iterations": int(log.n_iterations),
            "converged": bool(log.converged),
            "eta_tilde": float(log.eta_tilde), "op_norm": float(log.op_norm),
        })
        stage.logs.append((family, int(mesh.n), log))
        if family in ("uniform", "graded"):
            stage.finest_log = log
        return traj.terminal

    with warnings.catch_warnings():
        # f(0) != 0 is a deliberate modelling choice in the shipped sources;
        # the reduced t->0 regularity is part of what the rates measure.
        warnings.filterwarnings(
            "ignore", message="right-hand side does not vanish",
            category=RuntimeWarning)
        for h in mesh_cfg["h_sequence"]:
            n = config._level_n(h)
            k = _steps_for(prob_cfg, n)
            stage.levels.append({"h": float(h), "n": int(n), "n_steps": int(k)})
            if primary_graded:
                stage.graded.append(
                    solve_one("graded", mesh_graded(domain, n, float(mu)), k))
            else:
                stage.uniform.append(
                    solve_one("uniform", mesh_uniform(domain, h), k))
                if want_companion:
                    stage.graded.append(
                        solve_one("graded", mesh_graded(domain, n, float(mu)), k))
        rr = mesh_cfg.get("reference_refinements", 1)
        if rr >= 1 and (need_uniform_ref or need_graded_ref):
            n_ref = stage.levels[-1]["n"] * 2 ** rr
            k_ref = _steps_for(prob_cfg, n_ref)
            if need_uniform_ref:
                stage.uniform_ref = solve_one(
                    "reference-uniform", mesh_uniform(domain, 1.0 / n_ref), k_ref)
            if need_graded_ref:
                stage.graded_ref = solve_one(
                    "reference-graded", mesh_graded(domain, n_ref, float(mu)), k_ref)
    return stage


def _nterm_target(stage: _SolveStage):
    """Finest uniform-family field: the N-term and norm diagnostics target."""
    if stage.uniform_ref is not None:
        return stage.uniform_ref
    return stage.uniform[-1]


def _norms_stage(config: ExperimentConfig, stage: _SolveStage) -> dict:
    sm = config.smoothness
    target = _nterm_target(stage)
    kv = sm["kondratiev"]
    params = KondratievParams(m=int(kv["m"]), p=float(kv.get("p", 2.0)),
                              a=float(kv.get("a", 0.0)))
    return {
        "target_n": int(target.mesh.n),
        "kondratiev": {"m": params.m, "p": params.p, "a": params.a,
                       "value": float(kondratiev_norm(target, params))},
        "sobolev_h1": float(sobolev_norm(target, 1)),
    }


def _rates_stage(config: ExperimentConfig, stage: _SolveStage):
    """Uniform/L2/graded error sequences, rate fits, and the adaptivity gap."""
    sm = config.smoothness
    prob_cfg = config.problem
    source = _SOURCES[prob_cfg["f"]]
    T = float(prob_cfg["T"])
    h_arr = np.array([lv["h"] for lv in stage.levels])

    flavor = sm["uniform_errors"]
    if flavor == "galerkin-energy":
        uniform_errs = galerkin_energy_errors(
            stage.uniform, stage.uniform_ref, source.steady_value)
    elif flavor == "exact-l2":
        exact_T = lambda pts: source.exact(T, pts)
        uniform_errs = np.array(
            [l2_error_against(s, exact_T) for s in stage.uniform])
    else:
        uniform_errs = self_convergence_errors(
            stage.uniform, stage.uniform_ref, norm="l2")

    l2ref = sm["l2_reference"]
    if l2ref == "graded":
        l2_errs = cross_family_l2_errors(stage.uniform, stage.graded_ref)
    elif l2ref == "exact":
        exact_T = lambda pts: source.exact(T, pts)
        l2_errs = np.array(
            [l2_error_against(s, exact_T) for s in stage.uniform])
    else:
        l2_errs = self_convergence_errors(
            stage.uniform, stage.uniform_ref, norm="l2")

    graded_errs = None
    if stage.graded and stage.graded_ref is not None:
        if flavor == "galerkin-energy":
            graded_errs = galerkin_energy_errors(
                stage.graded, stage.graded_ref, source.steady_value)
        else:
            graded_errs = self_convergence_errors(
                stage.graded, stage.graded_ref, norm="l2")

    lo, hi = sm["nterm_log2_range"]
    n_values = 2 ** np.arange(lo, hi + 1)
    coeffs = hierarchical_coefficients(_nterm_target(stage))
    sigma = nterm_error_sweep(coeffs, n_values)

    report = estimate_rates(h_arr, uniform_errs, n_values, sigma, d=2, p=2.0)
    l2_rate = fit_loglog(h_arr, l2_errs)[0]
    extra = {"l2_rate": float(l2_rate),
             "gap": float(report.besov_gamma_est - l2_rate)}
    rates = {"uniform_rate": float(report.sobolev_rate), "l2_rate": float(l2_rate)}
    if graded_errs is not None:
        rates["graded_rate"] = float(fit_loglog(h_arr, graded_errs)[0])

    tables = {
        "uniform_errors": {"flavor": flavor,
                           "values": [float(v) for v in uniform_errs]},
        "l2_errors": {"reference": l2ref,
                      "values": [float(v) for v in l2_errs]},
        "graded_errors": None if graded_errs is None
        else [float(v) for v in graded_errs],
        "nterm": {"n_values": [int(v) for v in n_values],
                  "sigma": [float(v) for v in sigma]},
        "rates": rates,
    }
    return report, extra, tables


def _write_stage(config: ExperimentConfig, stage: _SolveStage | None,
                 report: RunReport, run_dir: str) -> None:
    """Write data CSVs, report.json, and manifest.json (in that order)."""
    written: list = []

    def emit_csv(name: str, header: str, rows: list) -> None:
        _write_text(os.path.join(run_dir, name),
                    "\n".join([header] + rows) + "\n")
        written.append(name)

    if stage is not None:
        for snap, lv in zip(stage.uniform, stage.levels):
            name = f"solution_uniform_n{lv['n']:04d}.csv"
            write_mesh_csv(snap.mesh, os.path.join(run_dir, name), snap.values)
            written.append(name)
        for snap, lv in zip(stage.graded, stage.levels):
            name = f"solution_graded_n{lv['n']:04d}.csv"
            write_mesh_csv(snap.mesh, os.path.join(run_dir, name), snap.values)
            written.append(name)
        for ref, tag in ((stage.uniform_ref, "uniform"), (stage.graded_ref, "graded")):
            if ref is not None:
                name = f"reference_{tag}_n{ref.mesh.n:04d}.csv"
                write_mesh_csv(ref.mesh, os.path.join(run_dir, name), ref.values)
                written.append(name)

        res = report.results
        if "uniform_errors" in res:
            ue = res["uniform_errors"]["values"]
            le = res["l2_errors"]["values"]
            ge = res["graded_errors"]
            rows = []
            for i, lv in enumerate(stage.levels):
                g = _fmt17(ge[i]) if ge is not None else ""
                rows.append(",".join([
                    _fmt17(lv["h"]), str(lv["n"]), str(lv["n_steps"]),
                    _fmt17(ue[i]), _fmt17(le[i]), g]))
            emit_csv("errors.csv", "h,n,n_steps,uniform_error,l2_error,graded_error",
                     rows)
            nt = res["nterm"]
            emit_csv("nterm.csv", "N,sigma_N",
                     [f"{n},{_fmt17(s)}" for n, s in zip(nt["n_values"], nt["sigma"])])

        for family, n, log in stage.logs:
            d = log.as_dict()
            rows = [f"{i},{_fmt17(r)},{_fmt17(dist)},{int(b)}"
                    for i, (r, dist, b) in enumerate(
                        zip(d["residuals"], d["distances_to_linear"], d["in_ball"]))]
            emit_csv(f"iterations_{family}_n{n:04d}.csv",
                     "iteration,residual,distance_to_linear,in_ball", rows)

    body = report.as_dict()
    body["manifest"] = {
        name: dict(zip(("sha256", "bytes"), _sha256(os.path.join(run_dir, name))))
        for name in sorted(written)}
    _write_text(os.path.join(run_dir, "report.json"), dumps_json(body))

    manifest = {
        name: dict(zip(("sha256", "bytes"), _sha256(os.path.join(run_dir, name))))
        for name in sorted(written + ["report.json"])}
    _write_text(os.path.join(run_dir, "manifest.json"),
                dumps_json({"files": manifest}))
    report.manifest = manifest


def resolve_output_root(explicit: str | None = None) -> str:
    """Output root: explicit argument, then $CORNERPDE_OUT, then ./cornerpde_out."""
    return explicit or os.environ.get("CORNERPDE_OUT") or "cornerpde_out"


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> RunReport:
    """Validate and run a configured experiment; write its output directory.

    Files land in ``<root>/<config.name>/`` where the root is ``out_dir``,
    ``config.output_dir``, ``$CORNERPDE_OUT``, or ``./cornerpde_out`` — the
    first one set.  Stages run in order (pencil, solve, norms, rates,
    write); a failing stage still writes ``report.json`` with an ``error``
    block plus a manifest of the files written so far, then re-raises for
    the caller to map onto an exit code.

    Returns the in-memory :class:`RunReport`, which additionally carries
    per-stage wall-clock timings (written to ``timings.txt``, unhashed).
    """
    config.validate()
    root = resolve_output_root(out_dir or config.output_dir)
    run_dir = os.path.join(root, config.name)
    os.makedirs(run_dir, exist_ok=True)

    report = RunReport(config=config.to_dict(), out_dir=run_dir)
    domain = _build_domain(config.domain)
    stage_data: _SolveStage | None = None

    def timed(name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except Exception as exc:
            report.error = {"stage": name, "type": type(exc).__name__,
                            "message": str(exc)}
            with suppress(Exception):
                _write_stage(config, stage_data, report, run_dir)
            raise
        finally:
            report.timings[name] = time.perf_counter() - t0

    report.pencil = timed("pencil", lambda: _pencil_stage(domain))

    if config.mesh is not None and config.problem is not None:
        stage_data = timed("solve", lambda: _solve_stage(config, domain))
        report.results["levels"] = stage_data.levels
        if stage_data.semilinear:
            report.results["semilinear"] = stage_data.semilinear
            report.iteration_log = stage_data.finest_log

        if config.smoothness is not None:
            report.results["norms"] = timed(
                "norms", lambda: _norms_stage(config, stage_data))
            sm_report, extra, tables = timed(
                "rates", lambda: _rates_stage(config, stage_data))
            report.smoothness = sm_report
            report.smoothness_extra = extra
            report.results.update(tables)

    timed("write", lambda: _write_stage(config, stage_data, report, run_dir))
    _write_text(os.path.join(run_dir, "timings.txt"),
                "".join(f"{k} {v:.6f}\n" for k, v in report.timings.items()))
    return report
