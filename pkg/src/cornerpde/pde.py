"""Parabolic solves on corner domains: implicit Euler in time, P1 in space.

The linear problem is ``u_t - div(A grad u) = f`` with zero initial and
Dirichlet data; time is discretized first (Rothe), so each step solves

    (M/dt + K) u^{n+1} = (M/dt) u^n + M f^{n+1}

with one sparse factorization shared across all steps.  The semilinear
problem adds ``eps * u^M`` and is solved by the outer fixed-point iteration

    u_{j+1} = Lsolve(f - eps * u_j^M),   u_0 = linear solution,

over whole trajectories.  Iterates are monitored against the ball of radius
``R = (r0 - 1) * eta_tilde * op_norm`` around the linear solution, where
``eta_tilde`` bounds the data and ``op_norm`` estimates the solution
operator; the smallness check

    max_eps = (r0 - 1) / (r0^M * eta_tilde^(M-1) * op_norm^M)

separates the regime where contraction is expected from the one where the
solver merely reports what happened.

Norms are the computable surrogates used throughout: trajectories carry the
discrete L2(0,T; H1) norm ``sqrt(sum_n dt * u_n (K+M) u_n)``, data the
per-level maximum of the L2 norm ``max_n sqrt(f_n M f_n)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .domain import FieldSnapshot, Mesh
from .errors import NonConvergenceError, NumericError, ValidationError


@dataclass(eq=False)
class ParabolicProblem:
    """Divergence-form parabolic problem with zero initial/Dirichlet data.

    Parameters
    ----------
    domain : PolygonalDomain
    f : callable or ndarray
        Right-hand side: either ``f(t, pts)`` mapping a time and an
        ``(n, 2)`` point array to ``(n,)`` values, or a precomputed array of
        nodal samples with one row per time level.
    T : float
        Time horizon.
    diffusion : None, (2, 2) array, or callable
        Constant SPD coefficient matrix (default identity), or a callable
        ``pts -> (n, 2, 2)`` evaluated at element centroids.  Coefficients
        are time-independent by design.

    Compatibility ``f(0, .) = 0`` is advisory: violating it degrades the
    attainable time regularity, so the solver warns rather than refuses.
    """

    domain: object
    f: object
    T: float
    diffusion: object = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError(f"horizon T must be positive, got {self.T}")
        if self.diffusion is not None and not callable(self.diffusion):
            d = np.asarray(self.diffusion, dtype=float)
            if d.shape != (2, 2):
                raise ValidationError("constant diffusion must be a 2x2 matrix")
            if not np.allclose(d, d.T, rtol=0, atol=1e-12):
                raise ValidationError("diffusion matrix must be symmetric")
            tr, det = d[0, 0] + d[1, 1], d[0, 0] * d[1, 1] - d[0, 1] * d[1, 0]
            lam_min = 0.5 * (tr - math.sqrt(max(tr * tr - 4.0 * det, 0.0)))
            if not lam_min > 0:
                raise ValidationError("diffusion matrix must be positive definite")
            self.diffusion = d


@dataclass(eq=False)
class Operators:
    """Assembled P1 operators on the full node set."""

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    mass_lumped: np.ndarray

    @property
    def h1(self) -> sp.csr_matrix:
        """The full H1 Gram matrix K + M."""
        return (self.stiffness + self.mass).tocsr()


@dataclass(eq=False)
class Trajectory:
    """Nodal trajectory on a uniform time grid; level 0 is identically zero."""

    mesh: Mesh
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_levels(self) -> int:
        return self.values.shape[0]

    def snapshot(self, level: int) -> FieldSnapshot:
        return FieldSnapshot(self.mesh, self.values[level].copy())

    @property
    def terminal(self) -> FieldSnapshot:
        return self.snapshot(self.n_levels - 1)


def assemble(mesh: Mesh, problem: ParabolicProblem | None = None) -> Operators:
    """Assemble stiffness and mass matrices on the full node set.

    The stiffness form is ``integral (A grad u) . grad v`` with the
    problem's diffusion matrix (identity when ``problem`` is None); the
    consistent mass matrix comes with its lumped (row-sum) diagonal.
    Dirichlet elimination happens in the solvers, so boundary rows are
    assembled like any others and ``K`` is exactly symmetric.
    """
    tri = mesh.triangles
    verts = mesh.nodes[tri]
    e1 = verts[:, 1, :] - verts[:, 0, :]
    e2 = verts[:, 2, :] - verts[:, 0, :]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(area2 <= 0.0):
        raise NumericError("assembly found a degenerate or inverted triangle")
    area = 0.5 * area2

    # Barycentric gradients: grad lambda_i = rot(opposite edge) / (2 area).
    grads = np.empty((tri.shape[0], 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = verts[:, j, 1] - verts[:, k, 1]
        grads[:, i, 1] = verts[:, k, 0] - verts[:, j, 0]
    grads /= area2[:, None, None]

    diff = problem.diffusion if problem is not None else None
    if diff is None:
        dg = grads
    elif callable(diff):
        centroids = verts.mean(axis=1)
        d = np.asarray(diff(centroids), dtype=float)
        if d.shape != (tri.shape[0], 2, 2):
            raise ValidationError("diffusion callable must return (n, 2, 2) at centroids")
        if not np.allclose(d, np.transpose(d, (0, 2, 1)), rtol=0, atol=1e-12):
            raise ValidationError("diffusion field must be symmetric")
        tr = d[:, 0, 0] + d[:, 1, 1]
        det = d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]
        lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0)))
        if not np.all(lam_min > 0):
            raise ValidationError("diffusion field must be uniformly elliptic")
        dg = np.einsum("txy,tiy->tix", d, grads)
    else:
        dg = np.einsum("xy,tiy->tix", np.asarray(diff), grads)

    k_loc = np.einsum("tix,tjx->tij", dg, grads) * area[:, None, None]
    m_loc = (np.ones((3, 3)) + np.eye(3)) / 12.0
    m_loc = m_loc[None, :, :] * area[:, None, None]

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    stiff = sp.coo_matrix((k_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mass = sp.coo_matrix((m_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    lumped = np.asarray(mass.sum(axis=1)).ravel()
    return Operators(stiffness=stiff, mass=mass, mass_lumped=lumped)


def _f_levels(problem: ParabolicProblem, mesh: Mesh, times: np.ndarray) -> np.ndarray:
    if callable(problem.f):
        out = np.empty((times.size, mesh.n_nodes))
        for i, t in enumerate(times):
            out[i] = np.asarray(problem.f(float(t), mesh.nodes), dtype=float)
        return out
    arr = np.asarray(problem.f, dtype=float)
    if arr.shape != (times.size, mesh.n_nodes):
        raise ValidationError(
            f"nodal right-hand side must have shape {(times.size, mesh.n_nodes)}, "
            f"got {arr.shape}")
    return arr


def _warn_incompatible_data(f0: np.ndarray) -> None:
    scale = float(np.max(np.abs(f0))) if f0.size else 0.0
    if scale > 1e-14:
        warnings.warn(
            "right-hand side does not vanish at t = 0; the zero-initial-data "
            "compatibility assumption is violated and time regularity near "
            "t = 0 is reduced accordingly",
            RuntimeWarning, stacklevel=3)


class _RotheStepper:
    """Prefactored implicit-Euler stepper on the Dirichlet-eliminated space."""

    def __init__(self, ops: Operators, mesh: Mesh, dt: float):
        self.interior = np.flatnonzero(mesh.interior_mask())
        self.n_nodes = mesh.n_nodes
        k_ii = ops.stiffness[self.interior][:, self.interior]
        m_ii = ops.mass[self.interior][:, self.interior]
        self.m_over_dt = (m_ii / dt).tocsr()
        self.mass = ops.mass
        try:
            self.lu = splu((self.m_over_dt + k_ii).tocsc())
        except RuntimeError as exc:
            raise NumericError(f"time-step system factorization failed: {exc}") from exc

    def march(self, g_levels: np.ndarray) -> np.ndarray:
        """Run the implicit-Euler sweep for nodal source levels ``g``."""
        n_levels = g_levels.shape[0]
        out = np.zeros((n_levels, self.n_nodes))
        u = np.zeros(self.interior.size)
        for n in range(1, n_levels):
            rhs = (self.mass @ g_levels[n])[self.interior]
            u = self.lu.solve(self.m_over_dt @ u + rhs)
            if not np.all(np.isfinite(u)):
                raise NumericError(f"time step {n} produced non-finite values")
            out[n, self.interior] = u
        return out


def solve_linear(problem: ParabolicProblem, mesh: Mesh, n_steps: int) -> Trajectory:
    """Rothe solve of the linear problem with zero initial/Dirichlet data.

    Parameters
    ----------
    n_steps : int
        Number of implicit-Euler steps; ``dt = T / n_steps``.
    """
    if n_steps < 1:
        raise ValidationError(f"n_steps must be >= 1, got {n_steps}")
    ops = assemble(mesh, problem)
    times = np.linspace(0.0, problem.T, n_steps + 1)
    f_levels = _f_levels(problem, mesh, times)
    _warn_incompatible_data(f_levels[0])
    stepper = _RotheStepper(ops, mesh, problem.T / n_steps)
    values = stepper.march(f_levels)
    return Trajectory(mesh=mesh, times=times, values=values)


def solution_norm(traj: Trajectory, ops: Operators) -> float:
    """Discrete L2(0,T; H1) norm ``sqrt(sum_{n>=1} dt * u_n (K+M) u_n)``."""
    return _trajectory_norm(traj.values, traj.dt, ops.h1)


def _trajectory_norm(values: np.ndarray, dt: float, gram: sp.csr_matrix) -> float:
    x = values[1:]
    return math.sqrt(dt * float(np.sum(x * (gram @ x.T).T)))


def data_norm(f_levels: np.ndarray, ops: Operators) -> float:
    """Per-level data bound ``max_n sqrt(f_n M f_n)``."""
    prods = f_levels * (ops.mass @ f_levels.T).T
    return math.sqrt(float(np.max(np.sum(prods, axis=1))))


def estimate_operator_norm(problem: ParabolicProblem, mesh: Mesh, n_steps: int,
                           n_probes: int = 8, seed: int = 0) -> float:
    """Probe-based lower estimate of the solution-operator norm.

    The estimate is ``max_i |u_{f_i}|_sol / |f_i|_data`` over time-constant
    probe sources: the constant-one field first (near-extremal for
    heat-type operators), then seeded Gaussian nodal fields.  The probe
    sequence is prefix-stable in the seed, so enlarging ``n_probes`` never
    decreases the estimate.
    """
    if n_probes < 1:
        raise ValidationError(f"n_probes must be >= 1, got {n_probes}")
    if n_steps < 1:
        raise ValidationError(f"n_steps must be >= 1, got {n_steps}")
    ops = assemble(mesh, problem)
    dt = problem.T / n_steps
    stepper = _RotheStepper(ops, mesh, dt)
    gram = ops.h1
    rng = np.random.default_rng(seed)
    best = 0.0
    for i in range(n_probes):
        probe = np.ones(mesh.n_nodes) if i == 0 else rng.standard_normal(mesh.n_nodes)
        levels = np.broadcast_to(probe, (n_steps + 1, mesh.n_nodes))
        values = stepper.march(levels)
        eta = math.sqrt(float(probe @ (ops.mass @ probe)))
        best = max(best, _trajectory_norm(values, dt, gram) / eta)
    return best


def operator_norm_from_operators(stiffness, mass, T: float, n_steps: int,
                                 n_probes: int = 8, seed: int = 0) -> float:
    """Operator-norm probe for explicitly given (small) operators.

    Same probing scheme as :func:`estimate_operator_norm`, but every degree
    of freedom is treated as interior; useful for scalar or toy systems
    (e.g. the 1-dof surrogate ``u' + u = f``).
    """
    k = sp.csr_matrix(np.atleast_2d(np.asarray(stiffness, dtype=float)))
    m = sp.csr_matrix(np.atleast_2d(np.asarray(mass, dtype=float)))
    n = k.shape[0]
    dt = T / n_steps
    lu = splu((m / dt + k).tocsc())
    m_over_dt = (m / dt).tocsr()
    gram = (k + m).tocsr()
    rng = np.random.default_rng(seed)
    best = 0.0
    for i in range(n_probes):
        probe = np.ones(n) if i == 0 else rng.standard_normal(n)
        u = np.zeros(n)
        acc = 0.0
        for _ in range(n_steps):
            u = lu.solve(m_over_dt @ u + m @ probe)
            acc += dt * float(u @ (gram @ u))
        eta = math.sqrt(float(probe @ (m @ probe)))
        best = max(best, math.sqrt(acc) / eta)
    return best


@dataclass(frozen=True)
class SemilinearConfig:
    """Parameters of the semilinear solve and its fixed-point monitoring.

    ``eta_tilde`` and ``op_norm`` may be left unset; the solver fills them
    from the discrete data and the probe estimate before checking the
    smallness condition.
    """

    eps: float
    M: int = 2
    r0: float = 2.0
    eta_tilde: float | None = None
    op_norm: float | None = None
    tol: float = 1e-9
    max_iter: int = 50
    n_probes: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.eps < 0:
            raise ValidationError(f"eps must be >= 0, got {self.eps}")
        if int(self.M) != self.M or self.M < 1:
            raise ValidationError(f"power M must be an integer >= 1, got {self.M}")
        if not self.r0 > 1.0:
            raise ValidationError(f"ball factor r0 must exceed 1, got {self.r0}")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        for name in ("eta_tilde", "op_norm"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be positive when given")

    @property
    def radius(self) -> float:
        """Ball radius ``R = (r0 - 1) * eta_tilde * op_norm``."""
        if self.eta_tilde is None or self.op_norm is None:
            raise ValidationError("radius needs eta_tilde and op_norm resolved")
        return (self.r0 - 1.0) * self.eta_tilde * self.op_norm


@dataclass(frozen=True)
class SmallnessResult:
    ok: bool
    max_eps: float

    def as_dict(self) -> dict:
        return {"ok": self.ok, "max_eps": self.max_eps}


def smallness_check(cfg: SemilinearConfig) -> SmallnessResult:
    """Evaluate the fixed-point smallness condition for the given config.

    ``max_eps = (r0-1) / (r0^M * eta_tilde^(M-1) * op_norm^M)`` is the
    largest nonlinearity strength for which the contraction regime is
    guaranteed; ``ok`` reports ``eps <= max_eps``.
    """
    if cfg.eta_tilde is None or cfg.op_norm is None:
        raise ValidationError(
            "smallness_check needs eta_tilde and op_norm; either set them or "
            "let solve_semilinear resolve them from the data")
    max_eps = (cfg.r0 - 1.0) / (
        cfg.r0 ** cfg.M * cfg.eta_tilde ** (cfg.M - 1) * cfg.op_norm ** cfg.M)
    return SmallnessResult(ok=bool(cfg.eps <= max_eps), max_eps=max_eps)


@dataclass(eq=False)
class IterationLog:
    """Per-iterate record of the fixed-point solve."""

    residuals: list
    distances: list
    in_ball: list
    converged: bool
    eps: float
    max_eps: float
    smallness_ok: bool
    eta_tilde: float
    op_norm: float
    radius: float
    tol: float

    @property
    def n_iterations(self) -> int:
        return len(self.residuals)

    def contraction_factors(self) -> np.ndarray:
        r = np.asarray(self.residuals)
        if r.size < 2:
            return np.empty(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]

    def as_dict(self) -> dict:
        return {
            "residuals": list(map(float, self.residuals)),
            "distances_to_linear": list(map(float, self.distances)),
            "in_ball": list(map(bool, self.in_ball)),
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "eps": self.eps,
            "max_eps": self.max_eps,
            "smallness_ok": self.smallness_ok,
            "eta_tilde": self.eta_tilde,
            "op_norm": self.op_norm,
            "radius": self.radius,
            "tol": self.tol,
        }


def resolve_semilinear_config(problem: ParabolicProblem, mesh: Mesh,
                              n_steps: int, cfg: SemilinearConfig) -> SemilinearConfig:
    """Fill in ``eta_tilde`` and ``op_norm`` where the config leaves them None.

    The returned config is ready for :func:`smallness_check`, so callers can
    inspect ``max_eps`` for this discretization before choosing ``eps``.
    """
    if cfg.eta_tilde is not None and cfg.op_norm is not None:
        return cfg
    ops = assemble(mesh, problem)
    times = np.linspace(0.0, problem.T, n_steps + 1)
    eta = cfg.eta_tilde if cfg.eta_tilde is not None else data_norm(
        _f_levels(problem, mesh, times), ops)
    op = cfg.op_norm if cfg.op_norm is not None else estimate_operator_norm(
        problem, mesh, n_steps, n_probes=cfg.n_probes, seed=cfg.seed)
    return replace(cfg, eta_tilde=eta, op_norm=op)


def solve_semilinear(problem: ParabolicProblem, mesh: Mesh, n_steps: int,
                     cfg: SemilinearConfig):
    """Fixed-point solve of the semilinear problem ``u_t + Lu + eps u^M = f``.

    Outer Picard iteration over whole trajectories: each iterate solves the
    linear problem with source ``f - eps * u_prev^M`` (nodal power), starting
    from the plain linear solution.  The log records, per iterate, the
    successive-difference residual, the distance to the linear solution, and
    whether the iterate stayed inside the ball of radius
    ``R = (r0-1) * eta_tilde * op_norm``.

    A violated smallness condition only warns -- the run proceeds and the
    log shows what happened.  Residual growth over five consecutive
    iterates raises :class:`NonConvergenceError` carrying the log.

    Returns
    -------
    (Trajectory, IterationLog)
    """
    if n_steps < 1:
        raise ValidationError(f"n_steps must be >= 1, got {n_steps}")
    ops = assemble(mesh, problem)
    dt = problem.T / n_steps
    times = np.linspace(0.0, problem.T, n_steps + 1)
    f_levels = _f_levels(problem, mesh, times)
    _warn_incompatible_data(f_levels[0])

    resolved = resolve_semilinear_config(problem, mesh, n_steps, cfg)
    small = smallness_check(resolved)
    if not small.ok:
        warnings.warn(
            f"smallness condition violated: eps = {cfg.eps:g} exceeds "
            f"max_eps = {small.max_eps:g}; the fixed-point regime is not "
            "guaranteed and the iteration may not converge",
            RuntimeWarning, stacklevel=2)
    radius = resolved.radius

    stepper = _RotheStepper(ops, mesh, dt)
    gram = ops.h1
    u_lin = stepper.march(f_levels)

    log = IterationLog(
        residuals=[], distances=[], in_ball=[], converged=False,
        eps=cfg.eps, max_eps=small.max_eps, smallness_ok=small.ok,
        eta_tilde=resolved.eta_tilde, op_norm=resolved.op_norm,
        radius=radius, tol=cfg.tol)

    if cfg.eps == 0.0:
        log.residuals.append(0.0)
        log.distances.append(0.0)
        log.in_ball.append(True)
        log.converged = True
        return Trajectory(mesh=mesh, times=times, values=u_lin), log

    prev = u_lin
    growth = 0
    power = int(cfg.M)
    for _ in range(cfg.max_iter):
        g_levels = f_levels - cfg.eps * prev ** power
        new = stepper.march(g_levels)
        residual = _trajectory_norm(new - prev, dt, gram)
        distance = _trajectory_norm(new - u_lin, dt, gram)
        if log.residuals and residual > log.residuals[-1]:
            growth += 1
        else:
            growth = 0
        log.residuals.append(residual)
        log.distances.append(distance)
        log.in_ball.append(bool(distance <= radius * (1.0 + 1e-12)))
        if residual <= cfg.tol:
            log.converged = True
            return Trajectory(mesh=mesh, times=times, values=new), log
        if growth >= 5 or not math.isfinite(residual):
            raise NonConvergenceError(
                f"fixed-point iteration diverging after {log.n_iterations} "
                f"iterates (residual {residual:g})", log)
        prev = new
    return Trajectory(mesh=mesh, times=times, values=prev), log
