"""Corner pencil spectra, eigenvalue-free strips, and admissible weights.

At a corner of opening angle ``theta`` the model second-order operator
induces a quadratic eigenvalue problem on the angular cross-section
``(-theta/2, theta/2)``: find ``lambda`` with ``-U'' = lambda^2 U`` and
Dirichlet ends.  Its eigenvalues ``+-k*pi/theta`` dictate the strength
``r^lambda`` of corner singularities.  Around the energy line
``Re lambda = m - 1`` the maximal eigenvalue-free strip widths
``delta_-``, ``delta_+`` determine which weight exponents ``a`` the
regularity theory admits:

    a in (-delta_- - m, delta_+ - m)  intersect  [-m, m],

with the additional constraint ``a >= -1/2`` in the semilinear setting.
The numeric route discretizes the quadratic pencil by central finite
differences, linearizes it in companion form, and cross-checks against the
closed form -- the two routes are kept deliberately independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigs

from .errors import NumericError, ValidationError

_TWO_PI = 2.0 * math.pi
#: Eigenvalues closer than this to the energy line make the pencil degenerate.
ENERGY_LINE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PencilSpectrum:
    """Eigenvalues of a corner pencil, sorted by real part.

    Construction fails if any eigenvalue sits on the energy line
    ``Re lambda = m - 1``; the strip widths would collapse to zero and the
    regularity statements become vacuous there.
    """

    theta: float
    order_m: int
    eigenvalues: np.ndarray
    method: str

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=complex)
        ev = ev[np.argsort(ev.real, kind="stable")]
        object.__setattr__(self, "eigenvalues", ev)
        ev.setflags(write=False)
        line = self.order_m - 1.0
        if ev.size and np.min(np.abs(ev.real - line)) <= ENERGY_LINE_TOL:
            raise NumericError(
                f"degenerate pencil: eigenvalue on the energy line Re = {line}")

    @property
    def energy_line(self) -> float:
        return self.order_m - 1.0


@dataclass(frozen=True)
class StripWidths:
    """Maximal eigenvalue-free strip ``(m-1-delta_minus, m-1+delta_plus)``.

    A side with no eigenvalues at all reports ``math.inf``.
    """

    delta_minus: float
    delta_plus: float

    def __post_init__(self):
        if not (self.delta_minus > 0.0 and self.delta_plus > 0.0):
            raise ValidationError("strip widths must be positive")


@dataclass(frozen=True)
class WeightInterval:
    """Admissible weight exponents ``a``, with endpoint openness recorded.

    ``upper_inclusive`` can only be set when the ``a <= m`` cap binds
    strictly inside the open pencil bound; every Laplace example here has an
    exclusive upper endpoint.
    """

    lower: float
    upper: float
    lower_inclusive: bool
    upper_inclusive: bool
    nonlinear_constraint_applied: bool
    empty: bool = False

    def contains(self, a: float) -> bool:
        if self.empty:
            return False
        lo_ok = a >= self.lower if self.lower_inclusive else a > self.lower
        hi_ok = a <= self.upper if self.upper_inclusive else a < self.upper
        return lo_ok and hi_ok

    def as_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "lower_inclusive": self.lower_inclusive,
            "upper_inclusive": self.upper_inclusive,
            "nonlinear_constraint_applied": self.nonlinear_constraint_applied,
            "empty": self.empty,
        }


def laplace_pencil_closed_form(theta: float, count: int) -> PencilSpectrum:
    """Closed-form Dirichlet pencil spectrum ``{+-k*pi/theta, k = 1..count}``."""
    _check_theta(theta)
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    pos = np.array([k * math.pi / theta for k in range(1, count + 1)])
    ev = np.concatenate([-pos[::-1], pos]).astype(complex)
    return PencilSpectrum(theta=theta, order_m=1, eigenvalues=ev, method="closed_form")


def pencil_eigenvalues_numeric(theta: float, count: int, n_grid: int) -> PencilSpectrum:
    """Pencil spectrum from a finite-difference discretization.

    The angular problem ``-U'' = lambda^2 U`` on ``(-theta/2, theta/2)``
    with Dirichlet ends is discretized by second-order central differences
    on ``n_grid`` interior points, giving the quadratic matrix pencil
    ``A - lambda^2 I``.  Companion linearization doubles the system:

        [[0, I], [-A, 0]] z = lambda [[I, 0], [0, -I]] z .

    The right-hand block matrix is its own exact inverse, so the shifted
    eigensolve runs on its product with the left block; an Arnoldi solver in
    shift-invert mode around 0 extracts the ``count`` eigenvalue pairs
    nearest the energy line, with a fixed start vector for determinism.

    Parameters
    ----------
    theta : float
        Corner opening angle in (0, 2*pi].
    count : int
        Number of positive eigenvalues to return (mirrored negatively).
    n_grid : int
        Interior grid size, at least ``8 * count``.
    """
    _check_theta(theta)
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    if n_grid < 8 * count:
        raise ValidationError(
            f"n_grid must be at least 8*count = {8 * count}, got {n_grid}")

    h = theta / (n_grid + 1)
    main = np.full(n_grid, 2.0 / h ** 2)
    off = np.full(n_grid - 1, -1.0 / h ** 2)
    a = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    eye = sp.identity(n_grid, format="csr")
    zero = sp.csr_matrix((n_grid, n_grid))
    # B^{-1} C with C = [[0, I], [-A, 0]] and B = diag(I, -I):
    op = sp.bmat([[zero, eye], [a, zero]], format="csc")

    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(2 * n_grid)
    try:
        vals = eigs(op, k=2 * count, sigma=0.0, which="LM", v0=v0,
                    return_eigenvectors=False, tol=0)
    except (ArpackError, ArpackNoConvergence) as exc:  # pragma: no cover
        raise NumericError(f"pencil eigensolver failed: {exc}") from exc

    re = np.sort(vals.real, kind="stable")
    if np.min(np.abs(re)) <= ENERGY_LINE_TOL:
        raise NumericError("degenerate pencil: eigenvalue on the energy line Re = 0")
    pos = np.sort(re[re > 0.0], kind="stable")[:count]
    if pos.size < count:
        raise NumericError(
            f"eigensolver returned only {pos.size} positive eigenvalues of {count}")
    ev = np.concatenate([-pos[::-1], pos]).astype(complex)
    return PencilSpectrum(theta=theta, order_m=1, eigenvalues=ev, method="numeric")


def strip_delta(spectrum: PencilSpectrum) -> StripWidths:
    """Maximal eigenvalue-free strip widths around the energy line.

    ``delta_minus`` is the distance from the line down to the nearest real
    part below it, ``delta_plus`` up to the nearest above; an empty side is
    reported as the ``inf`` sentinel (unbounded strip).
    """
    line = spectrum.energy_line
    re = spectrum.eigenvalues.real
    if re.size and np.min(np.abs(re - line)) <= ENERGY_LINE_TOL:
        raise NumericError(
            f"degenerate pencil: eigenvalue on the energy line Re = {line}")
    below = re[re < line]
    above = re[re > line]
    d_minus = line - float(np.max(below)) if below.size else math.inf
    d_plus = float(np.min(above)) - line if above.size else math.inf
    return StripWidths(delta_minus=d_minus, delta_plus=d_plus)


def admissible_weights(strips: StripWidths, m: int, nonlinear: bool) -> WeightInterval:
    """Admissible Kondratiev weight exponents for the given strip widths.

    The open pencil window ``(-delta_- - m, delta_+ - m)`` is intersected
    with the closed box ``[-m, m]``, and additionally with ``[-1/2, inf)``
    when ``nonlinear`` is set.  Empty intersections are returned explicitly
    marked rather than raised.
    """
    if m < 1:
        raise ValidationError(f"operator half-order m must be >= 1, got {m}")
    open_lo = -strips.delta_minus - m
    open_hi = strips.delta_plus - m
    closed_lo = max(-float(m), -0.5) if nonlinear else -float(m)
    closed_hi = float(m)

    if closed_lo > open_lo:
        lower, lower_inclusive = closed_lo, True
    else:
        lower, lower_inclusive = open_lo, False
    if closed_hi < open_hi:
        upper, upper_inclusive = closed_hi, True
    else:
        upper, upper_inclusive = open_hi, False

    empty = lower > upper or (lower == upper and not (lower_inclusive and upper_inclusive))
    return WeightInterval(
        lower=lower,
        upper=upper,
        lower_inclusive=lower_inclusive,
        upper_inclusive=upper_inclusive,
        nonlinear_constraint_applied=bool(nonlinear),
        empty=bool(empty),
    )


def heat_weight_bound(theta: float) -> float:
    """Upper bound ``min(1, pi/theta - 1)`` for the heat-equation weight."""
    _check_theta(theta)
    return min(1.0, math.pi / theta - 1.0)


def _check_theta(theta: float) -> None:
    if not (0.0 < theta <= _TWO_PI + 1e-15):
        raise ValidationError(f"corner angle must lie in (0, 2*pi], got {theta}")
