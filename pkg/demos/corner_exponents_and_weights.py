#!/usr/bin/env python3
"""
Corner exponents and admissible weight windows across opening angles
====================================================================

The leading singular exponent of the Laplace operator at a corner of
opening angle theta is pi/theta: solutions behave like r^(pi/theta)
near the vertex no matter how smooth the data are.  Once theta passes
pi (a re-entrant corner) that exponent drops below 1, the solution
falls out of H^2, and uniform-mesh finite elements lose their textbook
convergence rate.

This script walks through the machinery that quantifies the loss:

  1. the pencil spectrum, closed form against the finite-difference
     route on the angular cross-section (they must agree to ~1e-6);
  2. the eigenvalue-free strip widths delta+/- around the energy line,
     which gate how far the weighted-space theory reaches;
  3. the admissible Kondratiev weight windows at first order, with and
     without the nonlinear floor a >= -1/2;
  4. the heat-equation weight bound, down to the extremal slit (2*pi),
     where exactly -1/2 survives.

Everything prints as a table over a sweep of angles; no files are
written.  Runtime is a few seconds, dominated by the 2000-point
eigenvalue solves.
"""

import math

import numpy as np

import cornerpde as cp

ANGLES = [
    ("pi/2   (convex box corner)", math.pi / 2),
    ("3pi/4", 3 * math.pi / 4),
    ("pi     (straight edge)", math.pi),
    ("5pi/4", 5 * math.pi / 4),
    ("3pi/2  (L-shape)", 1.5 * math.pi),
    ("7pi/4", 7 * math.pi / 4),
    ("2pi    (slit)", 2 * math.pi),
]


def window_text(w) -> str:
    if w.empty:
        return "empty"
    lo = "[" if w.lower_inclusive else "("
    hi = "]" if w.upper_inclusive else ")"
    return f"{lo}{w.lower:+.4f}, {w.upper:+.4f}{hi}"


def main() -> None:
    print(__doc__)
    print("=" * 78)
    print(f"{'angle':<28}{'lambda_1':>9}{'numeric':>12}{'rel err':>10}"
          f"{'delta+/-':>10}")
    print("-" * 78)
    for label, theta in ANGLES:
        closed = cp.laplace_pencil_closed_form(theta, 3)
        numeric = cp.pencil_eigenvalues_numeric(theta, 3, 2000)
        lam = math.pi / theta
        pos = np.sort([ev.real for ev in numeric.eigenvalues if ev.real > 0])
        rel = abs(pos[0] - lam) / lam
        strips = cp.strip_delta(closed)
        print(f"{label:<28}{lam:>9.5f}{pos[0]:>12.7f}{rel:>10.1e}"
              f"{strips.delta_plus:>10.5f}")
    print()
    print("lambda_1 < 1 past theta = pi: the r^lambda_1 mode caps uniform-mesh")
    print("energy rates at lambda_1 instead of 1.")
    print()

    print("=" * 78)
    print("Admissible first-order weight windows and the heat bound")
    print("-" * 78)
    print(f"{'angle':<28}{'linear':>20}{'nonlinear':>20}{'heat bound':>12}")
    print("-" * 78)
    for label, theta in ANGLES:
        strips = cp.strip_delta(cp.laplace_pencil_closed_form(theta, 3))
        lin = cp.admissible_weights(strips, m=1, nonlinear=False)
        non = cp.admissible_weights(strips, m=1, nonlinear=True)
        bound = cp.heat_weight_bound(theta)
        print(f"{label:<28}{window_text(lin):>20}{window_text(non):>20}"
              f"{bound:>12.4f}")
    print()
    print("The linear window shrinks as the corner opens; the nonlinear floor")
    print("a >= -1/2 empties the window exactly at the slit, where the heat")
    print("bound still returns -1/2: the extremal case is admissible for the")
    print("heat equation but not for the power nonlinearity.")


if __name__ == "__main__":
    main()
