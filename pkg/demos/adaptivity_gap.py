#!/usr/bin/env python3
"""
The adaptivity gap: best-N-term decay beats uniform refinement at corners
=========================================================================

Uniform refinement can only exploit Sobolev smoothness, and the L-shape
corner caps that at rate ~2/3 in the energy norm (~4/3 in L2).  Adaptive
approximation -- keep the N largest hierarchical-basis coefficients,
wherever they live -- is governed instead by smoothness in the Besov
adaptivity scale, and corner singularities barely register there.  The
measurable consequence:

    best-N-term L2 slope  (in mesh-size units)
        >>  uniform-refinement L2 slope        near a re-entrant corner,

while on a smooth problem the two agree.  That surplus is the case for
adaptive solvers, quantified.

Protocol:

  - L-shape, f = 1, T = 1, 128 shared time steps.  Uniform solves at
    n = 16..128 are compared in L2 against a graded-mesh (mu = 2/3,
    n = 256) reference interpolated to each uniform mesh, giving the
    uniform slope in h.  The finest uniform snapshot's hierarchical
    surpluses give the best-N-term curve sigma_N ~ N^(-s); gamma_est =
    d*s converts it to mesh-size units (N ~ h^-d, d = 2).
  - control: the same pipeline on the unit square with a manufactured
    smooth solution, where the gap must vanish.

Expected: L-shape gap >= 0.25 (typically ~0.5-0.7 at this scale);
square control gap below 0.15.  Runtime ~40 s, dominated by the n = 256
reference solve.
"""

import time
import warnings

import numpy as np

import cornerpde as cp


def f_one(t, pts):
    return np.ones(len(pts))


def f_manufactured(t, pts):
    x, y = pts[:, 0], pts[:, 1]
    return x * (1 - x) * y * (1 - y) + 2.0 * t * (x * (1 - x) + y * (1 - y))


def exact_manufactured(t, pts):
    x, y = pts[:, 0], pts[:, 1]
    return t * x * (1 - x) * y * (1 - y)


def lshape_rates() -> tuple:
    ls = cp.make_l_shape()
    problem = cp.ParabolicProblem(domain=ls, f=f_one, T=1.0)
    ns = (16, 32, 64, 128)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        snaps = [cp.solve_linear(problem, cp.mesh_uniform(ls, 1.0 / n),
                                 128).terminal for n in ns]
        reference = cp.solve_linear(problem, cp.mesh_graded(ls, 256, 2.0 / 3.0),
                                    128).terminal
    errors = cp.cross_family_l2_errors(snaps, reference)
    n_values = 2 ** np.arange(6, 15)
    sigma = cp.nterm_error_sweep(cp.hierarchical_coefficients(snaps[-1]),
                                 n_values)
    h = np.array([1.0 / n for n in ns])
    rep = cp.estimate_rates(h, errors, n_values, sigma, d=2, p=2.0)
    return rep, errors, ns


def square_control() -> tuple:
    sq = cp.make_square()
    T = 0.5
    problem = cp.ParabolicProblem(domain=sq, f=f_manufactured, T=T)
    ns = (8, 16, 32, 64)
    errors, terminal = [], None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for n in ns:
            traj = cp.solve_linear(problem, cp.mesh_uniform(sq, 1.0 / n),
                                   round(T * n * n))
            errors.append(cp.l2_error_against(
                traj.terminal, lambda p: exact_manufactured(T, p)))
            terminal = traj.terminal
    n_values = 2 ** np.arange(6, 12)
    sigma = cp.nterm_error_sweep(cp.hierarchical_coefficients(terminal),
                                 n_values)
    h = np.array([1.0 / n for n in ns])
    rep = cp.estimate_rates(h, np.array(errors), n_values, sigma, d=2, p=2.0)
    return rep, errors, ns


def main() -> None:
    print(__doc__)
    t0 = time.perf_counter()

    rep, errors, ns = lshape_rates()
    print("L-shape (f = 1, graded reference)")
    print(f"  {'n':>6} {'L2 error':>14}")
    for n, e in zip(ns, errors):
        print(f"  {n:>6} {e:>14.6e}")
    gap = rep.besov_gamma_est - rep.sobolev_rate
    print(f"  uniform L2 slope (h units):   {rep.sobolev_rate:.4f}")
    print(f"  N-term slope (N units):       {rep.nterm_slope:.4f}")
    print(f"  gamma_est = 2 * N-term slope: {rep.besov_gamma_est:.4f}")
    print(f"  adaptivity gap:               {gap:.4f}   (claim: >= 0.25)")

    rep_sq, errors_sq, ns_sq = square_control()
    gap_sq = rep_sq.besov_gamma_est - rep_sq.sobolev_rate
    print("\nsquare control (manufactured smooth solution)")
    print(f"  {'n':>6} {'L2 error':>14}")
    for n, e in zip(ns_sq, errors_sq):
        print(f"  {n:>6} {e:>14.6e}")
    print(f"  uniform L2 slope:             {rep_sq.sobolev_rate:.4f}")
    print(f"  gamma_est:                    {rep_sq.besov_gamma_est:.4f}")
    print(f"  control gap:                  {gap_sq:+.4f}   (claim: |.| <= 0.15)")

    print("\n" + "=" * 70)
    verdict = "OPEN" if gap >= 0.25 and abs(gap_sq) <= 0.15 else "NOT OPEN"
    print(f"adaptivity gap at the corner: {gap:.3f}; smooth control "
          f"{gap_sq:+.3f} -> gap is {verdict}")
    print(f"total runtime {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
