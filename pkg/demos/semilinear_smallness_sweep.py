#!/usr/bin/env python3
"""
Fixed-point solves across the smallness threshold
=================================================

The semilinear problem u_t - Laplace(u) = eps * u^M + f is solved by
Picard iteration around the linear solution: each pass feeds eps * u^M
back into the right-hand side.  The construction is guaranteed inside a
ball of radius R = (r0 - 1) * eta_tilde * ||L^-1|| around the linear
solution whenever

    eps  <=  max_eps  =  (r0 - 1) / (r0^M * eta_tilde^(M-1) * ||L^-1||^M),

where eta_tilde bounds the data and ||L^-1|| is the measured discrete
solution operator norm.  Below the threshold the iteration contracts
geometrically; far above it, it visibly diverges.

This script sweeps eps/max_eps over {0.1, 0.5, 0.9, 2, 10, 100} on the
L-shape (f = 1, T = 0.1, six implicit Euler steps, M = 2, r0 = 2) and
tabulates iterations, final residuals, median contraction factors, and
whether every iterate stayed inside the guaranteed ball.  Values above
the threshold run under the documented warning and may converge anyway
(the bound is sufficient, not necessary) -- until they don't.

Runtime: a couple of seconds.  Deterministic: probe vectors for the
operator-norm estimate are seeded.
"""

import time
import warnings

import numpy as np

import cornerpde as cp

FACTORS = (0.1, 0.5, 0.9, 2.0, 10.0, 100.0)


def f_one(t, pts):
    return np.ones(len(pts))


def main() -> None:
    print(__doc__)
    t0 = time.perf_counter()
    ls = cp.make_l_shape()
    mesh = cp.mesh_uniform(ls, 1.0 / 8.0)
    problem = cp.ParabolicProblem(domain=ls, f=f_one, T=0.1)
    n_steps = 6

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        resolved = cp.resolve_semilinear_config(
            problem, mesh, n_steps, cp.SemilinearConfig(eps=0.0, M=2, r0=2.0))
    small = cp.smallness_check(resolved)
    print(f"eta_tilde = {resolved.eta_tilde:.6f}, op_norm = "
          f"{resolved.op_norm:.6f}, radius = {resolved.radius:.6f}")
    print(f"max_eps = {small.max_eps:.4f}\n")

    print(f"{'eps/max':>8} {'iters':>6} {'residual':>12} {'contraction':>12} "
          f"{'in ball':>8} {'outcome':>12}")
    print("-" * 64)
    for factor in FACTORS:
        cfg = cp.SemilinearConfig(eps=factor * small.max_eps, M=2, r0=2.0,
                                  tol=1e-9, max_iter=40)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                _, log = cp.solve_semilinear(problem, mesh, n_steps, cfg)
                outcome = "converged" if log.converged else "max-iter"
            except cp.NonConvergenceError as exc:
                log, outcome = exc.log, "DIVERGED"
        cf = log.contraction_factors()
        med = float(np.median(cf)) if cf.size else float("nan")
        print(f"{factor:>8.1f} {log.n_iterations:>6} "
              f"{log.residuals[-1]:>12.2e} {med:>12.3f} "
              f"{str(all(log.in_ball)):>8} {outcome:>12}")

    print()
    print("Below max_eps the contraction factor tracks eps/max_eps and every")
    print("iterate stays inside the guaranteed ball.  The bound is sufficient")
    print("rather than sharp, so moderately super-critical eps still contracts")
    print("(under the smallness warning); by ~10x the iteration stagnates at")
    print("max_iter, and by ~100x it diverges outright.")
    print(f"total runtime {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
