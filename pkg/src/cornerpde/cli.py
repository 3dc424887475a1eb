"""Command-line workbench: pencil, solve, semilinear, smoothness, extend, experiment.

Every command prints a short human summary to stdout and writes its full
output as JSON/CSV files under the output root (``-o``, else
``$CORNERPDE_OUT``, else ``./cornerpde_out``).  Exit codes: 0 success,
2 invalid input, 3 numeric failure, 4 non-convergence of an iteration.

The installed ``cornerpde`` script enters through a thin shim that pins
the BLAS/OpenMP thread count (``--threads``, default 1) before numpy
loads; one thread is what the byte-level reproducibility contract
assumes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from dataclasses import replace

import numpy as np

from . import experiment as exp
from .calculus import discrete_hk_norm, extend_signal, junction_mismatch
from .domain import (FieldSnapshot, make_l_shape, make_square, mesh_graded,
                     mesh_uniform, read_mesh_csv, write_mesh_csv)
from .errors import (EXIT_NONCONVERGENCE, EXIT_NUMERIC, EXIT_OK,
                     EXIT_VALIDATION, NonConvergenceError, NumericError,
                     ValidationError)
from .pde import (ParabolicProblem, SemilinearConfig, assemble,
                  resolve_semilinear_config, smallness_check, solution_norm,
                  solve_linear, solve_semilinear)
from .pencil import (admissible_weights, heat_weight_bound,
                     laplace_pencil_closed_form, pencil_eigenvalues_numeric,
                     strip_delta)
from .smoothness import (KondratievParams, cross_family_l2_errors,
                         estimate_rates, galerkin_energy_errors,
                         hierarchical_coefficients, kondratiev_norm,
                         nterm_error_sweep, self_convergence_errors,
                         sobolev_norm)

_PI_FORM = re.compile(r"(?:(\d+(?:\.\d+)?)\*?)?pi(?:/(\d+(?:\.\d+)?))?")


def parse_angle(text: str) -> float:
    """Angle in radians; accepts '1.5', 'pi', '2pi', '3pi/2', 'pi/4'."""
    s = text.strip().lower().replace(" ", "")
    m = _PI_FORM.fullmatch(s)
    try:
        if m:
            return math.pi * float(m.group(1) or 1.0) / float(m.group(2) or 1.0)
        return float(s)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(
            f"cannot parse angle {text!r}; use radians or a pi form like 3pi/2")


def parse_ratio(text: str) -> float:
    """Positive number; accepts fractions like '1/32'."""
    s = text.strip()
    try:
        if "/" in s:
            num, den = s.split("/", 1)
            value = float(num) / float(den)
        else:
            value = float(s)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"cannot parse number {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"value must be positive, got {text!r}")
    return value


def parse_eps(text: str) -> object:
    if text.strip() == "half-max":
        return "half-max"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--eps takes a number or 'half-max', got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError("--eps must be >= 0")
    return v


def _out_dir(args) -> str:
    root = exp.resolve_output_root(getattr(args, "out", None))
    os.makedirs(root, exist_ok=True)
    return root


def _write_json(path: str, obj) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(exp.dumps_json(obj))


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


# ---------------------------------------------------------------------------
# shared construction helpers
# ---------------------------------------------------------------------------

def _domain_for(name: str):
    return make_square() if name == "square" else make_l_shape()


def _level_n(args) -> int:
    if args.h is not None:
        return max(1, round(1.0 / args.h))
    return args.n


def _build_mesh(args):
    domain = _domain_for(args.domain)
    n = _level_n(args)
    if args.mu is not None:
        return domain, mesh_graded(domain, n, args.mu), "graded"
    return domain, mesh_uniform(domain, 1.0 / n), "uniform"


def _build_problem(args) -> ParabolicProblem:
    source = exp._SOURCES[args.f]
    return ParabolicProblem(domain=_domain_for(args.domain), f=source.f, T=args.T)


def _snapshot_from_csv(domain_name: str, path: str, mu: float | None = None):
    """Rebuild a structured-mesh snapshot from a solution CSV.

    The mesh generators are deterministic, so the lattice resolution can be
    inferred from the node count and the mesh regenerated; the CSV then only
    needs to match it.  That keeps snapshot files self-contained without
    serializing lattice metadata.
    """
    nodes, tris, _, values = read_mesh_csv(path)
    if values is None:
        raise ValidationError(f"{path}: no nodal values column")
    count = len(nodes)
    if domain_name == "square":
        n = round(math.sqrt(count)) - 1
    else:
        n = round((math.sqrt(3.0 * count + 1.0) - 2.0) / 3.0)
    if n < 1:
        raise ValidationError(f"{path}: too few nodes for a {domain_name} mesh")
    domain = _domain_for(domain_name)
    mesh = mesh_graded(domain, n, mu) if mu is not None else mesh_uniform(domain, 1.0 / n)
    if mesh.n_nodes != count or not np.allclose(mesh.nodes, nodes, atol=1e-12):
        kind = f"graded (mu={mu:g})" if mu is not None else "uniform"
        raise ValidationError(
            f"{path} does not match the structured {kind} {domain_name} "
            f"mesh at n={n}")
    return FieldSnapshot(mesh, values)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_pencil(args) -> int:
    closed = laplace_pencil_closed_form(args.theta, args.count)
    numeric = pencil_eigenvalues_numeric(args.theta, args.count, args.grid)
    pos_c = np.sort([ev.real for ev in closed.eigenvalues if ev.real > 0])
    pos_n = np.sort([ev.real for ev in numeric.eigenvalues if ev.real > 0])
    k = min(len(pos_c), len(pos_n))
    rel = float(np.max(np.abs(pos_n[:k] - pos_c[:k]) / pos_c[:k]))
    strips = strip_delta(closed)
    lin = admissible_weights(strips, m=1, nonlinear=False)
    nonlin = admissible_weights(strips, m=1, nonlinear=True)
    bound = heat_weight_bound(args.theta)

    print(f"pencil at theta = {_fmt(args.theta)} rad "
          f"(grid {args.grid}, first {args.count} positive eigenvalues)")
    for i in range(k):
        print(f"  lambda_{i + 1}: closed {_fmt(pos_c[i])}  "
              f"numeric {_fmt(pos_n[i])}")
    print(f"  max relative error: {rel:.3e}")
    print(f"  strip widths: delta- {_fmt(strips.delta_minus)}, "
          f"delta+ {_fmt(strips.delta_plus)}")

    def show(tag, w):
        if w.empty:
            print(f"  {tag}: empty")
        else:
            lo = "[" if w.lower_inclusive else "("
            hi = "]" if w.upper_inclusive else ")"
            print(f"  {tag}: {lo}{_fmt(w.lower)}, {_fmt(w.upper)}{hi}")

    show("admissible weights (m=1, linear)", lin)
    show("admissible weights (m=1, nonlinear)", nonlin)
    print(f"  heat weight bound: {_fmt(bound)}")

    out = _out_dir(args)
    _write_json(os.path.join(out, "pencil.json"), {
        "theta": float(args.theta), "count": int(args.count),
        "grid": int(args.grid),
        "eigenvalues_closed_form": [float(v) for v in pos_c],
        "eigenvalues_numeric": [float(v) for v in pos_n],
        "max_rel_error": rel,
        "delta_minus": float(strips.delta_minus),
        "delta_plus": float(strips.delta_plus),
        "weights_linear_m1": lin.as_dict(),
        "weights_nonlinear_m1": nonlin.as_dict(),
        "heat_weight_bound": float(bound),
    })
    print(f"wrote {os.path.join(out, 'pencil.json')}")
    return EXIT_OK


def _solution_files(out, family, mesh, values, prefix="solution"):
    name = f"{prefix}_{family}_n{mesh.n:04d}.csv"
    write_mesh_csv(mesh, os.path.join(out, name), values)
    return name


def _cmd_solve(args) -> int:
    domain, mesh, family = _build_mesh(args)
    problem = _build_problem(args)
    traj = solve_linear(problem, mesh, args.steps)
    ops = assemble(mesh, problem)
    term = traj.terminal
    tnorm = solution_norm(traj, ops)
    l2 = math.sqrt(float(term.values @ (ops.mass @ term.values)))
    h1 = math.sqrt(float(term.values @ (ops.h1 @ term.values)))
    print(f"solved {args.domain} ({family}, n={mesh.n}, "
          f"{mesh.n_nodes} nodes), {args.steps} steps to T={_fmt(args.T)}")
    print(f"  trajectory norm {_fmt(tnorm)}, terminal L2 {_fmt(l2)}, "
          f"terminal H1 {_fmt(h1)}")

    out = _out_dir(args)
    name = _solution_files(out, family, mesh, term.values)
    _write_json(os.path.join(out, "solve.json"), {
        "domain": args.domain, "family": family, "n": int(mesh.n),
        "mu": args.mu, "f": args.f, "T": float(args.T),
        "n_steps": int(args.steps), "dt": float(traj.dt),
        "trajectory_norm": float(tnorm),
        "terminal_l2": float(l2), "terminal_h1": float(h1),
        "solution_file": name,
    })
    print(f"wrote {name} and solve.json in {out}")
    return EXIT_OK


def _cmd_semilinear(args) -> int:
    domain, mesh, family = _build_mesh(args)
    problem = _build_problem(args)
    cfg = SemilinearConfig(
        eps=0.0 if args.eps == "half-max" else float(args.eps),
        M=args.M, r0=args.r0, tol=args.tol, max_iter=args.max_iter,
        n_probes=args.probes, seed=args.seed)
    resolved = resolve_semilinear_config(problem, mesh, args.steps, cfg)
    max_eps = smallness_check(resolved).max_eps
    if args.eps == "half-max":
        resolved = replace(resolved, eps=0.5 * max_eps)
    traj, log = solve_semilinear(problem, mesh, args.steps, resolved)

    print(f"semilinear {args.domain} ({family}, n={mesh.n}), M={args.M}, "
          f"eps={_fmt(resolved.eps)} (max {_fmt(max_eps)})")
    print(f"  eta_tilde {_fmt(log.eta_tilde)}, op_norm {_fmt(log.op_norm)}, "
          f"radius {_fmt(log.radius)}")
    cf = log.contraction_factors()
    cf_txt = _fmt(float(np.median(cf))) if cf.size else "n/a"
    print(f"  {log.n_iterations} iterations, converged={log.converged}, "
          f"median contraction {cf_txt}")

    out = _out_dir(args)
    name = _solution_files(out, family, mesh, traj.terminal.values)
    d = log.as_dict()
    rows = [f"{i},{exp._fmt17(r)},{exp._fmt17(dist)},{int(b)}"
            for i, (r, dist, b) in enumerate(
                zip(d["residuals"], d["distances_to_linear"], d["in_ball"]))]
    with open(os.path.join(out, "iterations.csv"), "w", newline="\n") as f:
        f.write("\n".join(["iteration,residual,distance_to_linear,in_ball"]
                          + rows) + "\n")
    _write_json(os.path.join(out, "semilinear.json"), {
        "domain": args.domain, "family": family, "n": int(mesh.n),
        "T": float(args.T), "n_steps": int(args.steps),
        "solution_file": name, **d,
    })
    print(f"wrote {name}, iterations.csv, semilinear.json in {out}")
    return EXIT_OK


def _cmd_smoothness(args) -> int:
    snaps = [_snapshot_from_csv(args.domain, p) for p in args.snapshots]
    ns = [s.mesh.n for s in snaps]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValidationError("snapshots must be ordered coarse to fine")
    h = np.array([1.0 / n for n in ns])

    reference = None
    if args.reference is not None:
        reference = _snapshot_from_csv(args.domain, args.reference, mu=args.mu)

    if args.f_const is not None:
        if reference is None:
            raise ValidationError("--f-const (energy-functional errors) needs "
                                  "--reference")
        route = "galerkin-energy"
        errors = galerkin_energy_errors(snaps, reference, args.f_const)
    elif reference is not None and args.mu is not None:
        route = "cross-family-l2"
        errors = cross_family_l2_errors(snaps, reference)
    elif reference is not None:
        route = "self-l2"
        errors = self_convergence_errors(snaps, reference, norm="l2")
    else:
        raise ValidationError("smoothness needs --reference (self or graded "
                              "errors) or --f-const with --reference")

    target = reference if (reference is not None and args.mu is None) else snaps[-1]
    lo, hi = args.nterm
    n_values = 2 ** np.arange(lo, hi + 1)
    sigma = nterm_error_sweep(hierarchical_coefficients(target), n_values)
    report = estimate_rates(h, errors, n_values, sigma, d=2, p=2.0)
    gap = report.besov_gamma_est - report.sobolev_rate

    params = KondratievParams(m=args.kondratiev_m, p=args.kondratiev_p,
                              a=args.kondratiev_a)
    knorm = kondratiev_norm(target, params)
    snorm = sobolev_norm(target, 1)

    print(f"smoothness over {len(snaps)} snapshots (n = {ns}), route {route}")
    print(f"  uniform rate {_fmt(report.sobolev_rate)}, N-term slope "
          f"{_fmt(report.nterm_slope)}, gamma_est {_fmt(report.besov_gamma_est)}")
    print(f"  gap (gamma_est - uniform rate): {_fmt(gap)}   [compare like "
          f"units: the uniform rate is the {route} slope in h]")
    print(f"  kondratiev (m={params.m}, p={_fmt(params.p)}, a={_fmt(params.a)}):"
          f" {_fmt(knorm)}; H1 norm {_fmt(snorm)}")

    out = _out_dir(args)
    with open(os.path.join(out, "smoothness_errors.csv"), "w", newline="\n") as f:
        f.write("h,n,error\n" + "\n".join(
            f"{exp._fmt17(hv)},{n},{exp._fmt17(e)}"
            for hv, n, e in zip(h, ns, errors)) + "\n")
    with open(os.path.join(out, "smoothness_nterm.csv"), "w", newline="\n") as f:
        f.write("N,sigma_N\n" + "\n".join(
            f"{n},{exp._fmt17(s)}" for n, s in zip(n_values, sigma)) + "\n")
    _write_json(os.path.join(out, "smoothness.json"), {
        "domain": args.domain, "route": route,
        "h_values": [float(v) for v in h], "n_values": [int(v) for v in ns],
        "errors": [float(v) for v in errors],
        "nterm": {"n_values": [int(v) for v in n_values],
                  "sigma": [float(v) for v in sigma]},
        **report.as_dict(), "gap": float(gap),
        "norms": {"kondratiev": {"m": params.m, "p": params.p, "a": params.a,
                                 "value": float(knorm)},
                  "sobolev_h1": float(snorm)},
    })
    print(f"wrote smoothness.json, smoothness_errors.csv, smoothness_nterm.csv "
          f"in {out}")
    return EXIT_OK


def _cmd_extend(args) -> int:
    raw = [line.strip() for line in open(args.signal)]
    samples = np.array([float(v) for v in raw if v != ""])
    ext = extend_signal(samples, args.T, k=args.k, n_left=args.n_left)
    junction = junction_mismatch(ext)
    norm_orig = discrete_hk_norm(ext.original, ext.spacing, args.k)
    norm_ext = discrete_hk_norm(ext.values, ext.spacing, args.k)

    coeff = ext.coefficients
    print(f"extended {samples.size} samples on [0, {_fmt(args.T)}] by "
          f"{ext.n_left} samples (order k={args.k})")
    print(f"  coefficients a: {[ _fmt(a) for a in coeff.a ]}")
    worst = float(np.max(np.abs(junction.mismatch[:args.k + 1])))
    print(f"  junction mismatch through order {args.k}: {worst:.3e}")
    print(f"  discrete H^{args.k}: original {_fmt(norm_orig)}, "
          f"extended {_fmt(norm_ext)} (ratio {_fmt(norm_ext / norm_orig)})")

    out = _out_dir(args)
    with open(os.path.join(out, "extended.csv"), "w", newline="\n") as f:
        f.write("t,value\n" + "\n".join(
            f"{exp._fmt17(t)},{exp._fmt17(v)}"
            for t, v in zip(ext.times, ext.values)) + "\n")
    _write_json(os.path.join(out, "extend.json"), {
        "k": int(args.k), "T": float(args.T), "n_samples": int(samples.size),
        "n_left": int(ext.n_left), "spacing": float(ext.spacing),
        "lambdas": [float(v) for v in coeff.lambdas],
        "a": [float(v) for v in coeff.a],
        "junction": junction.as_dict(),
        "hk_norm_original": float(norm_orig),
        "hk_norm_extended": float(norm_ext),
    })
    print(f"wrote extended.csv and extend.json in {out}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    if args.config.endswith(".json"):
        with open(args.config) as f:
            config = exp.ExperimentConfig.from_dict(json.load(f))
    else:
        config = exp.preset(args.config)
    report = exp.run_experiment(config, out_dir=getattr(args, "out", None))

    print(f"experiment {config.name}: "
          + ", ".join(f"{k} {v:.2f}s" for k, v in report.timings.items()))
    print(f"  pencil: {len(report.pencil)} corner(s)")
    rates = report.results.get("rates")
    if rates:
        print("  rates: " + ", ".join(f"{k} {_fmt(v)}" for k, v in rates.items()))
    if report.smoothness is not None:
        extra = report.smoothness_extra
        print(f"  besov_gamma_est {_fmt(report.smoothness.besov_gamma_est)}, "
              f"gap {_fmt(extra['gap'])}")
    if report.results.get("semilinear"):
        finest = report.results["semilinear"][-1]
        print(f"  semilinear (n={finest['n']}): eps {_fmt(finest['eps'])} of "
              f"max {_fmt(finest['max_eps'])}, {finest['n_iterations']} "
              f"iterations, converged={finest['converged']}")
    print(f"  wrote {len(report.manifest)} hashed files to {report.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def _add_common_mesh(p: argparse.ArgumentParser) -> None:
    p.add_argument("--domain", choices=("square", "lshape"), required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--n", type=int, default=32,
                   help="lattice resolution (default 32)")
    g.add_argument("--h", type=parse_ratio, default=None,
                   help="target mesh size, e.g. 1/32 (alternative to --n)")
    p.add_argument("--mu", type=float, default=None,
                   help="grading exponent in (0, 1]; graded mesh toward the "
                        "re-entrant corner")


def _add_common_problem(p: argparse.ArgumentParser) -> None:
    p.add_argument("--f", choices=tuple(exp._SOURCES), default="one",
                   help="right-hand side from the source registry")
    p.add_argument("--T", type=parse_ratio, default=1.0, help="time horizon")
    p.add_argument("--steps", type=int, default=64, help="number of time steps")


def _shared_flags(p: argparse.ArgumentParser) -> None:
    # SUPPRESS defaults let these flags sit before or after the subcommand
    # without the subparser's default clobbering a top-level value.
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="BLAS/OpenMP threads (default 1; reproducibility is "
                        "only guaranteed at 1)")
    p.add_argument("-o", "--out", default=argparse.SUPPRESS,
                   help="output root (default $CORNERPDE_OUT or "
                        "./cornerpde_out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cornerpde",
        description="Corner-domain parabolic workbench: pencil spectra, "
                    "Rothe solves, weighted norms, and rate experiments.",
        epilog="presets for 'experiment': "
               + ", ".join(c.name for c in exp.presets()))
    _shared_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    _shared_flags(shared)

    p = sub.add_parser("pencil", parents=[shared],
                       help="corner pencil spectrum and weight window")
    p.add_argument("--theta", type=parse_angle, required=True,
                   help="opening angle, e.g. 3pi/2 or 4.712")
    p.add_argument("--count", type=int, default=3,
                   help="positive eigenvalues to report (default 3)")
    p.add_argument("--grid", type=int, default=2000,
                   help="finite-difference grid for the numeric route")
    p.set_defaults(func=_cmd_pencil)

    p = sub.add_parser("solve", parents=[shared], help="linear Rothe solve on a structured mesh")
    _add_common_mesh(p)
    _add_common_problem(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("semilinear", parents=[shared],
                       help="fixed-point semilinear solve with contraction log")
    _add_common_mesh(p)
    _add_common_problem(p)
    p.add_argument("--eps", type=parse_eps, default="half-max",
                   help="nonlinearity strength, or 'half-max' (default)")
    p.add_argument("--M", type=int, default=2, help="power of the nonlinearity")
    p.add_argument("--r0", type=float, default=2.0, help="ball factor > 1")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--probes", type=int, default=8,
                   help="random probes for the operator-norm estimate")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_semilinear)

    p = sub.add_parser("smoothness", parents=[shared],
                       help="rates and norms from saved solution CSVs")
    p.add_argument("--domain", choices=("square", "lshape"), required=True)
    p.add_argument("--snapshots", nargs="+", required=True,
                   help="uniform-family solution CSVs, coarse to fine (>= 4)")
    p.add_argument("--reference", default=None,
                   help="finer reference solution CSV")
    p.add_argument("--mu", type=float, default=None,
                   help="the reference is graded with this exponent "
                        "(cross-family L2 errors)")
    p.add_argument("--f-const", type=float, default=None,
                   help="steady constant source: use energy-functional errors")
    p.add_argument("--nterm", type=int, nargs=2, default=(6, 11),
                   metavar=("LO", "HI"), help="log2 N-term range (default 6 11)")
    p.add_argument("--kondratiev-m", type=int, default=1)
    p.add_argument("--kondratiev-p", type=float, default=2.0)
    p.add_argument("--kondratiev-a", type=float, default=0.0)
    p.set_defaults(func=_cmd_smoothness)

    p = sub.add_parser("extend", parents=[shared],
                       help="reflection extension of a time signal to t < 0")
    p.add_argument("--signal", required=True,
                   help="file with one sample per line (uniform grid on [0, T])")
    p.add_argument("--T", type=parse_ratio, required=True)
    p.add_argument("--k", type=int, default=3, help="smoothness order")
    p.add_argument("--n-left", type=int, default=None,
                   help="extension samples (default: maximal admissible)")
    p.set_defaults(func=_cmd_extend)

    p = sub.add_parser("experiment", parents=[shared],
                       help="run a preset or JSON experiment config")
    p.add_argument("config", help="preset name or path to a config .json")
    p.set_defaults(func=_cmd_experiment)

    return parser


def run_cli(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NonConvergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as e:
        # unreadable files, malformed JSON configs, bad numeric literals
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


def main(argv=None) -> int:
    """Direct entry (no thread pinning); the installed script uses the shim."""
    return run_cli(sys.argv[1:] if argv is None else argv)
