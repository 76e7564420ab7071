"""
Command-line front end.

Subcommands: ``solve``, ``convergence``, ``xi`` and ``mesh-info``. Options
may also come from a flat ``key=value`` file given with ``--config``;
flags on the command line override file values. Exit status is 0 on
success, 2 for invalid configuration and 3 when a solve does not converge.

The environment variable ``HDGSTOKES_THREADS`` caps the number of BLAS /
OpenMP threads.
"""

import argparse
import os
import runpy
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis.convergence import NORMS, check_dyadic, convergence_study
from .analysis.problems import EXAMPLE1, EXAMPLE2, BenchmarkProblem
from .analysis.regularity import is_admissible, singular_exponent
from .control_solver import STABILIZATIONS, SolverConfig, \
    solve_control_problem
from .mesh import build_square_mesh

THREADS_ENV = "HDGSTOKES_THREADS"
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3

# key -> (type, default); defaults apply when neither file nor flag sets it
OPTIONS = {
    "problem": (str, "example1"),
    "n": (str, None),
    "k": (int, 1),
    "gamma": (float, None),
    "dt": (float, 256.0),
    "tol": (float, 1e-8),
    "max_iter": (int, 200),
    "stabilization": (str, "face"),
    "norm": (str, "projection"),
    "reference_n": (int, None),
    "omega": (float, np.pi / 2),
    "out": (str, "."),
}
DEFAULT_N = {"solve": "8", "convergence": "8,16,32,64", "mesh-info": "8"}


class ConfigError(ValueError):
    pass


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for num, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{path}:{num}: unknown key '{key}'")
        values[key] = val
    return values


def _convert(key, raw):
    kind = OPTIONS[key][0]
    try:
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from exc


def resolve_options(args):
    """Merge defaults, config file and flags into one dict."""
    merged = {k: v[1] for k, v in OPTIONS.items()}
    if args.config:
        for key, raw in read_config_file(args.config).items():
            merged[key] = _convert(key, raw)
    for key in OPTIONS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = _convert(key, val)
    if merged["n"] is None:
        merged["n"] = DEFAULT_N.get(args.command, "8")
    try:
        merged["n"] = [int(s) for s in str(merged["n"]).split(",") if s]
    except ValueError as exc:
        raise ConfigError(f"invalid mesh size list: {merged['n']}") from exc
    if not merged["n"] or min(merged["n"]) < 1:
        raise ConfigError("mesh sizes must be positive integers")
    if merged["stabilization"] not in STABILIZATIONS:
        raise ConfigError("stabilization must be one of "
                          + ", ".join(STABILIZATIONS))
    if merged["norm"] not in NORMS:
        raise ConfigError("norm must be one of " + ", ".join(NORMS))
    return merged


def load_problem(name):
    """
    ``example1``, ``example2`` or the path of a Python file defining
    ``forcing(x1, x2)`` and ``target(x1, x2)`` (each returning a pair of
    arrays) and optionally ``side``, ``origin`` and ``gamma``.
    """
    if name == "example1":
        return EXAMPLE1
    if name == "example2":
        return EXAMPLE2
    if not os.path.isfile(name):
        raise ConfigError(f"unknown problem '{name}'")
    try:
        ns = runpy.run_path(name)
    except Exception as exc:
        raise ConfigError(f"cannot load problem file {name}: {exc}") from exc
    if "forcing" not in ns or "target" not in ns:
        raise ConfigError(f"{name} must define forcing and target")
    return BenchmarkProblem(ns["forcing"], ns["target"],
                            float(ns.get("gamma", 1.0)),
                            float(ns.get("side", 1.0)),
                            tuple(ns.get("origin", (0.0, 0.0))))


def solver_config(opts, problem):
    gamma = opts["gamma"] if opts["gamma"] is not None else problem.gamma
    try:
        return SolverConfig(k=opts["k"], gamma=gamma, dt=opts["dt"],
                            tol=opts["tol"], max_iter=opts["max_iter"],
                            stabilization=opts["stabilization"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_element_field(path, arr):
    arr = arr if arr.ndim == 3 else arr[:, None, :]
    with open(path, "w") as fh:
        fh.write("element_id,mode_index,component,coefficient\n")
        for e in range(arr.shape[0]):
            for c in range(arr.shape[1]):
                for m in range(arr.shape[2]):
                    fh.write(f"{e},{m},{c},{arr[e, c, m]:.16e}\n")


def _write_face_field(path, faces, arr):
    arr = arr if arr.ndim == 3 else arr[:, None, :]
    with open(path, "w") as fh:
        fh.write("face_id,mode_index,component,coefficient\n")
        for i, f in enumerate(faces):
            for c in range(arr.shape[1]):
                for m in range(arr.shape[2]):
                    fh.write(f"{f},{m},{c},{arr[i, c, m]:.16e}\n")


def write_solution(out, sol, report):
    os.makedirs(out, exist_ok=True)
    for name in ("L", "G", "y", "z", "p", "q"):
        _write_element_field(os.path.join(out, f"{name}.csv"),
                             getattr(sol, name))
    mesh = sol.mesh
    fi = mesh.interior_faces
    _write_face_field(os.path.join(out, "yhat.csv"), fi, sol.yhat[fi])
    _write_face_field(os.path.join(out, "zhat.csv"), fi, sol.zhat[fi])
    _write_face_field(os.path.join(out, "u.csv"), mesh.boundary_faces,
                      sol.u)
    with open(os.path.join(out, "iterations.csv"), "w") as fh:
        fh.write(report.log_csv())


def cmd_solve(opts, out=print):
    problem = load_problem(opts["problem"])
    config = solver_config(opts, problem)
    if len(opts["n"]) != 1:
        raise ConfigError("solve takes a single mesh size")
    n = opts["n"][0]
    mesh = build_square_mesh(n, problem.side, problem.origin)
    sol, rep = solve_control_problem(mesh, config, problem.forcing,
                                     problem.target)
    write_solution(opts["out"], sol, rep)
    out(f"n={n} k={config.k} iterations={rep.iterations} "
        f"converged={str(rep.converged).lower()}")
    if not rep.converged:
        out(f"error: no convergence within {config.max_iter} iterations")
        return EXIT_NOT_CONVERGED
    return 0


def cmd_convergence(opts, out=print):
    problem = load_problem(opts["problem"])
    config = solver_config(opts, problem)
    try:
        ns = check_dyadic(opts["n"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        table = convergence_study(config, ns, problem, norm=opts["norm"],
                                  reference_n=opts["reference_n"],
                                  omega=opts["omega"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    os.makedirs(opts["out"], exist_ok=True)
    text = table.to_csv()
    with open(os.path.join(opts["out"], "convergence.csv"), "w") as fh:
        fh.write(text)
    out(text.rstrip("\n"))
    if not all(table.converged):
        out("error: at least one solve did not converge")
        return EXIT_NOT_CONVERGED
    return 0


def cmd_xi(opts, out=print):
    omega = opts["omega"]
    if not 0.0 < omega < 2.0 * np.pi:
        raise ConfigError("omega must lie in (0, 2 pi)")
    try:
        xi = singular_exponent(omega)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out(f"omega={omega:.10g} xi={xi:.6f} "
        f"admissible={str(is_admissible(xi)).lower()}")
    return 0


def cmd_mesh_info(opts, out=print):
    for n in opts["n"]:
        m = build_square_mesh(n)
        out(f"n={n} vertices={m.num_vertices} elements={m.num_elements} "
            f"faces={m.num_faces} interior_faces={m.interior_faces.size} "
            f"boundary_faces={m.boundary_faces.size} h_max={m.h_max:.6g}")
    return 0


COMMANDS = {"solve": cmd_solve, "convergence": cmd_convergence,
            "xi": cmd_xi, "mesh-info": cmd_mesh_info}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hdgstokes",
        description="HDG solver for tangential boundary control of Stokes "
                    "flow.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key=value options file")
    parser.add_argument("--problem",
                        help="example1, example2 or a Python problem file")
    parser.add_argument("--n", help="cells per side, comma separated")
    parser.add_argument("--k", help="polynomial degree (0..3)")
    parser.add_argument("--gamma", help="control cost")
    parser.add_argument("--dt", help="pseudo-time step")
    parser.add_argument("--tol", help="pressure-change tolerance")
    parser.add_argument("--max-iter", dest="max_iter")
    parser.add_argument("--stabilization",
                        help="penalty length: " + ", ".join(STABILIZATIONS))
    parser.add_argument("--norm", help="error norm: " + ", ".join(NORMS))
    parser.add_argument("--reference-n", dest="reference_n",
                        help="reference mesh for problems without a "
                             "closed-form solution")
    parser.add_argument("--omega", help="corner angle in radians")
    parser.add_argument("--out", help="output directory")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    threads = os.environ.get(THREADS_ENV)
    try:
        opts = resolve_options(args)
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError:
        print(f"error: {THREADS_ENV} must be a positive integer",
              file=sys.stderr)
        return EXIT_CONFIG
    with threadpool_limits(limits=limit):
        try:
            return COMMANDS[args.command](opts)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
