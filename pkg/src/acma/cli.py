"""Command-line driver: solve / maximal / verify / disks / bench.

Artifacts per run: field CSVs, a diagnostics JSON (deterministic given the
seed; wall-clock times live under the "timing" key), and a plain-text
summary.  Exit codes: 0 ok, 2 config error, 3 solver failure,
4 verification violation.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from .config import build_geometry, expression_callable, load_config
from .disks import make_disk, unit_directions
from .errors import AcmaError, ConfigError
from .fieldio import (
    export_disk, export_field, export_spectra, import_field, read_json,
    write_json,
)
from .grid import ScalarField
from .maximal import (
    fj_harmonic_check, maximality_probe, solve_maximal,
)
from .operator import OperatorKernel, ma_residual, psh_classify
from .solver import (
    MAProblem, SolverConfig, Solution, estimate_report, solve_dirichlet,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


def _solver_config(config):
    sec = config.sections["solver"]
    tol = sec["tol_residual"]
    tol_step = sec["tol_step"]
    return SolverConfig(
        tol_residual=None if tol < 0 else float(tol),
        tol_step=None if tol_step < 0 else float(tol_step),
        max_newton=int(sec["max_newton"]),
        regularization_delta=float(sec["delta"]),
        initial_damping=float(sec["initial_damping"]),
    )


def _problem_fields(config, domain, n):
    f = expression_callable(config.sections["problem"]["f"], n)
    phi = expression_callable(config.sections["problem"]["phi"], n)
    exact_expr = config.sections["problem"]["exact"]
    exact = expression_callable(exact_expr, n) if exact_expr else None
    return f, phi, exact


def _summary_common(config):
    return {
        "version": __version__,
        "seed": config.seed,
        "config": {s: dict(kv) for s, kv in config.sections.items()},
    }


def cmd_solve(config, out):
    t0 = time.perf_counter()
    domain, structure, metric, frame = build_geometry(config)
    n = structure.n
    f, phi, exact = _problem_fields(config, domain, n)
    problem = MAProblem(domain, structure, frame, f, phi)
    solution = solve_dirichlet(problem, _solver_config(config))
    export_field(solution.u, os.path.join(out, "u.csv"))
    kernel = OperatorKernel(domain, frame)
    export_spectra(kernel, kernel.a_field(solution.u),
                   os.path.join(out, "spectra.csv"))
    diag = _summary_common(config)
    timing = {"total": time.perf_counter() - t0,
              "solve": solution.diagnostics.pop("elapsed")}
    diag["solve"] = solution.diagnostics
    lines = [
        f"acma solve: grid h={domain.h} inside={domain.n_inside} "
        f"interior={domain.n_interior}",
        f"newton iterations: {solution.diagnostics['iterations']}",
        f"residual max:      {solution.diagnostics['residual_max']:.3e}",
        f"psh margin:        {solution.diagnostics['psh_margin']:.3e}",
    ]
    if exact is not None:
        err = float(np.abs(
            solution.u.inside_values()
            - exact(domain.inside_points())
        ).max())
        diag["max_error_vs_exact"] = err
        lines.append(f"max error vs exact: {err:.3e}")
    diag["timing"] = timing
    write_json(diag, os.path.join(out, "diagnostics.json"))
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    return EXIT_OK


def cmd_maximal(config, out):
    domain, structure, metric, frame = build_geometry(config)
    n = structure.n
    _, phi, exact = _problem_fields(config, domain, n)
    schedule = [int(k) for k in config.sections["maximal"]["schedule"].split(",")]
    run = solve_maximal(domain, structure, frame, phi, schedule,
                        _solver_config(config))
    for k, u in zip(run.k_schedule, run.iterates):
        export_field(u, os.path.join(out, f"u_k{k:03d}.csv"))
    export_field(run.extrapolated, os.path.join(out, "u_limit.csv"))
    kernel = OperatorKernel(domain, frame)
    rng = np.random.default_rng(config.seed)
    mp = maximality_probe(run.extrapolated, 40, structure, frame, rng=rng,
                          kernel=kernel)
    fj = fj_harmonic_check(run.extrapolated, probes=20, structure=structure,
                           frame=frame, rng=rng, kernel=kernel)
    diag = _summary_common(config)
    diag["maximal"] = {
        "schedule": run.k_schedule,
        "tails": run.tails,
        "monotone_defect": run.monotone_defect,
        "lipschitz": run.lipschitz_estimates,
        "limit_lipschitz": run.limit_lipschitz_estimates,
        "maximality_probe": mp.verdict,
        "fj_harmonic": fj.verdict,
        "solves": [
            {k: v for k, v in d.items() if k not in ("history", "elapsed")}
            for d in run.solutions
        ],
    }
    if exact is not None:
        err = float(np.abs(run.extrapolated.inside_values()
                           - exact(domain.inside_points())).max())
        diag["max_error_vs_exact"] = err
    write_json(diag, os.path.join(out, "maximal.json"))
    lines = [
        f"acma maximal: schedule {run.k_schedule}",
        "tails: " + " ".join(f"{t:.3e}" for t in run.tails),
        f"monotone defect: {run.monotone_defect:.3e}",
        f"maximality probe: {mp.verdict}; F(J)-harmonic probe: {fj.verdict}",
    ]
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    if mp.verdict != "holds" or fj.verdict != "holds":
        return EXIT_VERIFY
    return EXIT_OK


def cmd_verify(config, out):
    domain, structure, metric, frame = build_geometry(config)
    n = structure.n
    f, phi, _ = _problem_fields(config, domain, n)
    path = config.sections["verify"]["solution"]
    if not path:
        raise ConfigError("[verify] solution path is required")
    u = import_field(path, domain)
    problem = MAProblem(domain, structure, frame, f, phi)
    kernel = OperatorKernel(domain, frame)
    res = ma_residual(u, problem.f_field, frame, kernel=kernel)
    psh = psh_classify(u, frame, kernel=kernel)
    rep = estimate_report(Solution(u, True, {}), problem, kernel=kernel)
    tau_factor = float(config.sections["verify"]["tau_factor"])
    tau = tau_factor * (1e-8 + domain.h ** 2) * max(1.0, u.max_norm_inside())
    band_gap = float(np.abs(
        kernel.band_residual(u.values[domain.inside_flat], problem.phi_foot)
    ).max()) if len(domain.band_flat) else 0.0
    checks = {
        "residual_max": res.max_abs,
        "residual_ok": bool(res.max_abs <= tau),
        "psh_margin": psh.margin,
        "psh_ok": bool(psh.margin >= -tau),
        "boundary_gap": band_gap,
        "boundary_ok": bool(band_gap <= tau),
        "uniform_sandwich_ok": rep.uniform_ok,
        "barrier_sandwich_ok": rep.barrier_ok,
        "tau": tau,
    }
    diag = _summary_common(config)
    diag["verify"] = checks
    diag["estimate_report"] = rep.as_dict()
    write_json(diag, os.path.join(out, "verify_report.json"))
    ok = all(v for k, v in checks.items() if k.endswith("_ok"))
    print("acma verify:", "PASS" if ok else "FAIL",
          {k: v for k, v in checks.items() if k.endswith("_ok")})
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_disks(config, out):
    domain, structure, metric, frame = build_geometry(config)
    sec = config.sections["disks"]
    rng = np.random.default_rng(config.seed)
    point_spec = sec["point"]
    if point_spec:
        point = np.array([float(v) for v in point_spec.split(",")])
    else:
        pts = domain.interior_points()
        point = pts[np.argmin(np.linalg.norm(pts - pts.mean(axis=0), axis=1))]
    dirs = unit_directions(structure, point, int(sec["count"]), rng)
    rows = []
    for i, v in enumerate(dirs):
        disk = make_disk(structure, point, [v], float(sec["radius"]),
                         tol=float(sec["tol"]))
        export_disk(disk, os.path.join(out, f"disk_{i:02d}.csv"))
        rows.append({
            "direction": v.tolist(),
            "residual": disk.residual,
            "iterations": disk.iterations,
            "jet_errors": disk.jet_errors,
        })
    diag = _summary_common(config)
    diag["disks"] = {"point": point.tolist(), "runs": rows}
    write_json(diag, os.path.join(out, "disks.json"))
    worst = max(r["residual"] for r in rows)
    print(f"acma disks: {len(rows)} disks at {np.round(point, 4).tolist()}, "
          f"worst residual {worst:.3e}")
    return EXIT_OK


def cmd_bench(config, out):
    h_list = [float(v) for v in config.sections["bench"]["h_list"].split(",")]
    errors, residuals, sizes = [], [], []
    base_sections = config.sections
    for h in h_list:
        base_sections["domain"]["h"] = h
        domain, structure, metric, frame = build_geometry(config)
        n = structure.n
        f, phi, exact = _problem_fields(config, domain, n)
        problem = MAProblem(domain, structure, frame, f, phi)
        solution = solve_dirichlet(problem, _solver_config(config))
        residuals.append(solution.diagnostics["residual_max"])
        sizes.append(domain.n_inside)
        if exact is not None:
            err = float(np.abs(solution.u.inside_values()
                               - exact(domain.inside_points())).max())
        else:
            err = float("nan")
        errors.append(err)
    orders = [float("nan")]
    for i in range(1, len(h_list)):
        if np.isfinite(errors[i - 1]) and np.isfinite(errors[i]):
            orders.append(
                float(np.log(errors[i - 1] / errors[i])
                      / np.log(h_list[i - 1] / h_list[i]))
            )
        else:
            orders.append(float("nan"))
    header = f"{'h':>10} {'inside':>8} {'residual':>12} {'error':>12} {'order':>7}"
    lines = [header]
    for h, s, r, e, o in zip(h_list, sizes, residuals, errors, orders):
        lines.append(f"{h:>10.5f} {s:>8d} {r:>12.3e} {e:>12.3e} {o:>7.2f}")
    table = "\n".join(lines) + "\n"
    diag = _summary_common(config)
    diag["bench"] = {"h": h_list, "inside": sizes, "residual": residuals,
                     "error": errors, "order": orders}
    write_json(diag, os.path.join(out, "bench.json"))
    with open(os.path.join(out, "bench.txt"), "w") as fh:
        fh.write(table)
    print(table, end="")
    return EXIT_OK


_COMMANDS = {
    "solve": cmd_solve,
    "maximal": cmd_maximal,
    "verify": cmd_verify,
    "disks": cmd_disks,
    "bench": cmd_bench,
}


def _limit_threads(threads):
    if threads <= 0:
        return
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=threads)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="acma",
        description="Monge-Ampere solver on almost complex domains",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="INI config file")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, command=args.command)
        if args.seed is not None:
            config.seed = args.seed
            config.sections["run"]["seed"] = args.seed
        if args.threads is not None:
            config.threads = args.threads
        out = args.out or config.out
        os.makedirs(out, exist_ok=True)
        _limit_threads(config.threads)
        return _COMMANDS[args.command](config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AcmaError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
