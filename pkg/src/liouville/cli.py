"""Command-line entry point.

Precedence: built-in defaults, then the JSON config given by --config, then
explicit flags. Reports are written atomically into the output directory;
timings go to a separate file so that reports stay byte-reproducible.
"""
from __future__ import annotations

import os

_threads = os.environ.get("LIOUVILLE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import platform  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import scipy  # noqa: E402

from . import __version__  # noqa: E402
from .bubbles import BarycenterConfig, bubble_energy_report, mass_spectrum  # noqa: E402
from .config import ConfigError, RunConfig, parse_real  # noqa: E402
from .fem import CompatibilityError, SolverError, assemble  # noqa: E402
from .functional import (  # noqa: E402
    build_problem,
    curvature_check,
    log_integral,
    residual,
    to_metric,
)
from .green import compute_green  # noqa: E402
from .io import dumps, read_field, write_field, write_json  # noqa: E402
from .mesh import ConeSet, MeshError, generate, load_mesh  # noqa: E402
from .solvers import (  # noqa: E402
    PreconditionError,
    StepPolicy,
    continuation,
    default_mass_radius,
    minimize,
    solve_minmax,
)
from .spectrum import (  # noqa: E402
    classify,
    critical_values,
    geometric_lambda,
    singular_euler,
    theorem_applicability,
    trudinger_constant,
)

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2
DEFAULT_TOL = {"min": 1e-8, "minmax": 1e-6, "continue": 1e-8}


class SolverFailure(RuntimeError):
    """Structured failure: reports are written, exit code 2."""


class _Run:
    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.output)
        self.outputs: list[str] = []
        self.extra: dict = {}
        self.timings: dict = {}
        self._t0 = time.perf_counter()

    def tick(self, name: str) -> None:
        now = time.perf_counter()
        self.timings[name] = now - self._t0
        self._t0 = now

    def json(self, name: str, obj) -> None:
        write_json(self.out / name, obj)
        self.outputs.append(name)

    def field(self, name: str, values) -> None:
        write_field(self.out / name, values)
        self.outputs.append(name)

    def manifest(self, code: int) -> None:
        doc = {
            "command": self.command,
            "exit_code": code,
            "config": self.cfg.to_dict(),
            "versions": {
                "liouville": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "outputs": sorted(self.outputs),
        }
        doc.update(self.extra)
        write_json(self.out / "manifest.json", doc)
        write_json(self.out / "timings.json", {"command": self.command, "wall_time": self.timings})


# ---------------------------------------------------------------- setup


def _mesh(cfg: RunConfig):
    mesh = load_mesh(cfg.mesh_file) if cfg.mesh_file else generate(cfg.shape, cfg.refinement)
    entries = []
    for c in cfg.cones:
        v = int(c["vertex"]) if "vertex" in c else mesh.nearest_vertex(c["at"])
        entries.append((v, c["alpha"]))
    cones = ConeSet(entries) if entries else mesh.cones
    return mesh.with_cones(cones)


def _K(cfg: RunConfig, mesh):
    if cfg.K_file:
        K = read_field(cfg.K_file)
        if len(K) != mesh.n_vertices:
            raise ConfigError(f"K field has {len(K)} values for {mesh.n_vertices} vertices", "K_file")
        return K
    return cfg.K


def _problem(cfg: RunConfig, mesh, lam: float):
    return build_problem(mesh, lam, _K(cfg, mesh), mesh.cones, cfg.green_mode)


def _lam(cfg: RunConfig, mesh) -> float:
    return geometric_lambda(mesh) if cfg.lam is None else cfg.lam


def _tol(cfg: RunConfig, strategy: str) -> float:
    return DEFAULT_TOL[strategy] if cfg.tol is None else cfg.tol


def _mass_radius(cfg, data) -> float:
    return default_mass_radius(data) if cfg.mass_radius is None else cfg.mass_radius


# ---------------------------------------------------------------- commands


def cmd_classify(run: _Run) -> int:
    cfg = run.cfg
    mesh = _mesh(cfg)
    lam_geo = geometric_lambda(mesh)
    lam = _lam(cfg, mesh)
    top = 2 * abs(lam) if cfg.lam_max is None else cfg.lam_max
    report = {
        "euler_characteristic": singular_euler(mesh, ConeSet()),
        "singular_euler": singular_euler(mesh),
        "trudinger_constant": trudinger_constant(mesh.cones),
        "classification": classify(mesh),
        "geometric_lambda_over_pi": lam_geo / np.pi,
        "boundary_components": len(mesh.boundary_loops),
        "cones": [{"vertex": v, "alpha": a} for v, a in mesh.cones],
        "spectrum_lam_max_over_pi": top / np.pi,
        "spectrum": critical_values(mesh.cones, top).to_json(),
        "applicability": theorem_applicability(mesh, mesh.cones, lam).to_json(),
    }
    run.tick("classify")
    run.json("classify.json", report)
    _print(report)
    return EXIT_OK


def cmd_spectrum(run: _Run) -> int:
    cfg = run.cfg
    mesh = _mesh(cfg)
    top = cfg.lam_max
    if top is None:
        top = 2 * abs(_lam(cfg, mesh))
    spec = critical_values(mesh.cones, top).to_json()
    run.tick("spectrum")
    run.json("spectrum.json", spec)
    _print(spec)
    return EXIT_OK


def cmd_green(run: _Run) -> int:
    cfg = run.cfg
    mesh = _mesh(cfg)
    if cfg.pole is not None:
        pole = int(cfg.pole["vertex"]) if "vertex" in cfg.pole else mesh.nearest_vertex(cfg.pole["at"])
    elif len(mesh.cones):
        pole = mesh.cones.vertices[0]
    else:
        raise ConfigError("green needs a pole (config 'pole' or a cone)", "pole")
    ops = assemble(mesh)
    g = compute_green(mesh, ops, pole, mode=cfg.green_mode)
    run.tick("green")
    side = g.sidecar()
    side["mean"] = ops.mean(g.values)
    run.field("green.field", g.values)
    run.json("green.json", side)
    _print(side)
    return EXIT_OK


def _write_solution(run: _Run, data, rep, name: str = "solution") -> None:
    run.field(f"{name}.field", rep.solution)
    if data.lam != 0:
        metric = to_metric(data, rep.solution)
        run.field(f"{name}_u.field", metric.u)


def cmd_solve(run: _Run) -> int:
    cfg = run.cfg
    if cfg.strategy == "continue":
        return cmd_continue(run)
    mesh = _mesh(cfg)
    data = _problem(cfg, mesh, _lam(cfg, mesh))
    run.tick("setup")
    tol = _tol(cfg, cfg.strategy)
    r_mass = _mass_radius(cfg, data)
    if cfg.strategy == "min":
        rep = minimize(data, tol=tol, mass_radius=r_mass)
        run.tick("solve")
        run.json("report.json", rep.to_json())
        _write_solution(run, data, rep)
        _print(_summary(rep))
        if not rep.converged:
            raise SolverFailure(f"minimisation stopped with status {rep.status!r}")
        return EXIT_OK
    res = solve_minmax(
        data, cfg.k, cfg.grid_sigmas, cfg.grid_lambdas, tol, cfg.component, mass_radius=r_mass
    )
    run.tick("solve")
    run.json("report.json", res.to_json())
    run.extra["successful_starts"] = [s["index"] for s in res.starts if s["converged"]]
    run.extra["solution_starts"] = [s.start for s in res.solutions]
    for i, rep in enumerate(res.solutions):
        _write_solution(run, data, rep, f"solution_{i}")
    _print({"lambda_over_pi": data.lam / np.pi, "solutions": [_summary(s) for s in res.solutions]})
    if not res.ok:
        raise SolverFailure("no grid start converged")
    return EXIT_OK


def _path(cfg: RunConfig):
    if cfg.lambda_path is None:
        raise ConfigError("this command needs lambda_path a:b", "lambda_path")
    return cfg.lambda_path


def _continue(run: _Run):
    cfg = run.cfg
    mesh = _mesh(cfg)
    a, b = _path(cfg)
    data = _problem(cfg, mesh, a)
    run.tick("setup")
    res = continuation(data, a, b, StepPolicy(), tol=_tol(cfg, "continue"), mass_radius=_mass_radius(cfg, data))
    run.tick("continuation")
    run.json("continuation.json", res.to_json())
    last = res.reports[-1]
    _write_solution(run, data.with_lambda(last.lam), last)
    return data, res


def cmd_continue(run: _Run) -> int:
    _, res = _continue(run)
    _print({"status": res.status, "lambda_end_over_pi": res.lam_end / np.pi, "steps": len(res.reports)})
    if res.status in ("start_failed", "step_floor"):
        raise SolverFailure(f"continuation stopped: {res.status}")
    return EXIT_OK


def cmd_blowup(run: _Run) -> int:
    data, res = _continue(run)
    last = res.reports[-1]
    cur = data.with_lambda(last.lam)
    peaks = mass_spectrum(cur, last.solution, _mass_radius(run.cfg, cur))
    report = {
        "status": res.status,
        "lambda_over_pi": last.lam / np.pi,
        "max_v": last.max_v,
        "peaks": [p.to_json() for p in peaks],
    }
    run.json("mass_report.json", report)
    _print(report)
    if res.status in ("start_failed", "step_floor"):
        raise SolverFailure(f"continuation stopped: {res.status}")
    return EXIT_OK


def cmd_bubble(run: _Run) -> int:
    cfg = run.cfg
    mesh = _mesh(cfg)
    data = _problem(cfg, mesh, _lam(cfg, mesh))
    loop = mesh.boundary_loop(cfg.component)
    atoms = cfg.bubble_atoms
    if atoms is None:
        k = cfg.k or 1
        atoms = [{"vertex": int(loop[(i * len(loop)) // k]), "t": 1.0} for i in range(k)]
    pts = [int(a["vertex"]) if "vertex" in a else mesh.nearest_vertex(a["at"]) for a in atoms]
    sigma = BarycenterConfig.from_atoms([float(a.get("t", 1.0)) for a in atoms], pts)
    rep = bubble_energy_report(data, sigma, cfg.bubble_lambdas, cfg.component)
    run.tick("bubble")
    doc = rep.to_json()
    doc["sigma"] = sigma.to_json()
    run.json("bubble.json", doc)
    _print(doc)
    return EXIT_OK


def cmd_check(run: _Run) -> int:
    cfg = run.cfg
    if cfg.field_file is None:
        raise ConfigError("check needs field_file", "field_file")
    mesh = _mesh(cfg)
    data = _problem(cfg, mesh, _lam(cfg, mesh))
    v = read_field(cfg.field_file)
    if len(v) != mesh.n_vertices:
        raise ConfigError(f"field has {len(v)} values for {mesh.n_vertices} vertices", "field_file")
    v = data.ops.zero_mean(v)
    tol = _tol(cfg, cfg.strategy)
    res = residual(data, v)
    report = {
        "lambda_over_pi": data.lam / np.pi,
        "residual": res,
        "tolerance": tol,
        "passes": res <= tol,
        "log_integral": log_integral(data, v),
    }
    if data.lam != 0:
        metric = to_metric(data, v)
        kk = np.broadcast_to(np.asarray(_K(cfg, mesh), dtype=float), v.shape)
        cc = curvature_check(mesh, metric.u, metric.curvature_sign * kk)
        report["gauss_bonnet"] = {
            "total_mass": metric.total_mass,
            "target": abs(data.lam),
            "relative_error": abs(metric.total_mass - abs(data.lam)) / abs(data.lam),
        }
        report["curvature"] = {
            "max_error": cc.max_error,
            "max_relative_error": cc.max_relative_error,
            "median_error": float(np.median(np.abs(cc.curvature[cc.compared] - metric.curvature_sign * kk[cc.compared])))
            if cc.compared.any()
            else None,
            "vertices_compared": int(cc.compared.sum()),
        }
    run.tick("check")
    run.json("check.json", report)
    _print(report)
    if not report["passes"]:
        raise SolverFailure(f"residual {res:.3e} exceeds tolerance {tol:.1e}")
    return EXIT_OK


COMMANDS = {
    "classify": cmd_classify,
    "spectrum": cmd_spectrum,
    "green": cmd_green,
    "solve": cmd_solve,
    "continue": cmd_continue,
    "bubble": cmd_bubble,
    "blowup": cmd_blowup,
    "check": cmd_check,
}


# ---------------------------------------------------------------- plumbing


def _summary(rep) -> dict:
    return {
        "lambda_over_pi": rep.lam / np.pi,
        "converged": rep.converged,
        "status": rep.status,
        "residual": rep.residual,
        "J_value": rep.J_value,
        "iterations": rep.iterations,
        "max_v": rep.max_v,
    }


def _print(obj) -> None:
    sys.stdout.write(dumps(obj) + "\n")


def _fail(kind: str, message: str, key: str | None = None) -> None:
    err = {"error": kind, "message": message}
    if key is not None:
        err["key"] = key
    sys.stderr.write(json.dumps(err) + "\n")  # one line per failure


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", message)
        raise SystemExit(EXIT_USAGE)


def _cone_flag(text: str) -> dict:
    # VERTEX:ALPHA or X,Y:ALPHA (parametric position)
    where, _, alpha = text.rpartition(":")
    if not where:
        raise ConfigError(f"cone {text!r} must look like VERTEX:ALPHA or X,Y:ALPHA", "cones")
    if "," in where:
        return {"at": [float(x) for x in where.split(",")], "alpha": alpha}
    return {"vertex": int(where), "alpha": alpha}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="liouville", description="Singular mean-field Liouville equation on triangulated surfaces.")
    p.add_argument("--version", action="version", version=f"liouville {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--mesh", dest="mesh_file", help="mesh file")
        s.add_argument("--shape", choices=["disk", "cylinder", "pair_of_pants"])
        s.add_argument("--refinement", type=int)
        s.add_argument("--cone", action="append", dest="cone", help="VERTEX:ALPHA or X,Y:ALPHA (repeatable)")
        s.add_argument("--K", dest="K")
        s.add_argument("--K-file", dest="K_file")
        s.add_argument("--lambda", dest="lam", help="lambda, e.g. 4.8pi")
        s.add_argument("--lambda-path", dest="lambda_path", help="a:b")
        s.add_argument("--strategy", choices=["min", "minmax", "continue"])
        s.add_argument("--k", type=int)
        s.add_argument("--grid", help="SIGMAS:L1,L2,... for the bubble grid")
        s.add_argument("--tol", type=float)
        s.add_argument("--green-mode", dest="green_mode", choices=["split", "discrete_delta"])
        s.add_argument("--pole", help="VERTEX or X,Y")
        s.add_argument("--component", type=int)
        s.add_argument("--Lambdas", dest="bubble_lambdas", help="comma separated bubble scales")
        s.add_argument("--lam-max", dest="lam_max")
        s.add_argument("--mass-radius", dest="mass_radius", type=float)
        s.add_argument("--field", dest="field_file")
        s.add_argument("--out", dest="output")
        s.add_argument("--seed", type=int)
    return p


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else {}
    over = {}
    for key in (
        "mesh_file", "shape", "refinement", "K", "K_file", "lam", "lambda_path", "strategy", "k",
        "tol", "green_mode", "component", "lam_max", "mass_radius", "field_file", "output", "seed",
    ):
        value = getattr(args, key)
        if value is not None:
            over[key] = value
    if args.cone:
        over["cones"] = [_cone_flag(c) for c in args.cone]
    if args.grid:
        sig, _, lams = args.grid.partition(":")
        try:
            over["grid_sigmas"] = int(sig)
        except ValueError:
            raise ConfigError(f"grid {args.grid!r} must look like SIGMAS:L1,L2", "grid") from None
        if lams:
            over["grid_lambdas"] = [parse_real(x, "grid") for x in lams.split(",")]
    if args.bubble_lambdas:
        over["bubble_lambdas"] = [parse_real(x, "Lambdas") for x in args.bubble_lambdas.split(",")]
    if args.pole:
        parts = args.pole.split(",")
        over["pole"] = {"vertex": int(parts[0])} if len(parts) == 1 else {"at": [float(x) for x in parts]}
    base.update(over)
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ValueError as exc:
        _fail("config", str(exc), getattr(exc, "key", None))
        return EXIT_USAGE
    run = _Run(cfg, args.command)
    try:
        code = COMMANDS[args.command](run)
    except ConfigError as exc:
        _fail("config", str(exc), exc.key)
        code = EXIT_USAGE
    except (PreconditionError, CompatibilityError) as exc:
        _fail("precondition", str(exc))
        code = EXIT_USAGE
    except (MeshError, FileNotFoundError) as exc:
        _fail("input", str(exc))
        code = EXIT_USAGE
    except (SolverFailure, SolverError) as exc:
        _fail("solver", str(exc))
        code = EXIT_SOLVER
    except ValueError as exc:
        _fail("value", str(exc))
        code = EXIT_USAGE
    except Exception as exc:  # last resort: keep failures machine readable
        _fail("internal", f"{type(exc).__name__}: {exc}")
        code = EXIT_SOLVER
    try:
        run.manifest(code)
    except OSError as exc:
        _fail("output", str(exc))
        return EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
