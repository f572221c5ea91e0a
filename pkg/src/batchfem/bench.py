"""Command-line benchmark harness.

Subcommands ``verify``, ``spmv``, ``solvers``, ``direct`` and ``newton``
write one CSV row per (experiment, mesh, grid point, repetition) with the
fixed header :data:`CSV_HEADER`, plus a ``<out>.meta.json`` sidecar with the
configuration, the timing convention and per-group repetition minima.

Configuration is a JSON object whose keys are :class:`BenchConfig` fields;
command-line flags override the file. Exit status: 0 on success, 1 when a
verification check fails, 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import __version__
from .assembly import (
    apply_dirichlet,
    assemble_jacobian,
    assemble_residual,
    build_batches,
    coo_to_csr,
    precompute_sparsity,
)
from .backend import (
    CapabilityError,
    HandoffChannel,
    OperatorKind,
    explicit_operator,
    matrix_free_operator,
    solve_with_operator,
)
from .element import Material, Model, default_materials
from .krylov import PC, FactorizationError, Method, PreconditionerSetupError, SolverConfig, spmv
from .mesh import benchmark_bcs, generate_two_phase_mesh
from .newton import NewtonConfig, solve_bvp

__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "BenchConfig",
    "BenchRecord",
    "load_config",
    "cmd_spmv",
    "cmd_solvers",
    "cmd_direct",
    "cmd_newton",
    "cmd_verify",
    "write_csv",
    "main",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("experiment", "dof", "method", "pc", "operator", "converged", "iters", "time_s", "final_rres")
EXPERIMENTS = ("verify", "spmv", "solvers", "direct", "newton")
TIMING_NOTE = (
    "time_s is wall time of one repetition from time.perf_counter (monotonic); "
    "summaries report the minimum over repetitions"
)


class ConfigError(ValueError):
    """Invalid benchmark configuration (exit status 2)."""


def _default_grid():
    return [[m, p, "explicit"] for m, p in product(("cg", "gmres", "bicgstab"), ("none", "jacobi", "ilu0"))]


def _default_material_table():
    return {
        str(k): {"model": m.model.value, "E": m.E, "nu": m.nu} for k, m in default_materials().items()
    }


@dataclass
class BenchConfig:
    """Benchmark settings. Field names double as JSON config keys.

    ``grid`` lists ``[method, preconditioner, operator]`` triples for the
    ``solvers`` experiment. ``experiments`` is the selection run by
    :func:`run`; each subcommand narrows it to itself.
    """

    meshes: list = field(default_factory=lambda: [16, 32, 64])
    lx: float = 1.0
    ly: float = 1.0
    inclusion_radius: float = 0.3
    applied_strain: float = 0.01
    materials: dict = field(default_factory=_default_material_table)
    experiments: list = field(default_factory=lambda: list(EXPERIMENTS[1:]))
    grid: list = field(default_factory=_default_grid)
    rtol: float = 1e-13
    direct_rtol: float = 1e-10
    max_iter: int = 10_000
    gmres_restart: int = 30
    gmres_side: str = "left"
    spmv_products: int = 100
    newton_rtol: float = 1e-10
    newton_atol: float = 1e-14
    max_newton_iter: int = 25
    newton_method: str = "cg"
    newton_pc: str = "jacobi"
    newton_operators: list = field(default_factory=lambda: ["explicit", "matrix_free"])
    reps: int = 1
    seed: int = 0
    out: str | None = None
    parallel: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not self.meshes or any(int(n) < 1 for n in self.meshes):
            raise ConfigError("meshes must be a non-empty list of positive cell counts")
        if not self.grid:
            raise ConfigError("solver grid must be non-empty")
        unknown = set(self.experiments) - set(EXPERIMENTS)
        if unknown:
            raise ConfigError(f"unknown experiments {sorted(unknown)}")
        if self.spmv_products < 1:
            raise ConfigError("spmv_products must be >= 1")
        try:
            self.grid = [tuple(_grid_entry(e)) for e in self.grid]
            self.material_objects()
            self.newton_operators = [OperatorKind(k).value for k in self.newton_operators]
            self.linear_config(Method(self.newton_method), PC(self.newton_pc))
            self.newton_config(OperatorKind.EXPLICIT)
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        for method, pc, op in self.grid:
            if op is OperatorKind.MATRIX_FREE and (pc is PC.ILU0 or method.is_direct):
                raise ConfigError(
                    f"grid entry ({method.value}, {pc.value}, {op.value}) needs an assembled matrix"
                )

    def material_objects(self):
        mats = {}
        for key, spec in self.materials.items():
            spec = dict(spec)
            mats[int(key)] = Material(Model(spec.pop("model")), float(spec.pop("E")), float(spec.pop("nu")))
            if spec:
                raise ConfigError(f"unknown material keys {sorted(spec)} for phase {key}")
        return mats

    def linear_config(self, method, pc, rtol=None):
        return SolverConfig(
            method, pc, self.rtol if rtol is None else rtol, self.max_iter, self.gmres_restart, self.gmres_side
        )

    def newton_config(self, kind):
        return NewtonConfig(
            self.newton_rtol,
            self.newton_atol,
            self.max_newton_iter,
            self.linear_config(Method(self.newton_method), PC(self.newton_pc)),
            OperatorKind(kind),
        )

    def build_meshes(self):
        return [
            generate_two_phase_mesh(int(n), int(n), self.lx, self.ly, inclusion_radius=self.inclusion_radius)
            for n in self.meshes
        ]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["grid"] = [[m.value, p.value, o.value] for m, p, o in self.grid]
        return d


def _grid_entry(entry):
    if len(entry) != 3:
        raise ConfigError(f"grid entries are [method, pc, operator], got {entry!r}")
    return Method(entry[0]), PC(entry[1]), OperatorKind(entry[2])


def load_config(path=None, **overrides):
    """Read a JSON config (optional) and apply non-``None`` overrides."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(BenchConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        return BenchConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class BenchRecord:
    experiment: str
    dof: int
    method: str
    pc: str
    operator: str
    converged: bool
    iters: int
    time_s: float
    final_rres: float | None
    rep: int = 0

    def row(self):
        rres = "" if self.final_rres is None else f"{self.final_rres:.6e}"
        return [
            self.experiment, self.dof, self.method, self.pc, self.operator,
            str(self.converged).lower(), self.iters, f"{self.time_s:.6e}", rres,
        ]


@dataclass
class _Problem:
    """Benchmark system linearized at the undeformed state ``u0 = 0``."""

    mesh: object
    bcs: object
    batches: list
    pattern: object
    K: object
    b: np.ndarray

    @property
    def dof(self):
        return self.mesh.n_dof


def _problem(cfg, mesh):
    mats = cfg.material_objects()
    bcs = benchmark_bcs(mesh, cfg.applied_strain)
    batches = build_batches(mesh, mats)
    pattern = precompute_sparsity(batches, mesh.n_dof)
    u0 = np.zeros(mesh.n_dof)
    R = assemble_residual(batches, u0)
    K, r = apply_dirichlet(assemble_jacobian(batches, u0, pattern), R, bcs, u0)
    return _Problem(mesh, bcs, batches, pattern, K, -r)


def cmd_spmv(cfg):
    """Time ``spmv_products`` CSR products with a fixed random vector on each mesh."""
    rng = np.random.default_rng(cfg.seed)
    records = []
    for mesh in cfg.build_meshes():
        prob = _problem(cfg, mesh)
        csr = coo_to_csr(prob.K)
        x = rng.standard_normal(prob.dof)
        for rep in range(cfg.reps):
            t0 = time.perf_counter()
            for _ in range(cfg.spmv_products):
                y = spmv(csr, x)
            dt = time.perf_counter() - t0
            ok = bool(np.all(np.isfinite(y)))
            records.append(BenchRecord("spmv", prob.dof, "spmv", "none", "explicit", ok,
                                       cfg.spmv_products, dt, None, rep))
    return records


def _run_grid_point(prob, cfg, method, pc, kind, x0=None):
    """One linear solve; setup failures come back as a non-converged report-like tuple."""
    config = cfg.linear_config(method, pc)
    channel = HandoffChannel()
    t0 = time.perf_counter()
    buf = None
    try:
        if kind is OperatorKind.EXPLICIT:
            buf = channel.handoff(prob.K)
            op = explicit_operator(buf, prob.pattern)
        else:
            op = matrix_free_operator(prob.batches, np.zeros(prob.dof), prob.bcs, prob.dof)
        x, rep = solve_with_operator(op, prob.b, config, x0)
        return x, rep.converged, rep.iterations, time.perf_counter() - t0, rep.final_residual, rep.status
    except (PreconditionerSetupError, FactorizationError, CapabilityError) as exc:
        return None, False, 0, time.perf_counter() - t0, float("nan"), f"setup failed: {exc}"
    finally:
        if buf is not None:
            channel.release(buf)


def _warmup(cfg):
    # load the compiled kernels once so the first timed solve does not pay for it
    prob = _problem(cfg, generate_two_phase_mesh(1, 1))
    for method, pc in ((Method.CG, PC.ILU0), (Method.DIRECT_CHOL, PC.NONE), (Method.DIRECT_LU, PC.NONE)):
        _run_grid_point(prob, cfg, method, pc, OperatorKind.EXPLICIT)


def cmd_solvers(cfg):
    """Every grid point on every mesh at ``u0``, to ``cfg.rtol``. Failures are kept as records."""
    records = []
    _warmup(cfg)
    for mesh in cfg.build_meshes():
        prob = _problem(cfg, mesh)
        for method, pc, kind in cfg.grid:
            for rep in range(cfg.reps):
                _, ok, its, dt, rres, status = _run_grid_point(prob, cfg, method, pc, kind)
                if not ok:
                    log.info("solvers: %s/%s/%s on %d dof did not converge (%s)",
                             method.value, pc.value, kind.value, prob.dof, status)
                records.append(BenchRecord("solvers", prob.dof, method.value, pc.value, kind.value,
                                           ok, its, dt, rres, rep))
    return records


def cmd_direct(cfg, extra=None):
    """Banded Cholesky and LU on every mesh; solution agreement goes to ``extra``."""
    records = []
    agreement = []
    direct_cfg = dataclasses.replace(cfg, rtol=cfg.direct_rtol)
    _warmup(direct_cfg)
    for mesh in cfg.build_meshes():
        prob = _problem(cfg, mesh)
        sols = {}
        for method in (Method.DIRECT_CHOL, Method.DIRECT_LU):
            for rep in range(cfg.reps):
                x, ok, its, dt, rres, _ = _run_grid_point(prob, direct_cfg, method, PC.NONE, OperatorKind.EXPLICIT)
                sols[method] = x
                records.append(BenchRecord("direct", prob.dof, method.value, "none", "explicit",
                                           ok, its, dt, rres, rep))
        xc, xl = sols[Method.DIRECT_CHOL], sols[Method.DIRECT_LU]
        diff = float(np.abs(xc - xl).max()) if xc is not None and xl is not None else float("nan")
        agreement.append({"dof": prob.dof, "chol_lu_max_abs_diff": diff})
    if extra is not None:
        extra["direct_agreement"] = agreement
    return records


def cmd_newton(cfg, extra=None, iteration_log=None):
    """Full nonlinear solves under each configured operator kind with identical linear settings.

    ``iteration_log`` (a list) receives one dict per Newton iteration.
    """
    records = []
    agreement = []
    mats = cfg.material_objects()
    for mesh in cfg.build_meshes():
        bcs = benchmark_bcs(mesh, cfg.applied_strain)
        batches = build_batches(mesh, mats)
        finals = {}
        for kind in cfg.newton_operators:
            ncfg = cfg.newton_config(kind)
            for rep in range(cfg.reps):
                t0 = time.perf_counter()
                u, report = solve_bvp(mesh, mats, bcs, ncfg, batches=batches)
                dt = time.perf_counter() - t0
                finals[kind] = u
                norms = report.residual_norms
                rres = float(norms[-1] / norms[0]) if norms[0] > 0 else float(norms[-1])
                records.append(BenchRecord("newton", mesh.n_dof, ncfg.linear.method.value,
                                           ncfg.linear.preconditioner.value, kind, report.converged,
                                           report.newton_iterations, dt, rres, rep))
                if iteration_log is not None:
                    for k, nrm in enumerate(norms):
                        entry = {"dof": mesh.n_dof, "operator": kind, "rep": rep, "iteration": k,
                                 "residual_norm": float(nrm)}
                        if k > 0 and k - 1 < len(report.linear_reports):
                            lr = report.linear_reports[k - 1]
                            entry.update(linear_iterations=lr.iterations, linear_converged=lr.converged,
                                         linear_final_rres=lr.final_residual)
                        iteration_log.append(entry)
                    if not report.converged:
                        iteration_log.append({"dof": mesh.n_dof, "operator": kind, "rep": rep,
                                              "failed": report.message})
        if len(finals) == 2:
            a, b = finals.values()
            agreement.append({"dof": mesh.n_dof, "explicit_vs_matrix_free_max_abs_diff": float(np.abs(a - b).max())})
    if extra is not None:
        extra["newton_agreement"] = agreement
    return records


def cmd_verify(cfg=None, stream=None):
    """Run the oracle suite, print one line per check, return ``(all_passed, results)``."""
    from .verify import run_all

    stream = stream or sys.stdout
    parallel = bool(cfg.parallel) if cfg is not None else False
    results = run_all(parallel=parallel)
    for r in results:
        print(r.line(), file=stream)
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed", file=stream)
    return ok, results


def write_csv(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())


def summarize(records):
    """Repetition minima of ``time_s`` per (experiment, dof, method, pc, operator)."""
    groups = {}
    for r in records:
        key = (r.experiment, r.dof, r.method, r.pc, r.operator)
        g = groups.setdefault(key, {"min_time_s": r.time_s, "reps": 0, "all_converged": True})
        g["min_time_s"] = min(g["min_time_s"], r.time_s)
        g["reps"] += 1
        g["all_converged"] &= bool(r.converged)
    return [dict(zip(CSV_HEADER[:5], k), **v) for k, v in groups.items()]


def _metadata(cfg, command, records, extra):
    return {
        "command": command,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timing": TIMING_NOTE,
        "linearization_state": "undeformed (u = 0), Dirichlet data applied through the lift",
        "config": cfg.to_dict(),
        "summary": summarize(records),
        **extra,
    }


def _emit(cfg, command, records, extra, iteration_log):
    if cfg.out is None:
        write_csv(records, sys.stdout)
        return
    with open(cfg.out, "w", newline="") as fh:
        write_csv(records, fh)
    with open(cfg.out + ".meta.json", "w") as fh:
        json.dump(_metadata(cfg, command, records, extra), fh, indent=2)
    if iteration_log is not None:
        with open(cfg.out + ".newton.jsonl", "w") as fh:
            for entry in iteration_log:
                fh.write(json.dumps(entry) + "\n")


def run(cfg, command):
    """Run one experiment and write its outputs; returns the records."""
    extra, iteration_log = {}, None
    if command == "spmv":
        records = cmd_spmv(cfg)
    elif command == "solvers":
        records = cmd_solvers(cfg)
    elif command == "direct":
        records = cmd_direct(cfg, extra)
    elif command == "newton":
        iteration_log = []
        records = cmd_newton(cfg, extra, iteration_log)
    else:
        raise ConfigError(f"unknown experiment {command!r}")
    _emit(cfg, command, records, extra, iteration_log)
    return records


def _parser():
    p = argparse.ArgumentParser(prog="bench", description="Batched FEM assembly and solver benchmarks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file whose keys are BenchConfig fields")
        sp.add_argument("--out", help="CSV output path (default: stdout)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            sp.add_argument("--parallel", action="store_true", default=None,
                            help="run the independent checks on a thread pool")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, seed=args.seed, reps=args.reps, out=args.out,
                          parallel=getattr(args, "parallel", None))
        cfg.experiments = [args.command]
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    if args.command == "verify":
        buf = io.StringIO()
        ok, _ = cmd_verify(cfg, buf)
        sys.stdout.write(buf.getvalue())
        if cfg.out is not None:
            with open(cfg.out, "w") as fh:
                fh.write(buf.getvalue())
        return 0 if ok else 1

    try:
        run(cfg, args.command)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
