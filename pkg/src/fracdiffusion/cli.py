"""Batch runner for convergence sweeps and fast/direct comparisons.

Usage::

    fracdiffusion run --config sweep.yaml --out results/
    fracdiffusion compare --config compare.yaml --out results/
    fracdiffusion w2 --out results/

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 failed
check (``--verify`` oracle mismatch or a fast/direct disagreement).
"""

from __future__ import annotations

import argparse
import dataclasses
import importlib.util
import logging
import math
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError, FracDiffusionError
from .kernels import alpha0, w2_value
from .krylov import SolveConfig
from .problems import (
    ManufacturedProblem,
    compute_errors,
    convergence_rate,
    example1,
    example2,
    exampleA1,
    run_problem,
)

__all__ = [
    "COLUMNS",
    "COMPARE_COLUMNS",
    "ExperimentConfig",
    "ResultRow",
    "load_config",
    "parse_config",
    "run_experiment",
    "compare_schemes",
    "write_table",
    "main",
]

log = logging.getLogger(__name__)

COLUMNS = ("example", "gamma", "alpha", "b", "p", "scheme", "precond", "N", "M",
           "err_inf", "rate_inf", "err_l2", "rate_l2", "iters_avg", "wall_s", "mem_bytes")
COMPARE_COLUMNS = ("example", "gamma", "alpha", "b", "p", "N", "M",
                   "err_inf_direct", "err_l2_direct", "wall_s_direct",
                   "err_inf_fast", "err_l2_fast", "wall_s_fast",
                   "n_exp", "max_diff", "agree")

AXES = ("temporal", "spatial", "coupled")
NORMS = ("auto", "all_levels", "final_time")
_TOP_KEYS = {"example", "params", "xi", "sweep", "scheme", "solver", "soe_epsilon",
             "norms", "repeats", "output", "compare"}


class RunFailure(FracDiffusionError):
    """A solve inside a sweep failed; the message names the run."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (see README for the file format)."""

    example: str
    params: tuple
    axis: str
    N: tuple
    M: tuple
    scheme: str = "direct"
    solver: SolveConfig = SolveConfig()
    soe_epsilon: float = 1e-9
    xi: float = 5.0
    norms: str = "auto"
    rounding: str = "ceil"
    repeats: int = 3
    table: str = "results.csv"
    plot: bool = False
    compare_bound: float = 1e-5

    def grid(self, gamma: float):
        """``(N, M)`` pairs of the sweep, in row order."""
        if self.axis == "temporal":
            return [(self.N[0], m) for m in self.M]
        if self.axis == "spatial":
            return [(n, self.M[0]) for n in self.N]
        rnd = math.ceil if self.rounding == "ceil" else math.floor
        return [(int(rnd(2 * m ** ((2 - gamma) / 2))), m) for m in self.M]


@dataclass
class ResultRow:
    example: str
    gamma: float
    alpha: float
    b: float
    p: float
    scheme: str
    precond: str
    N: int
    M: int
    err_inf: float
    rate_inf: Optional[float]
    err_l2: float
    rate_l2: Optional[float]
    iters_avg: float
    wall_s: Optional[float]
    mem_bytes: int
    step: float = math.nan  # h or tau of the swept axis, for plot files


# --------------------------------------------------------------------------
# configuration


def _line_map(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers of a YAML document."""
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                sub = f"{path}.{k.value}" if path else str(k.value)
                lines[sub] = k.start_mark.line + 1
                walk(v, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                sub = f"{path}[{i}]"
                lines[sub] = v.start_mark.line + 1
                walk(v, sub)

    try:
        walk(yaml.compose(text), "")
    except yaml.YAMLError:
        pass
    return lines


def _as_list(value, name, cast):
    if value is None:
        return ()
    items = value if isinstance(value, (list, tuple)) else [value]
    try:
        return tuple(cast(v) for v in items)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{name}': expected {cast.__name__} value(s), got {value!r}")


def parse_config(data: dict, lines: Optional[dict] = None) -> ExperimentConfig:
    """Validate a decoded config mapping; errors name the field and line."""
    lines = lines or {}

    def fail(path, message):
        where = f" (line {lines[path]})" if path in lines else ""
        raise ConfigError(f"field '{path}'{where}: {message}")

    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        fail(unknown[0], f"unknown key; allowed keys are {sorted(_TOP_KEYS)}")
    if "example" not in data:
        raise ConfigError("field 'example': required")
    example = str(data["example"])

    raw_params = data.get("params")
    if isinstance(raw_params, dict):
        raw_params = [raw_params]
    if not raw_params:
        fail("params", "at least one parameter set is required")
    params = []
    for i, ps in enumerate(raw_params):
        if not isinstance(ps, dict):
            fail(f"params[{i}]", "expected a mapping with gamma, alpha, b, p")
        missing = {"gamma", "alpha", "b", "p"} - set(ps)
        if missing:
            fail(f"params[{i}]", f"missing {sorted(missing)}")
        try:
            params.append({k: float(ps[k]) for k in ("gamma", "alpha", "b", "p")})
        except (TypeError, ValueError):
            fail(f"params[{i}]", "gamma, alpha, b, p must be numbers")

    sweep = data.get("sweep")
    if not isinstance(sweep, dict):
        fail("sweep", "required mapping with axis, N and/or M")
    axis = sweep.get("axis", "temporal")
    if axis not in AXES:
        fail("sweep.axis", f"must be one of {AXES}")
    Ns = _as_list(sweep.get("N"), "sweep.N", int)
    Ms = _as_list(sweep.get("M"), "sweep.M", int)
    need = {"temporal": (len(Ns) == 1, len(Ms) >= 1), "spatial": (len(Ns) >= 1, len(Ms) == 1),
            "coupled": (True, len(Ms) >= 1)}[axis]
    if not need[0]:
        fail("sweep.N", f"{axis} sweep needs {'one N' if axis == 'temporal' else 'a nonempty N list'}")
    if not need[1]:
        fail("sweep.M", f"{axis} sweep needs {'one M' if axis == 'spatial' else 'a nonempty M list'}")
    rounding = sweep.get("rounding", "ceil")
    if rounding not in ("ceil", "floor"):
        fail("sweep.rounding", "must be 'ceil' or 'floor'")

    scheme = data.get("scheme", "direct")
    if scheme not in ("direct", "fast"):
        fail("scheme", "must be 'direct' or 'fast'")
    solver_raw = data.get("solver") or {}
    allowed = {f.name for f in dataclasses.fields(SolveConfig)}
    bad = sorted(set(solver_raw) - allowed)
    if bad:
        fail(f"solver.{bad[0]}", f"unknown solver option; allowed {sorted(allowed)}")
    casts = {"rtol": float, "max_iter": int, "bandwidth": int, "preconditioner": str,
             "use_gsf": bool, "direct": bool}
    try:
        solver = SolveConfig(**{k: casts[k](v) for k, v in solver_raw.items()})
    except (TypeError, ValueError) as exc:
        fail("solver", str(exc))

    norms = data.get("norms", "auto")
    if norms not in NORMS:
        fail("norms", f"must be one of {NORMS}")
    output = data.get("output") or {}
    compare = data.get("compare") or {}
    try:
        cfg = ExperimentConfig(
            example=example, params=tuple(params), axis=axis, N=Ns, M=Ms, scheme=scheme,
            solver=solver, soe_epsilon=float(data.get("soe_epsilon", 1e-9)),
            xi=float(data.get("xi", 5.0)), norms=norms, rounding=rounding,
            repeats=int(data.get("repeats", 3)), table=str(output.get("table", "results.csv")),
            plot=bool(output.get("plot", False)), compare_bound=float(compare.get("bound", 1e-5)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value: {exc}")
    if cfg.repeats < 1:
        fail("repeats", "must be >= 1")
    if any(n < 5 for n in cfg.N) or any(m < 1 for m in cfg.M):
        fail("sweep", "N must be >= 5 and M >= 1")
    if example in ("2",) and axis == "coupled":
        fail("sweep.axis", "two-grid error estimation needs a temporal or spatial sweep")
    _problem_factory(cfg)  # reject unknown examples early
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"cannot parse {path}{where}: {getattr(exc, 'problem', exc)}")
    return parse_config(data, _line_map(text))


def _problem_factory(cfg: ExperimentConfig):
    ex = cfg.example
    if ex == "1":
        return example1
    if ex in ("A1", "a1"):
        return exampleA1
    if ex == "2":
        return lambda g, a, b, p: example2(g, a, b, p, cfg.xi)
    path = Path(ex)
    if path.suffix == ".py" and path.exists():
        spec = importlib.util.spec_from_file_location(path.stem, path)
        mod = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(mod)
        if not hasattr(mod, "make_problem"):
            raise ConfigError(f"field 'example': {ex} defines no make_problem(gamma, alpha, b, p)")
        return mod.make_problem
    raise ConfigError(f"field 'example': expected 1, 2, A1 or a .py file, got {ex!r}")


# --------------------------------------------------------------------------
# running


def _run(problem, N, M, scheme, cfg: ExperimentConfig, repeats: int):
    try:
        field_, report = run_problem(problem, N, M, scheme, cfg.solver, cfg.soe_epsilon)
        times = [report.wall_time]
        for _ in range(repeats - 1):
            times.append(run_problem(problem, N, M, scheme, cfg.solver, cfg.soe_epsilon)[1].wall_time)
    except FracDiffusionError as exc:
        pars = problem.params
        raise RunFailure(
            f"run failed for example={problem.example} gamma={pars['gamma']} alpha={pars['alpha']} "
            f"b={pars['b']} p={pars['p']} scheme={scheme} N={N} M={M}: {exc}"
        ) from exc
    return field_, report, statistics.median(times)


def _execute(jobs, threads):
    if threads <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: job(), jobs))


def run_experiment(cfg: ExperimentConfig, threads: int = 1, timings: bool = True) -> list:
    """Run every parameter set of the sweep; one :class:`ResultRow` per grid."""
    factory = _problem_factory(cfg)
    repeats = cfg.repeats if timings else 1
    rows = []
    for pars in cfg.params:
        problem: ManufacturedProblem = factory(pars["gamma"], pars["alpha"], pars["b"], pars["p"])
        grid = cfg.grid(pars["gamma"])
        two_grid = problem.exact is None
        if two_grid:
            refined = [(2 * n, m) if cfg.axis == "spatial" else (n, 2 * m) for n, m in grid]
            needed = list(dict.fromkeys(grid + refined))
        else:
            needed = grid
        jobs = [lambda n=n, m=m, r=(repeats if (n, m) in grid else 1):
                _run(problem, n, m, cfg.scheme, cfg, r) for n, m in needed]
        results = dict(zip(needed, _execute(jobs, threads)))

        norms = cfg.norms if cfg.norms != "auto" else ("final_time" if two_grid else "all_levels")
        prev = None
        for k, (n, m) in enumerate(grid):
            field_, report, wall = results[(n, m)]
            ref = results[refined[k]][0] if two_grid else problem
            err = compute_errors(field_, ref)
            e_inf, e_l2 = ((err.final_inf, err.final_l2) if norms == "final_time"
                           else (err.error_inf, err.error_l2))
            rate_inf = rate_l2 = None
            if prev is not None:
                ratio = (n / prev[0]) if cfg.axis == "spatial" else (m / prev[1])
                if ratio > 1 and e_inf > 0 and prev[2] > 0:
                    rate_inf = convergence_rate(prev[2], e_inf, ratio)
                    rate_l2 = convergence_rate(prev[3], e_l2, ratio)
            prev = (n, m, e_inf, e_l2)
            rows.append(ResultRow(
                problem.example, pars["gamma"], pars["alpha"], pars["b"], pars["p"],
                cfg.scheme, "dense_lu" if report.path == "direct" else
                ("gsf" if report.path == "gsf" else cfg.solver.preconditioner),
                n, m, e_inf, rate_inf, e_l2, rate_l2, report.iters_avg,
                wall if timings else None, report.mem_bytes,
                step=(field_.x[1] - field_.x[0]) if cfg.axis == "spatial" else (field_.t[1] - field_.t[0]),
            ))
    return rows


def compare_schemes(cfg: ExperimentConfig, threads: int = 1, timings: bool = True) -> list:
    """Direct and fast runs side by side; each row records whether they agree."""
    factory = _problem_factory(cfg)
    repeats = cfg.repeats if timings else 1
    rows = []
    for pars in cfg.params:
        problem = factory(pars["gamma"], pars["alpha"], pars["b"], pars["p"])
        if not problem.spec.lam.is_exponential:
            raise ConfigError("compare needs lambda(t) = exp(-b t)")
        grid = cfg.grid(pars["gamma"])
        jobs = [lambda n=n, m=m, s=s: _run(problem, n, m, s, cfg, repeats)
                for n, m in grid for s in ("direct", "fast")]
        out = _execute(jobs, threads)
        for k, (n, m) in enumerate(grid):
            (fd, rd, td), (ff, rf, tf) = out[2 * k], out[2 * k + 1]
            diff = float(np.max(np.abs(fd.u - ff.u)))
            if problem.exact is not None:
                ed, ef = compute_errors(fd, problem), compute_errors(ff, problem)
                vals = (ed.error_inf, ed.error_l2, ef.error_inf, ef.error_l2)
            else:
                vals = (math.nan,) * 4
            rows.append(dict(
                example=problem.example, gamma=pars["gamma"], alpha=pars["alpha"], b=pars["b"],
                p=pars["p"], N=n, M=m, err_inf_direct=vals[0], err_l2_direct=vals[1],
                wall_s_direct=td if timings else None, err_inf_fast=vals[2], err_l2_fast=vals[3],
                wall_s_fast=tf if timings else None, n_exp=rf.n_exp, max_diff=diff,
                agree=diff <= cfg.compare_bound,
            ))
    return rows


# --------------------------------------------------------------------------
# output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6e}" if value == value else "nan"
    return str(value)


def _fmt_param(value: float) -> str:
    return f"{value:.7g}"


def write_table(rows, path, columns=COLUMNS) -> Path:
    """Comma-separated table with a fixed header; floats carry 7 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        rec = dataclasses.asdict(row) if dataclasses.is_dataclass(row) else row
        cells = []
        for c in columns:
            v = rec[c]
            cells.append(_fmt_param(v) if c in ("gamma", "alpha", "b", "p") else _fmt(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_plot_data(rows, path, axis: str) -> Path:
    """Whitespace-separated ``step err_inf err_l2`` blocks, one per parameter set."""
    path = Path(path)
    out = [f"# error versus {'h' if axis == 'spatial' else 'tau'}; blocks separated by blank lines"]
    key = None
    for r in rows:
        k = (r.gamma, r.alpha, r.b, r.p)
        if k != key:
            if key is not None:
                out.append("")
            out.append(f"# gamma={r.gamma:g} alpha={r.alpha:g} b={r.b:g} p={r.p:g}")
            out.append("# step err_inf err_l2")
            key = k
        out.append(f"{r.step:.6e} {r.err_inf:.6e} {r.err_l2:.6e}")
    path.write_text("\n".join(out) + "\n")
    return path


def write_w2_curve(path, points: int = 201) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    alphas = np.linspace(1.0, 2.0, points)[1:]
    out = [f"# w2(alpha); sign change at alpha0 = {alpha0():.10f}", "# alpha w2"]
    out += [f"{a:.6f} {w2_value(a):.10e}" for a in alphas]
    path.write_text("\n".join(out) + "\n")
    return path


# --------------------------------------------------------------------------
# verification


def verify(cfg: ExperimentConfig, seed: int = 0) -> list:
    """Dense-oracle and fast/direct cross-checks on a small grid; returns failures."""
    from .reference import dense_reference_solve

    factory = _problem_factory(cfg)
    rng = np.random.default_rng(seed)
    failures = []
    N, M = 17, 8
    for pars in cfg.params:
        problem = factory(pars["gamma"], pars["alpha"], pars["b"], pars["p"])
        target = problem.auxiliary or problem.spec
        ref = dense_reference_solve(target, N, M)
        solver = dataclasses.replace(cfg.solver, rtol=min(cfg.solver.rtol, 1e-13))
        f, _ = run_problem(dataclasses.replace(problem, correction=None), N, M, "direct", solver)
        err = float(np.max(np.abs(f.u - ref)))
        log.info("verify %s %s: dense oracle difference %.2e", problem.example, pars, err)
        if err > 1e-10:
            failures.append(f"dense oracle mismatch {err:.3e} for {pars}")
        if cfg.scheme == "fast" and target.lam.is_exponential:
            ff, _ = run_problem(dataclasses.replace(problem, correction=None), N, M, "fast", solver)
            diff = float(np.max(np.abs(ff.u - f.u)))
            if diff > cfg.compare_bound:
                failures.append(f"fast/direct difference {diff:.3e} for {pars}")
        # a random probe vector exercises the structured operator against dense assembly
        from .solver import discretize
        from .toeplitz import SystemOperator

        disc = discretize(target, N, M)
        xs = disc.interior
        xi = np.asarray(target.xi(xs, disc.t[1]), dtype=float) * np.ones_like(xs)
        op = SystemOperator.build(disc.l1.c[0], disc.h, target.alpha, target.p, xi, disc.w)
        v = rng.standard_normal(op.n)
        mv = float(np.max(np.abs(op.apply(v) - op.to_dense() @ v)) / np.max(np.abs(op.to_dense() @ v)))
        if mv > 1e-12:
            failures.append(f"structured matvec mismatch {mv:.3e} for {pars}")
    return failures


# --------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracdiffusion", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run a convergence sweep"),
                           ("compare", "compare the direct and fast schemes")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="independent runs executed concurrently")
        p.add_argument("--tol", type=float, default=None, help="override the BiCGSTAB rtol")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
        p.add_argument("--verify", action="store_true", help="dense-oracle cross-checks first")
        p.add_argument("--no-timings", action="store_true",
                       help="leave wall_s empty and skip timing repeats (byte-identical output)")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("w2", help="write the w2(alpha) curve as a data file")
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--points", type=int, default=201)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "w2":
        print(write_w2_curve(args.out / "w2_curve.dat", args.points))
        return 0

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.tol is not None:
            cfg = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, rtol=args.tol))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.verify:
            failures = verify(cfg, args.seed)
            for msg in failures:
                print(f"verify failed: {msg}", file=sys.stderr)
            if failures:
                return 4
        timings = not args.no_timings
        if args.command == "run":
            rows = run_experiment(cfg, args.threads, timings)
            path = write_table(rows, args.out / cfg.table)
            if cfg.plot:
                write_plot_data(rows, path.with_suffix(".plot.dat"), cfg.axis)
            print(path)
            return 0
        rows = compare_schemes(cfg, args.threads, timings)
        path = write_table(rows, args.out / cfg.table, COMPARE_COLUMNS)
        print(path)
        bad = [r for r in rows if not r["agree"]]
        for r in bad:
            print(f"fast/direct disagreement {r['max_diff']:.3e} > {cfg.compare_bound:g} at "
                  f"gamma={r['gamma']} alpha={r['alpha']} N={r['N']} M={r['M']}", file=sys.stderr)
        return 4 if bad else 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FracDiffusionError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
