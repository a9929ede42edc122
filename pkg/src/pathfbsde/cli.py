"""Batch command line front end.

Each subcommand reads one TOML config, writes its outputs into a run
directory and finishes with ``manifest.json``.  Exit codes: 0 success,
2 non-convergence, 3 invalid config, 4 assumption violation under ``--strict``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path as FsPath
from typing import Any, Callable, Iterator, Sequence

import click
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .conditions import (
    SamplerConfig,
    check_g_monotonicity,
    check_monotonicity,
    estimate_g_lipschitz,
    estimate_path_lipschitz,
    estimate_u_lipschitz,
)
from .config import ConfigError, RunConfig, load_config
from .oracles import OracleError, oracle_functional
from .paths import Path, format_float
from .ppde import (
    PathFunctional,
    PPDEError,
    feynman_kac_check,
    ito_residual,
    lift_coefficients,
    ppde_residual,
    random_lifted_paths,
    residual_table_csv,
    ResidualRow,
)
from .solver import ContinuationSchedule, SolverError, solve_fbsde

EXIT_OK = 0
EXIT_NONCONVERGENCE = 2
EXIT_CONFIG = 3
EXIT_VIOLATION = 4


class RunDir:
    """Output directory plus the manifest bookkeeping for one run."""

    def __init__(self, root: FsPath, command: str, cfg: RunConfig, threads: int):
        self.root = root
        self.command = command
        self.cfg = cfg
        self.threads = threads
        self.timings: dict[str, float] = {}
        self.files: list[str] = []
        self.summary: dict[str, Any] = {}
        root.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - start

    def write(self, name: str, text: str) -> None:
        _atomic_write(self.root / name, text)
        if name not in self.files:
            self.files.append(name)

    def finish(self, status: int) -> None:
        inventory = {
            name: hashlib.sha256((self.root / name).read_bytes()).hexdigest() for name in sorted(self.files)
        }
        manifest = {
            "tool": "pathfbsde",
            "version": __version__,
            "command": self.command,
            "config": self.cfg.to_dict(),
            "threads": self.threads,
            "exit_status": status,
            "timings_seconds": self.timings,
            "summary": self.summary,
            "files": inventory,
        }
        _atomic_write(self.root / "manifest.json", json.dumps(manifest, indent=2, default=_json_default) + "\n")


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _atomic_write(path: FsPath, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _map(fn: Callable[[Any], Any], items: Sequence[Any], threads: int) -> list[Any]:
    """Order-preserving map; every item is computed independently of the others."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _prepare(config: str, output: str | None, seed: int | None) -> RunConfig:
    cfg = load_config(config)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if output is not None:
        cfg = replace(cfg, output_dir=output)
    return cfg


def _run(command: str, config: str, output: str | None, threads: int, seed: int | None, body: Callable) -> None:
    if threads < 1:
        click.echo("error: --threads must be at least 1", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        cfg = _prepare(config, output, seed)
    except ConfigError as exc:
        click.echo(f"invalid config: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    run = RunDir(FsPath(cfg.output_dir), command, cfg, threads)
    # BLAS is pinned to one thread so results never depend on --threads
    with threadpool_limits(limits=1):
        try:
            status = body(cfg, run)
        except (ConfigError, PPDEError, OracleError) as exc:
            click.echo(f"invalid config: {exc}", err=True)
            status = EXIT_CONFIG
        except SolverError as exc:
            click.echo(f"solver failed: {exc}", err=True)
            trace = getattr(exc, "trace", None)
            if trace is not None:
                run.write("trace.json", json.dumps(trace.to_dict(), indent=2, default=_json_default) + "\n")
            status = EXIT_NONCONVERGENCE
    run.finish(status)
    sys.exit(status)


def common_options(fn: Callable) -> Callable:
    fn = click.option("--seed", type=int, default=None, help="Override every seed in the config.")(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True, help="Worker threads (results do not depend on it).")(fn)
    fn = click.option("--output", type=click.Path(file_okay=False), default=None, help="Run directory (overrides output_dir).")(fn)
    fn = click.option("--config", "config", type=click.Path(dir_okay=False), required=True, help="TOML run config.")(fn)
    return fn


@click.group()
@click.version_option(__version__, prog_name="pathfbsde")
def main() -> None:
    """Numerical experiments for path-dependent coupled FBSDEs."""


# solve ------------------------------------------------------------------------


def _solve(cfg: RunConfig, run: RunDir) -> int:
    cs = cfg.coefficients()
    with run.phase("solve"):
        sol = solve_fbsde(cs, cfg.constants, cfg.discretization, np.array(cfg.x0), cfg.schedule)
    with run.phase("write"):
        run.write("solution.csv", sol.to_csv())
        run.write("trace.json", json.dumps(sol.diagnostics.to_dict(), indent=2, default=_json_default) + "\n")
    run.summary = {"y0": sol.y0, "y0_stderr": sol.y0_stderr, "l2_norms": sol.l2_norms()}
    parts = ", ".join(f"{format_float(v)} +/- {format_float(s)}" for v, s in zip(sol.y0, sol.y0_stderr))
    click.echo(f"y0 = {parts}")
    return EXIT_OK


@main.command()
@common_options
def solve(config: str, output: str | None, threads: int, seed: int | None) -> None:
    """Solve the configured FBSDE and write solution.csv and trace.json."""
    _run("solve", config, output, threads, seed, _solve)


# check ------------------------------------------------------------------------


def _check(cfg: RunConfig, run: RunDir, strict: bool) -> int:
    cs = cfg.coefficients()
    k = cfg.constants
    s = cfg.check
    sampler = SamplerConfig(num_steps=s.num_steps, horizon=cfg.discretization.horizon)
    reports = []
    with run.phase("check"):
        reports.append(estimate_path_lipschitz(cs, s.trials, s.seed, k.c1, sampler, run.threads))
        reports.append(estimate_u_lipschitz(cs, s.trials, s.seed, k.c1, sampler, run.threads))
        reports.append(estimate_g_lipschitz(cs, s.trials, s.seed, k.c1))
        reports.append(check_monotonicity(cs, k, s.trials, s.seed, sampler, run.threads))
        reports.append(check_g_monotonicity(cs, k.mu1, s.trials, s.seed))
    run.write("check_report.txt", "".join(r.to_text() + "\n" for r in reports))
    run.summary = {r.name: {"violations": r.violations, "estimated_constant": r.estimated_constant} for r in reports}
    for r in reports:
        click.echo(f"{r.name}: violations={r.violations} estimate={format_float(r.estimated_constant)}")
    total = sum(r.violations for r in reports)
    return EXIT_VIOLATION if strict and total else EXIT_OK


@main.command()
@common_options
@click.option("--strict", is_flag=True, help="Exit 4 when any sampled check is violated.")
def check(config: str, output: str | None, threads: int, seed: int | None, strict: bool) -> None:
    """Sample the Lipschitz and monotonicity assumptions; writes check_report.txt."""
    _run("check", config, output, threads, seed, lambda cfg, run: _check(cfg, run, strict))


# ppde -------------------------------------------------------------------------


def _functionals(cfg: RunConfig, d: int, n: int, m: int) -> tuple[PathFunctional, PathFunctional]:
    p = cfg.ppde
    if p.functional == "oracle":
        if cfg.problem != "example31":
            raise ConfigError("ppde.functional = 'oracle' is only available for problem example31")
        u, v = oracle_functional(p.ode_steps, offset=d)
        return replace(u, smoothness=p.smoothness), v
    const = np.full(m, p.constant)
    u = PathFunctional(lambda path: const, p.smoothness, name="constant_u")
    v = PathFunctional(lambda path: np.zeros(m * d), "C12", name="zero_v")
    return u, v


def _ppde(cfg: RunConfig, run: RunDir) -> int:
    cs = cfg.coefficients()
    p = cfg.ppde
    lc = lift_coefficients(cs)
    u, v = _functionals(cfg, cs.d, cs.n, cs.m)
    if u.smoothness != "C12":
        raise PPDEError(f"ppde.smoothness is {u.smoothness}; the residual requires C12")
    horizon = cfg.discretization.horizon
    with run.phase("residuals"):
        paths = random_lifted_paths(p.num_paths, cs.d, cs.n, p.grid_step, horizon, p.seed, x0=np.array(cfg.x0))

        def one(item: tuple[int, Path]) -> ResidualRow:
            i, path = item
            res, gap = ppde_residual(u, v, lc, path, p.eps)
            return ResidualRow(i, path.end_time, res, gap)

        rows = _map(one, list(enumerate(paths)), run.threads)
    run.write("ppde_residuals.csv", residual_table_csv(rows))
    worst = max(float(np.max(np.abs(r.residual))) for r in rows)
    run.summary = {"max_abs_residual": worst, "tolerance": p.tolerance, "within_tolerance": worst <= p.tolerance}
    click.echo(f"max |residual| = {format_float(worst)} (tolerance {format_float(p.tolerance)})")
    if worst > p.tolerance:
        click.echo("warning: residual above the configured tolerance", err=True)
    if p.feynman_kac:
        prefix = Path(np.concatenate([np.zeros(cs.d), np.array(cfg.x0)])[None, :], p.grid_step)
        with run.phase("feynman_kac"):
            rep = feynman_kac_check(u, cs, prefix, cfg.discretization, cfg.schedule, cfg.constants)
        run.summary["feynman_kac"] = {
            "t": rep.t,
            "u": rep.u_value,
            "y": rep.y_value,
            "stderr": rep.stderr,
            "gap": rep.gap,
            "within_2pct_or_3se": rep.within(),
        }
        click.echo(f"feynman-kac gap = {format_float(rep.gap)} (se {format_float(float(np.linalg.norm(rep.stderr)))})")
    return EXIT_OK


@main.command()
@common_options
def ppde(config: str, output: str | None, threads: int, seed: int | None) -> None:
    """P-PDE residual sweep and Feynman-Kac comparison; writes ppde_residuals.csv."""
    _run("ppde", config, output, threads, seed, _ppde)


# ito-demo ----------------------------------------------------------------------


def _square(p: Path) -> np.ndarray:
    return p.values[-1] ** 2


def _running_integral(p: Path) -> np.ndarray:
    return p.values[:-1].sum(axis=0) * p.grid_step


ITO_FUNCTIONALS = {
    "square": PathFunctional(_square, name="square"),
    "running_integral": PathFunctional(_running_integral, name="running_integral"),
}


def brownian_path(num_steps: int, horizon: float, seed: int, i: int) -> Path:
    rng = np.random.Generator(np.random.PCG64([seed, num_steps, i]))
    dt = horizon / num_steps
    vals = np.zeros(num_steps + 1)
    np.cumsum(rng.standard_normal(num_steps) * math.sqrt(dt), out=vals[1:])
    return Path(vals, dt)


def ito_table(
    num_steps: Sequence[int], num_paths: int, seed: int, bracket: str, horizon: float = 1.0, threads: int = 1
) -> list[dict[str, Any]]:
    """RMS and max Ito residual per functional and step count."""
    rows: list[dict[str, Any]] = []
    for name, f in ITO_FUNCTIONALS.items():
        prev = None
        for K in num_steps:
            dt = horizon / K
            model = np.eye(1) * dt if bracket == "model" else None
            res = np.array(
                _map(lambda i: ito_residual(f, brownian_path(K, horizon, seed, i), model_bracket=model), range(num_paths), threads)
            )
            rms = float(np.sqrt(np.mean(res**2)))
            rows.append(
                {
                    "functional": name,
                    "num_steps": K,
                    "num_paths": num_paths,
                    "rms_residual": rms,
                    "max_residual": float(res.max()),
                    "ratio_to_previous": prev / rms if prev is not None and rms > 0 else math.nan,
                }
            )
            prev = rms
    return rows


def _ito(cfg: RunConfig, run: RunDir) -> int:
    s = cfg.ito
    with run.phase("ito"):
        rows = ito_table(s.num_steps, s.num_paths, s.seed, s.bracket, cfg.discretization.horizon, run.threads)
    cols = ["functional", "num_steps", "num_paths", "rms_residual", "max_residual", "ratio_to_previous"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(format_float(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols))
    run.write("ito_table.csv", "\n".join(lines) + "\n")
    run.summary = {"rows": rows}
    for r in rows:
        click.echo(f"{r['functional']:>16} K={r['num_steps']:<4d} rms={r['rms_residual']:.3e}")
    return EXIT_OK


@main.command("ito-demo")
@common_options
def ito_demo(config: str, output: str | None, threads: int, seed: int | None) -> None:
    """Functional Ito formula residual table over several step counts; writes ito_table.csv."""
    _run("ito-demo", config, output, threads, seed, _ito)


if __name__ == "__main__":  # pragma: no cover
    main()
