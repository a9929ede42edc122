"""Sampling-based estimators for the integral Lipschitz and monotonicity conditions.

Sampling cannot prove a universally quantified inequality.  The samplers below
draw from structured families chosen to expose the usual failure modes, and
the reports are estimates.  Trial ``i`` is generated from its own seed
``(seed, i)``, so a report over ``N`` trials is a prefix of any longer run and
does not depend on chunking or thread count.

Path pairs are ``x2 = x1 + perturbation`` with ``x1`` a scaled Brownian path
and the perturbation drawn from one of three families (cycled by trial index):
an independent Brownian path, a single-point bump at a random grid index, or a
low-frequency sinusoid.  Controls are independent Gaussians per grid point.
Time integrals are left-endpoint Riemann sums on the sampler grid.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .coefficients import CoefficientSet, PathState, assemble_f_batch
from .paths import left_riemann

Array = NDArray[np.float64]

PATH_FAMILIES = ("brownian", "bump", "sinusoid")
CONTROL_FAMILIES = ("independent", "x_only", "u_only")
CHUNK = 2048


@dataclass(frozen=True)
class AssumptionConstants:
    c1: float = 1.0
    beta1: float = 1.0
    beta2: float = 1.0
    mu1: float = 1.0

    def __post_init__(self) -> None:
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("beta1 and beta2 must be nonnegative")
        if not self.beta1 + self.beta2 > 0:
            raise ValueError("beta1 + beta2 must be positive")
        if not self.mu1 + self.beta2 > 0:
            raise ValueError("mu1 + beta2 must be positive")

    def validate_dims(self, n: int, m: int) -> None:
        if m > n and not (self.beta1 > 0 and self.mu1 > 0):
            raise ValueError("m > n requires beta1 > 0 and mu1 > 0")
        if n > m and not (self.beta2 > 0 and self.mu1 > 0):
            raise ValueError("n > m requires beta2 > 0 and mu1 > 0")


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one sampled check.

    For Lipschitz estimators ``estimated_constant`` is the largest observed
    ratio and ``worst_margin`` the smallest ``c1 * rhs - lhs`` (NaN when no
    reference constant was given).  For monotonicity checks
    ``estimated_constant`` is the smallest observed ratio of the bracket
    integral to the coercivity integral and ``worst_margin`` the smallest slack.
    """

    name: str
    trials: int
    violations: int
    worst_margin: float
    estimated_constant: float
    sampler_seed: int
    skipped: int = 0

    def to_text(self) -> str:
        lines = [f"[{self.name}]"]
        for key in ("trials", "violations", "skipped", "worst_margin", "estimated_constant", "sampler_seed"):
            val = getattr(self, key)
            lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 50
    horizon: float = 1.0
    amplitude: float = 1.0
    perturbation: float = 0.5
    control_scale: float = 1.0


# sampling ----------------------------------------------------------------------


def _trial_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, i]))


def _brownian(rng: np.random.Generator, K: int, n: int, dt: float) -> Array:
    out = np.zeros((K + 1, n))
    np.cumsum(rng.standard_normal((K, n)) * math.sqrt(dt), axis=0, out=out[1:])
    return out


def _perturbation(rng: np.random.Generator, family: str, K: int, n: int, cfg: SamplerConfig) -> Array:
    dt = cfg.horizon / cfg.num_steps
    if family == "brownian":
        return cfg.perturbation * _brownian(rng, K, n, dt)
    if family == "bump":
        out = np.zeros((K + 1, n))
        out[rng.integers(0, K)] = cfg.perturbation * rng.standard_normal(n)
        return out
    t = np.arange(K + 1) * dt / cfg.horizon
    freq = rng.choice([0.5, 1.0, 2.0, 3.0])
    phase = rng.uniform(0.0, 2.0 * math.pi)
    amp = cfg.perturbation * rng.standard_normal(n)
    return amp[None, :] * np.sin(2.0 * math.pi * freq * t + phase)[:, None]


def _sample_pair(cs: CoefficientSet, seed: int, i: int, cfg: SamplerConfig) -> tuple[Array, ...]:
    """One structured trial: paths ``x1, x2`` and controls ``y1, z1, y2, z2`` on the grid."""
    rng = _trial_rng(seed, i)
    K, n, m, d = cfg.num_steps, cs.n, cs.m, cs.d
    dt = cfg.horizon / K
    fam = PATH_FAMILIES[i % 3]
    ctrl = CONTROL_FAMILIES[(i // 3) % 3]
    x1 = rng.standard_normal(n) + cfg.amplitude * _brownian(rng, K, n, dt)
    x2 = x1 + _perturbation(rng, fam, K, n, cfg)
    y1 = cfg.control_scale * rng.standard_normal((K + 1, m))
    z1 = cfg.control_scale * rng.standard_normal((K + 1, m, d))
    y2 = cfg.control_scale * rng.standard_normal((K + 1, m))
    z2 = cfg.control_scale * rng.standard_normal((K + 1, m, d))
    if ctrl == "x_only":
        y2, z2 = y1.copy(), z1.copy()
    elif ctrl == "u_only":
        x2 = x1.copy()
    return x1, x2, y1, z1, y2, z2


def _stack(cs: CoefficientSet, seed: int, lo: int, hi: int, cfg: SamplerConfig) -> list[Array]:
    samples = [_sample_pair(cs, seed, i, cfg) for i in range(lo, hi)]
    return [np.stack(col, axis=1) for col in zip(*samples)]  # each (K+1, batch, ...)


def _f_along(cs: CoefficientSet, x: Array, y: Array, z: Array, dt: float) -> tuple[Array, Array, Array]:
    """Assembled ``f`` at every grid time; inputs are ``(K+1, B, ...)``."""
    A = left_riemann(x, dt)
    parts = [assemble_f_batch(cs, PathState(k * dt, x[k], A[k], k), y[k], z[k]) for k in range(x.shape[0])]
    return tuple(np.stack(p) for p in zip(*parts))  # type: ignore[return-value]


def _chunked(trials: int, fn: Callable[[int, int], tuple[Array, ...]], threads: int) -> list[Array]:
    bounds = [(lo, min(lo + CHUNK, trials)) for lo in range(0, trials, CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    else:
        parts = [fn(*b) for b in bounds]
    return [np.concatenate(col) for col in zip(*parts)]


def _sqnorm(a: Array, axes: tuple[int, ...]) -> Array:
    return np.sum(a * a, axis=axes)


def _lipschitz_report(name: str, lhs: Array, rhs: Array, seed: int, c1: float | None) -> CheckReport:
    ok = rhs > 0
    ratios = lhs[ok] / rhs[ok]
    est = float(ratios.max()) if ratios.size else 0.0
    if c1 is None:
        violations, margin = 0, float("nan")
    else:
        slack = c1 * rhs[ok] - lhs[ok]
        tol = 1e-10 * (1.0 + np.abs(c1 * rhs[ok]) + np.abs(lhs[ok]))
        violations = int(np.sum(slack < -tol))
        margin = float(slack.min()) if slack.size else 0.0
    return CheckReport(name, int(lhs.size), violations, margin, est, seed, int(np.sum(~ok)))


# estimators --------------------------------------------------------------------


def estimate_path_lipschitz(
    cs: CoefficientSet,
    trials: int,
    seed: int,
    c1: float | None = None,
    cfg: SamplerConfig | None = None,
    threads: int = 1,
) -> CheckReport:
    """Largest ``int |f(x1, u1) - f(x2, u1)|^2 dt / int |x1 - x2|^2 dt`` over sampled pairs."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = cfg or SamplerConfig()
    dt = cfg.horizon / cfg.num_steps

    def run(lo: int, hi: int) -> tuple[Array, Array]:
        x1, x2, y1, z1, _, _ = _stack(cs, seed, lo, hi, cfg)
        f1 = _f_along(cs, x1, y1, z1, dt)
        f2 = _f_along(cs, x2, y1, z1, dt)
        diff = sum(_sqnorm((a - b)[:-1], tuple(range(2, a.ndim))) for a, b in zip(f1, f2))
        lhs = np.sum(diff, axis=0) * dt
        rhs = np.sum(_sqnorm((x1 - x2)[:-1], (2,)), axis=0) * dt
        return lhs, rhs

    lhs, rhs = _chunked(trials, run, threads)
    return _lipschitz_report("path_lipschitz", lhs, rhs, seed, c1)


def estimate_u_lipschitz(
    cs: CoefficientSet,
    trials: int,
    seed: int,
    c1: float | None = None,
    cfg: SamplerConfig | None = None,
    threads: int = 1,
) -> CheckReport:
    """Largest pointwise ``|f(x, u1) - f(x, u2)| / |u1 - u2|`` at sampled times.

    Control pairs cycle through joint, ``y``-only and ``z``-only perturbations.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = cfg or SamplerConfig()
    K, dt = cfg.num_steps, cfg.horizon / cfg.num_steps

    def run(lo: int, hi: int) -> tuple[Array, Array]:
        x1, _, y1, z1, y2, z2 = _stack(cs, seed, lo, hi, cfg)
        B = hi - lo
        idx = np.array([_trial_rng(seed, i).integers(0, K + 1) for i in range(lo, hi)])
        kind = np.arange(lo, hi) % 3
        y2 = np.where((kind == 2)[None, :, None], y1, y2)
        z2 = np.where((kind == 1)[None, :, None, None], z1, z2)
        f1 = _f_along(cs, x1, y1, z1, dt)
        f2 = _f_along(cs, x1, y2, z2, dt)
        cols = np.arange(B)
        num = np.sqrt(sum(_sqnorm((a - b)[idx, cols], tuple(range(1, a.ndim - 1))) for a, b in zip(f1, f2)))
        den = np.sqrt(_sqnorm((y1 - y2)[idx, cols], (1,)) + _sqnorm((z1 - z2)[idx, cols], (1, 2)))
        return num, den

    num, den = _chunked(trials, run, threads)
    return _lipschitz_report("u_lipschitz", num, den, seed, c1)


def estimate_g_lipschitz(
    cs: CoefficientSet, trials: int, seed: int, c1: float | None = None, scale: float = 1.0
) -> CheckReport:
    """Largest ``|g(x1) - g(x2)| / |x1 - x2|`` over Gaussian point pairs at mixed scales."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    x1 = np.empty((trials, cs.n))
    x2 = np.empty((trials, cs.n))
    for i in range(trials):
        rng = _trial_rng(seed, i)
        s = scale * 10.0 ** rng.integers(-2, 3)
        x1[i] = s * rng.standard_normal(cs.n)
        x2[i] = x1[i] + s * rng.standard_normal(cs.n)
    num = np.linalg.norm(cs.g(x1) - cs.g(x2), axis=1)
    den = np.linalg.norm(x1 - x2, axis=1)
    return _lipschitz_report("g_lipschitz", num, den, seed, c1)


def check_monotonicity(
    cs: CoefficientSet,
    k: AssumptionConstants,
    trials: int,
    seed: int,
    cfg: SamplerConfig | None = None,
    threads: int = 1,
) -> CheckReport:
    """Slack of ``int [f1 - f2, (xhat, uhat)] >= int beta1 |G xhat|^2 + beta2 |G^T uhat|^2``.

    Control differences cycle through independent, ``x``-only (``u1 = u2``) and
    ``u``-only (``x1 = x2``) families.  A trial violates when its slack is
    below ``-1e-10 * (1 + |lhs| + |rhs|)``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = cfg or SamplerConfig()
    dt = cfg.horizon / cfg.num_steps
    G = cs.G

    def run(lo: int, hi: int) -> tuple[Array, Array, Array]:
        x1, x2, y1, z1, y2, z2 = _stack(cs, seed, lo, hi, cfg)
        h1, b1, s1 = _f_along(cs, x1, y1, z1, dt)
        h2, b2, s2 = _f_along(cs, x2, y2, z2, dt)
        xh, yh, zh = x1 - x2, y1 - y2, z1 - z2
        pair = (
            np.sum((h1 - h2) * xh, axis=2)
            + np.sum((b1 - b2) * yh, axis=2)
            + np.sum((s1 - s2) * zh, axis=(2, 3))
        )
        gx = xh @ G.T
        gty = yh @ G
        gtz = np.einsum("ji,tBjk->tBik", G, zh)
        coer_x = _sqnorm(gx, (2,))
        coer_u = _sqnorm(gty, (2,)) + _sqnorm(gtz, (2, 3))
        lhs = np.sum(pair[:-1], axis=0) * dt
        rx = np.sum(coer_x[:-1], axis=0) * dt
        ru = np.sum(coer_u[:-1], axis=0) * dt
        return lhs, rx, ru

    lhs, rx, ru = _chunked(trials, run, threads)
    rhs = k.beta1 * rx + k.beta2 * ru
    slack = lhs - rhs
    tol = 1e-10 * (1.0 + np.abs(lhs) + np.abs(rhs))
    unit = rx + ru
    live = unit > 0
    est = float(np.min(lhs[live] / unit[live])) if np.any(live) else float("nan")
    return CheckReport(
        "monotonicity", trials, int(np.sum(slack < -tol)), float(slack.min()), est, seed, int(np.sum(~live))
    )


def check_g_monotonicity(
    cs: CoefficientSet, mu1: float, trials: int, seed: int, scale: float = 1.0
) -> CheckReport:
    """Slack of ``<g(x1) - g(x2), G(x1 - x2)> <= -mu1 |G x1 - G x2|^2``.

    ``estimated_constant`` is the largest ``mu`` the samples support.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    x1 = np.empty((trials, cs.n))
    x2 = np.empty((trials, cs.n))
    for i in range(trials):
        rng = _trial_rng(seed, i)
        s = scale * 10.0 ** rng.integers(-2, 3)
        x1[i] = s * rng.standard_normal(cs.n)
        x2[i] = x1[i] + s * rng.standard_normal(cs.n)
    gx = (x1 - x2) @ cs.G.T
    inner = np.sum((cs.g(x1) - cs.g(x2)) * gx, axis=1)
    coer = np.sum(gx * gx, axis=1)
    slack = -mu1 * coer - inner
    tol = 1e-10 * (1.0 + np.abs(inner) + np.abs(mu1 * coer))
    live = coer > 0
    est = float(np.min(-inner[live] / coer[live])) if np.any(live) else float("nan")
    return CheckReport(
        "g_monotonicity", trials, int(np.sum(slack < -tol)), float(slack.min()), est, seed, int(np.sum(~live))
    )
