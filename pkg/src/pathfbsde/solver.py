"""Time-discrete solver for fully coupled path-dependent FBSDEs.

Forward: Euler-Maruyama on the path state.  Backward: least-squares Monte Carlo
with an explicit driver step.  The coupling is resolved by a Picard iteration
on frozen Brownian increments, wrapped in a homotopy that moves the
coefficients from the linear base system (``alpha = 0``) to the target
(``alpha = 1``).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .coefficients import CoefficientSet, PathState, continuation_set, linear_base_set
from .conditions import AssumptionConstants
from .paths import Path, format_float, integral_value

log = logging.getLogger(__name__)

Array = NDArray[np.float64]

MAX_CONDITION = 1e12
# features whose spread is below this fraction of sqrt(dt) are treated as constant
DEGENERATE_SCALE = 1e-4
# consecutive residual increases (after the second sweep) treated as divergence
DIVERGENCE_SWEEPS = 3


class SolverError(RuntimeError):
    """Base class for solver failures."""


class BlowUpError(SolverError):
    pass


class RegressionError(SolverError):
    pass


class NonConvergenceError(SolverError):
    def __init__(self, message: str, trace: ConvergenceTrace | None = None, diverged: bool = False):
        super().__init__(message)
        self.trace = trace
        self.diverged = diverged


@dataclass(frozen=True)
class Discretization:
    num_steps: int
    horizon: float = 1.0
    num_paths: int = 10_000
    basis_degree: int = 1
    seed: int = 0
    antithetic: bool = True
    centred_z: bool = True

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.num_paths < 2:
            raise ValueError("num_paths must be at least 2")
        if not 1 <= self.basis_degree <= 6:
            raise ValueError("basis_degree must lie in 1..6")

    @property
    def dt(self) -> float:
        return self.horizon / self.num_steps


@dataclass(frozen=True, eq=False)
class BrownianGrid:
    """Frozen increments of shape ``(K, M, d)``, each ``N(0, dt)``.

    With ``antithetic`` the second half of the paths mirrors the first, so
    path ``j + ceil(M/2)`` carries the negated increments of path ``j``.
    """

    increments: Array
    dt: float
    seed: int
    antithetic: bool = False

    def __post_init__(self) -> None:
        inc = np.array(self.increments, dtype=np.float64)
        if inc.ndim != 3:
            raise ValueError("increments must have shape (K, M, d)")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @classmethod
    def generate(cls, disc: Discretization, d: int, dt: float | None = None) -> BrownianGrid:
        step = disc.dt if dt is None else dt
        rng = np.random.Generator(np.random.PCG64(disc.seed))
        K, M = disc.num_steps, disc.num_paths
        if disc.antithetic:
            half = rng.standard_normal((K, (M + 1) // 2, d)) * math.sqrt(step)
            inc = np.concatenate([half, -half], axis=1)[:, :M]
        else:
            inc = rng.standard_normal((K, M, d)) * math.sqrt(step)
        return cls(inc, step, disc.seed, disc.antithetic)

    @property
    def num_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def num_paths(self) -> int:
        return self.increments.shape[1]

    @property
    def d(self) -> int:
        return self.increments.shape[2]

    def brownian_paths(self) -> Array:
        """Partial sums ``W_k``, shape ``(K + 1, M, d)``."""
        out = np.zeros((self.num_steps + 1, self.num_paths, self.d))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


@dataclass(frozen=True)
class StartPoint:
    """Initial condition: time, value and the path features carried in from a prefix."""

    t0: float
    x0: Array
    integral0: Array

    @classmethod
    def from_value(cls, x0: ArrayLike, t0: float = 0.0) -> StartPoint:
        x = np.atleast_1d(np.asarray(x0, dtype=np.float64))
        return cls(t0, x, np.zeros_like(x))

    @classmethod
    def from_prefix(cls, prefix: Path) -> StartPoint:
        return cls(prefix.end_time, prefix.last.copy(), integral_value(prefix))


def _start(x0: ArrayLike | Path | StartPoint) -> StartPoint:
    if isinstance(x0, StartPoint):
        return x0
    if isinstance(x0, Path):
        return StartPoint.from_prefix(x0)
    return StartPoint.from_value(x0)


@dataclass
class LevelRecord:
    alpha: float
    delta: float
    inner_iterations: int
    final_residual: float
    converged: bool
    relaxation: float = 1.0


@dataclass
class ConvergenceTrace:
    alpha_levels: list[LevelRecord] = field(default_factory=list)
    residual_history: list[list[float]] = field(default_factory=list)
    contraction_ratios: list[list[float]] = field(default_factory=list)

    def add_level(self, record: LevelRecord, residuals: list[float]) -> None:
        self.alpha_levels.append(record)
        self.residual_history.append(list(residuals))
        self.contraction_ratios.append(_ratios(residuals))

    def fitted_ratio(self) -> float:
        """Geometric-mean contraction ratio of the last level (after its first step)."""
        if not self.contraction_ratios or len(self.contraction_ratios[-1]) < 2:
            return float("nan")
        r = np.asarray(self.contraction_ratios[-1][1:])
        r = r[r > 0]
        return float(np.exp(np.mean(np.log(r)))) if r.size else float("nan")

    def to_dict(self) -> dict:
        return {
            "alpha_levels": [vars(rec) for rec in self.alpha_levels],
            "residual_history": self.residual_history,
            "contraction_ratios": self.contraction_ratios,
            "fitted_ratio": self.fitted_ratio(),
        }


def _ratios(residuals: list[float]) -> list[float]:
    return [b / a if a > 0 else 0.0 for a, b in zip(residuals, residuals[1:])]


@dataclass
class SolutionEstimate:
    """Discrete adapted triple on the grid ``t0 + k dt``.

    ``X`` is ``(K+1, M, n)``, ``Y`` is ``(K+1, M, m)``, ``Z`` is ``(K, M, m, d)``.
    ``y0_stderr`` is the Monte Carlo standard error of ``y0``.
    """

    X: Array
    Y: Array
    Z: Array
    y0: Array
    y0_stderr: Array
    dt: float
    t0: float = 0.0
    diagnostics: ConvergenceTrace = field(default_factory=ConvergenceTrace)

    @property
    def times(self) -> Array:
        return self.t0 + np.arange(self.X.shape[0]) * self.dt

    def l2_norms(self) -> dict[str, float]:
        """Empirical ``E int |.|^2 dt`` of each component."""
        return {
            "X": float(np.mean(np.sum(self.X[:-1] ** 2, axis=(0, 2))) * self.dt),
            "Y": float(np.mean(np.sum(self.Y[:-1] ** 2, axis=(0, 2))) * self.dt),
            "Z": float(np.mean(np.sum(self.Z**2, axis=(0, 2, 3))) * self.dt),
        }

    def to_csv(self) -> str:
        K1, M, n = self.X.shape
        m = self.Y.shape[2]
        d = self.Z.shape[3]
        zflat = self.Z.reshape(self.Z.shape[0], M, m * d)
        zcols = [f"Z{i + 1}{j + 1}" for i in range(m) for j in range(d)]
        names = [f"X{i + 1}" for i in range(n)] + [f"Y{i + 1}" for i in range(m)] + zcols
        header = ["t"] + [f"mean_{c}" for c in names] + [f"se_{c}" for c in names]
        lines = [",".join(header)]
        sq = math.sqrt(M)
        for k in range(K1):
            zk = zflat[k] if k < zflat.shape[0] else np.full((M, m * d), np.nan)
            block = np.concatenate([self.X[k], self.Y[k], zk], axis=1)
            means = block.mean(axis=0)
            ses = block.std(axis=0, ddof=1) / sq
            row = [self.times[k]] + list(means) + list(ses)
            lines.append(",".join(format_float(v) for v in row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ContinuationSchedule:
    """Homotopy and inner-iteration controls.

    ``relaxation`` is the initial Picard damping; it is halved (down to
    ``relaxation_min``) whenever a level diverges, and the reduced value is
    kept for later levels.  Intermediate levels only need to supply a warm
    start and stop at ``level_tol``; the final level runs to ``inner_tol``.
    """

    delta_init: float = 0.25
    delta_min: float = 1.0 / 64
    inner_tol: float = 1e-10
    max_inner_iters: int = 200
    mode: Literal["direct", "homotopy"] = "homotopy"
    relaxation: float = 1.0
    relaxation_min: float = 1.0 / 64
    level_tol: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_init <= 1.0:
            raise ValueError("delta_init must lie in (0, 1]")
        if not self.delta_min > 0:
            raise ValueError("delta_min must be positive")
        if self.delta_min > self.delta_init:
            raise ValueError("delta_min must not exceed delta_init")
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be at least 1")
        if self.mode not in ("direct", "homotopy"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")
        if not 0.0 < self.relaxation_min <= self.relaxation:
            raise ValueError("relaxation_min must lie in (0, relaxation]")
        if not self.level_tol > 0:
            raise ValueError("level_tol must be positive")


@dataclass(frozen=True)
class LinearBaseSpec:
    beta1: float
    beta2: float
    lam: float = 0.0
    b0: ArrayLike | None = None
    sigma0: ArrayLike | None = None
    h0: ArrayLike | None = None
    g0: object = None

    def __post_init__(self) -> None:
        if min(self.beta1, self.beta2, self.lam) < 0:
            raise ValueError("beta1, beta2 and lambda must be nonnegative")


# forward -------------------------------------------------------------------------


def _forward(
    cs: CoefficientSet, Y: Array, Z: Array, dW: Array, start: StartPoint, dt: float
) -> tuple[Array, Array]:
    K, M, _ = dW.shape
    X = np.empty((K + 1, M, cs.n))
    A = np.empty((K + 1, M, cs.n))
    X[0] = start.x0
    A[0] = start.integral0
    for k in range(K):
        state = PathState(start.t0 + k * dt, X[k], A[k], k)
        drift = cs.b(state, Y[k], Z[k])
        vol = cs.sigma(state, Y[k], Z[k])
        X[k + 1] = X[k] + drift * dt + np.einsum("Mnd,Md->Mn", vol, dW[k])
        A[k + 1] = A[k] + X[k] * dt
        if not np.all(np.isfinite(X[k + 1])):
            raise BlowUpError(f"forward state became non-finite at step {k + 1}")
    return X, A


def simulate_forward(
    cs: CoefficientSet,
    Y: Array,
    Z: Array,
    bg: BrownianGrid,
    x0: ArrayLike | Path | StartPoint,
) -> Array:
    """Euler-Maruyama ``X_{k+1} = X_k + b dt + sigma dW_k`` driven by the control process.

    ``Y`` has shape ``(K+1, M, m)`` (only the first ``K`` entries are read) and
    ``Z`` has shape ``(K, M, m, d)``.
    """
    X, _ = _forward(cs, Y, Z, bg.increments, _start(x0), bg.dt)
    return X


def _integrals(X: Array, start: StartPoint, dt: float) -> Array:
    A = np.empty_like(X)
    A[0] = start.integral0
    for k in range(X.shape[0] - 1):
        A[k + 1] = A[k] + X[k] * dt
    return A


# backward ------------------------------------------------------------------------


def _monomial_exponents(nfeat: int, degree: int) -> list[tuple[int, ...]]:
    exps = [e for e in itertools.product(range(degree + 1), repeat=nfeat) if 0 < sum(e) <= degree]
    return sorted(exps, key=lambda e: (sum(e), tuple(-x for x in e)))


class _Regressor:
    """OLS projection onto monomials of standardized features, via QR.

    A feature whose standard deviation is at most ``floor * (1 + |mean|)`` is
    dropped.  Without the floor a feature that is constant in the exact
    solution (the state after one step when ``Z(0) = 0``) keeps a tiny spread
    fed by its own regression noise, and the Picard map gains a second fixed
    point.
    """

    def __init__(self, feats: Array, degree: int, step: int, floor: float = 1e-12):
        M = feats.shape[0]
        mean = feats.mean(axis=0)
        centred = feats - mean
        # second pass removes the rounding error of the mean; identical
        # features would otherwise look like a tiny constant offset
        centred -= centred.mean(axis=0)
        std = np.sqrt(np.einsum("ij,ij->j", centred, centred) / M)
        spread = feats.max(axis=0) - feats.min(axis=0)
        live = (spread > 0) & (std > max(floor, 1e-12) * (1.0 + np.abs(mean)))
        cols = [np.ones(M)]
        if np.any(live):
            u = centred[:, live] / std[live]
            for e in _monomial_exponents(u.shape[1], degree):
                col = np.ones(M)
                for j, p in enumerate(e):
                    if p:
                        col = col * u[:, j] ** p
                cols.append(col)
        self.mean_only = len(cols) == 1
        if self.mean_only:
            return
        design = np.stack(cols, axis=1)
        if design.shape[1] > M:
            raise RegressionError(f"step {step}: {design.shape[1]} basis functions for {M} paths")
        self.Q, R = np.linalg.qr(design)
        sv = np.linalg.svd(R, compute_uv=False)
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        if not cond <= MAX_CONDITION:
            raise RegressionError(f"step {step}: regression design is rank deficient (condition number {cond:.3e})")

    def fit(self, target: Array) -> Array:
        if self.mean_only:
            return np.broadcast_to(target.mean(axis=0), target.shape).copy()
        return self.Q @ (self.Q.T @ target)


def _features(cs: CoefficientSet, X: Array, A: Array, k: int) -> Array:
    cols = slice(None) if cs.feature_dims is None else list(cs.feature_dims)
    parts = [X[k][:, cols]]
    if "integral" in cs.feature_spec:
        parts.append(A[k][:, cols])
    return np.concatenate(parts, axis=1)


def _backward(
    cs: CoefficientSet,
    X: Array,
    A: Array,
    dW: Array,
    dt: float,
    degree: int,
    t0: float,
    centred_z: bool = True,
) -> tuple[Array, Array, Array]:
    """Returns ``(Y, Z, H)`` with ``H`` the driver values used at each step."""
    K, M, d = dW.shape
    m = cs.m
    Y = np.empty((K + 1, M, m))
    Z = np.empty((K, M, m, d))
    H = np.empty((K, M, m))
    Y[K] = cs.g(X[K])
    for k in range(K - 1, -1, -1):
        reg = _Regressor(_features(cs, X, A, k), degree, k, DEGENERATE_SCALE * math.sqrt(dt))
        if centred_z:
            # control variate: the fitted continuation value is uncorrelated with dW_k
            y_cont = reg.fit(Y[k + 1])
            ydev = Y[k + 1] - y_cont
        else:
            ydev = Y[k + 1]
        zt = (ydev[:, :, None] * dW[k][:, None, :]).reshape(M, m * d) / dt
        if centred_z:
            Z[k] = reg.fit(zt).reshape(M, m, d)
        else:
            fitted = reg.fit(np.concatenate([Y[k + 1], zt], axis=1))
            y_cont = fitted[:, :m]
            Z[k] = fitted[:, m:].reshape(M, m, d)
        state = PathState(t0 + k * dt, X[k], A[k], k)
        H[k] = cs.h(state, y_cont, Z[k])
        Y[k] = y_cont - H[k] * dt
        if not np.all(np.isfinite(Y[k])):
            raise BlowUpError(f"backward value became non-finite at step {k}")
    return Y, Z, H


def backward_lsmc(
    cs: CoefficientSet,
    X: Array,
    bg: BrownianGrid,
    basis_degree: int = 1,
    x0: ArrayLike | Path | StartPoint | None = None,
    centred_z: bool = True,
) -> tuple[Array, Array]:
    """Regression-based backward pass for ``dY = h dt + Z dW``, ``Y_K = g(X_K)``.

    ``Z_k`` is the projection of ``Y_{k+1} dW_k^T / dt`` and the continuation
    value is the projection of ``Y_{k+1}``, both onto monomials (total degree
    ``<= basis_degree``) of ``X_k`` and the declared path features.  With
    ``centred_z`` the fitted continuation value is subtracted from ``Y_{k+1}``
    before forming the ``Z`` target; it has zero conditional correlation with
    ``dW_k``, so the projection is unchanged in expectation and much less noisy.
    ``x0`` only supplies the path features carried in from a prefix.
    """
    start = _start(X[0, 0] if x0 is None else x0)
    A = _integrals(X, start, bg.dt)
    Y, Z, _ = _backward(cs, X, A, bg.increments, bg.dt, basis_degree, start.t0, centred_z)
    return Y, Z


# Picard ------------------------------------------------------------------------


def _stderr(samples: Array, antithetic: bool) -> Array:
    """Standard error of the mean over axis 0; antithetic pairs are averaged first."""
    M = samples.shape[0]
    if antithetic and M >= 4:
        half = M // 2
        # with odd M the unpaired middle path is dropped from the error estimate
        first = samples[:half]
        second = samples[(M + 1) // 2 : (M + 1) // 2 + half]
        pairs = 0.5 * (first + second)
        return pairs.std(axis=0, ddof=1) / math.sqrt(half)
    return samples.std(axis=0, ddof=1) / math.sqrt(M)


def _residual(X1: Array, Y1: Array, Z1: Array, X0: Array, Y0: Array, Z0: Array, dt: float) -> float:
    dy = np.sum((Y1[:-1] - Y0[:-1]) ** 2, axis=(0, 2))
    dz = np.sum((Z1 - Z0) ** 2, axis=(0, 2, 3))
    dx = np.sum((X1[:-1] - X0[:-1]) ** 2, axis=(0, 2))
    dxT = np.sum((X1[-1] - X0[-1]) ** 2, axis=1)
    return float(np.mean((dy + dz + dx) * dt + dxT))


def picard_solve(
    cs: CoefficientSet,
    disc: Discretization,
    bg: BrownianGrid,
    x0: ArrayLike | Path | StartPoint,
    init: SolutionEstimate | None = None,
    tol: float = 1e-10,
    max_iters: int = 200,
    relaxation: float = 1.0,
    trace: ConvergenceTrace | None = None,
    alpha: float = 1.0,
    delta: float = 0.0,
) -> SolutionEstimate:
    """Fixed-point iteration on frozen noise.

    Each sweep simulates ``X`` from the current control ``(Y, Z)`` and then
    regresses a fresh ``(Y, Z)`` backward along that ``X``; the control is
    moved a fraction ``relaxation`` toward the fresh one.  The residual is the
    empirical ``E int |dU|^2 + E |dX(T)|^2 + E int |dX|^2`` between sweeps.
    Iteration stops once ``R_i <= tol * (1 + R_0)``.
    """
    start = _start(x0)
    K, M, d = bg.increments.shape
    if d != cs.d:
        raise ValueError(f"Brownian grid has d={d}, coefficients expect d={cs.d}")
    dt = bg.dt
    if init is None:
        X = np.zeros((K + 1, M, cs.n))
        Y = np.zeros((K + 1, M, cs.m))
        Z = np.zeros((K, M, cs.m, cs.d))
    else:
        X, Y, Z = init.X, init.Y, init.Z
        if X.shape != (K + 1, M, cs.n) or Y.shape != (K + 1, M, cs.m) or Z.shape != (K, M, cs.m, cs.d):
            raise ValueError("initial iterate does not match the discretization")
    if trace is None:
        trace = ConvergenceTrace()
    residuals: list[float] = []
    theta = relaxation
    growth = 0
    for it in range(1, max_iters + 1):
        Xn, A = _forward(cs, Y, Z, bg.increments, start, dt)
        Yb, Zb, H = _backward(cs, Xn, A, bg.increments, dt, disc.basis_degree, start.t0, disc.centred_z)
        if theta == 1.0:
            Yn, Zn = Yb, Zb
        else:
            Yn = Y + theta * (Yb - Y)
            Zn = Z + theta * (Zb - Z)
        R = _residual(Xn, Yn, Zn, X, Y, Z, dt)
        residuals.append(R)
        X, Y, Z = Xn, Yn, Zn
        growth = growth + 1 if it > 2 and R > residuals[-2] else 0
        if not math.isfinite(R) or R > 1e8 * (1.0 + residuals[0]) or growth >= DIVERGENCE_SWEEPS:
            trace.add_level(LevelRecord(alpha, delta, it, R, False, theta), residuals)
            raise NonConvergenceError(
                f"Picard iteration diverged at sweep {it} (residual {R:.3e}, relaxation {theta:g})",
                trace,
                diverged=True,
            )
        if R <= tol * (1.0 + residuals[0]):
            trace.add_level(LevelRecord(alpha, delta, it, R, True, theta), residuals)
            # report the backward solution on the final forward path, so Y_K = g(X_K) exactly
            pathwise = cs.g(Xn[K]) - np.sum(H, axis=0) * dt
            return SolutionEstimate(
                X=Xn,
                Y=Yb,
                Z=Zb,
                y0=Yb[0].mean(axis=0),
                y0_stderr=_stderr(pathwise, bg.antithetic),
                dt=dt,
                t0=start.t0,
                diagnostics=trace,
            )
    trace.add_level(LevelRecord(alpha, delta, max_iters, residuals[-1], False, theta), residuals)
    raise NonConvergenceError(
        f"Picard iteration did not reach tolerance in {max_iters} sweeps (residual {residuals[-1]:.3e})", trace
    )


def solve_linear_base(
    spec: LinearBaseSpec,
    G: ArrayLike,
    d: int,
    disc: Discretization,
    bg: BrownianGrid,
    x0: ArrayLike | Path | StartPoint,
    tol: float = 1e-10,
    max_iters: int = 400,
    relaxation: float = 0.3,
) -> SolutionEstimate:
    """Solve the linear system with forcing ``(b0, sigma0, h0, g0)``."""
    cs = linear_base_set(
        spec.beta1, spec.beta2, spec.lam, G, d=d, b0=spec.b0, sigma0=spec.sigma0, h0=spec.h0, g0=spec.g0
    )
    return picard_solve(cs, disc, bg, x0, tol=tol, max_iters=max_iters, relaxation=relaxation)


def solve_fbsde(
    cs: CoefficientSet,
    k: AssumptionConstants,
    disc: Discretization,
    x0: ArrayLike | Path | StartPoint,
    schedule: ContinuationSchedule | None = None,
    bg: BrownianGrid | None = None,
    init: SolutionEstimate | None = None,
) -> SolutionEstimate:
    """Solve the target problem by continuation from the linear base system.

    In ``homotopy`` mode ``alpha`` advances from 0 in steps ``delta``, each level
    warm-started from the previous one; a level that fails to converge is
    retried with ``delta`` halved, down to ``delta_min``.  ``direct`` mode runs
    a single level at ``alpha = 1``.
    """
    schedule = schedule or ContinuationSchedule()
    k.validate_dims(cs.n, cs.m)
    start = _start(x0)
    if start.x0.shape != (cs.n,):
        raise ValueError(f"x0 must have length {cs.n}")
    if bg is None:
        dt = (disc.horizon - start.t0) / disc.num_steps
        if not dt > 0:
            raise ValueError("start time must precede the horizon")
        bg = BrownianGrid.generate(disc, cs.d, dt)
    trace = ConvergenceTrace()
    theta = schedule.relaxation

    def level(alpha: float, delta: float, warm: SolutionEstimate | None, tol: float) -> SolutionEstimate:
        """One continuation level, halving the damping while the iteration diverges."""
        nonlocal theta
        level_cs = cs if alpha == 1.0 else continuation_set(cs, alpha, k.beta1, k.beta2)
        while True:
            try:
                return picard_solve(
                    level_cs, disc, bg, start, init=warm, tol=tol, max_iters=schedule.max_inner_iters,
                    relaxation=theta, trace=trace, alpha=alpha, delta=delta,
                )
            except NonConvergenceError as exc:
                if not exc.diverged or theta / 2.0 < schedule.relaxation_min:
                    raise
                theta /= 2.0
                log.info("alpha=%.4g diverged; relaxation lowered to %g", alpha, theta)

    if schedule.mode == "direct":
        return level(1.0, 1.0, init, schedule.inner_tol)

    alpha, delta = 0.0, schedule.delta_init
    current = level(0.0, 0.0, init, schedule.level_tol)
    while alpha < 1.0:
        target = min(1.0, alpha + delta)
        tol = schedule.inner_tol if target == 1.0 else schedule.level_tol
        try:
            current = level(target, target - alpha, current, tol)
        except (NonConvergenceError, BlowUpError) as exc:
            delta /= 2.0
            log.info("level alpha=%.4g failed (%s); halving delta to %.4g", target, exc, delta)
            if delta < schedule.delta_min:
                raise NonConvergenceError(
                    f"continuation stalled at alpha={alpha:.6g}: delta fell below delta_min={schedule.delta_min}",
                    trace,
                ) from exc
            continue
        alpha = target
    return current
