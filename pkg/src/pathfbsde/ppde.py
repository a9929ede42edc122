"""Finite-difference functional Ito calculus on sampled paths.

Vertical derivatives bump the terminal value of a prefix path, horizontal
derivatives extend it flat by one grid step.  On top of these sit the
functional Ito formula residual, the lifted ``(W, X)`` system, the path
dependent PDE residual and the Feynman-Kac comparison against the solver.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .coefficients import CoefficientSet, ControlPair, PathState
from .conditions import AssumptionConstants
from .paths import GRID_RTOL, Path, format_float, grid_index, horizontal_extend, sup_norm
from .solver import ContinuationSchedule, Discretization, StartPoint, solve_fbsde

Array = NDArray[np.float64]

DEFAULT_REL_EPS = 1e-4


class PPDEError(ValueError):
    """Invalid functional, smoothness claim or evaluation failure."""


@dataclass(frozen=True)
class PathFunctional:
    """A map from prefix paths to ``R^m``.

    ``smoothness`` is the caller's claim: ``"C12"`` (once horizontally and
    twice vertically differentiable) or ``"C0"``.  ``bump_scale`` overrides
    the default vertical step ``1e-4 * (1 + sup_norm(p))``.
    """

    evaluator: Callable[[Path], ArrayLike]
    smoothness: Literal["C0", "C12"] = "C12"
    bump_scale: float | None = None
    name: str = "functional"

    def __post_init__(self) -> None:
        if self.smoothness not in ("C0", "C12"):
            raise PPDEError(f"unknown smoothness class {self.smoothness!r}")
        if self.bump_scale is not None and not self.bump_scale > 0:
            raise PPDEError("bump_scale must be positive")

    def __call__(self, p: Path) -> Array:
        val = np.asarray(self.evaluator(p), dtype=np.float64).reshape(-1)
        if not np.isfinite(val).all():
            raise PPDEError(f"{self.name} returned a non-finite value on {p!r}")
        return val

    def eps_for(self, p: Path) -> float:
        if self.bump_scale is not None:
            return self.bump_scale
        return DEFAULT_REL_EPS * (1.0 + sup_norm(p))


def _fast_path(values: Array, step: float) -> Path:
    # internal constructor for arrays that are already validated float64 copies
    p = object.__new__(Path)
    values.setflags(write=False)
    object.__setattr__(p, "values", values)
    object.__setattr__(p, "grid_step", step)
    return p


class _Stencil:
    """Cached evaluations of ``f`` at vertical bumps ``p + eps * key``."""

    def __init__(self, f: PathFunctional, p: Path, eps: float, f0: Array | None = None):
        self.f, self.p, self.eps = f, p, eps
        zero = (0,) * p.dim
        self.cache: dict[tuple[int, ...], Array] = {} if f0 is None else {zero: f0}

    def at(self, key: tuple[int, ...]) -> Array:
        val = self.cache.get(key)
        if val is None:
            if any(key):
                vals = self.p.values.copy()
                vals[-1] += np.multiply(key, self.eps)
                val = self.f(_fast_path(vals, self.p.grid_step))
            else:
                val = self.f(self.p)
            self.cache[key] = val
        return val

    def first(self) -> Array:
        n, e = self.p.dim, self.eps
        cols = []
        for i in range(n):
            plus = tuple(1 if j == i else 0 for j in range(n))
            minus = tuple(-k for k in plus)
            cols.append((self.at(plus) - self.at(minus)) / (2.0 * e))
        return np.stack(cols, axis=1)

    def second(self) -> Array:
        n, e = self.p.dim, self.eps
        unit = [tuple(1 if j == i else 0 for j in range(n)) for i in range(n)]

        def comb(a: int, u: tuple[int, ...], b: int, v: tuple[int, ...]) -> tuple[int, ...]:
            return tuple(a * x + b * y for x, y in zip(u, v))

        H = None
        for i in range(n):
            for j in range(n):
                ui, uj = unit[i], unit[j]
                if i == j:
                    # three-point form reuses the first-derivative evaluations
                    zero = (0,) * n
                    val = (self.at(ui) - 2.0 * self.at(zero) + self.at(comb(-1, ui, 0, ui))) / (e * e)
                else:
                    val = (
                        self.at(comb(1, ui, 1, uj))
                        - self.at(comb(1, ui, -1, uj))
                        - self.at(comb(-1, ui, 1, uj))
                        + self.at(comb(-1, ui, -1, uj))
                    ) / (4.0 * e * e)
                if H is None:
                    H = np.zeros((val.shape[0], n, n))
                H[:, i, j] = val
        assert H is not None
        return 0.5 * (H + np.swapaxes(H, 1, 2))


def _eps(f: PathFunctional, p: Path, eps: float | None) -> float:
    e = f.eps_for(p) if eps is None else float(eps)
    if not e > 0:
        raise PPDEError("eps must be positive")
    return e


def vertical_derivative(f: PathFunctional, p: Path, eps: float | None = None) -> Array:
    """Central-difference Jacobian ``D_x f``, shape ``(m, n)``."""
    return _Stencil(f, p, _eps(f, p, eps)).first()


def second_vertical_derivative(f: PathFunctional, p: Path, eps: float | None = None) -> Array:
    """Symmetrized central-difference Hessian ``D_xx f``, shape ``(m, n, n)``.

    Off-diagonal entries use the 4-point stencil; diagonal entries use the
    3-point form ``[f(+e) - 2 f + f(-e)] / e^2``.
    """
    return _Stencil(f, p, _eps(f, p, eps)).second()


def _flat_step(f: PathFunctional, p: Path, steps: int, f0: Array) -> Array:
    vals = np.concatenate([p.values, np.repeat(p.values[-1:], steps, axis=0)])
    return (f(_fast_path(vals, p.grid_step)) - f0) / (steps * p.grid_step)


def horizontal_derivative(f: PathFunctional, p: Path, dt: float | None = None) -> Array:
    """Forward difference ``[f(p extended flat to t + dt) - f(p)] / dt``."""
    step = p.grid_step if dt is None else float(dt)
    if not step > 0:
        raise PPDEError("dt must be positive")
    ext = horizontal_extend(p, p.end_time + step)
    return (f(ext) - f(p)) / step


def ito_residual(
    f: PathFunctional,
    p: Path,
    eps: float | None = None,
    model_bracket: ArrayLike | None = None,
) -> float:
    """Norm of ``f(p) - f(p_0) - sum[D_t f dt + D_x f dX + 1/2 tr(D_xx f d<X>)]``.

    Derivatives are taken at the prefixes ``p_{t_k}``.  The bracket increment is
    the realized ``dX dX^T`` unless ``model_bracket`` supplies the model value
    ``sigma sigma^T dt``: one ``(n, n)`` matrix, or one per step ``(K, n, n)``.
    """
    vals = p.values
    K, n, step = p.num_steps, p.dim, p.grid_step
    brackets = None
    if model_bracket is not None:
        brackets = np.asarray(model_bracket, dtype=np.float64)
        if brackets.shape == (n, n):
            brackets = np.broadcast_to(brackets, (K, n, n))
        if brackets.shape != (K, n, n):
            raise PPDEError(f"model_bracket must have shape ({n}, {n}) or ({K}, {n}, {n})")
    total = f(p) - f(_fast_path(vals[:1].copy(), step))
    for k in range(K):
        q = _fast_path(vals[: k + 1].copy(), step)
        f0 = f(q)
        st = _Stencil(f, q, _eps(f, q, eps), f0)
        dx = vals[k + 1] - vals[k]
        br = np.outer(dx, dx) if brackets is None else brackets[k]
        total = total - _flat_step(f, q, 1, f0) * step
        total = total - st.first() @ dx
        total = total - 0.5 * np.einsum("mij,ij->m", st.second(), br)
    return float(np.linalg.norm(total))


# lifted system -------------------------------------------------------------------


@dataclass(frozen=True)
class LiftedCoefficients:
    """The base problem on the joint path ``(W, X)`` of dimension ``d + n``.

    The lifted drift is ``(0, b)`` and the lifted diffusion stacks ``I_d`` over
    ``sigma``; the base coefficients only ever see the ``X`` block.
    """

    base: CoefficientSet
    coefficients: CoefficientSet

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.coefficients.n, self.coefficients.m, self.coefficients.d

    def x_part(self, p: Path) -> Path:
        return Path(p.values[:, self.d :], p.grid_step)

    def evaluate(self, p: Path, y: ArrayLike, z: ArrayLike) -> tuple[Array, Array, Array]:
        return self.coefficients.evaluate(p, ControlPair(y, z))


def lift_coefficients(cs: CoefficientSet) -> LiftedCoefficients:
    d, n = cs.d, cs.n
    eye = np.eye(d)

    def base_state(state: PathState) -> PathState:
        return state.components(d, d + n)

    def b(state: PathState, y: Array, z: Array) -> Array:
        return np.concatenate([np.zeros((state.size, d)), cs.b(base_state(state), y, z)], axis=1)

    def sigma(state: PathState, y: Array, z: Array) -> Array:
        top = np.broadcast_to(eye, (state.size, d, d))
        return np.concatenate([top, cs.sigma(base_state(state), y, z)], axis=1)

    def h(state: PathState, y: Array, z: Array) -> Array:
        return cs.h(base_state(state), y, z)

    def g(x: Array) -> Array:
        return cs.g(x[:, d:])

    dims = tuple(d + i for i in (cs.feature_dims if cs.feature_dims is not None else range(n)))
    lifted = CoefficientSet(
        d + n,
        cs.m,
        d,
        np.concatenate([np.zeros((cs.m, d)), cs.G], axis=1),
        b,
        sigma,
        h,
        g,
        feature_spec=cs.feature_spec,
        feature_dims=dims,
        name=f"lifted({cs.name})",
        params=cs.params,
    )
    return LiftedCoefficients(cs, lifted)


def ppde_residual(
    u: PathFunctional,
    v: PathFunctional,
    lc: LiftedCoefficients,
    p: Path,
    eps: float | None = None,
    dt: float | None = None,
) -> tuple[Array, float]:
    """Residual of ``D_t u + L u - h(p, u, v)`` and the gap ``|v - D_x u sigma~|``.

    ``L`` is the generator of the lifted forward process evaluated at
    ``(p, u(p), v(p))``.  ``u`` must claim ``C12`` smoothness.
    """
    if u.smoothness != "C12":
        raise PPDEError(f"{u.name} declares {u.smoothness} smoothness; the residual needs C12")
    n_tot, m, d = lc.dims
    if p.dim != n_tot:
        raise PPDEError(f"path dimension {p.dim} does not match lifted dimension {n_tot}")
    uval = u(p)
    vval = v(p)
    if uval.shape != (m,) or vval.size != m * d:
        raise PPDEError(f"u must return {m} values and v {m * d} values")
    vmat = vval.reshape(m, d)
    b, s, h = lc.evaluate(p, uval, vmat)
    st = _Stencil(u, p, _eps(u, p, eps), uval)
    Du = st.first()
    D2 = st.second()
    Dt = horizontal_derivative(u, p, dt)
    residual = Dt + 0.5 * np.einsum("ij,mij->m", s @ s.T, D2) + Du @ b - h
    gap = float(np.linalg.norm(vmat - Du @ s))
    return residual, gap


@dataclass(frozen=True)
class FeynmanKacReport:
    t: float
    u_value: Array
    y_value: Array
    stderr: Array
    gap: float

    @property
    def relative_gap(self) -> float:
        scale = float(np.linalg.norm(self.y_value))
        return self.gap / scale if scale > 0 else math.inf if self.gap > 0 else 0.0

    def within(self, rel: float = 0.02, num_se: float = 3.0) -> bool:
        scale = float(np.linalg.norm(self.y_value))
        return self.gap <= max(rel * scale, num_se * float(np.linalg.norm(self.stderr)))


def feynman_kac_check(
    u: PathFunctional,
    cs: CoefficientSet,
    prefix: Path,
    disc: Discretization,
    schedule: ContinuationSchedule | None = None,
    k: AssumptionConstants | None = None,
) -> FeynmanKacReport:
    """Compare ``u(prefix)`` with the solver's ``Y(t)`` for the lifted system.

    The lifted forward process starts from the prefix: its value and running
    integral seed the state and fresh increments drive it on ``[t, T]`` with
    ``disc.num_steps`` steps.  At ``t = T`` the comparison is with ``g``.
    """
    lc = lift_coefficients(cs)
    if prefix.dim != lc.coefficients.n:
        raise PPDEError(f"prefix dimension {prefix.dim} does not match lifted dimension {lc.coefficients.n}")
    t = prefix.end_time
    uval = u(prefix)
    T = disc.horizon
    if t > T + GRID_RTOL * max(1.0, T):
        raise PPDEError(f"prefix ends at {t}, beyond the horizon {T}")
    if abs(t - T) <= GRID_RTOL * max(1.0, T):
        y = lc.coefficients.terminal(prefix.last)
        return FeynmanKacReport(t, uval, y, np.zeros_like(y), float(np.linalg.norm(uval - y)))
    k = k or AssumptionConstants()
    sol = solve_fbsde(lc.coefficients, k, disc, StartPoint.from_prefix(prefix), schedule)
    return FeynmanKacReport(t, uval, sol.y0, sol.y0_stderr, float(np.linalg.norm(uval - sol.y0)))


# sweeps and tables ---------------------------------------------------------------


def random_lifted_paths(
    count: int,
    d: int,
    n: int,
    grid_step: float,
    horizon: float,
    seed: int,
    x0: ArrayLike = 1.0,
    vol: float = 1.0,
    min_steps: int = 1,
) -> list[Path]:
    """Joint ``(W, X)`` Brownian-type prefixes with random grid end times below ``horizon``.

    Path ``i`` uses its own generator seeded with ``(seed, i)``.
    """
    total = grid_index(horizon, grid_step)
    start = np.broadcast_to(np.asarray(x0, dtype=np.float64), (n,))
    out = []
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64([seed, i]))
        steps = int(rng.integers(min_steps, total))
        dw = rng.standard_normal((steps, d)) * math.sqrt(grid_step)
        dx = vol * rng.standard_normal((steps, n)) * math.sqrt(grid_step)
        w = np.vstack([np.zeros((1, d)), np.cumsum(dw, axis=0)])
        x = np.vstack([start[None, :], start + np.cumsum(dx, axis=0)])
        out.append(Path(np.concatenate([w, x], axis=1), grid_step))
    return out


@dataclass(frozen=True)
class ResidualRow:
    path_id: int
    t: float
    residual: Array
    gap: float


def ppde_sweep(
    u: PathFunctional,
    v: PathFunctional,
    lc: LiftedCoefficients,
    paths: Sequence[Path],
    eps: float | None = None,
) -> list[ResidualRow]:
    rows = []
    for i, p in enumerate(paths):
        res, gap = ppde_residual(u, v, lc, p, eps)
        rows.append(ResidualRow(i, p.end_time, res, gap))
    return rows


def residual_table_csv(rows: Sequence[ResidualRow]) -> str:
    m = rows[0].residual.shape[0] if rows else 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path_id", "t"] + [f"residual{i + 1}" for i in range(m)] + ["consistency_gap"])
    for r in rows:
        w.writerow([r.path_id, format_float(r.t)] + [format_float(x) for x in r.residual] + [format_float(r.gap)])
    return buf.getvalue()


__all__ = [
    "FeynmanKacReport",
    "LiftedCoefficients",
    "PPDEError",
    "PathFunctional",
    "ResidualRow",
    "feynman_kac_check",
    "horizontal_derivative",
    "ito_residual",
    "lift_coefficients",
    "ppde_residual",
    "ppde_sweep",
    "random_lifted_paths",
    "residual_table_csv",
    "second_vertical_derivative",
    "vertical_derivative",
]
