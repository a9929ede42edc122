"""Coefficient functionals of a path-dependent FBSDE and the built-in problems.

Coefficients read the forward path through a :class:`PathState`: the current
value plus the path features the coefficient set declares in ``feature_spec``
(currently the left-Riemann running integral).  States are batched over
simulation paths, so a single call evaluates a coefficient on every path at
one grid time.  :meth:`CoefficientSet.evaluate` is the single-path view on a
:class:`~pathfbsde.paths.Path`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .paths import Path, integral_value

Array = NDArray[np.float64]

FEATURES = ("value", "integral")


class CoefficientError(ValueError):
    """Malformed coefficient set or unknown registry entry."""


@dataclass(frozen=True)
class PathState:
    """Batched view of prefix paths at one grid time.

    ``x`` and ``integral`` have shape ``(M, n)``; ``step`` is the grid index of
    ``t`` in the simulation that produced the state (``-1`` when unknown).
    """

    t: float
    x: Array
    integral: Array
    step: int = -1

    @classmethod
    def from_path(cls, p: Path, step: int | None = None) -> PathState:
        return cls(
            t=p.end_time,
            x=p.last[None, :].copy(),
            integral=integral_value(p)[None, :],
            step=p.num_steps if step is None else step,
        )

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def components(self, start: int, stop: int) -> PathState:
        return PathState(self.t, self.x[:, start:stop], self.integral[:, start:stop], self.step)


@dataclass(frozen=True)
class ControlPair:
    """Value ``u = (y, z)`` of the backward pair, ``y`` in R^m and ``z`` in R^{m x d}."""

    y: Array
    z: Array

    def __post_init__(self) -> None:
        y = np.atleast_1d(np.asarray(self.y, dtype=np.float64))
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim == 0:
            z = z.reshape(1, 1)
        elif z.ndim == 1:
            z = z.reshape(y.shape[0], -1)
        if y.ndim != 1 or z.ndim != 2 or z.shape[0] != y.shape[0]:
            raise CoefficientError(f"control pair shapes y={y.shape}, z={z.shape} are inconsistent")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise CoefficientError("control pair entries must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @classmethod
    def zeros(cls, m: int, d: int) -> ControlPair:
        return cls(np.zeros(m), np.zeros((m, d)))

    def __sub__(self, other: ControlPair) -> ControlPair:
        return ControlPair(self.y - other.y, self.z - other.z)


@dataclass(frozen=True)
class FTriple:
    """Assembled ``f = (G^T h, G b, G sigma)``."""

    hpart: Array
    bpart: Array
    spart: Array

    def __sub__(self, other: FTriple) -> FTriple:
        return FTriple(self.hpart - other.hpart, self.bpart - other.bpart, self.spart - other.spart)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.hpart**2) + np.sum(self.bpart**2) + np.sum(self.spart**2)))


Drift = Callable[[PathState, Array, Array], Array]
Terminal = Callable[[Array], Array]


@dataclass(frozen=True)
class CoefficientSet:
    """Functional quadruple ``(b, sigma, h, g)`` with dimensions and pairing matrix.

    Batched signatures, for ``M`` paths:

    * ``b(state, y, z) -> (M, n)`` with ``y`` of shape ``(M, m)`` and ``z`` of
      shape ``(M, m, d)``
    * ``sigma(state, y, z) -> (M, n, d)``
    * ``h(state, y, z) -> (M, m)``
    * ``g(x) -> (M, m)`` for terminal values ``x`` of shape ``(M, n)``

    ``feature_dims`` optionally restricts the state components the solver
    regresses on (all of them by default).
    """

    n: int
    m: int
    d: int
    G: Array
    b: Drift
    sigma: Drift
    h: Drift
    g: Terminal
    feature_spec: tuple[str, ...] = ("value",)
    name: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)
    validate: bool = field(default=True, repr=False, compare=False)
    feature_dims: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        G = np.atleast_2d(np.asarray(self.G, dtype=np.float64))
        if min(self.n, self.m, self.d) < 1:
            raise CoefficientError("dimensions n, m, d must be positive")
        if G.shape != (self.m, self.n):
            raise CoefficientError(f"G must be {self.m}x{self.n}, got {G.shape}")
        sv = np.linalg.svd(G, compute_uv=False)
        if sv.min() <= 1e-10 * max(1.0, sv.max()):
            raise CoefficientError("G must have full rank")
        G.setflags(write=False)
        object.__setattr__(self, "G", G)
        unknown = set(self.feature_spec) - set(FEATURES)
        if unknown:
            raise CoefficientError(f"unknown path features {sorted(unknown)}")
        if "value" not in self.feature_spec:
            object.__setattr__(self, "feature_spec", ("value",) + tuple(self.feature_spec))
        if self.feature_dims is not None:
            dims = tuple(int(i) for i in self.feature_dims)
            if not dims or len(set(dims)) != len(dims) or not all(0 <= i < self.n for i in dims):
                raise CoefficientError(f"feature_dims must be distinct indices in [0, {self.n})")
            object.__setattr__(self, "feature_dims", dims)
        object.__setattr__(self, "params", dict(self.params))
        if self.validate:
            self._spot_check()

    def _spot_check(self) -> None:
        rng = np.random.default_rng(12345)
        M = 3
        state = PathState(0.5, rng.standard_normal((M, self.n)), rng.standard_normal((M, self.n)), -1)
        y = rng.standard_normal((M, self.m))
        z = rng.standard_normal((M, self.m, self.d))
        shapes = {
            "b": (self.b(state, y, z), (M, self.n)),
            "sigma": (self.sigma(state, y, z), (M, self.n, self.d)),
            "h": (self.h(state, y, z), (M, self.m)),
            "g": (self.g(state.x), (M, self.m)),
        }
        for key, (val, shape) in shapes.items():
            val = np.asarray(val)
            if val.shape != shape:
                raise CoefficientError(f"{self.name}: {key} returned shape {val.shape}, expected {shape}")
            if not np.all(np.isfinite(val)):
                raise CoefficientError(f"{self.name}: {key} returned non-finite values at spot check")

    # single-path evaluation -------------------------------------------------

    def _batch_u(self, u: ControlPair) -> tuple[Array, Array]:
        if u.y.shape != (self.m,) or u.z.shape != (self.m, self.d):
            raise CoefficientError(f"control pair does not match dims m={self.m}, d={self.d}")
        return u.y[None, :], u.z[None, :, :]

    def evaluate(self, x: Path, u: ControlPair) -> tuple[Array, Array, Array]:
        """``(b, sigma, h)`` at the prefix path ``x`` and control value ``u``."""
        if x.dim != self.n:
            raise CoefficientError(f"path dimension {x.dim} does not match n={self.n}")
        state = PathState.from_path(x)
        y, z = self._batch_u(u)
        return self.b(state, y, z)[0], self.sigma(state, y, z)[0], self.h(state, y, z)[0]

    def terminal(self, x: ArrayLike) -> Array:
        return self.g(np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :])[0]


def bracket(u1: ControlPair, u2: ControlPair) -> float:
    """``<y1, y2> + tr(z1 z2^T)``."""
    if u1.y.shape != u2.y.shape or u1.z.shape != u2.z.shape:
        raise CoefficientError("bracket arguments have different dimensions")
    return float(u1.y @ u2.y + np.trace(u1.z @ u2.z.T))


def matrix_norm(z: ArrayLike) -> float:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return float(np.sqrt(np.trace(z @ z.T)))


def assemble_f(cs: CoefficientSet, x: Path, u: ControlPair) -> FTriple:
    b, s, h = cs.evaluate(x, u)
    return FTriple(cs.G.T @ h, cs.G @ b, cs.G @ s)


def assemble_f_batch(cs: CoefficientSet, state: PathState, y: Array, z: Array) -> tuple[Array, Array, Array]:
    """Batched :func:`assemble_f`: arrays of shape ``(M, n)``, ``(M, m)``, ``(M, m, d)``."""
    h = cs.h(state, y, z)
    b = cs.b(state, y, z)
    s = cs.sigma(state, y, z)
    return h @ cs.G, b @ cs.G.T, np.einsum("ij,Mjk->Mik", cs.G, s)


def f_bracket(df: FTriple, dx: ArrayLike, du: ControlPair) -> float:
    """``[f1 - f2, (xhat, uhat)]`` for an already formed difference ``df``."""
    dx = np.atleast_1d(np.asarray(dx, dtype=np.float64))
    return float(df.hpart @ dx + df.bpart @ du.y + np.trace(df.spart @ du.z.T))


# continuation family ---------------------------------------------------------


def continuation_set(cs: CoefficientSet, alpha: float, beta1: float, beta2: float) -> CoefficientSet:
    """Blend ``cs`` with the linear base system at homotopy parameter ``alpha``.

    ``b^a = a b - (1-a) beta2 G^T y``, ``sigma^a = a sigma - (1-a) beta2 G^T z``,
    ``h^a = a h - (1-a) beta1 G x(t)`` and ``g^a = a g + (1-a) beta1 G x``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise CoefficientError(f"alpha must lie in [0, 1], got {alpha}")
    if beta1 < 0 or beta2 < 0:
        raise CoefficientError("beta1 and beta2 must be nonnegative")
    a = float(alpha)
    w = 1.0 - a
    G = cs.G

    def b(state: PathState, y: Array, z: Array) -> Array:
        return a * cs.b(state, y, z) + w * beta2 * (-(y @ G))

    def sigma(state: PathState, y: Array, z: Array) -> Array:
        return a * cs.sigma(state, y, z) + w * beta2 * (-np.einsum("ji,Mjk->Mik", G, z))

    def h(state: PathState, y: Array, z: Array) -> Array:
        return a * cs.h(state, y, z) + w * beta1 * (-(state.x @ G.T))

    def g(x: Array) -> Array:
        return a * cs.g(x) + w * beta1 * (x @ G.T)

    return CoefficientSet(
        cs.n, cs.m, cs.d, G, b, sigma, h, g,
        feature_spec=cs.feature_spec,
        feature_dims=cs.feature_dims,
        name=f"{cs.name}@alpha={a:g}",
        params={**cs.params, "alpha": a, "beta1": beta1, "beta2": beta2},
        validate=False,
    )


def integral_lift(pointwise: Callable[[Array, Array, Array], Array]) -> Drift:
    """Path functional ``(x_t, y, z) -> pointwise(int_0^t x ds, y, z)``."""

    def lifted(state: PathState, y: Array, z: Array) -> Array:
        return pointwise(state.integral, y, z)

    return lifted


# registry --------------------------------------------------------------------


def _example31(params: Mapping[str, Any]) -> CoefficientSet:
    # G is not given for this example; G = 1 is consistent with its inequalities
    def b(s: PathState, y: Array, z: Array) -> Array:
        return s.integral + 2.0 * y

    def sigma(s: PathState, y: Array, z: Array) -> Array:
        return (s.integral + 2.0 * z[:, :, 0])[:, :, None]

    def h(s: PathState, y: Array, z: Array) -> Array:
        return s.integral + 3.0 * s.x

    def g(x: Array) -> Array:
        return -x

    return CoefficientSet(1, 1, 1, np.eye(1), b, sigma, h, g, ("value", "integral"), "example31", params)


def _custom_lifted(
    params: Mapping[str, Any], name: str = "custom_lifted", echo: Mapping[str, Any] | None = None
) -> CoefficientSet:
    """Scalar problem whose coefficients are linear maps of ``(int x ds, y, z)``."""
    c = {k: float(v) for k, v in params.items()}
    h_a, h_y, h_z = c.get("h_a", 1.0), c.get("h_y", 0.0), c.get("h_z", 0.0)
    b_a, b_y, b_z = c.get("b_a", 0.0), c.get("b_y", 0.0), c.get("b_z", 0.0)
    s_a, s_y, s_z = c.get("s_a", 0.0), c.get("s_y", 0.0), c.get("s_z", 0.0)
    s_0, g_slope = c.get("s_0", 1.0), c.get("g_slope", -1.0)

    b = integral_lift(lambda a, y, z: b_a * a + b_y * y + b_z * z[:, :, 0])
    h = integral_lift(lambda a, y, z: h_a * a + h_y * y + h_z * z[:, :, 0])
    sig = integral_lift(lambda a, y, z: (s_0 + s_a * a + s_y * y + s_z * z[:, :, 0])[:, :, None])
    return CoefficientSet(
        1, 1, 1, np.eye(1), b, sig, h, lambda x: g_slope * x, ("value", "integral"), name,
        params if echo is None else echo,
    )


def _example32_demo(params: Mapping[str, Any]) -> CoefficientSet:
    # hat h = kappa a, hat b = kappa y, hat sigma = kappa z + 1: Lipschitz and
    # monotone with the same constant kappa; the additive 1 keeps X random
    kappa = float(params.get("kappa", 1.0))
    spec = {"h_a": kappa, "b_y": kappa, "s_z": kappa, "s_0": 1.0, "g_slope": -1.0}
    return _custom_lifted(spec, name="example32_demo", echo=params)


def _decoupled_identity(params: Mapping[str, Any]) -> CoefficientSet:
    n = int(params.get("dim", 1))
    eye = np.eye(n)

    def zero(s: PathState, y: Array, z: Array) -> Array:
        return np.zeros_like(s.x)

    def sigma(s: PathState, y: Array, z: Array) -> Array:
        return np.broadcast_to(eye, (s.size, n, n)).copy()

    return CoefficientSet(n, n, n, eye, zero, sigma, zero, lambda x: x.copy(), ("value",), "decoupled_identity", params)


def _pure_driver(params: Mapping[str, Any]) -> CoefficientSet:
    r = float(params.get("r", 0.05))
    terminal = float(params.get("terminal", 1.0))

    def zero(s: PathState, y: Array, z: Array) -> Array:
        return np.zeros_like(s.x)

    def one(s: PathState, y: Array, z: Array) -> Array:
        return np.ones((s.size, 1, 1))

    def h(s: PathState, y: Array, z: Array) -> Array:
        return -r * y

    return CoefficientSet(
        1, 1, 1, np.eye(1), zero, one, h, lambda x: np.full_like(x, terminal), ("value",), "pure_driver", params
    )


def linear_base_set(
    beta1: float,
    beta2: float,
    lam: float,
    G: ArrayLike | None = None,
    *,
    d: int = 1,
    b0: ArrayLike | None = None,
    sigma0: ArrayLike | None = None,
    h0: ArrayLike | None = None,
    g0: ArrayLike | Callable[[Array], Array] | None = None,
) -> CoefficientSet:
    """Linear system ``dX = (-beta2 G^T Y + b0) dt + (-beta2 G^T Z + sigma0) dW``,
    ``dY = (-beta1 G X + h0) dt + Z dW``, ``Y(T) = lam G X(T) + g0``.

    Forcing terms are constants, arrays indexed by grid step (``(K, dim...)``),
    or per-path arrays ``(K, M, dim...)``; they are looked up through
    ``PathState.step``.  ``g0`` may be a constant vector or a function of the
    terminal forward state.
    """
    Gm = np.eye(1) if G is None else np.atleast_2d(np.asarray(G, dtype=np.float64))
    m, n = Gm.shape

    def forcing(value: ArrayLike | None, shape: tuple[int, ...]) -> Callable[[PathState], Array]:
        if value is None:
            return lambda s: np.zeros((s.size,) + shape)
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape == shape or arr.ndim == 0:
            return lambda s: np.broadcast_to(arr, (s.size,) + shape)
        if arr.shape[1:] == shape:
            return lambda s: np.broadcast_to(arr[s.step], (s.size,) + shape)
        if arr.ndim == len(shape) + 2:
            return lambda s: arr[s.step]
        raise CoefficientError(f"forcing array of shape {arr.shape} does not fit {shape}")

    fb, fs, fh = forcing(b0, (n,)), forcing(sigma0, (n, d)), forcing(h0, (m,))

    def b(s: PathState, y: Array, z: Array) -> Array:
        return -beta2 * (y @ Gm) + fb(s)

    def sigma(s: PathState, y: Array, z: Array) -> Array:
        return -beta2 * np.einsum("ji,Mjk->Mik", Gm, z) + fs(s)

    def h(s: PathState, y: Array, z: Array) -> Array:
        return -beta1 * (s.x @ Gm.T) + fh(s)

    if callable(g0):
        g_extra = g0
    else:
        g_const = np.zeros(m) if g0 is None else np.broadcast_to(np.asarray(g0, dtype=np.float64), (m,))
        g_extra = lambda x: np.broadcast_to(g_const, (x.shape[0], m))  # noqa: E731

    def g(x: Array) -> Array:
        return lam * (x @ Gm.T) + g_extra(x)

    params = {"beta1": beta1, "beta2": beta2, "lambda": lam}
    return CoefficientSet(n, m, d, Gm, b, sigma, h, g, ("value",), "linear_base", params, validate=False)


def _linear_base(params: Mapping[str, Any]) -> CoefficientSet:
    p = {k: float(v) for k, v in params.items()}
    return linear_base_set(
        p.get("beta1", 1.0),
        p.get("beta2", 1.0),
        p.get("lambda", 1.0),
        b0=p.get("b0", 0.0),
        sigma0=p.get("sigma0", 0.0),
        h0=p.get("h0", 0.0),
        g0=p.get("g0", 0.0),
    )


_REGISTRY: dict[str, tuple[Callable[[Mapping[str, Any]], CoefficientSet], frozenset[str]]] = {
    "example31": (_example31, frozenset()),
    "example32_demo": (_example32_demo, frozenset({"kappa"})),
    "custom_lifted": (
        _custom_lifted,
        frozenset({"h_a", "h_y", "h_z", "b_a", "b_y", "b_z", "s_a", "s_y", "s_z", "s_0", "g_slope"}),
    ),
    "linear_base": (_linear_base, frozenset({"beta1", "beta2", "lambda", "b0", "sigma0", "h0", "g0"})),
    "decoupled_identity": (_decoupled_identity, frozenset({"dim"})),
    "pure_driver": (_pure_driver, frozenset({"r", "terminal"})),
}


def registry_names() -> list[str]:
    return sorted(_REGISTRY)


def registry_get(name: str, params: Mapping[str, Any] | None = None) -> CoefficientSet:
    """Build a registered problem.  Unknown names or parameters raise."""
    try:
        factory, allowed = _REGISTRY[name]
    except KeyError:
        raise CoefficientError(f"unknown problem {name!r}; known: {', '.join(registry_names())}") from None
    params = dict(params or {})
    extra = set(params) - allowed
    if extra:
        raise CoefficientError(f"problem {name!r} does not take parameters {sorted(extra)}")
    return factory(params)
