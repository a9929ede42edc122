"""Semi-analytic reference solution for the scalar path-dependent example.

The example couples ``X`` to its running integral ``A(t) = int_0^t X ds``::

    dX = (A + 2Y) dt + (A + 2Z) dW,   dY = (A + 3X) dt + Z dW,   Y(1) = -X(1).

Try ``Y = a(t) X + c(t) A`` with deterministic ``a, c``.  Ito's product rule
gives

    dY = [a' X + c' A + c X + a (A + 2Y)] dt + a (A + 2Z) dW.

Matching the ``dW`` terms forces ``Z = a (A + 2Z)``, i.e.
``Z = a A / (1 - 2a)`` (finite while ``a != 1/2``).  Substituting ``Y`` into
the drift and matching coefficients of ``X`` and of ``A`` against ``A + 3X``
leaves the terminal value problem

    a' = 3 - c - 2 a^2,   c' = 1 - a - 2 a c,   a(1) = -1,  c(1) = 0,

where the terminal values come from ``Y(1) = -X(1)`` with ``A(1)`` free.
Since ``A(0) = 0`` the initial value is ``Y(0) = a(0) x0``.  The ODE is
integrated backward with classical RK4; a non-finite value or ``a`` within
``1e-3`` of ``1/2`` marks the solution singular.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import CubicSpline

from .paths import Path, format_float, integral_value
from .ppde import PathFunctional

Array = NDArray[np.float64]

SINGULAR_TOL = 1e-3
HORIZON = 1.0


class OracleError(RuntimeError):
    """The Riccati solution is singular and cannot serve as a reference."""


@dataclass(frozen=True)
class RiccatiSolution:
    grid: Array
    a: Array
    c: Array
    singular: bool

    @property
    def y0_factor(self) -> float:
        return float(self.a[0])

    def require_regular(self) -> None:
        if self.singular:
            raise OracleError("Riccati solution is singular (blow-up or a(t) reached 1/2)")

    def to_csv(self, dest: str | FsPath | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "a", "c"])
        for row in zip(self.grid, self.a, self.c):
            w.writerow([format_float(v) for v in row])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


def riccati_rhs(a: float, c: float) -> tuple[float, float]:
    return 3.0 - c - 2.0 * a * a, 1.0 - a - 2.0 * a * c


def solve_riccati_example31(steps: int = 10_000) -> RiccatiSolution:
    """Integrate ``(a, c)`` backward from ``t = 1`` with ``steps`` RK4 steps."""
    if steps < 100:
        raise ValueError("steps must be at least 100")
    h = HORIZON / steps
    a = np.empty(steps + 1)
    c = np.empty(steps + 1)
    a[steps], c[steps] = -1.0, 0.0
    singular = False
    for k in range(steps, 0, -1):
        ak, ck = a[k], c[k]
        # backward in time: step with -h
        k1 = riccati_rhs(ak, ck)
        k2 = riccati_rhs(ak - 0.5 * h * k1[0], ck - 0.5 * h * k1[1])
        k3 = riccati_rhs(ak - 0.5 * h * k2[0], ck - 0.5 * h * k2[1])
        k4 = riccati_rhs(ak - h * k3[0], ck - h * k3[1])
        a[k - 1] = ak - h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        c[k - 1] = ck - h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not (np.isfinite(a[k - 1]) and np.isfinite(c[k - 1])) or abs(a[k - 1] - 0.5) < SINGULAR_TOL:
            singular = True
            a[: k - 1] = np.nan
            c[: k - 1] = np.nan
            break
    grid = np.linspace(0.0, HORIZON, steps + 1)
    return RiccatiSolution(grid, a, c, singular)


def oracle_y0(x0: float, steps: int = 10_000) -> float:
    sol = solve_riccati_example31(steps)
    sol.require_regular()
    return sol.y0_factor * x0


def oracle_functional(steps: int = 10_000, offset: int = 1) -> tuple[PathFunctional, PathFunctional]:
    """``u = a(t) x(t) + c(t) A(t)`` and ``v = a A / (1 - 2a)`` on joint paths.

    ``x`` is column ``offset`` of the path (the forward component after ``d = 1``
    Brownian coordinates); ``(a, c)`` are cubic-spline interpolants of the
    RK4 solution.
    """
    sol = solve_riccati_example31(steps)
    sol.require_regular()
    a_of = CubicSpline(sol.grid, sol.a)
    c_of = CubicSpline(sol.grid, sol.c)

    def parts(p: Path) -> tuple[float, float, float, float]:
        t = p.end_time
        x = p.values[-1, offset]
        A = integral_value(p)[offset]
        return float(a_of(t)), float(c_of(t)), x, A

    def u(p: Path) -> Array:
        a, c, x, A = parts(p)
        return np.array([a * x + c * A])

    def v(p: Path) -> Array:
        a, _, _, A = parts(p)
        return np.array([a * A / (1.0 - 2.0 * a)])

    return (
        PathFunctional(u, "C12", name="riccati_u"),
        PathFunctional(v, "C12", name="riccati_v"),
    )
