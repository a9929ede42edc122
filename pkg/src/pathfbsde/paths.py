"""Discretely sampled cadlag paths and the operations of functional Ito calculus.

A :class:`Path` holds samples ``v_0 .. v_K`` on the uniform grid ``k * grid_step``
and is read with piecewise-constant, right-continuous semantics.  Everything in
this module is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
from numpy.typing import ArrayLike, NDArray

# relative tolerance used when deciding whether a time lies on the grid
GRID_RTOL = 1e-9


class PathError(ValueError):
    """Invalid path construction or incompatible path arguments."""


@dataclass(frozen=True, eq=False)
class Path:
    """Path on ``[0, end_time]`` sampled every ``grid_step``.

    ``values`` has shape ``(K + 1, dim)``.  The array is copied and made
    read-only at construction.
    """

    values: NDArray[np.float64]
    grid_step: float

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] == 0 or vals.shape[1] == 0:
            raise PathError(f"path values must be a non-empty (K+1, dim) array, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise PathError("path values must be finite")
        step = float(self.grid_step)
        if not (step > 0.0 and math.isfinite(step)):
            raise PathError(f"grid_step must be positive, got {self.grid_step}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "grid_step", step)

    @classmethod
    def constant(cls, value: ArrayLike, end_time: float, grid_step: float) -> Path:
        steps = grid_index(end_time, grid_step)
        v = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(np.tile(v, (steps + 1, 1)), grid_step)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def num_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def end_time(self) -> float:
        return self.num_steps * self.grid_step

    @property
    def last(self) -> NDArray[np.float64]:
        return self.values[-1]

    @property
    def times(self) -> NDArray[np.float64]:
        return np.arange(self.num_steps + 1) * self.grid_step

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Path):
            return NotImplemented
        return (
            self.grid_step == other.grid_step
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Path(dim={self.dim}, steps={self.num_steps}, grid_step={self.grid_step:g})"


@dataclass(frozen=True)
class PathPair:
    first: Path
    second: Path

    def __post_init__(self) -> None:
        _check_compatible(self.first, self.second)


def grid_index(t: float, grid_step: float) -> int:
    """Index ``k`` with ``k * grid_step == t``; raises for off-grid times."""
    k = round(t / grid_step)
    if k < 0 or abs(k * grid_step - t) > GRID_RTOL * max(1.0, abs(t)):
        raise PathError(f"time {t!r} is not on the grid of step {grid_step!r}")
    return int(k)


def _check_compatible(a: Path, b: Path) -> None:
    if a.dim != b.dim:
        raise PathError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if not math.isclose(a.grid_step, b.grid_step, rel_tol=GRID_RTOL, abs_tol=0.0):
        raise PathError(f"grid step mismatch: {a.grid_step} vs {b.grid_step}")


def sup_norm(p: Path) -> float:
    return float(np.max(np.linalg.norm(p.values, axis=1)))


def stopped_values(p: Path, num_points: int) -> NDArray[np.float64]:
    """Samples of ``p`` on ``num_points`` grid points, frozen at the last value."""
    if num_points <= len(p):
        return p.values[:num_points]
    pad = np.repeat(p.values[-1:], num_points - len(p), axis=0)
    return np.concatenate([p.values, pad])


def d_infty(a: Path, b: Path) -> float:
    """Skorokhod-type distance ``sup |a(s^t) - b(s^tbar)| + |t - tbar|``."""
    _check_compatible(a, b)
    n = max(len(a), len(b))
    diff = stopped_values(a, n) - stopped_values(b, n)
    return float(np.max(np.linalg.norm(diff, axis=1))) + abs(a.num_steps - b.num_steps) * a.grid_step


def vertical_bump(p: Path, x: ArrayLike) -> Path:
    """Shift the terminal value of ``p`` by ``x``; earlier values are untouched."""
    shift = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if shift.shape != (p.dim,):
        raise PathError(f"bump must have length {p.dim}, got shape {shift.shape}")
    vals = p.values.copy()
    vals[-1] += shift
    return Path(vals, p.grid_step)


def horizontal_extend(p: Path, s: float) -> Path:
    """Flat extension of ``p`` to end time ``s >= p.end_time``."""
    if s < p.end_time - GRID_RTOL * max(1.0, p.end_time):
        raise PathError(f"cannot extend a path ending at {p.end_time} back to {s}")
    extra = grid_index(s - p.end_time, p.grid_step) if s > p.end_time else 0
    if extra == 0:
        return p
    return Path(stopped_values(p, len(p) + extra), p.grid_step)


def restrict(p: Path, t: float) -> Path:
    """Prefix of ``p`` on ``[0, t]``."""
    k = grid_index(t, p.grid_step)
    if k > p.num_steps:
        raise PathError(f"time {t} beyond path end {p.end_time}")
    if k == p.num_steps:
        return p
    return Path(p.values[: k + 1], p.grid_step)


def left_riemann(values: NDArray[np.float64], dt: float, axis: int = 0) -> NDArray[np.float64]:
    """Running left-endpoint sums ``A_k = sum_{j<k} v_j dt`` with ``A_0 = 0``.

    Accumulates ``A_{k+1} = A_k + v_k * dt`` sequentially, which the solver
    reproduces bit-for-bit when it carries the integral forward step by step.
    """
    v = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    out = np.zeros_like(v)
    np.cumsum(v[:-1] * dt, axis=0, out=out[1:])
    return np.moveaxis(out, 0, axis)


def running_integral(p: Path) -> Path:
    return Path(left_riemann(p.values, p.grid_step), p.grid_step)


def integral_value(p: Path) -> NDArray[np.float64]:
    """Terminal value of :func:`running_integral`, without building the path."""
    if len(p) == 1:
        return np.zeros(p.dim)
    return np.cumsum(p.values[:-1] * p.grid_step, axis=0)[-1]


def path_to_csv(p: Path, dest: str | FsPath | io.TextIOBase | None = None) -> str:
    """Write ``t,v1,...,vn`` rows with round-trip precision; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"v{i + 1}" for i in range(p.dim)])
    for t, row in zip(p.times, p.values):
        writer.writerow([format_float(t)] + [format_float(v) for v in row])
    text = buf.getvalue()
    if isinstance(dest, io.TextIOBase):
        dest.write(text)
    elif dest is not None:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return text


def path_from_csv(src: str | FsPath | io.TextIOBase) -> Path:
    if isinstance(src, io.TextIOBase):
        text = src.read()
    else:
        with open(src, newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "t":
        raise PathError("path CSV must start with a 't,v1,...' header")
    body = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=np.float64)
    if body.shape[0] == 0:
        raise PathError("path CSV has no rows")
    times = body[:, 0]
    if times[0] != 0.0:
        raise PathError("path CSV time column must start at 0")
    if len(times) == 1:
        raise PathError("a single-row path CSV does not determine the grid step")
    steps = np.diff(times)
    step = steps[0]
    if step <= 0 or not np.allclose(steps, step, rtol=1e-9, atol=0.0):
        raise PathError("path CSV time column must increase with a constant step")
    return Path(body[:, 1:], step)


def format_float(x: float) -> str:
    return "%.17g" % x
