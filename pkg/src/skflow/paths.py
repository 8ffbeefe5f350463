"""Piecewise-affine càdlàg paths on [0, T] and their algebra.

A path is stored as breakpoints ``0 = s_0 < ... < s_K = T`` together with one
affine piece per segment, ``value(t) = a_k + c_k (t - s_k)`` on ``[s_k, s_{k+1})``,
and a separate terminal value at ``T``. Values may be vectors or matrices;
internally they are flattened to ``dim`` components and ``shape`` records how
to view them.
"""
from __future__ import annotations

import csv
import io
from typing import Iterable, Sequence

import numpy as np

from ._kernels import combine2, locate_sorted, merge_unique, sup_diff
from .errors import DomainError, ShapeError

__all__ = [
    "CadlagPath",
    "value_norms",
    "eval_path",
    "left_limit",
    "stop_at",
    "add_shift",
    "sup_distance",
    "sup_norm",
    "linear_combine",
    "paths_equal",
    "write_csv",
    "read_csv",
    "to_csv_string",
    "from_csv_string",
]


def value_norms(values: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Row-wise norms of flattened values.

    Vectors use the Euclidean norm, matrices the operator norm induced by
    Euclidean norms (which equals the Euclidean norm of the entries whenever
    one side of the matrix has length one).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[None, :]
    if len(shape) == 2 and shape[0] > 1 and shape[1] > 1:
        mats = values.reshape((-1,) + tuple(shape))
        return np.linalg.norm(mats, ord=2, axis=(1, 2))
    return np.sqrt(np.einsum("ij,ij->i", values, values))


def _readonly(arr):
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


class CadlagPath:
    """Immutable piecewise-affine càdlàg path.

    Parameters
    ----------
    times : array of shape (K+1,)
        Strictly increasing breakpoints, first 0 and last the horizon.
    a, c : arrays of shape (K, dim)
        Value at the left end and slope of every segment.
    terminal : array of shape (dim,)
        Value at the horizon.
    shape : tuple, optional
        Shape of a single value; defaults to ``(dim,)``.
    """

    __slots__ = ("times", "a", "c", "terminal", "shape")

    def __init__(self, times, a, c, terminal, shape=None, *, canonical=True, check=True):
        times = np.asarray(times, dtype=float)
        a = np.asarray(a, dtype=float)
        c = np.asarray(c, dtype=float)
        terminal = np.asarray(terminal, dtype=float).reshape(-1)
        if a.ndim == 1:
            a = a[:, None]
        if c.ndim == 1:
            c = c[:, None]
        dim = terminal.shape[0]
        if shape is None:
            shape = (dim,)
        shape = tuple(int(s) for s in shape)
        if check:
            if times.ndim != 1 or times.shape[0] < 2:
                raise ShapeError("a path needs at least one segment")
            if times[0] != 0.0:
                raise DomainError("first breakpoint must be 0")
            if not np.all(np.diff(times) > 0):
                raise DomainError("breakpoints must be strictly increasing")
            k = times.shape[0] - 1
            if a.shape != (k, dim) or c.shape != (k, dim):
                raise ShapeError(f"segment arrays must have shape {(k, dim)}")
            if int(np.prod(shape)) != dim:
                raise ShapeError(f"value shape {shape} does not match dim {dim}")
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c)) and np.all(np.isfinite(terminal))
                    and np.all(np.isfinite(times))):
                raise DomainError("path values must be finite")
        if canonical and times.shape[0] > 2:
            times, a, c = _merge_constant_runs(times, a, c)
        self.times = _readonly(times)
        self.a = _readonly(a)
        self.c = _readonly(c)
        self.terminal = _readonly(terminal)
        self.shape = shape

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value, horizon: float = 1.0) -> "CadlagPath":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        shape = value.shape
        flat = value.reshape(-1)
        return cls([0.0, horizon], flat[None, :], np.zeros((1, flat.size)), flat, shape)

    @classmethod
    def zeros(cls, dim_or_shape, horizon: float = 1.0) -> "CadlagPath":
        shape = (dim_or_shape,) if np.isscalar(dim_or_shape) else tuple(dim_or_shape)
        return cls.constant(np.zeros(shape), horizon)

    @classmethod
    def step(cls, jump_times, values, horizon: float = 1.0, shape=None) -> "CadlagPath":
        """Step path taking ``values[0]`` on ``[0, jump_times[0])`` and
        ``values[i]`` from ``jump_times[i-1]`` on. A jump time equal to the
        horizon only changes the terminal value."""
        jt = np.asarray(jump_times, dtype=float).reshape(-1)
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        vals = vals.reshape(vals.shape[0], -1)
        if vals.shape[0] != jt.size + 1:
            raise ShapeError("need one more value than jump times")
        if jt.size and (jt[0] <= 0 or jt[-1] > horizon):
            raise DomainError("jump times must lie in (0, T]")
        if jt.size and jt[-1] == horizon:
            inner, terminal = jt[:-1], vals[-1]
            seg_vals = vals[:-1]
        else:
            inner, terminal = jt, vals[-1]
            seg_vals = vals
        times = np.concatenate([[0.0], inner, [horizon]])
        return cls(times, seg_vals, np.zeros_like(seg_vals), terminal, shape)

    @classmethod
    def linear(cls, slope, horizon: float = 1.0, start=None) -> "CadlagPath":
        slope = np.atleast_1d(np.asarray(slope, dtype=float)).reshape(-1)
        start = np.zeros_like(slope) if start is None else np.atleast_1d(np.asarray(start, dtype=float)).reshape(-1)
        return cls([0.0, horizon], start[None, :], slope[None, :], start + slope * horizon)

    # -- basic properties ---------------------------------------------------
    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.terminal.shape[0]

    @property
    def n_segments(self) -> int:
        return self.times.shape[0] - 1

    @property
    def is_step(self) -> bool:
        return not np.any(self.c)

    def segment_ends(self) -> np.ndarray:
        """Left limits at ``s_1, ..., s_K`` (shape (K, dim))."""
        return self.a + self.c * np.diff(self.times)[:, None]

    def values_at(self, ts) -> np.ndarray:
        """Right-continuous values at the times ``ts`` as an (N, dim) array."""
        ts = np.asarray(ts, dtype=float).reshape(-1)
        self._check_domain(ts)
        k = _locate(self.times, ts)
        k = np.minimum(k, self.n_segments - 1)
        out = self.a[k] + self.c[k] * (ts - self.times[k])[:, None]
        at_end = ts == self.times[-1]
        if np.any(at_end):
            out[at_end] = self.terminal
        return out

    def left_values_at(self, ts) -> np.ndarray:
        """Left limits at the times ``ts``; the left limit at 0 is the value at 0."""
        ts = np.asarray(ts, dtype=float).reshape(-1)
        self._check_domain(ts)
        k = _locate(self.times, ts)
        k = k - (self.times[np.maximum(k, 0)] == ts)
        k = np.maximum(k, 0)
        return self.a[k] + self.c[k] * (ts - self.times[k])[:, None]

    def __call__(self, t):
        return eval_path(self, t)

    def jumps(self) -> tuple[np.ndarray, np.ndarray]:
        """Times in (0, T] where the path jumps, and the jump sizes."""
        lefts = np.vstack([self.segment_ends()])
        rights = np.vstack([self.a[1:], self.terminal[None, :]])
        sizes = rights - lefts
        mask = np.any(sizes != 0, axis=1)
        return self.times[1:][mask], sizes[mask]

    def _check_domain(self, ts):
        if ts.size and (np.min(ts) < 0.0 or np.max(ts) > self.times[-1] or np.any(np.isnan(ts))):
            raise DomainError(f"time outside [0, {self.horizon}]")

    def __repr__(self):
        return f"CadlagPath(shape={self.shape}, horizon={self.horizon}, segments={self.n_segments})"


def _locate(times, ts):
    """``searchsorted(times, ts, 'right') - 1``, linear-time for sorted queries."""
    if ts.size > 32 and np.all(ts[1:] >= ts[:-1]):
        return locate_sorted(times, ts)
    return np.searchsorted(times, ts, side="right") - 1


def _merge_constant_runs(times, a, c):
    # Only constant pieces with bit-identical values are merged: that keeps
    # evaluation unchanged bit-for-bit.
    flat = ~np.any(c != 0, axis=1)
    same = np.all(a[1:] == a[:-1], axis=1) & flat[1:] & flat[:-1]
    if not np.any(same):
        return times, a, c
    keep = np.concatenate([[True], ~same])
    times = np.concatenate([times[:-1][keep], times[-1:]])
    return times, a[keep], c[keep]


def _reshape_value(path: CadlagPath, flat):
    return flat.reshape(path.shape)


def eval_path(path: CadlagPath, t):
    """Right-continuous value at ``t`` (scalar or array)."""
    if np.ndim(t) == 0:
        return _reshape_value(path, path.values_at([t])[0])
    vals = path.values_at(t)
    return vals.reshape((-1,) + path.shape)


def left_limit(path: CadlagPath, t):
    """Left limit at ``t``; at ``t = 0`` this is the value at 0."""
    if np.ndim(t) == 0:
        return _reshape_value(path, path.left_values_at([t])[0])
    return path.left_values_at(t).reshape((-1,) + path.shape)


def stop_at(path: CadlagPath, t: float) -> CadlagPath:
    """The stopped path ``s -> path(min(s, t))``."""
    t = float(t)
    if t < 0 or t > path.horizon:
        raise DomainError(f"stopping time {t} outside [0, {path.horizon}]")
    if t == path.horizon:
        return path
    k = int(np.searchsorted(path.times, t, side="right") - 1)
    value = path.a[k] + path.c[k] * (t - path.times[k])
    if t > path.times[k]:
        times = np.concatenate([path.times[: k + 1], [t, path.horizon]])
        a = np.vstack([path.a[: k + 1], value[None, :]])
        c = np.vstack([path.c[: k + 1], np.zeros((1, path.dim))])
    else:
        times = np.concatenate([path.times[: k + 1], [path.horizon]])
        a = np.vstack([path.a[:k], value[None, :]])
        c = np.vstack([path.c[:k], np.zeros((1, path.dim))])
    return CadlagPath(times, a, c, value, path.shape, check=False)


def _insert_breakpoint(path: CadlagPath, r: float):
    """Return (times, a, c, index of the segment starting at r)."""
    k = int(np.searchsorted(path.times, r, side="right") - 1)
    if path.times[k] == r:
        return path.times, path.a, path.c, k
    value = path.a[k] + path.c[k] * (r - path.times[k])
    times = np.insert(path.times, k + 1, r)
    a = np.insert(path.a, k + 1, value, axis=0)
    c = np.insert(path.c, k + 1, path.c[k], axis=0)
    return times, a, c, k + 1


def add_shift(path: CadlagPath, r: float, v) -> CadlagPath:
    """``path + v * 1_[r, T]``."""
    r = float(r)
    if r < 0 or r > path.horizon:
        raise DomainError(f"shift time {r} outside [0, {path.horizon}]")
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 1 and path.dim != 1:
        v = np.full(path.dim, v[0])
    if v.size != path.dim:
        raise ShapeError("shift has wrong dimension")
    if not np.any(v):
        return path
    terminal = path.terminal + v
    if r == path.horizon:
        return CadlagPath(path.times, path.a, path.c, terminal, path.shape, check=False)
    times, a, c, k = _insert_breakpoint(path, r)
    a = np.array(a)
    a[k:] += v
    return CadlagPath(times, a, c, terminal, path.shape, check=False)


def _check_compatible(paths: Sequence[CadlagPath]):
    first = paths[0]
    for p in paths[1:]:
        if p.shape != first.shape:
            raise ShapeError(f"shape mismatch: {p.shape} vs {first.shape}")
        if p.horizon != first.horizon:
            raise ShapeError(f"horizon mismatch: {p.horizon} vs {first.horizon}")


def linear_combine(terms: Iterable[tuple[float, CadlagPath]]) -> CadlagPath:
    """Pointwise linear combination ``sum_i coef_i * path_i`` on the union of breakpoints."""
    terms = list(terms)
    if not terms:
        raise ShapeError("empty combination")
    paths = [p for _, p in terms]
    _check_compatible(paths)
    if len(terms) == 2:
        (w1, x), (w2, y) = terms
        times, a, c, terminal = combine2(x.times, x.a, x.c, x.terminal, y.times, y.a, y.c, y.terminal,
                                         float(w1), float(w2))
        return CadlagPath(times, a, c, terminal, x.shape, check=False)
    times = paths[0].times
    for p in paths[1:]:
        if not (p.times.shape == times.shape and np.array_equal(p.times, times)):
            times = merge_unique(times, p.times)
    starts = times[:-1]
    a = np.zeros((starts.size, paths[0].dim))
    c = np.zeros_like(a)
    terminal = np.zeros(paths[0].dim)
    for coef, p in terms:
        coef = float(coef)
        if coef == 0.0:
            continue
        if p.times.shape == times.shape and np.array_equal(p.times, times):
            a += coef * p.a
            c += coef * p.c
        else:
            k = locate_sorted(p.times, starts)
            a += coef * (p.a[k] + p.c[k] * (starts - p.times[k])[:, None])
            c += coef * p.c[k]
        terminal += coef * p.terminal
    return CadlagPath(times, a, c, terminal, paths[0].shape, check=False)


def sup_norm(path: CadlagPath) -> float:
    """Exact ``sup_t ||path(t)||`` (left limits included)."""
    starts = value_norms(path.a, path.shape)
    ends = value_norms(path.segment_ends(), path.shape)
    term = value_norms(path.terminal[None, :], path.shape)
    return float(max(starts.max(), ends.max(), term[0]))


def sup_distance(x: CadlagPath, y: CadlagPath) -> float:
    """Exact uniform distance between two paths.

    The difference is affine on every segment of the merged breakpoint set, so
    its norm (a convex function there) peaks at a segment end; left limits at
    jump times and the terminal value are included.
    """
    _check_compatible([x, y])
    if len(x.shape) == 2 and x.shape[0] > 1 and x.shape[1] > 1:
        return sup_norm(linear_combine([(1.0, x), (-1.0, y)]))
    return float(sup_diff(x.times, x.a, x.c, x.terminal, y.times, y.a, y.c, y.terminal))


def running_sup_norm(path: CadlagPath, ts, *, left: bool = False) -> np.ndarray:
    """``sup_{s <= t} ||path(s)||`` (or ``sup_{s < t}`` with ``left=True``) at each t."""
    ts = np.asarray(ts, dtype=float).reshape(-1)
    starts = value_norms(path.a, path.shape)
    ends = value_norms(path.segment_ends(), path.shape)
    # sup over [0, s_k] for every breakpoint (inclusive of the value at s_k)
    seg_max = np.maximum(starts, ends)
    before = np.concatenate([[0.0], np.maximum.accumulate(seg_max)])
    k = np.searchsorted(path.times, ts, side="right") - 1
    k = np.minimum(k, path.n_segments - 1)
    prev = np.where(k > 0, before[k], 0.0)
    cur_start = starts[k]
    cur = value_norms(path.left_values_at(ts) if left else path.values_at(ts), path.shape)
    out = np.maximum(np.maximum(prev, cur_start), cur)
    if left:
        # at t = s_k the segment starting there has not been entered yet
        on_bp = path.times[k] == ts
        out = np.where(on_bp & (k > 0), np.maximum(before[k], cur), out)
        out = np.where(ts == 0.0, cur, out)
    else:
        at_end = ts == path.horizon
        if np.any(at_end):
            out[at_end] = np.maximum(before[-1], value_norms(path.terminal[None, :], path.shape)[0])
    return out


def paths_equal(x: CadlagPath, y: CadlagPath) -> bool:
    """Equality of canonical representations."""
    return (
        x.shape == y.shape
        and np.array_equal(x.times, y.times)
        and np.array_equal(x.a, y.a)
        and np.array_equal(x.c, y.c)
        and np.array_equal(x.terminal, y.terminal)
    )


# -- CSV -------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _csv_rows(path: CadlagPath):
    ends = path.segment_ends()
    rows = [(0.0, path.a[0], "anchor")]
    for k in range(1, path.n_segments + 1):
        t = path.times[k]
        right = path.a[k] if k < path.n_segments else path.terminal
        left = ends[k - 1]
        if np.array_equal(left, right):
            rows.append((t, right, "anchor"))
        else:
            rows.append((t, left, "jump-pre"))
            rows.append((t, right, "jump-post"))
    return rows


def write_csv(path: CadlagPath, fh) -> None:
    """Write ``t,v1..vdim,kind`` rows; values use shortest round-trip repr."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t"] + [f"v{i + 1}" for i in range(path.dim)] + ["kind"])
    for t, vals, kind in _csv_rows(path):
        writer.writerow([_fmt(t)] + [_fmt(v) for v in vals] + [kind])


def to_csv_string(path: CadlagPath) -> str:
    buf = io.StringIO()
    write_csv(path, buf)
    return buf.getvalue()


def _exact_slope(a: np.ndarray, end: np.ndarray, h: float) -> np.ndarray:
    # pick slopes whose recomputed segment end reproduces the stored value
    c = (end - a) / h
    for _ in range(8):
        got = a + c * h
        bad = got != end
        if not np.any(bad):
            break
        c = np.where(bad, np.where(got < end, np.nextafter(c, np.inf), np.nextafter(c, -np.inf)), c)
    return c


def read_csv(fh, shape=None) -> CadlagPath:
    reader = csv.reader(fh)
    header = next(reader)
    if not header or header[0] != "t" or header[-1] != "kind":
        raise ShapeError("expected header t,v1,...,kind")
    dim = len(header) - 2
    points = []  # (t, left, right)
    for row in reader:
        if not row:
            continue
        t = float(row[0])
        vals = np.array([float(v) for v in row[1:-1]])
        kind = row[-1]
        if kind == "anchor":
            points.append([t, vals, vals])
        elif kind == "jump-pre":
            points.append([t, vals, None])
        elif kind == "jump-post":
            if not points or points[-1][0] != t or points[-1][2] is not None:
                raise ShapeError(f"jump-post row at t={t} without matching jump-pre")
            points[-1][2] = vals
        else:
            raise ShapeError(f"unknown row kind {kind!r}")
    if len(points) < 2:
        raise ShapeError("a path needs at least two rows")
    times = np.array([p[0] for p in points])
    rights = np.array([p[2] for p in points]).reshape(len(points), dim)
    lefts = np.array([p[1] for p in points]).reshape(len(points), dim)
    a = rights[:-1]
    c = np.vstack([_exact_slope(a[k], lefts[k + 1], times[k + 1] - times[k]) for k in range(len(points) - 1)])
    return CadlagPath(times, a, c, rights[-1], shape)


def from_csv_string(text: str, shape=None) -> CadlagPath:
    return read_csv(io.StringIO(text), shape)
