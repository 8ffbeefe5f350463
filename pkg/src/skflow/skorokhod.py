"""Skorokhod distance between càdlàg paths.

For step paths the distance is computed exactly. A time change only matters
through where it sends the jump times of ``y``; between two consecutive jumps
of ``y`` the piecewise-linear interpolation is optimal. Whether
``d^S(x, y) <= delta`` therefore reduces to a reachability question over the
states "``x`` has made ``i`` jumps, the warped ``y`` has made ``j`` jumps",
carrying the feasible positions of the last warped jump as a union of
intervals. The exact value is then located by a search over the finitely many
value gaps followed by bisection on the warp cost.

General paths get a certified bracket ``lower <= d^S <= upper``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidWarpError, ShapeError, UnsupportedInputError
from .paths import CadlagPath, paths_equal, sup_distance, value_norms

__all__ = [
    "TimeWarp",
    "warp_norm",
    "apply_warp",
    "compose",
    "skorokhod_distance_exact",
    "skorokhod_distance_bound",
]

_REL_SLACK = 4e-16


@dataclass(frozen=True)
class TimeWarp:
    """Strictly increasing piecewise-linear bijection of [0, T] with
    ``λ(breakpoints[j]) = images[j]``."""

    breakpoints: np.ndarray
    images: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.breakpoints, dtype=float)
        w = np.asarray(self.images, dtype=float)
        if u.ndim != 1 or u.shape != w.shape or u.size < 2:
            raise InvalidWarpError("breakpoints and images must be 1-d arrays of equal length >= 2")
        if u[0] != 0.0 or w[0] != 0.0 or u[-1] != w[-1]:
            raise InvalidWarpError("a warp must fix 0 and T")
        if not (np.all(np.diff(u) > 0) and np.all(np.diff(w) > 0)):
            raise InvalidWarpError("warp must be strictly increasing with non-degenerate segments")
        object.__setattr__(self, "breakpoints", u)
        object.__setattr__(self, "images", w)

    @classmethod
    def identity(cls, horizon: float = 1.0) -> "TimeWarp":
        return cls(np.array([0.0, horizon]), np.array([0.0, horizon]))

    @classmethod
    def through(cls, pins_from, pins_to, horizon: float = 1.0) -> "TimeWarp":
        """Piecewise-linear warp through interior pins ``λ(pins_from[i]) = pins_to[i]``."""
        u = np.concatenate([[0.0], np.asarray(pins_from, dtype=float), [horizon]])
        w = np.concatenate([[0.0], np.asarray(pins_to, dtype=float), [horizon]])
        return cls(u, w)

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.images) / np.diff(self.breakpoints)

    def __call__(self, t):
        return np.interp(t, self.breakpoints, self.images)

    def inverse(self) -> "TimeWarp":
        return TimeWarp(self.images, self.breakpoints)


def warp_norm(warp: TimeWarp) -> float:
    """``sup_{s<t} |log((λ(t) - λ(s)) / (t - s))|``.

    Every difference quotient of a piecewise-linear map is a convex
    combination of its segment slopes, so the supremum is the largest
    ``|log slope|``.
    """
    slopes = warp.slopes
    if not np.all(np.isfinite(slopes)) or np.any(slopes <= 0):
        raise InvalidWarpError("degenerate warp segment")
    return float(np.max(np.abs(np.log(slopes))))


def compose(outer: TimeWarp, inner: TimeWarp) -> TimeWarp:
    """``outer ∘ inner``."""
    if outer.horizon != inner.horizon:
        raise ShapeError("warp horizons differ")
    pre = np.interp(outer.breakpoints, inner.images, inner.breakpoints)
    u = np.unique(np.concatenate([inner.breakpoints, pre]))
    w = outer(inner(u))
    w[0], w[-1] = 0.0, outer.horizon
    keep = np.concatenate([[True], np.diff(u) > 0]) & np.concatenate([[True], np.diff(w) > 0])
    return TimeWarp(u[keep], w[keep])


def apply_warp(path: CadlagPath, warp: TimeWarp) -> CadlagPath:
    """The composed path ``t -> path(λ(t))``, kept exact by inserting the
    preimages of the path breakpoints."""
    if path.horizon != warp.horizon:
        raise ShapeError("path and warp horizons differ")
    u, w = warp.breakpoints, warp.images
    pre = np.interp(path.times, w, u)
    # (t, λ(t)) pairs; the exact side of each pair is kept as given
    t_all = np.concatenate([u[:-1], pre[1:-1]])
    lam_all = np.concatenate([w[:-1], path.times[1:-1]])
    order = np.lexsort((lam_all, t_all))
    t_all, lam_all = t_all[order], lam_all[order]
    # for duplicate t keep the largest image so the right value wins
    last = np.concatenate([t_all[1:] != t_all[:-1], [True]])
    t_all, lam_all = t_all[last], lam_all[last]
    lam_all = np.maximum.accumulate(lam_all)
    times = np.concatenate([t_all, [path.horizon]])
    k = np.searchsorted(path.times, lam_all, side="right") - 1
    k = np.minimum(k, path.n_segments - 1)
    a = path.a[k] + path.c[k] * (lam_all - path.times[k])[:, None]
    j = np.minimum(np.searchsorted(u, t_all, side="right") - 1, u.size - 2)
    c = path.c[k] * warp.slopes[j][:, None]
    return CadlagPath(times, a, c, path.terminal, path.shape)


# -- exact distance for step paths --------------------------------------------

def _step_structure(path: CadlagPath):
    if not path.is_step:
        raise UnsupportedInputError("exact Skorokhod distance needs pure step paths")
    return path.times[1:-1], np.vstack([path.a]), path.terminal


def _merge(pieces):
    if not pieces:
        return pieces
    pieces.sort()
    out = [list(pieces[0])]
    for lo, hi in pieces[1:]:
        if lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [tuple(p) for p in out]


def _reachable(delta, xa, yb, allowed, horizon) -> bool:
    """Is there a warp with ``||λ|| <= delta`` whose induced order of jumps
    only visits allowed (x-level, y-level) pairs?"""
    lo_f, hi_f = math.exp(-delta), math.exp(delta)
    tol = _REL_SLACK * horizon * 8
    p, q = len(xa), len(yb)
    A = [0.0] + list(xa) + [horizon]
    B = [0.0] + list(yb)
    if not allowed[0][0]:
        return False
    R = [[None] * (q + 1) for _ in range(p + 1)]
    R[0][0] = [(0.0, 0.0)]
    for i in range(p + 1):
        for j in range(q + 1):
            if (i == 0 and j == 0) or not allowed[i][j]:
                continue
            pieces = []
            if i > 0 and R[i - 1][j]:
                ai = A[i]
                for lo, hi in R[i - 1][j]:
                    if lo <= ai + tol:
                        pieces.append((lo, min(hi, ai)))
            if j > 0:
                db = B[j] - B[j - 1]
                if R[i][j - 1]:
                    for lo, hi in R[i][j - 1]:
                        nlo = max(lo + lo_f * db, A[i])
                        nhi = min(hi + hi_f * db, A[i + 1])
                        if nlo <= nhi + tol:
                            pieces.append((min(nlo, nhi), nhi))
                if i > 0 and R[i - 1][j - 1]:
                    ai = A[i]
                    for lo, hi in R[i - 1][j - 1]:
                        if lo + lo_f * db - tol <= ai <= hi + hi_f * db + tol:
                            pieces.append((ai, ai))
                            break
            R[i][j] = _merge(pieces)
    final = R[p][q]
    if not final:
        return False
    tail = horizon - B[q]
    need_lo, need_hi = horizon - hi_f * tail, horizon - lo_f * tail
    return any(max(lo, need_lo) <= min(hi, need_hi) + tol for lo, hi in final)


def skorokhod_distance_exact(x: CadlagPath, y: CadlagPath, max_jumps: int = 12) -> float:
    """Exact Skorokhod distance between two step paths.

    Raises
    ------
    UnsupportedInputError
        If either path has affine pieces or more than ``max_jumps`` interior jumps.
    """
    if x.shape != y.shape or x.horizon != y.horizon:
        raise ShapeError("paths must share shape and horizon")
    xa, xv, xT = _step_structure(x)
    yb, yv, yT = _step_structure(y)
    if len(xa) > max_jumps or len(yb) > max_jumps:
        raise UnsupportedInputError(f"more than {max_jumps} jumps; use skorokhod_distance_bound")
    if paths_equal(x, y):
        return 0.0
    horizon = x.horizon
    gaps = value_norms((xv[:, None, :] - yv[None, :, :]).reshape(-1, x.dim), x.shape).reshape(len(xv), len(yv))
    gap_T = float(value_norms((xT - yT)[None, :], x.shape)[0])
    levels = np.unique(np.concatenate([[gap_T], gaps[gaps >= gap_T]]))

    def feasible(delta, level):
        return delta >= gap_T and _reachable(delta, xa, yb, (gaps <= level).tolist(), horizon)

    lo_idx, hi_idx = 0, len(levels) - 1
    while lo_idx < hi_idx:
        mid = (lo_idx + hi_idx) // 2
        if feasible(levels[mid], levels[mid]):
            hi_idx = mid
        else:
            lo_idx = mid + 1
    k = lo_idx
    if k == 0:
        return float(levels[0])
    below = float(levels[k - 1])
    allowed = (gaps <= below).tolist()
    lo, hi = below, float(levels[k])
    if not _reachable(hi, xa, yb, allowed, horizon):
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _reachable(mid, xa, yb, allowed, horizon):
            hi = mid
        else:
            lo = mid
    return _snap(hi, below, float(levels[k]), xa, yb, horizon)


def _snap(delta, lo, hi, xa, yb, horizon):
    """Replace a bisected ``delta`` by the nearest ``|log Δa - log Δb|`` over
    increments between jump times (with 0 and T): the optimum is attained at
    such a ratio, and this form is symmetric in ``x`` and ``y`` bit-for-bit."""
    pa = np.concatenate([[0.0], xa, [horizon]])
    pb = np.concatenate([[0.0], yb, [horizon]])
    da = (pa[None, :] - pa[:, None])[np.triu_indices(pa.size, 1)]
    db = (pb[None, :] - pb[:, None])[np.triu_indices(pb.size, 1)]
    da, db = da[da > 0], db[db > 0]
    cands = np.abs(np.log(da)[:, None] - np.log(db)[None, :]).ravel()
    cands = cands[(cands >= lo) & (cands <= hi)]
    if cands.size == 0:
        return delta
    best = cands[np.argmin(np.abs(cands - delta))]
    return float(best) if abs(best - delta) <= 1e-9 * max(1.0, delta) else delta


# -- bracket for general paths -----------------------------------------------

def _warp_candidates(horizon, kinks, grid, max_warps, seed):
    nodes = np.arange(grid, horizon - grid / 2, grid)
    nodes = nodes[(nodes > 0) & (nodes < horizon)]
    yield TimeWarp.identity(horizon)
    combos = []
    for k in range(1, kinks + 1):
        for us in itertools.combinations(nodes, k):
            for ws in itertools.combinations(nodes, k):
                combos.append((us, ws))
                if len(combos) > 50 * max_warps:
                    break
    if len(combos) > max_warps:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(combos), size=max_warps, replace=False)
        combos = [combos[i] for i in sorted(pick)]
    for us, ws in combos:
        yield TimeWarp.through(us, ws, horizon)


def _min_gap(points, ts, lo, hi, y: CadlagPath):
    """For each i: min over s in [lo_i, hi_i] of ||points_i - y(s)||, with the
    closure of every affine piece of y."""
    starts, ends = y.times[:-1], y.times[1:]
    s_lo = np.maximum(lo[:, None], starts[None, :])
    s_hi = np.minimum(hi[:, None], ends[None, :])
    active = s_lo <= s_hi
    cc = np.einsum("kd,kd->k", y.c, y.c)
    diff0 = points[:, None, :] - y.a[None, :, :]  # p - a_k
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.einsum("nkd,kd->nk", diff0, y.c) / cc[None, :]
    tau = np.where(cc[None, :] > 0, tau, 0.0) + starts[None, :]
    s_star = np.clip(tau, s_lo, s_hi)
    resid = diff0 - y.c[None, :, :] * (s_star - starts[None, :])[:, :, None]
    dist = np.sqrt(np.einsum("nkd,nkd->nk", resid, resid))
    dist = np.where(active, dist, np.inf)
    best = dist.min(axis=1)
    at_T = hi >= y.horizon
    if np.any(at_T):
        dT = np.sqrt(np.sum((points - y.terminal[None, :]) ** 2, axis=1))
        best = np.where(at_T, np.minimum(best, dT), best)
    return best


def _lower_bound(x: CadlagPath, y: CadlagPath, upper: float, grid: float) -> float:
    horizon = x.horizon
    ts = np.unique(np.concatenate([x.times, np.arange(0.0, horizon, grid / 4), [horizon]]))
    ts = ts[(ts >= 0) & (ts <= horizon)]
    pts = np.vstack([x.values_at(ts), x.left_values_at(ts[1:])])
    tt = np.concatenate([ts, ts[1:]])

    def worst_gap(delta):
        e_lo, e_hi = math.exp(-delta), math.exp(delta)
        lo = np.maximum(tt * e_lo, horizon - (horizon - tt) * e_hi)
        hi = np.minimum(tt * e_hi, horizon - (horizon - tt) * e_lo)
        lo, hi = np.clip(lo, 0, horizon), np.clip(hi, 0, horizon)
        return float(np.max(_min_gap(pts, tt, lo, hi, y)))

    if worst_gap(0.0) <= 0.0:
        return 0.0
    if worst_gap(upper) > upper:
        return upper
    lo, hi = 0.0, upper
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if worst_gap(mid) > mid:
            lo = mid
        else:
            hi = mid
    return lo


def skorokhod_distance_bound(x: CadlagPath, y: CadlagPath, kinks: int = 1, grid: float = 0.05,
                             max_warps: int = 4096, seed: int = 0) -> tuple[float, float]:
    """Bracket ``(lower, upper)`` of the Skorokhod distance for general paths.

    ``upper`` minimises the objective over the identity and piecewise-linear
    warps with at most ``kinks`` interior kinks on a grid of spacing ``grid``
    (sub-sampled deterministically beyond ``max_warps`` candidates).
    ``lower`` uses that any admissible warp with norm below ``delta`` keeps
    ``λ(t)`` inside ``[t e^{-delta}, t e^{delta}]`` (and the mirrored window
    from ``T``), so the closest value of ``y`` in that window must lie within
    ``delta`` of ``x(t)``.
    """
    if kinks < 0 or grid <= 0:
        raise ValueError("kinks must be >= 0 and grid > 0")
    if x.shape != y.shape or x.horizon != y.horizon:
        raise ShapeError("paths must share shape and horizon")
    if x.dim != 1 and len(x.shape) != 1:
        raise UnsupportedInputError("bounds support vector-valued paths only")
    upper = sup_distance(x, y)
    for warp in _warp_candidates(x.horizon, kinks, grid, max_warps, seed):
        cost = warp_norm(warp)
        if cost >= upper:
            continue
        upper = min(upper, max(cost, sup_distance(x, apply_warp(y, warp))))
    if upper == 0.0:
        return 0.0, 0.0
    lower = min(_lower_bound(x, y, upper, grid), upper)
    return lower, upper
