"""Independent reference computations: brute-force warp search for the
Skorokhod distance and the closed-form solution of the linear equation
``dX = X_{s-} dY`` for finite-activity drivers."""
import math

import numpy as np

from .paths import CadlagPath


def _range_max(vals):
    n = len(vals)
    table = np.full((n, n), -np.inf)
    for i in range(n):
        table[i, i:] = np.maximum.accumulate(vals[i:])
    return table


def _log_cost(dc, db, slack=0.0):
    # slack > 0: cheapest cost for any increment within dc +- slack
    if slack:
        dc = np.clip(np.broadcast_to(db, np.shape(dc)), dc - slack, dc + slack)
    with np.errstate(divide="ignore"):
        return np.where(dc > 0, np.abs(np.log(np.maximum(dc, 1e-300) / db)), np.inf)


def _dp(xa, xv, xT, yb, yv, yT, cands, slack=0.0):
    """Bottleneck DP over warps pinned at the y-jump images c_j in cands[j]."""
    horizon = 1.0
    q = len(yb)
    B = np.concatenate([[0.0], yb])
    tables = [_range_max(np.abs(xv - yv[j])) for j in range(q + 1)]
    d_T = abs(xT - yT)

    def value(j, c_lo, c_hi):
        i1 = np.searchsorted(xa, c_lo, side="right")
        i2 = np.searchsorted(xa, c_hi, side="left")
        return tables[j][i1[:, None], i2[None, :]]

    prev_c = np.array([0.0])
    prev_cost = np.array([0.0])
    back = []
    for j in range(1, q + 1):
        c = cands[j - 1]
        step = np.maximum(_log_cost(c[None, :] - prev_c[:, None], B[j] - B[j - 1], slack),
                          value(j - 1, prev_c, c))
        step = np.maximum(step, prev_cost[:, None])
        arg = np.argmin(step, axis=0)
        back.append((prev_c, arg))
        prev_cost = step[arg, np.arange(c.size)]
        prev_c = c
    tail = _log_cost(horizon - prev_c, horizon - B[q], slack)
    i1 = np.searchsorted(xa, prev_c, side="right")
    last = tables[q][i1, len(xa)]
    total = np.maximum(np.maximum(prev_cost, tail), np.maximum(last, d_T))
    best = int(np.argmin(total))
    pins = [prev_c[best]]
    idx = best
    for prev, arg in reversed(back[1:]):
        idx = arg[idx]
        pins.append(prev[idx])
    return float(total[best]), pins[::-1]


def grid_warp_distance(x, y, h=1e-3, refine=(100, 100), width=2):
    """Skorokhod distance of scalar step paths on [0, 1] by exhaustive search
    over piecewise-linear warps whose kinks sit at the images of the jumps of
    ``y`` on a grid of spacing ``h``, then refined locally around the best warps."""
    xa, xv = x.times[1:-1], x.a[:, 0]
    yb, yv = y.times[1:-1], y.a[:, 0]
    xT, yT = x.terminal[0], y.terminal[0]
    base = np.arange(h, 1.0, h)
    extra = np.concatenate([xa, base])
    q = len(yb)
    if q == 0:
        return _dp(xa, xv, xT, yb, yv, yT, [])[0]
    cands = [np.unique(extra) for _ in range(q)]
    best, pins = _dp(xa, xv, xT, yb, yv, yT, cands)
    # Jumps of y closer than h cannot land on distinct grid points cheaply, so
    # the coarse optimum may sit in the wrong basin. A second chain starts
    # from pins that are optimal when each increment may move by 2h.
    _, loose = _dp(xa, xv, xT, yb, yv, yT, cands, slack=2 * h)
    for start in (pins, loose):
        best = min(best, _refine(xa, xv, xT, yb, yv, yT, extra, start, h, refine, width))
    return best


def _refine(xa, xv, xT, yb, yv, yT, extra, pins, h, refine, width):
    best = np.inf
    spacing = h
    for factor in refine:
        fine = spacing / factor
        cands = []
        for c in pins:
            local = c + fine * np.arange(-width * factor, width * factor + 1)
            local = local[(local > 0) & (local < 1)]
            cands.append(np.unique(np.concatenate([extra, local])))
        val, pins = _dp(xa, xv, xT, yb, yv, yT, cands)
        best = min(best, val)
        spacing = fine
    return best


def one_kink_brute(x, y, h=1e-3):
    """Literal search over the identity and all one-kink warps on an h-grid."""
    from .skorokhod import TimeWarp, apply_warp, warp_norm
    from .paths import sup_distance

    best = sup_distance(x, y)
    nodes = np.arange(h, 1.0 - h / 2, h)
    for u in nodes:
        for w in nodes:
            lam = TimeWarp.through([u], [w])
            cost = warp_norm(lam)
            if cost < best:
                best = min(best, max(cost, sup_distance(x, apply_warp(y, lam))))
    return best


def doleans_dade_error(Z: CadlagPath, xi: float, drift: float, jump_times, jump_sizes) -> float:
    """Exact ``sup_t |Z_t - ξ e^{b t} ∏_{s <= t} (1 + ΔY_s)|`` for a scalar
    piecewise-affine ``Z`` and a driver ``Y = b t + jumps``.

    On each segment the difference is affine minus an exponential, so besides
    both ends only its stationary point can be extremal.
    """
    jt = np.asarray(jump_times, dtype=float).reshape(-1)
    js = np.asarray(jump_sizes, dtype=float).reshape(-1)
    nodes = np.union1d(Z.times, jt[(jt > 0) & (jt < Z.horizon)])
    starts, ends = nodes[:-1], nodes[1:]
    factors = np.concatenate([[1.0], np.cumprod(1.0 + js)])
    K = xi * factors[np.searchsorted(jt, starts, side="right")]
    za = Z.values_at(starts)[:, 0]
    zl = Z.left_values_at(ends)[:, 0]
    slope = (zl - za) / (ends - starts)
    best = max(np.max(np.abs(za - K * np.exp(drift * starts))), np.max(np.abs(zl - K * np.exp(drift * ends))))
    if drift != 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = slope / (K * drift)
            t_star = np.where(ratio > 0, np.log(np.where(ratio > 0, ratio, 1.0)) / drift, np.nan)
        inside = (t_star > starts) & (t_star < ends)
        if np.any(inside):
            ts = t_star[inside]
            val = za[inside] + slope[inside] * (ts - starts[inside]) - K[inside] * np.exp(drift * ts)
            best = max(best, float(np.max(np.abs(val))))
    total = xi * factors[np.searchsorted(jt, Z.horizon, side="right")] * math.exp(drift * Z.horizon)
    return float(max(best, abs(Z.terminal[0] - total)))
