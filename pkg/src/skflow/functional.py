"""Adaptive freeze iteration for path-dependent SDEs

    X_t = H_t + ∫_0^t f(s-, G, X) dY_s .

Each iterate freezes the coefficient evaluated along the previous iterate
and re-freezes it whenever it has moved by ``2^-n``; the stochastic integral
against the frozen step coefficient is exact on piecewise-affine paths.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._kernels import merge_unique, scan_crossings
from .coefficient import Coefficient, eval_f_many, eval_g_many, matrix_norm
from .errors import (
    AssumptionViolation,
    ConfigError,
    InvalidCoefficientError,
    OracleUnsupportedError,
    ShapeError,
)
from .levy import stochastic_integral, total_variation
from .paths import CadlagPath, linear_combine, stop_at, sup_distance, sup_norm

__all__ = [
    "SolverConfig",
    "IterationState",
    "SolveDiagnostics",
    "breakpoints",
    "surrogate",
    "psi_step",
    "residual",
    "solve",
    "reference_integrate",
    "restrict",
]


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls.

    A run counts as converged once consecutive iterates are within ``tol``
    in sup distance and the freezing error bound is below ``tol`` as well.
    ``max_segments`` caps the number of freeze times per iterate (the count
    grows like ``2^n`` times the variation of the coefficient);
    hitting it stops the run flagged as not converged. ``surrogate_grid``
    uniform nodes are added to the event times when materialising the
    coefficient path. ``gamma_scan_guard`` is the smallest step the crossing
    scan may take after a freeze (0 means one ulp).
    """

    n_max: int = 40
    tol: float = 1e-10
    report_skorokhod: bool = False
    gamma_scan_guard: float = 0.0
    max_segments: int = 1 << 21
    surrogate_grid: int = 64
    residuals: bool = True
    spot_check: bool = True

    def __post_init__(self):
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if self.max_segments < 2:
            raise ConfigError("max_segments must be >= 2")
        if self.surrogate_grid < 1:
            raise ConfigError("surrogate_grid must be >= 1")
        if self.gamma_scan_guard < 0:
            raise ConfigError("gamma_scan_guard must be >= 0")


@dataclass
class IterationState:
    n: int
    Z: CadlagPath
    breakpoint_times: np.ndarray
    S: CadlagPath | None = None
    Gamma: CadlagPath | None = None
    gap_to_f: float = 0.0
    dist_to_prev: float = math.nan
    residual: float = math.nan
    residual_bound: float = math.nan
    skorokhod_upper: float = math.nan


@dataclass
class SolveDiagnostics:
    converged: bool
    stop_reason: str
    n_final: int
    records: list = field(default_factory=list)

    COLUMNS = ("n", "gap_to_f", "dist_to_prev", "residual", "skorokhod_upper")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.records:
            w.writerow([r["n"]] + [_fmt12(r[c]) for c in self.COLUMNS[1:]])

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def _fmt12(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{float(v):.12g}"


class _BudgetExceeded(Exception):
    pass


# -- coefficient surrogate and breakpoints ------------------------------------

def _union(*arrays) -> np.ndarray:
    out = np.ascontiguousarray(arrays[0], dtype=float)
    for arr in arrays[1:]:
        out = merge_unique(out, np.ascontiguousarray(arr, dtype=float))
    return out


def surrogate(coef: Coefficient, zeta: CadlagPath, Z: CadlagPath, grid: int = 64) -> CadlagPath:
    """``t -> f(t, ζ, Z)`` sampled on the events of ``ζ`` and ``Z``, the
    coefficient's own time breaks and ``grid`` uniform nodes, with exact
    one-sided values at every node and affine interpolation in between."""
    horizon = Z.horizon
    extra = np.array(sorted(t for t in coef.time_breaks if 0 < t < horizon), dtype=float)
    nodes = _union(Z.times, zeta.times, np.linspace(0.0, horizon, grid + 1), extra)
    right = eval_f_many(coef, nodes, zeta, Z).reshape(nodes.size, -1)
    left = eval_g_many(coef, nodes[1:], zeta, Z).reshape(nodes.size - 1, -1)
    if not (np.all(np.isfinite(right)) and np.all(np.isfinite(left))):
        raise InvalidCoefficientError("coefficient produced non-finite values")
    h = np.diff(nodes)
    c = (left - right[:-1]) / h[:, None]
    return CadlagPath(nodes, right[:-1], c, right[-1], (coef.d, coef.m), canonical=False, check=False)


def _scan(Gamma: CadlagPath, eps: float, cap: int, guard: float = 0.0):
    nodes = Gamma.times
    R = np.vstack([Gamma.a, Gamma.terminal[None, :]])
    L = np.vstack([Gamma.a[:1], Gamma.segment_ends()])
    shape = Gamma.shape
    mode = 1 if len(shape) == 2 and shape[0] > 1 and shape[1] > 1 else 0
    d, m = (shape if len(shape) == 2 else (1, Gamma.dim))
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(L))):
        raise InvalidCoefficientError("coefficient path has non-finite values")
    times, values, count = scan_crossings(np.ascontiguousarray(nodes), np.ascontiguousarray(R),
                                          np.ascontiguousarray(L), float(eps), int(cap) + 1, mode, d, m, float(guard))
    if count < 0:
        raise _BudgetExceeded
    times, values = times[:count], values[:count]
    return times, values


def breakpoints(Gamma: CadlagPath, n: int) -> np.ndarray:
    """Freeze times ``t_0 = 0 < t_1 < ... <= T`` at level ``2^-n``.

    ``t_{j+1}`` is the first time after ``t_j`` where either ``Γ(s)`` or
    ``Γ(s-)`` is at distance ``>= 2^-n`` from ``Γ(t_j)``; the list always ends
    with ``T`` (``inf ∅ = T``).
    """
    times, _ = _scan(Gamma, math.ldexp(1.0, -n), cap=Gamma.n_segments * 4 + (1 << 20))
    return times


# -- one iteration --------------------------------------------------------------

def _frozen_path(times, values, shape) -> CadlagPath:
    a = values[:-1]
    return CadlagPath(times, a, np.zeros_like(a), values[-1], shape, canonical=False, check=False)


def _integrate(S: CadlagPath, eta: CadlagPath) -> CadlagPath:
    return stochastic_integral(S, eta)


def psi_step(gamma: CadlagPath, zeta: CadlagPath, eta: CadlagPath, prev: IterationState, coef: Coefficient,
             n: int, config: SolverConfig | None = None) -> IterationState:
    """Next iterate: freeze ``Γ = f(·, ζ, prev.Z)`` at level ``2^-n`` and set
    ``Z = γ + Σ_j Γ(t_j) (η^{t_{j+1}} - η^{t_j})``."""
    config = config or SolverConfig()
    if prev.n != n - 1:
        raise ConfigError(f"psi_step expects the state of iteration {n - 1}, got {prev.n}")
    Gamma = surrogate(coef, zeta, prev.Z, config.surrogate_grid)
    times, values = _scan(Gamma, math.ldexp(1.0, -n), config.max_segments, config.gamma_scan_guard)
    S = _frozen_path(times, values, Gamma.shape)
    Z = linear_combine([(1.0, gamma), (1.0, _integrate(S, eta))])
    state = IterationState(n=n, Z=Z, breakpoint_times=times, S=S, Gamma=Gamma)
    state.gap_to_f = sup_distance(S, Gamma)
    state.dist_to_prev = sup_distance(Z, prev.Z)
    return state


def residual(state: IterationState, gamma, zeta, eta, coef) -> float:
    """``sup_t ||R_t - Z_t||`` where ``R`` integrates the unfrozen coefficient
    (on the same surrogate) against ``η``: ``R - Z = ∫ (Γ - S)_{s-} dη``.

    Exact at every breakpoint of the integrand and of ``η``.
    """
    if state.S is None:
        return 0.0
    Gamma = state.Gamma if state.Gamma is not None else surrogate(coef, zeta, state.Z)
    diff = linear_combine([(1.0, Gamma), (-1.0, state.S)])
    if not np.any(diff.a) and not np.any(diff.c):
        return 0.0
    return sup_norm(stochastic_integral(diff, eta))


def _spot_check(coef: Coefficient, zeta: CadlagPath, gamma: CadlagPath):
    horizon = gamma.horizon
    for frac in (0.25, 0.5, 0.75):
        t = frac * horizon
        full = eval_f_many(coef, [t], zeta, gamma)[0]
        stopped = eval_f_many(coef, [t], stop_at(zeta, t), stop_at(gamma, t))[0]
        if matrix_norm(full - stopped) > 1e-12 * (1 + matrix_norm(full)):
            raise AssumptionViolation(f"coefficient looks ahead of t={t}: f changes when inputs are stopped at t")


def _check_inputs(gamma, zeta, eta, coef):
    d, m, r = coef.dims
    if gamma.dim != d:
        raise ShapeError(f"H has dimension {gamma.dim}, coefficient expects {d}")
    if eta.dim != m:
        raise ShapeError(f"Y has dimension {eta.dim}, coefficient expects {m}")
    if zeta is None:
        zeta = CadlagPath.zeros(r, gamma.horizon)
    if zeta.dim != r:
        raise ShapeError(f"G has dimension {zeta.dim}, coefficient expects {r}")
    if not (gamma.horizon == eta.horizon == zeta.horizon):
        raise ShapeError("H, G and Y must share the horizon")
    return zeta


def solve(gamma: CadlagPath, zeta: CadlagPath | None, eta: CadlagPath, coef: Coefficient,
          config: SolverConfig | None = None, callback: Callable[[IterationState], None] | None = None):
    """Run the iteration from ``Ψ^(0) = γ`` until consecutive iterates are
    within ``tol`` in sup distance and the freezing error bound
    ``gap_to_f TV(η)`` is below ``tol``, ``n_max`` is reached or the segment budget
    is exhausted. Returns ``(X, diagnostics)``; ``X`` is the last completed
    iterate, flagged through ``diagnostics.converged``."""
    config = config or SolverConfig()
    zeta = _check_inputs(gamma, zeta, eta, coef)
    if config.spot_check:
        _spot_check(coef, zeta, gamma)
    tv_eta = total_variation(eta)
    state = IterationState(n=0, Z=gamma, breakpoint_times=np.array([0.0, gamma.horizon]))
    records = []
    stop_reason = "n_max"
    converged = False
    for n in range(1, config.n_max + 1):
        try:
            nxt = psi_step(gamma, zeta, eta, state, coef, n, config)
        except _BudgetExceeded:
            stop_reason = "budget"
            break
        if config.residuals:
            nxt.residual = residual(nxt, gamma, zeta, eta, coef)
        # |∫ (Γ - S) dη| <= sup|Γ - S| TV(η), and sup|Γ - S| <= 2^-n
        nxt.residual_bound = nxt.gap_to_f * tv_eta
        if config.report_skorokhod:
            nxt.skorokhod_upper = _skorokhod_upper(nxt.Z, state.Z, nxt.dist_to_prev)
        records.append({
            "n": n,
            "gap_to_f": nxt.gap_to_f,
            "dist_to_prev": nxt.dist_to_prev,
            "residual": nxt.residual,
            "residual_bound": nxt.residual_bound,
            "skorokhod_upper": nxt.skorokhod_upper,
            "n_breakpoints": int(nxt.breakpoint_times.size),
        })
        if callback is not None:
            callback(nxt)
        state = nxt
        # equal consecutive iterates alone do not certify a fixed point (a level
        # may add no freeze time), so the freezing error must be small too
        if nxt.dist_to_prev < config.tol and nxt.residual_bound < config.tol:
            converged = True
            stop_reason = "tol"
            break
    diag = SolveDiagnostics(converged=converged, stop_reason=stop_reason, n_final=state.n, records=records)
    return state.Z, diag


def _skorokhod_upper(x: CadlagPath, y: CadlagPath, sup: float) -> float:
    from .skorokhod import skorokhod_distance_bound

    if x.n_segments + y.n_segments > 4096 or len(x.shape) != 1:
        return sup
    _, upper = skorokhod_distance_bound(x, y, kinks=1, grid=0.125, max_warps=64)
    return min(upper, sup)


# -- independent reference integrator ---------------------------------------------

def reference_integrate(coef: Coefficient, gamma: CadlagPath, zeta: CadlagPath | None, eta: CadlagPath,
                        substeps: int = 1000) -> CadlagPath:
    """Event-driven reference for Markov coefficients ``f = g(γ(t))``.

    Between events of ``γ`` and ``η`` the ODE ``x' = γ' + g(x) η'`` is
    advanced with ``substeps`` classical Runge-Kutta steps; at events
    ``x += Δγ + g(x-) Δη`` exactly. The returned path is exact at its nodes
    and linear in between.
    """
    if not coef.is_markov:
        raise OracleUnsupportedError("reference_integrate needs a Markov coefficient g(x)")
    _check_inputs(gamma, zeta, eta, coef)
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    d, m = coef.d, coef.m
    g = coef.markov_g

    def G(x):
        return np.asarray(g(x[None, :]), dtype=float).reshape(d, m)

    events = _union(gamma.times, eta.times)
    x = gamma.a[0].copy()
    nodes, rights, lefts = [events[0]], [x.copy()], [x.copy()]
    for k in range(events.size - 1):
        t0, t1 = events[k], events[k + 1]
        kg = min(np.searchsorted(gamma.times, t0, side="right") - 1, gamma.n_segments - 1)
        ke = min(np.searchsorted(eta.times, t0, side="right") - 1, eta.n_segments - 1)
        cg, ce = gamma.c[kg], eta.c[ke]
        steps = substeps if (np.any(ce) or np.any(cg)) else 1
        h = (t1 - t0) / steps
        moving = np.any(ce)
        for i in range(steps):
            if moving:
                k1 = cg + G(x) @ ce
                k2 = cg + G(x + 0.5 * h * k1) @ ce
                k3 = cg + G(x + 0.5 * h * k2) @ ce
                k4 = cg + G(x + h * k3) @ ce
                x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            else:
                x = x + h * cg
            t = t1 if i == steps - 1 else t0 + (i + 1) * h
            nodes.append(t)
            lefts.append(x.copy())
            rights.append(x.copy())
        dg = gamma.values_at([t1])[0] - gamma.left_values_at([t1])[0]
        de = eta.values_at([t1])[0] - eta.left_values_at([t1])[0]
        x = x + dg + G(x) @ de
        rights[-1] = x.copy()
    nodes = np.array(nodes)
    R = np.array(rights)
    Lv = np.array(lefts)
    h = np.diff(nodes)[:, None]
    c = (Lv[1:] - R[:-1]) / h
    return CadlagPath(nodes, R[:-1], c, R[-1])


def restrict(path: CadlagPath, t: float) -> CadlagPath:
    """The same path viewed on [0, t]."""
    keep = path.times[:-1] < t
    times = np.concatenate([path.times[:-1][keep], [t]])
    return CadlagPath(times, path.a[keep], path.c[keep], path.values_at([t])[0], path.shape)
