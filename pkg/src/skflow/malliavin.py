"""Malliavin derivative in the jump direction, obtained by shifting the
driver: ``D_{r,v} X = Ψ(H + D H, G + D G, Y + v 1_[r,T]) - Ψ(H, G, Y)``."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .coefficient import Coefficient
from .errors import DomainError, FlaggedDerivativeError, ShapeError
from .functional import SolverConfig, solve
from .levy import LevySpec, sample_path, stochastic_integral
from .paths import CadlagPath, add_shift, left_limit, linear_combine

__all__ = ["MalliavinProbe", "derivative", "closed_form_example", "integrability_estimate", "IntegrabilityEstimate"]


@dataclass(frozen=True)
class MalliavinProbe:
    """Shift time ``r``, jump size ``v`` and optional shifts of H and G
    (zero when omitted: H, G deterministic or independent of Y)."""

    r: float
    v: float
    shift_H: CadlagPath | None = None
    shift_G: CadlagPath | None = None

    def __post_init__(self):
        if self.r < 0 or not math.isfinite(self.r):
            raise DomainError("r must be a finite time >= 0")


def _shifted(base: CadlagPath | None, shift: CadlagPath | None):
    if shift is None or base is None:
        return base
    return linear_combine([(1.0, base), (1.0, shift)])


def derivative(coef: Coefficient, H: CadlagPath, G: CadlagPath | None, Y: CadlagPath, probe: MalliavinProbe,
               config: SolverConfig | None = None, return_solutions: bool = False):
    """Pathwise ``D_{r,v} X`` by two solves.

    Raises
    ------
    FlaggedDerivativeError
        If either solve stops without meeting its tolerance.
    """
    if Y.dim != 1:
        raise ShapeError("the shift derivative is defined for scalar drivers")
    if probe.r > Y.horizon:
        raise DomainError("r beyond the horizon")
    config = config or SolverConfig()
    args_s = (_shifted(H, probe.shift_H), _shifted(G, probe.shift_G), add_shift(Y, probe.r, probe.v))
    X, base = solve(H, G, Y, coef, config)
    Xs, shifted = solve(*args_s, coef, config)
    # compare iterates of the same level; otherwise D picks up their 2^-n gap.
    # The earlier stopper is pushed up, since cutting the other one short can
    # leave it unconverged.
    level = max(base.n_final, shifted.n_final)
    forced = replace(config, n_max=level, tol=1e-300)
    if base.n_final < level:
        X, _ = solve(H, G, Y, coef, forced)
    elif shifted.n_final < level:
        Xs, _ = solve(*args_s, coef, forced)
    if not (base.converged and shifted.converged):
        err = FlaggedDerivativeError(
            f"solver stopped without convergence (base: {base.stop_reason}, shifted: {shifted.stop_reason})",
            base, shifted)
        err.base_solution, err.shifted_solution = X, Xs
        raise err
    D = linear_combine([(1.0, Xs), (-1.0, X)])
    if return_solutions:
        return D, X, Xs
    return D


def closed_form_example(g: Callable, X: CadlagPath, X_shifted: CadlagPath, Y: CadlagPath, r: float,
                        v: float) -> CadlagPath:
    """``(∫_r^t (g(X̃_{s-}) - g(X_{s-})) dY_s + g(X_{r-}) v) 1_{t >= r}``.

    ``g`` is a scalar function applied elementwise. The integrand is taken
    along the breakpoints of both solutions (affine in between), and the
    integral is exact at every breakpoint.
    """
    if not (X.dim == X_shifted.dim == Y.dim == 1):
        raise ShapeError("closed form covers the scalar equation")
    if not (0 <= r <= Y.horizon):
        raise DomainError("r outside [0, T]")
    horizon = Y.horizon
    nodes = np.union1d(X.times, X_shifted.times)
    if 0 < r < horizon:
        nodes = np.union1d(nodes, [r])

    def g_at(path, left):
        vals = path.left_values_at(nodes[1:]) if left else path.values_at(nodes)
        return np.asarray(g(vals[:, 0]), dtype=float)

    right = g_at(X_shifted, False) - g_at(X, False)
    left = g_at(X_shifted, True) - g_at(X, True)
    # only (r, t] contributes
    active = nodes[:-1] >= r
    a = np.where(active, right[:-1], 0.0)
    ends = np.where(active, left, 0.0)
    c = (ends - a) / np.diff(nodes)
    P = CadlagPath(nodes, a[:, None], c[:, None], [right[-1]], canonical=False, check=False)
    integral = stochastic_integral(P, Y)
    start = float(np.asarray(g(np.array([left_limit(X, r)[0]])), dtype=float).reshape(-1)[0]) * v
    if r >= horizon:
        step = CadlagPath.step([horizon], [0.0, start], horizon)
    elif r > 0:
        step = CadlagPath.step([r], [0.0, start], horizon)
    else:
        step = CadlagPath.constant([start], horizon)
    return linear_combine([(1.0, integral), (1.0, step)])


@dataclass
class IntegrabilityEstimate:
    value: float
    stderr: float
    n_paths: int
    failures: int


def integrability_estimate(coef: Coefficient, H: CadlagPath, G: CadlagPath | None, spec: LevySpec,
                           r_nodes: Sequence[float], v_nodes: Sequence[float], v_weights: Sequence[float],
                           n_paths: int, seed: int, config: SolverConfig | None = None,
                           horizon: float = 1.0) -> IntegrabilityEstimate:
    """Monte Carlo and quadrature estimate of ``E ∫∫ |D_{r,v} X_T|^2 ν(dv) dr``.

    ``ν`` enters through ``v_weights`` (intensity times the jump law mass at
    each ``v`` node); ``r`` is integrated with the trapezoidal rule on
    ``r_nodes``. Probes whose solves do not converge are counted in
    ``failures`` and use the last iterates.
    """
    r_nodes = np.asarray(r_nodes, dtype=float)
    v_nodes = np.asarray(v_nodes, dtype=float)
    w = np.asarray(v_weights, dtype=float)
    if v_nodes.shape != w.shape or np.any(w < 0):
        raise DomainError("v_weights must be nonnegative and match v_nodes")
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    config = config or SolverConfig()
    r_w = np.zeros_like(r_nodes)
    if r_nodes.size > 1:
        h = np.diff(r_nodes)
        r_w[:-1] += h / 2
        r_w[1:] += h / 2
    else:
        r_w[:] = horizon
    samples = np.zeros(n_paths)
    failures = 0
    for p in range(n_paths):
        Y = sample_path(spec, horizon, seed, stream=p)
        total = 0.0
        for i, r in enumerate(r_nodes):
            for j, v in enumerate(v_nodes):
                if w[j] == 0 or r_w[i] == 0:
                    continue
                try:
                    D = derivative(coef, H, G, Y, MalliavinProbe(r, v), config)
                except FlaggedDerivativeError as exc:
                    failures += 1
                    D = linear_combine([(1.0, exc.shifted_solution), (-1.0, exc.base_solution)])
                total += r_w[i] * w[j] * float(np.sum(D.terminal ** 2))
        samples[p] = total
    value = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.nan
    return IntegrabilityEstimate(value=value, stderr=stderr, n_paths=n_paths, failures=failures)
