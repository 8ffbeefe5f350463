"""Coefficient functionals f(t, ζ, γ), their predictable versions and
randomized checks of the structural assumptions (nonanticipativity, linear
growth, Lipschitz continuity, càdlàg in time)."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, NotCadlagError
from .paths import CadlagPath, linear_combine, running_sup_norm, stop_at, value_norms

__all__ = [
    "Coefficient",
    "AssumptionReport",
    "markov_coefficient",
    "eval_g",
    "eval_f_many",
    "eval_g_many",
    "caglad_approx",
    "caglad_time",
    "check_assumptions",
    "matrix_norm",
    "from_name",
    "REGISTRY",
]

_PROBE_DEPTH = 40
_PROBE_WINDOW = 5
_PROBE_TOL = 1e-9


def matrix_norm(m) -> float:
    """Operator norm induced by Euclidean norms (Euclidean for vectors)."""
    m = np.asarray(m, dtype=float)
    if m.ndim < 2:
        return float(np.linalg.norm(m))
    return float(value_norms(m.reshape(1, -1), m.shape)[0])


@dataclass(frozen=True)
class Coefficient:
    """A coefficient ``f(t, ζ, γ)`` with values in d×m matrices.

    ``eval_f(t, zeta, gamma)`` returns an array of shape (d, m).
    ``bound_C(t, zeta)`` returns the constant of the growth/Lipschitz bounds.
    ``markov_g`` (optional) marks coefficients of the form ``g(γ(t))``; it maps
    an (N, d) array of states to (N, d, m) and enables exact left limits and
    vectorized evaluation. ``f_many(ts, zeta, gamma)`` (optional) is a
    vectorized ``eval_f`` returning (N, d, m). ``time_breaks`` lists times where
    ``t -> f`` may jump independently of the paths.
    """

    dims: tuple[int, int, int]
    eval_f: Callable
    bound_C: Callable
    name: str = "custom"
    markov_g: Callable | None = None
    f_many: Callable | None = None
    time_breaks: tuple[float, ...] = ()
    lipschitz: float | None = None

    @property
    def d(self) -> int:
        return self.dims[0]

    @property
    def m(self) -> int:
        return self.dims[1]

    @property
    def r(self) -> int:
        return self.dims[2]

    @property
    def is_markov(self) -> bool:
        return self.markov_g is not None


def eval_f_many(coef: Coefficient, ts, zeta: CadlagPath, gamma: CadlagPath) -> np.ndarray:
    """``f(t, ζ, γ)`` at many times, shape (N, d, m)."""
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if coef.markov_g is not None:
        return np.asarray(coef.markov_g(gamma.values_at(ts)), dtype=float).reshape(ts.size, coef.d, coef.m)
    if coef.f_many is not None:
        return np.asarray(coef.f_many(ts, zeta, gamma), dtype=float).reshape(ts.size, coef.d, coef.m)
    out = np.empty((ts.size, coef.d, coef.m))
    for i, t in enumerate(ts):
        out[i] = np.asarray(coef.eval_f(float(t), zeta, gamma), dtype=float).reshape(coef.d, coef.m)
    return out


def _probe_times(t: float) -> np.ndarray:
    ks = np.arange(1, _PROBE_DEPTH + 1)
    return t - np.ldexp(1.0, -ks)


def eval_g_many(coef: Coefficient, ts, zeta: CadlagPath, gamma: CadlagPath) -> np.ndarray:
    """Left limits ``f(t-, ζ, γ)`` at many times (``t = 0`` gives ``f(0)``)."""
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if coef.markov_g is not None:
        return np.asarray(coef.markov_g(gamma.left_values_at(ts)), dtype=float).reshape(ts.size, coef.d, coef.m)
    out = np.empty((ts.size, coef.d, coef.m))
    zero = ts == 0.0
    if np.any(zero):
        out[zero] = eval_f_many(coef, [0.0], zeta, gamma)[0]
    pos = np.flatnonzero(~zero)
    if pos.size == 0:
        return out
    probes = np.stack([_probe_times(t) for t in ts[pos]])  # (P, K)
    valid = probes >= 0.0
    vals = eval_f_many(coef, np.where(valid, probes, 0.0).ravel(), zeta, gamma)
    vals = vals.reshape(pos.size, _PROBE_DEPTH, coef.d, coef.m)
    for row, idx in enumerate(pos):
        good = np.flatnonzero(valid[row])
        tail = vals[row, good[-_PROBE_WINDOW:]]
        if good.size < _PROBE_WINDOW:
            raise NotCadlagError(f"cannot probe the left limit at t={ts[idx]}")
        spread = max(matrix_norm(tail[i] - tail[-1]) for i in range(len(tail) - 1))
        if not np.isfinite(spread) or spread > _PROBE_TOL:
            raise NotCadlagError(
                f"f(s) does not settle as s -> {ts[idx]}- (spread {spread:.3g} over the last probes)"
            )
        out[idx] = tail[-1]
    return out


def eval_g(coef: Coefficient, t: float, zeta: CadlagPath, gamma: CadlagPath) -> np.ndarray:
    """Predictable version ``g(t, ζ, γ) = f(t-, ζ, γ)`` as a (d, m) matrix.

    Raises
    ------
    NotCadlagError
        If dyadic probes ``t - 2^-k`` do not stabilise within 1e-9.
    """
    if t < 0 or t > gamma.horizon:
        raise DomainError(f"t={t} outside [0, {gamma.horizon}]")
    return eval_g_many(coef, [t], zeta, gamma)[0]


def caglad_time(n: int, t: float) -> float:
    """``max(0, (ceil(n t) - 1) / n)``, robust to rounding in ``n t``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if t <= 0:
        return 0.0
    k = math.ceil(n * t)
    while k > 1 and (k - 1) / n >= t:
        k -= 1
    while k / n < t:
        k += 1
    return max(0.0, (k - 1) / n)


def caglad_approx(coef: Coefficient, n: int, t: float, zeta: CadlagPath, gamma: CadlagPath) -> np.ndarray:
    """Backward-looking càglàd approximant ``f((ceil(n t) - 1)/n, ζ, γ)``."""
    return eval_f_many(coef, [caglad_time(n, t)], zeta, gamma)[0]


# -- assumption checks ------------------------------------------------------

@dataclass
class AssumptionReport:
    samples: int
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v["check"] == kind)


def _random_path(rng, dim, horizon, pieces=4, scale=1.0):
    k = int(rng.integers(1, pieces + 1))
    inner = np.sort(rng.uniform(0, horizon, k - 1))
    times = np.concatenate([[0.0], inner, [horizon]])
    a = rng.uniform(-scale, scale, (k, dim))
    affine = rng.random(k) < 0.5
    c = rng.uniform(-scale, scale, (k, dim)) * affine[:, None]
    terminal = a[-1] + c[-1] * (horizon - times[-2])
    if rng.random() < 0.3:
        terminal = terminal + rng.uniform(-scale, scale, dim)
    return CadlagPath(times, a, c, terminal)


def check_assumptions(coef: Coefficient, samples: int = 1000, seed: int = 0, horizon: float = 1.0,
                      rtol: float = 1e-10) -> AssumptionReport:
    """Randomized check of nonanticipativity, growth, Lipschitz and càdlàg
    properties on ``samples`` random triples ``(t, ζ, γ)``.

    Violations are collected with witnesses; nothing is raised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    report = AssumptionReport(samples=samples)
    for name in ("nonanticipative", "growth", "lipschitz", "cadlag"):
        report.checks[name] = 0
    d, m, r = coef.dims
    for i in range(samples):
        zeta = _random_path(rng, r, horizon)
        g1 = _random_path(rng, d, horizon, scale=2.0)
        g2 = _random_path(rng, d, horizon, scale=2.0)
        t = float(rng.uniform(0, horizon)) if i % 10 else float(rng.choice([0.0, horizon, horizon / 2]))
        f1 = eval_f_many(coef, [t], zeta, g1)[0]
        f2 = eval_f_many(coef, [t], zeta, g2)[0]
        C = float(coef.bound_C(t, zeta))
        scale = 1.0 + matrix_norm(f1)

        fs = eval_f_many(coef, [t], stop_at(zeta, t), stop_at(g1, t))[0]
        report.checks["nonanticipative"] += 1
        if matrix_norm(fs - f1) > rtol * scale:
            report.violations.append({"check": "nonanticipative", "t": t, "gap": matrix_norm(fs - f1)})

        sup1 = float(running_sup_norm(g1, [t])[0])
        report.checks["growth"] += 1
        if matrix_norm(f1) > C * (1.0 + sup1) * (1 + rtol) + rtol:
            report.violations.append({"check": "growth", "t": t, "norm": matrix_norm(f1), "bound": C * (1 + sup1)})

        diff = linear_combine([(1.0, g1), (-1.0, g2)])
        dsup = float(running_sup_norm(diff, [t])[0])
        report.checks["lipschitz"] += 1
        if matrix_norm(f1 - f2) > C * dsup * (1 + rtol) + rtol:
            report.violations.append({"check": "lipschitz", "t": t, "gap": matrix_norm(f1 - f2), "bound": C * dsup})

        report.checks["cadlag"] += 1
        try:
            eval_g_many(coef, [t], zeta, g1)
        except NotCadlagError as exc:
            report.violations.append({"check": "cadlag", "t": t, "detail": str(exc)})
    return report


# -- library ------------------------------------------------------------------

def markov_coefficient(g: Callable, lipschitz: float, dims=(1, 1, 1), name: str = "markov",
                       g_at_zero=None) -> Coefficient:
    """Coefficient ``f(t, ζ, γ) = g(γ(t))`` for a Lipschitz ``g``.

    ``g`` maps an (N, d) array to (N, d, m) (or anything reshapeable to it).
    The bound is ``C = max(L, ||g(0)||)``, which covers both growth and
    Lipschitz conditions.
    """
    d, m, _ = dims
    if g_at_zero is None:
        g_at_zero = np.asarray(g(np.zeros((1, d))), dtype=float).reshape(d, m)
    C = max(float(lipschitz), matrix_norm(g_at_zero))

    def eval_f(t, zeta, gamma):
        return np.asarray(g(gamma.values_at([t])), dtype=float).reshape(d, m)

    return Coefficient(dims=tuple(dims), eval_f=eval_f, bound_C=lambda t, zeta: C, name=name,
                       markov_g=g, lipschitz=float(lipschitz))


def _linear() -> Coefficient:
    return markov_coefficient(lambda x: x.reshape(-1, 1, 1), 1.0, name="linear", g_at_zero=np.zeros((1, 1)))


def _affine(a: float, b: float) -> Coefficient:
    return markov_coefficient(lambda x: (a + b * x).reshape(-1, 1, 1), abs(b), name=f"affine({a},{b})",
                              g_at_zero=np.array([[a]]))


def _sin() -> Coefficient:
    def f_many(ts, zeta, gamma):
        zs = running_sup_norm(zeta, ts)
        return (np.sin(gamma.values_at(ts)[:, 0]) * (1.0 + zs)).reshape(-1, 1, 1)

    def eval_f(t, zeta, gamma):
        return f_many(np.array([t]), zeta, gamma)[0]

    def bound(t, zeta):
        return 1.0 + float(running_sup_norm(zeta, [t])[0])

    return Coefficient(dims=(1, 1, 1), eval_f=eval_f, bound_C=bound, name="sin", f_many=f_many)


def _indicator(t0: float) -> Coefficient:
    def f_many(ts, zeta, gamma):
        return (np.asarray(ts) >= t0).astype(float).reshape(-1, 1, 1)

    return Coefficient(dims=(1, 1, 1), eval_f=lambda t, z, g: f_many(np.array([t]), z, g)[0],
                       bound_C=lambda t, z: 1.0, name=f"indicator({t0})", f_many=f_many, time_breaks=(float(t0),))


def _anticipating() -> Coefficient:
    # looks at the terminal value: violates nonanticipativity on purpose
    def f_many(ts, zeta, gamma):
        return np.full((np.size(ts), 1, 1), gamma.terminal[0])

    return Coefficient(dims=(1, 1, 1), eval_f=lambda t, z, g: f_many([t], z, g)[0],
                       bound_C=lambda t, z: 1.0, name="anticipating-bad", f_many=f_many)


REGISTRY: dict[str, Callable[..., Coefficient]] = {
    "linear": _linear,
    "affine": _affine,
    "sin": _sin,
    "indicator": _indicator,
    "anticipating-bad": _anticipating,
}

_NAME_RE = re.compile(r"^\s*([a-z\-]+)\s*(?:\((.*)\))?\s*$")


def from_name(spec: str) -> Coefficient:
    """Build a registry coefficient from ``name`` or ``name(arg, ...)``."""
    match = _NAME_RE.match(spec)
    if not match or match.group(1) not in REGISTRY:
        raise ConfigError(f"unknown coefficient {spec!r}; known: {', '.join(REGISTRY)}")
    name, raw = match.groups()
    args: Sequence[float] = []
    if raw is not None and raw.strip():
        try:
            args = [float(x) for x in raw.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad arguments in {spec!r}") from exc
    try:
        return REGISTRY[name](*args)
    except TypeError as exc:
        raise ConfigError(f"wrong number of arguments for {name!r}") from exc
