"""Finite-activity Lévy drivers with drift, their semimartingale
decomposition, dominating processes and pathwise stochastic integrals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DecompositionUnavailableError, DomainError, ShapeError
from ._kernels import integrate_affine
from .paths import CadlagPath, _exact_slope, value_norms

__all__ = [
    "JumpLaw",
    "LevySpec",
    "DriverPath",
    "DominatingProcess",
    "sample_path",
    "decompose",
    "dominating_process",
    "dominating_for",
    "theta",
    "stochastic_integral",
    "total_variation",
    "make_rng",
]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``."""
    if seed < 0 or stream < 0:
        raise DomainError("seed and stream must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class JumpLaw:
    """Jump-size distribution.

    kinds: ``fixed`` (params ``size``: list), ``normal`` (``mean``, ``std``;
    scalar), ``uniform`` (``low``, ``high``; scalar).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        if self.kind == "fixed":
            size = np.atleast_1d(np.asarray(p.get("size", [1.0]), dtype=float))
            if size.ndim != 1 or not np.all(np.isfinite(size)):
                raise DomainError("fixed jump size must be a finite vector")
        elif self.kind == "normal":
            if not (p.get("std", 1.0) >= 0 and math.isfinite(p.get("mean", 0.0)) and math.isfinite(p.get("std", 1.0))):
                raise DomainError("normal jump law needs finite mean and std >= 0")
        elif self.kind == "uniform":
            if not (p.get("low", -1.0) < p.get("high", 1.0)):
                raise DomainError("uniform jump law needs low < high")
        else:
            raise DomainError(f"unknown jump law {self.kind!r}")

    @property
    def dim(self) -> int:
        if self.kind == "fixed":
            return int(np.atleast_1d(self.params.get("size", [1.0])).size)
        return 1

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.kind == "fixed":
            size = np.atleast_1d(np.asarray(p.get("size", [1.0]), dtype=float))
            return np.tile(size, (n, 1))
        if self.kind == "normal":
            return (p.get("mean", 0.0) + p.get("std", 1.0) * rng.standard_normal(n))[:, None]
        return rng.uniform(p.get("low", -1.0), p.get("high", 1.0), n)[:, None]

    def partial_moments(self, lo: float, hi: float):
        """``(P, E[x; A], E[x_i^2; A])`` over ``A = {lo < ||x|| <= hi}``.

        The second entry is a vector, the third the componentwise second
        moments (their sum is ``E[||x||^2; A]``).
        """
        p = self.params
        if self.kind == "fixed":
            size = np.atleast_1d(np.asarray(p.get("size", [1.0]), dtype=float))
            inside = lo < float(np.linalg.norm(size)) <= hi
            return float(inside), size * inside, size ** 2 * inside
        # scalar laws: A = (-hi, -lo] ∪ (lo, hi] up to null sets
        lo = max(lo, 0.0)
        pieces = [(-hi, -lo), (lo, hi)]
        prob = first = second = 0.0
        for a, b in pieces:
            if b <= a:
                continue
            pr, m1, m2 = self._interval_moments(a, b)
            prob += pr
            first += m1
            second += m2
        return prob, np.array([first]), np.array([second])

    def _interval_moments(self, a: float, b: float):
        p = self.params
        if self.kind == "normal":
            mu, sd = p.get("mean", 0.0), p.get("std", 1.0)
            if sd == 0:
                inside = float(a < mu <= b)
                return inside, mu * inside, mu * mu * inside
            al, be = (a - mu) / sd, (b - mu) / sd
            dPhi = ndtr(be) - ndtr(al)
            pa = _phi(al) if math.isfinite(al) else 0.0
            pb = _phi(be) if math.isfinite(be) else 0.0
            ta = al * pa if math.isfinite(al) else 0.0
            tb = be * pb if math.isfinite(be) else 0.0
            m1 = mu * dPhi + sd * (pa - pb)
            m2 = mu * mu * dPhi + 2 * mu * sd * (pa - pb) + sd * sd * (dPhi + ta - tb)
            return float(dPhi), float(m1), float(m2)
        low, high = p.get("low", -1.0), p.get("high", 1.0)
        a, b = max(a, low), min(b, high)
        if b <= a:
            return 0.0, 0.0, 0.0
        w = high - low
        return (b - a) / w, (b * b - a * a) / (2 * w), (b ** 3 - a ** 3) / (3 * w)

    def quadrature(self, n: int = 5):
        """``(nodes, probabilities)`` of an ``n``-point Gauss rule for the law
        (a single node for ``fixed``)."""
        p = self.params
        if self.kind == "fixed":
            return np.atleast_1d(np.asarray(p.get("size", [1.0]), dtype=float))[None, :], np.ones(1)
        if n < 1:
            raise DomainError("quadrature needs n >= 1")
        if self.kind == "normal":
            x, w = np.polynomial.hermite_e.hermegauss(n)
            return (p.get("mean", 0.0) + p.get("std", 1.0) * x)[:, None], w / math.sqrt(2 * math.pi)
        x, w = np.polynomial.legendre.leggauss(n)
        low, high = p.get("low", -1.0), p.get("high", 1.0)
        return (low + (x + 1) * (high - low) / 2)[:, None], w / 2

    def second_moment(self) -> float:
        return float(np.sum(self.partial_moments(0.0, math.inf)[2]))


@dataclass(frozen=True)
class LevySpec:
    """Drift, jump intensity, jump law and small-jump truncation of a
    finite-activity Lévy driver ``Y_t = drift t + jumps``."""

    drift: tuple
    intensity: float
    jump_law: JumpLaw
    truncation: float = 0.0
    compensate: bool = False

    def __post_init__(self):
        drift = tuple(float(x) for x in np.atleast_1d(self.drift))
        object.__setattr__(self, "drift", drift)
        if not (self.intensity >= 0 and math.isfinite(self.intensity)):
            raise DomainError("intensity must be finite and >= 0")
        if self.truncation < 0:
            raise DomainError("truncation must be >= 0")
        if self.jump_law.dim != len(drift):
            raise ShapeError("jump law and drift dimensions differ")
        if not math.isfinite(self.jump_law.second_moment()):
            raise DomainError("jump law must have a finite second moment")

    @property
    def dim(self) -> int:
        return len(self.drift)

    def kept_moments(self, lo: float, hi: float):
        """Intensity-weighted moments of the kept jumps with ``lo < ||x|| <= hi``."""
        prob, m1, m2 = self.jump_law.partial_moments(max(lo, self.truncation), hi)
        return self.intensity * prob, self.intensity * m1, self.intensity * m2

    @property
    def effective_drift(self) -> np.ndarray:
        drift = np.array(self.drift)
        if self.compensate:
            drift = drift - self.kept_moments(self.truncation, 1.0)[1]
        return drift

    @property
    def small_jump_compensator(self) -> np.ndarray:
        """``λ E[x 1_{ε < ||x|| <= 1}]``: drift of the small-jump sum."""
        return self.kept_moments(self.truncation, 1.0)[1]

    @property
    def predictable_qv_rate(self) -> np.ndarray:
        """Componentwise ``λ E[x_i^2 1_{ε < ||x|| <= 1}]``."""
        return self.kept_moments(self.truncation, 1.0)[2]


class DriverPath(CadlagPath):
    """A sampled driver path that remembers its jumps and spec."""

    __slots__ = ("jump_times", "jump_sizes", "spec")


def sample_path(spec: LevySpec, horizon: float = 1.0, seed: int = 0, stream: int = 0) -> DriverPath:
    """Exact compound-Poisson-plus-drift path, deterministic in ``(seed, stream)``."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    rng = make_rng(seed, stream)
    count = rng.poisson(spec.intensity * horizon) if spec.intensity > 0 else 0
    times = np.sort(rng.uniform(0.0, horizon, count))
    sizes = spec.jump_law.sample(rng, count).reshape(count, spec.dim)
    keep = np.linalg.norm(sizes, axis=1) > spec.truncation if count else np.zeros(0, bool)
    times, sizes = times[keep], sizes[keep]
    # coincident times (probability zero, but floats are finite) are merged
    keep = (times > 0) & (times < horizon)
    times, sizes = times[keep], sizes[keep]
    if times.size > 1 and np.any(np.diff(times) == 0):
        uniq, inv = np.unique(times, return_inverse=True)
        merged = np.zeros((uniq.size, spec.dim))
        np.add.at(merged, inv, sizes)
        times, sizes = uniq, merged
    drift = spec.effective_drift
    grid = np.concatenate([[0.0], times, [horizon]])
    cum = np.vstack([np.zeros((1, spec.dim)), np.cumsum(sizes, axis=0)])
    a = cum + grid[:-1, None] * drift[None, :]
    c = np.tile(drift, (grid.size - 1, 1))
    terminal = cum[-1] + horizon * drift
    path = DriverPath(grid, a, c, terminal, canonical=False)
    path.jump_times = times
    path.jump_sizes = sizes
    path.spec = spec
    return path


def _exact_split(total: np.ndarray, part: np.ndarray):
    """``(part', other)`` with ``part' + other == total`` bit-for-bit.

    ``part'`` equals ``part`` unless no float ``other`` exists for it; then it
    is re-rounded as ``total - other``, which moves it by a few ulps at most.
    """
    part = np.array(part, dtype=float)
    other = total - part
    for _ in range(8):
        got = part + other
        bad = got != total
        if not np.any(bad):
            break
        other = np.where(bad, np.where(got < total, np.nextafter(other, np.inf), np.nextafter(other, -np.inf)), other)
    bad = part + other != total
    if np.any(bad):
        part = np.where(bad, total - other, part)
        for _ in range(8):
            bad = part + other != total
            if not np.any(bad):
                break
            part = np.where(bad, np.where(part + other < total, np.nextafter(part, np.inf),
                                          np.nextafter(part, -np.inf)), part)
    return part, other


def decompose(path: CadlagPath, spec: LevySpec):
    """Split a sampled driver into ``M`` (compensated jumps with ``||x|| <= 1``)
    and ``A`` (drift, compensator and big jumps) with ``M + A = path``."""
    if not isinstance(path, DriverPath) or path.spec != spec:
        raise DecompositionUnavailableError("path was not produced by sample_path with this spec")
    small = np.linalg.norm(path.jump_sizes, axis=1) <= 1.0
    comp = spec.small_jump_compensator
    grid = path.times
    small_cum = np.vstack([np.zeros((1, spec.dim)), np.cumsum(path.jump_sizes * small[:, None], axis=0)])
    # jump i sits at grid[i + 1]
    m_a = small_cum - grid[:-1, None] * comp[None, :]
    m_c = np.tile(-comp, (grid.size - 1, 1))
    m_T = small_cum[-1] - path.horizon * comp
    m_a, a_a = _exact_split(path.a, m_a)
    m_c, a_c = _exact_split(path.c, m_c)
    m_T, a_T = _exact_split(path.terminal, m_T)
    M = CadlagPath(grid, m_a, m_c, m_T, path.shape, canonical=False)
    A = CadlagPath(grid, a_a, a_c, a_T, path.shape, canonical=False)
    return M, A


def total_variation(path: CadlagPath, componentwise: bool = False):
    """Total variation on [0, T] (Euclidean, or per component)."""
    h = np.diff(path.times)
    ends = path.segment_ends()
    rights = np.vstack([path.a[1:], path.terminal[None, :]])
    if componentwise:
        return np.sum(np.abs(path.c) * h[:, None], axis=0) + np.sum(np.abs(rights - ends), axis=0)
    cont = value_norms(path.c, path.shape) * h
    jumps = value_norms(rights - ends, path.shape)
    return float(np.sum(cont) + np.sum(jumps))


@dataclass
class DominatingProcess:
    V: CadlagPath
    M: CadlagPath
    A: CadlagPath
    quadratic_variation: CadlagPath
    predictable_qv: CadlagPath
    total_variation_A: CadlagPath


def _path_from_nodes(nodes, right, left, terminal):
    """Path with given right values at nodes and left limits at the next node."""
    h = np.diff(nodes)
    a = right[:-1]
    c = _exact_slope(a, left[1:], h)
    return CadlagPath(nodes, a[:, None], c[:, None], [terminal], canonical=False)


def dominating_process(M: CadlagPath, A: CadlagPath, qv_rate, refine: int = 256) -> DominatingProcess:
    """Minimal dominating process (``B ≡ 0``) summed over components.

    ``qv_rate`` is the componentwise rate of ``<M, M>`` (linear in time).
    ``V`` is exact at the breakpoints of ``M`` and ``A`` and at ``refine``
    uniform nodes, affine in between.
    """
    if M.shape != A.shape or M.horizon != A.horizon:
        raise ShapeError("M and A must share shape and horizon")
    qv_rate = np.broadcast_to(np.asarray(qv_rate, dtype=float), (M.dim,))
    horizon = M.horizon
    nodes = np.unique(np.concatenate([M.times, A.times, np.linspace(0.0, horizon, refine + 1)]))

    def jumps_at(path):
        right = path.values_at(nodes)
        left = path.left_values_at(nodes)
        return right - left

    dM = jumps_at(M)
    qv_r = np.cumsum(dM ** 2, axis=0)  # [M^i]_t at nodes, componentwise
    qv_l = qv_r - dM ** 2
    pqv = nodes[:, None] * qv_rate[None, :]

    dA = np.abs(jumps_at(A))
    kA = np.minimum(np.searchsorted(A.times, nodes, side="right") - 1, A.n_segments - 1)
    # cumulative |A| from its own segments
    seg_tv = np.abs(A.c) * np.diff(A.times)[:, None]
    cum_seg = np.vstack([np.zeros((1, A.dim)), np.cumsum(seg_tv, axis=0)])
    jumpsA_own = np.abs(np.vstack([A.a[1:], A.terminal[None, :]]) - A.segment_ends())
    cum_jump = np.vstack([np.zeros((1, A.dim)), np.cumsum(jumpsA_own, axis=0)])
    base = cum_seg[kA] + cum_jump[kA] + np.abs(A.c[kA]) * (nodes - A.times[kA])[:, None]
    at_T = nodes == horizon
    # value at T: all segments and all jumps up to and including T
    base[at_T] = cum_seg[-1] + cum_jump[-1]
    tv_r = base
    tv_l = tv_r - dA

    V_r = np.sum(2 * math.sqrt(2) * np.sqrt(qv_r + pqv) + math.sqrt(2) * tv_r, axis=1)
    V_l = np.sum(2 * math.sqrt(2) * np.sqrt(np.maximum(qv_l, 0) + pqv) + math.sqrt(2) * np.maximum(tv_l, 0), axis=1)
    V = _path_from_nodes(nodes, V_r, V_l, V_r[-1])
    QV = _path_from_nodes(nodes, qv_r.sum(1), qv_l.sum(1), qv_r.sum(1)[-1])
    PQV = CadlagPath([0.0, horizon], [[0.0]], [[float(qv_rate.sum())]], [float(qv_rate.sum()) * horizon])
    TV = _path_from_nodes(nodes, tv_r.sum(1), tv_l.sum(1), tv_r.sum(1)[-1])
    return DominatingProcess(V=V, M=M, A=A, quadratic_variation=QV, predictable_qv=PQV, total_variation_A=TV)


def dominating_for(path: CadlagPath, spec: LevySpec, refine: int = 256) -> DominatingProcess:
    M, A = decompose(path, spec)
    return dominating_process(M, A, spec.predictable_qv_rate, refine=refine)


def theta(P: CadlagPath, V: CadlagPath, t: float | None = None) -> float:
    """``θ_t(P, V) = (∫_0^t |P|^2 dV^2)^{1/2} + ∫_0^t |P| dV`` for a step
    integrand ``P``; atoms of ``V`` are weighted with ``|P(s-)|``."""
    if P.horizon != V.horizon:
        raise ShapeError("P and V horizons differ")
    if V.dim != 1:
        raise ShapeError("V must be scalar")
    t = V.horizon if t is None else float(t)
    if t < 0 or t > V.horizon:
        raise DomainError("t outside [0, T]")
    ends = V.segment_ends()[:, 0]
    rights = np.concatenate([V.a[1:, 0], V.terminal])
    if np.any(np.diff(V.a[:, 0]) < 0) or np.any(ends < V.a[:, 0]) or np.any(rights < ends) or V.a[0, 0] < 0:
        raise DomainError("V must be nondecreasing and nonnegative")
    if t == 0:
        return 0.0
    nodes = np.unique(np.concatenate([P.times, V.times]))
    nodes = np.concatenate([nodes[nodes < t], [t]])
    starts, stops = nodes[:-1], nodes[1:]
    p = value_norms(P.values_at(starts), P.shape)
    v0 = V.values_at(starts)[:, 0]
    v1 = V.left_values_at(stops)[:, 0]
    cont1 = np.sum(p * (v1 - v0))
    cont2 = np.sum(p * p * (v1 * v1 - v0 * v0))
    # atoms at nodes in (0, t]
    atoms = nodes[1:]
    vr = V.values_at(atoms)[:, 0]
    vl = V.left_values_at(atoms)[:, 0]
    pl = value_norms(P.left_values_at(atoms), P.shape)
    jump1 = np.sum(pl * (vr - vl))
    jump2 = np.sum(pl * pl * (vr * vr - vl * vl))
    return float(math.sqrt(max(cont2 + jump2, 0.0)) + cont1 + jump1)


def stochastic_integral(P: CadlagPath, Y: CadlagPath, d: int | None = None) -> CadlagPath:
    """Pathwise ``∫_0^t P_{s-} dY_s``.

    ``P`` holds d×m matrices (shape ``(d, m)``; a vector path is read as
    ``(dim, 1)`` for scalar ``Y``), ``Y`` is m-dimensional. For step ``P`` the
    result is exact; for affine pieces of ``P`` it is exact at every
    breakpoint and linear in between.
    """
    if P.horizon != Y.horizon:
        raise ShapeError("P and Y horizons differ")
    m = Y.dim
    if len(P.shape) == 2:
        d_, m_ = P.shape
    elif m == 1:
        d_, m_ = P.dim, 1
    else:
        d_, m_ = 1, P.dim
    if m_ != m or (d is not None and d != d_):
        raise ShapeError(f"integrand shape {P.shape} does not fit driver dimension {m}")
    times, a, c, terminal = integrate_affine(P.times, P.a, P.c, Y.times, Y.a, Y.c, Y.terminal, d_, m_)
    return CadlagPath(times, a, c, terminal, check=False)
