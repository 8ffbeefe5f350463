"""Batch experiments with pass/fail summaries (used by ``skflow study`` and
the acceptance suite)."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .coefficient import Coefficient, from_name, markov_coefficient
from .errors import ConfigError, FlaggedDerivativeError
from .functional import SolverConfig, restrict, solve
from .levy import JumpLaw, LevySpec, decompose, dominating_process, sample_path, stochastic_integral, theta
from .malliavin import MalliavinProbe, closed_form_example, derivative
from .oracles import doleans_dade_error, grid_warp_distance
from .paths import CadlagPath, linear_combine, paths_equal, stop_at, sup_distance
from .skorokhod import skorokhod_distance_exact

__all__ = ["StudyReport", "STUDIES", "run_study", "linear_example_spec", "random_lipschitz_coefficient"]


@dataclass
class StudyReport:
    name: str
    rows: list = field(default_factory=list)
    criteria: list = field(default_factory=list)
    runtime: float = 0.0
    noop: bool = False

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.criteria)

    def add(self, name: str, value: float, threshold: float, passed: bool, relation: str = "<="):
        self.criteria.append({"criterion": name, "value": float(value), "threshold": float(threshold),
                              "relation": relation, "passed": bool(passed)})

    def summary(self) -> dict:
        return {"study": self.name, "noop": self.noop, "passed": self.passed, "runtime_s": round(self.runtime, 3),
                "criteria": self.criteria}


def linear_example_spec(drift=0.5, intensity=1.0, jump=0.1) -> LevySpec:
    return LevySpec(drift=(drift,), intensity=intensity, jump_law=JumpLaw("fixed", {"size": [jump]}))


def random_lipschitz_coefficient(rng: np.random.Generator) -> Coefficient:
    """``g(x) = a sin(b x) + c x + d`` with random parameters."""
    a, b = rng.uniform(-1, 1), rng.uniform(0.5, 2.0)
    c, d = rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)

    def g(x):
        x = np.asarray(x, dtype=float)
        return (a * np.sin(b * x) + c * x + d).reshape(-1, 1, 1)

    return markov_coefficient(g, abs(a * b) + abs(c), name="lipschitz-random", g_at_zero=np.array([[d]]))


def _random_step(rng, max_jumps=6, value_range=2.0, horizon=1.0) -> CadlagPath:
    k = int(rng.integers(0, max_jumps + 1))
    times = np.sort(rng.uniform(0, horizon, k))
    while k and (np.any(np.diff(times) == 0) or times[0] == 0):
        times = np.sort(rng.uniform(0, horizon, k))
    return CadlagPath.step(times, rng.uniform(-value_range, value_range, k + 1), horizon)


# -- studies -------------------------------------------------------------------

def metric_oracle_agreement(cfg) -> StudyReport:
    rep = StudyReport("metric-oracle-agreement")
    rng = np.random.default_rng(cfg["seed"])
    worst = sym = tri = 0.0
    above_sup = 0
    zero_mismatch = 0
    pairs = [(_random_step(rng, cfg["max_jumps"], cfg["value_range"]),
              _random_step(rng, cfg["max_jumps"], cfg["value_range"])) for _ in range(cfg["samples"])]
    for i, (x, y) in enumerate(pairs):
        d = skorokhod_distance_exact(x, y)
        d_rev = skorokhod_distance_exact(y, x)
        oracle = grid_warp_distance(x, y)
        z = pairs[(i + 1) % len(pairs)][0]
        excess = skorokhod_distance_exact(x, z) - (d + skorokhod_distance_exact(y, z))
        sup = sup_distance(x, y)
        worst = max(worst, abs(d - oracle))
        sym = max(sym, abs(d - d_rev))
        tri = max(tri, excess)
        above_sup += d > sup
        zero_mismatch += (d == 0.0) != paths_equal(x, y)
        rep.rows.append({"pair": i, "exact": d, "oracle": oracle, "reverse": d_rev, "sup": sup,
                         "triangle_excess": excess})
    if not pairs:
        return rep
    rep.add("max |exact - oracle|", worst, cfg["oracle_tol"], worst <= cfg["oracle_tol"])
    rep.add("max symmetry gap", sym, 1e-12, sym <= 1e-12)
    rep.add("max triangle excess", tri, 1e-9, tri <= 1e-9)
    rep.add("pairs with d > sup distance", above_sup, 0, above_sup == 0)
    rep.add("zero iff equal mismatches", zero_mismatch, 0, zero_mismatch == 0)
    return rep


def convergence_vs_n(cfg) -> StudyReport:
    rep = StudyReport("convergence-vs-n")
    spec = linear_example_spec(cfg["drift"], cfg["intensity"], cfg["jump"])
    coef = from_name("linear")
    H = CadlagPath.constant([cfg["xi"]])
    conf = SolverConfig(n_max=cfg["n_max"], tol=cfg["tol"], max_segments=cfg["max_segments"], residuals=False)
    errors = {}
    finals = []
    gap_violations = 0
    for s in range(cfg["samples"]):
        seed = cfg["seed"] + s
        Y = sample_path(spec, 1.0, seed)
        errs = {}

        def record(state, Y=Y, errs=errs, seed=seed):
            nonlocal gap_violations
            err = doleans_dade_error(state.Z, cfg["xi"], cfg["drift"], Y.jump_times, Y.jump_sizes[:, 0])
            errs[state.n] = err
            bound = math.ldexp(1.0, -state.n)
            ok = state.gap_to_f <= bound + 1e-12
            gap_violations += not ok
            rep.rows.append({"seed": seed, "n": state.n, "error": err, "gap_to_f": state.gap_to_f, "bound": bound,
                             "dist_to_prev": state.dist_to_prev, "segments": state.breakpoint_times.size})

        X, diag = solve(H, None, Y, coef, conf, callback=record)
        errors[seed] = errs
        finals.append(errs[diag.n_final] if diag.n_final in errs else math.nan)
    if not finals:
        return rep
    warm = cfg["warmup"]
    n_top = max(max(e) for e in errors.values())
    per_n = []
    for n in range(warm, n_top):
        ratios = [e[n + 1] / e[n] for e in errors.values() if n in e and n + 1 in e and e[n] > 0]
        if ratios:
            per_n.append(float(np.mean(ratios)))
    worst_ratio = max(per_n) if per_n else math.nan
    rep.add(f"max seed-averaged error ratio for n >= {warm}", worst_ratio, 0.75, worst_ratio <= 0.75)
    final = float(np.max(finals))
    rep.add("max final sup error", final, 1e-6, final < 1e-6, "<")
    rep.add("iterates with gap_to_f > 2^-n + 1e-12", gap_violations, 0, gap_violations == 0)
    return rep


def theta_inequality(cfg) -> StudyReport:
    rep = StudyReport("theta-inequality")
    spec = linear_example_spec(cfg["drift"], cfg["intensity"], cfg["jump"])
    P = CadlagPath.step([0.3, 0.7], [1.0, -0.5, 0.8])
    sup_P2 = 1.0
    lhs = np.zeros(cfg["samples"])
    th2 = np.zeros_like(lhs)
    rhs2 = np.zeros_like(lhs)
    monotone_bad = 0
    for s in range(cfg["samples"]):
        Y = sample_path(spec, 1.0, cfg["seed"], stream=s)
        M, A = decompose(Y, spec)
        V = dominating_process(M, A, spec.predictable_qv_rate, refine=cfg["refine"]).V
        I = stochastic_integral(P, Y)
        sup_before_T = max(np.max(np.abs(I.a)), np.max(np.abs(I.segment_ends())))
        lhs[s] = sup_before_T ** 2
        th2[s] = theta(P, V) ** 2
        rhs2[s] = sup_P2 * V.terminal[0] ** 2
        monotone_bad += bool(np.any(np.diff(V.a[:, 0]) < 0))
    if not cfg["samples"]:
        return rep
    rep.rows = [{"path": i, "sup_integral_sq": lhs[i], "theta_sq": th2[i], "supP2_VT2": rhs2[i]}
                for i in range(cfg["samples"])]
    slack = cfg["slack"]
    rep.add("mean sup|∫P dY|^2 / mean θ_T^2", lhs.mean() / th2.mean(), slack, lhs.mean() <= slack * th2.mean())
    rep.add("mean sup|∫P dY|^2 / (4 mean sup|P|^2 V_T^2)", lhs.mean() / (4 * rhs2.mean()), slack,
            lhs.mean() <= slack * 4 * rhs2.mean())
    return rep


def malliavin_identity(cfg) -> StudyReport:
    rep = StudyReport("malliavin-identity")
    spec = linear_example_spec(cfg["drift"], cfg["intensity"], cfg["jump"])
    coef = from_name("linear")
    H = CadlagPath.constant([cfg["xi"]])
    conf = SolverConfig(n_max=cfg["n_max"], tol=cfg["tol"], max_segments=cfg["max_segments"], residuals=False)
    rng = np.random.default_rng(cfg["seed"])
    worst = 0.0
    flagged = 0
    locality = 0.0
    for i in range(cfg["samples"]):
        seed = int(rng.integers(0, 2**31))
        r = float(rng.choice(np.arange(1, 10) / 10))
        v = float(rng.choice([-0.2, -0.05, 0.05, 0.2]))
        Y = sample_path(spec, 1.0, seed)
        try:
            D, X, Xs = derivative(coef, H, None, Y, MalliavinProbe(r, v), conf, return_solutions=True)
            ok = True
        except FlaggedDerivativeError as exc:
            X, Xs = exc.base_solution, exc.shifted_solution
            D = linear_combine([(1.0, Xs), (-1.0, X)])
            ok = False
            flagged += 1
        closed = closed_form_example(lambda x: x, X, Xs, Y, r, v)
        gap = sup_distance(D, closed)
        before = restrict(D, r)
        loc = max(float(np.max(np.abs(before.a))), float(np.max(np.abs(before.segment_ends()))))
        worst = max(worst, gap)
        locality = max(locality, loc)
        rep.rows.append({"probe": i, "seed": seed, "r": r, "v": v, "sup_gap": gap, "sup_D_before_r": loc,
                         "converged": ok, "D_T": float(D.terminal[0])})
    if not cfg["samples"]:
        return rep
    rep.add("max sup|derivative - closed form|", worst, 1e-8, worst <= 1e-8)
    rep.add("non-converged probes", flagged, 0, flagged == 0)
    rep.add("max |D| on [0, r)", locality, 1e-12, locality <= 1e-12)
    return rep


def adaptedness(cfg) -> StudyReport:
    rep = StudyReport("adaptedness")
    rng = np.random.default_rng(cfg["seed"])
    conf = SolverConfig(tol=cfg["tol"], n_max=cfg["n_max"], max_segments=cfg["max_segments"], residuals=False)
    worst_ratio = 0.0
    not_identical = 0
    not_converged = 0
    for i in range(cfg["samples"]):
        coef = random_lipschitz_coefficient(rng)
        spec = LevySpec(drift=(rng.uniform(-1, 1),), intensity=rng.uniform(0.5, 3.0),
                        jump_law=JumpLaw("normal", {"mean": rng.uniform(-0.2, 0.2), "std": rng.uniform(0.05, 0.4)}))
        Y = sample_path(spec, 1.0, int(rng.integers(0, 2**31)))
        H = CadlagPath.constant([rng.uniform(-1, 1)])
        t = float(rng.uniform(0.2, 0.8))
        X, d_full = solve(H, None, Y, coef, conf)
        Xs, d_stop = solve(stop_at(H, t), None, stop_at(Y, t), coef, conf)
        gap = sup_distance(restrict(X, t), restrict(Xs, t))
        X_again, _ = solve(H, None, Y, coef, conf)
        # a distinct coefficient object wrapping the same functions
        twin = Coefficient(coef.dims, coef.eval_f, coef.bound_C, "twin", coef.markov_g, None, (), coef.lipschitz)
        X_twin, _ = solve(H, None, Y, twin, conf)
        identical = paths_equal(X, X_again) and paths_equal(X, X_twin)
        not_identical += not identical
        not_converged += not (d_full.converged and d_stop.converged)
        worst_ratio = max(worst_ratio, gap / conf.tol)
        rep.rows.append({"problem": i, "t": t, "sup_gap_on_0_t": gap, "bit_identical": identical,
                         "n_full": d_full.n_final, "n_stopped": d_stop.n_final})
    if not cfg["samples"]:
        return rep
    rep.add("max sup gap on [0,t] / tol", worst_ratio, 5.0, worst_ratio <= 5.0)
    rep.add("repeated runs not bit-identical", not_identical, 0, not_identical == 0)
    rep.add("non-converged solves", not_converged, 0, not_converged == 0)
    return rep


def stopped_path_bound(cfg) -> StudyReport:
    rep = StudyReport("stopped-path-bound")
    rng = np.random.default_rng(cfg["seed"])
    bad = 0
    for i in range(cfg["samples"]):
        eta = _random_step(rng, cfg["max_jumps"], cfg["value_range"])
        t = float(rng.uniform(0, 1))
        tk = min(1.0, t + float(rng.uniform(0, 0.1)))
        if tk <= t:
            tk = min(1.0, np.nextafter(t, 2.0))
        d = skorokhod_distance_exact(stop_at(eta, t), stop_at(eta, tk))
        grid = np.concatenate([[t], eta.times[(eta.times > t) & (eta.times <= tk)], [tk]])
        rhs = float(np.max(np.abs(eta.values_at(grid)[:, 0] - eta.values_at([t])[0, 0])))
        bad += d > rhs
        rep.rows.append({"path": i, "t": t, "t_k": tk, "skorokhod": d, "bound": rhs})
    if cfg["samples"]:
        rep.add("violations of d(η^t, η^t_k) <= sup|η(t) - η(s)|", bad, 0, bad == 0)
    return rep


def driver_statistics(cfg) -> StudyReport:
    rep = StudyReport("driver-statistics")
    spec = linear_example_spec(cfg["drift"], cfg["intensity"], cfg["jump"])
    n = cfg["samples"]
    counts = np.zeros(n)
    recon_bad = mono_bad = 0
    for s in range(n):
        Y = sample_path(spec, 1.0, cfg["seed"] + s)
        counts[s] = Y.jump_times.size
        if s % cfg["check_every"] == 0:
            M, A = decompose(Y, spec)
            recon_bad += sup_distance(linear_combine([(1.0, M), (1.0, A)]), Y) != 0.0
            V = dominating_process(M, A, spec.predictable_qv_rate, refine=cfg["refine"]).V
            ends = V.segment_ends()[:, 0]
            mono_bad += bool(np.any(ends < V.a[:, 0]) or np.any(np.concatenate([V.a[1:, 0], V.terminal]) < ends)
                             or V.a[0, 0] < 0)
    if not n:
        return rep
    lam = cfg["intensity"]
    mean_z = (counts.mean() - lam) / math.sqrt(lam / n)
    # Var of the sample variance of a Poisson(λ) variable ≈ (μ4 - σ^4)/n with μ4 = λ(1 + 3λ)
    var_z = (counts.var(ddof=1) - lam) / math.sqrt((lam * (1 + 3 * lam) - lam ** 2) / n)
    rep.rows = [{"statistic": "mean", "value": counts.mean(), "expected": lam, "z": mean_z},
                {"statistic": "variance", "value": counts.var(ddof=1), "expected": lam, "z": var_z}]
    rep.add("|z| of jump-count mean", abs(mean_z), 4.0, abs(mean_z) <= 4.0)
    rep.add("|z| of jump-count variance", abs(var_z), 4.0, abs(var_z) <= 4.0)
    rep.add("paths where M + A != Y", recon_bad, 0, recon_bad == 0)
    rep.add("paths with decreasing V", mono_bad, 0, mono_bad == 0)
    return rep


_LINEAR = {"drift": 0.5, "intensity": 1.0, "jump": 0.1}

STUDIES = {
    "metric-oracle-agreement": (metric_oracle_agreement,
                                {"samples": 200, "seed": 0, "max_jumps": 6, "value_range": 2.0, "oracle_tol": 1e-4,
                                 "time_limit": 120.0}),
    "convergence-vs-n": (convergence_vs_n,
                         {"samples": 20, "seed": 0, "tol": 1e-10, "n_max": 40, "max_segments": 1 << 21, "xi": 1.0,
                          "warmup": 5, "time_limit": 60.0, **_LINEAR}),
    "theta-inequality": (theta_inequality,
                         {"samples": 10000, "seed": 0, "slack": 1.05, "refine": 16, "time_limit": 120.0, **_LINEAR}),
    "malliavin-identity": (malliavin_identity,
                           {"samples": 100, "seed": 0, "tol": 1e-6, "n_max": 40, "max_segments": 1 << 21, "xi": 1.0,
                            "time_limit": 60.0, **_LINEAR}),
    "adaptedness": (adaptedness,
                    {"samples": 20, "seed": 0, "tol": 1e-5, "n_max": 40, "max_segments": 1 << 21,
                     "time_limit": None}),
    "stopped-path-bound": (stopped_path_bound,
                           {"samples": 100, "seed": 0, "max_jumps": 6, "value_range": 2.0, "time_limit": None}),
    "driver-statistics": (driver_statistics,
                          {"samples": 100000, "seed": 0, "check_every": 1, "refine": 4, "time_limit": None,
                           **_LINEAR}),
}


def study_config(name: str, overrides: dict | None = None) -> dict:
    if name not in STUDIES:
        raise ConfigError(f"unknown study {name!r}; known: {', '.join(STUDIES)}")
    cfg = dict(STUDIES[name][1])
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ConfigError(f"unknown field {key!r} for study {name!r}")
        cfg[key] = value
    if int(cfg["samples"]) < 0:
        raise ConfigError("samples must be >= 0")
    return cfg


def run_study(name: str, overrides: dict | None = None) -> StudyReport:
    """Run a named study; a study with zero samples is an explicit no-op."""
    cfg = study_config(name, overrides)
    start = time.perf_counter()
    if cfg["samples"] == 0:
        rep = StudyReport(name, noop=True)
    else:
        rep = STUDIES[name][0](cfg)
    rep.runtime = time.perf_counter() - start
    limit = cfg.get("time_limit")
    if limit and not rep.noop:
        rep.add("runtime [s]", rep.runtime, limit, rep.runtime < limit, "<")
    return rep
