import math

import numpy as np
import pytest

from skflow.coefficient import from_name, markov_coefficient
from skflow.errors import DomainError, FlaggedDerivativeError, ShapeError
from skflow.functional import SolverConfig, restrict
from skflow.levy import JumpLaw, LevySpec, sample_path
from skflow.malliavin import MalliavinProbe, closed_form_example, derivative, integrability_estimate
from skflow.paths import CadlagPath, eval_path, sup_distance, sup_norm
from skflow.studies import linear_example_spec

ONE = CadlagPath.constant([1.0])


def pure_jump_spec(rate=4.0):
    return LevySpec(drift=(0.0,), intensity=rate, jump_law=JumpLaw("normal", {"mean": 0.0, "std": 0.2}))


def test_zero_shift_gives_zero_path():
    Y = sample_path(linear_example_spec(), 1.0, 3)
    D = derivative(from_name("linear"), ONE, None, Y, MalliavinProbe(0.4, 0.0), SolverConfig(tol=1e-6))
    assert sup_norm(D) == 0.0


def test_zero_coefficient_gives_zero_path():
    zero = markov_coefficient(lambda x: np.zeros((len(x), 1, 1)), 0.0, g_at_zero=np.zeros((1, 1)))
    Y = sample_path(linear_example_spec(), 1.0, 3)
    D = derivative(zero, ONE, None, Y, MalliavinProbe(0.4, 0.3))
    assert sup_norm(D) == 0.0


def test_probe_validation():
    with pytest.raises(DomainError):
        MalliavinProbe(-0.1, 1.0)
    with pytest.raises(DomainError):
        derivative(from_name("linear"), ONE, None, CadlagPath.linear([1.0]), MalliavinProbe(1.5, 1.0))
    with pytest.raises(ShapeError):
        derivative(from_name("linear"), CadlagPath.zeros(2), None, CadlagPath.linear([1.0, 0.0]),
                   MalliavinProbe(0.5, 1.0))


def test_closed_form_examples():
    Y = CadlagPath.linear([1.0])
    X = ONE
    # before r the closed form vanishes
    cf = closed_form_example(lambda x: x, X, X, Y, 0.6, 0.5)
    ts = np.linspace(0, 0.59, 20)
    assert np.all(cf.values_at(ts) == 0.0)
    # g constant: c v 1_{t >= r}
    c = 2.5
    cf = closed_form_example(lambda x: np.full_like(x, c), X, CadlagPath.linear([3.0]), Y, 0.3, 0.4)
    assert eval_path(cf, 0.29)[0] == 0.0
    assert eval_path(cf, 0.3)[0] == pytest.approx(c * 0.4)
    assert cf.terminal[0] == pytest.approx(c * 0.4)


def test_pure_jump_linear_identity_is_tight():
    # drift-free linear problems converge exactly, so both routes agree to rounding
    coef = from_name("linear")
    rng = np.random.default_rng(8)
    for _ in range(10):
        Y = sample_path(pure_jump_spec(), 1.0, int(rng.integers(0, 2**31)))
        r = float(rng.uniform(0.05, 0.95))
        v = float(rng.choice([-0.2, 0.1, 0.3]))
        D, X, Xs = derivative(coef, ONE, None, Y, MalliavinProbe(r, v), SolverConfig(tol=1e-12),
                              return_solutions=True)
        cf = closed_form_example(lambda x: x, X, Xs, Y, r, v)
        assert sup_distance(D, cf) <= 1e-12
        # the shifted solution is the product with one extra factor (1 + v)
        assert Xs.terminal[0] == pytest.approx(X.terminal[0] * (1 + v), rel=1e-12)


def test_linear_identity_with_drift_tracks_the_solver_error():
    coef = from_name("linear")
    Y = sample_path(linear_example_spec(), 1.0, 11)
    gaps = []
    for tol in (1e-4, 1e-6):
        D, X, Xs = derivative(coef, ONE, None, Y, MalliavinProbe(0.35, 0.2), SolverConfig(tol=tol),
                              return_solutions=True)
        gaps.append(sup_distance(D, closed_form_example(lambda x: x, X, Xs, Y, 0.35, 0.2)))
    assert gaps[1] < gaps[0]
    assert gaps[1] <= 1e-5


def test_derivative_is_zero_before_r():
    coef = from_name("sin")
    Y = sample_path(linear_example_spec(), 1.0, 4)
    D = derivative(coef, ONE, None, Y, MalliavinProbe(0.5, 0.3), SolverConfig(tol=1e-6))
    before = restrict(D, 0.5)
    assert np.max(np.abs(before.a)) <= 1e-12
    assert np.max(np.abs(before.segment_ends())) <= 1e-12
    assert abs(eval_path(D, 0.5)[0]) > 0


def test_budget_exhaustion_is_flagged():
    Y = sample_path(linear_example_spec(), 1.0, 2)
    with pytest.raises(FlaggedDerivativeError) as info:
        derivative(from_name("linear"), ONE, None, Y, MalliavinProbe(0.5, 0.1),
                   SolverConfig(tol=1e-10, max_segments=1 << 9))
    assert info.value.base_solution is not None


def test_integrability_estimate():
    coef = from_name("linear")
    spec = pure_jump_spec(2.0)
    law = spec.jump_law
    v, w = law.quadrature(3)
    kw = dict(r_nodes=[0.0, 0.5, 1.0], v_nodes=v[:, 0], v_weights=spec.intensity * w,
              config=SolverConfig(tol=1e-10))
    zero = markov_coefficient(lambda x: np.zeros((len(x), 1, 1)), 0.0, g_at_zero=np.zeros((1, 1)))
    assert integrability_estimate(zero, ONE, None, spec, n_paths=3, seed=0, **kw).value == 0.0
    small = integrability_estimate(coef, ONE, None, spec, n_paths=20, seed=1, **kw)
    big = integrability_estimate(coef, ONE, None, spec, n_paths=40, seed=1, **kw)
    assert small.value > 0 and small.failures == 0
    assert abs(big.value - small.value) <= 4 * math.hypot(big.stderr, small.stderr)
    with pytest.raises(DomainError):
        integrability_estimate(coef, ONE, None, spec, [0.5], [0.1], [-1.0], 1, 0)
