import math

import numpy as np
import pytest

from skflow.coefficient import (
    Coefficient,
    caglad_approx,
    caglad_time,
    check_assumptions,
    eval_g,
    from_name,
    markov_coefficient,
)
from skflow.errors import ConfigError, DomainError, NotCadlagError
from skflow.paths import CadlagPath, eval_path, left_limit

Z1 = CadlagPath.zeros(1)


def time_only(fn, name="time-only"):
    return Coefficient(dims=(1, 1, 1), eval_f=lambda t, z, g: np.array([[fn(t)]]), bound_C=lambda t, z: 1.0,
                       name=name)


def test_registry_names():
    for name in ("linear", "affine(0.5, 2)", "sin", "indicator(0.5)", "anticipating-bad"):
        assert from_name(name).dims == (1, 1, 1)
    with pytest.raises(ConfigError):
        from_name("nope")
    with pytest.raises(ConfigError):
        from_name("affine(1)")


def test_eval_g_time_constant_equals_eval_f():
    coef = from_name("affine(0.5, 2)")
    gamma = CadlagPath.linear([1.0])
    for t in (0.2, 0.7):
        assert eval_g(coef, t, Z1, gamma)[0, 0] == pytest.approx(coef.eval_f(t, Z1, gamma)[0, 0])


def test_indicator_left_limit():
    coef = from_name("indicator(0.5)")
    assert eval_g(coef, 0.5, Z1, Z1)[0, 0] == 0.0
    assert coef.eval_f(0.5, Z1, Z1)[0, 0] == 1.0


def test_eval_g_of_left_limit_functional_matches_left_limit():
    gamma = CadlagPath([0.0, 0.3, 0.6, 1.0], [[0.0], [2.0], [-1.0]], [[1.0], [0.5], [3.0]], [4.0])
    coef = Coefficient(dims=(1, 1, 1), eval_f=lambda t, z, g: left_limit(g, t).reshape(1, 1),
                       bound_C=lambda t, z: 1.0)
    ts = np.random.default_rng(0).uniform(0.01, 1.0, 100)
    ts = np.concatenate([ts, [0.3, 0.6, 1.0]])
    for t in ts:
        assert eval_g(coef, t, Z1, gamma)[0, 0] == pytest.approx(left_limit(gamma, t)[0], abs=1e-9)


def test_eval_g_markov_uses_exact_left_limit():
    gamma = CadlagPath.step([0.4], [1.0, 3.0])
    coef = from_name("linear")
    assert eval_g(coef, 0.4, Z1, gamma)[0, 0] == 1.0
    assert coef.eval_f(0.4, Z1, gamma)[0, 0] == 3.0


def test_eval_g_rejects_non_cadlag_time_dependence():
    coef = time_only(lambda t: math.sin(1.0 / (0.5 - t)) if t != 0.5 else 0.0, "oscillating")
    with pytest.raises(NotCadlagError):
        eval_g(coef, 0.5, Z1, Z1)


def test_eval_g_domain():
    with pytest.raises(DomainError):
        eval_g(from_name("linear"), 1.5, Z1, Z1)


def test_caglad_time_examples():
    assert caglad_time(4, 0.5) == 0.25
    assert caglad_time(4, 0.6) == 0.5
    assert caglad_time(10, 0.3) == pytest.approx(0.2)
    assert caglad_time(7, 0.0) == 0.0
    for n in (3, 7, 10, 1000):
        for k in range(1, n + 1):
            assert caglad_time(n, k / n) == pytest.approx((k - 1) / n)


def test_caglad_approx_examples():
    coef = time_only(lambda t: math.sin(3 * t))
    assert caglad_approx(coef, 5, 0.0, Z1, Z1)[0, 0] == 0.0
    assert caglad_approx(coef, 5, 0.4, Z1, Z1)[0, 0] == pytest.approx(math.sin(0.6))
    t = 0.37
    assert caglad_approx(coef, 10**7, t, Z1, Z1)[0, 0] == pytest.approx(eval_g(coef, t, Z1, Z1)[0, 0], abs=1e-6)


def test_check_assumptions_linear_passes():
    report = check_assumptions(from_name("linear"), samples=300, seed=1)
    assert report.passed
    assert report.checks["lipschitz"] == 300


def test_check_assumptions_sin_passes():
    assert check_assumptions(from_name("sin"), samples=300, seed=2).passed


def test_check_assumptions_flags_anticipation():
    report = check_assumptions(from_name("anticipating-bad"), samples=200, seed=3)
    assert report.count("nonanticipative") > 0
    witness = next(v for v in report.violations if v["check"] == "nonanticipative")
    assert witness["t"] < 1.0


def test_check_assumptions_flags_growth():
    coef = markov_coefficient(lambda x: (x ** 2).reshape(-1, 1, 1), 1.0, name="square")
    report = check_assumptions(coef, samples=200, seed=4)
    assert report.count("growth") + report.count("lipschitz") > 0


def test_markov_coefficient_vector_shapes():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    coef = markov_coefficient(lambda x: (x @ A.T).reshape(-1, 2, 1), 1.0, dims=(2, 1, 1))
    gamma = CadlagPath.constant([1.0, 2.0])
    np.testing.assert_allclose(coef.eval_f(0.3, Z1, gamma)[:, 0], A @ eval_path(gamma, 0.3))
    assert check_assumptions(coef, samples=100, seed=5).passed
