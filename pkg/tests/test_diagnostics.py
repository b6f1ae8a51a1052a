import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fixtures import TRI_PI, triangle_target_and_pair
from ratioavg.core import mh_step, mhaar_step
from ratioavg.diagnostics import (
    ConvergenceCurve,
    asymptotic_variance,
    detailed_balance_residual,
    dirichlet_form,
    dirichlet_form_autocov,
    ensemble_convergence,
    enumerate_kernel,
    enumerate_outcomes,
    iac_estimate,
    right_spectral_gap,
    stationary_distribution,
    stationary_residual,
)
from ratioavg.rng import NonEnumerableSource, StreamSource


# ---------------------------------------------------------------------------
# exact enumeration of probabilistic programs


def test_enumerate_simple_program():
    def program(src):
        if src.coin(0.3, "first"):
            return "a"
        return "b" if src.coin(0.5, "second") else "c"

    law = enumerate_outcomes(program)
    assert abs(law["a"] - 0.3) < 1e-15
    assert abs(law["b"] - 0.35) < 1e-15
    assert abs(law["c"] - 0.35) < 1e-15
    assert abs(sum(law.values()) - 1.0) < 1e-12


def test_enumerate_skips_zero_probability_branches():
    def program(src):
        return src.choice((0.0, 1.0, 0.0), "pick")

    law = enumerate_outcomes(program)
    assert law == {1: 1.0}


def test_enumerate_normalises_weights():
    def program(src):
        return src.choice((2.0, 6.0), "unnorm")

    law = enumerate_outcomes(program)
    assert abs(law[0] - 0.25) < 1e-15
    assert abs(law[1] - 0.75) < 1e-15


def test_enumerate_law_independent_of_option_order():
    def program(src):
        x = src.choice((0.2, 0.5, 0.3), "first")
        y = src.coin(0.4, "second")
        return (x, y)

    law1 = enumerate_outcomes(program)
    law2 = enumerate_outcomes(program, option_order=lambda label, n: range(n - 1, -1, -1))
    assert set(law1) == set(law2)
    assert all(abs(law1[k] - law2[k]) < 1e-14 for k in law1)


def test_enumerate_refuses_continuous_draws():
    with pytest.raises(NonEnumerableSource):
        enumerate_outcomes(lambda src: src.uniform("noise"))
    with pytest.raises(NonEnumerableSource):
        enumerate_outcomes(lambda src: float(src.generator("g").standard_normal()))


def test_enumerate_kernel_rows_stochastic():
    target, pair = triangle_target_and_pair()
    K = enumerate_kernel(
        lambda x, src: mhaar_step(x, target, pair, 2, src)[0],
        target.states,
        TRI_PI,
    )
    assert np.abs(K.P.sum(axis=1) - 1.0).max() < 1e-12
    assert abs(K.pi.sum() - 1.0) < 1e-15


# ---------------------------------------------------------------------------
# matrix functionals on hand-built chains


def _two_state(p, q, pi=None):
    P = np.array([[1 - p, p], [q, 1 - q]])
    if pi is None:
        pi = np.array([q, p]) / (p + q)  # reversible stationary law
    from ratioavg.diagnostics import FiniteKernelMatrix

    return FiniteKernelMatrix(("x", "y"), P, pi)


def test_detailed_balance_residual_zero_for_reversible():
    K = _two_state(0.3, 0.6)
    assert detailed_balance_residual(K) < 1e-16
    assert stationary_residual(K) < 1e-16


def test_detailed_balance_residual_flags_imbalance():
    K = _two_state(0.3, 0.6, pi=(0.5, 0.5))
    assert detailed_balance_residual(K) > 0.1


def test_stationary_distribution_matches():
    P = np.array([[0.7, 0.3], [0.6, 0.4]])
    pi = stationary_distribution(P)
    assert np.abs(pi @ P - pi).max() < 1e-12
    assert abs(pi.sum() - 1.0) < 1e-12


def test_right_spectral_gap_two_state_closed_form():
    # second eigenvalue of the two-state chain is 1 - p - q
    K = _two_state(0.3, 0.5)
    assert abs(right_spectral_gap(K) - 0.8) < 1e-12


def test_right_spectral_gap_requires_reversibility():
    K = _two_state(0.3, 0.6, pi=(0.5, 0.5))
    with pytest.raises(ValueError):
        right_spectral_gap(K)


@given(st.integers(0, 2**32 - 1))
def test_dirichlet_form_two_routes_agree(seed):
    K = _two_state(0.35, 0.25)
    f = np.random.default_rng(seed).standard_normal(2)
    a = dirichlet_form(K, f)
    b = dirichlet_form_autocov(K, f)
    assert abs(a - b) < 1e-12


def test_asymptotic_variance_two_state_closed_form():
    # var(f) * (1 + lambda) / (1 - lambda) for the indicator-like f on a
    # symmetric two-state chain with flip probability p
    p = 0.3
    K = _two_state(p, p, pi=(0.5, 0.5))
    f = np.array([-1.0, 1.0])
    lam = 1.0 - 2.0 * p
    want = 1.0 * (1.0 + lam) / (1.0 - lam)
    assert abs(asymptotic_variance(K, f) - want) < 1e-12


def test_asymptotic_variance_iid_limit():
    # a kernel that redraws from pi has asymptotic variance var_pi(f)
    pi = np.array([0.2, 0.3, 0.5])
    from ratioavg.diagnostics import FiniteKernelMatrix

    K = FiniteKernelMatrix((0, 1, 2), np.tile(pi, (3, 1)), pi)
    f = np.array([1.0, -2.0, 0.7])
    fb = f - pi @ f
    assert abs(asymptotic_variance(K, f) - pi @ fb**2) < 1e-12


# ---------------------------------------------------------------------------
# chain-output diagnostics


def test_iac_iid_series_near_one():
    x = np.random.default_rng(0).standard_normal(80_000)
    point, (lo, hi) = iac_estimate(x)
    assert abs(point - 1.0) < 0.1
    assert lo < 1.05 and hi > 0.9


def test_iac_ar1_matches_theory():
    # AR(1) with coefficient rho has IAC (1+rho)/(1-rho)
    rho = 0.8
    gen = np.random.default_rng(42)
    n = 400_000
    eps = gen.standard_normal(n)
    x = np.empty(n)
    x[0] = eps[0]
    for i in range(1, n):
        x[i] = rho * x[i - 1] + eps[i]
    point, (lo, hi) = iac_estimate(x)
    want = (1 + rho) / (1 - rho)
    assert abs(point - want) / want < 0.15
    assert lo < want < hi


def test_iac_validation():
    with pytest.raises(ValueError):
        iac_estimate(np.zeros(500))
    with pytest.raises(ValueError):
        iac_estimate(np.ones(5000))  # constant series
    with pytest.raises(ValueError):
        iac_estimate(np.random.default_rng(0).standard_normal(5000), n_batches=4)


def test_ensemble_convergence_reaches_target():
    target, pair = triangle_target_and_pair()
    pi = np.asarray(TRI_PI) / sum(TRI_PI)
    ref = float(pi @ np.array([0.0, 1.0, 2.0]))
    curve = ensemble_convergence(
        lambda x, src: mh_step(x, target, pair.outer, src)[0],
        0,
        n_chains=400,
        horizon=40,
        functionals=[float],
        src=StreamSource(7, 0),
    )
    assert isinstance(curve, ConvergenceCurve)
    err = curve.abs_error([ref])
    # late-horizon ensemble mean within 5 stderr of the target mean
    assert err[-1, 0] < 5 * curve.stderr[-1, 0] + 1e-3


def test_ensemble_convergence_pool_identical():
    from concurrent.futures import ThreadPoolExecutor

    target, pair = triangle_target_and_pair()

    def step(x, src):
        return mh_step(x, target, pair.outer, src)[0]

    a = ensemble_convergence(
        step, 0, 8, 20, [float], StreamSource(9, 0)
    )
    with ThreadPoolExecutor(4) as pool:
        b = ensemble_convergence(
            step, 0, 8, 20, [float], StreamSource(9, 0), pool=pool
        )
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.stderr, b.stderr)
