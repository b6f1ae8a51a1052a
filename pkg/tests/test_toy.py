import math
from itertools import product

import numpy as np
import pytest

from ratioavg.core import mhaar_step
from ratioavg.diagnostics import enumerate_kernel
from ratioavg.rng import StreamSource
from ratioavg.toy import (
    ToyModel,
    gamma_reduction,
    mixing_time_bounds,
    pflip_exact,
    pflip_monte_carlo,
    relaxation_time,
    toy_target_and_pair,
)


def brute_pflip(a: float, theta: float, N: int) -> float:
    """Exhaustive oracle: enumerate all estimator combinations directly."""
    p_a = 1.0 / (1.0 + a)
    fwd_law = {a: p_a, 1.0 / a: 1.0 - p_a}
    bwd_law = {a: 1.0 - p_a, 1.0 / a: p_a}  # reciprocal pushforward
    p_acc_fwd = 0.0
    for combo in product(fwd_law, repeat=N):
        prob = math.prod(fwd_law[u] for u in combo)
        p_acc_fwd += prob * min(1.0, sum(combo) / N)
    p_acc_bwd = 0.0
    for special in bwd_law:
        for combo in product(fwd_law, repeat=N - 1):
            prob = bwd_law[special] * math.prod(fwd_law[u] for u in combo)
            mean = (special + sum(combo)) / N
            p_acc_bwd += prob * min(1.0, 1.0 / mean)
    return (1.0 - theta) * 0.5 * (p_acc_fwd + p_acc_bwd)


@pytest.mark.parametrize("a", [2.0, 3.5, 10.0])
@pytest.mark.parametrize("theta", [0.0, 0.3])
@pytest.mark.parametrize("N", [1, 2, 3])
def test_pflip_exact_vs_brute_force(a, theta, N):
    got = pflip_exact(ToyModel(a=a, theta=theta), N)
    want = brute_pflip(a, theta, N)
    assert abs(got - want) < 1e-12


@pytest.mark.parametrize("a", [2.0, 5.0])
@pytest.mark.parametrize("N", [1, 2, 3])
def test_pflip_exact_vs_kernel_enumeration(a, N):
    # entirely independent route: enumerate the sampling kernel's exact
    # transition law and read off the flip probability
    model = ToyModel(a=a, theta=0.25)
    target, pair = toy_target_and_pair(model)
    K = enumerate_kernel(
        lambda x, src: mhaar_step(x, target, pair, N, src)[0],
        target.states,
        (0.5, 0.5),
    )
    got = pflip_exact(model, N)
    assert abs(K.P[0, 1] - got) < 1e-13
    assert abs(K.P[1, 0] - got) < 1e-13


def test_pflip_large_n_approaches_half():
    # the averaged estimate concentrates at one, so the flip probability
    # approaches the always-accept value (1 - theta) * 1; with theta=0
    # the relaxation time approaches 1/2 * 1/pflip -> 1
    p = pflip_exact(ToyModel(a=2.0, theta=0.0), 100_000)
    assert abs(p - 1.0) < 5e-3


def test_pflip_monotone_in_n():
    model = ToyModel(a=5.0, theta=0.1)
    vals = [pflip_exact(model, N) for N in (1, 2, 4, 8, 16, 64, 256)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_relaxation_time_definition():
    model = ToyModel(a=4.0, theta=0.2)
    assert relaxation_time(model, 3) == 1.0 / (2.0 * pflip_exact(model, 3))


def test_gamma_reduction_hold_free():
    # the hold probability scales both relaxation times, so the ratio
    # computed at theta=0 matches a hand ratio at any theta
    a, N = 6.0, 50
    t1 = relaxation_time(ToyModel(a=a, theta=0.37), 1)
    tn = relaxation_time(ToyModel(a=a, theta=0.37), N)
    assert abs(gamma_reduction(a, N) - tn / t1) < 1e-12


def test_gamma_reduction_limits():
    # N -> infinity limit is pflip(1)/pflip(inf) = pflip(1); closed form
    # 2/(1+a) + 2/(a(1+a)) ... computed directly: p1 = (min(1,a) + a*min(1,1/a))/(1+a)
    for a in (2.0, 5.0, 10.0):
        p1 = (min(1.0, a) + a * min(1.0, 1.0 / a)) / (1.0 + a)
        assert gamma_reduction(a, 200_000) > p1 - 1e-3
        assert gamma_reduction(a, 1) == 1.0


def test_mixing_time_bounds_bracket():
    model = ToyModel(a=3.0, theta=0.0)
    lower, upper = mixing_time_bounds(model, 2, 0.05)
    assert lower < upper
    # two-state chain mixes exactly: |lambda_2|^t <= eps at
    # t = log(eps)/log|lambda_2|; that time must sit inside the bracket
    lam = abs(1.0 - 2.0 * pflip_exact(model, 2))
    t_exact = math.log(0.05) / math.log(lam)
    assert lower <= t_exact <= upper
    with pytest.raises(ValueError):
        mixing_time_bounds(model, 2, 0.7)


def test_pflip_monte_carlo_within_4_sigma():
    model = ToyModel(a=5.0, theta=0.0)
    n = 100_000
    freq = pflip_monte_carlo(model, 2, n, StreamSource(314, 0))
    p = pflip_exact(model, 2)
    sigma = math.sqrt(p * (1.0 - p) / n)
    assert abs(freq - p) < 4 * sigma


def test_model_validation():
    with pytest.raises(ValueError):
        ToyModel(a=-1.0)
    with pytest.raises(ValueError):
        ToyModel(a=1.0, theta=1.0)
    with pytest.raises(ValueError):
        pflip_exact(ToyModel(a=2.0), 0)
    with pytest.raises(ValueError):
        pflip_monte_carlo(ToyModel(a=2.0), 1, 100, StreamSource(0))
