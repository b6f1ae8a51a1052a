import math

import numpy as np
import pytest

from fixtures import (
    EX_DATA,
    EX_FLIP,
    EX_LOG_G,
    EX_LOG_PRIOR,
    EX_THETAS,
    EX_ZS,
    ex_log_C,
    ex_log_g,
    ex_posterior,
    ex_sample_lik,
    metropolis_two_point,
)
from ratioavg.diagnostics import (
    detailed_balance_residual,
    enumerate_kernel,
    enumerate_outcomes,
)
from ratioavg.exchange import (
    AnnealingSchedule,
    DoublyIntractableModel,
    ais_exchange_log_ratio,
    exchange_mhaar_reduced_step,
    exchange_mhaar_step,
    exchange_pair,
    geometric_bridges,
    pmt_init,
    pmt_step,
)
from ratioavg.rng import StreamSource

MODEL = DoublyIntractableModel(
    ex_log_g, lambda th: EX_LOG_PRIOR[th], ex_sample_lik, EX_DATA
)
STAGE_MOVE = metropolis_two_point(EX_ZS, "stage accept")


def bridges_for(T):
    return geometric_bridges(MODEL, AnnealingSchedule(T), STAGE_MOVE)


def exact_ratio(th, thp):
    return math.exp(
        EX_LOG_PRIOR[thp]
        + EX_LOG_G[(thp, EX_DATA)]
        - ex_log_C(thp)
        - (EX_LOG_PRIOR[th] + EX_LOG_G[(th, EX_DATA)] - ex_log_C(th))
    )


@pytest.mark.parametrize("T", [0, 1, 2])
def test_path_weight_unbiased_for_marginal_ratio(T):
    # the unknown normalising constants cancel: the mean path weight is
    # the posterior ratio that an exact-marginal sampler would use
    pair = exchange_pair(MODEL, bridges_for(T), EX_FLIP)
    for th in EX_THETAS:
        thp = EX_THETAS[1 - EX_THETAS.index(th)]
        law = enumerate_outcomes(lambda src: pair.sample_u_forward(th, thp, src))
        assert abs(sum(law.values()) - 1.0) < 1e-12
        est = sum(p * math.exp(pair.log_ratio(th, thp, u)) for u, p in law.items())
        assert abs(est - exact_ratio(th, thp)) < 1e-12


@pytest.mark.parametrize("T", [0, 1, 2])
@pytest.mark.parametrize("N", [1, 2, 3])
def test_exchange_step_reversible(T, N):
    bridges = bridges_for(T)
    K = enumerate_kernel(
        lambda s, src: exchange_mhaar_step(s, MODEL, bridges, EX_FLIP, N, src)[0],
        EX_THETAS,
        ex_posterior(),
    )
    assert detailed_balance_residual(K) < 1e-14


@pytest.mark.parametrize("T", [0, 1, 2])
@pytest.mark.parametrize("N", [1, 2, 3])
def test_reduced_step_reversible(T, N):
    bridges = bridges_for(T)
    K = enumerate_kernel(
        lambda s, src: exchange_mhaar_reduced_step(
            s, MODEL, bridges, EX_FLIP, N, src
        )[0],
        EX_THETAS,
        ex_posterior(),
    )
    assert detailed_balance_residual(K) < 1e-14


def test_reduced_equals_full_at_n1():
    bridges = bridges_for(1)
    K1 = enumerate_kernel(
        lambda s, src: exchange_mhaar_step(s, MODEL, bridges, EX_FLIP, 1, src)[0],
        EX_THETAS,
        ex_posterior(),
    )
    K2 = enumerate_kernel(
        lambda s, src: exchange_mhaar_reduced_step(
            s, MODEL, bridges, EX_FLIP, 1, src
        )[0],
        EX_THETAS,
        ex_posterior(),
    )
    assert np.abs(K1.P - K2.P).max() < 1e-15


def test_path_ratio_antisymmetry():
    bridges = bridges_for(2)
    pair = exchange_pair(MODEL, bridges, EX_FLIP)
    src = StreamSource(7, 0)
    for i in range(50):
        th = EX_THETAS[src.choice([0.5, 0.5], "t")]
        thp = EX_THETAS[1 - EX_THETAS.index(th)]
        u = pair.sample_u_forward(th, thp, src.substream(i))
        lr = pair.log_ratio(th, thp, u)
        lr_rev = pair.log_ratio(thp, th, pair.involution(u))
        assert abs(lr + lr_rev) < 1e-12


def test_path_length_validated():
    bridges = bridges_for(2)
    with pytest.raises(ValueError):
        ais_exchange_log_ratio(EX_THETAS[0], EX_THETAS[1], (0,), MODEL, bridges)


def test_off_support_proposal_rejected_without_paths():
    model = DoublyIntractableModel(
        ex_log_g, lambda th: -math.inf, ex_sample_lik, EX_DATA
    )
    th, rep = exchange_mhaar_step(
        EX_THETAS[0], model, bridges_for(0), EX_FLIP, 2, StreamSource(1)
    )
    assert th == EX_THETAS[0]
    assert rep.branch == "off-support"
    assert not rep.accepted


# ---------------------------------------------------------------------------
# estimated-target baseline


def test_pmt_step_reversible_on_extended_space():
    # the chain state carries its estimate; enumerate over the finite
    # set of reachable estimate values by rounding them into the state
    N = 2
    log_h = lambda z: 0.1 * z

    def estimates(th):
        vals = {}
        from itertools import product

        w = np.exp(np.array([EX_LOG_G[(th, z)] for z in EX_ZS]))
        w = w / w.sum()
        for combo in product(EX_ZS, repeat=N):
            prob = math.prod(w[EX_ZS.index(z)] for z in combo)
            est = round(
                math.log(
                    sum(math.exp(log_h(z) - EX_LOG_G[(th, z)]) for z in combo) / N
                ),
                12,
            )
            vals[est] = vals.get(est, 0.0) + prob
        return vals

    states = []
    pi = []
    for th in EX_THETAS:
        # the extended invariant law carries prior x unnormalised data
        # likelihood; the 1/C_theta factor lives inside the estimate's
        # mean, so it must NOT appear here as well
        numer = math.exp(EX_LOG_PRIOR[th] + EX_LOG_G[(th, EX_DATA)])
        for est, prob in estimates(th).items():
            states.append((th, est))
            # estimate values are reweighted by their size: larger
            # estimates are held longer
            pi.append(numer * prob * math.exp(est))

    from ratioavg.exchange import PmtState

    def step(state, src):
        th, est = state
        out, _ = pmt_step(PmtState(th, est), MODEL, log_h, EX_FLIP, N, src)
        return (out.theta, round(out.log_estimate, 12))

    K = enumerate_kernel(step, states, pi)
    # rounding estimates into hashable state labels perturbs acceptance
    # probabilities at the last digit; allow for that
    assert detailed_balance_residual(K) < 5e-12


def test_pmt_marginal_is_exact():
    # long-run theta frequencies against the exact posterior
    log_h = lambda z: 0.4 * z
    src = StreamSource(99, 0)
    state = pmt_init(EX_THETAS[0], MODEL, log_h, 2, src)
    n = 200_000
    hits = 0
    for _ in range(n):
        src.next_step()
        state, _ = pmt_step(state, MODEL, log_h, EX_FLIP, 2, src)
        hits += state.theta == EX_THETAS[1]
    p = ex_posterior()[1]
    # dependent draws: inflate the binomial error by a safe factor
    assert abs(hits / n - p) < 6 * math.sqrt(p * (1 - p) / n) + 0.01


def test_pmt_init_rejects_zero_estimate():
    model = DoublyIntractableModel(
        ex_log_g, lambda th: EX_LOG_PRIOR[th], ex_sample_lik, EX_DATA
    )
    with pytest.raises(ValueError):
        pmt_init(EX_THETAS[0], model, lambda z: -math.inf, 2, StreamSource(0))
