"""Closed-form analysis of the two-state flip model.

The chain lives on {-1, +1} with uniform target; a flip is proposed
with probability 1 - theta and the acceptance-ratio estimate is a
two-point draw taking values a and 1/a. Everything about the averaged
kernel is available in closed form: per-step flip probability,
relaxation time, mixing-time bounds, and the relaxation-time reduction
obtained by averaging N estimates. The module also provides the exact
sampling counterpart (a target/pair fixture for the generic kernels)
for Monte Carlo cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import OuterProposal, ProposalPair, TargetModel, mhaar_step
from .rng import RandomSource

__all__ = [
    "ToyModel",
    "toy_target_and_pair",
    "pflip_exact",
    "relaxation_time",
    "gamma_reduction",
    "mixing_time_bounds",
    "pflip_monte_carlo",
]


@dataclass(frozen=True)
class ToyModel:
    """Two-point estimator law: value a w.p. 1/(1+a), 1/a w.p. a/(1+a).

    ``theta`` is the hold probability of the outer proposal.
    """

    a: float
    theta: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must lie in [0, 1)")


def toy_target_and_pair(model: ToyModel) -> tuple[TargetModel, ProposalPair]:
    """Sampling fixture on {-1,+1} whose ratio estimate equals the draw u.

    Holds are proposed with probability theta and consume no auxiliary
    randomness (a held proposal is always accepted: ratio 1).
    """
    a, theta = model.a, model.theta
    p_a = 1.0 / (1.0 + a)

    def sample(x: int, src: RandomSource) -> int:
        return -x if src.coin(1.0 - theta, "flip-proposal") else x

    def q_logd(x: int, y: int) -> float:
        return math.log(1.0 - theta) if y == -x else math.log(theta)

    outer = OuterProposal(sample, q_logd if theta > 0 else None)

    def sample_u(x: int, y: int, src: RandomSource) -> float:
        if y == x:
            return 1.0
        return a if src.coin(p_a, "estimate") else 1.0 / a

    def log_ratio(x: int, y: int, u: float) -> float:
        # Uniform target, symmetric proposal: the estimate IS the draw.
        return 0.0 if y == x else math.log(u)

    target = TargetModel(lambda s: 0.0, states=(-1, 1))
    pair = ProposalPair(outer, sample_u, lambda u: 1.0 / u, log_ratio)
    return target, pair


def _binom_pmf(n: int, p: float, k: np.ndarray) -> np.ndarray:
    """Binomial pmf through log-gamma; stable up to n ~ 10^6."""
    k = np.asarray(k, dtype=float)
    out = np.full(k.shape, -np.inf)
    valid = (k >= 0) & (k <= n)
    kv = k[valid]
    out[valid] = (
        gammaln(n + 1.0)
        - gammaln(kv + 1.0)
        - gammaln(n - kv + 1.0)
        + kv * math.log(p)
        + (n - kv) * math.log1p(-p)
    )
    return np.exp(out)


def pflip_exact(model: ToyModel, N: int) -> float:
    """Exact per-step flip probability of the N-estimator averaged kernel."""
    if N < 1:
        raise ValueError("N must be >= 1")
    a, theta = model.a, model.theta
    p_a = 1.0 / (1.0 + a)
    if N == 1:
        return (1.0 - theta) * (
            p_a * min(1.0, a) + (1.0 - p_a) * min(1.0, 1.0 / a)
        )
    k = np.arange(N + 1)
    w = k * a / N + (1.0 - k / N) / a
    forward = _binom_pmf(N, p_a, k) @ np.minimum(1.0, w)
    # Count including the one slot drawn from the reversed estimator law
    # (value a with probability a/(1+a)); out-of-range pmf terms are zero.
    mix = (1.0 - p_a) * _binom_pmf(N - 1, p_a, k - 1) + p_a * _binom_pmf(
        N - 1, p_a, k
    )
    backward = mix @ np.minimum(1.0, 1.0 / w)
    return (1.0 - theta) / 2.0 * (forward + backward)


def relaxation_time(model: ToyModel, N: int) -> float:
    """1 / (2 * flip probability); the inverse spectral gap."""
    return 1.0 / (2.0 * pflip_exact(model, N))


def gamma_reduction(a: float, N: int) -> float:
    """Relaxation-time ratio T_relax(N) / T_relax(1); hold-rate free."""
    model = ToyModel(a=a, theta=0.0)
    return relaxation_time(model, N) / relaxation_time(model, 1)


def mixing_time_bounds(
    model: ToyModel, N: int, eps: float
) -> tuple[float, float]:
    """Two-sided bounds on the eps-mixing time from the relaxation time."""
    if not 0.0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    t = relaxation_time(model, N)
    lower = -(t - 1.0) * math.log(2.0 * eps)
    upper = -t * math.log(eps / 2.0)
    return lower, upper


def pflip_monte_carlo(
    model: ToyModel, N: int, n_steps: int, src: RandomSource
) -> float:
    """Empirical flip frequency of the averaged kernel on the toy fixture."""
    if n_steps < 10_000:
        raise ValueError("need at least 10^4 steps")
    target, pair = toy_target_and_pair(model)
    x = 1
    flips = 0
    for _ in range(n_steps):
        src.next_step()
        x_new, _ = mhaar_step(x, target, pair, N, src)
        flips += x_new != x
        x = x_new
    return flips / n_steps
