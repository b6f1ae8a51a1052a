"""Generic Metropolis kernels with estimator-averaged acceptance ratios.

States, targets and proposal pairs are opaque to the kernels: targets
evaluate log densities, proposal pairs know how to draw an outer
proposal ``y``, how to draw the auxiliary variable ``u`` forward
(``Q_{x,y}``) or backward (the involution pushforward of the forward
law), and how to evaluate the per-``u`` log acceptance-ratio estimate.

All ratio arithmetic is done in the log domain; averages of ratio
estimates are formed with :func:`log_mean_exp`. A ``-inf`` log ratio is
a legitimate "off support, certain rejection" value; NaN is a
programming error and raises.

Two-route averaged steps draw the shared outer proposal from the
caller's source, then the route coin, and only then spawn one
substream per estimator, so parallel estimator evaluation can never
perturb the route sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .rng import RandomSource

__all__ = [
    "TargetModel",
    "OuterProposal",
    "ProposalPair",
    "LogRatioEstimate",
    "KernelReport",
    "AnnealingSchedule",
    "InnerKernel",
    "log_mean_exp",
    "categorical_sample",
    "mh_step",
    "pmr_step",
    "mhaar_step",
    "mhaar_step_beta",
    "two_route_log_ratio",
    "dependent_mhaar_step",
    "nonrev_mhaar_step",
    "gaussian_walk_proposal",
    "reflected_walk_proposal",
]

State = Any
Aux = Any


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class TargetModel:
    """Log-unnormalised density evaluator over a state space.

    ``log_density`` must return ``-inf`` exactly off support and never
    NaN. ``states``, when given, enumerates every state of positive
    density exactly once (used by the finite-space oracles).
    """

    log_density: Callable[[State], float]
    states: tuple | None = None


@dataclass(frozen=True)
class OuterProposal:
    """Outer proposal kernel ``q(x, .)``.

    ``log_density`` may be ``None`` for symmetric kernels, in which
    case the forward/backward terms cancel.
    """

    sample: Callable[[State, RandomSource], State]
    log_density: Callable[[State, State], float] | None = None

    def log_ratio(self, x: State, y: State) -> float:
        """log q(y,x) - log q(x,y); zero for symmetric kernels."""
        if self.log_density is None:
            return 0.0
        fwd = self.log_density(x, y)
        rev = self.log_density(y, x)
        if fwd == -math.inf and rev == -math.inf:
            return -math.inf
        return rev - fwd


@dataclass(frozen=True)
class ProposalPair:
    """The (forward, backward) auxiliary-variable pair with involution.

    ``log_ratio(x, y, u)`` evaluates the per-``u`` log acceptance-ratio
    estimate. It must satisfy the antisymmetry
    ``log_ratio(x, y, u) = -log_ratio(y, x, involution(u))`` wherever
    both sides are finite, and integrate (under the forward law of
    ``u``) to the marginal acceptance ratio.
    """

    outer: OuterProposal
    sample_u_forward: Callable[[State, State, RandomSource], Aux]
    involution: Callable[[Aux], Aux]
    log_ratio: Callable[[State, State, Aux], float]

    def sample_q(self, x: State, src: RandomSource) -> State:
        return self.outer.sample(x, src)

    def sample_u_backward(self, x: State, y: State, src: RandomSource) -> Aux:
        # The backward law is the involution pushforward of the forward law.
        return self.involution(self.sample_u_forward(x, y, src))


@dataclass(frozen=True)
class LogRatioEstimate:
    """A log-domain acceptance-ratio estimate with the draw behind it."""

    log_value: float
    aux: Aux = None

    def __post_init__(self):
        if math.isnan(self.log_value):
            raise ValueError("NaN acceptance-ratio estimate")


@dataclass(frozen=True)
class KernelReport:
    """Per-step record: outcome, route taken, ratio used."""

    accepted: bool
    branch: str  # "Q1" | "Q2" | "plain"
    log_ratio_used: float
    n_estimators: int = 1


@dataclass(frozen=True)
class AnnealingSchedule:
    """Linear stage schedule with ``steps`` intermediate stages.

    ``fraction(t)`` is how far stage ``t`` sits along the deformation,
    0 at stage 0 and 1 at stage ``steps + 1``. Which endpoint carries
    the current versus the proposed parameter is a per-module
    convention; the schedule itself is direction-neutral.
    """

    steps: int

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("annealing steps must be >= 0")

    def fraction(self, t: int) -> float:
        if not 0 <= t <= self.steps + 1:
            raise ValueError(f"stage {t} outside 0..{self.steps + 1}")
        return t / (self.steps + 1)


@dataclass(frozen=True)
class InnerKernel:
    """A Markov kernel on the auxiliary space, indexed by (x, y).

    ``step(x, y, u, src)`` must leave ``Q_{x,y}`` invariant and be
    reversible with respect to it for every (x, y). This is a caller
    contract; the library cannot verify it for arbitrary kernels.
    """

    step: Callable[[State, State, Aux, RandomSource], Aux]


# ---------------------------------------------------------------------------
# numeric helpers


def log_mean_exp(values: Sequence[float], n: int | None = None) -> float:
    """log((1/n) * sum(exp(v_i))), computed with a max shift.

    All ``-inf`` gives ``-inf``; any NaN raises. ``n`` defaults to
    ``len(values)`` and must match it when given.
    """
    vals = np.asarray(values, dtype=float)
    if n is None:
        n = vals.size
    if n != vals.size or n < 1:
        raise ValueError(f"log_mean_exp over {vals.size} values with n={n}")
    if np.isnan(vals).any():
        raise ValueError("NaN in log_mean_exp input")
    m = vals.max()
    if m == -math.inf:
        return -math.inf
    # Index-ordered summation: reduction order is fixed regardless of how
    # the values were produced.
    return float(m + math.log(np.exp(vals - m).sum() / n))


def categorical_sample(log_weights: Sequence[float], src: RandomSource) -> int:
    """Draw an index with probability proportional to exp(log_weight)."""
    return src.choice_log(log_weights, "categorical")


def _accept(log_ratio: float, src: RandomSource, label: str = "accept") -> bool:
    if math.isnan(log_ratio):
        raise ValueError("NaN acceptance log-ratio")
    p = 1.0 if log_ratio >= 0.0 else math.exp(log_ratio)
    return src.coin(p, label)


def _log_increment(num: float, den: float) -> float:
    """log(num/den) with the off-support convention: any zero => -inf."""
    if math.isnan(num) or math.isnan(den):
        raise ValueError("NaN log density in ratio increment")
    if num == -math.inf or den == -math.inf:
        return -math.inf
    return num - den


def gaussian_walk_proposal(step_std) -> OuterProposal:
    """Symmetric random-walk proposal; scalar or per-coordinate stds."""
    std = np.asarray(step_std, dtype=float)
    if (std <= 0.0).any():
        raise ValueError("step_std must be positive")
    scalar = std.ndim == 0

    def sample(x: State, src: RandomSource) -> State:
        gen = src.generator("walk noise")
        if scalar:
            return float(x + float(std) * gen.standard_normal())
        x = np.asarray(x, dtype=float)
        return x + std * gen.standard_normal(std.shape)

    return OuterProposal(sample=sample, log_density=None)


def reflected_walk_proposal(step_std, lo=None, hi=None) -> OuterProposal:
    """Random walk folded back into a box; still a symmetric kernel.

    Folding a symmetric increment at the boundaries keeps
    q(x, y) = q(y, x) for x, y inside the box, so no density correction
    is needed. Use it when downstream machinery (bridge kernels,
    likelihood samplers) is only defined on the box.
    """
    std = np.asarray(step_std, dtype=float)
    if (std <= 0.0).any():
        raise ValueError("step_std must be positive")
    if lo is None and hi is None:
        raise ValueError("need at least one boundary to reflect at")
    scalar = std.ndim == 0
    lo_a = None if lo is None else np.asarray(lo, dtype=float)
    hi_a = None if hi is None else np.asarray(hi, dtype=float)

    def fold(y):
        if lo_a is not None and hi_a is not None:
            width = hi_a - lo_a
            t = np.mod(y - lo_a, 2.0 * width)
            return lo_a + np.minimum(t, 2.0 * width - t)
        if lo_a is not None:
            return lo_a + np.abs(y - lo_a)
        return hi_a - np.abs(hi_a - y)

    def sample(x: State, src: RandomSource) -> State:
        gen = src.generator("walk noise")
        if scalar:
            y = float(x) + float(std) * gen.standard_normal()
            return float(fold(y))
        y = np.asarray(x, dtype=float) + std * gen.standard_normal(std.shape)
        return fold(y)

    return OuterProposal(sample=sample, log_density=None)


def _map_ordered(fn, n: int, src: RandomSource, pool=None, start: int = 0) -> list:
    """Evaluate ``fn(i, substream_{start + i})`` for i in range(n), in order.

    With a pool, evaluation may be concurrent; the result buffer is
    index-ordered either way, so the reduction is schedule-independent.
    ``start`` offsets the substream indices so a caller can reserve low
    indices for sibling draws made outside the map.
    """
    subs = [src.substream(start + i) for i in range(n)]
    if pool is None:
        return [fn(i, s) for i, s in enumerate(subs)]
    return list(pool.map(fn, range(n), subs))


# ---------------------------------------------------------------------------
# kernel steps


def mh_step(
    x: State,
    target: TargetModel,
    q: OuterProposal,
    src: RandomSource,
) -> tuple[State, KernelReport]:
    """Plain Metropolis–Hastings step with the exact marginal ratio."""
    y = q.sample(x, src)
    ly = target.log_density(y)
    if ly == -math.inf:
        log_r = -math.inf
    else:
        log_r = ly - target.log_density(x) + q.log_ratio(x, y)
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "plain", log_r, 1)
    return (y if accepted else x), report


def pmr_step(
    x: State,
    target: TargetModel | None,
    pair: ProposalPair,
    src: RandomSource,
) -> tuple[State, KernelReport]:
    """Single-estimator step: y ~ q, u ~ Q_{x,y}, accept on the estimate.

    Ratio-based steps never evaluate the target density (that is the
    reason to use them); ``target`` may be ``None`` when the marginal
    density is unavailable.
    """
    y = pair.sample_q(x, src)
    u = pair.sample_u_forward(x, y, src)
    log_r = pair.log_ratio(x, y, u)
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "plain", log_r, 1)
    return (y if accepted else x), report


def _half(x: State, y: State) -> float:
    return 0.5


def mhaar_step(
    x: State,
    target: TargetModel | None,
    pair: ProposalPair,
    N: int,
    src: RandomSource,
    pool=None,
) -> tuple[State, KernelReport]:
    """Two-route step averaging N independent ratio estimators.

    Route Q1 (probability 1/2): N i.i.d. forward draws, accept with
    min{1, mean of the estimates}. Route Q2: one slot redrawn from the
    backward law, the rest i.i.d. under reversed roles, accept with
    min{1, 1 / reversed-role mean}. No selection index is materialised
    on route Q1.
    """
    return mhaar_step_beta(x, target, pair, N, _half, src, pool)


def mhaar_step_beta(
    x: State,
    target: TargetModel | None,
    pair: ProposalPair,
    N: int,
    beta: Callable[[State, State], float],
    src: RandomSource,
    pool=None,
) -> tuple[State, KernelReport]:
    """Averaged two-route step with state-dependent route weighting.

    Route Q1 is taken with probability ``beta(x, y)``; its acceptance
    ratio picks up the factor ``(1 - beta(y, x)) / beta(x, y)``, and
    route Q2's the reciprocal mirror, which is what keeps the kernel
    reversible for any valid ``beta``. ``beta`` must depend only on
    quantities shared by both routes (here: the endpoint pair).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    y = pair.sample_q(x, src)
    log_r, branch = two_route_log_ratio(x, y, pair, N, beta, src, pool)
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, branch, log_r, N)
    return (y if accepted else x), report


def two_route_log_ratio(
    x: State,
    y: State,
    pair: ProposalPair,
    N: int,
    beta: Callable[[State, State], float],
    src: RandomSource,
    pool=None,
) -> tuple[float, str]:
    """Route coin, estimator draws and averaged log acceptance ratio.

    Factored out so callers that need to intercept the proposal (for
    support guards or bookkeeping) can still share the two-route
    machinery; ``y`` must already have been drawn from the outer
    proposal using the same source.
    """
    b_fwd = beta(x, y)
    b_rev = beta(y, x)
    if src.coin(b_fwd, "route"):
        logs = _map_ordered(
            lambda i, s: pair.log_ratio(x, y, pair.sample_u_forward(x, y, s)),
            N,
            src,
            pool,
        )
        log_factor = (
            math.log1p(-b_rev) - math.log(b_fwd) if b_rev < 1.0 else -math.inf
        )
        log_r = log_mean_exp(logs) + log_factor
        branch = "Q1"
    else:
        k = src.choice([1.0 / N] * N, "slot")

        def one(i: int, s: RandomSource) -> float:
            if i == k:
                u = pair.sample_u_backward(x, y, s)
            else:
                u = pair.sample_u_forward(y, x, s)
            return pair.log_ratio(y, x, u)

        logs = _map_ordered(one, N, src, pool)
        log_factor = (
            math.log(b_rev) - math.log1p(-b_fwd) if b_rev > 0.0 else -math.inf
        )
        lme = log_mean_exp(logs)
        # A zero reversed-role mean can only arise when the backward draw
        # itself is off support, which signals a broken pair; reject rather
        # than accept with probability one.
        log_r = (-lme + log_factor) if lme > -math.inf else -math.inf
        branch = "Q2"
    return log_r, branch


def dependent_mhaar_step(
    x: State,
    target: TargetModel | None,
    pair: ProposalPair,
    inner: InnerKernel,
    N: int,
    src: RandomSource,
) -> tuple[State, KernelReport]:
    """Averaged step whose estimators come from an auxiliary Markov chain.

    Route Q1: one forward draw, then N-1 moves of the (x, y)-indexed
    inner kernel. Route Q2: a uniformly chosen slot k is drawn from the
    backward law, and the chain is extended from it backward to slot 1
    and forward to slot N under reversed roles. Sampling k here is part
    of the kernel (unlike route Q1, where no index exists).

    The inner chain is inherently sequential, so no pool is taken.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    y = pair.sample_q(x, src)
    logs = [0.0] * N
    if src.coin(0.5, "route"):
        u = pair.sample_u_forward(x, y, src.substream(0))
        logs[0] = pair.log_ratio(x, y, u)
        for i in range(1, N):
            u = inner.step(x, y, u, src.substream(i))
            logs[i] = pair.log_ratio(x, y, u)
        log_r = log_mean_exp(logs)
        branch = "Q1"
    else:
        k = src.choice([1.0 / N] * N, "slot")
        u_k = pair.sample_u_backward(x, y, src.substream(k))
        logs[k] = pair.log_ratio(y, x, u_k)
        u = u_k
        for i in range(k - 1, -1, -1):
            u = inner.step(y, x, u, src.substream(i))
            logs[i] = pair.log_ratio(y, x, u)
        u = u_k
        for i in range(k + 1, N):
            u = inner.step(y, x, u, src.substream(i))
            logs[i] = pair.log_ratio(y, x, u)
        lme = log_mean_exp(logs)
        log_r = -lme if lme > -math.inf else -math.inf
        branch = "Q2"
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, branch, log_r, N)
    return (y if accepted else x), report


def nonrev_mhaar_step(
    x: State,
    a: int,
    target: TargetModel | None,
    pair: ProposalPair,
    N: int,
    src: RandomSource,
    pool=None,
) -> tuple[tuple[State, int], KernelReport]:
    """Non-reversible variant on the extended space (state, direction).

    Direction 1 runs the forward-average route and keeps direction 1 on
    acceptance; direction 2 runs the reciprocal route. Rejection always
    flips the direction, acceptance never does. The skew pairing of the
    two routes makes the product of the target with uniform{1, 2}
    invariant.

    At N = 1 the two routes coincide in law (any valid pair satisfies
    ``log_ratio(y, x, involution(u)) == -log_ratio(x, y, u)`` pointwise)
    and the kernel degenerates to a reversible one; the direction only
    carries information for N >= 2.
    """
    if a not in (1, 2):
        raise ValueError("direction must be 1 or 2")
    if N < 1:
        raise ValueError("N must be >= 1")
    y = pair.sample_q(x, src)
    if a == 1:
        logs = _map_ordered(
            lambda i, s: pair.log_ratio(x, y, pair.sample_u_forward(x, y, s)),
            N,
            src,
            pool,
        )
        log_r = log_mean_exp(logs)
    else:
        k = src.choice([1.0 / N] * N, "slot")

        def one(i: int, s: RandomSource) -> float:
            if i == k:
                u = pair.sample_u_backward(x, y, s)
            else:
                u = pair.sample_u_forward(y, x, s)
            return pair.log_ratio(y, x, u)

        logs = _map_ordered(one, N, src, pool)
        lme = log_mean_exp(logs)
        # A zero reversed-role mean can only arise when the backward draw
        # itself is off support, which signals a broken pair; reject.
        log_r = -lme if lme > -math.inf else -math.inf
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "Q1" if a == 1 else "Q2", log_r, N)
    if accepted:
        return (y, a), report
    return (x, 3 - a), report
