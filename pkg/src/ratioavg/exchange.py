"""Averaged-ratio MH for doubly intractable posteriors via annealed paths.

A doubly intractable posterior has an unnormalised likelihood whose
normalising constant depends on the parameter and can only be escaped
by *sampling* the likelihood, never evaluating its constant. The
acceptance-ratio estimators built here are importance weights of
annealed auxiliary paths started at an exact likelihood draw for the
proposed parameter: the unknown constants cancel telescopically
between the path weight and the pseudo-data terms, leaving an
estimator that is computable, unbiased for the intractable marginal
ratio, and pluggable into the two-route averaged kernels of
:mod:`ratioavg.core`.

Stage densities run from the *proposed* parameter's likelihood at
stage 0 to the *current* one's at stage ``T+1``; reversing a path and
swapping the parameter roles maps one direction onto the other, which
is exactly the involution the two-route construction needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

from .core import (
    AnnealingSchedule,
    KernelReport,
    OuterProposal,
    ProposalPair,
    _accept,
    _half,
    _log_increment,
    _map_ordered,
    log_mean_exp,
    two_route_log_ratio,
)
from .rng import RandomSource

__all__ = [
    "DoublyIntractableModel",
    "AnnealingSchedule",
    "BridgeFamily",
    "geometric_bridges",
    "ais_exchange_log_ratio",
    "exchange_pair",
    "exchange_mhaar_step",
    "exchange_mhaar_reduced_step",
    "PmtState",
    "pmt_init",
    "pmt_step",
]

Theta = Any
Pseudo = Any


@dataclass(frozen=True)
class DoublyIntractableModel:
    """Parametric unnormalised likelihood with a sampler but no constant.

    ``log_g(theta, z)`` is the log unnormalised likelihood of one
    observation ``z``; its normalising constant is never evaluated
    anywhere in this module. ``sample_likelihood(theta, src)`` must
    draw from the *normalised* law — exactly, or by a long auxiliary
    run accepted as exact for the study at hand.
    """

    log_g: Callable[[Theta, Pseudo], float]
    log_prior: Callable[[Theta], float]
    sample_likelihood: Callable[[Theta, RandomSource], Pseudo]
    data: Pseudo


@dataclass(frozen=True)
class BridgeFamily:
    """Stage densities and stage-reversible move kernels for one pair.

    ``log_f(t, a, b, u)`` evaluates the stage-``t`` density for the
    direction "current ``a``, proposed ``b``"; ``kernel(t, a, b, u,
    src)`` makes one move that leaves that stage density invariant and
    is reversible with respect to it (caller contract).

    Structural requirement used throughout:
    ``log_f(t, a, b, u) == log_f(steps + 1 - t, b, a, u)`` and the same
    reflection for the kernels — reversing a path then swaps the two
    directions exactly. The geometric construction has this property
    whenever the schedule is the linear one above.
    """

    schedule: AnnealingSchedule
    log_f: Callable[[int, Theta, Theta, Pseudo], float]
    kernel: Callable[[int, Theta, Theta, Pseudo, RandomSource], Pseudo]


def geometric_bridges(
    model: DoublyIntractableModel,
    schedule: AnnealingSchedule,
    kernel_for_stage: Callable[
        [float, Theta, Theta, Callable[[Pseudo], float]],
        Callable[[Pseudo, RandomSource], Pseudo],
    ],
) -> BridgeFamily:
    """Geometric-mixture stage densities with caller-supplied movers.

    Stage ``t`` mixes the two log likelihoods with weight
    ``1 - schedule.fraction(t)`` on the proposed parameter (one at
    stage 0, zero at the far end).
    ``kernel_for_stage(weight, a, b, log_density)`` must return a move
    ``(u, src) -> u'`` that is reversible for that stage density.
    """

    def log_f(t: int, a: Theta, b: Theta, u: Pseudo) -> float:
        w = 1.0 - schedule.fraction(t)
        if w == 0.0:
            return model.log_g(a, u)
        if w == 1.0:
            return model.log_g(b, u)
        return w * model.log_g(b, u) + (1.0 - w) * model.log_g(a, u)

    def kernel(t: int, a: Theta, b: Theta, u: Pseudo, src: RandomSource) -> Pseudo:
        w = 1.0 - schedule.fraction(t)
        move = kernel_for_stage(w, a, b, lambda v: log_f(t, a, b, v))
        return move(u, src)

    return BridgeFamily(schedule, log_f, kernel)


def ais_exchange_log_ratio(
    theta: Theta,
    theta_p: Theta,
    path: tuple,
    model: DoublyIntractableModel,
    bridges: BridgeFamily,
    q: OuterProposal | None = None,
) -> float:
    """Log acceptance-ratio estimate of one annealed path.

    ``path`` holds ``steps + 1`` auxiliary points; ``path[0]`` is the
    likelihood draw for ``theta_p`` and the rest are successive bridge
    moves. The value telescopes stage-density increments against the
    prior, proposal and pseudo-data terms, so normalising constants
    never appear. Any off-support term yields ``-inf`` (certain
    rejection); NaN raises.
    """
    T = bridges.schedule.steps
    if len(path) != T + 1:
        raise ValueError(f"path has {len(path)} points, schedule wants {T + 1}")
    total = 0.0 if q is None else q.log_ratio(theta, theta_p)
    total += _log_increment(model.log_prior(theta_p), model.log_prior(theta))
    total += _log_increment(
        model.log_g(theta_p, model.data), model.log_g(theta, model.data)
    )
    for t, u in enumerate(path):
        total += _log_increment(
            bridges.log_f(t + 1, theta, theta_p, u),
            bridges.log_f(t, theta, theta_p, u),
        )
        if total == -math.inf:
            return -math.inf
    return total


def exchange_pair(
    model: DoublyIntractableModel,
    bridges: BridgeFamily,
    q: OuterProposal,
) -> ProposalPair:
    """Proposal pair whose auxiliary variable is a whole annealed path.

    Forward draw for direction (a, b): start at a likelihood draw for
    ``b``, then one stage move per bridge. The involution is path
    reversal; by the schedule reflection it maps the forward law of one
    direction onto the backward law of the other.
    """
    T = bridges.schedule.steps

    def sample_path(a: Theta, b: Theta, src: RandomSource) -> tuple:
        u = model.sample_likelihood(b, src)
        path = [u]
        for t in range(1, T + 1):
            u = bridges.kernel(t, a, b, u, src)
            path.append(u)
        return tuple(path)

    def ratio(a: Theta, b: Theta, path: tuple) -> float:
        return ais_exchange_log_ratio(a, b, path, model, bridges, q)

    return ProposalPair(
        outer=q,
        sample_u_forward=sample_path,
        involution=lambda p: tuple(reversed(p)),
        log_ratio=ratio,
    )


def exchange_mhaar_step(
    theta: Theta,
    model: DoublyIntractableModel,
    bridges: BridgeFamily,
    q: OuterProposal,
    N: int,
    src: RandomSource,
    pool=None,
) -> tuple[Theta, KernelReport]:
    """Two-route step averaging N independent annealed-path estimators.

    Route Q1 runs N paths from fresh likelihood draws at the proposed
    parameter; route Q2 reverses one path and runs the other N-1 under
    swapped roles. Paths are independent, so a pool may evaluate them
    concurrently. (The redrawn slot is chosen uniformly; with
    exchangeable components this is the same kernel as fixing slot 1.)

    Proposals outside the prior support are rejected before any path
    is sampled: the likelihood sampler and the bridge kernels are only
    defined on the support, and the ratio would be zero regardless.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    pair = exchange_pair(model, bridges, q)
    theta_p = q.sample(theta, src)
    if model.log_prior(theta_p) == -math.inf:
        return theta, KernelReport(False, "off-support", -math.inf, N)
    log_r, branch = two_route_log_ratio(theta, theta_p, pair, N, _half, src, pool)
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, branch, log_r, N)
    return (theta_p if accepted else theta), report


def exchange_mhaar_reduced_step(
    theta: Theta,
    model: DoublyIntractableModel,
    bridges: BridgeFamily,
    q: OuterProposal,
    N: int,
    src: RandomSource,
) -> tuple[Theta, KernelReport]:
    """Variant needing a single likelihood draw per iteration.

    Route Q1 starts all N annealed paths from one shared likelihood
    draw at the proposed parameter. Route Q2 reverses one path drawn
    backward from that one draw, then anchors the other N-1 paths at
    its far endpoint. Components are exchangeable but dependent, which
    preserves reversibility while trading estimator quality for fewer
    expensive draws. The anchor draw is serial by nature, so no pool is
    taken.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    T = bridges.schedule.steps
    pair = exchange_pair(model, bridges, q)
    theta_p = q.sample(theta, src)
    if model.log_prior(theta_p) == -math.inf:
        return theta, KernelReport(False, "off-support", -math.inf, N)
    logs = [0.0] * N
    if src.coin(0.5, "route"):
        u0 = model.sample_likelihood(theta_p, src)
        for i in range(N):
            s = src.substream(i)
            u = u0
            path = [u]
            for t in range(1, T + 1):
                u = bridges.kernel(t, theta, theta_p, u, s)
                path.append(u)
            logs[i] = pair.log_ratio(theta, theta_p, tuple(path))
        log_r = log_mean_exp(logs)
        branch = "Q1"
    else:
        # One path drawn backward: the far end is the likelihood draw for
        # the proposed parameter, stage moves descend under swapped roles.
        s = src.substream(0)
        u = model.sample_likelihood(theta_p, s)
        rev = [u]
        for t in range(T, 0, -1):
            u = bridges.kernel(t, theta_p, theta, u, s)
            rev.append(u)
        special = tuple(reversed(rev))
        logs[0] = pair.log_ratio(theta_p, theta, special)
        anchor = special[0]
        for i in range(1, N):
            s = src.substream(i)
            u = anchor
            path = [u]
            for t in range(1, T + 1):
                u = bridges.kernel(t, theta_p, theta, u, s)
                path.append(u)
            logs[i] = pair.log_ratio(theta_p, theta, tuple(path))
        lme = log_mean_exp(logs)
        # A zero reversed-role mean signals a support breach; reject.
        log_r = -lme if lme > -math.inf else -math.inf
        branch = "Q2"
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, branch, log_r, N)
    return (theta_p if accepted else theta), report


# ---------------------------------------------------------------------------
# estimated-target baseline (the chain carries its own estimate)


@dataclass(frozen=True)
class PmtState:
    """Parameter plus the log importance-average the chain carries.

    ``log_estimate`` is the stochastic part only: the log of the
    averaged importance weights h(z)/g(theta, z) over pseudo-data drawn
    at ``theta``. Deterministic terms (prior, data) are recomputed from
    theta at each step.
    """

    theta: Theta
    log_estimate: float


def _pmt_estimate(
    theta: Theta,
    model: DoublyIntractableModel,
    log_h: Callable[[Pseudo], float],
    N: int,
    src: RandomSource,
    pool=None,
) -> float:
    def one(i: int, s: RandomSource) -> float:
        z = model.sample_likelihood(theta, s)
        return _log_increment(log_h(z), model.log_g(theta, z))

    return log_mean_exp(_map_ordered(one, N, src, pool))


def pmt_init(
    theta: Theta,
    model: DoublyIntractableModel,
    log_h: Callable[[Pseudo], float],
    N: int,
    src: RandomSource,
    pool=None,
) -> PmtState:
    """Initial state for the estimated-target chain.

    Raises if the very first estimate is zero — the chain would be
    stuck rejecting forever from a state of estimated mass zero.
    """
    est = _pmt_estimate(theta, model, log_h, N, src, pool)
    if est == -math.inf:
        raise ValueError("zero importance estimate at the initial state")
    return PmtState(theta, est)


def pmt_step(
    state: PmtState,
    model: DoublyIntractableModel,
    log_h: Callable[[Pseudo], float],
    q: OuterProposal,
    N: int,
    src: RandomSource,
    pool=None,
) -> tuple[PmtState, KernelReport]:
    """One step of the estimated-target baseline.

    The target density is replaced by an unbiased positive estimate,
    re-drawn only at proposals; the current state's estimate rides
    along unchanged until a move is accepted. Exact for the parameter
    marginal, but high-variance estimates make the chain sticky — this
    is the behaviour the averaged-ratio kernels are built to avoid.
    """
    theta = state.theta
    theta_p = q.sample(theta, src)
    if model.log_prior(theta_p) == -math.inf:
        return state, KernelReport(False, "off-support", -math.inf, N)
    est_p = _pmt_estimate(theta_p, model, log_h, N, src, pool)
    log_r = (
        q.log_ratio(theta, theta_p)
        + _log_increment(model.log_prior(theta_p), model.log_prior(theta))
        + _log_increment(
            model.log_g(theta_p, model.data), model.log_g(theta, model.data)
        )
        + est_p
        - state.log_estimate
    )
    if est_p == -math.inf:
        log_r = -math.inf
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "plain", log_r, N)
    next_state = PmtState(theta_p, est_p) if accepted else state
    return next_state, report
