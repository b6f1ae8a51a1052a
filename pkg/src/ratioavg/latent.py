"""Parameter moves driven by annealed latent paths instead of marginals.

For a joint target over (parameter, latent) whose parameter marginal
would require integrating out the latent coordinate, a parameter update
can ride on an auxiliary latent path annealed between the two
parameters' joint densities: the path's importance weight estimates the
marginal acceptance ratio without bias, and carrying the latent
coordinate in and out through the path endpoints makes the move jointly
reversible in (parameter, latent) space. The weight depends on the path
alone — never on the latent value the chain currently holds — which is
what lets several independent paths be averaged under the two-route
construction of :mod:`ratioavg.core`.

Stage densities run from the *current* parameter's joint at stage 0 to
the *proposed* one's at stage ``T + 1`` (the opposite endpoint
convention from :mod:`ratioavg.exchange`, where paths start at a
likelihood draw for the proposed parameter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

from .core import (
    AnnealingSchedule,
    KernelReport,
    OuterProposal,
    _accept,
    _half,
    _log_increment,
    _map_ordered,
    categorical_sample,
    log_mean_exp,
)
from .rng import RandomSource

__all__ = [
    "LatentModel",
    "LatentBridgeFamily",
    "BridgedLatentFamily",
    "as_bridged",
    "geometric_latent_bridges",
    "ais_latent_log_ratio",
    "ais_within_mh_step",
    "mhaar_latent_step",
    "mhaar_latent_step_bridged",
]

Theta = Any
Latent = Any
Bridge = Any


@dataclass(frozen=True)
class LatentModel:
    """Joint target over (parameter, latent) with an intractable marginal.

    ``log_joint(theta, z)`` is the log unnormalised joint density; its
    integral over ``z`` is exactly what the kernels in this module
    avoid computing. ``log_prior``, when given, must be ``-inf``
    wherever no latent value has positive joint density; the steps then
    reject such proposals before touching any bridge machinery (useful
    when movers are undefined outside the parameter support).
    ``latent_states`` optionally enumerates a finite latent space for
    exact verification.
    """

    log_joint: Callable[[Theta, Latent], float]
    log_prior: Callable[[Theta], float] | None = None
    latent_states: tuple | None = None


@dataclass(frozen=True)
class LatentBridgeFamily:
    """Stage densities, stage movers and a latent refresh on one space.

    ``log_f(t, a, b, v)`` is the stage-``t`` log density for the
    direction "current ``a``, proposed ``b``", with endpoint contract
    ``log_f(0, a, b, v) == log_joint(a, v)`` and
    ``log_f(T + 1, a, b, v) == log_joint(b, v)``.
    ``kernel(t, a, b, v, src)`` makes one move reversible with respect
    to stage ``t`` (``t`` in 1..T). ``refresh(theta, z, src)`` makes
    one move reversible with respect to the latent conditional at
    ``theta``; the identity map qualifies.

    Structural requirement used throughout:
    ``log_f(t, a, b, v) == log_f(T + 1 - t, b, a, v)`` and the same
    reflection for the movers — reversing a path then swaps the two
    directions exactly. The geometric construction below has this
    property.
    """

    schedule: AnnealingSchedule
    log_f: Callable[[int, Theta, Theta, Latent], float]
    kernel: Callable[[int, Theta, Theta, Latent, RandomSource], Latent]
    refresh: Callable[[Theta, Latent, RandomSource], Latent]


@dataclass(frozen=True)
class BridgedLatentFamily:
    """Stage machinery whose paths live in their own bridge space.

    Paths may take values in a space different from the latent one
    (dimension-jump moves need this); two endpoint kernels carry the
    chain in and out. Writing ``joint_a`` for the unnormalised joint
    density at parameter ``a`` and ``f_t`` for ``exp(log_f(t, a, b,
    .))``, the caller contract is:

    * entry coupling — some back kernel ``B`` satisfies
      ``joint_a(z) bridge_in(z, dv) = f_0(v) B(v, dz)``;
    * exit coupling — some back kernel ``B'`` satisfies
      ``f_{T+1}(v) bridge_out(v, dz) = joint_b(z) B'(z, dv)``;
    * direction symmetry — ``bridge_out`` of direction ``(a, b)`` is
      the entry back kernel of direction ``(b, a)``, and ``bridge_in``
      of ``(a, b)`` is the exit back kernel of ``(b, a)``;
    * reflection — ``log_f(t, a, b, v) == log_f(T + 1 - t, b, a, v)``,
      and the same for the stage movers.

    Under these, both routes of the bridged step target the same joint
    law while the acceptance ratio keeps its path-only form, so the
    back kernels never need to be sampled: the two forward arrows here
    are the only endpoint draws the algorithm makes.
    """

    schedule: AnnealingSchedule
    log_f: Callable[[int, Theta, Theta, Bridge], float]
    kernel: Callable[[int, Theta, Theta, Bridge, RandomSource], Bridge]
    bridge_in: Callable[[Latent, Theta, Theta, RandomSource], Bridge]
    bridge_out: Callable[[Bridge, Theta, Theta, RandomSource], Latent]


def as_bridged(family: LatentBridgeFamily) -> BridgedLatentFamily:
    """View a shared-space family as a bridged one.

    The latent refresh serves as both endpoint kernels: its
    reversibility is exactly the coupling contract, and the direction
    symmetry holds because the refresh depends on one parameter only.
    """

    def bridge_in(z: Latent, a: Theta, b: Theta, src: RandomSource) -> Bridge:
        return family.refresh(a, z, src)

    def bridge_out(v: Bridge, a: Theta, b: Theta, src: RandomSource) -> Latent:
        return family.refresh(b, v, src)

    return BridgedLatentFamily(
        family.schedule, family.log_f, family.kernel, bridge_in, bridge_out
    )


def geometric_latent_bridges(
    model: LatentModel,
    schedule: AnnealingSchedule,
    kernel_for_stage: Callable[
        [float, Theta, Theta, Callable[[Latent], float]],
        Callable[[Latent, RandomSource], Latent],
    ],
    refresh: Callable[[Theta, Latent, RandomSource], Latent],
) -> LatentBridgeFamily:
    """Geometric interpolation of the two joints, caller-supplied movers.

    Stage ``t`` weights the current parameter's log joint by
    ``1 - fraction(t)`` and the proposed one's by ``fraction(t)``,
    which meets both the endpoint and the reflection contracts.
    ``kernel_for_stage(fraction, a, b, log_density)`` must return a
    move ``(v, src) -> v'`` that is reversible for that stage density.
    """

    def log_f(t: int, a: Theta, b: Theta, v: Latent) -> float:
        fr = schedule.fraction(t)
        if fr == 0.0:
            return model.log_joint(a, v)
        if fr == 1.0:
            return model.log_joint(b, v)
        return (1.0 - fr) * model.log_joint(a, v) + fr * model.log_joint(b, v)

    def kernel(t: int, a: Theta, b: Theta, v: Latent, src: RandomSource) -> Latent:
        move = kernel_for_stage(schedule.fraction(t), a, b, lambda w: log_f(t, a, b, w))
        return move(v, src)

    return LatentBridgeFamily(schedule, log_f, kernel, refresh)


def ais_latent_log_ratio(
    theta: Theta,
    theta_p: Theta,
    path: tuple,
    bridges: LatentBridgeFamily | BridgedLatentFamily,
    q: OuterProposal | None = None,
) -> float:
    """Log acceptance-ratio estimate of one annealed latent path.

    ``path`` holds ``steps + 1`` bridge points: ``path[0]`` enters
    through the stage-0 endpoint kernel and the rest are successive
    stage moves. The value telescopes stage-density increments against
    the proposal ratio. The latent value the chain currently holds
    never enters — the estimate is a function of the path alone, which
    is what lets several paths be averaged. Any off-support term gives
    ``-inf`` (certain rejection); NaN raises.
    """
    T = bridges.schedule.steps
    if len(path) != T + 1:
        raise ValueError(f"path has {len(path)} points, schedule wants {T + 1}")
    total = 0.0 if q is None else q.log_ratio(theta, theta_p)
    for t, v in enumerate(path):
        total += _log_increment(
            bridges.log_f(t + 1, theta, theta_p, v),
            bridges.log_f(t, theta, theta_p, v),
        )
        if total == -math.inf:
            return -math.inf
    return total


def _forward_path(
    z: Latent,
    a: Theta,
    b: Theta,
    bridges: BridgedLatentFamily,
    src: RandomSource,
) -> tuple:
    """Enter at stage 0 from ``z`` and ascend all stage movers."""
    v = bridges.bridge_in(z, a, b, src)
    path = [v]
    for t in range(1, bridges.schedule.steps + 1):
        v = bridges.kernel(t, a, b, v, src)
        path.append(v)
    return tuple(path)


def ais_within_mh_step(
    x: tuple,
    model: LatentModel,
    bridges: LatentBridgeFamily,
    q: OuterProposal,
    src: RandomSource,
) -> tuple[tuple, KernelReport]:
    """Single-path parameter-and-latent move (the N = 1 kernel)."""
    return mhaar_latent_step(x, model, bridges, q, 1, src)


def mhaar_latent_step(
    x: tuple,
    model: LatentModel,
    bridges: LatentBridgeFamily,
    q: OuterProposal,
    N: int,
    src: RandomSource,
    pool=None,
) -> tuple[tuple, KernelReport]:
    """Two-route averaged step over N annealed latent paths.

    Route Q1: N paths ascend from the current latent value; acceptance
    averages their weights; on acceptance one path is selected with
    probability proportional to its weight and the new latent value
    exits through that path's far endpoint. Selection affects only the
    exiting value, never acceptance, so it is deferred until after the
    acceptance coin. Route Q2: one path descends the swapped direction
    from the current latent value, the new latent value exits through
    its near endpoint before acceptance is known, and the remaining
    N - 1 paths ascend the swapped direction anchored at that exit;
    acceptance uses the reciprocal of the swapped-direction average.
    Which slot holds the descending path is immaterial: the average is
    slot-symmetric and the exiting value is read off that path either
    way, so it sits in slot 0.
    """
    return mhaar_latent_step_bridged(
        x, model, as_bridged(bridges), q, N, _half, src, pool
    )


def mhaar_latent_step_bridged(
    x: tuple,
    model: LatentModel,
    bridges: BridgedLatentFamily,
    q: OuterProposal,
    N: int,
    beta: Callable[[Theta, Theta], float],
    src: RandomSource,
    pool=None,
) -> tuple[tuple, KernelReport]:
    """Averaged latent-path step with endpoint kernels and route weights.

    The bridged counterpart of :func:`mhaar_latent_step`: paths enter
    and exit through the family's endpoint kernels, and route Q1 is
    taken with probability ``beta(theta, theta_p)``, the acceptance
    ratios picking up the same route-weight factors as
    :func:`ratioavg.core.mhaar_step_beta`. ``beta`` must depend only on
    the two parameter values.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    theta, z = x
    theta_p = q.sample(theta, src)
    if model.log_prior is not None and model.log_prior(theta_p) == -math.inf:
        return x, KernelReport(False, "off-support", -math.inf, N)
    b_fwd = beta(theta, theta_p)
    b_rev = beta(theta_p, theta)
    if src.coin(b_fwd, "route"):
        paths = _map_ordered(
            lambda i, s: _forward_path(z, theta, theta_p, bridges, s),
            N,
            src,
            pool,
        )
        logs = [ais_latent_log_ratio(theta, theta_p, p, bridges, q) for p in paths]
        log_factor = (
            math.log1p(-b_rev) - math.log(b_fwd) if b_rev < 1.0 else -math.inf
        )
        log_r = log_mean_exp(logs) + log_factor
        accepted = _accept(log_r, src)
        if not accepted:
            return x, KernelReport(False, "Q1", log_r, N)
        k = categorical_sample(logs, src)
        z_p = bridges.bridge_out(paths[k][-1], theta, theta_p, src)
        return (theta_p, z_p), KernelReport(True, "Q1", log_r, N)
    # Mirrored route. Entering the swapped direction's far end from z is,
    # by the direction-symmetry contract, the same draw as entering at
    # stage 0 of the forward direction.
    s0 = src.substream(0)
    v = bridges.bridge_in(z, theta, theta_p, s0)
    down = [v]
    for t in range(bridges.schedule.steps, 0, -1):
        v = bridges.kernel(t, theta_p, theta, v, s0)
        down.append(v)
    special = tuple(reversed(down))
    z_p = bridges.bridge_out(special[0], theta, theta_p, src)
    logs = [ais_latent_log_ratio(theta_p, theta, special, bridges, q)]
    logs += _map_ordered(
        lambda i, s: ais_latent_log_ratio(
            theta_p, theta, _forward_path(z_p, theta_p, theta, bridges, s), bridges, q
        ),
        N - 1,
        src,
        pool,
        start=1,
    )
    log_factor = math.log(b_rev) - math.log1p(-b_fwd) if b_rev > 0.0 else -math.inf
    lme = log_mean_exp(logs)
    # A zero swapped-direction mean can only arise when the descending
    # draw itself is off support, which signals a broken family; reject
    # rather than accept with probability one.
    log_r = (-lme + log_factor) if lme > -math.inf else -math.inf
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "Q2", log_r, N)
    return ((theta_p, z_p) if accepted else x), report
