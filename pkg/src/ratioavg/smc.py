"""Particle machinery for state-space targets and interacting-path steps.

A state-space model couples a latent Markov path to one observation per
time step. The conditional sweep (:func:`csmc`) rebuilds a particle
system around a retained path and backward-samples a replacement path;
it is the path-refresh engine for every parameter move in this module.
Parameter moves come in four strengths:

* :func:`mwpg_step` — refresh the path, then a marginal-style
  accept/reject on the parameter (not reversible; invariant only);
* :func:`mhaar_csmc_rb_step` — two-route reversible move whose
  acceptance averages the single-path ratio over *every* backward path
  of one sweep at an intermediate parameter, collapsed to O(M²T) by a
  sum-product pass (:func:`rb_ratio_log`);
* :func:`mhaar_csmc_sub_step` — same construction with the exhaustive
  average replaced by N sampled backward paths, O(NMT);
* :func:`mhaar_smc_latent_step` — the annealed-path move of
  :mod:`ratioavg.latent` with the N independent paths replaced by one
  interacting particle system (resampling between stages).

Sweeps are sequential in time and vectorised across particles, which is
the deterministic realisation of the per-stage parallel-map contract;
the N backward paths of the subsampled step go through substreams like
every other estimator family. Latent values are scalar per time step
and systems are dense float arrays. All weight arithmetic is in the log
domain; a stage whose weights all vanish raises (particle degeneracy —
the model and data disagree) rather than limping on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from scipy.special import logsumexp

from .core import (
    AnnealingSchedule,
    KernelReport,
    OuterProposal,
    _accept,
    _log_increment,
    _map_ordered,
    categorical_sample,
    log_mean_exp,
)
from .latent import LatentBridgeFamily, LatentModel
from .rng import RandomSource

__all__ = [
    "StateSpaceModel",
    "ParticleSystem",
    "PathTables",
    "log_path_density",
    "particle_filter",
    "csmc",
    "backward_sample",
    "mwpg_step",
    "pathwise_ratio_log",
    "path_tables",
    "rb_ratio_log",
    "ffbs_sample_tilted",
    "midpoint_rule",
    "mhaar_csmc_rb_step",
    "mhaar_csmc_sub_step",
    "mhaar_smc_latent_step",
    "ssm_latent_model",
    "ssm_latent_bridges",
    "nonlinear_ssm_model",
    "nonlinear_ssm_simulate",
]

Theta = Any


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class StateSpaceModel:
    """Latent Markov path with one observation per time step.

    Density evaluators must broadcast over numpy arrays and return
    ``-inf`` exactly off support, never NaN:

    * ``log_mu(theta, z1)`` — initial latent density;
    * ``log_f(theta, t, z_prev, z_t)`` — transition density *into*
      1-based time ``t`` (``t`` in 2..T, and it broadcasts too, so a
      time-inhomogeneous drift costs nothing extra);
    * ``log_g(theta, z, y)`` — observation density, elementwise in both
      arguments.

    Samplers draw batches: ``sample_mu(theta, n, src)`` returns ``n``
    initial values, ``sample_f(theta, t, z_prev, src)`` one transition
    per entry of ``z_prev``. Enumerable fixtures draw each entry through
    ``src.choice``; production models batch through ``src.generator``.

    ``log_h``/``sample_h`` and ``log_H``/``sample_H`` optionally replace
    the initial and transition samplers as proposal kernels (each pair
    all-or-none); leaving them unset is the bootstrap choice, for which
    the incremental weight is the observation density alone.
    """

    log_mu: Callable[[Theta, np.ndarray], np.ndarray]
    log_f: Callable[[Theta, Any, np.ndarray, np.ndarray], np.ndarray]
    log_g: Callable[[Theta, np.ndarray, Any], np.ndarray]
    sample_mu: Callable[[Theta, int, RandomSource], np.ndarray]
    sample_f: Callable[[Theta, int, np.ndarray, RandomSource], np.ndarray]
    data: tuple
    log_h: Callable[[Theta, np.ndarray], np.ndarray] | None = None
    sample_h: Callable[[Theta, int, RandomSource], np.ndarray] | None = None
    log_H: Callable[[Theta, Any, np.ndarray, np.ndarray], np.ndarray] | None = None
    sample_H: Callable[[Theta, int, np.ndarray, RandomSource], np.ndarray] | None = None

    def __post_init__(self):
        if len(self.data) < 1:
            raise ValueError("need at least one observation")
        if (self.log_h is None) != (self.sample_h is None):
            raise ValueError("log_h and sample_h must be given together")
        if (self.log_H is None) != (self.sample_H is None):
            raise ValueError("log_H and sample_H must be given together")


@dataclass(frozen=True)
class ParticleSystem:
    """Weighted genealogy of one particle sweep.

    ``values[t, i]`` and ``log_weights[t, i]`` are particle ``i`` at time
    index ``t`` (0-based) and its incremental log weight; ``ancestors[t-1, i]``
    is the index its time-``t`` value moved from. A conditional sweep pins the
    retained path in slot 0 at every time (``retained_slot = 0``, its ancestor
    always 0); an unconditional filter has ``retained_slot = None``.
    """

    values: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray
    retained_slot: int | None = None

    def log_likelihood_estimate(self) -> float:
        """Sum over times of the log mean weight.

        For an unconditional filter, exp of this is unbiased for the
        marginal likelihood of the data at the sweep parameter.
        """
        return float(sum(log_mean_exp(row) for row in self.log_weights))

    def to_debug_dict(self) -> dict:
        """JSON-ready dump of the full system (debug flag in the CLI)."""
        return {
            "values": self.values.tolist(),
            "log_weights": self.log_weights.tolist(),
            "ancestors": self.ancestors.tolist(),
            "retained_slot": self.retained_slot,
        }


# ---------------------------------------------------------------------------
# sweeps


def _stage_check(log_w: np.ndarray, time: int) -> None:
    if np.isnan(log_w).any():
        raise ValueError(f"NaN particle weight at time {time}")
    if (log_w == -math.inf).all():
        raise ValueError(
            f"particle degeneracy: all weights zero at time {time}"
        )


def _resampling_probs(log_w: np.ndarray) -> np.ndarray:
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def _sweep(
    M: int,
    theta: Theta,
    model: StateSpaceModel,
    src: RandomSource,
    retained: np.ndarray | None,
) -> ParticleSystem:
    T = len(model.data)
    pinned = retained is not None
    lo = 1 if pinned else 0
    nfree = M - lo
    values = np.empty((T, M))
    log_w = np.empty((T, M))
    ancestors = np.empty((T - 1, M), dtype=np.intp)
    if pinned:
        values[0, 0] = retained[0]
    init = model.sample_h if model.sample_h is not None else model.sample_mu
    values[0, lo:] = np.asarray(init(theta, nfree, src), dtype=float)
    y0 = model.data[0]
    if model.log_h is None:
        log_w[0] = model.log_g(theta, values[0], y0)
    else:
        log_w[0] = (
            model.log_mu(theta, values[0])
            + model.log_g(theta, values[0], y0)
            - model.log_h(theta, values[0])
        )
    _stage_check(log_w[0], 1)
    for s in range(1, T):
        probs = _resampling_probs(log_w[s - 1])
        picks = src.choices(probs, nfree, "ancestor")
        row = ancestors[s - 1]
        if pinned:
            row[0] = 0
            row[1:] = picks
            values[s, 0] = retained[s]
        else:
            row[:] = picks
        prev = values[s - 1][row]
        t = s + 1  # 1-based destination time
        move = model.sample_H if model.sample_H is not None else model.sample_f
        values[s, lo:] = np.asarray(move(theta, t, prev[lo:], src), dtype=float)
        ys = model.data[s]
        if model.log_H is None:
            log_w[s] = model.log_g(theta, values[s], ys)
        else:
            log_w[s] = (
                model.log_f(theta, t, prev, values[s])
                + model.log_g(theta, values[s], ys)
                - model.log_H(theta, t, prev, values[s])
            )
        _stage_check(log_w[s], t)
    return ParticleSystem(values, log_w, ancestors, 0 if pinned else None)


def particle_filter(
    M: int, theta: Theta, model: StateSpaceModel, src: RandomSource
) -> ParticleSystem:
    """Unconditional sweep with multinomial resampling at every step."""
    if M < 1:
        raise ValueError("M must be >= 1")
    return _sweep(M, theta, model, src, None)


def _conditional_sweep(
    M: int, theta: Theta, z, model: StateSpaceModel, src: RandomSource
) -> ParticleSystem:
    if M < 2:
        raise ValueError("a conditional sweep needs M >= 2")
    retained = np.asarray(z, dtype=float)
    if retained.shape != (len(model.data),):
        raise ValueError(
            f"retained path has shape {retained.shape}, "
            f"data length is {len(model.data)}"
        )
    return _sweep(M, theta, model, src, retained)


def csmc(
    M: int, theta: Theta, z, model: StateSpaceModel, src: RandomSource
) -> tuple[ParticleSystem, np.ndarray]:
    """Conditional sweep pinned on ``z``, then one backward-sampled path.

    The returned path is a draw from the backward law of the system; fed
    a path distributed like the latent conditional, it returns one with
    the same law (the refresh used by every parameter move below).
    """
    system = _conditional_sweep(M, theta, z, model, src)
    return system, backward_sample(system, theta, model, src)


def backward_sample(
    system: ParticleSystem,
    theta: Theta,
    model: StateSpaceModel,
    src: RandomSource,
) -> np.ndarray:
    """Draw one particle path index-by-index from the back of the sweep.

    The terminal index follows the terminal weights; each earlier index
    reweights its stage by the transition density into the value already
    chosen. ``theta`` must be the parameter the sweep was run at.
    """
    T = system.values.shape[0]
    idx = np.empty(T, dtype=np.intp)
    idx[T - 1] = src.choice_log(system.log_weights[T - 1], "path end")
    for s in range(T - 2, -1, -1):
        nxt = system.values[s + 1, idx[s + 1]]
        back = system.log_weights[s] + model.log_f(
            theta, s + 2, system.values[s], nxt
        )
        idx[s] = src.choice_log(back, "path step")
    return system.values[np.arange(T), idx]


# ---------------------------------------------------------------------------
# path densities and single-path ratios


def log_path_density(theta: Theta, path, model: StateSpaceModel) -> float:
    """Log unnormalised joint density of a full latent path with the data."""
    z = np.asarray(path, dtype=float)
    y = np.asarray(model.data)
    total = float(model.log_mu(theta, z[0])) + float(
        np.sum(model.log_g(theta, z, y))
    )
    if z.size > 1:
        times = np.arange(2, z.size + 1)
        total += float(np.sum(model.log_f(theta, times, z[:-1], z[1:])))
    if math.isnan(total):
        raise ValueError("NaN path density")
    return total


def pathwise_ratio_log(
    z,
    z_alt,
    theta: Theta,
    theta_p: Theta,
    theta_tilde: Theta,
    model: StateSpaceModel,
    q: OuterProposal,
    log_prior: Callable[[Theta], float] | None = None,
) -> float:
    """Single-path log acceptance-ratio estimate for a parameter move.

    ``z`` is the path carried by the current state, ``z_alt`` the
    candidate replacement drawn through a sweep at the intermediate
    parameter ``theta_tilde``. The value combines the proposal and prior
    ratios with the two density tilts — the candidate's between the
    proposed and intermediate parameters, the current path's between the
    intermediate and current ones. Swapping both path and parameter
    roles negates it exactly.
    """
    total = q.log_ratio(theta, theta_p)
    if log_prior is not None:
        total += _log_increment(log_prior(theta_p), log_prior(theta))
        if total == -math.inf:
            return -math.inf
    total += _log_increment(
        log_path_density(theta_p, z_alt, model),
        log_path_density(theta_tilde, z_alt, model),
    )
    if total == -math.inf:
        return -math.inf
    total += _log_increment(
        log_path_density(theta_tilde, z, model),
        log_path_density(theta, z, model),
    )
    return total


# ---------------------------------------------------------------------------
# all-paths averaged ratio: stage tables, sum-product, tilted sampling


@dataclass(frozen=True)
class PathTables:
    """Per-stage message tables for the all-paths averaged ratio.

    Log-domain chain factorisation of the backward-path mixture: each
    stage's potential combines the backward-sampling weight with the
    density tilt between the sweep parameter and the tilt parameter.
    Forward messages are max-normalised per stage with the running
    normaliser folded into ``log_total``; one build serves both the
    summed ratio and index sampling from the tilted law.
    """

    log_messages: tuple
    log_edges: tuple
    log_final: np.ndarray
    log_total: float


def _scrubbed(raw: np.ndarray, *zero_masks) -> np.ndarray:
    """Resolve 0/0 in favour of zero mass; reject genuine divergence."""
    for mask in zero_masks:
        if mask is not None:
            raw[mask] = -math.inf
    if np.isposinf(raw).any():
        raise ValueError(
            "diverging density ratio in averaged-acceptance tables"
        )
    if np.isnan(raw).any():
        raise ValueError("NaN in averaged-acceptance tables")
    return raw


def path_tables(
    system: ParticleSystem,
    theta_new: Theta,
    theta_sweep: Theta,
    model: StateSpaceModel,
) -> PathTables:
    """Build the stage tables tilting a sweep toward another parameter.

    ``theta_sweep`` is the parameter the system was generated at;
    ``theta_new`` the one whose path density the backward mixture is
    being averaged against. Cost O(M²T).
    """
    vals = system.values
    lw = system.log_weights
    T, M = vals.shape
    y = model.data
    with np.errstate(invalid="ignore"):
        s_num = model.log_mu(theta_new, vals[0]) + model.log_g(
            theta_new, vals[0], y[0]
        )
        s_den = model.log_mu(theta_sweep, vals[0]) + model.log_g(
            theta_sweep, vals[0], y[0]
        )
        start = _scrubbed(np.asarray(s_num - s_den, dtype=float), s_num == -math.inf)
    edges = []
    for s in range(T - 1):
        a = vals[s][:, None]
        b = vals[s + 1][None, :]
        t = s + 2
        with np.errstate(invalid="ignore"):
            f_sweep = model.log_f(theta_sweep, t, a, b)
            base = lw[s][:, None] + f_sweep
            log_c = logsumexp(base, axis=0)
            d_num = model.log_f(theta_new, t, a, b) + model.log_g(
                theta_new, vals[s + 1], y[s + 1]
            )[None, :]
            d_den = f_sweep + model.log_g(theta_sweep, vals[s + 1], y[s + 1])[None, :]
            raw = base + (d_num - d_den) - log_c[None, :]
        dead_cols = np.broadcast_to(log_c[None, :] == -math.inf, raw.shape)
        edges.append(
            _scrubbed(raw, base == -math.inf, d_num == -math.inf, dead_cols)
        )
    final = lw[T - 1] - logsumexp(lw[T - 1])
    messages = []
    acc = 0.0
    m = start.copy()
    c = m.max()
    if c > -math.inf:
        m -= c
        acc += c
    messages.append(m)
    for edge in edges:
        m = logsumexp(m[:, None] + edge, axis=0)
        c = m.max()
        if c > -math.inf:
            m -= c
            acc += c
        messages.append(m)
    tail = logsumexp(messages[-1] + final)
    total = acc + float(tail) if tail > -math.inf else -math.inf
    return PathTables(tuple(messages), tuple(edges), final, total)


def rb_ratio_log(
    z,
    system: ParticleSystem,
    theta: Theta,
    theta_p: Theta,
    theta_tilde: Theta,
    model: StateSpaceModel,
    q: OuterProposal,
    log_prior: Callable[[Theta], float] | None = None,
    tables: PathTables | None = None,
) -> float:
    """Log of the single-sweep ratio averaged over every backward path.

    Equals the backward-path mixture of :func:`pathwise_ratio_log` over
    all M^T index combinations, collapsed by the chain factorisation in
    :func:`path_tables`. ``z`` is the path the sweep was conditioned on.
    A stage with no admissible continuation gives ``-inf``.
    """
    if tables is None:
        tables = path_tables(system, theta_p, theta_tilde, model)
    total = q.log_ratio(theta, theta_p)
    if log_prior is not None:
        total += _log_increment(log_prior(theta_p), log_prior(theta))
        if total == -math.inf:
            return -math.inf
    total += _log_increment(
        log_path_density(theta_tilde, z, model),
        log_path_density(theta, z, model),
    )
    if total == -math.inf:
        return -math.inf
    return total + tables.log_total


def ffbs_sample_tilted(
    system: ParticleSystem,
    theta_new: Theta,
    theta_sweep: Theta,
    model: StateSpaceModel,
    src: RandomSource,
    tables: PathTables | None = None,
) -> np.ndarray:
    """Draw a particle path from the tilted backward law.

    Index weights are proportional to the backward-sampling law times
    the path's density tilt toward ``theta_new`` — the per-path terms of
    :func:`rb_ratio_log`, so passing the tables built there reuses all
    of its work. With ``theta_new == theta_sweep`` the tilt is one and
    this is ordinary backward sampling. Degenerate tables (no path with
    positive mass) raise.
    """
    if tables is None:
        tables = path_tables(system, theta_new, theta_sweep, model)
    T = system.values.shape[0]
    idx = np.empty(T, dtype=np.intp)
    idx[T - 1] = src.choice_log(
        tables.log_messages[-1] + tables.log_final, "tilted path end"
    )
    for s in range(T - 2, -1, -1):
        lw = tables.log_messages[s] + tables.log_edges[s][:, idx[s + 1]]
        idx[s] = src.choice_log(lw, "tilted path step")
    return system.values[np.arange(T), idx]


# ---------------------------------------------------------------------------
# parameter moves


def _interp_theta(a: Theta, b: Theta, fr: float) -> Theta:
    if fr == 0.0:
        return a
    if fr == 1.0:
        return b
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    out = (1.0 - fr) * va + fr * vb
    if va.ndim == 0:
        return float(out)
    if isinstance(a, tuple):
        return tuple(float(v) for v in out)
    return out


def midpoint_rule(a: Theta, b: Theta) -> Theta:
    """Componentwise midpoint: the default intermediate-parameter rule.

    Symmetric in its arguments, so both branches of the two-branch steps
    sweep at the same parameter.
    """
    return _interp_theta(a, b, 0.5)


def mwpg_step(
    x: tuple,
    model: StateSpaceModel,
    q: OuterProposal,
    M: int,
    src: RandomSource,
    log_prior: Callable[[Theta], float] | None = None,
) -> tuple[tuple, KernelReport]:
    """Path refresh by conditional sweep, then a parameter accept/reject.

    The acceptance ratio evaluates both parameters' path densities at
    the *refreshed* path, and the refresh stands whether or not the
    parameter move is accepted — so rejection still changes the state.
    The step leaves the joint target invariant but is not reversible;
    test it with the stationarity oracle, not detailed balance.
    """
    theta, z = x
    system, z_p = csmc(M, theta, z, model, src)
    theta_p = q.sample(theta, src)
    log_r = q.log_ratio(theta, theta_p)
    if log_prior is not None:
        log_r += _log_increment(log_prior(theta_p), log_prior(theta))
    if log_r > -math.inf:
        log_r += _log_increment(
            log_path_density(theta_p, z_p, model),
            log_path_density(theta, z_p, model),
        )
    accepted = _accept(log_r, src)
    state = (theta_p, z_p) if accepted else (theta, z_p)
    return state, KernelReport(accepted, "plain", log_r, 1)


def mhaar_csmc_rb_step(
    x: tuple,
    model: StateSpaceModel,
    q: OuterProposal,
    M: int,
    src: RandomSource,
    tilt_rule: Callable[[Theta, Theta], Theta] = midpoint_rule,
    log_prior: Callable[[Theta], float] | None = None,
) -> tuple[tuple, KernelReport]:
    """Two-route parameter-and-path move, acceptance averaged over all paths.

    Route Q1: one conditional sweep at ``tilt_rule(theta, theta_p)``
    anchored on the current path; accept on the all-paths averaged
    ratio; on acceptance the new path is drawn from the tilted backward
    law. Selection does not influence acceptance, so it is deferred
    until after the coin. Route Q2: sweep at ``tilt_rule(theta_p,
    theta)`` anchored on the current path, new path by plain backward
    sampling before the coin, acceptance on the reciprocal of the
    swapped-role averaged ratio evaluated at that path.

    Reversibility needs route Q1's sweep parameter for (a, b) to equal
    route Q2's for (b, a); that holds for any ``tilt_rule`` here because
    Q2 applies the rule with swapped arguments.
    """
    theta, z = x
    theta_p = q.sample(theta, src)
    if log_prior is not None and log_prior(theta_p) == -math.inf:
        return x, KernelReport(False, "off-support", -math.inf, M)
    if src.coin(0.5, "route"):
        tilde = tilt_rule(theta, theta_p)
        system = _conditional_sweep(M, tilde, z, model, src)
        tables = path_tables(system, theta_p, tilde, model)
        log_r = rb_ratio_log(
            z, system, theta, theta_p, tilde, model, q, log_prior, tables
        )
        accepted = _accept(log_r, src)
        if not accepted:
            return x, KernelReport(False, "Q1", log_r, M)
        z_p = ffbs_sample_tilted(system, theta_p, tilde, model, src, tables)
        return (theta_p, z_p), KernelReport(True, "Q1", log_r, M)
    tilde = tilt_rule(theta_p, theta)
    system = _conditional_sweep(M, tilde, z, model, src)
    z_p = backward_sample(system, tilde, model, src)
    swapped = rb_ratio_log(
        z_p, system, theta_p, theta, tilde, model, q, log_prior
    )
    # A vanishing swapped-role average can only mean the anchor draw
    # itself has no mass under the sweep; reject, never auto-accept.
    log_r = -swapped if swapped > -math.inf else -math.inf
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "Q2", log_r, M)
    return ((theta_p, z_p) if accepted else x), report


def mhaar_csmc_sub_step(
    x: tuple,
    model: StateSpaceModel,
    q: OuterProposal,
    M: int,
    N: int,
    src: RandomSource,
    tilt_rule: Callable[[Theta, Theta], Theta] = midpoint_rule,
    log_prior: Callable[[Theta], float] | None = None,
    pool=None,
) -> tuple[tuple, KernelReport]:
    """Subsampled variant: N backward paths stand in for the full average.

    Route Q1: one sweep at ``tilt_rule(theta, theta_p)`` anchored on the
    current path, N backward paths through per-path substreams
    (parallel-map contract), acceptance on the mean of their single-path
    ratios; on acceptance one path exits, picked proportionally to its
    ratio (deferred past the coin). Route Q2: sweep at
    ``tilt_rule(theta_p, theta)`` anchored on the current path; the
    proposal path is one extra backward draw made before the coin, the
    current path fills one averaging slot and N - 1 fresh backward draws
    fill the rest; acceptance is the reciprocal of the swapped-role
    mean. Which slot holds the current path is immaterial — the mean is
    slot-symmetric and the exiting path is the separate draw — so it
    sits in slot 0. Cost O(NMT) per step against the full average's
    O(M²T).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    theta, z = x
    theta_p = q.sample(theta, src)
    if log_prior is not None and log_prior(theta_p) == -math.inf:
        return x, KernelReport(False, "off-support", -math.inf, N)
    if src.coin(0.5, "route"):
        tilde = tilt_rule(theta, theta_p)
        system = _conditional_sweep(M, tilde, z, model, src)
        paths = _map_ordered(
            lambda i, s: backward_sample(system, tilde, model, s),
            N,
            src,
            pool,
        )
        logs = [
            pathwise_ratio_log(z, u, theta, theta_p, tilde, model, q, log_prior)
            for u in paths
        ]
        log_r = log_mean_exp(logs)
        accepted = _accept(log_r, src)
        if not accepted:
            return x, KernelReport(False, "Q1", log_r, N)
        k = categorical_sample(logs, src)
        return (theta_p, paths[k]), KernelReport(True, "Q1", log_r, N)
    tilde = tilt_rule(theta_p, theta)
    system = _conditional_sweep(M, tilde, z, model, src)
    z_p = backward_sample(system, tilde, model, src)
    slots = [np.asarray(z, dtype=float)]
    slots += _map_ordered(
        lambda i, s: backward_sample(system, tilde, model, s),
        N - 1,
        src,
        pool,
        start=1,
    )
    logs = [
        pathwise_ratio_log(z_p, u, theta_p, theta, tilde, model, q, log_prior)
        for u in slots
    ]
    lme = log_mean_exp(logs)
    # The current path occupies a slot, so a vanishing mean means it has
    # no mass under the sweep parameter; reject, never auto-accept.
    log_r = -lme if lme > -math.inf else -math.inf
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "Q2", log_r, N)
    return ((theta_p, z_p) if accepted else x), report


# ---------------------------------------------------------------------------
# interacting annealed paths


def _probs_from_logs(logs: list) -> np.ndarray:
    lw = np.asarray(logs, dtype=float)
    w = np.exp(lw - lw.max())
    return w / w.sum()


def mhaar_smc_latent_step(
    x: tuple,
    model: LatentModel,
    bridges: LatentBridgeFamily,
    q: OuterProposal,
    N: int,
    src: RandomSource,
    pool=None,
) -> tuple[tuple, KernelReport]:
    """Annealed-path move with the N paths coupled by resampling.

    Same stage machinery as :func:`ratioavg.latent.mhaar_latent_step`,
    but the paths evolve as one particle system: after each stage the
    population is multinomially reweighted by the stage-density
    increments, and the acceptance ratio is the proposal ratio plus the
    sum over stages of the increment log-means. With ``steps == 0``
    there is no resampling and the step has exactly the independent-path
    law.

    Route Q1 runs the system up from the current latent value; the exit
    slot follows the terminal weights and, with the exit draw, is
    deferred past the coin (neither influences acceptance). Route Q2
    runs one path down from the current latent value, exits the new
    latent value through that path's far end before the coin, then grows
    the remaining N - 1 slots back up anchored on the descending path;
    acceptance is the reciprocal of the swapped-direction ratio. A stage
    whose increments all vanish poisons every later stage, so it raises
    (particle degeneracy) rather than silently rejecting.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    theta, z = x
    theta_p = q.sample(theta, src)
    if model.log_prior is not None and model.log_prior(theta_p) == -math.inf:
        return x, KernelReport(False, "off-support", -math.inf, N)
    T = bridges.schedule.steps

    def increments(a: Theta, b: Theta, t: int, points: list) -> list:
        out = [
            _log_increment(bridges.log_f(t + 1, a, b, v), bridges.log_f(t, a, b, v))
            for v in points
        ]
        if all(w == -math.inf for w in out):
            raise ValueError(
                f"particle degeneracy: all stage-{t} increments zero"
            )
        return out

    if src.coin(0.5, "route"):
        u = _map_ordered(
            lambda i, s: bridges.refresh(theta, z, s), N, src, pool
        )
        log_w = increments(theta, theta_p, 0, u)
        log_c = log_mean_exp(log_w)
        for t in range(1, T + 1):
            anc = src.choices(_probs_from_logs(log_w), N, "resample")
            prev = u
            u = _map_ordered(
                lambda i, s: bridges.kernel(t, theta, theta_p, prev[anc[i]], s),
                N,
                src,
                pool,
                start=t * N,
            )
            log_w = increments(theta, theta_p, t, u)
            log_c += log_mean_exp(log_w)
        log_r = q.log_ratio(theta, theta_p) + log_c
        accepted = _accept(log_r, src)
        if not accepted:
            return x, KernelReport(False, "Q1", log_r, N)
        k = categorical_sample(log_w, src)
        z_p = bridges.refresh(theta_p, u[k], src)
        return (theta_p, z_p), KernelReport(True, "Q1", log_r, N)
    # Mirrored route: descend the swapped direction from z, then anchor a
    # swapped-direction system on the descending path.
    s0 = src.substream(0)
    v = bridges.refresh(theta, z, s0)
    down = [v]
    for t in range(T, 0, -1):
        v = bridges.kernel(t, theta_p, theta, v, s0)
        down.append(v)
    special = list(reversed(down))
    z_p = bridges.refresh(theta_p, special[0], src)
    u = [special[0]]
    u += _map_ordered(
        lambda i, s: bridges.refresh(theta_p, z_p, s), N - 1, src, pool, start=1
    )
    log_w = increments(theta_p, theta, 0, u)
    log_c = log_mean_exp(log_w)
    for t in range(1, T + 1):
        anc = src.choices(_probs_from_logs(log_w), N - 1, "resample")
        prev = u
        moved = _map_ordered(
            lambda i, s: bridges.kernel(t, theta_p, theta, prev[anc[i]], s),
            N - 1,
            src,
            pool,
            start=t * N + 1,
        )
        u = [special[t]] + moved
        log_w = increments(theta_p, theta, t, u)
        log_c += log_mean_exp(log_w)
    swapped = q.log_ratio(theta_p, theta) + log_c
    log_r = -swapped if swapped > -math.inf else -math.inf
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "Q2", log_r, N)
    return ((theta_p, z_p) if accepted else x), report


# ---------------------------------------------------------------------------
# gluing a state-space model into the annealed-path machinery


def ssm_latent_model(
    model: StateSpaceModel,
    log_prior: Callable[[Theta], float] | None = None,
) -> LatentModel:
    """Joint (parameter, path) target for a state-space model."""

    if log_prior is None:
        joint = lambda th, zp: log_path_density(th, zp, model)  # noqa: E731
        return LatentModel(log_joint=joint)

    def joint(th: Theta, zp) -> float:
        lp = log_prior(th)
        if lp == -math.inf:
            return -math.inf
        return lp + log_path_density(th, zp, model)

    return LatentModel(log_joint=joint, log_prior=log_prior)


def ssm_latent_bridges(
    model: StateSpaceModel,
    M: int,
    schedule: AnnealingSchedule,
    log_prior: Callable[[Theta], float] | None = None,
    sweeps_per_stage: int = 1,
) -> LatentBridgeFamily:
    """Annealed-path stage machinery backed by conditional sweeps.

    Stage ``t``'s density is the joint path density (plus prior) at the
    componentwise interpolated parameter, and its mover is a
    conditional-sweep refresh at that parameter — reversible for it
    because a sweep refresh is reversible for the path conditional at
    its own parameter, and iterating the same sweep ``sweeps_per_stage``
    times stays self-adjoint. The endpoint refresh is one sweep at the
    endpoint parameter, so the whole family meets the endpoint and
    reflection contracts of :class:`ratioavg.latent.LatentBridgeFamily`.
    The prior must be positive along the straight line between any two
    parameters it is positive at.
    """
    if sweeps_per_stage < 1:
        raise ValueError("sweeps_per_stage must be >= 1")

    def stage_theta(t: int, a: Theta, b: Theta) -> Theta:
        return _interp_theta(a, b, schedule.fraction(t))

    def log_f(t: int, a: Theta, b: Theta, zpath) -> float:
        th = stage_theta(t, a, b)
        total = log_path_density(th, zpath, model)
        if log_prior is not None:
            lp = log_prior(th)
            total = -math.inf if lp == -math.inf else total + lp
        return total

    def kernel(t: int, a: Theta, b: Theta, zpath, src: RandomSource):
        th = stage_theta(t, a, b)
        for i in range(sweeps_per_stage):
            _, zpath = csmc(M, th, zpath, model, src.substream(i))
        return zpath

    def refresh(th: Theta, zpath, src: RandomSource):
        _, z_next = csmc(M, th, zpath, model, src)
        return z_next

    return LatentBridgeFamily(schedule, log_f, kernel, refresh)


# ---------------------------------------------------------------------------
# the benchmark nonlinear growth model


_LOG_2PI = math.log(2.0 * math.pi)


def _growth_drift(z, t):
    z = np.asarray(z, dtype=float)
    return z / 2.0 + 25.0 * z / (1.0 + z * z) + 8.0 * np.cos(1.2 * np.asarray(t))


def nonlinear_ssm_model(data) -> StateSpaceModel:
    """Bootstrap model for the standard nonlinear growth benchmark.

    The parameter is the pair (state-noise variance, observation-noise
    variance), both strictly positive. The latent path starts at
    N(0, 10), drifts through ``z/2 + 25 z/(1+z²) + 8 cos(1.2 t)``, and is
    observed through ``y = z²/20`` plus noise.
    """

    def log_mu(theta, z1):
        z1 = np.asarray(z1, dtype=float)
        return -0.5 * (z1 * z1 / 10.0 + _LOG_2PI + math.log(10.0))

    def log_f(theta, t, z_prev, z_t):
        sv2 = theta[0]
        resid = np.asarray(z_t, dtype=float) - _growth_drift(z_prev, t)
        return -0.5 * (resid * resid / sv2 + _LOG_2PI + math.log(sv2))

    def log_g(theta, z, y):
        sw2 = theta[1]
        z = np.asarray(z, dtype=float)
        resid = np.asarray(y, dtype=float) - z * z / 20.0
        return -0.5 * (resid * resid / sw2 + _LOG_2PI + math.log(sw2))

    def sample_mu(theta, n, src: RandomSource):
        return math.sqrt(10.0) * src.generator("initial state").standard_normal(n)

    def sample_f(theta, t, z_prev, src: RandomSource):
        noise = src.generator("state noise").standard_normal(len(z_prev))
        return _growth_drift(z_prev, t) + math.sqrt(theta[0]) * noise

    return StateSpaceModel(
        log_mu=log_mu,
        log_f=log_f,
        log_g=log_g,
        sample_mu=sample_mu,
        sample_f=sample_f,
        data=tuple(float(v) for v in data),
    )


def nonlinear_ssm_simulate(
    theta: tuple, P: int, src: RandomSource
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the benchmark model: latent path and observations.

    ``theta`` is (state-noise variance, observation-noise variance),
    both >= 0 (zero gives the noise-free recursion). The cosine forcing
    uses the 1-based destination time: the step into time 2 adds
    ``8 cos(2.4)``.
    """
    sv2, sw2 = (float(v) for v in theta)
    if sv2 < 0.0 or sw2 < 0.0 or P < 1:
        raise ValueError("variances must be >= 0 and P >= 1")
    gen = src.generator("simulated series")
    z = np.empty(P)
    z[0] = math.sqrt(10.0) * gen.standard_normal()
    for t in range(2, P + 1):
        z[t - 1] = float(_growth_drift(z[t - 2], t)) + math.sqrt(
            sv2
        ) * gen.standard_normal()
    y = z * z / 20.0 + math.sqrt(sw2) * gen.standard_normal(P)
    return z, y
