"""Jump kernels between models of different dimension.

A trans-dimensional target lives on pairs ``(m, z_m)`` where the
within-model space changes with ``m``. A jump between two models goes
through dimension matching: the departing state is padded with a match
variable drawn from a fixed law, and the padded pair is mapped
bijectively onto the arriving state padded with *its* match variable.
The acceptance ratio of such a jump is the classical one (target ratio,
proposal-mass ratio, match densities and the map's Jacobian); an
optional ladder of bridge stages between the two endpoint densities
turns the one-shot jump into an annealed one whose ratio telescopes the
stage densities along the visited path.

The averaged step draws several matched candidates on the way up and
accepts on their mean ratio; on the way down it reuses the mapped
current state as one candidate among fresh reverse draws and accepts on
the reciprocal of their mean. A routing weight in [0, 1] per ordered
model pair decides which of the two presentations a proposed jump uses;
the acceptance ratio carries the matching routing factor, so any weight
gives a reversible kernel. Weighting "up" moves to one presentation and
"down" moves to the other is the natural choice when one direction's
match law is much cheaper to average over.

Only one direction of each jump is ever specified. The reverse
direction's stage densities and stage kernels are derived by carrying
points through the map (with the Jacobian correction), which makes the
two directions consistent by construction instead of by caller
discipline.

The module also ships the benchmark target for these kernels: a Poisson
multiple change-point model on a fixed observation window, with
conjugate-style priors on segment rates, a hierarchical prior on their
shared shape and rate, and split/merge jumps between adjacent segment
counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .core import (
    KernelReport,
    _accept,
    _log_increment,
    _map_ordered,
    categorical_sample,
    log_mean_exp,
)
from .rng import RandomSource

__all__ = [
    "TransdimensionalModel",
    "ModelProposal",
    "JumpSpec",
    "nearest_model_proposal",
    "half_routing",
    "updown_routing",
    "validate_jump",
    "rj_log_ratio",
    "rmj_step",
    "ais_rj_step",
    "ChangepointPrior",
    "ChangepointState",
    "changepoint_log_joint",
    "changepoint_jumps",
    "changepoint_model",
    "piecewise_poisson_simulate",
]

ModelIndex = Any
WithinState = Any
Match = Any


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ModelProposal:
    """Proposal over model indices with evaluable mass."""

    sample: Callable[[ModelIndex, RandomSource], ModelIndex]
    log_mass: Callable[[ModelIndex, ModelIndex], float]

    def log_ratio(self, m: ModelIndex, m_new: ModelIndex) -> float:
        """log q(m_new, m) - log q(m, m_new); -inf when both masses vanish."""
        fwd = self.log_mass(m, m_new)
        rev = self.log_mass(m_new, m)
        if fwd == -math.inf and rev == -math.inf:
            return -math.inf
        return rev - fwd


@dataclass(frozen=True)
class TransdimensionalModel:
    """Unnormalised joint density over (model index, within-model state).

    ``log_joint`` must return ``-inf`` exactly off support and never
    NaN. ``within_model_move``, when given, must leave the conditional
    target of its model invariant; jump steps never call it, chain
    drivers interleave it for irreducibility.
    """

    model_index_set: tuple
    log_joint: Callable[[ModelIndex, WithinState], float]
    model_proposal: ModelProposal | None = None
    within_model_move: Callable[[ModelIndex, WithinState, RandomSource], WithinState] | None = None


@dataclass(frozen=True)
class JumpSpec:
    """Dimension matching for one ordered model pair (a, b).

    ``sample_match``/``log_match`` draw and score the match variable
    padding a departing ``z_a``; ``apply_map`` sends the padded pair to
    ``(z_b, back-match)`` and ``invert_map`` undoes it exactly.
    ``log_jacobian`` is the log absolute Jacobian determinant of
    ``apply_map`` in the coordinates the densities are written in
    (0.0 for discrete or piecewise-permutation maps). Match log
    densities must be normalised — their mass enters the acceptance
    ratio through the endpoint stage densities.

    ``steps`` inserts that many bridge stages between the endpoint
    densities. ``log_stage(t, z, match)`` scores stage ``t`` in
    ``1..steps`` (any convenient unnormalised form: each stage's
    constant cancels between consecutive ratio increments) and
    ``stage_move(t, z, match, src)`` must be reversible with respect to
    it. Only the (a, b) direction is ever written down; the reverse
    direction is derived by pushforward through the map.
    """

    sample_match: Callable[[RandomSource], Match]
    log_match: Callable[[Match], float]
    apply_map: Callable[[WithinState, Match], tuple[WithinState, Match]]
    invert_map: Callable[[WithinState, Match], tuple[WithinState, Match]]
    log_jacobian: Callable[[WithinState, Match], float]
    sample_match_back: Callable[[RandomSource], Match]
    log_match_back: Callable[[Match], float]
    steps: int = 0
    log_stage: Callable[[int, WithinState, Match], float] | None = None
    stage_move: Callable[[int, WithinState, Match, RandomSource], tuple[WithinState, Match]] | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("bridge stage count must be >= 0")
        if self.steps > 0 and (self.log_stage is None or self.stage_move is None):
            raise ValueError("bridge stages need both log_stage and stage_move")


def nearest_model_proposal(lo: int, hi: int) -> ModelProposal:
    """Uniform proposal over the adjacent model indices in [lo, hi].

    Interior indices propose m-1 or m+1 with mass 1/2 each; the
    boundary indices send all mass to their single neighbour.
    """
    lo, hi = int(lo), int(hi)
    if hi <= lo:
        raise ValueError("need at least two model indices to jump between")

    def sample(m: int, src: RandomSource) -> int:
        if m == lo:
            return lo + 1
        if m == hi:
            return hi - 1
        return m + (1 if src.coin(0.5, "model step") else -1)

    def log_mass(m: int, m_new: int) -> float:
        if not lo <= m <= hi or abs(m_new - m) != 1 or not lo <= m_new <= hi:
            return -math.inf
        return 0.0 if m in (lo, hi) else -math.log(2.0)

    return ModelProposal(sample=sample, log_mass=log_mass)


def half_routing(m: ModelIndex, m_new: ModelIndex) -> float:
    """Route both directions of every jump through either presentation."""
    return 0.5


def updown_routing(m: ModelIndex, m_new: ModelIndex) -> float:
    """Averaged presentation for upward jumps, reciprocal for downward.

    With this weighting a downward proposal is always presented as the
    reverse of an upward one, so the candidate averaging always runs
    over the cheaper (lower-dimensional) match law.
    """
    return 1.0 if m_new > m else 0.0


# ---------------------------------------------------------------------------
# oriented view of a jump


class _Jump:
    """A JumpSpec read in one direction, bound to the target.

    Stage ``t`` of the flipped view reads stage ``steps + 1 - t`` of the
    authored view at the mapped point with the Jacobian correction, and
    its stage moves conjugate the authored moves by the map; the
    endpoint stages are evaluated directly from the target and the
    match laws in both views.
    """

    __slots__ = ("model", "spec", "source", "dest", "flipped")

    def __init__(self, model: TransdimensionalModel, spec: JumpSpec,
                 source: ModelIndex, dest: ModelIndex, flipped: bool):
        self.model = model
        self.spec = spec
        self.source = source
        self.dest = dest
        self.flipped = flipped

    @property
    def steps(self) -> int:
        return self.spec.steps

    def reverse(self) -> "_Jump":
        return _Jump(self.model, self.spec, self.dest, self.source, not self.flipped)

    def sample_match(self, src: RandomSource) -> Match:
        fn = self.spec.sample_match_back if self.flipped else self.spec.sample_match
        return fn(src)

    def log_match(self, match: Match) -> float:
        fn = self.spec.log_match_back if self.flipped else self.spec.log_match
        return float(fn(match))

    def apply(self, z: WithinState, match: Match) -> tuple[WithinState, Match]:
        fn = self.spec.invert_map if self.flipped else self.spec.apply_map
        return fn(z, match)

    def log_jac(self, z: WithinState, match: Match) -> float:
        if not self.flipped:
            return float(self.spec.log_jacobian(z, match))
        z0, match0 = self.spec.invert_map(z, match)
        return -float(self.spec.log_jacobian(z0, match0))

    def log_stage(self, t: int, z: WithinState, match: Match) -> float:
        T = self.spec.steps
        if not 0 <= t <= T + 1:
            raise ValueError(f"stage {t} outside 0..{T + 1}")
        if t == 0:
            lj = self.model.log_joint(self.source, z)
            lm = self.log_match(match)
            if lj == -math.inf or lm == -math.inf:
                return -math.inf
            return lj + lm
        if t == T + 1:
            z2, match2 = self.apply(z, match)
            lj = self.model.log_joint(self.dest, z2)
            back = self.spec.log_match if self.flipped else self.spec.log_match_back
            lm = float(back(match2))
            if lj == -math.inf or lm == -math.inf:
                return -math.inf
            return lj + lm + self.log_jac(z, match)
        if not self.flipped:
            return float(self.spec.log_stage(t, z, match))
        z2, match2 = self.spec.invert_map(z, match)
        base = float(self.spec.log_stage(T + 1 - t, z2, match2))
        if base == -math.inf:
            return -math.inf
        return base + self.log_jac(z, match)

    def move(self, t: int, z: WithinState, match: Match, src: RandomSource) -> tuple[WithinState, Match]:
        T = self.spec.steps
        if not 1 <= t <= T:
            raise ValueError(f"stage move {t} outside 1..{T}")
        if not self.flipped:
            return self.spec.stage_move(t, z, match, src)
        z2, match2 = self.spec.invert_map(z, match)
        z3, match3 = self.spec.stage_move(T + 1 - t, z2, match2, src)
        return self.spec.apply_map(z3, match3)


def _oriented(model: TransdimensionalModel, specs, a: ModelIndex, b: ModelIndex) -> _Jump:
    """Resolve the jump between a and b, flipping an authored (b, a) spec."""
    if isinstance(specs, JumpSpec):
        return _Jump(model, specs, a, b, flipped=False)
    has_fwd = (a, b) in specs
    has_rev = (b, a) in specs
    if has_fwd and has_rev:
        raise ValueError(
            f"jump table holds both orientations of pair {a!r}/{b!r}; "
            "author one and let the reverse be derived"
        )
    if has_fwd:
        return _Jump(model, specs[(a, b)], a, b, flipped=False)
    if has_rev:
        return _Jump(model, specs[(b, a)], a, b, flipped=True)
    raise KeyError(f"no jump specified between models {a!r} and {b!r}")


def _resolve_q(model: TransdimensionalModel, q: ModelProposal | None) -> ModelProposal:
    if q is not None:
        return q
    if model.model_proposal is None:
        raise ValueError("no model proposal given and the model carries none")
    return model.model_proposal


# ---------------------------------------------------------------------------
# structural validation


def _flat(obj) -> np.ndarray:
    if obj is None:
        return np.empty(0)
    if isinstance(obj, (tuple, list)):
        parts = [_flat(o) for o in obj]
        return np.concatenate(parts) if parts else np.empty(0)
    return np.atleast_1d(np.asarray(obj, dtype=float)).ravel()


def _close(a, b, atol: float) -> bool:
    fa, fb = _flat(a), _flat(b)
    return fa.size == fb.size and bool(np.allclose(fa, fb, rtol=0.0, atol=atol))


def validate_jump(spec: JumpSpec, states: Sequence[WithinState], src: RandomSource,
                  atol: float = 1e-10) -> None:
    """Probe a jump's structural invariants on concrete states.

    For each probe state: the map must round-trip through its inverse,
    the total coordinate count (discrete labels included) must be
    conserved, the Jacobian log must be finite, and the path involution
    (map every point, reverse the order) must be undone by the reverse
    involution. Raises ValueError on the first violation.
    """
    for z in states:
        match = spec.sample_match(src)
        z2, back = spec.apply_map(z, match)
        z3, match3 = spec.invert_map(z2, back)
        if not (_close(z3, z, atol) and _close(match3, match, atol)):
            raise ValueError("jump map does not round-trip through its inverse")
        if _flat(z).size + _flat(match).size != _flat(z2).size + _flat(back).size:
            raise ValueError("jump map does not conserve total dimension")
        if not math.isfinite(float(spec.log_jacobian(z, match))):
            raise ValueError("jump map has non-finite log-Jacobian at a probe point")
        path = [(z, spec.sample_match(src)) for _ in range(spec.steps + 1)]
        image = [spec.apply_map(zz, mm) for zz, mm in reversed(path)]
        again = [spec.invert_map(zz, mm) for zz, mm in reversed(image)]
        for (za, ma), (zb, mb) in zip(path, again):
            if not (_close(za, zb, atol) and _close(ma, mb, atol)):
                raise ValueError("path involution does not round-trip")


# ---------------------------------------------------------------------------
# acceptance ratio and jump steps


def _path_log_ratio(oj: _Jump, log_q_ratio: float, path: Sequence[tuple]) -> float:
    """Telescoped log ratio of one jump path in the oriented view."""
    total = log_q_ratio
    if total == -math.inf:
        return -math.inf
    for t, (z, match) in enumerate(path):
        total += _log_increment(oj.log_stage(t + 1, z, match), oj.log_stage(t, z, match))
        if total == -math.inf:
            return -math.inf
    return total


def rj_log_ratio(m: ModelIndex, m_new: ModelIndex, path: Sequence[tuple],
                 model: TransdimensionalModel, spec, q: ModelProposal | None = None) -> float:
    """Log acceptance ratio of one (possibly annealed) jump path.

    ``path`` holds the extended points ``(z, match)`` the bridge
    visited, ``steps + 1`` of them; entry 0 pairs the departing state
    with its match draw. The value adds the model-proposal mass ratio
    to the telescoped stage-density ratios along the path; the map's
    Jacobian enters through the terminal stage density's change of
    variables, so with no bridge stages this is exactly the classical
    jump ratio. Off-support points give ``-inf``.

    ``spec`` may be the JumpSpec authored for ``(m, m_new)`` or a
    mapping of ordered pairs as taken by the step functions.
    """
    oj = _oriented(model, spec, m, m_new)
    if len(path) != oj.steps + 1:
        raise ValueError(f"path length {len(path)} != {oj.steps + 1} stage points")
    return _path_log_ratio(oj, _resolve_q(model, q).log_ratio(m, m_new), path)


def _forward_path(oj: _Jump, z: WithinState, src: RandomSource) -> list[tuple]:
    """Match draw plus ``steps`` bridge moves, all from one substream."""
    point = (z, oj.sample_match(src))
    path = [point]
    for t in range(1, oj.steps + 1):
        point = oj.move(t, point[0], point[1], src)
        path.append(point)
    return path


def _jump_step(x, model, specs, q, N, routing, src, pool):
    if isinstance(specs, JumpSpec):
        # A bare spec has a fixed authored direction, but a chain meets
        # each pair from both sides; demand the keyed table so the
        # orientation is resolved per proposal.
        raise TypeError("jump steps need a {(m, m'): JumpSpec} table")
    m, z = x
    qq = _resolve_q(model, q)
    m_new = qq.sample(m, src)
    oj = _oriented(model, specs, m, m_new)
    b_fwd = routing(m, m_new)
    b_rev = routing(m_new, m)
    if src.coin(b_fwd, "route"):
        log_q = qq.log_ratio(m, m_new)

        def one(i: int, s: RandomSource) -> tuple[list, float]:
            path = _forward_path(oj, z, s)
            return path, _path_log_ratio(oj, log_q, path)

        results = _map_ordered(one, N, src, pool)
        logs = [r[1] for r in results]
        log_factor = (
            math.log1p(-b_rev) - math.log(b_fwd) if b_rev < 1.0 else -math.inf
        )
        log_r = log_mean_exp(logs) + log_factor
        accepted = _accept(log_r, src)
        report = KernelReport(accepted, "Q1", log_r, N)
        if not accepted:
            return x, report
        k = categorical_sample(logs, src)
        z_top, match_top = results[k][0][-1]
        z_new, _ = oj.apply(z_top, match_top)
        return (m_new, z_new), report
    # Reversed presentation: transport the current state's path through
    # the involution into the arriving representation, surround it with
    # fresh draws anchored at the proposed state, accept on the
    # reciprocal of their mean ratio.
    roj = oj.reverse()
    log_q_rev = qq.log_ratio(m_new, m)
    fwd = _forward_path(oj, z, src.substream(0))
    image = [oj.apply(zz, mm) for zz, mm in reversed(fwd)]
    z_new = image[0][0]
    logs = [0.0] * N
    logs[0] = _path_log_ratio(roj, log_q_rev, image)
    if N > 1:
        def rest(i: int, s: RandomSource) -> float:
            path = _forward_path(roj, z_new, s)
            return _path_log_ratio(roj, log_q_rev, path)

        logs[1:] = _map_ordered(rest, N - 1, src, pool, start=1)
    log_factor = (
        math.log(b_rev) - math.log1p(-b_fwd) if b_rev > 0.0 else -math.inf
    )
    lme = log_mean_exp(logs)
    # A zero reversed-presentation mean means even the transported
    # current state is off support there; reject rather than accept
    # with probability one.
    log_r = (-lme + log_factor) if lme > -math.inf else -math.inf
    accepted = _accept(log_r, src)
    report = KernelReport(accepted, "Q2", log_r, N)
    return ((m_new, z_new) if accepted else x), report


def rmj_step(x, model: TransdimensionalModel, specs, q: ModelProposal | None,
             N: int, routing: Callable[[ModelIndex, ModelIndex], float],
             src: RandomSource, pool=None) -> tuple[Any, KernelReport]:
    """One-shot (stage-free) averaged jump step.

    Routed to the averaged presentation with probability
    ``routing(m, m_new)``: N independent match draws, a candidate
    selected proportionally to its jump ratio, acceptance on the mean
    ratio times the routing factor. The other presentation maps the
    current state across, pads it with N-1 reverse match draws at the
    proposed state, and accepts on the reciprocal mean with the
    mirrored factor. Every spec in ``specs`` must be stage-free.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if not isinstance(specs, JumpSpec):
        for spec in specs.values():
            if spec.steps != 0:
                raise ValueError(
                    "rmj_step is the stage-free jump; use ais_rj_step for bridged specs"
                )
    return _jump_step(x, model, specs, q, N, routing, src, pool)


def ais_rj_step(x, model: TransdimensionalModel, specs, q: ModelProposal | None,
                N: int, routing: Callable[[ModelIndex, ModelIndex], float],
                src: RandomSource, pool=None) -> tuple[Any, KernelReport]:
    """Averaged jump step with annealed bridge paths.

    As :func:`rmj_step`, but each candidate is a whole bridge path:
    the match draw followed by the spec's stage moves, with the
    acceptance ratio telescoping the stage densities along the path.
    With stage-free specs this is exactly :func:`rmj_step`; with N=1 it
    is the single-path annealed jump sampler.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    return _jump_step(x, model, specs, q, N, routing, src, pool)


# ---------------------------------------------------------------------------
# Poisson multiple change-point benchmark


class ChangepointState(NamedTuple):
    """Within-model state for a fixed number of segments.

    ``steps`` are the interior boundaries (ascending, inside the
    window), one fewer than ``heights``, the per-segment event rates.
    ``shape``/``rate`` parameterise the common Gamma prior the heights
    are drawn from.
    """

    steps: tuple
    heights: tuple
    shape: float
    rate: float


@dataclass(frozen=True)
class ChangepointPrior:
    """Window and hyper-parameters of the change-point target.

    Segment counts follow a Poisson(``mean_segments``) truncated to
    ``1..max_segments``; interior boundaries follow the even-numbered
    order statistics of ``2m - 1`` uniforms on the window; heights are
    i.i.d. Gamma(shape, rate) whose shape and rate carry Gamma hyper
    priors ``shape_hyper`` and ``rate_hyper`` (shape, rate pairs).
    """

    horizon: float
    mean_segments: float = 3.0
    max_segments: int = 30
    shape_hyper: tuple[float, float] = (2.0, 2.0)
    rate_hyper: tuple[float, float] = (2.0, 2.0)

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.max_segments < 1:
            raise ValueError("max_segments must be >= 1")
        if self.mean_segments <= 0.0:
            raise ValueError("mean_segments must be positive")


def _boundaries(z: ChangepointState, horizon: float) -> np.ndarray:
    return np.concatenate([[0.0], np.asarray(z.steps, dtype=float), [horizon]])


def _segment_counts(data: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # data sorted ascending; interior edges split it into [edge, edge)
    # buckets, with the last segment keeping everything to the right so
    # an event exactly at the horizon is not dropped.
    idx = np.searchsorted(data, edges[1:-1], side="left")
    return np.diff(np.concatenate([[0], idx, [data.size]]))


def changepoint_log_joint(m: int, z_m: ChangepointState, data,
                          prior: ChangepointPrior) -> float:
    """Unnormalised log density of (segment count, within-model state).

    Joins the truncated-Poisson segment-count prior, the even-order-
    statistics boundary prior, the Gamma height prior with its hyper
    priors, and the piecewise-constant Poisson-process log likelihood
    sum(count_j * log h_j - h_j * width_j). An empty segment therefore
    contributes only its exposure term. Ordering violations and
    non-positive heights or hyper values give ``-inf``.
    """
    data = np.sort(np.asarray(data, dtype=float))
    return _changepoint_log_joint_sorted(m, z_m, data, prior)


def _changepoint_log_joint_sorted(m: int, z: ChangepointState, data: np.ndarray,
                                  prior: ChangepointPrior) -> float:
    if not 1 <= m <= prior.max_segments:
        return -math.inf
    if len(z.heights) != m or len(z.steps) != m - 1:
        raise ValueError(f"state has {len(z.heights)} segments, expected {m}")
    heights = np.asarray(z.heights, dtype=float)
    if (heights <= 0.0).any() or z.shape <= 0.0 or z.rate <= 0.0:
        return -math.inf
    edges = _boundaries(z, prior.horizon)
    widths = np.diff(edges)
    if (widths <= 0.0).any():
        return -math.inf

    L = prior.horizon
    lam = prior.mean_segments
    total = m * math.log(lam) - math.lgamma(m + 1)
    total += math.lgamma(2 * m) - (2 * m - 1) * math.log(L)
    total += float(np.log(widths).sum())

    a, b = z.shape, z.rate
    total += m * (a * math.log(b) - math.lgamma(a))
    total += float(((a - 1.0) * np.log(heights) - b * heights).sum())

    (c, d) = prior.shape_hyper
    (e, f) = prior.rate_hyper
    total += c * math.log(d) - math.lgamma(c) + (c - 1.0) * math.log(a) - d * a
    total += e * math.log(f) - math.lgamma(e) + (e - 1.0) * math.log(b) - f * b

    counts = _segment_counts(data, edges)
    log_h = np.log(heights)
    total += float((counts * log_h).sum() - (heights * widths).sum())
    if math.isnan(total):
        raise ValueError("NaN change-point log joint")
    return total


def _split_spec(prior: ChangepointPrior, m: int) -> JumpSpec:
    """Split/merge matching between m and m+1 segments.

    The split match is (segment index, relative cut position, height
    imbalance in (0,1)). The cut lands at that fraction across the
    chosen segment; the child heights multiply the parent by
    exp(-(1-v)*odds) and exp(v*odds) with odds = log((1-u)/u), which
    conserves the parent's width-weighted log level. The merge match is
    just the boundary index to delete; the children recombine to their
    width-weighted geometric mean.
    """
    L = prior.horizon
    probs = (1.0 / m,) * m

    def sample_match(src: RandomSource):
        j = src.choice(probs, "split segment") + 1
        return (j, src.uniform("cut position"), src.uniform("height imbalance"))

    def log_match(match) -> float:
        j, v, u = match
        if 1 <= j <= m and 0.0 < v < 1.0 and 0.0 < u < 1.0:
            return -math.log(m)
        return -math.inf

    def sample_match_back(src: RandomSource):
        return src.choice(probs, "merge boundary") + 1

    def log_match_back(j) -> float:
        return -math.log(m) if 1 <= j <= m else -math.inf

    def apply_map(z: ChangepointState, match):
        j, v, u = match
        edges = (0.0,) + tuple(z.steps) + (L,)
        left, right = edges[j - 1], edges[j]
        cut = left + v * (right - left)
        odds = math.log1p(-u) - math.log(u)
        parent = z.heights[j - 1]
        low = parent * math.exp(-(1.0 - v) * odds)
        high = parent * math.exp(v * odds)
        steps = z.steps[: j - 1] + (cut,) + z.steps[j - 1 :]
        heights = z.heights[: j - 1] + (low, high) + z.heights[j:]
        return ChangepointState(steps, heights, z.shape, z.rate), j

    def invert_map(z2: ChangepointState, j: int):
        edges = (0.0,) + tuple(z2.steps) + (L,)
        left, cut, right = edges[j - 1], edges[j], edges[j + 1]
        v = (cut - left) / (right - left)
        low, high = z2.heights[j - 1], z2.heights[j]
        parent = math.exp(v * math.log(low) + (1.0 - v) * math.log(high))
        u = low / (low + high)
        steps = z2.steps[: j - 1] + z2.steps[j:]
        heights = z2.heights[: j - 1] + (parent,) + z2.heights[j + 1 :]
        return ChangepointState(steps, heights, z2.shape, z2.rate), (j, v, u)

    def log_jacobian(z: ChangepointState, match) -> float:
        j, v, u = match
        edges = (0.0,) + tuple(z.steps) + (L,)
        width = edges[j] - edges[j - 1]
        odds = math.log1p(-u) - math.log(u)
        # log(width * low * high / (parent * u * (1-u))) with the child
        # heights substituted by their defining expressions.
        return (
            math.log(width)
            + math.log(z.heights[j - 1])
            + (2.0 * v - 1.0) * odds
            - math.log(u)
            - math.log1p(-u)
        )

    return JumpSpec(
        sample_match=sample_match,
        log_match=log_match,
        apply_map=apply_map,
        invert_map=invert_map,
        log_jacobian=log_jacobian,
        sample_match_back=sample_match_back,
        log_match_back=log_match_back,
    )


def changepoint_jumps(prior: ChangepointPrior) -> dict:
    """Split/merge JumpSpecs for every adjacent segment-count pair."""
    return {(m, m + 1): _split_spec(prior, m) for m in range(1, prior.max_segments)}


def changepoint_model(data, prior: ChangepointPrior, height_scale: float = 0.4,
                      step_window: float | None = None,
                      hyper_scale: float = 0.3) -> TransdimensionalModel:
    """Bind the change-point target, its within-model move and proposal.

    The within-model move is a Metropolis scan: one multiplicative
    log-normal update per height (ratio correction h'/h), one uniform-
    window update per interior boundary (symmetric; ordering violations
    reject through the joint), and multiplicative updates of the shared
    shape and rate. Each sub-update accepts on the exact joint ratio,
    so the scan leaves every within-model conditional invariant.
    """
    data = np.sort(np.asarray(data, dtype=float))
    if data.size and (data[0] < 0.0 or data[-1] > prior.horizon):
        raise ValueError("event times must lie inside [0, horizon]")
    window = prior.horizon / 8.0 if step_window is None else float(step_window)
    if window <= 0.0 or height_scale <= 0.0 or hyper_scale <= 0.0:
        raise ValueError("move scales must be positive")

    def log_joint(m: int, z: ChangepointState) -> float:
        return _changepoint_log_joint_sorted(m, z, data, prior)

    def replace(z: ChangepointState, **kw) -> ChangepointState:
        return z._replace(**kw)

    def within_move(m: int, z: ChangepointState, src: RandomSource) -> ChangepointState:
        gen = src.generator("within noise")
        here = log_joint(m, z)
        for j in range(m):
            h = z.heights[j]
            h_new = h * math.exp(height_scale * gen.standard_normal())
            cand = replace(z, heights=z.heights[:j] + (h_new,) + z.heights[j + 1 :])
            there = log_joint(m, cand)
            if _accept(_log_increment(there, here) + math.log(h_new / h), src):
                z, here = cand, there
        for i in range(m - 1):
            s_new = z.steps[i] + window * (2.0 * gen.random() - 1.0)
            cand = replace(z, steps=z.steps[:i] + (s_new,) + z.steps[i + 1 :])
            there = log_joint(m, cand)
            if _accept(_log_increment(there, here), src):
                z, here = cand, there
        for field in ("shape", "rate"):
            old = getattr(z, field)
            new = old * math.exp(hyper_scale * gen.standard_normal())
            cand = replace(z, **{field: new})
            there = log_joint(m, cand)
            if _accept(_log_increment(there, here) + math.log(new / old), src):
                z, here = cand, there
        return z

    return TransdimensionalModel(
        model_index_set=tuple(range(1, prior.max_segments + 1)),
        log_joint=log_joint,
        model_proposal=nearest_model_proposal(1, prior.max_segments),
        within_model_move=within_move,
    )


def piecewise_poisson_simulate(heights, steps, horizon: float,
                               src: RandomSource) -> np.ndarray:
    """Event times of a piecewise-constant-rate Poisson process."""
    heights = np.asarray(heights, dtype=float)
    edges = np.concatenate([[0.0], np.asarray(steps, dtype=float), [horizon]])
    if heights.size != edges.size - 1:
        raise ValueError("need one height per segment")
    if (np.diff(edges) <= 0.0).any() or (heights <= 0.0).any():
        raise ValueError("segments must be ordered and heights positive")
    gen = src.generator("event times")
    times = []
    for j in range(heights.size):
        width = edges[j + 1] - edges[j]
        n = gen.poisson(heights[j] * width)
        times.append(edges[j] + width * gen.random(n))
    return np.sort(np.concatenate(times))
