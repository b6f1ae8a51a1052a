"""Exact finite-space oracles and chain diagnostics.

The enumerator treats a kernel step as a probabilistic program: every
discrete decision the step takes goes through a :class:`RandomSource`,
so replaying scripted decision prefixes explores the whole decision
tree exactly once and yields the exact transition law. Programs that
request a continuous draw are refused with a diagnostic naming the
offending source label.

Also here: detailed-balance residuals, Dirichlet forms, spectral gaps,
exact asymptotic variances, the integrated-autocovariance estimator,
ensemble convergence curves, and a deliberately broken
"averaging without the second route" kernel used as a negative control
for the oracle itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from .core import ProposalPair, log_mean_exp
from .rng import NonEnumerableSource, RandomSource

__all__ = [
    "FiniteKernelMatrix",
    "enumerate_outcomes",
    "enumerate_kernel",
    "detailed_balance_residual",
    "stationary_residual",
    "stationary_distribution",
    "dirichlet_form",
    "dirichlet_form_autocov",
    "right_spectral_gap",
    "asymptotic_variance",
    "iac_estimate",
    "ensemble_convergence",
    "ConvergenceCurve",
    "naive_averaged_step",
]


# ---------------------------------------------------------------------------
# exact enumeration of kernel steps


class _ScriptedSource(RandomSource):
    """Replays a script of option indices, then defaults and records.

    Option indices are absolute positions in each decision's
    probability vector, so scripts are stable no matter in which order
    the driver explores alternatives.
    """

    def __init__(self, script: tuple[int, ...], option_order=None):
        self.script = script
        self.depth = 0
        self.decisions: list[tuple[int, tuple[float, ...]]] = []
        self._order = option_order

    def _decide(self, probs: Sequence[float], label: str) -> int:
        p = [float(v) for v in probs]
        total = sum(p)
        if not math.isfinite(total) or total <= 0.0:
            raise ValueError(f"degenerate categorical {label!r} in enumeration")
        p = [v / total for v in p]
        d = self.depth
        if d < len(self.script):
            idx = self.script[d]
        else:
            order = (
                self._order(label, len(p)) if self._order is not None else range(len(p))
            )
            idx = next(j for j in order if p[j] > 0.0)
        self.decisions.append((idx, tuple(p)))
        self.depth += 1
        return idx

    def coin(self, p: float, label: str) -> bool:
        if math.isnan(p):
            raise ValueError(f"NaN probability for coin {label!r}")
        p = min(max(p, 0.0), 1.0)
        return bool(self._decide((1.0 - p, p), label))

    def choice(self, probs: Sequence[float], label: str) -> int:
        return self._decide(probs, label)

    def uniform(self, label: str) -> float:
        raise NonEnumerableSource(label)

    def generator(self, label: str) -> np.random.Generator:
        raise NonEnumerableSource(label)

    def substream(self, index: int) -> "_ScriptedSource":
        return self


def enumerate_outcomes(
    program: Callable[[RandomSource], Any],
    option_order=None,
) -> dict[Any, float]:
    """Exact outcome law of a program driven by discrete randomness.

    Runs the program once per leaf of its decision tree; each run
    replays a scripted prefix and queues every unexplored positive-
    probability alternative it encounters. Outcomes must be hashable.
    ``option_order(label, n)`` may reorder default-option preference;
    the returned law does not depend on it (tested), it only permutes
    the exploration order.
    """
    results: dict[Any, float] = {}
    stack: list[tuple[int, ...]] = [()]
    while stack:
        script = stack.pop()
        src = _ScriptedSource(script, option_order)
        outcome = program(src)
        prob = 1.0
        chosen: list[int] = []
        for depth, (idx, probs) in enumerate(src.decisions):
            prob *= probs[idx]
            if depth >= len(script):
                for j, pj in enumerate(probs):
                    if j != idx and pj > 0.0:
                        stack.append(tuple(chosen) + (j,))
            chosen.append(idx)
        results[outcome] = results.get(outcome, 0.0) + prob
    return results


@dataclass(frozen=True)
class FiniteKernelMatrix:
    """Exact transition matrix over an enumerated state list."""

    states: tuple
    P: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        pi = np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "pi", pi / pi.sum())

    def index(self, state) -> int:
        return self.states.index(state)


def enumerate_kernel(
    step: Callable[[Any, RandomSource], Any],
    states: Sequence,
    pi: Sequence[float],
    option_order=None,
) -> FiniteKernelMatrix:
    """Exact transition matrix of ``step`` over ``states``.

    ``step(state, src)`` must return the next state and consume all its
    randomness through ``src``. Raises :class:`NonEnumerableSource`
    when the step touches a continuous source.
    """
    states = tuple(states)
    index = {s: i for i, s in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for i, s in enumerate(states):
        for outcome, p in enumerate_outcomes(
            lambda src: step(s, src), option_order
        ).items():
            P[i, index[outcome]] += p
    return FiniteKernelMatrix(states, P, np.asarray(pi, dtype=float))


# ---------------------------------------------------------------------------
# matrix functionals


def detailed_balance_residual(K: FiniteKernelMatrix) -> float:
    """max over pairs of |pi_x P(x,y) - pi_y P(y,x)|."""
    F = K.pi[:, None] * K.P
    return float(np.abs(F - F.T).max())


def stationary_residual(K: FiniteKernelMatrix) -> float:
    """max |pi P - pi|; zero iff pi is invariant for P."""
    return float(np.abs(K.pi @ K.P - K.pi).max())


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary vector of a row-stochastic matrix (left eigenvector)."""
    vals, vecs = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, k])
    v = np.abs(v)
    return v / v.sum()


def _check_reversible(K: FiniteKernelMatrix, tol: float) -> None:
    res = detailed_balance_residual(K)
    if res > tol:
        raise ValueError(
            f"kernel is not reversible (detailed-balance residual {res:.3e})"
        )


def dirichlet_form(K: FiniteKernelMatrix, f: Sequence[float]) -> float:
    """(1/2) sum_xy pi_x P(x,y) (f(x) - f(y))^2."""
    f = np.asarray(f, dtype=float)
    diff = f[:, None] - f[None, :]
    return float(0.5 * np.sum(K.pi[:, None] * K.P * diff**2))


def dirichlet_form_autocov(K: FiniteKernelMatrix, f: Sequence[float]) -> float:
    """Same quadratic form via var - lag-1 autocovariance (cross-check)."""
    f = np.asarray(f, dtype=float)
    fbar = f - float(K.pi @ f)
    var = float(K.pi @ fbar**2)
    lag1 = float(fbar @ (K.pi[:, None] * K.P) @ fbar)
    return var - lag1


def right_spectral_gap(K: FiniteKernelMatrix, tol: float = 1e-9) -> float:
    """1 minus the second-largest eigenvalue of a reversible kernel."""
    _check_reversible(K, tol)
    d = np.sqrt(K.pi)
    S = (d[:, None] / d[None, :]) * K.P
    S = 0.5 * (S + S.T)
    vals = np.sort(np.linalg.eigvalsh(S))[::-1]
    return float(1.0 - vals[1])


def asymptotic_variance(K: FiniteKernelMatrix, f: Sequence[float]) -> float:
    """Exact asymptotic variance of ergodic averages of f under K.

    gamma_0 + 2 sum_{k>=1} gamma_k, computed through the fundamental
    matrix (I - P + 1 pi^T)^{-1} on the centred function.
    """
    _check_reversible(K, tol=1e-9)
    f = np.asarray(f, dtype=float)
    fbar = f - float(K.pi @ f)
    n = len(fbar)
    A = np.eye(n) - K.P + np.outer(np.ones(n), K.pi)
    g = np.linalg.solve(A, fbar)  # sum_{k>=0} P^k fbar
    gamma0 = float(K.pi @ fbar**2)
    return 2.0 * float(K.pi @ (fbar * g)) - gamma0


# ---------------------------------------------------------------------------
# chain-output diagnostics


def _geyer_iac(series: np.ndarray) -> float:
    x = np.asarray(series, dtype=float)
    n = x.size
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0.0:
        raise ValueError("IAC undefined for a constant series")
    # Autocovariances via FFT with zero padding.
    m = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(x, m)
    acov = np.fft.irfft(fx * np.conj(fx), m)[:n] / n
    rho = acov / acov[0]
    # Initial monotone sequence over pair sums Gamma_m = rho_2m + rho_2m+1.
    npairs = n // 2
    gammas = []
    for k in range(npairs):
        g = rho[2 * k] + (rho[2 * k + 1] if 2 * k + 1 < n else 0.0)
        if g <= 0.0:
            break
        gammas.append(g)
    if not gammas:
        return 1.0
    gam = np.minimum.accumulate(np.asarray(gammas))
    return float(max(2.0 * gam.sum() - 1.0, 1e-12))


def iac_estimate(
    series: Sequence[float], n_batches: int = 8
) -> tuple[float, tuple[float, float]]:
    """Integrated autocovariance time with a batch confidence interval.

    Point estimate from the initial-monotone-sequence truncation on the
    full series; the 95% interval comes from per-batch estimates over
    ``n_batches`` (>= 8) equal segments, Student-t.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 1000:
        raise ValueError("series too short for an IAC estimate (need >= 1000)")
    if n_batches < 8:
        raise ValueError("need at least 8 batches for the interval")
    point = _geyer_iac(x)
    blen = x.size // n_batches
    per_batch = np.array(
        [_geyer_iac(x[i * blen : (i + 1) * blen]) for i in range(n_batches)]
    )
    half = float(
        stats.t.ppf(0.975, n_batches - 1)
        * per_batch.std(ddof=1)
        / math.sqrt(n_batches)
    )
    centre = float(per_batch.mean())
    return point, (centre - half, centre + half)


@dataclass(frozen=True)
class ConvergenceCurve:
    """Per-iteration ensemble means of functionals with error bands."""

    means: np.ndarray  # (horizon, n_functionals)
    stderr: np.ndarray  # same shape; sd over chains / sqrt(n_chains)
    n_chains: int

    def abs_error(self, reference: Sequence[float]) -> np.ndarray:
        return np.abs(self.means - np.asarray(reference, dtype=float)[None, :])


def ensemble_convergence(
    step: Callable[[Any, RandomSource], Any],
    x0: Any,
    n_chains: int,
    horizon: int,
    functionals: Sequence[Callable[[Any], float]],
    src: RandomSource,
    pool=None,
) -> ConvergenceCurve:
    """Ensemble-average convergence curves from ``n_chains`` replicas.

    Each chain runs on its own substream of ``src``, so the curve is
    reproducible under any parallel schedule.
    """
    if n_chains < 2:
        raise ValueError("need at least 2 chains")

    def run_chain(i: int, s: RandomSource) -> np.ndarray:
        out = np.empty((horizon, len(functionals)))
        x = x0
        for t in range(horizon):
            s.next_step()
            x = step(x, s)
            out[t] = [f(x) for f in functionals]
        return out

    if pool is None:
        traces = [run_chain(i, src.substream(i)) for i in range(n_chains)]
    else:
        traces = list(
            pool.map(run_chain, range(n_chains), [src.substream(i) for i in range(n_chains)])
        )
    stacked = np.stack(traces)  # (chains, horizon, functionals)
    means = stacked.mean(axis=0)
    stderr = stacked.std(axis=0, ddof=1) / math.sqrt(n_chains)
    return ConvergenceCurve(means, stderr, n_chains)


# ---------------------------------------------------------------------------
# negative control


def naive_averaged_step(
    x: Any,
    pair: ProposalPair,
    N: int,
    src: RandomSource,
) -> Any:
    """Averaged acceptance WITHOUT the compensating second route.

    Accepting on a plain average of forward ratio estimates is the
    obvious-but-wrong construction; it is not reversible for any target
    whose estimator law is genuinely asymmetric. The oracle test suite
    must flag this kernel, otherwise the oracle itself is vacuous.
    """
    y = pair.sample_q(x, src)
    logs = [
        pair.log_ratio(x, y, pair.sample_u_forward(x, y, src.substream(i)))
        for i in range(N)
    ]
    log_r = log_mean_exp(logs)
    p = 1.0 if log_r >= 0.0 else math.exp(log_r)
    return y if src.coin(p, "accept") else x
