"""Counter-based random streams and the randomness-source abstraction.

Every random decision taken by a kernel step flows through a
:class:`RandomSource`. The production implementation
(:class:`StreamSource`) wraps a counter-based bit generator keyed by
``(master_seed, stream_id)``, so distinct stream ids give statistically
independent streams and the same key reproduces the identical draw
sequence regardless of thread scheduling. The exact-enumeration oracle
in :mod:`ratioavg.diagnostics` supplies an alternative implementation
that forks on every discrete decision instead of sampling it.

Continuous draws (``uniform``, ``normal``, ``generator``) carry a label;
the enumerating implementation refuses them by raising
:class:`NonEnumerableSource` naming that label.
"""

from __future__ import annotations

import abc
import math
from typing import Sequence

import numpy as np

__all__ = [
    "RandomSource",
    "StreamSource",
    "NonEnumerableSource",
    "mix64",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(*words: int) -> int:
    """Mix integer words into one 64-bit value (splitmix64 finaliser chain).

    Used to derive substream ids from (stream id, step index, estimator
    index) tuples; pure integer arithmetic, so identical on every
    platform.
    """
    h = 0x243F6A8885A308D3
    for w in words:
        h = (h + (int(w) & _MASK64) + _GOLDEN) & _MASK64
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        h = z ^ (z >> 31)
    return h


class NonEnumerableSource(RuntimeError):
    """A continuous draw was requested from the exact enumerator."""

    def __init__(self, label: str):
        super().__init__(
            f"randomness source {label!r} is continuous and cannot be "
            "enumerated exactly"
        )
        self.label = label


class RandomSource(abc.ABC):
    """Interface through which kernel steps consume randomness."""

    @abc.abstractmethod
    def coin(self, p: float, label: str) -> bool:
        """Bernoulli(p) draw."""

    @abc.abstractmethod
    def choice(self, probs: Sequence[float], label: str) -> int:
        """Categorical draw; ``probs`` must sum to 1 up to rounding."""

    @abc.abstractmethod
    def uniform(self, label: str) -> float:
        """Uniform draw on [0, 1)."""

    @abc.abstractmethod
    def generator(self, label: str) -> np.random.Generator:
        """Underlying bit generator for arbitrary continuous draws."""

    @abc.abstractmethod
    def substream(self, index: int) -> "RandomSource":
        """Independent child source for estimator ``index`` of this step."""

    def next_step(self) -> None:
        """Advance the step counter (chain drivers call this once per
        iteration so substream ids never repeat across steps)."""

    def choice_log(self, log_weights: Sequence[float], label: str) -> int:
        """Categorical draw from unnormalised log weights (max-shifted)."""
        lw = np.asarray(log_weights, dtype=float)
        if np.isnan(lw).any():
            raise ValueError(f"NaN log weight in categorical draw {label!r}")
        m = lw.max()
        if m == -math.inf:
            raise ValueError(f"degenerate categorical {label!r}: all weights zero")
        w = np.exp(lw - m)
        return self.choice(w / w.sum(), label)

    def choices(self, probs: Sequence[float], n: int, label: str) -> Sequence[int]:
        """``n`` independent categorical draws from one weight vector.

        Resampling steps consume ancestor indices through this method so
        the production source can batch them while the enumerating source
        still sees one discrete decision per draw.
        """
        return [self.choice(probs, f"{label}:{i}") for i in range(n)]


class StreamSource(RandomSource):
    """Sampling source backed by a Philox counter-based generator.

    ``substream(i)`` derives an independent child keyed by
    ``mix64(stream_id, step, i)``; the child's draws do not depend on
    how much randomness any other stream has consumed, which is what
    makes parallel estimator evaluation schedule-independent.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = np.random.Generator(
            np.random.Philox(key=[self.master_seed, self.stream_id])
        )
        self._step = 0

    def next_step(self) -> None:
        self._step += 1

    def coin(self, p: float, label: str) -> bool:
        if math.isnan(p):
            raise ValueError(f"NaN probability for coin {label!r}")
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return self._gen.random() < p

    def choice(self, probs: Sequence[float], label: str) -> int:
        p = np.asarray(probs, dtype=float)
        if np.isnan(p).any():
            raise ValueError(f"NaN probability in categorical draw {label!r}")
        cum = np.cumsum(p)
        total = cum[-1]
        if total <= 0.0:
            raise ValueError(f"degenerate categorical {label!r}: all weights zero")
        r = self._gen.random() * total
        # First index whose cumulative mass strictly exceeds the draw.
        return int(np.searchsorted(cum, r, side="right"))

    def uniform(self, label: str) -> float:
        return float(self._gen.random())

    def generator(self, label: str) -> np.random.Generator:
        return self._gen

    def choices(self, probs: Sequence[float], n: int, label: str) -> Sequence[int]:
        p = np.asarray(probs, dtype=float)
        if np.isnan(p).any():
            raise ValueError(f"NaN probability in categorical draw {label!r}")
        cum = np.cumsum(p)
        total = cum[-1]
        if total <= 0.0:
            raise ValueError(f"degenerate categorical {label!r}: all weights zero")
        r = self._gen.random(n) * total
        return np.searchsorted(cum, r, side="right").astype(np.intp)

    def substream(self, index: int) -> "StreamSource":
        child_id = mix64(self.stream_id, self._step, index)
        return StreamSource(self.master_seed, child_id)
