"""Small numerical helpers shared by the simulator and the verification suite."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

# Philox4x64-10 keyed by (seed, stream-id): 128-bit key, 256-bit counter.
RNG_ALGORITHM = "numpy.random.Philox (Philox4x64-10), key = seed + 2**64 * stream_id"

_MASK64 = (1 << 64) - 1


def random_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return an independent, reproducible random stream.

    The stream is a Philox counter-based generator whose 128-bit key packs
    ``seed`` in the low word and ``stream_id`` in the high word, so distinct
    ``(seed, stream_id)`` pairs never share a key.
    """
    key = (int(seed) & _MASK64) | ((int(stream_id) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def descending_factorial(x: float, d: int) -> float:
    """(x)_d = x (x-1) ... (x-d+1); the empty product is 1."""
    if d < 0:
        raise ValueError("order d must be >= 0")
    out = 1.0
    for i in range(d):
        out *= x - i
        if out == 0.0:
            return 0.0
    return out


def elementary_symmetric(values: Iterable[float], k: int) -> float:
    """e_k(values) by the streaming recurrence, O(n k)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    e = np.zeros(k + 1)
    e[0] = 1.0
    for v in values:
        # descending j so each value is used at most once per product
        for j in range(k, 0, -1):
            e[j] += v * e[j - 1]
    return float(e[k])


def elementary_symmetric_all(values: Sequence[float], k: int) -> np.ndarray:
    """Array [e_0, ..., e_k] of the values, same recurrence."""
    e = np.zeros(k + 1)
    e[0] = 1.0
    for v in values:
        for j in range(k, 0, -1):
            e[j] += v * e[j - 1]
    return e


def ks_statistic(samples: Sequence[float], cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Two-sided Kolmogorov-Smirnov distance between the empirical CDF and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("ks_statistic needs at least one sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(max(d_plus, d_minus))


def ks_critical_value(n: int, alpha: float = 0.01, n_sim: int = 4000, seed: int = 0) -> float:
    """(1 - alpha) quantile of the KS statistic for ``n`` samples, by simulation.

    The statistic is distribution-free for continuous references, so uniform
    samples against the uniform CDF suffice.
    """
    rng = random_stream(seed, 0x4B53)
    stats = np.empty(n_sim)
    i = np.arange(1, n + 1)
    for s in range(n_sim):
        u = np.sort(rng.random(n))
        stats[s] = max(np.max(i / n - u), np.max(u - (i - 1) / n))
    return float(np.quantile(stats, 1.0 - alpha))


def truncated_exponential_cdf(rate: float, horizon: float) -> Callable[[np.ndarray], np.ndarray]:
    """CDF of Exp(rate) conditioned on being below ``horizon``."""
    norm = -math.expm1(-rate * horizon)

    def cdf(x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, horizon)
        return -np.expm1(-rate * x) / norm

    return cdf


def truncated_exponential_mean(rate: float, horizon: float) -> float:
    """E[X | X < horizon] for X ~ Exp(rate)."""
    lt = rate * horizon
    return 1.0 / rate - horizon * math.exp(-lt) / (-math.expm1(-lt))


@dataclass
class Accumulator:
    """Running mean / sum of squared deviations, mergeable (Chan et al.)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def extend(self, xs: Iterable[float]) -> None:
        for x in xs:
            self.add(float(x))

    def merge(self, other: "Accumulator") -> "Accumulator":
        n = self.count + other.count
        if n == 0:
            return Accumulator()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return Accumulator(n, mean, m2)

    @classmethod
    def from_values(cls, xs: Iterable[float]) -> "Accumulator":
        acc = cls()
        acc.extend(xs)
        return acc

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else math.nan

    @property
    def std_error(self) -> float:
        if self.count == 0:
            return math.nan
        return math.sqrt(self.m2 / self.count) / math.sqrt(self.count)


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else math.nan


def map_replicates(fn: Callable[[int], object], reps: int, threads: int = 1) -> list:
    """Evaluate ``fn(r)`` for r = 0..reps-1 and return results in index order.

    Each replicate derives its own random stream from its index, so the
    thread count changes scheduling only, never the results.
    """
    if threads <= 1 or reps < 2:
        return [fn(r) for r in range(reps)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(reps), chunksize=max(1, reps // (8 * threads))))
