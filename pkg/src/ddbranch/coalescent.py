"""Planar coalescents: extraction from a forest, first-merger pruning, de-planarization
and the reference planar Kingman coalescent.

A planar coalescent on k ordered leaves is a list of events (tau, j, d): at
backward time tau the d consecutive blocks starting at block j (1-based)
merge.  Blocks are always intervals of consecutive leaves.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .forest import DEATH, Forest


class CoalescentError(ValueError):
    pass


@dataclass(frozen=True)
class PlanarCoalescent:
    k: int
    horizon: float
    taus: tuple[float, ...] = ()
    js: tuple[int, ...] = ()
    ds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.k < 0:
            raise CoalescentError("leaf count must be >= 0")
        if not (len(self.taus) == len(self.js) == len(self.ds)):
            raise CoalescentError("event arrays differ in length")
        blocks = self.k
        prev = -math.inf
        for tau, j, d in zip(self.taus, self.js, self.ds):
            if not tau > prev:
                raise CoalescentError("event times must be strictly increasing")
            if not tau < self.horizon:
                raise CoalescentError(f"event at {tau} is not before the horizon {self.horizon}")
            if d < 2 or not 1 <= j <= blocks - d + 1:
                raise CoalescentError(f"invalid merger (j={j}, d={d}) with {blocks} blocks")
            blocks -= d - 1
            prev = tau

    @classmethod
    def from_events(cls, k: int, horizon: float, events: Sequence[tuple[float, int, int]]):
        taus = tuple(float(e[0]) for e in events)
        js = tuple(int(e[1]) for e in events)
        ds = tuple(int(e[2]) for e in events)
        return cls(k, float(horizon), taus, js, ds)

    @property
    def events(self) -> list[tuple[float, int, int]]:
        return list(zip(self.taus, self.js, self.ds))

    @property
    def n_events(self) -> int:
        return len(self.taus)

    @property
    def first(self) -> tuple[float, int, int] | None:
        return self.events[0] if self.taus else None

    def block_counts(self) -> list[int]:
        """Block count after each event, starting with k."""
        out = [self.k]
        for d in self.ds:
            out.append(out[-1] - (d - 1))
        return out

    def blocks_at(self, tau: float) -> list[list[int]]:
        """Interval blocks (1-based leaves) of the partition at backward time ``tau``."""
        blocks = [[i] for i in range(1, self.k + 1)]
        for t, j, d in self.events:
            if t > tau:
                break
            merged = [x for b in blocks[j - 1 : j - 1 + d] for x in b]
            blocks[j - 1 : j - 1 + d] = [merged]
        return blocks

    def rescale(self, factor: float) -> "PlanarCoalescent":
        return rescale(self, factor)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "j", "d"])
            for tau, j, d in self.events:
                w.writerow([repr(tau), j, d])


@dataclass(frozen=True)
class PartitionPath:
    """Step function tau -> partition of {1..k}, stored at its jump times."""

    k: int
    horizon: float
    times: tuple[float, ...]
    partitions: tuple[tuple[tuple[int, ...], ...], ...]

    def at(self, tau: float) -> tuple[tuple[int, ...], ...]:
        i = int(np.searchsorted(self.times, tau, side="right")) - 1
        return self.partitions[max(i, 0)]

    def holding_times(self) -> list[float]:
        return list(np.diff(self.times))

    def merged_sets(self) -> list[tuple[int, ...]]:
        """Union of the blocks merging at each jump, in order."""
        out = []
        for a, b in zip(self.partitions, self.partitions[1:]):
            new = [blk for blk in b if blk not in a]
            out.append(tuple(sorted(x for blk in new for x in blk)))
        return out

    def to_json(self) -> str:
        return json.dumps([[t, [list(b) for b in p]] for t, p in zip(self.times, self.partitions)])


# ---------------------------------------------------------------- operations


def extract(forest: Forest, t: float, sample: Sequence[int], horizon: float | None = None,
            check_order: bool = True) -> PlanarCoalescent:
    """Planar coalescent of ``sample`` (alive individuals in planar order) at time ``t``.

    Leaves i and j share a block at backward time tau iff D_t(v_i, v_j) < tau,
    with blocks switching at tau = D (right-continuous).  Sample members whose
    lineages meet at the same ancestor merge in one event.  Pairs from
    different roots never merge; events at tau >= horizon (default ``t``) are
    dropped.
    """
    sample = [int(u) for u in sample]
    k = len(sample)
    horizon = float(t) if horizon is None else float(horizon)
    for u in sample:
        if not forest.is_alive(u):
            raise CoalescentError(f"sample member {u} is not alive")
    if len(set(sample)) != k:
        raise CoalescentError("sample members must be distinct")
    if check_order and k > 1:
        rank = forest.planar_ranks()
        if np.any(np.diff(rank[sample]) <= 0):
            raise CoalescentError("sample is not sorted in planar order")
    # consecutive gaps grouped by the ancestor at which they close
    groups: dict[int, list[int]] = {}
    for i in range(k - 1):
        w = forest.mrca(sample[i], sample[i + 1])
        if w is not None:
            groups.setdefault(w, []).append(i)
    order = sorted(groups, key=lambda w: (-forest.times[w, DEATH], w))
    starts = list(range(k))  # leftmost leaf of each current block
    events = []
    for w in order:
        tau = float(t - forest.times[w, DEATH])
        if tau >= horizon:
            break
        gaps = groups[w]
        left = gaps[0]
        j = int(np.searchsorted(starts, left, side="right"))  # 1-based block of leaf `left`
        d = len(gaps) + 1
        del starts[j : j + d - 1]
        if events and tau <= events[-1][0]:
            # exact tie between distinct ancestors: nudge order is by arena index,
            # and the coalescent records them as separate events an ulp apart
            tau = math.nextafter(events[-1][0], math.inf)
        events.append((tau, j, d))
    return PlanarCoalescent.from_events(k, horizon, events)


def theta_prune(coal: PlanarCoalescent) -> PlanarCoalescent:
    """Drop the first merger and shift time: the coalescent of the k - d1 + 1 remaining lineages."""
    if coal.n_events == 0:
        raise CoalescentError("theta_prune needs at least one event")
    tau1, _, d1 = coal.first
    ev = [(tau - tau1, j, d) for tau, j, d in coal.events[1:]]
    return PlanarCoalescent.from_events(coal.k - d1 + 1, coal.horizon - tau1, ev)


def rescale(coal: PlanarCoalescent, factor: float) -> PlanarCoalescent:
    if not factor > 0:
        raise CoalescentError("rescale factor must be > 0")
    return PlanarCoalescent(coal.k, coal.horizon * factor, tuple(t * factor for t in coal.taus),
                            coal.js, coal.ds)


def deplanarize(coal: PlanarCoalescent, rng: np.random.Generator | None = None,
                perm: Sequence[int] | None = None) -> PartitionPath:
    """Relabel leaves by a uniform permutation and return the plain partition path.

    ``perm`` (a permutation of 1..k, leaf i -> perm[i-1]) overrides the random draw.
    """
    k = coal.k
    if perm is None:
        if rng is None:
            raise CoalescentError("deplanarize needs an rng or an explicit permutation")
        sigma = rng.permutation(k) + 1
    else:
        sigma = np.asarray(perm, dtype=np.int64)
        if sorted(sigma.tolist()) != list(range(1, k + 1)):
            raise CoalescentError("perm must be a permutation of 1..k")

    def relabel(blocks):
        out = [tuple(sorted(int(sigma[i - 1]) for i in b)) for b in blocks]
        return tuple(sorted(out))

    times = [0.0] + list(coal.taus)
    parts = [relabel(coal.blocks_at(-1.0))] + [relabel(coal.blocks_at(t)) for t in coal.taus]
    return PartitionPath(k, coal.horizon, tuple(times), tuple(parts))


def simulate_planar_kingman(k: int, r: float, horizon: float, rng: np.random.Generator) -> PlanarCoalescent:
    """Planar k-Kingman coalescent: with p blocks each consecutive pair merges at rate C(p,2) r/(p-1)."""
    if k < 1:
        raise CoalescentError("k must be >= 1")
    if not r > 0:
        raise CoalescentError("rate must be > 0")
    p, tau, events = k, 0.0, []
    while p > 1:
        tau += rng.exponential(1.0 / (r * p * (p - 1) / 2))
        if tau >= horizon:
            break
        j = 1 + int(rng.integers(p - 1))
        events.append((tau, j, 2))
        p -= 1
    return PlanarCoalescent.from_events(k, horizon, events)


def simulate_kingman_partition(k: int, r: float, horizon: float, rng: np.random.Generator) -> PartitionPath:
    """Plain k-Kingman coalescent (every pair merges at rate r), used as a reference."""
    blocks = [(i,) for i in range(1, k + 1)]
    tau, times, parts = 0.0, [0.0], [tuple(blocks)]
    while len(blocks) > 1:
        p = len(blocks)
        tau += rng.exponential(1.0 / (r * p * (p - 1) / 2))
        if tau >= horizon:
            break
        a, b = sorted(rng.choice(p, 2, replace=False))
        merged = tuple(sorted(blocks[a] + blocks[b]))
        blocks = sorted([x for i, x in enumerate(blocks) if i not in (a, b)] + [merged])
        times.append(tau)
        parts.append(tuple(blocks))
    return PartitionPath(k, horizon, tuple(times), tuple(parts))
