"""Exact event-driven simulation of the population under P and under the k-spine measure.

Both processes share one compiled loop.  At population n with k distinguished
individuals, ordinary individuals die at total rate (n-k) q(n/K) and are
replaced by L(n/K) children; distinguished ones die at total rate
k m(n/K) q(n/K) and are replaced by a size-biased brood L^(1)(n/K), one
uniformly chosen child inheriting the mark.  With k = 0 this is the original
process.  The integral of q(Z/K)(m(Z/K)-1) is accumulated exactly over each
holding interval.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numba as nb
import numpy as np

from .forest import Forest, SIZE, NALIVE, _record_death
from .offspring import BranchRate, OffspringLaw, law_mean, law_sample, law_sample_biased, rate_eval
from .stats import random_stream

DONE, CAP_EVENTS, CAP_POP, GROW_ARENA, GROW_TRAJ, PRUNE = range(6)
STATUS = {DONE: "completed", CAP_EVENTS: "capped-events", CAP_POP: "capped-population"}


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    K: float
    Z0: int
    law: OffspringLaw = field(default_factory=OffspringLaw.binary_logistic)
    q: BranchRate = field(default_factory=BranchRate.constant)
    k: int = 0
    t_max: float = 1.0
    max_events: int = 10**9
    max_pop: int | None = None
    beta: float = 0.5
    seed: int = 0
    prune_every: int | None = None

    def __post_init__(self):
        if not self.K > 0:
            raise ConfigError("carrying capacity K must be > 0")
        if self.Z0 < 0:
            raise ConfigError("Z0 must be >= 0")
        if self.k < 0:
            raise ConfigError("spine count k must be >= 0")
        if self.Z0 < self.k:
            raise ConfigError(f"Z0 = {self.Z0} is below the spine count k = {self.k}")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if not self.t_max >= 0:
            raise ConfigError("t_max must be >= 0")
        if self.max_pop is None:
            self.max_pop = int(math.ceil(20 * self.K))
        if self.prune_every is None:
            self.prune_every = max(int(2 * self.K), 1)
        if self.max_events <= 0 or self.max_pop <= 0:
            raise ConfigError("caps must be positive")

    def replace(self, **kw) -> "SimConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K, "Z0": self.Z0, "law": self.law.to_dict(), "q": self.q.to_dict(),
            "k": self.k, "t_max": self.t_max, "max_events": self.max_events,
            "max_pop": self.max_pop, "beta": self.beta, "seed": self.seed,
            "prune_every": self.prune_every,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], base=None) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = dict(d)
        try:
            if "law" in d:
                kw["law"] = OffspringLaw.from_dict(d["law"], base)
            if "q" in d:
                kw["q"] = BranchRate.from_dict(d["q"])
            return cls(**kw)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def assumption_window(self) -> tuple[float, float]:
        return (0.5, 1.5)


@dataclass
class Trajectory:
    """Piecewise-constant population path with its Feynman-Kac integral."""

    times: np.ndarray
    sizes: np.ndarray
    K: float
    k: int
    end_time: float
    drift_integral: float
    status: str
    n_events: int

    @property
    def fk_integral(self) -> float:
        """k times the integral of q(Z/K)(m(Z/K) - 1) over [0, end_time]."""
        return self.k * self.drift_integral

    @property
    def final_size(self) -> int:
        return int(self.sizes[-1])

    def population_at(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.sizes[max(i, 0)])

    def recompute_drift_integral(self, law: OffspringLaw, q: BranchRate) -> float:
        """Integral of q(m-1) re-derived from the stored path, same summation order."""
        lk, rk = law.kernel, q.kernel
        ends = np.append(self.times[1:], self.end_time)
        acc = 0.0
        for t0, t1, n in zip(self.times, ends, self.sizes):
            z = n / self.K
            acc += (t1 - t0) * rate_eval(*rk, z) * (law_mean(*lk, z) - 1.0)
        return acc

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "population"])
            for t, n in zip(self.times, self.sizes):
                w.writerow([repr(float(t)), int(n)])
            if self.end_time > self.times[-1]:
                w.writerow([repr(float(self.end_time)), int(self.sizes[-1])])


# ---------------------------------------------------------------- core


@nb.njit(cache=True, nogil=True)
def _sim_core(ints, times, alive, meta, fstate, istate, traj_t, traj_n,
              lfam, lpar, lzg, ltab, lcap, qfam, qpar, qzg, qval,
              K, k, t_max, max_events, max_pop, prune_every, genealogy, rng):
    # fstate = [now, drift integral]; istate = [n, events, traj length, events since prune]
    while True:
        n = istate[0]
        if genealogy:
            if meta[SIZE] + lcap > ints.shape[0]:
                return GROW_ARENA
            if prune_every > 0 and istate[3] >= prune_every:
                istate[3] = 0
                return PRUNE
        if istate[2] >= traj_t.shape[0]:
            return GROW_TRAJ
        now = fstate[0]
        z = n / K
        qq = rate_eval(qfam, qpar, qzg, qval, z)
        mm = law_mean(lfam, lpar, lzg, ltab, lcap, z)
        r_ord = (n - k) * qq
        r_sp = k * mm * qq
        total = r_ord + r_sp
        if total > 0.0:
            dt = -math.log1p(-rng.random()) / total
        else:
            dt = np.inf
        if now + dt >= t_max:
            fstate[1] += (t_max - now) * qq * (mm - 1.0)
            fstate[0] = t_max
            return DONE
        fstate[1] += dt * qq * (mm - 1.0)
        now += dt
        fstate[0] = now
        if rng.random() * total < r_ord:
            kappa = law_sample(lfam, lpar, lzg, ltab, lcap, z, rng.random())
            if genealogy:
                m = n - k
                slot = k + min(int(rng.random() * m), m - 1)
                _record_death(ints, times, alive, meta, alive[slot], now, kappa, -1)
        else:
            kappa = law_sample_biased(lfam, lpar, lzg, ltab, lcap, z, 1, 0.0, mm, rng.random())
            if genealogy:
                slot = min(int(rng.random() * k), k - 1)
                heir = min(int(rng.random() * kappa), kappa - 1)
                _record_death(ints, times, alive, meta, alive[slot], now, kappa, heir)
        n += kappa - 1
        istate[0] = n
        istate[1] += 1
        istate[3] += 1
        traj_t[istate[2]] = now
        traj_n[istate[2]] = n
        istate[2] += 1
        if n > max_pop:
            return CAP_POP
        if istate[1] >= max_events:
            return CAP_EVENTS


_DUMMY_INTS = np.zeros((1, 5), np.int64)
_DUMMY_TIMES = np.zeros((1, 2), np.float64)
_DUMMY_ALIVE = np.zeros(1, np.int64)


def _simulate(config: SimConfig, k: int, rng: np.random.Generator, genealogy: bool,
              t_max: float | None = None) -> tuple[Trajectory, Forest | None]:
    t_max = config.t_max if t_max is None else float(t_max)
    forest = Forest(config.Z0, capacity=max(64, 4 * config.Z0), n_spine=k) if genealogy else None
    cap = 256
    traj_t = np.empty(cap)
    traj_n = np.empty(cap, np.int64)
    traj_t[0] = 0.0
    traj_n[0] = config.Z0
    fstate = np.zeros(2)
    istate = np.array([config.Z0, 0, 1, 0], np.int64)
    meta = forest.meta if genealogy else np.zeros(4, np.int64)
    lk = config.law.kernel
    qk = config.q.kernel
    while True:
        if genealogy:
            ints, times, alive = forest.ints, forest.times, forest.alive
        else:
            ints, times, alive = _DUMMY_INTS, _DUMMY_TIMES, _DUMMY_ALIVE
        code = _sim_core(ints, times, alive, meta, fstate, istate, traj_t, traj_n,
                         *lk, *qk, float(config.K), int(k), t_max, int(config.max_events),
                         int(config.max_pop), int(config.prune_every), genealogy, rng)
        if code == GROW_ARENA:
            forest.reserve(config.law.tail_cap + forest.size)
        elif code == PRUNE:
            forest.prune()
        elif code == GROW_TRAJ:
            traj_t = np.concatenate([traj_t, np.empty(traj_t.size)])
            traj_n = np.concatenate([traj_n, np.empty(traj_n.size, np.int64)])
        else:
            break
    m = int(istate[2])
    traj = Trajectory(times=traj_t[:m].copy(), sizes=traj_n[:m].copy(), K=float(config.K), k=int(k),
                      end_time=float(fstate[0]), drift_integral=float(fstate[1]),
                      status=STATUS[code], n_events=int(istate[1]))
    if genealogy:
        forest.now = float(fstate[0])
    return traj, forest


def run_forward(config: SimConfig, rng: np.random.Generator, genealogy: bool = True,
                t_max: float | None = None):
    """Gillespie simulation of the original process (no spine) up to ``t_max``.

    Returns ``(trajectory, forest)``; the forest is ``None`` when
    ``genealogy`` is false.
    """
    return _simulate(config, 0, rng, genealogy, t_max)


def run_spine(config: SimConfig, rng: np.random.Generator, genealogy: bool = True,
              t_max: float | None = None):
    """Simulation under the k-spine measure with k = ``config.k``.

    The spine individuals start as roots 0..k-1 and occupy the first k alive
    slots of the forest.  With k = 0 the spine clocks vanish and the run is
    the forward process itself.
    """
    return _simulate(config, config.k, rng, genealogy, t_max)


def density_excursion(traj: Trajectory, gamma: float) -> float | None:
    """First time |Z_t/K - 1| >= gamma, or None if the path stays inside."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    out = np.nonzero(np.abs(traj.sizes / traj.K - 1.0) >= gamma)[0]
    return float(traj.times[out[0]]) if out.size else None


def replicate_stream(seed: int, tag: int, rep: int) -> np.random.Generator:
    """Random stream of replicate ``rep`` for the estimator family ``tag``."""
    return random_stream(seed, (int(tag) << 40) | int(rep))


def run_metadata(config: SimConfig, traj: Trajectory, **extra) -> dict[str, Any]:
    meta = {"seed": config.seed, "config_hash": config.config_hash(), "status": traj.status,
            "n_events": traj.n_events, "end_time": traj.end_time, "final_size": traj.final_size,
            "fk_integral": traj.fk_integral, "drift_integral": traj.drift_integral,
            "config": config.to_dict()}
    meta.update(extra)
    return meta
