"""Genealogical forest stored as a growable arena of individuals.

Individuals are integer indices into two row-major tables:

* ``ints[u] = (parent, root, first_child, n_children, slot)``
* ``times[u] = (birth, death)``

``root`` is the label (0..Z0-1) of the time-0 ancestor, ``slot`` the position
of ``u`` in the ``alive`` array (-1 once dead).  Children of one individual
occupy a contiguous index range in birth order and always come after their
parent, which encodes the planar (Ulam-Harris) order without string labels.
The first ``n_spine`` slots of ``alive`` hold distinguished (spine)
individuals.
"""

from __future__ import annotations

import csv
import math
from typing import Iterable, Sequence

import numba as nb
import numpy as np

PARENT, ROOT, FIRST, NCHILD, SLOT = range(5)
BIRTH, DEATH = 0, 1
# meta layout
SIZE, NALIVE, NSPINE, NROOTS = range(4)

INF = math.inf


class ForestError(ValueError):
    pass


# ---------------------------------------------------------------- kernels


@nb.njit(cache=True, nogil=True)
def _record_death(ints, times, alive, meta, u, t, n, heir):
    size = meta[SIZE]
    s = ints[u, SLOT]
    times[u, DEATH] = t
    ints[u, FIRST] = size
    ints[u, NCHILD] = n
    ints[u, SLOT] = -1
    r = ints[u, ROOT]
    for j in range(n):
        c = size + j
        ints[c, PARENT] = u
        ints[c, ROOT] = r
        ints[c, FIRST] = -1
        ints[c, NCHILD] = 0
        ints[c, SLOT] = -1
        times[c, BIRTH] = t
        times[c, DEATH] = np.inf
    meta[SIZE] = size + n
    na = meta[NALIVE]
    if s < meta[NSPINE]:
        # spine slot passes to the designated child
        c = size + heir
        alive[s] = c
        ints[c, SLOT] = s
    else:
        last = na - 1
        if s != last:
            v = alive[last]
            alive[s] = v
            ints[v, SLOT] = s
        na -= 1
        heir = -1
    for j in range(n):
        if j == heir:
            continue
        c = size + j
        alive[na] = c
        ints[c, SLOT] = na
        na += 1
    meta[NALIVE] = na


@nb.njit(cache=True, nogil=True)
def _mrca(ints, times, u, v):
    if ints[u, ROOT] != ints[v, ROOT]:
        return -1
    # ancestors are born strictly earlier than their descendants
    while u != v:
        bu = times[u, BIRTH]
        bv = times[v, BIRTH]
        if bu > bv:
            u = ints[u, PARENT]
        elif bv > bu:
            v = ints[v, PARENT]
        else:
            u = ints[u, PARENT]
            v = ints[v, PARENT]
        if u < 0 or v < 0:
            return -1
    return u


@nb.njit(cache=True, nogil=True)
def _alive_counts(ints, size):
    cnt = np.zeros(size, np.int64)
    for u in range(size):
        if ints[u, SLOT] >= 0:
            cnt[u] = 1
    for u in range(size - 1, -1, -1):
        p = ints[u, PARENT]
        if p >= 0:
            cnt[p] += cnt[u]
    return cnt


@nb.njit(cache=True, nogil=True)
def _spectrum(ints, times, size, t):
    cnt = np.zeros(size, np.int64)
    sq = np.zeros(size, np.float64)
    for u in range(size):
        if ints[u, SLOT] >= 0:
            cnt[u] = 1
    for u in range(size - 1, -1, -1):
        p = ints[u, PARENT]
        if p >= 0:
            cnt[p] += cnt[u]
            sq[p] += float(cnt[u]) * float(cnt[u])
    m = 0
    for u in range(size):
        if ints[u, SLOT] < 0 and cnt[u] > 1:
            if float(cnt[u]) * float(cnt[u]) > sq[u]:
                m += 1
    dur = np.empty(m, np.float64)
    pairs = np.empty(m, np.float64)
    anc = np.empty(m, np.int64)
    i = 0
    for u in range(size):
        if ints[u, SLOT] < 0 and cnt[u] > 1:
            c2 = float(cnt[u]) * float(cnt[u])
            if c2 > sq[u]:
                dur[i] = t - times[u, DEATH]
                pairs[i] = 0.5 * (c2 - sq[u])
                anc[i] = u
                i += 1
    return dur, pairs, anc


@nb.njit(cache=True, nogil=True)
def _planar_ranks(ints, size):
    """Rank of each alive individual in planar order (-1 for the dead)."""
    rank = np.full(size, -1, np.int64)
    stack = np.empty(size, np.int64)
    top = 0
    for u in range(size - 1, -1, -1):
        if ints[u, PARENT] < 0:
            stack[top] = u
            top += 1
    r = 0
    while top > 0:
        top -= 1
        u = stack[top]
        if ints[u, SLOT] >= 0:
            rank[u] = r
            r += 1
        else:
            f = ints[u, FIRST]
            for c in range(f + ints[u, NCHILD] - 1, f - 1, -1):
                stack[top] = c
                top += 1
    return rank


@nb.njit(cache=True, nogil=True)
def _rank_intervals(ints, rank, size):
    lo = np.full(size, np.iinfo(np.int64).max, np.int64)
    hi = np.full(size, -1, np.int64)
    for u in range(size):
        if rank[u] >= 0:
            lo[u] = rank[u]
            hi[u] = rank[u]
    for u in range(size - 1, -1, -1):
        p = ints[u, PARENT]
        if p >= 0 and hi[u] >= 0:
            if lo[u] < lo[p]:
                lo[p] = lo[u]
            if hi[u] > hi[p]:
                hi[p] = hi[u]
    return lo, hi


@nb.njit(cache=True, nogil=True)
def _follow(ints, cnt, keep, c):
    while not keep[c]:
        f = ints[c, FIRST]
        for x in range(f, f + ints[c, NCHILD]):
            if cnt[x] > 0:
                c = x
                break
    return c


@nb.njit(cache=True, nogil=True)
def _prune(ints, times, alive, meta):
    size = meta[SIZE]
    cnt = _alive_counts(ints, size)
    keep = np.zeros(size, np.bool_)
    for u in range(size):
        if cnt[u] == 0:
            continue
        if ints[u, SLOT] >= 0:
            keep[u] = True
        else:
            f = ints[u, FIRST]
            k = 0
            for c in range(f, f + ints[u, NCHILD]):
                if cnt[c] > 0:
                    k += 1
            keep[u] = k >= 2
    n_keep = 0
    for u in range(size):
        if keep[u]:
            n_keep += 1
    order = np.empty(n_keep, np.int64)
    newid = np.full(size, -1, np.int64)
    newpar = np.full(n_keep, -1, np.int64)
    newfirst = np.full(n_keep, -1, np.int64)
    newn = np.zeros(n_keep, np.int64)
    nxt = 0
    for u in range(size):
        if ints[u, PARENT] < 0 and cnt[u] > 0:
            r = _follow(ints, cnt, keep, u)
            newid[r] = nxt
            order[nxt] = r
            nxt += 1
    head = 0
    while head < nxt:
        w = order[head]
        head += 1
        if ints[w, SLOT] >= 0:
            continue
        newfirst[newid[w]] = nxt
        f = ints[w, FIRST]
        for c in range(f, f + ints[w, NCHILD]):
            if cnt[c] > 0:
                r = _follow(ints, cnt, keep, c)
                newid[r] = nxt
                order[nxt] = r
                newpar[nxt] = newid[w]
                nxt += 1
        newn[newid[w]] = nxt - newfirst[newid[w]]
    cap = max(2 * n_keep, 16)
    ints2 = np.empty((cap, 5), np.int64)
    times2 = np.empty((cap, 2), np.float64)
    for i in range(n_keep):
        u = order[i]
        ints2[i, PARENT] = newpar[i]
        ints2[i, ROOT] = ints[u, ROOT]
        ints2[i, FIRST] = newfirst[i]
        ints2[i, NCHILD] = newn[i]
        ints2[i, SLOT] = ints[u, SLOT]
        times2[i, BIRTH] = times[u, BIRTH]
        times2[i, DEATH] = times[u, DEATH]
    alive2 = np.empty(cap, np.int64)
    for s in range(meta[NALIVE]):
        alive2[s] = newid[alive[s]]
    meta[SIZE] = n_keep
    return ints2, times2, alive2


# ---------------------------------------------------------------- forest


class Forest:
    """Arena of individuals with birth/death times and parent/child links."""

    def __init__(self, n_roots: int = 0, capacity: int = 64, n_spine: int = 0):
        if n_roots < 0:
            raise ForestError("n_roots must be >= 0")
        if not 0 <= n_spine <= n_roots:
            raise ForestError("spine count must lie in [0, n_roots]")
        cap = max(capacity, 2 * n_roots, 16)
        self.ints = np.empty((cap, 5), np.int64)
        self.times = np.empty((cap, 2), np.float64)
        self.alive = np.empty(cap, np.int64)
        self.meta = np.array([n_roots, n_roots, n_spine, n_roots], np.int64)
        idx = np.arange(n_roots)
        self.ints[:n_roots, PARENT] = -1
        self.ints[:n_roots, ROOT] = idx
        self.ints[:n_roots, FIRST] = -1
        self.ints[:n_roots, NCHILD] = 0
        self.ints[:n_roots, SLOT] = idx
        self.times[:n_roots, BIRTH] = 0.0
        self.times[:n_roots, DEATH] = INF
        self.alive[:n_roots] = idx
        self.now = 0.0
        self.pruned = False

    # basic accessors ----------------------------------------------------

    @property
    def size(self) -> int:
        return int(self.meta[SIZE])

    @property
    def n_alive(self) -> int:
        return int(self.meta[NALIVE])

    @property
    def n_roots(self) -> int:
        return int(self.meta[NROOTS])

    @property
    def n_spine(self) -> int:
        return int(self.meta[NSPINE])

    def __len__(self):
        return self.size

    def alive_ids(self) -> np.ndarray:
        return self.alive[: self.n_alive].copy()

    def spine_carriers(self) -> np.ndarray:
        return self.alive[: self.n_spine].copy()

    def is_alive(self, u: int) -> bool:
        return 0 <= u < self.size and self.ints[u, SLOT] >= 0

    def parent(self, u: int) -> int:
        return int(self.ints[u, PARENT])

    def root_of(self, u: int) -> int:
        return int(self.ints[u, ROOT])

    def birth(self, u: int) -> float:
        return float(self.times[u, BIRTH])

    def death(self, u: int) -> float:
        return float(self.times[u, DEATH])

    def children(self, u: int) -> range:
        f = int(self.ints[u, FIRST])
        if f < 0:
            return range(0)
        return range(f, f + int(self.ints[u, NCHILD]))

    def copy(self) -> "Forest":
        other = Forest.__new__(Forest)
        other.ints = self.ints.copy()
        other.times = self.times.copy()
        other.alive = self.alive.copy()
        other.meta = self.meta.copy()
        other.now = self.now
        other.pruned = self.pruned
        return other

    # mutation -----------------------------------------------------------

    def reserve(self, extra: int) -> None:
        need = self.size + extra
        cap = self.ints.shape[0]
        if need <= cap:
            return
        cap2 = max(2 * cap, need)
        ints = np.empty((cap2, 5), np.int64)
        times = np.empty((cap2, 2), np.float64)
        alive = np.empty(cap2, np.int64)
        n = self.size
        ints[:n] = self.ints[:n]
        times[:n] = self.times[:n]
        alive[: self.n_alive] = self.alive[: self.n_alive]
        self.ints, self.times, self.alive = ints, times, alive

    def record_death(self, u: int, t: float, n_offspring: int, heir: int | None = None) -> range:
        """Kill ``u`` at time ``t`` and append its ``n_offspring`` children.

        If ``u`` carries a spine, child number ``heir`` inherits it.
        Returns the arena range of the new children.
        """
        if not self.is_alive(u):
            raise ForestError(f"individual {u} is not alive")
        if t < self.now:
            raise ForestError(f"time {t} is before current time {self.now}")
        if n_offspring < 0:
            raise ForestError("offspring count must be >= 0")
        spine = self.ints[u, SLOT] < self.n_spine
        if spine:
            if heir is None or not 0 <= heir < n_offspring:
                raise ForestError("a spine individual needs a designated heir among >= 1 children")
        self.reserve(n_offspring)
        start = self.size
        _record_death(self.ints, self.times, self.alive, self.meta, int(u), float(t),
                      int(n_offspring), int(heir if spine else -1))
        self.now = float(t)
        return range(start, start + n_offspring)

    def prune(self) -> "Forest":
        """Drop dead lines without alive descendants and splice out unary dead nodes.

        Distances, MRCA depths, subfamily sizes and the coalescence spectrum
        among alive individuals are unchanged.  After pruning a child's birth
        time may exceed its parent's death time (spliced edges keep the
        child's own times).  Arena indices are renumbered in place.
        """
        ints, times, alive = _prune(self.ints, self.times, self.alive, self.meta)
        self.ints, self.times, self.alive = ints, times, alive
        self.pruned = True
        return self

    def advance(self, t: float) -> None:
        if t < self.now:
            raise ForestError("cannot move time backwards")
        self.now = float(t)

    # queries ------------------------------------------------------------

    def mrca(self, u: int, v: int) -> int | None:
        w = _mrca(self.ints, self.times, int(u), int(v))
        return None if w < 0 else int(w)

    def pairwise_distance(self, t: float, u: int, v: int) -> float:
        """D_t(u, v) = t - death(u ^ v); 0 for u == v, inf across roots."""
        if not (self.is_alive(u) and self.is_alive(v)):
            raise ForestError("pairwise distance is defined for alive individuals only")
        if t < self.now:
            raise ForestError("query time precedes the last recorded event")
        if u == v:
            return 0.0
        w = _mrca(self.ints, self.times, int(u), int(v))
        return INF if w < 0 else t - float(self.times[w, DEATH])

    def subfamily_sizes(self) -> np.ndarray:
        """Alive descendants of each time-0 root, indexed by root label."""
        roots = self.ints[self.alive[: self.n_alive], ROOT]
        return np.bincount(roots, minlength=self.n_roots).astype(np.int64)

    def coalescence_spectrum(self, t: float | None = None) -> list[tuple[float, int]]:
        """(t - death(w), number of alive pairs with MRCA w) over branching ancestors w."""
        dur, pairs, _ = self.spectrum_arrays(t)
        return [(float(a), int(b)) for a, b in zip(dur, pairs)]

    def spectrum_arrays(self, t: float | None = None):
        t = self.now if t is None else float(t)
        return _spectrum(self.ints, self.times, self.size, t)

    def n_cross_root_pairs(self) -> int:
        s = self.subfamily_sizes().astype(float)
        return int(round(0.5 * (s.sum() ** 2 - (s * s).sum())))

    def planar_ranks(self) -> np.ndarray:
        return _planar_ranks(self.ints, self.size)

    def planar_order(self) -> np.ndarray:
        """Alive individuals sorted in planar order."""
        rank = self.planar_ranks()
        ids = self.alive[: self.n_alive]
        return ids[np.argsort(rank[ids], kind="stable")]

    def planar_sort(self, ids: Iterable[int]) -> list[int]:
        rank = self.planar_ranks()
        return sorted((int(u) for u in ids), key=lambda u: rank[u])

    def label(self, u: int) -> tuple[int, ...]:
        """Ulam-Harris label (1-based), for debugging unpruned forests."""
        path = []
        while True:
            p = int(self.ints[u, PARENT])
            if p < 0:
                path.append(int(self.ints[u, ROOT]) + 1)
                break
            path.append(u - int(self.ints[p, FIRST]) + 1)
            u = p
        return tuple(reversed(path))

    # export -------------------------------------------------------------

    def to_csv(self, path) -> None:
        """Dump ``id,parent,birth,death,root``; alive individuals have death ``inf``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "parent", "birth", "death", "root"])
            for u in range(self.size):
                w.writerow([u, int(self.ints[u, PARENT]), repr(float(self.times[u, BIRTH])),
                            repr(float(self.times[u, DEATH])), int(self.ints[u, ROOT])])

    def to_newick(self, sample: Sequence[int] | None = None, t: float | None = None) -> str:
        """Newick (one tree per line, per root family) of the genealogy spanned by ``sample``.

        Leaves are named ``n<id>``; branch lengths are in time units, with
        the top of each tree measured from time 0.
        """
        t = self.now if t is None else float(t)
        sample = self.planar_order() if sample is None else self.planar_sort(sample)
        leaves = set(int(x) for x in sample)
        kids: dict[int, set[int]] = {}
        seen: set[int] = set()
        tops: list[int] = []
        for leaf in sample:
            u = int(leaf)
            while u not in seen:
                seen.add(u)
                p = int(self.ints[u, PARENT])
                if p < 0:
                    tops.append(u)
                    break
                kids.setdefault(p, set()).add(u)
                u = p

        def collapse(u):
            while u not in leaves and len(kids.get(u, ())) == 1:
                u = next(iter(kids[u]))
            return u

        def render(u, start):
            if u in leaves:
                return f"n{u}:{t - start:.12g}"
            end = float(self.times[u, DEATH])
            inner = ",".join(render(collapse(c), end) for c in sorted(kids[u]))
            return f"({inner})n{u}:{end - start:.12g}"

        tops.sort(key=lambda u: int(self.ints[u, ROOT]))
        return "\n".join(render(collapse(top), 0.0) + ";" for top in tops)
