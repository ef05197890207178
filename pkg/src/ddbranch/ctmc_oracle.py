"""Exact transient analysis of the population-size chain on a truncated window.

The chain under the k-spine measure jumps n -> n + l - 1 at rate
q(n/K) p_l(n/K) ((n - k) + k l): (n - k) ordinary individuals reproduce with
the plain law and k spine individuals at rate q m with the size-biased law,
whose combined weight is k q l p_l.  Jumps leaving the window go to an
absorbing sink so truncation error is visible as absorbed mass.  The
Feynman-Kac potential is V(n) = k q(n/K) (m(n/K) - 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numba as nb
import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply
from scipy.stats import poisson

from .offspring import law_mean, law_pmf, rate_eval

POLICIES = ("absorb-at-edges", "reflect-reject")
MAX_UNIFORMIZATION_TERMS = 5_000_000


class OracleError(RuntimeError):
    pass


@nb.njit(cache=True)
def _pmf_matrix(fam, par, zg, tab, cap, zs):
    out = np.empty((zs.shape[0], cap + 1))
    for i in range(zs.shape[0]):
        for n in range(cap + 1):
            out[i, n] = law_pmf(fam, par, zg, tab, cap, zs[i], n)
    return out


@dataclass
class TruncatedGenerator:
    """Generator A = R - diag(R 1 + exit) on states n_min..n_max, plus a potential V.

    ``ordinary`` and ``spine`` hold the two parts of the off-diagonal rates
    (rates = ordinary + spine); ``exit_*`` the rates into the absorbing sink.
    """

    n_min: int
    n_max: int
    K: float
    k: int
    ordinary: sp.csr_matrix
    spine: sp.csr_matrix
    exit_ordinary: np.ndarray
    exit_spine: np.ndarray
    potential: np.ndarray
    policy: str = "absorb-at-edges"
    config: object = field(default=None, repr=False, compare=False)

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1)

    @property
    def size(self) -> int:
        return self.n_max - self.n_min + 1

    @property
    def rates(self) -> sp.csr_matrix:
        return (self.ordinary + self.spine).tocsr()

    @property
    def exit_rates(self) -> np.ndarray:
        return self.exit_ordinary + self.exit_spine

    @property
    def out_rates(self) -> np.ndarray:
        return np.asarray(self.rates.sum(axis=1)).ravel() + self.exit_rates

    def matrix(self, with_potential: bool = False) -> sp.csr_matrix:
        """A (or A + diag V) as a sparse matrix acting on column vectors of test functions."""
        diag = -self.out_rates
        if with_potential:
            diag = diag + self.potential
        return (self.rates + sp.diags(diag)).tocsr()

    def index(self, n: int) -> int:
        if not self.n_min <= n <= self.n_max:
            raise OracleError(f"state {n} outside window [{self.n_min}, {self.n_max}]")
        return int(n - self.n_min)

    def with_plain_spines(self) -> "TruncatedGenerator":
        """Replace the spine part by k individuals reproducing with the plain law, V = 0.

        For a window starting at k this reproduces the k = 0 generator, which
        is the symmetry check between the two constructions.
        """
        if self.k == 0:
            return replace(self, potential=np.zeros(self.size))
        mat, ex = _rates(self.config, self.n_min, self.n_max, 0.0, self.policy,
                         np.full(self.size, self.k), False)
        return replace(self, spine=mat, exit_spine=ex, potential=np.zeros(self.size))

    def to_csv(self, path) -> None:
        """Sparse triplets ``from,to,rate``; jumps into the sink have ``to = sink``."""
        coo = self.rates.tocoo()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from", "to", "rate"])
            order = np.lexsort((coo.col, coo.row))
            for i in order:
                w.writerow([int(coo.row[i]) + self.n_min, int(coo.col[i]) + self.n_min, repr(float(coo.data[i]))])
            for i, r in enumerate(self.exit_rates):
                if r > 0:
                    w.writerow([i + self.n_min, "sink", repr(float(r))])


def _rates(config, n_min: int, n_max: int, bound: float, policy: str, count, biased: bool):
    """Off-diagonal rates and exit vector when ``count[n]`` individuals reproduce.

    With ``biased`` the individuals branch at rate q m with the size-biased
    law, i.e. jump weight q l p_l; otherwise at rate q with the plain law.
    """
    states = np.arange(n_min, n_max + 1)
    zs = states / float(config.K)
    fam, par, zg, tab, cap = config.law.kernel
    pm = _pmf_matrix(fam, par, zg, tab, cap, zs)
    if bound > 0:
        worst = 1.0 - pm.sum(axis=1).min()
        if worst > bound:
            raise OracleError(f"offspring tail mass {worst:.3g} exceeds the bound {bound:.3g}")
    qv = np.array([rate_eval(*config.q.kernel, z) for z in zs])
    ell = np.arange(cap + 1)
    w = (qv * np.asarray(count, dtype=float))[:, None] * pm
    if biased:
        w = w * ell[None, :]
    if cap >= 1:
        w[:, 1] = 0.0  # l = 1 leaves the size unchanged
    tgt = states[:, None] + ell[None, :] - 1
    inside = (tgt >= n_min) & (tgt <= n_max) & (w > 0)
    rows = np.broadcast_to(np.arange(states.size)[:, None], w.shape)[inside]
    mat = sp.csr_matrix((w[inside], (rows, (tgt - n_min)[inside])), shape=(states.size, states.size))
    outside = np.where(inside, 0.0, w).sum(axis=1)
    if policy == "reflect-reject":
        outside = np.zeros_like(outside)
    return mat, outside


def build_generator(config, k: int = 0, window: tuple[int, int] | None = None,
                    tail_mass_bound: float = 1e-10, policy: str = "absorb-at-edges") -> TruncatedGenerator:
    """Truncated generator of the size chain with k spines on ``window`` (default [k, 20 K])."""
    if policy not in POLICIES:
        raise OracleError(f"unknown boundary policy {policy!r}")
    if window is None:
        window = (max(k, 0), int(math.ceil(20 * config.K)))
    n_min, n_max = int(window[0]), int(window[1])
    if n_min < k:
        raise OracleError("window must start at or above the spine count")
    if not n_min <= config.Z0 <= n_max:
        raise OracleError(f"window [{n_min}, {n_max}] does not contain Z0 = {config.Z0}")
    states = np.arange(n_min, n_max + 1)
    ordinary, exit_o = _rates(config, n_min, n_max, tail_mass_bound, policy, states - k, False)
    spine, exit_s = _rates(config, n_min, n_max, tail_mass_bound, policy, np.full(states.size, k), True)
    zs = states / float(config.K)
    lk = config.law.kernel
    pot = np.array([k * rate_eval(*config.q.kernel, z) * (law_mean(*lk, z) - 1.0) for z in zs])
    return TruncatedGenerator(n_min, n_max, float(config.K), int(k), ordinary, spine, exit_o, exit_s,
                              pot, policy, config)


# ---------------------------------------------------------------- propagation


def _initial(gen: TruncatedGenerator, init) -> np.ndarray:
    if np.isscalar(init):
        p = np.zeros(gen.size)
        p[gen.index(int(init))] = 1.0
        return p
    p = np.asarray(init, dtype=float)
    if p.shape != (gen.size,):
        raise OracleError("initial distribution has the wrong length")
    return p


@dataclass
class Transient:
    states: np.ndarray
    probs: np.ndarray
    absorbed: float
    terms: int

    def mean(self) -> float:
        return float(np.dot(self.states, self.probs))

    def expect(self, w: np.ndarray) -> float:
        return float(np.dot(w, self.probs))


def transient_distribution(gen: TruncatedGenerator, init, t: float, tail: float = 1e-12) -> Transient:
    """Law of Z_t by uniformization; the Poisson series is cut where its tail drops below ``tail``."""
    p = _initial(gen, init)
    mass0 = p.sum()
    if t == 0:
        return Transient(gen.states, p.copy(), 0.0, 0)
    out = gen.out_rates
    lam = float(out.max())
    if lam == 0.0:
        return Transient(gen.states, p.copy(), 0.0, 0)
    lt = lam * t
    n_hi = int(poisson.isf(tail, lt)) + 1
    n_lo = int(poisson.ppf(tail, lt))
    if n_hi > MAX_UNIFORMIZATION_TERMS:
        raise OracleError(f"uniformization needs {n_hi} terms (cap {MAX_UNIFORMIZATION_TERMS})")
    weights = poisson.pmf(np.arange(n_hi + 1), lt)
    # row-vector step p <- p P with P = I + A / lam
    pt = (gen.rates / lam).T.tocsr()
    keep = 1.0 - out / lam
    acc = np.zeros_like(p)
    for n in range(n_hi + 1):
        if n >= n_lo:
            acc += weights[n] * p
        p = pt @ p + keep * p
    return Transient(gen.states, acc, float(mass0 - acc.sum()), n_hi)


def feynman_kac_backward(gen: TruncatedGenerator, w: np.ndarray, times: Sequence[float],
                         rtol: float = 1e-10, atol: float = 1e-13, method: str = "ode") -> np.ndarray:
    """u(tau, n) = E_n[w(Z_tau) exp(int_0^tau V(Z_s) ds)] for every window state and each tau.

    Returns an array of shape (len(times), window size).  ``method`` is
    ``"ode"`` (adaptive RK45 on u' = (A + diag V) u) or ``"expm"``.
    """
    times = np.asarray(times, dtype=float)
    w = np.asarray(w, dtype=float)
    M = gen.matrix(with_potential=True)
    return _propagate(M, w, times, rtol, atol, method)


def feynman_kac_forward(gen: TruncatedGenerator, init, times: Sequence[float],
                        rtol: float = 1e-10, atol: float = 1e-13, method: str = "ode") -> np.ndarray:
    """mu(s, n) = E_init[1(Z_s = n) exp(int_0^s V)] for each s; shape (len(times), window size)."""
    times = np.asarray(times, dtype=float)
    M = gen.matrix(with_potential=True).T.tocsr()
    return _propagate(M, _initial(gen, init), times, rtol, atol, method)


def _propagate(M, y0, times, rtol, atol, method):
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise OracleError("evaluation times must be non-negative and sorted")
    out = np.empty((times.size, y0.size))
    if times.size == 0:
        return out
    if method == "expm":
        for i, t in enumerate(times):
            out[i] = expm_multiply(M * t, y0) if t > 0 else y0
        return out
    if method != "ode":
        raise OracleError(f"unknown method {method!r}")
    t_end = float(times[-1])
    if t_end == 0:
        out[:] = y0
        return out
    sol = solve_ivp(lambda _t, y: M @ y, (0.0, t_end), y0, method="RK45", t_eval=times,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise OracleError(f"ODE integration failed: {sol.message}")
    return sol.y.T.copy()


def feynman_kac(gen: TruncatedGenerator, init, t: float, w, rtol: float = 1e-10,
                atol: float = 1e-13, method: str = "ode") -> float:
    """E_init[w(Z_t) exp(int_0^t V(Z_s) ds)] on the truncated window (sink contributes 0)."""
    w = _weight_vector(gen, w)
    u = feynman_kac_backward(gen, w, [t], rtol, atol, method)[0]
    return float(u[gen.index(int(init))])


def _weight_vector(gen, w):
    if callable(w):
        return np.asarray(w(gen.states), dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return np.full(gen.size, float(w))
    return w


def psi_weight(config, psi: Callable | None) -> Callable[[np.ndarray], np.ndarray]:
    """n -> psi(n/K) exp(-beta n/K), the terminal weight of the base-case moment."""
    K, beta = float(config.K), float(config.beta)

    def w(n):
        z = np.asarray(n, dtype=float) / K
        val = np.ones_like(z) if psi is None else np.asarray(psi(z), dtype=float)
        return val * np.exp(-beta * z)

    return w


def exact_base_moment(config, k: int, t: float, psi: Callable | None = None,
                      window: tuple[int, int] | None = None, method: str = "ode") -> float:
    """e^{beta Z0/K} E_{Q^k}[psi(Z_t/K) e^{-beta Z_t/K} exp(int_0^t V)] on the truncated window."""
    if t == 0:
        z0 = config.Z0 / config.K
        return float(1.0 if psi is None else psi(np.array([z0]))[0])
    gen = build_generator(config, k, window)
    val = feynman_kac(gen, config.Z0, t, psi_weight(config, psi), method=method)
    return math.exp(config.beta * config.Z0 / config.K) * val


def window_leak(config, k: int, t: float, window: tuple[int, int] | None = None) -> float:
    """Mass absorbed at the window edges by time t under Q^k (truncation diagnostic)."""
    gen = build_generator(config, k, window)
    return transient_distribution(gen, config.Z0, t).absorbed
