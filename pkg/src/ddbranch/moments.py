"""Monte Carlo estimators of planar penalized moment measures and their exact counterparts.

For an initial population Z0 >= k the moment measure is

    M^{k,t}_{Z0}(phi, psi) = k! e^{beta Z0/K} / (Z0)_k
        * E[ psi(Z_t/K) e^{-beta Z_t/K} sum_{v1 < ... < vk} phi(Pi^v) ]

where the sum runs over k-samples of the population at time t listed in
planar order, so each k-subset is counted once.  At t = 0 every sample has
no merger and the normalization gives the value psi(Z0/K).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import ctmc_oracle as oracle
from .forest import DEATH, FIRST, NCHILD, PARENT, SLOT, Forest, _alive_counts, _rank_intervals
from .offspring import check_assumptions, law_mean, rate_eval
from .simulate import ConfigError, SimConfig, replicate_stream, run_forward, run_spine
from .stats import Accumulator, descending_factorial, elementary_symmetric, elementary_symmetric_all, map_replicates

# stream tags, one per estimator family
TAG_DIRECT, TAG_SPINAL, TAG_MARTINGALE = 1, 2, 3


class UnsupportedFunctional(ValueError):
    pass


class WeightOverflow(RuntimeError):
    pass


# ---------------------------------------------------------------- functionals


@dataclass(frozen=True)
class Psi:
    """Test function of the terminal density: one, identity or a table on a grid."""

    kind: str = "one"
    grid: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("one", "identity-density", "table-on-grid"):
            raise ValueError(f"unknown psi kind {self.kind!r}")
        if self.kind == "table-on-grid" and (len(self.grid) < 2 or len(self.grid) != len(self.values)):
            raise ValueError("table psi needs matching grid and values (>= 2 points)")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "one":
            return np.ones_like(z)
        if self.kind == "identity-density":
            return z.copy()
        return np.interp(z, self.grid, self.values)

    def scalar(self, z: float) -> float:
        return float(self(np.array([z]))[0])

    def to_dict(self):
        return {"kind": self.kind, "grid": list(self.grid), "values": list(self.values)}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("kind", "one"), tuple(d.get("grid", ())), tuple(d.get("values", ())))


@dataclass(frozen=True)
class Weight:
    """Bounded weight on a merger time: one, zero, exp(-rate s) or 1(s <= cut)."""

    kind: str = "one"
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in ("one", "zero", "exp", "indicator"):
            raise ValueError(f"unknown weight {self.kind!r}")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "one":
            return np.ones_like(s)
        if self.kind == "zero":
            return np.zeros_like(s)
        if self.kind == "exp":
            return np.exp(-self.rate * s)
        return (s <= self.rate).astype(float)

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("kind", "one"), float(d.get("rate", 1.0)))


@dataclass(frozen=True)
class FunctionalSpec:
    """phi in product form.

    * ``no-merger``: phi = 1(tau_1 > t), no merger within the horizon.
    * ``first-merger``: phi = 1(tau_1 < t, pi_1 = (i, d)) phi1(tau_1) phi2(pruned),
      with phi2 evaluated at the first merger time of the pruned coalescent,
      or equal to ``phi2_none`` if the pruned coalescent has no merger.
    * ``constant-one``: phi = 1.
    """

    kind: str = "no-merger"
    d: int = 2
    i: int = 1
    phi1: Weight = field(default_factory=Weight)
    phi2: Weight = field(default_factory=Weight)
    phi2_none: float = 1.0
    psi: Psi = field(default_factory=Psi)

    def __post_init__(self):
        if self.kind not in ("no-merger", "first-merger", "constant-one"):
            raise ValueError(f"unknown functional kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "i": self.i, "phi1": self.phi1.to_dict(),
                "phi2": self.phi2.to_dict(), "phi2_none": self.phi2_none, "psi": self.psi.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "no-merger"), d=int(d.get("d", 2)), i=int(d.get("i", 1)),
                   phi1=Weight.from_dict(d.get("phi1", "one")), phi2=Weight.from_dict(d.get("phi2", "one")),
                   phi2_none=float(d.get("phi2_none", 1.0)), psi=Psi.from_dict(d.get("psi", "one")))


@dataclass
class MomentEstimate:
    value: float
    std_error: float
    replicates: int
    estimator: str
    k: int = 0
    t: float = 0.0
    K: float = 0.0
    beta: float = 0.0
    seed: int = 0
    capped: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("an estimate needs at least one replicate")
        if not self.std_error >= 0:
            raise ValueError("standard error must be >= 0")

    @classmethod
    def from_accumulator(cls, acc: Accumulator, estimator: str, **kw) -> "MomentEstimate":
        return cls(acc.mean, acc.std_error, acc.count, estimator, **kw)

    def record(self) -> dict:
        return {"estimator": self.estimator, "k": self.k, "t": self.t, "K": self.K, "beta": self.beta,
                "value": self.value, "se": self.std_error, "reps": self.replicates, "seed": self.seed}

    def z_score(self, target: float, extra_se: float = 0.0) -> float:
        se = math.hypot(self.std_error, extra_se)
        if se == 0:
            return 0.0 if self.value == target else math.inf
        return abs(self.value - target) / se


def write_records(estimates, path_json=None, path_csv=None) -> None:
    recs = [e.record() for e in estimates]
    if path_json is not None:
        with open(path_json, "w") as fh:
            json.dump(recs, fh, indent=2, sort_keys=True)
    if path_csv is not None and recs:
        with open(path_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(recs[0]))
            w.writeheader()
            w.writerows(recs)


# ---------------------------------------------------------------- sample sums


def no_merger_sum(forest: Forest, k: int) -> float:
    """Number of planar k-samples with all members in distinct root families: e_k(Z^(i))."""
    return elementary_symmetric(forest.subfamily_sizes().astype(float), k)


def pair_sum(forest: Forest, t: float, phi1: Weight, phi2_none: float = 1.0) -> float:
    """Sum over alive pairs that merge before t of phi1(D_t)."""
    dur, pairs, _ = forest.spectrum_arrays(t)
    keep = dur < t
    return float(np.dot(pairs[keep], phi1(dur[keep]))) * phi2_none


def triple_sum(forest: Forest, t: float, i: int, d: int, phi1: Weight, phi2: Weight,
               phi2_none: float = 1.0) -> float:
    """Sum over planar triples v1 < v2 < v3 of 1(pi_1 = (i, d), tau_1 < t) phi1(tau_1) phi2(pruned).

    For every branching ancestor w the triples whose first merger happens at
    w are: three members in distinct child subtrees of w (d = 3); or two in
    distinct child subtrees and the third outside subtree(w), to the right
    (i = 1) or to the left (i = 2).  The third member then joins at the
    ancestor a of w whose subtree first contains it, after a further
    theta_w - theta_a.
    """
    if (i, d) not in ((1, 2), (2, 2), (1, 3)):
        return 0.0
    ints, times = forest.ints, forest.times
    size = forest.size
    n = forest.n_alive
    cnt = _alive_counts(ints, size)
    rank = forest.planar_ranks()
    lo, hi = _rank_intervals(ints, rank, size)
    total = 0.0
    for w in range(size):
        if ints[w, SLOT] >= 0 or cnt[w] < 2:
            continue
        f = ints[w, FIRST]
        s = cnt[f : f + ints[w, NCHILD]].astype(float)
        e = elementary_symmetric_all(s, d)
        if e[d] == 0:
            continue
        theta_w = times[w, DEATH]
        tau1 = t - theta_w
        base = e[d] * float(phi1(tau1))
        if d == 3:
            total += base * phi2_none
            continue
        acc = 0.0
        c, a = w, ints[w, PARENT]
        while a >= 0:
            m = hi[a] - hi[c] if i == 1 else lo[c] - lo[a]
            if m > 0:
                acc += m * float(phi2(theta_w - times[a, DEATH]))
            c, a = a, ints[a, PARENT]
        outside = (n - 1 - hi[c]) if i == 1 else lo[c]
        acc += outside * phi2_none
        total += base * acc
    return total


def sample_sum(forest: Forest, t: float, k: int, spec: FunctionalSpec) -> float:
    """phi-sum over planar k-samples at time t, without enumerating tuples."""
    n = forest.n_alive
    if n < k:
        return 0.0
    if spec.kind == "constant-one":
        return math.comb(n, k)
    if spec.kind == "no-merger":
        return no_merger_sum(forest, k)
    if k == 1:
        return 0.0
    if k == 2:
        if (spec.i, spec.d) != (1, 2):
            return 0.0
        return pair_sum(forest, t, spec.phi1, spec.phi2_none)
    if k == 3:
        return triple_sum(forest, t, spec.i, spec.d, spec.phi1, spec.phi2, spec.phi2_none)
    raise UnsupportedFunctional(f"first-merger functionals are implemented for k <= 3, got k = {k}")


def sample_sum_bruteforce(forest: Forest, t: float, k: int, spec: FunctionalSpec) -> float:
    """Same sum by enumerating every planar k-sample and extracting its coalescent (test oracle)."""
    from itertools import combinations

    from .coalescent import extract, theta_prune

    order = forest.planar_order()
    total = 0.0
    for sample in combinations(order.tolist(), k):
        coal = extract(forest, t, sample, horizon=t, check_order=False)
        if spec.kind == "constant-one":
            total += 1.0
        elif spec.kind == "no-merger":
            total += coal.n_events == 0
        elif coal.n_events:
            tau1, j, d = coal.first
            if (j, d) != (spec.i, spec.d):
                continue
            rest = theta_prune(coal)
            w2 = float(spec.phi2(rest.taus[0])) if rest.n_events else spec.phi2_none
            total += float(spec.phi1(tau1)) * w2
    return total


# ---------------------------------------------------------------- estimators


def _normalizer(config: SimConfig, k: int) -> float:
    if config.Z0 < k:
        raise ConfigError(f"Z0 = {config.Z0} is below k = {k}")
    return math.factorial(k) * math.exp(config.beta * config.Z0 / config.K) / descending_factorial(config.Z0, k)


def _accumulate(values) -> Accumulator:
    acc = Accumulator()
    acc.extend(values)
    return acc


def estimate_direct(config: SimConfig, k: int, t: float, spec: FunctionalSpec, reps: int,
                    seed: int | None = None, threads: int = 1) -> MomentEstimate:
    """Forward-simulation estimate of M^{k,t}_{Z0}(phi, psi)."""
    seed = config.seed if seed is None else seed
    if spec.kind == "first-merger" and k > 3:
        raise UnsupportedFunctional("first-merger functionals are implemented for k <= 3")
    norm = _normalizer(config, k)
    K, beta = float(config.K), float(config.beta)
    cfg = config.replace(t_max=float(t))
    capped = [0]

    def one(r):
        traj, forest = run_forward(cfg, replicate_stream(seed, TAG_DIRECT, r))
        if traj.status != "completed":
            capped[0] += 1
        z = traj.final_size / K
        return norm * spec.psi.scalar(z) * math.exp(-beta * z) * sample_sum(forest, t, k, spec)

    acc = _accumulate(map_replicates(one, reps, threads))
    return MomentEstimate.from_accumulator(acc, f"direct/{spec.kind}", k=k, t=t, K=K, beta=beta,
                                           seed=seed, capped=capped[0])


def estimate_spinal_base(config: SimConfig, k: int, t: float, psi: Psi = Psi(), reps: int = 1000,
                         seed: int | None = None, threads: int = 1, fk_bound: float = 50.0) -> MomentEstimate:
    """Spine-measure estimate of the base case M^{k,t}_{Z0}(1(tau_1 > t), psi)."""
    seed = config.seed if seed is None else seed
    if config.Z0 < k:
        raise ConfigError(f"Z0 = {config.Z0} is below k = {k}")
    K, beta = float(config.K), float(config.beta)
    pre = math.exp(beta * config.Z0 / K)
    cfg = config.replace(k=k, t_max=float(t))
    capped = [0]

    def one(r):
        rng = replicate_stream(seed, TAG_SPINAL, r)
        if k == 0:
            traj, _ = run_forward(cfg, rng, genealogy=False)
        else:
            traj, _ = run_spine(cfg, rng, genealogy=False)
        if traj.status != "completed":
            capped[0] += 1
        if traj.fk_integral > fk_bound:
            raise WeightOverflow(f"replicate {r}: Feynman-Kac exponent {traj.fk_integral:.3g} exceeds {fk_bound}")
        z = traj.final_size / K
        return pre * psi.scalar(z) * math.exp(-beta * z + traj.fk_integral)

    acc = _accumulate(map_replicates(one, reps, threads))
    return MomentEstimate.from_accumulator(acc, "spinal/base", k=k, t=t, K=K, beta=beta, seed=seed,
                                           capped=capped[0])


def martingale_values(config: SimConfig, ks, t: float, reps: int, seed: int | None = None,
                      threads: int = 1) -> dict[int, np.ndarray]:
    """N^k_t for each k in ``ks`` from the same forward replicates."""
    seed = config.seed if seed is None else seed
    ks = list(ks)
    kmax = max(ks) if ks else 0
    if config.Z0 < kmax:
        raise ConfigError(f"Z0 = {config.Z0} is below k = {kmax}")
    cfg = config.replace(t_max=float(t))

    def one(r):
        traj, forest = run_forward(cfg, replicate_stream(seed, TAG_MARTINGALE, r))
        sizes = forest.subfamily_sizes()[:kmax].astype(float)
        prods = np.concatenate([[1.0], np.cumprod(sizes)])
        return [math.exp(-k * traj.drift_integral) * prods[k] for k in ks]

    vals = np.array(map_replicates(one, reps, threads), dtype=float).reshape(reps, len(ks))
    return {k: vals[:, i] for i, k in enumerate(ks)}


def check_martingale(config: SimConfig, k: int, t: float, reps: int, seed: int | None = None,
                     threads: int = 1) -> MomentEstimate:
    """MC mean of N^k_t = exp(-k int q(m-1)) prod_{i<=k} Z^(i)_t under P (target 1)."""
    seed = config.seed if seed is None else seed
    vals = martingale_values(config, [k], t, reps, seed, threads)[k]
    return MomentEstimate.from_accumulator(Accumulator.from_values(vals), "martingale", k=k, t=t,
                                           K=float(config.K), beta=float(config.beta), seed=seed)


# ---------------------------------------------------------------- exact

def exact_constant_one(config: SimConfig, k: int, t: float) -> float:
    """M^{k,t}(1, 1) from the exact law of Z_t under P."""
    norm = _normalizer(config, k) / math.factorial(k)
    gen = oracle.build_generator(config, 0)
    tr = oracle.transient_distribution(gen, config.Z0, t)
    n = tr.states.astype(float)
    ff = np.ones_like(n)
    for i in range(k):
        ff *= np.maximum(n - i, 0.0)
    return float(norm * np.dot(tr.probs, ff * np.exp(-config.beta * n / config.K)))


def limit_prediction(law, q, k: int, t: float, psi_at_1: float = 1.0, check: bool = True) -> float:
    """psi(1) exp(-q(1) m2(1) C(k,2) t), the large-K value of the base-case moment at time K t."""
    if check:
        report = check_assumptions(law, q)
        if not report.passed:
            raise ValueError(f"law fails the standing assumptions: {report.notes}")
    r = q(1.0) * law.m2(1.0)
    return float(psi_at_1 * math.exp(-r * math.comb(k, 2) * t))


@dataclass
class RecursionResult:
    lhs: MomentEstimate
    rhs: float
    quadrature_error: float
    truncation_error: float
    panels: int

    @property
    def numerical_error(self) -> float:
        return self.quadrature_error + self.truncation_error

    @property
    def gap(self) -> float:
        return abs(self.lhs.value - self.rhs)

    @property
    def tolerance(self) -> float:
        return 3.0 * self.lhs.std_error + self.numerical_error

    @property
    def passed(self) -> bool:
        return self.gap <= self.tolerance

    def to_dict(self) -> dict:
        return {"lhs": self.lhs.record(), "rhs": self.rhs, "quadrature_error": self.quadrature_error,
                "truncation_error": self.truncation_error, "panels": self.panels, "gap": self.gap,
                "tolerance": self.tolerance, "pass": self.passed}


def _simpson(y: np.ndarray, h: float) -> float:
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


def recursion_rhs(config: SimConfig, t: float, phi1: Weight, psi: Psi = Psi(), panels: int = 64,
                  kernel_scale: float = 1.0) -> tuple[float, float, float]:
    """Right side of the first-merger recursion for k = d = 2, i = 1, phi2 = 1.

        (1/(Z0-1)) int_0^t phi1(t-s) M^{1,s}_{Z0}(1, h_{t-s}) ds,
        h_tau(n) = q e^{beta/K} sum_l (l)_2 e^{-beta l/K} p_l(n/K) M^{2,tau}_{n+l-1}(psi),

    with both moment measures evaluated exactly on the truncated chain.
    Returns (value, quadrature error estimate, truncation error estimate).
    """
    if panels < 2 or panels % 4:
        raise ValueError("panels must be a positive multiple of 4")
    if config.Z0 < 2:
        raise ConfigError("Z0 must be >= 2")
    if t == 0:
        return 0.0, 0.0, 0.0
    K, beta = float(config.K), float(config.beta)
    s_nodes = np.linspace(0.0, t, panels + 1)
    taus = t - s_nodes  # decreasing
    # inner base case M^{2,tau}_m for every start m of the k = 2 window
    gen2 = oracle.build_generator(config, 2, window=(2, int(math.ceil(20 * K))))
    w2 = oracle.psi_weight(config, psi)(gen2.states)
    u2 = oracle.feynman_kac_backward(gen2, w2, taus[::-1])[::-1]  # rows follow s_nodes
    m2 = u2 * np.exp(beta * gen2.states / K)[None, :]
    # kernel h_tau(n) on the k = 1 window
    gen1 = oracle.build_generator(config, 1, window=(1, gen2.n_max))
    n1 = gen1.states
    fam, par, zg, tab, cap = config.law.kernel
    pm = oracle._pmf_matrix(fam, par, zg, tab, cap, n1 / K)
    ell = np.arange(cap + 1)
    wl = ell * (ell - 1) * np.exp(-beta * ell / K)
    qv = np.array([rate_eval(*config.q.kernel, z) for z in n1 / K])
    tgt = n1[:, None] + ell[None, :] - 1
    inside = tgt <= gen2.n_max
    idx = np.clip(tgt - gen2.n_min, 0, gen2.size - 1)
    coef = (qv * math.exp(beta / K))[:, None] * pm * wl[None, :]
    coef_in = np.where(inside, coef, 0.0)
    mu = oracle.feynman_kac_forward(gen1, config.Z0, s_nodes)
    disc = np.exp(-beta * n1 / K)
    vals = np.empty(s_nodes.size)
    mmax = np.abs(m2).max()
    # kernel mass whose target leaves the window, bounded by the largest inner value
    lost = np.where(inside, 0.0, coef).sum(axis=1) * mmax
    trunc = 0.0
    for j in range(s_nodes.size):
        h = kernel_scale * (coef_in * m2[j][idx]).sum(axis=1)
        outer = math.exp(beta * config.Z0 / K) * float(np.dot(mu[j], h * disc))
        vals[j] = float(phi1(t - s_nodes[j])) * outer
        trunc = max(trunc, math.exp(beta * config.Z0 / K) * float(np.dot(mu[j], lost * disc)))
    dh = t / panels
    full = _simpson(vals, dh) / (config.Z0 - 1)
    half = _simpson(vals[::2], 2 * dh) / (config.Z0 - 1)
    quad = abs(full - half) / 15.0
    # the offspring support is cut where the dropped mass is below TAIL_BOUND; the
    # leak of the two truncated chains is absorbed mass, bounded through the sink rates
    leak1 = oracle.transient_distribution(gen1, config.Z0, t).absorbed
    trunc_total = t * trunc / (config.Z0 - 1) + abs(full) * leak1
    return full, quad, trunc_total


def recursion_check(config: SimConfig, t: float, phi1: Weight = Weight(), psi: Psi = Psi(),
                    panels: int = 64, reps: int = 10**5, seed: int | None = None, threads: int = 1,
                    kernel_scale: float = 1.0) -> RecursionResult:
    """LHS by forward simulation (first-merger, k = 2) against the exact quadrature RHS."""
    spec = FunctionalSpec("first-merger", d=2, i=1, phi1=phi1, psi=psi)
    if t == 0:
        lhs = MomentEstimate(0.0, 0.0, max(reps, 1), "direct/first-merger", k=2, t=0.0,
                             K=float(config.K), beta=float(config.beta), seed=config.seed if seed is None else seed)
        return RecursionResult(lhs, 0.0, 0.0, 0.0, panels)
    lhs = estimate_direct(config, 2, t, spec, reps, seed, threads)
    rhs, quad, trunc = recursion_rhs(config, t, phi1, psi, panels, kernel_scale)
    return RecursionResult(lhs, rhs, quad, trunc, panels)
