"""Density-dependent offspring laws L(z) and branching rates q(z).

Every law is encoded for the compiled kernels as a flat tuple
``(family, params, zgrid, table, cap)``; the same kernels back the Python
methods so simulation and analysis share one code path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np
from scipy import stats as sps

BINARY_LOGISTIC = 0
POISSON_EXP = 1
GEOMETRIC_MEAN = 2
TABLE = 3

FAMILIES = {
    "binary-logistic": BINARY_LOGISTIC,
    "poisson-exp": POISSON_EXP,
    "geometric-mean": GEOMETRIC_MEAN,
    "table": TABLE,
}

RATE_CONSTANT = 0
RATE_AFFINE = 1
RATE_TABLE = 2

RATE_FAMILIES = {"constant": RATE_CONSTANT, "affine": RATE_AFFINE, "table": RATE_TABLE}

# support truncation for built-in laws: sup_z P(L(z) > cap) stays below this
TAIL_BOUND = 1e-16


class DegenerateLawError(ValueError):
    pass


# ---------------------------------------------------------------- kernels


@nb.njit(cache=True, nogil=True)
def _grid_locate(zgrid, z):
    """Index i and weight w with z ~ (1-w) zgrid[i] + w zgrid[i+1], clamped."""
    n = zgrid.shape[0]
    if n == 1 or z <= zgrid[0]:
        return 0, 0.0
    if z >= zgrid[n - 1]:
        return n - 2, 1.0
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if zgrid[mid] <= z:
            lo = mid
        else:
            hi = mid
    return lo, (z - zgrid[lo]) / (zgrid[lo + 1] - zgrid[lo])


@nb.njit(cache=True, nogil=True)
def law_pmf(fam, par, zgrid, table, cap, z, n):
    if n < 0 or n > cap:
        return 0.0
    if fam == BINARY_LOGISTIC:
        if n == 2:
            return 1.0 / (1.0 + z)
        if n == 0:
            return z / (1.0 + z)
        return 0.0
    if fam == POISSON_EXP:
        lam = math.exp(par[0] * (1.0 - z))
        return math.exp(n * math.log(lam) - lam - math.lgamma(n + 1.0))
    if fam == GEOMETRIC_MEAN:
        mu = math.exp(par[0] * (1.0 - z))
        p = mu / (1.0 + mu)
        return (1.0 - p) * p**n
    if zgrid.shape[0] == 1:
        return table[0, n]
    i, w = _grid_locate(zgrid, z)
    return (1.0 - w) * table[i, n] + w * table[i + 1, n]


@nb.njit(cache=True, nogil=True)
def law_mean(fam, par, zgrid, table, cap, z):
    if fam == BINARY_LOGISTIC:
        return 2.0 / (1.0 + z)
    if fam == POISSON_EXP or fam == GEOMETRIC_MEAN:
        return math.exp(par[0] * (1.0 - z))
    s = 0.0
    for n in range(1, cap + 1):
        s += n * law_pmf(fam, par, zgrid, table, cap, z, n)
    return s


@nb.njit(cache=True, nogil=True)
def law_sample(fam, par, zgrid, table, cap, z, u):
    """Inverse-CDF draw of L(z) from one uniform; mass beyond cap lumps on cap."""
    if fam == BINARY_LOGISTIC:
        return 2 if u < 1.0 / (1.0 + z) else 0
    if fam == GEOMETRIC_MEAN:
        mu = math.exp(par[0] * (1.0 - z))
        p = mu / (1.0 + mu)
        # P(L >= n) = p^n
        n = int(math.floor(math.log1p(-u) / math.log(p)))
        return n if n < cap else cap
    c = 0.0
    for n in range(cap):
        c += law_pmf(fam, par, zgrid, table, cap, z, n)
        if u < c:
            return n
    return cap


@nb.njit(cache=True, nogil=True)
def law_sample_biased(fam, par, zgrid, table, cap, z, d, beta, norm, u):
    """Inverse-CDF draw from (n)_d e^{-beta n} pmf(z, n) / norm."""
    c = 0.0
    for n in range(d, cap):
        f = 1.0
        for i in range(d):
            f *= n - i
        c += f * math.exp(-beta * n) * law_pmf(fam, par, zgrid, table, cap, z, n) / norm
        if u < c:
            return n
    return cap


@nb.njit(cache=True, nogil=True)
def rate_eval(fam, par, zgrid, vals, z):
    """Branching rate q(z), clamped at 0 so a bad affine rate cannot go negative."""
    if fam == RATE_CONSTANT:
        q = par[0]
    elif fam == RATE_AFFINE:
        q = par[0] + par[1] * z
    else:
        if zgrid.shape[0] == 1:
            q = vals[0]
        else:
            i, w = _grid_locate(zgrid, z)
            q = (1.0 - w) * vals[i] + w * vals[i + 1]
    return q if q > 0.0 else 0.0


# ---------------------------------------------------------------- laws


def _poisson_cap(max_mean: float) -> int:
    return int(sps.poisson.isf(TAIL_BOUND, max_mean)) + 1


def _geometric_cap(max_mean: float) -> int:
    p = max_mean / (1.0 + max_mean)
    return int(math.ceil(math.log(TAIL_BOUND) / math.log(p)))


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Offspring distribution z -> L(z) on {0, ..., tail_cap}."""

    family: str
    params: tuple[float, ...] = ()
    tail_cap: int = 0
    table_z: np.ndarray = field(default_factory=lambda: np.zeros(1))
    table_pmf: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown offspring family {self.family!r}")
        if self.family in ("poisson-exp", "geometric-mean"):
            if len(self.params) != 1 or not self.params[0] > 0:
                raise ValueError(f"{self.family} takes one parameter c > 0")
        zg = np.ascontiguousarray(self.table_z, dtype=float)
        tab = np.ascontiguousarray(self.table_pmf, dtype=float)
        if self.family == "table":
            if tab.ndim != 2 or tab.shape[0] != zg.shape[0]:
                raise ValueError("table pmf must have one row per grid point")
            if np.any(np.diff(zg) <= 0):
                raise ValueError("table z-grid must be strictly increasing")
            if np.any(tab < 0) or np.any(np.abs(tab.sum(axis=1) - 1.0) > 1e-12):
                raise ValueError("table rows must be probability vectors")
            cap = tab.shape[1] - 1
            if self.tail_cap and self.tail_cap != cap:
                raise ValueError("table support exceeds tail_cap")
        else:
            cap = self._builtin_cap()
        object.__setattr__(self, "table_z", zg)
        object.__setattr__(self, "table_pmf", tab)
        object.__setattr__(self, "tail_cap", int(cap))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        object.__setattr__(self, "_kern", (FAMILIES[self.family],
                                           np.asarray(self.params or (0.0,), dtype=float),
                                           zg, tab, int(cap)))

    def _builtin_cap(self) -> int:
        if self.family == "binary-logistic":
            return 2
        # both families have mean e^{c(1-z)} <= e^c for z > 0
        max_mean = math.exp(self.params[0])
        if self.family == "poisson-exp":
            return _poisson_cap(max_mean)
        return _geometric_cap(max_mean)

    # constructors -----------------------------------------------------

    @classmethod
    def binary_logistic(cls) -> "OffspringLaw":
        return cls("binary-logistic")

    @classmethod
    def poisson_exp(cls, c: float = 1.0) -> "OffspringLaw":
        return cls("poisson-exp", (c,))

    @classmethod
    def geometric_mean(cls, c: float = 1.0) -> "OffspringLaw":
        return cls("geometric-mean", (c,))

    @classmethod
    def table(cls, z: Sequence[float], pmf) -> "OffspringLaw":
        pmf = np.atleast_2d(np.asarray(pmf, dtype=float))
        return cls("table", (), 0, np.asarray(z, dtype=float), pmf)

    @classmethod
    def degenerate(cls, n: int) -> "OffspringLaw":
        row = np.zeros(n + 1)
        row[n] = 1.0
        return cls.table([1.0], row[None, :])

    @classmethod
    def from_csv(cls, path) -> "OffspringLaw":
        """Table law from a CSV with header ``z,n,p``."""
        rows: dict[float, dict[int, float]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["z", "n", "p"]:
                raise ValueError("table CSV header must be z,n,p")
            for rec in reader:
                rows.setdefault(float(rec["z"]), {})[int(rec["n"])] = float(rec["p"])
        zs = sorted(rows)
        cap = max(max(r) for r in rows.values())
        pmf = np.zeros((len(zs), cap + 1))
        for i, z in enumerate(zs):
            for n, p in rows[z].items():
                pmf[i, n] = p
        return cls.table(zs, pmf)

    @classmethod
    def from_dict(cls, spec: dict, base: Path | None = None) -> "OffspringLaw":
        fam = spec["family"]
        if fam == "table":
            if "csv" in spec:
                p = Path(spec["csv"])
                return cls.from_csv(p if p.is_absolute() or base is None else base / p)
            return cls.table(spec["z"], spec["pmf"])
        return cls(fam, tuple(spec.get("params", (1.0,) if fam != "binary-logistic" else ())))

    def to_dict(self) -> dict:
        if self.family == "table":
            return {"family": "table", "z": self.table_z.tolist(), "pmf": self.table_pmf.tolist()}
        return {"family": self.family, "params": list(self.params)}

    def __repr__(self):
        return f"OffspringLaw({json.dumps(self.to_dict())[:80]})"

    # kernels ----------------------------------------------------------

    @property
    def kernel(self):
        return self._kern

    def _check_z(self, z: float) -> float:
        z = float(z)
        if not z > 0:
            raise ValueError(f"density must be > 0, got {z}")
        return z

    def pmf(self, z: float) -> np.ndarray:
        """Probability vector P(L(z) = n), n = 0..tail_cap."""
        z = self._check_z(z)
        fam, par, zg, tab, cap = self.kernel
        return np.array([law_pmf(fam, par, zg, tab, cap, z, n) for n in range(cap + 1)])

    def tail_mass(self, z: float) -> float:
        """Mass P(L(z) > tail_cap) dropped by the truncation (0 for tables)."""
        return max(0.0, 1.0 - float(self.pmf(z).sum()))

    def mean(self, z: float) -> float:
        z = self._check_z(z)
        return float(law_mean(*self.kernel, z))

    def factorial_moment(self, z: float, d: int, beta: float = 0.0) -> float:
        """E[(L(z))_d exp(-beta L(z))]; closed forms for built-in families."""
        z = self._check_z(z)
        if d < 1:
            raise ValueError("order d must be >= 1")
        if beta < 0:
            raise ValueError("beta must be >= 0")
        if d == 1 and beta == 0.0:
            return self.mean(z)
        if self.family == "binary-logistic":
            if d > 2:
                return 0.0
            return math.factorial(2) / math.factorial(2 - d) * math.exp(-2.0 * beta) / (1.0 + z)
        if self.family == "poisson-exp":
            lam = math.exp(self.params[0] * (1.0 - z))
            x = math.exp(-beta)
            return (lam * x) ** d * math.exp(lam * (x - 1.0))
        if self.family == "geometric-mean":
            mu = math.exp(self.params[0] * (1.0 - z))
            p = mu / (1.0 + mu)
            x = math.exp(-beta)
            return x**d * (1.0 - p) * math.factorial(d) * p**d / (1.0 - p * x) ** (d + 1)
        return float(np.dot(_falling_weights(self.tail_cap, d, beta), self.pmf(z)))

    def m2(self, z: float) -> float:
        return self.factorial_moment(z, 2, 0.0)

    def biased_pmf(self, z: float, d: int, beta: float = 0.0) -> np.ndarray:
        """P(L^{(d)}_beta(z) = n) on 0..tail_cap."""
        w = _falling_weights(self.tail_cap, d, beta) * self.pmf(z)
        norm = self.factorial_moment(z, d, beta)
        if norm <= 0:
            raise DegenerateLawError(f"m_{{{d},{beta}}}({z}) = 0; biased law undefined")
        return w / norm

    def sample(self, z: float, rng: np.random.Generator) -> int:
        z = self._check_z(z)
        return int(law_sample(*self.kernel, z, rng.random()))

    def sample_biased(self, z: float, d: int, beta: float, rng: np.random.Generator) -> int:
        z = self._check_z(z)
        norm = self.factorial_moment(z, d, beta)
        if norm <= 0:
            raise DegenerateLawError(f"m_{{{d},{beta}}}({z}) = 0; biased law undefined")
        return int(law_sample_biased(*self.kernel, z, d, beta, norm, rng.random()))


def _falling_weights(cap: int, d: int, beta: float) -> np.ndarray:
    n = np.arange(cap + 1, dtype=float)
    f = np.ones(cap + 1)
    for i in range(d):
        f *= n - i
    return f * np.exp(-beta * n)


@dataclass(frozen=True, eq=False)
class BranchRate:
    """Branching (death) rate z -> q(z)."""

    family: str = "constant"
    params: tuple[float, ...] = (1.0,)
    table_z: np.ndarray = field(default_factory=lambda: np.zeros(1))
    table_q: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        if self.family not in RATE_FAMILIES:
            raise ValueError(f"unknown rate family {self.family!r}")
        need = {"constant": 1, "affine": 2, "table": 0}[self.family]
        if self.family != "table" and len(self.params) != need:
            raise ValueError(f"{self.family} rate takes {need} parameter(s)")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        object.__setattr__(self, "table_z", np.ascontiguousarray(self.table_z, dtype=float))
        object.__setattr__(self, "table_q", np.ascontiguousarray(self.table_q, dtype=float))
        if self.family == "table" and self.table_z.shape != self.table_q.shape:
            raise ValueError("rate table needs one value per grid point")
        object.__setattr__(self, "_kern", (RATE_FAMILIES[self.family],
                                           np.asarray(self.params or (0.0,), dtype=float),
                                           self.table_z, self.table_q))

    @classmethod
    def constant(cls, c: float = 1.0) -> "BranchRate":
        return cls("constant", (c,))

    @classmethod
    def from_dict(cls, spec: dict) -> "BranchRate":
        fam = spec.get("family", "constant")
        if fam == "table":
            return cls("table", (), np.asarray(spec["z"]), np.asarray(spec["q"]))
        return cls(fam, tuple(spec.get("params", (1.0,))))

    def to_dict(self) -> dict:
        if self.family == "table":
            return {"family": "table", "z": self.table_z.tolist(), "q": self.table_q.tolist()}
        return {"family": self.family, "params": list(self.params)}

    @property
    def kernel(self):
        return self._kern

    def __call__(self, z: float) -> float:
        return float(rate_eval(*self.kernel, float(z)))


# ---------------------------------------------------------------- checks


@dataclass
class AssumptionReport:
    equilibrium_error: float
    equilibrium_ok: bool
    slope_at_one: float
    slope_ok: bool
    sup_m2: float
    ui_proxy: dict[float, float]
    q_min: float
    q_positive: bool
    q_jump_at_one: float
    q_continuous: bool
    notes: list[str]

    @property
    def passed(self) -> bool:
        return self.equilibrium_ok and self.slope_ok and self.q_positive and self.q_continuous \
            and math.isfinite(self.sup_m2)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ui_proxy"] = {str(a): v for a, v in self.ui_proxy.items()}
        d["passed"] = self.passed
        return d


def check_assumptions(law: OffspringLaw, q: BranchRate, window=(0.5, 1.5), tol: float = 1e-6,
                      h: float = 1e-4, n_grid: int = 101,
                      a_grid: Sequence[float] = (5, 10, 20, 50, 100)) -> AssumptionReport:
    """Numerical check of the stable-equilibrium and second-moment conditions.

    Failures are reported, never raised.
    """
    lo, hi = window
    if not lo < 1.0 < hi:
        raise ValueError("window must contain 1")
    err = abs(law.mean(1.0) - 1.0)
    slope = (law.mean(1.0 + h) - law.mean(1.0 - h)) / (2 * h)
    zs = np.linspace(lo, hi, n_grid)
    m2s = np.array([law.m2(z) for z in zs])
    n = np.arange(law.tail_cap + 1, dtype=float)
    ui = {}
    for a in a_grid:
        ui[float(a)] = float(max(np.dot(np.where(n > a, n * n, 0.0), law.pmf(z)) for z in zs))
    qs = np.array([q(z) for z in zs])
    jump = abs(q(1.0 + h) - q(1.0 - h))
    return AssumptionReport(
        equilibrium_error=float(err),
        equilibrium_ok=bool(err <= tol),
        slope_at_one=float(slope),
        slope_ok=bool(slope < 0),
        sup_m2=float(m2s.max()),
        ui_proxy=ui,
        q_min=float(qs.min()),
        q_positive=bool(qs.min() > 0),
        q_jump_at_one=float(jump),
        q_continuous=bool(jump <= 1e3 * h),
        notes=["uniform-integrability entry is a finite grid proxy, not a proof of the limit condition"],
    )
