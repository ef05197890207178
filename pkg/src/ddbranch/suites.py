"""Verification suites: dataclass configurations and runners producing pass/fail reports.

Each suite turns one family of checks into a list of ``Check`` records
``{name, value, tolerance, pass}``.  Reports contain no timings or paths,
so identical configurations and seeds give byte-identical JSON.
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from . import ctmc_oracle as oracle
from . import kingman_test as kt
from . import moments as mo
from .offspring import BranchRate, OffspringLaw, check_assumptions
from .simulate import ConfigError, SimConfig

BINARY = {"family": "binary-logistic", "params": []}
POISSON = {"family": "poisson-exp", "params": [1.0]}


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance,
                "pass": bool(self.passed), "detail": self.detail}


@dataclass
class SuiteReport:
    suite: str
    seed: int
    settings: dict
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, tolerance, passed, **detail) -> Check:
        c = Check(name, float(value), float(tolerance), bool(passed), detail)
        self.checks.append(c)
        return c

    def to_dict(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "settings": self.settings,
                "pass": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _law(spec) -> OffspringLaw:
    return OffspringLaw.from_dict(spec)


def _law_name(spec) -> str:
    p = spec.get("params") or []
    return spec["family"] + ("" if not p else "(" + ",".join(f"{x:g}" for x in p) + ")")


class _Suite:
    """Shared construction from a JSON dict with unknown-key rejection."""

    name = ""

    @classmethod
    def from_dict(cls, d: dict[str, Any]):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown {cls.name} settings: {sorted(extra)}")
        try:
            obj = cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for attr in ("law", "triple_law"):
            if hasattr(obj, attr):
                obj._check_law(getattr(obj, attr))
        for spec in getattr(obj, "laws", []):
            obj._check_law(spec)
        try:
            BranchRate.from_dict(obj.q)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid branching rate: {exc}") from exc
        obj.validate()
        return obj

    @staticmethod
    def _check_law(spec) -> None:
        try:
            _law(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid offspring law {spec!r}: {exc}") from exc

    def validate(self) -> None:
        pass

    def settings(self) -> dict:
        return asdict(self)

    def base_config(self, law_spec, K, Z0=None, beta=0.5, seed=0) -> SimConfig:
        return SimConfig(K=float(K), Z0=int(round(K)) if Z0 is None else int(Z0), law=_law(law_spec),
                         q=BranchRate.from_dict(self.q), beta=beta, seed=seed)


@dataclass
class MartingaleSuite(_Suite):
    name = "martingale"
    laws: list = field(default_factory=lambda: [BINARY, POISSON])
    q: dict = field(default_factory=lambda: {"family": "constant", "params": [1.0]})
    K: float = 20.0
    Z0: int = 20
    ks: list = field(default_factory=lambda: [1, 2, 3])
    ts: list = field(default_factory=lambda: [0.5, 1.0])
    reps: int = 100_000

    def validate(self):
        if self.Z0 < max(self.ks):
            raise ConfigError("Z0 must be at least the largest k")

    def run(self, seed: int, threads: int = 1) -> SuiteReport:
        rep = SuiteReport(self.name, seed, self.settings())
        for i, spec in enumerate(self.laws):
            for j, t in enumerate(self.ts):
                cfg = self.base_config(spec, self.K, self.Z0, seed=seed)
                t0 = time.perf_counter()
                vals = mo.martingale_values(cfg, self.ks, t, self.reps, seed=seed + 1000 * i + j, threads=threads)
                _log(f"martingale {_law_name(spec)} t={t}: {time.perf_counter() - t0:.1f}s")
                for k in self.ks:
                    acc = mo.Accumulator.from_values(vals[k])
                    se = acc.std_error
                    tol = 3 * se
                    rep.add(f"N^{k}_{t} {_law_name(spec)}", acc.mean, tol, abs(acc.mean - 1.0) <= tol,
                            se=se, reps=self.reps, target=1.0)
        return rep


@dataclass
class BaseCaseSuite(_Suite):
    name = "base-case"
    law: dict = field(default_factory=lambda: dict(BINARY))
    q: dict = field(default_factory=lambda: {"family": "constant", "params": [1.0]})
    ks: list = field(default_factory=lambda: [1, 2])
    Ks: list = field(default_factory=lambda: [20, 50])
    betas: list = field(default_factory=lambda: [0.0, 0.5])
    ts: list = field(default_factory=lambda: [0.5, 1.0])
    reps: int = 20_000
    oracle_zero: float = 1e-8

    def run(self, seed: int, threads: int = 1) -> SuiteReport:
        rep = SuiteReport(self.name, seed, self.settings())
        cell = 0
        for K in self.Ks:
            for beta in self.betas:
                cfg = self.base_config(self.law, K, beta=beta, seed=seed)
                for k in self.ks:
                    for t in self.ts:
                        cell += 1
                        t0 = time.perf_counter()
                        d = mo.estimate_direct(cfg, k, t, mo.FunctionalSpec("no-merger"), self.reps,
                                               seed=seed + cell, threads=threads)
                        s = mo.estimate_spinal_base(cfg, k, t, mo.Psi(), self.reps, seed=seed + cell,
                                                    threads=threads)
                        ex = oracle.exact_base_moment(cfg, k, t)
                        leak = oracle.window_leak(cfg, k, t)
                        # oracle error below oracle_zero is treated as exact
                        o_err = leak if leak >= self.oracle_zero else 0.0
                        _log(f"base-case K={K} beta={beta} k={k} t={t}: {time.perf_counter() - t0:.1f}s")
                        tag = f"K={K:g} beta={beta:g} k={k} t={t:g}"
                        tol = 3 * math.hypot(d.std_error, o_err)
                        rep.add(f"direct~oracle {tag}", d.value - ex, tol, abs(d.value - ex) <= tol,
                                direct=d.value, direct_se=d.std_error, exact=ex)
                        tol = 3 * math.hypot(s.std_error, o_err)
                        rep.add(f"spinal~oracle {tag}", s.value - ex, tol, abs(s.value - ex) <= tol,
                                spinal=s.value, spinal_se=s.std_error, exact=ex)
                        tol = 3 * math.hypot(d.std_error, s.std_error)
                        rep.add(f"direct~spinal {tag}", d.value - s.value, tol, abs(d.value - s.value) <= tol)
        return rep


@dataclass
class RecursionSuite(_Suite):
    name = "recursion"
    law: dict = field(default_factory=lambda: dict(BINARY))
    q: dict = field(default_factory=lambda: {"family": "constant", "params": [1.0]})
    K: float = 20.0
    Z0: int = 20
    beta: float = 0.5
    t: float = 1.0
    phi1: list = field(default_factory=lambda: [{"kind": "one"}, {"kind": "exp", "rate": 1.0}])
    psi: dict = field(default_factory=lambda: {"kind": "one"})
    panels: int = 64
    reps: int = 100_000
    kernel_scale: float = 1.0

    def run(self, seed: int, threads: int = 1) -> SuiteReport:
        rep = SuiteReport(self.name, seed, self.settings())
        cfg = self.base_config(self.law, self.K, self.Z0, beta=self.beta, seed=seed)
        for i, w in enumerate(self.phi1):
            weight = mo.Weight.from_dict(w)
            t0 = time.perf_counter()
            res = mo.recursion_check(cfg, self.t, weight, mo.Psi.from_dict(self.psi), self.panels, self.reps,
                                     seed=seed + i, threads=threads, kernel_scale=self.kernel_scale)
            _log(f"recursion phi1={weight.kind}: {time.perf_counter() - t0:.1f}s")
            detail = {k: v for k, v in res.to_dict().items() if k not in ("gap", "tolerance", "pass")}
            rep.add(f"recursion phi1={weight.kind}", res.gap, res.tolerance, res.passed, **detail)
        return rep


@dataclass
class KingmanSuite(_Suite):
    name = "kingman"
    law: dict = field(default_factory=lambda: dict(BINARY))
    q: dict = field(default_factory=lambda: {"family": "constant", "params": [1.0]})
    Ks: list = field(default_factory=lambda: [50, 400])
    T: float = 2.0
    n_runs: int = 2000
    alpha: float = 0.01
    triple_law: dict = field(default_factory=lambda: dict(POISSON))
    triple_Ks: list = field(default_factory=lambda: [50, 100, 400])
    triple_runs: int = 1000

    def run(self, seed: int, threads: int = 1, out: Path | None = None) -> SuiteReport:
        rep = SuiteReport(self.name, seed, self.settings())
        rate = None
        reports = []
        for K in self.Ks:
            cfg = self.base_config(self.law, K, seed=seed)
            if not check_assumptions(cfg.law, cfg.q).passed:
                raise ConfigError("law fails the standing assumptions")
            t0 = time.perf_counter()
            r = kt.pairwise_limit_test(cfg, self.T, self.n_runs, seed=seed, threads=threads, alpha=self.alpha)
            _log(f"kingman pairs K={K}: {time.perf_counter() - t0:.1f}s")
            reports.append(r)
            rate = r.rate
            if out is not None:
                r.write_samples(Path(out) / f"coalescence_K{K:g}.csv")
        top = reports[-1]
        rep.add(f"pair KS K={top.K:g}", top.ks, top.ks_critical, top.ks_pass, n=top.n_runs - top.n_small - top.n_censored,
                rate=rate, n_small=top.n_small, n_capped=top.n_capped)
        rep.add(f"pair censoring K={top.K:g}", top.censor_fraction - top.censor_target, 3 * top.censor_se,
                top.censor_pass, fraction=top.censor_fraction, target=top.censor_target)
        if len(reports) > 1:
            ks = [r.ks for r in reports]
            rep.add("pair KS non-increasing in K", ks[-1] - ks[0], 0.0,
                    all(b <= a for a, b in zip(ks, ks[1:])), ks=ks, Ks=list(self.Ks))
        fr, se = [], []
        last = None
        for K in self.triple_Ks:
            cfg = self.base_config(self.triple_law, K, seed=seed)
            t0 = time.perf_counter()
            last = kt.triple_merger_test(cfg, self.T, self.triple_runs, seed=seed, threads=threads,
                                         alpha=self.alpha)
            _log(f"kingman triples K={K}: {time.perf_counter() - t0:.1f}s")
            fr.append(last.triple_fraction)
            se.append(last.triple_fraction_se)
        if fr:
            rep.add("triple-merger fraction strictly decreasing in K", fr[-1] - fr[0], 0.0,
                    all(b < a for a, b in zip(fr, fr[1:])), fractions=fr, se=se, Ks=list(self.triple_Ks))
            rep.add(f"first-merger mean K={last.K:g}", last.first_merger_mean - last.first_merger_mean_target,
                    3 * last.first_merger_mean_se, last.mean_pass, mean=last.first_merger_mean,
                    target=last.first_merger_mean_target)
            rep.add(f"first-merger KS K={last.K:g}", last.first_merger_ks, last.first_merger_ks_critical,
                    last.first_merger_ks < last.first_merger_ks_critical)
            rep.add(f"merging pair uniform K={last.K:g}", last.pair_chi2_p, 0.01, last.pair_chi2_p > 0.01,
                    counts=last.pair_counts)
        return rep


@dataclass
class DensitySuite(_Suite):
    name = "density"
    law: dict = field(default_factory=lambda: dict(BINARY))
    q: dict = field(default_factory=lambda: {"family": "constant", "params": [1.0]})
    Ks: list = field(default_factory=lambda: [50, 400])
    T: float = 2.0
    n_runs: int = 500
    gamma: float = 0.2
    threshold: float = 0.02
    extra_gammas: list = field(default_factory=lambda: [0.3, 0.4])
    exact: bool = True

    def run(self, seed: int, threads: int = 1) -> SuiteReport:
        rep = SuiteReport(self.name, seed, self.settings())
        gammas = [self.gamma] + list(self.extra_gammas)
        probs = []
        for K in self.Ks:
            cfg = self.base_config(self.law, K, seed=seed)
            t0 = time.perf_counter()
            r = kt.density_concentration_test(cfg, self.T, self.n_runs, gammas, seed=seed, threads=threads,
                                              exact=self.exact)
            _log(f"density K={K}: {time.perf_counter() - t0:.1f}s")
            probs.append(r.exit_probability[0])
            p = r.exit_probability
            rep.add(f"exit probability monotone in gamma K={K:g}", p[-1] - p[0], 0.0,
                    all(b <= a for a, b in zip(p, p[1:])), gammas=gammas, probabilities=p)
            if self.exact:
                for g, pm, pe in zip(gammas, p, r.exact_exit_probability):
                    tol = 3 * math.sqrt(max(pe * (1 - pe), 0.0) / self.n_runs) + 1e-9
                    rep.add(f"exit MC~exact K={K:g} gamma={g:g}", pm - pe, tol, abs(pm - pe) <= tol, exact=pe)
        rep.add(f"exit probability < {self.threshold:g} at K={self.Ks[-1]:g}", probs[-1], self.threshold,
                probs[-1] < self.threshold)
        if len(probs) > 1:
            rep.add(f"exit probability smaller at K={self.Ks[-1]:g} than K={self.Ks[0]:g}", probs[-1] - probs[0],
                    0.0, probs[-1] < probs[0], probabilities=probs)
        return rep


SUITES = {s.name: s for s in (MartingaleSuite, BaseCaseSuite, RecursionSuite, KingmanSuite, DensitySuite)}
