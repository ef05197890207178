import math

import numpy as np
import pytest
from scipy import stats as sps

from ddbranch import BranchRate, OffspringLaw, SimConfig
from ddbranch import ctmc_oracle as oracle
from ddbranch.moments import estimate_spinal_base
from ddbranch.stats import random_stream

SUPER = OffspringLaw.table([0.0, 10.0], [[0.25, 0.0, 0.75], [0.25, 0.0, 0.75]])


def test_pure_death_transient_is_binomial():
    cfg = SimConfig(K=10, Z0=12, law=OffspringLaw.degenerate(0))
    gen = oracle.build_generator(cfg, 0, window=(0, 12))
    tr = oracle.transient_distribution(gen, 12, 0.7)
    assert abs(tr.mean() - 12 * math.exp(-0.7)) < 1e-8
    assert np.allclose(tr.probs, sps.binom.pmf(tr.states, 12, math.exp(-0.7)), atol=1e-10)


def test_mass_is_conserved_up_to_absorption(binary_config):
    gen = oracle.build_generator(binary_config, 0, window=(0, 30))
    tr = oracle.transient_distribution(gen, 20, 2.0)
    assert tr.absorbed > 0
    assert tr.probs.sum() + tr.absorbed == pytest.approx(1.0, abs=1e-10)
    assert np.all(tr.probs >= -1e-15)


def test_semigroup_property(poisson_config):
    gen = oracle.build_generator(poisson_config, 0)
    a = oracle.transient_distribution(gen, 20, 0.7).probs
    b = oracle.transient_distribution(gen, 20, 0.3).probs
    c = oracle.transient_distribution(gen, b, 0.4).probs
    assert np.allclose(a, c, atol=1e-10)


def test_constant_potential_gives_exponential():
    # m = 1.5 for every density: V = k q (m - 1) = 0.5 k; reflecting edges keep all mass inside
    cfg = SimConfig(K=10, Z0=10, law=SUPER)
    gen = oracle.build_generator(cfg, 2, window=(2, 60), policy="reflect-reject")
    val = oracle.feynman_kac(gen, 10, 0.8, 1.0)
    assert val == pytest.approx(math.exp(0.5 * 2 * 0.8), rel=1e-8)


def test_ode_and_expm_agree(binary_config):
    gen = oracle.build_generator(binary_config, 2)
    w = oracle.psi_weight(binary_config.replace(beta=0.5), None)
    a = oracle.feynman_kac(gen, 20, 1.0, w, method="ode")
    b = oracle.feynman_kac(gen, 20, 1.0, w, method="expm")
    assert a == pytest.approx(b, rel=1e-8)


def test_forward_and_backward_agree(poisson_config):
    gen = oracle.build_generator(poisson_config, 1)
    w = oracle.psi_weight(poisson_config, None)(gen.states)
    back = oracle.feynman_kac_backward(gen, w, [0.9])[0][gen.index(20)]
    fwd = float(np.dot(oracle.feynman_kac_forward(gen, 20, [0.9])[0], w))
    assert back == pytest.approx(fwd, rel=1e-8)


def test_plain_spines_reproduce_unspined_generator(poisson_config):
    k = 2
    spined = oracle.build_generator(poisson_config, k).with_plain_spines()
    plain = oracle.build_generator(poisson_config, 0, window=(k, spined.n_max))
    assert abs(spined.rates - plain.rates).max() < 1e-13
    assert np.allclose(spined.exit_rates, plain.exit_rates, atol=1e-13)
    assert np.all(spined.potential == 0)


def test_spine_rates_match_formula(binary_config):
    gen = oracle.build_generator(binary_config, 2, window=(2, 40))
    n = 20
    i = gen.index(n)
    z = n / 20
    p2 = 1 / (1 + z)
    p0 = z / (1 + z)
    # up jump: ((n - k) + 2 k) q p2, down jump: (n - k) q p0
    assert gen.rates[i, gen.index(n + 1)] == pytest.approx((n - 2 + 4) * p2)
    assert gen.rates[i, gen.index(n - 1)] == pytest.approx((n - 2) * p0)
    assert gen.potential[i] == pytest.approx(2 * (2 * p2 - 1))


def test_base_moment_matches_spinal_monte_carlo(binary_config):
    cfg = binary_config.replace(beta=0.5)
    exact = oracle.exact_base_moment(cfg, 2, 0.5)
    mc = estimate_spinal_base(cfg, 2, 0.5, reps=4000, seed=3)
    assert abs(mc.value - exact) <= 3 * mc.std_error


def test_window_errors_and_csv(tmp_path, binary_config):
    with pytest.raises(oracle.OracleError):
        oracle.build_generator(binary_config, 0, window=(25, 30))
    with pytest.raises(oracle.OracleError):
        oracle.build_generator(binary_config, 3, window=(2, 30))
    gen = oracle.build_generator(binary_config, 0, window=(0, 25))
    gen.to_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "from,to,rate"
    assert any(",sink," in line for line in lines)
    assert oracle.window_leak(binary_config, 0, 1.0) < 1e-10  # Poisson series cut only
