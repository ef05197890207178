import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddbranch import BranchRate, OffspringLaw, SimConfig, density_excursion, run_forward, run_spine
from ddbranch.simulate import ConfigError, Trajectory, replicate_stream
from ddbranch.stats import random_stream

CRITICAL = OffspringLaw.table([0.0, 5.0], [[0.5, 0.0, 0.5], [0.5, 0.0, 0.5]])


def test_empty_population_stays_empty(binary_config):
    traj, forest = run_forward(binary_config.replace(Z0=0), random_stream(1))
    assert traj.status == "completed"
    assert traj.n_events == 0 and traj.final_size == 0
    assert forest.n_alive == 0


def test_binary_jumps_are_unit(binary_config):
    traj, _ = run_forward(binary_config.replace(t_max=3.0), random_stream(2), genealogy=False)
    assert set(np.unique(np.diff(traj.sizes))) <= {-1, 1}
    assert np.all(np.diff(traj.times) > 0)


def test_first_holding_time_mean():
    # Z0 = 10, q = 1: the first event comes after Exp(10)
    cfg = SimConfig(K=10, Z0=10, t_max=50.0)
    waits = []
    for r in range(100_000):
        traj, _ = run_forward(cfg.replace(max_events=1), replicate_stream(3, 1, r), genealogy=False)
        waits.append(traj.times[1])
    se = 0.1 / math.sqrt(len(waits))
    assert abs(np.mean(waits) - 0.1) < 3 * se


def test_spine_population_never_below_k(binary_config):
    cfg = binary_config.replace(k=3, Z0=5, t_max=5.0)
    for r in range(30):
        traj, forest = run_spine(cfg, replicate_stream(4, 1, r))
        assert traj.sizes.min() >= 3
        assert forest.n_spine == 3
        carriers = forest.spine_carriers()
        assert len(set(carriers.tolist())) == 3
        assert all(forest.is_alive(int(u)) for u in carriers)


def test_spine_with_no_spines_is_the_forward_process(binary_config):
    cfg = binary_config.replace(t_max=1.0)
    a, _ = run_spine(cfg, random_stream(0))
    b, _ = run_forward(cfg, random_stream(0))
    assert np.array_equal(a.sizes, b.sizes) and a.fk_integral == 0.0


@pytest.mark.slow
def test_spine_k0_mean_size_matches_forward(binary_config):
    cfg = binary_config.replace(t_max=1.0)
    n = 100_000
    fwd = np.array([run_forward(cfg, replicate_stream(1, 1, r), genealogy=False)[0].final_size for r in range(n)])
    spn = np.array([run_spine(cfg, replicate_stream(1, 2, r), genealogy=False)[0].final_size for r in range(n)])
    se = math.hypot(fwd.std(), spn.std()) / math.sqrt(n)
    assert abs(fwd.mean() - spn.mean()) <= 3 * se


def test_critical_law_has_zero_drift():
    cfg = SimConfig(K=10, Z0=10, law=CRITICAL, k=2, t_max=2.0)
    traj, _ = run_spine(cfg, random_stream(5), genealogy=False)
    assert traj.fk_integral == 0.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_drift_integral_recomputed_from_path(seed):
    cfg = SimConfig(K=15, Z0=12, law=OffspringLaw.poisson_exp(1.0), t_max=1.5)
    traj, _ = run_forward(cfg, random_stream(seed), genealogy=False)
    again = traj.recompute_drift_integral(cfg.law, cfg.q)
    assert again == pytest.approx(traj.drift_integral, rel=1e-12, abs=1e-12)


def test_same_stream_same_path(binary_config):
    a, _ = run_forward(binary_config, random_stream(9), genealogy=True)
    c, _ = run_forward(binary_config, random_stream(9), genealogy=True)
    assert np.array_equal(a.times, c.times) and np.array_equal(a.sizes, c.sizes)


def test_forest_matches_trajectory(binary_config):
    cfg = binary_config.replace(t_max=4.0, prune_every=7)
    traj, forest = run_forward(cfg, random_stream(10))
    assert forest.n_alive == traj.final_size
    assert forest.subfamily_sizes().sum() == traj.final_size


def test_population_cap_reports_status():
    cfg = SimConfig(K=10, Z0=10, law=OffspringLaw.degenerate(2), t_max=100.0, max_pop=30)
    traj, _ = run_forward(cfg, random_stream(1), genealogy=False)
    assert traj.status == "capped-population"
    assert traj.final_size > 30


def test_config_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        SimConfig(K=0, Z0=1)
    with pytest.raises(ConfigError):
        SimConfig(K=10, Z0=1, k=2)
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"K": 10, "Z0": 10, "bogus": 1})
    cfg = SimConfig(K=10, Z0=10, law=OffspringLaw.poisson_exp(1.0), beta=0.3, seed=4)
    again = SimConfig.from_dict(cfg.to_dict())
    assert again.config_hash() == cfg.config_hash()
    assert cfg.replace(seed=5).config_hash() != cfg.config_hash()


def test_population_at_and_csv(tmp_path, binary_config):
    traj, _ = run_forward(binary_config, random_stream(3), genealogy=False)
    assert traj.population_at(0.0) == 20
    assert traj.population_at(traj.end_time) == traj.final_size
    traj.to_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("time,population\n")


def _traj(sizes, K=10.0):
    sizes = np.asarray(sizes)
    return Trajectory(np.arange(sizes.size, dtype=float), sizes, K, 0, float(sizes.size), 0.0, "completed", 0)


def test_density_excursion_examples():
    assert density_excursion(_traj([10, 11, 12, 13]), 0.3) == 3.0
    assert density_excursion(_traj([10, 11, 12]), 0.3) is None
    assert density_excursion(_traj([14]), 0.2) == 0.0
    with pytest.raises(ValueError):
        density_excursion(_traj([10]), 0.0)
