import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from ddbranch.stats import (Accumulator, descending_factorial, elementary_symmetric,
                            elementary_symmetric_all, ks_critical_value, ks_statistic,
                            map_replicates, random_stream, truncated_exponential_cdf,
                            truncated_exponential_mean)


@settings(deadline=None)
@given(st.lists(st.integers(0, 4), min_size=0, max_size=5).filter(lambda s: sum(s) <= 8), st.integers(0, 4))
def test_ordered_tuple_sum_is_k_factorial_e_k(sizes, k):
    # exhaustive oracle: ordered k-tuples of individuals from distinct families
    members = [f for f, s in enumerate(sizes) for _ in range(s)]
    count = 0
    for tup in itertools.permutations(range(len(members)), k):
        fams = [members[i] for i in tup]
        count += len(set(fams)) == k
    assert count == math.factorial(k) * elementary_symmetric(sizes, k)


def test_elementary_symmetric_small_values():
    assert elementary_symmetric([1, 2, 3], 2) == 11
    assert elementary_symmetric([1, 2, 3], 3) == 6
    assert elementary_symmetric([], 0) == 1
    assert elementary_symmetric([5], 2) == 0


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=7))
def test_newton_identities(xs):
    e = elementary_symmetric_all(xs, 3)
    p = [sum(x**j for x in xs) for j in (1, 2, 3)]
    assert e[1] == pytest.approx(p[0], abs=1e-9)
    assert 2 * e[2] == pytest.approx(e[1] * p[0] - p[1], abs=1e-8)
    assert 3 * e[3] == pytest.approx(e[2] * p[0] - e[1] * p[1] + p[2], abs=1e-7)


def test_descending_factorial():
    assert descending_factorial(5, 0) == 1
    assert descending_factorial(5, 2) == 20
    assert descending_factorial(2, 3) == 0
    with pytest.raises(ValueError):
        descending_factorial(3, -1)


def test_ks_statistic_hand_example():
    # samples at 0.25 and 0.75 against the uniform law: D = 0.25
    assert ks_statistic([0.25, 0.75], lambda x: x) == pytest.approx(0.25)


def test_ks_statistic_agrees_with_scipy():
    x = random_stream(3).exponential(size=200)
    ref = sps.kstest(x, sps.expon.cdf).statistic
    assert ks_statistic(x, sps.expon.cdf) == pytest.approx(ref, abs=1e-12)


def test_ks_critical_value_matches_asymptotics():
    # 1% asymptotic value is about 1.63 / sqrt(n)
    c = ks_critical_value(400, 0.01, n_sim=2000)
    assert c == pytest.approx(1.628 / math.sqrt(400), rel=0.08)


def test_truncated_exponential_helpers():
    cdf = truncated_exponential_cdf(1.0, 2.0)
    assert cdf(np.array([0.0]))[0] == 0.0
    assert cdf(np.array([2.0]))[0] == pytest.approx(1.0)
    # numerical mean of the truncated law
    s = np.linspace(0, 2, 200001)
    dens = np.exp(-s) / (1 - math.exp(-2))
    assert truncated_exponential_mean(1.0, 2.0) == pytest.approx(np.trapezoid(s * dens, s), rel=1e-8)


def test_streams_are_reproducible_and_distinct():
    a = random_stream(11, 5).random(1000)
    b = random_stream(11, 5).random(1000)
    c = random_stream(11, 6).random(1000)
    d = random_stream(12, 5).random(1000)
    assert np.array_equal(a, b)
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.15
    assert abs(np.corrcoef(a, d)[0, 1]) < 0.15


def test_stream_uniformity_chi_square():
    u = random_stream(1, 99).random(20000)
    counts = np.histogram(u, bins=20, range=(0, 1))[0]
    assert sps.chisquare(counts).pvalue > 0.001


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30),
       st.lists(st.floats(-100, 100), min_size=1, max_size=30))
def test_accumulator_merge_matches_pooled(xs, ys):
    merged = Accumulator.from_values(xs).merge(Accumulator.from_values(ys))
    pooled = np.array(xs + ys)
    assert merged.count == pooled.size
    assert merged.mean == pytest.approx(pooled.mean(), abs=1e-9)
    assert merged.variance == pytest.approx(pooled.var(), abs=1e-6)


def test_map_replicates_order_independent_of_threads():
    fn = lambda r: float(random_stream(5, r).random())
    assert map_replicates(fn, 50, 1) == map_replicates(fn, 50, 4)
