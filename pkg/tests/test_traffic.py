import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from uplinksched.traffic import (DiscreteArrivals, FragmentBatch, TrafficModel, arrivals, fragment, read_trace,
                                 sample_fragment_counts, sample_packet_size, size_from_uniform, write_trace)

# mean of the renormalized truncated Pareto (shape 1.2, 2000..10000 bits), by
# numerical integration of the density in test_mean_matches_quadrature
MEAN_BITS = 3862.5425
# 0.1 packets/slot times E[ceil(Y / 2000)], same integration
MEAN_FRAGMENTS_PER_SLOT = 0.25350047


def _density(m):
    z = 1 - (m.mode_bits / m.cutoff_bits) ** m.shape
    return lambda y: m.shape * m.mode_bits ** m.shape * y ** (-m.shape - 1) / z


def test_mean_matches_quadrature():
    m = TrafficModel()
    f = _density(m)
    mean = quad(lambda y: y * f(y), m.mode_bits, m.cutoff_bits)[0]
    frags = sum(k * quad(f, max((k - 1) * 2000, m.mode_bits), k * 2000)[0] for k in range(1, 6))
    assert mean == pytest.approx(MEAN_BITS, abs=1e-3)
    assert 0.1 * frags == pytest.approx(MEAN_FRAGMENTS_PER_SLOT, abs=1e-8)
    assert m.mean_packet_bits() == pytest.approx(MEAN_BITS, abs=1e-3)
    assert m.mean_fragments_per_slot() == pytest.approx(MEAN_FRAGMENTS_PER_SLOT, abs=1e-8)


def test_size_examples():
    m = TrafficModel()
    assert size_from_uniform(0.0, m) == 2000
    assert size_from_uniform(0.5, m) == 3184


def test_empirical_mean_size():
    sizes = size_from_uniform(np.random.default_rng(0).random(1_000_000), TrafficModel())
    assert sizes.mean() == pytest.approx(3862, rel=0.01)
    # the stated figure is 3860
    assert sizes.mean() == pytest.approx(3860, rel=0.01)


def test_sizes_inside_support():
    m = TrafficModel()
    rng = np.random.default_rng(5)
    sizes = [sample_packet_size(rng, m) for _ in range(2000)]
    assert min(sizes) >= m.mode_bits and max(sizes) <= m.cutoff_bits


def test_atom_at_cutoff_would_contradict_stated_mean():
    # keeping the untruncated tail as a mass at the cutoff gives ~4752 bits
    m = TrafficModel()
    tail = (m.mode_bits / m.cutoff_bits) ** m.shape
    with_atom = m.mean_packet_bits() * (1 - tail) + tail * m.cutoff_bits
    assert with_atom == pytest.approx(4752, rel=0.01)


@pytest.mark.parametrize("bits,frags", [(0, 0), (1, 1), (2000, 1), (2001, 2), (10000, 5)])
def test_fragment(bits, frags):
    assert fragment(bits, 2000) == frags


def test_fragment_rejects_negative():
    with pytest.raises(ValueError):
        fragment(-1, 2000)


def test_zero_rate_gives_no_arrivals():
    m = TrafficModel(packet_rate=0.0)
    rng = np.random.default_rng(0)
    assert all(arrivals(rng, m, t).count == 0 for t in range(1000))
    assert sample_fragment_counts(rng, [m, m], 500).sum() == 0


def test_arrivals_batch():
    b = arrivals(np.random.default_rng(2), TrafficModel(packet_rate=3.0), 17)
    assert isinstance(b, FragmentBatch) and b.arrival_slot == 17 and b.count >= 0
    with pytest.raises(ValueError):
        FragmentBatch(count=-1, arrival_slot=0)


def test_long_run_bits_per_slot():
    # 386 bits per 1 ms slot is 0.386 Mbit/s
    m = TrafficModel()
    rng = np.random.default_rng(11)
    n = 1_000_000
    k = rng.poisson(m.packet_rate, n)
    bits = size_from_uniform(rng.random(int(k.sum())), m).sum() / n
    assert bits == pytest.approx(386, rel=0.02)
    assert m.mean_bits_per_slot() == pytest.approx(386, rel=0.002)


def test_long_run_fragments_per_slot_matches_analytic():
    counts = sample_fragment_counts(np.random.default_rng(4), [TrafficModel()], 1_000_000)
    assert counts.mean() == pytest.approx(MEAN_FRAGMENTS_PER_SLOT, rel=0.01)


def test_fragment_support():
    m = TrafficModel()
    sizes = size_from_uniform(np.random.default_rng(9).random(200_000), m)
    frags = -(-sizes // m.fragment_bits)
    assert set(np.unique(frags)) <= {1, 2, 3, 4, 5}
    assert m.fragment_pmf().size == 6


def test_arrival_pmf_is_compound_poisson():
    m = TrafficModel()
    p = m.arrival_pmf()
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.dot(np.arange(p.size), p) == pytest.approx(m.mean_fragments_per_slot(), rel=1e-9)
    assert p[0] == pytest.approx(np.exp(-m.packet_rate), rel=1e-12)
    counts = sample_fragment_counts(np.random.default_rng(8), [m], 400_000)[:, 0]
    emp = np.bincount(counts, minlength=8)[:8] / counts.size
    assert np.allclose(emp, p[:8], atol=3e-3)


def test_same_seed_same_arrivals():
    ms = [TrafficModel(), TrafficModel(packet_rate=0.3)]
    a = sample_fragment_counts(np.random.default_rng(21), ms, 5000)
    b = sample_fragment_counts(np.random.default_rng(21), ms, 5000)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kw", [dict(packet_rate=-0.1), dict(shape=1.0), dict(mode_bits=10000),
                                dict(fragment_bits=0)])
def test_traffic_model_validation(kw):
    with pytest.raises(ValueError):
        TrafficModel(**kw)


def test_discrete_arrivals():
    d = DiscreteArrivals((0.4, 0.3, 0.2, 0.1))
    assert d.mean_fragments_per_slot() == pytest.approx(1.0)
    assert list(d.counts_from_uniform([0.0, 0.39, 0.4, 0.69, 0.7, 0.95, 0.999999])) == [0, 0, 1, 1, 2, 3, 3]
    counts = sample_fragment_counts(np.random.default_rng(0), [d], 200_000)[:, 0]
    assert np.allclose(np.bincount(counts) / counts.size, d.pmf, atol=3e-3)
    for bad in [(0.5, 0.6), (-0.1, 1.1), ()]:
        with pytest.raises(ValueError):
            DiscreteArrivals(bad)


def test_trace_roundtrip(tmp_path):
    counts = np.array([[0, 1], [3, 0], [2, 2]])
    p = tmp_path / "trace.csv"
    write_trace(p, counts)
    assert np.array_equal(read_trace(p, 2), counts)
    with pytest.raises(ValueError):
        read_trace(p, 3)


@given(st.integers(0, 10 ** 7), st.integers(1, 10 ** 5))
def test_fragment_is_ceiling(bits, tau):
    k = fragment(bits, tau)
    assert k * tau >= bits and (k - 1) * tau < bits or (bits == 0 and k == 0)
