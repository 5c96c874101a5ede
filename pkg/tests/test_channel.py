import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uplinksched.channel import (ChannelModel, db_to_linear, gain_from_uniform, linear_to_db, make_bins, max_rate,
                                 power_required, quantize, quantize_many, sample_gain)


class FixedUniform:
    """Stands in for a generator; hands out preset uniforms and counts them."""

    def __init__(self, *values):
        self.values = list(values)
        self.used = 0

    def random(self):
        self.used += 1
        return self.values.pop(0)


def test_sample_gain_inverse_cdf_at_mean_quantile():
    rng = FixedUniform(1.0 - math.exp(-1.0))
    assert sample_gain(rng, ChannelModel(mean_gain_linear=1.0)) == pytest.approx(1.0, abs=1e-12)
    assert rng.used == 1


def test_sample_gain_zero_uniform_gives_zero():
    assert sample_gain(FixedUniform(0.0), ChannelModel()) == 0.0


def test_sample_gain_uses_exactly_one_uniform():
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    sample_gain(a, ChannelModel())
    b.random()
    assert a.random() == b.random()


def test_empirical_mean_gain():
    # -3.28 dB mean gain, 10^6 draws
    alpha = 0.4698
    g = gain_from_uniform(np.random.default_rng(0).random(1_000_000), alpha)
    assert g.mean() == pytest.approx(alpha, rel=0.01)
    assert linear_to_db(alpha) == pytest.approx(-3.28, abs=0.005)


def test_make_bins_octiles():
    b, s = make_bins(8)
    assert b[1] == pytest.approx(-math.log(0.75), abs=1e-12)
    assert b[1] == pytest.approx(0.28768, abs=1e-5)
    assert linear_to_db(b[1]) == pytest.approx(-5.41, abs=0.005)
    assert b[3] == pytest.approx(math.log(2.0), abs=1e-12)
    assert linear_to_db(b[3]) == pytest.approx(-1.59, abs=0.005)
    assert b[0] == pytest.approx(0.13353, abs=1e-5)
    assert linear_to_db(b[0]) == pytest.approx(-8.74, abs=0.005)


def test_make_bins_analytic_to_1e9():
    b, _ = make_bins(8)
    k = np.arange(1, 8)
    assert np.max(np.abs(b - (-np.log(1 - k / 8)))) < 1e-9


def test_bin_probabilities_are_one_eighth():
    p = ChannelModel(mean_gain_linear=1.0).state_probabilities()
    assert p.shape == (8,)
    assert np.max(np.abs(p - 0.125)) < 1e-12


def test_make_bins_representatives():
    _, s = make_bins(8)
    assert linear_to_db(s[0]) == pytest.approx(-13.0)
    assert linear_to_db(s[1]) == pytest.approx(-8.47)
    assert np.allclose(s[2:], make_bins(8)[0][1:])
    b4, s4 = make_bins(4)
    assert np.allclose(s4[1:], b4)
    assert 0 < s4[0] < b4[0]


@pytest.mark.parametrize("n", [1, 0, -3])
def test_make_bins_rejects_fewer_than_two(n):
    with pytest.raises(ValueError):
        make_bins(n)


def test_quantize_examples():
    ch = ChannelModel()
    assert quantize(0.5, ch) == 3
    assert linear_to_db(ch.bin_states[3]) == pytest.approx(-3.28, abs=0.005)
    assert quantize(0.01, ch) == 0
    assert linear_to_db(ch.bin_states[0]) == pytest.approx(-13.0)


def test_quantize_boundary_goes_up():
    ch = ChannelModel()
    for k, edge in enumerate(ch.bin_boundaries):
        assert quantize(edge, ch) == k + 1
        assert quantize(np.nextafter(edge, 0), ch) == k


def test_quantize_rejects_negative():
    with pytest.raises(ValueError):
        quantize(-1e-9, ChannelModel())


def test_empirical_bin_frequencies():
    ch = ChannelModel(mean_gain_linear=1.0)
    idx = quantize_many(gain_from_uniform(np.random.default_rng(1).random(1_000_000), 1.0), ch)
    freq = np.bincount(idx, minlength=8) / idx.size
    assert np.all(np.abs(freq - 0.125) <= 0.003)


def test_power_required_examples():
    ch = ChannelModel()
    assert power_required(1.0, 0, ch) == 0.0
    assert power_required(1.0, 3, ch) == pytest.approx(7.0)
    assert power_required(0.4698, 1, ch) == pytest.approx(2.1286, abs=1e-4)


def test_power_required_bandwidth_scaling():
    # exponent is z * tau / W_slot
    ch = ChannelModel(fragment_bits=2000, bandwidth_slots=4000.0)
    assert power_required(1.0, 2, ch) == pytest.approx(1.0)


@pytest.mark.parametrize("x", [0.0, -0.5])
def test_power_required_rejects_nonpositive_gain(x):
    with pytest.raises(ValueError):
        power_required(x, 1, ChannelModel())


def test_power_strictly_convex_and_decreasing_in_gain():
    ch = ChannelModel()
    table = ch.power_table(16)
    d = np.diff(table, axis=1)
    assert np.all(np.diff(d, axis=1) > 0)
    assert np.all(d > 0)
    # states ascend, so power must descend along the state axis for z >= 1
    assert np.all(np.diff(table[:, 1:], axis=0) < 0)
    for s, x in enumerate(ch.bin_states):
        for z in range(17):
            assert table[s, z] == pytest.approx(power_required(x, z, ch), rel=1e-12)


def test_max_rate_examples():
    assert max_rate(1.0, ChannelModel(max_power=7.0)) == 3
    assert max_rate(1.0, ChannelModel(max_power=0.5)) == 0


@pytest.mark.parametrize("pmax", [0.5, 1.5, 4.5, 20.0, 500.0])
def test_max_rate_monotone_in_gain(pmax):
    ch = ChannelModel(max_power=pmax)
    caps = ch.rate_caps()
    assert np.all(np.diff(caps) >= 0)
    for x, z in zip(ch.bin_states, caps):
        assert power_required(x, z, ch) <= pmax * (1 + 1e-12)
        assert power_required(x, z + 1, ch) > pmax


@given(st.floats(1e-3, 1e3), st.floats(1e-2, 1e4))
def test_max_rate_is_largest_affordable(x, pmax):
    ch = ChannelModel(max_power=pmax)
    z = max_rate(x, ch)
    assert z == 0 or power_required(x, z, ch) <= pmax * (1 + 1e-12)
    assert power_required(x, z + 1, ch) > pmax


def test_from_db_roundtrip():
    ch = ChannelModel.from_db(-3.28, max_power=3.0)
    assert ch.mean_gain_db == pytest.approx(-3.28)
    assert ch.mean_gain_linear == pytest.approx(float(db_to_linear(-3.28)))
    assert ch.num_states == 8


@pytest.mark.parametrize("kw", [
    dict(mean_gain_linear=0.0),
    dict(max_power=-1.0),
    dict(fragment_bits=0),
    dict(bin_boundaries=np.array([0.5, 0.4]), bin_states=np.array([0.1, 0.45, 0.6])),
    dict(bin_boundaries=np.array([0.5]), bin_states=np.array([0.6, 0.7])),
    dict(bin_boundaries=np.array([0.5]), bin_states=np.array([0.1, 0.2, 0.7])),
])
def test_channel_model_validation(kw):
    with pytest.raises(ValueError):
        ChannelModel(**kw)
