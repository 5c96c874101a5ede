import sys

import numpy as np
import pytest

from uplinksched.channel import ChannelModel, make_bins
from uplinksched.oracle import OracleModel
from uplinksched.traffic import DiscreteArrivals

# single-user instance with a known arrival pmf: 4 equal-probability channel
# bins at 0 dB mean gain, 0..3 fragments per slot (mean 1), 20-fragment buffer
SMALL_PMF = (0.4, 0.3, 0.2, 0.1)
SMALL_QMAX = 20


def small_channel(max_power=20.0):
    b, s = make_bins(4)
    return ChannelModel(mean_gain_linear=1.0, max_power=max_power, bin_boundaries=b, bin_states=s)


def small_model(delay_target, q_max=SMALL_QMAX):
    ch = small_channel()
    return OracleModel(np.array(SMALL_PMF), ch.state_probabilities(), ch, q_max, delay_target)


def tiny_channel():
    """Two states {0.5, 1.0} split at ln 2, so each has probability 1/2 at unit mean."""
    return ChannelModel(max_power=7.0, bin_boundaries=np.array([np.log(2.0)]), bin_states=np.array([0.5, 1.0]))


def tiny_model(delay_target=1.0):
    return OracleModel([0.5, 0.5], [0.5, 0.5], tiny_channel(), 3, delay_target, bid_bits=None)


@pytest.fixture
def small_traffic():
    return DiscreteArrivals(SMALL_PMF)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
