"""Block-fading channel: Rayleigh gains, finite-state quantizer and the power-rate law."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Representative gains (dB) of the two lowest bins in the 8-state model.
# Higher bins use their exact lower edge.
LOWEST_STATE_DB = -13.0
SECOND_STATE_DB = -8.47

DEFAULT_NUM_STATES = 8


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def make_bins(num_states: int = DEFAULT_NUM_STATES) -> tuple[np.ndarray, np.ndarray]:
    """Equal-probability bins of the unit-mean exponential.

    Returns ``(boundaries, states)`` in linear units.  Boundaries are the
    quantiles ``-ln(1 - k/num_states)``.  For 8 states the two lowest
    representatives are -13 dB and -8.47 dB and the rest are the bin lower
    edges; otherwise every bin uses its lower edge, and the lowest bin gets a
    floor state 3 dB below the first boundary.
    """
    if num_states < 2:
        raise ValueError(f"num_states must be >= 2, got {num_states}")
    k = np.arange(1, num_states)
    boundaries = -np.log1p(-k / num_states)
    states = np.empty(num_states)
    states[1:] = boundaries
    if num_states == DEFAULT_NUM_STATES:
        states[0] = db_to_linear(LOWEST_STATE_DB)
        states[1] = db_to_linear(SECOND_STATE_DB)
    else:
        states[0] = boundaries[0] / 2.0
    return boundaries, states


@dataclass(frozen=True)
class ChannelModel:
    """Per-user channel parameters.

    ``bandwidth_slots`` is W times the slot length in bits; with the default
    (equal to ``fragment_bits``) the power exponent is exactly the number of
    fragments sent.
    """

    mean_gain_linear: float = 1.0
    max_power: float = 20.0
    fragment_bits: int = 2000
    bandwidth_slots: float | None = None
    bin_boundaries: np.ndarray = field(default=None, repr=False)
    bin_states: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.bin_boundaries is None or self.bin_states is None:
            b, s = make_bins(DEFAULT_NUM_STATES)
            object.__setattr__(self, "bin_boundaries", b)
            object.__setattr__(self, "bin_states", s)
        object.__setattr__(self, "bin_boundaries", np.asarray(self.bin_boundaries, dtype=float))
        object.__setattr__(self, "bin_states", np.asarray(self.bin_states, dtype=float))
        if self.bandwidth_slots is None:
            object.__setattr__(self, "bandwidth_slots", float(self.fragment_bits))
        self.validate()

    @classmethod
    def from_db(cls, mean_gain_db: float, max_power: float = 20.0, num_states: int = DEFAULT_NUM_STATES,
                fragment_bits: int = 2000, bandwidth_slots: float | None = None) -> "ChannelModel":
        b, s = make_bins(num_states)
        return cls(mean_gain_linear=float(db_to_linear(mean_gain_db)), max_power=max_power,
                   fragment_bits=fragment_bits, bandwidth_slots=bandwidth_slots,
                   bin_boundaries=b, bin_states=s)

    def validate(self):
        b, s = self.bin_boundaries, self.bin_states
        if not self.mean_gain_linear > 0:
            raise ValueError("mean_gain_linear must be positive")
        if not self.max_power > 0:
            raise ValueError("max_power must be positive")
        if self.fragment_bits <= 0 or not self.bandwidth_slots > 0:
            raise ValueError("fragment_bits and bandwidth_slots must be positive")
        if len(s) != len(b) + 1:
            raise ValueError("need exactly one more state than boundaries")
        if np.any(np.diff(b) <= 0) or b[0] <= 0:
            raise ValueError("bin boundaries must be positive and strictly increasing")
        lower = np.r_[0.0, b]
        upper = np.r_[b, np.inf]
        if np.any(s <= 0) or np.any(s < lower) or np.any(s >= upper):
            raise ValueError("each representative state must lie in its bin")

    @property
    def num_states(self) -> int:
        return len(self.bin_states)

    @property
    def mean_gain_db(self) -> float:
        return float(linear_to_db(self.mean_gain_linear))

    def state_probabilities(self) -> np.ndarray:
        """Bin probabilities when the gain is exponential with this model's mean."""
        edges = np.r_[0.0, self.bin_boundaries]
        upper = np.r_[np.exp(-edges[1:] / self.mean_gain_linear), 0.0]
        return np.exp(-edges / self.mean_gain_linear) - upper

    def power_table(self, max_fragments: int) -> np.ndarray:
        """``P[s, z]`` for every state and ``z = 0..max_fragments``."""
        z = np.arange(max_fragments + 1)
        expo = z * self.fragment_bits / self.bandwidth_slots
        return (2.0 ** expo - 1.0)[None, :] / self.bin_states[:, None]

    def rate_caps(self) -> np.ndarray:
        return np.array([max_rate(x, self) for x in self.bin_states], dtype=np.int64)


def sample_gain(rng: np.random.Generator, model: ChannelModel) -> float:
    """One exponential draw by inverse CDF; uses a single uniform."""
    u = rng.random()
    return float(gain_from_uniform(u, model.mean_gain_linear))


def gain_from_uniform(u, mean_gain):
    return -mean_gain * np.log1p(-np.asarray(u, dtype=float))


def quantize(gain: float, model: ChannelModel) -> int:
    """Bin index of ``gain``; bins are lower-inclusive."""
    if gain < 0:
        raise ValueError(f"gain must be non-negative, got {gain}")
    return int(np.searchsorted(model.bin_boundaries, gain, side="right"))


def quantize_many(gains: np.ndarray, model: ChannelModel) -> np.ndarray:
    return np.searchsorted(model.bin_boundaries, gains, side="right").astype(np.int8)


def power_required(state_gain: float, fragments: int, model: ChannelModel) -> float:
    """Transmit power for ``fragments`` fragments at linear gain ``state_gain`` (W*N0 = 1)."""
    if not state_gain > 0:
        raise ValueError(f"state_gain must be positive, got {state_gain}")
    if fragments < 0:
        raise ValueError("fragments must be non-negative")
    expo = fragments * model.fragment_bits / model.bandwidth_slots
    return (2.0 ** expo - 1.0) / state_gain


def max_rate(state_gain: float, model: ChannelModel) -> int:
    """Largest fragment count affordable at ``model.max_power``."""
    limit = model.max_power * (1.0 + 1e-12)
    z = 0
    while z < 256 and power_required(state_gain, z + 1, model) <= limit:
        z += 1
    return z
