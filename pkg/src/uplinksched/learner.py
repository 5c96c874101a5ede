"""Per-user online rate allocation.

Each user keeps a relative value table over post-decision states
``(queue after transmission, channel state)`` and a Lagrange multiplier on its
average-queue constraint.  The table moves on the fast stepsize ``f_n``, the
multiplier on the slow one ``e_n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .channel import ChannelModel, max_rate, power_required

DEFAULT_MULTIPLIER_CAP = 1000.0
DEFAULT_Q_MAX = 200
DEFAULT_BID_BITS = 3


@njit(cache=True)
def greedy_rate(V, q, col, cap, power_row):
    """Smallest minimizer over ``v = 0..min(cap, q)`` of ``P(x, v) + V[q - v, col]``.

    The remaining terms of the full rate-selection objective do not depend on
    ``v`` and are dropped.
    """
    hi = min(cap, q)
    best = 0
    best_val = power_row[0] + V[q, col]
    for v in range(1, hi + 1):
        val = power_row[v] + V[q - v, col]
        if val < best_val:
            best = v
            best_val = val
    return best


@njit(cache=True)
def value_step(V, post_q, post_col, q, col, r, lam, delta, f, power_row, ref_q, ref_col):
    target = power_row[r] + lam * (q - delta) + V[q - r, col] - V[ref_q, ref_col]
    V[post_q, post_col] = (1.0 - f) * V[post_q, post_col] + f * target


@njit(cache=True)
def project(lam, cap):
    if lam < 0.0:
        return 0.0
    if lam > cap:
        return cap
    return lam


@dataclass(frozen=True)
class StepsizeSchedule:
    """``f_n = fast_scale * (n + fast_offset)**-fast_exponent`` and
    ``e_n = slow_scale * (n + slow_offset)**-slow_exponent``.

    Exponents in (1/2, 1] give square summable, non-summable sequences;
    ``slow_exponent > fast_exponent`` also gives ``e_n / f_n -> 0``.
    """

    fast_exponent: float = 0.6
    slow_exponent: float = 0.9
    fast_scale: float = 1.0
    slow_scale: float = 1.0
    fast_offset: float = 0.0
    slow_offset: float = 0.0  # a large offset keeps early steps small without changing the tail

    def __post_init__(self):
        for p in (self.fast_exponent, self.slow_exponent):
            if not 0.5 < p <= 1.0:
                raise ValueError(f"stepsize exponent {p} outside (0.5, 1]")
        if not self.slow_exponent >= self.fast_exponent:
            raise ValueError("slow stepsize must decay faster than the fast one")
        if not (self.fast_scale > 0 and self.slow_scale > 0):
            raise ValueError("stepsize scales must be positive")
        if not (self.fast_offset >= 0 and self.slow_offset >= 0):
            raise ValueError("stepsize offsets must be non-negative")

    def fast(self, n):
        return self.fast_scale * np.power(np.add(n, self.fast_offset, dtype=float), -self.fast_exponent)

    def slow(self, n):
        return self.slow_scale * np.power(np.add(n, self.slow_offset, dtype=float), -self.slow_exponent)


def stepsize_defaults() -> StepsizeSchedule:
    return StepsizeSchedule()


@dataclass
class LearnerState:
    delay_target_queue: float
    num_states: int = 8
    q_max: int = DEFAULT_Q_MAX
    multiplier_cap: float = DEFAULT_MULTIPLIER_CAP
    multiplier: float = 0.0
    slot_count: int = 1
    queue: int = 0
    prev_post_state: tuple[int, int] = (0, 0)
    reference_state: tuple[int, int] = (0, 0)
    value_table: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.value_table is None:
            self.value_table = np.zeros((self.q_max + 1, self.num_states))
        if not self.delay_target_queue > 0:
            raise ValueError("delay_target_queue must be positive")
        if not 0.0 <= self.multiplier <= self.multiplier_cap:
            raise ValueError("multiplier outside [0, multiplier_cap]")

    @property
    def reference_value(self) -> float:
        return float(self.value_table[self.reference_state])

    def relative_values(self) -> np.ndarray:
        return self.value_table - self.reference_value

    def advance(self, queue: int, transmitted: int, new_state: int):
        """Move to the next post-decision state and bump the slot counter."""
        post = queue - transmitted
        if not 0 <= post <= self.q_max:
            raise ValueError(f"post-decision queue {post} out of range")
        self.prev_post_state = (post, new_state)
        self.queue = queue
        self.slot_count += 1


def _rate_cap(x: float, channel: ChannelModel, bid_bits: int | None) -> int:
    cap = max_rate(x, channel)
    if bid_bits is not None:
        cap = min(cap, 2 ** bid_bits - 1)
    return cap


def lagrangian_cost(lam: float, q: int, x: float, r: int, channel: ChannelModel, delay_target: float,
                    bid_bits: int | None = None) -> float:
    """Per-slot cost ``P(x, r) + lam * (q - delay_target)``; ``x`` is a linear gain."""
    if not 0 <= r <= min(q, _rate_cap(x, channel, bid_bits)):
        raise ValueError(f"rate {r} infeasible at queue {q}, gain {x}")
    return power_required(x, r, channel) + lam * (q - delay_target)


def feasible_set(q: int, x: float, channel: ChannelModel, bid_bits: int | None = DEFAULT_BID_BITS) -> range:
    if q < 0:
        raise ValueError("queue must be non-negative")
    return range(min(_rate_cap(x, channel, bid_bits), q) + 1)


def _checked_queue(state: LearnerState, arrivals: int) -> int:
    q = state.prev_post_state[0] + arrivals
    if arrivals < 0 or q > state.q_max:
        raise ValueError(f"queue {q} outside [0, {state.q_max}]; cap arrivals first")
    return q


def choose_rate(state: LearnerState, arrivals: int, new_state: int, f_n: float, channel: ChannelModel,
                bid_bits: int | None = DEFAULT_BID_BITS) -> int:
    """Rate to bid this slot, given arrivals and the channel state index just observed."""
    q = _checked_queue(state, arrivals)
    if f_n == 0.0:
        # objective is constant in the rate
        return 0
    x = channel.bin_states[new_state]
    cap = _rate_cap(x, channel, bid_bits)
    power_row = channel.power_table(max(cap, 0))[new_state]
    return int(greedy_rate(state.value_table, q, new_state, cap, power_row))


def update_value(state: LearnerState, arrivals: int, new_state: int, rate: int, f_n: float,
                 channel: ChannelModel, bid_bits: int | None = DEFAULT_BID_BITS):
    """Relax the single table entry at the previous post-decision state."""
    q = _checked_queue(state, arrivals)
    x = channel.bin_states[new_state]
    if rate not in feasible_set(q, x, channel, bid_bits):
        raise ValueError(f"rate {rate} infeasible at queue {q}, state {new_state}")
    power_row = channel.power_table(rate)[new_state]
    pq, pcol = state.prev_post_state
    rq, rcol = state.reference_state
    value_step(state.value_table, pq, pcol, q, new_state, rate, state.multiplier,
               state.delay_target_queue, f_n, power_row, rq, rcol)


def update_multiplier(state: LearnerState, queue: int, e_n: float):
    if queue < 0:
        raise ValueError("queue must be non-negative")
    state.multiplier = float(project(state.multiplier + e_n * (queue - state.delay_target_queue),
                                     state.multiplier_cap))
