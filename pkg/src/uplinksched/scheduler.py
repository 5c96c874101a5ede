"""Base-station user selection: highest bid, soft-max, M-LWDF and round robin."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

POLICIES = ("proposed", "softmax", "mlwdf", "roundrobin")
PROPOSED, SOFTMAX, MLWDF, ROUNDROBIN = range(4)

DEFAULT_SHARPNESS = 20.0
MLWDF_SMOOTHING = 0.001


def policy_code(name: str) -> int:
    try:
        return POLICIES.index(name)
    except ValueError:
        raise ValueError(f"unknown policy {name!r}; choose from {POLICIES}") from None


@njit(cache=True)
def pick_max(scores, u):
    """Index of the largest score; exact ties resolved by ``u`` uniformly."""
    best = scores[0]
    count = 1
    for i in range(1, scores.shape[0]):
        s = scores[i]
        if s > best:
            best = s
            count = 1
        elif s == best:
            count += 1
    if count == 1:
        for i in range(scores.shape[0]):
            if scores[i] == best:
                return i
    target = min(int(u * count), count - 1)
    seen = 0
    for i in range(scores.shape[0]):
        if scores[i] == best:
            if seen == target:
                return i
            seen += 1
    return -1


@njit(cache=True)
def count_max(scores):
    best = scores.max()
    return np.sum(scores == best)


@njit(cache=True)
def softmax_weights(bids, m):
    # weights (r + 1)**m, scaled by the largest to avoid overflow
    n = bids.shape[0]
    logs = np.empty(n)
    for i in range(n):
        logs[i] = m * np.log(bids[i] + 1.0)
    w = np.exp(logs - logs.max())
    return w / w.sum()


@njit(cache=True)
def pick_softmax(bids, m, u):
    w = softmax_weights(bids, m)
    acc = 0.0
    for i in range(w.shape[0]):
        acc += w[i]
        if u < acc:
            return i
    return w.shape[0] - 1


@njit(cache=True)
def mlwdf_priorities(hol, achievable, targets, avg_rates):
    n = hol.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = hol[i] / (targets[i] * avg_rates[i]) * achievable[i]
    return out


@dataclass(frozen=True)
class ScheduleDecision:
    scheduled_user: int
    indicator: tuple[int, ...]

    def __post_init__(self):
        if sum(self.indicator) != 1 or self.indicator[self.scheduled_user] != 1:
            raise ValueError("exactly one user must be scheduled")

    @classmethod
    def of(cls, k: int, n: int) -> "ScheduleDecision":
        return cls(k, tuple(int(i == k) for i in range(n)))


def _as_scores(values: Sequence, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    return arr


def select_highest_rate(bids: Sequence[int], rng: np.random.Generator) -> ScheduleDecision:
    """Schedule the highest bidder; a uniform is drawn only when the maximum is shared."""
    scores = _as_scores(bids, "bids")
    u = rng.random() if count_max(scores) > 1 else 0.0
    return ScheduleDecision.of(int(pick_max(scores, u)), scores.size)


def softmax_probabilities(bids: Sequence[int], sharpness: float) -> np.ndarray:
    if not sharpness > 0:
        raise ValueError("sharpness must be positive")
    return softmax_weights(_as_scores(bids, "bids"), float(sharpness))


def select_softmax(bids: Sequence[int], sharpness: float, rng: np.random.Generator) -> ScheduleDecision:
    """Pick user i with probability proportional to ``(bid_i + 1) ** sharpness``."""
    scores = _as_scores(bids, "bids")
    if not sharpness > 0:
        raise ValueError("sharpness must be positive")
    return ScheduleDecision.of(int(pick_softmax(scores, float(sharpness), rng.random())), scores.size)


def select_mlwdf(hol_delays, achievable_rates, delay_targets, avg_rates, rng: np.random.Generator) -> ScheduleDecision:
    """M-LWDF: maximize head-of-line delay / (target * average rate) * achievable rate."""
    hol = _as_scores(hol_delays, "hol_delays")
    cols = [_as_scores(v, name) for v, name in ((achievable_rates, "achievable_rates"),
                                                  (delay_targets, "delay_targets"),
                                                  (avg_rates, "avg_rates"))]
    if any(c.size != hol.size for c in cols):
        raise ValueError("all M-LWDF inputs must have the same length")
    if np.any(cols[2] <= 0) or np.any(cols[1] <= 0):
        raise ValueError("delay targets and average rates must be positive")
    prio = mlwdf_priorities(hol, *cols)
    u = rng.random() if count_max(prio) > 1 else 0.0
    return ScheduleDecision.of(int(pick_max(prio, u)), hol.size)


def select_round_robin(slot: int, n_users: int) -> ScheduleDecision:
    return ScheduleDecision.of(slot % n_users, n_users)


def quantize_bid(rate: int, bid_bits: int) -> int:
    if rate < 0 or bid_bits < 1:
        raise ValueError("need rate >= 0 and bid_bits >= 1")
    return min(rate, 2 ** bid_bits - 1)
