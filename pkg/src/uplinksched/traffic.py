"""Packet arrivals: Poisson counts, truncated-Pareto sizes, MAC fragmentation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrafficModel:
    packet_rate: float = 0.1
    shape: float = 1.2
    mode_bits: int = 2000
    cutoff_bits: int = 10000
    fragment_bits: int = 2000

    def __post_init__(self):
        if self.packet_rate < 0:
            raise ValueError("packet_rate must be non-negative")
        if not self.shape > 1:
            raise ValueError("shape must exceed 1")
        if not 0 < self.mode_bits < self.cutoff_bits:
            raise ValueError("need 0 < mode_bits < cutoff_bits")
        if self.fragment_bits <= 0:
            raise ValueError("fragment_bits must be positive")

    @property
    def _tail(self) -> float:
        # probability mass the untruncated Pareto puts beyond the cutoff
        return (self.mode_bits / self.cutoff_bits) ** self.shape

    def size_cdf(self, y):
        """CDF of the renormalized (no atom at the cutoff) size density."""
        y = np.clip(np.asarray(y, dtype=float), self.mode_bits, self.cutoff_bits)
        return (1.0 - (self.mode_bits / y) ** self.shape) / (1.0 - self._tail)

    def mean_packet_bits(self) -> float:
        """Mean of the continuous renormalized density."""
        xi, nu, g = self.shape, self.mode_bits, self.cutoff_bits
        return xi * nu * ((g / nu) ** (1 - xi) - 1.0) / ((1 - xi) * (1.0 - self._tail))

    def fragment_pmf(self) -> np.ndarray:
        """P(packet occupies k fragments), index k = 0..ceil(g/tau)."""
        tau = self.fragment_bits
        kmax = math.ceil(self.cutoff_bits / tau)
        edges = self.size_cdf(np.arange(kmax + 1) * tau)
        pmf = np.zeros(kmax + 1)
        pmf[1:] = np.diff(edges)
        return pmf

    def mean_fragments_per_packet(self) -> float:
        pmf = self.fragment_pmf()
        return float(np.dot(np.arange(len(pmf)), pmf))

    def mean_fragments_per_slot(self) -> float:
        return self.packet_rate * self.mean_fragments_per_packet()

    def mean_bits_per_slot(self) -> float:
        return self.packet_rate * self.mean_packet_bits()

    def arrival_pmf(self, tol: float = 1e-13) -> np.ndarray:
        """Exact pmf of fragments arriving in one slot (compound Poisson, Panjer recursion).

        The support is cut where the remaining mass drops below ``tol`` and the
        vector is renormalized.
        """
        f = self.fragment_pmf()
        lam = self.packet_rate
        p = [math.exp(-lam * (1.0 - f[0]))]
        total = p[0]
        s = 0
        while 1.0 - total > tol and s < 10_000:
            s += 1
            j = np.arange(1, min(s, len(f) - 1) + 1)
            val = lam / s * float(np.sum(j * f[j] * np.array([p[s - k] for k in j])))
            p.append(val)
            total += val
        pmf = np.array(p)
        return pmf / pmf.sum()


@dataclass(frozen=True)
class DiscreteArrivals:
    """I.i.d. fragment counts per slot drawn from a given pmf.

    For toy instances where the exact optimum is computed from the same pmf.
    """

    pmf: tuple[float, ...]
    fragment_bits: int = 2000

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("pmf must be a probability vector")
        object.__setattr__(self, "pmf", tuple(float(v) for v in p))

    def mean_fragments_per_slot(self) -> float:
        return float(np.dot(np.arange(len(self.pmf)), self.pmf))

    def arrival_pmf(self) -> np.ndarray:
        return np.array(self.pmf)

    def counts_from_uniform(self, u) -> np.ndarray:
        cdf = np.cumsum(self.pmf)
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(self.pmf) - 1).astype(np.int64)


@dataclass(frozen=True)
class FragmentBatch:
    count: int
    arrival_slot: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")


def size_from_uniform(u, model: TrafficModel):
    nu, xi = model.mode_bits, model.shape
    y = nu * (1.0 - np.asarray(u, dtype=float) * (1.0 - model._tail)) ** (-1.0 / xi)
    return np.minimum(np.ceil(y), model.cutoff_bits).astype(np.int64)


def sample_packet_size(rng: np.random.Generator, model: TrafficModel) -> int:
    """Inverse-CDF draw of a packet size in bits, rounded up to a whole bit."""
    return int(size_from_uniform(rng.random(), model))


def fragment(bits: int, fragment_bits: int) -> int:
    if bits < 0:
        raise ValueError("bits must be non-negative")
    return -(-bits // fragment_bits)


def arrivals(rng: np.random.Generator, model: TrafficModel, slot: int) -> FragmentBatch:
    k = int(rng.poisson(model.packet_rate)) if model.packet_rate > 0 else 0
    total = 0
    for _ in range(k):
        total += fragment(sample_packet_size(rng, model), model.fragment_bits)
    return FragmentBatch(count=total, arrival_slot=slot)


def sample_fragment_counts(rng: np.random.Generator, models: list, n_slots: int) -> np.ndarray:
    """Fragments per slot for every user, shape ``(n_slots, len(models))``.

    Draw order: Poisson counts for all users, then user by user either packet
    sizes or, for ``DiscreteArrivals``, one uniform per slot.
    """
    n_users = len(models)
    rates = np.array([getattr(m, "packet_rate", 0.0) for m in models])
    counts = rng.poisson(rates, size=(n_slots, n_users))
    out = np.zeros((n_slots, n_users), dtype=np.int64)
    for i, m in enumerate(models):
        if isinstance(m, DiscreteArrivals):
            out[:, i] = m.counts_from_uniform(rng.random(n_slots))
            continue
        c = counts[:, i]
        n_packets = int(c.sum())
        if n_packets == 0:
            continue
        sizes = size_from_uniform(rng.random(n_packets), m)
        frags = -(-sizes // m.fragment_bits)
        slot_of = np.repeat(np.arange(n_slots), c)
        out[:, i] = np.bincount(slot_of, weights=frags, minlength=n_slots).astype(np.int64)
    return out


def read_trace(path, n_users: int | None = None) -> np.ndarray:
    """Load a replay trace: one row per slot, one integer fragment count per user."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not rows[0][0].strip().lstrip("-").isdigit():
        rows = rows[1:]
    data = np.array([[int(v) for v in r] for r in rows], dtype=np.int64)
    if data.ndim != 2 or (n_users is not None and data.shape[1] != n_users):
        raise ValueError(f"trace {path} does not have {n_users} columns")
    if np.any(data < 0):
        raise ValueError("trace contains negative counts")
    return data


def write_trace(path, counts: np.ndarray):
    counts = np.asarray(counts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"user{i}" for i in range(counts.shape[1])])
        w.writerows(counts.tolist())
