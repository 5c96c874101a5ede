"""Exact single-user CMDP solver for small instances with known distributions.

Relative value iteration runs on post-decision states, the same table layout
the online learner uses, so learned and exact tables can be compared entry by
entry.  The constrained optimum comes from bisection on the multiplier; when
the queue constraint falls between two deterministic policies the solution
time-shares them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .channel import ChannelModel
from .learner import DEFAULT_BID_BITS


class OracleError(RuntimeError):
    pass


class NotConverged(OracleError):
    def __init__(self, residual: float, sweeps: int):
        super().__init__(f"relative value iteration did not converge in {sweeps} sweeps "
                         f"(last change {residual:.3e})")
        self.residual = residual


class Infeasible(OracleError):
    pass


class ReducibleChain(OracleError):
    def __init__(self, classes):
        super().__init__(f"policy induces {len(classes)} closed classes: {classes}")
        self.classes = classes


@dataclass(frozen=True)
class OracleModel:
    arrival_pmf: np.ndarray
    channel_pmf: np.ndarray
    channel: ChannelModel
    q_max: int
    delay_target: float
    bid_bits: int | None = DEFAULT_BID_BITS
    reference: tuple[int, int] = (0, 0)

    def __post_init__(self):
        a = np.asarray(self.arrival_pmf, dtype=float)
        k = np.asarray(self.channel_pmf, dtype=float)
        object.__setattr__(self, "arrival_pmf", a)
        object.__setattr__(self, "channel_pmf", k)
        for name, p in (("arrival_pmf", a), ("channel_pmf", k)):
            if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a probability vector")
        if k.size != self.channel.num_states:
            raise ValueError("channel_pmf length must match the number of channel states")
        if self.q_max < 1:
            raise ValueError("q_max must be >= 1")

    @property
    def num_states(self) -> int:
        return self.channel.num_states

    @property
    def caps(self) -> np.ndarray:
        caps = self.channel.rate_caps()
        if self.bid_bits is not None:
            caps = np.minimum(caps, 2 ** self.bid_bits - 1)
        return caps

    def arrival_matrix(self) -> np.ndarray:
        """``M[post, pre]``: probability that post-decision queue ``post`` becomes ``pre``."""
        n = self.q_max + 1
        M = np.zeros((n, n))
        for post in range(n):
            for a, p in enumerate(self.arrival_pmf):
                M[post, min(post + a, self.q_max)] += p
        return M

    def power(self) -> np.ndarray:
        return self.channel.power_table(int(self.caps.max()))

    def mean_arrivals(self) -> float:
        return float(np.dot(np.arange(self.arrival_pmf.size), self.arrival_pmf))


@dataclass
class OracleSolution:
    relative_values: np.ndarray
    gain: float
    policy: np.ndarray  # policy[q, s] over pre-decision states
    multiplier: float
    avg_power: float
    avg_queue: float
    sweeps: int = 0
    residual: float = 0.0
    # time-sharing partner when the constraint sits between two policies
    alt_policy: np.ndarray | None = field(default=None, repr=False)
    mix_weight: float = 1.0
    trace: list = field(default_factory=list, repr=False)


def _layout(model: OracleModel, power: np.ndarray):
    """Arrays such that candidate costs ``[q, s, r]`` are ``base + V[qi, si]``.

    ``base`` holds the power and is inf where ``r`` is infeasible; the constant
    queue cost is left out.
    """
    n, S = model.q_max + 1, model.num_states
    caps = model.caps
    r = np.arange(int(caps.max()) + 1)[None, None, :]
    q = np.arange(n)[:, None, None]
    s = np.arange(S)[None, :, None]
    ok = (r <= q) & (r <= caps[None, :, None])
    qi = np.where(ok, q - r, 0)
    si = np.broadcast_to(s, qi.shape)
    base = np.where(ok, power[s, r], np.inf)
    return base, qi, si


def _q_values(V: np.ndarray, layout):
    base, qi, si = layout
    return base + V[qi, si]


def _bellman(model, lam, V, M, layout):
    cand = _q_values(V, layout)
    q = np.arange(model.q_max + 1)
    W = cand.min(axis=2) + lam * (q - model.delay_target)[:, None]
    h = M @ (W @ model.channel_pmf)
    return np.repeat(h[:, None], model.num_states, axis=1), cand


def greedy_policy(model: OracleModel, values: np.ndarray) -> np.ndarray:
    return np.argmin(_q_values(values, _layout(model, model.power())), axis=2)


def solve_unconstrained(model: OracleModel, lam: float, tol: float = 1e-10, max_sweeps: int = 100_000,
                        init: np.ndarray | None = None) -> OracleSolution:
    """Relative value iteration for a fixed multiplier."""
    if lam < 0:
        raise ValueError("multiplier must be non-negative")
    M = model.arrival_matrix()
    layout = _layout(model, model.power())
    ref = model.reference
    V = np.zeros((model.q_max + 1, model.num_states)) if init is None else init.copy()
    change = np.inf
    for sweep in range(1, max_sweeps + 1):
        h, _ = _bellman(model, lam, V, M, layout)
        new = h - V[ref]
        change = float(np.max(np.abs(new - V)))
        V = new
        if change < tol:
            break
    else:
        raise NotConverged(change, max_sweeps)
    beta = float(V[ref])
    h, cand = _bellman(model, lam, V, M, layout)
    residual = float(np.max(np.abs(h - beta - V)))
    policy = np.argmin(cand, axis=2)
    p, qbar = evaluate_policy(model, policy)
    return OracleSolution(relative_values=V - V[ref], gain=beta, policy=policy, multiplier=float(lam),
                          avg_power=p, avg_queue=qbar, sweeps=sweep, residual=residual)


def _stationary(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    graph = csr_matrix(P > 0)
    ncomp, labels = connected_components(graph, directed=True, connection="strong")
    closed = []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        outside = P[np.ix_(members, np.flatnonzero(labels != c))]
        if not np.any(outside > 0):
            closed.append(members)
    if len(closed) != 1:
        raise ReducibleChain([m.tolist() for m in closed])
    members = closed[0]
    sub = P[np.ix_(members, members)]
    A = sub.T - np.eye(members.size)
    A[-1, :] = 1.0
    b = np.zeros(members.size)
    b[-1] = 1.0
    pi = np.zeros(n)
    pi[members] = np.linalg.solve(A, b)
    return pi


def transition_matrix(model: OracleModel, policy: np.ndarray) -> np.ndarray:
    """Pre-decision chain over ``(q, s)`` flattened as ``q * S + s``."""
    n, S = model.q_max + 1, model.num_states
    M = model.arrival_matrix()
    P = np.zeros((n * S, n * S))
    for q in range(n):
        for s in range(S):
            post = q - int(policy[q, s])
            P[q * S + s] = np.outer(M[post], model.channel_pmf).ravel()
    return P


def stationary_distribution(model: OracleModel, policy: np.ndarray) -> np.ndarray:
    _check_policy(model, policy)
    return _stationary(transition_matrix(model, policy)).reshape(model.q_max + 1, model.num_states)


def evaluate_policy(model: OracleModel, policy: np.ndarray) -> tuple[float, float]:
    """Exact long-run average power and pre-decision queue length."""
    pi = stationary_distribution(model, policy)
    power = model.power()
    S = model.num_states
    pw = power[np.arange(S)[None, :], policy]
    q = np.arange(model.q_max + 1)[:, None]
    return float(np.sum(pi * pw)), float(np.sum(pi * q))


def _check_policy(model, policy):
    policy = np.asarray(policy)
    q = np.arange(model.q_max + 1)[:, None]
    if policy.shape != (model.q_max + 1, model.num_states):
        raise ValueError("policy shape must be (q_max + 1, num_states)")
    if np.any(policy < 0) or np.any(policy > q) or np.any(policy > model.caps[None, :]):
        raise ValueError("policy is infeasible somewhere")


def silence_policy(model: OracleModel) -> np.ndarray:
    return np.zeros((model.q_max + 1, model.num_states), dtype=np.int64)


def max_rate_policy(model: OracleModel) -> np.ndarray:
    q = np.arange(model.q_max + 1)[:, None]
    return np.minimum(q, model.caps[None, :]).astype(np.int64)


def solve_cmdp(model: OracleModel, multiplier_cap: float = 1e6, lam_tol: float = 1e-9, **rvi) -> OracleSolution:
    """Constrained optimum by bisection on the multiplier.

    The average queue of the greedy policy is non-increasing in the
    multiplier.  Returns the multiplier at which the constraint binds (or 0 if
    it is slack with no queue cost).  Unless a deterministic policy meets the
    target exactly, the policies on either side of the switching multiplier
    are time-shared so the constraint holds with equality.
    """
    target = model.delay_target
    _, q_fast = evaluate_policy(model, max_rate_policy(model))
    if q_fast > target * (1 + 1e-12):
        raise Infeasible(f"queue target {target} below the max-rate policy's {q_fast:.4f}")
    trace = []

    def solve(lam, init=None):
        sol = solve_unconstrained(model, lam, init=init, **rvi)
        trace.append((lam, sol.avg_power, sol.avg_queue))
        return sol

    lo = solve(0.0)
    if lo.avg_queue <= target:
        lo.trace = trace
        return lo
    lam_hi = 1.0
    hi = solve(lam_hi)
    while hi.avg_queue > target:
        lo = hi
        lam_hi *= 2.0
        if lam_hi > multiplier_cap:
            raise Infeasible(f"constraint not met for multipliers up to {multiplier_cap}")
        hi = solve(lam_hi, hi.relative_values)
    lam_lo = lo.multiplier
    while lam_hi - lam_lo > lam_tol * max(1.0, lam_hi):
        mid = 0.5 * (lam_lo + lam_hi)
        try:
            sol = solve(mid, hi.relative_values)
        except NotConverged:
            # value iteration crawls within ~1/max_sweeps of a switching
            # multiplier, so the bracket is already tight: time-share its ends
            break
        if sol.avg_queue > target:
            lo, lam_lo = sol, mid
        else:
            hi, lam_hi = sol, mid
    if abs(hi.avg_queue - target) <= 1e-9 * target or lo.avg_queue - hi.avg_queue <= 1e-12:
        hi.trace = trace
        return hi
    # time-share: w * lo + (1 - w) * hi meets the target exactly
    w = (target - hi.avg_queue) / (lo.avg_queue - hi.avg_queue)
    lam_star = 0.5 * (lam_lo + lam_hi)
    return OracleSolution(relative_values=hi.relative_values, gain=hi.gain, policy=hi.policy,
                          multiplier=lam_star, avg_power=w * lo.avg_power + (1 - w) * hi.avg_power,
                          avg_queue=w * lo.avg_queue + (1 - w) * hi.avg_queue, sweeps=hi.sweeps,
                          residual=hi.residual, alt_policy=lo.policy, mix_weight=1 - w, trace=trace)


def is_monotone_in_queue(policy: np.ndarray) -> bool:
    return bool(np.all(np.diff(policy, axis=0) >= 0))


def write_solution(path, solution: OracleSolution):
    """Long-format CSV: q, state, rate, relative_value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("q", "state", "rate", "relative_value"))
        pol, V = solution.policy, solution.relative_values
        for q in range(pol.shape[0]):
            for s in range(pol.shape[1]):
                w.writerow((q, s, int(pol[q, s]), repr(float(V[q, s]))))
