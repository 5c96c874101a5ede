"""Multi-user slot simulation: learners bid, the base station picks, queues evolve.

Timeline of slot ``t`` (identical for every policy):

1. each user's channel gain is drawn and quantized;
2. arrivals join the queue, anything above ``q_max`` is dropped and counted;
3. each user picks the rate it would send if granted the slot (its bid);
4. the base station schedules exactly one user;
5. the scheduled user dequeues its rate in FIFO order and pays the power;
   every user books the power of its own bid as effective power;
6. every user relaxes its value table and multiplier, scheduled or not;
7. post-decision states advance.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .channel import ChannelModel, gain_from_uniform, quantize_many
from .learner import DEFAULT_BID_BITS, DEFAULT_MULTIPLIER_CAP, DEFAULT_Q_MAX, StepsizeSchedule
from .scheduler import DEFAULT_SHARPNESS, MLWDF, MLWDF_SMOOTHING, policy_code
from .traffic import DiscreteArrivals, TrafficModel, sample_fragment_counts

BLOCK_SLOTS = 1 << 16
UNDEFINED = float("nan")


@dataclass(frozen=True)
class UserConfig:
    channel: ChannelModel = field(default_factory=ChannelModel)
    traffic: TrafficModel | DiscreteArrivals = field(default_factory=TrafficModel)
    delay_target: float = 100.0  # slots
    group: str = "all"
    delay_target_queue: float | None = None  # fragments; overrides delay_target when set

    @property
    def mean_arrivals(self) -> float:
        return self.traffic.mean_fragments_per_slot()

    @property
    def queue_target(self) -> float:
        if self.delay_target_queue is not None:
            return float(self.delay_target_queue)
        return self.mean_arrivals * self.delay_target


@dataclass(frozen=True)
class LearnerConfig:
    multiplier_cap: float = DEFAULT_MULTIPLIER_CAP
    stepsizes: StepsizeSchedule = field(default_factory=StepsizeSchedule)
    per_state_stepsize: bool = False
    epsilon: float = 0.0
    initial_multiplier: float = 0.0
    freeze_multiplier: bool = False
    # start from V(q, x) = slope * q instead of all zeros; unvisited high queues
    # then look expensive rather than free
    initial_value_slope: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    users: tuple[UserConfig, ...]
    horizon: int = 200_000
    burn_in: int | None = None  # default: 20% of the horizon
    seed: int = 0
    policy: str = "proposed"
    bid_bits: int = DEFAULT_BID_BITS
    q_max: int = DEFAULT_Q_MAX
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    softmax_sharpness: float = DEFAULT_SHARPNESS
    mlwdf_smoothing: float = MLWDF_SMOOTHING
    arrival_trace: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.horizon // 5)

    def validate(self):
        if len(self.users) < 1:
            raise ValueError("need at least one user")
        if not self.horizon > self.burn_in >= 0:
            raise ValueError("need horizon > burn_in >= 0")
        if self.bid_bits < 1:
            raise ValueError("bid_bits must be >= 1")
        if self.q_max < 1:
            raise ValueError("q_max must be >= 1")
        policy_code(self.policy)
        if not self.softmax_sharpness > 0:
            raise ValueError("softmax_sharpness must be positive")
        if not 0.0 <= self.learner.epsilon < 1.0:
            raise ValueError("epsilon must be in [0, 1)")
        if not self.learner.multiplier_cap > 0:
            raise ValueError("multiplier_cap must be positive")
        if not 0.0 <= self.learner.initial_multiplier <= self.learner.multiplier_cap:
            raise ValueError("initial_multiplier must lie in [0, multiplier_cap]")
        if not self.learner.initial_value_slope >= 0.0:
            raise ValueError("initial_value_slope must be non-negative")
        nstates = {u.channel.num_states for u in self.users}
        if len(nstates) != 1:
            raise ValueError("all users must share the number of channel states")
        for u in self.users:
            if not u.queue_target > 0:
                raise ValueError("delay targets must be positive")
            if u.queue_target > self.q_max:
                raise ValueError(f"queue target {u.queue_target:.1f} exceeds q_max={self.q_max}")
            if not u.delay_target > 0:
                raise ValueError("delay targets must be positive")
        if self.arrival_trace is not None:
            tr = np.asarray(self.arrival_trace)
            if tr.ndim != 2 or tr.shape[1] != len(self.users) or tr.shape[0] < self.horizon:
                raise ValueError("arrival trace must have one column per user and cover the horizon")

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class UserMetrics:
    user: int
    group: str
    delay_target: float
    delay_target_queue: float
    avg_power_actual: float
    avg_power_effective: float
    avg_queue: float
    avg_delay_little: float
    avg_delay_per_fragment: float
    final_multiplier: float
    avg_multiplier: float
    share_of_slots: float
    arrival_rate: float
    drops: int
    full_avg_power_actual: float
    full_avg_queue: float
    full_avg_delay_per_fragment: float
    penalty_ratio: float = UNDEFINED


SUMMARY_COLUMNS = tuple(f.name for f in dataclasses.fields(UserMetrics)) + (
    "policy", "seed", "horizon", "burn_in", "avg_max_bid", "avg_scheduled_bid", "valid")


@dataclass
class RunMetrics:
    users: list[UserMetrics]
    avg_max_bid: float
    avg_scheduled_bid: float
    horizon: int
    burn_in: int
    seed: int
    policy: str
    trace: np.ndarray | None = field(default=None, repr=False)
    trajectory: np.ndarray | None = field(default=None, repr=False)
    record_every: int = 0
    value_tables: np.ndarray | None = field(default=None, repr=False)

    @property
    def total_drops(self) -> int:
        return sum(u.drops for u in self.users)

    @property
    def valid(self) -> bool:
        return self.total_drops == 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(u, name) for u in self.users])

    def rows(self) -> list[dict]:
        extra = dict(policy=self.policy, seed=self.seed, horizon=self.horizon, burn_in=self.burn_in,
                     avg_max_bid=self.avg_max_bid, avg_scheduled_bid=self.avg_scheduled_bid,
                     valid=int(self.valid))
        return [{**dataclasses.asdict(u), **extra} for u in self.users]

    def same_as(self, other: "RunMetrics") -> bool:
        return self.rows() == other.rows()


def little_delay(avg_queue: float, arrival_rate: float) -> float:
    """Mean delay in slots from mean queue length and arrival rate (fragments/slot)."""
    if not arrival_rate > 0:
        raise ValueError("arrival rate must be positive")
    return avg_queue / arrival_rate


def queue_target_from_delay(delay_slots: float, arrival_rate: float) -> float:
    return arrival_rate * delay_slots


@dataclass(frozen=True)
class StabilityReport:
    passed: bool
    total_arrival_rate: float
    min_mean_max_rate: float
    per_user_arrival: tuple[float, ...]
    per_user_mean_max_rate: tuple[float, ...]

    def __str__(self):
        verdict = "stable" if self.passed else "UNSTABLE"
        return (f"{verdict}: total arrivals {self.total_arrival_rate:.4f} fragments/slot vs "
                f"min mean max-rate {self.min_mean_max_rate:.4f}")


def validate_stability(config: SimConfig) -> StabilityReport:
    """Check sum of mean arrivals < min over users of the mean affordable rate.

    The affordable rate is capped by the bid width as well as by max power.
    Mean arrivals are computed exactly from the packet-size distribution.
    """
    gammas, rates = [], []
    for u in config.users:
        gammas.append(u.mean_arrivals)
        caps = np.minimum(u.channel.rate_caps(), 2 ** config.bid_bits - 1)
        rates.append(float(np.dot(u.channel.state_probabilities(), caps)))
    total = float(sum(gammas))
    r = min(rates)
    return StabilityReport(total < r, total, r, tuple(gammas), tuple(rates))


def multi_user_penalty(run: RunMetrics, single_user_multipliers) -> list[float]:
    """Ratio of each user's final multiplier to its single-user optimum; NaN where that is 0."""
    out = []
    for u, ref in zip(run.users, single_user_multipliers):
        out.append(u.final_multiplier / ref if ref > 0 else UNDEFINED)
    return out


class _Tables:
    def __init__(self, config: SimConfig):
        users = config.users
        n = len(users)
        s = users[0].channel.num_states
        self.rhat = np.array([u.channel.rate_caps() for u in users], dtype=np.int64).reshape(n, s)
        self.caps = np.minimum(self.rhat, 2 ** config.bid_bits - 1)
        zmax = int(max(self.rhat.max(), self.caps.max()))
        self.power = np.stack([u.channel.power_table(zmax) for u in users])
        self.delta = np.array([u.queue_target for u in users], dtype=float)
        self.targets = np.array([u.delay_target for u in users], dtype=float)


def _draw_block(rng: np.random.Generator, config: SimConfig, t0: int, length: int):
    users = config.users
    u_gain = rng.random((length, len(users)))
    chan = np.empty((length, len(users)), dtype=np.int64)
    for i, u in enumerate(users):
        chan[:, i] = quantize_many(gain_from_uniform(u_gain[:, i], u.channel.mean_gain_linear), u.channel)
    if config.arrival_trace is not None:
        arr = np.asarray(config.arrival_trace[t0:t0 + length], dtype=np.int64)
    else:
        arr = sample_fragment_counts(rng, [u.traffic for u in users], length)
    tie = rng.random(length)
    if config.learner.epsilon > 0:
        expl = rng.random((length, len(users), 2))
    else:
        expl = np.zeros((1, 1, 2))
    return chan, arr, tie, expl


def run(config: SimConfig, force: bool = False, trace: bool = False, record_every: int = 0,
        keep_tables: bool = False) -> RunMetrics:
    """Simulate ``config.horizon`` slots and summarize per user.

    Raises ``ValueError`` for an invalid config, or an unstable one unless
    ``force`` is set.
    """
    config.validate()
    if not force:
        rep = validate_stability(config)
        if not rep.passed:
            raise ValueError(f"stability check failed ({rep}); pass force=True to run anyway")
    users = config.users
    n = len(users)
    tabs = _Tables(config)
    pol = policy_code(config.policy)
    lc = config.learner
    ss = lc.stepsizes
    qmax = config.q_max
    s = users[0].channel.num_states

    V = np.zeros((n, qmax + 1, s))
    V += lc.initial_value_slope * np.arange(qmax + 1)[None, :, None]
    visits = np.zeros((n, qmax + 1, s), dtype=np.int64)
    lam = np.full(n, float(lc.initial_multiplier))
    post_q = np.zeros(n, dtype=np.int64)
    post_x = np.zeros(n, dtype=np.int64)
    fifo = np.zeros((n, qmax), dtype=np.int64)
    fifo_head = np.zeros(n, dtype=np.int64)
    avg_rate = np.ones(n)
    acc = np.zeros((2, n, _engine.N_FIELDS))
    sysacc = np.zeros((2, 3))
    tr = np.zeros((config.horizon if trace else 0, n, len(_engine.TRACE_COLUMNS)))
    n_rec = config.horizon // record_every if record_every > 0 else 0
    traj = np.zeros((n_rec, n, 3))

    rng = np.random.Generator(np.random.PCG64(config.seed))
    for t0 in range(0, config.horizon, BLOCK_SLOTS):
        length = min(BLOCK_SLOTS, config.horizon - t0)
        chan, arr, tie, expl = _draw_block(rng, config, t0, length)
        _engine.run_block(
            t0, chan, arr, tie, expl,
            tabs.power, tabs.caps, tabs.rhat, tabs.delta, float(lc.multiplier_cap),
            float(ss.fast_scale), float(ss.fast_exponent), float(ss.fast_offset), 0.0 if lc.freeze_multiplier else float(ss.slow_scale), float(ss.slow_exponent), float(ss.slow_offset),
            bool(lc.per_state_stepsize), float(lc.epsilon),
            pol, float(config.softmax_sharpness), tabs.targets, float(config.mlwdf_smoothing),
            int(config.burn_in), pol != MLWDF,
            V, visits, lam, post_q, post_x, fifo, fifo_head, avg_rate,
            acc, sysacc, tr, traj, int(record_every))

    return _summarize(config, acc, sysacc, lam, tr if trace else None,
                      traj if record_every > 0 else None, record_every, V if keep_tables else None)


def _summarize(config, acc, sysacc, lam, trace, traj, record_every, V) -> RunMetrics:
    F = _engine
    users = []
    for i, u in enumerate(config.users):
        a, full = acc[0, i], acc[1, i]
        slots = sysacc[0, F.S_SLOTS]
        abar = u.mean_arrivals
        avg_q = a[F.F_QUEUE] / slots
        users.append(UserMetrics(
            user=i,
            group=u.group,
            delay_target=float(u.delay_target),
            delay_target_queue=u.queue_target,
            avg_power_actual=a[F.F_POWER] / slots,
            avg_power_effective=a[F.F_POWER_EFF] / slots,
            avg_queue=avg_q,
            avg_delay_little=little_delay(avg_q, abar) if abar > 0 else 0.0,
            avg_delay_per_fragment=a[F.F_DELAY] / a[F.F_DEPART] if a[F.F_DEPART] > 0 else 0.0,
            final_multiplier=float(lam[i]),
            avg_multiplier=a[F.F_LAMBDA] / slots,
            share_of_slots=a[F.F_SCHED] / slots,
            arrival_rate=a[F.F_ARRIVE] / slots,
            drops=int(full[F.F_DROPS]),
            full_avg_power_actual=full[F.F_POWER] / config.horizon,
            full_avg_queue=full[F.F_QUEUE] / config.horizon,
            full_avg_delay_per_fragment=full[F.F_DELAY] / full[F.F_DEPART] if full[F.F_DEPART] > 0 else 0.0,
        ))
    slots = sysacc[0, F.S_SLOTS]
    return RunMetrics(users=users, avg_max_bid=sysacc[0, F.S_MAXBID] / slots,
                      avg_scheduled_bid=sysacc[0, F.S_SCHEDBID] / slots, horizon=config.horizon,
                      burn_in=config.burn_in, seed=config.seed, policy=config.policy, trace=trace,
                      trajectory=traj, record_every=record_every, value_tables=V)


def write_summary(path, runs: list[RunMetrics]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for r in runs:
            for row in r.rows():
                w.writerow({k: _fmt(v) for k, v in row.items()})


def write_trace(path, run: RunMetrics):
    """Per-slot trace in long format: one row per (slot, user)."""
    if run.trace is None:
        raise ValueError("run was not traced")
    tr = run.trace
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("slot", "user") + _engine.TRACE_COLUMNS)
        for t in range(tr.shape[0]):
            for i in range(tr.shape[1]):
                row = tr[t, i]
                w.writerow([t, i] + [_fmt(v) for v in row])


def write_trajectory(path, run: RunMetrics):
    """Learner convergence dump: slot, user, multiplier, reference value, queue."""
    if run.trajectory is None:
        raise ValueError("run has no recorded trajectory")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("slot", "user", "multiplier", "reference_value", "queue"))
        for row in range(run.trajectory.shape[0]):
            slot = (row + 1) * run.record_every
            for i in range(run.trajectory.shape[1]):
                lam, vref, q = run.trajectory[row, i]
                w.writerow([slot, i, _fmt(lam), _fmt(vref), int(q)])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return ""
        if float(v).is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(float(v))
    return v
