"""Scenarios: a base system, one swept parameter, a seed list.

A scenario file is YAML whose keys mirror ``SimConfig``; users are given as
groups of identical users.  ``run_scenario`` expands the sweep, validates
every config up front, runs them (optionally across processes) and reduces
per-run group means to mean / std per swept value.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .channel import ChannelModel
from .learner import DEFAULT_BID_BITS, DEFAULT_Q_MAX, StepsizeSchedule
from .oracle import OracleError, OracleModel, solve_cmdp
from .sim import (LearnerConfig, RunMetrics, SimConfig, UserConfig, run, validate_stability, write_summary,
                  write_trace)
from .traffic import DiscreteArrivals, TrafficModel

SWEEPABLE = ("delay_target", "mean_gain_db", "bid_bits", "policy", "max_power")
PROTOCOLS = ("plain", "mlwdf_feedback", "oracle")

# per-run group means that get aggregated; drops are summed per run
METRICS = ("delay_target", "avg_delay_per_fragment", "avg_delay_little", "avg_power_actual",
           "avg_power_effective", "avg_queue", "final_multiplier", "avg_multiplier", "share_of_slots", "drops")
ORACLE_COLUMNS = ("oracle_power", "oracle_queue", "oracle_multiplier")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    name: str
    count: int
    delay_target: float = 100.0
    mean_gain_db: float = -3.28
    max_power: float = 20.0
    num_states: int = 8
    fragment_bits: int = 2000
    bandwidth_slots: float | None = None
    packet_rate: float = 0.1
    pareto_shape: float = 1.2
    pareto_mode_bits: int = 2000
    pareto_cutoff_bits: int = 10000
    arrival_pmf: tuple[float, ...] | None = None  # i.i.d. fragments per slot instead of Pareto packets

    def __post_init__(self):
        if self.count < 1:
            raise ScenarioError(f"group {self.name!r} needs at least one user")
        if self.arrival_pmf is not None:
            object.__setattr__(self, "arrival_pmf", tuple(float(v) for v in self.arrival_pmf))

    def channel(self) -> ChannelModel:
        return ChannelModel.from_db(self.mean_gain_db, max_power=self.max_power, num_states=self.num_states,
                                    fragment_bits=self.fragment_bits, bandwidth_slots=self.bandwidth_slots)

    def traffic(self):
        if self.arrival_pmf is not None:
            return DiscreteArrivals(self.arrival_pmf, fragment_bits=self.fragment_bits)
        return TrafficModel(packet_rate=self.packet_rate, shape=self.pareto_shape, mode_bits=self.pareto_mode_bits,
                            cutoff_bits=self.pareto_cutoff_bits, fragment_bits=self.fragment_bits)

    def users(self) -> list[UserConfig]:
        u = UserConfig(channel=self.channel(), traffic=self.traffic(), delay_target=float(self.delay_target),
                       group=self.name)
        return [u] * self.count


@dataclass(frozen=True)
class Scenario:
    name: str
    groups: tuple[GroupSpec, ...]
    sweep_parameter: str
    sweep_values: tuple
    seeds: tuple[int, ...] = (0,)
    sweep_group: str | None = None  # None sweeps every group
    horizon: int = 200_000
    burn_in: int | None = None
    policy: str = "proposed"
    bid_bits: int = DEFAULT_BID_BITS
    q_max: int = DEFAULT_Q_MAX
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    protocol: str = "plain"
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.sweep_parameter not in SWEEPABLE:
            raise ScenarioError(f"cannot sweep {self.sweep_parameter!r}; choose from {SWEEPABLE}")
        if self.protocol not in PROTOCOLS:
            raise ScenarioError(f"unknown protocol {self.protocol!r}")
        if not self.groups:
            raise ScenarioError("need at least one group")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ScenarioError("group names must be unique")
        if self.sweep_group is not None and self.sweep_group not in names:
            raise ScenarioError(f"sweep_group {self.sweep_group!r} is not a group")
        if not self.sweep_values:
            raise ScenarioError("sweep needs at least one value")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ScenarioError("seeds must be a non-empty list without repeats")
        if self.protocol == "mlwdf_feedback" and self.sweep_parameter == "policy":
            raise ScenarioError("M-LWDF feedback fixes the policies; sweep something else")

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def replace(self, **kw) -> "Scenario":
        return dataclasses.replace(self, **kw)

    def _swept(self, g: GroupSpec) -> bool:
        return self.sweep_group is None or g.name == self.sweep_group

    def config(self, value, seed: int, policy: str | None = None, delay_targets: dict | None = None) -> SimConfig:
        """SimConfig for one sweep value and seed.

        ``delay_targets`` (group name -> slots) overrides the groups' targets;
        the M-LWDF feedback protocol uses it.
        """
        p = self.sweep_parameter
        groups = []
        for g in self.groups:
            if p in ("delay_target", "mean_gain_db", "max_power") and self._swept(g):
                g = dataclasses.replace(g, **{p: value})
            if delay_targets is not None and g.name in delay_targets:
                g = dataclasses.replace(g, delay_target=float(delay_targets[g.name]))
            groups.append(g)
        users = [u for g in groups for u in g.users()]
        return SimConfig(users=users, horizon=self.horizon, burn_in=self.burn_in, seed=int(seed),
                         policy=policy or (value if p == "policy" else self.policy),
                         bid_bits=int(value) if p == "bid_bits" else self.bid_bits,
                         q_max=self.q_max, learner=self.learner)

    # --- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["groups"] = [dataclasses.asdict(g) for g in self.groups]
        for g in d["groups"]:
            if g["arrival_pmf"] is not None:
                g["arrival_pmf"] = list(g["arrival_pmf"])
        d["sweep_values"] = list(self.sweep_values)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        try:
            groups = tuple(GroupSpec(**g) for g in d.pop("groups"))
            lc = dict(d.pop("learner", {}) or {})
            ss = StepsizeSchedule(**(lc.pop("stepsizes", {}) or {}))
            learner = LearnerConfig(stepsizes=ss, **lc)
            return cls(groups=groups, learner=learner, **d)
        except (TypeError, KeyError) as e:
            raise ScenarioError(f"bad scenario description: {e}") from None

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(yaml.safe_load(fh))


def dump_scenario(scenario: Scenario, path):
    with open(path, "w") as fh:
        yaml.safe_dump(scenario.to_dict(), fh, sort_keys=False)


# --- presets -----------------------------------------------------------------

DELAY_TARGETS = (25, 50, 75, 100, 125, 150, 175)
GAINS_DB = (-13.0, -8.47, -5.41, -3.28, -1.59, -0.08, 1.42)
MLWDF_POWERS = (1.5, 2.5, 3.5, 4.5)
BID_WIDTHS = (2, 3, 4)
ORACLE_TARGETS = (1.5, 2.0, 2.5, 3.0)
ORACLE_PMF = (0.4, 0.3, 0.2, 0.1)


def tuned_learner() -> LearnerConfig:
    """Learner settings used by the presets.

    Per-state fast counters, a slow step that stays near 3e-5 over a run and a
    small positive starting multiplier.  With global counters the value
    entries for long queues barely move within 10^5 slots, and starting from
    a zero multiplier the queue first runs away while the table is still flat.
    """
    return LearnerConfig(per_state_stepsize=True, initial_multiplier=0.2,
                         stepsizes=StepsizeSchedule(fast_offset=10.0, slow_scale=3e-5 * 1e6 ** 0.9,
                                                    slow_offset=1e6))


def small_instance_learner() -> LearnerConfig:
    """Settings for one user on a handful of states with a short buffer:
    per-state fast counters, a slow step near 4e-6 and 1% exploration."""
    return LearnerConfig(per_state_stepsize=True, epsilon=0.01,
                         stepsizes=StepsizeSchedule(fast_offset=10.0, slow_offset=1e6))


def _scale(scale):
    if scale == "full":
        return dict(per_group=10, horizon=100_000, seeds=tuple(range(20)))
    return dict(per_group=2, horizon=200_000, seeds=tuple(range(5)))


def _two_groups(per_group, **kw):
    fixed = kw.pop("fixed", {})
    return (GroupSpec("group1", per_group, **{**kw, **fixed}), GroupSpec("group2", per_group, **kw))


def scenario_presets() -> dict[str, Scenario]:
    out = {}
    for scale in ("full", "desk"):
        s = _scale(scale)
        n = s.pop("per_group")
        learner = tuned_learner()
        common = dict(learner=learner, **s)
        p_delay = 500.0 if scale == "full" else 20.0
        p_gain = 2000.0 if scale == "full" else 100.0
        w_mlwdf = 16000.0 if scale == "full" else 4000.0
        out[f"delay-{scale}"] = Scenario(
            name=f"delay-{scale}", groups=_two_groups(n, max_power=p_delay, delay_target=100.0),
            sweep_parameter="delay_target", sweep_values=DELAY_TARGETS, sweep_group="group2",
            description="group2 delay target swept, group1 held at 100 slots", **common)
        out[f"gain-{scale}"] = Scenario(
            name=f"gain-{scale}", groups=_two_groups(n, max_power=p_gain, delay_target=100.0),
            sweep_parameter="mean_gain_db", sweep_values=GAINS_DB, sweep_group="group2",
            description="group2 mean channel gain swept, group1 held at -3.28 dB", **common)
        out[f"mlwdf-{scale}"] = Scenario(
            name=f"mlwdf-{scale}",
            groups=(GroupSpec("all", 2 * n, packet_rate=0.07, bandwidth_slots=w_mlwdf, delay_target=100.0),),
            sweep_parameter="max_power", sweep_values=MLWDF_POWERS, protocol="mlwdf_feedback",
            description="M-LWDF first, its achieved delays become the proposed policy's targets", **common)
        out[f"bits-{scale}"] = Scenario(
            name=f"bits-{scale}", groups=(GroupSpec("all", 2 * n, max_power=p_delay, delay_target=100.0),),
            sweep_parameter="bid_bits", sweep_values=BID_WIDTHS,
            description="bid width swept with the delay-sweep system at 100 slots", **common)
        out[f"oracle-{scale}"] = Scenario(
            name=f"oracle-{scale}",
            groups=(GroupSpec("single", 1, num_states=4, mean_gain_db=0.0, arrival_pmf=ORACLE_PMF),), q_max=20,
            sweep_parameter="delay_target", sweep_values=ORACLE_TARGETS, protocol="oracle",
            learner=small_instance_learner(), description="one user against the exact constrained optimum", **s)
    return out


def get_scenario(name_or_path: str) -> Scenario:
    presets = scenario_presets()
    if name_or_path in presets:
        return presets[name_or_path]
    if os.path.exists(name_or_path):
        return load_scenario(name_or_path)
    raise ScenarioError(f"{name_or_path!r} is neither a preset ({', '.join(presets)}) nor a file")


# --- running -----------------------------------------------------------------

@dataclass
class RunRecord:
    value_index: int
    value: object
    seed: int
    policy: str
    metrics: RunMetrics | None = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.metrics is not None


@dataclass
class ScenarioResult:
    scenario: Scenario
    records: list[RunRecord]
    summary: list[dict]
    oracle: dict = field(default_factory=dict)

    @property
    def failures(self) -> list[RunRecord]:
        return [r for r in self.records if not r.ok]

    @property
    def total_drops(self) -> int:
        return sum(r.metrics.total_drops for r in self.records if r.ok)

    @property
    def clean(self) -> bool:
        return not self.failures and self.total_drops == 0

    def rows(self, group=None, policy=None) -> list[dict]:
        return [r for r in self.summary
                if (group is None or r["group"] == group) and (policy is None or r["policy"] == policy)]

    def series(self, metric: str, group=None, policy=None, stat="mean") -> np.ndarray:
        return np.array([r[f"{metric}_{stat}"] for r in self.rows(group, policy)], dtype=float)

    def per_seed(self, metric: str, group=None, policy=None) -> np.ndarray:
        """Group mean of ``metric`` for every (sweep value, seed), shape ``(values, seeds)``.

        Seeds are sorted, so rows can be differenced pairwise across sweep values.
        """
        seeds = sorted(self.scenario.seeds)
        policy = policy or self.records[0].policy
        out = np.full((len(self.scenario.sweep_values), len(seeds)), np.nan)
        for r in self.records:
            if not r.ok or r.policy != policy:
                continue
            vals = [getattr(u, metric) for u in r.metrics.users if group is None or u.group == group]
            out[r.value_index, seeds.index(r.seed)] = float(np.mean(vals))
        return out


def _check(configs, force):
    problems = []
    for key, cfg in configs:
        try:
            cfg.validate()
        except ValueError as e:
            problems.append(f"{key}: {e}")
            continue
        if not force:
            rep = validate_stability(cfg)
            if not rep.passed:
                problems.append(f"{key}: {rep}")
    if problems:
        raise ScenarioError("invalid scenario, nothing was run:\n  " + "\n  ".join(problems))


def _run_one(args):
    cfg, trace = args
    try:
        return run(cfg, force=True, trace=trace), ""
    except Exception as e:  # recorded, the scenario carries on
        return None, f"{type(e).__name__}: {e}"


def _execute(jobs, workers, trace):
    payload = [(cfg, trace) for _, cfg in jobs]
    if workers > 1 and len(payload) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_one, payload))
    return [_run_one(p) for p in payload]


def _phase(scenario, policy, targets_by_value, force, workers, trace):
    jobs = []
    for vi, value in enumerate(scenario.sweep_values):
        for seed in scenario.seeds:
            dt = targets_by_value.get(vi) if targets_by_value else None
            jobs.append(((vi, value, seed), scenario.config(value, seed, policy=policy, delay_targets=dt)))
    _check([(f"value={k[1]} seed={k[2]}", c) for k, c in jobs], force)
    results = _execute(jobs, workers, trace)
    return [RunRecord(k[0], k[1], k[2], c.policy, m, err) for (k, c), (m, err) in zip(jobs, results)]


def _group_mean_delays(records, scenario) -> dict[int, dict[str, float]]:
    out = {}
    for vi in range(len(scenario.sweep_values)):
        out[vi] = {}
        for g in scenario.group_names:
            vals = [np.mean([u.avg_delay_per_fragment for u in r.metrics.users if u.group == g])
                    for r in sorted(records, key=lambda r: r.seed) if r.ok and r.value_index == vi]
            if vals:
                out[vi][g] = float(np.mean(vals))
    return out


def solve_oracles(scenario: Scenario) -> dict:
    """Exact single-user optimum per (value index, group); only for one-user groups."""
    out = {}
    for vi, value in enumerate(scenario.sweep_values):
        cfg = scenario.config(value, scenario.seeds[0])
        for g in scenario.group_names:
            u = next(u for u in cfg.users if u.group == g)
            model = OracleModel(u.traffic.arrival_pmf(), u.channel.state_probabilities(), u.channel, cfg.q_max,
                                u.queue_target, bid_bits=cfg.bid_bits)
            try:
                sol = solve_cmdp(model)
                out[vi, g] = (sol.avg_power, sol.avg_queue, sol.multiplier)
            except OracleError:
                pass
    return out


def run_scenario(scenario: Scenario, force: bool = False, workers: int = 1, trace: bool = False) -> ScenarioResult:
    """Run every (value, seed) pair and aggregate.

    Invalid configs abort before anything runs; a run that raises is recorded
    and the rest carry on.
    """
    if scenario.protocol == "mlwdf_feedback":
        base = _phase(scenario, "mlwdf", None, force, workers, trace)
        targets = _group_mean_delays(base, scenario)
        proposed = _phase(scenario, "proposed", targets, force, workers, trace)
        records = base + proposed
    else:
        records = _phase(scenario, None, None, force, workers, trace)
    oracle = solve_oracles(scenario) if scenario.protocol == "oracle" else {}
    return ScenarioResult(scenario, records, summarize(scenario, records, oracle), oracle)


def _stats(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return None, None
    return float(np.mean(x)), float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def summarize(scenario: Scenario, records: list[RunRecord], oracle: dict | None = None) -> list[dict]:
    """One row per (value, group, policy).  Reduction is over runs sorted by
    seed, so the seed list order does not matter."""
    rows = []
    policies = list(dict.fromkeys(r.policy for r in records))
    for vi, value in enumerate(scenario.sweep_values):
        for policy in policies:
            mine = sorted((r for r in records if r.value_index == vi and r.policy == policy), key=lambda r: r.seed)
            if not mine:
                continue
            ok = [r for r in mine if r.ok]
            for g in scenario.group_names:
                row = dict(scenario=scenario.name, parameter=scenario.sweep_parameter, value=value, group=g,
                           policy=policy, runs=len(ok), failed=len(mine) - len(ok))
                per_run = [[u for u in r.metrics.users if u.group == g] for r in ok]
                row["users"] = len(per_run[0]) if per_run else 0
                for m in METRICS:
                    if m == "drops":
                        vals = [sum(u.drops for u in us) for us in per_run]
                    else:
                        vals = [np.mean([getattr(u, m) for u in us]) for us in per_run]
                    row[f"{m}_mean"], row[f"{m}_std"] = _stats(vals)
                if scenario.protocol == "oracle":
                    sol = (oracle or {}).get((vi, g))
                    for c, v in zip(ORACLE_COLUMNS, sol or (None,) * 3):
                        row[c] = v
                rows.append(row)
    return rows


def summary_columns(scenario: Scenario) -> list[str]:
    cols = ["scenario", "parameter", "value", "group", "policy", "runs", "failed", "users"]
    cols += [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    if scenario.protocol == "oracle":
        cols += list(ORACLE_COLUMNS)
    return cols


def _cell(v):
    # missing values are written as empty cells, never as nan
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            return ""
        return repr(float(v))
    return v


def write_result(result: ScenarioResult, out_dir, per_run: bool = True) -> dict:
    """Write summary.csv, per-run CSVs, failures and a manifest.  Returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    sc = result.scenario
    paths = {"summary": os.path.join(out_dir, "summary.csv")}
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=summary_columns(sc))
        w.writeheader()
        for row in result.summary:
            w.writerow({k: _cell(row.get(k)) for k in w.fieldnames})
    if per_run:
        rdir = os.path.join(out_dir, "runs")
        os.makedirs(rdir, exist_ok=True)
        for r in result.records:
            if not r.ok:
                continue
            stem = f"{r.policy}_v{r.value_index}_s{r.seed}"
            write_summary(os.path.join(rdir, stem + ".csv"), [r.metrics])
            if r.metrics.trace is not None:
                write_trace(os.path.join(rdir, stem + "_trace.csv"), r.metrics)
    if result.failures:
        paths["failures"] = os.path.join(out_dir, "failures.csv")
        with open(paths["failures"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("policy", "value", "seed", "error"))
            for r in result.failures:
                w.writerow((r.policy, r.value, r.seed, r.error))
    dump_scenario(sc, os.path.join(out_dir, "scenario.yaml"))
    paths["manifest"] = os.path.join(out_dir, "manifest.json")
    manifest = dict(scenario=sc.name, config_sha256=sc.digest(), seeds=list(sc.seeds),
                    code_version=__version__, numpy_version=np.__version__,
                    runs=len(result.records), failed=len(result.failures), total_drops=result.total_drops)
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
