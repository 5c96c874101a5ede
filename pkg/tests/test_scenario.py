import csv
import json

import numpy as np
import pytest

from uplinksched.scenario import (DELAY_TARGETS, GAINS_DB, GroupSpec, Scenario, ScenarioError, dump_scenario,
                                  get_scenario, load_scenario, run_scenario, scenario_presets, write_result)
from uplinksched.sim import run, validate_stability


def small_scenario(**kw):
    base = dict(name="t", groups=(GroupSpec("a", 2, delay_target=50.0), GroupSpec("b", 1, delay_target=25.0)),
                sweep_parameter="delay_target", sweep_values=(25, 50), sweep_group="b", seeds=(0, 1),
                horizon=5000)
    return Scenario(**{**base, **kw})


@pytest.fixture(scope="module")
def result():
    return run_scenario(small_scenario())


def test_single_value_single_seed_equals_direct_run():
    sc = small_scenario(sweep_values=(50,), seeds=(3,))
    res = run_scenario(sc)
    assert res.records[0].metrics.same_as(run(sc.config(50, 3)))


def test_sweep_only_touches_sweep_group():
    cfg = small_scenario().config(25, 0)
    assert [u.delay_target for u in cfg.users] == [50.0, 50.0, 25.0]
    assert [u.group for u in cfg.users] == ["a", "a", "b"]


def test_seed_order_does_not_matter(tmp_path, result):
    other = run_scenario(small_scenario(seeds=(1, 0)))
    assert other.summary == result.summary
    write_result(result, tmp_path / "x", per_run=False)
    write_result(other, tmp_path / "y", per_run=False)
    assert (tmp_path / "x/summary.csv").read_bytes() == (tmp_path / "y/summary.csv").read_bytes()


def test_rerun_is_byte_identical(tmp_path, result):
    write_result(result, tmp_path / "x")
    write_result(run_scenario(small_scenario()), tmp_path / "y")
    for name in ("summary.csv", "runs/proposed_v1_s0.csv", "scenario.yaml"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_summary_shape_and_no_nan(tmp_path, result):
    assert len(result.summary) == 2 * 2
    paths = write_result(result, tmp_path)
    text = open(paths["summary"]).read().lower()
    assert "nan" not in text
    rows = list(csv.DictReader(open(paths["summary"])))
    assert {r["group"] for r in rows} == {"a", "b"} and all(r["runs"] == "2" for r in rows)
    man = json.load(open(paths["manifest"]))
    assert man["config_sha256"] == result.scenario.digest() and man["seeds"] == [0, 1]
    assert len(list((tmp_path / "runs").iterdir())) == 4


def test_per_seed_and_series(result):
    ps = result.per_seed("avg_power_actual", group="b")
    assert ps.shape == (2, 2) and not np.isnan(ps).any()
    assert np.allclose(ps.mean(axis=1), result.series("avg_power_actual", group="b"))


def test_invalid_scenario_aborts_before_running():
    sc = small_scenario(groups=(GroupSpec("a", 2, max_power=0.01), GroupSpec("b", 1)))
    with pytest.raises(ScenarioError, match="nothing was run"):
        run_scenario(sc)
    # a later sweep value that is invalid still stops everything
    with pytest.raises(ScenarioError):
        run_scenario(small_scenario(sweep_values=(25, 5000)))


def test_failed_run_is_recorded(tmp_path, monkeypatch):
    import uplinksched.scenario as mod
    real = mod.run

    def flaky(cfg, **kw):
        if cfg.seed == 1:
            raise RuntimeError("boom")
        return real(cfg, **kw)

    monkeypatch.setattr(mod, "run", flaky)
    res = run_scenario(small_scenario())
    assert len(res.failures) == 2 and not res.clean
    assert all(r["failed"] == 1 and r["runs"] == 1 for r in res.summary)
    paths = write_result(res, tmp_path)
    assert "boom" in open(paths["failures"]).read()


@pytest.mark.parametrize("kw", [dict(sweep_parameter="horizon"), dict(protocol="x"), dict(groups=()),
                                dict(sweep_group="c"), dict(sweep_values=()), dict(seeds=(1, 1)),
                                dict(groups=(GroupSpec("a", 1), GroupSpec("a", 1)))])
def test_scenario_validation(kw):
    with pytest.raises(ScenarioError):
        small_scenario(**kw)
    with pytest.raises(ScenarioError):
        GroupSpec("a", 0)


def test_yaml_roundtrip(tmp_path):
    for sc in scenario_presets().values():
        p = tmp_path / f"{sc.name}.yaml"
        dump_scenario(sc, p)
        back = load_scenario(p)
        assert back == sc and back.digest() == sc.digest()
        assert get_scenario(str(p)) == sc
    with pytest.raises(ScenarioError):
        get_scenario("no-such-thing")
    p.write_text("name: x\ngroups: []\nbogus: 1\n")
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_presets_content():
    ps = scenario_presets()
    assert set(ps) == {f"{k}-{s}" for k in ("delay", "gain", "mlwdf", "bits", "oracle") for s in ("full", "desk")}
    assert ps["delay-desk"].sweep_values == DELAY_TARGETS == (25, 50, 75, 100, 125, 150, 175)
    assert ps["gain-desk"].sweep_values == GAINS_DB
    assert ps["bits-desk"].sweep_values == (2, 3, 4)
    assert ps["mlwdf-desk"].sweep_values == (1.5, 2.5, 3.5, 4.5)
    assert sum(g.count for g in ps["delay-full"].groups) == 20 and len(ps["delay-full"].seeds) == 20
    assert ps["delay-desk"].groups[0].delay_target == 100.0
    assert ps["gain-desk"].groups[0].mean_gain_db == -3.28


@pytest.mark.parametrize("name", ["delay-desk", "gain-desk", "mlwdf-desk", "bits-desk", "oracle-desk"])
def test_desk_presets_are_stable(name):
    sc = scenario_presets()[name]
    for v in sc.sweep_values:
        cfg = sc.config(v, 0)
        cfg.validate()
        assert validate_stability(cfg).passed


def test_mlwdf_feedback_protocol():
    sc = scenario_presets()["mlwdf-desk"].replace(horizon=4000, seeds=(0,), sweep_values=(2.5,))
    res = run_scenario(sc)
    assert [r.policy for r in res.records] == ["mlwdf", "proposed"]
    ml, pr = res.records
    target = np.mean([u.avg_delay_per_fragment for u in ml.metrics.users])
    assert all(u.delay_target == pytest.approx(target) for u in pr.metrics.users)


def test_oracle_protocol_columns():
    sc = scenario_presets()["oracle-desk"].replace(horizon=4000, seeds=(0,), sweep_values=(2.0,))
    res = run_scenario(sc)
    row = res.summary[0]
    assert row["oracle_multiplier"] == pytest.approx(0.6041, rel=1e-3)
    assert row["oracle_power"] == pytest.approx(2.2599, rel=1e-3)
