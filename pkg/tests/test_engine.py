import numpy as np
import pytest

from mielab.engine import (
    InteractionLog,
    PerturbationSpec,
    RunConfig,
    export_series_csv,
    replay,
    rollout,
)
from mielab.errors import ConfigError, DataError
from mielab.scenarios import make_scenario
from mielab.scenarios.toy import toy_step


def toy(horizon, cadence=1, seed=7, **kw):
    sc = make_scenario({"kind": "toy", **kw})
    log = rollout(sc, RunConfig(seed=seed, horizon=horizon, snapshot_cadence=cadence))
    return sc, log


def xy(states):
    return float(states[0].belief.mean[0]), float(states[1].belief.mean[0])


# --- configs ------------------------------------------------------------------


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(seed=0, horizon=0)
    with pytest.raises(ConfigError):
        RunConfig(seed=0, horizon=5, snapshot_cadence=0)
    with pytest.raises(ConfigError):
        RunConfig(seed=-1, horizon=5)
    with pytest.raises(ConfigError):
        RunConfig(seed=2**64, horizon=5)


def test_perturbation_spec_validation():
    with pytest.raises(ConfigError):
        PerturbationSpec(time=-1, target="belief", payload={"mean": [0.0]})
    with pytest.raises(ConfigError):
        PerturbationSpec(time=0, target="telepathy", payload={})
    spec = PerturbationSpec(time=3, target="belief", agent=0, payload={"mean": [0.5]}, magnitude=0.5)
    again = PerturbationSpec.from_config(spec.to_dict())
    assert again.to_dict() == spec.to_dict()


def test_perturbation_must_precede_horizon():
    sc = make_scenario({"kind": "toy"})
    spec = PerturbationSpec(time=10, target="belief", agent=0, payload={"mean": [0.5]})
    with pytest.raises(ConfigError):
        rollout(sc, RunConfig(seed=0, horizon=10), spec)


# --- determinism and the toy recursion ----------------------------------------


def test_toy_rollout_reproduces_recursion_bitwise():
    sc, log = toy(horizon=40, alpha_h=0.2, alpha_m=0.3, x0=0.9, y0=0.1)
    x, y = 0.9, 0.1
    for rec in log.snapshots():
        got = xy(log.snapshot_states(rec["t"]))
        assert got == (x, y)
        # advance the reference to the next tick
        for _ in range(rec["t"], rec["t"] + 1):
            x, y, _ = toy_step(x, y, 0.2, 0.3)
    xf, yf = xy(log.final_states())
    x, y = 0.9, 0.1
    for _ in range(40):
        x, y, _ = toy_step(x, y, 0.2, 0.3)
    assert (xf, yf) == (x, y)


def test_same_seed_rollouts_are_byte_identical():
    _, a = toy(horizon=30, seed=11)
    _, b = toy(horizon=30, seed=11)
    assert a.to_jsonl() == b.to_jsonl()
    _, c = toy(horizon=30, seed=12)
    assert c.header["config_hash"] != a.header["config_hash"]


def test_snapshot_cadence_and_fallback():
    _, log = toy(horizon=25, cadence=10)
    assert [r["t"] for r in log.snapshots()] == [0, 10, 20]
    assert log.final()["t"] == 25
    # the final record doubles as the snapshot at t = horizon
    assert xy(log.snapshot_states(25)) == xy(log.final_states())
    with pytest.raises(DataError):
        log.snapshot_states(7)


def test_log_save_load_roundtrip(tmp_path):
    _, log = toy(horizon=12, cadence=5)
    p = tmp_path / "log.jsonl"
    log.save(p)
    loaded = InteractionLog.load(p)
    assert loaded == log
    loaded.save(tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == p.read_bytes()


def test_malformed_log_lines_rejected():
    with pytest.raises(DataError, match="empty"):
        InteractionLog.from_jsonl("")
    with pytest.raises(DataError, match="header"):
        InteractionLog.from_jsonl('{"kind": "tick", "t": 0}\n')
    good = toy(horizon=2)[1].to_jsonl()
    with pytest.raises(DataError, match="malformed log line"):
        InteractionLog.from_jsonl(good + "{oops\n")


# --- replay --------------------------------------------------------------------


def test_replay_confirms_and_detects_tampering():
    sc = make_scenario({"kind": "matrix", "name": "matching_pennies", "learner": "q"})
    log = rollout(sc, RunConfig(seed=5, horizon=50, snapshot_cadence=25))
    assert replay(log).ok

    ticks = log.ticks()
    ticks[7]["actions"][0] = 1 - ticks[7]["actions"][0]
    res = replay(log)
    assert not res.ok
    assert res.first_divergence == 7

    log.header["run"]["seed"] = 999
    with pytest.raises(DataError, match="hash"):
        replay(log)


# --- series export --------------------------------------------------------------


def test_series_csv_layout(tmp_path):
    sc, log = toy(horizon=6, alpha_h=0.2, alpha_m=0.3, x0=0.9, y0=0.1)
    path = tmp_path / "series.csv"
    export_series_csv(log, sc, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# config_hash={log.config_hash} seed={log.seed}"
    assert lines[1] == "t,x,y,U,d"
    assert len(lines) == 2 + 6
    x, y = 0.9, 0.1
    for t, line in enumerate(lines[2:]):
        cells = line.split(",")
        assert cells[0] == str(t)
        assert float(cells[1]) == x and float(cells[2]) == y
        d = x - y
        assert float(cells[4]) == d and float(cells[3]) == 1.0 - d * d
        x, y, _ = toy_step(x, y, 0.2, 0.3)


# --- perturbations ---------------------------------------------------------------


def test_belief_perturbation_blends_and_preserves_prefix():
    base_sc, base = toy(horizon=20, seed=3)
    spec = PerturbationSpec(time=5, target="belief", agent=0, payload={"mean": [1.0]}, magnitude=0.5)
    sc = make_scenario({"kind": "toy"})
    pert = rollout(sc, RunConfig(seed=3, horizon=20, snapshot_cadence=1), spec)

    # ticks before the perturbation are bit-identical to the unperturbed run
    assert base.ticks()[:5] == pert.ticks()[:5]
    assert base.ticks()[5] != pert.ticks()[5]

    x5 = xy(base.snapshot_states(5))[0]
    got = xy(pert.snapshot_states(5))[0]
    assert got == x5 + 0.5 * (1.0 - x5)


def test_reward_contingency_shift():
    sc = make_scenario({"kind": "matrix", "name": "matching_pennies", "learner": "q"})
    ones = np.ones((2, 1, 2, 2)).tolist()
    spec = PerturbationSpec(time=10, target="reward_contingency", payload={"add": ones}, magnitude=1.0)
    log = rollout(sc, RunConfig(seed=2, horizon=20), spec)
    for rec in log.ticks():
        vals = set(rec["rewards"])
        if rec["t"] < 10:
            assert vals <= {-1.0, 1.0}
        else:
            assert vals <= {0.0, 2.0}


def test_observation_mask_blinds_cognition_not_rewards():
    spec = PerturbationSpec(time=3, target="observation_mask", agent=1, payload=None)
    sc = make_scenario({"kind": "toy"})
    log = rollout(sc, RunConfig(seed=0, horizon=12, snapshot_cadence=1), spec)
    for rec in log.ticks():
        o = rec["obs"][1]
        if rec["t"] >= 3:
            assert o["signal"] is None and o["opp_actions"] is None
        else:
            assert o["signal"] is not None
        assert o["reward"] is not None
    # the blinded side stops moving; the sighted side keeps pulling
    y3 = xy(log.snapshot_states(3))[1]
    for t in range(3, 12):
        assert xy(log.snapshot_states(t))[1] == y3
    assert xy(log.snapshot_states(11))[0] != xy(log.snapshot_states(3))[0]


def test_freeze_stops_the_schedule():
    spec = PerturbationSpec(
        time=4, target="neural_params", agent=0, payload={"values": [0.0]},
        magnitude=0.0, freeze=True,
    )
    sc = make_scenario({"kind": "bmi", "noise": 0.0})
    log = rollout(sc, RunConfig(seed=1, horizon=16, snapshot_cadence=1), spec)
    e4 = log.snapshot_states(4)[0].theta.values[0]
    for t in range(4, 16):
        assert log.snapshot_states(t)[0].theta.values[0] == e4
    # the machine side keeps adapting
    assert log.snapshot_states(15)[1].theta.values[0] != log.snapshot_states(5)[1].theta.values[0]


def test_decoder_mapping_targets_the_machine_side():
    spec = PerturbationSpec(
        time=2, target="decoder_mapping", payload={"values": [4.0]}, magnitude=1.0, freeze=True
    )
    sc = make_scenario({"kind": "bmi"})
    log = rollout(sc, RunConfig(seed=0, horizon=10, snapshot_cadence=1), spec)
    states = log.snapshot_states(2)
    assert states[1].theta.values[0] == 4.0
    for t in range(2, 10):
        assert log.snapshot_states(t)[1].theta.values[0] == 4.0

    # only meaningful where a decoder side exists
    toy_sc = make_scenario({"kind": "toy"})
    with pytest.raises(ConfigError, match="decoder_mapping"):
        rollout(toy_sc, RunConfig(seed=0, horizon=5), spec)


def test_policy_perturbation_replaces_table():
    sc = make_scenario({"kind": "matrix", "name": "coordination", "learner": "q"})
    spec = PerturbationSpec(
        time=6, target="policy", agent=0, payload={"table": [[0.5, 0.5]]}, magnitude=1.0
    )
    log = rollout(sc, RunConfig(seed=4, horizon=8, snapshot_cadence=1), spec)
    np.testing.assert_array_equal(log.snapshot_states(6)[0].policy.table, [[0.5, 0.5]])


def test_perturbed_run_still_replays():
    sc = make_scenario({"kind": "toy"})
    spec = PerturbationSpec(time=5, target="belief", agent=0, payload={"mean": [1.0]}, magnitude=0.1)
    log = rollout(sc, RunConfig(seed=9, horizon=15), spec)
    assert log.header["perturbation"]["target"] == "belief"
    assert replay(log).ok
