import numpy as np
import pytest

from mielab.engine import RunConfig, rollout
from mielab.errors import ConfigError
from mielab.games import validate_game
from mielab.scenarios import (
    NASH_PROFILES,
    PAYOFFS,
    make_scenario,
    toy_contraction_factor,
    toy_step,
)


def run(cfg, seed=0, horizon=100, cadence=1):
    sc = make_scenario(cfg)
    return sc, rollout(sc, RunConfig(seed=seed, horizon=horizon, snapshot_cadence=cadence))


def test_make_scenario_rejects_bad_configs():
    with pytest.raises(ConfigError, match="mapping with a 'kind' key"):
        make_scenario(["toy"])
    with pytest.raises(ConfigError, match="mapping with a 'kind' key"):
        make_scenario({"alpha_h": 0.2})
    with pytest.raises(ConfigError, match="unknown scenario kind"):
        make_scenario({"kind": "chess"})


# --- toy -----------------------------------------------------------------------


def test_toy_validation():
    with pytest.raises(ConfigError):
        make_scenario({"kind": "toy", "alpha_h": 0.0})
    with pytest.raises(ConfigError):
        make_scenario({"kind": "toy", "alpha_m": -0.1})
    with pytest.raises(ConfigError):
        make_scenario({"kind": "toy", "x0": 1.5})


def test_toy_mismatch_follows_geometric_law():
    ah, am, x0, y0 = 0.15, 0.25, 0.9, 0.2
    kappa, converges = toy_contraction_factor(ah, am)
    assert kappa == 1.0 - 2.0 * ah - am and converges
    d0 = x0 - y0
    _, log = run({"kind": "toy", "alpha_h": ah, "alpha_m": am, "x0": x0, "y0": y0})
    for t in range(101):
        st = log.snapshot_states(t)
        d = float(st[0].belief.mean[0]) - float(st[1].belief.mean[0])
        assert abs(d - kappa**t * d0) <= 1e-12 * abs(d0)


def test_toy_config_roundtrip_is_exact():
    sc, log = run({"kind": "toy", "alpha_h": 0.3, "alpha_m": 0.1, "x0": 0.7, "y0": 0.4}, horizon=20)
    sc2 = make_scenario(sc.config())
    log2 = rollout(sc2, RunConfig(seed=0, horizon=20, snapshot_cadence=1))
    assert log.to_jsonl() == log2.to_jsonl()


def test_toy_step_helper_shape():
    x, y, u = toy_step(0.9, 0.1, 0.2, 0.3)
    assert u == 1.0 - 0.8 * 0.8
    assert x == 0.9 - 0.4 * 0.8 and y == 0.1 + 0.3 * 0.8


# --- bmi -----------------------------------------------------------------------


def test_bmi_cycle_factor_and_stability():
    sc = make_scenario({"kind": "bmi", "alpha_h": 0.2, "alpha_m": 0.01})
    assert sc.cycle_factor() == (1 - 0.4) * (1 - 0.02)
    assert sc.stable()
    wild = make_scenario({"kind": "bmi", "alpha_h": 0.2, "alpha_m": 1.4})
    assert wild.cycle_factor() == pytest.approx((1 - 0.4) * (1 - 2.8))
    assert not wild.stable()


def test_bmi_rollout_tracks_reference_recursion():
    sc, log = run({"kind": "bmi", "alpha_h": 0.2, "alpha_m": 0.01, "noise": 0.0}, horizon=100)
    ref = sc.reference_mismatch(100)
    v0 = abs(ref[0])
    for t in range(101):
        st = log.snapshot_states(t)
        v = float(st[0].theta.values[0]) + float(st[1].theta.values[0])
        assert abs(v - ref[t]) <= 1e-12 * v0


def test_bmi_updates_alternate():
    _, log = run({"kind": "bmi"}, horizon=8)
    e = [float(log.snapshot_states(t)[0].theta.values[0]) for t in range(9)]
    d = [float(log.snapshot_states(t)[1].theta.values[0]) for t in range(9)]
    for t in range(8):
        if t % 2 == 0:
            assert e[t + 1] != e[t] and d[t + 1] == d[t]
        else:
            assert e[t + 1] == e[t] and d[t + 1] != d[t]


def test_bmi_fixed_line_is_invariant():
    # e + d = 0 is conserved exactly: the shared gradient signal is zero
    _, log = run({"kind": "bmi", "e0": 0.75, "d0": -0.75}, horizon=50)
    for t in (0, 25, 50):
        st = log.snapshot_states(t)
        assert float(st[0].theta.values[0]) == 0.75
        assert float(st[1].theta.values[0]) == -0.75


def test_bmi_validation():
    with pytest.raises(ConfigError):
        make_scenario({"kind": "bmi", "alpha_h": -0.1})
    with pytest.raises(ConfigError):
        make_scenario({"kind": "bmi", "noise": -1.0})
    # zero rates are legal: both sides simply stay put
    sc, log = run({"kind": "bmi", "alpha_h": 0.0, "alpha_m": 0.0}, horizon=10)
    assert float(log.final_states()[0].theta.values[0]) == 1.0


# --- highway -------------------------------------------------------------------


def test_highway_game_is_well_formed():
    sc = make_scenario({"kind": "highway", "slip": 0.3})
    assert validate_game(sc.game) == []
    assert sc.n_states == 4 * 3 + 2
    # terminal states absorb
    for term in (sc.merged_state, sc.collided_state):
        assert sc.game.transition[term, :, :, term].min() == 1.0
        assert np.all(sc.game.rewards[:, term] == 0.0)
    # starts at the far corner
    assert sc.game.initial_dist[sc.live_state(3, 2)] == 1.0


def test_highway_outcome_rewards():
    sc = make_scenario({"kind": "highway"})
    s = sc.live_state(1, 1)  # accelerating crosses; lane holding stays clear
    assert sc.game.rewards[0, s, 2, 0] == sc.merge_reward + sc.time_cost
    s2 = sc.live_state(1, 1)  # lane accelerating occupies the merge point
    assert sc.game.rewards[0, s2, 2, 2] == sc.collision_penalty + sc.time_cost


def test_highway_reachability_helper():
    sc = make_scenario({"kind": "highway"})
    assert sc.reaches_merge((2, 0))
    assert not sc.reaches_merge((2, 2))
    assert not sc.reaches_merge((0, 0))  # braking forever never crosses
    with pytest.raises(ConfigError):
        make_scenario({"kind": "highway", "slip": 0.5}).reaches_merge()


def test_highway_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        make_scenario({"kind": "highway", "ramp_len": 1})
    with pytest.raises(ConfigError):
        make_scenario({"kind": "highway", "slip": 1.0})
    sc = make_scenario({"kind": "highway", "slip": 0.2, "merge_reward": 2.0})
    assert make_scenario(sc.config()).config() == sc.config()


def test_highway_rollout_terminates_or_plays(tmp_path):
    sc, log = run({"kind": "highway", "beta": 1.0}, seed=8, horizon=60, cadence=30)
    seen = {rec["s"] for rec in log.ticks()}
    assert seen  # live or absorbing states only, all within range
    assert all(0 <= s < sc.n_states for s in seen)


# --- pathological --------------------------------------------------------------


def test_depression_belief_settles_below_truth():
    sc, log = run({"kind": "pathological", "variant": "depression"}, horizon=300, cadence=50)
    assert sc.belief_fixed_point() == pytest.approx(0.3)
    b = float(log.final_states()[0].belief.mean[0])
    assert abs(b - 0.3) < 1e-6
    # engaging is objectively better, yet the policy prefers withdrawal
    assert sc.engage_value() > sc.safe_value
    row = log.final_states()[0].policy.table[0]
    assert row[0] > 0.99


def test_anxiety_avoidance_freezes_belief():
    sc, log = run({"kind": "pathological", "variant": "anxiety"}, horizon=600, cadence=100)
    for t in range(0, 601, 100):
        st = log.snapshot_states(t)
        assert float(st[0].belief.mean[0]) == 0.9
        assert st[0].policy.table[0, 1] == 0.0
    assert all(rec["actions"] == [0] for rec in log.ticks())
    # approaching would actually pay: gain 1 against expected cost 0.2
    assert sc.engage_value() > sc.safe_value


def test_pathological_validation():
    with pytest.raises(ConfigError, match="variant"):
        make_scenario({"kind": "pathological", "variant": "mania"})
    with pytest.raises(ConfigError):
        make_scenario({"kind": "pathological", "variant": "anxiety", "belief0": 1.5})
    with pytest.raises(ConfigError):
        make_scenario({"kind": "pathological", "variant": "depression", "gamma_b": 0.0})


# --- matrix --------------------------------------------------------------------


def test_matrix_payoff_tables():
    mp0, mp1 = PAYOFFS["matching_pennies"]
    np.testing.assert_array_equal(mp0, -mp1)
    pd0, pd1 = PAYOFFS["prisoners_dilemma"]
    np.testing.assert_array_equal(pd0, pd1.T)
    assert pd0[1, 0] == 5.0 and pd0[0, 0] == 3.0 and pd0[1, 1] == 1.0 and pd0[0, 1] == 0.0
    for profiles in NASH_PROFILES.values():
        for p0, p1 in profiles:
            assert p0.sum() == pytest.approx(1.0) and p1.sum() == pytest.approx(1.0)


def test_matrix_validation_and_roundtrip():
    with pytest.raises(ConfigError, match="unknown matrix game"):
        make_scenario({"kind": "matrix", "name": "rock_paper"})
    with pytest.raises(ConfigError, match="unknown learner"):
        make_scenario({"kind": "matrix", "name": "coordination", "learner": "deep"})
    with pytest.raises(ConfigError, match="q_init"):
        make_scenario({"kind": "matrix", "name": "coordination", "q_init": [[1.0], [0.0]]})
    sc = make_scenario(
        {"kind": "matrix", "name": "coordination", "learner": "q", "q_init": [[1.0, -1.0], [0.0, 0.0]]}
    )
    assert make_scenario(sc.config()).config() == sc.config()
