import math

import numpy as np
import pytest

from mielab.engine import InteractionLog, RunConfig, rollout
from mielab.equilibrium import ToleranceConfig
from mielab.errors import ConfigError, DataError, NumericalError
from mielab.estimation import (
    LinearGaussianModel,
    belief_depth_comparison,
    belief_policy_divergence,
    cca_shared_subspace,
    convergence_report,
    empirical_policy,
    kalman_belief_filter,
)
from mielab.scenarios import make_scenario

import oracles


def fake_log(action_rows, n_states=2, n_actions=2, states=None, name="matching_pennies"):
    """Hand-built log: one snapshot for dimensions plus plain tick records."""
    table = np.zeros((n_states, n_actions)).tolist()
    agents = [{"policy": {"table": table}} for _ in range(2)]
    header = {
        "kind": "header",
        "version": 1,
        "config_hash": "deadbeef",
        "seed": 0,
        "n_agents": 2,
        "scenario": {"kind": "matrix", "name": name},
        "run": {"seed": 0, "horizon": len(action_rows), "snapshot_cadence": 1},
        "perturbation": None,
    }
    records = [{"kind": "snapshot", "t": 0, "agents": agents}]
    for t, acts in enumerate(action_rows):
        s = 0 if states is None else states[t]
        records.append({"kind": "tick", "t": t, "s": s, "actions": list(acts), "rewards": [0.0, 0.0]})
    return InteractionLog(header, records)


# --- empirical policies -----------------------------------------------------------


def test_empirical_policy_recounts_exactly():
    rows = [(0, 1), (0, 0), (0, 1), (1, 0)]
    log = fake_log(rows, states=[0, 0, 0, 1])
    est = empirical_policy(log, 0)
    np.testing.assert_array_equal(est.counts, [[3, 0], [0, 1]])
    np.testing.assert_array_equal(est.table, [[1.0, 0.0], [0.0, 1.0]])
    est1 = empirical_policy(log, 1)
    np.testing.assert_array_equal(est1.counts, [[1, 2], [1, 0]])
    np.testing.assert_allclose(est1.dist(0), [1.0 / 3.0, 2.0 / 3.0])


def test_empirical_policy_smoothing_and_undefined_rows():
    rows = [(0, 1), (1, 1), (0, 1), (0, 1)]  # state 1 never visited
    log = fake_log(rows, states=[0, 0, 0, 0])
    raw = empirical_policy(log, 0)
    np.testing.assert_allclose(raw.dist(0), [0.75, 0.25])
    assert not raw.defined[1]
    assert np.all(raw.table[1] == 0.0)
    with pytest.raises(DataError):
        raw.dist(1)

    smoothed = empirical_policy(log, 0, smoothing=1.0)
    np.testing.assert_allclose(smoothed.dist(0), [4.0 / 6.0, 2.0 / 6.0])
    np.testing.assert_allclose(smoothed.dist(1), [0.5, 0.5])
    assert smoothed.defined.all()

    with pytest.raises(ConfigError):
        empirical_policy(log, 0, smoothing=-0.5)


def test_empirical_policy_is_consistent():
    rng = np.random.default_rng(11)
    truth = np.array([0.3, 0.7])
    acts = rng.choice(2, size=20000, p=truth)
    log = fake_log([(a, 0) for a in acts], states=[0] * acts.size)
    est = empirical_policy(log, 0)
    assert np.abs(est.dist(0) - truth).max() < 0.02


def test_empirical_policy_needs_records():
    log = fake_log([(0, 0)])
    log.records = [r for r in log.records if r["kind"] == "snapshot"]
    with pytest.raises(DataError):
        empirical_policy(log, 0)


# --- Kalman filtering ----------------------------------------------------------------


def random_model(rng, n=2, k=2):
    a = rng.normal(size=(n, n))
    a *= 0.9 / max(np.abs(np.linalg.eigvals(a)))
    h = rng.normal(size=(k, n))
    mq = rng.normal(size=(n, n))
    mr = rng.normal(size=(k, k))
    return LinearGaussianModel(
        transition=a,
        observation=h,
        process_cov=mq @ mq.T + 0.1 * np.eye(n),
        obs_cov=mr @ mr.T + 0.1 * np.eye(k),
        initial_mean=rng.normal(size=n),
        initial_cov=np.eye(n),
    )


def test_kalman_matches_reference_filter():
    rng = np.random.default_rng(3)
    model = random_model(rng)
    ys = rng.normal(size=(40, 2))
    got = kalman_belief_filter(model, ys)
    means, covs, gains, loglik = oracles.reference_kalman(
        ys, model.transition, model.observation, model.process_cov,
        model.obs_cov, model.initial_mean, model.initial_cov,
    )
    np.testing.assert_allclose(got.means, means, atol=1e-10)
    np.testing.assert_allclose(got.covariances, covs, atol=1e-10)
    np.testing.assert_allclose(got.gains, gains, atol=1e-10)
    assert got.loglik == pytest.approx(loglik, abs=1e-10)


def test_kalman_steady_state_gain_solves_the_riccati_equation():
    q, r = 0.3, 1.7
    model = LinearGaussianModel(
        transition=[[1.0]], observation=[[1.0]], process_cov=[[q]],
        obs_cov=[[r]], initial_mean=[0.0], initial_cov=[[1.0]],
    )
    res = kalman_belief_filter(model, np.zeros((500, 1)))
    p_pred = 0.5 * (q + math.sqrt(q * q + 4.0 * q * r))
    assert res.gains[-1, 0, 0] == pytest.approx(p_pred / (p_pred + r), abs=1e-10)


def test_kalman_trusts_noiseless_observations():
    model = LinearGaussianModel(
        transition=np.eye(2), observation=np.eye(2), process_cov=0.5 * np.eye(2),
        obs_cov=np.zeros((2, 2)), initial_mean=[5.0, -5.0], initial_cov=np.eye(2),
    )
    ys = np.array([[1.0, 2.0], [3.0, 4.0]])
    res = kalman_belief_filter(model, ys)
    np.testing.assert_allclose(res.means, ys, atol=1e-12)
    assert np.abs(res.covariances).max() < 1e-12


def test_kalman_covariance_contracts_without_process_noise():
    rng = np.random.default_rng(5)
    model = LinearGaussianModel(
        transition=np.eye(2), observation=np.eye(2), process_cov=np.zeros((2, 2)),
        obs_cov=np.eye(2), initial_mean=[0.0, 0.0], initial_cov=np.eye(2),
    )
    res = kalman_belief_filter(model, rng.normal(size=(30, 2)))
    traces = [float(np.trace(c)) for c in res.covariances]
    assert all(b <= a + 1e-15 for a, b in zip(traces, traces[1:]))


def test_kalman_rejects_singular_innovations():
    model = LinearGaussianModel(
        transition=[[1.0]], observation=[[1.0]], process_cov=[[0.0]],
        obs_cov=[[0.0]], initial_mean=[0.0], initial_cov=[[0.0]],
    )
    with pytest.raises(NumericalError, match="singular"):
        kalman_belief_filter(model, [[1.0]])


def test_model_validation():
    ok = dict(
        transition=np.eye(2), observation=np.eye(2), process_cov=np.eye(2),
        obs_cov=np.eye(2), initial_mean=[0.0, 0.0], initial_cov=np.eye(2),
    )
    with pytest.raises(ConfigError):
        LinearGaussianModel(**{**ok, "transition": np.zeros((2, 3))})
    with pytest.raises(ConfigError):
        LinearGaussianModel(**{**ok, "process_cov": [[1.0, 0.5], [0.4, 1.0]]})
    with pytest.raises(ConfigError):
        LinearGaussianModel(**{**ok, "obs_cov": -np.eye(2)})
    with pytest.raises(ConfigError):
        kalman_belief_filter(LinearGaussianModel(**ok), np.zeros((4, 3)))


# --- belief quality --------------------------------------------------------------------


def test_divergence_value_and_flags():
    d = belief_policy_divergence([0.5, 0.5], [0.75, 0.25])
    want = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    assert d.value == pytest.approx(want, abs=1e-12)
    assert not d.infinite

    same = belief_policy_divergence([0.75, 0.25], [0.75, 0.25])
    assert same.value == 0.0

    blind = belief_policy_divergence([1.0, 0.0], [0.75, 0.25])
    assert blind.infinite and math.isinf(blind.value)

    with pytest.raises(ConfigError):
        belief_policy_divergence([0.5, 0.5], [0.2, 0.3, 0.5])


def test_divergence_with_empirical_policy():
    log = fake_log([(0, 1), (0, 1), (0, 0), (0, 1)], states=[0] * 4)
    est = empirical_policy(log, 1)
    d = belief_policy_divergence([0.5, 0.5], est, s=0)
    want = 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
    assert d.value == pytest.approx(want, abs=1e-12)
    with pytest.raises(ConfigError):
        belief_policy_divergence([0.5, 0.5], est)


# --- shared subspace ----------------------------------------------------------------------


def test_cca_self_correlation_is_one():
    rng = np.random.default_rng(0)
    x = np.cumsum(rng.normal(size=(60, 3)), axis=0)
    res = cca_shared_subspace(x, x, k=3)
    np.testing.assert_allclose(res.correlations, 1.0, atol=1e-8)


def test_cca_is_invariant_to_linear_maps():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 3))
    m = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
    res = cca_shared_subspace(x, x @ m.T, k=3)
    np.testing.assert_allclose(res.correlations, 1.0, atol=1e-6)

    y = rng.normal(size=(200, 3)) + 0.5 * x
    rot = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    base = cca_shared_subspace(x, y, k=2)
    rotated = cca_shared_subspace(x, y @ rot.T, k=2)
    np.testing.assert_allclose(rotated.correlations, base.correlations, atol=1e-6)


def test_cca_white_noise_shows_no_shared_structure():
    rng = np.random.default_rng(2)
    res = cca_shared_subspace(rng.normal(size=(1000, 5)), rng.normal(size=(1000, 5)), k=1)
    assert res.correlations[0] < 0.2


def test_cca_validation():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 3))
    with pytest.raises(ConfigError):
        cca_shared_subspace(x, rng.normal(size=(49, 3)), k=1)
    with pytest.raises(ConfigError):
        cca_shared_subspace(x, x, k=4)
    with pytest.raises(ConfigError):
        cca_shared_subspace(x[:4], x[:4], k=1)
    deficient = x.copy()
    deficient[:, 2] = deficient[:, 1]
    with pytest.raises(NumericalError, match="rank-deficient"):
        cca_shared_subspace(deficient, x, k=3)


# --- convergence report ----------------------------------------------------------------------


def test_convergence_report_on_the_toy_contraction():
    sc = make_scenario({"kind": "toy", "alpha_h": 0.2, "alpha_m": 0.3})
    log = rollout(sc, RunConfig(seed=0, horizon=12, snapshot_cadence=1))
    tol = ToleranceConfig(eps_neural=1e-3, eps_cognitive=1e-3, eps_policy=1e-3, window=3)
    rep = convergence_report(log, tol)
    assert rep.stabilization == {"theta": 0, "belief": 6, "policy": 0}
    assert rep.simultaneous == 6
    for t, v in rep.e_trace:
        assert v == pytest.approx(0.56 * 0.3**t, rel=1e-10)
    d = rep.to_dict()
    assert d["simultaneous"] == 6 and d["e_trace"][0] == [0, rep.e_trace[0][1]]


def test_convergence_report_flags_divergence():
    sc = make_scenario({"kind": "toy", "alpha_h": 0.6, "alpha_m": 0.9})
    log = rollout(sc, RunConfig(seed=0, horizon=12, snapshot_cadence=1))
    rep = convergence_report(log, ToleranceConfig(eps_cognitive=1e-3, window=3))
    assert rep.stabilization["belief"] is None
    assert rep.simultaneous is None


# --- belief depth ------------------------------------------------------------------------------


def mp_log(seed, horizon=600):
    sc = make_scenario({"kind": "matrix", "name": "matching_pennies", "learner": "fictitious"})
    return rollout(sc, RunConfig(seed=seed, horizon=horizon, snapshot_cadence=horizon))


def test_depth_comparison_recovers_the_fictitious_learner():
    cmp = belief_depth_comparison(mp_log(3), agent=0)
    assert cmp.best_depth == 1
    assert cmp.betas[1] == 5.0
    assert cmp.logliks[1] > cmp.logliks[0]
    d = cmp.to_dict()
    assert d["best_depth"] == 1 and set(d["logliks"]) == {"0", "1", "2"}


def test_depth_one_wins_on_average():
    margins = []
    for seed in range(12):
        cmp = belief_depth_comparison(mp_log(seed, horizon=400), agent=0)
        margins.append(cmp.logliks[1] - cmp.logliks[0])
    assert np.mean(margins) > 0.0


def test_depth_zero_explains_a_static_opponent():
    rng = np.random.default_rng(9)
    acts = [(int(rng.integers(2)), int(rng.choice(2, p=[0.7, 0.3]))) for _ in range(400)]
    log = fake_log(acts, states=[0] * 400)
    cmp = belief_depth_comparison(log, agent=0)
    assert cmp.logliks[0] >= max(cmp.logliks.values()) - 2.0


def test_depth_comparison_orientation_and_small_holdout():
    cmp = belief_depth_comparison(mp_log(4, horizon=40), agent=1, holdout=0.05)
    assert all(math.isfinite(v) for v in cmp.logliks.values())


def test_depth_comparison_validation():
    log = mp_log(0, horizon=30)
    with pytest.raises(ConfigError):
        belief_depth_comparison(log, agent=0, holdout=0.0)
    with pytest.raises(ConfigError):
        belief_depth_comparison(log, agent=0, holdout=0.6)
    with pytest.raises(ConfigError):
        belief_depth_comparison(log, agent=0, depths=(0, 3))
    toy = rollout(make_scenario({"kind": "toy"}), RunConfig(seed=0, horizon=10))
    with pytest.raises(ConfigError, match="payoff"):
        belief_depth_comparison(toy, agent=0)
    # explicit payoffs unlock non-matrix logs of two agents
    from mielab.scenarios import PAYOFFS

    cmp = belief_depth_comparison(toy, agent=0, payoffs=PAYOFFS["matching_pennies"])
    assert set(cmp.logliks) == {0, 1, 2}
