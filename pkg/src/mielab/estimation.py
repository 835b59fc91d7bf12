"""Measurement toolbox over interaction logs.

Treats a recorded run as partially observable: policies are recovered by
counting, belief trajectories by Kalman filtering a linear-Gaussian model,
belief quality by divergence from the observed opponent policy, shared
neural structure by canonical correlation, and belief depth by held-out
prediction of opponent actions.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .equilibrium import (
    DistanceWeights,
    LEVELS,
    ToleranceConfig,
    _snapshot_points,
    drift_detector,
    level_step_norm,
)
from .errors import ConfigError, DataError, NumericalError
from .util import stable_softmax

DEFAULT_BETA_GRID = (0.5, 1.0, 2.0, 5.0, 10.0)
CCA_RIDGE_SCALE = 1e-6


# ---------------------------------------------------------------------------
# empirical policies


@dataclass(frozen=True)
class EmpiricalPolicy:
    """Count-ratio policy estimate with optional additive smoothing.

    Rows of states never visited are all-zero and flagged undefined when
    smoothing is 0; with smoothing c > 0 every row is defined.
    """

    counts: np.ndarray
    smoothing: float
    table: np.ndarray
    defined: np.ndarray

    def dist(self, s: int) -> np.ndarray:
        if not self.defined[s]:
            raise DataError(f"state {s} was never visited and smoothing is 0")
        return self.table[s]

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.tolist(),
            "smoothing": self.smoothing,
            "table": self.table.tolist(),
            "defined": self.defined.tolist(),
        }


def _log_dimensions(log, agent: int):
    snaps = log.snapshots()
    if not snaps:
        raise DataError("log has no snapshots to infer dimensions from")
    table = np.asarray(snaps[0]["agents"][agent]["policy"]["table"], dtype=np.float64)
    n_states = table.shape[0]
    n_actions = table.shape[-1]
    return n_states, n_actions


def empirical_policy(log, agent: int, smoothing: float = 0.0) -> EmpiricalPolicy:
    """pi_hat(a | s) = (N(s,a) + c) / (sum_a' N(s,a') + c * |A|)."""
    if smoothing < 0.0:
        raise ConfigError("smoothing must be >= 0")
    ticks = log.ticks()
    if not ticks:
        raise DataError("log has no tick records")
    n_states, n_actions = _log_dimensions(log, agent)
    counts = np.zeros((n_states, n_actions), dtype=np.int64)
    for rec in ticks:
        counts[rec["s"], rec["actions"][agent]] += 1
    totals = counts.sum(axis=1)
    defined = (totals > 0) | (smoothing > 0.0)
    table = np.zeros((n_states, n_actions))
    for s in range(n_states):
        if defined[s]:
            table[s] = (counts[s] + smoothing) / (totals[s] + smoothing * n_actions)
    return EmpiricalPolicy(counts, float(smoothing), table, defined)


# ---------------------------------------------------------------------------
# Kalman filtering


@dataclass(frozen=True)
class LinearGaussianModel:
    """x' = A x + process noise, y = H x + observation noise."""

    transition: np.ndarray
    observation: np.ndarray
    process_cov: np.ndarray
    obs_cov: np.ndarray
    initial_mean: np.ndarray
    initial_cov: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.transition, dtype=np.float64))
        h = np.atleast_2d(np.asarray(self.observation, dtype=np.float64))
        n = a.shape[0]
        if a.shape != (n, n):
            raise ConfigError("transition matrix must be square")
        if h.shape[1] != n:
            raise ConfigError("observation matrix width must match the state dimension")
        q = _check_cov(self.process_cov, n, "process_cov")
        r = _check_cov(self.obs_cov, h.shape[0], "obs_cov")
        m0 = np.asarray(self.initial_mean, dtype=np.float64).reshape(n)
        p0 = _check_cov(self.initial_cov, n, "initial_cov")
        for name, val in (
            ("transition", a),
            ("observation", h),
            ("process_cov", q),
            ("obs_cov", r),
            ("initial_mean", m0),
            ("initial_cov", p0),
        ):
            object.__setattr__(self, name, val)

    @property
    def state_dim(self) -> int:
        return self.transition.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observation.shape[0]


def _check_cov(mat, n: int, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    if m.shape != (n, n):
        raise ConfigError(f"{name} must have shape {(n, n)}")
    if not np.allclose(m, m.T, atol=1e-10):
        raise ConfigError(f"{name} must be symmetric")
    if n and float(np.linalg.eigvalsh(m).min()) < -1e-10:
        raise ConfigError(f"{name} must be positive semidefinite")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class FilterResult:
    means: np.ndarray
    covariances: np.ndarray
    loglik: float
    gains: np.ndarray


def kalman_belief_filter(model: LinearGaussianModel, observations, cond_tol: float = 1e-12) -> FilterResult:
    """Filtered means/covariances and the sequence log-likelihood.

    Covariances are re-symmetrized every step. An innovation covariance
    whose smallest eigenvalue falls below cond_tol times its largest is
    treated as non-invertible.
    """
    ys = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    if ys.shape[1] != model.obs_dim:
        raise ConfigError(f"observations must have width {model.obs_dim}")
    a, h = model.transition, model.observation
    q, r = model.process_cov, model.obs_cov
    x = model.initial_mean.copy()
    p = model.initial_cov.copy()
    n_t = ys.shape[0]
    means = np.zeros((n_t, model.state_dim))
    covs = np.zeros((n_t, model.state_dim, model.state_dim))
    gains = np.zeros((n_t, model.state_dim, model.obs_dim))
    loglik = 0.0
    k_dim = model.obs_dim
    for t in range(n_t):
        x = a @ x
        p = a @ p @ a.T + q
        p = 0.5 * (p + p.T)
        s = h @ p @ h.T + r
        s = 0.5 * (s + s.T)
        eigs = np.linalg.eigvalsh(s)
        if eigs[0] <= cond_tol * max(eigs[-1], 1.0):
            raise NumericalError(f"innovation covariance singular at step {t}")
        innov = ys[t] - h @ x
        s_inv = np.linalg.inv(s)
        gain = p @ h.T @ s_inv
        x = x + gain @ innov
        p = p - gain @ h @ p
        p = 0.5 * (p + p.T)
        sign, logdet = np.linalg.slogdet(s)
        if sign <= 0:
            raise NumericalError(f"innovation covariance not positive definite at step {t}")
        loglik += -0.5 * (k_dim * math.log(2.0 * math.pi) + logdet + float(innov @ s_inv @ innov))
        means[t] = x
        covs[t] = p
        gains[t] = gain
    return FilterResult(means, covs, loglik, gains)


# ---------------------------------------------------------------------------
# belief-policy divergence


@dataclass(frozen=True)
class Divergence:
    value: float
    infinite: bool


def belief_policy_divergence(belief_probs, policy, s: Optional[int] = None) -> Divergence:
    """KL(observed policy row || belief) in nats.

    Penalizes beliefs that put little mass where the opponent actually
    plays; a zero belief entry against positive observed mass is infinite
    and flagged instead of raised.
    """
    if isinstance(policy, EmpiricalPolicy):
        if s is None:
            raise ConfigError("state index required with an EmpiricalPolicy")
        p = policy.dist(s)
    else:
        p = np.asarray(policy, dtype=np.float64)
    b = np.asarray(belief_probs, dtype=np.float64)
    if p.shape != b.shape:
        raise ConfigError(f"support mismatch: {p.shape} vs {b.shape}")
    total = 0.0
    for k in range(p.size):
        if p[k] <= 0.0:
            continue
        if b[k] <= 0.0:
            return Divergence(math.inf, True)
        total += float(p[k]) * math.log(float(p[k]) / float(b[k]))
    return Divergence(max(total, 0.0), False)


# ---------------------------------------------------------------------------
# shared-subspace analysis


@dataclass(frozen=True)
class SubspaceResult:
    correlations: np.ndarray
    proj_x: np.ndarray
    proj_y: np.ndarray
    shared_x: np.ndarray
    shared_y: np.ndarray

    def to_dict(self) -> dict:
        return {
            "correlations": [float(c) for c in self.correlations],
            "proj_x": self.proj_x.tolist(),
            "proj_y": self.proj_y.tolist(),
        }


def _whitener(cov: np.ndarray, ridge: float, k: int, side: str):
    evals, evecs = np.linalg.eigh(cov)
    if int((evals > ridge).sum()) < k:
        raise NumericalError(f"{side} trajectory is rank-deficient below {k} after regularization")
    return evecs @ np.diag(1.0 / np.sqrt(evals + ridge)) @ evecs.T


def cca_shared_subspace(x, y, k: int) -> SubspaceResult:
    """First k canonical correlations via whitening plus SVD.

    Auto-covariances get a ridge of 1e-6 * trace/dim, which keeps short or
    nearly collinear trajectories workable at a small bias cost.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] != y.shape[0]:
        raise ConfigError("trajectories must share their time length")
    t, dx = x.shape
    dy = y.shape[1]
    if not 1 <= k <= min(dx, dy):
        raise ConfigError(f"k must lie in [1, {min(dx, dy)}]")
    if t < max(dx, dy) + 2:
        raise ConfigError(f"need at least {max(dx, dy) + 2} time steps for dimensions {(dx, dy)}")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    sxx = xc.T @ xc / (t - 1)
    syy = yc.T @ yc / (t - 1)
    sxy = xc.T @ yc / (t - 1)
    ridge_x = CCA_RIDGE_SCALE * float(np.trace(sxx)) / dx
    ridge_y = CCA_RIDGE_SCALE * float(np.trace(syy)) / dy
    wx = _whitener(sxx, ridge_x, k, "first")
    wy = _whitener(syy, ridge_y, k, "second")
    u, _, vt = np.linalg.svd(wx @ sxy @ wy)
    proj_x = wx @ u[:, :k]
    proj_y = wy @ vt[:k].T
    shared_x = xc @ proj_x
    shared_y = yc @ proj_y
    # correlations re-measured on the projected pair: the whitening ridge only
    # tilts the directions, and correlation is stationary at its maximum, so
    # the ridge bias drops out of the reported values
    corr = np.empty(k)
    for j in range(k):
        nu = float(np.linalg.norm(shared_x[:, j]))
        nv = float(np.linalg.norm(shared_y[:, j]))
        corr[j] = float(shared_x[:, j] @ shared_y[:, j]) / (nu * nv) if nu > 0.0 and nv > 0.0 else 0.0
    order = np.argsort(-corr)
    corr = np.clip(corr[order], 0.0, 1.0)
    proj_x = proj_x[:, order]
    proj_y = proj_y[:, order]
    return SubspaceResult(corr, proj_x, proj_y, shared_x[:, order], shared_y[:, order])


# ---------------------------------------------------------------------------
# convergence reporting


@dataclass(frozen=True)
class ConvergenceReport:
    stabilization: dict
    e_trace: tuple
    simultaneous: Optional[int]

    def to_dict(self) -> dict:
        return {
            "stabilization": dict(self.stabilization),
            "e_trace": [[t, v] for t, v in self.e_trace],
            "simultaneous": self.simultaneous,
        }


def convergence_report(log, tol: ToleranceConfig, weights: DistanceWeights = DistanceWeights()) -> ConvergenceReport:
    """Per-level settling ticks plus the drift-distance series.

    The series runs over consecutive snapshot pairs (exactly the per-tick
    distance when the snapshot cadence is 1). The simultaneous tick is the
    latest of the per-level settling ticks, or None if any level never
    settles.
    """
    level_tols = {"theta": tol.eps_neural, "belief": tol.eps_cognitive, "policy": tol.eps_policy}
    stab = {
        level: drift_detector(log, level, level_tols[level], tol.window) for level in LEVELS
    }
    points = _snapshot_points(log)
    trace = []
    for j in range(len(points) - 1):
        val = (
            weights.theta * level_step_norm(points[j][1], points[j + 1][1], "theta")
            + weights.belief * level_step_norm(points[j][1], points[j + 1][1], "belief")
            + weights.policy * level_step_norm(points[j][1], points[j + 1][1], "policy")
        )
        trace.append((points[j][0], float(val)))
    simultaneous = None
    if all(v is not None for v in stab.values()):
        simultaneous = max(stab.values())
    return ConvergenceReport(stab, tuple(trace), simultaneous)


# ---------------------------------------------------------------------------
# belief-depth comparison


@dataclass(frozen=True)
class DepthComparison:
    logliks: dict
    best_depth: int
    betas: dict

    def to_dict(self) -> dict:
        return {
            "logliks": {str(d): v for d, v in self.logliks.items()},
            "best_depth": self.best_depth,
            "betas": {str(d): v for d, v in self.betas.items()},
        }


def _depth_predictions(depth: int, my_payoff, opp_payoff, beta: float, my_actions, opp_actions, n_actions: int):
    """One-step-ahead distributions over the opponent's next action.

    depth 0: static frequency of past opponent actions. depth 1: opponent
    smooth-best-responds to the frequency of my actions. depth 2: opponent
    responds to a model of me responding to their own action frequency.
    Frequencies use add-one smoothing and include everything before each
    step.
    """
    t_len = len(opp_actions)
    preds = np.zeros((t_len, n_actions))
    my_counts = np.ones(n_actions)
    opp_counts = np.ones(n_actions)
    for t in range(t_len):
        if depth == 0:
            preds[t] = opp_counts / opp_counts.sum()
        elif depth == 1:
            freq_my = my_counts / my_counts.sum()
            preds[t] = stable_softmax(opp_payoff @ freq_my, beta)
        else:
            freq_opp = opp_counts / opp_counts.sum()
            my_model = stable_softmax(my_payoff @ freq_opp, beta)
            preds[t] = stable_softmax(opp_payoff @ my_model, beta)
        my_counts[my_actions[t]] += 1.0
        opp_counts[opp_actions[t]] += 1.0
    return preds


def belief_depth_comparison(
    log,
    agent: int,
    holdout: float = 0.3,
    depths: Sequence[int] = (0, 1, 2),
    beta_grid: Sequence[float] = DEFAULT_BETA_GRID,
    payoffs=None,
) -> DepthComparison:
    """Score nested opponent models by held-out predictive log-likelihood.

    Fits each candidate depth on the training prefix (depth >= 1 selects its
    softmax temperature on that prefix), then accumulates one-step-ahead
    log-probabilities of the opponent's actions over the holdout suffix.
    """
    if not 0.0 < holdout <= 0.5:
        raise ConfigError("holdout fraction must lie in (0, 0.5]")
    ticks = log.ticks()
    if log.n_agents != 2:
        raise ConfigError("depth comparison expects a two-agent log")
    if payoffs is None:
        header = log.header["scenario"]
        if header.get("kind") != "matrix":
            raise ConfigError("depth comparison needs payoff matrices; pass payoffs=")
        from .scenarios.matrix_games import PAYOFFS

        payoffs = PAYOFFS[header["name"]]
    opp = 1 - agent
    my_payoff = np.asarray(payoffs[agent], dtype=np.float64)
    opp_payoff = np.asarray(payoffs[opp], dtype=np.float64)
    if agent == 1:
        my_payoff = my_payoff.T
    else:
        opp_payoff = opp_payoff.T
    my_actions = [rec["actions"][agent] for rec in ticks]
    opp_actions = [rec["actions"][opp] for rec in ticks]
    t_len = len(ticks)
    n_hold = max(1, int(holdout * t_len))
    n_train = t_len - n_hold
    if n_train < 1 or n_hold < 1:
        raise DataError("log too short to split into train and holdout")
    n_actions = opp_payoff.shape[0]
    logliks, betas = {}, {}
    for depth in depths:
        if depth not in (0, 1, 2):
            raise ConfigError("candidate depths must come from {0, 1, 2}")
        grid = [None] if depth == 0 else list(beta_grid)
        best_beta, best_train = None, -math.inf
        for beta in grid:
            preds = _depth_predictions(
                depth, my_payoff, opp_payoff, beta or 1.0, my_actions[:n_train], opp_actions[:n_train], n_actions
            )
            score = _loglik(preds, opp_actions[:n_train])
            if score > best_train:
                best_train, best_beta = score, beta
        preds = _depth_predictions(
            depth, my_payoff, opp_payoff, best_beta or 1.0, my_actions, opp_actions, n_actions
        )
        logliks[depth] = _loglik(preds[n_train:], opp_actions[n_train:])
        betas[depth] = best_beta
    best_depth = max(sorted(logliks), key=lambda d: logliks[d])
    return DepthComparison(logliks, best_depth, betas)


def _loglik(preds: np.ndarray, actions) -> float:
    total = 0.0
    for t, a in enumerate(actions):
        p = float(preds[t, a])
        total += math.log(p) if p > 0.0 else -math.inf
    return total
