"""Slow reference implementations the tests compare the package against.

Everything here is written with plain loops and per-policy linear solves,
deliberately sharing no code with the package internals.
"""

import itertools

import numpy as np


def induced_arrays(game, tables, agent):
    """Single-agent transition/reward tensors with opponents frozen."""
    n_s = game.n_states
    n_a = game.n_actions[agent]
    others = [j for j in range(game.n_agents) if j != agent]
    trans = np.zeros((n_s, n_a, n_s))
    rew = np.zeros((n_s, n_a))
    ranges = [range(game.n_actions[j]) for j in range(game.n_agents)]
    for s in range(n_s):
        for joint in itertools.product(*ranges):
            w = 1.0
            for j in others:
                w *= float(tables[j][s, joint[j]])
            if w == 0.0:
                continue
            a_i = joint[agent]
            trans[s, a_i] += w * np.asarray(game.transition[(s, *joint)])
            rew[s, a_i] += w * float(game.rewards[(agent, s, *joint)])
    return trans, rew


def eval_policy(trans, rew, gamma, table):
    """Exact discounted value of a stochastic policy by linear solve."""
    n_s = trans.shape[0]
    p = np.zeros((n_s, n_s))
    r = np.zeros(n_s)
    for s in range(n_s):
        for a in range(trans.shape[1]):
            p[s] += table[s, a] * trans[s, a]
            r[s] += table[s, a] * rew[s, a]
    return np.linalg.solve(np.eye(n_s) - gamma * p, r)


def brute_force_brgap(game, tables, agent, gamma=None):
    """Gap via exhaustive enumeration of deterministic policies.

    The elementwise max over all deterministic policy values equals the
    optimal value function, since one optimal deterministic policy attains
    it in every state at once.
    """
    g = float(game.discount if gamma is None else gamma)
    trans, rew = induced_arrays(game, tables, agent)
    n_s, n_a = rew.shape
    best = np.full(n_s, -np.inf)
    for actions in itertools.product(range(n_a), repeat=n_s):
        onehot = np.zeros((n_s, n_a))
        onehot[np.arange(n_s), list(actions)] = 1.0
        best = np.maximum(best, eval_policy(trans, rew, g, onehot))
    v_own = eval_policy(trans, rew, g, np.asarray(tables[agent], dtype=np.float64))
    gap = float(np.asarray(game.initial_dist) @ (best - v_own))
    return max(gap, 0.0)


def random_game(rng, n_states, n_actions, discount=0.9):
    """Dense random game with dirichlet transition rows."""
    from mielab.games import TabularMarkovGame

    shape = (n_states, *n_actions, n_states)
    trans = rng.dirichlet(np.ones(n_states), size=shape[:-1]).reshape(shape)
    rewards = rng.normal(size=(len(n_actions), n_states, *n_actions))
    init = rng.dirichlet(np.ones(n_states))
    return TabularMarkovGame(
        transition=trans, rewards=rewards, discount=discount, initial_dist=init
    )


def random_tables(rng, game):
    return [
        rng.dirichlet(np.ones(game.n_actions[j]), size=game.n_states)
        for j in range(game.n_agents)
    ]


def reference_kalman(y, A, C, Q, R, mu0, P0):
    """Textbook Kalman filter, coded independently of the package.

    Returns filtered means, covariances, gains, and the total Gaussian
    log-likelihood of the innovations.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu0, dtype=np.float64).copy()
    P = np.asarray(P0, dtype=np.float64).copy()
    means, covs, gains = [], [], []
    loglik = 0.0
    d_obs = y.shape[1]
    for t in range(y.shape[0]):
        mu_pred = A @ mu
        P_pred = A @ P @ A.T + Q
        S = C @ P_pred @ C.T + R
        innov = y[t] - C @ mu_pred
        S_inv = np.linalg.inv(S)
        K = P_pred @ C.T @ S_inv
        mu = mu_pred + K @ innov
        P = P_pred - K @ C @ P_pred
        P = 0.5 * (P + P.T)
        sign, logdet = np.linalg.slogdet(S)
        loglik += -0.5 * (d_obs * np.log(2.0 * np.pi) + logdet + innov @ S_inv @ innov)
        means.append(mu.copy())
        covs.append(P.copy())
        gains.append(K.copy())
    return np.array(means), np.array(covs), np.array(gains), float(loglik)
