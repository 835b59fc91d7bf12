"""Pure-Python co-learning loop for single-state matrix games.

Twin of the compiled kernel: every floating-point operation appears in the
same order, so results are bit-identical between the two backends and with
the general engine (which this loop specializes).

Payoff arguments are oriented (own action, opponent action) for both
agents; the dispatcher handles the transpose.
"""

import math

BACKEND = "pure"


def run_rounds(
    pay0,
    pay1,
    learner,
    alpha,
    beta,
    gamma,
    prior,
    q0,
    q1,
    b0,
    b1,
    row0,
    row1,
    u0,
    u1,
    a0_out,
    a1_out,
):
    """Run len(u0) rounds in place. learner: 0 = q, 1 = fictitious."""
    n_a = len(row0)
    pay = [
        [[float(pay0[i, j]) for j in range(n_a)] for i in range(n_a)],
        [[float(pay1[i, j]) for j in range(n_a)] for i in range(n_a)],
    ]
    q = [list(map(float, q0)), list(map(float, q1))]
    b = [list(map(float, b0)), list(map(float, b1))]
    row = [list(map(float, row0)), list(map(float, row1))]
    horizon = len(u0)
    for t in range(horizon):
        acts = [0, 0]
        for i, u in ((0, u0[t]), (1, u1[t])):
            ri = row[i]
            acc = 0.0
            a = n_a - 1
            for j in range(n_a - 1):
                acc += ri[j]
                if u < acc:
                    a = j
                    break
            acts[i] = a
        a0_out[t] = acts[0]
        a1_out[t] = acts[1]
        rho = 1.0 / (prior + t + 1.0)
        for i in range(2):
            own, opp = acts[i], acts[1 - i]
            bi = b[i]
            for j in range(n_a):
                ind = 1.0 if j == opp else 0.0
                bi[j] = bi[j] + rho * (ind - bi[j])
            if learner == 0:
                qi = q[i]
                best = qi[0]
                for j in range(1, n_a):
                    if qi[j] > best:
                        best = qi[j]
                r = pay[i][own][opp]
                delta = r + gamma * best - qi[own]
                qi[own] = qi[own] + alpha * delta
                _softmax_into(qi, beta, row[i])
            else:
                pi = pay[i]
                logits = [0.0] * n_a
                for a in range(n_a):
                    acc = 0.0
                    pa = pi[a]
                    for h in range(n_a):
                        acc += pa[h] * bi[h]
                    logits[a] = acc
                _softmax_into(logits, beta, row[i])
    for j in range(n_a):
        q0[j] = q[0][j]
        q1[j] = q[1][j]
        b0[j] = b[0][j]
        b1[j] = b[1][j]
        row0[j] = row[0][j]
        row1[j] = row[1][j]


def _softmax_into(values, beta, out):
    n = len(values)
    m = values[0]
    for i in range(1, n):
        if values[i] > m:
            m = values[i]
    total = 0.0
    for i in range(n):
        e = math.exp(beta * (values[i] - m))
        out[i] = e
        total += e
    for i in range(n):
        out[i] = out[i] / total
