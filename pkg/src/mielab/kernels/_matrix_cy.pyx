# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled co-learning loop for single-state matrix games.

Mirrors matrix_py.run_rounds operation for operation; both call the same
libm exp and accumulate in the same order, so outputs are bit-identical.
"""

from libc.math cimport exp
from libc.stdint cimport int64_t

BACKEND = "compiled"


cdef void _softmax_into(double* values, Py_ssize_t n, double beta, double* out) noexcept:
    cdef Py_ssize_t i
    cdef double m = values[0]
    cdef double e, total = 0.0
    for i in range(1, n):
        if values[i] > m:
            m = values[i]
    for i in range(n):
        e = exp(beta * (values[i] - m))
        out[i] = e
        total += e
    for i in range(n):
        out[i] = out[i] / total


def run_rounds(
    double[:, ::1] pay0,
    double[:, ::1] pay1,
    int learner,
    double alpha,
    double beta,
    double gamma,
    double prior,
    double[::1] q0,
    double[::1] q1,
    double[::1] b0,
    double[::1] b1,
    double[::1] row0,
    double[::1] row1,
    double[::1] u0,
    double[::1] u1,
    int64_t[::1] a0_out,
    int64_t[::1] a1_out,
):
    """Run len(u0) rounds in place. learner: 0 = q, 1 = fictitious."""
    cdef Py_ssize_t n_a = row0.shape[0]
    cdef Py_ssize_t horizon = u0.shape[0]
    cdef Py_ssize_t t, i, j, a, h
    cdef Py_ssize_t own, opp
    cdef Py_ssize_t acts0, acts1
    cdef double u, acc, rho, ind, best, r, delta
    cdef double logits[64]
    if n_a > 64:
        raise ValueError("kernel supports at most 64 actions")

    for t in range(horizon):
        # agent 0 action
        u = u0[t]
        acc = 0.0
        acts0 = n_a - 1
        for j in range(n_a - 1):
            acc += row0[j]
            if u < acc:
                acts0 = j
                break
        # agent 1 action
        u = u1[t]
        acc = 0.0
        acts1 = n_a - 1
        for j in range(n_a - 1):
            acc += row1[j]
            if u < acc:
                acts1 = j
                break
        a0_out[t] = acts0
        a1_out[t] = acts1
        rho = 1.0 / (prior + t + 1.0)
        for i in range(2):
            if i == 0:
                own = acts0
                opp = acts1
            else:
                own = acts1
                opp = acts0
            if i == 0:
                for j in range(n_a):
                    ind = 1.0 if j == opp else 0.0
                    b0[j] = b0[j] + rho * (ind - b0[j])
            else:
                for j in range(n_a):
                    ind = 1.0 if j == opp else 0.0
                    b1[j] = b1[j] + rho * (ind - b1[j])
            if learner == 0:
                if i == 0:
                    best = q0[0]
                    for j in range(1, n_a):
                        if q0[j] > best:
                            best = q0[j]
                    r = pay0[own, opp]
                    delta = r + gamma * best - q0[own]
                    q0[own] = q0[own] + alpha * delta
                    _softmax_into(&q0[0], n_a, beta, &row0[0])
                else:
                    best = q1[0]
                    for j in range(1, n_a):
                        if q1[j] > best:
                            best = q1[j]
                    r = pay1[own, opp]
                    delta = r + gamma * best - q1[own]
                    q1[own] = q1[own] + alpha * delta
                    _softmax_into(&q1[0], n_a, beta, &row1[0])
            else:
                if i == 0:
                    for a in range(n_a):
                        acc = 0.0
                        for h in range(n_a):
                            acc += pay0[a, h] * b0[h]
                        logits[a] = acc
                    _softmax_into(&logits[0], n_a, beta, &row0[0])
                else:
                    for a in range(n_a):
                        acc = 0.0
                        for h in range(n_a):
                            acc += pay1[a, h] * b1[h]
                        logits[a] = acc
                    _softmax_into(&logits[0], n_a, beta, &row1[0])
