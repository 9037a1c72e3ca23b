"""Compiled loops for the Runge-Kutta residual terms.

Array layouts: states ``X`` (m, n); stage arrays (m-1, s, n); step sizes ``h`` (m-1,).
Every loop runs in a fixed order so results do not depend on scheduling.
"""

import numba


@numba.njit(cache=True)
def stage_residuals(X, S, F, A, b, h, r1, r2):
    M, s, n = S.shape
    for j in range(M):
        hj = h[j]
        for q in range(n):
            acc = X[j + 1, q] - X[j, q]
            for i in range(s):
                acc -= hj * b[i] * F[j, i, q]
            r1[j, q] = acc
            for i in range(s):
                a = S[j, i, q] - X[j, q]
                for l in range(s):
                    if A[i, l] != 0.0:
                        a -= hj * A[i, l] * F[j, l, q]
                r2[j, i, q] = a


@numba.njit(cache=True)
def stage_backward(r1, r2, A, b, h, gX, W):
    """Accumulate d/dX into ``gX`` and write the cotangent on f(stages) into ``W``."""
    M, s, n = r2.shape
    for j in range(M):
        hj = h[j]
        for q in range(n):
            t = 2.0 * r1[j, q]
            gX[j + 1, q] += t
            for i in range(s):
                t += 2.0 * r2[j, i, q]
                w = b[i] * r1[j, q]
                for k in range(s):
                    if A[k, i] != 0.0:
                        w += A[k, i] * r2[j, k, q]
                W[j, i, q] = -2.0 * hj * w
            gX[j, q] -= t


@numba.njit(cache=True)
def velocity_points(X, K, A, h, Z):
    M, s, n = K.shape
    for j in range(M):
        hj = h[j]
        for i in range(s):
            for q in range(n):
                z = X[j, q]
                for l in range(s):
                    if A[i, l] != 0.0:
                        z += hj * A[i, l] * K[j, l, q]
                Z[j, i, q] = z


@numba.njit(cache=True)
def velocity_step_residual(X, K, b, h, r1):
    M, s, n = K.shape
    for j in range(M):
        hj = h[j]
        for q in range(n):
            acc = X[j + 1, q] - X[j, q]
            for i in range(s):
                acc -= hj * b[i] * K[j, i, q]
            r1[j, q] = acc


@numba.njit(cache=True)
def velocity_backward(r1, r2, U, A, b, h, gX, gK):
    """``U`` is the cotangent on the stage points Z; ``r2 = K - f(Z)/alpha``."""
    M, s, n = r2.shape
    for j in range(M):
        hj = h[j]
        for q in range(n):
            t = 2.0 * r1[j, q]
            gX[j + 1, q] += t
            gX[j, q] -= t
            for i in range(s):
                gX[j, q] += U[j, i, q]
            for l in range(s):
                g = 2.0 * r2[j, l, q] - 2.0 * hj * b[l] * r1[j, q]
                for i in range(s):
                    if A[i, l] != 0.0:
                        g += hj * A[i, l] * U[j, i, q]
                gK[j, l, q] = g

