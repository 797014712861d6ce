"""Shared test utilities: random ensembles and an independent LLL oracle."""
import numpy as np


def randc(rng, n, m):
    """n x m matrix of i.i.d. CN(0,1) entries."""
    return (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / np.sqrt(2)


def random_unimodular(rng, m, steps=20):
    """Gaussian-integer unimodular matrix from random elementary column ops."""
    U = np.eye(m, dtype=complex)
    units = np.array([1, -1, 1j, -1j])
    for _ in range(steps):
        i, j = rng.integers(0, m, 2)
        if i == j:
            U[:, i] *= units[rng.integers(0, 4)]
        else:
            q = complex(rng.integers(-2, 3), rng.integers(-2, 3))
            U[:, j] += q * U[:, i]
    return U


def real_lll(B, delta=0.75):
    """Textbook real-valued LLL, used only as an independent oracle."""
    B = np.array(B, dtype=float)
    n, m = B.shape
    U = np.eye(m)

    def gso():
        Q = B.copy()
        mu = np.eye(m)
        for i in range(m):
            for j in range(i):
                mu[i, j] = Q[:, j] @ B[:, i] / (Q[:, j] @ Q[:, j])
                Q[:, i] -= mu[i, j] * Q[:, j]
        return Q, mu

    Q, mu = gso()
    k = 1
    guard = 0
    while k < m:
        guard += 1
        assert guard < 10**6
        for j in range(k - 1, -1, -1):
            q = round(mu[k, j])
            if q:
                B[:, k] -= q * B[:, j]
                U[:, k] -= q * U[:, j]
                Q, mu = gso()
        nk = Q[:, k] @ Q[:, k]
        nk1 = Q[:, k - 1] @ Q[:, k - 1]
        if nk >= (delta - mu[k, k - 1] ** 2) * nk1:
            k += 1
        else:
            B[:, [k - 1, k]] = B[:, [k, k - 1]]
            U[:, [k - 1, k]] = U[:, [k, k - 1]]
            Q, mu = gso()
            k = max(k - 1, 1)
    return B, U


def is_int_matrix(M, tol=1e-6):
    return np.all(np.abs(M - np.round(M.real) - 1j * np.round(M.imag)) <= tol)
