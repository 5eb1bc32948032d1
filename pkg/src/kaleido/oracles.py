"""Brute-force dense reference matrices, built straight from their defining formulas.

Nothing here touches the factorized code paths.
"""
import numpy as np


def dft_matrix(n):
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n)


def hadamard_matrix(n):
    # H[i, j] = (-1)^popcount(i & j)
    i = np.arange(n)
    bits = np.bitwise_and.outer(i, i)
    parity = np.zeros_like(bits)
    while np.any(bits):
        parity ^= bits & 1
        bits >>= 1
    return 1.0 - 2.0 * parity


def dct2_matrix(n):
    k, m = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.cos(np.pi * k * (2 * m + 1) / (2 * n))


def dst2_matrix(n):
    k, m = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.sin(np.pi * (k + 1) * (2 * m + 1) / (2 * n))


def circulant_matrix(c):
    c = np.asarray(c)
    n = c.size
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return c[(i - j) % n]


def toeplitz_matrix(t):
    """t packed as (t_{-(n-1)}, ..., t_0, ..., t_{n-1})."""
    t = np.asarray(t)
    n = (t.size + 1) // 2
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return t[i - j + n - 1]


def bit_reversal_indices(n):
    width = n.bit_length() - 1
    return np.array([int(format(i, f"0{width}b")[::-1], 2) if width else 0 for i in range(n)])


def permutation_matrix(mapping):
    n = len(mapping)
    P = np.zeros((n, n))
    for j, r in enumerate(mapping):
        P[r, j] = 1.0
    return P


def fastfood_matrix(s, g, perm, b):
    n = len(s)
    H = hadamard_matrix(n)
    return np.diag(s) @ H @ np.diag(g) @ permutation_matrix(perm) @ H @ np.diag(b)


def afdf_matrix(a, d):
    n = len(a)
    F = dft_matrix(n)
    return np.diag(a) @ np.conj(F) / n @ np.diag(d) @ F


def dft2d_matrix(n):
    F = dft_matrix(n)
    N = n * n
    out = np.empty((N, N), dtype=np.complex128)
    for r in range(N):
        for c in range(N):
            out[r, c] = F[r // n, c // n] * F[r % n, c % n]
    return out


def naive_matvec(M, x, block=256):
    """O(n^2) dense matrix-vector product, row block by row block."""
    n = M.shape[0]
    y = np.empty(n, dtype=np.result_type(M.dtype, x.dtype))
    for r in range(0, n, block):
        y[r:r + block] = (M[r:r + block] * x[None, :]).sum(axis=1)
    return y


ORACLES = {
    "dft": dft_matrix,
    "hadamard": hadamard_matrix,
    "dct": dct2_matrix,
    "dst": dst2_matrix,
}
