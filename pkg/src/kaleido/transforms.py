"""Classical structured transforms written as K-matrices.

Conventions: the DFT uses omega = exp(-2 pi i / n) and is unnormalized; DCT-II and
DST-II are unnormalized (X_k = sum_m x_m cos(pi k (2m+1) / 2n), and
sin(pi (k+1) (2m+1) / 2n) for the sine transform).  The cosine and sine transforms
are the real part of a complex K-matrix applied to a real vector.
"""
import numpy as np

from .errors import DimensionError
from .hierarchy import bit_reversal_perm, butterfly_inverse, perm_to_bb, perm_to_bsb
from .kcore import (ButterflyFactorMatrix, ButterflyMatrix, FactorChain, KMatrix, Permutation, Stage,
                    fold_left_diag, fold_right_diag, identity_chain, is_pow2, kmatrix_matvec, log2i,
                    stage_scale_cols)

__all__ = [
    "Permutation", "bit_reversal_perm", "dft_butterfly", "hadamard_butterfly", "dft_kmatrix",
    "hadamard_kmatrix", "dct_kmatrix", "dst_kmatrix", "circulant_kmatrix", "toeplitz_kmatrix",
    "fastfood_kmatrix", "afdf_kmatrix", "dft2d_kmatrix", "real_matvec", "even_odd_perm",
]


def _check_n(n):
    if not is_pow2(n) or n < 2:
        raise DimensionError(f"transform size must be a power of two >= 2, got {n}")


def dft_butterfly(n, sign=-1):
    """Decimation-in-time butterfly B with DFT = B P_br.

    The block-size-k factor is [[I, W], [I, -W]] with W = diag(exp(sign 2 pi i j / k)).
    sign=+1 gives the butterfly of the conjugate (unnormalized inverse) DFT.
    """
    _check_n(n)
    factors = []
    for j in range(log2i(n)):
        k = n >> j
        tw = np.exp(sign * 2j * np.pi * np.arange(k // 2) / k)
        tw = np.tile(tw, (n // k, 1))
        one = np.ones_like(tw)
        factors.append(ButterflyFactorMatrix(n, k, one, tw, one, -tw))
    return ButterflyMatrix(n, tuple(factors))


def hadamard_butterfly(n):
    _check_n(n)
    factors = []
    for j in range(log2i(n)):
        k = n >> j
        one = np.ones((n // k, k // 2))
        factors.append(ButterflyFactorMatrix(n, k, one, one, one, -one))
    return ButterflyMatrix(n, tuple(factors))


def _b_then_identity(B):
    return FactorChain(B.n, tuple(B.forward_stages()) + identity_chain(B.n).stages[log2i(B.n):])


def dft_kmatrix(n):
    """Width-two K-matrix: the DIT butterfly (with an identity B*) times the bit reversal."""
    B = dft_butterfly(n)
    chain = _b_then_identity(B) + perm_to_bb(bit_reversal_perm(n)).chain
    return KMatrix(n, 1, chain)


def hadamard_kmatrix(n):
    """Sylvester Hadamard matrix (unnormalized): a single butterfly, width one."""
    return KMatrix(n, 1, _b_then_identity(hadamard_butterfly(n)))


def even_odd_perm(n):
    """v = Q x with v[m] = x[2m] and v[n-1-m] = x[2m+1] for m < n/2."""
    m = np.arange(n // 2)
    mapping = np.empty(n, dtype=np.int64)
    mapping[2 * m] = m
    mapping[2 * m + 1] = n - 1 - m
    return Permutation(mapping)


def _diag_through_perm(P, c):
    """c' with P diag(c) = diag(c') P."""
    out = np.empty(len(c), dtype=np.complex128)
    out[P.map] = c
    return out


def _butterfly_then_perm(B, left, right, P):
    """K-matrix for diag(left) B diag(right) P, width two."""
    chain = _b_then_identity(B)
    if left is not None:
        chain = fold_left_diag(chain, left)
    if right is not None:
        chain = chain.with_stage(log2i(B.n) - 1, stage_scale_cols(chain.stages[log2i(B.n) - 1], right))
    return KMatrix(B.n, 1, chain + perm_to_bb(P).chain)


def dct_kmatrix(n):
    """DCT-II: real part of diag(exp(-i pi k / 2n)) DFT Q, with Q the even/odd reordering."""
    _check_n(n)
    k = np.arange(n)
    D = np.exp(-1j * np.pi * k / (2 * n))
    P = bit_reversal_perm(n) @ even_odd_perm(n)
    return _butterfly_then_perm(dft_butterfly(n), D, None, P)


def dst_kmatrix(n):
    """DST-II via DST = J DCT diag((-1)^m), with J the reversal.

    J DFT = conj(DFT) diag(omega^-j), so the sine transform is the real part of
    diag(d) B' diag(t) P with B' the conjugate butterfly and P = P_br Q.
    """
    _check_n(n)
    k = np.arange(n)
    D = np.exp(-1j * np.pi * k / (2 * n))
    left = D[::-1]
    Q = even_odd_perm(n)
    sgn = _diag_through_perm(Q, (-1.0) ** k)
    twist = np.exp(2j * np.pi * k / n) * sgn
    br = bit_reversal_perm(n)
    right = _diag_through_perm(br, twist)
    return _butterfly_then_perm(dft_butterfly(n, sign=+1), left, right, br @ Q)


def _conjugated_diag_chain(n, lam):
    """(B B*) chain for conj(DFT)/n ... i.e. DFT^-1 diag(lam) DFT, as B diag(lam[br]) B^-1."""
    Bc = dft_butterfly(n, sign=+1)
    lam_br = np.asarray(lam, dtype=np.complex128)[bit_reversal_perm(n).map]
    fwd = FactorChain(n, tuple(Bc.forward_stages()))
    fwd = fold_right_diag(fwd, lam_br)
    return fwd + butterfly_inverse(Bc)


def circulant_kmatrix(c):
    """Circulant matrix with first column c: width one, e = 1.

    The eigenvalues DFT(c) are computed with the DFT K-matrix itself.
    """
    c = np.asarray(c, dtype=np.complex128)
    n = c.size
    _check_n(n)
    lam = kmatrix_matvec(dft_kmatrix(n), c)
    return KMatrix(n, 1, _conjugated_diag_chain(n, lam))


def toeplitz_kmatrix(t):
    """Toeplitz T[i, j] = t_{i-j}, with t packed as (t_{-(n-1)}, ..., t_0, ..., t_{n-1}).

    Embedded in a 2n circulant, so e = 2 and width one.
    """
    t = np.asarray(t, dtype=np.complex128)
    if t.size % 2 == 0:
        raise DimensionError("Toeplitz diagonals must have odd length 2n - 1")
    n = (t.size + 1) // 2
    _check_n(n)
    c = np.zeros(2 * n, dtype=np.complex128)
    c[:n] = t[n - 1:]
    c[n + 1:] = t[:n - 1]
    C = circulant_kmatrix(c)
    return KMatrix(n, 2, C.chain)


def fastfood_kmatrix(s, g, perm, b):
    """S H G P H B with diagonal S, G, B (given as vectors), a permutation P and the
    unnormalized Hadamard H; width two."""
    s, g, b = (np.asarray(v, dtype=np.complex128) for v in (s, g, b))
    n = s.size
    _check_n(n)
    perm = perm if isinstance(perm, Permutation) else Permutation(perm)
    H = hadamard_butterfly(n)
    L = log2i(n)
    shd = FactorChain(n, tuple(H.forward_stages()))
    shd = fold_right_diag(fold_left_diag(shd, s), g)
    hb = FactorChain(n, tuple(H.adjoint_stages()))
    hb = fold_right_diag(hb, b)
    mid = perm_to_bsb(perm)
    chain = FactorChain(n, shd.stages + mid.stages[:L] + mid.stages[L:] + hb.stages)
    return KMatrix(n, 1, chain)


def afdf_kmatrix(a, d):
    """diag(a) DFT^-1 diag(d) DFT; width one."""
    a = np.asarray(a, dtype=np.complex128)
    n = a.size
    _check_n(n)
    chain = fold_left_diag(_conjugated_diag_chain(n, d), a)
    return KMatrix(n, 1, chain)


def dft2d_kmatrix(n):
    """2-D DFT on row-major n x n images, as an n^2 x n^2 K-matrix of width two.

    DFT (x) DFT = (B (x) B)(P_br (x) P_br); B (x) B is itself a butterfly of size n^2
    whose factors are B_k (x) I_n followed by I_n (x) B_k.
    """
    B = dft_butterfly(n)
    N = n * n
    outer = [ButterflyFactorMatrix(N, f.k * n, *(np.repeat(d, n, axis=1) for d in f.diagonals))
             for f in B.factors]
    inner = [ButterflyFactorMatrix(N, f.k, *(np.tile(d, (n, 1)) for d in f.diagonals)) for f in B.factors]
    BB = ButterflyMatrix(N, tuple(outer + inner))
    br = bit_reversal_perm(n).map
    i, j = np.divmod(np.arange(N), n)
    P = Permutation(br[i] * n + br[j])
    return KMatrix(N, 1, _b_then_identity(BB) + perm_to_bb(P).chain)


def real_matvec(K, x):
    """Re(K x) for real x; how the cosine and sine transforms are applied."""
    return kmatrix_matvec(K, np.asarray(x, dtype=float)).real
