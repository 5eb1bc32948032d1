"""Products of unitary butterflies with diagonals (the OBB hierarchy).

An OBB stage is O1 diag(d) O2*, with O1 and O2 butterfly matrices whose every 2x2
block is unitary.  A chain of w stages acting on size e*n, truncated to the leading
n coordinates, is an (OBB)^w_e matrix.  Every chain converts to a K-matrix of the
same width by folding each diagonal into the neighbouring butterfly factor.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DimensionError, NotOrthogonal
from .hierarchy import (SparseMatrix, hstep_to_butterfly, perm_to_bb_parts, perm_to_bsb_parts,
                        sparse_decompose_step, _adjoint_sparse)
from .kcore import (ButterflyFactorMatrix, ButterflyMatrix, FactorChain, KMatrix, Permutation, Stage,
                    is_pow2, log2i, next_pow2)

ORTHO_TOL = 1e-10


def is_diagonal(M):
    M = np.asarray(M)
    return not np.any(M - np.diag(np.diag(M)))


def factor_unitarity_error(f):
    """max |(G* G - I)_ij| for a factor matrix, computed block by block."""
    a, b, c, d = f.diagonals
    e11 = np.abs(np.abs(a) ** 2 + np.abs(c) ** 2 - 1)
    e22 = np.abs(np.abs(b) ** 2 + np.abs(d) ** 2 - 1)
    e12 = np.abs(np.conj(a) * b + np.conj(c) * d)
    return float(max(e11.max(), e22.max(), e12.max()))


def identity_butterfly(n):
    return ButterflyMatrix.identity(n).factors


@dataclass(frozen=True, eq=False)
class ObbStage:
    """O1 diag(d) O2*; o1 and o2 are factor tuples with block sizes n, n/2, ..., 2."""
    o1: tuple
    d: np.ndarray
    o2: tuple

    def __post_init__(self):
        ButterflyMatrix(self.o1[0].n, tuple(self.o1))
        ButterflyMatrix(self.o2[0].n, tuple(self.o2))
        d = np.array(self.d, dtype=np.complex128)
        if d.shape != (self.o1[0].n,):
            raise DimensionError("diagonal length must match the butterfly size")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "o1", tuple(self.o1))
        object.__setattr__(self, "o2", tuple(self.o2))

    @property
    def dim(self):
        return self.d.size

    def factors(self):
        return self.o1 + self.o2

    def to_chain(self):
        """(B B*) chain with d folded into the rightmost factor of O1."""
        o1 = list(self.o1)
        o1[-1] = o1[-1].scale_cols(self.d)
        return FactorChain(self.dim, tuple(Stage("F", f) for f in o1)
                           + tuple(Stage("T", f) for f in reversed(self.o2)))

    def orthogonality_error(self):
        return max(factor_unitarity_error(f) for f in self.factors())


@dataclass(frozen=True, eq=False)
class ObbChain:
    n: int
    e: int
    stages: tuple
    orig_n: int = None
    w: int = field(init=False)

    def __post_init__(self):
        log2i(self.n)
        log2i(self.e)
        st = tuple(self.stages)
        if not st:
            raise DimensionError("an OBB chain needs at least one stage")
        for s in st:
            if s.dim != self.n * self.e:
                raise DimensionError(f"stage size {s.dim} != e*n = {self.n * self.e}")
        object.__setattr__(self, "stages", st)
        object.__setattr__(self, "w", len(st))
        if self.orig_n is None:
            object.__setattr__(self, "orig_n", self.n)

    @property
    def dim(self):
        return self.n * self.e

    def to_kmatrix(self):
        chain = self.stages[0].to_chain()
        for s in self.stages[1:]:
            chain = chain + s.to_chain()
        return KMatrix(self.n, self.e, chain, self.orig_n)

    def to_dense(self):
        from .kcore import kmatrix_to_dense
        return kmatrix_to_dense(self.to_kmatrix())

    def matvec(self, x):
        from .kcore import kmatrix_matvec
        return kmatrix_matvec(self.to_kmatrix(), x)

    def orthogonality_error(self):
        return max(s.orthogonality_error() for s in self.stages)

    def check_orthogonal(self, tol=ORTHO_TOL):
        err = self.orthogonality_error()
        if err > tol:
            raise NotOrthogonal(f"butterfly factor deviates from unitary by {err:.3g}")
        return err


def _stage_from_parts(o1, d, o2):
    return ObbStage(tuple(o1.factors if isinstance(o1, ButterflyMatrix) else o1), d,
                    tuple(o2.factors if isinstance(o2, ButterflyMatrix) else o2))


def householder_qr(A):
    """A = Q R by Householder reflections (complex-safe).  Returns (Q, R, vectors)."""
    R = np.array(A, dtype=np.complex128)
    m, n = R.shape
    Q = np.eye(m, dtype=np.complex128)
    vecs = []
    for i in range(min(m - 1, n)):
        u = _householder_vector(R[i:, i])
        R[i:] -= 2.0 * np.outer(u, np.conj(u) @ R[i:])
        Q[:, i:] -= 2.0 * np.outer(Q[:, i:] @ u, np.conj(u))
        full = np.zeros(m, dtype=np.complex128)
        full[i:] = u
        vecs.append(full)
    return Q, R, vecs


def _householder_vector(x):
    """Unit u with (I - 2 u u*) x a multiple of e_1."""
    x = np.asarray(x, dtype=np.complex128)
    nx = np.linalg.norm(x)
    u = np.zeros_like(x)
    if nx == 0:
        u[0] = 1.0
        return u
    phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
    v = x.copy()
    v[0] += phase * nx
    return v / np.linalg.norm(v)


def householder_to_obb(u):
    """One OBB stage (inner diagonal I) equal to I - 2 u u* for a unit vector u.

    At block size k the factor L with rows (conj v0, conj v1) and (v1, -v0) sends the
    reflection to diag(I - 2 w w*, I) with w[i] = |(u0[i], u1[i])|, where
    (v0, v1) = (u0, u1) / w (or (1, 0) when w[i] = 0); recursion continues on the top
    half.  The trailing sign diag(-1, 1, ..., 1) is folded into the last factor.
    """
    u = np.asarray(u, dtype=np.complex128)
    n = u.size
    if not is_pow2(n) or n < 2:
        raise DimensionError(f"reflection size must be a power of two >= 2, got {n}")
    if abs(np.linalg.norm(u) - 1) > 1e-10:
        raise ValueError("Householder vector must have unit norm")
    cur = u
    adj = []
    for lev in range(log2i(n)):
        k = n >> lev
        h = k // 2
        u0, u1 = cur[:h], cur[h:]
        r = np.sqrt(np.abs(u0) ** 2 + np.abs(u1) ** 2)
        zero = r == 0
        rs = np.where(zero, 1.0, r)
        v0 = np.where(zero, 1.0, u0 / rs)
        v1 = np.where(zero, 0.0, u1 / rs)
        ds = [np.ones((n // k, h), dtype=np.complex128), np.zeros((n // k, h), dtype=np.complex128),
              np.zeros((n // k, h), dtype=np.complex128), np.ones((n // k, h), dtype=np.complex128)]
        # L* = [[v0, conj v1], [v1, -conj v0]] on the leading block
        ds[0][0], ds[1][0], ds[2][0], ds[3][0] = v0, np.conj(v1), v1, -np.conj(v0)
        adj.append(ButterflyFactorMatrix(n, k, *ds))
        cur = r.astype(np.complex128)
    sign = np.ones(n, dtype=np.complex128)
    sign[0] = 1 - 2 * abs(cur[0]) ** 2
    o1 = list(adj)
    o1[-1] = o1[-1].scale_cols(sign)
    return ObbStage(tuple(o1), np.ones(n), tuple(adj))


def unitary_to_obb(Q, check=True):
    """Exactly n - 1 OBB stages equal to a unitary Q: Q = H_1 ... H_{n-1} R with R diagonal
    (folded into the rightmost factor)."""
    Q = np.asarray(Q, dtype=np.complex128)
    n = Q.shape[0]
    if Q.shape != (n, n) or not is_pow2(n) or n < 2:
        raise DimensionError("expected a square matrix of power-of-two size >= 2")
    if check:
        err = np.linalg.norm(Q.conj().T @ Q - np.eye(n))
        if err > 1e-8:
            raise NotOrthogonal(f"||Q*Q - I||_F = {err:.3g}")
    _, R, vecs = householder_qr(Q)
    stages = [householder_to_obb(v) for v in vecs]
    last = stages[-1]
    o2 = list(last.o2)
    o2[0] = o2[0].scale_rows(np.conj(np.diag(R)))
    stages[-1] = ObbStage(last.o1, last.d, tuple(o2))
    return ObbChain(n, 1, tuple(stages))


def jacobi_svd(M, max_sweeps=60, tol=1e-12):
    """One-sided Jacobi SVD: M = U diag(s) V*, singular values descending."""
    A = np.array(M, dtype=np.complex128)
    n = A.shape[1]
    V = np.eye(n, dtype=np.complex128)
    floor = (tol * np.linalg.norm(A)) ** 2  # columns collapsed to roundoff are left alone
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap, aq = A[:, p], A[:, q]
                alpha = np.vdot(ap, ap).real
                beta = np.vdot(aq, aq).real
                gamma = np.vdot(ap, aq)
                g = abs(gamma)
                if g <= floor or g <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                ph = np.conj(gamma / g)
                zeta = (beta - alpha) / (2 * g)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1 + zeta * zeta))
                c = 1 / np.sqrt(1 + t * t)
                s = c * t
                for X in (A, V):
                    xp, xq = X[:, p].copy(), X[:, q] * ph
                    X[:, p] = c * xp - s * xq
                    X[:, q] = s * xp + c * xq
        if not rotated:
            break
    else:
        raise ConvergenceError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")
    s = np.linalg.norm(A, axis=0)
    order = np.argsort(-s, kind="stable")
    s, A, V = s[order], A[:, order], V[:, order]
    U = np.zeros_like(A)
    big = s > s.max() * 1e-15 if s.max() > 0 else np.zeros(n, dtype=bool)
    U[:, big] = A[:, big] / s[big]
    # complete U to a unitary on the null directions
    m = A.shape[0]
    filled = list(np.nonzero(big)[0])
    basis = U[:, filled]
    cand = 0
    for j in np.nonzero(~big)[0]:
        while True:
            e = np.zeros(m, dtype=np.complex128)
            e[cand % m] = 1
            cand += 1
            v = e - basis @ (basis.conj().T @ e)
            v = v - basis @ (basis.conj().T @ v)
            if np.linalg.norm(v) > 1e-8:
                break
        U[:, j] = v / np.linalg.norm(v)
        basis = np.column_stack([basis, U[:, j]])
    s = np.where(big, s, 0.0)
    return U, s, V.conj().T


def dense_to_obb(M):
    """M = U diag(s) V* as 2n - 1 OBB stages (a single stage when M is diagonal)."""
    M = np.asarray(M, dtype=np.complex128)
    n = M.shape[0]
    if M.shape != (n, n) or not is_pow2(n) or n < 2:
        raise DimensionError("expected a square matrix of power-of-two size >= 2")
    I = identity_butterfly(n)
    if is_diagonal(M):
        return ObbChain(n, 1, (ObbStage(I, np.diag(M), I),))
    U, s, Vh = jacobi_svd(M)
    stages = (unitary_to_obb(U, check=False).stages + (ObbStage(I, s, I),)
              + unitary_to_obb(Vh, check=False).stages)
    return ObbChain(n, 1, stages)


def perm_commute(P, d):
    """d' with P diag(d) = diag(d') P."""
    out = np.empty(len(d), dtype=np.complex128)
    out[P.map] = d
    return out


def perm_commute_right(d, P):
    """d'' with diag(d) P = P diag(d'')."""
    return np.asarray(d, dtype=np.complex128)[P.map]


def butterfly_permutation(B, adjoint=False):
    """The Permutation equal to a butterfly built from swap factors (or its adjoint)."""
    n = B.n
    chain = FactorChain(n, tuple(B.adjoint_stages() if adjoint else B.forward_stages()))
    y = chain.apply(np.eye(n))
    mapping = np.argmax(np.abs(y), axis=0)
    P = Permutation(mapping)
    if not np.allclose(y, P.to_dense()):
        raise ValueError("butterfly is not a permutation")
    return P


def _orth_factor(f):
    """Write a factor with at most one nonzero per column as diag(r) O, O blockwise unitary."""
    n, k = f.n, f.k
    a, b, c, d = (np.array(x) for x in f.diagonals)
    shape = a.shape
    r0 = np.zeros(shape, dtype=np.complex128)
    r1 = np.zeros(shape, dtype=np.complex128)
    o = [np.zeros(shape, dtype=np.complex128) for _ in range(4)]
    for idx in np.ndindex(shape):
        rows = [(a[idx], b[idx]), (c[idx], d[idx])]
        if (a[idx] != 0 and c[idx] != 0) or (b[idx] != 0 and d[idx] != 0):
            raise ValueError("factor has two nonzeros in a column")
        out_r, out_o = [0, 0], [None, None]
        for i, (x, y) in enumerate(rows):
            if x != 0 and y != 0:
                rr = np.sqrt(abs(x) ** 2 + abs(y) ** 2)
                out_r[i], out_o[i] = rr, (x / rr, y / rr)
            elif x != 0:
                out_r[i], out_o[i] = x, (1, 0)
            elif y != 0:
                out_r[i], out_o[i] = y, (0, 1)
        if out_o[0] is None and out_o[1] is None:
            out_o = [(1, 0), (0, 1)]
        elif out_o[0] is None or out_o[1] is None:
            i = 0 if out_o[0] is None else 1
            x, y = out_o[1 - i]
            if x == 0 or y == 0:
                out_o[i] = (0, 1) if x != 0 else (1, 0)
            else:
                out_o[i] = (np.conj(y), -np.conj(x))
        r0[idx], r1[idx] = out_r
        (o[0][idx], o[1][idx]), (o[2][idx], o[3][idx]) = out_o
    top, bot = f.pair_indices()
    r = np.zeros(n, dtype=np.complex128)
    r[top], r[bot] = r0, r1
    return r, ButterflyFactorMatrix(n, k, *o)


def orth_hstep_decompose(H):
    """H = diag(d) O for a horizontal step matrix, O a unitary butterfly.

    Works from the smallest factor up: each factor times the diagonal carried from the
    right still has at most one nonzero per column and splits blockwise.
    """
    B = hstep_to_butterfly(H)
    n = B.n
    carry = np.ones(n, dtype=np.complex128)
    out = []
    for f in reversed(B.factors):
        carry, O = _orth_factor(f.scale_cols(carry))
        out.append(O)
    return carry, ButterflyMatrix(n, tuple(reversed(out)))


def orth_vstep_decompose(V):
    """V = O* diag(d) for a vertical step matrix."""
    S = V.sparse if hasattr(V, "sparse") else V
    d, O = orth_hstep_decompose(_adjoint_sparse(S))
    return O, np.conj(d)


def orth_sparse_chunk(S):
    """Four OBB stages (e = 1) for an n x n matrix with at most n nonzeros.

    S = P1 H P2 V P3 becomes L1 D2' B1* . O2 Y* . Z O4* . L5 D4' B5* after moving the
    step diagonals across the neighbouring permutations.
    """
    n = S.n
    P1, H, P2, V, P3 = sparse_decompose_step(S)
    L1, B1 = perm_to_bb_parts(P1)
    d2, O2 = orth_hstep_decompose(H)
    Y, Z = perm_to_bsb_parts(P2)
    O4, d4 = orth_vstep_decompose(V)
    L5, B5 = perm_to_bb_parts(P3)
    d2p = perm_commute(butterfly_permutation(B1, adjoint=True), d2)
    d4p = perm_commute_right(d4, butterfly_permutation(L5))
    one = np.ones(n)
    stages = (_stage_from_parts(L1, d2p, B1), _stage_from_parts(O2, one, Y),
              _stage_from_parts(Z, one, O4), _stage_from_parts(L5, d4p, B5))
    return ObbChain(n, 1, stages)


def _embed_stage(st, N, slot, D, dval):
    """Stage of size D = 4N acting as diag(I, I, st, X) with X = 0 when dval == 0."""
    L, Lbig = log2i(N), log2i(D)

    def embed(factors):
        top = [ButterflyFactorMatrix.identity(D, D >> j) for j in range(Lbig - L)]
        rest = []
        for f in factors:
            parts = [ButterflyFactorMatrix.identity(N, f.k) for _ in range(4)]
            parts[slot] = f
            rest.append(ButterflyFactorMatrix.stack(parts))
        return top + rest

    d = np.ones(D, dtype=np.complex128)
    d[slot * N:(slot + 1) * N] = st.d
    d[3 * N:] = dval
    return ObbStage(tuple(embed(st.o1)), d, tuple(embed(st.o2)))


def _level_factor(D, k, blocks):
    """Factor matrix of block size k from a list of (d1, d2, d3, d4) scalars per block."""
    h = k // 2
    ds = [np.array([[blk[q]] * h for blk in blocks], dtype=np.complex128) for q in range(4)]
    return ButterflyFactorMatrix(D, k, *ds)


def orth_sum(parts):
    """Sum of (OBB)^w_e chains as an (OBB)^{m w}_{4e} chain.

    Each summand E_i becomes sqrt(2) O diag(I, I, E_i, 0) P, with O the normalized
    [[I, I], [I, -I]] factor of block size 4N and P swapping the last two N-blocks.
    The factors sit in the unused block-size-4N and -2N slots; the final summand also
    absorbs the input map that routes x to the second and fourth blocks.
    """
    C0 = parts[0]
    for C in parts[1:]:
        if (C.n, C.e, C.w) != (C0.n, C0.e, C0.w):
            raise DimensionError("summands must share n, e and w")
    N = C0.dim
    D = 4 * N
    s = 1 / np.sqrt(2)
    O = _level_factor(D, D, [(s, s, s, -s)])
    P = _level_factor(D, 2 * N, [(1, 0, 0, 1), (0, 1, 1, 0)])
    Sw = _level_factor(D, 2 * N, [(0, 1, 1, 0), (1, 0, 0, 1)])
    I4, I2 = ButterflyFactorMatrix.identity(D, D), ButterflyFactorMatrix.identity(D, 2 * N)
    stages = []
    for i, C in enumerate(parts):
        last = i == len(parts) - 1
        block = [_embed_stage(st, N, 2, D, 0.0 if j == 0 else 1.0) for j, st in enumerate(C.stages)]
        first = block[0]
        o1 = (O,) + first.o1[1:]
        block[0] = ObbStage(o1, first.d * np.sqrt(2), first.o2)
        end = block[-1]
        if last:
            o2 = (O, Sw) + end.o2[2:]
            block[-1] = ObbStage(end.o1, end.d * np.sqrt(2), o2)
        else:
            block[-1] = ObbStage(end.o1, end.d, (I4, P) + end.o2[2:])
        stages += block
    return ObbChain(C0.n, 4 * C0.e, tuple(stages))


def orth_sparse_to_obb(S):
    """(OBB)^{4 ceil(s/n)} chain with e <= 4 for a sparse matrix; every factor unitary."""
    n0 = S.n
    n = max(2, next_pow2(n0))
    ents = sorted((r, c, v) for r, c, v in S.entries if v != 0)
    chunks = [ents[i:i + n] for i in range(0, len(ents), n)] or [[]]
    parts = [orth_sparse_chunk(SparseMatrix(n, ch)) for ch in chunks]
    C = parts[0] if len(parts) == 1 else orth_sum(parts)
    return ObbChain(C.n, C.e, C.stages, n0)
