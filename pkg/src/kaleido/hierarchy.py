"""Expressing permutations, step and sparse matrices as K-matrices, and the closure
constructions (product, sum, block-diagonal, Kronecker, inverse)."""
import numpy as np

from .errors import DimensionError, SingularFactor, StepConditionError
from .kcore import (ButterflyFactorMatrix, ButterflyMatrix, FactorChain, KMatrix, Permutation, Stage,
                    block_diag_chains, chain_segments, fold_left_diag, identity_chain, is_pow2, log2i,
                    next_pow2, stage_scale_cols, stage_scale_rows, validate_chain, zero_chain)

SINGULAR_TOL = 1e-12


def bit_reversal_perm(n):
    L = log2i(n)
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(L):
        rev |= ((idx >> b) & 1) << (L - 1 - b)
    return Permutation(rev)


class SparseMatrix:
    """n x n matrix given by (row, col, value) triples with distinct coordinates."""

    def __init__(self, n, entries):
        self.n = int(n)
        ents = [(int(r), int(c), complex(v)) for r, c, v in entries]
        seen = set()
        for r, c, _ in ents:
            if not (0 <= r < self.n and 0 <= c < self.n):
                raise ValueError(f"entry ({r}, {c}) outside a {self.n} x {self.n} matrix")
            if (r, c) in seen:
                raise ValueError(f"duplicate entry at ({r}, {c})")
            seen.add((r, c))
        self.entries = ents

    @classmethod
    def from_dense(cls, M):
        M = np.asarray(M)
        r, c = np.nonzero(M)
        return cls(M.shape[0], list(zip(r, c, M[r, c])))

    @property
    def nnz(self):
        return len(self.entries)

    def to_dense(self):
        out = np.zeros((self.n, self.n), dtype=np.complex128)
        for r, c, v in self.entries:
            out[r, c] = v
        return out

    def padded(self, n):
        return SparseMatrix(n, self.entries)


def _factor_from_flags(n, k, flags):
    f = np.asarray(flags, dtype=float)
    return ButterflyFactorMatrix(n, k, 1 - f, f, f, 1 - f)


def balance_condition(mapping, k):
    """Every chunk of k consecutive columns hits each row residue mod k exactly once."""
    m = np.asarray(mapping)
    res = (m % k).reshape(-1, k)
    return bool(np.all(np.sort(res, axis=1) == np.arange(k)))


def is_modular_balanced(mapping):
    n = len(mapping)
    return all(balance_condition(mapping, 1 << j) for j in range(1, log2i(n) + 1))


def _orient_cycles(a, b, half):
    """Orient the multigraph with edges a[i] -> b[i] on nodes [0, half) so that every node
    has in- and out-degree one.  Returns flags marking the reversed edges.

    Each cycle is walked from its lowest node, always leaving along the lowest-index
    unused incident edge.
    """
    inc = [[] for _ in range(half)]
    for i in range(half):
        inc[a[i]].append(i)
        inc[b[i]].append(i)
    used = np.zeros(half, dtype=bool)
    flags = np.zeros(half, dtype=bool)
    for start in range(half):
        u = start
        while True:
            e = next((i for i in inc[u] if not used[i]), None)
            if e is None:
                break
            used[e] = True
            if a[e] == u:
                u = b[e]
            else:
                flags[e] = True
                u = a[e]
    return flags


def balance_permutation(P):
    """Find swap factors B_n, ..., B_2 with P B_n ... B_2 = L modular-balanced.

    Returns (L mapping, list of swap flag arrays for block sizes n, n/2, ..., 2).
    """
    n = P.n
    L = log2i(n)
    m = P.map.copy()
    swaps = []
    for j in range(L):
        k = n >> j
        half = k // 2
        flags = np.zeros((n // k, half))
        for c in range(n // k):
            base = c * k
            left = m[base:base + half]
            right = m[base + half:base + k]
            f = _orient_cycles(left % half, right % half, half)
            flags[c] = f
            tmp = left[f].copy()
            left[f] = right[f]
            right[f] = tmp
        swaps.append(flags)
    return m, swaps


def balanced_to_butterfly(mapping):
    """Butterfly matrix (a product of swap factors) equal to a modular-balanced permutation."""
    m = np.array(mapping, dtype=np.int64)
    n = m.size
    if not is_modular_balanced(m):
        raise ValueError("permutation is not modular-balanced")
    j = np.arange(n)
    factors = []
    for lev in range(log2i(n)):
        k = n >> lev
        half = k // 2
        base = (j // k) * k
        r = m - base
        t = r % half
        left = (j - base) < half
        flags = np.zeros((n // k, half))
        flags[(j // k)[left], t[left]] = r[left] >= half
        factors.append(_factor_from_flags(n, k, flags))
        m = base + t + half * (~left)
    return ButterflyMatrix(n, tuple(factors))


def perm_to_bb_parts(P):
    """(L, B) butterfly matrices with P = L B*; both are products of swap factors."""
    if P.n < 2:
        raise DimensionError("permutation size must be at least 2")
    Lmap, swaps = balance_permutation(P)
    n = P.n
    Lb = balanced_to_butterfly(Lmap)
    B = ButterflyMatrix(n, tuple(_factor_from_flags(n, n >> j, f) for j, f in enumerate(swaps)))
    return Lb, B


def perm_to_bb(P):
    """Width-one K-matrix equal to the permutation P."""
    Lb, B = perm_to_bb_parts(P)
    return KMatrix(P.n, 1, FactorChain(P.n, tuple(Lb.forward_stages() + B.adjoint_stages())))


def conjugate_by_bitreversal(M1):
    """M2 with M1* = P_br M2 P_br.

    Conjugating a block-size-k factor by the bit reversal gives a factor of block size
    2n/k; the 2x2 pair (p, p + k/2) lands on (br(p), br(p) + n/k).
    """
    n = M1.n
    br = bit_reversal_perm(n).map
    out = []
    for f in reversed(M1.factors):
        K2 = 2 * n // f.k
        top, _ = f.pair_indices()
        p2 = br[top]
        b2, i2 = p2 // K2, p2 % K2
        ds = [np.zeros((n // K2, K2 // 2), dtype=np.complex128) for _ in range(4)]
        for dst, src in zip(ds, (f.d1, f.d3, f.d2, f.d4)):
            dst[b2, i2] = np.conj(src)
        out.append(ButterflyFactorMatrix(n, K2, *ds))
    return ButterflyMatrix(n, tuple(out))


def perm_to_bsb_parts(P):
    """(Y, Z) butterfly matrices with P = Y* Z.

    Conjugating P by the bit reversal and factoring the result as L R* gives
    P = (P_br L P_br)(P_br R* P_br), and both brackets switch between B and B*.
    """
    n = P.n
    br = bit_reversal_perm(n).map
    Lt, Bt = perm_to_bb_parts(Permutation(br[P.map[br]]))
    return conjugate_by_bitreversal(Lt), conjugate_by_bitreversal(Bt)


def perm_to_bsb(P):
    """Chain of the form B* B (transposed segment first) equal to P."""
    Y, Z = perm_to_bsb_parts(P)
    return FactorChain(P.n, tuple(Y.adjoint_stages() + Z.forward_stages()))


class StepMatrix:
    """A horizontal ('h') or vertical ('v') step matrix."""

    def __init__(self, n, kind, entries):
        if kind not in ("h", "v"):
            raise ValueError("kind must be 'h' or 'v'")
        self.n = n
        self.kind = kind
        self.sparse = entries if isinstance(entries, SparseMatrix) else SparseMatrix(n, entries)
        if kind == "h":
            check_hstep(self.sparse)
        else:
            check_hstep(_adjoint_sparse(self.sparse))

    def to_dense(self):
        return self.sparse.to_dense()


def _adjoint_sparse(S):
    return SparseMatrix(S.n, [(c, r, np.conj(v)) for r, c, v in S.entries])


def check_hstep(S):
    """Raise StepConditionError unless S has at most one nonzero per column and every pair
    of nonzeros (i, j), (i', j') with j < j' satisfies j' - j >= (i' - i) mod n."""
    n = S.n
    ents = [(r, c) for r, c, v in S.entries if v != 0]
    if not ents:
        return
    rows = np.array([r for r, _ in ents])
    cols = np.array([c for _, c in ents])
    order = np.argsort(cols, kind="stable")
    rows, cols = rows[order], cols[order]
    dup = np.nonzero(np.diff(cols) == 0)[0]
    if dup.size:
        c = int(cols[dup[0]])
        raise StepConditionError((c, c), "more than one nonzero in a column")
    dj = cols[None, :] - cols[:, None]
    di = (rows[None, :] - rows[:, None]) % n
    bad = np.argwhere(np.triu(dj < di, 1))
    if bad.size:
        a, b = bad[0]
        raise StepConditionError((int(cols[a]), int(cols[b])),
                                 f"column gap {int(dj[a, b])} < row gap {int(di[a, b])} (mod {n})")


def is_hstep(S):
    try:
        check_hstep(S)
    except StepConditionError:
        return False
    return True


def random_hstep(n, rng, density=0.5, complex_=False):
    """Random horizontal step matrix.

    Nonzero columns are drawn at random; each next row moves down (mod n) by at most
    the column gap, so every pair satisfies the step inequality.
    """
    rng = np.random.default_rng(rng)
    cols = np.sort(rng.choice(n, size=rng.binomial(n, density), replace=False))
    ents = []
    row = int(rng.integers(n))
    for t, c in enumerate(cols):
        if t:
            row = (row + int(rng.integers(0, c - cols[t - 1] + 1))) % n
        v = rng.standard_normal() + (1j * rng.standard_normal() if complex_ else 0)
        ents.append((row, int(c), v if v != 0 else 1.0))
    return StepMatrix(n, "h", ents)


def hstep_to_butterfly(H):
    """Butterfly matrix equal to a horizontal step matrix.

    At each level the matrix is block diagonal with k x k blocks [[H11, H12], [H21, H22]];
    it factors as [[D1, D2], [D3, D4]] diag(H11 + H21, H12 + H22) where each D marks the
    rows of the corresponding quadrant that carry a nonzero.  At k = 2 the blocks are
    taken as they are.
    """
    S = H.sparse if isinstance(H, StepMatrix) else H
    check_hstep(S)
    n = S.n
    L = log2i(n)
    if L == 0:
        raise DimensionError("step matrix size must be at least 2")
    ents = [(r, c, v) for r, c, v in S.entries if v != 0]
    rows = np.array([e[0] for e in ents], dtype=np.int64)
    cols = np.array([e[1] for e in ents], dtype=np.int64)
    vals = np.array([e[2] for e in ents], dtype=np.complex128)
    factors = []
    for lev in range(L):
        k = n >> lev
        half = k // 2
        chunk = cols // k
        base = chunk * k
        rl, cl = rows - base, cols - base
        if np.any((rl < 0) | (rl >= k)):
            raise AssertionError("step recursion left its diagonal block")
        t = rl % half
        rhi, chi = rl >= half, cl >= half
        ds = [np.zeros((n // k, half), dtype=np.complex128) for _ in range(4)]
        payload = vals if k == 2 else np.ones_like(vals)
        for q, (rb, cb) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            sel = (rhi == rb) & (chi == cb)
            ds[q][chunk[sel], t[sel]] = payload[sel]
        # ds order: d1 = H11 rows, d2 = H12 rows, d3 = H21 rows, d4 = H22 rows
        factors.append(ButterflyFactorMatrix(n, k, ds[0], ds[1], ds[2], ds[3]))
        rows = base + t + half * chi
    return ButterflyMatrix(n, tuple(factors))


def vstep_to_butterfly_star(V):
    """Butterfly matrix B with V = B* for a vertical step matrix V."""
    S = V.sparse if isinstance(V, StepMatrix) else V
    return hstep_to_butterfly(_adjoint_sparse(S))


def sparse_decompose_step(S):
    """S = P1 H P2 V P3 for an n x n matrix with at most n nonzeros.

    P1 sends the nonzero rows (in order) to the top, P3 does the same for columns.
    The nonzeros of the compacted matrix are taken in row-major order; H places the
    k-th value in its row and V routes column j_k to slot k, with V's rows sorted by
    column so that V is a vertical step matrix.
    """
    n = S.n
    ents = [(r, c, v) for r, c, v in S.entries if v != 0]
    if len(ents) > n:
        raise ValueError(f"{len(ents)} nonzeros exceed n={n}")
    nzr = sorted({r for r, _, _ in ents})
    nzc = sorted({c for _, c, _ in ents})
    zr, zc = set(nzr), set(nzc)
    row_order = nzr + [r for r in range(n) if r not in zr]
    col_order = nzc + [c for c in range(n) if c not in zc]
    rpos = {r: i for i, r in enumerate(nzr)}
    cpos = {c: j for j, c in enumerate(nzc)}
    P1 = Permutation(row_order)
    P3 = Permutation(col_order).inverse()
    theta = sorted((rpos[r], cpos[c], v) for r, c, v in ents)
    H = StepMatrix(n, "h", [(i, k, v) for k, (i, _, v) in enumerate(theta)])
    jk = np.array([j for _, j, _ in theta], dtype=np.int64)
    sigma = np.argsort(jk, kind="stable")
    P2 = Permutation(np.concatenate([sigma, np.arange(len(theta), n)]).astype(np.int64))
    V = StepMatrix(n, "v", [(m, int(jk[sigma[m]]), 1.0) for m in range(len(theta))])
    return P1, H, P2, V, P3


def sparse_chunk_kmatrix(S):
    """Width-four, e = 1 K-matrix for an n x n matrix with at most n nonzeros (n a power of two)."""
    P1, H, P2, V, P3 = sparse_decompose_step(S)
    n = S.n
    Hb = hstep_to_butterfly(H)
    Vb = vstep_to_butterfly_star(V)
    stages = (perm_to_bb(P1).chain.stages
              + tuple(Hb.forward_stages())
              + perm_to_bsb(P2).stages
              + tuple(Vb.adjoint_stages())
              + perm_to_bb(P3).chain.stages)
    return KMatrix(n, 1, FactorChain(n, stages))


def sparse_to_kmatrix(S):
    """K-matrix for a sparse matrix: width 4 ceil(s/n) and e <= 4.

    Sizes that are not powers of two are zero-padded; the result records the original size.
    Entries are split into row-major chunks of at most n nonzeros, one width-four
    K-matrix per chunk, and the chunks are summed.
    """
    n0 = S.n
    n = max(2, next_pow2(n0))
    ents = sorted((r, c, v) for r, c, v in S.entries if v != 0)
    chunks = [ents[i:i + n] for i in range(0, len(ents), n)] or [[]]
    parts = [sparse_chunk_kmatrix(SparseMatrix(n, ch)) for ch in chunks]
    K = parts[0] if len(parts) == 1 else k_sum(parts)
    return KMatrix(K.n, K.e, K.chain, n0)


def _same_shape(A, B):
    if A.n != B.n or A.e != B.e:
        raise DimensionError(f"shape mismatch: (n={A.n}, e={A.e}) vs (n={B.n}, e={B.e})")


def k_product(A, B):
    """A B as a K-matrix of width w_A + w_B.

    The projector onto the first n coordinates between the two chains is a diagonal and
    is folded into B's leftmost factor.
    """
    _same_shape(A, B)
    chain_b = B.chain
    if A.e > 1:
        mask = np.zeros(A.dim)
        mask[:A.n] = 1
        chain_b = fold_left_diag(chain_b, mask)
    return KMatrix(A.n, A.e, A.chain + chain_b, A.orig_n if A.orig_n == B.orig_n else A.n)


def butterfly_inverse(M):
    """B* segment (a chain of T stages) equal to M^-1 for a butterfly matrix M."""
    n = M.n
    stages = []
    for j in reversed(range(len(M.factors))):
        f = M.factors[j]
        det = f.d1 * f.d4 - f.d2 * f.d3
        bad = np.argwhere(np.abs(det) <= SINGULAR_TOL)
        if bad.size:
            b, i = bad[0]
            raise SingularFactor(j, (int(b), int(i)), complex(det[b, i]))
        # inverse of [[a, b], [c, d]] is [[d, -b], [-c, a]] / det; store its conjugate transpose
        inv = (f.d4 / det, -f.d2 / det, -f.d3 / det, f.d1 / det)
        g = ButterflyFactorMatrix(n, f.k, np.conj(inv[0]), np.conj(inv[2]), np.conj(inv[1]), np.conj(inv[3]))
        stages.append(Stage("T", g))
    return FactorChain(n, tuple(stages))


def k_block_diag(parts):
    """diag(A_1, ..., A_m) for K-matrices sharing n, e and w; m a power of two.

    Width w when e = 1, else w + 2 (a permutation on each side gathers the leading
    n coordinates of every block).
    """
    m = len(parts)
    if not is_pow2(m):
        raise DimensionError(f"number of blocks {m} must be a power of two")
    A0 = parts[0]
    for A in parts[1:]:
        _same_shape(A0, A)
        if A.w != A0.w:
            raise DimensionError("block-diagonal parts must share a width")
    k, e, N = A0.n, A0.e, A0.dim
    core = block_diag_chains([A.chain for A in parts])
    if e == 1:
        return KMatrix(m * k, 1, core)
    src = [i * N + r for i in range(m) for r in range(k)]
    rest = sorted(set(range(m * N)) - set(src))
    mapping = np.empty(m * N, dtype=np.int64)
    mapping[src + rest] = np.arange(m * N)
    P = Permutation(mapping)
    chain = perm_to_bb(P).chain + core + perm_to_bb(P.inverse()).chain
    return KMatrix(m * k, e, chain)


def _sum_part(E, last):
    """(B B*)^w chain of size 4N for [[I, E, 0, 0], [0, I, 0, 0], 0, 0] (or, for the last
    summand, the same matrix times the swap of the first two N-blocks)."""
    N = E.dim
    w = E.w
    D = 4 * N
    core = block_diag_chains([identity_chain(N, w), identity_chain(N, w), E.chain, zero_chain(N, w)])
    half = np.ones((2, D // 4))
    zero = np.zeros((2, D // 4))
    # leftmost factor: [[I_2N, I_2N], [0, 0]]
    core = core.with_stage(0, ("F", ButterflyFactorMatrix(D, D, half.reshape(1, -1), half.reshape(1, -1),
                                                          zero.reshape(1, -1), zero.reshape(1, -1))))
    # T stage of block size 2N applies diag(I, swap) (or diag(swap, I) for the last summand)
    one_b, zero_b = np.ones(N), np.zeros(N)
    if last:
        sw = ButterflyFactorMatrix(D, 2 * N, np.stack([zero_b, one_b]), np.stack([one_b, zero_b]),
                                   np.stack([one_b, zero_b]), np.stack([zero_b, one_b]))
    else:
        sw = ButterflyFactorMatrix(D, 2 * N, np.stack([one_b, zero_b]), np.stack([zero_b, one_b]),
                                   np.stack([zero_b, one_b]), np.stack([one_b, zero_b]))
    core = core.with_stage(-2, ("T", sw))
    # rightmost T stage applies R = [[I_2N, 0], [I_2N, 0]]; stored as R*
    core = core.with_stage(-1, ("T", ButterflyFactorMatrix(D, D, half.reshape(1, -1), half.reshape(1, -1),
                                                           zero.reshape(1, -1), zero.reshape(1, -1))))
    return core


def k_sum(parts):
    """A_1 + ... + A_m for K-matrices sharing n, e and w: width m w, expansion 4 e."""
    A0 = parts[0]
    for A in parts[1:]:
        _same_shape(A0, A)
        if A.w != A0.w:
            raise DimensionError("summands must share a width")
    chain = None
    for i, A in enumerate(parts):
        c = _sum_part(A, last=(i == len(parts) - 1))
        chain = c if chain is None else chain + c
    return KMatrix(A0.n, 4 * A0.e, chain)


def commutation_perm(na, nb):
    """Pi with A kron I_nb = Pi (I_nb kron A) Pi^T (row-major vectorization)."""
    j, i = np.divmod(np.arange(na * nb), na)
    return Permutation(i * nb + j)


def _extend(P, dim):
    return Permutation(np.concatenate([P.map, np.arange(P.n, dim)]))


def k_kronecker(A, B):
    """A kron B = Pi (I kron A) Pi^T (I kron B); width <= w_A + w_B + 6."""
    if A.e != B.e:
        raise DimensionError(f"expansion mismatch: {A.e} vs {B.e}")
    e = A.e
    na, nb = A.n, B.n
    Pi = commutation_perm(na, nb)
    dim = e * na * nb
    PiK = KMatrix(na * nb, e, perm_to_bb(_extend(Pi, dim)).chain)
    PiTK = KMatrix(na * nb, e, perm_to_bb(_extend(Pi.inverse(), dim)).chain)
    left = k_block_diag([A] * nb)
    right = k_block_diag([B] * na)
    return k_product(k_product(k_product(PiK, left), PiTK), right)


def dense_to_kmatrix_full(M):
    """Any n x n matrix as a K-matrix of width at most 2n - 2 (width 1 if M is diagonal).

    Built from the SVD: the left and right unitary factors contribute n - 1 Householder
    stages each and the singular values are folded into the first right-hand stage.
    """
    from .ortho import dense_to_obb, is_diagonal
    M = np.asarray(M, dtype=np.complex128)
    n0 = M.shape[0]
    if M.ndim != 2 or M.shape[1] != n0:
        raise DimensionError("matrix must be square")
    n = max(2, next_pow2(n0))
    Mp = np.zeros((n, n), dtype=np.complex128)
    Mp[:n0, :n0] = M
    if is_diagonal(Mp):
        chain = fold_left_diag(identity_chain(n), np.diag(Mp))
        return KMatrix(n, 1, chain, n0)
    obb = dense_to_obb(Mp)
    stages = list(obb.stages)
    nu = n - 1
    U, sig, V = stages[:nu], stages[nu], stages[nu + 1:]
    chain = None
    for i, st in enumerate(U + V):
        c = st.to_chain()
        if i == nu:
            c = fold_left_diag(c, sig.d)
        chain = c if chain is None else chain + c
    return KMatrix(n, 1, chain, n0)


__all__ = [
    "SparseMatrix", "StepMatrix", "bit_reversal_perm", "random_hstep", "balance_condition", "is_modular_balanced",
    "balance_permutation", "balanced_to_butterfly", "perm_to_bb", "perm_to_bb_parts", "perm_to_bsb", "perm_to_bsb_parts",
    "conjugate_by_bitreversal", "check_hstep", "is_hstep", "hstep_to_butterfly", "vstep_to_butterfly_star",
    "sparse_decompose_step", "sparse_chunk_kmatrix", "sparse_to_kmatrix", "k_product", "butterfly_inverse",
    "k_block_diag", "k_sum", "k_kronecker", "commutation_perm", "dense_to_kmatrix_full",
    "stage_scale_cols", "stage_scale_rows", "validate_chain", "chain_segments",
]
