"""Butterfly factors, factor chains and K-matrices.

A butterfly factor of size k is a k x k matrix [[D1, D2], [D3, D4]] with
diagonal k/2 x k/2 blocks.  A factor matrix of size n and block size k stacks
n/k of them along the diagonal; its four diagonals are stored as arrays of
shape (n/k, k/2).

A factor chain lists stages in multiplication order (leftmost first).  Each
stage is tagged "F" (apply the stored factor) or "T" (apply its conjugate
transpose).  A valid K-matrix chain parses as (B B*)^w: w repetitions of
F-stages with block sizes dim, dim/2, ..., 2 followed by T-stages with block
sizes 2, 4, ..., dim.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, GrammarError


def is_pow2(n):
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def log2i(n):
    if not is_pow2(n):
        raise DimensionError(f"{n} is not a power of two")
    return int(n).bit_length() - 1


def next_pow2(n):
    if n < 1:
        raise DimensionError(f"size must be positive, got {n}")
    return 1 << (int(n) - 1).bit_length()


def _frozen(a, shape=None):
    a = np.array(a, dtype=np.complex128)
    if shape is not None and a.shape != shape:
        raise DimensionError(f"expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("butterfly diagonals must be finite")
    a.setflags(write=False)
    return a


class OpCounter:
    """Tallies scalar multiplications and additions done by the matvec kernel."""

    def __init__(self):
        self.mults = 0
        self.adds = 0

    def __repr__(self):
        return f"OpCounter(mults={self.mults}, adds={self.adds})"


@dataclass(frozen=True, eq=False)
class ButterflyFactor:
    """A single k x k butterfly factor block."""
    k: int
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    d4: np.ndarray

    def __post_init__(self):
        log2i(self.k)
        if self.k < 2:
            raise DimensionError("butterfly factor needs k >= 2")
        for name in ("d1", "d2", "d3", "d4"):
            object.__setattr__(self, name, _frozen(getattr(self, name), (self.k // 2,)))

    def to_dense(self):
        h = self.k // 2
        out = np.zeros((self.k, self.k), dtype=np.complex128)
        i = np.arange(h)
        out[i, i] = self.d1
        out[i, i + h] = self.d2
        out[i + h, i] = self.d3
        out[i + h, i + h] = self.d4
        return out


@dataclass(frozen=True, eq=False)
class ButterflyFactorMatrix:
    """Block-diagonal stack of n/k butterfly factors of size k."""
    n: int
    k: int
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    d4: np.ndarray

    def __post_init__(self):
        log2i(self.n)
        log2i(self.k)
        if not 2 <= self.k <= self.n:
            raise DimensionError(f"block size {self.k} invalid for n={self.n}")
        shape = (self.n // self.k, self.k // 2)
        for name in ("d1", "d2", "d3", "d4"):
            object.__setattr__(self, name, _frozen(getattr(self, name), shape))

    @classmethod
    def identity(cls, n, k):
        one = np.ones((n // k, k // 2))
        zero = np.zeros((n // k, k // 2))
        return cls(n, k, one, zero, zero, one)

    @classmethod
    def zeros(cls, n, k):
        z = np.zeros((n // k, k // 2))
        return cls(n, k, z, z, z, z)

    @classmethod
    def from_blocks(cls, blocks):
        k = blocks[0].k
        n = k * len(blocks)
        return cls(n, k, *(np.stack([getattr(b, d) for b in blocks]) for d in ("d1", "d2", "d3", "d4")))

    @classmethod
    def stack(cls, parts):
        """Block-diagonal concatenation of factor matrices sharing a block size."""
        k = parts[0].k
        if any(p.k != k for p in parts):
            raise DimensionError("stacked factors must share a block size")
        n = sum(p.n for p in parts)
        return cls(n, k, *(np.concatenate([getattr(p, d) for p in parts]) for d in ("d1", "d2", "d3", "d4")))

    @property
    def diagonals(self):
        return self.d1, self.d2, self.d3, self.d4

    @property
    def blocks(self):
        return [ButterflyFactor(self.k, self.d1[b], self.d2[b], self.d3[b], self.d4[b])
                for b in range(self.n // self.k)]

    def pair_indices(self):
        """Top and bottom global indices of every 2x2 pair, shaped like the diagonals."""
        h = self.k // 2
        top = (np.arange(self.n // self.k) * self.k)[:, None] + np.arange(h)[None, :]
        return top, top + h

    @cached_property
    def _adjoint_diagonals(self):
        return np.conj(self.d1), np.conj(self.d3), np.conj(self.d2), np.conj(self.d4)

    def adjoint(self):
        """The factor G' with G' = G*."""
        return ButterflyFactorMatrix(self.n, self.k, *self._adjoint_diagonals)

    def apply(self, x, adjoint=False, counter=None):
        """y = G x (or G* x).  x has shape (n,) or (n, batch)."""
        n, k = self.n, self.k
        h = k // 2
        x = np.asarray(x)
        if x.ndim == 0 or x.shape[0] != n:
            raise DimensionError(f"factor of size {n} applied to shape {x.shape}")
        tail = x.shape[1:]
        xr = x.reshape((n // k, 2, h) + tail)
        x0, x1 = xr[:, 0], xr[:, 1]
        a, b, c, d = self._adjoint_diagonals if adjoint else self.diagonals
        if tail:
            a, b, c, d = (v.reshape(v.shape + (1,) * len(tail)) for v in (a, b, c, d))
        out = np.empty((n // k, 2, h) + tail, dtype=np.complex128)
        out[:, 0] = a * x0 + b * x1
        out[:, 1] = c * x0 + d * x1
        if counter is not None:
            counter.mults += 4 * x0.size
            counter.adds += 2 * x0.size
        return out.reshape(x.shape)

    def to_dense(self):
        out = np.zeros((self.n, self.n), dtype=np.complex128)
        top, bot = self.pair_indices()
        out[top, top] = self.d1
        out[top, bot] = self.d2
        out[bot, top] = self.d3
        out[bot, bot] = self.d4
        return out

    def scale_rows(self, m):
        """diag(m) @ G."""
        m = np.asarray(m)
        top, bot = self.pair_indices()
        return ButterflyFactorMatrix(self.n, self.k, self.d1 * m[top], self.d2 * m[top],
                                     self.d3 * m[bot], self.d4 * m[bot])

    def scale_cols(self, m):
        """G @ diag(m)."""
        m = np.asarray(m)
        top, bot = self.pair_indices()
        return ButterflyFactorMatrix(self.n, self.k, self.d1 * m[top], self.d2 * m[bot],
                                     self.d3 * m[top], self.d4 * m[bot])


@dataclass(frozen=True, eq=False)
class ButterflyMatrix:
    """B_n B_{n/2} ... B_2, factors stored left to right (block size descending)."""
    n: int
    factors: tuple

    def __post_init__(self):
        L = log2i(self.n)
        fs = tuple(self.factors)
        if len(fs) != L:
            raise DimensionError(f"butterfly matrix of size {self.n} needs {L} factors")
        for j, f in enumerate(fs):
            if f.n != self.n or f.k != self.n >> j:
                raise DimensionError(f"factor {j} has n={f.n}, k={f.k}")
        object.__setattr__(self, "factors", fs)

    @classmethod
    def identity(cls, n):
        return cls(n, tuple(ButterflyFactorMatrix.identity(n, n >> j) for j in range(log2i(n))))

    def forward_stages(self):
        return [Stage("F", f) for f in self.factors]

    def adjoint_stages(self):
        """Stages of B*: stored factors in ascending block size, tagged T."""
        return [Stage("T", f) for f in reversed(self.factors)]

    def apply(self, x):
        for f in reversed(self.factors):
            x = f.apply(x)
        return x

    def to_dense(self):
        return self.apply(np.eye(self.n, dtype=np.complex128))


class Stage(NamedTuple):
    tag: str
    factor: ButterflyFactorMatrix


@dataclass(frozen=True, eq=False)
class FactorChain:
    """Stages in multiplication order, all acting on vectors of length dim."""
    dim: int
    stages: tuple

    def __post_init__(self):
        log2i(self.dim)
        st = tuple(Stage(*s) for s in self.stages)
        for i, s in enumerate(st):
            if s.tag not in ("F", "T"):
                raise GrammarError(i, f"unknown tag {s.tag!r}")
            if s.factor.n != self.dim:
                raise GrammarError(i, f"factor size {s.factor.n} != chain size {self.dim}")
        object.__setattr__(self, "stages", st)

    def __len__(self):
        return len(self.stages)

    def __add__(self, other):
        if other.dim != self.dim:
            raise DimensionError("cannot concatenate chains of different sizes")
        return FactorChain(self.dim, self.stages + other.stages)

    def apply(self, x, counter=None):
        x = np.asarray(x, dtype=np.complex128)
        for s in reversed(self.stages):
            x = s.factor.apply(x, adjoint=(s.tag == "T"), counter=counter)
        return x

    def apply_adjoint(self, x):
        x = np.asarray(x, dtype=np.complex128)
        for s in self.stages:
            x = s.factor.apply(x, adjoint=(s.tag == "F"))
        return x

    def to_dense(self):
        return _dense_columns(self.apply, self.dim, self.dim)

    def with_stage(self, index, stage):
        st = list(self.stages)
        st[index] = Stage(*stage)
        return FactorChain(self.dim, tuple(st))


def _threads():
    try:
        return max(1, int(os.environ.get("KALEIDO_THREADS", "1")))
    except ValueError:
        return 1


def _dense_columns(apply, dim, ncols):
    """Stack apply(e_j) for j < ncols, optionally spread over KALEIDO_THREADS workers."""
    eye = np.eye(dim, ncols, dtype=np.complex128)
    nt = min(_threads(), ncols)
    if nt <= 1:
        return apply(eye)
    bounds = np.linspace(0, ncols, nt + 1).astype(int)
    with ThreadPoolExecutor(nt) as ex:
        parts = ex.map(lambda ab: apply(np.ascontiguousarray(eye[:, ab[0]:ab[1]])),
                       zip(bounds[:-1], bounds[1:]))
        return np.concatenate(list(parts), axis=1)


def validate_chain(chain, n=None):
    """Parse chain as (B B*)^w and return (w, e).

    n is the logical size; it defaults to chain.dim (e = 1).
    """
    dim = chain.dim
    L = log2i(dim)
    if L == 0:
        raise GrammarError(0, "chain size must be at least 2")
    expected = [("F", dim >> j) for j in range(L)] + [("T", 2 << j) for j in range(L)]
    for i, s in enumerate(chain.stages):
        tag, k = expected[i % (2 * L)]
        if s.tag != tag or s.factor.k != k:
            raise GrammarError(i, f"expected {tag} with block size {k}, got {s.tag} with block size {s.factor.k}")
    if len(chain.stages) == 0 or len(chain.stages) % (2 * L):
        raise GrammarError(len(chain.stages), "chain ends inside a B B* block")
    w = len(chain.stages) // (2 * L)
    if n is None:
        return w, 1
    if not is_pow2(n) or dim % n:
        raise DimensionError(f"logical size {n} does not divide chain size {dim}")
    return w, dim // n


@dataclass(frozen=True, eq=False)
class KMatrix:
    """S E S^T where E is a (B B*)^w chain of size e*n and S keeps the first n coordinates.

    orig_n, when smaller than n, records the size before zero-padding; matvec and
    densification then act on vectors of length orig_n.
    """
    n: int
    e: int
    chain: FactorChain
    orig_n: int = None
    w: int = field(init=False)

    def __post_init__(self):
        log2i(self.n)
        log2i(self.e)
        if self.chain.dim != self.n * self.e:
            raise DimensionError(f"chain size {self.chain.dim} != e*n = {self.e * self.n}")
        w, _ = validate_chain(self.chain, self.n)
        object.__setattr__(self, "w", w)
        if self.orig_n is None:
            object.__setattr__(self, "orig_n", self.n)
        elif not 1 <= self.orig_n <= self.n:
            raise DimensionError(f"orig_n={self.orig_n} must lie in [1, {self.n}]")

    @property
    def dim(self):
        return self.chain.dim

    @property
    def stages(self):
        return self.chain.stages


def kmatrix_matvec(K, x, counter=None):
    """K x for x of length K.orig_n (or shape (orig_n, batch))."""
    x = np.asarray(x, dtype=np.complex128)
    if x.shape[0] != K.orig_n:
        raise DimensionError(f"vector length {x.shape[0]} != {K.orig_n}")
    z = np.zeros((K.dim,) + x.shape[1:], dtype=np.complex128)
    z[:K.orig_n] = x
    return K.chain.apply(z, counter=counter)[:K.orig_n]


def kmatrix_rmatvec(K, y):
    """K* y."""
    y = np.asarray(y, dtype=np.complex128)
    z = np.zeros((K.dim,) + y.shape[1:], dtype=np.complex128)
    z[:K.orig_n] = y
    return K.chain.apply_adjoint(z)[:K.orig_n]


def kmatrix_to_dense(K):
    return _dense_columns(lambda X: kmatrix_matvec(K, X[:K.orig_n]), K.orig_n, K.orig_n)


def param_count(K, complex_params=False):
    """4 w (e n) log2(e n) entries; doubled when counting real and imaginary parts."""
    total = sum(4 * s.factor.d1.size for s in K.stages)
    return 2 * total if complex_params else total


def multiply_count(K):
    """Scalar multiplications per matvec: 2 (e n) per factor."""
    return sum(2 * s.factor.n for s in K.stages)


def identity_chain(dim, w=1):
    L = log2i(dim)
    one = [Stage("F", ButterflyFactorMatrix.identity(dim, dim >> j)) for j in range(L)]
    two = [Stage("T", ButterflyFactorMatrix.identity(dim, 2 << j)) for j in range(L)]
    return FactorChain(dim, tuple((one + two) * w))


def zero_chain(dim, w=1):
    c = identity_chain(dim, w)
    return c.with_stage(0, ("F", ButterflyFactorMatrix.zeros(dim, dim)))


def identity_kmatrix(n, e=1, w=1):
    return KMatrix(n, e, identity_chain(n * e, w))


def widen(K):
    """Append an identity B B* block: same matrix, width w + 1."""
    return KMatrix(K.n, K.e, K.chain + identity_chain(K.dim), K.orig_n)


def stage_scale_rows(stage, m):
    """Stage equal to diag(m) @ (applied stage)."""
    tag, f = stage
    if tag == "F":
        return Stage("F", f.scale_rows(m))
    return Stage("T", f.scale_cols(np.conj(m)))


def stage_scale_cols(stage, m):
    """Stage equal to (applied stage) @ diag(m)."""
    tag, f = stage
    if tag == "F":
        return Stage("F", f.scale_cols(m))
    return Stage("T", f.scale_rows(np.conj(m)))


def fold_left_diag(chain, m):
    """Chain for diag(m) @ chain, absorbed into the leftmost factor."""
    return chain.with_stage(0, stage_scale_rows(chain.stages[0], m))


def fold_right_diag(chain, m):
    """Chain for chain @ diag(m), absorbed into the rightmost factor."""
    return chain.with_stage(-1, stage_scale_cols(chain.stages[-1], m))


def chain_segments(chain):
    """Split a (B B*)^w chain into its 2w segments, each a list of factors in stored order."""
    L = log2i(chain.dim)
    st = chain.stages
    return [[s.factor for s in st[i:i + L]] for i in range(0, len(st), L)]


def block_diag_chains(chains):
    """(B B*)^w chain for diag(E_1, ..., E_m); all E_i share size and width, m a power of two.

    The factors of block size <= dim(E_i) are stacked; the larger block sizes of the
    combined chain are left as identities.
    """
    m = len(chains)
    log2i(m)
    N = chains[0].dim
    if any(c.dim != N for c in chains):
        raise DimensionError("block-diagonal parts must share a size")
    widths = {validate_chain(c)[0] for c in chains}
    if len(widths) != 1:
        raise DimensionError("block-diagonal parts must share a width")
    w = widths.pop()
    dim = m * N
    Lbig, L = log2i(dim), log2i(N)
    segs = [chain_segments(c) for c in chains]
    stages = []
    for b in range(w):
        fwd = segs[0][2 * b]
        stages += [Stage("F", ButterflyFactorMatrix.identity(dim, dim >> j)) for j in range(Lbig - L)]
        stages += [Stage("F", ButterflyFactorMatrix.stack([s[2 * b][j] for s in segs])) for j in range(len(fwd))]
        stages += [Stage("T", ButterflyFactorMatrix.stack([s[2 * b + 1][j] for s in segs])) for j in range(L)]
        stages += [Stage("T", ButterflyFactorMatrix.identity(dim, N << (j + 1))) for j in range(Lbig - L)]
    return FactorChain(dim, tuple(stages))


class Permutation:
    """Permutation matrix P with P[map[j], j] = 1, so (P x)[map[j]] = x[j]."""

    def __init__(self, mapping):
        m = np.asarray(mapping, dtype=np.int64).copy()
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(m.size)):
            raise ValueError("not a permutation")
        m.setflags(write=False)
        self.map = m

    @property
    def n(self):
        return self.map.size

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    def to_dense(self):
        out = np.zeros((self.n, self.n))
        out[self.map, np.arange(self.n)] = 1.0
        return out

    def apply(self, x):
        x = np.asarray(x)
        y = np.empty_like(x)
        y[self.map] = x
        return y

    def inverse(self):
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.n)
        return Permutation(inv)

    def __matmul__(self, other):
        return Permutation(self.map[other.map])

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.map, other.map)

    def __repr__(self):
        return f"Permutation({self.map.tolist()})"


def random_chain(dim, w, rng, complex_=True, scale=None):
    """(B B*)^w chain with Gaussian diagonals; the default scale keeps E[E^T E] = I."""
    L = log2i(dim)
    sd = np.sqrt(0.5) if scale is None else scale
    stages = []
    for _ in range(w):
        for tag, ks in (("F", [dim >> j for j in range(L)]), ("T", [2 << j for j in range(L)])):
            for k in ks:
                shape = (4, dim // k, k // 2)
                d = rng.standard_normal(shape)
                if complex_:
                    d = (d + 1j * rng.standard_normal(shape)) / np.sqrt(2)
                stages.append(Stage(tag, ButterflyFactorMatrix(dim, k, *(sd * d))))
    return FactorChain(dim, tuple(stages))


def random_unitary_chain(dim, w, rng, complex_=True):
    """(B B*)^w chain whose 2x2 blocks are Haar-ish random rotations (unitary when complex)."""
    L = log2i(dim)
    stages = []
    for _ in range(w):
        for tag, ks in (("F", [dim >> j for j in range(L)]), ("T", [2 << j for j in range(L)])):
            for k in ks:
                shape = (dim // k, k // 2)
                th = rng.uniform(0, 2 * np.pi, shape)
                c, s = np.cos(th), np.sin(th)
                if complex_:
                    a, b, g = np.exp(1j * rng.uniform(0, 2 * np.pi, (3,) + shape))
                    d = (c * a, s * b, -s * a * g, c * b * g)
                else:
                    d = (c, s, -s, c)
                stages.append(Stage(tag, ButterflyFactorMatrix(dim, k, *d)))
    return FactorChain(dim, tuple(stages))


def random_kmatrix(n, w=1, e=1, rng=None, complex_=True, scale=None):
    rng = np.random.default_rng(rng)
    return KMatrix(n, e, random_chain(n * e, w, rng, complex_, scale))
