"""Fitting K-matrices by gradient descent, with low-rank and sparse baselines.

Gradients follow the real and imaginary parts of every diagonal entry.  For a
parameter z = a + ib the gradient is returned as the complex number
dL/da + i dL/db.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DimensionError
from .kcore import (ButterflyFactorMatrix, FactorChain, KMatrix, Permutation, Stage, kmatrix_matvec,
                    kmatrix_to_dense, log2i, param_count, random_chain, random_unitary_chain)

LR_GRID = (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 0.5)


def _stage_apply(stage, x):
    return stage.factor.apply(x, adjoint=(stage.tag == "T"))


def _stage_pullback(stage, u):
    return stage.factor.apply(u, adjoint=(stage.tag == "F"))


def _stage_grad(stage, x, u):
    """Gradient of Re<u, stage(x)> with respect to the stage's four diagonals."""
    f = stage.factor
    n, k = f.n, f.k
    h = k // 2
    tail = x.shape[1:]
    xr = x.reshape((n // k, 2, h) + tail)
    ur = u.reshape((n // k, 2, h) + tail)
    x0, x1, u0, u1 = xr[:, 0], xr[:, 1], ur[:, 0], ur[:, 1]
    axes = tuple(range(2, 2 + len(tail)))
    s = (lambda a: a.sum(axis=axes)) if tail else (lambda a: a)
    if stage.tag == "F":
        g = (s(u0 * np.conj(x0)), s(u0 * np.conj(x1)), s(u1 * np.conj(x0)), s(u1 * np.conj(x1)))
    else:
        g = (s(np.conj(u0) * x0), s(np.conj(u1) * x0), s(np.conj(u0) * x1), s(np.conj(u1) * x1))
    return np.stack(g)


def matvec_backward(K, x, upstream, complex_params=True, per_stage=False):
    """Gradients of Re<upstream, K x> (inner product conjugate in its first slot).

    Returns (parameter gradient, gradient with respect to x).  The parameter gradient
    is a flat real vector in the layout of flatten_params, or with per_stage=True a
    list of complex arrays of shape (4, n/k, k/2).  Only the input of each B or B* segment is kept from the forward pass; the
    activations inside a segment are recomputed while walking back through it.
    """
    x = np.asarray(x, dtype=np.complex128)
    up = np.asarray(upstream, dtype=np.complex128)
    if x.shape[0] != K.orig_n or up.shape[0] != K.orig_n or x.shape[1:] != up.shape[1:]:
        raise DimensionError(f"expected inputs of length {K.orig_n}, got {x.shape} and {up.shape}")
    st = K.stages
    L = log2i(K.dim)
    nseg = len(st) // L
    z = np.zeros((K.dim,) + x.shape[1:], dtype=np.complex128)
    z[:K.orig_n] = x
    ckpt = {}
    for seg in reversed(range(nseg)):
        ckpt[seg] = z
        for i in reversed(range(seg * L, (seg + 1) * L)):
            z = _stage_apply(st[i], z)
    u = np.zeros((K.dim,) + up.shape[1:], dtype=np.complex128)
    u[:K.orig_n] = up
    grads = [None] * len(st)
    for seg in range(nseg):
        acts = []
        z = ckpt.pop(seg)
        for i in reversed(range(seg * L, (seg + 1) * L)):
            acts.append((i, z))
            z = _stage_apply(st[i], z)
        for i, zin in reversed(acts):
            grads[i] = _stage_grad(st[i], zin, u)
            u = _stage_pullback(st[i], u)
    if not per_stage:
        grads = flatten_grads(grads, complex_params)
    return grads, u[:K.orig_n]


def flatten_params(K, complex_params=True):
    parts = []
    for s in K.stages:
        d = np.stack(s.factor.diagonals).ravel()
        parts.append(d.real)
        if complex_params:
            parts.append(d.imag)
    return np.concatenate(parts)


def flatten_grads(grads, complex_params=True):
    parts = []
    for g in grads:
        parts.append(g.ravel().real)
        if complex_params:
            parts.append(g.ravel().imag)
    return np.concatenate(parts)


def unflatten_params(K, theta, complex_params=True):
    """K-matrix with the same layout as K and diagonals read from theta."""
    stages = []
    pos = 0
    for s in K.stages:
        size = 4 * s.factor.d1.size
        d = theta[pos:pos + size]
        pos += size
        if complex_params:
            d = d + 1j * theta[pos:pos + size]
            pos += size
        d = d.reshape((4,) + s.factor.d1.shape)
        stages.append(Stage(s.tag, ButterflyFactorMatrix(s.factor.n, s.factor.k, *d)))
    if pos != theta.size:
        raise ValueError("parameter vector has the wrong length")
    return KMatrix(K.n, K.e, FactorChain(K.dim, tuple(stages)), K.orig_n)


def frobenius_loss_grad(K, T, mode="exact", batch=None, rng=None, squared=False,
                        complex_params=True, per_stage=False):
    """Loss ||dense(K) - T||_F (or half its square) and its parameter gradient.

    mode="exact" pushes every basis vector through the chain; mode="sampled" uses a
    random subset of `batch` columns and rescales the gradient to stay unbiased for
    the squared loss.
    """
    T = np.asarray(T)
    n = K.orig_n
    if T.shape != (n, n):
        raise DimensionError(f"target is {T.shape}, K-matrix is {n} x {n}")
    if mode == "exact":
        cols = np.arange(n)
        scale = 1.0
    elif mode == "sampled":
        rng = np.random.default_rng(rng)
        cols = np.sort(rng.choice(n, size=batch, replace=False))
        scale = n / batch
    else:
        raise ValueError(f"unknown mode {mode!r}")
    X = np.zeros((n, cols.size), dtype=np.complex128)
    X[cols, np.arange(cols.size)] = 1
    R = kmatrix_matvec(K, X) - T[:, cols]
    sq = scale * float(np.vdot(R, R).real)
    if squared:
        up, loss = scale * R, 0.5 * sq
    else:
        loss = np.sqrt(sq)
        up = scale * R / loss if loss > 0 else np.zeros_like(R)
    grads, _ = matvec_backward(K, X, up, complex_params, per_stage)
    return loss, grads


def relative_error(A, T):
    return float(np.linalg.norm(A - T) / np.linalg.norm(T))


@dataclass
class SgdConfig:
    width: int = 1
    expansion: int = 1
    steps: int = 3000
    lr_grid: tuple = LR_GRID
    momentum: float = 0.9
    seed: int = 0
    init: str = "random"
    complex_params: bool = True
    mode: str = "exact"
    batch: int = None
    clip: float = 10.0


@dataclass
class RecoverResult:
    K: KMatrix
    error: float
    rel_error: float
    lr: float
    history: list = field(default_factory=list)

    @property
    def flagged(self):
        """True when the loss history ends above where it started."""
        return len(self.history) > 1 and self.history[-1] > self.history[0]


def init_kmatrix(n, cfg, rng):
    if cfg.init == "random":
        chain = random_unitary_chain(n * cfg.expansion, cfg.width, rng, complex_=cfg.complex_params)
        return KMatrix(n, cfg.expansion, chain)
    if cfg.init == "gaussian":
        chain = random_chain(n * cfg.expansion, cfg.width, rng, complex_=cfg.complex_params)
        return KMatrix(n, cfg.expansion, chain)
    if cfg.init == "transform":
        # circulant structure (conjugate DFT butterfly, diagonal, inverse) with a random kernel
        from .transforms import circulant_kmatrix
        if cfg.width != 1 or cfg.expansion != 1:
            raise ValueError("transform init needs width 1 and expansion 1")
        return circulant_kmatrix(rng.standard_normal(n) / np.sqrt(n))
    if cfg.init == "identity":
        from .kcore import identity_chain
        return KMatrix(n, cfg.expansion, identity_chain(n * cfg.expansion, cfg.width))
    raise ValueError(f"unknown init {cfg.init!r}")


def sgd_fit(T, K0, lr, cfg):
    """Minimize half the squared Frobenius error from K0 with SGD (plus momentum).

    Returns (None, history) if the loss or the parameters stop being finite.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    theta = flatten_params(K0, cfg.complex_params)
    vel = np.zeros_like(theta)
    best = (np.inf, theta.copy())
    history = []
    for step in range(cfg.steps):
        K = unflatten_params(K0, theta, cfg.complex_params)
        loss, g = frobenius_loss_grad(K, T, cfg.mode, cfg.batch, rng, squared=True,
                                      complex_params=cfg.complex_params)
        if not np.isfinite(loss):
            history.append(np.inf)
            return None, history
        if loss < best[0]:
            best = (loss, theta.copy())
        if step % 100 == 0:
            history.append(loss)
        gn = np.linalg.norm(g)
        if cfg.clip and gn > cfg.clip:
            g = g * (cfg.clip / gn)
        vel = cfg.momentum * vel + g
        theta = theta - lr * vel
        if not np.all(np.isfinite(theta)):
            # a diverged run is dropped from the grid
            history.append(np.inf)
            return None, history
    K = unflatten_params(K0, theta, cfg.complex_params)
    final = np.linalg.norm(kmatrix_to_dense(K) - T)
    if np.isfinite(final) and final ** 2 / 2 <= best[0]:
        return K, history
    return unflatten_params(K0, best[1], cfg.complex_params), history


def sgd_recover(T, cfg=None, init=None):
    """Fit a K-matrix to T, trying every learning rate in the grid; keep the best."""
    cfg = cfg or SgdConfig()
    if cfg.steps <= 0:
        raise ValueError("step budget must be positive")
    T = np.asarray(T)
    n = T.shape[0]
    rng = np.random.default_rng(cfg.seed)
    K0 = init if init is not None else init_kmatrix(n, cfg, rng)
    best = None
    for lr in cfg.lr_grid:
        K, hist = sgd_fit(T, K0, lr, cfg)
        if K is None:
            continue
        err = float(np.linalg.norm(kmatrix_to_dense(K) - T))
        if not np.isfinite(err):
            continue
        if best is None or err < best.error:
            best = RecoverResult(K, err, err / np.linalg.norm(T), lr, hist)
    if best is None:
        raise ConvergenceError("every learning rate in the grid diverged")
    return best


def lowrank_best_approx(T, budget):
    """Best rank-r approximation with r = floor(budget / 2n) (truncated SVD)."""
    T = np.asarray(T)
    n = T.shape[0]
    r = min(n, budget // (2 * n))
    U, s, Vh = np.linalg.svd(T)
    return (U[:, :r] * s[:r]) @ Vh[:r], float(np.sqrt(np.sum(s[r:] ** 2)))


def sparse_best_approx(T, budget):
    """Keep the `budget` largest-magnitude entries; ties go to the smaller (row, col)."""
    T = np.asarray(T)
    n, m = T.shape
    mags = np.abs(T).ravel()
    order = np.lexsort((np.arange(n * m), -mags))
    keep = order[:min(budget, n * m)]
    out = np.zeros_like(T)
    out.flat[keep] = T.flat[keep]
    return out, float(np.linalg.norm(T - out))


class DoublyStochasticButterfly:
    """Butterfly whose 2x2 blocks are [[a, 1-a], [1-a, a]], a in [0, 1].

    params[j] has shape (n/k, k/2) for the factor of block size k = n >> j.
    Sampling keeps a pair in place with probability a and swaps it otherwise.
    """

    def __init__(self, n, params=None, rng=None):
        self.n = n
        L = log2i(n)
        if params is None:
            rng = np.random.default_rng(rng)
            params = [rng.uniform(size=(n // (n >> j), (n >> j) // 2)) for j in range(L)]
        self.params = [np.clip(np.asarray(p, dtype=float), 0, 1) for p in params]

    def project(self):
        self.params = [np.clip(p, 0, 1) for p in self.params]
        return self

    def factors(self):
        return [ButterflyFactorMatrix(self.n, self.n >> j, p, 1 - p, 1 - p, p) for j, p in enumerate(self.params)]

    def to_dense(self):
        out = np.eye(self.n)
        for f in self.factors():
            out = out @ f.to_dense().real
        return out

    def sample_swaps(self, rng):
        return [rng.uniform(size=p.shape) >= p for p in self.params]

    def sample(self, rng):
        """A permutation drawn from the product of the sampled swap factors."""
        P = Permutation.identity(self.n)
        for j, sw in enumerate(self.sample_swaps(rng)):
            k = self.n >> j
            h = k // 2
            top = (np.arange(self.n // k) * k)[:, None] + np.arange(h)[None, :]
            m = np.arange(self.n)
            t, b = top[sw], top[sw] + h
            m[t], m[b] = b, t
            P = P @ Permutation(m)
        return P


def ds_project(ds):
    return ds.project()


def ds_sample_permutation(ds, rng):
    return ds.sample(np.random.default_rng(rng))


def tv_smoothness_loss(img):
    """Sum over pixels of ||(x[i+1, j] - x[i, j], x[i, j+1] - x[i, j])||_2, where a
    difference that would leave the image is dropped."""
    x = np.asarray(img, dtype=float)
    dv = np.zeros_like(x)
    dh = np.zeros_like(x)
    dv[:-1, :] = x[1:, :] - x[:-1, :]
    dh[:, :-1] = x[:, 1:] - x[:, :-1]
    return float(np.sqrt(dv ** 2 + dh ** 2).sum())


TARGETS = ("kaleidoscope", "lowrank", "sparse", "convolution", "fastfood", "random")


def make_target(kind, n, rng):
    """Random n x n target of the given class, scaled so that E[T^T T] = I."""
    rng = np.random.default_rng(rng)
    if kind == "kaleidoscope":
        return kmatrix_to_dense(KMatrix(n, 1, random_chain(n, 1, rng, complex_=False))).real
    if kind == "lowrank":
        r = 2
        G = rng.standard_normal((n, r)) / np.sqrt(n)
        H = rng.standard_normal((n, r)) / np.sqrt(r)
        return G @ H.T
    if kind == "sparse":
        s = 4 * n
        T = np.zeros((n, n))
        cells = rng.choice(n * n, size=s, replace=False)
        T.flat[cells] = rng.standard_normal(s) / 2.0
        return T
    if kind == "convolution":
        c = rng.standard_normal(n) / np.sqrt(n)
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return c[(i - j) % n]
    if kind == "fastfood":
        from .oracles import fastfood_matrix
        s, g, b = rng.standard_normal((3, n))
        return fastfood_matrix(s, g, rng.permutation(n), b) / n
    if kind == "random":
        return rng.standard_normal((n, n)) / np.sqrt(n)
    raise ValueError(f"unknown target class {kind!r}")


def compare_methods(T, cfg=None, init=None):
    """Final Frobenius errors of SGD K-matrix, low-rank and sparse at equal parameter budget."""
    cfg = cfg or SgdConfig()
    n = T.shape[0]
    res = sgd_recover(T, cfg, init)
    budget = param_count(res.K)
    _, lr_err = lowrank_best_approx(T, budget)
    _, sp_err = sparse_best_approx(T, budget)
    return {
        "kaleidoscope_sgd": res.error,
        "lowrank": lr_err,
        "sparse": sp_err,
        "budget": budget,
        "lr": res.lr,
    }
