"""Arithmetic circuits with gates a*g_i + b*g_j, and their compilation to K-matrices.

Gates are evaluated in order; the first n_inputs gates read the input vector.  Layer
k holds the gates whose longest path from an input has length k.  Compilation works
on the vector of all gate values, padded to a frame of 2 s' coordinates (s' the next
power of two >= the gate count): layer k is one sparse matrix that keeps the gates
already known and fills in the layer-k gates.  A final permutation brings the
outputs to the front.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .hierarchy import SparseMatrix, perm_to_bb, perm_to_bb_parts, sparse_chunk_kmatrix
from .kcore import FactorChain, KMatrix, Permutation, fold_left_diag, next_pow2


@dataclass(frozen=True)
class Gate:
    op: str
    a: complex = 0.0
    s1: int = 0
    b: complex = 0.0
    s2: int = 0


class LinearCircuit:
    def __init__(self, n_inputs, gates, outputs):
        if n_inputs < 1:
            raise ValueError("circuit needs at least one input")
        gates = [g if isinstance(g, Gate) else Gate(*g) for g in gates]
        for i, g in enumerate(gates):
            if i < n_inputs:
                if g.op != "in":
                    raise ValueError(f"gate {i} must be an input")
            elif g.op != "comb":
                raise ValueError(f"gate {i}: inputs must come first")
            elif not (0 <= g.s1 < i and 0 <= g.s2 < i):
                raise ValueError(f"gate {i} reads a gate that is not earlier")
        if len(gates) < n_inputs:
            raise ValueError("fewer gates than inputs")
        outputs = [int(o) for o in outputs]
        if not outputs:
            raise ValueError("circuit has no outputs")
        if any(not 0 <= o < len(gates) for o in outputs):
            raise ValueError("output refers to a missing gate")
        if len(set(outputs)) != len(outputs):
            raise ValueError("duplicate output gate; add an explicit copy gate")
        self.n_inputs = n_inputs
        self.gates = gates
        self.outputs = outputs

    @property
    def size(self):
        return len(self.gates)

    def layers(self):
        lay = []
        for i, g in enumerate(self.gates):
            lay.append(0 if g.op == "in" else 1 + max(lay[g.s1], lay[g.s2]))
        return lay

    @property
    def depth(self):
        return max(self.layers())

    def evaluate(self, x):
        x = np.asarray(x)
        vals = [None] * self.size
        for i, g in enumerate(self.gates):
            vals[i] = x[i] if g.op == "in" else g.a * vals[g.s1] + g.b * vals[g.s2]
        return np.array([vals[o] for o in self.outputs])

    def to_dense(self):
        """Matrix of the circuit, by evaluating every gate on the identity."""
        return self.evaluate(np.eye(self.n_inputs, dtype=np.complex128))


def circuit_eval(C, v):
    return C.evaluate(v)


def circuit_depth_size(C):
    """(size including inputs, depth)."""
    return C.size, C.depth


def pad_circuit(C):
    """Square a circuit: extra inputs (shifting later gates) or extra all-zero outputs."""
    n_in, n_out = C.n_inputs, len(C.outputs)
    n = max(n_in, n_out)
    shift = n - n_in
    remap = lambda i: i if i < n_in else i + shift
    gates = [Gate("in")] * n
    for g in C.gates[n_in:]:
        gates.append(Gate("comb", g.a, remap(g.s1), g.b, remap(g.s2)))
    outputs = [remap(o) for o in C.outputs]
    for _ in range(n - n_out):
        gates.append(Gate("comb", 0.0, 0, 0.0, 0))
        outputs.append(len(gates) - 1)
    return LinearCircuit(n, gates, outputs)


def layer_matrices(C):
    """Relabel gates by layer and build the layer matrices.

    Returns (order, frame, mats): order[i] is the new index of gate i and mats[k-1] the
    sparse frame x frame matrix of layer k.
    """
    lay = C.layers()
    d = max(lay)
    s = C.size
    frame = 2 * max(2, next_pow2(s))
    n = C.n_inputs
    ranked = sorted(range(n, s), key=lambda i: (lay[i], i))
    order = np.empty(s, dtype=np.int64)
    order[:n] = np.arange(n)
    order[ranked] = np.arange(n, s)
    z = n
    mats = []
    for k in range(1, d + 1):
        ents = [(i, i, 1.0) for i in range(z)]
        members = [g for g in ranked if lay[g] == k]
        for g in members:
            gate = C.gates[g]
            row = int(order[g])
            c1, c2 = int(order[gate.s1]), int(order[gate.s2])
            if c1 == c2:
                ents.append((row, c1, gate.a + gate.b))
            else:
                ents.append((row, c1, gate.a))
                ents.append((row, c2, gate.b))
        mats.append(SparseMatrix(frame, [(r, c, v) for r, c, v in ents if v != 0]))
        z += len(members)
    return order, frame, mats


def _output_perm(C, order, frame):
    dest = [int(order[o]) for o in C.outputs]
    rest = sorted(set(range(frame)) - set(dest))
    mapping = np.empty(frame, dtype=np.int64)
    mapping[dest + rest] = np.arange(frame)
    return Permutation(mapping)


def _prepare(C, pad):
    if len(C.outputs) != C.n_inputs:
        if not pad:
            raise DimensionError(f"circuit maps {C.n_inputs} inputs to {len(C.outputs)} outputs; pass pad=True")
        C = pad_circuit(C)
    return C


def circuit_to_kmatrix(C, pad=False):
    """Compile a circuit to a K-matrix.  Returns (K, certificate).

    Each layer matrix has at most 2 s' nonzeros in a 2 s' frame and becomes a width-four
    K-matrix; the output permutation adds one more, so w <= 4 d + 1 and the inner size is
    2 s'.  The certificate also reports the looser bounds w <= 8 d + 2 and inner size
    <= 8 s'.
    """
    C = _prepare(C, pad)
    order, frame, mats = layer_matrices(C)
    n = C.n_inputs
    nl = max(2, next_pow2(n))
    mask = np.zeros(frame)
    mask[:n] = 1
    chain = fold_left_diag(perm_to_bb(_output_perm(C, order, frame)).chain, mask)
    for M in reversed(mats):
        chain = chain + sparse_chunk_kmatrix(M).chain
    K = KMatrix(nl, frame // nl, chain, n)
    return K, certificate(C, K)


def certificate(C, K):
    d = C.depth
    sp = next_pow2(C.size)
    return {
        "size": C.size, "depth": d, "s_prime": sp,
        "w": K.w, "e": K.e, "inner_dim": K.dim,
        "w_bound": 8 * d + 2, "inner_bound": 8 * sp,
        "ok": K.w <= 8 * d + 2 and K.dim <= 8 * sp,
    }


def circuit_to_obb(C, pad=False):
    """Same construction with unitary butterflies: every layer is an (OBB)^4 chain."""
    from .ortho import ObbChain, ObbStage, butterfly_permutation, orth_sparse_chunk, perm_commute_right
    C = _prepare(C, pad)
    order, frame, mats = layer_matrices(C)
    n = C.n_inputs
    nl = max(2, next_pow2(n))
    L, B = perm_to_bb_parts(_output_perm(C, order, frame))
    mask = np.zeros(frame)
    mask[:n] = 1
    # diag(mask) L = L diag(mask'), so the mask sits between the two butterflies
    stages = [ObbStage(L.factors, perm_commute_right(mask, butterfly_permutation(L)), B.factors)]
    for M in reversed(mats):
        stages += list(orth_sparse_chunk(M).stages)
    return ObbChain(nl, frame // nl, tuple(stages), n)


def dense_to_circuit(M):
    """Row-by-row balanced addition trees; depth ceil(log2 n) (plus one when n = 1)."""
    M = np.asarray(M)
    n = M.shape[0]
    if M.shape != (n, n):
        raise DimensionError("matrix must be square")
    gates = [Gate("in")] * n
    outputs = []
    for i in range(n):
        level = []
        for j in range(0, n - 1, 2):
            gates.append(Gate("comb", M[i, j], j, M[i, j + 1], j + 1))
            level.append(len(gates) - 1)
        if n % 2:
            gates.append(Gate("comb", M[i, n - 1], n - 1, 0.0, n - 1))
            level.append(len(gates) - 1)
        while len(level) > 1:
            nxt = []
            for a, b in zip(level[0::2], level[1::2]):
                gates.append(Gate("comb", 1.0, a, 1.0, b))
                nxt.append(len(gates) - 1)
            if len(level) % 2:
                nxt.append(level[-1])
            level = nxt
        outputs.append(level[0])
    return LinearCircuit(n, gates, outputs)


def fft4_circuit():
    """Radix-2 circuit for the 4-point DFT (omega = -i): two layers of four gates."""
    g = [Gate("in")] * 4
    g += [Gate("comb", 1, 0, 1, 2), Gate("comb", 1, 0, -1, 2),
          Gate("comb", 1, 1, 1, 3), Gate("comb", 1, 1, -1, 3)]
    g += [Gate("comb", 1, 4, 1, 6), Gate("comb", 1, 4, -1, 6),
          Gate("comb", 1, 5, -1j, 7), Gate("comb", 1, 5, 1j, 7)]
    return LinearCircuit(4, g, [8, 10, 9, 11])


def random_circuit(n, depth, rng, width=None, complex_=False):
    """Random circuit of exactly the given depth; every layer reads the previous one."""
    rng = np.random.default_rng(rng)
    width = n if width is None else width
    gates = [Gate("in")] * n
    prev = list(range(n))
    for _ in range(depth):
        cur = []
        avail = len(gates)
        for _ in range(width):
            s1 = int(rng.choice(prev))
            s2 = int(rng.integers(avail))
            a, b = rng.standard_normal(2)
            if complex_:
                a, b = a + 1j * rng.standard_normal(), b + 1j * rng.standard_normal()
            gates.append(Gate("comb", a, s1, b, s2))
            cur.append(len(gates) - 1)
        prev = cur
    outputs = list(rng.choice(len(gates), size=n, replace=False))
    return LinearCircuit(n, gates, outputs)
