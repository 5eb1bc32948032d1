"""Text formats: factorization JSON, circuits, sparse COO, dense matrices, vectors.

Floats are written with 17 significant digits so that a write/read cycle
reproduces every entry bit for bit.
"""
import json
import math

import numpy as np

from .errors import KaleidoError, ParseError
from .kcore import ButterflyFactorMatrix, FactorChain, KMatrix, Permutation, Stage

FORMAT_VERSION = 1


def _num(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    s = format(x, ".17g")
    return s


def _dumps(obj, indent=0):
    """JSON writer that controls float formatting."""
    if isinstance(obj, dict):
        pad = " " * (indent + 1)
        items = [f"{pad}{json.dumps(str(k))}: {_dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + " " * indent + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_dumps(v, indent) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return _num(obj)


def _cplx_list(a):
    a = np.asarray(a, dtype=np.complex128).ravel()
    return [[float(z.real), float(z.imag)] for z in a]


def _factor_record(f, tag):
    blocks = [{d: _cplx_list(getattr(f, d)[b]) for d in ("d1", "d2", "d3", "d4")}
              for b in range(f.n // f.k)]
    return {"tag": tag, "n": f.n, "k": f.k, "blocks": blocks}


def _req(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(where, f"missing field {key!r}")
    return obj[key]


def _int(obj, key, where):
    v = _req(obj, key, where)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{where}.{key}", f"expected integer, got {v!r}")
    return v


def _cplx_array(v, length, where):
    if not isinstance(v, list) or len(v) != length:
        raise ParseError(where, f"expected list of {length} [re, im] pairs")
    out = np.empty(length, dtype=np.complex128)
    for i, p in enumerate(v):
        if (not isinstance(p, list) or len(p) != 2
                or not all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in p)):
            raise ParseError(f"{where}[{i}]", f"expected [re, im], got {p!r}")
        out[i] = complex(p[0], p[1])
    return out


def _parse_factor(rec, where):
    n = _int(rec, "n", where)
    k = _int(rec, "k", where)
    blocks = _req(rec, "blocks", where)
    if not isinstance(blocks, list):
        raise ParseError(f"{where}.blocks", "expected list")
    if k < 2 or n % k or len(blocks) != n // k:
        raise ParseError(f"{where}.blocks", f"expected {n // max(k, 1)} blocks for n={n}, k={k}")
    ds = {d: np.empty((n // k, k // 2), dtype=np.complex128) for d in ("d1", "d2", "d3", "d4")}
    for b, blk in enumerate(blocks):
        for d in ds:
            ds[d][b] = _cplx_array(_req(blk, d, f"{where}.blocks[{b}]"), k // 2, f"{where}.blocks[{b}].{d}")
    try:
        return ButterflyFactorMatrix(n, k, ds["d1"], ds["d2"], ds["d3"], ds["d4"])
    except KaleidoError as exc:
        raise ParseError(where, str(exc)) from None


def kmatrix_to_json(K):
    rec = {"version": FORMAT_VERSION, "kind": "kmatrix", "n": K.n, "e": K.e, "w": K.w}
    if K.orig_n != K.n:
        rec["orig_n"] = K.orig_n
    rec["stages"] = [_factor_record(s.factor, s.tag) for s in K.stages]
    return _dumps(rec) + "\n"


def obb_to_json(C):
    rec = {"version": FORMAT_VERSION, "kind": "obb", "n": C.n, "e": C.e, "w": C.w}
    if C.orig_n != C.n:
        rec["orig_n"] = C.orig_n
    rec["stages"] = [{"tag": "obb",
                      "o1": [_factor_record(f, "F") for f in st.o1],
                      "d": _cplx_list(st.d),
                      "o2": [_factor_record(f, "F") for f in st.o2]} for st in C.stages]
    return _dumps(rec) + "\n"


def to_json(obj):
    from .ortho import ObbChain
    return obb_to_json(obj) if isinstance(obj, ObbChain) else kmatrix_to_json(obj)


def from_json(text):
    """Parse a K-matrix or OBB chain; malformed input raises ParseError with a location."""
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if not isinstance(rec, dict):
        raise ParseError("$", "top level must be an object")
    version = _int(rec, "version", "$")
    if version != FORMAT_VERSION:
        raise ParseError("$.version", f"unsupported version {version}")
    n = _int(rec, "n", "$")
    e = _int(rec, "e", "$")
    w = _int(rec, "w", "$")
    orig_n = rec.get("orig_n", n)
    stages = _req(rec, "stages", "$")
    if not isinstance(stages, list):
        raise ParseError("$.stages", "expected list")
    kind = rec.get("kind", "kmatrix")
    try:
        if kind == "obb":
            from .ortho import ObbChain, ObbStage
            out = []
            for i, st in enumerate(stages):
                where = f"$.stages[{i}]"
                if _req(st, "tag", where) != "obb":
                    raise ParseError(f"{where}.tag", "expected 'obb'")
                o1 = [_parse_factor(f, f"{where}.o1[{j}]") for j, f in enumerate(_req(st, "o1", where))]
                o2 = [_parse_factor(f, f"{where}.o2[{j}]") for j, f in enumerate(_req(st, "o2", where))]
                d = _cplx_array(_req(st, "d", where), n * e, f"{where}.d")
                out.append(ObbStage(tuple(o1), d, tuple(o2)))
            C = ObbChain(n, e, tuple(out), orig_n)
        else:
            out = []
            for i, st in enumerate(stages):
                where = f"$.stages[{i}]"
                tag = _req(st, "tag", where)
                if tag not in ("F", "T"):
                    raise ParseError(f"{where}.tag", f"expected 'F' or 'T', got {tag!r}")
                out.append(Stage(tag, _parse_factor(st, where)))
            C = KMatrix(n, e, FactorChain(n * e, tuple(out)), orig_n)
    except ParseError:
        raise
    except KaleidoError as exc:
        raise ParseError("$.stages", str(exc)) from None
    if C.w != w:
        raise ParseError("$.w", f"declared width {w} but stages give {C.w}")
    return C


def save(obj, path):
    with open(path, "w") as fh:
        fh.write(to_json(obj))


def load(path):
    with open(path) as fh:
        return from_json(fh.read())


def _parse_scalar(tok, where):
    try:
        return complex(tok.replace("i", "j")) if ("j" in tok or "i" in tok) else complex(float(tok))
    except ValueError:
        raise ParseError(where, f"cannot parse number {tok!r}") from None


def format_complex(z):
    z = complex(z)
    if z.imag == 0:
        return _num(z.real)
    return f"{_num(z.real)}{'+' if z.imag >= 0 or math.isnan(z.imag) else '-'}{_num(abs(z.imag))}j"


def read_dense(path):
    """Whitespace-separated rows; complex entries as re+imj."""
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            toks = line.split()
            if not toks or toks[0].startswith("#"):
                continue
            rows.append([_parse_scalar(t, f"{path}:{ln}") for t in toks])
    if not rows:
        raise ParseError(path, "empty matrix")
    if any(len(r) != len(rows[0]) for r in rows):
        raise ParseError(path, "ragged rows")
    M = np.array(rows, dtype=np.complex128)
    return M.real.copy() if not np.any(M.imag) else M


def write_dense(path, M):
    M = np.asarray(M)
    with open(path, "w") as fh:
        for row in M:
            fh.write(" ".join(format_complex(z) for z in row) + "\n")


def read_vector(path):
    vals = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            t = line.strip()
            if not t or t.startswith("#"):
                continue
            vals.append(_parse_scalar(t, f"{path}:{ln}"))
    v = np.array(vals, dtype=np.complex128)
    return v.real.copy() if not np.any(v.imag) else v


def write_vector(path, v):
    with open(path, "w") as fh:
        for z in np.asarray(v).ravel():
            fh.write(format_complex(z) + "\n")


def read_sparse(path):
    """First line 'n s', then s lines 'row col re [im]'."""
    from .hierarchy import SparseMatrix
    with open(path) as fh:
        lines = [(ln, l.split()) for ln, l in enumerate(fh, 1) if l.strip() and not l.lstrip().startswith("#")]
    if not lines:
        raise ParseError(path, "empty file")
    ln, head = lines[0]
    try:
        n, s = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise ParseError(f"{path}:{ln}", "header must be 'n s'") from None
    if len(lines) - 1 != s:
        raise ParseError(path, f"header declares {s} entries, found {len(lines) - 1}")
    entries = []
    for ln, toks in lines[1:]:
        if len(toks) not in (3, 4):
            raise ParseError(f"{path}:{ln}", "expected 'row col re [im]'")
        try:
            r, c = int(toks[0]), int(toks[1])
            v = complex(float(toks[2]), float(toks[3]) if len(toks) == 4 else 0.0)
        except ValueError:
            raise ParseError(f"{path}:{ln}", "bad entry") from None
        entries.append((r, c, v))
    try:
        return SparseMatrix(n, entries)
    except ValueError as exc:
        raise ParseError(path, str(exc)) from None


def write_sparse(path, S):
    with open(path, "w") as fh:
        fh.write(f"{S.n} {len(S.entries)}\n")
        for r, c, v in S.entries:
            v = complex(v)
            fh.write(f"{r} {c} {_num(v.real)} {_num(v.imag)}\n")


def read_permutation(path):
    with open(path) as fh:
        toks = [t for line in fh for t in line.split()]
    try:
        return Permutation([int(t) for t in toks])
    except ValueError as exc:
        raise ParseError(path, str(exc)) from None


def circuit_to_json(C):
    gates = []
    for g in C.gates:
        if g.op == "in":
            gates.append({"op": "in"})
        else:
            gates.append({"op": "comb", "a": [complex(g.a).real, complex(g.a).imag], "s1": g.s1,
                          "b": [complex(g.b).real, complex(g.b).imag], "s2": g.s2})
    return _dumps({"n_inputs": C.n_inputs, "gates": gates, "outputs": list(C.outputs)}) + "\n"


def circuit_from_json(text):
    from .circuits import Gate, LinearCircuit
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    n_in = _int(rec, "n_inputs", "$")
    gates = []
    for i, g in enumerate(_req(rec, "gates", "$")):
        where = f"$.gates[{i}]"
        op = _req(g, "op", where)
        if op == "in":
            gates.append(Gate("in"))
        elif op == "comb":
            a = _cplx_array([_req(g, "a", where)], 1, f"{where}.a")[0]
            b = _cplx_array([_req(g, "b", where)], 1, f"{where}.b")[0]
            gates.append(Gate("comb", a, _int(g, "s1", where), b, _int(g, "s2", where)))
        else:
            raise ParseError(f"{where}.op", f"unknown op {op!r}")
    outputs = _req(rec, "outputs", "$")
    if not isinstance(outputs, list) or not all(isinstance(o, int) for o in outputs):
        raise ParseError("$.outputs", "expected list of gate indices")
    try:
        return LinearCircuit(n_in, gates, outputs)
    except ValueError as exc:
        raise ParseError("$", str(exc)) from None
