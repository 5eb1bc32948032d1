"""kaleido command-line front end.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or parse error.
"""
import argparse
import csv
import json
import sys
import time

import numpy as np

from . import io as kio
from .errors import DimensionError, KaleidoError, ParseError

TRANSFORMS = ("dft", "hadamard", "dct", "dst", "circulant", "toeplitz", "fastfood", "afdf", "dft2d")
REAL_PART = ("dct", "dst")
EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _emit(args, text):
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _require_out(args):
    if not args.out:
        raise UsageError("--out is required for this command")


def transform_params(name, n, seed, kernel=None):
    """Parameters of a parametrized transform: kernel file if given, else seeded Gaussian draws.

    Shared by `transform` and `oracle` so that both sides see the same matrix.
    """
    rng = np.random.default_rng(seed)
    sizes = {"circulant": n, "toeplitz": 2 * n - 1, "fastfood": 3 * n, "afdf": 2 * n}
    if name not in sizes:
        return {}
    if kernel is not None:
        v = np.asarray(kernel)
        if v.size != sizes[name]:
            raise UsageError(f"{name} kernel needs {sizes[name]} entries, got {v.size}")
    else:
        v = rng.standard_normal(sizes[name])
    if name in ("circulant", "toeplitz"):
        return {"kernel": v}
    if name == "afdf":
        return {"a": v[:n], "d": v[n:]}
    return {"s": v[:n], "g": v[n:2 * n], "b": v[2 * n:], "perm": rng.permutation(n)}


def _check_pow2(n):
    if n < 1 or n & (n - 1):
        raise UsageError(f"--n must be a power of two, got {n}")


def build_transform(name, n, seed, kernel=None):
    from . import transforms as tf
    _check_pow2(n)
    p = transform_params(name, n, seed, kernel)
    if name == "dft":
        return tf.dft_kmatrix(n)
    if name == "hadamard":
        return tf.hadamard_kmatrix(n)
    if name == "dct":
        return tf.dct_kmatrix(n)
    if name == "dst":
        return tf.dst_kmatrix(n)
    if name == "circulant":
        return tf.circulant_kmatrix(p["kernel"])
    if name == "toeplitz":
        return tf.toeplitz_kmatrix(p["kernel"])
    if name == "fastfood":
        return tf.fastfood_kmatrix(p["s"], p["g"], tf.Permutation(p["perm"]), p["b"])
    if name == "afdf":
        return tf.afdf_kmatrix(p["a"], p["d"])
    return tf.dft2d_kmatrix(n)


def build_oracle(name, n, seed, kernel=None):
    from . import oracles as orc
    _check_pow2(n)
    p = transform_params(name, n, seed, kernel)
    if name in orc.ORACLES:
        return orc.ORACLES[name](n)
    if name == "circulant":
        return orc.circulant_matrix(p["kernel"])
    if name == "toeplitz":
        return orc.toeplitz_matrix(p["kernel"])
    if name == "fastfood":
        return orc.fastfood_matrix(p["s"], p["g"], p["perm"], p["b"])
    if name == "afdf":
        return orc.afdf_matrix(p["a"], p["d"])
    return orc.dft2d_matrix(n)


def _as_kmatrix(obj):
    return obj.to_kmatrix() if hasattr(obj, "to_kmatrix") else obj


def cmd_transform(args):
    _require_out(args)
    kernel = kio.read_vector(args.kernel) if args.kernel else None
    K = build_transform(args.name, args.n, args.seed, kernel)
    kio.save(K, args.out)
    note = "  (real part gives the transform)" if args.name in REAL_PART else ""
    print(f"{args.name} n={args.n}: w={K.w} e={K.e} -> {args.out}{note}")
    return EXIT_OK


def cmd_oracle(args):
    kernel = kio.read_vector(args.kernel) if args.kernel else None
    M = build_oracle(args.name, args.n, args.seed, kernel)
    if args.out:
        kio.write_dense(args.out, M)
    else:
        for row in M:
            print(" ".join(kio.format_complex(z) for z in row))
    return EXIT_OK


def _certify_decomposition(kind, K, M, n, nnz=None):
    from .kcore import kmatrix_to_dense
    err = float(np.max(np.abs(kmatrix_to_dense(K) - M), initial=0.0))
    if kind == "perm":
        bound_w, bound_e = 1, 1
    elif kind == "sparse":
        dim = K.n
        bound_w, bound_e = 4 * max(1, -(-nnz // dim)), 4
    else:
        bound_w, bound_e = max(1, 2 * K.n - 2), 1
    return {"w": K.w, "e": K.e, "bound_w": bound_w, "bound_e": bound_e, "max_abs_error": err,
            "ok": K.w <= bound_w and K.e <= bound_e}


def cmd_decompose(args):
    from .hierarchy import dense_to_kmatrix_full, perm_to_bb, sparse_to_kmatrix
    from .oracles import permutation_matrix
    _require_out(args)
    nnz = None
    if args.kind == "perm":
        P = kio.read_permutation(args.input)
        K = perm_to_bb(P)
        M = permutation_matrix(P.map)
    elif args.kind == "sparse":
        S = kio.read_sparse(args.input)
        K = sparse_to_kmatrix(S)
        M = S.to_dense()
        nnz = S.nnz
    else:
        M = kio.read_dense(args.input)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise UsageError("dense input must be square")
        K = dense_to_kmatrix_full(M)
    kio.save(K, args.out)
    print(f"{args.kind}: n={K.orig_n} w={K.w} e={K.e} -> {args.out}")
    if args.certify:
        cert = _certify_decomposition(args.kind, K, M, K.orig_n, nnz)
        side = args.out + ".cert.json"
        with open(side, "w") as fh:
            json.dump(cert, fh, indent=2)
            fh.write("\n")
        print(f"certificate -> {side}: " + ", ".join(f"{k}={v}" for k, v in cert.items()))
    return EXIT_OK


def cmd_compile_circuit(args):
    from .circuits import circuit_to_kmatrix
    _require_out(args)
    with open(args.input) as fh:
        C = kio.circuit_from_json(fh.read())
    try:
        K, cert = circuit_to_kmatrix(C, pad=args.pad)
    except DimensionError as exc:
        raise UsageError(str(exc)) from None
    kio.save(K, args.out)
    print(f"circuit size={cert['size']} depth={cert['depth']}: w={K.w} e={K.e} -> {args.out}")
    if args.certify:
        side = args.out + ".cert.json"
        with open(side, "w") as fh:
            json.dump(cert, fh, indent=2)
            fh.write("\n")
        print(f"certificate -> {side}: w={cert['w']} <= {cert['w_bound']}, "
              f"inner={cert['inner_dim']} <= {cert['inner_bound']}, ok={cert['ok']}")
        if not cert["ok"]:
            return EXIT_VERIFY
    return EXIT_OK


def cmd_apply(args):
    from .kcore import kmatrix_matvec
    K = _as_kmatrix(kio.load(args.input))
    v = kio.read_vector(args.vector)
    if v.size != K.orig_n:
        raise UsageError(f"vector has {v.size} entries, factorization expects {K.orig_n}")
    y = kmatrix_matvec(K, v)
    if args.out:
        kio.write_vector(args.out, y)
    else:
        for z in y:
            print(kio.format_complex(z))
    return EXIT_OK


def cmd_verify(args):
    from .kcore import kmatrix_to_dense, param_count
    K = _as_kmatrix(kio.load(args.input))
    R = kio.read_dense(args.reference)
    if R.shape != (K.orig_n, K.orig_n):
        raise UsageError(f"reference is {R.shape}, factorization is {K.orig_n} x {K.orig_n}")
    D = kmatrix_to_dense(K)
    if args.real:
        D = D.real
    diff = D - R
    max_abs = float(np.max(np.abs(diff)))
    ref = float(np.linalg.norm(R))
    rel = float(np.linalg.norm(diff)) / ref if ref > 0 else float(np.linalg.norm(diff))
    ok = rel <= args.tol
    report = (f"max_abs_error {max_abs:.3e}\nrelative_frobenius_error {rel:.3e}\n"
              f"w {K.w}\ne {K.e}\nparams {param_count(K)}\n"
              f"result {'PASS' if ok else 'FAIL'} (tol {args.tol:g})\n")
    _emit(args, report)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_info(args):
    from .kcore import multiply_count, param_count
    obj = kio.load(args.input)
    K = _as_kmatrix(obj)
    kind = "obb" if obj is not K else "kmatrix"
    lines = [f"kind {kind}", f"n {K.orig_n}", f"inner_dim {K.dim}", f"w {K.w}", f"e {K.e}",
             f"stages {len(K.stages)}", f"params {param_count(K)}", f"multiplies {multiply_count(K)}"]
    if K.orig_n != K.n:
        lines.insert(2, f"padded_n {K.n}")
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


def time_ns(fn, reps, warmup=3):
    """Median wall time of fn over reps runs, ignoring the first `warmup` runs."""
    if reps < 11:
        raise UsageError("--reps must be at least 11")
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(np.median(times[warmup:]))


def bench_rows(n_list, width, reps, seed):
    from .kcore import kmatrix_matvec, multiply_count, random_kmatrix
    from .oracles import naive_matvec
    rng = np.random.default_rng(seed)
    rows = []
    for n in n_list:
        _check_pow2(n)
        K = random_kmatrix(n, width, 1, rng)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        tk = time_ns(lambda: kmatrix_matvec(K, x), reps)
        td = time_ns(lambda: naive_matvec(M, x), reps)
        del M
        rows.append({"n": n, "method": "kaleido", "reps": reps, "median_ns": tk,
                     "multiplies": multiply_count(K), "ratio_dense_over_kaleido": ""})
        rows.append({"n": n, "method": "dense", "reps": reps, "median_ns": td,
                     "multiplies": n * n, "ratio_dense_over_kaleido": f"{td / tk:.4f}"})
    return rows


BENCH_FIELDS = ("n", "method", "reps", "median_ns", "multiplies", "ratio_dense_over_kaleido")


def cmd_bench(args):
    try:
        n_list = [int(t) for t in args.n_list.split(",") if t]
    except ValueError:
        raise UsageError(f"bad --n-list {args.n_list!r}") from None
    if args.reps < 11:
        raise UsageError("--reps must be at least 11")
    rows = bench_rows(n_list, args.width, args.reps, args.seed)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        wr = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        wr.writeheader()
        wr.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_recover(args):
    from .learn import LR_GRID, SgdConfig, compare_methods, make_target
    _check_pow2(args.n)
    lr_grid = tuple(float(t) for t in args.lr.split(",")) if args.lr else LR_GRID
    cfg = SgdConfig(width=args.width, steps=args.steps, lr_grid=lr_grid, seed=args.seed,
                    init=args.init, momentum=args.momentum, mode=args.mode, batch=args.batch)
    T = make_target(args.target, args.n, args.seed)
    res = compare_methods(T, cfg)
    rows = [("Low-rank", res["lowrank"]), ("Sparse", res["sparse"]), ("Kaleidoscope (SGD)", res["kaleidoscope_sgd"])]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        wr = csv.writer(fh)
        wr.writerow(["method", args.target])
        for name, err in rows:
            wr.writerow([name, f"{err:.6g}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    print(f"budget {res['budget']} parameters, best lr {res['lr']}, |T|_F {np.linalg.norm(T):.4g}",
          file=sys.stderr)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=argparse.SUPPRESS, help="verification tolerance")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file")

    p = argparse.ArgumentParser(prog="kaleido", description="Build, decompose and check K-matrix factorizations.")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("transform", parents=[common], help="factorize a named fast transform")
    s.add_argument("--name", choices=TRANSFORMS, required=True)
    s.add_argument("--n", type=int, required=True, help="size (image side length for dft2d)")
    s.add_argument("--kernel", help="vector file with the transform's parameters")
    s.set_defaults(fn=cmd_transform)

    s = sub.add_parser("oracle", parents=[common], help="brute-force dense matrix of a transform")
    s.add_argument("name", choices=TRANSFORMS)
    s.add_argument("n", type=int)
    s.add_argument("--kernel")
    s.set_defaults(fn=cmd_oracle)

    s = sub.add_parser("decompose", parents=[common], help="exact factorization of a permutation, sparse or dense matrix")
    s.add_argument("--kind", choices=("perm", "sparse", "dense"), required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--certify", action="store_true")
    s.set_defaults(fn=cmd_decompose)

    s = sub.add_parser("compile-circuit", parents=[common], help="compile a linear circuit")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--certify", action="store_true")
    s.add_argument("--pad", action="store_true", help="square up circuits with unequal inputs and outputs")
    s.set_defaults(fn=cmd_compile_circuit)

    s = sub.add_parser("apply", parents=[common], help="multiply a vector by a factorization")
    s.add_argument("input")
    s.add_argument("vector")
    s.set_defaults(fn=cmd_apply)

    s = sub.add_parser("verify", parents=[common], help="compare a factorization with a dense matrix")
    s.add_argument("input")
    s.add_argument("reference")
    s.add_argument("--real", action="store_true", help="compare only the real part (DCT/DST)")
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("info", parents=[common], help="summarize a factorization file")
    s.add_argument("input")
    s.set_defaults(fn=cmd_info)

    s = sub.add_parser("bench", parents=[common], help="time kaleidoscope vs dense matvec")
    s.add_argument("--n-list", default="512,8192")
    s.add_argument("--width", type=int, default=1)
    s.add_argument("--reps", type=int, default=11)
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("recover", parents=[common], help="fit a target by SGD and compare with baselines")
    s.add_argument("--target", choices=("kaleidoscope", "lowrank", "sparse", "convolution", "fastfood", "random"),
                   required=True)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--width", type=int, default=1)
    s.add_argument("--steps", type=int, default=3000)
    s.add_argument("--lr", help="comma-separated learning-rate grid")
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--init", choices=("random", "gaussian", "identity", "transform"), default="random")
    s.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    s.add_argument("--batch", type=int)
    s.set_defaults(fn=cmd_recover)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"kaleido: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OSError) as exc:
        print(f"kaleido: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DimensionError, KaleidoError, ValueError) as exc:
        print(f"kaleido: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
