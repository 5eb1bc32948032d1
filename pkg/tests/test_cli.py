import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from kaleido import io as kio
from kaleido.circuits import fft4_circuit
from kaleido.cli import main
from kaleido.kcore import KMatrix, identity_chain, kmatrix_to_dense


@pytest.fixture
def ident(tmp_path):
    path = tmp_path / "ident.json"
    kio.save(KMatrix(8, 1, identity_chain(8)), str(path))
    return str(path)


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def kv(text):
    return dict(line.split(None, 1) for line in text.strip().splitlines())


class TestTransformAndVerify:
    def test_dft_against_oracle(self, tmp_path, capsys):
        fac, ref = tmp_path / "dft.json", tmp_path / "dft.txt"
        assert run(["transform", "--name", "dft", "--n", 64, "--out", fac], capsys)[0] == 0
        assert run(["oracle", "dft", 64, "--out", ref], capsys)[0] == 0
        code, out, _ = run(["verify", fac, ref], capsys)
        assert code == 0 and "PASS" in out

    @pytest.mark.parametrize("name", ["hadamard", "circulant", "toeplitz", "fastfood", "afdf", "dft2d"])
    def test_other_transforms(self, name, tmp_path, capsys):
        fac, ref = tmp_path / "k.json", tmp_path / "k.txt"
        run(["transform", "--name", name, "--n", 8, "--seed", 3, "--out", fac], capsys)
        run(["oracle", name, 8, "--seed", 3, "--out", ref], capsys)
        assert run(["verify", fac, ref, "--tol", 1e-10], capsys)[0] == 0

    @pytest.mark.parametrize("name", ["dct", "dst"])
    def test_real_part_transforms(self, name, tmp_path, capsys):
        fac, ref = tmp_path / "k.json", tmp_path / "k.txt"
        run(["transform", "--name", name, "--n", 16, "--out", fac], capsys)
        run(["oracle", name, 16, "--out", ref], capsys)
        assert run(["verify", fac, ref, "--real"], capsys)[0] == 0

    def test_kernel_file(self, tmp_path, capsys):
        ker, fac = tmp_path / "c.txt", tmp_path / "c.json"
        kio.write_vector(str(ker), [0, 1, 0, 0])
        run(["transform", "--name", "circulant", "--n", 4, "--kernel", ker, "--out", fac], capsys)
        np.testing.assert_allclose(kmatrix_to_dense(kio.load(str(fac))), np.roll(np.eye(4), 1, axis=0), atol=1e-12)

    def test_identity_against_identity(self, ident, tmp_path, capsys):
        ref = tmp_path / "I.txt"
        kio.write_dense(str(ref), np.eye(8))
        code, out, _ = run(["verify", ident, ref], capsys)
        assert code == 0 and float(kv(out)["max_abs_error"]) == 0

    def test_identity_against_twice_identity(self, ident, tmp_path, capsys):
        ref = tmp_path / "2I.txt"
        kio.write_dense(str(ref), 2 * np.eye(8))
        code, out, _ = run(["verify", ident, ref], capsys)
        assert code == 1 and "FAIL" in out
        # ||I - 2I|| / ||2I||
        assert float(kv(out)["relative_frobenius_error"]) == pytest.approx(0.5)

    def test_global_flags_before_subcommand(self, ident, tmp_path, capsys):
        ref = tmp_path / "near.txt"
        kio.write_dense(str(ref), np.eye(8) * (1 + 1e-6))
        assert run(["verify", ident, ref], capsys)[0] == 1
        assert run(["--tol", 1e-3, "verify", ident, ref], capsys)[0] == 0

    def test_transform_needs_out(self, capsys):
        assert run(["transform", "--name", "dft", "--n", 8], capsys)[0] == 2

    def test_bad_size(self, tmp_path, capsys):
        assert run(["transform", "--name", "dft", "--n", 6, "--out", tmp_path / "x.json"], capsys)[0] == 2


class TestOracleApplyInfo:
    def test_hadamard_two(self, capsys):
        code, out, _ = run(["oracle", "hadamard", 2], capsys)
        assert code == 0
        assert [line.split() for line in out.strip().splitlines()] == [["1", "1"], ["1", "-1"]]

    def test_apply_identity(self, ident, tmp_path, capsys):
        vec = tmp_path / "v.txt"
        v = np.arange(8.0) - 3.5
        kio.write_vector(str(vec), v)
        code, out, _ = run(["apply", ident, vec], capsys)
        assert code == 0
        np.testing.assert_array_equal([float(t) for t in out.split()], v)

    def test_apply_wrong_length(self, ident, tmp_path, capsys):
        vec = tmp_path / "v.txt"
        kio.write_vector(str(vec), [1.0, 2.0])
        assert run(["apply", ident, vec], capsys)[0] == 2

    def test_info_dft16(self, tmp_path, capsys):
        fac = tmp_path / "dft16.json"
        run(["transform", "--name", "dft", "--n", 16, "--out", fac], capsys)
        code, out, _ = run(["info", fac], capsys)
        info = kv(out)
        assert code == 0
        assert (info["w"], info["e"], info["params"]) == ("2", "1", str(4 * 2 * 16 * 4))
        assert info["multiplies"] == info["params"]

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["info", tmp_path / "nope.json"], capsys)
        assert code == 3 and err

    def test_corrupt_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"format": "kmatrix", "n": 4')
        assert run(["info", bad], capsys)[0] == 3

    def test_unknown_oracle(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["oracle", "wavelet", "8"])
        assert exc.value.code == 2


class TestDecompose:
    def test_permutation(self, tmp_path, capsys):
        src, out = tmp_path / "p.txt", tmp_path / "p.json"
        src.write_text("0 4 2 6 1 5 3 7\n")
        code, _, _ = run(["decompose", "--kind", "perm", "--in", src, "--out", out, "--certify"], capsys)
        assert code == 0
        cert = json.loads((tmp_path / "p.json.cert.json").read_text())
        assert cert["ok"] and cert["w"] == 1 and cert["max_abs_error"] == 0

    def test_sparse(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        src, out = tmp_path / "s.txt", tmp_path / "s.json"
        cells = rng.choice(256, size=40, replace=False)
        lines = ["16 40"] + [f"{c // 16} {c % 16} {rng.standard_normal():.6f}" for c in cells]
        src.write_text("\n".join(lines) + "\n")
        assert run(["decompose", "--kind", "sparse", "--in", src, "--out", out, "--certify"], capsys)[0] == 0
        cert = json.loads((tmp_path / "s.json.cert.json").read_text())
        assert cert["ok"] and cert["w"] <= 12 and cert["max_abs_error"] <= 1e-10

    def test_dense(self, tmp_path, capsys):
        M = np.random.default_rng(1).standard_normal((4, 4))
        src, out = tmp_path / "m.txt", tmp_path / "m.json"
        kio.write_dense(str(src), M)
        assert run(["decompose", "--kind", "dense", "--in", src, "--out", out], capsys)[0] == 0
        assert run(["verify", out, src], capsys)[0] == 0

    def test_bad_sparse_header(self, tmp_path, capsys):
        src = tmp_path / "s.txt"
        src.write_text("4 2\n0 0 1\n")
        assert run(["decompose", "--kind", "sparse", "--in", src, "--out", tmp_path / "o.json"], capsys)[0] == 3


class TestCompileCircuit:
    def test_fft4(self, tmp_path, capsys):
        src, out, ref = tmp_path / "c.json", tmp_path / "k.json", tmp_path / "f.txt"
        src.write_text(kio.circuit_to_json(fft4_circuit()))
        assert run(["compile-circuit", "--in", src, "--out", out, "--certify"], capsys)[0] == 0
        assert json.loads((tmp_path / "k.json.cert.json").read_text())["ok"]
        run(["oracle", "dft", 4, "--out", ref], capsys)
        assert run(["verify", out, ref, "--tol", 1e-10], capsys)[0] == 0


class TestBench:
    def test_csv(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        assert run(["bench", "--n-list", "16,64", "--reps", 11, "--out", out], capsys)[0] == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["method"] for r in rows] == ["kaleido", "dense"] * 2
        for r in rows:
            n = int(r["n"])
            assert int(r["reps"]) == 11 and int(r["median_ns"]) > 0
            if r["method"] == "kaleido":
                assert int(r["multiplies"]) == 4 * n * int(np.log2(n))
            else:
                assert float(r["ratio_dense_over_kaleido"]) > 0

    def test_reps_below_eleven(self, capsys):
        code, _, err = run(["bench", "--n-list", "16", "--reps", 10], capsys)
        assert code == 2 and "reps" in err


class TestRecover:
    def test_report(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        code, _, err = run(["recover", "--target", "convolution", "--n", 16, "--steps", 100,
                            "--lr", "0.01,0.03", "--out", out], capsys)
        assert code == 0 and "budget 256" in err
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["method", "convolution"]
        assert [r[0] for r in rows[1:]] == ["Low-rank", "Sparse", "Kaleidoscope (SGD)"]
        assert all(float(r[1]) >= 0 for r in rows[1:])

    def test_deterministic(self, tmp_path, capsys):
        outs = []
        for i in range(2):
            p = tmp_path / f"r{i}.csv"
            run(["recover", "--target", "random", "--n", 8, "--steps", 50, "--lr", "0.01", "--out", p], capsys)
            outs.append(p.read_text())
        assert outs[0] == outs[1]


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "kaleido.cli", "oracle", "hadamard", "2"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.split() == ["1", "1", "1", "-1"]
