import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kaleido.errors import ConvergenceError, DimensionError
from kaleido.kcore import KMatrix, Permutation, identity_chain, kmatrix_matvec, kmatrix_to_dense, random_chain
from kaleido.learn import (DoublyStochasticButterfly, SgdConfig, compare_methods, ds_project,
                           ds_sample_permutation, flatten_params, frobenius_loss_grad, lowrank_best_approx,
                           make_target, matvec_backward, sgd_recover, sparse_best_approx, tv_smoothness_loss,
                           unflatten_params)


def random_k(n, w, seed, e=1):
    rng = np.random.default_rng(seed)
    return KMatrix(n, e, random_chain(n * e, w, rng))


def objective(K, x, u):
    return float(np.real(np.vdot(u, kmatrix_matvec(K, x))))


def fd_params(K, x, u, h=1e-5):
    theta = flatten_params(K)
    out = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        out[i] = (objective(unflatten_params(K, tp), x, u) - objective(unflatten_params(K, tm), x, u)) / (2 * h)
    return out


def cvec(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


class TestBackward:
    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n = (4, 8, 16)[seed % 3]
        K = random_k(n, 1 + seed % 2, seed)
        x, u = cvec(rng, n), cvec(rng, n)
        g, gx = matvec_backward(K, x, u)
        fd = fd_params(K, x, u)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-5
        # the input gradient is K* u
        np.testing.assert_allclose(gx, kmatrix_to_dense(K).conj().T @ u, atol=1e-10)

    def test_expanded(self):
        rng = np.random.default_rng(5)
        K = random_k(4, 1, 5, e=2)
        x, u = cvec(rng, 4), cvec(rng, 4)
        g, _ = matvec_backward(K, x, u)
        fd = fd_params(K, x, u)
        assert np.max(np.abs(g - fd)) <= 1e-5 * np.max(np.abs(fd))

    def test_identity_chain(self):
        n = 8
        K = KMatrix(n, 1, identity_chain(n))
        rng = np.random.default_rng(0)
        x, u = cvec(rng, n), cvec(rng, n)
        grads, gx = matvec_backward(K, x, u, per_stage=True)
        np.testing.assert_allclose(gx, u)
        # outermost factor has block size n: d1[i] multiplies x[i] into row i
        np.testing.assert_allclose(grads[0][0].ravel(), (u * np.conj(x))[:n // 2])

    def test_zero_upstream(self):
        K = random_k(8, 1, 1)
        g, gx = matvec_backward(K, np.ones(8), np.zeros(8))
        assert not np.any(g) and not np.any(gx)

    def test_batch_matches_sum(self):
        rng = np.random.default_rng(2)
        K = random_k(8, 1, 2)
        X = rng.standard_normal((8, 3))
        U = rng.standard_normal((8, 3))
        g, _ = matvec_backward(K, X, U)
        parts = sum(matvec_backward(K, X[:, j], U[:, j])[0] for j in range(3))
        np.testing.assert_allclose(g, parts, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            matvec_backward(random_k(8, 1, 0), np.ones(4), np.ones(8))


class TestLoss:
    def test_exact_target(self):
        K = random_k(8, 1, 3)
        loss, g = frobenius_loss_grad(K, kmatrix_to_dense(K))
        assert loss <= 1e-12 and np.max(np.abs(g)) <= 1e-9

    def test_identity_against_twice_identity(self):
        K = KMatrix(4, 1, identity_chain(4))
        loss, _ = frobenius_loss_grad(K, 2 * np.eye(4))
        assert loss == pytest.approx(2.0)

    @pytest.mark.parametrize("squared", [False, True])
    def test_gradient_against_differences(self, squared):
        rng = np.random.default_rng(8)
        K = random_k(8, 1, 8)
        T = rng.standard_normal((8, 8))
        _, g = frobenius_loss_grad(K, T, squared=squared)
        theta = flatten_params(K)
        h = 1e-6
        fd = np.empty_like(theta)
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd[i] = (frobenius_loss_grad(unflatten_params(K, tp), T, squared=squared)[0]
                     - frobenius_loss_grad(unflatten_params(K, tm), T, squared=squared)[0]) / (2 * h)
        assert np.max(np.abs(g - fd)) <= 1e-4 * np.max(np.abs(fd))

    def test_sampled_is_seeded(self):
        K = random_k(16, 1, 0)
        T = np.eye(16)
        a = frobenius_loss_grad(K, T, mode="sampled", batch=4, rng=3)
        b = frobenius_loss_grad(K, T, mode="sampled", batch=4, rng=3)
        assert a[0] == b[0] and np.array_equal(a[1], b[1])

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            frobenius_loss_grad(random_k(8, 1, 0), np.eye(4))


class TestBaselines:
    def test_rank_one(self):
        a, b = np.arange(1.0, 9.0), np.ones(8)
        approx, err = lowrank_best_approx(np.outer(a, b), 16)
        assert err <= 1e-12
        np.testing.assert_allclose(approx, np.outer(a, b), atol=1e-12)

    def test_identity_half_rank(self):
        n = 16
        _, err = lowrank_best_approx(np.eye(n), n * n)  # r = n/2
        assert err == pytest.approx(np.sqrt(n / 2))

    def test_against_svd(self):
        n = 64
        T = np.random.default_rng(0).standard_normal((n, n))
        budget = 4 * n * 6
        approx, err = lowrank_best_approx(T, budget)
        s = np.linalg.svd(T, compute_uv=False)
        r = budget // (2 * n)
        assert err == pytest.approx(np.sqrt(np.sum(s[r:] ** 2)), rel=1e-10)
        assert np.linalg.norm(T - approx) == pytest.approx(err, rel=1e-8)

    def test_zero_budget(self):
        approx, err = lowrank_best_approx(np.eye(4), 0)
        assert not np.any(approx) and err == pytest.approx(2.0)
        approx, _ = sparse_best_approx(np.eye(4), 0)
        assert not np.any(approx)

    def test_sparse_within_budget(self):
        T = np.diag([1.0, -2.0, 3.0, 0.5])
        _, err = sparse_best_approx(T, 4)
        assert err == 0

    def test_all_ones(self):
        approx, err = sparse_best_approx(np.ones((4, 4)), 8)
        assert err == pytest.approx(np.sqrt(8))
        # ties go to the earlier (row, col) positions
        np.testing.assert_array_equal(approx[:2], 1)
        np.testing.assert_array_equal(approx[2:], 0)

    def test_sparse_dropped_norm(self):
        T = np.random.default_rng(1).standard_normal((16, 16))
        approx, err = sparse_best_approx(T, 40)
        dropped = T[approx == 0]
        assert err == pytest.approx(np.linalg.norm(dropped))
        assert np.count_nonzero(approx) == 40
        assert np.abs(dropped).max() <= np.abs(approx[approx != 0]).min()


class TestDoublyStochastic:
    def test_all_keep(self):
        ds = DoublyStochasticButterfly(8, [np.ones((1, 4)), np.ones((2, 2)), np.ones((4, 1))])
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert ds_sample_permutation(ds, rng) == Permutation.identity(8)

    def test_all_swap_two(self):
        ds = DoublyStochasticButterfly(2, [np.zeros((1, 1))])
        for seed in range(10):
            assert list(ds_sample_permutation(ds, seed).map) == [1, 0]

    def test_projection_clamps(self):
        ds = DoublyStochasticButterfly(4, [np.array([[1.5, -0.2]]), np.array([[0.3], [2.0]])])
        ds.params = [np.array([[1.5, -0.2]]), np.array([[0.3], [2.0]])]
        ds_project(ds)
        assert all(np.all((p >= 0) & (p <= 1)) for p in ds.params)

    def test_dense_is_doubly_stochastic(self):
        D = DoublyStochasticButterfly(16, rng=1).to_dense()
        np.testing.assert_allclose(D.sum(axis=0), 1)
        np.testing.assert_allclose(D.sum(axis=1), 1)

    def test_swap_frequencies(self):
        ds = DoublyStochasticButterfly(8, rng=4)
        rng = np.random.default_rng(5)
        N = 10 ** 4
        counts = [np.zeros(p.shape) for p in ds.params]
        for _ in range(N):
            for c, sw in zip(counts, ds.sample_swaps(rng)):
                c += sw
        for c, p in zip(counts, ds.params):
            q = 1 - p
            sigma = np.sqrt(N * q * (1 - q))
            assert np.all(np.abs(c - N * q) <= 3 * sigma + 1e-9)

    def test_mean_of_samples_is_dense(self):
        ds = DoublyStochasticButterfly(4, rng=2)
        rng = np.random.default_rng(3)
        acc = sum(ds.sample(rng).to_dense() for _ in range(4000)) / 4000
        assert np.max(np.abs(acc - ds.to_dense())) <= 0.05

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10 ** 6))
    def test_samples_are_permutations(self, logn, seed):
        n = 2 ** logn
        P = ds_sample_permutation(DoublyStochasticButterfly(n, rng=seed), seed)
        assert sorted(P.map) == list(range(n))


class TestTotalVariation:
    def test_constant(self):
        assert tv_smoothness_loss(np.full((5, 3), 2.5)) == 0

    def test_two_by_two(self):
        assert tv_smoothness_loss([[0, 1], [0, 1]]) == pytest.approx(2.0)

    def test_checkerboard(self):
        img = np.indices((4, 4)).sum(axis=0) % 2
        total = 0.0
        for i in range(4):
            for j in range(4):
                d = []
                if i + 1 < 4:
                    d.append(img[i + 1, j] - img[i, j])
                if j + 1 < 4:
                    d.append(img[i, j + 1] - img[i, j])
                total += np.sqrt(sum(v * v for v in d))
        assert tv_smoothness_loss(img) == pytest.approx(total)
        assert total == pytest.approx(9 * np.sqrt(2) + 6)


class TestRecovery:
    def test_warm_start_fixed_point(self):
        K = random_k(16, 1, 11)
        T = kmatrix_to_dense(K)
        res = sgd_recover(T, SgdConfig(steps=200, lr_grid=(0.01, 0.1)), init=K)
        assert res.error <= 1e-9

    def test_deterministic(self):
        T = make_target("convolution", 16, 0)
        cfg = SgdConfig(steps=150, lr_grid=(0.01, 0.03))
        a, b = sgd_recover(T, cfg), sgd_recover(T, cfg)
        assert a.error == b.error and a.lr == b.lr
        assert np.array_equal(flatten_params(a.K), flatten_params(b.K))

    def test_loss_decreases(self):
        res = sgd_recover(make_target("convolution", 16, 1), SgdConfig(steps=400))
        assert not res.flagged and res.history[-1] <= res.history[0]

    def test_small_convolution(self):
        res = sgd_recover(make_target("convolution", 16, 2), SgdConfig(steps=1500))
        assert res.rel_error <= 0.05

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_grid_point_is_dropped(self):
        T = make_target("random", 16, 0)
        res = sgd_recover(T, SgdConfig(steps=100, lr_grid=(1e6, 0.01), clip=0))
        assert res.lr == 0.01

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_all_diverged(self):
        with pytest.raises(ConvergenceError):
            sgd_recover(make_target("random", 16, 0), SgdConfig(steps=100, lr_grid=(1e6,), clip=0))

    def test_zero_budget(self):
        with pytest.raises(ValueError):
            sgd_recover(np.eye(8), SgdConfig(steps=0))

    def test_budget_parity(self):
        r = compare_methods(make_target("convolution", 16, 0), SgdConfig(steps=50, lr_grid=(0.01,)))
        assert r["budget"] == 4 * 16 * 4

    @pytest.mark.parametrize("kind", ["kaleidoscope", "lowrank", "sparse", "convolution", "fastfood", "random"])
    def test_targets_normalized(self, kind):
        # E[T^T T] = I, so E||T||_F^2 = n; products of random factors are heavy-tailed,
        # hence a standard-error bound rather than a fixed relative one
        n = 32
        sq = np.array([np.linalg.norm(make_target(kind, n, s)) ** 2 for s in range(1000)])
        assert abs(sq.mean() - n) <= 3 * sq.std() / np.sqrt(sq.size) + 0.02 * n

    def test_unknown_target(self):
        with pytest.raises(ValueError):
            make_target("banded", 8, 0)


@pytest.mark.slow
def test_random_target_tracks_lowrank():
    r = compare_methods(make_target("random", 64, 0), SgdConfig())
    assert 0.5 <= r["kaleidoscope_sgd"] / r["lowrank"] <= 1.1
