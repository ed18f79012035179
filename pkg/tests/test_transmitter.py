import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jtrdnet.channel import SystemConfig
from jtrdnet.errors import DegenerateCodeword, DimensionMismatch, MissingCache, VersionMismatch
from jtrdnet.numerics import make_rng
from jtrdnet.transmitter import (
    CodebookSet,
    InitScheme,
    bits_to_index,
    dumps_codebooks,
    export_codebooks,
    import_codebooks,
    index_to_bits,
    init_codebooks,
    normalization_vjp,
    one_hot_decode,
    one_hot_encode,
    slot_power_spread,
    tx_backward,
    tx_forward,
)


def random_codebooks(rng, M=3, T=4, L=4, alphaP=None):
    W = rng.standard_normal((M, 2 * T, L))
    if alphaP is None:
        alphaP = rng.uniform(0.5, 2.0, M)
    return CodebookSet(W, alphaP)


class TestOneHot:
    def test_examples(self):
        np.testing.assert_array_equal(one_hot_encode([0, 1]), [0, 0, 1, 0])
        np.testing.assert_array_equal(one_hot_encode([1, 1]), [1, 0, 0, 0])
        np.testing.assert_array_equal(one_hot_encode([0, 0]), [0, 0, 0, 1])

    @pytest.mark.parametrize("J", range(1, 9))
    def test_bijection(self, J):
        for k in range(2 ** J):
            bits = index_to_bits(k, J)
            v = one_hot_encode(bits)
            assert v.sum() == 1
            np.testing.assert_array_equal(one_hot_decode(v), bits)

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            one_hot_encode([0, 2])
        with pytest.raises(ValueError):
            one_hot_decode([1, 1, 0, 0])

    @given(st.integers(1, 12), st.data())
    def test_bits_index_round_trip(self, J, data):
        k = data.draw(st.integers(0, 2 ** J - 1))
        assert bits_to_index(index_to_bits(k, J)) == k

    def test_msb_first(self):
        np.testing.assert_array_equal(index_to_bits(np.array([1, 2]), 2), [[0, 1], [1, 0]])


class TestInit:
    def test_xavier_range_and_mean(self):
        cfg = SystemConfig(M=1, N=1, T=31250, J=4)  # n = L = 16, 10^6 entries
        W = init_codebooks(cfg, InitScheme("xavier"), make_rng(0, 1)).W
        assert W.size == 1_000_000
        assert np.all(np.abs(W) < 0.25)
        assert abs(W.mean()) < 0.005

    def test_symmetrical_interval_bounds(self):
        cfg = SystemConfig(M=4, N=4, T=50, J=2)  # n = 4
        W = init_codebooks(cfg, InitScheme("symmetrical", 0.05), make_rng(0, 2)).W
        assert np.all(np.abs(W) >= 0.45) and np.all(np.abs(W) <= 0.55)

    def test_symmetrical_sign_balance(self):
        cfg = SystemConfig(M=1, N=1, T=125_000, J=2)
        W = init_codebooks(cfg, InitScheme(), make_rng(0, 3)).W
        assert W.size == 1_000_000
        assert abs(np.mean(W > 0) - 0.5) < 0.005

    def test_default_zeta(self):
        assert InitScheme().half_width(16) == pytest.approx(0.025)

    def test_zeta_too_large_rejected(self):
        with pytest.raises(ValueError):
            InitScheme("symmetrical", 0.2).half_width(4)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            InitScheme("he")

    def test_deterministic(self):
        cfg = SystemConfig(M=2, N=2, T=3, J=2)
        a = init_codebooks(cfg, InitScheme(), make_rng(4)).W
        b = init_codebooks(cfg, InitScheme(), make_rng(4)).W
        np.testing.assert_array_equal(a, b)


class TestForward:
    def test_scaling_examples(self):
        z = np.array([2.0, 0.0, 0.0, 0.0])
        cb = CodebookSet(z.reshape(1, 4, 1), [1.0])
        X, Z = tx_forward(cb, [0])
        np.testing.assert_allclose(X[0, :, 0], z / 2)
        np.testing.assert_allclose(Z[0, :, 0], z)
        u = np.array([0.6, 0.0, 0.8, 0.0])
        X, _ = tx_forward(CodebookSet(u.reshape(1, 4, 1), [1.0]), [0])
        np.testing.assert_allclose(X[0, :, 0], u, atol=1e-15)

    @given(st.integers(0, 2 ** 31))
    def test_power_constraint(self, seed):
        rng = np.random.default_rng(seed)
        cb = random_codebooks(rng)
        idx = rng.integers(0, cb.L, size=(7, cb.M))
        X, _ = tx_forward(cb, idx)
        np.testing.assert_allclose(np.sum(X ** 2, axis=1), np.broadcast_to(cb.alphaP, (7, cb.M)),
                                   rtol=1e-12)
        np.testing.assert_allclose(np.sum(np.abs(cb.complex_codewords()) ** 2, axis=1),
                                   np.repeat(cb.alphaP[:, None], cb.L, axis=1), rtol=1e-12)

    def test_selects_column(self, rng):
        cb = random_codebooks(rng)
        _, Z = tx_forward(cb, [1, 3, 0])
        for m, k in enumerate([1, 3, 0]):
            np.testing.assert_array_equal(Z[0, :, m], cb.W[m, :, k])

    def test_degenerate(self):
        cb = CodebookSet(np.zeros((1, 4, 2)), [1.0])
        with pytest.raises(DegenerateCodeword):
            tx_forward(cb, [0])

    def test_bad_indices(self, rng):
        cb = random_codebooks(rng)
        with pytest.raises(DimensionMismatch):
            tx_forward(cb, [0, 1])
        with pytest.raises(ValueError):
            tx_forward(cb, [0, 1, 4])


class TestBackward:
    def test_zero_gradient(self, rng):
        cb = random_codebooks(rng)
        idx = rng.integers(0, cb.L, size=(3, cb.M))
        _, Z = tx_forward(cb, idx)
        np.testing.assert_array_equal(tx_backward(cb, idx, Z, np.zeros_like(Z)), 0.0)

    def test_radial_direction_annihilated(self, rng):
        z = rng.standard_normal((1, 6, 1))
        z /= np.linalg.norm(z)
        out = normalization_vjp(z, 3.7 * z, np.array([1.0]))
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_missing_cache(self, rng):
        cb = random_codebooks(rng)
        with pytest.raises(MissingCache):
            tx_backward(cb, [0, 0, 0], None, np.zeros((1, 8, 3)))

    @pytest.mark.parametrize("seed", range(100))
    def test_finite_differences(self, seed):
        """Quadratic probe f(W) = sum(C * X) + 0.5 * sum(D * X**2)."""
        rng = np.random.default_rng(seed)
        cb = random_codebooks(rng, M=2, T=3, L=4)
        idx = rng.integers(0, cb.L, size=(5, cb.M))
        C = rng.standard_normal((5, 6, 2))
        D = rng.standard_normal((5, 6, 2))

        def f(W):
            X, _ = tx_forward(CodebookSet(W, cb.alphaP), idx)
            return np.sum(C * X) + 0.5 * np.sum(D * X ** 2)

        X, Z = tx_forward(cb, idx)
        g = tx_backward(cb, idx, Z, C + D * X)
        h = 1e-6
        num = np.zeros_like(cb.W)
        for pos in np.ndindex(cb.W.shape):
            Wp, Wm = cb.W.copy(), cb.W.copy()
            Wp[pos] += h
            Wm[pos] -= h
            num[pos] = (f(Wp) - f(Wm)) / (2 * h)
        assert np.linalg.norm(g - num) <= 1e-5 * np.linalg.norm(num)
        # only the selected columns receive gradient
        for m in range(cb.M):
            unused = np.setdiff1d(np.arange(cb.L), idx[:, m])
            np.testing.assert_array_equal(g[m][:, unused], 0.0)

    def test_printed_elementwise_formula_disagrees(self, rng):
        z = rng.standard_normal((1, 6, 1))
        g = rng.standard_normal((1, 6, 1))
        exact = normalization_vjp(z, g, np.array([1.0]))
        printed = normalization_vjp(z, g, np.array([1.0]), paper_formula=True)
        assert np.linalg.norm(exact - printed) > 1e-3 * np.linalg.norm(exact)


class TestExport:
    def test_round_trip(self, rng):
        cb = random_codebooks(rng)
        back = import_codebooks(json.loads(dumps_codebooks(cb)))
        np.testing.assert_array_equal(back.W, cb.W)
        np.testing.assert_array_equal(back.alphaP, cb.alphaP)

    def test_slot_powers_sum_to_budget(self, rng):
        cb = random_codebooks(rng)
        d = export_codebooks(cb)
        for m, user in enumerate(d["users"]):
            np.testing.assert_allclose(np.sum(user["slot_power"], axis=0), cb.alphaP[m], rtol=1e-12)

    def test_version_checked(self, rng):
        d = export_codebooks(random_codebooks(rng))
        d["version"] = 99
        with pytest.raises(VersionMismatch):
            import_codebooks(d)

    def test_slot_power_spread(self):
        W = np.zeros((1, 4, 2))
        W[0, 0, :] = 1.0  # all energy in slot 1
        W[0, 1, :] = 1e-3
        assert slot_power_spread(CodebookSet(W, [2.0]))[0] > 1e5
