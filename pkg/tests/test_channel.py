import numpy as np
import pytest
from hypothesis import given, strategies as st

from jtrdnet.channel import (
    ChannelModel,
    ChannelRealization,
    NoiseSpec,
    SystemConfig,
    backpropagate,
    block_to_complex,
    calibrate_noise,
    channel_operator,
    closed_form_sigma2,
    complex_to_block,
    complex_to_real_vec,
    kronecker_factors,
    mean_user_signal_energy,
    propagate,
    real_block,
    real_to_complex_vec,
    received_to_vector,
    sample_channels,
    sample_noise,
    transmit,
    vector_to_received,
)
from jtrdnet.errors import DimensionMismatch
from jtrdnet.numerics import exponential_correlation, make_rng
from jtrdnet.transmitter import InitScheme, init_codebooks

TINY = NoiseSpec(1e-300)


def complex_reference(X, H):
    """Y = X H, vectorized antenna by antenna with real and imaginary halves."""
    Y = X @ H
    return np.concatenate([np.r_[Y[:, n].real, Y[:, n].imag] for n in range(H.shape[1])])


class TestSystemConfig:
    def test_default_alpha_sums_to_T(self):
        cfg = SystemConfig(M=4, N=8, T=5, J=2)
        assert sum(cfg.alpha) == pytest.approx(5.0, abs=1e-12)
        np.testing.assert_allclose(cfg.alphaP, 1.25)
        assert cfg.L == 4 and cfg.K == 256
        assert cfg.input_dim == 80 and cfg.output_dim == 8

    @pytest.mark.parametrize("kw", [dict(M=3, N=2, T=4, J=1), dict(M=2, N=2, T=1, J=1),
                                    dict(M=2, N=2, T=3, J=0), dict(M=2, N=2, T=3, J=1, P=0.0),
                                    dict(M=2, N=2, T=3, J=1, alpha=(1.0, 1.0))])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            SystemConfig(**kw)

    def test_dict_round_trip(self):
        cfg = SystemConfig(M=2, N=3, T=4, J=2, alpha=(1.5, 2.5))
        assert SystemConfig.from_dict(cfg.to_dict()) == cfg


class TestConversions:
    def test_example(self):
        np.testing.assert_array_equal(complex_to_real_vec(np.array([1 + 2j])), [1.0, 2.0])

    def test_zero(self):
        np.testing.assert_array_equal(complex_to_real_vec(np.zeros(3, complex)), np.zeros(6))

    @given(st.lists(st.complex_numbers(max_magnitude=1e6, allow_nan=False), min_size=1,
                    max_size=12))
    def test_round_trip(self, values):
        a = np.array(values, dtype=complex)
        np.testing.assert_array_equal(real_to_complex_vec(complex_to_real_vec(a)), a)

    def test_odd_length_rejected(self):
        with pytest.raises(DimensionMismatch):
            real_to_complex_vec(np.zeros(3))

    def test_received_vector_layout(self, rng):
        Y = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
        y = received_to_vector(Y)
        np.testing.assert_array_equal(y[:6], np.r_[Y[:, 0].real, Y[:, 0].imag])
        np.testing.assert_array_equal(vector_to_received(y, 3), Y)

    def test_block_round_trip(self, rng):
        X = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        np.testing.assert_array_equal(block_to_complex(complex_to_block(X)), X)

    def test_real_block_represents_multiplication(self, rng):
        H = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        lhs = real_block(H) @ np.r_[v.real, v.imag]
        np.testing.assert_allclose(lhs, np.r_[(H @ v).real, (H @ v).imag], atol=1e-14)


class TestRealComplexEquivalence:
    @pytest.mark.parametrize("seed", range(20))
    def test_operator_matches_complex_product(self, seed):
        rng = np.random.default_rng(seed)
        M, N, T = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5)
        X = rng.standard_normal((T, M)) + 1j * rng.standard_normal((T, M))
        H = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
        G = channel_operator(real_block(H), T)
        y = G @ complex_to_block(X).reshape(-1, order="F")
        ref = complex_reference(X, H)
        assert np.linalg.norm(y - ref) <= 1e-12 * np.linalg.norm(ref)
        np.testing.assert_allclose(propagate(complex_to_block(X)[None], H[None])[0], ref,
                                   rtol=0, atol=1e-12 * np.linalg.norm(ref))

    @pytest.mark.parametrize("seed", range(10))
    def test_backpropagate_is_adjoint(self, seed):
        rng = np.random.default_rng(seed)
        M, N, T, B = 2, 3, 4, 5
        Xr = rng.standard_normal((B, 2 * T, M))
        H = rng.standard_normal((B, M, N)) + 1j * rng.standard_normal((B, M, N))
        g = rng.standard_normal((B, 2 * N * T))
        lhs = np.sum(propagate(Xr, H) * g)
        rhs = np.sum(Xr * backpropagate(g, H, T))
        assert lhs == pytest.approx(rhs, rel=1e-12)
        G = channel_operator(real_block(H[0]), T)
        np.testing.assert_allclose(backpropagate(g[:1], H[:1], T)[0].reshape(-1, order="F"),
                                   G.T @ g[0], atol=1e-12)

    def test_identity_channel_noiseless(self, rng):
        X = rng.standard_normal((6, 3))
        y = transmit(X, ChannelRealization(np.eye(3)), TINY, rng)
        np.testing.assert_allclose(y, X.reshape(-1, order="F"), atol=1e-140)

    def test_scalar_case(self, rng):
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        s = 0.3 - 0.7j
        y = transmit(np.array([[s.real], [s.imag]]), ChannelRealization(h[None, :]), TINY, rng)
        pairs = y.reshape(4, 2)  # T = 1: one (re, im) pair per antenna
        np.testing.assert_allclose(pairs[:, 0] + 1j * pairs[:, 1], s * h, atol=1e-140)

    def test_transmit_rejects_bad_shape(self, rng):
        with pytest.raises(DimensionMismatch):
            transmit(np.zeros((3, 2)), ChannelRealization(np.eye(2)), TINY, rng)


class TestSampling:
    def test_iid_variance(self):
        cfg = SystemConfig(M=4, N=4, T=5, J=1)
        H = sample_channels(ChannelModel(), cfg, make_rng(0, 11), 62_500)  # 1e6 entries
        assert abs(np.mean(np.abs(H) ** 2) - 0.25) < 0.01
        assert abs(np.mean(H)) < 0.01

    def test_kronecker_rho_zero_is_iid(self):
        cfg = SystemConfig(M=4, N=4, T=5, J=1)
        left, right = kronecker_factors(ChannelModel("kronecker", 0.0), cfg)
        np.testing.assert_array_equal(left, np.eye(4))
        np.testing.assert_array_equal(right, np.eye(4))
        a = sample_channels(ChannelModel("kronecker", 0.0), cfg, make_rng(1), 10)
        b = sample_channels(ChannelModel(), cfg, make_rng(1), 10)
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_kronecker_receive_correlation(self):
        cfg = SystemConfig(M=4, N=4, T=5, J=1)
        H = sample_channels(ChannelModel("kronecker", 0.5), cfg, make_rng(0, 12), 250_000)
        power = np.mean(np.abs(H) ** 2)
        corr = np.mean(H[:, :, :-1] * H[:, :, 1:].conj()) / power
        assert abs(corr - 0.5) < 0.02
        assert abs(power - 0.25) < 0.01
        tx_corr = np.mean(H[:, :-1, :] * H[:, 1:, :].conj()) / power
        assert abs(tx_corr - 0.5) < 0.02

    def test_kronecker_factors_reconstruct(self):
        cfg = SystemConfig(M=3, N=5, T=4, J=1)
        left, right = kronecker_factors(ChannelModel("kronecker", 0.7), cfg)
        assert np.abs(left @ left.conj().T - exponential_correlation(3, 0.7)).max() < 1e-10
        assert np.abs(right.conj().T @ right - exponential_correlation(5, 0.7)).max() < 1e-10

    def test_channel_model_validation(self):
        with pytest.raises(ValueError):
            ChannelModel("rician")
        with pytest.raises(ValueError):
            ChannelModel("kronecker", 1.0)

    def test_white_noise_covariance(self):
        noise = NoiseSpec(0.3)
        V = sample_noise(noise, make_rng(0, 13), 100_000, 2, 2)
        v = V.reshape(100_000, -1)
        C = v.T @ v.conj() / v.shape[0]
        assert np.abs(np.diag(C) - 0.3).max() < 0.02 * 0.3
        off = C - np.diag(np.diag(C))
        assert np.abs(off).max() < 0.02 * 0.3

    def test_coloured_noise_covariance(self, rng):
        A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        Phi = A @ A.conj().T / 4 + 0.1 * np.eye(4)
        V = sample_noise(NoiseSpec(1.0, Phi), make_rng(0, 14), 200_000, 2, 2)
        v = np.swapaxes(V, 1, 2).reshape(200_000, -1)  # column-major vec
        C = v.T @ v.conj() / v.shape[0]
        np.testing.assert_allclose(C, Phi, atol=0.03 * np.abs(Phi).max())

    def test_realization_is_read_only(self):
        ch = ChannelRealization(np.eye(2))
        with pytest.raises(ValueError):
            ch.H[0, 0] = 2.0


@pytest.fixture(scope="module")
def setup():
    cfg = SystemConfig(M=2, N=3, T=4, J=2)
    return cfg, init_codebooks(cfg, InitScheme(), make_rng(5))


class TestCalibration:
    def test_zero_db_equals_signal_energy_per_slot(self, setup):
        cfg, cb = setup
        noise = calibrate_noise(cfg, 0.0, cb, ChannelModel(), make_rng(9), draws=20_000)
        signal = mean_user_signal_energy(cfg, cb.complex_codewords(), ChannelModel(),
                                         make_rng(9), draws=20_000)
        assert noise.sigma2 == pytest.approx(signal / cfg.T, rel=1e-14)

    def test_linear_in_snr(self, setup):
        cfg, cb = setup
        a = calibrate_noise(cfg, 0.0, cb, ChannelModel(), draws=20_000).sigma2
        b = calibrate_noise(cfg, 10.0, cb, ChannelModel(), draws=20_000).sigma2
        assert b == pytest.approx(a / 10.0, rel=1e-12)

    @pytest.mark.parametrize("model", [ChannelModel(), ChannelModel("kronecker", 0.5)])
    def test_closed_form(self, setup, model):
        cfg, cb = setup
        mc = calibrate_noise(cfg, 7.0, cb, model).sigma2
        assert mc == pytest.approx(closed_form_sigma2(cfg, 7.0), rel=0.01)
