"""Block-fading MU-SIMO channel, AWGN and the complex/real conversions.

Conventions
-----------
Complex model: ``Y = X H + V`` with ``X`` (T x M), ``H`` (M x N), ``Y`` (T x N).

Real transmit block ``X_real`` is (2T x M); column ``m`` is
``[Re x_m; Im x_m]``.  The received block is stacked the same way per
antenna, and the received vector is ``y = vec(Y_real)`` (column by column),
so ``y[n*2T:(n+1)*2T] = [Re Y[:, n]; Im Y[:, n]]``.  Batched arrays carry
the batch on axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SingularNoiseCovariance
from .numerics import (
    cholesky_psd,
    exponential_correlation,
    make_rng,
    sample_standard_complex_gaussian,
)

IID = "iid"
KRONECKER = "kronecker"


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and power budget of the uplink.

    ``alpha`` defaults to ``T/M`` for every user so that ``sum(alpha) == T``.
    """

    M: int
    N: int
    T: int
    J: int
    P: float = 1.0
    alpha: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.N >= self.M >= 1):
            raise ValueError(f"need N >= M >= 1, got M={self.M}, N={self.N}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", (self.T / self.M,) * self.M)
        else:
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.T <= 1:
            raise ValueError(f"coherent block length must exceed 1, got T={self.T}")
        if self.J < 1:
            raise ValueError(f"need J >= 1, got J={self.J}")
        if self.P <= 0:
            raise ValueError(f"power budget must be positive, got P={self.P}")
        if len(self.alpha) != self.M or any(a < 0 for a in self.alpha):
            raise ValueError("alpha must hold M non-negative factors")
        if abs(sum(self.alpha) - self.T) > 1e-12:
            raise ValueError(f"sum(alpha) must equal T={self.T}, got {sum(self.alpha)}")

    @property
    def L(self) -> int:
        return 2 ** self.J

    @property
    def K(self) -> int:
        return self.L ** self.M

    @property
    def alphaP(self) -> np.ndarray:
        return np.asarray(self.alpha) * self.P

    @property
    def block_energy(self) -> float:
        return float(np.sum(self.alphaP))

    @property
    def input_dim(self) -> int:
        return 2 * self.N * self.T

    @property
    def output_dim(self) -> int:
        return self.J * self.M

    def to_dict(self) -> dict:
        return {"M": self.M, "N": self.N, "T": self.T, "J": self.J,
                "P": self.P, "alpha": list(self.alpha)}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        alpha = d.get("alpha")
        return cls(M=int(d["M"]), N=int(d["N"]), T=int(d["T"]), J=int(d["J"]),
                   P=float(d.get("P", 1.0)),
                   alpha=tuple(alpha) if alpha is not None else None)


@dataclass(frozen=True)
class ChannelModel:
    kind: str = IID
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in (IID, KRONECKER):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelModel":
        return cls(kind=d.get("kind", IID), rho=float(d.get("rho", 0.0)))


def real_block(H: np.ndarray) -> np.ndarray:
    """``[[Re H, -Im H], [Im H, Re H]]``; works on stacks of matrices."""
    H = np.asarray(H)
    top = np.concatenate([H.real, -H.imag], axis=-1)
    bottom = np.concatenate([H.imag, H.real], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray
    H_real: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        Hr = real_block(H)
        Hr.setflags(write=False)
        object.__setattr__(self, "H_real", Hr)


@dataclass(frozen=True)
class NoiseSpec:
    """AWGN with variance ``sigma2`` per complex entry.

    ``Phi`` is the covariance of ``vec(V)`` (length N*T); ``None`` means
    ``sigma2 * I``.
    """

    sigma2: float
    Phi: np.ndarray | None = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def is_white(self) -> bool:
        return self.Phi is None

    def covariance(self, dim: int) -> np.ndarray:
        if self.Phi is None:
            return self.sigma2 * np.eye(dim)
        Phi = np.asarray(self.Phi, dtype=complex)
        if Phi.shape != (dim, dim):
            raise DimensionMismatch(f"Phi is {Phi.shape}, expected {(dim, dim)}")
        return Phi


def complex_to_real_vec(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    return np.concatenate([a.real, a.imag], axis=0).astype(float)


def real_to_complex_vec(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape[0] % 2:
        raise DimensionMismatch(f"real vector length {r.shape[0]} is odd")
    h = r.shape[0] // 2
    return r[:h] + 1j * r[h:]


def block_to_complex(X_real: np.ndarray) -> np.ndarray:
    """(..., 2T, M) real block -> (..., T, M) complex block."""
    T = X_real.shape[-2] // 2
    return X_real[..., :T, :] + 1j * X_real[..., T:, :]


def complex_to_block(X: np.ndarray) -> np.ndarray:
    """(..., T, M) complex block -> (..., 2T, M) real block."""
    return np.concatenate([X.real, X.imag], axis=-2)


def received_to_vector(Y: np.ndarray) -> np.ndarray:
    """(..., T, N) complex received block -> (..., 2NT) real vector."""
    Yr = complex_to_block(Y)
    lead = Yr.shape[:-2]
    return np.swapaxes(Yr, -1, -2).reshape(*lead, -1)


def vector_to_received(y: np.ndarray, T: int) -> np.ndarray:
    """Inverse of :func:`received_to_vector`."""
    y = np.asarray(y, dtype=float)
    lead = y.shape[:-1]
    N = y.shape[-1] // (2 * T)
    Yr = np.swapaxes(y.reshape(*lead, N, 2 * T), -1, -2)
    return block_to_complex(Yr)


def channel_operator(H_real: np.ndarray, T: int) -> np.ndarray:
    """Real (2NT x 2MT) matrix ``G`` with ``y = G vec(X_real)`` (noise-free).

    Block ``(n, m)`` of ``G`` is the 2x2 real image of ``h_mn`` taken from
    ``H_real`` (rows m, M+m; cols n, N+n), Kronecker-expanded over the T slots.
    The transmitter gradient is ``G.T @ grad_y``.
    """
    M, N = H_real.shape[0] // 2, H_real.shape[1] // 2
    eye = np.eye(T)
    G = np.zeros((2 * N * T, 2 * M * T))
    for n in range(N):
        for m in range(M):
            sub = H_real[np.ix_([m, M + m], [n, N + n])]
            G[n * 2 * T:(n + 1) * 2 * T, m * 2 * T:(m + 1) * 2 * T] = np.kron(sub, eye)
    return G


def _sample_iid(cfg: SystemConfig, rng: np.random.Generator, size: int) -> np.ndarray:
    return sample_standard_complex_gaussian(rng, size, cfg.M, cfg.N) / np.sqrt(cfg.M)


def kronecker_factors(model: ChannelModel, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Left (M x M) and right (N x N) shaping factors for the Kronecker model."""
    left = cholesky_psd(exponential_correlation(cfg.M, model.rho))
    right = cholesky_psd(exponential_correlation(cfg.N, model.rho)).conj().T
    return left, right


def sample_channels(model: ChannelModel, cfg: SystemConfig, rng: np.random.Generator,
                    size: int) -> np.ndarray:
    """Draw ``size`` independent channel matrices, shape (size, M, N).

    Every model is scaled so that ``E|h_ij|^2 = 1/M``.
    """
    if model.kind == IID:
        return _sample_iid(cfg, rng, size)
    left, right = kronecker_factors(model, cfg)
    Hw = sample_standard_complex_gaussian(rng, size, cfg.M, cfg.N)
    return (left @ Hw @ right) / np.sqrt(cfg.M)


def sample_channel(model: ChannelModel, cfg: SystemConfig,
                   rng: np.random.Generator) -> ChannelRealization:
    return ChannelRealization(sample_channels(model, cfg, rng, 1)[0])


def propagate(X_real: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Noise-free batched propagation: (B, 2T, M) x (B, M, N) -> (B, 2NT)."""
    return received_to_vector(block_to_complex(X_real) @ H)


def backpropagate(grad_y: np.ndarray, H: np.ndarray, T: int) -> np.ndarray:
    """Adjoint of :func:`propagate`: (B, 2NT) -> (B, 2T, M)."""
    gY = vector_to_received(grad_y, T)
    return complex_to_block(gY @ np.swapaxes(H, -1, -2).conj())


def sample_noise(noise: NoiseSpec, rng: np.random.Generator, size: int, T: int,
                 N: int) -> np.ndarray:
    """Complex noise blocks of shape (size, T, N)."""
    if noise.is_white:
        return np.sqrt(noise.sigma2) * sample_standard_complex_gaussian(rng, size, T, N)
    Phi = noise.covariance(N * T)
    Lc = cholesky_psd(Phi)
    w = sample_standard_complex_gaussian(rng, size, N * T)
    v = w @ Lc.T
    # vec(V) is column-major over (T, N)
    return np.swapaxes(v.reshape(size, N, T), -1, -2)


def transmit(X_real: np.ndarray, ch: ChannelRealization, noise: NoiseSpec,
             rng: np.random.Generator) -> np.ndarray:
    """Single-block received vector via the real operator of :func:`channel_operator`."""
    X_real = np.asarray(X_real, dtype=float)
    M, N = ch.H.shape
    if X_real.ndim != 2 or X_real.shape[1] != M or X_real.shape[0] % 2:
        raise DimensionMismatch(f"X_real shape {X_real.shape} incompatible with H {ch.H.shape}")
    T = X_real.shape[0] // 2
    G = channel_operator(ch.H_real, T)
    x = X_real.reshape(-1, order="F")
    v = received_to_vector(sample_noise(noise, rng, 1, T, N)[0])
    return G @ x + v


def whitening_matrix(noise: NoiseSpec, dim: int) -> np.ndarray:
    """``Phi^{-1/2}`` via the Hermitian eigendecomposition."""
    Phi = noise.covariance(dim)
    w, V = np.linalg.eigh(0.5 * (Phi + Phi.conj().T))
    if w[0] <= 1e-12 * max(w[-1], 0.0) or w[-1] <= 0:
        raise SingularNoiseCovariance("noise covariance is not positive definite")
    return (V / np.sqrt(w)) @ V.conj().T


def mean_user_signal_energy(cfg: SystemConfig, codewords: np.ndarray, model: ChannelModel,
                            rng: np.random.Generator, draws: int = 100_000,
                            chunk: int = 10_000) -> float:
    """Monte-Carlo ``E ||x_m h_m^T||^2`` averaged over users.

    ``codewords`` is complex (M, T, L).  Each draw pairs a fresh channel with
    one uniformly chosen codeword per user.
    """
    M, T, L = codewords.shape
    energy = np.sum(np.abs(codewords) ** 2, axis=1)  # (M, L)
    total = 0.0
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        H = sample_channels(model, cfg, rng, n)
        idx = rng.integers(0, L, size=(n, M))
        user_gain = np.sum(np.abs(H) ** 2, axis=2)  # (n, M)
        total += float(np.sum(energy[np.arange(M), idx] * user_gain))
        done += n
    return total / (draws * M)


def calibrate_noise(cfg: SystemConfig, snr_db: float, codebooks, model: ChannelModel,
                    rng: np.random.Generator | None = None, draws: int = 100_000) -> NoiseSpec:
    """Noise variance giving the requested per-user SNR.

    SNR is user m's received signal energy per slot, summed over the N
    antennas (``E||x_m h_m^T||^2 / T``), divided by the noise variance of one
    complex entry, averaged over users.  ``codebooks`` is anything exposing ``complex_codewords()``
    (shape (M, T, L)) or such an array directly.
    """
    if rng is None:
        rng = make_rng(0, 0xCA11B)
    cw = codebooks.complex_codewords() if hasattr(codebooks, "complex_codewords") else codebooks
    signal = mean_user_signal_energy(cfg, np.asarray(cw), model, rng, draws)
    sigma2 = signal / cfg.T / 10.0 ** (snr_db / 10.0)
    return NoiseSpec(sigma2=sigma2)


def closed_form_sigma2(cfg: SystemConfig, snr_db: float) -> float:
    """Expected value of :func:`calibrate_noise` for power-normalized codebooks."""
    per_user = np.mean(cfg.alphaP) * cfg.N / cfg.M
    return float(per_user / cfg.T / 10.0 ** (snr_db / 10.0))
