"""Classical baselines: GLRT non-coherent detection and pilot-based coherent
detection (MMSE channel estimate followed by MMSE equalization or MLSD).

Received blocks are complex (T, N) arrays (or (B, T, N) batches); the
vectorized form used by the GLRT is ``y = vec(Y)`` (column-major), so
``(I_N kron X) vec(H) = vec(X H)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import NoiseSpec, whitening_matrix
from .errors import AlphabetTooLarge, SearchTooLarge, SingularPilot
from .transmitter import CodebookSet, index_to_bits

MAX_GLRT_HYPOTHESES = 2 ** 20
MAX_MLSD_BITS = 20

BPSK = "bpsk"
QPSK = "qpsk"
QAM16 = "qam16"
BITS_PER_SYMBOL = {BPSK: 1, QPSK: 2, QAM16: 4}


def _pam4_gray(b0, b1):
    # 01 -> 3, 00 -> 1, 10 -> -1, 11 -> -3
    return (1 - 2 * b0) * (2 - (1 - 2 * b1))


def constellation(modulation: str) -> np.ndarray:
    """Unit-average-energy points indexed by their MSB-first Gray label.

    QPSK: first bit picks the sign of I, second the sign of Q, so label 00
    is ``(1 + 1j)/sqrt(2)``.  16-QAM: bits 0-1 pick I and bits 2-3 pick Q
    from the Gray PAM-4 levels {01: 3, 00: 1, 10: -1, 11: -3}.
    """
    k = BITS_PER_SYMBOL[modulation]
    labels = index_to_bits(np.arange(2 ** k), k)
    if modulation == BPSK:
        return (1.0 - 2.0 * labels[:, 0]).astype(complex)
    if modulation == QPSK:
        return ((1 - 2 * labels[:, 0]) + 1j * (1 - 2 * labels[:, 1])) / np.sqrt(2.0)
    i = _pam4_gray(labels[:, 0], labels[:, 1])
    q = _pam4_gray(labels[:, 2], labels[:, 3])
    return (i + 1j * q) / np.sqrt(10.0)


def gray_table(modulation: str) -> list[dict]:
    """Bit-label / point pairs for documentation and test vectors."""
    k = BITS_PER_SYMBOL[modulation]
    pts = constellation(modulation)
    return [{"bits": "".join(map(str, index_to_bits(i, k))), "re": float(p.real),
             "im": float(p.imag)} for i, p in enumerate(pts)]


def modulation_for_bits(J: int) -> str:
    for name, k in BITS_PER_SYMBOL.items():
        if k == J:
            return name
    raise ValueError(f"no pilot-baseline modulation carries {J} bits per symbol")


def slice_symbols(s: np.ndarray, modulation: str) -> np.ndarray:
    """Nearest-point decision; returns integer labels with the shape of ``s``."""
    pts = constellation(modulation)
    return np.argmin(np.abs(np.asarray(s)[..., None] - pts) ** 2, axis=-1)


# ---------------------------------------------------------------------------
# GLRT


class JointAlphabet:
    """All K joint transmit blocks, complex (K, T, M).

    Built from a codebook set, joint index ``k`` enumerates the per-user
    indices with user 1 most significant, and ``user_indices[k]`` holds them.
    """

    def __init__(self, codewords: np.ndarray, user_indices: np.ndarray | None = None,
                 bits_per_user: int | None = None):
        codewords = np.asarray(codewords, dtype=complex)
        if codewords.ndim != 3:
            raise ValueError("codewords must be (K, T, M)")
        if codewords.shape[0] > MAX_GLRT_HYPOTHESES:
            raise AlphabetTooLarge(f"K={codewords.shape[0]} exceeds {MAX_GLRT_HYPOTHESES}")
        self.codewords = codewords
        self.user_indices = user_indices
        self.bits_per_user = bits_per_user

    @property
    def K(self) -> int:
        return self.codewords.shape[0]

    @classmethod
    def from_codebooks(cls, cb: CodebookSet) -> "JointAlphabet":
        K = cb.L ** cb.M
        if K > MAX_GLRT_HYPOTHESES:
            raise AlphabetTooLarge(f"L^M = {K} exceeds {MAX_GLRT_HYPOTHESES}")
        cw = cb.complex_codewords()  # (M, T, L)
        idx = np.array(list(itertools.product(range(cb.L), repeat=cb.M)), dtype=np.int64)
        blocks = np.stack([cw[m][:, idx[:, m]] for m in range(cb.M)], axis=-1)  # (T, K, M)
        return cls(np.transpose(blocks, (1, 0, 2)), idx, int(np.log2(cb.L)))

    @classmethod
    def from_list(cls, blocks) -> "JointAlphabet":
        blocks = [np.asarray(b, dtype=complex).reshape(np.shape(b)[0], -1) for b in blocks]
        return cls(np.stack(blocks))

    def bits(self, k) -> np.ndarray:
        """Decided bits for joint index/indices ``k``: (..., J*M)."""
        k = np.asarray(k)
        if self.user_indices is None:
            nbits = max(1, int(np.ceil(np.log2(self.K))))
            return index_to_bits(k, nbits)
        per_user = index_to_bits(self.user_indices[k], self.bits_per_user)  # (..., M, J)
        return per_user.reshape(*k.shape, -1)

    def subset(self, ks) -> "JointAlphabet":
        ks = np.asarray(ks)
        ui = None if self.user_indices is None else self.user_indices[ks]
        return JointAlphabet(self.codewords[ks], ui, self.bits_per_user)

    def projector_bases(self) -> list[np.ndarray] | np.ndarray:
        """Orthonormal bases of each block's column space, (K, T, r) when all
        ranks agree, otherwise a list."""
        bases = []
        for X in self.codewords:
            U, s, _ = np.linalg.svd(X, full_matrices=False)
            tol = max(X.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
            bases.append(U[:, s > tol])
        if len({b.shape[1] for b in bases}) == 1:
            return np.stack(bases)
        return bases


@dataclass
class DetectionResult:
    decided_bits: np.ndarray
    decided_index: int
    residuals: np.ndarray | None = None


def _as_block(y: np.ndarray, T: int) -> np.ndarray:
    y = np.asarray(y, dtype=complex)
    if y.ndim == 1:
        return y.reshape(-1, T).T  # vec is column-major over (T, N)
    return y


def glrt_residuals(Y: np.ndarray, alphabet: JointAlphabet, noise: NoiseSpec) -> np.ndarray:
    """Whitened GLRT residuals ``||Phi^{-1/2} y - Xcal_k h_k||^2`` for every k.

    ``Y`` is a (T, N) block, its column-major vec, or a (B, T, N) batch; the
    result is (K,) or (B, K).
    """
    T = alphabet.codewords.shape[1]
    single = np.ndim(Y) <= 2
    Yb = _as_block(Y, T)
    if single:
        Yb = Yb[None]
    if noise.is_white:
        bases = alphabet.projector_bases()
        energy = np.sum(np.abs(Yb) ** 2, axis=(1, 2))
        if isinstance(bases, np.ndarray):
            proj = np.einsum("ktr,btn->bkrn", bases.conj(), Yb)
            captured = np.sum(np.abs(proj) ** 2, axis=(2, 3))
        else:
            captured = np.stack([np.sum(np.abs(np.einsum("tr,btn->brn", U.conj(), Yb)) ** 2,
                                        axis=(1, 2)) for U in bases], axis=1)
        res = (energy[:, None] - captured) / noise.sigma2
    else:
        res = np.stack([_glrt_general(Yi, alphabet, noise) for Yi in Yb])
    return res[0] if single else res


def _glrt_general(Y: np.ndarray, alphabet: JointAlphabet, noise: NoiseSpec) -> np.ndarray:
    T, N = Y.shape
    Wh = whitening_matrix(noise, N * T)
    yw = Wh @ Y.reshape(-1, order="F")
    out = np.empty(alphabet.K)
    for k, X in enumerate(alphabet.codewords):
        Xcal = Wh @ np.kron(np.eye(N), X)
        # least squares covers rank-deficient blocks
        h_hat = np.linalg.lstsq(Xcal, yw, rcond=None)[0]
        out[k] = np.sum(np.abs(yw - Xcal @ h_hat) ** 2)
    return out


def glrt_detect(y: np.ndarray, alphabet: JointAlphabet, noise: NoiseSpec) -> DetectionResult:
    """Exhaustive GLRT over the joint alphabet; ties go to the lowest index."""
    res = glrt_residuals(y, alphabet, noise)
    k = int(np.argmin(res))
    return DetectionResult(alphabet.bits(k), k, res)


def glrt_detect_batch(Y: np.ndarray, alphabet: JointAlphabet, noise: NoiseSpec) -> np.ndarray:
    """Decided joint indices for a (B, T, N) batch."""
    return np.argmin(glrt_residuals(Y, alphabet, noise), axis=-1)


# ---------------------------------------------------------------------------
# Pilot-based coherent detection


@dataclass(frozen=True)
class PilotScheme:
    """Orthogonal pilots over the first M slots, one data symbol per user after.

    Per-slot pilot power equals the data-slot power ``P``: in pilot slot m
    only user m transmits, at amplitude sqrt(P); in the data slot every user
    sends a unit-energy symbol scaled by sqrt(P/M).
    """

    M: int
    modulation: str
    P: float = 1.0

    @property
    def pilot_block(self) -> np.ndarray:
        return np.sqrt(self.P) * np.eye(self.M, dtype=complex)

    @property
    def data_amplitude(self) -> float:
        return float(np.sqrt(self.P / self.M))

    @property
    def T(self) -> int:
        return self.M + 1

    @property
    def bits_per_user(self) -> int:
        return BITS_PER_SYMBOL[self.modulation]

    @property
    def block_energy(self) -> float:
        return float(np.sum(np.abs(self.pilot_block) ** 2) + self.M * self.data_amplitude ** 2)

    def transmit_block(self, labels: np.ndarray) -> np.ndarray:
        """Complex (..., T, M) blocks for integer symbol labels (..., M)."""
        labels = np.asarray(labels)
        data = self.data_amplitude * constellation(self.modulation)[labels]
        pilots = np.broadcast_to(self.pilot_block, labels.shape[:-1] + (self.M, self.M))
        return np.concatenate([pilots, data[..., None, :]], axis=-2)


def mmse_channel_estimate(Y_pilot: np.ndarray, pilots: PilotScheme | np.ndarray,
                          noise: NoiseSpec, prior_var: float) -> np.ndarray:
    """Linear MMSE estimate ``prior P^H (prior P P^H + sigma2 I)^{-1} Y_pilot``.

    ``Y_pilot`` is (M, N) or a (B, M, N) batch.
    """
    Pb = pilots.pilot_block if isinstance(pilots, PilotScheme) else np.asarray(pilots, complex)
    if abs(np.linalg.det(Pb)) < 1e-12:
        raise SingularPilot("pilot block is not invertible")
    M = Pb.shape[0]
    G = prior_var * Pb @ Pb.conj().T + noise.sigma2 * np.eye(M)
    F = prior_var * Pb.conj().T @ np.linalg.inv(G)
    return F @ Y_pilot


def ls_channel_estimate(Y_pilot: np.ndarray, pilots: PilotScheme | np.ndarray) -> np.ndarray:
    Pb = pilots.pilot_block if isinstance(pilots, PilotScheme) else np.asarray(pilots, complex)
    return np.linalg.solve(Pb, Y_pilot)


def mmse_equalize(y_data: np.ndarray, H_hat: np.ndarray, noise: NoiseSpec,
                  amplitude: float = 1.0) -> np.ndarray:
    """Linear MMSE estimate of the unit-energy symbols ``s`` in
    ``y = amplitude * H^T s + v``.

    ``s~ = (conj(H) H^T + (sigma2/amplitude^2) I)^{-1} conj(H) y / amplitude``;
    with ``amplitude^2 = P/M`` and ``P = 1`` the regularizer is ``sigma2 * M``.
    Works on single (N,) / (M, N) inputs or batches (B, N) / (B, M, N).
    """
    Hc = np.conj(H_hat)
    M = H_hat.shape[-2]
    gram = Hc @ np.swapaxes(H_hat, -1, -2) + (noise.sigma2 / amplitude ** 2) * np.eye(M)
    rhs = (Hc @ np.asarray(y_data)[..., None])[..., 0] / amplitude
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def mmse_equalize_detect(y_data: np.ndarray, H_hat: np.ndarray, noise: NoiseSpec,
                         modulation: str, amplitude: float = 1.0) -> np.ndarray:
    """Bits (..., M * k) after MMSE equalization and per-user slicing."""
    labels = slice_symbols(mmse_equalize(y_data, H_hat, noise, amplitude), modulation)
    bits = index_to_bits(labels, BITS_PER_SYMBOL[modulation])
    return bits.reshape(*labels.shape[:-1], -1)


def _mlsd_candidates(M: int, modulation: str) -> tuple[np.ndarray, np.ndarray]:
    k = BITS_PER_SYMBOL[modulation]
    if M * k > MAX_MLSD_BITS:
        raise SearchTooLarge(f"exhaustive MLSD over {M * k} bits exceeds {MAX_MLSD_BITS}")
    labels = np.array(list(itertools.product(range(2 ** k), repeat=M)), dtype=np.int64)
    return labels, constellation(modulation)[labels]


def mlsd_labels(y_data: np.ndarray, H_hat: np.ndarray, modulation: str,
                amplitude: float = 1.0) -> np.ndarray:
    """Joint symbol labels (..., M) minimizing ``||y - amplitude * s^T H||^2``."""
    M = H_hat.shape[-2]
    labels, symbols = _mlsd_candidates(M, modulation)  # (C, M)
    pred = amplitude * symbols @ H_hat  # (..., C, N)
    dist = np.sum(np.abs(np.asarray(y_data)[..., None, :] - pred) ** 2, axis=-1)
    return labels[np.argmin(dist, axis=-1)]


def mlsd_detect(y_data: np.ndarray, H_hat: np.ndarray, modulation: str,
                amplitude: float = 1.0) -> np.ndarray:
    """Exhaustive joint ML detection; ties go to the lowest candidate index."""
    labels = mlsd_labels(y_data, H_hat, modulation, amplitude)
    bits = index_to_bits(labels, BITS_PER_SYMBOL[modulation])
    return bits.reshape(*labels.shape[:-1], -1)
