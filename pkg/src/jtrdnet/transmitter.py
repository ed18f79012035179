"""Learnable multiuser transmitter: one linear codebook layer per user.

User ``m`` maps its J bits to a codebook column ``z_m = W_m[:, index]`` and
scales it to energy ``alpha_m * P``.  The layers carry no bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import SystemConfig
from .errors import DegenerateCodeword, DimensionMismatch, MissingCache, VersionMismatch

XAVIER = "xavier"
SYMMETRICAL = "symmetrical"
EXPORT_VERSION = 1
DEGENERATE_NORM = 1e-12


def one_hot_encode(bits) -> np.ndarray:
    """Indicator of length ``2**J`` whose hot entry, counted from the right,
    sits at the integer value of ``bits`` (MSB first): 01 -> 0010."""
    bits = np.asarray(bits, dtype=int)
    if bits.ndim != 1 or np.any((bits != 0) & (bits != 1)):
        raise ValueError(f"bits must be a 1-D binary vector, got {bits!r}")
    L = 2 ** bits.size
    v = np.zeros(L, dtype=int)
    v[L - 1 - bits_to_index(bits)] = 1
    return v


def one_hot_decode(v) -> np.ndarray:
    v = np.asarray(v)
    L = v.size
    J = L.bit_length() - 1
    if 2 ** J != L or np.count_nonzero(v) != 1 or v.max() != 1:
        raise ValueError("not a one-hot vector of power-of-two length")
    return index_to_bits(L - 1 - int(np.argmax(v)), J)


def bits_to_index(bits) -> np.ndarray | int:
    """MSB-first bits (..., J) -> integer index (...)."""
    bits = np.asarray(bits, dtype=np.int64)
    J = bits.shape[-1]
    weights = 1 << np.arange(J - 1, -1, -1, dtype=np.int64)
    out = bits @ weights
    return int(out) if np.ndim(out) == 0 else out


def index_to_bits(index, J: int) -> np.ndarray:
    """Integer index (...) -> MSB-first bits (..., J)."""
    index = np.asarray(index, dtype=np.int64)
    shifts = np.arange(J - 1, -1, -1, dtype=np.int64)
    return (index[..., None] >> shifts) & 1


@dataclass(frozen=True)
class InitScheme:
    kind: str = SYMMETRICAL
    zeta: float | None = None

    def __post_init__(self):
        if self.kind not in (XAVIER, SYMMETRICAL):
            raise ValueError(f"unknown init scheme {self.kind!r}")

    def half_width(self, n: int) -> float:
        limit = 0.1 / np.sqrt(n)
        if self.zeta is None:
            return limit
        if not 0 <= self.zeta <= limit * (1 + 1e-12):
            raise ValueError(f"zeta={self.zeta} exceeds (1/sqrt(n))/10 = {limit}")
        return float(self.zeta)


class CodebookSet:
    """Per-user weight matrices ``W`` (M, 2T, L) and budgets ``alphaP`` (M,)."""

    def __init__(self, W: np.ndarray, alphaP):
        W = np.asarray(W, dtype=float)
        alphaP = np.asarray(alphaP, dtype=float)
        if W.ndim != 3 or W.shape[1] % 2 or alphaP.shape != (W.shape[0],):
            raise DimensionMismatch(f"W shape {W.shape} / alphaP shape {alphaP.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("codebook weights must be finite")
        self.W = W
        self.alphaP = alphaP

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def T(self) -> int:
        return self.W.shape[1] // 2

    @property
    def L(self) -> int:
        return self.W.shape[2]

    def copy(self) -> "CodebookSet":
        return CodebookSet(self.W.copy(), self.alphaP.copy())

    def normalized(self) -> np.ndarray:
        """All codewords after power normalization, real (M, 2T, L)."""
        norms = np.linalg.norm(self.W, axis=1, keepdims=True)
        if np.any(norms < DEGENERATE_NORM):
            raise DegenerateCodeword("codebook column with vanishing norm")
        return np.sqrt(self.alphaP)[:, None, None] * self.W / norms

    def complex_codewords(self) -> np.ndarray:
        """Normalized codewords as complex (M, T, L)."""
        Xn = self.normalized()
        return Xn[:, :self.T] + 1j * Xn[:, self.T:]


def init_codebooks(cfg: SystemConfig, scheme: InitScheme, rng: np.random.Generator) -> CodebookSet:
    """Draw initial codebooks; ``n = L`` is the fan-in of each linear layer.

    Xavier draws from ``(-1/sqrt(n), 1/sqrt(n))``.  The symmetrical-interval
    scheme draws a magnitude from ``(1/sqrt(n) - zeta, 1/sqrt(n) + zeta)``
    and a fair random sign, so no coefficient starts near zero.
    """
    n = cfg.L
    shape = (cfg.M, 2 * cfg.T, cfg.L)
    centre = 1.0 / np.sqrt(n)
    if scheme.kind == XAVIER:
        W = rng.uniform(-centre, centre, size=shape)
    else:
        zeta = scheme.half_width(n)
        sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        W = sign * rng.uniform(centre - zeta, centre + zeta, size=shape)
    return CodebookSet(W, cfg.alphaP)


def _as_batch(indices, M: int, L: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[None, :]
    if idx.ndim != 2 or idx.shape[1] != M:
        raise DimensionMismatch(f"indices shape {np.shape(indices)} does not match M={M}")
    if np.any(idx < 0) or np.any(idx >= L):
        raise ValueError(f"codeword indices must lie in [0, {L})")
    return idx


def tx_forward(cb: CodebookSet, indices) -> tuple[np.ndarray, np.ndarray]:
    """Select and normalize codewords.

    ``indices`` is (M,) or (B, M).  Returns ``(X, Z)``, each (B, 2T, M): the
    normalized transmit blocks and the raw selected columns kept for the
    backward pass.
    """
    idx = _as_batch(indices, cb.M, cb.L)
    users = np.arange(cb.M)
    Z = np.transpose(cb.W[users[None, :], :, idx], (0, 2, 1))  # (B, 2T, M)
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    if np.any(norms < DEGENERATE_NORM):
        raise DegenerateCodeword("selected codeword has vanishing norm")
    X = np.sqrt(cb.alphaP)[None, None, :] * Z / norms
    return X, Z


def normalization_vjp(Z: np.ndarray, grad_X: np.ndarray, alphaP: np.ndarray,
                      paper_formula: bool = False) -> np.ndarray:
    """Apply the transpose Jacobian of the normalization to ``grad_X``.

    Exact: ``sqrt(aP) * (g/|z| - z (z.g)/|z|^3)``.  ``paper_formula=True``
    instead multiplies element-wise by ``sqrt(aP) * (|z|^2 - z)/|z|^3`` as
    literally printed in the source derivation; it is kept for comparison and
    fails the finite-difference check.
    """
    sq = np.sum(Z * Z, axis=-2, keepdims=True)
    norm = np.sqrt(sq)
    scale = np.sqrt(alphaP)[None, None, :]
    if paper_formula:
        return grad_X * scale * (sq - Z) / (sq * norm)
    radial = np.sum(Z * grad_X, axis=-2, keepdims=True)
    return scale * (grad_X / norm - Z * radial / (sq * norm))


def tx_backward(cb: CodebookSet, indices, Z: np.ndarray | None, grad_X: np.ndarray,
                paper_formula: bool = False) -> np.ndarray:
    """Gradient with respect to ``W``, shape (M, 2T, L).

    Each sample's gradient lands only in the selected column of each user's
    codebook (outer product with the one-hot selector).
    """
    if Z is None:
        raise MissingCache("tx_backward needs the Z cache from tx_forward")
    idx = _as_batch(indices, cb.M, cb.L)
    grad_X = np.asarray(grad_X, dtype=float).reshape(Z.shape)
    gZ = normalization_vjp(Z, grad_X, cb.alphaP, paper_formula)
    gW = np.zeros_like(cb.W)
    for m in range(cb.M):
        onehot = np.zeros((idx.shape[0], cb.L))
        onehot[np.arange(idx.shape[0]), idx[:, m]] = 1.0
        gW[m] = gZ[:, :, m].T @ onehot
    return gW


def export_codebooks(cb: CodebookSet) -> dict:
    """Serializable description: raw weights plus normalized complex codewords
    and their per-slot energy (rows are slots, columns are codewords)."""
    cw = cb.complex_codewords()
    users = []
    for m in range(cb.M):
        users.append({
            "re": cw[m].real.tolist(),
            "im": cw[m].imag.tolist(),
            "slot_power": (np.abs(cw[m]) ** 2).tolist(),
            "weights": cb.W[m].tolist(),
        })
    return {"version": EXPORT_VERSION, "M": cb.M, "T": cb.T, "L": cb.L,
            "alphaP": cb.alphaP.tolist(), "users": users}


def import_codebooks(d: dict) -> CodebookSet:
    if d.get("version") != EXPORT_VERSION:
        raise VersionMismatch(f"codebook export version {d.get('version')!r}")
    W = np.array([u["weights"] for u in d["users"]], dtype=float)
    return CodebookSet(W, d["alphaP"])


def dumps_codebooks(cb: CodebookSet) -> str:
    return json.dumps(export_codebooks(cb))


def slot_power_spread(cb: CodebookSet) -> np.ndarray:
    """Per-user max/min ratio of average slot energy across the T slots."""
    p = np.mean(np.abs(cb.complex_codewords()) ** 2, axis=2)  # (M, T)
    return p.max(axis=1) / np.maximum(p.min(axis=1), 1e-300)
