"""Pairwise-error-probability analysis of non-coherent codebooks.

For a pair of joint blocks ``X_i``, ``X_j`` and whitened ``Xcal = Phi^{-1/2}
(I_N kron X)``, the high-SNR GLRT pairwise error probability is
approximately ``Q(sqrt(h^H L_ij h / 2))`` with

    L_ij = Xcal_i^H (I - Xcal_j Xcal_j^+) Xcal_i,

and is bounded by ``Q(||h|| sqrt(lambda_min(L_ij) / 2))``.  ``h = vec(H)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .channel import ChannelModel, NoiseSpec, SystemConfig, sample_channels, sample_noise, whitening_matrix
from .detectors import JointAlphabet, glrt_detect_batch
from .errors import AlphabetTooLarge
from .numerics import hermitian_min_eigenvalue

MAX_QUALITY_K = 2 ** 12
CLAMP_TOL = 1e-9


def q_function(x):
    """Gaussian tail ``Q(x) = erfc(x / sqrt(2)) / 2``."""
    out = 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def whitened_block(X: np.ndarray, N: int, Phi: np.ndarray | None = None,
                   sigma2: float = 1.0) -> np.ndarray:
    """``Phi^{-1/2} (I_N kron X)``; ``Phi=None`` means ``sigma2 * I``."""
    X = np.asarray(X, dtype=complex)
    big = np.kron(np.eye(N), X)
    if Phi is None:
        return big / math.sqrt(sigma2)
    return whitening_matrix(NoiseSpec(1.0, Phi), big.shape[0]) @ big


@dataclass
class PepReport:
    pair: tuple[int, int]
    L: np.ndarray
    lambda_min: float
    clamped: bool = False
    rank_deficient: bool = False

    def approx_prob(self, h: np.ndarray) -> float:
        h = np.asarray(h, dtype=complex).reshape(-1)
        quad = max(float(np.real(np.vdot(h, self.L @ h))), 0.0)
        return q_function(math.sqrt(quad / 2.0))

    def bound_at(self, h_norm: float) -> float:
        return q_function(h_norm * math.sqrt(self.lambda_min / 2.0))


def _residual_projector(Xcal: np.ndarray) -> tuple[np.ndarray, bool]:
    """``I - Xcal Xcal^+`` and whether ``Xcal`` lacked full column rank."""
    U, s, _ = np.linalg.svd(Xcal, full_matrices=False)
    tol = max(Xcal.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    keep = s > tol
    Uk = U[:, keep]
    return np.eye(Xcal.shape[0]) - Uk @ Uk.conj().T, bool(np.count_nonzero(keep) < Xcal.shape[1])


def compute_L(Xi: np.ndarray, Xj: np.ndarray, N: int, Phi: np.ndarray | None = None,
              sigma2: float = 1.0, pair: tuple[int, int] = (0, 1)) -> PepReport:
    """Gram-residual matrix of ``Xcal_i`` against the column space of ``Xcal_j``.

    Rank-deficient ``Xcal_j`` uses the pseudo-inverse projector and sets
    ``rank_deficient`` on the report.
    """
    Ci = whitened_block(np.atleast_2d(np.asarray(Xi).reshape(np.shape(Xi)[0], -1)), N, Phi, sigma2)
    Cj = whitened_block(np.atleast_2d(np.asarray(Xj).reshape(np.shape(Xj)[0], -1)), N, Phi, sigma2)
    Gamma, deficient = _residual_projector(Cj)
    L = Ci.conj().T @ Gamma @ Ci
    L = 0.5 * (L + L.conj().T)
    lam = hermitian_min_eigenvalue(L)
    clamped = False
    if -CLAMP_TOL <= lam < 0:
        lam, clamped = 0.0, True
    return PepReport(pair, L, lam, clamped, deficient)


def pep_bound(report: PepReport, h: np.ndarray) -> tuple[float, float]:
    """``(approx, upper)`` pairwise error probabilities for channel ``h``."""
    h = np.asarray(h, dtype=complex).reshape(-1)
    return report.approx_prob(h), report.bound_at(float(np.linalg.norm(h)))


def _white_pair_stats(codewords: np.ndarray, sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    """lambda_min(L_ij) and trace(L_ij) for all ordered pairs under white noise.

    With ``Phi = sigma2 I`` the matrix is ``I_N kron (X_i^H G_j X_i) / sigma2``
    so only the M x M factor needs an eigen-solve; the returned traces are
    those of that factor (the full trace is N times larger).
    """
    K, T, M = codewords.shape
    lam = np.empty((K, K))
    tr = np.empty((K, K))
    for j in range(K):
        Gamma, _ = _residual_projector(codewords[j])
        inner = np.einsum("ktm,ts,ksn->kmn", codewords.conj(), Gamma, codewords)
        inner = 0.5 * (inner + np.conj(np.swapaxes(inner, -1, -2)))
        lam[:, j] = np.linalg.eigvalsh(inner)[:, 0] / sigma2
        tr[:, j] = np.trace(inner, axis1=1, axis2=2).real / sigma2
    return lam, tr


def codebook_quality(alphabet: JointAlphabet, Phi: np.ndarray | None, N: int,
                     sigma2: float = 1.0, bins: int = 20) -> dict:
    """Worst-pair ``lambda_min`` over all ordered pairs plus its histogram.

    ``lambda_min`` vanishes for every pair whenever ``T < 2M`` (the residual
    projector has rank ``T - M``) and for any two joint blocks that share a
    user's codeword, so multiuser alphabets always score 0.  The summary
    therefore also reports the worst-pair ``trace(L_ij) / N``, which is
    ``E_h[h^H L_ij h]`` under unit-variance channel entries.
    """
    K = alphabet.K
    if K > MAX_QUALITY_K:
        raise AlphabetTooLarge(f"K={K} exceeds {MAX_QUALITY_K} for pairwise analysis")
    if K < 2:
        raise ValueError("need at least two codewords")
    if Phi is None:
        lam, tr = _white_pair_stats(alphabet.codewords, sigma2)
    else:
        lam = np.empty((K, K))
        tr = np.empty((K, K))
        for i in range(K):
            for j in range(K):
                if i != j:
                    rep = compute_L(alphabet.codewords[i], alphabet.codewords[j], N, Phi,
                                    pair=(i, j))
                    lam[i, j] = rep.lambda_min
                    tr[i, j] = np.trace(rep.L).real / N
    off = ~np.eye(K, dtype=bool)
    vals = lam[off]
    vals = np.where((vals < 0) & (vals >= -CLAMP_TOL), 0.0, vals)
    traces = tr[off]
    worst = int(np.argmin(vals))
    pairs = np.argwhere(off)
    counts, edges = np.histogram(vals, bins=bins)
    return {
        "lambda_min_min": float(vals[worst]),
        "worst_pair": [int(pairs[worst][0]), int(pairs[worst][1])],
        "lambda_min_mean": float(np.mean(vals)),
        "trace_min": float(np.min(traces)),
        "trace_worst_pair": [int(v) for v in pairs[int(np.argmin(traces))]],
        "histogram_bins": [{"lo": float(lo), "hi": float(hi), "count": int(c)}
                           for lo, hi, c in zip(edges[:-1], edges[1:], counts)],
        "pairs": int(vals.size),
    }


@dataclass
class PairwiseMonteCarlo:
    """Paired Monte-Carlo estimates for one ordered pair."""

    trials: int
    errors: int
    approx: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)

    @property
    def rate(self) -> float:
        return self.errors / self.trials

    @property
    def rate_se(self) -> float:
        p = self.rate
        return math.sqrt(max(p * (1 - p), 0.0) / self.trials)

    @property
    def approx_mean(self) -> float:
        return float(np.mean(self.approx))

    @property
    def upper_mean(self) -> float:
        return float(np.mean(self.upper))

    @property
    def upper_se(self) -> float:
        return float(np.std(self.upper, ddof=1) / math.sqrt(self.upper.size))


def pairwise_monte_carlo(alphabet: JointAlphabet, pair: tuple[int, int], noise: NoiseSpec,
                         model: ChannelModel, trials: int, rng: np.random.Generator,
                         N: int | None = None, chunk: int = 50_000) -> PairwiseMonteCarlo:
    """Send ``X_i`` ``trials`` times through fresh channels, run the GLRT over
    ``{X_i, X_j}``, and evaluate the approximation and bound on the same draws."""
    i, j = pair
    sub = alphabet.subset([i, j])
    Xi = sub.codewords[0]
    T, M = Xi.shape
    if N is None:
        raise ValueError("number of receive antennas N is required")
    cfg = SystemConfig(M=M, N=N, T=T, J=1, alpha=(float(T) / M,) * M)
    report = compute_L(Xi, sub.codewords[1], N, noise.Phi, noise.sigma2, pair)
    errors = 0
    approx, upper = [], []
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        H = sample_channels(model, cfg, rng, n)
        Y = Xi @ H + sample_noise(noise, rng, n, T, N)
        errors += int(np.count_nonzero(glrt_detect_batch(Y, sub, noise) == 1))
        h = np.swapaxes(H, -1, -2).reshape(n, -1)  # column-major vec of each H
        quad = np.maximum(np.einsum("bi,ij,bj->b", h.conj(), report.L, h).real, 0.0)
        approx.append(q_function(np.sqrt(quad / 2.0)))
        upper.append(q_function(np.linalg.norm(h, axis=1) * math.sqrt(report.lambda_min / 2.0)))
        done += n
    return PairwiseMonteCarlo(trials, errors, np.concatenate(approx), np.concatenate(upper))


def empirical_pairwise_error(alphabet: JointAlphabet, pair: tuple[int, int], noise: NoiseSpec,
                             model: ChannelModel, trials: int, rng: np.random.Generator,
                             N: int = 1) -> float:
    """Frequency with which the GLRT restricted to the pair picks ``j`` when
    ``i`` was sent."""
    return pairwise_monte_carlo(alphabet, pair, noise, model, trials, rng, N).rate
