"""Seedable random streams and the small dense linear algebra used everywhere.

All arithmetic is float64 / complex128.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFinite, NonHermitian, NotPsd, Singular

HERMITIAN_TOL = 1e-9
SINGULAR_RTOL = 1e-12
PIVOT_TOL = 1e-12


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator keyed by ``(seed, *stream)``.

    Streams with different ids are statistically independent, and the same
    key always yields the same sequence (PCG64 and SeedSequence are fully
    specified, so this holds across platforms).
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def sample_standard_complex_gaussian(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """i.i.d. CN(0, 1) entries: real and imaginary parts each have variance 1/2."""
    if any(s < 1 for s in shape):
        raise ValueError(f"shape entries must be >= 1, got {shape}")
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


def _check_square_finite(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFinite("matrix has non-finite entries")
    return A


def _check_hermitian(A: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
        raise NonHermitian("matrix is not Hermitian within tolerance")


def hermitian_min_eigenvalue(A: np.ndarray) -> float:
    A = _check_square_finite(A)
    _check_hermitian(A)
    Ah = 0.5 * (A + A.conj().T)
    return float(np.linalg.eigvalsh(Ah)[0])


def solve_hermitian_psd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` for Hermitian positive definite ``A``.

    Raises :class:`Singular` when the smallest eigenvalue falls below
    ``1e-12`` times the largest; use :func:`pseudo_solve` as the fallback.
    """
    A = _check_square_finite(A)
    _check_hermitian(A)
    B = np.asarray(B)
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"B has {B.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
    Ah = 0.5 * (A + A.conj().T)
    w, V = np.linalg.eigh(Ah)
    if w[-1] <= 0 or w[0] < SINGULAR_RTOL * w[-1]:
        raise Singular(f"eigenvalue ratio {w[0]:.3e}/{w[-1]:.3e} below {SINGULAR_RTOL}")
    shape = (-1,) + (1,) * (B.ndim - 1)

    def apply_inverse(R):
        return V @ ((V.conj().T @ R) / w.reshape(shape))

    X = apply_inverse(B)
    # one refinement step trims the residual on ill-conditioned inputs
    return X + apply_inverse(B - A @ X)


def pseudo_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution of ``A X = B``."""
    return np.linalg.lstsq(A, B, rcond=None)[0]


def cholesky_psd(A: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^H = A`` for Hermitian PSD ``A``.

    Unlike ``np.linalg.cholesky`` this accepts singular PSD input: a column
    whose pivot is within ``PIVOT_TOL`` of zero is set to zero.
    """
    A = _check_square_finite(A)
    _check_hermitian(A)
    n = A.shape[0]
    scale = max(1.0, float(np.max(np.abs(A)))) if n else 1.0
    L = np.zeros_like(A)
    for j in range(n):
        pivot = (A[j, j] - np.vdot(L[j, :j], L[j, :j])).real
        if pivot < -PIVOT_TOL * scale:
            raise NotPsd(f"negative pivot {pivot:.3e} at column {j}")
        if pivot <= PIVOT_TOL * scale:
            continue
        d = np.sqrt(pivot)
        L[j, j] = d
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j].conj()) / d
    return L


def exponential_correlation(n: int, rho: float) -> np.ndarray:
    """Toeplitz correlation matrix with entries ``rho ** |i - j|``."""
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
