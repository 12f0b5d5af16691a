"""Dense linear algebra helpers and seeded random streams.

All arrays are float64 numpy arrays. Matrices are 2-d, vectors 1-d.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.linalg import solve_triangular

JITTER_LADDER = (1e-10, 1e-6, 1e-4)


class HibboError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(HibboError):
    pass


class SingularDiagonal(HibboError):
    pass


class DimensionMismatch(HibboError, ValueError):
    pass


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises NotPositiveDefinite when a leading minor is not positive, which
    callers treat as a request for more diagonal jitter.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("cholesky needs a symmetric matrix")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def cholesky_jittered(a, ladder=JITTER_LADDER) -> tuple[np.ndarray, float]:
    """Cholesky with escalating diagonal jitter.

    Tries the bare matrix first, then each jitter in `ladder` (scaled by the
    mean diagonal). Returns the factor and the jitter actually added.
    """
    a = as_matrix(a)
    try:
        return cholesky(a), 0.0
    except NotPositiveDefinite:
        pass
    scale = float(np.mean(np.diag(a))) if a.size else 1.0
    scale = scale if scale > 0 else 1.0
    eye = np.eye(a.shape[0])
    for jitter in ladder:
        try:
            return cholesky(a + jitter * scale * eye), jitter * scale
        except NotPositiveDefinite:
            continue
    raise NotPositiveDefinite(f"not positive definite even with jitter {ladder[-1]:g}")


def triangular_solve(l, b, transposed: bool = False) -> np.ndarray:
    """Solve ``l @ y = b`` (or ``l.T @ y = b``) for lower-triangular ``l``."""
    l = as_matrix(l)
    b = np.asarray(b, dtype=np.float64)
    if l.shape[0] != l.shape[1] or b.shape[0] != l.shape[0]:
        raise DimensionMismatch(f"cannot solve {l.shape} system with rhs {b.shape}")
    if np.any(np.abs(np.diag(l)) < 1e-14):
        raise SingularDiagonal("triangular matrix has a (near) zero diagonal entry")
    return solve_triangular(l, b, lower=True, trans="T" if transposed else "N", check_finite=False)


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def make_rng(seed: int, *labels: str) -> np.random.Generator:
    """PCG64 stream derived from a root seed by a fixed labelled split.

    ``make_rng(s, "init")`` and ``make_rng(s, "acquisition", "3")`` are
    independent streams that are reproducible from ``s`` alone.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_key(lab) for lab in labels))
    return np.random.Generator(np.random.PCG64(ss))
