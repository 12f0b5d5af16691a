"""Exact GP regression with an RBF kernel and constant (sample) mean."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import DimensionMismatch, HibboError, NotPositiveDefinite, cholesky_jittered, triangular_solve
from .vae import encode_mean

log = logging.getLogger(__name__)


class EmptyGrid(HibboError, ValueError):
    pass


class EmptyProbeSet(HibboError, ValueError):
    pass


@dataclass(frozen=True)
class GpHyperparams:
    lengthscale: float = 1.0
    signal_var: float = 1.0
    noise_var: float = 1e-6

    def __post_init__(self):
        if self.lengthscale <= 0 or self.signal_var <= 0 or self.noise_var < 0:
            raise ValueError(f"invalid hyperparameters {self}")


@dataclass(frozen=True)
class GridSpec:
    lengthscales: Sequence[float] = (0.1, 0.25, 0.5, 1.0, 2.0, 4.0)
    signal_vars: Sequence[float] = (0.5, 1.0, 2.0)
    noise_vars: Sequence[float] = (1e-6, 1e-3, 1e-2, 1e-1)

    def cells(self):
        for ls, sf, sn in itertools.product(self.lengthscales, self.signal_vars, self.noise_vars):
            yield GpHyperparams(float(ls), float(sf), float(sn))


@dataclass
class GpPosterior:
    Z: np.ndarray
    y: np.ndarray
    hyper: GpHyperparams
    L: np.ndarray
    alpha: np.ndarray
    mean: float
    jitter: float = 0.0
    # raw negative variances seen by predict before the floor at zero
    clamp_events: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.Z.shape[1]


def rbf_kernel(a, b, h: GpHyperparams) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"kernel arguments differ in shape: {a.shape} vs {b.shape}")
    return float(h.signal_var * np.exp(-np.sum((a - b) ** 2) / (2 * h.lengthscale**2)))


def kernel_matrix(A, B, h: GpHyperparams) -> np.ndarray:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"inputs have dimensions {A.shape[1]} and {B.shape[1]}")
    sq = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return h.signal_var * np.exp(-np.maximum(sq, 0.0) / (2 * h.lengthscale**2))


def _check_data(Z, y):
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != y.shape[0] or y.size == 0:
        raise DimensionMismatch(f"need matching nonempty data, got {Z.shape[0]} inputs and {y.size} targets")
    return Z, y


def fit(Z, y, h: GpHyperparams) -> GpPosterior:
    """Condition the GP on data; jitter is added only if the factorisation fails."""
    Z, y = _check_data(Z, y)
    if h.noise_var == 0 and len(np.unique(Z, axis=0)) < len(Z):
        # exactly singular; jitter would only hide it
        raise NotPositiveDefinite("duplicate inputs with zero noise variance")
    K = kernel_matrix(Z, Z, h) + h.noise_var * np.eye(len(y))
    L, jitter = cholesky_jittered(K)
    if jitter:
        log.debug("gp fit needed jitter %.3g", jitter)
    m = float(np.mean(y))
    alpha = triangular_solve(L, triangular_solve(L, y - m), transposed=True)
    return GpPosterior(Z, y, h, L, alpha, m, jitter)


def predict_batch(post: GpPosterior, Zs) -> tuple[np.ndarray, np.ndarray]:
    Zs = np.atleast_2d(np.asarray(Zs, dtype=np.float64))
    if Zs.shape[1] != post.dim:
        raise DimensionMismatch(f"posterior is over {post.dim}-d inputs, got {Zs.shape[1]}")
    Ks = kernel_matrix(Zs, post.Z, post.hyper)
    mean = post.mean + Ks @ post.alpha
    V = triangular_solve(post.L, Ks.T)
    var = post.hyper.signal_var - np.sum(V * V, axis=0)
    negative = var < 0
    if np.any(negative):
        post.clamp_events.extend(var[negative].tolist())
        var = np.where(negative, 0.0, var)
    return mean, var


def predict(post: GpPosterior, z) -> tuple[float, float]:
    """Posterior mean and (non-negative) variance at a single point."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionMismatch(f"expected a single point, got shape {z.shape}")
    mean, var = predict_batch(post, z[None, :])
    return float(mean[0]), float(var[0])


def log_marginal_likelihood(Z, y, h: GpHyperparams) -> float:
    post = fit(Z, y, h)
    r = post.y - post.mean
    n = len(r)
    return float(-0.5 * r @ post.alpha - np.sum(np.log(np.diag(post.L))) - 0.5 * n * np.log(2 * np.pi))


def select_hyperparams(Z, y, grid: GridSpec = GridSpec()) -> GpHyperparams:
    """Grid argmax of the log marginal likelihood.

    Ties go to the smaller lengthscale, then the smaller noise variance.
    Cells whose kernel matrix cannot be factorised are skipped.
    """
    cells = list(grid.cells())
    if not cells:
        raise EmptyGrid("hyperparameter grid has no cells")
    best, best_key = None, None
    for h in cells:
        try:
            lml = log_marginal_likelihood(Z, y, h)
        except HibboError:
            continue
        key = (-lml, h.lengthscale, h.noise_var)
        if best_key is None or key < best_key:
            best, best_key = h, key
    if best is None:
        raise EmptyGrid("no grid cell gave a positive definite kernel matrix")
    return best


@dataclass(frozen=True)
class Mismatch:
    delta_mean: float
    delta_kernel: float


def median_pairwise_distance(X) -> float:
    X = np.atleast_2d(X)
    d = np.sqrt(np.maximum(np.sum(X**2, 1)[:, None] + np.sum(X**2, 1)[None, :] - 2 * X @ X.T, 0))
    iu = np.triu_indices(len(X), 1)
    return float(np.median(d[iu])) if iu[0].size else 1.0


def mismatch_diagnostics(
    encoder,
    post: GpPosterior,
    probes,
    objective: Callable[[np.ndarray], float],
    reference: GpHyperparams | None = None,
) -> Mismatch:
    """Mean and kernel discrepancy between the latent GP and the input space.

    ``encoder`` is a :class:`~hibbo.vae.VaeModel` (its deterministic mean is
    used) or any callable mapping a batch of inputs to latents. The mean
    discrepancy compares the posterior mean at the encoded probes with the
    true objective. The kernel discrepancy compares the posterior kernel on
    encoded probe pairs with an RBF on the raw probes; by default that
    reference shares the posterior's signal variance and uses the median
    pairwise probe distance as lengthscale.
    """
    X = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if X.shape[0] == 0 or X.size == 0:
        raise EmptyProbeSet("probe set is empty")
    if callable(encoder):
        Zp = np.atleast_2d(encoder(X))
    else:
        Zp = encode_mean(encoder, X)
    mean, _ = predict_batch(post, Zp)
    f = np.array([objective(x) for x in X])
    delta_mean = float(np.mean(np.abs(mean - f)))
    if X.shape[0] < 2:
        return Mismatch(delta_mean, 0.0)
    if reference is None:
        reference = GpHyperparams(median_pairwise_distance(X), post.hyper.signal_var, 0.0)
    iu = np.triu_indices(X.shape[0], 1)
    kz = kernel_matrix(Zp, Zp, post.hyper)[iu]
    kx = kernel_matrix(X, X, reference)[iu]
    return Mismatch(delta_mean, float(np.mean(np.abs(kz - kx))))
