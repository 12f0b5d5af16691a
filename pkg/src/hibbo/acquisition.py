"""Acquisition functions over a GP posterior and their maximisation in a latent box."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import HibboError
from .gp import GpPosterior, predict_batch

GRID_LIMIT = 10**7
_INV_PHI = (math.sqrt(5) - 1) / 2


class GridTooLarge(HibboError, ValueError):
    pass


@dataclass(frozen=True)
class AcquisitionConfig:
    kind: str = "ucb"
    beta: float = 4.0
    xi: float = 0.01
    lower: float = -3.0
    upper: float = 3.0
    optimizer: str = "multistart"
    restarts: int = 10
    sweeps: int = 2
    golden_iters: int = 40
    resolution: int = 61
    threshold: float = -math.inf

    def __post_init__(self):
        if self.kind not in ("ucb", "ei"):
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        if self.optimizer not in ("multistart", "grid"):
            raise ValueError(f"unknown acquisition optimizer {self.optimizer!r}")
        if not self.lower < self.upper:
            raise ValueError("lower bound must be below upper bound")
        if self.beta < 0 or self.xi < 0:
            raise ValueError("beta and xi must be non-negative")
        if self.restarts < 1 or self.sweeps < 1 or self.resolution < 2:
            raise ValueError("need restarts >= 1, sweeps >= 1 and resolution >= 2")


def ucb_batch(post: GpPosterior, Z, beta: float) -> np.ndarray:
    mean, var = predict_batch(post, Z)
    return mean + np.sqrt(beta) * np.sqrt(var)


def ei_batch(post: GpPosterior, Z, best: float, xi: float) -> np.ndarray:
    mean, var = predict_batch(post, Z)
    return expected_improvement(mean, np.sqrt(var), best, xi)


def expected_improvement(mean, sigma, best: float, xi: float) -> np.ndarray:
    """Closed-form EI for maximisation; falls back to ``max(gain, 0)`` when sigma is ~0."""
    mean, sigma = np.asarray(mean, dtype=np.float64), np.asarray(sigma, dtype=np.float64)
    gain = mean - best - xi
    tiny = sigma < 1e-12
    safe = np.where(tiny, 1.0, sigma)
    u = gain / safe
    ei = gain * norm.cdf(u) + safe * norm.pdf(u)
    return np.where(tiny, np.maximum(gain, 0.0), np.maximum(ei, 0.0))


def ucb(post: GpPosterior, z, beta: float) -> float:
    return float(ucb_batch(post, np.atleast_2d(z), beta)[0])


def ei(post: GpPosterior, z, best: float, xi: float) -> float:
    return float(ei_batch(post, np.atleast_2d(z), best, xi)[0])


def acquisition_fn(post: GpPosterior, config: AcquisitionConfig, best: float | None = None):
    """Batch acquisition ``Z (n, d) -> values (n,)`` for the configured kind."""
    if config.kind == "ucb":
        return lambda Z: ucb_batch(post, Z, config.beta)
    best = float(np.max(post.y)) if best is None else best
    return lambda Z: ei_batch(post, Z, best, config.xi)


def grid_points(dim: int, config: AcquisitionConfig) -> np.ndarray:
    """Row-major grid (last coordinate varies fastest)."""
    if config.resolution**dim > GRID_LIMIT:
        raise GridTooLarge(f"{config.resolution}^{dim} grid points exceed {GRID_LIMIT}")
    axis = np.linspace(config.lower, config.upper, config.resolution)
    return np.array(list(itertools.product(axis, repeat=dim)))


def maximize(post: GpPosterior, config: AcquisitionConfig, rng: np.random.Generator | None = None, best=None):
    """Return ``(z, value)`` maximising the acquisition over the latent box.

    Grid mode evaluates every grid point and keeps the first maximiser in
    row-major order. Multistart mode draws ``restarts`` uniform points and
    improves each with ``sweeps`` passes of coordinate-wise golden-section
    search; the first best restart wins ties.
    """
    f = acquisition_fn(post, config, best)
    if config.optimizer == "grid":
        Z = grid_points(post.dim, config)
        values = np.concatenate([f(chunk) for chunk in np.array_split(Z, max(1, len(Z) // 4096))])
        i = int(np.argmax(values))
        return Z[i].copy(), float(values[i])
    if rng is None:
        raise ValueError("multistart maximisation needs an rng")
    Z = rng.uniform(config.lower, config.upper, (config.restarts, post.dim))
    values = f(Z)
    for _ in range(config.sweeps):
        for k in range(post.dim):
            Z, values = _coordinate_search(f, Z, values, k, config)
    i = int(np.argmax(values))
    return Z[i].copy(), float(values[i])


def _coordinate_search(f, Z, values, k, config: AcquisitionConfig):
    """Golden-section search along coordinate ``k`` for every row in lockstep."""
    lo, hi = config.lower, config.upper
    n = Z.shape[0]

    def at(coord):
        W = Z.copy()
        W[:, k] = coord
        return f(W)

    a = np.full(n, lo)
    b = np.full(n, hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = at(c), at(d)
    for _ in range(config.golden_iters):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - _INV_PHI * (b - a), d)
        new_d = np.where(left, c, a + _INV_PHI * (b - a))
        c, d = new_c, new_d
        probe = np.where(left, c, d)
        fp = at(probe)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    # compare the bracket result against both box edges and the current point
    candidates = [(c, fc), (d, fd), (np.full(n, lo), at(lo)), (np.full(n, hi), at(hi))]
    Z = Z.copy()
    values = values.copy()
    for coord, val in candidates:
        better = val > values
        Z[better, k] = coord[better]
        values = np.where(better, val, values)
    return Z, values
