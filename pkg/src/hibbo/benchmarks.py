"""Benchmark objectives and synthetic data.

Every problem is posed for maximisation; Ackley is negated at the boundary.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import make_rng

ACKLEY_BOUND = 32.768


@dataclass
class BenchmarkProblem:
    """A black-box objective on a box, with an exact evaluation counter.

    ``output`` names the decoder squashing that suits the problem's data
    (``"linear"`` for data rescaled to [-1, 1], ``"sigmoid"`` for [0, 1]).
    ``training_data``, when present, is unlabelled data for pretraining the
    VAE; ``initial_pool`` is where the initial design is drawn from instead
    of the uniform box.
    """

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    objective: Callable[[np.ndarray], float]
    optimum: float | None = None
    output: str = "linear"
    training_data: np.ndarray | None = None
    initial_pool: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    evaluations: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.name} expects a point of shape ({self.dim},), got {x.shape}")
        value = float(self.objective(x))
        with self._lock:
            self.evaluations += 1
        return value

    def to_unit(self, X) -> np.ndarray:
        """Map problem coordinates into the VAE's data space."""
        X = np.asarray(X, dtype=np.float64)
        if self.output == "sigmoid":
            return (X - self.lower) / (self.upper - self.lower)
        return 2.0 * (X - self.lower) / (self.upper - self.lower) - 1.0

    def from_unit(self, U) -> np.ndarray:
        """Inverse of :meth:`to_unit`, clipped to the box."""
        U = np.asarray(U, dtype=np.float64)
        if self.output == "sigmoid":
            X = self.lower + U * (self.upper - self.lower)
        else:
            X = self.lower + 0.5 * (U + 1.0) * (self.upper - self.lower)
        return np.clip(X, self.lower, self.upper)

    def initial_design(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.initial_pool is not None:
            idx = rng.choice(len(self.initial_pool), size=n, replace=False)
            return self.initial_pool[idx].copy()
        return rng.uniform(self.lower, self.upper, (n, self.dim))


def ackley_value(x, a: float = 20.0, b: float = 0.2, c: float = 2 * np.pi) -> float:
    """Standard (minimisation) Ackley function; 0 at the origin."""
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    return float(-a * np.exp(-b * np.sqrt(np.sum(x * x) / d)) - np.exp(np.sum(np.cos(c * x)) / d) + a + np.e)


def ackley(d: int) -> BenchmarkProblem:
    if d < 1:
        raise ValueError("dimension must be at least 1")
    return BenchmarkProblem(
        name="ackley",
        dim=d,
        lower=np.full(d, -ACKLEY_BOUND),
        upper=np.full(d, ACKLEY_BOUND),
        objective=lambda x: -ackley_value(x),
        optimum=0.0,
        params={"dim": d},
    )


def sin_manifold_point(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.stack([np.sin(t), np.sin(2 * t), t], axis=-1)


SIN_MANIFOLD_TARGET = 2.0


def sin_manifold(n_train: int = 64, seed: int = 0) -> BenchmarkProblem:
    """3-d curve ``x = [sin t, sin 2t, t]`` for ``t`` in [0, 2 pi].

    The objective is ``-|x - x(2)|^2``, peaked on the curve at ``t = 2``.
    Training data are curve points at sorted uniform random ``t``.
    """
    rng = make_rng(seed, "sin_manifold")
    ts = np.sort(rng.uniform(0, 2 * np.pi, n_train))
    target = sin_manifold_point(SIN_MANIFOLD_TARGET)
    return BenchmarkProblem(
        name="sin_manifold",
        dim=3,
        lower=np.array([-1.0, -1.0, 0.0]),
        upper=np.array([1.0, 1.0, 2 * np.pi]),
        objective=lambda x: -float(np.sum((x - target) ** 2)),
        optimum=0.0,
        training_data=sin_manifold_point(ts),
        initial_pool=sin_manifold_point(ts),
        params={"n_train": n_train, "seed": seed},
    )


def shape_area(image) -> float:
    """Fraction of pixels at or above 0.5."""
    image = np.asarray(image, dtype=np.float64)
    return float(np.mean(image >= 0.5))


def rectangle_image(side: int, top: int, left: int, height: int, width: int) -> np.ndarray:
    img = np.zeros((side, side))
    img[top : top + height, left : left + width] = 1.0
    return img


def ellipse_image(side: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    return (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0).astype(np.float64)


def shape_dataset(side: int = 64, n: int = 200, seed: int = 0, area_range=(0.05, 0.40)) -> np.ndarray:
    """Filled rectangles and ellipses with pixel areas inside ``area_range``.

    Returns an (n, side*side) array of binary images, alternating shape kinds.
    """
    if side < 8:
        raise ValueError("image side must be at least 8")
    rng = make_rng(seed, "shapes")
    lo, hi = area_range
    total = side * side
    images = []
    while len(images) < n:
        target = rng.uniform(lo, hi) * total
        aspect = np.exp(rng.uniform(-0.7, 0.7))
        if len(images) % 2 == 0:
            h = int(round(np.sqrt(target * aspect)))
            w = int(round(target / max(h, 1)))
            if not (1 <= h <= side and 1 <= w <= side):
                continue
            img = rectangle_image(side, rng.integers(0, side - h + 1), rng.integers(0, side - w + 1), h, w)
        else:
            ry = np.sqrt(target * aspect / np.pi)
            rx = target / (np.pi * ry)
            if 2 * ry > side or 2 * rx > side:
                continue
            cy = rng.uniform(ry, side - ry)
            cx = rng.uniform(rx, side - rx)
            img = ellipse_image(side, cy, cx, ry, rx)
        if lo <= img.mean() <= hi:
            images.append(img.ravel())
    return np.array(images)


def shape_area_problem(side: int = 64, n_train: int = 200, seed: int = 0) -> BenchmarkProblem:
    """Maximise the filled area of a ``side x side`` image."""
    data = shape_dataset(side, n_train, seed)
    dim = side * side
    return BenchmarkProblem(
        name="shape",
        dim=dim,
        lower=np.zeros(dim),
        upper=np.ones(dim),
        objective=shape_area,
        optimum=1.0,
        output="sigmoid",
        training_data=data,
        initial_pool=data,
        params={"side": side, "n_train": n_train, "seed": seed},
    )


def save_pgm_dataset(images: np.ndarray, side: int, directory) -> Path:
    """Write each image as a binary PGM plus an ``index.txt`` listing files and areas."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, img in enumerate(images):
        name = f"shape_{i:05d}.pgm"
        pixels = (np.clip(img.reshape(side, side), 0, 1) * 255).round().astype(np.uint8)
        with open(directory / name, "wb") as fh:
            fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())
        lines.append(f"{name} {shape_area(img):.17g}")
    index = directory / "index.txt"
    index.write_text("\n".join(lines) + "\n")
    return index


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path} is not a binary PGM")
        w, h = map(int, fh.readline().split())
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / maxval


FIGURE2_FAMILIES = ("sin-sin", "sin-tanh", "cos-cos", "cos-tanh", "tanh-tanh", "tanh-cos")
FIGURE2_LENGTH = 50


def _base_curve(name: str, n: int) -> np.ndarray:
    if name == "sin":
        return np.sin(np.linspace(0, 2 * np.pi, n))
    if name == "cos":
        return np.cos(np.linspace(0, 2 * np.pi, n))
    if name == "tanh":
        return np.tanh(np.linspace(-3, 3, n))
    raise ValueError(f"unknown base curve {name!r}")


def figure2_sequences(family: str, seed: int, noise_x: float = 0.1, noise_y: float = 0.5, n: int = FIGURE2_LENGTH):
    """Noisy pair ``(x_seq, y_seq)``; e.g. ``"sin-tanh"`` is sin + 0.1 noise vs tanh + 0.5 noise.

    sin/cos are sampled over one period [0, 2 pi], tanh over [-3, 3].
    """
    if family not in FIGURE2_FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FIGURE2_FAMILIES}")
    first, second = family.split("-")
    rng = make_rng(seed, "figure2")
    x_seq = _base_curve(first, n) + noise_x * rng.standard_normal(n)
    y_seq = _base_curve(second, n) + noise_y * rng.standard_normal(n)
    return x_seq, y_seq
