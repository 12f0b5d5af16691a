"""HiPPO-LegS memory: operator, discretisation, online updates, reconstruction.

The LegS system keeps a degree-(order-1) scaled-Legendre summary of the whole
history of a signal. Continuous dynamics are ``dc/dt = (1/t) (A c + B x)``;
under the substitution ``u = log t`` this becomes time invariant, which is
how the default step rule discretises it:

* step 1 is the exact LegS state after one observation, ``c_1 = x_1 e_0``;
* step ``t >= 2`` is a bilinear (Tustin) step in log-time with
  ``dt = log(t / (t - 1))``.

The ``"inverse"`` rule (``dt = 1/t`` from a zero state) is kept for
comparison; it is first-order accurate only and carries a start-up transient.

Sample ``k`` of a ``T``-step sequence stands for the signal on the interval
``((k-1)/T, k/T]`` of normalised time, so a continuous signal ``f`` is best
fed as ``f((k - 0.5) / T)`` (see :func:`sample_times`).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import solve_triangular

from .core import HibboError

STEP_RULES = ("log", "inverse")
DEFAULT_ORDER = 50


class InvalidOrder(HibboError, ValueError):
    pass


class ChannelMismatch(HibboError, ValueError):
    pass


class EmptySequence(HibboError, ValueError):
    pass


class EmptyState(HibboError, ValueError):
    pass


class ShapeMismatch(HibboError, ValueError):
    pass


class OrderTooLow(HibboError, ValueError):
    pass


@dataclass(frozen=True)
class HippoOperator:
    order: int
    A: np.ndarray
    B: np.ndarray
    step_rule: str = "log"
    family: str = "LegS"


@dataclass(frozen=True)
class HippoState:
    """Coefficients ``c`` (order x channels) after ``t`` inputs."""

    c: np.ndarray
    t: int = 0

    @property
    def channels(self) -> int:
        return self.c.shape[1]

    @classmethod
    def empty(cls, order: int, channels: int) -> HippoState:
        return cls(np.zeros((order, channels)), 0)


def build_legs_operator(order: int, step_rule: str = "log") -> HippoOperator:
    """LegS transition matrices of the given order.

    ``A[n, k] = -sqrt(2n+1) sqrt(2k+1)`` below the diagonal, ``-(n+1)`` on it,
    zero above; ``B[n] = sqrt(2n+1)``.
    """
    if int(order) != order or order < 1:
        raise InvalidOrder(f"order must be a positive integer, got {order!r}")
    if step_rule not in STEP_RULES:
        raise ValueError(f"unknown step rule {step_rule!r}")
    order = int(order)
    n = np.arange(order, dtype=np.float64)
    r = np.sqrt(2 * n + 1)
    A = -np.tril(np.outer(r, r), -1) - np.diag(n + 1)
    A.setflags(write=False)
    r.setflags(write=False)
    return HippoOperator(order, A, r, step_rule)


def step_size(op: HippoOperator, t: int) -> float:
    if t < 1:
        raise ValueError("step index starts at 1")
    if op.step_rule == "inverse":
        return 1.0 / t
    return np.inf if t == 1 else float(np.log(t / (t - 1)))


def discretize_step(op: HippoOperator, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear transition ``(A_bar, B_bar)`` used to consume input number ``t``.

    ``A_bar = (I - dt/2 A)^-1 (I + dt/2 A)``, ``B_bar = (I - dt/2 A)^-1 dt B``.
    Under the log rule the first step is the exact start ``A_bar = 0``,
    ``B_bar = e_0``.
    """
    dt = step_size(op, t)
    N = op.order
    if not np.isfinite(dt):
        B_bar = np.zeros(N)
        B_bar[0] = 1.0
        return np.zeros((N, N)), B_bar
    eye = np.eye(N)
    lhs = eye - 0.5 * dt * op.A
    A_bar = solve_triangular(lhs, eye + 0.5 * dt * op.A, lower=True)
    B_bar = solve_triangular(lhs, dt * op.B, lower=True)
    return A_bar, B_bar


@lru_cache(maxsize=8)
def _transitions(order: int, step_rule: str, length: int) -> tuple[np.ndarray, np.ndarray]:
    op = build_legs_operator(order, step_rule)
    As = np.empty((length, order, order))
    Bs = np.empty((length, order))
    for t in range(1, length + 1):
        As[t - 1], Bs[t - 1] = discretize_step(op, t)
    As.setflags(write=False)
    Bs.setflags(write=False)
    return As, Bs


def hippo_step(op: HippoOperator, state: HippoState | None, x) -> HippoState:
    """Consume one input vector (one value per channel)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1:
        raise ChannelMismatch(f"input must be a vector, got shape {x.shape}")
    if state is None or (state.t == 0 and state.c.size == 0):
        state = HippoState.empty(op.order, x.shape[0])
    if state.c.shape != (op.order, x.shape[0]):
        raise ChannelMismatch(f"state has shape {state.c.shape}, input has {x.shape[0]} channels")
    A_bar, B_bar = discretize_step(op, state.t + 1)
    return HippoState(A_bar @ state.c + np.outer(B_bar, x), state.t + 1)


def encode_sequence(op: HippoOperator, xs) -> tuple[HippoState, list[HippoState]]:
    """Fold :func:`hippo_step` over ``xs``; returns the final state and trajectory."""
    xs = _as_sequence(xs)
    state = HippoState.empty(op.order, xs.shape[1])
    trajectory = []
    for x in xs:
        state = hippo_step(op, state, x)
        trajectory.append(state)
    return state, trajectory


def trajectory_coefficients(op: HippoOperator, xs) -> np.ndarray:
    """Stacked trajectory as an array of shape (steps, order, channels)."""
    xs = _as_sequence(xs)
    As, Bs = _transitions(op.order, op.step_rule, xs.shape[0])
    out = np.empty((xs.shape[0], op.order, xs.shape[1]))
    c = np.zeros((op.order, xs.shape[1]))
    for i, x in enumerate(xs):
        c = As[i] @ c + np.outer(Bs[i], x)
        out[i] = c
    return out


@lru_cache(maxsize=4)
def sequence_kernel(order: int, length: int, step_rule: str = "log") -> np.ndarray:
    """Unrolled recurrence: ``K[i, :, j]`` maps input ``j`` to state ``i``.

    The trajectory of any sequence ``X`` (length x channels) is
    ``c_i = K[i] @ X``; entries with ``j > i`` are zero.
    """
    As, Bs = _transitions(order, step_rule, length)
    K = np.zeros((length, order, length))
    for i in range(length):
        if i > 0:
            K[i, :, :i] = As[i] @ K[i - 1, :, :i]
        K[i, :, i] = Bs[i]
    K.setflags(write=False)
    return K


@lru_cache(maxsize=2)
def sequence_gram(order: int, length: int, step_rule: str = "log") -> np.ndarray:
    """``Q[i] = K[i].T @ K[i]``, flattened to shape (length, length**2).

    For a difference sequence ``D``, ``||c_i(D)||_F^2 = Q[i] . vec(D D^T)``,
    which keeps the cost independent of the channel count.
    """
    K = sequence_kernel(order, length, step_rule)
    Q = np.matmul(K.transpose(0, 2, 1), K).reshape(length, length * length)
    Q.setflags(write=False)
    return Q


def sample_times(length: int) -> np.ndarray:
    """Normalised midpoints ``(k - 0.5) / length`` of the sample intervals."""
    return (np.arange(1, length + 1) - 0.5) / length


def legendre_basis(order: int, s) -> np.ndarray:
    """Normalised shifted Legendre basis ``sqrt(2n+1) P_n(2s - 1)``, shape (points, order)."""
    s = np.asarray(s, dtype=np.float64)
    V = legendre.legvander(2.0 * s - 1.0, order - 1)
    return V * np.sqrt(2 * np.arange(order) + 1)


def project(f, order: int, quad_points: int = 256) -> np.ndarray:
    """Coefficients ``int_0^1 f(s) g_n(s) ds`` by Gauss-Legendre quadrature.

    ``f`` maps normalised time in [0, 1] to values; scalar signals give an
    (order, 1) array.
    """
    nodes, weights = legendre.leggauss(quad_points)
    s = 0.5 * (nodes + 1.0)
    vals = np.asarray(f(s), dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    G = legendre_basis(order, s)
    return 0.5 * (G * weights[:, None]).T @ vals


def reconstruct_signal(op: HippoOperator, state: HippoState, points) -> np.ndarray:
    """Evaluate the memory at normalised times ``points`` (0 = start, 1 = now)."""
    if state.t < 1:
        raise EmptyState("cannot reconstruct from a state that has seen no input")
    points = np.atleast_1d(np.asarray(points, dtype=np.float64))
    if np.any((points < 0) | (points > 1)):
        raise ValueError("query points must lie in [0, 1]")
    return legendre_basis(op.order, points) @ state.c


def hippo_distance(a: HippoState, b: HippoState) -> float:
    """Frobenius distance between two memories of equal shape."""
    if a.c.shape != b.c.shape:
        raise ShapeMismatch(f"state shapes differ: {a.c.shape} vs {b.c.shape}")
    return float(np.linalg.norm(a.c - b.c))


@dataclass(frozen=True)
class Kernel:
    """Pair kernel for the average-pair statistic.

    kind is ``"linear"`` (``a.b``), ``"polynomial"`` (``(a.b + offset)^degree``)
    or ``"rbf"`` (``exp(-|a-b|^2 / (2 lengthscale^2))``).
    """

    kind: str = "linear"
    degree: int = 1
    offset: float = 0.0
    lengthscale: float = 1.0

    def matrix(self, X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
        Y = X if Y is None else Y
        if self.kind == "linear":
            return X @ Y.T
        if self.kind == "polynomial":
            return (X @ Y.T + self.offset) ** self.degree
        if self.kind == "rbf":
            sq = np.sum(X**2, 1)[:, None] + np.sum(Y**2, 1)[None, :] - 2 * X @ Y.T
            return np.exp(-np.maximum(sq, 0) / (2 * self.lengthscale**2))
        raise ValueError(f"unknown kernel kind {self.kind!r}")

    @property
    def polynomial_degree(self) -> int | None:
        if self.kind == "linear":
            return 1
        if self.kind == "polynomial":
            return self.degree
        return None


def average_pair_kernel(xs, kernel: Kernel = Kernel()) -> float:
    """``(1/N^2) sum_m sum_n k(x_m, x_n)``; for the linear kernel this is ``|mean(x)|^2``."""
    X = _as_sequence(xs)
    return float(np.mean(kernel.matrix(X)))


@dataclass(frozen=True)
class Prop1Report:
    hippo_distance: float
    kernel_gap: float


def proposition1_check(xs, ys, order: int, degree: int = 1, offset: float = 0.0, step_rule: str = "log") -> Prop1Report:
    """HiPPO distance between two sequences and the gap in their average pair kernel.

    The kernel is polynomial of the given degree; the memory order must
    exceed it.
    """
    if order <= degree:
        raise OrderTooLow(f"order {order} must exceed kernel degree {degree}")
    op = build_legs_operator(order, step_rule)
    X, Y = _as_sequence(xs), _as_sequence(ys)
    cx, _ = encode_sequence(op, X)
    cy, _ = encode_sequence(op, Y)
    k = Kernel("polynomial", degree=degree, offset=offset)
    return Prop1Report(hippo_distance(cx, cy), abs(average_pair_kernel(X, k) - average_pair_kernel(Y, k)))


def _as_sequence(xs) -> np.ndarray:
    try:
        X = np.asarray(xs, dtype=np.float64)
    except ValueError:
        raise ChannelMismatch("sequence elements have inconsistent channel counts") from None
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ChannelMismatch(f"sequence must be (steps, channels), got shape {X.shape}")
    if X.shape[0] == 0:
        raise EmptySequence("sequence is empty")
    return X
