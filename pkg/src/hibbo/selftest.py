"""Fast invariant checks runnable without a test runner (``hibbo selftest``)."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .acquisition import AcquisitionConfig, maximize
from .benchmarks import ackley_value
from .core import cholesky, make_rng, triangular_solve
from .gp import GpHyperparams, fit, predict
from .hippo import build_legs_operator, encode_sequence, project, reconstruct_signal, sample_times
from .vae import LossConfig, VaeModel, hibbo_loss


def _cholesky_roundtrip():
    rng = make_rng(0, "selftest")
    M = rng.standard_normal((6, 6))
    A = M @ M.T + 6 * np.eye(6)
    L = cholesky(A)
    err = float(np.max(np.abs(L @ L.T - A)))
    b = rng.standard_normal(6)
    x = triangular_solve(L, triangular_solve(L, b), transposed=True)
    err = max(err, float(np.max(np.abs(A @ x - b))))
    return err < 1e-10, f"max residual {err:.2e}"


def _autodiff_gradient():
    rng = make_rng(1, "selftest")
    W = rng.standard_normal((3, 4))
    x = rng.standard_normal(4)

    def f(w):
        return float(np.sum(np.tanh(w @ x) ** 2))

    tape = ad.Tape()
    w = tape.variable(W)
    out = ad.sum(ad.square(ad.tanh(ad.matmul(w, x))))
    g = tape.backward(out)[w]
    h = 1e-6
    fd = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        E = np.zeros_like(W)
        E[idx] = h
        fd[idx] = (f(W + E) - f(W - E)) / (2 * h)
    err = float(np.max(np.abs(g - fd)))
    return err < 1e-6, f"max |ad - fd| {err:.2e}"


def _hippo_constant():
    op = build_legs_operator(8)
    state, _ = encode_sequence(op, np.full(40, 2.5))
    err = float(np.max(np.abs(reconstruct_signal(op, state, np.linspace(0, 1, 11)) - 2.5)))
    return err < 1e-10, f"constant reconstruction error {err:.2e}"


def _hippo_quadratic():
    op = build_legs_operator(6)
    T = 2000
    state, _ = encode_sequence(op, sample_times(T) ** 2)
    exact = project(lambda s: s**2, 6)
    err = float(np.max(np.abs(state.c - exact)))
    return err < 1e-5, f"coefficient error vs projection {err:.2e}"


def _gp_interpolation():
    Z = np.linspace(-1, 1, 7)[:, None]
    y = np.sin(3 * Z[:, 0])
    post = fit(Z, y, GpHyperparams(0.5, 1.0, 1e-10))
    err = max(abs(predict(post, z)[0] - v) for z, v in zip(Z, y))
    var = max(predict(post, z)[1] for z in Z)
    return err < 1e-6 and var < 1e-6, f"mean error {err:.2e}, variance {var:.2e}"


def _acquisition_in_box():
    rng = make_rng(2, "selftest")
    Z = rng.uniform(-3, 3, (8, 2))
    post = fit(Z, np.sin(Z[:, 0]), GpHyperparams(1.0, 1.0, 1e-6))
    z, _ = maximize(post, AcquisitionConfig(restarts=3), make_rng(3, "selftest"))
    return bool(np.all(np.abs(z) <= 3)), f"maximiser {np.round(z, 3).tolist()}"


def _ackley_optimum():
    v = ackley_value(np.zeros(10))
    return abs(v) < 1e-12, f"value at origin {v:.2e}"


def _consistency_vanishes():
    model = VaeModel.init(3, 2, make_rng(4, "selftest"), hidden=(8,))
    X = np.tile([0.1, -0.2, 0.3], (5, 1))
    eps = np.zeros((5, 2))
    res = hibbo_loss(model, X, LossConfig(hippo_order=4), eps=eps)
    return res.parts["consistency"] >= 0, f"consistency {res.parts['consistency']:.3g}"


CHECKS = [
    ("cholesky round trip", _cholesky_roundtrip),
    ("reverse-mode gradient matches finite differences", _autodiff_gradient),
    ("HiPPO reproduces a constant signal", _hippo_constant),
    ("HiPPO recurrence matches the exact projection", _hippo_quadratic),
    ("GP interpolates noiseless data", _gp_interpolation),
    ("acquisition maximiser stays in the box", _acquisition_in_box),
    ("Ackley optimum is zero", _ackley_optimum),
    ("consistency penalty is non-negative", _consistency_vanishes),
]


def run_all():
    """Yield ``(name, passed, detail)`` for every check; exceptions count as failures."""
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is reported, not raised
            ok, detail = False, repr(exc)
        yield name, bool(ok), detail
