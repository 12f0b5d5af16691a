"""MLP variational autoencoder with the HiPPO space-consistency loss.

The loss for an ordered dataset ``X`` (rows in acquisition order) is

    mean_i w_i |x_i - dec(z_i)|  +  mean_i KL_i  +  lam * mean_i |c_i - cbar_i|_F

where ``z_i = mu_i + sigma_i * eps_i``, ``c`` / ``cbar`` are the LegS
trajectories of ``X`` and of the deterministic reconstructions ``dec(mu_i)``,
and ``w`` are optional rank weights (all ones unless reweighting is on).
``lam = 0`` gives the plain ELBO.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .core import DimensionMismatch, HibboError
from .hippo import DEFAULT_ORDER, sequence_gram

log = logging.getLogger(__name__)

LOG_SIGMA_MIN, LOG_SIGMA_MAX = -6.0, 3.0
DEFAULT_HIDDEN = (50, 50, 50, 50, 50)
CHECKPOINT_VERSION = 1


class EmptyDataset(HibboError, ValueError):
    pass


class NonFiniteLoss(HibboError, FloatingPointError):
    pass


Layer = tuple[np.ndarray, np.ndarray]


@dataclass
class VaeModel:
    """Encoder ``d -> hidden -> (mu, log_sigma)`` and mirrored decoder ``d' -> hidden -> d``.

    Hidden layers use tanh. The decoder output is linear or, for data in
    [0, 1], a sigmoid.
    """

    encoder: list[Layer]
    mu_head: Layer
    log_sigma_head: Layer
    decoder: list[Layer]
    output: str = "linear"

    @property
    def input_dim(self) -> int:
        return (self.encoder[0][0] if self.encoder else self.mu_head[0]).shape[0]

    @property
    def latent_dim(self) -> int:
        return self.mu_head[0].shape[1]

    @classmethod
    def init(cls, input_dim: int, latent_dim: int, rng: np.random.Generator, hidden=DEFAULT_HIDDEN, output="linear"):
        """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        if latent_dim >= input_dim:
            raise ValueError(f"latent dim {latent_dim} must be below input dim {input_dim}")
        if output not in ("linear", "sigmoid"):
            raise ValueError(f"unknown output activation {output!r}")

        def layer(n_in, n_out):
            bound = 1.0 / np.sqrt(n_in)
            return rng.uniform(-bound, bound, (n_in, n_out)), rng.uniform(-bound, bound, n_out)

        enc_sizes = [input_dim, *hidden]
        encoder = [layer(a, b) for a, b in zip(enc_sizes[:-1], enc_sizes[1:])]
        mu_head = layer(enc_sizes[-1], latent_dim)
        log_sigma_head = layer(enc_sizes[-1], latent_dim)
        dec_sizes = [latent_dim, *reversed(hidden), input_dim]
        decoder = [layer(a, b) for a, b in zip(dec_sizes[:-1], dec_sizes[1:])]
        return cls(encoder, mu_head, log_sigma_head, decoder, output)

    @classmethod
    def zeros(cls, input_dim: int, latent_dim: int, hidden=DEFAULT_HIDDEN, output="linear"):
        model = cls.init(input_dim, latent_dim, np.random.default_rng(0), hidden, output)
        return model.with_parameters([np.zeros_like(p) for p in model.parameters()])

    def parameters(self) -> list[np.ndarray]:
        layers = [*self.encoder, self.mu_head, self.log_sigma_head, *self.decoder]
        return [p for layer in layers for p in layer]

    def with_parameters(self, params) -> VaeModel:
        params = [np.array(p, dtype=np.float64) for p in params]
        it = iter(zip(params[0::2], params[1::2]))
        encoder = [next(it) for _ in self.encoder]
        mu_head, log_sigma_head = next(it), next(it)
        decoder = [next(it) for _ in self.decoder]
        return VaeModel(encoder, mu_head, log_sigma_head, decoder, self.output)

    def copy(self) -> VaeModel:
        return self.with_parameters(self.parameters())

    def save(self, path) -> None:
        arrays = {f"p{i:03d}": p for i, p in enumerate(self.parameters())}
        np.savez(
            path,
            version=np.array(CHECKPOINT_VERSION),
            output=np.array(self.output),
            n_encoder=np.array(len(self.encoder)),
            n_decoder=np.array(len(self.decoder)),
            **arrays,
        )

    @classmethod
    def load(cls, path) -> VaeModel:
        with np.load(path) as data:
            if int(data["version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
            n_enc, n_dec = int(data["n_encoder"]), int(data["n_decoder"])
            params = [data[f"p{i:03d}"] for i in range(2 * (n_enc + n_dec + 2))]
            output = str(data["output"])
        pairs = list(zip(params[0::2], params[1::2]))
        return cls(pairs[:n_enc], pairs[n_enc], pairs[n_enc + 1], pairs[n_enc + 2 :], output)


def _split(model: VaeModel, params):
    """Regroup a flat parameter list (arrays or nodes) into layers."""
    pairs = list(zip(params[0::2], params[1::2]))
    n_enc = len(model.encoder)
    return pairs[:n_enc], pairs[n_enc], pairs[n_enc + 1], pairs[n_enc + 2 :]


def _encoder_forward(model: VaeModel, params, X):
    encoder, mu_head, ls_head, _ = _split(model, params)
    h = X
    for W, b in encoder:
        h = ad.tanh(h @ W + b)
    mu = h @ mu_head[0] + mu_head[1]
    log_sigma = ad.clip(h @ ls_head[0] + ls_head[1], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return mu, log_sigma


def _decoder_forward(model: VaeModel, params, Z):
    *_, decoder = _split(model, params)
    h = Z
    for W, b in decoder[:-1]:
        h = ad.tanh(h @ W + b)
    W, b = decoder[-1]
    out = h @ W + b
    return ad.sigmoid(out) if model.output == "sigmoid" else out


def _check_inputs(model: VaeModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-1] != model.input_dim:
        raise DimensionMismatch(f"model expects inputs of length {model.input_dim}, got {X.shape[-1]}")
    return X


def encode(model: VaeModel, x, rng: np.random.Generator | None = None, deterministic: bool = False):
    """Encode one point: returns ``(z, mu, log_sigma)``.

    With ``deterministic=True`` (or no rng) ``z = mu``; otherwise one
    reparameterised draw ``z = mu + exp(log_sigma) * eps``.
    """
    X = _check_inputs(model, x)
    mu, log_sigma = _encoder_forward(model, model.parameters(), X)
    if deterministic or rng is None:
        z = mu
    else:
        z = mu + np.exp(log_sigma) * rng.standard_normal(mu.shape)
    if np.ndim(x) == 1:
        return z[0], mu[0], log_sigma[0]
    return z, mu, log_sigma


def encode_mean(model: VaeModel, X) -> np.ndarray:
    """Deterministic latents (encoder means) for a batch of inputs."""
    return _encoder_forward(model, model.parameters(), _check_inputs(model, X))[0]


def decode(model: VaeModel, z) -> np.ndarray:
    Z = np.asarray(z, dtype=np.float64)
    single = Z.ndim == 1
    Z = Z[None, :] if single else Z
    if Z.shape[-1] != model.latent_dim:
        raise DimensionMismatch(f"model expects latents of length {model.latent_dim}, got {Z.shape[-1]}")
    out = _decoder_forward(model, model.parameters(), Z)
    return out[0] if single else out


@dataclass(frozen=True)
class LossConfig:
    recon_weight: float = 1.0
    kl_weight: float = 1.0
    consistency_weight: float = 1.0
    hippo_order: int = DEFAULT_ORDER
    reweigh: bool = False
    reweigh_temperature: float = 1e-3
    squared_recon: bool = False

    def __post_init__(self):
        for name in ("recon_weight", "kl_weight", "consistency_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.hippo_order < 1:
            raise ValueError("hippo_order must be positive")
        if self.reweigh_temperature <= 0:
            raise ValueError("reweigh_temperature must be positive")


@dataclass
class LossResult:
    value: float
    grads: list[np.ndarray]
    parts: dict[str, float] = field(default_factory=dict)


def reweigh_weights(y, temperature: float) -> np.ndarray:
    """Rank weights ``w_i ~ 1 / (temperature * N + rank_i)``, normalised to mean 1.

    Rank 0 is the best (largest) objective value; tied values share the
    average of their ranks.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise EmptyDataset("no objective values to weight")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    ranks = rankdata(-y, method="average") - 1.0
    w = 1.0 / (temperature * y.size + ranks)
    return w / w.mean()


def draw_noise(model: VaeModel, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, model.latent_dim))


def hibbo_loss(
    model: VaeModel,
    X,
    config: LossConfig = LossConfig(),
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
    weights=None,
) -> LossResult:
    """Loss and parameter gradients for one full-batch pass over ``X``.

    ``eps`` fixes the reparameterisation noise (shape N x latent); otherwise it
    is drawn from ``rng``; with neither, the encoder mean is used.
    """
    X = _check_inputs(model, X)
    n = X.shape[0]
    if n == 0:
        raise EmptyDataset("dataset is empty")
    if eps is None and rng is not None:
        eps = draw_noise(model, n, rng)

    tape = ad.Tape()
    params = [tape.variable(p) for p in model.parameters()]
    mu, log_sigma = _encoder_forward(model, params, X)
    z = mu if eps is None else mu + ad.exp(log_sigma) * eps
    Xbar = _decoder_forward(model, params, z)
    diff = X - Xbar

    sq = ad.sum(ad.square(diff), axis=1)
    per_point = sq if config.squared_recon else ad.sqrt(sq)
    if weights is not None:
        per_point = per_point * np.asarray(weights, dtype=np.float64)
    recon = ad.mean(per_point)
    # closed-form KL[N(mu, sigma^2) || N(0, I)], summed over latent dims
    kl = ad.mean(0.5 * ad.sum(ad.exp(2.0 * log_sigma) + ad.square(mu) - 1.0 - 2.0 * log_sigma, axis=1))
    loss = config.recon_weight * recon + config.kl_weight * kl
    parts = {"recon": float(recon.value), "kl": float(kl.value)}

    if config.consistency_weight > 0:
        # the memories compare X with its deterministic reconstruction dec(mu)
        det_diff = diff if eps is None else X - _decoder_forward(model, params, mu)
        consistency = _consistency(det_diff, config.hippo_order)
        loss = loss + config.consistency_weight * consistency
        parts["consistency"] = float(consistency.value)

    grads = tape.backward(loss)
    return LossResult(float(loss.value), [grads[p] for p in params], parts)


def elbo_loss(model: VaeModel, X, rng=None, eps=None, weights=None, squared_recon: bool = False) -> LossResult:
    """Reconstruction norm plus KL to the standard normal prior."""
    config = LossConfig(consistency_weight=0.0, squared_recon=squared_recon)
    return hibbo_loss(model, X, config, rng=rng, eps=eps, weights=weights)


def _consistency(diff, order: int):
    """Mean over steps of ``|c_i - cbar_i|_F`` for the trajectories of X and Xbar.

    The recurrence is linear, so ``c_i - cbar_i`` is the trajectory of the
    difference sequence; its squared norm is read off the Gram matrix of
    the difference rows.
    """
    n = diff.shape[0]
    Q = sequence_gram(order, n)
    gram = diff @ diff.T
    sq_norms = Q @ ad.reshape(gram, (n * n,))
    return ad.mean(ad.sqrt(sq_norms))


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list | None = None
    v: list | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.step_count, 1 - b2**self.step_count
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


def train(
    model: VaeModel,
    X,
    y=None,
    config: LossConfig = LossConfig(),
    epochs: int = 10,
    rng: np.random.Generator | None = None,
    lr: float = 1e-3,
) -> tuple[VaeModel, list[float]]:
    """Full-batch Adam on the loss; one noise draw per point per epoch.

    Returns the updated model (the input is not modified) and the loss
    recorded at each epoch before its update.
    """
    X = _check_inputs(model, X)
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    weights = None
    if config.reweigh:
        if y is None:
            raise ValueError("reweighting needs objective values")
        weights = reweigh_weights(y, config.reweigh_temperature)
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = Adam(lr=lr)
    params = model.parameters()
    trace = []
    for epoch in range(epochs):
        current = model.with_parameters(params)
        result = hibbo_loss(current, X, config, eps=draw_noise(model, X.shape[0], rng), weights=weights)
        if not np.isfinite(result.value) or not all(np.all(np.isfinite(g)) for g in result.grads):
            raise NonFiniteLoss(f"non-finite loss at epoch {epoch}: {result.value} ({result.parts})")
        trace.append(result.value)
        params = opt.step(params, result.grads)
    log.debug("trained %d epochs, loss %s", epochs, trace[-1] if trace else None)
    return model.with_parameters(params), trace


def with_consistency(config: LossConfig, weight: float) -> LossConfig:
    return replace(config, consistency_weight=weight)
