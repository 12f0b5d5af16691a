"""Latent-space Bayesian optimisation with periodic VAE retraining.

One run alternates (1) training the VAE on every observation so far, in
acquisition order, (2) re-encoding all observations with the encoder mean,
and (3) up to ``frequency`` GP/acquisition steps whose decoded proposals are
evaluated and appended. Initial samples count towards the budget.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import gp as gplib
from .acquisition import AcquisitionConfig, maximize
from .benchmarks import BenchmarkProblem
from .core import HibboError, make_rng
from .vae import DEFAULT_HIDDEN, LossConfig, VaeModel, decode, encode_mean, train

log = logging.getLogger(__name__)

METHODS = ("HIBBO", "BASE", "REWEIGH", "HIBBO_RW")


class BudgetExhaustedBeforeStart(HibboError, ValueError):
    pass


class RunFailure(HibboError, RuntimeError):
    def __init__(self, query_index: int, cause: Exception):
        super().__init__(f"run failed at query {query_index}: {cause!r}")
        self.query_index = query_index
        self.cause = cause


class MixedProblems(HibboError, ValueError):
    pass


@dataclass(frozen=True)
class BoConfig:
    budget: int = 100
    frequency: int = 5
    n_init: int = 10
    method: str = "HIBBO"
    latent_dim: int = 10
    hidden: tuple = DEFAULT_HIDDEN
    epochs: int = 10
    pretrain_epochs: int = 100
    learning_rate: float = 1e-3
    loss: LossConfig = LossConfig()
    acquisition: AcquisitionConfig = AcquisitionConfig()
    gp_grid: gplib.GridSpec = gplib.GridSpec()
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1 or self.frequency < 1 or self.n_init < 2:
            raise ValueError("need budget >= 1, frequency >= 1 and n_init >= 2")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")

    def method_loss(self) -> LossConfig:
        """Loss configuration implied by the method."""
        hippo = self.method in ("HIBBO", "HIBBO_RW")
        rw = self.method in ("REWEIGH", "HIBBO_RW")
        return replace(
            self.loss,
            consistency_weight=self.loss.consistency_weight if hippo else 0.0,
            reweigh=rw,
        )

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def config_hash(self, problem: BenchmarkProblem | None = None) -> str:
        """Hash of every setting except the seed, plus the problem identity if given."""
        d = self.to_dict()
        d.pop("seed")
        if problem is not None:
            d["problem"] = {"name": problem.name, "params": _plain(problem.params)}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclass
class QueryRecord:
    index: int
    x: list[float]
    value: float
    best_so_far: float
    phase: str  # "init" or "bo"
    round: int | None = None
    acquisition: float | None = None
    retrained: bool = False  # first query after a VAE (re)training

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunRecord:
    problem: str
    method: str
    seed: int
    config_hash: str
    budget: int
    queries: list[QueryRecord] = field(default_factory=list)
    wall_time: dict[str, float] = field(default_factory=dict)

    @property
    def best_curve(self) -> np.ndarray:
        return np.array([q.best_so_far for q in self.queries])

    @property
    def values(self) -> np.ndarray:
        return np.array([q.value for q in self.queries])

    def header(self) -> dict:
        return {
            "type": "header",
            "problem": self.problem,
            "method": self.method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "budget": self.budget,
        }

    def same_trajectory(self, other: RunRecord) -> bool:
        """Bitwise equality of every query, ignoring method, hash and timings."""
        return [q.to_dict() for q in self.queries] == [q.to_dict() for q in other.queries]


class _Timer:
    def __init__(self, sink: dict):
        self.sink = sink

    def __call__(self, phase: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.sink[phase] = timer.sink.get(phase, 0.0) + time.perf_counter() - self.t0

        return _Ctx()


def _standardize(y: np.ndarray) -> np.ndarray:
    sd = float(np.std(y))
    return (y - np.mean(y)) / (sd if sd > 0 else 1.0)


def run(
    problem: BenchmarkProblem,
    config: BoConfig,
    on_query: Callable[[QueryRecord], None] | None = None,
) -> RunRecord:
    """Execute one seeded optimisation run and return its record.

    ``on_query`` is called with every query record as soon as it exists,
    which lets callers stream results to disk.
    """
    if config.budget < config.n_init:
        raise BudgetExhaustedBeforeStart(f"budget {config.budget} is below the {config.n_init} initial samples")
    seed = config.seed
    record = RunRecord(problem.name, config.method, seed, config.config_hash(problem), config.budget)
    timer = _Timer(record.wall_time)
    loss_config = config.method_loss()

    def add(x, value, phase, round_=None, acq=None, retrained=False):
        best = value if not record.queries else max(record.queries[-1].best_so_far, value)
        q = QueryRecord(len(record.queries), [float(v) for v in x], float(value), float(best), phase, round_, acq, retrained)
        record.queries.append(q)
        if on_query is not None:
            on_query(q)

    X = problem.initial_design(config.n_init, make_rng(seed, "initial"))
    with timer("evaluate"):
        for x in X:
            add(x, problem(x), "init")
    U = problem.to_unit(X)  # data in the VAE's space, acquisition order

    model = VaeModel.init(problem.dim, config.latent_dim, make_rng(seed, "init"), config.hidden, problem.output)
    train_rng = make_rng(seed, "train")
    acq_rng = make_rng(seed, "acquisition")
    if problem.training_data is not None and config.pretrain_epochs > 0:
        with timer("train"):
            model, _ = train(
                model,
                problem.to_unit(problem.training_data),
                None,
                replace(loss_config, reweigh=False),
                config.pretrain_epochs,
                train_rng,
                config.learning_rate,
            )
        first_epochs = config.epochs
    else:
        first_epochs = config.pretrain_epochs

    rounds = math.ceil(config.budget / config.frequency)
    for j in range(1, rounds + 1):
        if len(record.queries) >= config.budget:
            break
        epochs = first_epochs if j == 1 else config.epochs
        with timer("train"):
            model, trace = train(model, U, record.values, loss_config, epochs, train_rng, config.learning_rate)
        log.debug("round %d: trained %d epochs on %d points, loss %.4g", j, epochs, len(U), trace[-1] if trace else float("nan"))
        Z = encode_mean(model, U)
        for k in range(config.frequency):
            if len(record.queries) >= config.budget:
                break
            index = len(record.queries)
            try:
                with timer("gp"):
                    y = _standardize(record.values)
                    hyper = gplib.select_hyperparams(Z, y, config.gp_grid)
                    post = gplib.fit(Z, y, hyper)
                with timer("acquisition"):
                    z_hat, acq = maximize(post, config.acquisition, acq_rng)
                if acq < config.acquisition.threshold:
                    log.info("round %d: acquisition %.4g below threshold, retraining early", j, acq)
                    break
                u_hat = decode(model, z_hat)
                x_hat = problem.from_unit(u_hat)
                with timer("evaluate"):
                    value = problem(x_hat)
            except HibboError as exc:
                raise RunFailure(index, exc) from exc
            add(x_hat, value, "bo", j, acq, retrained=(k == 0))
            u_new = problem.to_unit(x_hat)
            U = np.vstack([U, u_new])
            Z = np.vstack([Z, encode_mean(model, u_new)])
    log.info(
        "%s/%s seed %d: best %.6g after %d evaluations",
        problem.name,
        config.method,
        seed,
        record.queries[-1].best_so_far,
        len(record.queries),
    )
    return record


@dataclass
class CurveSummary:
    method: str
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    n_runs: int


def compare(records: list[RunRecord]) -> dict[str, CurveSummary]:
    """Per-method median and interquartile range of the best-so-far curves."""
    if not records:
        return {}
    problems = {r.problem for r in records}
    budgets = {len(r.queries) for r in records}
    if len(problems) > 1:
        raise MixedProblems(f"records come from different problems: {sorted(problems)}")
    if len(budgets) > 1:
        raise MixedProblems(f"records have different lengths: {sorted(budgets)}")
    out = {}
    for method in sorted({r.method for r in records}):
        curves = np.array([r.best_curve for r in records if r.method == method])
        q25, med, q75 = np.percentile(curves, [25, 50, 75], axis=0)
        out[method] = CurveSummary(method, med, q25, q75, len(curves))
    return out
