"""Experiment configs, run records on disk, the fig2 demo table and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import benchmarks, bo
from .acquisition import AcquisitionConfig
from .core import HibboError
from .gp import GridSpec
from .hippo import Kernel, build_legs_operator, hippo_distance, trajectory_coefficients
from .vae import LossConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

RECORD_SUFFIX = ".jsonl"
PARTIAL_SUFFIX = ".partial"


class ConfigInvalid(HibboError, ValueError):
    pass


PROBLEM_KEYS = {"name", "dim", "side", "n_train", "data_seed"}
EXPERIMENT_KEYS = {"methods", "seeds", "out"}
BO_KEYS = {"budget", "frequency", "n_init", "latent_dim", "hidden", "epochs", "pretrain_epochs", "learning_rate"}
SECTIONS = {
    "problem": PROBLEM_KEYS,
    "experiment": EXPERIMENT_KEYS,
    "bo": BO_KEYS,
    "loss": {f.name for f in fields(LossConfig)} - {"reweigh"},
    "acquisition": {f.name for f in fields(AcquisitionConfig)},
    "gp": {f.name for f in fields(GridSpec)},
}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    methods: tuple
    seeds: tuple
    bo: bo.BoConfig
    out: Path

    def run_config(self, method: str, seed: int) -> bo.BoConfig:
        return replace(self.bo, method=method, seed=seed)

    def record_path(self, method: str, seed: int) -> Path:
        return self.out / f"{method}_seed{seed}{RECORD_SUFFIX}"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed config mapping; unknown sections or keys are rejected."""
    for section, body in raw.items():
        if section not in SECTIONS:
            raise ConfigInvalid(f"unknown section '{section}'")
        if not isinstance(body, dict):
            raise ConfigInvalid(f"section '{section}' must be a table")
        for key in body:
            if key not in SECTIONS[section]:
                raise ConfigInvalid(f"unknown key '{key}' in section [{section}]")
    problem = dict(raw.get("problem", {}))
    if "name" not in problem:
        raise ConfigInvalid("missing key 'name' in section [problem]")
    if problem["name"] not in PROBLEMS:
        raise ConfigInvalid(f"unknown problem '{problem['name']}' (key 'name')")
    exp = raw.get("experiment", {})
    methods = tuple(exp.get("methods", ["HIBBO"]))
    seeds = tuple(int(s) for s in exp.get("seeds", [0]))
    for m in methods:
        if m not in bo.METHODS:
            raise ConfigInvalid(f"unknown method '{m}' (key 'methods')")
    out = Path(exp.get("out", "runs"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    try:
        loss = LossConfig(**raw.get("loss", {}))
        acq = AcquisitionConfig(**raw.get("acquisition", {}))
        grid = GridSpec(**{k: tuple(v) for k, v in raw.get("gp", {}).items()})
        bo_raw = dict(raw.get("bo", {}))
        if "hidden" in bo_raw:
            bo_raw["hidden"] = tuple(bo_raw["hidden"])
        bo_config = bo.BoConfig(loss=loss, acquisition=acq, gp_grid=grid, **bo_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from None
    return ExperimentConfig(problem, methods, seeds, bo_config, out)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid TOML: {exc}") from None
    return parse_config(raw)


def _ackley(settings):
    return benchmarks.ackley(int(settings.get("dim", 60)))


def _shape(settings):
    return benchmarks.shape_area_problem(int(settings.get("side", 64)), int(settings.get("n_train", 200)), int(settings.get("data_seed", 0)))


def _sin_manifold(settings):
    return benchmarks.sin_manifold(int(settings.get("n_train", 64)), int(settings.get("data_seed", 0)))


PROBLEMS = {"ackley": _ackley, "shape": _shape, "sin_manifold": _sin_manifold}


def make_problem(settings: dict) -> benchmarks.BenchmarkProblem:
    return PROBLEMS[settings["name"]](settings)


# ---------------------------------------------------------------- records


def record_lines(record: bo.RunRecord, config: dict | None = None):
    header = record.header()
    if config is not None:
        header["config"] = config
    yield json.dumps(header, sort_keys=True)
    for q in record.queries:
        yield json.dumps({"type": "query", **q.to_dict()}, sort_keys=True)


def write_record(record: bo.RunRecord, path, config: dict | None = None) -> None:
    Path(path).write_text("\n".join(record_lines(record, config)) + "\n")


def read_record(path) -> bo.RunRecord:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError(f"{path} does not start with a header line")
    record = bo.RunRecord(header["problem"], header["method"], header["seed"], header["config_hash"], header["budget"])
    for line in lines[1:]:
        d = json.loads(line)
        d.pop("type")
        record.queries.append(bo.QueryRecord(**d))
    return record


def execute_one(config: ExperimentConfig, method: str, seed: int, force: bool = False) -> str:
    """Run one (method, seed) pair, streaming queries to a ``.partial`` file.

    Returns ``"done"`` or ``"skipped"``; a failure leaves the partial file.
    """
    final = config.record_path(method, seed)
    partial = final.with_name(final.name + PARTIAL_SUFFIX)
    if final.exists() and not force:
        log.info("%s exists; skipping (use --force to overwrite)", final)
        return "skipped"
    final.parent.mkdir(parents=True, exist_ok=True)
    if partial.exists():
        partial.unlink()
    run_config = config.run_config(method, seed)
    problem = make_problem(config.problem)
    meta = {"problem": config.problem, "bo": run_config.to_dict()}
    record = bo.RunRecord(problem.name, method, seed, run_config.config_hash(problem), run_config.budget)
    with open(partial, "x") as fh:
        fh.write(json.dumps({**record.header(), "config": meta}, sort_keys=True) + "\n")
        fh.flush()

        def on_query(q):
            fh.write(json.dumps({"type": "query", **q.to_dict()}, sort_keys=True) + "\n")
            fh.flush()

        result = bo.run(problem, run_config, on_query=on_query)
    log.info("%s seed %d timings: %s", method, seed, {k: round(v, 2) for k, v in result.wall_time.items()})
    os.replace(partial, final)
    return "done"


def _execute_task(args):
    config, method, seed, force = args
    try:
        return method, seed, execute_one(config, method, seed, force), None
    except Exception as exc:  # reported per task; partial output stays on disk
        return method, seed, "failed", repr(exc)


def run_experiment(config: ExperimentConfig, jobs: int = 1, force: bool = False) -> list[tuple]:
    tasks = [(config, m, s, force) for m in config.methods for s in config.seeds]
    if jobs <= 1:
        return [_execute_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_execute_task, tasks))


# ---------------------------------------------------------------- fig2 demo

FIG2_KERNEL = Kernel("polynomial", degree=1, offset=1.0)


def fig2_rows(family: str, seeds, order: int = 5):
    """Header and rows for the fig2 sequence-pair demo table (one row per time step and seed)."""
    op = build_legs_operator(order)
    n = benchmarks.FIGURE2_LENGTH
    header = (
        ["seed", "t", "x_seq", "y_seq"]
        + [f"cx_{i}" for i in range(order)]
        + [f"cy_{i}" for i in range(order)]
        + ["distance"]
        + [f"kx_{j}" for j in range(n)]
        + [f"ky_{j}" for j in range(n)]
    )
    rows = []
    for seed in seeds:
        x_seq, y_seq = benchmarks.figure2_sequences(family, seed)
        cx = trajectory_coefficients(op, x_seq)[:, :, 0]
        cy = trajectory_coefficients(op, y_seq)[:, :, 0]
        dist = np.linalg.norm(cx - cy, axis=1)
        kx = FIG2_KERNEL.matrix(x_seq[:, None])
        ky = FIG2_KERNEL.matrix(y_seq[:, None])
        for t in range(n):
            rows.append([seed, t + 1, x_seq[t], y_seq[t], *cx[t], *cy[t], dist[t], *kx[t], *ky[t]])
    return header, rows


def write_fig2(path, family: str, seeds, order: int = 5) -> str:
    if family not in benchmarks.FIGURE2_FAMILIES:
        raise ConfigInvalid(f"unknown family '{family}'")
    if order < 1:
        raise ConfigInvalid("order must be positive")
    header, rows = fig2_rows(family, seeds, order)
    config_hash = canonical_hash({"command": "fig2", "family": family, "order": order, "seeds": list(seeds)})
    buf = io.StringIO()
    buf.write(f"# hibbo fig2 family={family} order={order} seeds={','.join(map(str, seeds))} config_hash={config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([str(int(v)) if i < 2 else _fmt(v) for i, v in enumerate(row)])
    Path(path).write_text(buf.getvalue())
    return config_hash


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV written by this module (comment lines skipped)."""
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, np.array([[float(v) for v in row] for row in reader])


# ---------------------------------------------------------------- report


def load_records(directory) -> list[bo.RunRecord]:
    paths = sorted(Path(directory).glob(f"*{RECORD_SUFFIX}"))
    return [read_record(p) for p in paths]


def report(directory, out_dir=None) -> str:
    """Write ``report.csv`` and ``summary.txt`` for a run directory; returns the summary."""
    directory = Path(directory)
    out_dir = Path(out_dir) if out_dir is not None else directory
    records = load_records(directory)
    if not records:
        raise ValueError(f"no run records in {directory}")
    summary = bo.compare(records)
    hashes = sorted({r.config_hash for r in records})
    seeds = sorted({r.seed for r in records})
    out_dir.mkdir(parents=True, exist_ok=True)

    buf = io.StringIO()
    buf.write(f"# hibbo report problem={records[0].problem} config_hash={','.join(hashes)} seeds={','.join(map(str, seeds))}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "query", "median", "q25", "q75", "n_runs"])
    n = len(records[0].queries)
    for q in range(n):
        for method, s in summary.items():
            writer.writerow([method, q, _fmt(s.median[q]), _fmt(s.q25[q]), _fmt(s.q75[q]), s.n_runs])
    (out_dir / "report.csv").write_text(buf.getvalue())

    best_final = max(s.median[-1] for s in summary.values())
    lines = [
        f"problem: {records[0].problem}   evaluations: {n}   config_hash: {','.join(hashes)}",
        f"{'method':<10} {'runs':>4} {'median':>14} {'q25':>14} {'q75':>14}",
    ]
    for method, s in summary.items():
        flag = "  <- best" if s.median[-1] == best_final else ""
        lines.append(f"{method:<10} {s.n_runs:>4} {s.median[-1]:>14.6g} {s.q25[-1]:>14.6g} {s.q75[-1]:>14.6g}{flag}")
    text = "\n".join(lines) + "\n"
    (out_dir / "summary.txt").write_text(text)
    return text
