"""Acceptance criteria, each at its stated tolerance and runtime bound.

Every test prints one ``CRITERION n: PASS/FAIL`` line, collected again in the
terminal summary.
"""

import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from hibbo import benchmarks, bo, cli, gp, hippo, vae
from hibbo.acquisition import AcquisitionConfig
from hibbo.core import make_rng

pytestmark = pytest.mark.acceptance


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


# ---------------------------------------------------------------- 1


def test_criterion_1_figure2_distances(criterion):
    op = hippo.build_legs_operator(5)

    def final_distance(family, seed):
        x, y = benchmarks.figure2_sequences(family, seed)
        return hippo.hippo_distance(hippo.encode_sequence(op, x)[0], hippo.encode_sequence(op, y)[0])

    pairs = [("sin-sin", "sin-tanh"), ("cos-cos", "cos-tanh"), ("tanh-tanh", "tanh-cos")]
    with Timer() as timer:
        rates = {
            same: np.mean([final_distance(same, s) < final_distance(other, s) for s in range(50)]) for same, other in pairs
        }
    ok = all(r >= 0.9 for r in rates.values()) and timer.seconds < 10
    detail = ", ".join(f"{k} closer in {v:.0%}" for k, v in rates.items())
    assert criterion("1", ok, f"{detail} of 50 seeds (need >= 90%); {timer.seconds:.1f}s")


# ---------------------------------------------------------------- 2


def test_criterion_2_moment_kernel_rank_correlation(criterion):
    s = hippo.sample_times(50)
    with Timer() as timer:
        distances, gaps = [], []
        for k in range(50):
            rng = make_rng(k, "prop1")

            def sequence():
                b, a = rng.uniform(-1, 1), rng.uniform(0, 1)
                f, phase = rng.uniform(0.5, 2), rng.uniform(0, 2 * np.pi)
                return b + a * np.sin(2 * np.pi * f * s + phase) + 0.1 * rng.standard_normal(50)

            report = hippo.proposition1_check(sequence(), sequence(), 5, 1, 1.0)
            distances.append(report.hippo_distance)
            gaps.append(report.kernel_gap)
        rho = spearmanr(distances, gaps).statistic
    ok = rho > 0.3 and timer.seconds < 10
    assert criterion("2", ok, f"Spearman {rho:.3f} over 50 pairs (need > 0.3); {timer.seconds:.1f}s")


# ---------------------------------------------------------------- 3


def _relative_l2(op, state, f, q):
    return np.linalg.norm(hippo.reconstruct_signal(op, state, q)[:, 0] - f(q)) / np.linalg.norm(f(q))


def test_criterion_3_hippo_fidelity(criterion):
    q = np.linspace(0, 1, 1001)
    with Timer() as timer:
        # (a) polynomials of degree < order through the online recurrence
        poly_worst = 0.0
        for order in (4, 8, 16):
            op = hippo.build_legs_operator(order)
            for degree in range(order):
                f = np.polynomial.Polynomial(make_rng(degree, "poly").standard_normal(degree + 1))
                state, _ = hippo.encode_sequence(op, f(hippo.sample_times(8000)))
                poly_worst = max(poly_worst, _relative_l2(op, state, f, q))

        # (b) sin(2 pi t) from the memory at each order
        def sine(s):
            return np.sin(2 * np.pi * s)

        exact, online = [], []
        for order in (4, 8, 16, 32):
            op = hippo.build_legs_operator(order)
            exact.append(_relative_l2(op, hippo.HippoState(hippo.project(sine, order), 1), sine, q))
            state, _ = hippo.encode_sequence(op, sine(hippo.sample_times(4000)))
            online.append(_relative_l2(op, state, sine, q))

        # (c) 50-step recurrence against the quadrature projection at order 8
        op = hippo.build_legs_operator(8)
        signals = [sine, lambda s: np.exp(-s) * np.cos(5 * s), lambda s: s**3 - s]
        online_gap = max(
            np.linalg.norm(hippo.encode_sequence(op, f(hippo.sample_times(50)))[0].c - hippo.project(f, 8))
            / np.linalg.norm(hippo.project(f, 8))
            for f in signals
        )
    ok_a = poly_worst < 1e-6
    ok_b = all(b <= a for a, b in zip(exact, exact[1:])) and exact[-1] < 0.05 and online[-1] < 0.05
    ok_c = online_gap < 0.02
    detail = (
        f"(a) worst polynomial error {poly_worst:.1e} (need < 1e-6); "
        f"(b) sine error by order 4/8/16/32 {', '.join(f'{e:.1e}' for e in exact)} "
        f"[online recurrence {', '.join(f'{e:.1e}' for e in online)}]; "
        f"(c) recurrence vs projection {online_gap:.2%} (need < 2%); {timer.seconds:.1f}s"
    )
    assert criterion("3", ok_a and ok_b and ok_c and timer.seconds < 30, detail)


# ---------------------------------------------------------------- 4


def test_criterion_4_loss_gradients(criterion):
    config = vae.LossConfig(hippo_order=5)
    h = 1e-5
    worst = 0.0
    with Timer() as timer:
        for rep in range(10):
            rng = make_rng(rep, "gradcheck")
            model = vae.VaeModel.init(6, 2, rng)
            X = rng.standard_normal((4, 6))
            eps = rng.standard_normal((4, 2))
            grads = vae.hibbo_loss(model, X, config, eps=eps).grads
            params = model.parameters()
            for _ in range(20):
                i = int(rng.integers(len(params)))
                idx = tuple(int(rng.integers(n)) for n in params[i].shape)

                def loss(delta):
                    shifted = [p.copy() for p in params]
                    shifted[i][idx] += delta
                    return vae.hibbo_loss(model.with_parameters(shifted), X, config, eps=eps).value

                fd = (loss(h) - loss(-h)) / (2 * h)
                ad = grads[i][idx]
                worst = max(worst, abs(ad - fd) / max(abs(ad), abs(fd), 1e-12))
    ok = worst < 1e-4 and timer.seconds < 60
    assert criterion("4", ok, f"worst relative gradient error {worst:.1e} over 200 probes (need < 1e-4); {timer.seconds:.1f}s")


# ---------------------------------------------------------------- 5


def test_criterion_5_gp_oracles(criterion):
    with Timer() as timer:
        rng = make_rng(0, "gp-acceptance")
        Z = rng.uniform(-2, 2, (10, 2))
        y = np.sin(Z[:, 0]) + Z[:, 1] ** 2
        mean, _ = gp.predict_batch(gp.fit(Z, y, gp.GpHyperparams(1.0, 1.0, 1e-10)), Z)
        interp = float(np.max(np.abs(mean - y)))

        oracle = 0.0
        for n in range(1, 11):
            for _ in range(5):
                Z = rng.uniform(-2, 2, (n, 3))
                y = rng.standard_normal(n)
                h = gp.GpHyperparams(rng.uniform(0.3, 2.0), rng.uniform(0.5, 2.0), rng.uniform(1e-4, 1e-1))
                Zs = rng.uniform(-2, 2, (6, 3))
                K = gp.kernel_matrix(Z, Z, h) + h.noise_var * np.eye(n)
                Ks = gp.kernel_matrix(Zs, Z, h)
                Kinv = np.linalg.inv(K)
                r = y - y.mean()
                m_ref = y.mean() + Ks @ Kinv @ r
                v_ref = h.signal_var - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
                lml_ref = -0.5 * r @ Kinv @ r - 0.5 * np.linalg.slogdet(K)[1] - 0.5 * n * np.log(2 * np.pi)
                m, v = gp.predict_batch(gp.fit(Z, y, h), Zs)
                lml = gp.log_marginal_likelihood(Z, y, h)
                oracle = max(oracle, np.max(np.abs(m - m_ref)), np.max(np.abs(v - v_ref)), abs(lml - lml_ref))
    ok = interp < 1e-6 and oracle < 1e-8 and timer.seconds < 10
    assert criterion(
        "5", ok, f"interpolation error {interp:.1e} (need < 1e-6); worst oracle gap {oracle:.1e} (need < 1e-8); {timer.seconds:.1f}s"
    )


# ---------------------------------------------------------------- 6


def test_criterion_6_baseline_recovery(criterion):
    common = dict(budget=14, n_init=4, frequency=5, latent_dim=1, seed=7)
    with Timer() as timer:
        base = bo.run(benchmarks.sin_manifold(32), bo.BoConfig(method="BASE", **common))
        zero = bo.run(
            benchmarks.sin_manifold(32),
            bo.BoConfig(method="HIBBO", loss=vae.LossConfig(consistency_weight=0.0), **common),
        )
    n_bo = sum(q.phase == "bo" for q in base.queries)
    same = [q.to_dict() for q in base.queries] == [q.to_dict() for q in zero.queries]
    ok = same and n_bo == 10 and timer.seconds < 60
    assert criterion("6", ok, f"bit-identical records: {same} ({n_bo} BO queries); {timer.seconds:.1f}s")


# ---------------------------------------------------------------- 7


def _kernel_gap(seed, consistency_weight, epochs=300):
    problem = benchmarks.sin_manifold(64, seed=seed)
    U = problem.to_unit(problem.training_data)
    y = np.array([problem.objective(x) for x in problem.training_data])
    mean, std = y.mean(), y.std()
    model = vae.VaeModel.init(3, 1, make_rng(seed, "init"))
    config = vae.LossConfig(consistency_weight=consistency_weight)
    model, _ = vae.train(model, U, y, config, epochs, make_rng(seed, "train"), 1e-3)
    Z = vae.encode_mean(model, U)
    ys = (y - mean) / std
    post = gp.fit(Z, ys, gp.select_hyperparams(Z, ys))
    probes = benchmarks.sin_manifold_point(np.sort(make_rng(seed, "probes").uniform(0, 2 * np.pi, 40)))
    diag = gp.mismatch_diagnostics(
        lambda X: vae.encode_mean(model, problem.to_unit(X)), post, probes, lambda x: (problem.objective(x) - mean) / std
    )
    return diag.delta_kernel


def test_criterion_7_mismatch_direction(criterion):
    with Timer() as timer:
        base = [_kernel_gap(s, 0.0) for s in range(5)]
        hibbo = [_kernel_gap(s, 1.0) for s in range(5)]
    ok = np.median(hibbo) <= np.median(base) and timer.seconds < 300
    detail = (
        f"median kernel gap HIBBO {np.median(hibbo):.3f} vs BASE {np.median(base):.3f} "
        f"(per seed {np.round(hibbo, 3).tolist()} vs {np.round(base, 3).tolist()}); {timer.seconds:.1f}s"
    )
    assert criterion("7", ok, detail)


# ---------------------------------------------------------------- 8


@pytest.fixture(scope="module")
def ackley_runs():
    start = time.perf_counter()
    records = {
        (method, seed): bo.run(benchmarks.ackley(60), bo.BoConfig(method=method, seed=seed))
        for method in ("BASE", "HIBBO")
        for seed in range(5)
    }
    return records, time.perf_counter() - start


def test_criterion_8_monotone_and_improving(criterion, ackley_runs):
    records, seconds = ackley_runs
    monotone = all(np.all(np.diff(r.best_curve) >= 0) for r in records.values())
    gains = {
        key: r.best_curve[-1] - max(q.value for q in r.queries if q.phase == "init") for key, r in records.items()
    }
    improved = all(g > 0 for g in gains.values())
    ok = monotone and improved and seconds < 900
    detail = f"curves monotone: {monotone}; smallest gain over the initial design {min(gains.values()):.3f}; {seconds:.0f}s"
    assert criterion("8 (monotone, improves)", ok, detail)


def test_criterion_8_hibbo_not_worse_than_base(criterion, ackley_runs):
    records, _ = ackley_runs
    finals = {m: [records[(m, s)].best_curve[-1] for s in range(5)] for m in ("BASE", "HIBBO")}
    med = {m: float(np.median(v)) for m, v in finals.items()}
    detail = (
        f"median final best HIBBO {med['HIBBO']:.4f} vs BASE {med['BASE']:.4f} "
        f"(HIBBO {np.round(finals['HIBBO'], 3).tolist()}, BASE {np.round(finals['BASE'], 3).tolist()})"
    )
    assert criterion("8 (HIBBO >= BASE)", med["HIBBO"] >= med["BASE"], detail)


# ---------------------------------------------------------------- 9


def test_criterion_9_shape_task(criterion):
    wins, lines = 0, []
    with Timer() as timer:
        for seed in range(5):
            problem = benchmarks.shape_area_problem(64, 200, seed=seed)
            best_train = max(benchmarks.shape_area(x) for x in problem.training_data)
            config = bo.BoConfig(
                budget=200,
                latent_dim=2,
                hidden=(256,),
                method="HIBBO",
                seed=seed,
                acquisition=AcquisitionConfig(optimizer="grid"),
            )
            final = bo.run(problem, config).best_curve[-1]
            wins += final > best_train
            lines.append(f"{final:.4f}/{best_train:.4f}")
    ok = wins >= 4 and timer.seconds < 900
    assert criterion("9", ok, f"{wins}/5 seeds beat the training set (final/train: {', '.join(lines)}); {timer.seconds:.0f}s")


# ---------------------------------------------------------------- 10

DETERMINISM_CONFIG = """\
[problem]
name = "sin_manifold"
n_train = 24

[experiment]
methods = ["BASE", "HIBBO"]
seeds = [0, 1]

[bo]
budget = 12
frequency = 4
n_init = 4
latent_dim = 1
hidden = [16, 16]
epochs = 5
pretrain_epochs = 20
"""


def test_criterion_10_byte_identical_reruns(criterion, tmp_path):
    config = tmp_path / "exp.toml"
    config.write_text(DETERMINISM_CONFIG)
    with Timer() as timer:
        codes = []
        for name in ("first", "second"):
            out = tmp_path / name
            codes.append(cli.main(["run", "--config", str(config), "--out", str(out)]))
            codes.append(cli.main(["fig2", "--family", "tanh-cos", "--seeds", "0-2", "--out", str(out / "fig2.csv")]))
            codes.append(cli.main(["report", str(out)]))
    files = sorted(p.name for p in (tmp_path / "first").iterdir())
    identical = all((tmp_path / "first" / f).read_bytes() == (tmp_path / "second" / f).read_bytes() for f in files)
    ok = identical and codes == [0] * 6 and len(files) == 7 and timer.seconds < 60
    assert criterion("10", ok, f"{len(files)} files byte-identical: {identical}; exit codes {codes}; {timer.seconds:.1f}s")
