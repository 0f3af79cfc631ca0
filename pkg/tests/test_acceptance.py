"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see the ``criterion`` fixture) before
asserting, so the summary shows every result even when some fail.
"""

import time

import numpy as np
import pytest

from framebridge import oracles
from framebridge.cli import main
from framebridge.denoiser import init_denoiser, init_prior_net, prior_forward
from framebridge.evalkit import bootstrap_se, fit_isotropic_gaussian, gaussian_w2_sq, prior_gap
from framebridge.saf import AlignmentMap
from framebridge.schedule import BridgeGmaxSchedule, VPSchedule
from framebridge.toy_world import PriorSpec, ToyConfig, build_prior, conditional_mean_oracle, generate_dataset
from framebridge.train import BridgeTask, DiffusionTask, PriorTask, TrainConfig, finetune, neural_prior, \
    run_training
from helpers import small_config

GMAX, VP, TOY = BridgeGmaxSchedule(), VPSchedule(), ToyConfig()
SEEDS = range(5)


def _oracle_means(batch):
    return np.stack([conditional_mean_oracle(TOY, f, int(c)) for f, c in zip(batch.first_frames, batch.labels)])


@pytest.fixture(scope="module")
def prior_net():
    net = init_prior_net(0)
    start = time.perf_counter()
    run_training(net, PriorTask(TOY), TrainConfig(iterations=20_000, lr=0.01, seed=0, eval_every=5000))
    return net, time.perf_counter() - start


@pytest.fixture(scope="module")
def held_out():
    return generate_dataset(777, 256, TOY)


def test_criterion_1_kernel_exactness(criterion):
    start = time.perf_counter()
    moments = oracles.check_kernel_moments(n_triples=10, n_mc=100_000)
    bounds = oracles.check_kernel_boundaries(tol=1e-12)
    elapsed = time.perf_counter() - start
    ok = moments.passed and bounds.passed and elapsed < 10
    criterion(1, "kernel exactness", ok,
              f"worst {moments.value:.2f} SE (tol 4), boundary error {bounds.value:.1e} (tol 1e-12), {elapsed:.1f}s")
    assert ok


def test_criterion_2_score_identity(criterion):
    start = time.perf_counter()
    res = oracles.check_score_identity(n_t=50, tol=1e-9)
    elapsed = time.perf_counter() - start
    ok = res.passed and elapsed < 1
    criterion(2, "score identity", ok, f"max relative error {res.value:.1e} (tol 1e-9), {elapsed:.2f}s")
    assert ok


def test_criterion_3_saf_alignment(criterion):
    start = time.perf_counter()
    snr = oracles.check_saf_alignment(n_t=100, tol=1e-8)
    moments = oracles.check_saf_moments(n_mc=100_000)
    table = oracles.check_saf_table()
    elapsed = time.perf_counter() - start
    ok = snr.passed and moments.passed and table.passed and elapsed < 10
    criterion(3, "SAF alignment", ok,
              f"SNR rel err {snr.value:.1e} (tol 1e-8), moments {moments.value:.2f} SE (tol 4), "
              f"table gap {table.value:.1e} (cell {table.tolerance:.1e}), {elapsed:.1f}s")
    assert ok


def test_criterion_4_sampler_convergence(criterion):
    start = time.perf_counter()
    w2, se = {}, {}
    for steps in (25, 50, 100, 200):
        w2[steps], z, (mean, var) = oracles.sampler_w2(steps, n=10_000)

        def stat(rows, mean=mean, var=var):
            m, v = fit_isotropic_gaussian(rows)
            return gaussian_w2_sq(m, v, mean, var)

        se[steps] = bootstrap_se(z, stat, n_boot=30, seed=steps)
    elapsed = time.perf_counter() - start
    tol = 0.05 * TOY.L * TOY.d
    monotone = all(w2[b] <= w2[a] + 3 * np.hypot(se[a], se[b]) for a, b in ((25, 50), (50, 100), (100, 200)))
    ok = w2[200] <= tol and monotone and elapsed < 60
    curve = ", ".join(f"N={k}: {v:.4f}±{se[k]:.4f}" for k, v in w2.items())
    criterion(4, "sampler W2", ok, f"{curve} (tol {tol:.1f} at N=200), nonincreasing={monotone}, {elapsed:.1f}s")
    assert ok


def test_criterion_5_neural_prior_optimum(criterion, prior_net, held_out):
    net, elapsed = prior_net
    oracle = _oracle_means(held_out)
    replicated = build_prior(PriorSpec(), held_out.first_frames, held_out.labels, TOY.L)
    out, _ = prior_forward(net, replicated, held_out.labels)
    mse = prior_gap(out[:, 1:], oracle[:, 1:])
    per_class = [prior_gap(out[held_out.labels == c, 1:], oracle[held_out.labels == c, 1:]) for c in range(TOY.C)]
    ok = mse <= 1e-3 and elapsed < 300
    criterion(5, "neural prior optimum", ok,
              f"per-cell MSE {mse:.2e} (tol 1e-3), by class {[f'{v:.1e}' for v in per_class]}, {elapsed:.0f}s")
    assert ok
    # the two-velocity class regresses to the branch average: a quarter of the
    # branch-to-branch gap away from each branch
    two = held_out.labels == 2
    frame, pred = held_out.first_frames[two][0], out[two][0]
    branches = [conditional_mean_oracle(ToyConfig(velocities=((0,), (1,), (v,))), frame, 2) for v in (1, -1)]
    quarter = 0.25 * prior_gap(branches[0][1:], branches[1][1:])
    for b in branches:
        assert prior_gap(pred[1:], b[1:]) == pytest.approx(quarter, rel=0.1)


def test_criterion_6_gradients(criterion):
    start = time.perf_counter()
    res = oracles.check_gradients(n_params=20, tol=1e-5)
    elapsed = time.perf_counter() - start
    ok = res.passed and elapsed < 10
    criterion(6, "gradient exactness", ok, f"max relative error {res.value:.1e} (tol 1e-5), {elapsed:.1f}s")
    assert ok


def test_criterion_7_saf_trend(criterion):
    start = time.perf_counter()
    wins, details = 0, []
    for seed in SEEDS:
        teacher = init_denoiser(seed)
        run_training(teacher, DiffusionTask(VP, TOY), TrainConfig(iterations=5000, lr=1e-3, seed=seed,
                                                                  eval_every=5000))
        cfg = TrainConfig(iterations=1000, lr=1e-3, seed=seed + 100, eval_every=250)
        _, raw = finetune(teacher, BridgeTask(GMAX, toy=TOY), cfg)
        _, saf = finetune(teacher, BridgeTask(GMAX, align=AlignmentMap(GMAX, VP), toy=TOY), cfg)
        wins += saf.eval_loss[-1] < raw.eval_loss[-1]
        details.append(f"{saf.eval_loss[0]:.1f}->{saf.eval_loss[-1]:.2f} vs {raw.eval_loss[0]:.1f}->"
                       f"{raw.eval_loss[-1]:.2f}")
    elapsed = time.perf_counter() - start
    ok = wins >= 4 and elapsed < 900
    criterion(7, "SAF trend", ok, f"SAF lower on {wins}/5 seeds (SAF vs raw: {'; '.join(details)}), {elapsed:.0f}s")
    assert ok


def test_criterion_8_prior_trend(criterion, prior_net, held_out):
    start = time.perf_counter()
    net, _ = prior_net
    moving = held_out.labels > 0
    oracle = _oracle_means(held_out)[moving]
    specs = {"replicated": PriorSpec(), "neural": neural_prior(net)}
    gaps = {k: prior_gap(build_prior(s, held_out.first_frames, held_out.labels, TOY.L)[moving], oracle)
            for k, s in specs.items()}
    wins, details = 0, []
    for seed in SEEDS:
        cfg = TrainConfig(iterations=5000, lr=2e-3, seed=seed, eval_every=50)
        curves = {}
        for k, spec in specs.items():
            curves[k] = run_training(init_denoiser(seed), BridgeTask(GMAX, prior=spec, toy=TOY), cfg)
        threshold = 1.05 * curves["replicated"].eval_loss[-1]
        reach = {k: c.steps_to(threshold) for k, c in curves.items()}
        wins += reach["neural"] < reach["replicated"]
        details.append(f"{reach['neural']:.0f} vs {reach['replicated']:.0f}")
    elapsed = time.perf_counter() - start
    ok = gaps["neural"] < gaps["replicated"] and wins >= 4 and elapsed < 1200
    criterion(8, "prior trend", ok,
              f"prior gap {gaps['neural']:.2e} vs {gaps['replicated']:.3f}; neural faster on {wins}/5 seeds "
              f"(steps to threshold neural vs replicated: {', '.join(details)}), {elapsed:.0f}s")
    assert ok


def test_criterion_9_determinism(criterion, tmp_path, monkeypatch, capsys):
    # checkpoints are copied to fixed relative paths so the configs, and hence
    # their hashes, are identical across the two replays
    monkeypatch.chdir(tmp_path)
    ckpt = tmp_path / "ckpt"
    ckpt.mkdir()
    neural = {"prior": '"neural"', "prior_checkpoint": '"ckpt/prior.fbck"'}
    sample = {"mode": '"bridge_saf"', "checkpoint": '"ckpt/bridge.fbck"', "csv": "true"}
    pipeline = [
        ("gen-data", {}, None),
        ("train-prior", {}, "prior.fbck"),
        ("train-diffusion", {}, "teacher.fbck"),
        ("train-bridge", {"train": neural}, None),
        ("finetune", {"train": neural, "saf": {"teacher_checkpoint": '"ckpt/teacher.fbck"'}}, "bridge.fbck"),
        ("sample", {"train": neural, "sample": sample}, None),
        ("eval", {"train": neural, "sample": sample}, None),
    ]
    for name, overrides, _ in pipeline:
        (tmp_path / f"{name}.toml").write_text(small_config(**overrides))

    runs = {}
    for replay in ("a", "b"):
        for name, _, keep in pipeline:
            code = main([name, "--config", f"{name}.toml", "--seed", "3", "--out", replay])
            assert code == 0, name
            run = tmp_path / capsys.readouterr().out.strip().splitlines()[-1]
            runs[replay, name] = run
            if keep:
                (ckpt / keep).write_bytes((run / keep).read_bytes())

    mismatched, compared = [], 0
    for name, _, _ in pipeline:
        a, b = runs["a", name], runs["b", name]
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        if a.name[:12] != b.name[:12] or files_a != files_b:
            mismatched.append(name)
            continue
        for rel in files_a:
            if rel.name == "timing.csv":
                continue
            compared += 1
            if (a / rel).read_bytes() != (b / rel).read_bytes():
                mismatched.append(f"{name}/{rel}")
    ok = not mismatched
    criterion(9, "determinism", ok, f"{compared} output files across {len(pipeline)} commands compared, "
                                    f"mismatches: {mismatched or 'none'}")
    assert ok
