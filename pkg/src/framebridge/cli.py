"""Command-line entry point: ``framebridge <command> [--config PATH] [--seed N] [--out PATH]``.

Run commands write into a fresh directory ``<root>/<hash12>-<timestamp>`` where
``root`` is ``--out``, else ``$FRAMEBRIDGE_RUN_ROOT``, else ``./runs``.
Inspect commands write one CSV to ``--out`` (a file) or to stdout.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import denoiser as dn
from . import formats
from .bridge_kernel import BridgeSingularityError, bridge_coeffs
from .config import ConfigError, RunConfig, load_config, parse_config
from .evalkit import EvalReport, first_frame_consistency, fit_isotropic_gaussian, frame_mse, gaussian_w2_sq, \
    prior_gap
from .oracles import run_all
from .sampler import BridgeModelScore, DiffusionModelScore, SamplingError, sample_bridge, sample_diffusion
from .saf import AlignmentError, AlignmentMap
from .schedule import ScheduleDomainError, SNRRangeError
from .toy_world import OracleError, PriorSpec, build_prior, conditional_mean_oracle, generate_dataset
from .train import BridgeTask, DiffusionTask, PriorTask, TrainingDivergedError, finetune, neural_prior, \
    run_training

log = logging.getLogger("framebridge")

RUN_COMMANDS = ("gen-data", "train-prior", "train-diffusion", "train-bridge", "finetune", "sample", "eval")
INSPECT_COMMANDS = ("inspect-schedule", "inspect-bridge", "inspect-saf")
COMMANDS = RUN_COMMANDS + INSPECT_COMMANDS + ("oracle-check",)

_NUMERICAL = (TrainingDivergedError, SamplingError, AlignmentError, BridgeSingularityError, SNRRangeError,
              ScheduleDomainError, FloatingPointError)
_VALIDATION = (ConfigError, formats.FormatError, OSError, ValueError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="framebridge", description="Toy bridge models for image-to-video generation.")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True
    helps = {
        "gen-data": "write a toy dataset (FBDS)",
        "train-prior": "train the neural prior network",
        "train-diffusion": "train the diffusion teacher",
        "train-bridge": "train a bridge model from scratch",
        "finetune": "fine-tune a bridge model from a diffusion teacher",
        "sample": "generate clips from a checkpoint",
        "eval": "sample and score clips against the toy oracle",
        "inspect-schedule": "tabulate schedule coefficients",
        "inspect-bridge": "tabulate bridge kernel coefficients",
        "inspect-saf": "tabulate the SNR alignment map",
        "oracle-check": "run the analytic oracle suite",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        if name != "oracle-check":
            sp.add_argument("--config", type=Path, required=name in RUN_COMMANDS)
            sp.add_argument("--seed", type=int)
            sp.add_argument("--out", type=Path)
        if name in ("sample", "eval"):
            sp.add_argument("--steps", type=int, help="sampler step count, e.g. 250, 100, 50, 40, 20")
        if name in INSPECT_COMMANDS:
            sp.add_argument("--points", type=int, default=101)
        if name == "inspect-schedule":
            sp.add_argument("--which", choices=("bridge", "teacher"), default="bridge")
        if name == "oracle-check":
            sp.add_argument("--full", action="store_true", help="acceptance-size sample counts")
    return p


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else parse_config({})
    return cfg.with_seed(getattr(args, "seed", None))


def _run_dir(cfg: RunConfig, out: Path | None) -> Path:
    root = out or Path(os.environ.get("FRAMEBRIDGE_RUN_ROOT", "runs"))
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    run = root / f"{cfg.hash[:12]}-{stamp}"
    run.mkdir(parents=True, exist_ok=False)
    (run / "config.json").write_text(json.dumps({"hash": cfg.hash, "config": cfg.values}, indent=2,
                                                sort_keys=True) + "\n")
    return run


def _load_model(path: Path | None, what: str) -> dn.DenseNet:
    if path is None:
        raise ConfigError(f"{what} checkpoint path is not set")
    if not path.is_file():
        raise ConfigError(f"{what} checkpoint not found: {path}")
    return dn.DenseNet.from_tensors(formats.read_checkpoint(path))


def _prior_spec(cfg: RunConfig) -> PriorSpec:
    if cfg.section("train")["prior"] == "neural":
        return neural_prior(_load_model(cfg.path("train", "prior_checkpoint"), "prior"))
    return PriorSpec()


def _alignment(cfg: RunConfig) -> AlignmentMap:
    s = cfg.section("saf")
    teacher = cfg.teacher_schedule()
    if s["teacher_steps"]:
        teacher = teacher.table(s["teacher_steps"])
    eps = cfg.train_config().eps_t
    T = cfg.bridge_schedule().T
    return AlignmentMap(cfg.bridge_schedule(), teacher, output_mode=s["output_mode"], clamp=s["clamp"],
                        t_range=(eps * T, T - eps * T))


def _new_model(cfg: RunConfig, prior: bool = False) -> dn.DenseNet:
    toy, m, seed = cfg.toy(), cfg.section("model"), cfg.section("train")["seed"]
    if prior:
        return dn.init_prior_net(seed, toy.L, toy.d, toy.C, m["hidden"], m["class_dim"])
    return dn.init_denoiser(seed, toy.L, toy.d, toy.C, m["hidden"], m["time_dim"], m["class_dim"])


def _train(cfg: RunConfig, run: Path, task, model: dn.DenseNet | None, name: str) -> None:
    tc = cfg.train_config()
    every = cfg.section("train")["checkpoint_every"]

    def on_eval(step, m):
        if every and step and step % every == 0:
            formats.write_checkpoint(run / f"{name}-step{step:07d}.fbck", m.to_tensors())

    if model is None:
        model, curve = finetune(_load_model(cfg.path("saf", "teacher_checkpoint"), "teacher"), task, tc, on_eval)
    else:
        curve = run_training(model, task, tc, on_eval=on_eval)
    curve.write_csv(run / "metrics.csv", run / "timing.csv")
    formats.write_checkpoint(run / f"{name}.fbck", model.to_tensors())
    log.info("final eval loss %.6g", curve.eval_loss[-1])


def _conditioning(cfg: RunConfig, n: int, seed: int):
    return generate_dataset(seed, n, cfg.toy())


def _generate(cfg: RunConfig, batch, steps: int | None):
    s = cfg.section("sample")
    model = _load_model(cfg.path("sample", "checkpoint"), "sample")
    scfg = cfg.sample_config(steps)
    toy = cfg.toy()
    if s["mode"] == "diffusion":
        cond = build_prior(PriorSpec(), batch.first_frames, batch.labels, toy.L)
        z = sample_diffusion(DiffusionModelScore(model, cfg.teacher_schedule()), cond, batch.labels, scfg)
        return z, cond
    zT = build_prior(_prior_spec(cfg), batch.first_frames, batch.labels, toy.L)
    align = _alignment(cfg) if s["mode"] == "bridge_saf" else None
    z = sample_bridge(BridgeModelScore(model, cfg.bridge_schedule(), align), zT, batch.labels, scfg)
    return z, zT


def _write_frames_csv(path: Path, z: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "frame", "cell", "value"])
        for i, clip in enumerate(z):
            for ell, frame in enumerate(clip):
                for j, v in enumerate(frame):
                    w.writerow([i, ell, j, repr(float(v))])


def cmd_run(args, cfg: RunConfig) -> Path:
    run = _run_dir(cfg, args.out)
    toy = cfg.toy()
    c = args.command
    if c == "gen-data":
        d = cfg.section("data")
        batch = generate_dataset(d["seed"], d["n_clips"], toy)
        formats.write_dataset(run / "data.fbds", batch.z0, batch.labels, toy.C)
    elif c == "train-prior":
        _train(cfg, run, PriorTask(toy), _new_model(cfg, prior=True), "prior")
    elif c == "train-diffusion":
        _train(cfg, run, DiffusionTask(cfg.teacher_schedule(), toy), _new_model(cfg), "teacher")
    elif c == "train-bridge":
        _train(cfg, run, BridgeTask(cfg.bridge_schedule(), _prior_spec(cfg), None, toy), _new_model(cfg), "bridge")
    elif c == "finetune":
        align = _alignment(cfg) if cfg.section("saf")["enabled"] else None
        _train(cfg, run, BridgeTask(cfg.bridge_schedule(), _prior_spec(cfg), align, toy), None, "bridge")
    elif c == "sample":
        s = cfg.section("sample")
        batch = _conditioning(cfg, s["n_samples"], s["seed"])
        z, _ = _generate(cfg, batch, args.steps)
        formats.write_dataset(run / "samples.fbds", z, batch.labels, toy.C)
        if s["csv"]:
            _write_frames_csv(run / "frames.csv", z)
    elif c == "eval":
        e = cfg.section("eval")
        batch = _conditioning(cfg, e["n_samples"], e["seed"])
        z, zT = _generate(cfg, batch, args.steps)
        report = EvalReport(_metrics(cfg, batch, z, zT), n_samples=len(batch), seed=e["seed"],
                            config_hash=cfg.hash)
        report.write(run / "report.json")
        report.append_csv(run / "eval.csv")
    return run


def _metrics(cfg: RunConfig, batch, z: np.ndarray, zT: np.ndarray) -> dict[str, float]:
    toy = cfg.toy()
    oracle = []
    for frame, c in zip(batch.first_frames, batch.labels):
        try:
            oracle.append(conditional_mean_oracle(toy, frame, int(c)))
        except OracleError:
            oracle.append(np.repeat(frame[None], toy.L, axis=0))
    oracle = np.stack(oracle)
    m_s, v_s = fit_isotropic_gaussian(z)
    m_d, v_d = fit_isotropic_gaussian(batch.z0)
    return {
        "w2_sq": gaussian_w2_sq(m_s, v_s, m_d, v_d),
        "frame_mse": frame_mse(z, batch.z0),
        "first_frame_mse": first_frame_consistency(z, batch.first_frames, batch.labels, toy),
        "prior_gap": prior_gap(zT, oracle),
    }


def _inspect_rows(args, cfg: RunConfig):
    n = args.points
    if n < 2:
        raise ConfigError("--points must be >= 2")
    bridge = cfg.bridge_schedule()
    if args.command == "inspect-schedule":
        sched = bridge if args.which == "bridge" else cfg.teacher_schedule()
        t = np.linspace(0.0, sched.T, n)
        alpha, sigma2 = sched.alpha_sigma2(t)
        f, g2 = sched.drift_diffusion(t)
        with np.errstate(divide="ignore"):
            snr = np.where(sigma2 > 0, alpha**2 / np.where(sigma2 > 0, sigma2, 1.0), np.inf)
        return (["t", "alpha", "sigma", "sigma2", "snr", "f", "g2"],
                zip(t, alpha, np.sqrt(sigma2), sigma2, snr, f, g2))
    if args.command == "inspect-bridge":
        t = np.linspace(0.0, bridge.T, n)
        co = bridge_coeffs(bridge, t)
        alpha, sigma2 = bridge.alpha_sigma2(t)
        alpha_T, sigma2_T = bridge.alpha_sigma2(bridge.T)
        # 1 / (sigma_T^2 - (alpha_T/alpha_t)^2 sigma_t^2), the h-term gain; infinite at T
        denom = sigma2_T - (alpha_T / alpha) ** 2 * sigma2
        with np.errstate(divide="ignore"):
            h_scale = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), np.inf)
        return ["t", "a", "b", "c", "c2", "h_scale"], zip(t, co.a, co.b, co.c, co.c**2, h_scale)
    amap = _alignment(cfg)
    eps = cfg.train_config().eps_t * bridge.T
    t = np.linspace(eps, bridge.T - eps, n)
    t_tilde, clamped = amap.aligned_time(t)
    at, st = amap.scales(t)
    return (["t", "aligned_snr", "t_tilde", "clamped", "alpha_tilde", "sigma_tilde"],
            zip(t, amap.aligned_snr(t), t_tilde, clamped.astype(int), at, st))


def cmd_inspect(args, cfg: RunConfig) -> None:
    header, rows = _inspect_rows(args, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) for x in row])
    if args.out is None:
        sys.stdout.write(buf.getvalue())
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(buf.getvalue())


def cmd_oracle_check(args) -> int:
    results = run_all(quick=not args.full)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 2


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        if args.command == "oracle-check":
            return cmd_oracle_check(args)
        cfg = _load(args)
        if args.command in INSPECT_COMMANDS:
            cmd_inspect(args, cfg)
        else:
            print(cmd_run(args, cfg))
        return 0
    except _NUMERICAL as exc:
        print(f"framebridge: numerical failure: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION as exc:
        print(f"framebridge: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
