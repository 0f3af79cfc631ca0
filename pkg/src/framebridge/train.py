"""Training loops: diffusion baseline, bridge (raw or SNR-aligned) and neural prior.

Each objective is a *task* that turns a clip batch plus randomness into network
inputs and a regression target. :func:`train_step` applies one plain
gradient-descent update for any task; :func:`run_training` drives a full run
with a fixed held-out evaluation set and returns the learning curve.

Losses are per-sample summed squared errors averaged over the batch, so a zero
network on unit Gaussian targets scores ``L * d``.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from . import denoiser as dn
from .bridge_kernel import bridge_coeffs, eps_target, sample_bridge_state
from .saf import AlignmentMap, OutputMode
from .schedule import Schedule
from .toy_world import ClipBatch, PriorMode, PriorSpec, ToyConfig, build_prior, generate_dataset, sample_batch

__all__ = [
    "Mode",
    "TrainConfig",
    "TrainingDivergedError",
    "DiffusionTask",
    "BridgeTask",
    "PriorTask",
    "EvalSet",
    "Curve",
    "make_eval_set",
    "sample_times",
    "train_step",
    "train_step_bridge",
    "train_step_diffusion",
    "train_step_prior",
    "evaluate",
    "run_training",
    "finetune",
    "neural_prior",
]

log = logging.getLogger(__name__)

EVAL_TIMES = 8


class Mode(str, Enum):
    DIFFUSION = "diffusion"
    BRIDGE = "bridge"
    BRIDGE_SAF = "bridge_saf"
    PRIOR = "prior"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    eps_t: float = 1e-4
    eval_every: int = 100
    eval_clips: int = 128
    eval_seed: int = 2024
    loss_weight: float = 1.0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or self.eval_clips < 1:
            raise ValueError("iterations, batch size and eval clips must be positive")
        if not self.lr >= 0:
            raise ValueError("learning rate must be nonnegative")
        if not 0 < self.eps_t < 0.5:
            raise ValueError("eps_t must lie in (0, 0.5)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


def sample_times(rng: np.random.Generator, n: int, T: float, eps_t: float) -> np.ndarray:
    """Uniform times on ``[eps_t T, T - eps_t T]``."""
    return rng.uniform(eps_t * T, T - eps_t * T, size=n)


def neural_prior(prior_net: dn.DenseNet) -> PriorSpec:
    """Wrap a trained prior network as a :class:`PriorSpec`."""
    return PriorSpec(PriorMode.NEURAL, lambda rep, labels: dn.prior_forward(prior_net, rep, labels)[0])


@dataclass(frozen=True)
class Inputs:
    state: np.ndarray
    t: np.ndarray
    prior: np.ndarray
    labels: np.ndarray
    target: np.ndarray


@dataclass(frozen=True)
class DiffusionTask:
    """VP diffusion conditioned on the replicated first frame; target is the injected noise."""

    schedule: Schedule
    toy: ToyConfig = ToyConfig()

    mode = Mode.DIFFUSION

    def inputs(self, batch: ClipBatch, t: np.ndarray, noise: np.ndarray) -> Inputs:
        alpha, sigma = self.schedule.alpha_sigma(t)
        z_t = alpha[:, None, None] * batch.z0 + sigma[:, None, None] * noise
        prior = build_prior(PriorSpec(), batch.first_frames, batch.labels, self.toy.L)
        return Inputs(z_t, t, prior, batch.labels, noise)

    def eval_error(self, model, inp: Inputs, batch, pred) -> np.ndarray:
        return np.sum((pred - inp.target) ** 2, axis=(1, 2))


@dataclass(frozen=True)
class BridgeTask:
    """Bridge denoising; ``align`` switches on SNR-aligned inputs and targets.

    The network sees ``(z_t, t)`` without alignment and ``(z~_t, t~)`` with it.
    The target is ``(z_t - alpha_t z0) / sigma_t`` in both cases, passed through
    :meth:`AlignmentMap.align_target` for v-prediction teachers.
    """

    schedule: Schedule
    prior: PriorSpec = PriorSpec()
    align: AlignmentMap | None = None
    toy: ToyConfig = ToyConfig()

    @property
    def mode(self) -> Mode:
        return Mode.BRIDGE if self.align is None else Mode.BRIDGE_SAF

    def terminal(self, batch: ClipBatch) -> np.ndarray:
        return build_prior(self.prior, batch.first_frames, batch.labels, self.toy.L)

    def inputs(self, batch: ClipBatch, t: np.ndarray, noise: np.ndarray, zT=None) -> Inputs:
        zT = self.terminal(batch) if zT is None else zT
        z_t = sample_bridge_state(bridge_coeffs(self.schedule, t), batch.z0, zT, noise)
        if self.align is None:
            return Inputs(z_t, t, zT, batch.labels, eps_target(self.schedule, t, z_t, batch.z0))
        z_tilde, t_tilde = self.align.align_state(z_t, t, zT)
        if self.align.output_mode is OutputMode.EPS:
            target = self.align.align_target(batch.z0, eps_target(self.schedule, t, z_t, batch.z0), t)
        else:
            target = self.align.align_target(batch.z0, noise, t)
        return Inputs(z_tilde, t_tilde, zT, batch.labels, target)

    def eval_error(self, model, inp: Inputs, batch, pred, z_t=None, zT=None, t=None) -> np.ndarray:
        """Error in the ``(z_t - alpha_t z0)/sigma_t`` convention, comparable across modes."""
        if self.align is None:
            return np.sum((pred - inp.target) ** 2, axis=(1, 2))
        eps_hat = self.align.score_eps(pred, t, z_t, zT, inp.state)
        truth = eps_target(self.schedule, t, z_t, batch.z0)
        return np.sum((eps_hat - truth) ** 2, axis=(1, 2))


@dataclass(frozen=True)
class PriorTask:
    """Regression of the full clip from the replicated first frame and class."""

    toy: ToyConfig = ToyConfig()

    mode = Mode.PRIOR


@dataclass(frozen=True)
class EvalSet:
    batch: ClipBatch
    t: np.ndarray
    noise: np.ndarray


def make_eval_set(toy: ToyConfig, T: float, cfg: TrainConfig) -> EvalSet:
    """Held-out clips, each evaluated at the same stratified times with fixed noise."""
    batch = generate_dataset(cfg.eval_seed, cfg.eval_clips, toy)
    lo, hi = cfg.eps_t * T, T - cfg.eps_t * T
    t = lo + (np.arange(EVAL_TIMES) + 0.5) / EVAL_TIMES * (hi - lo)
    noise = np.random.default_rng((cfg.eval_seed, 1)).standard_normal((EVAL_TIMES,) + batch.z0.shape)
    return EvalSet(batch, t, noise)


def _check_loss(loss: float, step: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss} at step {step}")


def loss_and_grad(model: dn.DenseNet, task, batch: ClipBatch, rng: np.random.Generator, cfg: TrainConfig):
    if isinstance(task, PriorTask):
        rep = build_prior(PriorSpec(), batch.first_frames, batch.labels, task.toy.L)
        pred, cache = dn.prior_forward(model, rep, batch.labels)
        loss, g = dn.squared_error(pred, batch.z0)
        return loss, dn.backward(model, cache, g)
    t = sample_times(rng, len(batch), task.schedule.T, cfg.eps_t)
    noise = rng.standard_normal(batch.z0.shape)
    inp = task.inputs(batch, t, noise)
    pred, cache = dn.forward(model, inp.state, inp.t, inp.prior, inp.labels)
    loss, g = dn.squared_error(pred, inp.target)
    w = cfg.loss_weight
    return w * loss, dn.backward(model, cache, w * g)


def train_step(model: dn.DenseNet, task, batch: ClipBatch, cfg: TrainConfig, rng: np.random.Generator,
               step: int = 0) -> float:
    """One gradient-descent update in place; returns the pre-update batch loss."""
    loss, grads = loss_and_grad(model, task, batch, rng, cfg)
    _check_loss(loss, step)
    if cfg.lr:
        for name, g in grads.items():
            model.params[name] -= cfg.lr * g
    return loss


def train_step_bridge(model, batch, task: BridgeTask, cfg: TrainConfig, rng) -> float:
    return train_step(model, task, batch, cfg, rng)


def train_step_diffusion(model, batch, task: DiffusionTask, cfg: TrainConfig, rng) -> float:
    return train_step(model, task, batch, cfg, rng)


def train_step_prior(prior_net, batch, task: PriorTask, cfg: TrainConfig, rng=None) -> float:
    return train_step(prior_net, task, batch, cfg, rng)


def evaluate(model: dn.DenseNet, task, ev: EvalSet) -> float:
    """Held-out loss; bridge modes report the ``(z_t - alpha_t z0)/sigma_t`` convention."""
    batch = ev.batch
    if isinstance(task, PriorTask):
        rep = build_prior(PriorSpec(), batch.first_frames, batch.labels, task.toy.L)
        pred, _ = dn.prior_forward(model, rep, batch.labels)
        return float(np.mean(np.sum((pred - batch.z0) ** 2, axis=(1, 2))))
    zT = task.terminal(batch) if isinstance(task, BridgeTask) else None
    total = 0.0
    for k, tk in enumerate(ev.t):
        t = np.full(len(batch), tk)
        noise = ev.noise[k]
        if isinstance(task, BridgeTask):
            inp = task.inputs(batch, t, noise, zT=zT)
            z_t = sample_bridge_state(bridge_coeffs(task.schedule, t), batch.z0, zT, noise)
            pred, _ = dn.forward(model, inp.state, inp.t, inp.prior, inp.labels)
            err = task.eval_error(model, inp, batch, pred, z_t=z_t, zT=zT, t=t)
        else:
            inp = task.inputs(batch, t, noise)
            pred, _ = dn.forward(model, inp.state, inp.t, inp.prior, inp.labels)
            err = task.eval_error(model, inp, batch, pred)
        total += float(np.mean(err))
    return total / len(ev.t)


@dataclass
class Curve:
    rows: list[tuple[int, float, float]] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)

    @property
    def steps(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def eval_loss(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    @property
    def train_loss(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    def steps_to(self, threshold: float) -> float:
        """First evaluated step whose eval loss is at or below ``threshold`` (inf if never)."""
        hit = np.nonzero(self.eval_loss <= threshold)[0]
        return float(self.steps[hit[0]]) if hit.size else float("inf")

    def write_csv(self, path, timing_path=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_loss", "eval_loss"])
            for step, tr, ev in self.rows:
                w.writerow([step, repr(tr), repr(ev)])
        if timing_path is not None:
            with open(timing_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "wall_ms"])
                for (step, _, _), ms in zip(self.rows, self.wall_ms):
                    w.writerow([step, f"{ms:.3f}"])


def run_training(model: dn.DenseNet, task, cfg: TrainConfig,
                 on_eval: Callable[[int, dn.DenseNet], None] | None = None) -> Curve:
    """Train ``model`` in place for ``cfg.iterations`` steps on fresh batches.

    The eval loss is recorded at step 0 and every ``cfg.eval_every`` steps;
    ``train_loss`` is the mean batch loss since the previous record.
    """
    toy = task.toy
    T = 1.0 if isinstance(task, PriorTask) else task.schedule.T
    ev = make_eval_set(toy, T, cfg)
    rng = np.random.default_rng(cfg.seed)
    curve = Curve()
    t0 = time.perf_counter()
    window: list[float] = []

    def record(step: int):
        tr = float(np.mean(window)) if window else float("nan")
        loss = evaluate(model, task, ev)
        _check_loss(loss, step)
        curve.rows.append((step, tr, loss))
        curve.wall_ms.append(1e3 * (time.perf_counter() - t0))
        window.clear()
        if on_eval is not None:
            on_eval(step, model)

    # overflow on the way to divergence is reported by _check_loss, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        record(0)
        for step in range(1, cfg.iterations + 1):
            batch = sample_batch(rng, cfg.batch_size, toy)
            window.append(train_step(model, task, batch, cfg, rng, step))
            if step % cfg.eval_every == 0 or step == cfg.iterations:
                record(step)
    return curve


def finetune(teacher: dn.DenseNet, task: BridgeTask, cfg: TrainConfig,
             on_eval: Callable[[int, dn.DenseNet], None] | None = None) -> tuple[dn.DenseNet, Curve]:
    """Initialise a bridge model from diffusion-teacher weights and train it on ``task``."""
    if not teacher.has_prior_input:
        raise ValueError("teacher checkpoint is a prior network, not a denoiser")
    if (teacher.L, teacher.d, teacher.C) != (task.toy.L, task.toy.d, task.toy.C):
        raise ValueError("teacher layout does not match the dataset")
    model = teacher.copy()
    return model, run_training(model, task, cfg, on_eval=on_eval)
