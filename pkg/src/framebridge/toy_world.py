"""Synthetic moving-blob clips with exactly known conditional statistics.

A clip is an ``L x d`` array: frame ``l`` holds a Gaussian bump centred at
``x0 + l * v`` on a periodic grid of ``d`` cells. The start position ``x0`` is
uniform on ``[0, d)``, the class picks a set of integer velocities and ``v`` is
drawn uniformly from that set. Because velocities are integers, every frame is
a circular shift of frame 0 and the conditional mean given frame 0 is a finite
mixture of shifts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ToyConfig",
    "ClipSample",
    "ClipBatch",
    "OracleError",
    "PriorMode",
    "PriorSpec",
    "blob_frame",
    "generate_clip",
    "generate_dataset",
    "sample_batch",
    "recover_center",
    "conditional_mean_oracle",
    "build_prior",
]


class OracleError(ValueError):
    """The conditioning frame is not a realisable blob."""


@dataclass(frozen=True)
class ToyConfig:
    L: int = 8
    d: int = 16
    C: int = 3
    width: float = 1.5
    velocities: tuple[tuple[int, ...], ...] = ((0,), (1,), (1, -1))

    def __post_init__(self):
        vel = tuple(tuple(int(v) for v in vs) for vs in self.velocities)
        object.__setattr__(self, "velocities", vel)
        if self.L < 1 or self.d < 1 or self.C < 1:
            raise ValueError(f"L, d, C must be >= 1: {self}")
        if self.width <= 0:
            raise ValueError("blob width must be positive")
        if len(vel) != self.C or any(len(vs) == 0 for vs in vel):
            raise ValueError("need one nonempty velocity set per class")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.L, self.d)

    def to_dict(self) -> dict:
        return {"L": self.L, "d": self.d, "C": self.C, "width": self.width,
                "velocities": [list(v) for v in self.velocities]}


@dataclass(frozen=True)
class ClipSample:
    z0: np.ndarray
    label: int
    velocity: int
    x0: float


@dataclass(frozen=True)
class ClipBatch:
    """A batch of clips; ``z0`` has shape ``(B, L, d)``."""

    z0: np.ndarray
    labels: np.ndarray
    velocities: np.ndarray
    x0: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def first_frames(self) -> np.ndarray:
        return self.z0[:, 0]

    @classmethod
    def from_clips(cls, clips: Sequence[ClipSample]) -> "ClipBatch":
        return cls(
            z0=np.stack([c.z0 for c in clips]),
            labels=np.array([c.label for c in clips], dtype=np.int64),
            velocities=np.array([c.velocity for c in clips], dtype=np.int64),
            x0=np.array([c.x0 for c in clips]),
        )


def _periodic_dist(j: np.ndarray, x: np.ndarray, d: int) -> np.ndarray:
    diff = np.mod(j - x, d)
    return np.minimum(diff, d - diff)


def blob_frame(center, d: int, width: float) -> np.ndarray:
    """Bump ``exp(-dist**2 / (2 w**2))`` on ``d`` periodic cells; ``center`` may be batched."""
    center = np.asarray(center, dtype=np.float64)
    j = np.arange(d, dtype=np.float64)
    dist = _periodic_dist(j, center[..., None], d)
    return np.exp(-(dist**2) / (2.0 * width**2))


def _clip_from(config: ToyConfig, x0, v) -> np.ndarray:
    ell = np.arange(config.L, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    centers = x0[..., None] + ell * v[..., None]
    return blob_frame(centers, config.d, config.width)


def generate_clip(seed, config: ToyConfig = ToyConfig(), label: int | None = None) -> ClipSample:
    """One clip, deterministic in ``seed``. The class is drawn unless given."""
    rng = np.random.default_rng(seed)
    if label is None:
        label = int(rng.integers(config.C))
    elif not 0 <= label < config.C:
        raise ValueError(f"label {label} outside [0, {config.C})")
    x0 = float(rng.uniform(0.0, config.d))
    vs = config.velocities[label]
    v = int(vs[rng.integers(len(vs))])
    return ClipSample(z0=_clip_from(config, x0, v), label=int(label), velocity=v, x0=x0)


def generate_dataset(seed: int, n: int, config: ToyConfig = ToyConfig()) -> ClipBatch:
    """``n`` clips with per-clip seeds ``(seed, index)``; independent of evaluation order."""
    clips = [generate_clip(np.random.SeedSequence((seed, i)), config) for i in range(n)]
    return ClipBatch.from_clips(clips)


def sample_batch(rng: np.random.Generator, n: int, config: ToyConfig = ToyConfig(),
                 labels: np.ndarray | None = None) -> ClipBatch:
    """Vectorised fresh batch drawn from ``rng`` (used by the training loops)."""
    if labels is None:
        labels = rng.integers(config.C, size=n)
    labels = np.asarray(labels, dtype=np.int64)
    x0 = rng.uniform(0.0, config.d, size=n)
    pick = rng.random(n)
    v = np.empty(n, dtype=np.int64)
    for c, vs in enumerate(config.velocities):
        mask = labels == c
        idx = np.minimum((pick[mask] * len(vs)).astype(np.int64), len(vs) - 1)
        v[mask] = np.asarray(vs, dtype=np.int64)[idx]
    return ClipBatch(z0=_clip_from(config, x0, v), labels=labels, velocities=v, x0=x0)


def recover_center(frame: np.ndarray, config: ToyConfig, atol: float = 1e-8) -> float:
    """Blob centre of a frame; the log of a Gaussian bump is exactly quadratic near its peak."""
    frame = np.asarray(frame, dtype=np.float64)
    d = config.d
    if frame.shape != (d,) or np.any(frame <= 0) or not np.all(np.isfinite(frame)):
        raise OracleError("frame is not a positive length-d blob profile")
    j = int(np.argmax(frame))
    lm, l0, lp = np.log(frame[(j - 1) % d]), np.log(frame[j]), np.log(frame[(j + 1) % d])
    curv = lm - 2.0 * l0 + lp
    if not curv < 0:
        raise OracleError("frame has no isolated peak")
    x = np.mod(j + 0.5 * (lm - lp) / curv, d)
    if np.max(np.abs(blob_frame(x, d, config.width) - frame)) > atol:
        raise OracleError("frame does not match a blob of the configured width")
    return float(x)


def conditional_mean_oracle(config: ToyConfig, z_i: np.ndarray, c: int) -> np.ndarray:
    """Exact ``E[z0 | z_i, c]``: the average over the class's velocities of the shifted blob."""
    x = recover_center(z_i, config)
    vs = np.asarray(config.velocities[c], dtype=np.float64)
    clips = _clip_from(config, np.full(vs.shape, x), vs)
    mean = clips.mean(axis=0)
    mean[0] = z_i
    return mean


class PriorMode(str, Enum):
    REPLICATED = "replicated"
    NEURAL = "neural"


@dataclass(frozen=True)
class PriorSpec:
    """How the terminal state ``z_T`` is built from the conditioning frame.

    ``network`` is any callable ``(z_i_replicated, labels) -> (B, L, d)``,
    typically :func:`framebridge.denoiser.prior_forward` bound to a model.
    """

    mode: PriorMode = PriorMode.REPLICATED
    network: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mode", PriorMode(self.mode))
        if self.mode is PriorMode.NEURAL and self.network is None:
            raise ValueError("neural prior requires a network")


def build_prior(spec: PriorSpec, z_i: np.ndarray, labels, L: int) -> np.ndarray:
    """Terminal state from conditioning frames ``z_i`` of shape ``(B, d)`` (or ``(d,)``)."""
    z_i = np.asarray(z_i, dtype=np.float64)
    single = z_i.ndim == 1
    if single:
        z_i = z_i[None]
        labels = np.atleast_1d(labels)
    replicated = np.repeat(z_i[:, None, :], L, axis=1)
    if spec.mode is PriorMode.REPLICATED:
        out = replicated
    else:
        if spec.network is None:
            raise ValueError("neural prior requires a network")
        out = np.array(spec.network(replicated, np.asarray(labels, dtype=np.int64)), dtype=np.float64)
        out = out.reshape(replicated.shape)
        out[:, 0] = z_i
    return out[0] if single else out
