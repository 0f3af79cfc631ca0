"""Sample-quality metrics for the toy tasks.

Everything here is a pure reduction over arrays with a fixed summation order.
Isotropic Gaussians are described by a mean array and a scalar variance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .toy_world import OracleError, ToyConfig, conditional_mean_oracle

__all__ = [
    "EvalReport",
    "gaussian_w2_sq",
    "fit_isotropic_gaussian",
    "frame_mse",
    "first_frame_consistency",
    "prior_gap",
    "replicated_prior_gap",
    "bootstrap_se",
]


def gaussian_w2_sq(m1, s1_sq: float, m2, s2_sq: float, dims: int | None = None) -> float:
    """Squared 2-Wasserstein distance between ``N(m1, s1_sq I)`` and ``N(m2, s2_sq I)``.

    ``dims`` defaults to the size of the means.
    """
    if s1_sq < 0 or s2_sq < 0:
        raise ValueError("variances must be nonnegative")
    m1, m2 = np.asarray(m1, dtype=np.float64), np.asarray(m2, dtype=np.float64)
    if m1.shape != m2.shape:
        raise ValueError(f"mean shapes differ: {m1.shape} vs {m2.shape}")
    if dims is None:
        dims = max(m1.size, 1)
    return float(np.sum((m1 - m2) ** 2) + dims * (np.sqrt(s1_sq) - np.sqrt(s2_sq)) ** 2)


def fit_isotropic_gaussian(samples: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-coordinate mean and pooled (per-coordinate unbiased) variance of ``(n, ...)`` samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    mean = samples.mean(axis=0)
    return mean, float(samples.var(axis=0, ddof=1).mean())


def bootstrap_se(samples: np.ndarray, stat, n_boot: int = 50, seed: int = 0) -> float:
    """Bootstrap standard error of ``stat(samples)`` over resampled rows."""
    samples = np.asarray(samples)
    rng = np.random.default_rng(seed)
    n = samples.shape[0]
    vals = [stat(samples[rng.integers(n, size=n)]) for _ in range(n_boot)]
    return float(np.std(vals, ddof=1))


def frame_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over all frames and cells of the squared difference."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _references(config: ToyConfig, z_i: np.ndarray, labels: np.ndarray) -> np.ndarray:
    refs = []
    for frame, c in zip(z_i, labels):
        try:
            refs.append(conditional_mean_oracle(config, frame, int(c)))
        except OracleError:
            refs.append(np.repeat(frame[None], config.L, axis=0))
    return np.stack(refs)


def first_frame_consistency(samples: np.ndarray, z_i: np.ndarray, labels=None,
                            config: ToyConfig | None = None) -> float:
    """Mean per-frame MSE of samples to the clip their conditioning frame implies.

    With ``config`` and ``labels`` the reference is the exact conditional mean
    (the motion-compensated first frame); without them it is ``z_i`` itself,
    which is exact for static classes. ``samples`` is ``(n, L, d)`` and
    ``z_i`` is ``(n, d)`` or a single ``(d,)`` frame shared by all samples.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[0] == 0:
        raise ValueError("samples must be a nonempty (n, L, d) array")
    z_i = np.broadcast_to(np.asarray(z_i, dtype=np.float64), (samples.shape[0], samples.shape[2]))
    if config is not None and labels is not None:
        labels = np.broadcast_to(np.asarray(labels), (samples.shape[0],))
        refs = _references(config, z_i, labels)
    else:
        refs = np.repeat(z_i[:, None, :], samples.shape[1], axis=1)
    return frame_mse(samples, refs)


def prior_gap(prior: np.ndarray, oracle_mean: np.ndarray) -> float:
    """Per-cell MSE between a terminal state and the conditional-mean oracle."""
    return frame_mse(prior, oracle_mean)


def replicated_prior_gap(config: ToyConfig, z_i: np.ndarray, v: int) -> float:
    """Closed-form gap of the replicated prior for a single-velocity class.

    ``(1 / L) sum_l ||z_i - shift(z_i, l v)||^2 / d``; integer velocities make
    every frame an exact circular shift.
    """
    z_i = np.asarray(z_i, dtype=np.float64)
    total = sum(float(np.sum((z_i - np.roll(z_i, ell * v)) ** 2)) for ell in range(config.L))
    return total / (config.L * config.d)


@dataclass
class EvalReport:
    metrics: dict[str, float]
    n_samples: int
    seed: int
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("sample count must be positive")
        for k, v in self.metrics.items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"metric {k}={v} is not a finite nonnegative number")

    def to_text(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    def append_csv(self, path) -> None:
        path = Path(path)
        keys = sorted(self.metrics)
        new = not path.exists()
        with open(path, "a") as fh:
            if new:
                fh.write(",".join(["config_hash", "seed", "n_samples"] + keys) + "\n")
            row = [self.config_hash, str(self.seed), str(self.n_samples)] + [repr(self.metrics[k]) for k in keys]
            fh.write(",".join(row) + "\n")
