r"""Euler–Maruyama samplers for the backward bridge and diffusion SDEs.

The bridge sampler integrates

.. math:: dz = [f(t) z - g(t)^2 (s - h)]\,dt + g(t)\,d\bar w

from :math:`z_T` at ``T - eps_t`` down to ``eps_t``. The diffusion sampler drops
``h`` and starts from :math:`\mathcal N(0, \sigma_T^2 I)`. Scores come from a
pluggable source: a trained network or an exact Gaussian oracle.

All randomness is drawn from one generator seeded by ``SampleConfig.seed``;
a run is reproducible for a fixed batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import denoiser as dn
from .bridge_kernel import analytic_gaussian_score, h_term, score_from_eps
from .saf import AlignmentMap
from .schedule import Schedule

__all__ = [
    "SamplingError",
    "SampleConfig",
    "STEP_PRESETS",
    "GaussianBridgeScore",
    "GaussianDiffusionScore",
    "ZeroScore",
    "BridgeModelScore",
    "DiffusionModelScore",
    "sample_bridge",
    "sample_diffusion",
]

# step counts used by the reference samplers
STEP_PRESETS = (250, 100, 50, 40, 20)


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleConfig:
    """Sampler settings.

    ``eps_t`` is a fraction of ``T``. ``grid``, when given, overrides the
    uniform grid and must decrease strictly; its first and last entries are
    the start and end times.
    """

    steps: int = 200
    eps_t: float = 1e-4
    seed: int = 0
    final_noise: bool = False
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one sampler step")
        if not 0 < self.eps_t < 0.5:
            raise ValueError("eps_t must lie in (0, 0.5)")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=np.float64)
            if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) >= 0):
                raise ValueError("grid must be a strictly decreasing sequence of >= 2 times")

    def timesteps(self, T: float) -> np.ndarray:
        """Decreasing grid ``t_N > ... > t_0``."""
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=np.float64)
            if g[0] >= T or g[-1] <= 0:
                raise ValueError(f"grid must lie inside (0, {T})")
            return g
        return np.linspace(T - self.eps_t * T, self.eps_t * T, self.steps + 1)


@dataclass(frozen=True)
class GaussianBridgeScore:
    """Exact bridge score when ``z0 ~ N(m, s2 I)``."""

    schedule: Schedule
    m: np.ndarray | float
    s2: float

    def __call__(self, t, z, zT, labels=None):
        return analytic_gaussian_score(self.schedule, t, z, zT, self.m, self.s2)


@dataclass(frozen=True)
class GaussianDiffusionScore:
    """Exact diffusion score when ``z0 ~ N(m, s2 I)``: the marginal is ``N(alpha m, alpha^2 s2 + sigma^2)``."""

    schedule: Schedule
    m: np.ndarray | float
    s2: float

    def __call__(self, t, z, cond=None, labels=None):
        alpha, sigma2 = self.schedule.alpha_sigma2(t)
        return -(z - alpha * np.asarray(self.m)) / (alpha**2 * self.s2 + sigma2)


@dataclass(frozen=True)
class ZeroScore:
    schedule: Schedule

    def __call__(self, t, z, *args, **kwargs):
        return np.zeros_like(z)


@dataclass(frozen=True)
class BridgeModelScore:
    """Score of a trained bridge network, optionally behind an SNR alignment map."""

    model: dn.DenseNet
    schedule: Schedule
    align: AlignmentMap | None = None

    def __call__(self, t, z, zT, labels):
        tb = np.full(z.shape[0], t)
        if self.align is None:
            eps, _ = dn.forward(self.model, z, tb, zT, labels)
        else:
            z_tilde, t_tilde = self.align.align_state(z, tb, zT)
            out, _ = dn.forward(self.model, z_tilde, t_tilde, zT, labels)
            eps = self.align.score_eps(out, tb, z, zT, z_tilde)
        return score_from_eps(self.schedule, tb, eps, z, zT)


@dataclass(frozen=True)
class DiffusionModelScore:
    """Score ``-eps_hat / sigma_t`` of a noise-predicting diffusion network."""

    model: dn.DenseNet
    schedule: Schedule

    def __call__(self, t, z, cond, labels):
        tb = np.full(z.shape[0], t)
        eps, _ = dn.forward(self.model, z, tb, cond, labels)
        _, sigma = self.schedule.alpha_sigma(t)
        return -eps / sigma


def _check_finite(z: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(z)):
        raise SamplingError(f"non-finite sampler state at t={t:.6g}")


def _integrate(schedule: Schedule, drift, z: np.ndarray, cfg: SampleConfig) -> np.ndarray:
    ts = cfg.timesteps(schedule.T)
    rng = np.random.default_rng(cfg.seed)
    for k in range(len(ts) - 1):
        t, dt = ts[k], ts[k] - ts[k + 1]
        f, g2 = schedule.drift_diffusion(t)
        z = z - (f * z - g2 * drift(t, z)) * dt
        if k < len(ts) - 2 or cfg.final_noise:
            z = z + np.sqrt(g2 * dt) * rng.standard_normal(z.shape)
        _check_finite(z, ts[k + 1])
    return z


def sample_bridge(source, zT: np.ndarray, labels=None, config: SampleConfig = SampleConfig()) -> np.ndarray:
    """Generate clips by running the backward bridge SDE from ``zT``.

    ``zT`` has shape ``(B, L, d)`` and is typically built by
    :func:`framebridge.toy_world.build_prior`.
    """
    zT = np.asarray(zT, dtype=np.float64)
    if zT.ndim != 3:
        raise ValueError("zT must have shape (B, L, d)")
    schedule = source.schedule
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)

    def drift(t, z):
        return source(t, z, zT, labels) - h_term(schedule, t, z, zT)

    return _integrate(schedule, drift, zT.copy(), config)


def sample_diffusion(source, cond: np.ndarray, labels=None, config: SampleConfig = SampleConfig()) -> np.ndarray:
    """Generate clips with the backward diffusion SDE.

    ``cond`` is the replicated conditioning frame of shape ``(B, L, d)``; it is
    passed to the score source and fixes the output shape.
    """
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim != 3:
        raise ValueError("cond must have shape (B, L, d)")
    schedule = source.schedule
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    _, sigma_T = schedule.alpha_sigma(schedule.T)
    init_rng = np.random.default_rng((config.seed, 1))
    z = sigma_T * init_rng.standard_normal(cond.shape)

    def drift(t, z):
        return source(t, z, cond, labels)

    return _integrate(schedule, drift, z, config)
