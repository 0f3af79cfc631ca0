r"""Closed-form bridge kernel.

Pinning the forward diffusion of a schedule :math:`(\alpha_t, \sigma_t)` at an
endpoint :math:`z_T` gives the Gaussian kernel

.. math:: p(z_t \mid z_0, z_T) = \mathcal{N}(a_t z_0 + b_t z_T,\ c_t^2 I)

with :math:`r_t = \mathrm{SNR}_T / \mathrm{SNR}_t` and

.. math::
    a_t = \alpha_t (1 - r_t), \quad
    b_t = r_t \frac{\alpha_t}{\alpha_T}, \quad
    c_t^2 = \sigma_t^2 (1 - r_t).

Functions here are pure and vectorised over a leading batch axis: ``t`` may be
a scalar or an array of shape ``(B,)`` paired with latents of shape
``(B, ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule

__all__ = [
    "BridgeSingularityError",
    "BridgeCoefficients",
    "GaussianMarginal",
    "bridge_coeffs",
    "bridge_marginal",
    "sample_bridge_state",
    "h_term",
    "score_from_eps",
    "noise_to_eps_target",
    "eps_target",
    "analytic_gaussian_score",
]


class BridgeSingularityError(ValueError):
    """Raised where a bridge quantity is singular (typically ``t in {0, T}``)."""


def _bcast(coef, like: np.ndarray):
    """Reshape a scalar or ``(B,)`` coefficient to broadcast against ``like``."""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (like.ndim - coef.ndim))


def _check_shapes(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {[np.shape(a) for a in arrays]}")


def _snr_ratio(sched: Schedule, t):
    """``SNR_T / SNR_t`` as a guarded ratio, exactly 0 at t=0 and 1 at t=T."""
    alpha, sigma2 = sched.alpha_sigma2(t)
    alpha_T, sigma2_T = sched.alpha_sigma2(sched.T)
    return (np.asarray(sigma2) / sigma2_T) * (alpha_T**2 / np.asarray(alpha) ** 2)


@dataclass(frozen=True)
class BridgeCoefficients:
    """Kernel multipliers ``z_t = a z_0 + b z_T + c eps`` at one (or a batch of) t."""

    a: float | np.ndarray
    b: float | np.ndarray
    c: float | np.ndarray

    def as_tuple(self):
        return self.a, self.b, self.c


@dataclass(frozen=True)
class GaussianMarginal:
    mean: np.ndarray
    variance: float | np.ndarray


def bridge_coeffs(sched: Schedule, t) -> BridgeCoefficients:
    """Kernel coefficients ``(a_t, b_t, c_t)`` for ``t`` in ``[0, T]``."""
    alpha, sigma2 = sched.alpha_sigma2(t)
    alpha_T, _ = sched.alpha_sigma2(sched.T)
    r = _snr_ratio(sched, t)
    a = np.asarray(alpha) * (1.0 - r)
    b = r * np.asarray(alpha) / alpha_T
    c = np.sqrt(np.maximum(np.asarray(sigma2) * (1.0 - r), 0.0))
    if np.ndim(a) == 0:
        return BridgeCoefficients(float(a), float(b), float(c))
    return BridgeCoefficients(a, b, c)


def bridge_marginal(coeffs: BridgeCoefficients, z0: np.ndarray, zT: np.ndarray) -> GaussianMarginal:
    """Mean ``a z0 + b zT`` and isotropic variance ``c**2`` of the kernel."""
    _check_shapes(z0, zT)
    a, b, c = (_bcast(x, np.asarray(z0)) for x in coeffs.as_tuple())
    mean = a * z0 + b * zT
    var = np.asarray(coeffs.c) ** 2
    return GaussianMarginal(mean=mean, variance=float(var) if var.ndim == 0 else var)


def sample_bridge_state(coeffs: BridgeCoefficients, z0, zT, noise) -> np.ndarray:
    """Reparameterised draw ``a z0 + b zT + c noise``."""
    _check_shapes(z0, zT, noise)
    a, b, c = (_bcast(x, np.asarray(z0)) for x in coeffs.as_tuple())
    return a * z0 + b * zT + c * noise


def _interior(sched: Schedule, t, *, allow_zero: bool = False):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr >= sched.T) or (not allow_zero and np.any(t_arr <= 0.0)):
        raise BridgeSingularityError(f"t={t} is at a singular endpoint of (0, {sched.T})")
    if np.any(t_arr < 0.0):
        raise BridgeSingularityError(f"t={t} below 0")


def h_term(sched: Schedule, t, z, y) -> np.ndarray:
    r"""Endpoint drift :math:`\nabla_z \log p(z_T = y \mid z_t = z)`.

    .. math:: h = \frac{\alpha_T}{\alpha_t}\,
        \frac{y - \tfrac{\alpha_T}{\alpha_t} z}{\sigma_T^2 - \tfrac{\alpha_T^2}{\alpha_t^2}\sigma_t^2}

    For Bridge-gmax this is ``(y - z) / (sigma_T**2 - sigma_t**2)``. Singular at t = T.
    """
    _interior(sched, t, allow_zero=True)
    _check_shapes(z, y)
    alpha, sigma2 = sched.alpha_sigma2(t)
    alpha_T, sigma2_T = sched.alpha_sigma2(sched.T)
    ratio = alpha_T / np.asarray(alpha)
    denom = sigma2_T - ratio**2 * np.asarray(sigma2)
    z = np.asarray(z)
    ratio, denom = _bcast(ratio, z), _bcast(denom, z)
    return ratio * (y - ratio * z) / denom


def score_from_eps(sched: Schedule, t, eps_pred, z_t, zT) -> np.ndarray:
    r"""Bridge score from a prediction of ``(z_t - alpha_t z_0) / sigma_t``.

    .. math:: s = -\frac{\hat\epsilon}{\sigma_t}
        - r_t \frac{z_t - \tfrac{\alpha_t}{\alpha_T} z_T}{\sigma_t^2 (1 - r_t)}

    The full expression is always used; ``SNR_T`` is not assumed negligible.
    """
    _interior(sched, t)
    _check_shapes(eps_pred, z_t, zT)
    alpha, sigma2 = sched.alpha_sigma2(t)
    alpha_T, _ = sched.alpha_sigma2(sched.T)
    r = _snr_ratio(sched, t)
    z_t = np.asarray(z_t)
    sigma = _bcast(np.sqrt(sigma2), z_t)
    r_b = _bcast(r, z_t)
    pull = _bcast(np.asarray(alpha) / alpha_T, z_t)
    return -eps_pred / sigma - r_b * (z_t - pull * zT) / (sigma**2 * (1.0 - r_b))


def eps_target(sched: Schedule, t, z_t, z0) -> np.ndarray:
    """The denoising target ``(z_t - alpha_t z0) / sigma_t``."""
    _check_shapes(z_t, z0)
    alpha, sigma2 = sched.alpha_sigma2(t)
    if np.any(np.asarray(sigma2) <= 0):
        raise BridgeSingularityError("sigma_t = 0; target undefined at t = 0")
    z_t = np.asarray(z_t)
    return (z_t - _bcast(alpha, z_t) * z0) / _bcast(np.sqrt(sigma2), z_t)


def noise_to_eps_target(sched: Schedule, t, noise_pred, z_t, zT) -> np.ndarray:
    """Convert a kernel-noise prediction into the ``(z_t - alpha_t z0)/sigma_t`` convention.

    The implied clean latent is ``(z_t - b zT - c noise) / a``.
    """
    _interior(sched, t)
    _check_shapes(noise_pred, z_t, zT)
    a, b, c = (_bcast(x, np.asarray(z_t)) for x in bridge_coeffs(sched, t).as_tuple())
    z0_hat = (z_t - b * zT - c * noise_pred) / a
    return eps_target(sched, t, z_t, z0_hat)


def analytic_gaussian_score(sched: Schedule, t, z_t, zT, m, s2: float) -> np.ndarray:
    r"""Exact score of :math:`p(z_t \mid z_T)` when :math:`z_0 \sim \mathcal{N}(m, s^2 I)`.

    Returns :math:`-(z_t - a_t m - b_t z_T) / (a_t^2 s^2 + c_t^2)`.
    """
    if s2 < 0:
        raise ValueError("s2 must be nonnegative")
    _interior(sched, t)
    z_t = np.asarray(z_t)
    a, b, c = bridge_coeffs(sched, t).as_tuple()
    var = np.asarray(a) ** 2 * s2 + np.asarray(c) ** 2
    if np.any(var <= 0):
        raise BridgeSingularityError("marginal variance a^2 s^2 + c^2 is zero")
    a, b, var = (_bcast(x, z_t) for x in (a, b, var))
    return -(z_t - a * m - b * zT) / var
