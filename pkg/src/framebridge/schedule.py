r"""Noising schedules for the diffusion teacher and the bridge process.

A schedule maps a time :math:`t \in [0, T]` to the coefficients of the Gaussian
perturbation kernel

.. math:: p(z_t \mid z_0) = \mathcal{N}(\alpha_t z_0, \sigma_t^2 I)

together with the drift and diffusion coefficients :math:`f(t), g(t)^2` of the
forward SDE :math:`dz = f(t) z\,dt + g(t)\,dw`. Two families are provided:

* :class:`VPSchedule`, variance preserving with a linear :math:`\beta(t)`;
* :class:`BridgeGmaxSchedule`, with :math:`f = 0`, :math:`\alpha_t = 1` and
  :math:`\sigma_t^2 = \tfrac12(\beta_1 - \beta_0) t^2 + \beta_0 t`.

All methods accept scalars or arrays and return the same kind.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScheduleDomainError",
    "SNRRangeError",
    "Schedule",
    "VPSchedule",
    "BridgeGmaxSchedule",
    "SNRTable",
    "snr_inverse_discrete",
    "schedule_from_dict",
]

_BISECTION_STEPS = 200


class ScheduleDomainError(ValueError):
    """Raised when a time lies outside the schedule's domain."""


class SNRRangeError(ValueError):
    """Raised when an SNR value cannot be inverted on the schedule."""


def _as_time(t):
    return np.asarray(t, dtype=np.float64)


def _unwrap(x):
    return float(x) if np.ndim(x) == 0 else x


class Schedule(abc.ABC):
    """Abstract noising schedule on ``[0, T]``."""

    T: float

    @property
    @abc.abstractmethod
    def kind(self) -> str: ...

    @abc.abstractmethod
    def _alpha_sigma2(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    @abc.abstractmethod
    def _drift_diffusion(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    @abc.abstractmethod
    def to_dict(self) -> dict: ...

    def _check(self, t: np.ndarray, *, open_left: bool = False) -> None:
        lo_bad = t <= 0.0 if open_left else t < 0.0
        if np.any(lo_bad) or np.any(t > self.T) or not np.all(np.isfinite(t)):
            bad = t[np.logical_or(lo_bad, t > self.T)] if t.ndim else t
            side = "(0, T]" if open_left else "[0, T]"
            raise ScheduleDomainError(f"t={bad} outside {side} with T={self.T}")

    def alpha_sigma(self, t):
        """Return ``(alpha_t, sigma_t)``."""
        t = _as_time(t)
        self._check(t)
        alpha, sigma2 = self._alpha_sigma2(t)
        return _unwrap(alpha), _unwrap(np.sqrt(sigma2))

    def alpha_sigma2(self, t):
        """Return ``(alpha_t, sigma_t**2)`` without the square root."""
        t = _as_time(t)
        self._check(t)
        alpha, sigma2 = self._alpha_sigma2(t)
        return _unwrap(alpha), _unwrap(sigma2)

    def drift_diffusion(self, t):
        """Return ``(f(t), g(t)**2)`` of the forward SDE."""
        t = _as_time(t)
        self._check(t)
        f, g2 = self._drift_diffusion(t)
        return _unwrap(f), _unwrap(g2)

    def snr(self, t):
        r"""Signal-to-noise ratio :math:`\alpha_t^2 / \sigma_t^2` on ``(0, T]``."""
        t = _as_time(t)
        self._check(t, open_left=True)
        alpha, sigma2 = self._alpha_sigma2(t)
        return _unwrap(alpha**2 / sigma2)

    def snr_inverse(self, v):
        """Time at which the SNR equals ``v``, by bisection on the monotone SNR.

        Valid for ``v`` in ``(snr(T), inf)``; anything else raises
        :class:`SNRRangeError`.
        """
        v = np.asarray(v, dtype=np.float64)
        snr_T = self.snr(self.T)
        if np.any(~(v > snr_T)) or not np.all(np.isfinite(v)):
            raise SNRRangeError(f"SNR value(s) {v[~(v > snr_T)] if v.ndim else v} not in ({snr_T}, inf)")
        lo = np.zeros_like(v)
        hi = np.full_like(v, self.T)
        for _ in range(_BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if np.all((mid == lo) | (mid == hi)):
                break
            alpha, sigma2 = self._alpha_sigma2(mid)
            # SNR(mid) > v  <=>  alpha^2 > v sigma^2 ; avoids division at mid = 0
            above = alpha**2 > v * sigma2
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        # hi brackets from below in SNR, lo from above; keep the closer one
        out = np.where(np.abs(self._snr_raw(lo) - v) < np.abs(self._snr_raw(hi) - v), lo, hi)
        return _unwrap(out)

    def _snr_raw(self, t):
        alpha, sigma2 = self._alpha_sigma2(t)
        with np.errstate(divide="ignore"):
            return alpha**2 / sigma2

    def table(self, n_steps: int) -> "SNRTable":
        """Sample the SNR at ``n_steps`` uniform timesteps ``T/n, 2T/n, ..., T``."""
        t = self.T * np.arange(1, n_steps + 1) / n_steps
        return SNRTable(t=t, snr=np.asarray(self.snr(t)))


@dataclass(frozen=True)
class VPSchedule(Schedule):
    r"""Variance preserving schedule with :math:`\beta(t)` linear on ``[0, T]``.

    :math:`\alpha_t = \exp(-\tfrac12 \int_0^t \beta)`, :math:`\sigma_t^2 = 1 - \alpha_t^2`,
    :math:`f = -\tfrac12\beta(t)`, :math:`g^2 = \beta(t)`.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0

    def __post_init__(self):
        if not (self.T > 0 and self.beta_min > 0 and self.beta_max >= self.beta_min):
            raise ValueError(f"invalid VP parameters: {self}")

    @property
    def kind(self) -> str:
        return "vp"

    def beta(self, t):
        return self.beta_min + (self.beta_max - self.beta_min) * t / self.T

    def _integral(self, t):
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t**2 / self.T

    def _alpha_sigma2(self, t):
        B = self._integral(t)
        return np.exp(-0.5 * B), -np.expm1(-B)

    def _drift_diffusion(self, t):
        beta = self.beta(t)
        return -0.5 * beta, beta

    def to_dict(self) -> dict:
        return {"kind": "vp", "beta_min": self.beta_min, "beta_max": self.beta_max, "T": self.T}


@dataclass(frozen=True)
class BridgeGmaxSchedule(Schedule):
    r"""Bridge-gmax: :math:`f = 0`, :math:`g^2 = \beta_0 + t(\beta_1 - \beta_0)`, :math:`\alpha_t = 1`."""

    beta0: float = 0.01
    beta1: float = 50.0
    T: float = 1.0

    def __post_init__(self):
        if not (self.T > 0 and self.beta0 > 0 and self.beta1 >= self.beta0):
            raise ValueError(f"invalid Bridge-gmax parameters: {self}")

    @property
    def kind(self) -> str:
        return "bridge_gmax"

    def _alpha_sigma2(self, t):
        return np.ones_like(t), 0.5 * (self.beta1 - self.beta0) * t**2 + self.beta0 * t

    def _drift_diffusion(self, t):
        return np.zeros_like(t), self.beta0 + t * (self.beta1 - self.beta0)

    def to_dict(self) -> dict:
        return {"kind": "bridge_gmax", "beta0": self.beta0, "beta1": self.beta1, "T": self.T}


@dataclass(frozen=True, eq=False)
class SNRTable:
    """SNR sampled at discrete teacher timesteps.

    ``t`` must be strictly increasing and ``snr`` strictly decreasing. Between
    grid points the SNR is treated as linear in ``t``.
    """

    t: np.ndarray
    snr: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        snr = np.asarray(self.snr, dtype=np.float64)
        if t.ndim != 1 or t.shape != snr.shape or t.size < 2:
            raise ValueError("SNR table needs matching 1-D arrays with at least two entries")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(snr) >= 0):
            raise ValueError("SNR table must have increasing t and strictly decreasing SNR")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "snr", snr)

    @property
    def snr_max(self) -> float:
        return float(self.snr[0])

    @property
    def snr_min(self) -> float:
        return float(self.snr[-1])

    def inverse(self, v):
        """Piecewise-linear inverse of the tabulated SNR."""
        v = np.asarray(v, dtype=np.float64)
        if np.any(v > self.snr_max) or np.any(v < self.snr_min) or not np.all(np.isfinite(v)):
            raise SNRRangeError(f"SNR value(s) outside table range [{self.snr_min}, {self.snr_max}]")
        neg = -self.snr  # increasing
        n = np.clip(np.searchsorted(neg, -v, side="right") - 1, 0, self.t.size - 2)
        s0, s1 = self.snr[n], self.snr[n + 1]
        w = (s0 - v) / (s0 - s1)
        out = self.t[n] + w * (self.t[n + 1] - self.t[n])
        return _unwrap(out)

    def to_dict(self) -> dict:
        return {"kind": "table", "t": self.t.tolist(), "snr": self.snr.tolist()}


def snr_inverse_discrete(table: SNRTable, v):
    """Functional alias for :meth:`SNRTable.inverse`."""
    return table.inverse(v)


def schedule_from_dict(spec: dict) -> Schedule:
    """Build a schedule from a config mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "vp":
        return VPSchedule(**spec)
    if kind == "bridge_gmax":
        return BridgeGmaxSchedule(**spec)
    raise ValueError(f"unknown schedule kind {kind!r}")
