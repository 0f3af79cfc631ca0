r"""SNR-aligned inputs for fine-tuning a diffusion teacher into a bridge model.

A bridge state :math:`z_t = a_t z_0 + b_t z_T + c_t \epsilon` is rescaled to

.. math:: \tilde z_t = \frac{z_t - b_t z_T}{\sqrt{a_t^2 + c_t^2}}
    = \tilde\alpha\, z_0 + \tilde\sigma\, \epsilon,
    \qquad \tilde\alpha^2 + \tilde\sigma^2 = 1,

and fed to the teacher at the time :math:`\tilde t` where the teacher's SNR equals
:math:`a_t^2 / c_t^2 = \mathrm{SNR}_t - \mathrm{SNR}_T`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bridge_kernel import BridgeSingularityError, _bcast, _check_shapes, bridge_coeffs, noise_to_eps_target
from .schedule import Schedule, SNRTable

__all__ = ["AlignmentError", "OutputMode", "AlignmentMap"]

log = logging.getLogger(__name__)


class AlignmentError(ValueError):
    """The bridge SNR at some t falls outside the teacher's SNR range."""


class OutputMode(str, Enum):
    EPS = "eps"
    V = "v"


@dataclass(frozen=True, eq=False)
class AlignmentMap:
    """Maps bridge ``(z_t, t)`` onto a teacher's ``(z~, t~)`` input convention.

    Args:
        bridge: schedule of the bridge process.
        teacher: continuous teacher schedule, or a tabulated :class:`SNRTable`
            for discrete-step teachers.
        output_mode: teacher output convention, ``"eps"`` or ``"v"``.
        clamp: if true, aligned SNRs outside the teacher range are clamped to
            the nearest teacher timestep; otherwise :class:`AlignmentError` is raised.
        t_range: bridge times the map is expected to serve. With ``clamp=False``
            construction fails if the teacher cannot cover this range.
    """

    bridge: Schedule
    teacher: Schedule | SNRTable
    output_mode: OutputMode = OutputMode.EPS
    clamp: bool = True
    t_range: tuple[float, float] | None = None
    _bounds: tuple[float, float, float, float] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "output_mode", OutputMode(self.output_mode))
        if isinstance(self.teacher, SNRTable):
            # (t at max SNR, max SNR, t at min SNR, min SNR)
            bounds = (self.teacher.t[0], self.teacher.snr_max, self.teacher.t[-1], self.teacher.snr_min)
        else:
            bounds = (0.0, np.inf, self.teacher.T, self.teacher.snr(self.teacher.T))
        object.__setattr__(self, "_bounds", tuple(float(x) for x in bounds))
        if self.t_range is not None and not self.clamp:
            lo, hi = self.t_range
            grid = np.linspace(lo, hi, 257)
            self._aligned_snr_checked(grid)

    def aligned_snr(self, t):
        """``a_t**2 / c_t**2``, the SNR of the rescaled state."""
        _interior(self.bridge, t)
        a, _, c = bridge_coeffs(self.bridge, t).as_tuple()
        return np.asarray(a) ** 2 / np.asarray(c) ** 2

    def _aligned_snr_checked(self, t):
        v = self.aligned_snr(t)
        too_low, too_high = self._outside(v)
        bad = too_low | too_high
        if np.any(bad):
            _, snr_max, _, snr_min = self._bounds
            t_bad = np.atleast_1d(np.broadcast_to(np.asarray(t, dtype=np.float64), np.shape(v)))[np.atleast_1d(bad)]
            raise AlignmentError(
                f"bridge t={t_bad[:5]} has aligned SNR outside teacher range ({snr_min}, {snr_max})"
            )
        return v

    def _outside(self, v):
        _, snr_max, _, snr_min = self._bounds
        # a continuous teacher's range is open at snr(T); a table's is closed
        too_low = v <= snr_min if np.isinf(snr_max) else v < snr_min
        return too_low, v > snr_max

    def aligned_time(self, t):
        """Teacher time ``t~`` whose SNR matches ``a_t**2 / c_t**2``.

        Returns ``(t_tilde, clamped)`` where ``clamped`` flags entries that hit
        a teacher boundary.
        """
        if not self.clamp:
            v = self._aligned_snr_checked(t)
            return self._invert(v), np.zeros(np.shape(v), dtype=bool)
        v = np.asarray(self.aligned_snr(t))
        t_hi_snr, snr_max, t_lo_snr, snr_min = self._bounds
        too_low, too_high = self._outside(v)
        inside = ~(too_low | too_high)
        out = np.where(too_low, t_lo_snr, t_hi_snr).astype(np.float64)
        if np.any(inside):
            out = np.where(inside, self._invert(np.where(inside, v, _safe_inside(snr_min, snr_max))), out)
        clamped = too_low | too_high
        if np.any(clamped):
            log.debug("clamped %d aligned timesteps", int(np.sum(clamped)))
        if out.ndim == 0:
            return float(out), bool(clamped)
        return out, clamped

    def _invert(self, v):
        if isinstance(self.teacher, SNRTable):
            return np.asarray(self.teacher.inverse(v))
        return np.asarray(self.teacher.snr_inverse(v))

    def scales(self, t):
        """``(alpha~, sigma~) = (a, c) / sqrt(a**2 + c**2)``."""
        a, _, c = bridge_coeffs(self.bridge, t).as_tuple()
        norm = np.sqrt(np.asarray(a) ** 2 + np.asarray(c) ** 2)
        return np.asarray(a) / norm, np.asarray(c) / norm

    def align_state(self, z_t, t, zT):
        """Return ``(z~_t, t~)`` for the teacher's input convention."""
        _interior(self.bridge, t)
        _check_shapes(z_t, zT)
        a, b, c = bridge_coeffs(self.bridge, t).as_tuple()
        z_t = np.asarray(z_t)
        norm = _bcast(np.sqrt(np.asarray(a) ** 2 + np.asarray(c) ** 2), z_t)
        z_tilde = (z_t - _bcast(b, z_t) * zT) / norm
        t_tilde, _ = self.aligned_time(t)
        return z_tilde, t_tilde

    def align_target(self, z0, eps, t):
        """Training target in the teacher's output convention.

        ``eps`` mode leaves the denoising target ``eps`` (normally
        ``(z_t - alpha_t z0) / sigma_t``) unchanged. ``v`` mode expects the
        kernel noise as ``eps`` and returns ``alpha~ eps - sigma~ z0``.
        """
        _check_shapes(z0, eps)
        if self.output_mode is OutputMode.EPS:
            return np.array(eps, dtype=np.float64, copy=True)
        alpha_t, sigma_t = self.scales(t)
        eps = np.asarray(eps)
        return _bcast(alpha_t, eps) * eps - _bcast(sigma_t, eps) * z0

    def unalign_prediction(self, net_output, t, z_tilde=None):
        """Invert :meth:`align_target` on a network output.

        ``eps`` mode is the identity. ``v`` mode recovers the kernel noise
        ``sigma~ z~ + alpha~ v`` and therefore needs the aligned state.
        """
        if self.output_mode is OutputMode.EPS:
            return np.asarray(net_output, dtype=np.float64)
        if z_tilde is None:
            raise ValueError("v-prediction inversion needs the aligned state z_tilde")
        _check_shapes(net_output, z_tilde)
        alpha_t, sigma_t = self.scales(t)
        out = np.asarray(net_output)
        return _bcast(sigma_t, out) * z_tilde + _bcast(alpha_t, out) * out

    def score_eps(self, net_output, t, z_t, zT, z_tilde):
        """Network output converted to the ``(z_t - alpha_t z0)/sigma_t`` estimate used by the score."""
        eps_hat = self.unalign_prediction(net_output, t, z_tilde)
        if self.output_mode is OutputMode.EPS:
            return eps_hat
        return noise_to_eps_target(self.bridge, t, eps_hat, z_t, zT)

    def to_dict(self) -> dict:
        return {
            "bridge": self.bridge.to_dict(),
            "teacher": self.teacher.to_dict(),
            "output_mode": self.output_mode.value,
            "clamp": self.clamp,
        }


def _interior(sched: Schedule, t):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0.0) or np.any(t_arr >= sched.T):
        raise BridgeSingularityError(f"alignment needs t in (0, {sched.T}), got {t}")


def _safe_inside(lo: float, hi: float) -> float:
    if np.isinf(hi):
        return 2.0 * lo + 1.0
    return 0.5 * (lo + hi)
