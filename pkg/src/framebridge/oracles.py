"""Analytic oracle checks, used by ``framebridge oracle-check`` and the acceptance tests.

Each check returns an :class:`OracleResult`. Sizes are parameters so the same
code serves as a quick smoke test and as a full-size acceptance run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import denoiser as dn
from .bridge_kernel import (analytic_gaussian_score, bridge_coeffs, sample_bridge_state,
                            score_from_eps)
from .evalkit import fit_isotropic_gaussian, gaussian_w2_sq
from .sampler import GaussianBridgeScore, SampleConfig, sample_bridge
from .saf import AlignmentMap
from .schedule import BridgeGmaxSchedule, Schedule, VPSchedule

__all__ = [
    "OracleResult",
    "check_kernel_moments",
    "check_kernel_boundaries",
    "check_score_identity",
    "check_saf_alignment",
    "check_saf_moments",
    "check_saf_table",
    "check_sampler_w2",
    "check_gradients",
    "run_all",
]


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}) {self.detail}".rstrip()


def _weighted_moments(x, logw):
    """Self-normalised importance-sampling mean/variance and their delta-method standard errors."""
    w = np.exp(logw - logw.max())
    w /= w.sum()
    mu = np.sum(w * x)
    dev2 = (x - mu) ** 2
    var = np.sum(w * dev2)
    se_mu = np.sqrt(np.sum(w**2 * dev2))
    se_var = np.sqrt(np.sum(w**2 * (dev2 - var) ** 2))
    return mu, var, se_mu, se_var


def check_kernel_moments(sched: Schedule | None = None, n_triples: int = 10, n_mc: int = 100_000,
                         seed: int = 0, n_se: float = 4.0) -> OracleResult:
    """Bridge mean/variance against two Monte-Carlo estimates.

    The first draws from :func:`sample_bridge_state`. The second does not use
    the kernel formulas: it draws ``z_t`` from the unpinned forward process and
    reweights by the forward transition density ``p(z_T = y | z_t)``.
    """
    sched = sched or BridgeGmaxSchedule()
    rng = np.random.default_rng(seed)
    alpha_T, sigma2_T = sched.alpha_sigma2(sched.T)
    worst = 0.0
    for _ in range(n_triples):
        t = float(rng.uniform(0.05, 0.95) * sched.T)
        z0, y = rng.normal(size=2)
        coeffs = bridge_coeffs(sched, t)
        mean = coeffs.a * z0 + coeffs.b * y
        var = coeffs.c**2

        noise = rng.standard_normal(n_mc)
        direct = sample_bridge_state(coeffs, np.full(n_mc, z0), np.full(n_mc, y), noise)
        se_m = np.sqrt(var / n_mc)
        se_v = var * np.sqrt(2.0 / (n_mc - 1))
        worst = max(worst, abs(direct.mean() - mean) / se_m, abs(direct.var(ddof=1) - var) / se_v)

        alpha, sigma2 = sched.alpha_sigma2(t)
        z_t = alpha * z0 + np.sqrt(sigma2) * rng.standard_normal(n_mc)
        ratio = alpha_T / alpha
        trans_var = sigma2_T - ratio**2 * sigma2
        logw = -((y - ratio * z_t) ** 2) / (2.0 * trans_var)
        mu, v, s_mu, s_v = _weighted_moments(z_t, logw)
        worst = max(worst, abs(mu - mean) / s_mu, abs(v - var) / s_v)
    return OracleResult("kernel moments", worst <= n_se, worst, n_se, "standard errors, worst of mean/variance")


def check_kernel_boundaries(sched: Schedule | None = None, tol: float = 1e-12) -> OracleResult:
    sched = sched or BridgeGmaxSchedule()
    at0 = np.array(bridge_coeffs(sched, 0.0).as_tuple()) - np.array([1.0, 0.0, 0.0])
    atT = np.array(bridge_coeffs(sched, sched.T).as_tuple()) - np.array([0.0, 1.0, 0.0])
    err = float(max(np.abs(at0).max(), np.abs(atT).max()))
    return OracleResult("kernel boundaries", err <= tol, err, tol)


def optimal_eps(sched: Schedule, t, z_t, zT, m, s2):
    """Bayes-optimal ``(z_t - alpha_t z0)/sigma_t`` prediction for ``z0 ~ N(m, s2 I)``."""
    a, b, c = (np.asarray(x) for x in bridge_coeffs(sched, t).as_tuple())
    alpha, sigma2 = sched.alpha_sigma2(t)
    gain = a * s2 / (a**2 * s2 + c**2)
    z0_mean = m + gain * (z_t - a * m - b * zT)
    return (z_t - alpha * z0_mean) / np.sqrt(sigma2)


def check_score_identity(sched: Schedule | None = None, n_t: int = 50, seed: int = 1,
                         tol: float = 1e-9, shape=(8, 16)) -> OracleResult:
    sched = sched or BridgeGmaxSchedule()
    rng = np.random.default_rng(seed)
    m, y = rng.normal(size=shape), rng.normal(size=shape)
    s2 = 0.5
    worst = 0.0
    for t in np.linspace(0.01, 0.99, n_t) * sched.T:
        z = rng.normal(size=shape) * 2.0
        s_eps = score_from_eps(sched, t, optimal_eps(sched, t, z, y, m, s2), z, y)
        s_ref = analytic_gaussian_score(sched, t, z, y, m, s2)
        worst = max(worst, float(np.max(np.abs(s_eps - s_ref)) / np.max(np.abs(s_ref))))
    return OracleResult("score identity", worst <= tol, worst, tol, "relative error")


def check_saf_alignment(n_t: int = 100, tol: float = 1e-8, eps_t: float = 1e-4) -> OracleResult:
    bridge, teacher = BridgeGmaxSchedule(), VPSchedule()
    amap = AlignmentMap(bridge, teacher)
    t = np.linspace(eps_t, 0.99, n_t)
    t_tilde = amap._invert(amap.aligned_snr(t))
    rel = np.abs(teacher.snr(t_tilde) / amap.aligned_snr(t) - 1.0)
    worst = float(rel.max())
    return OracleResult("SAF SNR match", worst <= tol, worst, tol, "relative error")


def check_saf_moments(n_mc: int = 100_000, seed: int = 2, n_se: float = 4.0) -> OracleResult:
    """Aligned states have the teacher's marginal ``N(alpha(t~) z0, sigma(t~)^2)``."""
    bridge, teacher = BridgeGmaxSchedule(), VPSchedule()
    amap = AlignmentMap(bridge, teacher)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in (0.05, 0.3, 0.6, 0.9):
        z0, y = rng.normal(size=2)
        tb = np.full(n_mc, t)
        z_t = sample_bridge_state(bridge_coeffs(bridge, tb), np.full(n_mc, z0), np.full(n_mc, y),
                                  rng.standard_normal(n_mc))
        z_tilde, t_tilde = amap.align_state(z_t[:, None], tb, np.full((n_mc, 1), y))
        alpha, sigma2 = teacher.alpha_sigma2(t_tilde[0])
        z_tilde = z_tilde[:, 0]
        worst = max(worst,
                    abs(z_tilde.mean() - alpha * z0) / np.sqrt(sigma2 / n_mc),
                    abs(z_tilde.var(ddof=1) - sigma2) / (sigma2 * np.sqrt(2.0 / (n_mc - 1))))
    return OracleResult("SAF aligned moments", worst <= n_se, worst, n_se, "standard errors")


def check_saf_table(n_steps: int = 1000, n_t: int = 100) -> OracleResult:
    """Tabulated inversion stays within one table cell of continuous bisection."""
    bridge, teacher = BridgeGmaxSchedule(), VPSchedule()
    cont = AlignmentMap(bridge, teacher)
    disc = AlignmentMap(bridge, teacher.table(n_steps))
    t = np.linspace(0.01, 0.99, n_t)
    diff = np.abs(np.asarray(disc.aligned_time(t)[0]) - np.asarray(cont.aligned_time(t)[0]))
    cell = teacher.T / n_steps
    return OracleResult("SAF table inversion", float(diff.max()) <= cell, float(diff.max()), cell, "time units")


def gaussian_bridge_problem(shape=(8, 16), seed: int = 0, s2: float = 0.3):
    rng = np.random.default_rng(seed)
    m = 0.5 * rng.normal(size=shape)
    y = rng.normal(size=shape)
    return m, s2, y


def sampler_w2(steps: int, n: int = 10_000, seed: int = 1, eps_t: float = 1e-4, problem_seed: int = 0):
    """Squared W2 between sampled and exact bridge outputs, plus the sample array."""
    sched = BridgeGmaxSchedule()
    m, s2, y = gaussian_bridge_problem(seed=problem_seed)
    zT = np.broadcast_to(y, (n,) + y.shape).copy()
    cfg = SampleConfig(steps=steps, eps_t=eps_t, seed=seed)
    z = sample_bridge(GaussianBridgeScore(sched, m, s2), zT, None, cfg)
    coeffs = bridge_coeffs(sched, eps_t * sched.T)
    mean = coeffs.a * m + coeffs.b * y
    var = coeffs.a**2 * s2 + coeffs.c**2
    mh, vh = fit_isotropic_gaussian(z)
    return gaussian_w2_sq(mh, vh, mean, var), z, (mean, var)


def check_sampler_w2(steps: int = 200, n: int = 10_000) -> OracleResult:
    w2, z, _ = sampler_w2(steps, n)
    tol = 0.05 * z[0].size
    return OracleResult(f"sampler W2 (N={steps}, n={n})", w2 <= tol, w2, tol)


def check_gradients(n_params: int = 20, seed: int = 3, tol: float = 1e-5, h: float = 1e-4) -> OracleResult:
    """Central finite differences against :func:`denoiser.backward` for both network roles."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    L, d, C, B = 8, 16, 3, 4
    labels = rng.integers(C, size=B)
    target = rng.normal(size=(B, L, d))
    nets = [("denoiser", dn.init_denoiser(seed)), ("prior", dn.init_prior_net(seed))]
    state, prior, t = rng.normal(size=(B, L, d)), rng.normal(size=(B, L, d)), rng.uniform(0.01, 1.0, B)

    for _, net in nets:
        def loss(model):
            if model.has_prior_input:
                out, cache = dn.forward(model, state, t, prior, labels)
            else:
                out, cache = dn.prior_forward(model, state, labels)
            return dn.squared_error(out, target), cache

        (_, g), cache = loss(net)
        grads = dn.backward(net, cache, g)
        for name, p in net.params.items():
            # errors on near-zero entries are measured against the layer's gradient scale
            floor = 1e-3 * float(np.sqrt(np.mean(grads[name] ** 2)))
            if name == "E":
                # only embedding rows of labels present in the batch get gradient
                rows = np.unique(labels)
                cand = [np.ravel_multi_index((r, j), p.shape) for r in rows for j in range(p.shape[1])]
                picks = rng.choice(cand, size=min(n_params, len(cand)), replace=False)
            else:
                picks = rng.choice(p.size, size=min(n_params, p.size), replace=False)
            for idx in picks:
                old = p.flat[idx]
                p.flat[idx] = old + h
                (lp, _), _ = loss(net)
                p.flat[idx] = old - h
                (lm, _), _ = loss(net)
                p.flat[idx] = old
                fd = (lp - lm) / (2 * h)
                an = grads[name].flat[idx]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
    return OracleResult("gradient finite differences", worst <= tol, worst, tol, "relative error")


def run_all(quick: bool = True) -> list[OracleResult]:
    n_mc = 20_000 if quick else 100_000
    return [
        check_kernel_boundaries(),
        check_kernel_moments(n_mc=n_mc),
        check_score_identity(),
        check_saf_alignment(),
        check_saf_moments(n_mc=n_mc),
        check_saf_table(),
        check_sampler_w2(steps=100 if quick else 200, n=2000 if quick else 10_000),
        check_gradients(),
    ]
