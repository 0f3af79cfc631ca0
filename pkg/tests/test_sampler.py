import numpy as np
import pytest

import framebridge.sampler as sampler_mod
from framebridge import denoiser as dn
from framebridge.bridge_kernel import bridge_coeffs, score_from_eps
from framebridge.evalkit import fit_isotropic_gaussian, gaussian_w2_sq
from framebridge.oracles import gaussian_bridge_problem, sampler_w2
from framebridge.saf import AlignmentMap
from framebridge.sampler import (BridgeModelScore, DiffusionModelScore, GaussianBridgeScore, GaussianDiffusionScore,
                                 SampleConfig, SamplingError, ZeroScore, sample_bridge, sample_diffusion)
from framebridge.schedule import BridgeGmaxSchedule, VPSchedule

GMAX, VP = BridgeGmaxSchedule(), VPSchedule()
SHAPE = (8, 16)
DIMS = 8 * 16


def _gaussian_source(m, s2):
    return GaussianBridgeScore(GMAX, m, s2)


def test_grid_is_strictly_decreasing():
    ts = SampleConfig(steps=50).timesteps(1.0)
    assert len(ts) == 51 and ts[0] == pytest.approx(1 - 1e-4) and ts[-1] == pytest.approx(1e-4)
    assert np.all(np.diff(ts) < 0)
    with pytest.raises(ValueError):
        SampleConfig(steps=0)
    with pytest.raises(ValueError):
        SampleConfig(grid=(0.1, 0.5))
    assert list(SampleConfig(grid=(0.9, 0.5, 0.1)).timesteps(1.0)) == [0.9, 0.5, 0.1]


def test_bridge_sampler_matches_gaussian_posterior():
    w2, _, _ = sampler_w2(steps=100, n=2000)
    assert w2 <= 0.05 * DIMS


def test_h_sign_is_pinned_by_the_gaussian_oracle(monkeypatch):
    # Monte-Carlo floor of the squared W2 estimate is about dims * s2 / n
    n = 4000
    _, s2, _ = gaussian_bridge_problem()
    floor = DIMS * s2 / n
    w2, _, _ = sampler_w2(steps=200, n=n)
    assert w2 <= 3 * floor
    flipped = sampler_mod.h_term
    monkeypatch.setattr(sampler_mod, "h_term", lambda *a: -flipped(*a))
    w2_wrong, _, _ = sampler_w2(steps=200, n=n)
    assert w2_wrong > 30 * floor


def test_single_step_smoke():
    m, s2, y = gaussian_bridge_problem()
    zT = np.broadcast_to(y, (5,) + SHAPE).copy()
    out = sample_bridge(_gaussian_source(m, s2), zT, None, SampleConfig(steps=1))
    assert out.shape == zT.shape and np.all(np.isfinite(out))


def test_start_state_concentrates_on_terminal(rng):
    # the exact marginal at T - eps_t collapses onto zT as eps_t -> 0
    z0, zT = rng.normal(size=(2,) + SHAPE)
    dist = []
    for eps in (1e-2, 1e-3, 1e-4):
        co = bridge_coeffs(GMAX, 1 - eps)
        dist.append(np.sqrt(np.sum((co.a * z0 + (co.b - 1) * zT) ** 2) + DIMS * co.c**2))
    # spread is c_t ~ sqrt(eps_t): each decade shrinks it by about sqrt(10)
    ratios = np.array(dist[:-1]) / np.array(dist[1:])
    np.testing.assert_allclose(ratios, np.sqrt(10), rtol=0.05)
    assert dist[-1] / np.sqrt(DIMS) < 0.1


def test_bridge_sampler_is_reproducible():
    m, s2, y = gaussian_bridge_problem()
    zT = np.broadcast_to(y, (20,) + SHAPE).copy()
    src = _gaussian_source(m, s2)
    a = sample_bridge(src, zT, None, SampleConfig(steps=20, seed=4))
    b = sample_bridge(src, zT, None, SampleConfig(steps=20, seed=4))
    c = sample_bridge(src, zT, None, SampleConfig(steps=20, seed=5))
    assert a.tobytes() == b.tobytes() and not np.array_equal(a, c)


def test_diffusion_sampler_matches_gaussian_data():
    m, s2, _ = gaussian_bridge_problem()
    n = 2000
    z = sample_diffusion(GaussianDiffusionScore(VP, m, s2), np.zeros((n,) + SHAPE), None,
                         SampleConfig(steps=500, seed=2))
    alpha, sigma2 = VP.alpha_sigma2(1e-4)
    mh, vh = fit_isotropic_gaussian(z)
    assert gaussian_w2_sq(mh, vh, alpha * m, alpha**2 * s2 + sigma2) <= 0.05 * DIMS


def test_zero_score_is_ou_rollout():
    # with s = 0 the backward SDE is linear: d(var)/d(-t) = beta (var + 1)
    sched = VPSchedule(beta_max=1.0)
    n, eps = 2000, 1e-4
    z = sample_diffusion(ZeroScore(sched), np.zeros((n,) + SHAPE), None,
                         SampleConfig(steps=500, eps_t=eps, seed=3, final_noise=True))
    sigma2_T = sched.alpha_sigma2(1.0)[1]
    B = lambda t: sched.beta_min * t + 0.5 * (sched.beta_max - sched.beta_min) * t**2
    var_ref = (sigma2_T + 1) * np.exp(B(1.0) - B(eps)) - 1
    var = z.var(axis=0, ddof=1).mean()
    se = var_ref * np.sqrt(2 / (n * DIMS))
    assert abs(var - var_ref) <= 3 * se


def test_diffusion_sampler_is_reproducible():
    net = dn.init_denoiser(0)
    cond = np.zeros((3,) + SHAPE)
    labels = np.array([0, 1, 2])
    src = DiffusionModelScore(net, VP)
    a = sample_diffusion(src, cond, labels, SampleConfig(steps=10, seed=1))
    b = sample_diffusion(src, cond, labels, SampleConfig(steps=10, seed=1))
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("align", [None, AlignmentMap(GMAX, VP), AlignmentMap(GMAX, VP, output_mode="v")],
                         ids=["raw", "saf-eps", "saf-v"])
def test_model_score_sources(align, rng):
    net = dn.init_denoiser(0)
    z, zT = rng.normal(size=(2, 4) + SHAPE)
    labels = np.array([0, 1, 2, 0])
    src = BridgeModelScore(net, GMAX, align)
    s = src(0.5, z, zT, labels)
    assert s.shape == z.shape and np.all(np.isfinite(s))
    if align is None:
        eps, _ = dn.forward(net, z, np.full(4, 0.5), zT, labels)
        np.testing.assert_array_equal(s, score_from_eps(GMAX, np.full(4, 0.5), eps, z, zT))
    out = sample_bridge(src, zT, labels, SampleConfig(steps=5))
    assert np.all(np.isfinite(out))


def test_non_finite_state_aborts():
    class Exploding:
        schedule = GMAX

        def __call__(self, t, z, zT, labels):
            return np.full_like(z, np.inf)

    with pytest.raises(SamplingError):
        sample_bridge(Exploding(), np.zeros((2,) + SHAPE), None, SampleConfig(steps=3))


def test_shape_validation():
    with pytest.raises(ValueError):
        sample_bridge(ZeroScore(GMAX), np.zeros(SHAPE))
    with pytest.raises(ValueError):
        sample_diffusion(ZeroScore(VP), np.zeros(SHAPE))
