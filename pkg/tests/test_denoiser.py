import numpy as np
import pytest

from framebridge import denoiser as dn
from framebridge.oracles import check_gradients

L, D, C = 8, 16, 3


def _inputs(rng, B=4):
    return (rng.normal(size=(B, L, D)), rng.uniform(0, 1, B), rng.normal(size=(B, L, D)), rng.integers(C, size=B))


def test_shapes_and_layout():
    net = dn.init_denoiser(0)
    assert net.in_dim == 2 * L * D + 16 + 8
    prior = dn.init_prior_net(0)
    assert prior.in_dim == L * D + 8 and not prior.has_prior_input
    net.check()
    prior.check()


@pytest.mark.parametrize("L_,D_,H", [(1, 1, 3), (3, 5, 7), (8, 16, 32)])
def test_output_shape_matches_latent(L_, D_, H, rng):
    net = dn.init_denoiser(1, L=L_, d=D_, C=2, hidden=H, time_dim=4, class_dim=2)
    out, _ = dn.forward(net, rng.normal(size=(5, L_, D_)), rng.uniform(size=5), rng.normal(size=(5, L_, D_)),
                        np.array([0, 1, 0, 1, 1]))
    assert out.shape == (5, L_, D_)


def test_zero_weights_give_zero_output(rng):
    net = dn.init_denoiser(0)
    for p in net.params.values():
        p[...] = 0
    out, _ = dn.forward(net, *_inputs(rng))
    assert np.all(out == 0)


def test_forward_is_deterministic(rng):
    net = dn.init_denoiser(0)
    args = _inputs(rng)
    np.testing.assert_array_equal(dn.forward(net, *args)[0], dn.forward(net, *args)[0])


def test_init_determinism_and_bounds():
    a, b, c = dn.init_denoiser(3), dn.init_denoiser(3), dn.init_denoiser(4)
    for name in dn.PARAM_NAMES:
        np.testing.assert_array_equal(a.params[name], b.params[name])
        assert not np.array_equal(a.params[name], c.params[name])
    fan = {"1": a.in_dim, "2": a.hidden, "3": a.hidden}
    for i, f in fan.items():
        assert np.max(np.abs(a.params["W" + i])) <= 1 / np.sqrt(f)
        assert np.max(np.abs(a.params["b" + i])) <= 1 / np.sqrt(f)
    assert np.max(np.abs(a.params["E"])) <= 1.0


def test_gradients_match_finite_differences():
    result = check_gradients(n_params=20)
    assert result.passed, result.line()


def test_zero_upstream_gradient(rng):
    net = dn.init_denoiser(0)
    _, cache = dn.forward(net, *_inputs(rng))
    grads = dn.backward(net, cache, np.zeros((4, L, D)))
    assert all(np.all(g == 0) for g in grads.values())


def test_gradient_descent_overfits_fixed_batch(rng):
    net = dn.init_denoiser(0)
    args = _inputs(rng, B=16)
    target = rng.normal(size=(16, L, D))
    losses = []
    for _ in range(100):
        out, cache = dn.forward(net, *args)
        loss, g = dn.squared_error(out, target)
        losses.append(loss)
        for k, v in dn.backward(net, cache, g).items():
            net.params[k] -= 1e-2 * v
    assert losses[-1] < 0.5 * losses[0]
    assert np.all(np.diff(losses) < 0)


def test_bounded_inputs_stay_finite(rng):
    net = dn.init_denoiser(2)
    B = 64
    out, _ = dn.forward(net, rng.uniform(-10, 10, (B, L, D)), rng.uniform(0, 1, B), rng.uniform(-10, 10, (B, L, D)),
                        rng.integers(C, size=B))
    # tanh hidden units bound the output by |b3| + H * max|W3|
    bound = np.abs(net.params["b3"]).max() + net.hidden * np.abs(net.params["W3"]).max()
    assert np.all(np.isfinite(out)) and np.abs(out).max() <= bound


def test_layout_mismatch_raises(rng):
    net = dn.init_denoiser(0)
    state, t, prior, labels = _inputs(rng)
    with pytest.raises(ValueError):
        dn.forward(net, state[:, :4], t, prior[:, :4], labels)
    with pytest.raises(ValueError):
        dn.prior_forward(net, state, labels)
    with pytest.raises(ValueError):
        dn.forward(dn.init_prior_net(0), state, t, prior, labels)


def test_tensor_round_trip():
    net = dn.init_denoiser(5, hidden=32)
    back = dn.DenseNet.from_tensors(net.to_tensors())
    assert back.same_layout(net)
    for name in dn.PARAM_NAMES:
        np.testing.assert_array_equal(back.params[name], net.params[name])


def test_time_embedding_range():
    emb = dn.time_embedding(np.linspace(0, 1, 11), 16)
    assert emb.shape == (11, 16)
    np.testing.assert_allclose(emb[:, :8] ** 2 + emb[:, 8:] ** 2, 1.0)
