"""Dense tanh networks with exact hand-written gradients.

Two roles share one architecture (input -> H -> H -> output, tanh hidden units,
learned class embedding):

* the denoiser, fed ``[state, prior, time embedding, class embedding]`` and
  predicting a latent-shaped output;
* the neural prior, fed ``[replicated first frame, class embedding]`` with no
  time input.

Arrays are batch-first: latents ``(B, L, d)``, times ``(B,)``, labels ``(B,)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DenseNet",
    "Cache",
    "init_denoiser",
    "init_prior_net",
    "time_embedding",
    "forward",
    "prior_forward",
    "backward",
    "squared_error",
]

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "E")
_MAX_FREQ = 100.0


@dataclass
class DenseNet:
    L: int
    d: int
    C: int
    hidden: int
    time_dim: int
    class_dim: int
    params: dict[str, np.ndarray]

    @property
    def has_prior_input(self) -> bool:
        # the prior network has no time input and no separate prior slot
        return self.time_dim > 0

    @property
    def latent_size(self) -> int:
        return self.L * self.d

    @property
    def in_dim(self) -> int:
        n_latent = 2 if self.has_prior_input else 1
        return n_latent * self.latent_size + self.time_dim + self.class_dim

    def copy(self) -> "DenseNet":
        return DenseNet(self.L, self.d, self.C, self.hidden, self.time_dim, self.class_dim,
                        {k: v.copy() for k, v in self.params.items()})

    def layout(self) -> np.ndarray:
        return np.array([self.L, self.d, self.C, self.hidden, self.time_dim, self.class_dim], dtype=np.float64)

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {"layout": self.layout(), **self.params}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "DenseNet":
        L, d, C, hidden, time_dim, class_dim = (int(x) for x in tensors["layout"])
        model = cls(L, d, C, hidden, time_dim, class_dim,
                    {k: np.array(tensors[k], dtype=np.float64) for k in PARAM_NAMES})
        model.check()
        return model

    def check(self) -> None:
        H, out = self.hidden, self.latent_size
        expected = {"W1": (self.in_dim, H), "b1": (H,), "W2": (H, H), "b2": (H,),
                    "W3": (H, out), "b3": (out,), "E": (self.C, self.class_dim)}
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ValueError(f"parameter {name} has non-finite entries")

    def same_layout(self, other: "DenseNet") -> bool:
        return np.array_equal(self.layout(), other.layout())


def _init(seed, L, d, C, hidden, time_dim, class_dim) -> DenseNet:
    if min(L, d, C, hidden, class_dim) < 1 or time_dim < 0 or time_dim % 2:
        raise ValueError("invalid network shape")
    rng = np.random.default_rng(seed)
    model = DenseNet(L, d, C, hidden, time_dim, class_dim, {})
    fan = {"W1": model.in_dim, "W2": hidden, "W3": hidden}
    shapes = {"W1": (model.in_dim, hidden), "W2": (hidden, hidden), "W3": (hidden, L * d)}
    for i in (1, 2, 3):
        bound = 1.0 / np.sqrt(fan[f"W{i}"])
        model.params[f"W{i}"] = rng.uniform(-bound, bound, size=shapes[f"W{i}"])
        model.params[f"b{i}"] = rng.uniform(-bound, bound, size=shapes[f"W{i}"][1])
    # a table lookup has fan-in 1
    model.params["E"] = rng.uniform(-1.0, 1.0, size=(C, class_dim))
    return model


def init_denoiser(seed, L=8, d=16, C=3, hidden=128, time_dim=16, class_dim=8) -> DenseNet:
    if time_dim < 2:
        raise ValueError("denoiser needs a time embedding")
    return _init(seed, L, d, C, hidden, time_dim, class_dim)


def init_prior_net(seed, L=8, d=16, C=3, hidden=128, class_dim=8) -> DenseNet:
    return _init(seed, L, d, C, hidden, 0, class_dim)


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features at geometrically spaced frequencies in ``[1, 100]``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.exp(np.linspace(0.0, np.log(_MAX_FREQ), dim // 2))
    arg = t[:, None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


@dataclass
class Cache:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    labels: np.ndarray


def _run(model: DenseNet, parts: list[np.ndarray], labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.int64)
    x = np.concatenate(parts + [model.params["E"][labels]], axis=1)
    if x.shape[1] != model.in_dim:
        raise ValueError(f"input width {x.shape[1]} does not match layout {model.in_dim}")
    p = model.params
    h1 = np.tanh(x @ p["W1"] + p["b1"])
    h2 = np.tanh(h1 @ p["W2"] + p["b2"])
    out = h2 @ p["W3"] + p["b3"]
    return out.reshape(-1, model.L, model.d), Cache(x, h1, h2, labels)


def _flat(z: np.ndarray, model: DenseNet) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[1:] != (model.L, model.d):
        raise ValueError(f"latent shape {z.shape[1:]} != {(model.L, model.d)}")
    return z.reshape(z.shape[0], -1)


def forward(model: DenseNet, state, t, prior, labels):
    """Denoiser output of shape ``(B, L, d)`` and the cache needed by :func:`backward`."""
    if not model.has_prior_input:
        raise ValueError("forward() needs a denoiser; use prior_forward() for the prior network")
    s, pr = _flat(state, model), _flat(prior, model)
    if s.shape != pr.shape:
        raise ValueError("state and prior batch shapes differ")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (s.shape[0],))
    return _run(model, [s, pr, time_embedding(t, model.time_dim)], labels)


def prior_forward(model: DenseNet, replicated, labels):
    """Neural-prior output from the replicated conditioning frame."""
    if model.has_prior_input:
        raise ValueError("prior_forward() needs a prior network")
    return _run(model, [_flat(replicated, model)], labels)


def backward(model: DenseNet, cache: Cache, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given ``d loss / d output`` of shape ``(B, L, d)``."""
    p = model.params
    g = np.asarray(grad_out, dtype=np.float64).reshape(cache.x.shape[0], -1)
    grads = {"W3": cache.h2.T @ g, "b3": g.sum(axis=0)}
    g2 = (g @ p["W3"].T) * (1.0 - cache.h2**2)
    grads["W2"] = cache.h1.T @ g2
    grads["b2"] = g2.sum(axis=0)
    g1 = (g2 @ p["W2"].T) * (1.0 - cache.h1**2)
    grads["W1"] = cache.x.T @ g1
    grads["b1"] = g1.sum(axis=0)
    g_emb = g1 @ p["W1"][-model.class_dim:].T
    gE = np.zeros_like(p["E"])
    np.add.at(gE, cache.labels, g_emb)
    grads["E"] = gE
    return grads


def squared_error(pred: np.ndarray, target: np.ndarray):
    """Per-sample summed squared error, averaged over the batch, and its gradient."""
    diff = pred - target
    B = diff.shape[0]
    loss = float(np.sum(diff**2) / B)
    return loss, 2.0 * diff / B
