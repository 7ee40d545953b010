"""Central finite-difference checks of the analytic gradients."""
from __future__ import annotations

import numpy as np

from .latent import LatentVars
from .network import ModelConfig, init_params, network_backward, network_forward, sample_loss
from .tensor import CHECK_DTYPE

TINY_CONFIG = ModelConfig(M=2, m=3, tau=2, K=2, frame_h=8, frame_w=8, channels=2,
                          c1=2, c2=2, c3=1, k1=(3, 3, 2), k2=(2, 2, 1), k3=(1, 1),
                          pool1=(2, 2), pool2=(2, 2), fc_hidden=4, A=8)

# one short window (masked slot) and one full-length window
TINY_LATENT = LatentVars((1, 4), (2, 3))


def relative_error(a, b, floor=1e-8):
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


def check_network(config=TINY_CONFIG, H=TINY_LATENT, seed=7, label=None,
                  reg_lambda=1e-3, n_samples=4, h=1e-5):
    """Compare every analytic parameter gradient against finite differences.

    Runs in 64-bit. Returns ``(max_relative_error, per_array_errors)``.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed=seed, dtype=CHECK_DTYPE)
    # non-zero biases so their gradients are exercised away from the origin
    for a in params.arrays():
        if a.ndim <= 3 and a is not params.fc1.weights:
            a += rng.uniform(-0.1, 0.1, size=a.shape)
    frames = rng.uniform(0, 1, size=(config.channels, config.A, config.frame_h, config.frame_w))
    if label is None:
        label = int(rng.integers(1, config.K + 1))

    def objective():
        probs = network_forward(frames, params, H, config)
        return sample_loss(probs, label) + reg_lambda / n_samples * params.sq_norm()

    grads, _ = network_backward(frames, params, H, label, config,
                                reg_lambda=reg_lambda, n_samples=n_samples)
    errors = []
    for w, g in zip(params.arrays(), grads.arrays()):
        num = numerical_gradient(objective, w, h)
        errors.append(float(relative_error(g, num).max()))
    return max(errors), errors
