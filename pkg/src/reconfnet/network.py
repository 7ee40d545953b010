"""The M-clique spatio-temporal network.

Each clique runs conv3d -> pool -> conv3d -> pool -> conv2d over its own
temporal window of the video. The clique outputs are concatenated and fed to a
tanh hidden layer and a softmax output layer shared by all cliques.

A clique that receives fewer than ``m`` frames only computes the temporal maps
its frames support. Its feature vector keeps the ``t = m`` layout; the
trailing temporal slots of every map set are zero and carry zero gradient.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DimensionError, StateError
from .layers import (DenseLayer, conv3d_backward_grouped, conv3d_forward_grouped,
                     maxpool_backward, maxpool_forward, softmax)
from .tensor import COMPUTE_DTYPE, conv_output_shape

PROB_EPS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Kernel extents are given as (height, width, temporal); ``k3`` and the pool
    windows as (height, width).
    """
    M: int = 4
    m: int = 9
    tau: int = 5
    K: int = 10
    frame_h: int = 60
    frame_w: int = 80
    channels: int = 2
    c1: int = 7
    c2: int = 5
    c3: int = 4
    k1: tuple = (7, 9, 3)
    k2: tuple = (7, 7, 3)
    k3: tuple = (4, 6)
    pool1: tuple = (3, 3)
    pool2: tuple = (3, 3)
    fc_hidden: int = 64
    A: int = 30

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "pool1", "pool2"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.k1) != 3 or len(self.k2) != 3 or len(self.k3) != 2:
            raise ValueError("k1/k2 need 3 extents and k3 needs 2")
        if self.channels not in (1, 2):
            raise ValueError(f"channels must be 1 or 2, got {self.channels}")
        if min(self.M, self.K, self.c1, self.c2, self.c3, self.fc_hidden) < 1:
            raise ValueError("counts must be positive")
        if self.tau < self.temporal_shrink + 1:
            raise ValueError(
                f"tau={self.tau} leaves no temporal map; need tau >= {self.temporal_shrink + 1}")
        if not self.tau <= self.m:
            raise ValueError(f"need tau <= m, got tau={self.tau}, m={self.m}")
        self.stage_shapes()  # raises DimensionError on spatial misfit

    @property
    def temporal_shrink(self) -> int:
        return (self.k1[2] - 1) + (self.k2[2] - 1)

    @property
    def slots(self) -> int:
        """Temporal slots per map set in the clique feature layout (t = m)."""
        return self.m - self.temporal_shrink

    def stage_shapes(self):
        """Spatial (h, w) after conv1, pool1, conv2, pool2 and conv2d."""
        s1 = conv_output_shape((self.frame_h, self.frame_w), self.k1[:2])
        p1 = tuple(-(-a // b) for a, b in zip(s1, self.pool1))
        s2 = conv_output_shape(p1, self.k2[:2])
        p2 = tuple(-(-a // b) for a, b in zip(s2, self.pool2))
        s3 = conv_output_shape(p2, self.k3)
        return s1, p1, s2, p2, s3

    @property
    def clique_feature_len(self) -> int:
        h3, w3 = self.stage_shapes()[-1]
        return self.c1 * self.c2 * self.c3 * self.slots * h3 * w3

    @property
    def concat_len(self) -> int:
        return self.M * self.clique_feature_len

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def as_fields(self) -> List[int]:
        """Flat integer view used by the checkpoint header."""
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out.extend(v if isinstance(v, tuple) else (v,))
        return [int(v) for v in out]

    @classmethod
    def from_fields(cls, values: Sequence[int]) -> "ModelConfig":
        values = list(values)
        kwargs = {}
        for f in dataclasses.fields(cls):
            n = len(getattr(cls, f.name)) if isinstance(f.default, tuple) else 1
            chunk, values = values[:n], values[n:]
            kwargs[f.name] = tuple(chunk) if n > 1 else chunk[0]
        return cls(**kwargs)


CONFIG_FIELD_COUNT = len(ModelConfig().as_fields())

REFERENCE_CLIQUE_LEN = 700
REFERENCE_CONCAT_LEN = 2800


def check_reference_shapes(config: Optional[ModelConfig] = None):
    """The default architecture must give 700 features per clique, 2800 in total."""
    c = config or ModelConfig()
    if (c.clique_feature_len, c.concat_len) != (REFERENCE_CLIQUE_LEN, REFERENCE_CONCAT_LEN):
        raise DimensionError(f"default model gives {c.clique_feature_len} features per clique "
                             f"and {c.concat_len} in total, expected 700 and 2800")
    return c.clique_feature_len, c.concat_len


check_reference_shapes()


@dataclass
class CliqueParams:
    w1: np.ndarray  # (c1, C, m1, h1, w1)
    b1: np.ndarray  # (c1,)
    w2: np.ndarray  # (c1, c2, m2, h2, w2), one bank per first-layer set
    b2: np.ndarray  # (c1, c2)
    w3: np.ndarray  # (c1, c2, c3, h3, w3), one bank per second-layer set
    b3: np.ndarray  # (c1, c2, c3)

    def arrays(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


@dataclass
class Parameters:
    """All learnable weights. :meth:`arrays` fixes the canonical order."""
    cliques: List[CliqueParams]
    fc1: DenseLayer
    fc2: DenseLayer

    def arrays(self) -> List[np.ndarray]:
        out = []
        for c in self.cliques:
            out.extend(c.arrays())
        out += [self.fc1.weights, self.fc1.biases, self.fc2.weights, self.fc2.biases]
        return out

    @property
    def dtype(self):
        return self.fc1.weights.dtype

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "Parameters":
        return Parameters.from_arrays(self, [a.copy() for a in self.arrays()])

    def astype(self, dtype) -> "Parameters":
        return Parameters.from_arrays(self, [a.astype(dtype) for a in self.arrays()])

    def sq_norm(self) -> float:
        return float(sum(np.dot(a.ravel().astype(np.float64), a.ravel().astype(np.float64))
                         for a in self.arrays()))

    @classmethod
    def from_arrays(cls, template: "Parameters", arrays: Sequence[np.ndarray]) -> "Parameters":
        arrays = list(arrays)
        cliques = []
        for _ in template.cliques:
            cliques.append(CliqueParams(*arrays[:6]))
            arrays = arrays[6:]
        return cls(cliques, DenseLayer(arrays[0], arrays[1]), DenseLayer(arrays[2], arrays[3]))


def parameter_shapes(config: ModelConfig) -> List[tuple]:
    c = config
    clique = [
        (c.c1, c.channels, c.k1[2], c.k1[0], c.k1[1]), (c.c1,),
        (c.c1, c.c2, c.k2[2], c.k2[0], c.k2[1]), (c.c1, c.c2),
        (c.c1, c.c2, c.c3, c.k3[0], c.k3[1]), (c.c1, c.c2, c.c3),
    ]
    return clique * c.M + [(c.concat_len, c.fc_hidden), (c.fc_hidden,),
                           (c.fc_hidden, c.K), (c.K,)]


def parameter_count(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in parameter_shapes(config)))


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _init_dense(rng, fan_in, fan_out, dtype):
    return DenseLayer(_glorot(rng, (fan_in, fan_out), fan_in, fan_out, dtype),
                      np.zeros(fan_out, dtype=dtype))


def init_params(config: ModelConfig, seed: int = 0, dtype=COMPUTE_DTYPE) -> Parameters:
    """Glorot-uniform weights, zero biases, drawn from a seeded generator."""
    rng = np.random.default_rng(seed)
    c = config
    cliques = []
    r1 = c.k1[0] * c.k1[1] * c.k1[2]
    r2 = c.k2[0] * c.k2[1] * c.k2[2]
    r3 = c.k3[0] * c.k3[1]
    for _ in range(c.M):
        cliques.append(CliqueParams(
            _glorot(rng, (c.c1, c.channels, c.k1[2], c.k1[0], c.k1[1]),
                    c.channels * r1, c.c1 * r1, dtype),
            np.zeros(c.c1, dtype=dtype),
            _glorot(rng, (c.c1, c.c2, c.k2[2], c.k2[0], c.k2[1]), r2, c.c2 * r2, dtype),
            np.zeros((c.c1, c.c2), dtype=dtype),
            _glorot(rng, (c.c1, c.c2, c.c3, c.k3[0], c.k3[1]), r3, c.c3 * r3, dtype),
            np.zeros((c.c1, c.c2, c.c3), dtype=dtype),
        ))
    return Parameters(cliques, _init_dense(rng, c.concat_len, c.fc_hidden, dtype),
                      _init_dense(rng, c.fc_hidden, c.K, dtype))


def zeros_like(params: Parameters) -> Parameters:
    return Parameters.from_arrays(params, [np.zeros_like(a) for a in params.arrays()])


# ---------------------------------------------------------------------------
# clique

@dataclass
class CliqueActivation:
    valid_maps: tuple          # active temporal maps after conv1 and after conv2
    mask: np.ndarray           # True where the feature slot is inactive
    cache: Optional[dict] = field(default=None, repr=False)


def clique_pipeline(frames, cp: CliqueParams, config: ModelConfig, keep_cache=False):
    """conv3d -> pool -> conv3d -> pool -> conv2d over every frame given.

    Returns the stage-3 maps (c1, c2, c3, T', h3, w3) with T' = T - shrink, and
    the caches needed for backward when ``keep_cache`` is set.
    """
    c = config
    x = frames[None]
    a1, pre1 = conv3d_forward_grouped(x, cp.w1[None], cp.b1[None], return_preactivation=True)
    a1 = a1[0]                                     # (c1, T1, H1, W1)
    r1 = maxpool_forward(a1, c.pool1)
    p1 = r1.pooled[:, None]                        # (c1, 1, T1, h, w): one group per set
    a2, pre2 = conv3d_forward_grouped(p1, cp.w2[:, :, None], cp.b2, return_preactivation=True)
    r2 = maxpool_forward(a2, c.pool2)              # (c1, c2, T2, h, w)
    T2 = r2.pooled.shape[2]
    p2 = r2.pooled.reshape((c.c1 * c.c2, 1) + r2.pooled.shape[2:])
    w3 = cp.w3.reshape(c.c1 * c.c2, c.c3, 1, 1, c.k3[0], c.k3[1])
    a3, pre3 = conv3d_forward_grouped(p2, w3, cp.b3.reshape(c.c1 * c.c2, c.c3),
                                      return_preactivation=True)
    out = a3.reshape((c.c1, c.c2, c.c3, T2) + a3.shape[-2:])
    cache = None
    if keep_cache:
        cache = dict(x=x, pre1=pre1, r1=r1, p1=p1, pre2=pre2, r2=r2, p2=p2, w3=w3, pre3=pre3)
    return out, cache


def _layout(maps, config: ModelConfig):
    """Place (c1, c2, c3, T', h, w) maps into the fixed t = m feature layout."""
    c = config
    full = np.zeros((c.c1, c.c2, c.c3, c.slots) + maps.shape[-2:], dtype=maps.dtype)
    full[:, :, :, :maps.shape[3]] = maps
    return full.ravel()


def _mask(n_active, config: ModelConfig, spatial):
    c = config
    mask = np.ones((c.c1, c.c2, c.c3, c.slots) + spatial, dtype=bool)
    mask[:, :, :, :n_active] = False
    return mask.ravel()


def clique_forward(frames, cp: CliqueParams, config: ModelConfig, keep_cache=False):
    """Feature vector of one clique for a (channels, t, H, W) window.

    Requires ``tau <= t <= m``. Returns ``(features, CliqueActivation)``.
    """
    frames = np.asarray(frames)
    c = config
    if frames.ndim != 4 or frames.shape[0] != c.channels or frames.shape[2:] != (c.frame_h, c.frame_w):
        raise DimensionError(
            f"clique input must be ({c.channels}, t, {c.frame_h}, {c.frame_w}), got {frames.shape}")
    t = frames.shape[1]
    if not c.tau <= t <= c.m:
        raise ValueError(f"clique window length {t} outside [{c.tau}, {c.m}]")
    maps, cache = clique_pipeline(frames, cp, c, keep_cache)
    n1 = t - (c.k1[2] - 1)
    n2 = t - c.temporal_shrink
    act = CliqueActivation((n1, n2), _mask(n2, c, maps.shape[-2:]), cache)
    return _layout(maps, c), act


def clique_backward(grad_features, cp: CliqueParams, act: CliqueActivation, config: ModelConfig):
    """Parameter gradients of one clique; masked slots are dropped."""
    if act.cache is None:
        raise StateError("clique backward needs a forward pass run with keep_cache=True")
    c = config
    k = act.cache
    T2 = act.valid_maps[1]
    spatial = k["pre3"].shape[-2:]
    g = grad_features.reshape((c.c1, c.c2, c.c3, c.slots) + spatial)[:, :, :, :T2]
    g3 = np.ascontiguousarray(g).reshape(k["pre3"].shape)
    gp2, gw3, gb3 = conv3d_backward_grouped(g3, k["p2"], k["pre3"], k["w3"])
    ga2 = maxpool_backward(gp2.reshape(k["r2"].pooled.shape), k["r2"])
    gp1, gw2, gb2 = conv3d_backward_grouped(ga2, k["p1"], k["pre2"], cp.w2[:, :, None])
    ga1 = maxpool_backward(gp1[:, 0], k["r1"])
    _, gw1, gb1 = conv3d_backward_grouped(ga1[None], k["x"], k["pre1"], cp.w1[None],
                                          need_input_grad=False)
    return CliqueParams(gw1[0], gb1[0], gw2[:, :, 0], gb2, gw3.reshape(cp.w3.shape),
                        gb3.reshape(cp.b3.shape))


# ---------------------------------------------------------------------------
# whole network

def _frames_of(sample):
    return np.asarray(getattr(sample, "frames", sample))


def hidden_partial(features, params: Parameters, clique: int, config: ModelConfig):
    """This clique's share of the hidden-layer pre-activation."""
    n = config.clique_feature_len
    return features @ params.fc1.weights[clique * n:(clique + 1) * n]


def head(partials: Sequence[np.ndarray], params: Parameters):
    """Hidden tanh layer and softmax output from per-clique partial sums.

    ``partials`` holds one (batch, hidden) array per clique. Every step is
    elementwise or accumulated in a fixed order, so a row's result does not
    depend on the batch it sits in. Returns ``(hidden, probabilities)``.
    """
    pre = params.fc1.biases + partials[0]
    for p in partials[1:]:
        pre = pre + p
    hidden = np.tanh(pre)
    w2 = params.fc2.weights
    logits = params.fc2.biases + hidden[:, :1] * w2[0]
    for j in range(1, w2.shape[0]):
        logits = logits + hidden[:, j:j + 1] * w2[j]
    return hidden, softmax(logits)


def _check_latent(H, config: ModelConfig, A):
    from .latent import validate
    ok, why = validate(H, A, config.M, config.tau, config.m)
    if not ok:
        raise ValueError(f"invalid latent variables {H}: {why}")


def network_forward(sample, params: Parameters, H, config: ModelConfig, return_cache=False):
    """Class probabilities F(X, w, H) for the windows selected by ``H``."""
    frames = _frames_of(sample).astype(params.dtype, copy=False)
    _check_latent(H, config, frames.shape[1])
    feats, acts, partials = [], [], []
    for i, (s, t) in enumerate(zip(H.starts, H.lengths)):
        f, act = clique_forward(frames[:, s - 1:s - 1 + t], params.cliques[i], config,
                                keep_cache=return_cache)
        feats.append(f)
        acts.append(act)
        partials.append(hidden_partial(f, params, i, config)[None])
    hidden, probs = head(partials, params)
    probs = probs[0]
    if return_cache:
        return probs, dict(feats=feats, acts=acts, hidden=hidden[0], probs=probs)
    return probs


def sample_loss(probs, label: int) -> float:
    """Per-sample binary cross-entropy over all K outputs; labels are 1-based."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    target = np.zeros_like(p)
    target[label - 1] = 1.0
    return float(-np.sum(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))


def network_backward(sample, params: Parameters, H, label: int, config: ModelConfig,
                     reg_lambda: float = 0.0, n_samples: int = 1):
    """Gradients of ``loss(sample) + reg_lambda / n_samples * ||w||^2``.

    Returns ``(gradients, loss)`` where ``gradients`` is a :class:`Parameters`
    with the same layout as ``params``.
    """
    if not 1 <= label <= config.K:
        raise ValueError(f"label {label} outside 1..{config.K}")
    probs, cache = network_forward(sample, params, H, config, return_cache=True)
    loss = sample_loss(probs, label)

    p64 = probs.astype(np.float64)
    p = np.clip(p64, PROB_EPS, 1.0 - PROB_EPS)
    target = np.zeros_like(p)
    target[label - 1] = 1.0
    dp = -target / p + (1.0 - target) / (1.0 - p)
    dp[p != p64] = 0.0
    dz = (p64 * (dp - np.dot(dp, p64))).astype(params.dtype)

    hidden = cache["hidden"]
    grad_fc2 = DenseLayer(np.outer(hidden, dz), dz.copy())
    dh = params.fc2.weights @ dz
    concat = np.concatenate(cache["feats"])
    dpre = dh * (1.0 - hidden * hidden)
    grad_fc1 = DenseLayer(np.outer(concat, dpre), dpre)
    dconcat = params.fc1.weights @ dpre

    n = config.clique_feature_len
    cliques = []
    for i, act in enumerate(cache["acts"]):
        g = dconcat[i * n:(i + 1) * n]
        cliques.append(clique_backward(g, params.cliques[i], act, config))
    grads = Parameters(cliques, grad_fc1, grad_fc2)
    if reg_lambda:
        scale = 2.0 * reg_lambda / n_samples
        for g, w in zip(grads.arrays(), params.arrays()):
            g += scale * w
    return grads, loss


def transfer_pretrained(pretrain_params: Parameters, config_gray: ModelConfig,
                        config_3d: ModelConfig, seed: int = 0) -> Parameters:
    """Initialise a gray+depth model from a gray-only one.

    First-layer kernels get a depth channel copied from the gray channel;
    deeper convolutions are copied; both dense layers are drawn fresh.
    """
    if config_gray.channels != 1 or config_3d.channels != 2:
        raise ValueError("transfer goes from a 1-channel model to a 2-channel model")
    if config_gray.replace(channels=2) != config_3d.replace(K=config_gray.K):
        raise ValueError("architectures differ beyond channel count and class count")
    dtype = pretrain_params.dtype
    fresh = init_params(config_3d, seed=seed, dtype=dtype)
    cliques = []
    for cp in pretrain_params.cliques:
        if cp.w1.shape[1] != 1:
            raise ValueError("pretrained first-layer kernels must have one channel")
        w1 = np.concatenate([cp.w1, cp.w1], axis=1)
        cliques.append(CliqueParams(w1, cp.b1.copy(), cp.w2.copy(), cp.b2.copy(),
                                    cp.w3.copy(), cp.b3.copy()))
    return Parameters(cliques, fresh.fc1, fresh.fc2)
