"""Cost function, SGD epochs and the alternating latent/parameter training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import NumericError
from .latent import LatentVars, estep_all, even_split
from .network import (ModelConfig, Parameters, network_backward, network_forward,
                      sample_loss)

log = logging.getLogger(__name__)

MODES = ("lsbp", "fixed_even", "pretrain_2d")


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    reg_lambda: float = 1e-4
    max_iterations: int = 200
    convergence_tol: float = 1e-3
    seed: int = 0
    mode: str = "lsbp"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not self.reg_lambda >= 0:
            raise ValueError("reg_lambda must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class CostRecord:
    iteration: int
    phase: str        # "E" or "M"
    cost: float
    data_term: float
    reg_term: float
    wall_ms: float

    def csv(self) -> str:
        return (f"{self.iteration},{self.phase},{self.cost:.10g},{self.data_term:.10g},"
                f"{self.reg_term:.10g},{self.wall_ms:.1f}")


LOG_HEADER = "iter,phase,J,data_term,reg_term,wall_ms"


@dataclass
class TrainState:
    params: Parameters
    latent: List[LatentVars]
    cost_history: List[CostRecord] = field(default_factory=list)
    iteration: int = 0
    converged: bool = False
    initial: Optional[CostRecord] = None


def data_term_from_probs(probs_list, labels) -> float:
    return float(sum(sample_loss(p, y) for p, y in zip(probs_list, labels)) / len(labels))


def cost_terms(dataset, params: Parameters, latent_set, reg_lambda: float, config: ModelConfig):
    """``(J, data_term, reg_term)`` of the training objective."""
    if len(latent_set) != len(dataset):
        raise ValueError("need one latent assignment per sample")
    probs = [network_forward(s, params, H, config) for s, H in zip(dataset, latent_set)]
    data = data_term_from_probs(probs, [s.label for s in dataset])
    reg = reg_lambda * params.sq_norm()
    return data + reg, data, reg


def cost(dataset, params: Parameters, latent_set, reg_lambda: float, config: ModelConfig) -> float:
    return cost_terms(dataset, params, latent_set, reg_lambda, config)[0]


def sgd_epoch(dataset, latent_set, params: Parameters, train_config: TrainConfig,
              config: ModelConfig, epoch: int = 0) -> Parameters:
    """One pass over all samples in a seeded random order, batch size one."""
    new = params.copy()
    if train_config.learning_rate == 0:
        return new
    n = len(dataset)
    order = np.random.default_rng([train_config.seed, epoch]).permutation(n)
    lr = train_config.learning_rate
    weights = new.arrays()
    for i in order:
        sample = dataset[i]
        where = f"sample {i}" + (f" ({sample.path})" if getattr(sample, "path", None) else "")
        try:
            grads, _ = network_backward(sample, new, latent_set[i], sample.label, config,
                                        reg_lambda=train_config.reg_lambda, n_samples=n)
        except NumericError as exc:
            raise NumericError(f"{where}: {exc}") from exc
        garr = grads.arrays()
        if not all(np.all(np.isfinite(g)) for g in garr):
            raise NumericError(f"non-finite gradient on {where}")
        for w, g in zip(weights, garr):
            w -= (lr * g).astype(w.dtype, copy=False)
    return new


def _record(state, iteration, phase, probs, labels, params, reg_lambda, t0, sink):
    data = data_term_from_probs(probs, labels)
    reg = reg_lambda * params.sq_norm()
    rec = CostRecord(iteration, phase, data + reg, data, reg, (time.perf_counter() - t0) * 1e3)
    if phase == "I":
        state.initial = rec
    else:
        state.cost_history.append(rec)
    if sink is not None:
        sink(rec.csv())
    if not np.isfinite(rec.cost):
        raise NumericError(f"cost became non-finite at iteration {iteration}")
    return rec


def lsbp_train(dataset, init_params: Parameters, train_config: TrainConfig,
               config: ModelConfig, threads: int = 1,
               log_sink: Optional[Callable[[str], None]] = None,
               callback: Optional[Callable[[TrainState], None]] = None):
    """Alternate latent assignment and one SGD epoch until the cost settles.

    ``mode='lsbp'`` re-estimates every sample's segmentation before each
    epoch. ``fixed_even`` and ``pretrain_2d`` keep the even split and never
    enumerate. Stops when the relative change of the post-epoch cost drops
    below ``convergence_tol`` or after ``max_iterations`` epochs.

    Returns ``(params, TrainState)``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    tc = train_config
    A = dataset[0].frames.shape[1]
    labels = [s.label for s in dataset]
    H0 = even_split(A, config.M, config.m, config.tau)
    params = init_params.copy()
    state = TrainState(params, [H0] * len(dataset))
    t0 = time.perf_counter()
    probs = [network_forward(s, params, H0, config) for s in dataset]
    _record(state, 0, "I", probs, labels, params, tc.reg_lambda, t0, None)

    prev = None
    for it in range(1, tc.max_iterations + 1):
        if tc.mode == "lsbp":
            t0 = time.perf_counter()
            assigned = estep_all(dataset, params, config, threads)
            state.latent = [h for h, _ in assigned]
            _record(state, it, "E", [p for _, p in assigned], labels, params,
                    tc.reg_lambda, t0, log_sink)
        t0 = time.perf_counter()
        params = sgd_epoch(dataset, state.latent, params, tc, config, epoch=it)
        probs = [network_forward(s, params, H, config) for s, H in zip(dataset, state.latent)]
        rec = _record(state, it, "M", probs, labels, params, tc.reg_lambda, t0, log_sink)
        state.params, state.iteration = params, it
        if callback is not None:
            callback(state)
        if prev is not None and abs(prev - rec.cost) < tc.convergence_tol * abs(prev):
            state.converged = True
            break
        prev = rec.cost
    log.info("training stopped after %d iterations (converged=%s)", state.iteration, state.converged)
    return params, state


def pretrain(dataset_2d, config_gray: ModelConfig, train_config: TrainConfig,
             init_params: Optional[Parameters] = None, return_state=False):
    """Plain backprop on gray-only videos with the even split fixed."""
    from .network import init_params as _init
    if config_gray.channels != 1:
        raise ValueError("pretraining uses single-channel (gray) models")
    for i, s in enumerate(dataset_2d):
        if s.frames.shape[0] != 1:
            raise ValueError(f"pretraining sample {i} has {s.frames.shape[0]} channels, expected 1")
    if init_params is None:
        init_params = _init(config_gray, seed=train_config.seed)
    if train_config.max_iterations == 0:
        return (init_params.copy(), None) if return_state else init_params.copy()
    tc = TrainConfig(**{**train_config.__dict__, "mode": "pretrain_2d"})
    params, state = lsbp_train(dataset_2d, init_params, tc, config_gray)
    return (params, state) if return_state else params
