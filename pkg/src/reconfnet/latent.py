"""Latent segmentations and brute-force search over them.

A segmentation ``H`` gives every clique a start anchor ``s_i`` (1-based) and a
frame count ``t_i``. Valid segmentations satisfy::

    tau <= t_i <= m,   s_1 >= 1,   s_i + t_i <= s_{i+1},   s_M + t_M - 1 <= A

Windows may leave frames uncovered.

Scoring every candidate with a fresh forward pass would repeat the same clique
work many times, since a clique's features for window (s, t) do not depend on
the other cliques. :func:`window_bank` runs each clique once over the whole
video, slices out every admissible window, and stores that window's share of
the hidden-layer pre-activation. A candidate is then a sum of M stored vectors
followed by the small output head. Slices are bit-identical to a direct
:func:`network_forward` on the window, so search results agree exactly with
single forward passes.
"""
from __future__ import annotations

import functools
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError
from .network import ModelConfig, Parameters, _layout, clique_pipeline, head, hidden_partial

CHUNK = 8192


@dataclass(frozen=True)
class LatentVars:
    starts: tuple
    lengths: tuple

    def __post_init__(self):
        object.__setattr__(self, "starts", tuple(int(s) for s in self.starts))
        object.__setattr__(self, "lengths", tuple(int(t) for t in self.lengths))
        if len(self.starts) != len(self.lengths):
            raise ValueError("starts and lengths must have the same length")

    def key(self) -> tuple:
        """Interleaved (s1, t1, ..., sM, tM); the lexicographic tie-break order."""
        return tuple(v for pair in zip(self.starts, self.lengths) for v in pair)

    @classmethod
    def from_key(cls, key: Sequence[int]) -> "LatentVars":
        return cls(tuple(key[0::2]), tuple(key[1::2]))

    def windows(self):
        return list(zip(self.starts, self.lengths))


class Validation(NamedTuple):
    ok: bool
    violation: Optional[str]

    def __bool__(self):
        return self.ok


def validate(H: LatentVars, A: int, M: int, tau: int, m: int) -> Validation:
    """Check every constraint; report the first one that fails."""
    if len(H.starts) != M:
        return Validation(False, f"count: expected {M} windows, got {len(H.starts)}")
    if H.starts[0] < 1:
        return Validation(False, f"start: s1={H.starts[0]} < 1")
    for i, t in enumerate(H.lengths, 1):
        if not tau <= t <= m:
            return Validation(False, f"length: t{i}={t} outside [{tau}, {m}]")
    for i in range(M - 1):
        if H.starts[i] + H.lengths[i] > H.starts[i + 1]:
            return Validation(
                False, f"overlap: s{i + 1}+t{i + 1}={H.starts[i] + H.lengths[i]} > s{i + 2}={H.starts[i + 1]}")
    end = H.starts[-1] + H.lengths[-1] - 1
    if end > A:
        return Validation(False, f"bound: last window ends at {end} > A={A}")
    return Validation(True, None)


class _Counter:
    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def bump(self):
        with self._lock:
            self.value += 1


# Instrumentation: how many times a candidate enumeration has been started.
enumeration_calls = _Counter()


def enumerate_latent(A: int, M: int, tau: int, m: int) -> Iterator[LatentVars]:
    """Yield every valid segmentation once, in lexicographic key order.

    Depth-first with O(M) state; nothing is materialised.
    """
    enumeration_calls.bump()
    starts = [0] * M
    lengths = [0] * M

    def rec(i, first):
        if i == M:
            yield LatentVars(tuple(starts), tuple(lengths))
            return
        room = (M - i - 1) * tau
        for s in range(first, A + 2):
            if s + tau - 1 + room > A:
                break
            for t in range(tau, m + 1):
                if s + t - 1 + room > A:
                    break
                starts[i], lengths[i] = s, t
                yield from rec(i + 1, s + t)

    if M < 1 or tau > m:
        return
    yield from rec(0, 1)


def count_latent(A: int, M: int, tau: int, m: int) -> int:
    return sum(1 for _ in enumerate_latent(A, M, tau, m))


def even_split(A: int, M: int, m: int, tau: int = 1) -> LatentVars:
    """Fixed segmentation: window i starts at 1 + i*ceil(A/M), length capped by m and A."""
    step = -(-A // M)
    starts, lengths = [], []
    for i in range(M):
        s = 1 + i * step
        starts.append(s)
        lengths.append(min(m, A - s + 1, step))
    H = LatentVars(tuple(starts), tuple(lengths))
    ok, why = validate(H, A, M, tau, m)
    if not ok:
        raise ConfigurationError(f"even split {H} is invalid: {why}")
    return H


def window_list(A: int, tau: int, m: int) -> List[Tuple[int, int]]:
    """Every admissible (start, length) for a single clique, lexicographic."""
    return [(s, t) for s in range(1, A + 1) for t in range(tau, m + 1) if s + t - 1 <= A]


@functools.lru_cache(maxsize=16)
def candidate_table(A: int, M: int, tau: int, m: int) -> np.ndarray:
    """(n_candidates, M) window indices into :func:`window_list`, lexicographic rows."""
    index = {w: k for k, w in enumerate(window_list(A, tau, m))}
    rows = [[index[w] for w in H.windows()] for H in enumerate_latent(A, M, tau, m)]
    table = np.array(rows, dtype=np.int32).reshape(-1, M)
    table.setflags(write=False)
    return table


def window_bank(frames, params: Parameters, config: ModelConfig) -> List[np.ndarray]:
    """Per clique, the hidden-layer share of every admissible window.

    Returns M arrays of shape (n_windows, fc_hidden), rows ordered as
    :func:`window_list`.
    """
    frames = np.asarray(frames).astype(params.dtype, copy=False)
    c = config
    wins = window_list(frames.shape[1], c.tau, c.m)
    shrink = c.temporal_shrink
    bank = []
    for i, cp in enumerate(params.cliques):
        maps, _ = clique_pipeline(frames, cp, c)
        rows = np.empty((len(wins), c.fc_hidden), dtype=params.dtype)
        for k, (s, t) in enumerate(wins):
            f = _layout(maps[:, :, :, s - 1:s - 1 + t - shrink], c)
            rows[k] = hidden_partial(f, params, i, c)
        bank.append(rows)
    return bank


def _candidates(A, config: ModelConfig):
    enumeration_calls.bump()
    table = candidate_table(A, config.M, config.tau, config.m)
    if len(table) == 0:
        raise ConfigurationError(
            f"no valid segmentation for A={A}, M={config.M}, tau={config.tau}, m={config.m}")
    return table


def _chunk_probs(bank, rows, params):
    _, probs = head([b[rows[:, i]] for i, b in enumerate(bank)], params)
    return probs


def _reduce(best, cand):
    """Associative max on (score, -index): higher score wins, then smaller index."""
    if best is None:
        return cand
    if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
        return cand
    return best


def _frames(sample):
    return np.asarray(getattr(sample, "frames", sample))


def estep_assign(sample, label: int, params: Parameters, config: ModelConfig,
                 return_probs=False):
    """The segmentation maximising F_label; ties go to the smallest key."""
    frames = _frames(sample)
    table = _candidates(frames.shape[1], config)
    bank = window_bank(frames, params, config)
    best = None
    for lo in range(0, len(table), CHUNK):
        probs = _chunk_probs(bank, table[lo:lo + CHUNK], params)
        j = int(np.argmax(probs[:, label - 1]))
        best = _reduce(best, (probs[j, label - 1], lo + j, probs[j]))
    H = _row_to_latent(table[best[1]], frames.shape[1], config)
    if return_probs:
        return H, best[2]
    return H


def infer(sample, params: Parameters, config: ModelConfig):
    """Joint argmax over labels and segmentations.

    Returns ``(label, H, probability)``. Ties prefer the smaller label, then
    the smaller segmentation key.
    """
    frames = _frames(sample)
    table = _candidates(frames.shape[1], config)
    bank = window_bank(frames, params, config)
    best = [None] * config.K
    for lo in range(0, len(table), CHUNK):
        probs = _chunk_probs(bank, table[lo:lo + CHUNK], params)
        top = probs.argmax(axis=0)
        for y in range(config.K):
            best[y] = _reduce(best[y], (probs[top[y], y], lo + int(top[y])))
    y = 0
    for k in range(1, config.K):
        if best[k][0] > best[y][0]:
            y = k
    H = _row_to_latent(table[best[y][1]], frames.shape[1], config)
    return y + 1, H, float(best[y][0])


def _row_to_latent(row, A, config: ModelConfig) -> LatentVars:
    wins = window_list(A, config.tau, config.m)
    return LatentVars(tuple(wins[k][0] for k in row), tuple(wins[k][1] for k in row))


def _pool_map(fn, items, threads):
    if threads is None or threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def estep_all(samples, params: Parameters, config: ModelConfig, threads: int = 1):
    """E-step over a dataset; returns a list of ``(H, probs_at_H)``."""
    return _pool_map(lambda s: estep_assign(s, s.label, params, config, return_probs=True),
                     samples, threads)


def infer_all(samples, params: Parameters, config: ModelConfig, threads: int = 1):
    return _pool_map(lambda s: infer(s, params, config), samples, threads)
