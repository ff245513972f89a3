"""Actual-output bridge: free-run generation plus output-level metrics.

The bridge reads output proximity along three separate axes (lexical
overlap, embedding cosine, task-native score) instead of collapsing them
into one number.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cache import DECODE, CacheState
from .model import ModelParams, accumulate_mass, forward_step
from .replay import run_prefill

EMBED_WIDTH = 256
EMBED_SEED = 17


def bridge_run(params: ModelParams, prompt, length: int,
               policy) -> tuple[list[int], CacheState]:
    """Greedy decode where every emitted token passes through the policy;
    returns the emitted tokens and the terminal cache."""
    if length < 1:
        raise ValueError("length must be >= 1")
    total = len(prompt) + length + 1
    budget = policy.budget if policy.budget is not None else total
    cache = CacheState(budget=budget)
    dist = run_prefill(params, cache, prompt, policy)
    if dist is None:
        raise ValueError("prompt must be nonempty")
    tokens: list[int] = []
    for _ in range(length):
        tok = int(np.argmax(dist))
        tokens.append(tok)
        out = forward_step(params, cache, tok, origin=DECODE)
        accumulate_mass(cache, out)
        policy.force_append(cache, out.new_entry)
        dist = out.distribution
    return tokens, cache


def free_run(params: ModelParams, prompt, length: int, policy) -> list[int]:
    """Greedy decode under the policy pipeline (token sequence only)."""
    return bridge_run(params, prompt, length, policy)[0]


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    """Longest common subsequence length by row-wise dynamic programming."""
    if not a or not b:
        return 0
    b_arr = np.asarray(b, dtype=np.int64)
    prev = np.zeros(len(b) + 1, dtype=np.int64)
    for x in a:
        cur = np.empty_like(prev)
        cur[0] = 0
        match = prev[:-1] + (b_arr == x)
        np.maximum(match, prev[1:], out=cur[1:])
        np.maximum.accumulate(cur, out=cur)
        prev = cur
    return int(prev[-1])


def seq_ratio(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """LCS(candidate, reference) / max(len(candidate), len(reference))."""
    if not candidate or not reference:
        warnings.warn("seq_ratio on an empty sequence is defined as 0")
        return 0.0
    return lcs_length(candidate, reference) / max(len(candidate), len(reference))


def _bigram_bucket(a: int, b: int, seed: int, width: int) -> int:
    x = ((a + 1) * 2654435761 ^ (b + 1) * 40503 ^ seed * 97) & 0xFFFFFFFF
    x ^= x >> 16
    x = (x * 0x45D9F3B) & 0xFFFFFFFF
    x ^= x >> 16
    return x % width


def embed(tokens: Sequence[int], width: int = EMBED_WIDTH,
          seed: int = EMBED_SEED) -> np.ndarray:
    """L2-normalized hashed token-bigram count vector (deterministic)."""
    counts = np.zeros(width)
    for a, b in zip(tokens, tokens[1:]):
        counts[_bigram_bucket(int(a), int(b), seed, width)] += 1.0
    norm = np.linalg.norm(counts)
    return counts / norm if norm > 0 else counts


def sem_sim(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """Cosine similarity of the deterministic bigram embeddings."""
    if not candidate or not reference:
        warnings.warn("sem_sim on an empty sequence is defined as 0")
        return 0.0
    u, v = embed(candidate), embed(reference)
    if not u.any() or not v.any():
        warnings.warn("sem_sim with a zero-vector embedding is defined as 0")
        return 0.0
    return float(u @ v)


def _exact_match(candidate, reference, annotation) -> float:
    return 100.0 if list(candidate) == list(reference) else 0.0


_TASK_METRICS: dict[str, Callable] = {"exact_match": _exact_match}


def register_task_metric(name: str, fn: Callable) -> None:
    _TASK_METRICS[name] = fn


def task_metric(candidate: Sequence[int], reference: Sequence[int],
                annotation=None, evaluator: str = "exact_match") -> float:
    """Pluggable task-native evaluator; the default is exact match."""
    if evaluator not in _TASK_METRICS:
        raise ValueError(f"unknown task evaluator {evaluator!r}")
    return _TASK_METRICS[evaluator](candidate, reference, annotation)


@dataclass
class BridgeRow:
    seq_ratio: float
    sem_sim: float
    task_metric: float | None
    terminal_saved: float
    compression_events: int
    prefix_ratio: float = 0.0
    output_ratio: float = 1.0

    def to_json(self) -> dict:
        return {
            "seq_ratio": self.seq_ratio,
            "sem_sim": self.sem_sim,
            "task_metric": self.task_metric,
            "terminal_saved": self.terminal_saved,
            "compression_events": self.compression_events,
            "prefix_ratio": self.prefix_ratio,
            "output_ratio": self.output_ratio,
        }


def common_prefix_ratio(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """Length of the shared leading run over the reference length."""
    if not reference:
        return 0.0
    n = 0
    for a, b in zip(candidate, reference):
        if a != b:
            break
        n += 1
    return n / len(reference)
