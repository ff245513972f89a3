"""Teacher-forced replay harness and the four primary fidelity metrics.

A replay prefils the prompt through the policy pipeline, then walks the
reference continuation token by token: at each step the candidate's
next-token distribution (produced before the reference token enters the
cache) is scored against the reference token, and the token is then forced
into the cache through the policy's step path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cache import DECODE, PREFIX, CacheState, KVEntry, append, terminal_saved_ratio
from .kernels import HorizonDistribution
from .model import ModelParams, accumulate_mass, forward_step
from .policies import CaskConfig, evict_baseline
from .twostage import StageConfig, stage1_prefix_evict, stage2_step

NLL_FLOOR = 1e-12

METHOD_CASK = "cask"
METHOD_EVICT = "evict"
METHOD_NONE = "none"


class NoCompressionPolicy:
    """Full-KV pipeline: appends everything, never compresses."""

    method = METHOD_NONE
    budget: int | None = None

    def after_prefill(self, cache: CacheState) -> None:
        pass

    def force_append(self, cache: CacheState, entry: KVEntry) -> None:
        append(cache, entry)


class EvictionPolicy:
    """Score-mass eviction baseline: trim to budget whenever it overflows."""

    method = METHOD_EVICT

    def __init__(self, budget: int):
        self.budget = budget

    def after_prefill(self, cache: CacheState) -> None:
        evict_baseline(cache, self.budget)

    def force_append(self, cache: CacheState, entry: KVEntry) -> None:
        append(cache, entry)
        if len(cache.entries) > self.budget:
            evict_baseline(cache, self.budget)


class CaskPolicy:
    """Two-stage pipeline: stage-1 prefix eviction, stage-2 consolidation."""

    method = METHOD_CASK

    def __init__(self, budget: int, cask_config: CaskConfig | None = None,
                 stage_config: StageConfig | None = None,
                 pi: HorizonDistribution | None = None):
        self.budget = budget
        self.cask_config = cask_config or CaskConfig()
        self.stage_config = stage_config or StageConfig(budget=budget)
        if self.stage_config.budget != budget:
            raise ValueError("stage_config.budget must match the policy budget")
        self.pi = pi if pi is not None else self.cask_config.horizon_distribution()
        self.groups_folded = 0
        self.members_folded = 0

    def after_prefill(self, cache: CacheState) -> None:
        stage1_prefix_evict(cache, self.stage_config)

    def force_append(self, cache: CacheState, entry: KVEntry) -> None:
        outcome = stage2_step(cache, entry, self.cask_config,
                              self.stage_config, self.pi)
        self.groups_folded += outcome.groups_folded
        self.members_folded += outcome.members_folded


def make_policy(method: str, budget: int | None = None,
                cask_config: CaskConfig | None = None,
                stage_config: StageConfig | None = None):
    if method == METHOD_NONE:
        return NoCompressionPolicy()
    if budget is None:
        raise ValueError(f"method {method!r} needs a budget")
    if method == METHOD_EVICT:
        return EvictionPolicy(budget)
    if method == METHOD_CASK:
        return CaskPolicy(budget, cask_config, stage_config)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ReplayRecord:
    """Per-step teacher-forced log plus the terminal cache."""

    reference: np.ndarray        # (T,) forced tokens
    argmax: np.ndarray           # (T,) candidate argmax per step
    top5_flags: np.ndarray       # (T,) bool, reference inside candidate top-5
    log_probs: np.ndarray        # (T,) floored log p_t(reference)
    cache_sizes: np.ndarray      # (T,) live entries when the step was scored
    distributions: np.ndarray    # (T, V) candidate distributions
    cache: CacheState
    top5_clamped: bool = False

    @property
    def T(self) -> int:
        return int(self.reference.size)

    @classmethod
    def from_distributions(cls, distributions: np.ndarray, reference,
                           cache: CacheState | None = None,
                           cache_sizes: np.ndarray | None = None) -> "ReplayRecord":
        """Build a record from per-step candidate distributions.

        This is the single place the per-step stats (argmax, top-5 flag,
        floored log-probability) are derived from a distribution.
        """
        distributions = np.asarray(distributions, dtype=np.float64)
        reference = np.asarray(reference, dtype=np.int64)
        T, V = distributions.shape
        if reference.shape != (T,):
            raise ValueError("reference must have one token per step")
        k = min(5, V)
        rec = cls(
            reference=reference,
            argmax=np.array([int(np.argmax(d)) for d in distributions],
                            dtype=np.int64),
            top5_flags=np.array(
                [_top5_hit(d, int(t), k)
                 for d, t in zip(distributions, reference)], dtype=bool),
            log_probs=np.array(
                [np.log(max(float(d[t]), NLL_FLOOR))
                 for d, t in zip(distributions, reference)]),
            cache_sizes=(cache_sizes if cache_sizes is not None
                         else np.zeros(T, dtype=np.int64)),
            distributions=distributions,
            cache=cache if cache is not None else CacheState(budget=1),
            top5_clamped=V < 5,
        )
        return rec


@dataclass
class FidelitySummary:
    top1: float
    top5: float
    mean_nll: float
    first_mismatch: int | None
    saved_ratio: float
    T: int
    top1_matches: int
    top5_matches: int
    top5_clamped: bool = False

    def __post_init__(self):
        if self.top1 > self.top5:
            raise ValueError("top1 cannot exceed top5")


def _top5_hit(dist: np.ndarray, token: int, k: int) -> bool:
    """Token inside the k highest-probability slots, ties going to lower ids."""
    p = dist[token]
    rank = int(np.sum(dist > p) + np.sum((dist == p) & (np.arange(dist.size) < token)))
    return rank < k


def run_prefill(params: ModelParams, cache: CacheState, prompt,
                policy) -> np.ndarray:
    """Feed the prompt, accumulate attention mass, run the policy's
    post-prefill hook, and return the next-token distribution in hand."""
    dist = None
    for tok in prompt:
        out = forward_step(params, cache, int(tok), origin=PREFIX)
        accumulate_mass(cache, out)
        append(cache, out.new_entry)
        dist = out.distribution
    policy.after_prefill(cache)
    return dist


def teacher_forced_replay(params: ModelParams, prompt, reference,
                          policy) -> ReplayRecord:
    """Replay the reference continuation under a compression policy."""
    reference = [int(t) for t in reference]
    if not reference:
        raise ValueError("reference must be nonempty")
    for t in reference:
        if not 0 <= t < params.vocab_size:
            raise ValueError(f"reference token {t} out of vocab")
    total = len(prompt) + len(reference) + 1
    budget = policy.budget if policy.budget is not None else total
    cache = CacheState(budget=budget)
    dist = run_prefill(params, cache, prompt, policy)
    if dist is None:
        raise ValueError("prompt must be nonempty")
    T, V = len(reference), params.vocab_size
    distributions = np.empty((T, V))
    cache_sizes = np.empty(T, dtype=np.int64)
    for t, ref_tok in enumerate(reference):
        distributions[t] = dist
        cache_sizes[t] = len(cache.entries)
        out = forward_step(params, cache, ref_tok, origin=DECODE)
        accumulate_mass(cache, out)
        policy.force_append(cache, out.new_entry)
        dist = out.distribution
    return ReplayRecord.from_distributions(distributions, reference,
                                           cache=cache, cache_sizes=cache_sizes)


def top1_agreement(record: ReplayRecord) -> float:
    if record.T < 1:
        raise ValueError("empty record")
    return float(np.mean(record.argmax == record.reference))


def top5_coverage(record: ReplayRecord) -> float:
    if record.T < 1:
        raise ValueError("empty record")
    return float(np.mean(record.top5_flags))


def mean_nll(record: ReplayRecord) -> float:
    if record.T < 1:
        raise ValueError("empty record")
    return float(-np.mean(record.log_probs))


def first_mismatch(record: ReplayRecord) -> int | None:
    """1-based index of the earliest argmax divergence; None when all match."""
    misses = np.nonzero(record.argmax != record.reference)[0]
    if misses.size == 0:
        return None
    return int(misses[0]) + 1


def summarize(record: ReplayRecord) -> FidelitySummary:
    return FidelitySummary(
        top1=top1_agreement(record),
        top5=top5_coverage(record),
        mean_nll=mean_nll(record),
        first_mismatch=first_mismatch(record),
        saved_ratio=terminal_saved_ratio(record.cache),
        T=record.T,
        top1_matches=int(np.sum(record.argmax == record.reference)),
        top5_matches=int(np.sum(record.top5_flags)),
        top5_clamped=record.top5_clamped,
    )


def replay_row_json(witness: str, method: str, budget: int,
                    summary: FidelitySummary, flags) -> dict:
    """Single-replay JSON row (the per-replay external interface)."""
    return {
        "witness": witness,
        "method": method,
        "budget": budget,
        "top1": summary.top1,
        "top5": summary.top5,
        "mean_nll": summary.mean_nll,
        "first_mismatch": summary.first_mismatch,
        "saved_ratio": summary.saved_ratio,
        "regime_flags": flags.to_json(),
        "decode_events": flags.decode_events,
    }
