"""Compression policies: core-aware consolidation and score-mass eviction.

The consolidation path partitions decode entries into a protected core
(sinks, recency window, high-mass anchors) and mergeable scratch, folds
redundant scratch groups into mass-weighted representatives, and only then
falls back to eviction.  The baseline keeps the highest-score entries and
nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cache import (
    DECODE,
    STAGE_DECODE_CONSOLIDATE,
    CacheState,
    KVEntry,
    merge_replace,
)
from .kernels import (
    HorizonDistribution,
    band_decompose,
    d_kappa,
    kappa_dual_norm,
    kappa_norm,
    truncated_geometric,
)


@dataclass
class CaskConfig:
    """Tunables for core detection and scratch consolidation."""

    sink_count: int = 2
    recency_window: int = 8
    anchor_quantile: float = 0.9
    merge_epsilon: float = 0.25
    temporal_window: int = 512
    max_group_size: int = 16
    horizon: int = 4

    def __post_init__(self):
        if self.sink_count < 0:
            raise ValueError("sink_count must be >= 0")
        if self.recency_window < 0:
            raise ValueError("recency_window must be >= 0")
        if not 0.0 <= self.anchor_quantile <= 1.0:
            raise ValueError("anchor_quantile must be in [0, 1]")
        if self.merge_epsilon < 0:
            raise ValueError("merge_epsilon must be >= 0")
        if self.temporal_window < 1:
            raise ValueError("temporal_window must be >= 1")
        if self.max_group_size < 2:
            raise ValueError("max_group_size must be >= 2")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")

    def horizon_distribution(self) -> HorizonDistribution:
        return truncated_geometric(self.horizon)


@dataclass
class MergeGroup:
    """A disjoint set of scratch entries scheduled for folding."""

    positions: tuple[int, ...]
    weights: tuple[float, ...]
    mass: float
    keys: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        if len(self.positions) != len(self.weights):
            raise ValueError("positions and weights must align")
        total = 0.0
        for w in self.weights:
            if w < 0:
                raise ValueError("weights must be non-negative")
            total += float(w)
        if self.mass != total:
            raise ValueError("mass must equal the left-to-right weight sum")

    def __len__(self) -> int:
        return len(self.positions)


def detect_core(cache: CacheState, config: CaskConfig) -> set[int]:
    """Mark the protected core among decode entries and return its positions.

    Core = first ``sink_count`` decode entries + last ``recency_window``
    decode entries + decode entries whose accumulated score mass is strictly
    above the ``anchor_quantile`` quantile of decode score mass.  Flags are
    recomputed from scratch on every call.
    """
    if not cache.entries:
        raise ValueError("cache is empty")
    for e in cache.entries:
        e.protected = False
    decode = [e for e in cache.entries if e.origin == DECODE]
    if not decode:
        return set()
    core: set[int] = set()
    core.update(e.position for e in decode[:config.sink_count])
    if config.recency_window > 0:
        core.update(e.position for e in decode[-config.recency_window:])
    masses = np.array([e.score_mass for e in decode])
    threshold = float(np.quantile(masses, config.anchor_quantile))
    core.update(e.position for e in decode if e.score_mass > threshold)
    for e in decode:
        if e.position in core:
            e.protected = True
    return core


def _weighted_centroid(keys: list[np.ndarray], weights: list[float]) -> np.ndarray:
    total = 0.0
    for w in weights:
        total += w
    if total == 0.0:
        return np.mean(keys, axis=0)
    acc = weights[0] * keys[0]
    for w, k in zip(weights[1:], keys[1:]):
        acc = acc + w * k
    return acc / total


def form_merge_groups(cache: CacheState, config: CaskConfig,
                      pi: HorizonDistribution | None = None) -> list[MergeGroup]:
    """Greedy temporal scan over unprotected, unmerged decode entries.

    A group seeds at the earliest unassigned entry and admits later entries
    while they sit within ``temporal_window`` positions of the seed, within
    ``merge_epsilon`` kernel distance of the running mass-weighted centroid,
    and the group is below ``max_group_size``.  Size-1 groups are discarded.
    """
    if pi is None:
        pi = config.horizon_distribution()
    candidates = [e for e in cache.entries
                  if e.origin == DECODE and not e.protected]
    spectra = {e.position: band_decompose(e.geometry_key()) for e in candidates}
    assigned: set[int] = set()
    groups: list[MergeGroup] = []
    for i, seed in enumerate(candidates):
        if seed.position in assigned:
            continue
        members = [seed]
        keys = [seed.geometry_key()]
        weights = [seed.score_mass]
        for cand in candidates[i + 1:]:
            if cand.position in assigned:
                continue
            if cand.position - seed.position > config.temporal_window:
                break
            if len(members) >= config.max_group_size:
                break
            centroid = band_decompose(_weighted_centroid(keys, weights))
            if d_kappa(spectra[cand.position], centroid, pi) <= config.merge_epsilon:
                members.append(cand)
                keys.append(cand.geometry_key())
                weights.append(cand.score_mass)
        if len(members) >= 2:
            assigned.update(m.position for m in members)
            mass = 0.0
            for w in weights:
                mass += w
            groups.append(MergeGroup(
                positions=tuple(m.position for m in members),
                weights=tuple(weights),
                mass=mass,
                keys=tuple(keys),
            ))
    return groups


def fold_group(group: MergeGroup, entries: list[KVEntry]) -> KVEntry:
    """Fold a group into one representative carrying the group mass.

    Key and value are the weight-averaged members; ``group_mass`` is the
    left-to-right weight sum; the representative sits at the earliest member
    position and covers every member position.
    """
    if len(group) != len(entries):
        raise ValueError("group and entries must align")
    mass = 0.0
    for w in group.weights:
        mass += float(w)
    if mass <= 0.0:
        raise ValueError("all-zero weights")
    if len(entries) == 1:
        e = entries[0]
        return KVEntry(key=e.key.copy(), value=e.value.copy(),
                       position=e.position, origin=DECODE, score_mass=mass,
                       group_mass=mass, member_count=e.member_count,
                       members=e.members)
    key_acc = group.weights[0] * entries[0].key
    val_acc = group.weights[0] * entries[0].value
    for w, e in zip(group.weights[1:], entries[1:]):
        key_acc = key_acc + w * e.key
        val_acc = val_acc + w * e.value
    members: list[int] = []
    for e in entries:
        members.extend(e.members)
    return KVEntry(
        key=key_acc / mass,
        value=val_acc / mass,
        position=min(group.positions),
        origin=DECODE,
        score_mass=mass,
        group_mass=mass,
        member_count=sum(e.member_count for e in entries),
        members=tuple(sorted(members)),
    )


@dataclass
class CompressOutcome:
    fired: bool = False
    core_overflow: bool = False
    groups_folded: int = 0
    members_folded: int = 0
    evicted: int = 0


def _keep_order(entries: list[KVEntry]) -> list[KVEntry]:
    """Keep priority: score mass descending, then recency (higher position)."""
    return sorted(entries, key=lambda e: (-e.score_mass, -e.position))


def cask_compress(cache: CacheState, config: CaskConfig, budget: int,
                  pi: HorizonDistribution | None = None) -> CompressOutcome:
    """Core detection, scratch folding, then eviction down to ``budget``.

    A cache already at or under budget is left untouched (which also makes
    the operation idempotent).  A budget smaller than the detected core
    signals core overflow (a regime condition, not an exception) and leaves
    the cache untouched.  One decode-consolidate event is recorded when any
    fold or eviction happened; terminal protected flags are recomputed on
    the final state.
    """
    if pi is None:
        pi = config.horizon_distribution()
    before = len(cache.entries)
    if before <= budget:
        return CompressOutcome()
    core = detect_core(cache, config)
    if budget < len(core):
        cache.core_overflow = True
        return CompressOutcome(core_overflow=True)
    outcome = CompressOutcome()
    groups = form_merge_groups(cache, config, pi)
    for group in groups:
        if group.mass <= 0.0:
            continue
        entries = [cache.entry_at(p) for p in group.positions]
        rep = fold_group(group, entries)
        merge_replace(cache, group.positions, rep, weights=group.weights)
        outcome.groups_folded += 1
        outcome.members_folded += len(group)
    if len(cache.entries) > budget:
        unprotected = [e for e in cache.entries if not e.protected]
        n_keep = budget - (len(cache.entries) - len(unprotected))
        keep = {e.position for e in _keep_order(unprotected)[:n_keep]}
        to_evict = [e.position for e in unprotected if e.position not in keep]
        _drop(cache, set(to_evict))
        outcome.evicted = len(to_evict)
    outcome.fired = outcome.groups_folded > 0 or outcome.evicted > 0
    if outcome.fired:
        cache.record_event(STAGE_DECODE_CONSOLIDATE, before, len(cache.entries))
    detect_core(cache, config)
    return outcome


def _drop(cache: CacheState, positions: set[int]) -> None:
    if not positions:
        return
    cache.evicted_tokens += sum(
        e.member_count for e in cache.entries if e.position in positions
    )
    cache.entries = [e for e in cache.entries if e.position not in positions]


def evict_baseline(cache: CacheState, budget: int) -> CacheState:
    """Keep the ``budget`` highest-score entries, recency breaking ties.

    Protection flags are ignored: the baseline has no core concept.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if len(cache.entries) <= budget:
        return cache
    keep = {e.position for e in _keep_order(cache.entries)[:budget]}
    _drop(cache, {e.position for e in cache.entries if e.position not in keep})
    return cache


@dataclass
class MassDiagnostics:
    """Share of oracle top-k score mass held by the core / the covered set."""

    rho_core: float
    rho_rep: float
    topk_size: int
    lost_mass: tuple[float, ...] = ()
    k_clamped: bool = False

    def to_json(self, groups: int = 0, folded_members: int = 0) -> dict:
        return {
            "rho_core": self.rho_core,
            "rho_rep": self.rho_rep,
            "groups": groups,
            "folded_members": folded_members,
            "lost_mass_total": float(sum(self.lost_mass)),
        }


def mass_diagnostics(core: set[int], rep_set: set[int],
                     oracle_scores: dict[int, float], k: int,
                     folded_members: set[int] | frozenset[int] = frozenset(),
                     groups: list[MergeGroup] | None = None) -> MassDiagnostics:
    """Oracle mass coverage ratios over the top-k scored positions.

    A folded member counts as covered by its representative, so the covered
    set is ``rep_set | folded_members | core``.  Top-k selection orders by
    score descending then position descending; ``k`` beyond the population
    clamps with a warning flag.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if any(s < 0 for s in oracle_scores.values()):
        raise ValueError("oracle scores must be non-negative")
    k_clamped = k > len(oracle_scores)
    k_eff = min(k, len(oracle_scores))
    ranked = sorted(oracle_scores, key=lambda p: (-oracle_scores[p], -p))
    topk = ranked[:k_eff]
    denom = sum(oracle_scores[p] for p in topk)
    covered = set(rep_set) | set(folded_members) | set(core)
    if denom == 0.0:
        rho_core = rho_rep = 0.0
    else:
        rho_core = sum(oracle_scores[p] for p in topk if p in core) / denom
        rho_rep = sum(oracle_scores[p] for p in topk if p in covered) / denom
    lost = tuple(
        abs(g.mass - _ltr_sum(g.weights)) for g in (groups or [])
    )
    return MassDiagnostics(rho_core=rho_core, rho_rep=rho_rep,
                           topk_size=k_eff, lost_mass=lost, k_clamped=k_clamped)


def _ltr_sum(values) -> float:
    total = 0.0
    for v in values:
        total += float(v)
    return total


@dataclass
class PerturbationReport:
    pairs: np.ndarray            # (n_queries, 2) of (lhs, rhs)
    fraction_bounded: float


def perturbation_check(group: MergeGroup, representative: KVEntry,
                       queries: np.ndarray,
                       pi: HorizonDistribution) -> PerturbationReport:
    """Check the consolidation perturbation bound on a query sample.

    lhs is the gap between the group's summed weighted scores and the
    mass-scaled representative score; rhs is the dual-norm-weighted
    within-group dispersion plus the absolute lost mass.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[0] == 0:
        raise ValueError("empty query sample")
    if not group.keys:
        raise ValueError("group carries no keys")
    rep_key = representative.geometry_key()
    delta_m = representative.group_mass - _ltr_sum(group.weights)
    dispersion = 0.0
    for w, k in zip(group.weights, group.keys):
        dispersion += w * kappa_norm(k - rep_key, pi)
    pairs = np.empty((queries.shape[0], 2))
    for i, q in enumerate(queries):
        lhs_sum = 0.0
        for w, k in zip(group.weights, group.keys):
            lhs_sum += w * float(q @ k)
        lhs = abs(lhs_sum - representative.group_mass * float(q @ rep_key))
        rhs = kappa_dual_norm(q, pi) * dispersion + abs(delta_m)
        pairs[i] = (lhs, rhs)
    fraction = float(np.mean(pairs[:, 0] <= pairs[:, 1]))
    return PerturbationReport(pairs=pairs, fraction_bounded=fraction)
