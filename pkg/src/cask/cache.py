"""KV cache data model: ordered entries, budget accounting, merge bookkeeping.

One :class:`KVEntry` holds the key/value rows for *all* layers of a token
(shape ``(num_layers, d)``), so a token occupies exactly one budget slot and
structural operations (evict, merge) apply uniformly across layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PREFIX = "prefix"
DECODE = "decode"

STAGE_PREFIX_EVICT = "prefix-evict"
STAGE_DECODE_CONSOLIDATE = "decode-consolidate"


class CacheError(ValueError):
    """Violation of a cache precondition (ordering, protection, mass)."""


@dataclass
class KVEntry:
    """One cached token: stacked per-layer key/value plus bookkeeping.

    ``group_mass`` is 1.0 for unmerged entries; a merged representative
    carries the summed fold weights of its members.  ``members`` records the
    original positions this entry covers (itself, for unmerged entries).
    """

    key: np.ndarray
    value: np.ndarray
    position: int
    origin: str = DECODE
    score_mass: float = 0.0
    group_mass: float = 1.0
    member_count: int = 1
    protected: bool = False
    members: tuple[int, ...] = ()

    def __post_init__(self):
        self.key = np.asarray(self.key, dtype=np.float64)
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.origin not in (PREFIX, DECODE):
            raise CacheError(f"unknown origin {self.origin!r}")
        if self.group_mass <= 0:
            raise CacheError("group_mass must be positive")
        if self.member_count < 1:
            raise CacheError("member_count must be >= 1")
        if not self.members:
            self.members = (self.position,)

    @property
    def merged(self) -> bool:
        return self.member_count > 1

    def geometry_key(self) -> np.ndarray:
        """Flat d-vector used for merge geometry (mean over layers)."""
        return self.key if self.key.ndim == 1 else self.key.mean(axis=0)

    def snapshot(self) -> dict:
        return {
            "position": self.position,
            "origin": self.origin,
            "protected": self.protected,
            "group_mass": self.group_mass,
            "member_count": self.member_count,
        }


@dataclass
class CompressionEvent:
    step: int
    stage: str
    entries_before: int
    entries_after: int

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "stage": self.stage,
            "entries_before": self.entries_before,
            "entries_after": self.entries_after,
        }


@dataclass
class CacheState:
    """Position-ordered KV entries plus budget and history accounting."""

    budget: int
    entries: list[KVEntry] = field(default_factory=list)
    total_appended: int = 0
    evicted_tokens: int = 0
    compression_events: list[CompressionEvent] = field(default_factory=list)
    prefix_budget_exhausted: bool = False
    core_overflow: bool = False

    def __post_init__(self):
        if self.budget < 1:
            raise CacheError("budget must be positive")

    def __len__(self) -> int:
        return len(self.entries)

    def positions(self) -> list[int]:
        return [e.position for e in self.entries]

    def entry_at(self, position: int) -> KVEntry:
        for e in self.entries:
            if e.position == position:
                return e
        raise CacheError(f"no entry at position {position}")

    def record_event(self, stage: str, before: int, after: int) -> None:
        self.compression_events.append(
            CompressionEvent(step=self.total_appended, stage=stage,
                             entries_before=before, entries_after=after)
        )

    def decode_events(self) -> int:
        return sum(1 for ev in self.compression_events
                   if ev.stage == STAGE_DECODE_CONSOLIDATE)

    def snapshot(self) -> list[dict]:
        """JSON-serializable audit view of the live entries."""
        return [e.snapshot() for e in self.entries]


def append(cache: CacheState, entry: KVEntry) -> CacheState:
    """Append one token's entry; positions must be strictly increasing."""
    if cache.entries and entry.position <= cache.entries[-1].position:
        raise CacheError(
            f"non-monotone position {entry.position} "
            f"(last is {cache.entries[-1].position})"
        )
    cache.entries.append(entry)
    cache.total_appended += 1
    return cache


def evict(cache: CacheState, positions: Iterable[int], *,
          stage: str = STAGE_PREFIX_EVICT, record: bool = True) -> CacheState:
    """Remove the entries at ``positions``; protected entries are off-limits."""
    targets = set(positions)
    if not targets:
        return cache
    for e in cache.entries:
        if e.position in targets and e.protected:
            raise CacheError(f"protected entry at position {e.position}")
    before = len(cache.entries)
    kept = [e for e in cache.entries if e.position not in targets]
    removed = before - len(kept)
    if removed:
        cache.evicted_tokens += sum(
            e.member_count for e in cache.entries if e.position in targets
        )
        cache.entries = kept
        if record:
            cache.record_event(stage, before, len(kept))
    return cache


def merge_replace(cache: CacheState, group_positions: Sequence[int],
                  representative: KVEntry,
                  weights: Sequence[float] | None = None) -> CacheState:
    """Replace a group of entries with one representative.

    The representative's ``group_mass`` must equal the left-to-right sum of
    the member weights (the members' ``score_mass`` unless ``weights`` is
    given); it is inserted at the earliest member position.
    """
    targets = sorted(set(group_positions))
    if len(targets) < 2:
        raise CacheError("singleton group")
    members = [cache.entry_at(p) for p in targets]
    for m in members:
        if m.protected:
            raise CacheError(f"protected member at position {m.position}")
    if weights is None:
        weights = [m.score_mass for m in members]
    total = 0.0
    for w in weights:
        total += float(w)
    if representative.group_mass != total:
        raise CacheError(
            f"mass mismatch: representative carries {representative.group_mass}, "
            f"member weights sum to {total}"
        )
    if representative.position != targets[0]:
        raise CacheError("representative must sit at the earliest member position")
    target_set = set(targets)
    out: list[KVEntry] = []
    for e in cache.entries:
        if e.position == targets[0]:
            out.append(representative)
        elif e.position not in target_set:
            out.append(e)
    cache.entries = out
    return cache


def terminal_saved_ratio(cache: CacheState) -> float:
    """1 - (live cache tokens / tokens ever appended)."""
    if cache.total_appended < 1:
        raise CacheError("empty history")
    return 1.0 - len(cache.entries) / cache.total_appended


def covered_positions(cache: CacheState) -> set[int]:
    """Live positions plus every member position folded into a live entry."""
    covered: set[int] = set()
    for e in cache.entries:
        covered.update(e.members)
    return covered
