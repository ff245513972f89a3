"""Deterministic toy causal-attention LM and synthetic witness prompts.

The model is a seeded, single-layer-by-default attention stack over token
embeddings with no positional encoding, so identical tokens produce identical
keys and redundancy in the prompt shows up as exactly mergeable cache
entries.  A merged representative attends like a normal entry except that
its logit gains ``log(group_mass)``, letting consolidated mass keep a
mass-proportional share of the softmax.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cache import DECODE, PREFIX, CacheState, KVEntry, append

WITNESS_KINDS = (
    "short-prompt-reasoning",
    "prompt-heavy-decode-active",
    "prompt-heavy-prefix-dominant",
)

_MOTIF_LEN = {
    "short-prompt-reasoning": 4,
    "prompt-heavy-decode-active": 4,
    "prompt-heavy-prefix-dominant": 8,
}


@dataclass
class ModelParams:
    seed: int
    vocab_size: int
    model_dim: int
    num_layers: int
    embedding: np.ndarray          # (V, d)
    wq: np.ndarray                 # (L, d, d)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    unembed: np.ndarray            # (d, V)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.embedding, self.wq, self.wk, self.wv, self.wo, self.unembed):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def init_model(seed: int, vocab_size: int = 32, model_dim: int = 16,
               num_layers: int = 1) -> ModelParams:
    """Build deterministic parameters; equal inputs give equal parameters."""
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    if model_dim % 2 != 0:
        raise ValueError("model_dim must be even")
    if model_dim < 4:
        raise ValueError("model_dim must be >= 4")
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    rng = np.random.default_rng(seed)
    d = model_dim
    scale = 1.0 / np.sqrt(d)
    return ModelParams(
        seed=seed,
        vocab_size=vocab_size,
        model_dim=d,
        num_layers=num_layers,
        embedding=rng.standard_normal((vocab_size, d)),
        wq=rng.standard_normal((num_layers, d, d)) * scale,
        wk=rng.standard_normal((num_layers, d, d)) * scale,
        wv=rng.standard_normal((num_layers, d, d)) * scale,
        wo=rng.standard_normal((num_layers, d, d)) * scale,
        unembed=rng.standard_normal((d, vocab_size)) * scale,
    )


@dataclass
class StepOutput:
    """One forward pass: next-token distribution, the token's cache entry
    (stacked per-layer rows), and per-layer attention weights over the
    entries present at call time plus the new position (last column)."""

    distribution: np.ndarray       # (V,)
    new_entry: KVEntry
    attention_weights: np.ndarray  # (L, n_cache + 1)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


def forward_step(params: ModelParams, cache: CacheState, token: int,
                 origin: str = DECODE) -> StepOutput:
    """Pure forward pass; the caller decides what to insert into the cache."""
    if not 0 <= token < params.vocab_size:
        raise ValueError(f"token {token} out of vocab (V={params.vocab_size})")
    L, d = params.num_layers, params.model_dim
    for e in cache.entries:
        if e.key.shape != (L, d):
            raise ValueError(
                f"cache entry at {e.position} has shape {e.key.shape}, "
                f"model expects {(L, d)}"
            )
    n = len(cache.entries)
    h = params.embedding[token]
    new_keys = np.empty((L, d))
    new_values = np.empty((L, d))
    weights = np.empty((L, n + 1))
    sqrt_d = np.sqrt(d)
    for l in range(L):
        q = h @ params.wq[l]
        k = h @ params.wk[l]
        v = h @ params.wv[l]
        new_keys[l] = k
        new_values[l] = v
        if n:
            keys = np.stack([e.key[l] for e in cache.entries] + [k])
            values = np.stack([e.value[l] for e in cache.entries] + [v])
            masses = np.array([e.group_mass for e in cache.entries] + [1.0])
        else:
            keys = k[None, :]
            values = v[None, :]
            masses = np.ones(1)
        logits = keys @ q / sqrt_d + np.log(masses)
        w = _softmax(logits)
        weights[l] = w
        h = h + (w @ values) @ params.wo[l]
    dist = _softmax(h @ params.unembed)
    entry = KVEntry(key=new_keys, value=new_values,
                    position=cache.total_appended, origin=origin,
                    score_mass=float(weights[:, -1].mean()))
    return StepOutput(distribution=dist, new_entry=entry,
                      attention_weights=weights)


def accumulate_mass(cache: CacheState, output: StepOutput) -> None:
    """Add this step's attention mass (mean over layers) onto live entries."""
    if cache.entries:
        per_entry = output.attention_weights[:, :-1].mean(axis=0)
        for e, a in zip(cache.entries, per_entry):
            e.score_mass += float(a)


@dataclass
class ReferenceRun:
    """Greedy full-KV continuation with its per-step distributions and the
    accumulated attention mass per position (the oracle score source)."""

    tokens: list[int]
    distributions: np.ndarray      # (T, V)
    oracle_scores: dict[int, float]
    prompt_len: int
    cache: CacheState


def generate_reference(params: ModelParams, prompt: list[int],
                       length: int) -> ReferenceRun:
    """Greedy argmax continuation under full KV; ties go to the lowest id."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if not prompt:
        raise ValueError("prompt must be nonempty")
    cache = CacheState(budget=len(prompt) + length + 1)
    dist = None
    for tok in prompt:
        out = forward_step(params, cache, tok, origin=PREFIX)
        accumulate_mass(cache, out)
        append(cache, out.new_entry)
        dist = out.distribution
    tokens: list[int] = []
    dists = np.empty((length, params.vocab_size))
    for t in range(length):
        dists[t] = dist
        tok = int(np.argmax(dist))
        tokens.append(tok)
        out = forward_step(params, cache, tok, origin=DECODE)
        accumulate_mass(cache, out)
        append(cache, out.new_entry)
        dist = out.distribution
    scores = {e.position: e.score_mass for e in cache.entries}
    return ReferenceRun(tokens=tokens, distributions=dists,
                        oracle_scores=scores, prompt_len=len(prompt),
                        cache=cache)


@dataclass
class Witness:
    kind: str
    seed: int
    prefix_len: int
    decode_len: int
    redundancy: float
    regime_label: str
    prompt: tuple[int, ...]

    @property
    def name(self) -> str:
        return f"{self.kind}-s{self.seed}"

    def to_manifest(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "prefix_len": self.prefix_len,
            "decode_len": self.decode_len,
            "redundancy": self.redundancy,
            "regime_label": self.regime_label,
            "prompt": list(self.prompt),
        }


def make_witness(kind: str, seed: int, prefix_len: int, decode_len: int,
                 redundancy: float, vocab_size: int = 32) -> Witness:
    """Synthetic prompt with controllable repeated-motif density.

    The prompt is one start token followed by ``prefix_len`` body tokens;
    a ``redundancy`` fraction of the body is covered by repeats of a single
    seeded motif, the rest is fresh random tokens.  Decode-active witnesses
    end on the motif so greedy decode tends to continue the loop.
    """
    if kind not in WITNESS_KINDS:
        raise ValueError(f"unknown witness kind {kind!r}")
    if prefix_len < 0:
        raise ValueError("prefix_len must be >= 0")
    if decode_len < 1:
        raise ValueError("decode_len must be >= 1")
    if not 0.0 <= redundancy <= 1.0:
        raise ValueError("redundancy must be in [0, 1]")
    rng = np.random.default_rng([seed, WITNESS_KINDS.index(kind)])
    motif_len = _MOTIF_LEN[kind]
    motif = rng.integers(1, vocab_size, size=motif_len).tolist()
    n_rep = int(redundancy * prefix_len) // motif_len
    fresh_count = prefix_len - n_rep * motif_len
    blocks: list[list[int]] = [list(motif) for _ in range(n_rep)]
    fresh = rng.integers(1, vocab_size, size=fresh_count).tolist()
    for i in range(0, fresh_count, motif_len):
        blocks.append(fresh[i:i + motif_len])
    order = rng.permutation(len(blocks)) if blocks else []
    body: list[int] = []
    for idx in order:
        body.extend(blocks[idx])
    if kind == "prompt-heavy-decode-active" and n_rep > 0:
        body.extend(motif)
        body = body[-prefix_len:] if prefix_len else []
    prompt = (0, *body[:prefix_len])
    return Witness(kind=kind, seed=seed, prefix_len=prefix_len,
                   decode_len=decode_len, redundancy=redundancy,
                   regime_label=kind, prompt=prompt)


def write_witness_manifest(witness: Witness, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(witness.to_manifest(), indent=2) + "\n")
    return path


def read_witness_manifest(path: str | Path) -> Witness:
    data = json.loads(Path(path).read_text())
    return Witness(kind=data["kind"], seed=data["seed"],
                   prefix_len=data["prefix_len"], decode_len=data["decode_len"],
                   redundancy=data["redundancy"],
                   regime_label=data["regime_label"],
                   prompt=tuple(data["prompt"]))
