import numpy as np
import pytest

from cask.cache import DECODE, CacheState, KVEntry, append
from cask.model import init_model


@pytest.fixture
def params():
    return init_model(seed=0, vocab_size=32, model_dim=16, num_layers=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_entry(position, key, value=None, origin=DECODE, score_mass=1.0,
               protected=False, group_mass=1.0, member_count=1):
    key = np.asarray(key, dtype=np.float64)
    if value is None:
        value = key.copy()
    return KVEntry(key=key, value=np.asarray(value, dtype=np.float64),
                   position=position, origin=origin, score_mass=score_mass,
                   group_mass=group_mass, member_count=member_count,
                   protected=protected)


def fill_cache(keys, budget=10_000, origin=DECODE, score_masses=None):
    """Cache with one entry per key, positions 0..n-1."""
    cache = CacheState(budget=budget)
    for i, key in enumerate(keys):
        mass = 1.0 if score_masses is None else score_masses[i]
        append(cache, make_entry(i, key, origin=origin, score_mass=mass))
    return cache
