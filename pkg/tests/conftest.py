"""Shared fixtures and fuzz generators for the test suite."""

import numpy as np
import pytest

from leaklab.machine import CollectorPolicy
from leaklab.trace import (
    CiphertextDiff,
    CodeFetch,
    CounterSnapshot,
    DataAccess,
    Marker,
    Trace,
)


def random_trace(rng: np.random.Generator, max_events: int = 60,
                 channels=("page", "cache", "cipher", "pmc")) -> Trace:
    """Structurally valid random trace: balanced markers, in-range fields."""
    channels = frozenset(channels)
    n = int(rng.integers(0, max_events + 1))
    events = []
    inside = False
    # keep page numbers small-ish so collisions exercise dedup code paths
    pages = rng.integers(0, 50, size=8).tolist() + [0, 1, (1 << 40) - 1]
    for _ in range(n):
        kind = rng.integers(0, 6)
        if kind == 0:
            events.append(CodeFetch(int(rng.choice(pages))))
        elif kind == 1:
            if rng.random() < 0.3 or "cache" not in channels:
                events.append(DataAccess(int(rng.choice(pages))))
            else:
                k = int(rng.integers(1, 6))
                lines = frozenset(int(x) for x in rng.integers(0, 64, size=k))
                events.append(DataAccess(int(rng.choice(pages)), lines))
        elif kind == 2:
            before = bytes(rng.integers(0, 256, size=16, dtype=np.uint8))
            after = bytearray(before)
            after[int(rng.integers(0, 16))] ^= 0xFF
            events.append(CiphertextDiff(int(rng.choice(pages)),
                                         int(rng.integers(0, 256)),
                                         before, bytes(after)))
        elif kind == 3:
            events.append(CounterSnapshot(tuple(
                int(x) for x in rng.integers(0, 1000, size=5))))
        else:
            events.append(Marker("STOP" if inside else "START"))
            inside = not inside
    if inside:
        events.append(Marker("STOP"))
    return Trace(seed=int(rng.integers(0, 2**64, dtype=np.uint64)),
                 channels=channels, events=tuple(events))


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)


@pytest.fixture
def full_policy():
    return CollectorPolicy(channels=frozenset(["page", "cache", "cipher", "pmc"]),
                           targeted=False)


@pytest.fixture
def targeted_policy():
    return CollectorPolicy(channels=frozenset(["page", "cache", "cipher", "pmc"]),
                           targeted=True)
