"""Seed derivation. Every random stream is a pure function of integer keys, so results
never depend on scheduling order or worker count."""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

SEED_ENV_VAR = "QUERY_HEDGE_SEED"
DEFAULT_SEED = 20240917

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional spawn key."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.PCG64(ss))


class RunStreams:
    """Per-run PCG64 streams keyed by a hash of (master_seed, k, run_index).

    One bit generator is reused and re-keyed for every run, which is much
    cheaper than building a fresh generator per run. The returned generator is
    only valid until the next :meth:`reset`.
    """

    def __init__(self) -> None:
        self._bitgen = np.random.PCG64(0)
        self._gen = np.random.Generator(self._bitgen)

    def reset(self, master_seed: int, k: int, run_index: int) -> np.random.Generator:
        digest = hashlib.blake2b(
            struct.pack("<QQQ", int(master_seed) & _MASK64, int(k) & _MASK64, int(run_index) & _MASK64),
            digest_size=32,
            person=b"query-hedge-run",
        ).digest()
        self._bitgen.state = {
            "bit_generator": "PCG64",
            "state": {
                "state": int.from_bytes(digest[:16], "little"),
                "inc": int.from_bytes(digest[16:], "little") | 1,
            },
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen


def run_rng(master_seed: int, k: int, run_index: int) -> np.random.Generator:
    """A fresh generator for run ``run_index`` at budget ``k``."""
    return RunStreams().reset(master_seed, k, run_index)


def child_seed(seed: int, *key: int) -> int:
    """Deterministic 64-bit seed derived from ``seed`` and ``key``."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(x) for x in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def resolve_seed(explicit: int | None = None, default: int = DEFAULT_SEED) -> int:
    """Explicit seed, else ``$QUERY_HEDGE_SEED``, else ``default``."""
    if explicit is not None:
        return int(explicit)
    env = os.environ.get(SEED_ENV_VAR)
    if env:
        return int(env, 0)
    return default
