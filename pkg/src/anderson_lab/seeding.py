"""Per-realization seeds derived from a master seed by 64-bit mixing."""

from __future__ import annotations

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def realization_seed(master_seed: int, index: int) -> int:
    """Seed of realization ``index``; independent of scheduling order."""
    return splitmix64(splitmix64(master_seed & _MASK) ^ (index & _MASK))


def substream(master_seed: int, label: str) -> int:
    """Master seed for a named auxiliary stream (e.g. the gamma(E) curve)."""
    h = master_seed & _MASK
    for ch in label.encode():
        h = splitmix64(h ^ ch)
    return h
