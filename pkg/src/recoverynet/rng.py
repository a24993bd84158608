"""Counter-based uniforms: each (seed, node, day) maps to one fixed draw.

The draw is a pure function of its key, so results do not depend on how nodes
are split across workers or on the order in which they are visited.  The
mixer is the SplitMix64 finalizer applied once per key component.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_TO_UNIT = 2.0**-53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def uniforms(seed: int, nodes, day: int) -> np.ndarray:
    """Uniform draws in [0, 1) for every node index in ``nodes`` on ``day``."""
    nodes = np.asarray(nodes, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _mix(np.uint64(check_seed(seed)) + _GOLDEN)
        k = _mix(k ^ (np.uint64(int(day) & _MASK64) + _GOLDEN * np.uint64(2)))
        z = _mix(k ^ (nodes + _GOLDEN * np.uint64(3)))
    return (z >> np.uint64(11)).astype(np.float64) * _TO_UNIT


def uniform(seed: int, node: int, day: int) -> float:
    return float(uniforms(seed, np.array([node]), day)[0])
