"""Counter-based random streams keyed by ``(seed, stream)``.

Block ``t`` owns a fixed window of ``width`` uniforms in a Philox stream, so
one block can be regenerated on its own and a range of blocks can be drawn in
a single call with identical values. ``width`` must be a multiple of 4:
Philox4x64 emits four 64-bit words per counter increment.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _philox(seed: int, stream: int, counter: int) -> np.random.Generator:
    key = np.array([seed & _MASK, stream & _MASK], dtype=np.uint64)
    ctr = np.array([counter & _MASK, 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=ctr))


def round_width(n: int) -> int:
    return max(4, -(-n // 4) * 4)


def block_uniforms(seed: int, stream: int, t: int, width: int) -> np.ndarray:
    """Uniforms in [0, 1) reserved for block ``t``."""
    return block_uniforms_range(seed, stream, t, 1, width)[0]


def block_uniforms_range(seed: int, stream: int, t0: int, count: int, width: int) -> np.ndarray:
    """Uniform windows for blocks ``t0 .. t0 + count - 1`` as a ``(count, width)`` array."""
    if width % 4:
        raise ValueError("width must be a multiple of 4")
    if t0 < 0 or count < 0:
        raise ValueError("block index and count must be nonnegative")
    gen = _philox(seed, stream, t0 * (width // 4))
    return gen.random(count * width).reshape(count, width)


def substream(seed: int, *labels: int) -> int:
    """Derive an independent 64-bit seed from ``seed`` and integer labels."""
    return int(np.random.SeedSequence([seed & _MASK, *labels]).generate_state(1, dtype=np.uint64)[0])
