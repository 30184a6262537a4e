"""Byte-level Shannon entropy and the packedness heuristic built on it."""

from __future__ import annotations

import numpy as np

DEFAULT_PACKED_THRESHOLD = 6.5


def shannon_entropy(data: bytes) -> float:
    """Entropy of the byte histogram in bits per byte; 0.0 for empty input."""
    n = len(data)
    if n == 0:
        return 0.0
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / n
    h = float(-(p * np.log2(p)).sum())
    if h <= 0.0:
        return 0.0
    return min(h, 8.0)


def packedness_flag(img, threshold: float = DEFAULT_PACKED_THRESHOLD) -> bool:
    """True when the whole-file entropy reaches ``threshold``.

    ``img`` is a :class:`~evasionkit.pe.PeImage` or anything with a
    ``file_entropy`` attribute.
    """
    if not 0.0 <= threshold <= 8.0:
        raise ValueError(f"threshold {threshold} outside [0, 8]")
    return img.file_entropy >= threshold
