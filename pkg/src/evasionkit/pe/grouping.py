"""Group samples that carry the same code section."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

from .parser import PeImage

TEXT_SECTION = ".text"


@dataclass(frozen=True)
class SampleGroup:
    key: str
    members: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.members)


def normalized_text(img: PeImage, data: bytes) -> bytes | None:
    """Raw ``.text`` bytes with trailing zero padding removed, or None."""
    body = img.section_bytes(data, TEXT_SECTION)
    if body is None:
        return None
    return body.rstrip(b"\x00")


def text_digest(img: PeImage, data: bytes) -> str | None:
    body = normalized_text(img, data)
    if body is None:
        return None
    return hashlib.sha256(body).hexdigest()


def group_samples(samples: Sequence[tuple[str, PeImage | None, bytes]]) -> list[SampleGroup]:
    """Partition samples by normalized text-section digest.

    Samples without a ``.text`` section (or without a parsed image) each get
    a singleton group keyed ``no-text:<id>``. Groups come out largest first,
    then by key; members keep input order.
    """
    buckets: dict[str, list[str]] = {}
    for sample_id, img, data in samples:
        digest = text_digest(img, data) if img is not None else None
        key = digest or f"no-text:{sample_id}"
        buckets.setdefault(key, []).append(sample_id)
    groups = [SampleGroup(key, tuple(members)) for key, members in buckets.items()]
    groups.sort(key=lambda g: (-g.size, g.key))
    return groups
