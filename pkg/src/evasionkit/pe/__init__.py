"""Static PE facts: headers, sections, imports, signedness, entropy, code grouping."""

from .builder import PeSpec, SectionSpec, build_pe
from .entropy import DEFAULT_PACKED_THRESHOLD, packedness_flag, shannon_entropy
from .grouping import SampleGroup, group_samples, normalized_text, text_digest
from .parser import (
    DEFAULT_MAX_SIZE,
    Import,
    MalformedHeader,
    OversizeInput,
    PeFormatError,
    PeImage,
    Section,
    parse_pe,
)

__all__ = [
    "DEFAULT_MAX_SIZE",
    "DEFAULT_PACKED_THRESHOLD",
    "Import",
    "MalformedHeader",
    "OversizeInput",
    "PeFormatError",
    "PeImage",
    "PeSpec",
    "SampleGroup",
    "Section",
    "SectionSpec",
    "build_pe",
    "group_samples",
    "normalized_text",
    "packedness_flag",
    "parse_pe",
    "shannon_entropy",
    "text_digest",
]
