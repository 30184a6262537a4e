"""Assemble small, well-formed PE images field by field.

Used to produce the synthetic triage corpus and test fixtures. The output
loads in standard PE tooling: headers, section table, an import directory
with ILT/IAT/hint-name tables, an optional resource directory and an
optional certificate table appended after the last section.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

FILE_ALIGNMENT = 0x200
SECTION_ALIGNMENT = 0x1000
HEADERS_SIZE = 0x400

MACHINE_I386 = 0x14C
MACHINE_AMD64 = 0x8664

SCN_CODE = 0x60000020
SCN_RDATA = 0x40000040
SCN_DATA = 0xC0000040


def _align(value: int, to: int) -> int:
    return (value + to - 1) // to * to


@dataclass
class SectionSpec:
    name: str
    data: bytes
    characteristics: int = SCN_RDATA


@dataclass
class PeSpec:
    text: bytes = b"\xc3"
    rdata: bytes = b""
    imports: list[tuple[str, list[str | int]]] = field(default_factory=list)
    resources: int = 0
    certificate: bytes | None = None
    extra_sections: list[SectionSpec] = field(default_factory=list)
    pe32plus: bool = False
    timestamp: int = 0
    overlay: bytes = b""


def _build_idata(base: int, imports: list[tuple[str, list[str | int]]], pe32plus: bool) -> bytes:
    thunk_size = 8 if pe32plus else 4
    thunk_fmt = "<Q" if pe32plus else "<I"
    ordinal_flag = 1 << 63 if pe32plus else 1 << 31

    pos = (len(imports) + 1) * 20
    tables = []
    for _, funcs in imports:
        ilt = pos
        pos += (len(funcs) + 1) * thunk_size
        iat = pos
        pos += (len(funcs) + 1) * thunk_size
        tables.append((ilt, iat))
    hint_names: list[list[int | None]] = []
    blob = bytearray()
    for _, funcs in imports:
        entries: list[int | None] = []
        for fn in funcs:
            if isinstance(fn, int):
                entries.append(None)
                continue
            entries.append(pos + len(blob))
            entry = struct.pack("<H", 0) + fn.encode("ascii") + b"\x00"
            if len(entry) % 2:
                entry += b"\x00"
            blob += entry
        hint_names.append(entries)
    name_offsets = []
    for dll, _ in imports:
        name_offsets.append(pos + len(blob))
        blob += dll.encode("ascii") + b"\x00"

    out = bytearray()
    for (ilt, iat), name_off in zip(tables, name_offsets):
        out += struct.pack("<IIIII", base + ilt, 0, 0, base + name_off, base + iat)
    out += b"\x00" * 20
    for (_, funcs), entries in zip(imports, hint_names):
        thunks = bytearray()
        for fn, entry in zip(funcs, entries):
            value = (fn | ordinal_flag) if entry is None else base + entry
            thunks += struct.pack(thunk_fmt, value)
        thunks += b"\x00" * thunk_size
        out += thunks + thunks  # ILT and IAT start identical
    out += blob
    return bytes(out)


def _build_rsrc(base: int, count: int) -> bytes:
    # root directory, then one data entry and a tiny MZ blob per resource
    header = struct.pack("<IIHHHH", 0, 0, 4, 0, 0, count)
    entries_at = 16
    data_entries_at = entries_at + 8 * count
    blobs_at = data_entries_at + 16 * count
    blob = b"MZ" + b"\x90" * 14
    entries = bytearray()
    data_entries = bytearray()
    blobs = bytearray()
    for i in range(count):
        entries += struct.pack("<II", 10, data_entries_at + 16 * i)
        data_entries += struct.pack("<IIII", base + blobs_at + len(blobs), len(blob), 0, 0)
        blobs += blob
    return header + bytes(entries) + bytes(data_entries) + bytes(blobs)


def build_pe(spec: PeSpec | None = None, **kwargs) -> bytes:
    """Build a PE image from ``spec`` (or keyword fields of :class:`PeSpec`)."""
    spec = spec or PeSpec(**kwargs)
    layout: list[tuple[str, int, object]] = [(".text", SCN_CODE, spec.text)]
    if spec.rdata:
        layout.append((".rdata", SCN_RDATA, spec.rdata))
    if spec.imports:
        layout.append((".idata", SCN_DATA, "idata"))
    if spec.resources:
        layout.append((".rsrc", SCN_RDATA, "rsrc"))
    for extra in spec.extra_sections:
        layout.append((extra.name, extra.characteristics, extra.data))

    n = len(layout)
    opt_size = 240 if spec.pe32plus else 224
    if 0x80 + 24 + opt_size + 40 * n > HEADERS_SIZE:
        raise ValueError("too many sections for the fixed header size")

    va = SECTION_ALIGNMENT
    raw = HEADERS_SIZE
    placed = []
    directories = [(0, 0)] * 16
    for name, chars, payload in layout:
        if payload == "idata":
            body = _build_idata(va, spec.imports, spec.pe32plus)
            directories[1] = (va, (len(spec.imports) + 1) * 20)
        elif payload == "rsrc":
            body = _build_rsrc(va, spec.resources)
            directories[2] = (va, len(body))
        else:
            body = bytes(payload)
        raw_size = _align(len(body), FILE_ALIGNMENT) if body else 0
        placed.append((name, chars, body, va, raw, raw_size))
        va += _align(max(len(body), 1), SECTION_ALIGNMENT)
        raw += raw_size
    size_of_image = va

    image = bytearray(HEADERS_SIZE)
    for _, _, body, _, raw_ptr, raw_size in placed:
        image += body + b"\x00" * (raw_size - len(body))
    image += spec.overlay
    if spec.certificate is not None:
        while len(image) % 8:
            image += b"\x00"
        cert = struct.pack("<IHH", 8 + len(spec.certificate), 0x0200, 0x0002) + spec.certificate
        directories[4] = (len(image), len(cert))
        image += cert

    # DOS header: magic, e_lfanew, plus a stub so the header region is not all zeros
    image[0:2] = b"MZ"
    struct.pack_into("<I", image, 0x3C, 0x80)
    image[0x40:0x40 + 39] = b"This program cannot be run in DOS mode."

    pe = 0x80
    image[pe:pe + 4] = b"PE\x00\x00"
    machine = MACHINE_AMD64 if spec.pe32plus else MACHINE_I386
    characteristics = 0x0022 if spec.pe32plus else 0x0102
    struct.pack_into("<HHIIIHH", image, pe + 4, machine, n, spec.timestamp, 0, 0, opt_size, characteristics)

    opt = pe + 24
    text_va = placed[0][3]
    code_size = placed[0][5]
    if spec.pe32plus:
        struct.pack_into("<HBBIIIII", image, opt, 0x20B, 14, 0, code_size, 0, 0, text_va, text_va)
        struct.pack_into("<Q", image, opt + 24, 0x140000000)
        dirs_at, count_at = 112, 108
        struct.pack_into("<QQQQ", image, opt + 72, 0x100000, 0x1000, 0x100000, 0x1000)
    else:
        struct.pack_into(
            "<HBBIIIIIII", image, opt, 0x10B, 14, 0, code_size, 0, 0, text_va, text_va, 0, 0x400000
        )
        dirs_at, count_at = 96, 92
        struct.pack_into("<IIII", image, opt + 72, 0x100000, 0x1000, 0x100000, 0x1000)
    struct.pack_into("<II", image, opt + 32, SECTION_ALIGNMENT, FILE_ALIGNMENT)
    struct.pack_into("<HHHHHH", image, opt + 40, 6, 0, 0, 0, 6, 0)
    struct.pack_into("<III", image, opt + 56, size_of_image, HEADERS_SIZE, 0)
    struct.pack_into("<HH", image, opt + 68, 3, 0x8140)
    struct.pack_into("<I", image, opt + count_at, 16)
    for i, (d_va, d_size) in enumerate(directories):
        struct.pack_into("<II", image, opt + dirs_at + 8 * i, d_va, d_size)

    table = opt + opt_size
    for i, (name, chars, body, sec_va, raw_ptr, raw_size) in enumerate(placed):
        struct.pack_into(
            "<8sIIIIIIHHI",
            image,
            table + 40 * i,
            name.encode("ascii"),
            len(body),
            sec_va,
            raw_size,
            raw_ptr if raw_size else 0,
            0,
            0,
            0,
            0,
            chars,
        )
    return bytes(image)
