"""Bounds-checked PE/COFF parser producing the static facts triage needs.

Walks DOS header, PE signature, COFF header, optional header (PE32 and
PE32+), data directories, section table and the import directory. Every
read goes through :class:`_View`, which refuses to look past the buffer, and
every table walk has an explicit iteration cap, so the parser terminates on
arbitrary input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .entropy import shannon_entropy

DEFAULT_MAX_SIZE = 256 * 1024 * 1024

PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

DIR_IMPORT = 1
DIR_RESOURCE = 2
DIR_SECURITY = 4

MAX_IMPORT_DESCRIPTORS = 4096
MAX_THUNKS_PER_DLL = 65536
MAX_NAME_LENGTH = 512


class PeFormatError(Exception):
    pass


class MalformedHeader(PeFormatError):
    pass


class OversizeInput(PeFormatError):
    pass


@dataclass(frozen=True)
class Section:
    name: str
    raw_offset: int
    raw_size: int
    virtual_address: int
    virtual_size: int
    characteristics: int
    entropy: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "raw_offset": self.raw_offset,
            "raw_size": self.raw_size,
            "virtual_address": self.virtual_address,
            "virtual_size": self.virtual_size,
            "characteristics": self.characteristics,
            "entropy": self.entropy,
        }


@dataclass(frozen=True)
class Import:
    dll: str
    functions: tuple[str, ...]


@dataclass(frozen=True)
class PeImage:
    machine: int
    is_pe32plus: bool
    sections: tuple[Section, ...]
    imports: tuple[Import, ...]
    has_certificate_table: bool
    resource_entry_count: int
    file_entropy: float
    size: int = field(default=0)

    def section(self, name: str) -> Section | None:
        for s in self.sections:
            if s.name == name:
                return s
        return None

    def section_bytes(self, data: bytes, name: str) -> bytes | None:
        s = self.section(name)
        if s is None:
            return None
        return bytes(data[s.raw_offset : s.raw_offset + s.raw_size])

    def imports_function(self, dll: str, function: str) -> bool:
        dll = dll.lower()
        return any(i.dll.lower() == dll and function in i.functions for i in self.imports)

    def to_dict(self) -> dict:
        return {
            "machine": self.machine,
            "pe32plus": self.is_pe32plus,
            "size": self.size,
            "sections": [s.to_dict() for s in self.sections],
            "imports": [{"dll": i.dll, "functions": list(i.functions)} for i in self.imports],
            "has_certificate_table": self.has_certificate_table,
            "resource_entry_count": self.resource_entry_count,
            "file_entropy": self.file_entropy,
        }


class _View:
    def __init__(self, data: bytes):
        self.data = data
        self.size = len(data)

    def has(self, offset: int, length: int) -> bool:
        return 0 <= offset and length >= 0 and offset + length <= self.size

    def unpack(self, fmt: str, offset: int, what: str) -> tuple:
        length = struct.calcsize(fmt)
        if not self.has(offset, length):
            raise MalformedHeader(f"truncated {what} at offset {offset:#x}")
        return struct.unpack_from(fmt, self.data, offset)

    def cstring(self, offset: int, limit: int) -> str | None:
        """NUL-terminated string starting at ``offset`` and ending before ``limit``."""
        if not 0 <= offset < min(limit, self.size):
            return None
        end = min(limit, self.size, offset + MAX_NAME_LENGTH)
        stop = self.data.find(b"\x00", offset, end)
        if stop < 0:
            return None
        return self.data[offset:stop].decode("latin-1")


@dataclass(frozen=True)
class _Mapped:
    va: int
    span: int
    raw_offset: int
    raw_size: int


def _rva_to_offset(mapped: list[_Mapped], rva: int) -> tuple[int, int] | None:
    """File offset of ``rva`` and the end of the raw data backing it."""
    for m in mapped:
        if m.va <= rva < m.va + m.span:
            delta = rva - m.va
            if delta < m.raw_size:
                return m.raw_offset + delta, m.raw_offset + m.raw_size
    return None


def _parse_imports(view: _View, mapped: list[_Mapped], rva: int, pe32plus: bool) -> list[Import]:
    loc = _rva_to_offset(mapped, rva)
    if loc is None:
        return []
    offset, _ = loc
    thunk_fmt, ordinal_flag = ("<Q", 1 << 63) if pe32plus else ("<I", 1 << 31)
    thunk_size = 8 if pe32plus else 4
    imports = []
    for index in range(MAX_IMPORT_DESCRIPTORS):
        desc_off = offset + index * 20
        if not view.has(desc_off, 20):
            break
        oft, _, _, name_rva, ft = struct.unpack_from("<IIIII", view.data, desc_off)
        if oft == 0 and name_rva == 0 and ft == 0:
            break
        name_loc = _rva_to_offset(mapped, name_rva)
        dll = view.cstring(*name_loc) if name_loc else None
        if not dll:
            continue
        thunk_loc = _rva_to_offset(mapped, oft or ft)
        functions: list[str] = []
        if thunk_loc is not None:
            t_off, t_end = thunk_loc
            for k in range(MAX_THUNKS_PER_DLL):
                pos = t_off + k * thunk_size
                if pos + thunk_size > t_end or not view.has(pos, thunk_size):
                    break
                (thunk,) = struct.unpack_from(thunk_fmt, view.data, pos)
                if thunk == 0:
                    break
                if thunk & ordinal_flag:
                    functions.append(f"#{thunk & 0xFFFF}")
                    continue
                hint_loc = _rva_to_offset(mapped, thunk & 0x7FFFFFFF)
                if hint_loc is None:
                    continue
                fn = view.cstring(hint_loc[0] + 2, hint_loc[1])
                if fn:
                    functions.append(fn)
        imports.append(Import(dll, tuple(functions)))
    return imports


def _count_resources(view: _View, mapped: list[_Mapped], rva: int) -> int:
    loc = _rva_to_offset(mapped, rva)
    if loc is None or not view.has(loc[0], 16) or loc[0] + 16 > loc[1]:
        return 0
    named, ids = struct.unpack_from("<HH", view.data, loc[0] + 12)
    return named + ids


def parse_pe(data: bytes, *, max_size: int = DEFAULT_MAX_SIZE) -> PeImage:
    if len(data) > max_size:
        raise OversizeInput(f"input of {len(data)} bytes exceeds cap of {max_size}")
    data = bytes(data)
    view = _View(data)
    if data[:2] != b"MZ":
        raise MalformedHeader("missing MZ signature")
    (e_lfanew,) = view.unpack("<I", 0x3C, "DOS header")
    if not view.has(e_lfanew, 4) or data[e_lfanew : e_lfanew + 4] != b"PE\x00\x00":
        raise MalformedHeader("missing PE signature")
    coff = e_lfanew + 4
    machine, n_sections, _, _, _, opt_size, _ = view.unpack("<HHIIIHH", coff, "COFF header")
    opt = coff + 20
    (magic,) = view.unpack("<H", opt, "optional header")
    if magic == PE32_MAGIC:
        pe32plus, rva_count_at, dirs_at = False, 92, 96
    elif magic == PE32PLUS_MAGIC:
        pe32plus, rva_count_at, dirs_at = True, 108, 112
    else:
        raise MalformedHeader(f"unknown optional header magic {magic:#x}")
    if opt_size < dirs_at:
        raise MalformedHeader("optional header too small")
    (rva_count,) = view.unpack("<I", opt + rva_count_at, "optional header")
    n_dirs = min(rva_count, 16, (opt_size - dirs_at) // 8)
    directories = [view.unpack("<II", opt + dirs_at + 8 * i, "data directory") for i in range(n_dirs)]
    directories += [(0, 0)] * (16 - n_dirs)

    table = opt + opt_size
    if not view.has(table, 40 * n_sections):
        raise MalformedHeader("truncated section table")
    sections = []
    mapped = []
    for i in range(n_sections):
        raw_name, vsize, va, raw_size, raw_ptr = struct.unpack_from("<8sIIII", data, table + 40 * i)
        (chars,) = struct.unpack_from("<I", data, table + 40 * i + 36)
        raw_offset = min(raw_ptr, len(data))
        raw_size = min(raw_size, len(data) - raw_offset)
        body = data[raw_offset : raw_offset + raw_size]
        name = raw_name.rstrip(b"\x00").decode("latin-1")
        sections.append(
            Section(name, raw_offset, raw_size, va, vsize, chars, shannon_entropy(body))
        )
        mapped.append(_Mapped(va, max(vsize, raw_size), raw_offset, raw_size))

    import_rva, import_size = directories[DIR_IMPORT]
    imports = _parse_imports(view, mapped, import_rva, pe32plus) if import_rva and import_size else []
    res_rva, res_size = directories[DIR_RESOURCE]
    resources = _count_resources(view, mapped, res_rva) if res_rva and res_size else 0
    sec_offset, sec_size = directories[DIR_SECURITY]

    return PeImage(
        machine=machine,
        is_pe32plus=pe32plus,
        sections=tuple(sections),
        imports=tuple(imports),
        has_certificate_table=sec_offset != 0 and sec_size != 0,
        resource_entry_count=resources,
        file_entropy=shannon_entropy(data),
        size=len(data),
    )
