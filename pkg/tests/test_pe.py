from __future__ import annotations

import hashlib
import random
import struct

import pefile
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evasionkit.pe import (
    MalformedHeader,
    OversizeInput,
    PeFormatError,
    PeSpec,
    SampleGroup,
    SectionSpec,
    build_pe,
    group_samples,
    normalized_text,
    packedness_flag,
    parse_pe,
    shannon_entropy,
)
from evasionkit.pe.parser import PeImage

from fuzz import check_parse_total, mutate
from oracles import histogram_entropy

RICH_SPEC = PeSpec(
    text=b"\x55\x8b\xec" + bytes(range(200)) + b"\x5d\xc3",
    rdata=b"IsDebuggerPresent\x00hello\x00",
    imports=[
        ("kernel32.dll", ["IsDebuggerPresent", "GetProcAddress", 17]),
        ("iphlpapi.dll", ["GetAdaptersInfo"]),
    ],
    resources=3,
    certificate=b"\x30\x82" + b"\x11" * 18,
)


def pefile_imports(data: bytes) -> list[tuple[str, list[str]]]:
    pe = pefile.PE(data=data)
    out = []
    for entry in getattr(pe, "DIRECTORY_ENTRY_IMPORT", []):
        names = [
            imp.name.decode() if imp.name is not None else f"#{imp.ordinal}" for imp in entry.imports
        ]
        out.append((entry.dll.decode(), names))
    return out


# headers and errors


@pytest.mark.parametrize("data", [b"", b"M", b"ZM" + b"\x00" * 100, b"\x7fELF" + b"\x00" * 100])
def test_missing_mz(data):
    with pytest.raises(MalformedHeader):
        parse_pe(data)


def test_missing_pe_signature(minimal_pe):
    data = bytearray(minimal_pe)
    data[0x80:0x84] = b"NE\x00\x00"
    with pytest.raises(MalformedHeader):
        parse_pe(bytes(data))


def test_e_lfanew_out_of_bounds(minimal_pe):
    data = bytearray(minimal_pe)
    struct.pack_into("<I", data, 0x3C, 0xFFFFFFF0)
    with pytest.raises(MalformedHeader):
        parse_pe(bytes(data))


@pytest.mark.parametrize("cut", [0x3E, 0x84, 0x90, 0xA0, 0x178, 0x1A0])
def test_truncated_headers(minimal_pe, cut):
    with pytest.raises(MalformedHeader):
        parse_pe(minimal_pe[:cut])


def test_bad_optional_magic(minimal_pe):
    data = bytearray(minimal_pe)
    struct.pack_into("<H", data, 0x98, 0x1234)
    with pytest.raises(MalformedHeader):
        parse_pe(bytes(data))


def test_oversize_input():
    with pytest.raises(OversizeInput):
        parse_pe(b"MZ" + b"\x00" * 200, max_size=100)
    assert issubclass(OversizeInput, PeFormatError)


# import table, checked against an independent dumper


def test_minimal_fixture_imports(minimal_pe):
    img = parse_pe(minimal_pe)
    assert [(i.dll, list(i.functions)) for i in img.imports] == [("kernel32.dll", ["IsDebuggerPresent"])]
    assert pefile_imports(minimal_pe) == [("kernel32.dll", ["IsDebuggerPresent"])]


@pytest.mark.parametrize("pe32plus", [False, True])
def test_rich_fixture_matches_pefile(pe32plus):
    spec = PeSpec(**{**RICH_SPEC.__dict__, "pe32plus": pe32plus})
    data = build_pe(spec)
    img = parse_pe(data)
    ref = pefile.PE(data=data)
    assert img.is_pe32plus == pe32plus
    assert img.machine == ref.FILE_HEADER.Machine
    assert [(i.dll, list(i.functions)) for i in img.imports] == pefile_imports(data)
    assert img.imports_function("KERNEL32.DLL", "IsDebuggerPresent")
    ref_sections = [
        (s.Name.rstrip(b"\x00").decode(), s.PointerToRawData, s.SizeOfRawData, s.VirtualAddress)
        for s in ref.sections
    ]
    assert [(s.name, s.raw_offset, s.raw_size, s.virtual_address) for s in img.sections] == ref_sections
    sec_dir = ref.OPTIONAL_HEADER.DATA_DIRECTORY[4]
    assert img.has_certificate_table == (sec_dir.VirtualAddress != 0 and sec_dir.Size != 0)
    assert img.has_certificate_table
    assert img.resource_entry_count == len(ref.DIRECTORY_ENTRY_RESOURCE.entries) == 3


def test_ordinal_import_name():
    data = build_pe(PeSpec(imports=[("ws2_32.dll", [23, "connect"])]))
    assert parse_pe(data).imports[0].functions == ("#23", "connect")


def test_import_rva_outside_sections_is_skipped(minimal_pe):
    img = parse_pe(minimal_pe)
    data = bytearray(minimal_pe)
    # point the import directory far outside any mapped section
    struct.pack_into("<I", data, 0x98 + 96 + 8, 0x7FFF0000)
    assert parse_pe(bytes(data)).imports == ()
    assert img.imports


def test_section_ranges_clamped_to_file(minimal_pe):
    data = bytearray(minimal_pe)
    table = 0x98 + 224
    struct.pack_into("<I", data, table + 16, 0x100000)
    img = parse_pe(bytes(data))
    for s in img.sections:
        assert 0 <= s.raw_offset <= len(data)
        assert s.raw_offset + s.raw_size <= len(data)


# signedness


def test_no_security_directory_means_unsigned(minimal_pe):
    assert parse_pe(minimal_pe).has_certificate_table is False


def test_zero_sized_security_directory_is_unsigned():
    data = bytearray(build_pe(PeSpec(certificate=b"x" * 16)))
    assert parse_pe(bytes(data)).has_certificate_table
    struct.pack_into("<I", data, 0x98 + 96 + 4 * 8 + 4, 0)
    assert not parse_pe(bytes(data)).has_certificate_table


@settings(max_examples=50, deadline=None)
@given(st.booleans(), st.binary(max_size=2048))
def test_signedness_stable_under_append(signed, tail):
    data = build_pe(PeSpec(certificate=b"sig" * 8 if signed else None))
    assert parse_pe(data + tail).has_certificate_table == signed


# entropy


def test_entropy_constant_and_uniform():
    assert shannon_entropy(b"\x00" * 256) == 0.0
    assert shannon_entropy(bytes(range(256))) == 8.0
    assert shannon_entropy(b"") == 0.0


def test_entropy_matches_histogram_oracle():
    rng = random.Random(1234)
    for _ in range(20):
        buf = rng.randbytes(4096)
        assert abs(shannon_entropy(buf) - histogram_entropy(buf)) <= 1e-9
    skewed = bytes(rng.choice(b"aaaabbc\x00") for _ in range(4096))
    assert abs(shannon_entropy(skewed) - histogram_entropy(skewed)) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=4096), st.randoms())
def test_entropy_bounds_and_permutation_invariance(data, rnd):
    h = shannon_entropy(data)
    assert 0.0 <= h <= 8.0
    shuffled = bytearray(data)
    rnd.shuffle(shuffled)
    assert abs(shannon_entropy(bytes(shuffled)) - h) <= 1e-12
    assert abs(h - histogram_entropy(data)) <= 1e-9


def _with_entropy(value: float) -> PeImage:
    return PeImage(0x14C, False, (), (), False, 0, value)


@pytest.mark.parametrize("value, expected", [(7.11, True), (6.58, True), (6.5, True), (6.49, False), (0.0, False)])
def test_packedness_default_threshold(value, expected):
    assert packedness_flag(_with_entropy(value)) is expected


def test_packedness_threshold_validated():
    with pytest.raises(ValueError):
        packedness_flag(_with_entropy(7.0), threshold=8.5)
    assert packedness_flag(_with_entropy(7.0), threshold=7.5) is False


def test_section_and_file_entropy_in_range():
    img = parse_pe(build_pe(RICH_SPEC))
    assert 0.0 <= img.file_entropy <= 8.0
    assert all(0.0 <= s.entropy <= 8.0 for s in img.sections)


# grouping


def _sample(text: bytes, **kw) -> tuple[str, PeImage, bytes]:
    data = build_pe(PeSpec(text=text, **kw))
    return hashlib.md5(data).hexdigest(), parse_pe(data), data


def test_identical_text_groups_together():
    a = _sample(b"\x90\xc3", rdata=b"one")
    b = _sample(b"\x90\xc3", rdata=b"two")
    c = _sample(b"\xcc\xc3")
    groups = group_samples([a, b, c])
    assert [g.size for g in groups] == [2, 1]
    assert groups[0].members == (a[0], b[0])


def test_trailing_zero_padding_ignored():
    a = _sample(b"\x90\xc3")
    b = _sample(b"\x90\xc3\x00\x00\x00\x00")
    assert normalized_text(a[1], a[2]) == b"\x90\xc3"
    assert len(group_samples([a, b])) == 1


def test_group_empty_input():
    assert group_samples([]) == []


def test_missing_text_section_is_singleton():
    sid, img, data = _sample(b"\x90")
    no_text = PeImage(img.machine, False, (), (), False, 0, 0.0)
    groups = group_samples([("x", no_text, data), ("y", no_text, data), ("z", None, b"")])
    assert [g.key for g in groups] == ["no-text:x", "no-text:y", "no-text:z"]


def test_group_order_size_then_key():
    samples = [_sample(bytes([i, 0xC3]), rdata=bytes([j + 1])) for i, n in ((1, 1), (2, 3), (3, 2)) for j in range(n)]
    groups = group_samples(samples)
    assert [g.size for g in groups] == [3, 2, 1]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=20))
def test_grouping_is_partition(codes):
    samples = [
        (f"s{i}", img, data)
        for i, code in enumerate(codes)
        for _, img, data in [_sample(bytes([0x90 + code, 0xC3]))]
    ]
    groups = group_samples(samples)
    members = [m for g in groups for m in g.members]
    assert sorted(members) == sorted(s[0] for s in samples)
    assert sum(g.size for g in groups) == len(samples)
    for g in groups:
        digests = {hashlib.sha256(normalized_text(img, data)).hexdigest() for sid, img, data in samples if sid in g.members}
        assert digests == {g.key}
    sizes = [(-g.size, g.key) for g in groups]
    assert sizes == sorted(sizes)


def test_corpus_selected_groups(corpus):
    selected = [s for s in corpus if s.selected]
    groups = group_samples([(s.md5, parse_pe(s.data), s.data) for s in selected])
    assert [g.size for g in groups] == [7, 6, 1, 1, 1, 1, 1]
    assert isinstance(groups[0], SampleGroup)


# robustness


def test_fuzz_smoke(minimal_pe):
    rng = random.Random(99)
    seeds = [minimal_pe, build_pe(RICH_SPEC), build_pe(PeSpec(**{**RICH_SPEC.__dict__, "pe32plus": True}))]
    for _ in range(3000):
        check_parse_total(mutate(rng, rng.choice(seeds)))


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=1024))
def test_arbitrary_bytes_never_crash(tail):
    check_parse_total(tail)
    check_parse_total(b"MZ" + tail)


def test_extra_sections_parsed():
    data = build_pe(PeSpec(extra_sections=[SectionSpec(".data", b"\x01" * 100)]))
    assert [s.name for s in parse_pe(data).sections] == [".text", ".data"]


def test_to_dict_is_json_ready(minimal_pe):
    import json

    doc = parse_pe(minimal_pe).to_dict()
    assert json.loads(json.dumps(doc)) == doc
