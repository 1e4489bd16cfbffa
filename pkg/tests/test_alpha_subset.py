import random

import pytest

from alpharv import isa_codec as isa
from alpharv.alpha_subset import (ALNUM_BYTES, CharsetVariant, Catalog, enumerate_catalog, get_catalog,
                           is_charset_valid, operand_summary, stats)


def test_charset_sizes():
    assert len(ALNUM_BYTES) == 62
    for v, extra in [("hash", b"#"), ("slash", b"/"), ("tick", b"'")]:
        cs = CharsetVariant.parse(v).bytes
        assert len(cs) == 63 and extra[0] in cs
    assert is_charset_valid(b"o#0#", CharsetVariant.HASH)
    assert not is_charset_valid(b"o#0#", CharsetVariant.ALNUM)


def test_lui_and_jal_counts_match_closed_form():
    # lui/jal: byte 0 is fixed ('7' / 'o', rd bit 0 clear), the other three bytes
    # are free; c.lui adds its 16-bit forms
    n16 = sum(1 for w in range(1 << 16)
              if (w & 0xFF) in ALNUM_BYTES and (w >> 8) in ALNUM_BYTES and w & 3 != 3
              and (i := isa.decode(w, 16)) is not None and i.mnemonic == "c.lui" and not i.hint)
    cat = get_catalog("alnum")
    assert cat.count("jal") == 62 ** 3
    assert cat.count("lui") == 62 ** 3 + n16 == 238_719


@pytest.mark.parametrize("variant,lui,jal,total", [
    ("alnum", 238_719, 238_328, 1_289_725),
    ("hash", 250_438, 250_047, 1_401_630),
    ("slash", 250_438, 250_047, 1_367_610),
    ("tick", 250_438, 250_047, 1_461_165),
])
def test_frozen_catalog_counts(variant, lui, jal, total):
    cat = get_catalog(variant)
    assert (cat.count("lui"), cat.count("jal"), len(cat)) == (lui, jal, total)


def test_variant_specific_groups():
    assert get_catalog("hash").count("sd") > 0 and get_catalog("alnum").count("sd") == 0
    assert get_catalog("slash").count("amoor.d") > 0 and get_catalog("hash").count("amoor.d") == 0
    assert get_catalog("tick").count("fsd") > 0


@pytest.mark.parametrize("variant", ["alnum", "hash"])
def test_compressed_words_exhaustive(variant):
    cs = CharsetVariant.parse(variant).bytes
    want = set()
    for w in range(1 << 16):
        if w & 3 != 3 and (w & 0xFF) in cs and (w >> 8) in cs and isa.decode(w, 16) is not None:
            want.add(w)
    got = {w for _, w in get_catalog(variant).all_words() if w & 3 != 3 and w < 1 << 16}
    assert got == want


def test_32bit_membership_sampled():
    cat = get_catalog("tick")
    members = {w for _, w in cat.all_words() if w & 3 == 3}
    cs = sorted(CharsetVariant.TICK.bytes)
    rng = random.Random(5)
    for _ in range(40_000):
        b = bytes(rng.choice(cs) for _ in range(4))
        w = int.from_bytes(b, "little")
        if w & 3 != 3:
            continue
        valid = w & 0x1F != 0x1F and isa.decode(w, 32) is not None
        assert (w in members) == valid, hex(w)


def test_catalog_words_are_closed():
    cat = get_catalog("slash")
    for name, w in list(cat.all_words())[::97]:
        width = 16 if w & 3 != 3 else 32
        assert is_charset_valid(w.to_bytes(width // 8, "little"), CharsetVariant.SLASH)
        assert isa.decode(w, width) is not None


def test_serialization_roundtrip(tmp_path):
    cat = enumerate_catalog("alnum")
    p = tmp_path / "c.bin"
    cat.save(p)
    back = Catalog.load(p)
    assert stats(back) == stats(cat)


def test_operand_summary_shift_registers():
    summ = operand_summary(get_catalog("alnum"), "sra")
    assert summ["rs2"] == ["s3", "s4", "s5", "s6", "s7"]
