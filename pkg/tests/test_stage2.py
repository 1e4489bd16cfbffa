import itertools

import pytest
from hypothesis import given, strategies as st

from alpharv import isa_codec as isa
from alpharv.alpha_subset import ALNUM_BYTES
from alpharv.rv_emu import DRAM_BASE, EmuState
from alpharv.stage2 import (MAX_PAYLOAD, PayloadTooLarge, RegisterConflict, Stage2Params, Stage2Regs,
                            build_stage2, decode_pair, decode_payload, encode_byte, encode_payload,
                            polymorph_at, polymorph_count, polymorphs, register_assignments,
                            register_count)


def test_codec_total_and_alphanumeric():
    for a in range(256):
        k, l = encode_byte(a)
        assert k in ALNUM_BYTES and l in ALNUM_BYTES
        assert decode_pair(k, l) == a


def test_closed_form_used_where_it_fits():
    from alpharv.stage2 import _closed_form

    used = 0
    for a in range(256):
        k, l = _closed_form(a)
        if k in ALNUM_BYTES and l in ALNUM_BYTES:
            assert encode_byte(a) == (k, l)
            used += 1
    assert used > 200


@given(st.binary(min_size=0, max_size=MAX_PAYLOAD))
def test_payload_roundtrip(p):
    enc = encode_payload(p)
    assert len(enc) == 2 * len(p)
    assert all(b in ALNUM_BYTES for b in enc)
    assert decode_payload(enc) == p


def test_payload_limit():
    with pytest.raises(PayloadTooLarge):
        encode_payload(bytes(MAX_PAYLOAD + 1))


def test_hash_stage2_is_40_bytes():
    prog = build_stage2("hash", Stage2Params(100))
    assert len(prog.serialize()) == 40


def test_compressed_stage2_sizes():
    tick = build_stage2("tick", Stage2Params(512))
    assert len(tick.serialize()) == 40    # 7 equations of 6 bytes, the last one padded
    slash = build_stage2("slash", Stage2Params(64))
    assert len(slash.serialize()) == 16 * len(slash.items)


def test_counter_form():
    v, s = Stage2Params(512).counter()
    assert v << s == 512
    assert Stage2Params(12).counter() == (6, 1)
    for n in range(1, 513):
        v, s = Stage2Params(n).counter()
        assert v << s >= n and v <= 31 and s >= 1


def test_register_checks():
    with pytest.raises(RegisterConflict):
        build_stage2("hash", Stage2Params(10), Stage2Regs(XP=8, XQ=8))
    with pytest.raises(RegisterConflict):
        build_stage2("hash", Stage2Params(10), Stage2Regs(XP=2))
    with pytest.raises(RegisterConflict):
        build_stage2("tick", Stage2Params(10), Stage2Regs(XE=20))


def _emulate(variant, payload, page=-1, regs=None, order=(0, 1, 2), inc=3):
    """Stage 2 alone at offset 0x4000 with sp chosen so XQ lands at 0x1000."""
    prog = build_stage2(variant, Stage2Params(len(payload), page=page), regs, order, inc)
    code = prog.serialize()
    mem = bytearray(0x6000)
    sp = 0x1000 - 4096 * page
    xq = 0x1000
    padded = payload + bytes(prog.decoded_len - len(payload))
    enc = encode_payload(padded, 1 << 12)
    mem[xq + 4:xq + 4 + len(enc)] = enc
    mem[0x4000:0x4000 + len(code)] = code
    st = EmuState.load(bytes(mem), mem_size=len(mem), regs={"sp": DRAM_BASE + sp})
    st.pc = DRAM_BASE + 0x4000
    st.run(100_000, stop_at=DRAM_BASE + xq)
    return st, prog


@pytest.mark.parametrize("variant", ["hash", "slash", "tick"])
@pytest.mark.parametrize("n", [1, 7, 100, 512])
def test_stage2_decodes_in_place(variant, n):
    payload = bytes((i * 37 + 11) & 0xFF for i in range(n))
    st, prog = _emulate(variant, payload)
    assert st.status == "stopped"
    assert st.bytes_at(DRAM_BASE + 0x1000, n) == payload


def test_stage2_page_two():
    payload = bytes(range(200))
    st, _ = _emulate("hash", payload, page=-2)
    assert st.status == "stopped" and st.bytes_at(DRAM_BASE + 0x1000, 200) == payload


def test_polymorph_counts():
    assert register_count(True) == 6720 * 25
    assert polymorph_count(True) == 7_056_000
    assert polymorph_count(False) == 39_312_000
    assert sum(1 for _ in itertools.islice(register_assignments(True), 10_000)) == 10_000


def _reference_stream(template):
    """Template first, then every (regs, order, inc) in product order, skipping
    the template's own descriptor."""
    yield template
    n_inc = 7 if template.compressed else 6
    orders = list(itertools.permutations(range(3)))
    for regs in register_assignments(template.compressed):
        for order in orders:
            for inc in range(1, n_inc + 1):
                if (regs, order, inc) == (template.regs.as_tuple(), template.order, template.inc_pos):
                    continue
                yield build_stage2(template.variant, template.params, Stage2Regs(*regs), order, inc)


@pytest.mark.parametrize("variant", ["hash", "tick"])
def test_polymorph_random_access_matches_stream(variant):
    tmpl = build_stage2(variant, Stage2Params(64))
    ref = _reference_stream(tmpl)
    for i, (a, b) in enumerate(zip(ref, polymorphs(tmpl))):
        assert a.serialize() == b.serialize(), i
        if i == 3000:
            break
    for i in (0, 1, 41, 999, 123_456):
        assert polymorph_at(tmpl, i).serialize() == next(polymorphs(tmpl, i)).serialize()


def test_polymorphs_are_equivalent():
    tmpl = build_stage2("tick", Stage2Params(32))
    payload = bytes(range(0x80, 0xA0))
    for idx in (5, 777, 50_000, 6_000_000):
        p = polymorph_at(tmpl, idx)
        st, _ = _emulate("tick", payload, regs=p.regs, order=p.order, inc=p.inc_pos)
        assert st.bytes_at(DRAM_BASE + 0x1000, 32) == payload


def test_listing_mentions_fence():
    prog = build_stage2("hash", Stage2Params(10))
    assert prog.listing().count("fence.i") == 2
