import pytest
from hypothesis import given, strategies as st

from alpharv import isa_codec as isa, stage1_gen as stage1
from alpharv.alpha_subset import CharsetVariant, is_charset_valid
from alpharv.rv_emu import DRAM_BASE, EmuState
from alpharv.stage1_gen import (FIX_BIG, FIX_SMALL, FixupUnsolvable, build_fixup, build_header, jump_word_data,
                            schedule_stores)

LIMIT = 64 * 1024


def _brute_fixups(limit):
    """Fewest addi for every reachable total, by direct enumeration of (n, m)."""
    best = {}
    n = 0
    while 448 * n <= limit + 16:
        for m in range(n + 1):
            total = FIX_BIG * (n - m) + FIX_SMALL * m
            best.setdefault(total, n)
        n += 1
    return best


def test_fixup_minimal_for_every_distance():
    best = _brute_fixups(LIMIT)
    for d in range(0, LIMIT + 1, 2):
        cands = [(best[d + s], s) for s in range(0, 17) if d + s in best]
        if not cands:
            with pytest.raises(FixupUnsolvable):
                build_fixup(d)
            continue
        n, s = min(cands)
        chain = build_fixup(d)
        assert (chain.n, chain.nopsled_len) == (n, s), d
        assert sum(chain.immediates) == chain.total_delta == d + s
        assert chain.nopsled_len <= 16


def test_fixup_unsolvable_gap():
    # 464 covers up to 480 with a sled; two addi start at 896
    with pytest.raises(FixupUnsolvable):
        build_fixup(600)
    assert build_fixup(464 * 30).n == 30


@pytest.mark.parametrize("variant", ["hash", "slash", "tick"])
def test_fixup_chain_executes(variant):
    chain = build_fixup(5000)
    code = stage1.assemble(chain.ops(variant))
    assert is_charset_valid(code, CharsetVariant.parse(variant))
    st = EmuState.load(code + isa.asm("jal", rd=0, imm=0), mem_size=64, regs={"sp": 0x1000})
    st.run(100)
    assert st.x[2] == 0x1000 + chain.total_delta


def test_headers_match_reference_bytes():
    assert build_header("hash", 0).code == b"o#0#"
    h = build_header("hash", 10_000)
    assert h.target == 10802 and h.link_offset == 4
    s = build_header("slash", 10_000)
    assert s.code.startswith(b"ySyS") and s.link_offset % 8 == 0
    t = build_header("tick", 10_000, bare_metal=True)
    assert t.code[:6] == stage1.FPU_GADGET and t.link_offset == 10
    assert build_header("tick", 10_000).code == b"o'0'"


@pytest.mark.parametrize("variant", ["hash", "slash", "tick"])
def test_header_jal_lands_on_target(variant):
    h = build_header(variant, 12_345)
    assert h.target >= h.jal_offset + 4 + 12_345
    ins = isa.decode_bytes(h.code, h.jal_offset)
    assert ins.mnemonic == "jal" and ins["rd"] == h.link_reg
    assert h.jal_offset + ins["imm"] == h.target
    st = EmuState.load(h.code, mem_size=1 << 15)
    st.run(len(h.code) // 2, stop_at=DRAM_BASE + h.target)
    assert st.status == "stopped" and st.x[h.link_reg] == DRAM_BASE + h.link_offset


def test_header_out_of_range():
    with pytest.raises(stage1.NoValidJal):
        build_header("hash", 1 << 21)


@given(st.integers(1, 80), st.sampled_from([2, 6]))
def test_schedule_stores_covers_consecutive_bytes(count, stride):
    offs = [o for base in range(608, 1984, 32) for o in range(base, base + 20, 2)]
    b0, plan = schedule_stores(count, stride, offs, 1920)
    sp, addrs = 0, []
    for kind, v in plan:
        if kind == "inc":
            sp += 16
        else:
            assert v in offs
            addrs.append(sp + v)
    assert addrs == [b0 + stride * i for i in range(count)]


def test_jump_word():
    w1, w2 = jump_word_data()
    assert is_charset_valid(w1 + w2, CharsetVariant.ALNUM)
    v = int.from_bytes(w1, "little") & int.from_bytes(w2, "little")
    assert (v >> stage1.JUMP_WORD_SHIFT >> 32) & 0xFFFF == 0xA031
    assert isa.render(isa.decode(0xA031, 16)) == "c.j 12"


def test_inventory_lookup():
    inv = stage1.inventory("hash")
    w = inv.need("c.addi16sp", imm=464)
    assert w.to_bytes(2, "little") == b"ya"
    assert inv.find("c.addi16sp", imm=8) is None
    with pytest.raises(LookupError):
        inv.need("amoor.d")


def test_sled_is_charset_nop():
    for v in ("hash", "slash", "tick"):
        assert stage1.assemble(stage1.sled_ops(v, 6)) == b"ySySyS"
