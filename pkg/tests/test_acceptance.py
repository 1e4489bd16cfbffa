"""Acceptance criteria 1-10.  Each test records one PASS/FAIL line, printed
again together at the end of the session.  Criteria that cannot be met fail
here rather than being skipped."""
import random
import time

import pytest

from alpharv import isa_codec as isa, linker, payloads, tickpin
from alpharv.alpha_subset import ALNUM_BYTES, CharsetVariant, enumerate_catalog, is_charset_valid
from alpharv.rv_emu import DRAM_BASE, EmuState
from alpharv.fp_solver import hit_rate, solve
from alpharv.load_table import build_table
from alpharv.stage1_gen import FIX_BIG, FIX_SMALL, FixupUnsolvable, build_fixup
from alpharv.stage2 import Stage2Params, build_stage2, decode_pair, encode_byte

from conftest import fixture_bytes
from test_load_table import _check_entry

RESULTS: dict[int, str] = {}
VARIANTS = ("hash", "slash", "tick")


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def fresh_tables():
    t0 = time.perf_counter()
    tables = {v: build_table(v) for v in ("hash", "slash")}
    return tables, time.perf_counter() - t0


def test_c01_catalog_lui_count():
    t0 = time.perf_counter()
    n = len(enumerate_catalog("alnum").groups["lui"])
    dt = time.perf_counter() - t0
    record(1, n == 238_791 and dt < 120, f"alnum lui encodings {n} (expected 238791), {dt:.1f}s")


def test_c02_validity_examples():
    seven = isa.decode_bytes(b"7OOT")
    text = isa.render(seven) if seven else None
    woot = isa.decode_bytes(b"WOOT")
    record(2, text == "lui t5,0x544f4" and woot is None, f"7OOT -> {text}, WOOT -> {woot}")


def test_c03_table_coverage(fresh_tables):
    tables, dt = fresh_tables
    h, s = tables["hash"].coverage, tables["slash"].coverage
    ok = h >= 63448 and s >= 58174 and dt < 600
    record(3, ok, f"hash {h}/65536 (>=63448), slash {s}/65536 (>=58174), fresh build {dt:.0f}s")


def test_c04_table_soundness(fresh_tables):
    tables, _ = fresh_tables
    checked = 0
    for v, variant in (("hash", CharsetVariant.HASH), ("slash", CharsetVariant.SLASH)):
        for val, seq in enumerate(tables[v].entries):
            if seq is not None:
                _check_entry(val, seq, variant)
                checked += 1
    record(4, True, f"{checked} populated entries reproduce their target")


def test_c05_codec_and_stage2_size():
    pairs = [encode_byte(a) for a in range(256)]
    total = all(k in ALNUM_BYTES and l in ALNUM_BYTES and decode_pair(k, l) == a
                for a, (k, l) in enumerate(pairs))
    size = len(build_stage2("hash", Stage2Params(100)).serialize())
    record(5, total and size == 40, f"256/256 bytes round-trip: {total}, hash stage 2 {size} bytes")


def test_c06_hello_world_per_variant():
    want = b"Hello world!"
    details, ok = [], True
    for v in VARIANTS:
        t0 = time.perf_counter()
        img = linker.link(v, payloads.uart_print(want))
        rep = linker.verify(img, strict_icache=True)
        dt = time.perf_counter() - t0
        good = rep.ok and is_charset_valid(img.bytes, CharsetVariant.parse(v)) and rep.serial == want and dt < 30
        ok &= good
        details.append(f"{v} {len(img)}B {rep.serial!r} {dt:.1f}s")
    record(6, ok, "; ".join(details))


def test_c07_random_payloads():
    rng = random.Random(2024)
    fails, per = [], 50
    for v in VARIANTS:
        for i in range(per):
            n = rng.randint(1, 512)
            p = payloads.random_payload(rng, n)
            rep = linker.verify(linker.link(v, p), run_payload=False)
            if not rep.ok:
                fails.append((v, i, n))
    record(7, not fails, f"{per * len(VARIANTS) - len(fails)}/{per * len(VARIANTS)} reconstructed byte-exact"
           + (f", failures {fails[:5]}" if fails else ""))


def test_c08_fmadd_solver():
    res = solve(tickpin.template(), **tickpin.SEARCH)
    reproduced = res.to_dict() == tickpin.PINNED and res.verify()
    rate = hit_rate(samples=10_000_000, seed=1)
    expected = (62 / 256) ** 6
    within = expected / 3 <= rate <= expected * 3
    record(8, reproduced and within,
           f"pinned solve verified: {reproduced}, hit rate {rate:.3e} vs (62/256)^6 = {expected:.3e}"
           f" (1/{1 / expected:.0f})")


def test_c09_fixup_minimality():
    limit = 64 * 1024
    best, n = {}, 0
    while FIX_SMALL * n <= limit + 16:
        for m in range(n + 1):
            best.setdefault(FIX_BIG * (n - m) + FIX_SMALL * m, n)
        n += 1
    bad = []
    for d in range(0, limit + 1, 2):
        cands = [(best[d + s], s) for s in range(17) if d + s in best]
        try:
            chain = build_fixup(d)
        except FixupUnsolvable:
            if cands:
                bad.append(d)
            continue
        if not cands or (chain.n, chain.nopsled_len) != min(cands) or chain.nopsled_len > 16:
            bad.append(d)
    record(9, not bad, f"distances 0..{limit} checked, {len(bad)} non-minimal")


def test_c10_published_replay():
    data = fixture_bytes("published_hash.txt")
    st = EmuState.load(data, mem_size=1 << 16, regs={"sp": DRAM_BASE + 0x8000}, strict_icache=True)
    st.run(2_000_000)
    out = bytes(st.serial_out)
    # the transcription prints "Hello, world!\n"; the greeting is what matters
    record(10, st.status == "halted" and out == b"Hello, world!\n", f"published hash image: {st.status}, serial {out!r}")
