import struct

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from alpharv import tickpin
from alpharv.fp_solver import (B_DEFAULT, RDN, RNE, RTZ, RUP, FpTriple, NoExactSolution, SolverResult,
                             difference_feasible, fma_exact, fma_op, hit_rate, is_alnum_word, is_nan,
                             search_pair_mitm, solve, solve_c, split_equations)

gmpy2 = pytest.importorskip("gmpy2")

_GMP_RM = {RNE: gmpy2.RoundToNearest, RTZ: gmpy2.RoundToZero, RUP: gmpy2.RoundUp, RDN: gmpy2.RoundDown}


def _f(bits):
    return struct.unpack("<d", struct.pack("<Q", bits))[0]


def _b(x):
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def oracle_fma(a, b, c, rm):
    """MPFR with binary64 exponent range and subnormals."""
    ctx = gmpy2.context(precision=53, emin=-1073, emax=1024, subnormalize=True, round=_GMP_RM[rm])
    with ctx:
        r = gmpy2.fma(gmpy2.mpfr(_f(a)), gmpy2.mpfr(_f(b)), gmpy2.mpfr(_f(c)))
    return _b(float(r))


words = st.one_of(
    st.integers(0, (1 << 64) - 1),
    st.sampled_from([0, 1 << 63, 0x7FF0000000000000, 0x0000000000000001, 0x000FFFFFFFFFFFFF,
                     0x3FF0000000000000, 0xBFF0000000000000, 0x7FEFFFFFFFFFFFFF]),
    st.integers(0, (1 << 52) - 1).map(lambda m: 0x3FF0000000000000 | m),
)


@given(words, words, words, st.sampled_from([RNE, RTZ, RUP, RDN]))
def test_fma_matches_mpfr(a, b, c, rm):
    got, want = fma_exact(a, b, c, rm), oracle_fma(a, b, c, rm)
    if is_nan(want):
        assert is_nan(got)
    else:
        assert got == want, (hex(a), hex(b), hex(c), rm)


@given(st.integers(0, (1 << 25) - 1), st.integers(0, (1 << 25) - 1), st.floats(-1e6, 1e6))
def test_fma_exact_product_agrees_with_float(m1, m2, c):
    # 26-bit significands multiply exactly, so a*b+c rounds once in plain floats too
    a, b = float(m1 | 1 << 25), float(m2 | 1 << 25)
    assert fma_exact(_b(a), _b(b), _b(c)) == _b(a * b + c)


def test_fused_forms_signs():
    one, two, three = _b(1.0), _b(2.0), _b(3.0)
    assert _f(fma_op("fmadd", two, three, one)) == 7.0
    assert _f(fma_op("fmsub", two, three, one)) == 5.0
    assert _f(fma_op("fnmsub", two, three, one)) == -5.0
    assert _f(fma_op("fnmadd", two, three, one)) == -7.0


@given(st.integers(0, (1 << 48) - 1), st.integers(0, (1 << 48) - 1))
def test_solve_c_inverts(p48, alow):
    a = 0x4131 << 48 | alow
    r = 0x4270 << 48 | p48
    try:
        c = solve_c(r, a, B_DEFAULT)
    except NoExactSolution:
        return
    assert fma_exact(a, B_DEFAULT, c) == r


def test_difference_feasible_brute_force():
    import random
    from alpharv.alpha_subset import ALNUM_BYTES

    rng = random.Random(3)
    for _ in range(300):
        delta = rng.getrandbits(16)
        brute = any(((x + delta) & 0xFFFF).to_bytes(2, "little")[0] in ALNUM_BYTES and
                    ((x + delta) & 0xFFFF).to_bytes(2, "little")[1] in ALNUM_BYTES
                    for x in (int.from_bytes(bytes((p, q)), "little") for p in ALNUM_BYTES for q in ALNUM_BYTES))
        assert difference_feasible(delta, 2) == brute


def test_split_equations_pads():
    assert split_equations(bytes(range(7))) == [0x050403020100, 0x06]


def test_pair_search_finds_valid_constants():
    rng = np.random.Generator(np.random.PCG64(7))
    pinned = tickpin.pinned()
    p1, p2 = pinned.targets()[:2]
    sol, used = search_pair_mitm(p1, p2, pinned.b, rng, 200_000)
    assert sol is not None
    a, c1, c2 = sol
    for c, p in ((c1, p1), (c2, p2)):
        t = FpTriple(a, pinned.b, c, fma_exact(a, pinned.b, c))
        assert t.check() and t.r & ((1 << 48) - 1) == p
        assert is_alnum_word(c)
    assert is_alnum_word(a)


def test_pinned_constants_verify():
    res = tickpin.pinned()
    assert res.verify()
    from alpharv.stage2 import polymorph_at
    assert polymorph_at(tickpin.template(), res.index).serialize() == res.instance.serialize()
    for t in res.triples():
        assert is_alnum_word(t.a) and is_alnum_word(t.b) and is_alnum_word(t.c)


def test_pinned_solve_reproduces():
    """The pinned subset of the polymorph stream, searched from the pinned
    seed, lands on the stored constants."""
    res = solve(tickpin.template(), **tickpin.SEARCH)
    assert res.to_dict() == tickpin.PINNED
    assert res.verify()


def test_result_roundtrip():
    res = tickpin.pinned()
    back = SolverResult.from_dict(res.to_dict())
    assert back.pairs == res.pairs and back.verify()


def test_solver_rejects_bad_b():
    with pytest.raises(ValueError):
        solve(tickpin.template(), b=0, max_instances=1)


@pytest.mark.slow
def test_alphanumeric_c_hit_rate():
    rate = hit_rate(samples=10_000_000, seed=1)
    expected = (62 / 256) ** 6
    assert expected / 3 <= rate <= expected * 3, rate
