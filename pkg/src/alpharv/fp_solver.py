"""Fused multiply-add arithmetic and the tick-variant store-equation solver.

Floating-point values are handled as raw 64-bit patterns throughout; the
arithmetic is exact integer math with a single final rounding.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .alpha_subset import ALNUM_BYTES

RNE, RTZ, RDN, RUP, RMM = 0, 1, 2, 3, 4
QNAN = 0x7FF8000000000000
_SIGN = 1 << 63


def bits_of(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def float_of(b: int) -> float:
    return struct.unpack("<d", struct.pack("<Q", b & ((1 << 64) - 1)))[0]


def is_nan(b: int) -> bool:
    return (b >> 52) & 0x7FF == 0x7FF and b & ((1 << 52) - 1) != 0


def is_inf(b: int) -> bool:
    return (b >> 52) & 0x7FF == 0x7FF and b & ((1 << 52) - 1) == 0


def unpack(b: int) -> tuple[int, int, int]:
    """Finite pattern -> (sign, integer significand, exponent of its lsb)."""
    s, e, m = b >> 63, (b >> 52) & 0x7FF, b & ((1 << 52) - 1)
    if e == 0:
        return s, m, -1074
    return s, m | 1 << 52, e - 1075


def round_pack(sign: int, mag: int, exp: int, rm: int = RNE) -> int:
    """Round sign * mag * 2**exp (mag > 0) to a binary64 pattern."""
    n = mag.bit_length()
    e = max(exp + n - 53, -1074)
    shift = e - exp
    if shift > 0:
        q, rem = mag >> shift, mag & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rm == RNE:
            up = rem > half or (rem == half and q & 1)
        elif rm == RMM:
            up = rem >= half
        elif rm == RTZ:
            up = False
        elif rm == RDN:
            up = sign == 1 and rem != 0
        else:
            up = sign == 0 and rem != 0
        q += up
        if q >> 53:
            q >>= 1
            e += 1
    else:
        q = mag << -shift
    if q >> 52 == 0:
        return sign << 63 | q
    biased = e + 1075
    if biased >= 0x7FF:
        to_inf = rm in (RNE, RMM) or (rm == RUP and not sign) or (rm == RDN and sign)
        return sign << 63 | (0x7FF << 52 if to_inf else 0x7FEFFFFFFFFFFFFF)
    return sign << 63 | biased << 52 | (q & ((1 << 52) - 1))


def fma_exact(a: int, b: int, c: int, rm: int = RNE) -> int:
    """IEEE-754 binary64 a*b+c with one rounding, on raw bit patterns."""
    if is_nan(a) or is_nan(b) or is_nan(c):
        return QNAN
    sp = (a ^ b) >> 63
    a_zero, b_zero = a & ~_SIGN == 0, b & ~_SIGN == 0
    if is_inf(a) or is_inf(b):
        if a_zero or b_zero:
            return QNAN
        if is_inf(c) and c >> 63 != sp:
            return QNAN
        return sp << 63 | 0x7FF << 52
    if is_inf(c):
        return c
    sc = c >> 63
    _, ma, ea = unpack(a)
    _, mb, eb = unpack(b)
    _, mc, ec = unpack(c)
    mp, ep = ma * mb, ea + eb
    if mp == 0 and mc == 0:
        if sp == sc:
            return sp << 63
        return (1 << 63) if rm == RDN else 0
    lo = min(ep, ec)
    total = (-1) ** sp * (mp << (ep - lo)) + (-1) ** sc * (mc << (ec - lo))
    if total == 0:
        return (1 << 63) if rm == RDN else 0
    sign = 1 if total < 0 else 0
    return round_pack(sign, abs(total), lo, rm)


_NEG = {"fmadd": (0, 0), "fmsub": (0, 1), "fnmsub": (1, 0), "fnmadd": (1, 1)}


def fma_op(op: str, a: int, b: int, c: int, rm: int = RNE) -> int:
    """The four RISC-V fused forms: fmadd a*b+c, fmsub a*b-c,
    fnmsub -(a*b)+c, fnmadd -(a*b)-c."""
    na, nc = _NEG[op]
    return fma_exact(a ^ (na << 63), b, c ^ (nc << 63), rm)


# ---------------------------------------------------------------------------
# store-equation solver

# Pinned top halfwords (bytes 6..7, little-endian) of a and c, and the shared b.
# '1A' puts a near 2**20 and 'aB' puts c near 2**39, so a*b + c stays in
# [2**40, 2**41) and never carries into the exponent field.  The pair search
# also lets c's exponent drop to 2**36 ('B' with byte 6 in '0'..'Z').
A_TOP = 0x4131
C_TOP = 0x4261
B_DEFAULT = int.from_bytes(b"UUUUUU1A", "little")
LOW48 = (1 << 48) - 1
_ALNUM = np.array(sorted(ALNUM_BYTES), dtype=np.uint64)
_IS_ALNUM = np.zeros(256, dtype=bool)
_IS_ALNUM[sorted(ALNUM_BYTES)] = True
NOT_FOUND = None


class NoExactSolution(ArithmeticError):
    pass


class Exhausted(RuntimeError):
    pass


def is_alnum_word(v: int, nbytes: int = 8) -> bool:
    return all(b in ALNUM_BYTES for b in (v & ((1 << 8 * nbytes) - 1)).to_bytes(nbytes, "little"))


def _rational_pack(num: int, exp: int, rm: int = RNE) -> int:
    if num == 0:
        return 0
    return round_pack(1 if num < 0 else 0, abs(num), exp, rm)


def _exact(b: int) -> tuple[int, int]:
    s, m, e = unpack(b)
    return (-m if s else m), e


def solve_c(r: int, a: int, b: int, op: str = "fmadd", rm: int = RNE) -> int:
    """c with fma_op(op, a, b, c) == r: the correctly rounded solution of the
    linear equation, or a neighbour, validated by re-evaluation."""
    for x in (r, a, b):
        if is_nan(x) or is_inf(x):
            raise NoExactSolution("non-finite operand")
    (rv, re), (av, ae), (bv, be) = _exact(r), _exact(a), _exact(b)
    pv, pe = av * bv, ae + be
    lo = min(re, pe)
    rr, pp = rv << (re - lo), pv << (pe - lo)
    num = {"fmadd": rr - pp, "fmsub": pp - rr, "fnmsub": rr + pp, "fnmadd": -rr - pp}[op]
    c0 = _rational_pack(num, lo, rm)
    for cand in (c0, c0 + 1, c0 - 1, c0 + 2, c0 - 2):
        cand &= (1 << 64) - 1
        if not (is_nan(cand) or is_inf(cand)) and fma_op(op, a, b, cand, rm) == r:
            return cand
    raise NoExactSolution("rounding leaves no exact c")


@dataclass(frozen=True)
class FpTriple:
    a: int
    b: int
    c: int
    r: int
    op: str = "fmadd"

    def check(self) -> bool:
        return fma_op(self.op, self.a, self.b, self.c) == self.r


def _sample_a(rng: np.random.Generator, n: int) -> np.ndarray:
    idx = rng.integers(0, len(_ALNUM), size=(n, 6))
    low = np.zeros(n, dtype=np.uint64)
    for i in range(6):
        low |= _ALNUM[idx[:, i]] << np.uint64(8 * i)
    return low


def _sig(word: np.ndarray | int):
    """Significand (with hidden bit) of words sharing exponent 2**20."""
    return (np.uint64(1 << 52) | (np.uint64(A_TOP & 15) << np.uint64(48))) | word


def _alnum48(v: np.ndarray) -> np.ndarray:
    ok = np.ones(v.shape, dtype=bool)
    for i in range(6):
        ok &= _IS_ALNUM[((v >> np.uint64(8 * i)) & np.uint64(0xFF)).astype(np.intp)]
    return ok


# c keeps exponent 2**39 ('B' in byte 7, high nibble 6 in byte 6); an equation
# may pick any low nibble of byte 6 that stays alphanumeric ('a'..'o')
C_NIBBLES = tuple(range(1, 16))


def c_top(nibble: int) -> int:
    return (C_TOP & 0xFFF0) | nibble


def _c_candidates(alow: np.ndarray, bsig: int, p48: int, nibbles=C_NIBBLES):
    """Integer significands C (c = C * 2**-13) near the solution of
    a*b + c = r for every top nibble k of r with low bits ``p48``.  Returns
    (C, sample index) for candidates whose nibble is allowed."""
    A = _sig(alow)
    m27 = np.uint64((1 << 27) - 1)
    ah, al = A >> np.uint64(27), A & m27
    bh, bl = np.uint64(bsig >> 27), np.uint64(bsig & ((1 << 27) - 1))
    mid = ah * bl + al * bh
    # Y = floor(A*B / 2**51); every partial product stays below 2**64
    y = ah * bh * np.uint64(8) + ((mid + ((al * bl) >> np.uint64(27))) >> np.uint64(24))
    y = y.astype(np.int64)
    allowed = np.zeros(32, dtype=bool)
    allowed[[16 + n for n in nibbles]] = True
    cs, idx = [], []
    for k in range(16):
        # r = M * 2**-12 with M = 2**52 + k*2**48 + p48, so C ~ 2M - Y
        c_hi = 2 * ((1 << 52) + (k << 48) + p48) - y
        for c in (c_hi, c_hi - 1):
            top = c >> 48
            ok = (top >= 16) & (top < 32)
            ok[ok] = allowed[top[ok]]
            sel = np.nonzero(ok)[0]
            cs.append(c[sel])
            idx.append(sel)
    cs, idx = np.concatenate(cs), np.concatenate(idx)
    good = _alnum48(cs.astype(np.uint64) & np.uint64(LOW48))
    return cs[good], idx[good]


def _a_word(alow: int) -> int:
    return A_TOP << 48 | alow


def _c_word(csig: int) -> int:
    nib = (csig >> 48) & 15
    return c_top(nib) << 48 | (csig & LOW48)


def _exact_c(a: int, b: int, p48: int, cands) -> int | None:
    for cs in sorted(int(x) for x in cands):
        c = _c_word(cs)
        if is_alnum_word(c) and (fma_exact(a, b, c) & LOW48) == p48:
            return c
    return None


def hit_rate(b: int = B_DEFAULT, samples: int = 10_000_000, seed: int = 0, chunk: int = 1 << 20,
             nibbles=(C_TOP & 15,)) -> float:
    """Fraction of random alphanumeric a for which a random 48-bit target
    admits an alphanumeric c with the given top nibbles (before exact
    validation).  The default pins c's top halfword to C_TOP."""
    rng = np.random.Generator(np.random.PCG64(seed))
    bsig = (b & ((1 << 52) - 1)) | 1 << 52
    hits = done = 0
    while done < samples:
        n = min(chunk, samples - done)
        alow = _sample_a(rng, n)
        p48 = int(rng.integers(0, 1 << 48))
        _, idx = _c_candidates(alow, bsig, p48, nibbles)
        hits += len(np.unique(idx))
        done += n
    return hits / samples


def search_pair(p1: int, p2: int | None, b: int, rng: np.random.Generator, budget: int,
                chunk: int = 1 << 18, nibbles=C_NIBBLES):
    """Random alphanumeric a until both targets get
    an alphanumeric c.  Returns ((a, c1, c2), trials) with c2 None for an
    unpaired target, or (None, budget)."""
    bsig = (b & ((1 << 52) - 1)) | 1 << 52
    done = 0
    while done < budget:
        n = min(chunk, budget - done)
        alow = _sample_a(rng, n)
        c1, i1 = _c_candidates(alow, bsig, p1, nibbles)
        sel = np.unique(i1)
        if p2 is not None and len(sel):
            c2, i2 = _c_candidates(alow[sel], bsig, p2, nibbles)
            both = sel[np.unique(i2)]
        else:
            both = sel
        for i in both.tolist():
            a = _a_word(int(alow[i]))
            x1 = _exact_c(a, b, p1, c1[i1 == i])
            if x1 is None:
                continue
            if p2 is None:
                return (a, x1, None), done + i + 1
            cc, _ = _c_candidates(alow[i:i + 1], bsig, p2, nibbles)
            x2 = _exact_c(a, b, p2, cc)
            if x2 is not None:
                return (a, x1, x2), done + i + 1
        done += n
    return None, budget


def _sample_c_pairs(rng: np.random.Generator, n: int, delta: int | None):
    """Alphanumeric 48-bit C1 and, when ``delta`` is given, C2 = C1 + delta
    (mod 2**48) alphanumeric too, drawn byte by byte with carries."""
    c1 = np.zeros(n, dtype=np.int64)
    carry = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    digits = _ALNUM.astype(np.int64)
    for i in range(6):
        if delta is None:
            pick = rng.integers(0, len(digits), size=n)
        else:
            d = (delta >> (8 * i)) & 0xFF
            s = digits[None, :] + d + carry[:, None]
            ok = _IS_ALNUM[s & 0xFF]
            keys = np.where(ok, rng.random((n, len(digits))), -1.0)
            pick = keys.argmax(axis=1)
            alive &= ok.any(axis=1)
            carry = s[np.arange(n), pick] >> 8
        c1 |= digits[pick] << (8 * i)
    return c1[alive]


# c exponents tried by the pair search: c = C * 2**(ec - 52) with the top
# halfword 'B' + (ec - 33, nibble); a*b + c then rounds on the 2**-12 grid
C_EXPONENTS = (39, 38, 37, 36)


def c_top_for(ec: int, nibble: int) -> int:
    return 0x42 << 8 | (ec - 33) << 4 | nibble


def c_nibbles(ec: int) -> tuple:
    return tuple(n for n in range(16) if ((ec - 33) << 4 | n) in ALNUM_BYTES and (ec, n) != (39, 0))


def _c_word_e(C: int, ec: int) -> int:
    return c_top_for(ec, (C >> 48) & 15) << 48 | (C & LOW48)


def _near_c_e(A: int, bsig: int, p48: int, ec: int) -> list[int]:
    rho = 1 << (40 - ec)
    y = A * bsig >> (ec + 12)
    allowed = {16 + n for n in c_nibbles(ec)}
    out = []
    for k in range(16):
        base = rho * ((1 << 52) + (k << 48) + p48) - y
        for t in range(-(rho // 2) - 1, rho // 2 + 1):
            if (base + t) >> 48 in allowed:
                out.append(base + t)
    return out


def _exact_c_e(a: int, b: int, p48: int, A: int, bsig: int, ec: int) -> int | None:
    for C in _near_c_e(A, bsig, p48, ec):
        c = _c_word_e(C, ec)
        if is_alnum_word(c) and (fma_exact(a, b, c) & LOW48) == p48:
            return c
    return None


def pair_options(p1: int, p2: int | None) -> list[tuple[int, int]]:
    """(c exponent, slack) combinations whose c-difference constraint has
    alphanumeric solutions; empty means the pair cannot be solved."""
    if p2 is None:
        return [(ec, 0) for ec in C_EXPONENTS]
    out = []
    for ec in C_EXPONENTS:
        rho = 1 << (40 - ec)
        for d in range(-rho + 1, rho):
            if difference_feasible((rho * (p2 - p1) + d) % (1 << 48)):
                out.append((ec, d))
    return out


def search_pair_mitm(p1: int, p2: int | None, b: int, rng: np.random.Generator, budget: int,
                     chunk: int = 2048):
    """Pair search that fixes c first.  With rho = ulp(r) / ulp(c), the two
    significands satisfy C2 - C1 == rho * (p2 - p1) + d (mod 2**48) for a
    small rounding slack d, whatever a is.  Sample alphanumeric (C1, C2) with
    that difference, then solve floor(a*b / ulp(c)) for the candidate a.
    Returns ((a, c1, c2), samples) or (None, samples)."""
    opts = pair_options(p1, p2)
    if not opts:
        return None, 0
    bsig = (b & ((1 << 52) - 1)) | 1 << 52
    amin, amax = _sig(np.uint64(0)).item(), _sig(np.uint64(LOW48)).item()
    done = 0
    while done < budget:
        for ec, d in opts:
            rho = 1 << (40 - ec)
            shift = ec + 12
            ylo, yhi = amin * bsig >> shift, amax * bsig >> shift
            delta = None if p2 is None else (rho * (p2 - p1) + d) % (1 << 48)
            c1s = _sample_c_pairs(rng, chunk, delta)
            done += chunk
            for c1 in c1s.tolist():
                for t1 in range(-(rho // 2) - 1, rho // 2 + 1):
                    tgt = (rho * p1 - c1 + t1) % (1 << 48)
                    for j in range((ylo - tgt) >> 48, ((yhi - tgt) >> 48) + 1):
                        y = tgt + (j << 48)
                        if not ylo <= y <= yhi:
                            continue
                        A = -((-y << shift) // bsig)
                        if (A * bsig) >> shift != y or not amin <= A <= amax:
                            continue
                        a = _a_word(A & LOW48)
                        if not is_alnum_word(a):
                            continue
                        x1 = _exact_c_e(a, b, p1, A, bsig, ec)
                        if x1 is None:
                            continue
                        if p2 is None:
                            return (a, x1, None), done
                        x2 = _exact_c_e(a, b, p2, A, bsig, ec)
                        if x2 is not None:
                            return (a, x1, x2), done
            if done >= budget:
                break
    return None, done


_CARRY_OK: dict = {}


def difference_feasible(delta: int, nbytes: int = 6) -> bool:
    """Whether some alphanumeric x has x + delta (mod 2**(8*nbytes))
    alphanumeric; a carry-state walk over the bytes."""
    states = {0}
    for i in range(nbytes):
        d = (delta >> (8 * i)) & 0xFF
        nxt = set()
        for cin in states:
            key = (d, cin)
            if key not in _CARRY_OK:
                _CARRY_OK[key] = {(x + d + cin) >> 8 for x in ALNUM_BYTES if (x + d + cin) & 0xFF in ALNUM_BYTES}
            nxt |= _CARRY_OK[key]
        states = nxt
        if not states:
            return False
    return True


def split_equations(data: bytes) -> list[int]:
    """Stage-2 bytes as 48-bit targets, 6 bytes per store, zero padded."""
    pad = data + bytes(-len(data) % 6)
    return [int.from_bytes(pad[i:i + 6], "little") for i in range(0, len(pad), 6)]


@dataclass
class SolverResult:
    b: int
    pairs: list            # (a_k, c_2k, c_2k+1 or None)
    instance: object       # the Stage2Program solved
    index: int = 0
    trials: int = 0
    memo_hits: int = 0
    seed: int = 0

    def targets(self) -> list[int]:
        return split_equations(self.instance.serialize("flat"))

    def triples(self) -> list[FpTriple]:
        out = []
        for a, c1, c2 in self.pairs:
            for c in (c1, c2):
                if c is not None:
                    out.append(FpTriple(a, self.b, c, fma_exact(a, self.b, c)))
        return out

    def verify(self) -> bool:
        tr = self.triples()
        tg = self.targets()
        words = [self.b] + [x for p in self.pairs for x in p if x is not None]
        return (len(tr) == len(tg) and all(t.check() and t.r & LOW48 == g for t, g in zip(tr, tg))
                and all(is_alnum_word(w) for w in words))

    def to_dict(self) -> dict:
        inst = self.instance
        return {"variant": inst.variant.name.lower(), "payload_len": inst.params.payload_len,
                "page": inst.params.page, "regs": list(inst.regs.as_tuple()), "order": list(inst.order),
                "inc_pos": inst.inc_pos, "index": self.index, "seed": self.seed, "b": f"{self.b:016x}",
                "pairs": [[f"{x:016x}" if x is not None else None for x in p] for p in self.pairs]}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverResult":
        from .stage2 import Stage2Params, Stage2Regs, build_stage2
        inst = build_stage2(d["variant"], Stage2Params(d["payload_len"], page=d["page"]),
                            Stage2Regs(*d["regs"]), tuple(d["order"]), d["inc_pos"])
        pairs = [tuple(int(x, 16) if x is not None else None for x in p) for p in d["pairs"]]
        return cls(int(d["b"], 16), pairs, inst, d["index"], seed=d.get("seed", 0))


def solve(template, b: int = B_DEFAULT, seed: int = 0, trial_budget: int = 2_000_000,
          max_instances: int | None = None, memo: dict | None = None, progress=None,
          strategy: str = "mitm", start: int = 0) -> SolverResult:
    """Walk the polymorph stream from ``start``; each consecutive
    pair of store targets shares one a.  Pair outcomes (a or NOT_FOUND) are
    memoised on the target pair, so a pair is searched at most once.
    ``strategy`` picks the inner search: "random_a" samples a directly,
    "mitm" samples the c pair first (same solutions, far fewer trials)."""
    from .stage2 import polymorphs

    if strategy not in ("mitm", "random_a"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if not is_alnum_word(b):
        raise ValueError("b must be alphanumeric")
    inner = search_pair_mitm if strategy == "mitm" else search_pair
    rng = np.random.Generator(np.random.PCG64(seed))
    memo = {} if memo is None else memo
    trials = hits = 0
    for n, inst in enumerate(polymorphs(template, start)):
        if max_instances is not None and n >= max_instances:
            break
        idx = start + n
        targets = split_equations(inst.serialize("flat"))
        pairs = []
        for k in range(0, len(targets), 2):
            key = (targets[k], targets[k + 1] if k + 1 < len(targets) else None)
            if key in memo:
                hits += 1
                sol = memo[key]
            else:
                sol, used = inner(key[0], key[1], b, rng, trial_budget)
                trials += used
                memo[key] = sol
            if progress:
                progress(idx, k // 2, sol is not None, trials)
            if sol is NOT_FOUND:
                break
            pairs.append(sol)
        else:
            res = SolverResult(b, pairs, inst, idx, trials, hits, seed)
            assert res.verify()
            return res
    raise Exhausted("polymorph stream ended without a solved instance")
