"""Stage 2: the nibble decoder loop, its payload codec and polymorphic variants.

Each payload byte A is spread over two alphanumeric bytes (L, K), stored as
L then K.  The decoder loads a word at XP, xors it with itself shifted right
by four and stores the low byte at XQ::

    A[0:3] = L[0:3] ^ L[4:7]
    A[4:7] = K[0:3] ^ L[4:7]

Decoding is in place: the encoded bytes start 4 bytes after the first
decoded byte, so word stores at XQ never reach unread input.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

from . import isa_codec as isa
from .alpha_subset import ALNUM_BYTES, CharsetVariant

MAX_PAYLOAD = 512
READ_OFFSET = 4
BLOCK = 16
JUMP_NEXT = 0xA031          # c.j +12, from block offset 4 to the next block
NOP_PLACEHOLDER = 0x0001    # c.nop


class PayloadTooLarge(ValueError):
    pass


class RegisterConflict(ValueError):
    pass


# ---------------------------------------------------------------------------
# codec

def decode_pair(k: int, l: int) -> int:
    lo = (l & 15) ^ (l >> 4)
    hi = (k & 15) ^ (l >> 4)
    return (hi << 4 | lo) & 0xFF


def _closed_form(a: int) -> tuple[int, int]:
    lh = 0x4 if a & 15 != 0x4 else 0x6
    l = lh << 4 | ((a & 15) ^ lh)
    kh = 0x4 if a & 15 != 0 else 0x5
    k = kh << 4 | ((a >> 4) ^ lh)
    return k, l


def _pair_candidates(a: int):
    yield _closed_form(a)
    kh0 = 0x4 if a & 15 != 0 else 0x5
    for kh in (kh0, 4, 5, 6, 7, 3):
        for lh in (0x4 if a & 15 != 0x4 else 0x6, 6, 4, 5, 7, 3):
            yield kh << 4 | ((a >> 4) ^ lh), lh << 4 | ((a & 15) ^ lh)
    for l in sorted(ALNUM_BYTES):
        for k in sorted(ALNUM_BYTES):
            yield k, l


def encode_byte(a: int) -> tuple[int, int]:
    """Alphanumeric (K, L) decoding to ``a``: the closed form when it works,
    otherwise the first valid pair in a fixed order."""
    for k, l in _pair_candidates(a & 0xFF):
        if k in ALNUM_BYTES and l in ALNUM_BYTES and decode_pair(k, l) == a:
            return k, l
    raise AssertionError("no encoding")  # pragma: no cover


_ENC = [encode_byte(a) for a in range(256)]


def encode_payload(payload: bytes, limit: int = MAX_PAYLOAD) -> bytes:
    if len(payload) > limit:
        raise PayloadTooLarge(f"payload is {len(payload)} bytes, limit {limit}")
    out = bytearray()
    for a in payload:
        k, l = _ENC[a]
        out += bytes((l, k))
    return bytes(out)


def decode_payload(enc: bytes) -> bytes:
    return bytes(decode_pair(enc[i + 1], enc[i]) for i in range(0, len(enc) - 1, 2))


# ---------------------------------------------------------------------------
# program

@dataclass(frozen=True)
class Stage2Regs:
    """XP read pointer, XQ write pointer, XS/XT scratch, XE end pointer (or
    down-counter in the compressed form), XJ jump target."""
    XP: int = isa.xreg("a0")
    XQ: int = isa.xreg("a1")
    XS: int = isa.xreg("a2")
    XT: int = isa.xreg("a3")
    XE: int = isa.xreg("a4")
    XJ: int = isa.xreg("a5")

    def as_tuple(self) -> tuple:
        return (self.XP, self.XQ, self.XS, self.XT, self.XE, self.XJ)

    def check(self, compressed: bool) -> None:
        t = self.as_tuple()
        if len(set(t)) != len(t):
            raise RegisterConflict("stage 2 registers must be distinct")
        if 0 in t or 2 in t:
            raise RegisterConflict("zero and sp cannot hold stage 2 state")
        creg = t[:5] if compressed else t[:4]
        if any(not 8 <= r <= 15 for r in creg):
            raise RegisterConflict("XP, XQ, XS, XT (and the counter) must be in x8..x15")


@dataclass(frozen=True)
class Stage2Params:
    """``page`` is the c.lui immediate: XQ starts at sp + page * 4096."""
    payload_len: int
    page: int = -1
    read_offset: int = READ_OFFSET

    def counter(self) -> tuple[int, int]:
        """(v, s) with v << s the smallest count >= payload_len, s >= 1."""
        n = max(self.payload_len, 1)
        best = None
        for s in range(1, 12):
            v = -(-n // (1 << s))
            if v <= 31:
                cand = (v << s, s, v)
                if best is None or cand < best:
                    best = cand
        if best is None:
            raise PayloadTooLarge("payload too long for the counter form")
        return best[2], best[1]


@dataclass(frozen=True)
class Item:
    instr: isa.Instr
    label: str | None = None       # set on the loop head
    target: str | None = None      # symbolic branch target


@dataclass(frozen=True)
class Stage2Program:
    variant: CharsetVariant
    items: tuple
    regs: Stage2Regs
    params: Stage2Params
    order: tuple = (0, 1, 2)
    inc_pos: int = 3
    layout: str = "flat"

    @property
    def compressed(self) -> bool:
        return self.variant in (CharsetVariant.SLASH, CharsetVariant.TICK)

    @property
    def decoded_len(self) -> int:
        """Bytes the loop actually decodes (the counter form may round up)."""
        if not self.compressed:
            return self.params.payload_len
        v, s = self.params.counter()
        return v << s

    def _sizes(self) -> list[int]:
        return [BLOCK if self.layout == "blocked" else i.instr.width // 8 for i in self.items]

    def _resolved(self) -> list[tuple[int, isa.Instr]]:
        offs = list(itertools.accumulate([0] + self._sizes()[:-1]))
        labels = {it.label: off for it, off in zip(self.items, offs) if it.label}
        out = []
        for it, off in zip(self.items, offs):
            ins = it.instr
            if it.target is not None:
                ops = tuple((r, labels[it.target] - off if r == "imm" else v) for r, v in ins.operands)
                ins = replace(ins, operands=ops)
            out.append((off, ins))
        return out

    def words(self) -> list[isa.InstrWord]:
        return [isa.encode(ins, ins.width) for _, ins in self._resolved()]

    def halfwords(self) -> list[int]:
        """The program as 16-bit units (flat layout)."""
        data = self.serialize("flat") if self.layout == "flat" else b"".join(w.bytes for w in self.words())
        return [int.from_bytes(data[i:i + 2], "little") for i in range(0, len(data), 2)]

    def serialize(self, layout: str | None = None) -> bytes:
        prog = self if layout in (None, self.layout) else replace(self, layout=layout)
        words = prog.words()
        if prog.layout == "flat":
            return b"".join(w.bytes for w in words)
        out = bytearray()
        for w in words:
            blk = bytearray(BLOCK)
            blk[:len(w.bytes)] = w.bytes
            if w.width == 16:
                blk[2:4] = NOP_PLACEHOLDER.to_bytes(2, "little")
            blk[4:6] = JUMP_NEXT.to_bytes(2, "little")
            out += blk
        return bytes(out)

    @property
    def bytes(self) -> bytes:
        return self.serialize()

    def instrs(self) -> list[isa.Instr]:
        return [ins for _, ins in self._resolved()]

    def listing(self) -> str:
        return "\n".join(f"{off:4d}  {isa.render(ins)}" for off, ins in self._resolved())


def build_stage2(variant: CharsetVariant | str, params: Stage2Params, regs: Stage2Regs | None = None,
                 order=(0, 1, 2), inc_pos: int = 3) -> Stage2Program:
    """Flat 32-bit-capable form for HASH; compressed counter form for SLASH
    (blocked layout) and TICK."""
    variant = CharsetVariant.parse(variant)
    regs = regs or Stage2Regs()
    compressed = variant in (CharsetVariant.SLASH, CharsetVariant.TICK)
    regs.check(compressed)
    if sorted(order) != [0, 1, 2] or not 1 <= inc_pos <= inc_positions(variant):
        raise ValueError("bad init order or increment position")
    if not -32 <= params.page <= 31 or params.page == 0:
        raise ValueError("page must be a nonzero 6-bit value")
    P, Q, S, T, E, J = regs.as_tuple()
    m = isa.make
    items = [Item(m("fence.i")), Item(m("c.lui", rd=Q, imm=params.page)), Item(m("c.add", rd=Q, rs2=2))]
    if compressed:
        v, s = params.counter()
        bound = [m("c.li", rd=E, imm=v), m("c.slli", rd=E, shamt=s)]
    else:
        bound = [m("addi", rd=E, rs1=Q, imm=params.payload_len)]
    inits = [bound, [m("c.mv", rd=P, rs2=Q)], [m("c.mv", rd=J, rs2=Q)]]
    for i in order:
        items += [Item(x) for x in inits[i]]
    body = [m("c.lw", rd=S, rs1=P, imm=params.read_offset),
            m("c.mv", rd=T, rs2=S), m("c.srli", rd=T, shamt=4), m("c.xor", rd=S, rs2=T),
            m("c.sw", rs2=S, rs1=Q, imm=0), m("c.addi", rd=Q, imm=1)]
    if compressed:
        body += [m("c.addi", rd=E, imm=-1)]
    # c.lw offsets are multiples of 4, so the read pointer moves after the load
    body.insert(inc_pos, m("c.addi", rd=P, imm=2))
    if compressed:
        branch = m("c.bnez", rs1=E, imm=0)
    else:
        branch = m("bltu", rs1=Q, rs2=E, imm=0)
    items += [Item(body[0], label="loop")] + [Item(x) for x in body[1:]]
    items += [Item(branch, target="loop"), Item(m("fence.i")), Item(m("c.jr", rs1=J))]
    layout = "blocked" if variant == CharsetVariant.SLASH else "flat"
    return Stage2Program(variant, tuple(items), regs, params, tuple(order), inc_pos, layout)


_ORDERS = list(itertools.permutations(range(3)))


def inc_positions(variant: CharsetVariant) -> int:
    """Number of places the read-pointer increment can go in the loop body."""
    return 7 if CharsetVariant.parse(variant) in (CharsetVariant.SLASH, CharsetVariant.TICK) else 6


def _unrank_perm(items: list, k: int, idx: int) -> tuple:
    """The idx-th k-permutation of ``items`` in lexicographic order."""
    items = list(items)
    out = []
    for i in range(k):
        block = math.perm(len(items) - 1, k - i - 1)
        q, idx = divmod(idx, block)
        out.append(items.pop(q))
    return tuple(out)


def _reg_space(compressed: bool) -> tuple[list, list, int, int]:
    creg = list(range(8, 16))
    other = [r for r in range(1, 32) if r != 2]
    k = 5 if compressed else 4
    return creg, other, k, (1 if compressed else len(other) - k) * (len(other) - k - (0 if compressed else 1))


def register_assignments(compressed: bool = True):
    """All (XP, XQ, XS, XT, XE, XJ) assignments, in lexicographic order."""
    creg, other, k, _ = _reg_space(compressed)
    for head in itertools.permutations(creg, k):
        es = [None] if compressed else [r for r in other if r not in head]
        for e in es:
            used = set(head) | ({e} if e is not None else set())
            for j in other:
                if j in used:
                    continue
                yield head + (j,) if compressed else head + (e, j)


def register_assignment_at(compressed: bool, idx: int) -> tuple:
    creg, other, k, tail = _reg_space(compressed)
    hi, lo = divmod(idx, tail)
    head = _unrank_perm(creg, k, hi)
    rest = [r for r in other if r not in head]
    if compressed:
        return head + (rest[lo],)
    e_i, j_i = divmod(lo, len(rest) - 1)
    e = rest[e_i]
    return head + (e, [r for r in rest if r != e][j_i])


def register_count(compressed: bool = True) -> int:
    creg, other, k, tail = _reg_space(compressed)
    return math.perm(len(creg), k) * tail


def polymorph_count(compressed: bool = True) -> int:
    return register_count(compressed) * len(_ORDERS) * (7 if compressed else 6)


def _descriptor(program: Stage2Program, q: int) -> tuple:
    n_inc = inc_positions(program.variant)
    r, rest = divmod(q, len(_ORDERS) * n_inc)
    o, inc = divmod(rest, n_inc)
    return register_assignment_at(program.compressed, r), _ORDERS[o], inc + 1


def _rank(program: Stage2Program) -> int:
    """Position of the program's own (regs, order, inc) in the product stream."""
    compressed = program.compressed
    creg, other, k, tail = _reg_space(compressed)
    regs = program.regs.as_tuple()
    head = list(regs[:k])
    items, hi = list(creg), 0
    for i, h in enumerate(head):
        pos = items.index(h)
        hi += pos * math.perm(len(items) - 1, k - i - 1)
        items.pop(pos)
    rest = [r for r in other if r not in head]
    if compressed:
        lo = rest.index(regs[k])
    else:
        e = regs[k]
        lo = rest.index(e) * (len(rest) - 1) + [r for r in rest if r != e].index(regs[k + 1])
    n_inc = inc_positions(program.variant)
    return ((hi * tail + lo) * len(_ORDERS) + _ORDERS.index(tuple(program.order))) * n_inc + program.inc_pos - 1


def polymorph_at(program: Stage2Program, index: int) -> Stage2Program:
    """Random access into ``polymorphs(program)``."""
    if index == 0:
        return program
    q = index - 1
    if q >= _rank(program):
        q += 1
    if q >= polymorph_count(program.compressed):
        raise IndexError(index)
    regs, order, inc = _descriptor(program, q)
    return build_stage2(program.variant, program.params, Stage2Regs(*regs), order, inc)


def polymorphs(program: Stage2Program, start: int = 0):
    """Deterministic stream of equivalent programs, the template first, then
    every register renaming x init ordering x increment placement."""
    total = polymorph_count(program.compressed)
    for i in range(start, total + 1):
        yield polymorph_at(program, i)
