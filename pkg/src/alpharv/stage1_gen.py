"""Stage 1: the straight-line unpacker that writes stage 2 just past itself.

Image layout, offsets from the first byte::

    [fpu gadget][prefix] jal LINK, unpacker        header
    filler, link data, encoded payload, filler     data pool
    pointer setup, early loads                     unpacker
    c.addi16sp 464 / 448 ...                       fixup
    load and store per stage-2 piece               unpacker
    nop sled                                       nopsled
                                                   <- stage 2 lands here

All instruction words are taken from the variant's catalog, so every
emitted byte is in the charset by construction.
"""
from __future__ import annotations

import functools
from collections import defaultdict
from dataclasses import dataclass, field

from . import isa_codec as isa
from .alpha_subset import ALNUM_BYTES, CharsetVariant, get_catalog
from .load_table import SLASH_LIVE, TARGETS, LoadTable, find_word32, is_nop_like, lookup, seq_for_slash

FPU_GADGET = bytes.fromhex("896373900330")   # c.lui t2,2; csrrw zero,mstatus,t2
FILLER = 0x42                                 # 'B'
FIX_BIG, FIX_SMALL = 464, 448
SLED_MAX = 16
HASH_STORE_BASE = 1920
TICK_STORE_BASE = 1952
LINK_REG = {CharsetVariant.HASH: isa.xreg("t1"), CharsetVariant.SLASH: isa.xreg("t5"),
            CharsetVariant.TICK: isa.xreg("a4")}
SP = 2


class NoValidJal(ValueError):
    pass


class FixupUnsolvable(ValueError):
    pass


class UnloadableValue(ValueError):
    def __init__(self, value: int, index: int):
        super().__init__(f"stage 2 piece {index} ({value:#x}) has no load sequence")
        self.value, self.index = value, index


@dataclass(frozen=True)
class Region:
    kind: str          # header_jal, data_pool, fixup, unpacker, nopsled, fpu_gadget
    offset: int
    length: int
    label: str = ""

    @property
    def end(self) -> int:
        return self.offset + self.length


# ---------------------------------------------------------------------------
# catalog access

class Inventory:
    """Catalog words indexed by their exact mnemonic."""

    def __init__(self, variant: CharsetVariant):
        self.variant = variant
        self.catalog = get_catalog(variant)
        self.by_name: dict[str, list] = {}
        self._memo: dict = {}

    def _group(self, mnemonic: str) -> list:
        if mnemonic not in self.by_name:
            group = isa._EXPAND_NAME.get(mnemonic, mnemonic)
            self.by_name[mnemonic] = sorted((w, i) for w, i in self.catalog.decoded(group)
                                            if i is not None and i.mnemonic == mnemonic and not i.hint)
        return self.by_name[mnemonic]

    def all(self, mnemonic: str, **ops) -> list:
        ops = {k: _regnum(v) for k, v in ops.items()}
        key = (mnemonic, tuple(sorted(ops.items())))
        if key not in self._memo:
            self._memo[key] = [(w, i) for w, i in self._group(mnemonic)
                               if all(i.get(k) == v for k, v in ops.items())]
        return self._memo[key]

    def find(self, mnemonic: str, **ops) -> int | None:
        hit = self.all(mnemonic, **ops)
        return hit[0][0] if hit else None

    def need(self, mnemonic: str, **ops) -> int:
        w = self.find(mnemonic, **ops)
        if w is None:
            raise LookupError(f"{self.variant.name}: no charset-valid {mnemonic} {ops}")
        return w


def _regnum(v):
    return isa.xreg(v) if isinstance(v, str) else v


@functools.lru_cache(maxsize=None)
def inventory(variant: CharsetVariant | str) -> Inventory:
    return Inventory(CharsetVariant.parse(variant))


def word_bytes(w: int) -> bytes:
    return w.to_bytes(2 if w & 3 != 3 else 4, "little")


Op = tuple  # (word, label)


def assemble(ops) -> bytes:
    return b"".join(word_bytes(w) for w, _ in ops)


def nop_word(variant) -> int:
    """The sled instruction: c.li t1,-2 ("yS"), t1 being dead wherever a sled
    runs."""
    inv = inventory(variant)
    return inv.find("c.li", rd="t1", imm=-2) or inv.need("c.li", rd="t1")


# ---------------------------------------------------------------------------
# header

@dataclass(frozen=True)
class Header:
    variant: CharsetVariant
    code: bytes
    jal_offset: int
    link_reg: int
    target: int            # image offset of the first unpacker instruction
    gadget: bool = False

    @property
    def link_offset(self) -> int:
        return self.jal_offset + 4

    @property
    def size(self) -> int:
        return len(self.code)


@functools.lru_cache(maxsize=None)
def jal_immediates(variant: CharsetVariant | str, rd: int) -> tuple:
    """Sorted (offset, word) for the charset-valid forward jal on ``rd``."""
    out = [(i["imm"], w) for w, i in inventory(variant).all("jal", rd=rd) if i["imm"] > 0]
    return tuple(sorted(out))


def build_header(variant: CharsetVariant | str, pool_len: int, bare_metal: bool = False,
                 min_target: int = 0) -> Header:
    """jal over ``pool_len`` bytes (or to ``min_target``, if further), landing on
    the first charset-valid offset at or beyond it.  The slash variant pads
    the jal so the link value is 8-byte aligned, as amo* needs."""
    variant = CharsetVariant.parse(variant)
    gadget = FPU_GADGET if bare_metal and variant == CharsetVariant.TICK else b""
    nop = word_bytes(nop_word(variant))
    prefix = b""
    if variant == CharsetVariant.SLASH:
        while (len(gadget) + len(prefix) + 4) % 8:
            prefix += nop
    jal_off = len(gadget) + len(prefix)
    rd = LINK_REG[variant]
    need = max(jal_off + 4 + pool_len, min_target)
    for imm, w in jal_immediates(variant, rd):
        if jal_off + imm >= need:
            code = gadget + prefix + w.to_bytes(4, "little")
            return Header(variant, code, jal_off, rd, jal_off + imm, bool(gadget))
    raise NoValidJal(f"no jal reaches offset {need}")


# ---------------------------------------------------------------------------
# fixup

@dataclass(frozen=True)
class FixupChain:
    immediates: tuple
    nopsled_len: int
    total_delta: int

    @property
    def n(self) -> int:
        return len(self.immediates)

    @property
    def m(self) -> int:
        return sum(1 for i in self.immediates if i == FIX_SMALL)

    def ops(self, variant) -> list:
        inv = inventory(variant)
        return [(inv.need("c.addi16sp", imm=i), f"sp += {i}") for i in self.immediates]


def build_fixup(distance: int) -> FixupChain:
    """Fewest addi (464 or 448) whose sum is ``distance + s`` for a sled of
    ``s`` <= 16 bytes placed after the unpacker; among those, the shortest
    sled.  Raises FixupUnsolvable when no such chain exists (short distances
    fall between 28n and 29n sixteen-byte units)."""
    if distance < 0:
        raise FixupUnsolvable("negative distance")
    best = None
    q0 = -(-distance // 16)
    for q in (q0, q0 + 1):
        s = 16 * q - distance
        if s > SLED_MAX:
            continue
        n = -(-q // 29)
        if 28 * n <= q:
            cand = (n, s, q)
            if best is None or cand < best:
                best = cand
    if best is None:
        raise FixupUnsolvable(f"no 464/448 chain covers {distance}")
    n, s, q = best
    m = 29 * n - q
    return FixupChain((FIX_BIG,) * (n - m) + (FIX_SMALL,) * m, s, 16 * q)


def sled_ops(variant, nbytes: int) -> list:
    if nbytes % 2:
        raise ValueError("sled length must be even")
    w = nop_word(variant)
    return [(w, "nop")] * (nbytes // 2)


# ---------------------------------------------------------------------------
# store scheduling

def schedule_stores(count: int, stride: int, offsets, preferred: int | None = None) -> tuple[int, list]:
    """Offsets for ``count`` stores ``stride`` bytes apart, bumping the base
    register by 16 when the next offset is missing.  Returns (first offset,
    plan) with plan items ("store", offset) or ("inc", 16); the plan with the
    fewest bumps wins, ``preferred`` first among equals, then the highest."""
    offs = set(offsets)
    lo = min(offs)
    best = None
    for b0 in sorted(offs):
        plan, incs, ok = [], 0, True
        for i in range(count):
            t = b0 + stride * i - 16 * incs
            while t not in offs:
                incs += 1
                t -= 16
                plan.append(("inc", 16))
                if t < lo:
                    ok = False
                    break
            if not ok:
                break
            plan.append(("store", t))
        if not ok:
            continue
        key = (incs, b0 != preferred, -b0)
        if best is None or key < best[0]:
            best = (key, b0, plan)
    if best is None:
        raise ValueError("no store schedule")
    return best[1], best[2]


# ---------------------------------------------------------------------------
# unpackers

@dataclass
class Unpacker:
    """``pre`` runs before the fixup with sp equal to the link value, ``body``
    after it.  Stage 2 lands at sp_after_fixup + store_base, and sp has grown
    by ``sp_advance`` when stage 2 starts.  ``link_data`` maps offsets from the
    link value to bytes the unpacker reads."""
    variant: CharsetVariant
    pre: list
    body: list
    store_base: int
    sp_advance: int
    link_data: dict = field(default_factory=dict)
    align: int = 1          # required alignment of sp at stage-2 stores

    @property
    def float_pool(self) -> dict:
        return self.link_data

    @property
    def pre_bytes(self) -> bytes:
        return assemble(self.pre)

    @property
    def body_bytes(self) -> bytes:
        return assemble(self.body)


def _sp_from_link(variant) -> list:
    """Zero a scratch register, then sp = LINK >> 0."""
    inv = inventory(variant)
    link = LINK_REG[CharsetVariant.parse(variant)]
    for w, ins in inv.all("sra", rs1=0):
        z = ins["rd"]
        if z in (0, SP, link):
            continue
        w2 = inv.find("sra", rd=SP, rs1=link, rs2=z)
        if w2 is not None:
            return [(w, f"{isa.XREGS[z]} = 0"), (w2, f"sp = {isa.XREGS[link]}")]
    raise LookupError("no sp setup sequence")


def _pieces16(data: bytes) -> list[int]:
    if len(data) % 2:
        data += b"\0"
    return [int.from_bytes(data[i:i + 2], "little") for i in range(0, len(data), 2)]


def build_unpacker_hash(stage2_bytes: bytes, table: LoadTable) -> Unpacker:
    """Two bytes per store: load the halfword into a table target, sd it at
    the next offset.  Offsets 1920..1938 are 2 apart; sp moves by 16 when they
    run out, giving batches of 20, 16 and 4 bytes for 40 bytes."""
    variant = CharsetVariant.HASH
    inv = inventory(variant)
    pieces = _pieces16(stage2_bytes)
    seqs = []
    for i, v in enumerate(pieces):
        seq = lookup(table, v)
        if seq is None:
            raise UnloadableValue(v, i)
        seqs.append(seq)
    offs = None
    for t in TARGETS:
        o = {i["imm"] for _, i in inv.all("sd", rs1=SP, rs2=t)}
        offs = o if offs is None else offs & o
    b0, plan = schedule_stores(len(pieces), 2, offs, HASH_STORE_BASE)
    inc = inv.need("c.addi16sp", imm=16)
    body, k = [], 0
    for kind, off in plan:
        if kind == "inc":
            body.append((inc, "sp += 16"))
            continue
        seq = seqs[k]
        body += [(w, f"load {seq.target16:#06x}") for w in seq.words]
        body.append((inv.need("sd", rs1=SP, rs2=seq.target_reg, imm=off), f"store +{2 * k}"))
        k += 1
    adv = 16 * sum(1 for kind, _ in plan if kind == "inc")
    return Unpacker(variant, _sp_from_link(variant), body, b0, adv)


def stage2_instructions(data: bytes) -> list[tuple[int, int]]:
    """(word, width) for each instruction of a flat stage 2."""
    out, i = [], 0
    while i < len(data):
        lo = int.from_bytes(data[i:i + 2], "little")
        if lo & 3 == 3:
            out.append((int.from_bytes(data[i:i + 4], "little"), 32))
            i += 4
        else:
            out.append((lo, 16))
            i += 2
    return out


JUMP_WORD_SHIFT = 12


@functools.lru_cache(maxsize=None)
def jump_word_data(jump16: int = 0xA031, shift: int = JUMP_WORD_SHIFT) -> tuple[bytes, bytes]:
    """Two charset words W1, W2 with ((W1 & W2) >> shift) carrying ``jump16``
    in bits 32..47.  Bytes are picked lowest-first; unconstrained nibbles use
    'B' & 'B'."""
    want = {}
    for bit in range(16):
        want[32 + shift + bit] = (jump16 >> bit) & 1
    w1, w2 = bytearray(b"B" * 8), bytearray(b"B" * 8)
    cs = sorted(ALNUM_BYTES)
    for byte in range(8):
        bits = {b - 8 * byte: v for b, v in want.items() if 8 * byte <= b < 8 * byte + 8}
        if not bits:
            continue
        for x in cs:
            hit = next((y for y in cs if all(((x & y) >> k) & 1 == v for k, v in bits.items())), None)
            if hit is not None:
                w1[byte], w2[byte] = x, hit
                break
        else:
            raise LookupError("jump word not reachable")
    return bytes(w1), bytes(w2)


def build_unpacker_slash(stage2_bytes: bytes, table: LoadTable, live: frozenset = SLASH_LIVE) -> Unpacker:
    """One 16-byte block per stage-2 instruction, written with amo* at sp.

    First the block-chaining jump word J (0x31A0 in bytes 4..5, zero low
    word) is built in s4 from two data words.  Each block then does
    ``amoand.d zero,s4,(sp); amoor.d zero,s4,(sp)`` (memory becomes J),
    loads the instruction plus a nop-like upper half into T and ors it into
    the low word with ``amoor.w``."""
    variant = CharsetVariant.SLASH
    inv = inventory(variant)
    J = isa.xreg("s4")
    tp, a6, t5 = isa.xreg("tp"), isa.xreg("a6"), isa.xreg("t5")
    w1, w2 = jump_word_data()
    off2 = min(i["imm"] for _, i in inv.all("c.ldsp", rd=J) if i["imm"] >= 8)
    pre = _sp_from_link(variant)
    zero_src = next(i["rs2"] for _, i in inv.all("sra", rd=J, rs1=0))
    pre += [
        (inv.need("c.ldsp", rd=J, imm=off2), "s4 = W2"),
        (inv.need("amoand.d", rd=a6, rs2=J, rs1=SP), "mem = W1 & W2"),
        (inv.need("amoand.d", rd=a6, rs2=J, rs1=SP), "a6 = W1 & W2"),
        (inv.need("c.li", rd=J, imm=JUMP_WORD_SHIFT), "s4 = shift"),
        (inv.need("sra", rd=tp, rs1=a6, rs2=J), "tp = a6 >> shift"),
        (inv.need("sra", rd=J, rs1=0, rs2=zero_src), "s4 = 0"),
        (inv.need("amoand.d", rd=0, rs2=J, rs1=SP), "mem = 0"),
        (inv.need("amoor.d", rd=0, rs2=tp, rs1=SP), "mem = tp"),
        (inv.need("amoand.w", rs2=J, rs1=SP), "clear low word"),
        (inv.need("amoor.d", rd=tp, rs2=J, rs1=SP), "tp = J"),
        (inv.need("sra", rd=J, rs1=tp, rs2=J), "s4 = J"),
    ]
    reset = [(inv.need("amoand.d", rd=0, rs2=J, rs1=SP), "block: mem &= J"),
             (inv.need("amoor.d", rd=0, rs2=J, rs1=SP), "block: mem |= J")]
    inc = inv.need("c.addi16sp", imm=16)
    body = []
    for i, (word, width) in enumerate(stage2_instructions(stage2_bytes)):
        if width == 16:
            seq = seq_for_slash(table, word)
            if seq is not None and not is_nop_like((seq.full_value >> 16) & 0xFFFF, live):
                seq = None
        else:
            seq = _word32(word)
        if seq is None:
            raise UnloadableValue(word, i)
        store = inv.find("amoor.w", rd=t5, rs2=seq.target_reg, rs1=SP) or inv.need("amoor.w", rs2=seq.target_reg, rs1=SP)
        body += reset + [(w, f"load {word:#x}") for w in seq.words] + [(store, f"block {i}"), (inc, "sp += 16")]
    n = len(stage2_instructions(stage2_bytes))
    return Unpacker(variant, pre, body, 0, 16 * n, {0: w1, off2: w2}, align=8)


@functools.lru_cache(maxsize=None)
def _word32(word: int):
    return find_word32(CharsetVariant.SLASH, word)


@dataclass(frozen=True)
class _TickRegs:
    r: int
    b: int
    a: tuple
    c: tuple


def _tick_loaders(inv: Inventory, reg: int) -> list[tuple[str, int, int]]:
    """(base, offset, word) loads of f``reg``; base "sp" or "a4" (both hold the
    link value when they run)."""
    out = [("sp", i["imm"], w) for w, i in inv.all("c.fldsp", rd=reg)]
    out += [("a4", i["imm"], w) for w, i in inv.all("c.fld", rd=reg, rs1=isa.xreg("a4"))]
    return out


def _tick_regs(inv: Inventory, n_a: int, n_c: int) -> _TickRegs:
    rd_ok = {i["rs2"] for _, i in inv.all("fsd", rs1=SP)}
    fm = defaultdict(set)
    for _, i in inv.all("fmadd.d", rm=7):
        fm[i["rd"]].add((i["rs1"], i["rs2"], i["rs3"]))
    loadable = {r for r in range(32) if _tick_loaders(inv, r)}
    for r in sorted(rd_ok & set(fm)):
        combos = fm[r]
        for b in sorted({x[1] for x in combos} & loadable - {r}):
            a_pool = sorted({x[0] for x in combos if x[1] == b} & loadable - {r, b})
            c_pool = sorted({x[2] for x in combos if x[1] == b} & loadable - {r, b})
            for c in _choose(c_pool, n_c):
                a = [x for x in a_pool if x not in c and all((x, b, y) in combos for y in c)][:n_a]
                if len(a) == n_a:
                    return _TickRegs(r, b, tuple(a), tuple(c))
    raise LookupError("no floating-point register assignment")


def _choose(pool, n):
    import itertools
    return itertools.combinations(pool, n)


def build_unpacker_tick(stage2_bytes: bytes, constants) -> Unpacker:
    """fmadd r,a,b,c then fsd r at offsets 6 apart, each store keeping the low
    six bytes of r.  Constants live at fixed offsets from the link value and
    are loaded before the fixup moves sp."""
    from .fp_solver import split_equations

    variant = CharsetVariant.TICK
    inv = inventory(variant)
    targets = split_equations(stage2_bytes)
    if not constants.verify() or constants.targets() != targets:
        raise ValueError("constants do not solve this stage 2")
    n_a = len(constants.pairs)
    regs = _tick_regs(inv, n_a, 2 * n_a - (1 if constants.pairs[-1][2] is None else 0))
    want = [(regs.b, constants.b, "b")]
    ci = 0
    for k, (a, c1, c2) in enumerate(constants.pairs):
        want.append((regs.a[k], a, f"a{k}"))
        for c in (c1, c2):
            if c is not None:
                want.append((regs.c[ci], c, f"c{ci}"))
                ci += 1
    used, pre, pool = set(), _sp_from_link(variant), {}
    for reg, value, name in want:
        for base, off, w in sorted(_tick_loaders(inv, reg), key=lambda t: (t[0] != "sp", t[1])):
            if off not in used:
                used.add(off)
                pool[off] = value.to_bytes(8, "little")
                pre.append((w, f"f{reg} = {name}"))
                break
        else:
            raise LookupError(f"no load slot for {name}")
    offs = {i["imm"] for _, i in inv.all("fsd", rs1=SP, rs2=regs.r)}
    b0, plan = schedule_stores(len(targets), 6, offs, TICK_STORE_BASE)
    inc = inv.need("c.addi16sp", imm=16)
    body, k = [], 0
    for kind, off in plan:
        if kind == "inc":
            body.append((inc, "sp += 16"))
            continue
        a_reg, c_reg = regs.a[k // 2], regs.c[k]
        body.append((inv.need("fmadd.d", rd=regs.r, rs1=a_reg, rs2=regs.b, rs3=c_reg, rm=7), f"r = a*b + c{k}"))
        body.append((inv.need("fsd", rs1=SP, rs2=regs.r, imm=off), f"store +{6 * k}"))
        k += 1
    adv = 16 * sum(1 for kind, _ in plan if kind == "inc")
    return Unpacker(variant, pre, body, b0, adv, pool)
