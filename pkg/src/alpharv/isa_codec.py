"""RV64GC (+Q, Zicsr, Zifencei) instruction codec.

Decoding follows the v2.2 encoding tables.  Compressed words decode to their
own ``c.*`` mnemonic; ``expand`` maps them onto the base instruction they stand
for, which is what the emulator executes and what catalogs group by.
"""
from __future__ import annotations

from dataclasses import dataclass, field

XREGS = ["zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5",
         "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6"]
FREGS = ["ft0", "ft1", "ft2", "ft3", "ft4", "ft5", "ft6", "ft7", "fs0", "fs1", "fa0", "fa1", "fa2", "fa3", "fa4", "fa5",
         "fa6", "fa7", "fs2", "fs3", "fs4", "fs5", "fs6", "fs7", "fs8", "fs9", "fs10", "fs11", "ft8", "ft9", "ft10", "ft11"]
ROUNDING = {0: "rne", 1: "rtz", 2: "rdn", 3: "rup", 4: "rmm", 7: "dyn"}
_XNUM = {n: i for i, n in enumerate(XREGS)} | {"fp": 8} | {f"x{i}": i for i in range(32)}
_FNUM = {n: i for i, n in enumerate(FREGS)} | {f"f{i}": i for i in range(32)}

REG_ROLES = ("rd", "rs1", "rs2", "rs3")


class NotEncodable(ValueError):
    pass


@dataclass(frozen=True)
class RegName:
    index: int
    bank: str = "integer"

    @property
    def abi(self) -> str:
        return (XREGS if self.bank == "integer" else FREGS)[self.index]

    @classmethod
    def parse(cls, name: str) -> "RegName":
        if name in _XNUM:
            return cls(_XNUM[name])
        if name in _FNUM:
            return cls(_FNUM[name], "float")
        raise KeyError(name)


def xreg(name: str) -> int:
    return _XNUM[name]


def freg(name: str) -> int:
    return _FNUM[name]


@dataclass(frozen=True)
class InstrWord:
    width: int
    value: int

    def __post_init__(self):
        if self.width == 16:
            assert self.value & 3 != 3 and 0 <= self.value < 1 << 16
        else:
            assert self.width == 32 and self.value & 0x1F != 0x1F and self.value & 3 == 3
            assert 0 <= self.value < 1 << 32

    @property
    def bytes(self) -> bytes:
        return self.value.to_bytes(self.width // 8, "little")

    @classmethod
    def from_bytes(cls, data: bytes) -> "InstrWord":
        return cls(len(data) * 8, int.from_bytes(data, "little"))


@dataclass(frozen=True)
class Instr:
    """A decoded instruction: mnemonic plus ordered (role, value) operands.

    Register operands are plain indices; ``fp`` names the roles that index the
    float register file.
    """
    mnemonic: str
    operands: tuple = ()
    ext: str = "I"
    width: int = 32
    fp: frozenset = field(default_factory=frozenset)
    hint: bool = False

    def __getitem__(self, role: str) -> int:
        for r, v in self.operands:
            if r == role:
                return v
        raise KeyError(role)

    def get(self, role: str, default=None):
        for r, v in self.operands:
            if r == role:
                return v
        return default

    @property
    def roles(self) -> dict:
        return dict(self.operands)

    def same_as(self, other: "Instr") -> bool:
        return self.mnemonic == other.mnemonic and self.roles == other.roles


def classify_width(first_byte: int) -> int | str:
    if first_byte & 3 != 3:
        return 16
    if first_byte & 0x1C != 0x1C:
        return 32
    return "other"


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


# ---------------------------------------------------------------------------
# 32-bit formats

# name -> (format, ext, fixed fields, float roles)
_OPS32: dict[str, tuple] = {}
_BY_OPCODE: dict[int, list[str]] = {}


def _op(name, fmt, ext, fp=(), **fixed):
    _OPS32[name] = (fmt, ext, fixed, frozenset(fp))
    _BY_OPCODE.setdefault(fixed["opcode"], []).append(name)


def _build_table():
    _op("lui", "U", "I", opcode=0x37)
    _op("auipc", "U", "I", opcode=0x17)
    _op("jal", "J", "I", opcode=0x6F)
    _op("jalr", "I", "I", opcode=0x67, funct3=0)
    for i, n in enumerate(["beq", "bne", None, None, "blt", "bge", "bltu", "bgeu"]):
        if n:
            _op(n, "B", "I", opcode=0x63, funct3=i)
    for i, n in enumerate(["lb", "lh", "lw", "ld", "lbu", "lhu", "lwu"]):
        _op(n, "I", "I", opcode=0x03, funct3=i)
    for i, n in enumerate(["sb", "sh", "sw", "sd"]):
        _op(n, "S", "I", opcode=0x23, funct3=i)
    for i, n in [(0, "addi"), (2, "slti"), (3, "sltiu"), (4, "xori"), (6, "ori"), (7, "andi")]:
        _op(n, "I", "I", opcode=0x13, funct3=i)
    _op("slli", "SH6", "I", opcode=0x13, funct3=1, funct6=0)
    _op("srli", "SH6", "I", opcode=0x13, funct3=5, funct6=0)
    _op("srai", "SH6", "I", opcode=0x13, funct3=5, funct6=0x10)
    _op("addiw", "I", "I", opcode=0x1B, funct3=0)
    _op("slliw", "SH5", "I", opcode=0x1B, funct3=1, funct7=0)
    _op("srliw", "SH5", "I", opcode=0x1B, funct3=5, funct7=0)
    _op("sraiw", "SH5", "I", opcode=0x1B, funct3=5, funct7=0x20)
    for f3, n, f7 in [(0, "add", 0), (0, "sub", 0x20), (1, "sll", 0), (2, "slt", 0), (3, "sltu", 0), (4, "xor", 0),
                      (5, "srl", 0), (5, "sra", 0x20), (6, "or", 0), (7, "and", 0)]:
        _op(n, "R", "I", opcode=0x33, funct3=f3, funct7=f7)
    for f3, n in enumerate(["mul", "mulh", "mulhsu", "mulhu", "div", "divu", "rem", "remu"]):
        _op(n, "R", "M", opcode=0x33, funct3=f3, funct7=1)
    for f3, n, f7 in [(0, "addw", 0), (0, "subw", 0x20), (1, "sllw", 0), (5, "srlw", 0), (5, "sraw", 0x20)]:
        _op(n, "R", "I", opcode=0x3B, funct3=f3, funct7=f7)
    for f3, n in [(0, "mulw"), (4, "divw"), (5, "divuw"), (6, "remw"), (7, "remuw")]:
        _op(n, "R", "M", opcode=0x3B, funct3=f3, funct7=1)
    _op("fence", "FENCE", "I", opcode=0x0F, funct3=0)
    _op("fence.i", "I", "Zifencei", opcode=0x0F, funct3=1)
    _op("ecall", "SYS", "I", opcode=0x73, word=0x00000073)
    _op("ebreak", "SYS", "I", opcode=0x73, word=0x00100073)
    for f3, n in [(1, "csrrw"), (2, "csrrs"), (3, "csrrc")]:
        _op(n, "CSR", "Zicsr", opcode=0x73, funct3=f3)
    for f3, n in [(5, "csrrwi"), (6, "csrrsi"), (7, "csrrci")]:
        _op(n, "CSRI", "Zicsr", opcode=0x73, funct3=f3)
    for sz, f3 in (("w", 2), ("d", 3)):
        _op(f"lr.{sz}", "LR", "A", opcode=0x2F, funct3=f3, funct5=0b00010, rs2=0)
        for f5, n in [(0b00011, "sc"), (0b00001, "amoswap"), (0, "amoadd"), (0b00100, "amoxor"), (0b01100, "amoand"),
                      (0b01000, "amoor"), (0b10000, "amomin"), (0b10100, "amomax"), (0b11000, "amominu"),
                      (0b11100, "amomaxu")]:
            _op(f"{n}.{sz}", "AMO", "A", opcode=0x2F, funct3=f3, funct5=f5)
    for sfx, fmt, ext, width_f3 in (("s", 0, "F", 2), ("d", 1, "D", 3), ("q", 3, "Q", 4)):
        _op(f"fl{'w' if sfx == 's' else sfx}", "I", ext, fp=("rd",), opcode=0x07, funct3=width_f3)
        _op(f"fs{'w' if sfx == 's' else sfx}", "S", ext, fp=("rs2",), opcode=0x27, funct3=width_f3)
        for opc, n in [(0x43, "fmadd"), (0x47, "fmsub"), (0x4B, "fnmsub"), (0x4F, "fnmadd")]:
            _op(f"{n}.{sfx}", "R4", ext, fp=REG_ROLES, opcode=opc, fmt2=fmt)
        for f7, n in [(0x00, "fadd"), (0x04, "fsub"), (0x08, "fmul"), (0x0C, "fdiv")]:
            _op(f"{n}.{sfx}", "RRM", ext, fp=("rd", "rs1", "rs2"), opcode=0x53, funct7=f7 | fmt)
        _op(f"fsqrt.{sfx}", "R1RM", ext, fp=("rd", "rs1"), opcode=0x53, funct7=0x2C | fmt, rs2=0)
        for f3, n in [(0, "fsgnj"), (1, "fsgnjn"), (2, "fsgnjx")]:
            _op(f"{n}.{sfx}", "R", ext, fp=("rd", "rs1", "rs2"), opcode=0x53, funct7=0x10 | fmt, funct3=f3)
        for f3, n in [(0, "fmin"), (1, "fmax")]:
            _op(f"{n}.{sfx}", "R", ext, fp=("rd", "rs1", "rs2"), opcode=0x53, funct7=0x14 | fmt, funct3=f3)
        for f3, n in [(2, "feq"), (1, "flt"), (0, "fle")]:
            _op(f"{n}.{sfx}", "R", ext, fp=("rs1", "rs2"), opcode=0x53, funct7=0x50 | fmt, funct3=f3)
        _op(f"fclass.{sfx}", "R1", ext, fp=("rs1",), opcode=0x53, funct7=0x70 | fmt, funct3=1, rs2=0)
        for r2, it in enumerate(["w", "wu", "l", "lu"]):
            _op(f"fcvt.{it}.{sfx}", "R1RM", ext, fp=("rs1",), opcode=0x53, funct7=0x60 | fmt, rs2=r2)
            _op(f"fcvt.{sfx}.{it}", "R1RM", ext, fp=("rd",), opcode=0x53, funct7=0x68 | fmt, rs2=r2)
    for dst, dfmt, src, sfmt, ext in [("s", 0, "d", 1, "D"), ("d", 1, "s", 0, "D"), ("s", 0, "q", 3, "Q"),
                                      ("q", 3, "s", 0, "Q"), ("d", 1, "q", 3, "Q"), ("q", 3, "d", 1, "Q")]:
        _op(f"fcvt.{dst}.{src}", "R1RM", ext, fp=("rd", "rs1"), opcode=0x53, funct7=0x20 | dfmt, rs2=sfmt)
    _op("fmv.x.w", "R1", "F", fp=("rs1",), opcode=0x53, funct7=0x70, funct3=0, rs2=0)
    _op("fmv.w.x", "R1", "F", fp=("rd",), opcode=0x53, funct7=0x78, funct3=0, rs2=0)
    _op("fmv.x.d", "R1", "D", fp=("rs1",), opcode=0x53, funct7=0x71, funct3=0, rs2=0)
    _op("fmv.d.x", "R1", "D", fp=("rd",), opcode=0x53, funct7=0x79, funct3=0, rs2=0)


_build_table()

_FIELDS = {
    "opcode": (0, 7), "funct3": (12, 3), "funct7": (25, 7), "funct6": (26, 6), "funct5": (27, 5),
    "fmt2": (25, 2), "rs2": (20, 5),
}
# operand roles per format, in rendering order
_ROLES = {
    "R": ("rd", "rs1", "rs2"), "RRM": ("rd", "rs1", "rs2", "rm"), "R1": ("rd", "rs1"), "R1RM": ("rd", "rs1", "rm"),
    "R4": ("rd", "rs1", "rs2", "rs3", "rm"), "I": ("rd", "rs1", "imm"), "SH6": ("rd", "rs1", "shamt"),
    "SH5": ("rd", "rs1", "shamt"), "S": ("rs2", "rs1", "imm"), "B": ("rs1", "rs2", "imm"), "U": ("rd", "imm"),
    "J": ("rd", "imm"), "CSR": ("rd", "csr", "rs1"), "CSRI": ("rd", "csr", "imm"), "AMO": ("rd", "rs2", "rs1", "aqrl"),
    "LR": ("rd", "rs1", "aqrl"), "FENCE": ("fm", "pred", "succ"), "SYS": (),
}


def _field(w: int, name: str) -> int:
    lo, n = _FIELDS[name]
    return (w >> lo) & ((1 << n) - 1)


def _matches(w: int, fixed: dict) -> bool:
    for k, v in fixed.items():
        if k == "word":
            if w != v:
                return False
        elif _field(w, k) != v:
            return False
    return True


def _operands32(w: int, fmt: str) -> tuple:
    rd, rs1, rs2, f3 = (w >> 7) & 31, (w >> 15) & 31, (w >> 20) & 31, (w >> 12) & 7
    if fmt == "R":
        return (("rd", rd), ("rs1", rs1), ("rs2", rs2))
    if fmt == "RRM":
        return (("rd", rd), ("rs1", rs1), ("rs2", rs2), ("rm", f3))
    if fmt == "R1":
        return (("rd", rd), ("rs1", rs1))
    if fmt == "R1RM":
        return (("rd", rd), ("rs1", rs1), ("rm", f3))
    if fmt == "R4":
        return (("rd", rd), ("rs1", rs1), ("rs2", rs2), ("rs3", w >> 27), ("rm", f3))
    if fmt == "I":
        return (("rd", rd), ("rs1", rs1), ("imm", sext(w >> 20, 12)))
    if fmt == "SH6":
        return (("rd", rd), ("rs1", rs1), ("shamt", (w >> 20) & 63))
    if fmt == "SH5":
        return (("rd", rd), ("rs1", rs1), ("shamt", (w >> 20) & 31))
    if fmt == "S":
        return (("rs2", rs2), ("rs1", rs1), ("imm", sext(((w >> 25) << 5) | ((w >> 7) & 31), 12)))
    if fmt == "B":
        imm = ((w >> 31) << 12) | (((w >> 7) & 1) << 11) | (((w >> 25) & 63) << 5) | (((w >> 8) & 15) << 1)
        return (("rs1", rs1), ("rs2", rs2), ("imm", sext(imm, 13)))
    if fmt == "U":
        return (("rd", rd), ("imm", w >> 12))
    if fmt == "J":
        imm = ((w >> 31) << 20) | (((w >> 12) & 0xFF) << 12) | (((w >> 20) & 1) << 11) | (((w >> 21) & 0x3FF) << 1)
        return (("rd", rd), ("imm", sext(imm, 21)))
    if fmt == "CSR":
        return (("rd", rd), ("csr", w >> 20), ("rs1", rs1))
    if fmt == "CSRI":
        return (("rd", rd), ("csr", w >> 20), ("imm", rs1))
    if fmt == "AMO":
        return (("rd", rd), ("rs2", rs2), ("rs1", rs1), ("aqrl", (w >> 25) & 3))
    if fmt == "LR":
        return (("rd", rd), ("rs1", rs1), ("aqrl", (w >> 25) & 3))
    if fmt == "FENCE":
        return (("fm", w >> 28), ("pred", (w >> 24) & 15), ("succ", (w >> 20) & 15))
    return ()


def _decode32(w: int) -> Instr | None:
    for name in _BY_OPCODE.get(w & 0x7F, ()):
        fmt, ext, fixed, fp = _OPS32[name]
        if not _matches(w, fixed):
            continue
        ops = _operands32(w, fmt)
        if fmt in ("RRM", "R1RM", "R4") and (w >> 12) & 7 in (5, 6):
            return None
        return Instr(name, ops, ext, 32, fp)
    return None


def _encode32(ins: Instr) -> int:
    try:
        fmt, _, fixed, _ = _OPS32[ins.mnemonic]
    except KeyError:
        raise NotEncodable(f"unknown mnemonic {ins.mnemonic}") from None
    if "word" in fixed:
        return fixed["word"]
    w = 0
    for k, v in fixed.items():
        lo, n = _FIELDS[k]
        w |= v << lo
    o = ins.roles

    def reg(role):
        v = o.get(role, 0)
        if not 0 <= v < 32:
            raise NotEncodable(f"{role}={v}")
        return v

    def ranged(v, bits, signed):
        lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if signed else (0, (1 << bits) - 1)
        if not lo <= v <= hi:
            raise NotEncodable(f"{ins.mnemonic}: immediate {v} out of range")
        return v & ((1 << bits) - 1)

    if fmt in ("R", "RRM", "R1", "R1RM", "R4", "I", "SH6", "SH5", "U", "J", "CSR", "CSRI", "AMO", "LR"):
        w |= reg("rd") << 7
    if fmt in ("R", "RRM", "R1", "R1RM", "R4", "I", "SH6", "SH5", "S", "B", "CSR", "AMO", "LR"):
        w |= reg("rs1") << 15
    if fmt in ("R", "RRM", "R4", "S", "B", "AMO"):
        w |= reg("rs2") << 20
    if fmt in ("RRM", "R1RM", "R4"):
        rm = o.get("rm", 0)
        if rm not in ROUNDING:
            raise NotEncodable(f"rounding mode {rm}")
        w |= rm << 12
    if fmt == "R4":
        w |= reg("rs3") << 27
    elif fmt == "I":
        w |= ranged(o.get("imm", 0), 12, True) << 20
    elif fmt == "SH6":
        w |= ranged(o["shamt"], 6, False) << 20
    elif fmt == "SH5":
        w |= ranged(o["shamt"], 5, False) << 20
    elif fmt == "S":
        imm = ranged(o["imm"], 12, True)
        w |= ((imm & 31) << 7) | ((imm >> 5) << 25)
    elif fmt == "B":
        if o["imm"] & 1:
            raise NotEncodable("odd branch offset")
        imm = ranged(o["imm"], 13, True)
        w |= (((imm >> 11) & 1) << 7) | (((imm >> 1) & 15) << 8) | (((imm >> 5) & 63) << 25) | ((imm >> 12) << 31)
    elif fmt == "U":
        w |= ranged(o["imm"], 20, False) << 12
    elif fmt == "J":
        if o["imm"] & 1:
            raise NotEncodable("odd jump offset")
        imm = ranged(o["imm"], 21, True)
        w |= (((imm >> 12) & 0xFF) << 12) | (((imm >> 11) & 1) << 20) | (((imm >> 1) & 0x3FF) << 21) | ((imm >> 20) << 31)
    elif fmt in ("CSR", "CSRI"):
        w |= ranged(o["csr"], 12, False) << 20
        if fmt == "CSRI":
            w |= ranged(o["imm"], 5, False) << 15
    elif fmt in ("AMO", "LR"):
        w |= ranged(o.get("aqrl", 0), 2, False) << 25
    elif fmt == "FENCE":
        w |= (ranged(o.get("fm", 0), 4, False) << 28) | (ranged(o.get("pred", 15), 4, False) << 24)
        w |= ranged(o.get("succ", 15), 4, False) << 20
    return w


# ---------------------------------------------------------------------------
# compressed formats
#
# Immediate scrambles list, from the highest word bit of a field down to the
# lowest, which immediate bit each word bit carries.

def _bits(w: int, hi: int, lo: int) -> int:
    return (w >> lo) & ((1 << (hi - lo + 1)) - 1)


_CIMM = {
    # name: (word bits hi, lo, immediate bit order)
    "addi4spn": (12, 5, (5, 4, 9, 8, 7, 6, 2, 3)),
    "ld": ((12, 10, (5, 4, 3)), (6, 5, (7, 6))),
    "lw": ((12, 10, (5, 4, 3)), (6, 5, (2, 6))),
    "ci": ((12, 12, (5,)), (6, 2, (4, 3, 2, 1, 0))),
    "addi16sp": ((12, 12, (9,)), (6, 2, (4, 6, 8, 7, 5))),
    "lui": ((12, 12, (5,)), (6, 2, (4, 3, 2, 1, 0))),
    "j": ((12, 2, (11, 4, 9, 8, 10, 6, 7, 3, 2, 1, 5)),),
    "b": ((12, 10, (8, 4, 3)), (6, 2, (7, 6, 2, 1, 5))),
    "ldsp": ((12, 12, (5,)), (6, 2, (4, 3, 8, 7, 6))),
    "lwsp": ((12, 12, (5,)), (6, 2, (4, 3, 2, 7, 6))),
    "sdsp": ((12, 7, (5, 4, 3, 8, 7, 6)),),
    "swsp": ((12, 7, (5, 4, 3, 2, 7, 6)),),
}
_CIMM["addi4spn"] = (_CIMM["addi4spn"],)


def _gather(w: int, key: str) -> int:
    imm = 0
    for hi, lo, order in _CIMM[key]:
        for k, ib in enumerate(order):
            imm |= ((w >> (hi - k)) & 1) << ib
    return imm


def _scatter(imm: int, key: str) -> int:
    w = 0
    for hi, lo, order in _CIMM[key]:
        for k, ib in enumerate(order):
            w |= ((imm >> ib) & 1) << (hi - k)
    return w


def _imm_width(key: str) -> int:
    return max(b for _, _, order in _CIMM[key] for b in order) + 1


# name -> (quadrant, funct3, imm key, signed, operand layout, ext, float roles)
# layout entries: role -> ("p", lsb) prime register, ("f", lsb) full register, ("sp",) implicit
_CSPEC = {
    "c.addi4spn": (0, 0, "addi4spn", False, {"rd": ("p", 2)}, "C", ()),
    "c.fld": (0, 1, "ld", False, {"rd": ("p", 2), "rs1": ("p", 7)}, "D", ("rd",)),
    "c.lw": (0, 2, "lw", False, {"rd": ("p", 2), "rs1": ("p", 7)}, "C", ()),
    "c.ld": (0, 3, "ld", False, {"rd": ("p", 2), "rs1": ("p", 7)}, "C", ()),
    "c.fsd": (0, 5, "ld", False, {"rs2": ("p", 2), "rs1": ("p", 7)}, "D", ("rs2",)),
    "c.sw": (0, 6, "lw", False, {"rs2": ("p", 2), "rs1": ("p", 7)}, "C", ()),
    "c.sd": (0, 7, "ld", False, {"rs2": ("p", 2), "rs1": ("p", 7)}, "C", ()),
    "c.nop": (1, 0, "ci", True, {}, "C", ()),
    "c.addi": (1, 0, "ci", True, {"rd": ("f", 7)}, "C", ()),
    "c.addiw": (1, 1, "ci", True, {"rd": ("f", 7)}, "C", ()),
    "c.li": (1, 2, "ci", True, {"rd": ("f", 7)}, "C", ()),
    "c.addi16sp": (1, 3, "addi16sp", True, {}, "C", ()),
    "c.lui": (1, 3, "lui", True, {"rd": ("f", 7)}, "C", ()),
    "c.srli": (1, 4, "ci", False, {"rd": ("p", 7)}, "C", ()),
    "c.srai": (1, 4, "ci", False, {"rd": ("p", 7)}, "C", ()),
    "c.andi": (1, 4, "ci", True, {"rd": ("p", 7)}, "C", ()),
    "c.sub": (1, 4, None, False, {"rd": ("p", 7), "rs2": ("p", 2)}, "C", ()),
    "c.xor": (1, 4, None, False, {"rd": ("p", 7), "rs2": ("p", 2)}, "C", ()),
    "c.or": (1, 4, None, False, {"rd": ("p", 7), "rs2": ("p", 2)}, "C", ()),
    "c.and": (1, 4, None, False, {"rd": ("p", 7), "rs2": ("p", 2)}, "C", ()),
    "c.subw": (1, 4, None, False, {"rd": ("p", 7), "rs2": ("p", 2)}, "C", ()),
    "c.addw": (1, 4, None, False, {"rd": ("p", 7), "rs2": ("p", 2)}, "C", ()),
    "c.j": (1, 5, "j", True, {}, "C", ()),
    "c.beqz": (1, 6, "b", True, {"rs1": ("p", 7)}, "C", ()),
    "c.bnez": (1, 7, "b", True, {"rs1": ("p", 7)}, "C", ()),
    "c.slli": (2, 0, "ci", False, {"rd": ("f", 7)}, "C", ()),
    "c.fldsp": (2, 1, "ldsp", False, {"rd": ("f", 7)}, "D", ("rd",)),
    "c.lwsp": (2, 2, "lwsp", False, {"rd": ("f", 7)}, "C", ()),
    "c.ldsp": (2, 3, "ldsp", False, {"rd": ("f", 7)}, "C", ()),
    "c.jr": (2, 4, None, False, {"rs1": ("f", 7)}, "C", ()),
    "c.mv": (2, 4, None, False, {"rd": ("f", 7), "rs2": ("f", 2)}, "C", ()),
    "c.ebreak": (2, 4, None, False, {}, "C", ()),
    "c.jalr": (2, 4, None, False, {"rs1": ("f", 7)}, "C", ()),
    "c.add": (2, 4, None, False, {"rd": ("f", 7), "rs2": ("f", 2)}, "C", ()),
    "c.fsdsp": (2, 5, "sdsp", False, {"rs2": ("f", 2)}, "D", ("rs2",)),
    "c.swsp": (2, 6, "swsp", False, {"rs2": ("f", 2)}, "C", ()),
    "c.sdsp": (2, 7, "sdsp", False, {"rs2": ("f", 2)}, "C", ()),
}
_ARITH = {(0, 0): "c.sub", (0, 1): "c.xor", (0, 2): "c.or", (0, 3): "c.and", (1, 0): "c.subw", (1, 1): "c.addw"}
_ARITH_INV = {v: k for k, v in _ARITH.items()}
_MEMOPS = {"c.addi4spn", "c.fld", "c.lw", "c.ld", "c.fsd", "c.sw", "c.sd", "c.fldsp", "c.lwsp", "c.ldsp",
           "c.fsdsp", "c.swsp", "c.sdsp"}


def _cname(w: int) -> str | None:
    q, f3 = w & 3, w >> 13
    b12 = (w >> 12) & 1
    rd = (w >> 7) & 31
    rs2 = (w >> 2) & 31
    if q == 0:
        return {0: "c.addi4spn", 1: "c.fld", 2: "c.lw", 3: "c.ld", 5: "c.fsd", 6: "c.sw", 7: "c.sd"}.get(f3)
    if q == 1:
        if f3 == 0:
            return "c.nop" if rd == 0 else "c.addi"
        if f3 == 3:
            return "c.addi16sp" if rd == 2 else "c.lui"
        if f3 == 4:
            f2 = (w >> 10) & 3
            if f2 < 3:
                return ("c.srli", "c.srai", "c.andi")[f2]
            return _ARITH.get((b12, (w >> 5) & 3))
        return {1: "c.addiw", 2: "c.li", 5: "c.j", 6: "c.beqz", 7: "c.bnez"}[f3]
    if f3 == 4:
        if b12 == 0:
            return "c.jr" if rs2 == 0 else "c.mv"
        if rs2 == 0:
            return "c.ebreak" if rd == 0 else "c.jalr"
        return "c.add"
    return {0: "c.slli", 1: "c.fldsp", 2: "c.lwsp", 3: "c.ldsp", 5: "c.fsdsp", 6: "c.swsp", 7: "c.sdsp"}.get(f3)


def _decode16(w: int) -> Instr | None:
    if w == 0:
        return None
    name = _cname(w)
    if name is None:
        return None
    q, f3, key, signed, layout, ext, fp = _CSPEC[name]
    ops = []
    for role, spec in layout.items():
        if spec[0] == "p":
            ops.append((role, 8 + ((w >> spec[1]) & 7)))
        else:
            ops.append((role, (w >> spec[1]) & 31))
    if key is not None:
        imm = _gather(w, key)
        if signed:
            imm = sext(imm, _imm_width(key))
        ops.append(("shamt" if name in ("c.slli", "c.srli", "c.srai") else "imm", imm))
    if name == "c.nop":
        ops = [o for o in ops if o[0] != "rd"]
    o = dict(ops)
    imm = o.get("imm", o.get("shamt"))
    hint = False
    if name == "c.addi4spn" and imm == 0:
        return None
    if name in ("c.addi16sp", "c.lui") and imm == 0:
        return None
    if name in ("c.lwsp", "c.ldsp", "c.addiw") and o["rd"] == 0:
        return None
    if name == "c.jr" and o["rs1"] == 0:
        return None
    if name == "c.nop" and imm != 0:
        hint = True
    elif name == "c.addi" and imm == 0:
        hint = True
    elif name in ("c.li", "c.lui", "c.mv", "c.add") and o["rd"] == 0:
        hint = True
    elif name == "c.slli" and (o["rd"] == 0 or imm == 0):
        hint = True
    elif name in ("c.srli", "c.srai") and imm == 0:
        hint = True
    if name == "c.lui":
        ops = [("rd", o["rd"]), ("imm", imm & 0xFFFFF)]
    return Instr(name, tuple(ops), ext, 16, frozenset(fp), hint)


def _encode16(ins: Instr) -> int:
    name = ins.mnemonic
    if name not in _CSPEC:
        raise NotEncodable(f"{name} has no compressed encoding")
    q, f3, key, signed, layout, ext, fp = _CSPEC[name]
    o = ins.roles
    w = q | (f3 << 13)
    for role, spec in layout.items():
        v = o.get(role, 0)
        if spec[0] == "p":
            if not 8 <= v <= 15:
                raise NotEncodable(f"{name}: {role} must be x8..x15")
            w |= (v - 8) << spec[1]
        else:
            if not 0 <= v < 32:
                raise NotEncodable(f"{name}: {role}={v}")
            w |= v << spec[1]
    if key is not None:
        imm = o.get("imm", o.get("shamt", 0))
        if name == "c.lui":
            imm = sext(imm, 20)
        width = _imm_width(key)
        # low bits that the scramble does not carry must be zero
        carried = 0
        for _, _, order in _CIMM[key]:
            for b in order:
                carried |= 1 << b
        lo, hi = (-(1 << (width - 1)), (1 << (width - 1)) - 1) if signed else (0, (1 << width) - 1)
        if not lo <= imm <= hi or imm & ~carried & ((1 << width) - 1):
            raise NotEncodable(f"{name}: immediate {imm} not encodable")
        w |= _scatter(imm & ((1 << width) - 1), key)
    if name in ("c.srli", "c.srai", "c.andi"):
        w |= ("c.srli", "c.srai", "c.andi").index(name) << 10
    elif name in _ARITH_INV:
        b12, f2 = _ARITH_INV[name]
        w |= (3 << 10) | (b12 << 12) | (f2 << 5)
    elif name == "c.addi16sp":
        w |= 2 << 7
    elif name in ("c.ebreak", "c.jalr", "c.add"):
        w |= 1 << 12
    if _decode16(w) is None or _cname(w) != name:
        raise NotEncodable(f"{name}: operands select a reserved encoding")
    return w


# ---------------------------------------------------------------------------
# public API

def decode(word: InstrWord | int, width: int | None = None) -> Instr | None:
    """Decode a word; ``None`` stands for Invalid."""
    if isinstance(word, InstrWord):
        width, value = word.width, word.value
    else:
        value = word
        if width is None:
            width = 16 if value & 3 != 3 else 32
    if width == 16:
        return _decode16(value)
    if value & 0x1F == 0x1F:
        raise ValueError("not a 32-bit encoding")
    return _decode32(value)


def decode_bytes(data: bytes, offset: int = 0) -> Instr | None:
    w = classify_width(data[offset])
    if w == "other":
        return None
    return decode(int.from_bytes(data[offset:offset + w // 8], "little"), w)


def encode(ins: Instr, preferred_width: int | str = "any") -> InstrWord:
    if ins.mnemonic.startswith("c."):
        if preferred_width == 32:
            raise NotEncodable("compressed mnemonic at width 32")
        return InstrWord(16, _encode16(ins))
    if preferred_width == 32:
        return InstrWord(32, _encode32(ins))
    if preferred_width == 16:
        return InstrWord(16, _encode16(compress(ins)))
    try:
        return InstrWord(16, _encode16(compress(ins)))
    except NotEncodable:
        return InstrWord(32, _encode32(ins))


def make(mnemonic: str, **ops) -> Instr:
    """Build an Instr from keyword operands; register names are accepted."""
    if mnemonic in _OPS32:
        fmt, ext, _, fp = _OPS32[mnemonic]
        order, width = _ROLES[fmt], 32
    elif mnemonic in _CSPEC:
        _, _, key, _, layout, ext, fp = _CSPEC[mnemonic]
        fp = frozenset(fp)
        order = tuple(layout) + ((("shamt" if mnemonic in ("c.slli", "c.srli", "c.srai") else "imm"),)
                                 if key else ())
        width = 16
    else:
        raise NotEncodable(f"unknown mnemonic {mnemonic}")
    vals = []
    for role in order:
        if role not in ops:
            if role in ("rm",):
                v = 7
            elif role in ("aqrl", "fm"):
                v = 0
            elif role in ("pred", "succ"):
                v = 15
            elif role in REG_ROLES or role in ("imm", "shamt", "csr"):
                v = 0
            else:
                continue
        else:
            v = ops[role]
        if isinstance(v, str):
            v = _FNUM[v] if role in fp else _XNUM[v]
        vals.append((role, v))
    if mnemonic == "c.lui":
        vals = [(r, v & 0xFFFFF if r == "imm" else v) for r, v in vals]
    if mnemonic == "fence.i":
        vals = [("rd", 0), ("rs1", 0), ("imm", 0)]
    return Instr(mnemonic, tuple(vals), ext, width, frozenset(fp))


def asm(mnemonic: str, **ops) -> bytes:
    return encode(make(mnemonic, **ops), 16 if mnemonic.startswith("c.") else 32).bytes


# base forms of compressed instructions; the catalog groups by these names
_EXPAND_NAME = {
    "c.addi4spn": "addi", "c.fld": "fld", "c.lw": "lw", "c.ld": "ld", "c.fsd": "fsd", "c.sw": "sw", "c.sd": "sd",
    "c.nop": "nop", "c.addi": "addi", "c.addiw": "addiw", "c.li": "li", "c.addi16sp": "addi", "c.lui": "lui",
    "c.srli": "srli", "c.srai": "srai", "c.andi": "andi", "c.sub": "sub", "c.xor": "xor", "c.or": "or",
    "c.and": "and", "c.subw": "subw", "c.addw": "addw", "c.j": "j", "c.beqz": "beqz", "c.bnez": "bnez",
    "c.slli": "slli", "c.fldsp": "fld", "c.lwsp": "lw", "c.ldsp": "ld", "c.jr": "jr", "c.mv": "mv",
    "c.ebreak": "ebreak", "c.jalr": "jalr", "c.add": "add", "c.fsdsp": "fsd", "c.swsp": "sw", "c.sdsp": "sd",
}


def base_mnemonic(ins: Instr) -> str:
    """Catalog grouping key: compressed forms fold onto the mnemonic a
    disassembler prints for them; hint encodings get their own group."""
    if ins.hint:
        return "hint"
    return _EXPAND_NAME.get(ins.mnemonic, ins.mnemonic)


def expand(ins: Instr) -> Instr:
    """Rewrite a compressed instruction as the base instruction it encodes."""
    if ins.width == 32:
        return ins
    n, o = ins.mnemonic, ins.roles
    sp = 2

    def mk(name, **kw):
        fmt, ext, _, fp = _OPS32[name]
        return Instr(name, tuple((r, kw[r]) for r in _ROLES[fmt] if r in kw), ext, 32, fp)

    if n == "c.addi4spn":
        return mk("addi", rd=o["rd"], rs1=sp, imm=o["imm"])
    if n in ("c.fld", "c.lw", "c.ld"):
        return mk(n[2:], rd=o["rd"], rs1=o["rs1"], imm=o["imm"])
    if n in ("c.fsd", "c.sw", "c.sd"):
        return mk(n[2:], rs2=o["rs2"], rs1=o["rs1"], imm=o["imm"])
    if n == "c.nop":
        return mk("addi", rd=0, rs1=0, imm=o.get("imm", 0))
    if n in ("c.addi", "c.addiw"):
        return mk(n[2:], rd=o["rd"], rs1=o["rd"], imm=o["imm"])
    if n == "c.li":
        return mk("addi", rd=o["rd"], rs1=0, imm=o["imm"])
    if n == "c.addi16sp":
        return mk("addi", rd=sp, rs1=sp, imm=o["imm"])
    if n == "c.lui":
        return mk("lui", rd=o["rd"], imm=o["imm"])
    if n in ("c.srli", "c.srai", "c.slli"):
        return mk(n[2:], rd=o["rd"], rs1=o["rd"], shamt=o["shamt"])
    if n == "c.andi":
        return mk("andi", rd=o["rd"], rs1=o["rd"], imm=o["imm"])
    if n in _ARITH_INV:
        return mk(n[2:], rd=o["rd"], rs1=o["rd"], rs2=o["rs2"])
    if n == "c.j":
        return mk("jal", rd=0, imm=o["imm"])
    if n in ("c.beqz", "c.bnez"):
        return mk("beq" if n == "c.beqz" else "bne", rs1=o["rs1"], rs2=0, imm=o["imm"])
    if n in ("c.fldsp", "c.lwsp", "c.ldsp"):
        return mk(n[2:-2], rd=o["rd"], rs1=sp, imm=o["imm"])
    if n in ("c.fsdsp", "c.swsp", "c.sdsp"):
        return mk(n[2:-2], rs2=o["rs2"], rs1=sp, imm=o["imm"])
    if n == "c.jr":
        return mk("jalr", rd=0, rs1=o["rs1"], imm=0)
    if n == "c.jalr":
        return mk("jalr", rd=1, rs1=o["rs1"], imm=0)
    if n == "c.mv":
        return mk("add", rd=o["rd"], rs1=0, rs2=o["rs2"])
    if n == "c.add":
        return mk("add", rd=o["rd"], rs1=o["rd"], rs2=o["rs2"])
    if n == "c.ebreak":
        return mk("ebreak")
    raise NotEncodable(n)


def compress(ins: Instr) -> Instr:
    """Find a compressed instruction whose expansion equals ``ins``."""
    if ins.width == 16:
        return ins
    target = ins.roles
    o = target
    cands = []
    n = ins.mnemonic
    if n == "addi":
        cands = [("c.addi4spn", dict(rd=o["rd"], imm=o["imm"])), ("c.addi16sp", dict(imm=o["imm"])),
                 ("c.li", dict(rd=o["rd"], imm=o["imm"])), ("c.nop", dict(imm=o["imm"])),
                 ("c.addi", dict(rd=o["rd"], imm=o["imm"]))]
    elif n in ("addiw", "andi"):
        cands = [("c." + n, dict(rd=o["rd"], imm=o["imm"]))]
    elif n == "lui":
        cands = [("c.lui", dict(rd=o["rd"], imm=o["imm"]))]
    elif n in ("slli", "srli", "srai"):
        cands = [("c." + n, dict(rd=o["rd"], shamt=o["shamt"]))]
    elif n in ("sub", "xor", "or", "and", "subw", "addw"):
        cands = [("c." + n, dict(rd=o["rd"], rs2=o["rs2"]))]
    elif n == "add":
        cands = [("c.mv", dict(rd=o["rd"], rs2=o["rs2"])), ("c.add", dict(rd=o["rd"], rs2=o["rs2"]))]
    elif n in ("lw", "ld", "fld"):
        cands = [("c." + n, dict(rd=o["rd"], rs1=o["rs1"], imm=o["imm"])), ("c." + n + "sp", dict(rd=o["rd"], imm=o["imm"]))]
    elif n in ("sw", "sd", "fsd"):
        cands = [("c." + n, dict(rs2=o["rs2"], rs1=o["rs1"], imm=o["imm"])), ("c." + n + "sp", dict(rs2=o["rs2"], imm=o["imm"]))]
    elif n == "jal":
        cands = [("c.j", dict(imm=o["imm"]))]
    elif n in ("beq", "bne"):
        cands = [("c.beqz" if n == "beq" else "c.bnez", dict(rs1=o["rs1"], imm=o["imm"]))]
    elif n == "jalr":
        cands = [("c.jr", dict(rs1=o["rs1"])), ("c.jalr", dict(rs1=o["rs1"]))]
    elif n == "ebreak":
        cands = [("c.ebreak", {})]
    for cname, kw in cands:
        try:
            c = make(cname, **kw)
            _encode16(c)
        except (NotEncodable, KeyError):
            continue
        if expand(c).same_as(ins) and not c.hint:
            return c
    raise NotEncodable(f"no compressed form of {render(ins)}")


def render(ins: Instr | None) -> str:
    if ins is None:
        return "(invalid)"
    o = ins.operands
    parts = []
    mem = ins.mnemonic in _MEMOPS or ins.mnemonic in ("lb", "lh", "lw", "ld", "lbu", "lhu", "lwu", "sb", "sh", "sw",
                                                       "sd", "flw", "fld", "flq", "fsw", "fsd", "fsq", "jalr")
    amo = ins.mnemonic.startswith(("amo", "lr.", "sc."))
    roles = dict(o)
    for role, v in o:
        if role in REG_ROLES:
            parts.append((FREGS if role in ins.fp else XREGS)[v])
        elif role == "rm":
            if v != 7:
                parts.append(ROUNDING[v])
        elif role == "aqrl":
            continue
        elif role == "csr":
            parts.append(hex(v))
        elif role == "imm" and ins.mnemonic in ("lui", "auipc", "c.lui"):
            parts.append(hex(v))
        else:
            parts.append(str(v))
    name = ins.mnemonic
    if amo:
        suffix = {0: "", 1: ".rl", 2: ".aq", 3: ".aqrl"}[roles.get("aqrl", 0)]
        rs1 = XREGS[roles["rs1"]]
        regs = [p for (r, _), p in zip([x for x in o if x[0] in REG_ROLES], parts) if r != "rs1"]
        return f"{name}{suffix} {','.join(regs)},({rs1})"
    if mem and "rs1" in roles and "imm" in roles:
        rs1 = XREGS[roles["rs1"]]
        first = [p for (r, _), p in zip(o, parts) if r in ("rd", "rs2")]
        return f"{name} {first[0] if first else ''},{roles['imm']}({rs1})"
    if mem and ins.mnemonic in _MEMOPS:
        first = [p for (r, _), p in zip(o, parts) if r in ("rd", "rs2")]
        return f"{name} {first[0]},{roles['imm']}(sp)"
    if name in ("fence.i", "ecall", "ebreak"):
        return name
    if ins.hint:
        name += " (hint)"
    return f"{name} {','.join(parts)}".strip()
