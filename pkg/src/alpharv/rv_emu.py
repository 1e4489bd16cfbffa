"""A small RV64 interpreter used as the verification oracle.

It runs the subset the generated shellcode and test payloads need: RV64IM,
the A extension, the compressed forms, fld/fsd and the fused double-precision
forms, fence.i and mstatus writes.  A SiFive-style UART transmit register at
0x10013000 collects output bytes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from . import isa_codec as isa
from .fp_solver import fma_op

MASK = (1 << 64) - 1
DRAM_BASE = 0x8000_0000
UART_BASE = 0x10013000
UART_SIZE = 0x1000
CSR_MSTATUS = 0x300
MSTATUS_FS = 3 << 13


class Trap(Exception):
    def __init__(self, kind: str, pc: int, detail: str = ""):
        super().__init__(f"{kind} at pc={pc:#x}: {detail}")
        self.kind, self.pc, self.detail = kind, pc, detail


class StepBudgetExceeded(Exception):
    pass


def _s64(v: int) -> int:
    return v - (1 << 64) if v >> 63 else v


def _sext32(v: int) -> int:
    v &= 0xFFFFFFFF
    return (v - (1 << 32) if v >> 31 else v) & MASK


@lru_cache(maxsize=1 << 16)
def _decode_cached(word: int, width: int):
    ins = isa.decode(word, width)
    return None if ins is None else (ins, isa.expand(ins))


@dataclass
class EmuState:
    mem: bytearray
    base: int = DRAM_BASE
    pc: int = DRAM_BASE
    x: list = field(default_factory=lambda: [0] * 32)
    f: list = field(default_factory=lambda: [0] * 32)
    serial_out: bytearray = field(default_factory=bytearray)
    strict_icache: bool = True
    fpu_enabled: bool = True
    mstatus: int = MSTATUS_FS
    frm: int = 0
    steps: int = 0
    sentinel: int | None = None
    status: str = "running"
    trap: Trap | None = None
    trace: list | None = None
    reservation: int | None = None
    fetched: set = field(default_factory=set)
    stale: set = field(default_factory=set)
    stores: int = 0
    # execute the reserved c.addi4spn rd',sp,0 encodings as addi, like older QEMU builds
    legacy_addi4spn: bool = False

    @classmethod
    def load(cls, image: bytes, *, base: int = DRAM_BASE, mem_size: int = 1 << 16, bare_metal: bool = False,
             strict_icache: bool = True, sentinel: int | None = None, regs: dict | None = None,
             trace: bool = False, legacy_addi4spn: bool = False) -> "EmuState":
        mem = bytearray(max(mem_size, len(image)))
        mem[:len(image)] = image
        st = cls(mem=mem, base=base, pc=base, strict_icache=strict_icache, sentinel=sentinel,
                 trace=[] if trace else None, legacy_addi4spn=legacy_addi4spn)
        if bare_metal:
            st.fpu_enabled, st.mstatus = False, 0
        for name, v in (regs or {}).items():
            st.x[isa.xreg(name) if isinstance(name, str) else name] = v & MASK
        return st

    # memory -----------------------------------------------------------------
    def _off(self, addr: int, n: int) -> int:
        off = addr - self.base
        if off < 0 or off + n > len(self.mem):
            raise Trap("OutOfRange", self.pc, f"access {addr:#x}+{n}")
        return off

    def read(self, addr: int, n: int) -> int:
        if UART_BASE <= addr < UART_BASE + UART_SIZE:
            return 0
        off = self._off(addr, n)
        return int.from_bytes(self.mem[off:off + n], "little")

    def write(self, addr: int, n: int, value: int) -> None:
        if UART_BASE <= addr < UART_BASE + UART_SIZE:
            if addr == UART_BASE:
                self.serial_out.append(value & 0xFF)
            return
        off = self._off(addr, n)
        self.mem[off:off + n] = (value & ((1 << (8 * n)) - 1)).to_bytes(n, "little")
        self.stores += 1
        if self.strict_icache and self.fetched:
            for a in range(addr & ~1, addr + n, 2):
                if a in self.fetched:
                    self.stale.add(a)

    def bytes_at(self, addr: int, n: int) -> bytes:
        off = self._off(addr, n)
        return bytes(self.mem[off:off + n])

    # execution --------------------------------------------------------------
    def fetch(self):
        pc = self.pc
        if pc & 1:
            raise Trap("Misaligned", pc, "instruction address")
        lo = self.read(pc, 2)
        width = 16 if lo & 3 != 3 else 32
        if width == 32:
            if lo & 0x1F == 0x1F:
                raise Trap("UnsupportedInstruction", pc, f"{lo:#06x} (long encoding)")
            word = self.read(pc, 4)
        else:
            word = lo
        if self.strict_icache:
            for a in range(pc, pc + width // 8, 2):
                if a in self.stale:
                    raise Trap("StaleInstruction", pc, "executing bytes modified after fetch without fence.i")
                self.fetched.add(a)
        dec = _decode_cached(word, width)
        if dec is None and self.legacy_addi4spn and width == 16 and word & 0xE003 == 0 and word & 0x1FE0 == 0 and word:
            ins = isa.Instr("c.addi4spn", (("rd", 8 + ((word >> 2) & 7)), ("imm", 0)), "C", 16)
            dec = (ins, isa.expand(ins))
        if dec is None:
            raise Trap("UnsupportedInstruction", pc, f"invalid word {word:#x}")
        return word, width, dec[0], dec[1]

    def step(self) -> None:
        word, width, ins, base = self.fetch()
        if self.trace is not None:
            self.trace.append(f"{self.pc:#x}: {word:0{width // 4}x}  {isa.render(ins)}")
        npc = self._exec(base, width)
        self.x[0] = 0
        self.steps += 1
        self.pc = npc & MASK

    def _need_fpu(self):
        if not self.fpu_enabled:
            raise Trap("UnsupportedInstruction", self.pc, "floating point unit disabled")

    def _exec(self, ins: isa.Instr, width: int) -> int:
        x, pc = self.x, self.pc
        o = ins.roles
        n = ins.mnemonic
        npc = pc + width // 8
        rd = o.get("rd", 0)
        a = x[o["rs1"]] if "rs1" in o and "rs1" not in ins.fp else 0
        b = x[o["rs2"]] if "rs2" in o and "rs2" not in ins.fp else 0
        imm = o.get("imm", 0)

        if n in _ALU:
            x[rd] = _ALU[n](a, b) & MASK
        elif n in _ALUI:
            x[rd] = _ALUI[n](a, imm & MASK, o.get("shamt", 0)) & MASK
        elif n == "lui":
            x[rd] = _sext32(imm << 12)
        elif n == "auipc":
            x[rd] = (pc + _s64(_sext32(imm << 12))) & MASK
        elif n == "jal":
            x[rd] = npc & MASK
            npc = pc + imm
        elif n == "jalr":
            t = (a + imm) & ~1
            x[rd] = npc & MASK
            npc = t
        elif n in _BR:
            if _BR[n](a, b):
                npc = pc + imm
        elif n in _LOADS:
            size, signed = _LOADS[n]
            v = self.read((a + imm) & MASK, size)
            if signed and v >> (8 * size - 1):
                v -= 1 << (8 * size)
            x[rd] = v & MASK
        elif n in _STORES:
            self.write((a + imm) & MASK, _STORES[n], b)
        elif n in ("fence", "fence.i"):
            if n == "fence.i":
                self.fetched.clear()
                self.stale.clear()
        elif n.startswith(("amo", "lr.", "sc.")):
            self._amo(n, o, a, b)
        elif n.startswith("csrr"):
            self._csr(n, o, a)
        elif n in ("fld", "flw"):
            self._need_fpu()
            size = 8 if n == "fld" else 4
            v = self.read((a + imm) & MASK, size)
            self.f[rd] = v if size == 8 else v | 0xFFFFFFFF00000000
        elif n in ("fsd", "fsw"):
            self._need_fpu()
            size = 8 if n == "fsd" else 4
            self.write((a + imm) & MASK, size, self.f[o["rs2"]])
        elif n.endswith(".d") and n.split(".")[0] in ("fmadd", "fmsub", "fnmsub", "fnmadd"):
            self._need_fpu()
            rm = o["rm"] if o["rm"] != 7 else self.frm
            self.f[rd] = fma_op(n.split(".")[0], self.f[o["rs1"]], self.f[o["rs2"]], self.f[o["rs3"]], rm)
        elif n in ("fsgnj.d", "fsgnjn.d", "fsgnjx.d"):
            self._need_fpu()
            v1, v2 = self.f[o["rs1"]], self.f[o["rs2"]]
            s2 = v2 >> 63
            sign = {"fsgnj.d": s2, "fsgnjn.d": s2 ^ 1, "fsgnjx.d": s2 ^ (v1 >> 63)}[n]
            self.f[rd] = (v1 & ~(1 << 63)) | sign << 63
        elif n == "fmv.x.d":
            self._need_fpu()
            x[rd] = self.f[o["rs1"]]
        elif n == "fmv.d.x":
            self._need_fpu()
            self.f[rd] = a
        else:
            raise Trap("UnsupportedInstruction", pc, isa.render(ins))
        return npc

    def _amo(self, n: str, o: dict, a: int, b: int) -> None:
        size = 8 if n.endswith(".d") else 4
        if a % size:
            raise Trap("Misaligned", self.pc, f"{n} at {a:#x}")
        op = n.split(".")[0]
        rd = o["rd"]
        if op == "lr":
            v = self.read(a, size)
            self.reservation = a
            self.x[rd] = v & MASK if size == 8 else _sext32(v)
            return
        if op == "sc":
            ok = self.reservation == a
            if ok:
                self.write(a, size, b)
            self.reservation = None
            self.x[rd] = 0 if ok else 1
            return
        old = self.read(a, size)
        bits = 8 * size
        m = (1 << bits) - 1

        def sg(v):
            v &= m
            return v - (1 << bits) if v >> (bits - 1) else v

        new = {
            "amoswap": lambda: b, "amoadd": lambda: old + b, "amoxor": lambda: old ^ b, "amoand": lambda: old & b,
            "amoor": lambda: old | b, "amomin": lambda: old if sg(old) <= sg(b) else b,
            "amomax": lambda: old if sg(old) >= sg(b) else b, "amominu": lambda: old if old <= b & m else b,
            "amomaxu": lambda: old if old >= b & m else b,
        }[op]()
        self.write(a, size, new & m)
        self.x[rd] = old if size == 8 else _sext32(old)

    def _csr(self, n: str, o: dict, a: int) -> None:
        csr = o["csr"]
        src = o.get("imm", 0) if n.endswith("i") else a
        writes = not (n[4] in "sc" and (o.get("imm", 0) if n.endswith("i") else o["rs1"]) == 0)
        if csr == CSR_MSTATUS:
            old = self.mstatus
        elif csr == 2 and self.fpu_enabled:
            old = self.frm
        else:
            raise Trap("UnsupportedInstruction", self.pc, f"csr {csr:#x}")
        kind = n[4]
        new = {"w": src, "s": old | src, "c": old & ~src}[kind] & MASK
        if writes:
            if csr == CSR_MSTATUS:
                self.mstatus = new
                self.fpu_enabled = (new & MSTATUS_FS) != 0
            else:
                self.frm = new & 7
        self.x[o["rd"]] = old

    def run(self, max_steps: int = 1_000_000, stop_at: int | None = None) -> "EmuState":
        """Run until a trap, the sentinel address, a jump-to-self loop,
        ``stop_at`` or the step budget; the reason lands in ``status``."""
        self.status = "running"
        try:
            while self.steps < max_steps:
                if self.sentinel is not None and self.pc == self.sentinel:
                    self.status = "sentinel"
                    return self
                if stop_at is not None and self.pc == stop_at:
                    self.status = "stopped"
                    return self
                pc = self.pc
                self.step()
                if self.pc == pc:
                    self.status = "halted"
                    return self
        except Trap as t:
            self.status, self.trap = "trap", t
            return self
        self.status = "budget"
        return self


def _div(a, b):
    a, b = _s64(a), _s64(b)
    if b == 0:
        return -1
    if a == -(1 << 63) and b == -1:
        return a
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _rem(a, b):
    sa, sb = _s64(a), _s64(b)
    if sb == 0:
        return sa
    if sa == -(1 << 63) and sb == -1:
        return 0
    return sa - sb * _div(a, b)


def _w(fn):
    return lambda a, b: _sext32(fn(a & 0xFFFFFFFF, b & 0xFFFFFFFF))


def _s32(v):
    v &= 0xFFFFFFFF
    return v - (1 << 32) if v >> 31 else v


def _divw(a, b):
    a, b = _s32(a), _s32(b)
    if b == 0:
        return -1
    if a == -(1 << 31) and b == -1:
        return a
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _remw(a, b):
    sa, sb = _s32(a), _s32(b)
    if sb == 0:
        return sa
    return sa - sb * _divw(a, b)


_ALU = {
    "add": lambda a, b: a + b, "sub": lambda a, b: a - b, "sll": lambda a, b: a << (b & 63),
    "slt": lambda a, b: int(_s64(a) < _s64(b)), "sltu": lambda a, b: int(a < b), "xor": lambda a, b: a ^ b,
    "srl": lambda a, b: a >> (b & 63), "sra": lambda a, b: _s64(a) >> (b & 63), "or": lambda a, b: a | b,
    "and": lambda a, b: a & b, "mul": lambda a, b: a * b, "mulh": lambda a, b: (_s64(a) * _s64(b)) >> 64,
    "mulhsu": lambda a, b: (_s64(a) * b) >> 64, "mulhu": lambda a, b: (a * b) >> 64, "div": _div,
    "divu": lambda a, b: a // b if b else MASK, "rem": _rem, "remu": lambda a, b: a % b if b else a,
    "addw": _w(lambda a, b: a + b), "subw": _w(lambda a, b: a - b), "sllw": _w(lambda a, b: a << (b & 31)),
    "srlw": _w(lambda a, b: a >> (b & 31)), "sraw": _w(lambda a, b: _s32(a) >> (b & 31)),
    "mulw": _w(lambda a, b: a * b), "divw": _w(_divw), "remw": _w(_remw),
    "divuw": _w(lambda a, b: a // b if b else 0xFFFFFFFF), "remuw": _w(lambda a, b: a % b if b else a),
}
_ALUI = {
    "addi": lambda a, i, s: a + i, "slti": lambda a, i, s: int(_s64(a) < _s64(i)),
    "sltiu": lambda a, i, s: int(a < i), "xori": lambda a, i, s: a ^ i, "ori": lambda a, i, s: a | i,
    "andi": lambda a, i, s: a & i, "slli": lambda a, i, s: a << s, "srli": lambda a, i, s: a >> s,
    "srai": lambda a, i, s: _s64(a) >> s, "addiw": lambda a, i, s: _sext32(a + i),
    "slliw": lambda a, i, s: _sext32(a << s), "srliw": lambda a, i, s: _sext32((a & 0xFFFFFFFF) >> s),
    "sraiw": lambda a, i, s: _sext32(_s32(a) >> s),
}
_BR = {
    "beq": lambda a, b: a == b, "bne": lambda a, b: a != b, "blt": lambda a, b: _s64(a) < _s64(b),
    "bge": lambda a, b: _s64(a) >= _s64(b), "bltu": lambda a, b: a < b, "bgeu": lambda a, b: a >= b,
}
_LOADS = {"lb": (1, True), "lh": (2, True), "lw": (4, True), "ld": (8, True), "lbu": (1, False),
          "lhu": (2, False), "lwu": (4, False)}
_STORES = {"sb": 1, "sh": 2, "sw": 4, "sd": 8}


def run_image(image: bytes, *, max_steps: int = 2_000_000, **kw) -> EmuState:
    st = EmuState.load(image, **kw)
    return st.run(max_steps)
