import pytest
from hypothesis import given, strategies as st

from alpharv import isa_codec as isa
from alpharv.rv_emu import DRAM_BASE, UART_BASE, EmuState, run_image
from alpharv.fp_solver import fma_exact
from alpharv.stage1_gen import FPU_GADGET

from conftest import run_code

a = isa.asm
HALT = a("jal", rd=0, imm=0)


def test_addi():
    st = run_code(a("addi", rd=5, rs1=0, imm=7) + HALT)
    assert st.x[5] == 7 and st.status == "halted"


def test_x0_is_hardwired():
    st = run_code(a("addi", rd=0, rs1=0, imm=7) + HALT)
    assert st.x[0] == 0


def test_amoor_d():
    sp = DRAM_BASE + 0x100
    code = a("amoor.d", rd=6, rs1=2, rs2=21) + HALT
    st = EmuState.load(code, mem_size=0x200, regs={"sp": sp, "s5": 0xF0})
    st.mem[0x100:0x108] = (0x0F0F).to_bytes(8, "little")
    st.run(10)
    assert st.x[6] == 0x0F0F
    assert st.read(sp, 8) == 0x0FFF


def test_amo_misaligned_traps():
    st = EmuState.load(a("amoor.d", rd=6, rs1=2, rs2=21) + HALT, mem_size=0x200, regs={"sp": DRAM_BASE + 0x104})
    st.run(10)
    assert st.status == "trap" and st.trap.kind == "Misaligned"


def test_fmadd_matches_reference():
    aa, bb, cc = 0x41314F6E656C3236, 0x4131555555555555, 0x4253426F52773368
    code = (a("fmadd.d", rd=20, rs1=0, rs2=18, rs3=6, rm=7) + HALT)
    st = EmuState.load(code, mem_size=64)
    st.f[0], st.f[18], st.f[6] = aa, bb, cc
    st.run(10)
    assert st.f[20] == fma_exact(aa, bb, cc)


def test_unmapped_pc_traps():
    st = EmuState.load(b"", mem_size=16)
    st.pc = DRAM_BASE + 0x1000
    st.run(5)
    assert st.status == "trap" and st.trap.kind == "OutOfRange"


def test_uart_collects_bytes():
    code = a("lui", rd=5, imm=UART_BASE >> 12) + a("addi", rd=6, rs1=0, imm=0x41) + a("sb", rs1=5, rs2=6, imm=0) + HALT
    assert run_code(code).serial_out == b"A"


def _patch_program(sync: bytes) -> bytes:
    """Run ``c.li t1,1`` once, overwrite it with ``c.li t1,9``, execute
    ``sync``, then jump back to it and halt."""
    t0, t1, t3, s0 = 5, 6, 28, 8
    new = isa.encode(isa.make("c.li", rd=t1, imm=9), 16).value
    hi = (new + 0x800) >> 12
    head = a("c.li", rd=s0, imm=0) + a("c.li", rd=t1, imm=1)           # 0, 2 (patch site)
    patch = (a("c.li", rd=s0, imm=1) + a("auipc", rd=t0, imm=0)
             + a("lui", rd=t3, imm=hi) + a("addiw", rd=t3, rs1=t3, imm=new - (hi << 12)))
    # auipc sits 2 bytes into ``patch``; the site is at offset 2
    auipc_at = len(head) + 2 + 2
    patch += a("sh", rs1=t0, rs2=t3, imm=2 - auipc_at) + sync
    jump_back_at = len(head) + 2 + len(patch)
    back = a("jal", rd=0, imm=2 - jump_back_at)
    exit_at = jump_back_at + len(back)
    branch = a("c.bnez", rs1=s0, imm=exit_at - len(head))
    return head + branch + patch + back + HALT


def test_strict_icache_requires_fence():
    for sync, ok in ((a("fence.i"), True), (a("addi", rd=0, rs1=0, imm=0), False)):
        img = _patch_program(sync)
        st = EmuState.load(img, mem_size=64, strict_icache=True).run(100)
        if ok:
            assert st.status == "halted" and st.x[6] == 9
        else:
            assert st.status == "trap" and st.trap.kind == "StaleInstruction"
        lenient = EmuState.load(img, mem_size=64, strict_icache=False).run(100)
        assert lenient.status == "halted" and lenient.x[6] == 9


def test_bare_metal_fpu_gate():
    fld = a("fld", rd=0, rs1=2, imm=0)
    st = EmuState.load(fld + HALT, mem_size=64, bare_metal=True, regs={"sp": DRAM_BASE})
    st.run(10)
    assert st.status == "trap"
    st = EmuState.load(FPU_GADGET + fld + HALT, mem_size=64, bare_metal=True, regs={"sp": DRAM_BASE})
    st.run(10)
    assert st.status == "halted"
    hosted = EmuState.load(fld + HALT, mem_size=64, regs={"sp": DRAM_BASE}).run(10)
    assert hosted.status == "halted"


def test_sentinel_and_budget():
    st = EmuState.load(a("c.li", rd=5, imm=1) + a("c.li", rd=6, imm=1) + HALT, mem_size=64,
                       sentinel=DRAM_BASE + 2)
    st.run(10)
    assert st.status == "sentinel" and st.pc == DRAM_BASE + 2
    loop = a("c.addi", rd=5, imm=1) + a("c.j", imm=-2)
    assert EmuState.load(loop, mem_size=64).run(50).status == "budget"


@given(st.integers(0, (1 << 64) - 1), st.integers(0, 56))
def test_little_endian(v, off):
    st = EmuState.load(b"", mem_size=64)
    st.write(DRAM_BASE + off, 8, v)
    assert st.read(DRAM_BASE + off, 8) == v
    assert bytes(st.mem[off:off + 8]) == v.to_bytes(8, "little")
    for k in range(8):
        assert st.read(DRAM_BASE + off + k, 1) == (v >> (8 * k)) & 0xFF


@given(st.lists(st.integers(-2048, 2047), min_size=1, max_size=20))
def test_determinism(imms):
    code = b"".join(a("addi", rd=5, rs1=5, imm=i) for i in imms) + HALT
    s1, s2 = run_code(code), run_code(code)
    assert s1.x == s2.x and s1.steps == s2.steps
    assert s1.x[5] == sum(imms) & ((1 << 64) - 1)


def test_run_image_helper():
    st = run_image(a("c.li", rd=5, imm=3) + HALT, mem_size=64)
    assert st.x[5] == 3
