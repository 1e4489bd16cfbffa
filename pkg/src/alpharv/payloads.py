"""Test payloads: plain RV64 code, not charset-restricted."""
from __future__ import annotations

import random

from . import isa_codec as isa
from .rv_emu import UART_BASE

HELLO = b"Hello world!"
SELF_LOOP = isa.asm("jal", rd=0, imm=0)


def uart_print(text: bytes = HELLO) -> bytes:
    """Write ``text`` to the UART transmit register, then spin."""
    out = isa.asm("lui", rd=isa.xreg("t0"), imm=UART_BASE >> 12)
    t1 = isa.xreg("t1")
    for ch in text:
        out += isa.asm("addi", rd=t1, rs1=0, imm=ch)
        out += isa.asm("sb", rs1=isa.xreg("t0"), rs2=t1, imm=0)
    return out + SELF_LOOP


def random_payload(rng: random.Random, length: int) -> bytes:
    """``length`` bytes (at least 4) of noise ending in a jump-to-self."""
    length = max(length, len(SELF_LOOP))
    return bytes(rng.randrange(256) for _ in range(length - len(SELF_LOOP))) + SELF_LOOP
