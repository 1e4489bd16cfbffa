import os
from pathlib import Path

import pytest
from hypothesis import settings

from alpharv.rv_emu import DRAM_BASE, EmuState

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_bytes(name: str) -> bytes:
    return (FIXTURES / name).read_bytes().rstrip(b"\r\n")


def run_code(code: bytes, regs=None, max_steps=10_000, **kw) -> EmuState:
    st = EmuState.load(code, mem_size=1 << 14, regs=regs, **kw)
    return st.run(max_steps)


@pytest.fixture(scope="session")
def hash_table():
    from alpharv.load_table import get_table
    return get_table("hash")


@pytest.fixture(scope="session")
def slash_table():
    from alpharv.load_table import get_table
    return get_table("slash")


@pytest.fixture(scope="session")
def hello():
    from alpharv.payloads import uart_print
    return uart_print()


@pytest.fixture
def sp_regs():
    return {"sp": DRAM_BASE + 0x8000}


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
