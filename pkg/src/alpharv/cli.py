"""Command-line front end: ``alpharv gen|verify|stats|table|encode-payload|solve-tick``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .alpha_subset import CharsetVariant, get_catalog, is_charset_valid, stats
from .rv_emu import DRAM_BASE, EmuState
from .stage2 import PayloadTooLarge, encode_payload

VARIANTS = ("hash", "slash", "tick")
DEFAULT_SEED = 0


@dataclass(frozen=True)
class Config:
    variant: str
    payload: Path | None = None
    output: Path | None = None
    fmt: str = "text"
    table: Path | None = None
    seed: int = DEFAULT_SEED
    pool_size: int = 1024
    bare_metal: bool = False
    strict_icache: bool = True

    @classmethod
    def from_args(cls, a) -> "Config":
        return cls(a.variant, a.payload, a.output, a.format, a.table, a.seed, a.pool_size, a.bare_metal,
                   a.strict_icache)


def _err(msg: str) -> int:
    print(f"alpharv: {msg}", file=sys.stderr)
    return 1


def read_image(path) -> bytes:
    data = Path(path).read_bytes()
    return data.rstrip(b"\r\n")


def guess_variant(data: bytes) -> CharsetVariant | None:
    for v in (CharsetVariant.ALNUM, CharsetVariant.HASH, CharsetVariant.SLASH, CharsetVariant.TICK):
        if is_charset_valid(data, v):
            return v
    # bare-metal tick images open with the FPU gadget
    if len(data) > 6 and is_charset_valid(data[6:], CharsetVariant.TICK):
        return CharsetVariant.TICK
    return None


# ---------------------------------------------------------------------------

def cmd_gen(cfg: Config) -> int:
    from . import linker, payloads
    from .load_table import LoadTable

    if cfg.payload is None:
        payload = payloads.uart_print()
    else:
        try:
            payload = Path(cfg.payload).read_bytes()
        except OSError as e:
            return _err(f"cannot read payload: {e}")
    table = None
    if cfg.table is not None and cfg.variant != "tick":
        table = LoadTable.load(cfg.table)
        if table.variant != CharsetVariant.parse(cfg.variant):
            return _err(f"{cfg.table} is a {table.variant.name.lower()} table")
    opts = linker.LinkOptions(bare_metal=cfg.bare_metal, seed=cfg.seed, pool_size=cfg.pool_size, table=table)
    try:
        img = linker.link(cfg.variant, payload, opts)
    except (PayloadTooLarge, ValueError, RuntimeError) as e:
        return _err(f"link failed: {e}")
    out = img.render(cfg.fmt)
    if cfg.output is None:
        sys.stdout.buffer.write(out)
    else:
        Path(cfg.output).write_bytes(out)
    print(f"{len(img)} bytes, {cfg.variant}", file=sys.stderr)
    for r in img.regions:
        print(f"  {r.offset:6d} {r.length:6d}  {r.kind:<11} {r.label}", file=sys.stderr)
    return 0


def _run_to_payload(st: EmuState, payload: bytes, max_steps: int) -> bool:
    """Step until control jumps to a copy of ``payload``; True if it did."""
    while st.steps < max_steps:
        pc = st.pc
        st.run(st.steps + 1)
        if st.status == "trap" or st.status == "halted":
            return False
        if not pc <= st.pc <= pc + 4:
            try:
                if st.bytes_at(st.pc, len(payload)) == payload:
                    return True
            except Exception:
                pass
    return False


def cmd_verify(image_path, payload_path=None, variant: str | None = None, bare_metal: bool = False,
               strict_icache: bool = True, max_steps: int = 2_000_000, legacy_addi4spn: bool = False) -> int:
    try:
        data = read_image(image_path)
        payload = Path(payload_path).read_bytes() if payload_path else None
    except OSError as e:
        return _err(str(e))
    v = CharsetVariant.parse(variant) if variant else guess_variant(data)
    ok = v is not None
    print(f"charset: {v.name.lower() if v else 'none'}" + ("" if ok else "  FAIL"))
    st = EmuState.load(data, bare_metal=bare_metal, strict_icache=strict_icache,
                       regs={"sp": DRAM_BASE + 0x8000}, legacy_addi4spn=legacy_addi4spn)
    if payload is not None:
        reached = _run_to_payload(st, payload, max_steps)
        print(f"payload handover: {'ok' if reached else 'FAIL'}")
        ok &= reached
    if st.status not in ("trap", "halted"):
        st.run(max_steps)
    print(f"emulation: {st.status} after {st.steps} steps" + (f" ({st.trap})" if st.trap else ""))
    if payload is None:
        ok &= st.status in ("halted", "sentinel")
    print(f"serial: {bytes(st.serial_out)!r}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_stats(variant: str) -> int:
    for name, n in sorted(stats(get_catalog(variant)).items()):
        print(f"{name} {n}")
    return 0


def cmd_table_build(variant: str, output, jobs: int = 1) -> int:
    from .load_table import build_table

    t = build_table(variant)
    t.save(output)
    print(f"coverage {t.coverage}/65536")
    return 0


def cmd_table_coverage(path) -> int:
    from .load_table import LoadTable

    try:
        t = LoadTable.load(path)
    except (OSError, ValueError) as e:
        return _err(str(e))
    print(t.coverage)
    return 0


def cmd_encode(payload_path, output=None) -> int:
    try:
        enc = encode_payload(Path(payload_path).read_bytes())
    except (OSError, PayloadTooLarge) as e:
        return _err(str(e))
    if output:
        Path(output).write_bytes(enc)
    else:
        print(enc.decode())
    return 0


def cmd_solve_tick(seed: int, budget: int, start: int, instances: int, output=None) -> int:
    from . import tickpin
    from .fp_solver import Exhausted, solve

    def progress(idx, pair, ok, trials):
        print(f"instance {idx} pair {pair} {'ok' if ok else 'miss'} trials {trials}", file=sys.stderr)

    try:
        res = solve(tickpin.template(), seed=seed, trial_budget=budget, start=start,
                    max_instances=instances, progress=progress)
    except Exhausted as e:
        return _err(str(e))
    text = json.dumps(res.to_dict(), indent=1)
    if output:
        Path(output).write_text(text + "\n")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alpharv", description="RISC-V shellcode in a restricted charset")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="link a payload into a shellcode image")
    g.add_argument("payload", nargs="?", type=Path, help="raw RV64 payload (default: UART hello world)")
    g.add_argument("--variant", choices=VARIANTS, default="hash")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED, help="first stage-2 polymorph tried")
    g.add_argument("--budget", type=int, default=None, help="unused unless solving (see solve-tick)")
    g.add_argument("--pool-size", type=int, default=1024)
    g.add_argument("--table", type=Path)
    g.add_argument("--jobs", type=int, default=1, help="accepted for compatibility; work is sequential")
    g.add_argument("--bare-metal", action="store_true", help="prefix the FPU enable gadget (tick)")
    g.add_argument("--strict-icache", action=argparse.BooleanOptionalAction, default=True)
    g.add_argument("-o", "--output", type=Path)
    g.add_argument("--format", choices=("text", "bin", "annotated"), default="text")

    v = sub.add_parser("verify", help="emulate an image")
    v.add_argument("image", type=Path)
    v.add_argument("payload", nargs="?", type=Path)
    v.add_argument("--variant", choices=VARIANTS)
    v.add_argument("--bare-metal", action="store_true")
    v.add_argument("--strict-icache", action=argparse.BooleanOptionalAction, default=True)
    v.add_argument("--max-steps", type=int, default=2_000_000)
    v.add_argument("--legacy-addi4spn", action="store_true",
                   help="run reserved c.addi4spn rd,sp,0 words as addi (needed by some older images)")

    s = sub.add_parser("stats", help="catalog counts per mnemonic")
    s.add_argument("--variant", choices=("alnum",) + VARIANTS, default="alnum")

    t = sub.add_parser("table", help="load tables")
    tsub = t.add_subparsers(dest="tcmd", required=True)
    tb = tsub.add_parser("build")
    tb.add_argument("--variant", choices=VARIANTS, required=True)
    tb.add_argument("-o", "--output", type=Path, required=True)
    tb.add_argument("--jobs", type=int, default=1)
    tc = tsub.add_parser("coverage")
    tc.add_argument("file", type=Path)

    e = sub.add_parser("encode-payload", help="print the alphanumeric encoding of a payload")
    e.add_argument("payload", type=Path)
    e.add_argument("-o", "--output", type=Path)

    f = sub.add_parser("solve-tick", help="search fmadd constants for the tick stage 2")
    f.add_argument("--seed", type=int, default=7)
    f.add_argument("--budget", type=int, default=20000, help="trials per target pair")
    f.add_argument("--start", type=int, default=315018, help="first polymorph index")
    f.add_argument("--instances", type=int, default=16)
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("-o", "--output", type=Path)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    if a.cmd == "gen":
        if a.payload is not None and not a.payload.exists():
            build_parser().error(f"payload file {a.payload} not found")
        return cmd_gen(Config.from_args(a))
    if a.cmd == "verify":
        return cmd_verify(a.image, a.payload, a.variant, a.bare_metal, a.strict_icache, a.max_steps,
                          a.legacy_addi4spn)
    if a.cmd == "stats":
        return cmd_stats(a.variant)
    if a.cmd == "table":
        if a.tcmd == "build":
            return cmd_table_build(a.variant, a.output, a.jobs)
        return cmd_table_coverage(a.file)
    if a.cmd == "encode-payload":
        return cmd_encode(a.payload, a.output)
    if a.cmd == "solve-tick":
        return cmd_solve_tick(a.seed, a.budget, a.start, a.instances, a.output)
    return 2


if __name__ == "__main__":
    sys.exit(main())
