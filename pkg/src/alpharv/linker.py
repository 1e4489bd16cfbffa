"""Putting the pieces together: stage 2, unpacker, fixup, header and pool.

Lengths feed into one another (the fixup covers the unpacker, the pool
position follows sp at stage-2 entry, the jal target bounds the pool), so
the layout is solved by walking the charset-valid jal targets upward and
iterating the fixup length to a fixpoint for each.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import isa_codec as isa, stage1_gen as stage1
from .alpha_subset import CharsetVariant, is_charset_valid
from .rv_emu import DRAM_BASE, EmuState
from .load_table import SLASH_LIVE, LoadTable, get_table
from .stage1_gen import FILLER, Region, UnloadableValue
from .stage2 import (MAX_PAYLOAD, READ_OFFSET, PayloadTooLarge, Stage2Params, Stage2Program, build_stage2,
                     encode_payload, polymorphs)

MAX_ROUNDS = 8
PAGE_SIZE = 4096
DEFAULT_POOL = 2 * MAX_PAYLOAD


class LinkError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinkOptions:
    bare_metal: bool = False
    seed: int = 0                  # first polymorph tried (hash, slash)
    pool_size: int = DEFAULT_POOL  # encoded bytes the pool may hold
    pages: tuple = (-1, -2)
    max_polymorphs: int = 200_000
    table: LoadTable | None = None
    constants: object = None       # tick SolverResult; pinned when None


@dataclass
class ShellcodeImage:
    variant: CharsetVariant
    bytes: bytes
    regions: list
    payload: bytes
    stage2: Stage2Program
    payload_offset: int            # where stage 2 writes the decoded payload
    stage2_offset: int             # where stage 1 writes stage 2
    bare_metal: bool = False
    entry_offset: int = 0
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.bytes)

    def charset_ok(self) -> bool:
        return all(is_charset_valid(self.bytes[r.offset:r.end], self.variant)
                   for r in self.regions if r.kind != "fpu_gadget")

    def text(self) -> str:
        return self.bytes.decode("latin-1")

    def annotated(self) -> str:
        lines = [f"# {self.variant.name.lower()} shellcode, {len(self.bytes)} bytes"]
        for r in self.regions:
            lines.append(f"[{r.offset:5d}..{r.end:5d}) {r.kind:<11} {r.label}")
            if r.kind in ("data_pool", "nopsled"):
                lines.append("    " + _escape(self.bytes[r.offset:r.end][:64])
                             + (" ..." if r.length > 64 else ""))
                continue
            off = r.offset
            while off < r.end:
                ins = isa.decode_bytes(self.bytes, off)
                width = 2 if self.bytes[off] & 3 != 3 else 4
                lines.append(f"    {off:5d}  {_escape(self.bytes[off:off + width]):<6}  {isa.render(ins)}")
                off += width
        return "\n".join(lines) + "\n"

    def render(self, fmt: str = "text") -> bytes:
        if fmt == "bin":
            return self.bytes
        if fmt == "annotated":
            return self.annotated().encode()
        if fmt == "text":
            return self.bytes + b"\n"
        raise ValueError(f"unknown format {fmt!r}")


def _escape(b: bytes) -> str:
    return "".join(chr(c) if 0x20 < c < 0x7F else f"\\x{c:02x}" for c in b)


# ---------------------------------------------------------------------------
# stage 2 and unpacker

def _stage2_bytes(prog: Stage2Program) -> bytes:
    """What stage 1 must materialise, instruction by instruction."""
    return b"".join(w.bytes for w in prog.words())


def _hash_decode_len(n: int, table: LoadTable, cap: int) -> int:
    """Smallest length >= n whose ``addi E,Q,len`` upper halfword is loadable.

    That halfword is ``len << 4 | Q >> 1``; no renaming moves it further, so
    lengths like 498..506 are padded up instead of searching in vain."""
    for m in range(n, cap + 1):
        if any(table.entries[(m << 4) | (q >> 1)] is not None for q in range(8, 16)):
            return m
    raise UnloadableValue(n << 4, -1)


def _first_loadable(variant, template: Stage2Program, table: LoadTable, start: int, limit: int):
    """First polymorph from ``start`` whose every piece the unpacker can load."""
    for n, prog in enumerate(polymorphs(template, start)):
        if n >= limit:
            break
        try:
            if variant == CharsetVariant.HASH:
                unp = stage1.build_unpacker_hash(_stage2_bytes(prog), table)
            else:
                live = SLASH_LIVE | set(prog.regs.as_tuple())
                unp = stage1.build_unpacker_slash(_stage2_bytes(prog), table, frozenset(live))
        except UnloadableValue:
            continue
        return prog, unp, start + n
    raise UnloadableValue(-1, -1)


# ---------------------------------------------------------------------------
# layout

@dataclass(frozen=True)
class Layout:
    header: stage1.Header
    fixup: stage1.FixupChain
    pool_off: int          # first encoded byte
    image_len: int         # stage 2 lands here

    @property
    def target(self) -> int:
        return self.header.target


def solve_layout(variant, unp: stage1.Unpacker, enc_len: int, page: int, bare_metal: bool) -> Layout:
    """Smallest jal target for which the fixup closes and the encoded payload
    fits between the link data and the unpacker."""
    variant = CharsetVariant.parse(variant)
    probe = stage1.build_header(variant, 0, bare_metal)
    link = probe.link_offset
    extent = max((o + len(d) for o, d in unp.link_data.items()), default=0)
    fixed = len(unp.pre_bytes) + len(unp.body_bytes) - unp.store_base - link
    for imm, _ in stage1.jal_immediates(variant, probe.link_reg):
        target = probe.jal_offset + imm
        if target < link + extent + enc_len:
            continue
        n, chain = 0, None
        for _ in range(MAX_ROUNDS):
            try:
                chain = stage1.build_fixup(target + fixed + 2 * n)
            except stage1.FixupUnsolvable:
                chain = None
                break
            if chain.n == n:
                break
            n = chain.n
        if chain is None or chain.n != n:
            continue
        sp_end = link + chain.total_delta + unp.sp_advance
        pool_off = sp_end + PAGE_SIZE * page + READ_OFFSET
        if pool_off - READ_OFFSET < link + extent or pool_off + enc_len > target:
            continue
        header = stage1.build_header(variant, 0, bare_metal, min_target=target)
        image_len = target + fixed + 2 * n + chain.nopsled_len + unp.store_base + link
        return Layout(header, chain, pool_off, image_len)
    raise stage1.NoValidJal("no jal target satisfies the layout")


def assemble(variant, layout: Layout, unp: stage1.Unpacker, enc: bytes) -> tuple[bytes, list]:
    h = layout.header
    img = bytearray(h.code) + bytes([FILLER]) * (h.target - h.size)
    for off, data in unp.link_data.items():
        img[h.link_offset + off:h.link_offset + off + len(data)] = data
    img[layout.pool_off:layout.pool_off + len(enc)] = enc
    regions = []
    if h.gadget:
        regions.append(Region("fpu_gadget", 0, len(stage1.FPU_GADGET), "enable FPU"))
    g = len(stage1.FPU_GADGET) if h.gadget else 0
    regions.append(Region("header_jal", g, h.size - g, f"jal {isa.XREGS[h.link_reg]}, +{h.target - h.jal_offset}"))
    regions.append(Region("data_pool", h.size, h.target - h.size, f"encoded payload at {layout.pool_off}"))
    parts = [("unpacker", unp.pre_bytes, "pointer setup"),
             ("fixup", stage1.assemble(layout.fixup.ops(variant)), f"sp += {layout.fixup.total_delta}"),
             ("unpacker", unp.body_bytes, "write stage 2"),
             ("nopsled", stage1.assemble(stage1.sled_ops(variant, layout.fixup.nopsled_len)), "")]
    for kind, code, label in parts:
        if code:
            regions.append(Region(kind, len(img), len(code), label))
            img += code
    assert len(img) == layout.image_len
    return bytes(img), regions


# ---------------------------------------------------------------------------
# pipeline

def link(variant: CharsetVariant | str, payload: bytes, options: LinkOptions | None = None) -> ShellcodeImage:
    """Build a charset-valid image that unpacks stage 2, decodes ``payload``
    in place and jumps to it."""
    variant = CharsetVariant.parse(variant)
    if variant == CharsetVariant.ALNUM:
        raise ValueError("pure alphanumeric has no unpacker; use hash, slash or tick")
    opts = options or LinkOptions()
    if not payload:
        raise ValueError("empty payload")
    cap = min(MAX_PAYLOAD, opts.pool_size // 2)
    if len(payload) > cap:
        raise PayloadTooLarge(f"payload is {len(payload)} bytes, limit {cap}")
    if variant == CharsetVariant.TICK:
        return _link_tick(payload, opts)
    table = opts.table or get_table(variant)
    errors = []
    n = len(payload)
    if variant == CharsetVariant.HASH:
        n = _hash_decode_len(n, table, max(len(payload), opts.pool_size // 2))
    for page in opts.pages:
        template = build_stage2(variant, Stage2Params(n, page=page))
        try:
            prog, unp, index = _first_loadable(variant, template, table, opts.seed, opts.max_polymorphs)
        except UnloadableValue:
            errors.append(f"page {page}: no loadable polymorph")
            continue
        enc = encode_payload(_padded(payload, prog.decoded_len))
        try:
            layout = solve_layout(variant, unp, len(enc), page, opts.bare_metal)
        except stage1.NoValidJal as e:
            errors.append(f"page {page}: {e}")
            continue
        meta = {"page": page, "polymorph": index, "table_coverage": table.coverage, "seed": opts.seed}
        return _finish(variant, payload, prog, unp, layout, enc, opts, meta)
    raise UnloadableValue(-1, -1) if all("polymorph" in e for e in errors) else LinkError("; ".join(errors))


def _link_tick(payload: bytes, opts: LinkOptions) -> ShellcodeImage:
    from . import tickpin

    res = opts.constants or tickpin.pinned()
    prog = res.instance
    if len(payload) > prog.decoded_len:
        raise PayloadTooLarge(f"payload is {len(payload)} bytes, stage 2 decodes {prog.decoded_len}")
    unp = stage1.build_unpacker_tick(prog.serialize("flat"), res)
    enc = encode_payload(_padded(payload, prog.decoded_len), prog.decoded_len)
    layout = solve_layout(CharsetVariant.TICK, unp, len(enc), prog.params.page, opts.bare_metal)
    meta = {"page": prog.params.page, "polymorph": res.index, "seed": res.seed, "b": f"{res.b:016x}"}
    return _finish(CharsetVariant.TICK, payload, prog, unp, layout, enc, opts, meta)


def _padded(payload: bytes, n: int) -> bytes:
    return payload + bytes(n - len(payload))


def _finish(variant, payload, prog, unp, layout, enc, opts, meta) -> ShellcodeImage:
    data, regions = assemble(variant, layout, unp, enc)
    meta |= {"stage2": prog.serialize().hex(), "jal_target": layout.target,
             "fixup": list(layout.fixup.immediates), "sled": layout.fixup.nopsled_len}
    img = ShellcodeImage(variant, data, regions, payload, prog, layout.pool_off - READ_OFFSET,
                         layout.image_len, opts.bare_metal, metadata=meta)
    if not img.charset_ok():
        raise LinkError("internal error: image leaves the charset")
    return img


# ---------------------------------------------------------------------------
# verification

@dataclass
class VerifyReport:
    ok: bool
    checks: dict
    failures: list
    serial: bytes = b""
    status: str = ""
    steps: int = 0

    def summary(self) -> str:
        lines = [f"{'PASS' if v else 'FAIL'} {k}" for k, v in self.checks.items()]
        lines += [f"  {f}" for f in self.failures]
        if self.serial:
            lines.append(f"serial: {self.serial!r}")
        return "\n".join(lines)


def verify(image: ShellcodeImage, *, strict_icache: bool = True, max_steps: int = 2_000_000,
           mem_size: int = 1 << 16, run_payload: bool = True) -> VerifyReport:
    """Charset per region, stage-1 decode, then emulate: stop where stage 2
    hands over, compare the decoded bytes with the payload, and (optionally)
    let the payload run to collect serial output.  Problems are reported,
    never raised."""
    checks, failures = {}, []
    data = image.bytes
    try:
        bad = [r for r in image.regions if r.kind != "fpu_gadget"
               and not is_charset_valid(data[r.offset:r.end], image.variant)]
        checks["charset"] = not bad
        failures += [f"region {r.kind}@{r.offset} leaves the charset" for r in bad]
        spans = sorted((r.offset, r.end) for r in image.regions)
        checks["regions"] = (spans and spans[0][0] == 0 and spans[-1][1] == len(data)
                             and all(a[1] == b[0] for a, b in zip(spans, spans[1:])))
        if not checks["regions"]:
            failures.append("region map does not tile the image")
        undecodable = []
        for r in image.regions:
            if r.kind in ("data_pool",):
                continue
            off = r.offset
            while off < r.end:
                if isa.decode_bytes(data, off) is None:
                    undecodable.append(off)
                    break
                off += 2 if data[off] & 3 != 3 else 4
        checks["decode"] = not undecodable
        failures += [f"undecodable instruction at {o}" for o in undecodable]
    except Exception as e:  # malformed image
        checks["structure"] = False
        failures.append(f"structure: {e}")
    st = EmuState.load(data, mem_size=mem_size, bare_metal=image.bare_metal, strict_icache=strict_icache)
    entry = DRAM_BASE + image.payload_offset
    st.run(max_steps, stop_at=entry)
    checks["handover"] = st.status == "stopped"
    if not checks["handover"]:
        failures.append(f"emulation ended with {st.status}" + (f": {st.trap}" if st.trap else ""))
        checks["payload"] = False
    else:
        try:
            got = st.bytes_at(entry, len(image.payload))
        except Exception as e:
            got = f"{e}".encode()
        checks["payload"] = got == image.payload
        if not checks["payload"]:
            diff = next((i for i, (a, b) in enumerate(zip(got, image.payload)) if a != b), len(got))
            failures.append(f"payload mismatch at byte {diff}")
        if run_payload:
            st.run(max_steps)
            if st.status == "trap":
                failures.append(f"payload trapped: {st.trap}")
    return VerifyReport(all(checks.values()), checks, failures, bytes(st.serial_out), st.status, st.steps)
