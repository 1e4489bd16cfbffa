"""Minimal charset-valid sequences that materialise a 16-bit value in a register.

Sequences follow one grammar::

    lui T                                   (32-bit lui or c.lui)
    c.li T
    lui R1; c.li Rs [; c.addiw Rs]*; sra T,R1,Rs
    ... followed by up to ``max_addiw`` c.addiw T

Candidates are explored level by level in instruction count, so the first
level that reaches a value gives a shortest sequence.  Ties are broken by
fewer bytes, then by structure (direct lui before sra, fewer shift-setup
instructions first), then by the lowest word values in sequence order.
"""
from __future__ import annotations

import itertools
import os
import struct
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import isa_codec as isa
from .alpha_subset import Catalog, CharsetVariant, get_catalog

TARGETS = tuple(isa.xreg(r) for r in ("tp", "t1", "s4", "s6"))
M32 = 0xFFFFFFFF

# registers the slash stage 2 may hold live; a nop-like upper half must not write them
SLASH_LIVE = frozenset([2] + list(range(8, 16)))
# stage 1 keeps the store pointer live; the slash unpacker also keeps its
# jump-word register
SLASH_JUMP_REG = isa.xreg("s4")


def default_protect(variant: CharsetVariant) -> frozenset:
    if variant == CharsetVariant.SLASH:
        return frozenset({2, SLASH_JUMP_REG})
    return frozenset({2})


_NOPLIKE = {"c.li", "c.lui", "c.addi", "c.addiw", "c.slli", "c.mv", "c.add", "c.nop"}


def is_nop_like(h16: int, live: frozenset = SLASH_LIVE) -> bool:
    """True when the halfword is a valid compressed instruction with no memory,
    control-flow or trap effect whose destination is outside ``live``."""
    if h16 & 3 == 3:
        return False
    ins = isa.decode(h16, 16)
    if ins is None or ins.mnemonic not in _NOPLIKE:
        return False
    return ins.get("rd", 0) not in live


_NOP_CACHE: dict = {}


def nop_mask(live: frozenset = SLASH_LIVE) -> np.ndarray:
    if live not in _NOP_CACHE:
        _NOP_CACHE[live] = np.array([is_nop_like(h, live) for h in range(65536)], dtype=bool)
    return _NOP_CACHE[live]


@dataclass(frozen=True)
class LoadSeq:
    target_reg: int
    target16: int
    words: tuple          # instruction words in execution order
    clobbers: frozenset
    full_value: int       # resulting 64-bit register value

    @property
    def code(self) -> bytes:
        return b"".join(w.to_bytes(2 if w & 3 != 3 else 4, "little") for w in self.words)

    @property
    def count(self) -> int:
        return len(self.words)

    def instrs(self) -> list:
        return [isa.decode(w, 16 if w & 3 != 3 else 32) for w in self.words]


class LoadTable:
    MAGIC = b"ARVLT"
    VERSION = 2
    MAX_WORDS = 10
    RECORD = struct.Struct("<BBB" + "I" * MAX_WORDS + "Q")

    def __init__(self, variant: CharsetVariant, entries: list, slash_filter: bool = False):
        self.variant = variant
        self.entries = entries
        self.slash_filter = slash_filter

    @property
    def coverage(self) -> int:
        return sum(e is not None for e in self.entries)

    def to_bytes(self) -> bytes:
        """Header: magic, u16 version, u8 variant, u8 slash filter flag.  Then
        65536 records: u8 present, u8 target register, u8 word count, ten u32
        words (zero padded), u64 full value; all little-endian."""
        out = [self.MAGIC, struct.pack("<HBB", self.VERSION, self.variant.value, self.slash_filter)]
        for e in self.entries:
            if e is None:
                out.append(self.RECORD.pack(0, 0, 0, *([0] * self.MAX_WORDS), 0))
            else:
                ws = list(e.words) + [0] * (self.MAX_WORDS - len(e.words))
                out.append(self.RECORD.pack(1, e.target_reg, len(e.words), *ws, e.full_value))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LoadTable":
        if data[:5] != cls.MAGIC:
            raise ValueError("not a load table file")
        version, vid, flt = struct.unpack_from("<HBB", data, 5)
        if version != cls.VERSION:
            raise ValueError(f"table version {version} unsupported")
        entries = []
        pos = 9
        for value in range(65536):
            rec = cls.RECORD.unpack_from(data, pos)
            pos += cls.RECORD.size
            if not rec[0]:
                entries.append(None)
                continue
            words = tuple(rec[3:3 + rec[2]])
            entries.append(LoadSeq(rec[1], value, words, _clobbers(words), rec[-1]))
        return cls(CharsetVariant(vid), entries, bool(flt))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "LoadTable":
        return cls.from_bytes(Path(path).read_bytes())


def _clobbers(words) -> frozenset:
    regs = set()
    for w in words:
        ins = isa.decode(w, 16 if w & 3 != 3 else 32)
        regs.add(ins["rd"])
    return frozenset(regs)


def lookup(table: LoadTable, value16: int) -> LoadSeq | None:
    return table.entries[value16 & 0xFFFF]


def seq_for_slash(table: LoadTable, value16: int) -> LoadSeq | None:
    """Like lookup, but only returns sequences whose loaded word has a
    nop-like upper halfword."""
    e = lookup(table, value16)
    if e is None:
        return None
    if not table.slash_filter and not is_nop_like((e.full_value >> 16) & 0xFFFF):
        return None
    return e


# ---------------------------------------------------------------------------
# search

class _Grammar:
    """Instruction inventory extracted from a catalog."""

    def __init__(self, catalog: Catalog, targets=TARGETS, max_setup_addiw: int = 2, protect=frozenset()):
        self.protect = frozenset(protect)
        self.lui32 = defaultdict(list)   # rd -> [(word, value32)]
        self.clui = defaultdict(list)
        for w, ins in catalog.decoded("lui"):
            (self.clui if w & 3 != 3 else self.lui32)[ins["rd"]].append((w, (ins["imm"] << 12) & M32))
        self.li = defaultdict(list)
        for w, ins in catalog.decoded("li"):
            self.li[ins["rd"]].append((w, ins["imm"]))
        self.addiw = defaultdict(list)
        for w, ins in catalog.decoded("addiw"):
            if ins.mnemonic == "c.addiw":
                self.addiw[ins["rd"]].append((w, ins["imm"]))
        self.sra = {}
        for w, ins in catalog.decoded("sra"):
            key = (ins["rd"], ins["rs1"], ins["rs2"])
            self.sra[key] = min(self.sra.get(key, w), w)
        self.targets = tuple(sorted(set(targets) - self.protect))
        self._sfx: dict = {}
        self.setups = self._setups(max_setup_addiw)

    def _setups(self, max_j: int) -> list:
        """Shift-amount register setups: (Rs, shift, words), the lowest-word
        shortest sequence for each (Rs, shift)."""
        best = {}
        shift_regs = sorted(({k[2] for k in self.sra} & set(self.li)) - self.protect)
        for rs in shift_regs:
            for w0, i0 in sorted(self.li[rs]):
                for j in range(max_j + 1):
                    if j and rs not in self.addiw:
                        break
                    for combo in itertools.combinations_with_replacement(sorted(self.addiw.get(rs, [])), j):
                        val = i0 + sum(c[1] for c in combo)
                        words = (w0,) + tuple(c[0] for c in combo)
                        key = (rs, isa.sext(val, 32) & 63)
                        cand = (len(words), words)
                        if key not in best or cand < best[key]:
                            best[key] = cand
        return sorted((len(ws), rs, sh, ws) for (rs, sh), (n, ws) in best.items())

    def suffixes(self, t: int, k: int) -> list:
        """(sum, words) for k c.addiw on t, lowest words per distinct sum."""
        key = (t, k)
        if key not in self._sfx:
            self._sfx[key] = self._suffixes(t, k)
        return self._sfx[key]

    def _suffixes(self, t: int, k: int) -> list:
        if k == 0:
            return [(0, ())]
        best = {}
        for combo in itertools.combinations_with_replacement(sorted(self.addiw.get(t, [])), k):
            s = sum(c[1] for c in combo)
            ws = tuple(c[0] for c in combo)
            if s not in best or ws < best[s]:
                best[s] = ws
        return sorted(best.items(), key=lambda kv: kv[1])


class _Bases:
    """All base sequences of one structure, in tie-break order."""

    def __init__(self, kind, count, nbytes, low32, target, info):
        self.kind, self.count, self.nbytes = kind, count, nbytes
        self.low32 = low32          # uint64 array, low 32 bits of the base result
        self.target = target        # int array, destination register per base
        self.info = info            # callable index -> (target, words, full value)


def _direct_bases(g: _Grammar, compressed: bool) -> _Bases | None:
    src = g.clui if compressed else g.lui32
    rows = sorted((w, t, v) for t in g.targets for w, v in src.get(t, []))
    if not rows:
        return None
    low = np.array([v for _, _, v in rows], dtype=np.uint64)
    tgt = np.array([t for _, t, _ in rows], dtype=np.int64)

    def info(i):
        w, t, v = rows[i]
        return t, (w,), isa.sext(v, 32) & ((1 << 64) - 1)
    return _Bases("clui" if compressed else "lui", 1, 2 if compressed else 4, low, tgt, info)


def _li_bases(g: _Grammar) -> _Bases | None:
    rows = sorted((w, t, v) for t in g.targets for w, v in g.li.get(t, []))
    if not rows:
        return None
    low = np.array([v & M32 for _, _, v in rows], dtype=np.uint64)
    tgt = np.array([t for _, t, _ in rows], dtype=np.int64)

    def info(i):
        w, t, v = rows[i]
        return t, (w,), v & ((1 << 64) - 1)
    return _Bases("cli", 1, 2, low, tgt, info)


def _sra_bases(g: _Grammar, j: int, compressed: bool) -> _Bases | None:
    setups = [s for s in g.setups if s[0] == j + 1]
    src = g.clui if compressed else g.lui32
    luis = sorted((w, r1, v) for r1, lst in src.items() if r1 != 0 and r1 not in g.protect for w, v in lst)
    if not setups or not luis:
        return None
    lw = np.array([w for w, _, _ in luis], dtype=np.uint64)
    lr = np.array([r for _, r, _ in luis], dtype=np.int64)
    lv = np.array([isa.sext(v, 32) for _, _, v in luis], dtype=np.int64)
    setups.sort(key=lambda s: s[3])
    nt = len(g.targets)
    parts_low, parts_idx = [], []
    for si, (_, rs, sh, sws) in enumerate(setups):
        shifted = (lv >> sh).astype(np.uint64) & np.uint64(M32)
        for ti, t in enumerate(g.targets):
            ok = np.array([(t, r, rs) in g.sra and r != rs for r in range(32)])[lr]
            idx = np.nonzero(ok)[0]
            parts_low.append(shifted[idx])
            # flat position in (lui, setup, target) order
            parts_idx.append((idx.astype(np.int64) * len(setups) + si) * nt + ti)
    flat = np.concatenate(parts_idx)
    low = np.concatenate(parts_low)
    order = np.argsort(flat, kind="stable")
    flat, low = flat[order], low[order]

    def info(i):
        f = int(flat[i])
        ti = f % nt
        si = (f // nt) % len(setups)
        li = f // nt // len(setups)
        t = g.targets[ti]
        w, r1, v = luis[li]
        _, rs, sh, sws = setups[si]
        full = (isa.sext(v, 32) >> sh) & ((1 << 64) - 1)
        return t, (w,) + sws + (g.sra[(t, r1, rs)],), full
    tgt = np.array(g.targets, dtype=np.int64)[flat % nt]
    return _Bases(f"{'c' if compressed else ''}sra{j}", 3 + j, (8 if compressed else 10) + 2 * j, low, tgt, info)


_PREP: dict = {}


def _prepare(catalog: Catalog, targets: tuple, max_setup_addiw: int, protect: frozenset):
    key = (id(catalog), targets, max_setup_addiw, protect)
    if key not in _PREP:
        g = _Grammar(catalog, targets, max_setup_addiw, protect)
        structures = [b for b in [_direct_bases(g, True), _li_bases(g), _direct_bases(g, False)] +
                      [_sra_bases(g, j, c) for j in range(max_setup_addiw + 1) for c in (True, False)]
                      if b is not None]
        _PREP[key] = (catalog, g, structures)
    return _PREP[key][1:]


def build_table(variant: CharsetVariant | str, catalog: Catalog | None = None, max_addiw: int = 4,
                slash_filter: bool | None = None, max_setup_addiw: int = 2, targets=TARGETS,
                live: frozenset = SLASH_LIVE, protect=None) -> LoadTable:
    variant = CharsetVariant.parse(variant)
    catalog = catalog or get_catalog(variant)
    if slash_filter is None:
        slash_filter = variant == CharsetVariant.SLASH
    protect = default_protect(variant) if protect is None else frozenset(protect)
    g, structures = _prepare(catalog, tuple(targets), max_setup_addiw, protect)
    nop = nop_mask(live) if slash_filter else None

    # per structure: keep the first (best) base per reachable key
    reduced = []
    for sorder, b in enumerate(structures):
        low = b.low32
        if nop is None:
            keys = low & np.uint64(0xFFFF)
        else:
            # upper halves within one carry of a nop-like value can still work
            hi = ((low >> np.uint64(16)) & np.uint64(0xFFFF)).astype(np.int64)
            near = nop[hi] | nop[(hi + 1) & 0xFFFF] | nop[(hi - 1) & 0xFFFF]
            sel = np.nonzero(near)[0]
            low = low[sel]
            keys = low
        # keep the best base per (target, key)
        keys = keys.astype(np.int64) | (b.target if nop is None else b.target[sel]) << 32
        uk, first = np.unique(keys, return_index=True)
        idx = np.sort(first if nop is None else sel[first])
        reduced.append((sorder, b, b.low32[idx], idx))

    entries: list = [None] * 65536
    best_rank = np.full(65536, np.iinfo(np.int64).max, dtype=np.int64)
    max_count = max(b.count for b in structures) + max_addiw
    for n in range(1, max_count + 1):
        level_rank = np.full(65536, np.iinfo(np.int64).max, dtype=np.int64)
        level_src = np.full((65536, 4), -1, dtype=np.int64)
        open_mask = best_rank == np.iinfo(np.int64).max
        if not open_mask.any():
            break
        for sorder, b, low, idx in reduced:
            k = n - b.count
            if not 0 <= k <= max_addiw:
                continue
            for t in g.targets:
                if k and t not in g.addiw:
                    continue
                tsel = b.target[idx] == t
                tl = low[tsel]
                tidx = idx[tsel]
                if not len(tl):
                    continue
                for sfx_rank, (s, sws) in enumerate(g.suffixes(t, k)):
                    fin = (tl.astype(np.int64) + s) & M32
                    key = fin & 0xFFFF
                    if nop is not None:
                        ok = nop[(fin >> 16) & 0xFFFF]
                        ok &= open_mask[key]
                    else:
                        ok = open_mask[key]
                    if not ok.any():
                        continue
                    kk, bi = key[ok], tidx[ok]
                    rank = ((b.nbytes + 2 * k) << 56) | (sorder << 52) | (bi.astype(np.int64) << 12) | sfx_rank
                    uk, first = np.unique(kk, return_index=True)
                    rk = rank[first]
                    better = rk < level_rank[uk]
                    uk, rk, bsel = uk[better], rk[better], bi[first][better]
                    level_rank[uk] = rk
                    level_src[uk] = np.stack([np.full(len(uk), sorder), bsel, np.full(len(uk), t),
                                              np.full(len(uk), sfx_rank * 8 + k)], axis=1)
        found = np.nonzero(level_rank != np.iinfo(np.int64).max)[0]
        for v in found.tolist():
            sorder, bi, t, sk = level_src[v].tolist()
            b = structures[sorder]
            bt, bws, full = b.info(bi)
            k = sk % 8
            s, sws = g.suffixes(t, k)[sk // 8]
            if k:
                full = isa.sext((full + s) & M32, 32) & ((1 << 64) - 1)
            words = bws + sws
            entries[v] = LoadSeq(t, v, words, _clobbers(words), full)
            best_rank[v] = level_rank[v]
    return LoadTable(variant, entries, slash_filter)


def find_word32(variant: CharsetVariant | str, value32: int, catalog: Catalog | None = None,
                max_addiw: int = 4, targets=TARGETS, max_setup_addiw: int = 2, protect=None) -> LoadSeq | None:
    """Shortest grammar sequence whose result has exactly ``value32`` in its low
    32 bits (used for words such as fence.i that are stored whole)."""
    variant = CharsetVariant.parse(variant)
    catalog = catalog or get_catalog(variant)
    protect = default_protect(variant) if protect is None else frozenset(protect)
    g, structures = _prepare(catalog, tuple(targets), max_setup_addiw, protect)
    value32 &= M32
    max_count = max(b.count for b in structures) + max_addiw
    for n in range(1, max_count + 1):
        best = None
        for sorder, b in enumerate(structures):
            k = n - b.count
            if not 0 <= k <= max_addiw:
                continue
            for t in g.targets:
                if k and t not in g.addiw:
                    continue
                for sfx_rank, (s, sws) in enumerate(g.suffixes(t, k)):
                    hit = np.nonzero((b.low32 == np.uint64((value32 - s) & M32)) & (b.target == t))[0]
                    if len(hit):
                        rank = (b.nbytes + 2 * k, sorder, int(hit[0]), sfx_rank)
                        if best is None or rank < best[0]:
                            best = (rank, b, int(hit[0]), k, s, sws)
        if best is not None:
            _, b, bi, k, s, sws = best
            t, bws, full = b.info(bi)
            if k:
                full = isa.sext((full + s) & M32, 32) & ((1 << 64) - 1)
            words = bws + sws
            return LoadSeq(t, value32 & 0xFFFF, words, _clobbers(words), full)
    return None


_TABLES: dict = {}


def default_cache_dir() -> Path:
    return Path(os.environ.get("ALPHARV_CACHE", Path.home() / ".cache" / "alpharv"))


def get_table(variant: CharsetVariant | str, cache_dir=None) -> LoadTable:
    """Build once per process, persisting to the cache directory."""
    variant = CharsetVariant.parse(variant)
    if variant in _TABLES:
        return _TABLES[variant]
    cache = Path(cache_dir) if cache_dir else default_cache_dir()
    path = cache / f"loadtable_{variant.name.lower()}_v{LoadTable.VERSION}.bin"
    table = None
    if path.exists():
        try:
            table = LoadTable.load(path)
        except (ValueError, struct.error):
            table = None
    if table is None:
        table = build_table(variant)
        try:
            cache.mkdir(parents=True, exist_ok=True)
            table.save(path)
        except OSError:
            pass
    _TABLES[variant] = table
    return table
