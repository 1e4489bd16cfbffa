"""Exhaustive enumeration of charset-valid RV64GC instructions."""
from __future__ import annotations

import enum
import io
import struct
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import isa_codec as isa

ALNUM_BYTES = frozenset(list(range(0x30, 0x3A)) + list(range(0x41, 0x5B)) + list(range(0x61, 0x7B)))


class CharsetVariant(enum.Enum):
    ALNUM = 0
    HASH = 1
    SLASH = 2
    TICK = 3

    @property
    def extra(self) -> int | None:
        return {1: 0x23, 2: 0x2F, 3: 0x27}.get(self.value)

    @property
    def bytes(self) -> frozenset:
        return ALNUM_BYTES | {self.extra} if self.extra is not None else ALNUM_BYTES

    @classmethod
    def parse(cls, name: "str | CharsetVariant") -> "CharsetVariant":
        if isinstance(name, cls):
            return name
        return {"alnum": cls.ALNUM, "hash": cls.HASH, "#": cls.HASH, "slash": cls.SLASH, "/": cls.SLASH,
                "tick": cls.TICK, "'": cls.TICK}[name.lower()]


def is_charset_valid(data: bytes, variant: CharsetVariant | frozenset) -> bool:
    allowed = variant.bytes if isinstance(variant, CharsetVariant) else variant
    return all(b in allowed for b in data)


# rd and rs1 never change which instruction a non-SYSTEM word is
_KEY_MASK = 0xFFF0707F


class Catalog:
    """Charset-valid instructions grouped by base mnemonic.

    ``groups`` maps mnemonic to a sorted uint32 array of word values; 16-bit
    words are recognisable by their two low bits.
    """

    def __init__(self, variant: CharsetVariant, groups: dict[str, np.ndarray], charset: frozenset | None = None):
        self.variant = variant
        self.charset = variant.bytes if charset is None else charset
        self.groups = {k: np.sort(np.asarray(v, dtype=np.uint32)) for k, v in sorted(groups.items())}

    def __contains__(self, mnemonic: str) -> bool:
        return mnemonic in self.groups

    def count(self, mnemonic: str) -> int:
        return len(self.groups.get(mnemonic, ()))

    def words(self, mnemonic: str) -> np.ndarray:
        return self.groups.get(mnemonic, np.zeros(0, np.uint32))

    def entries(self, mnemonic: str):
        for w in self.words(mnemonic).tolist():
            width = 16 if w & 3 != 3 else 32
            yield isa.InstrWord(width, w), isa.decode(w, width)

    def decoded(self, mnemonic: str, width: int | None = None) -> list[tuple[int, isa.Instr]]:
        out = []
        for iw, ins in self.entries(mnemonic):
            if width is None or iw.width == width:
                out.append((iw.value, ins))
        return out

    def all_words(self):
        for name, ws in self.groups.items():
            for w in ws.tolist():
                yield name, w

    def __len__(self) -> int:
        return sum(len(v) for v in self.groups.values())

    # persistence ---------------------------------------------------------
    MAGIC = b"ARVCAT"
    VERSION = 1

    def to_bytes(self) -> bytes:
        """Layout: magic, u16 version, u8 variant, u32 group count, then per group
        u8 name length, name (ascii), u32 word count, words as u32 little-endian."""
        out = io.BytesIO()
        out.write(self.MAGIC + struct.pack("<HBI", self.VERSION, self.variant.value, len(self.groups)))
        for name, ws in self.groups.items():
            nb = name.encode()
            out.write(struct.pack("<B", len(nb)) + nb + struct.pack("<I", len(ws)))
            out.write(ws.astype("<u4").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Catalog":
        if data[:6] != cls.MAGIC:
            raise ValueError("not a catalog file")
        version, vid, n = struct.unpack_from("<HBI", data, 6)
        if version != cls.VERSION:
            raise ValueError(f"catalog version {version} unsupported")
        pos = 13
        groups = {}
        for _ in range(n):
            ln = data[pos]
            name = data[pos + 1:pos + 1 + ln].decode()
            pos += 1 + ln
            (cnt,) = struct.unpack_from("<I", data, pos)
            pos += 4
            groups[name] = np.frombuffer(data, "<u4", cnt, pos).astype(np.uint32)
            pos += 4 * cnt
        return cls(CharsetVariant(vid), groups)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Catalog":
        return cls.from_bytes(Path(path).read_bytes())


def enumerate_catalog(variant: CharsetVariant | str, charset: frozenset | None = None) -> Catalog:
    variant = CharsetVariant.parse(variant)
    allowed = sorted(variant.bytes if charset is None else charset)
    groups: dict[str, list] = defaultdict(list)
    if not allowed:
        return Catalog(variant, {}, frozenset())
    cs = np.array(allowed, dtype=np.uint32)

    for b0 in allowed:
        if b0 & 3 == 3:
            continue
        for b1 in allowed:
            w = b0 | b1 << 8
            ins = isa.decode(w, 16)
            if ins is not None:
                groups[isa.base_mnemonic(ins)].append(w)

    hi = (cs[:, None, None] << 24 | cs[None, :, None] << 16 | cs[None, None, :] << 8).reshape(-1)
    for b0 in allowed:
        if isa.classify_width(b0) != 32:
            continue
        words = hi | np.uint32(b0)
        if b0 & 0x7F == 0x73:
            for w in words.tolist():
                ins = isa.decode(w, 32)
                if ins is not None:
                    groups[ins.mnemonic].append(w)
            continue
        keys, inverse = np.unique(words & np.uint32(_KEY_MASK), return_inverse=True)
        names = []
        for k in keys.tolist():
            ins = isa.decode(k, 32)
            names.append(ins.mnemonic if ins is not None else None)
        names_arr = np.array([n or "" for n in names], dtype=object)
        per_word = names_arr[inverse]
        for name in set(names) - {None}:
            groups[name].append(words[per_word == name])
    merged = {}
    for name, parts in groups.items():
        arrs = [np.asarray(p, dtype=np.uint32).reshape(-1) for p in parts]
        merged[name] = np.concatenate(arrs) if arrs else np.zeros(0, np.uint32)
    return Catalog(variant, merged, frozenset(allowed))


_CACHE: dict = {}


def get_catalog(variant: CharsetVariant | str, cache_dir: str | Path | None = None) -> Catalog:
    """Enumerate once per process; optionally persist to ``cache_dir``."""
    variant = CharsetVariant.parse(variant)
    if variant in _CACHE:
        return _CACHE[variant]
    path = Path(cache_dir) / f"catalog_{variant.name.lower()}.bin" if cache_dir else None
    if path is not None and path.exists():
        cat = Catalog.load(path)
    else:
        cat = enumerate_catalog(variant)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            cat.save(path)
    _CACHE[variant] = cat
    return cat


# ---------------------------------------------------------------------------
# statistics

def _vec_fields(words: np.ndarray, fmt: str) -> dict[str, np.ndarray]:
    w = words.astype(np.int64)
    rd, rs1, rs2 = (w >> 7) & 31, (w >> 15) & 31, (w >> 20) & 31

    def s(v, bits):
        return np.where(v >> (bits - 1), v - (1 << bits), v)

    out = {}
    if fmt in ("R", "RRM", "R1", "R1RM", "R4", "I", "SH6", "SH5", "U", "J", "CSR", "CSRI", "AMO", "LR"):
        out["rd"] = rd
    if fmt in ("R", "RRM", "R1", "R1RM", "R4", "I", "SH6", "SH5", "S", "B", "CSR", "AMO", "LR"):
        out["rs1"] = rs1
    if fmt in ("R", "RRM", "R4", "S", "B", "AMO"):
        out["rs2"] = rs2
    if fmt in ("RRM", "R1RM", "R4"):
        out["rm"] = (w >> 12) & 7
    if fmt == "R4":
        out["rs3"] = w >> 27
    if fmt == "I":
        out["imm"] = s(w >> 20, 12)
    elif fmt == "SH6":
        out["shamt"] = (w >> 20) & 63
    elif fmt == "SH5":
        out["shamt"] = (w >> 20) & 31
    elif fmt == "S":
        out["imm"] = s(((w >> 25) << 5) | rd, 12)
    elif fmt == "B":
        out["imm"] = s(((w >> 31) << 12) | ((w >> 7) & 1) << 11 | ((w >> 25) & 63) << 5 | ((w >> 8) & 15) << 1, 13)
    elif fmt == "U":
        out["imm"] = w >> 12
    elif fmt == "J":
        out["imm"] = s(((w >> 31) << 20) | ((w >> 12) & 0xFF) << 12 | ((w >> 20) & 1) << 11 | ((w >> 21) & 0x3FF) << 1, 21)
    elif fmt in ("CSR", "CSRI"):
        out["csr"] = w >> 20
        if fmt == "CSRI":
            out["imm"] = rs1
    return out


def operand_summary(catalog: Catalog, mnemonic: str) -> dict:
    """Per operand role: sorted register list, or (min, max) for immediates."""
    ws = catalog.words(mnemonic)
    vals: dict[str, set] = defaultdict(set)
    fp_roles: set = set()
    w32 = ws[(ws & 3) == 3]
    if len(w32):
        name = mnemonic
        fmt, _, _, fp = isa._OPS32[name]
        fp_roles |= set(fp)
        for role, arr in _vec_fields(w32, fmt).items():
            vals[role].update(np.unique(arr).tolist())
    for w in ws[(ws & 3) != 3].tolist():
        ins = isa.expand(isa.decode(w, 16)) if mnemonic != "hint" else isa.decode(w, 16)
        fp_roles |= set(ins.fp)
        for role, v in ins.operands:
            vals[role].add(v)
    out = {}
    for role, vs in vals.items():
        if role in isa.REG_ROLES:
            names = isa.FREGS if role in fp_roles else isa.XREGS
            out[role] = [names[v] for v in sorted(vs)]
        else:
            out[role] = (min(vs), max(vs))
    return out


def stats(catalog: Catalog) -> dict[str, int]:
    return {k: len(v) for k, v in catalog.groups.items()}
