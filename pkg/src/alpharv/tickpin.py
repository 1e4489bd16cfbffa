"""Pinned floating-point constants for the tick variant.

The tick stage 2 decodes a fixed 512 bytes, so it is the same for every
payload and its constants need solving once.  ``SEARCH`` reproduces them:
``solve(template(), seed=7, start=315018, max_instances=16,
trial_budget=20000)`` lands on polymorph 315025.
"""
from __future__ import annotations

import functools

from .stage2 import Stage2Params, build_stage2

DECODE_LEN = 512
PAGE = -1
SEARCH = {"seed": 7, "start": 315018, "max_instances": 16, "trial_budget": 20000}

PINNED = {
    "variant": "tick", "payload_len": DECODE_LEN, "page": PAGE, "regs": [8, 11, 13, 9, 10, 1],
    "order": [1, 2, 0], "inc_pos": 4, "index": 315025, "seed": 7, "b": "4131555555555555",
    "pairs": [
        ["413136324f6e656c", "4253426f52773368", "42536d3563314954"],
        ["4131434230336b39", "42523331437a4462", "42536c7731674236"],
        ["413144574c553364", "4251434766343173", "42516d7045787743"],
        ["4131645267644166", "4262514e7655724e", None],
    ],
}


def template():
    return build_stage2("tick", Stage2Params(DECODE_LEN, page=PAGE))


@functools.lru_cache(maxsize=1)
def pinned():
    from .fp_solver import SolverResult
    res = SolverResult.from_dict(PINNED)
    if not res.verify():
        raise AssertionError("pinned tick constants do not verify")
    return res
