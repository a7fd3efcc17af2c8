"""SDPA sparse (dat-s) serialization for cross-validation with external solvers.

File layout (1-based indices, one entry per line):

    m
    nblocks
    size_1 ... size_nblocks
    b_1 ... b_m
    matno block i j value        (i <= j, upper triangle of a symmetric matrix)

Matrix 0 holds the *negated* objective: the conventional reading of a dat-s
file is "maximize <F0, Y> subject to <F_i, Y> = c_i, Y >= 0", so writing
F0 = -C makes an external solver's problem identical to ours
(minimize <C, X>); its reported optimum is the negative of ours.

Writing is canonical - entries sorted by (matno, block, i, j), floats printed
with repr - so write/read/write round-trips are byte-identical.  Reading
accepts negative block sizes (SDPA's diagonal-block shorthand) by expanding
them into 1x1 blocks.
"""

from __future__ import annotations

import re

import numpy as np

from .sdpsolve import SdpProblem

__all__ = ["write_sdpa_text", "write_sdpa", "read_sdpa_text", "read_sdpa"]


def write_sdpa_text(prob: SdpProblem) -> str:
    lines = [str(prob.num_constraints), str(len(prob.block_sizes))]
    lines.append(" ".join(str(s) for s in prob.block_sizes))
    lines.append(" ".join(repr(float(v)) for v in prob.b))
    entries = []
    for (blk, i, j), v in prob.objective.items():
        if v != 0.0:
            entries.append((0, blk + 1, i + 1, j + 1, -v))
    for cidx, con in enumerate(prob.constraints):
        for (blk, i, j), v in con.items():
            if v != 0.0:
                entries.append((cidx + 1, blk + 1, i + 1, j + 1, v))
    entries.sort(key=lambda e: e[:4])
    for matno, blk, i, j, v in entries:
        lines.append(f"{matno} {blk} {i} {j} {v!r}")
    return "\n".join(lines) + "\n"


def write_sdpa(prob: SdpProblem, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(write_sdpa_text(prob))


def _clean_numbers(line: str) -> list[str]:
    return [tok for tok in re.split(r"[\s,(){}]+", line.strip()) if tok]


def read_sdpa_text(text: str) -> SdpProblem:
    lines = [
        ln for ln in text.splitlines()
        if ln.strip() and not ln.lstrip().startswith(('"', "*"))
    ]
    if len(lines) < 4:
        raise ValueError("truncated dat-s content")
    m = int(_clean_numbers(lines[0])[0])
    nblocks = int(_clean_numbers(lines[1])[0])
    raw_sizes = [int(v) for v in _clean_numbers(lines[2])]
    if len(raw_sizes) != nblocks:
        raise ValueError(f"expected {nblocks} block sizes, got {len(raw_sizes)}")
    b = np.array([float(v) for v in _clean_numbers(lines[3])])
    if len(b) != m:
        raise ValueError(f"expected {m} right-hand sides, got {len(b)}")

    # expand diagonal blocks (negative sizes) into 1x1 blocks
    block_map: list[tuple[int, bool]] = []  # file block -> (our first block, diagonal?)
    sizes: list[int] = []
    for s in raw_sizes:
        if s > 0:
            block_map.append((len(sizes), False))
            sizes.append(s)
        else:
            block_map.append((len(sizes), True))
            sizes.extend([1] * (-s))

    objective: dict = {}
    constraints: list[dict] = [dict() for _ in range(m)]
    for ln in lines[4:]:
        toks = _clean_numbers(ln)
        if len(toks) != 5:
            raise ValueError(f"bad entry line {ln!r}")
        matno, blk, i, j = (int(t) for t in toks[:4])
        v = float(toks[4])
        if not (1 <= blk <= nblocks):
            raise ValueError(f"block index {blk} out of range in {ln!r}")
        base, diagonal = block_map[blk - 1]
        if diagonal:
            if i != j:
                raise ValueError(f"off-diagonal entry in diagonal block: {ln!r}")
            ent = (base + i - 1, 0, 0)
        else:
            ii, jj = min(i, j) - 1, max(i, j) - 1
            ent = (base, ii, jj)
        if matno == 0:
            objective[ent] = objective.get(ent, 0.0) - v
        elif 1 <= matno <= m:
            constraints[matno - 1][ent] = constraints[matno - 1].get(ent, 0.0) + v
        else:
            raise ValueError(f"matrix index {matno} out of range in {ln!r}")
    objective = {k: v for k, v in objective.items() if v != 0.0}
    constraints = [{k: v for k, v in con.items() if v != 0.0} for con in constraints]
    return SdpProblem(
        block_sizes=tuple(sizes),
        b=b,
        constraints=tuple(constraints),
        objective=objective,
    )


def read_sdpa(path) -> SdpProblem:
    with open(path) as fh:
        return read_sdpa_text(fh.read())
