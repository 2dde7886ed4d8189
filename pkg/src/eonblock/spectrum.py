"""Slice-block placement rules shared by the exact engine and the simulator.

Link occupancy is summarised as an integer bitmask of *free* slices, bit ``s``
standing for slice ``s`` (0-based). A placement is a tuple with one start slice
per route link.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import NamedTuple, Sequence

from .model import OperationMode, Policy


class Candidates(NamedTuple):
    """Compact form of the successor set for one arrival.

    ``aligned`` is True when every placement uses the same start on every
    link; then ``starts[0]`` lists those starts. Otherwise ``starts[i]`` lists
    the admissible starts on the i-th route link and the placements are their
    Cartesian product.
    """

    aligned: bool
    starts: tuple

    def count(self) -> int:
        if self.aligned:
            return len(self.starts[0])
        n = 1
        for s in self.starts:
            n *= len(s)
        return n

    def expand(self, hops: int) -> list[tuple]:
        if self.aligned:
            return [(s,) * hops for s in self.starts[0]]
        return list(itertools.product(*self.starts))


@lru_cache(maxsize=None)
def set_bits(mask: int) -> tuple:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def block_starts(free: int, width: int, capacity: int) -> int:
    """Mask of start slices ``s`` with ``[s, s + width)`` free in ``free``."""
    if width > capacity:
        return 0
    run = free
    for i in range(1, width):
        run &= free >> i
    return run & ((1 << (capacity - width + 1)) - 1)


def block_mask(start: int, width: int) -> int:
    return ((1 << width) - 1) << start


def candidates(free_masks: Sequence[int], width: int, capacity: int,
               mode: OperationMode) -> Candidates | None:
    """Admissible placements of a ``width``-slice block on a route.

    Without conversion the block must sit on the same slices of every link.
    With conversion an aligned block is still preferred; only when none
    exists are the links treated independently. Random-fit keeps all
    options, first-fit keeps the lowest start (per link when unaligned).
    Returns ``None`` when the request is blocked.
    """
    common = free_masks[0]
    for m in free_masks[1:]:
        common &= m
    aligned = block_starts(common, width, capacity)
    first_fit = mode.policy is Policy.FF
    if aligned:
        if first_fit:
            low = aligned & -aligned
            return Candidates(True, ((low.bit_length() - 1,),))
        return Candidates(True, (set_bits(aligned),))
    if not mode.spectrum_conversion or len(free_masks) == 1:
        return None
    per_link = []
    for m in free_masks:
        starts = block_starts(m, width, capacity)
        if not starts:
            return None
        if first_fit:
            low = starts & -starts
            per_link.append((low.bit_length() - 1,))
        else:
            per_link.append(set_bits(starts))
    return Candidates(False, tuple(per_link))


def placements(free_masks: Sequence[int], width: int, capacity: int,
               mode: OperationMode) -> list[tuple]:
    """All placements (one start per link) an arrival may use; empty if blocked."""
    cand = candidates(free_masks, width, capacity, mode)
    if cand is None:
        return []
    return cand.expand(len(free_masks))


def largest_free_block(cells: Sequence) -> int:
    """Length of the longest run of free cells (``0`` marks a free slice)."""
    best = run = 0
    for c in cells:
        if c == 0:
            run += 1
            if run > best:
                best = run
        else:
            run = 0
    return best


def largest_free_run(free: int) -> int:
    best = 0
    while free:
        free &= free >> 1
        best += 1
    return best
