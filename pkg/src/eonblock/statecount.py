"""Counting single-link spectrum patterns per occupancy.

For a link with ``C`` slices carrying demand widths ``d``, the closed forms
count, for every occupancy ``x``, the random-fit patterns (``total``), those
that still fit a class-``k`` block (``non_blocking``), and those that have
enough free slices but not contiguously (``frag_blocking``). All arithmetic
is on Python integers, so ``C`` in the hundreds is fine.

First-fit has no closed form; :func:`enumerate_link_states` closes the
single-link chain explicitly and classifies each pattern.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial
from typing import IO, Sequence

from .model import DemandClass, OdPair, OperationMode, Policy, ScenarioConfig, Topology
from .spectrum import largest_free_block


def binom(a: int, b: int) -> int:
    """Binomial coefficient, zero when ``a < b`` or either argument is negative."""
    if a < 0 or b < 0 or a < b:
        return 0
    return comb(a, b)


def multinomial(counts: Sequence[int]) -> int:
    out = factorial(sum(counts))
    for c in counts:
        out //= factorial(c)
    return out


def enumerate_macrostates(C: int, d: Sequence[int], x: int) -> list[tuple]:
    """All non-negative ``n`` with ``n . d == x``, in lexicographic order."""
    if x < 0 or x > C:
        return []
    d = tuple(d)
    out: list[tuple] = []

    def rec(i: int, remaining: int, prefix: tuple):
        if i == len(d) - 1:
            if remaining % d[i] == 0:
                out.append(prefix + (remaining // d[i],))
            return
        for n in range(remaining // d[i] + 1):
            rec(i + 1, remaining - n * d[i], prefix + (n,))

    rec(0, x, ())
    return out


def _nonblocking_weight(free: int, conns: int, width: int) -> int:
    """Gap compositions of ``free`` slices into ``conns + 1`` gaps with some gap >= width."""
    total = 0
    for i in range(1, conns + 2):
        term = binom(conns + 1, i) * binom(free + conns - i * width, conns)
        total += term if i % 2 else -term
    return total


def count_total(x: int, C: int, d: Sequence[int]) -> int:
    """Number of random-fit link patterns with ``x`` occupied slices."""
    free = C - x
    total = 0
    for n in enumerate_macrostates(C, d, x):
        N = sum(n)
        total += multinomial(n) * binom(free + N, N)
    return total


def count_nonblocking(x: int, k: int, C: int, d: Sequence[int]) -> int:
    """Patterns with ``x`` occupied slices that still fit a class-``k`` block."""
    free = C - x
    total = 0
    for n in enumerate_macrostates(C, d, x):
        total += _nonblocking_weight(free, sum(n), d[k]) * multinomial(n)
    return total


def count_frag_blocking(x: int, k: int, C: int, d: Sequence[int]) -> int:
    if 0 <= x <= C - d[k]:
        return count_total(x, C, d) - count_nonblocking(x, k, C, d)
    return 0


@dataclass(frozen=True)
class StateClassCounts:
    total: int
    non_blocking: int
    frag_blocking: int
    resource_blocking: int


@dataclass(frozen=True)
class CountTable:
    """Per-occupancy, per-class pattern counts for one link type."""

    capacity: int
    widths: tuple
    policy: Policy
    total: tuple  # index x
    non_blocking: tuple  # [x][k]
    frag_blocking: tuple  # [x][k]

    def counts(self, x: int, k: int) -> StateClassCounts:
        tot = self.total[x]
        nb = self.non_blocking[x][k]
        fb = self.frag_blocking[x][k]
        return StateClassCounts(tot, nb, fb, tot - nb - fb)

    @property
    def valid(self) -> tuple:
        return tuple(x for x, t in enumerate(self.total) if t > 0)

    def rows(self):
        for x in range(self.capacity + 1):
            if self.total[x] == 0:
                continue
            for k, width in enumerate(self.widths):
                c = self.counts(x, k)
                yield {
                    "x": x, "class": k + 1, "d": width, "total": c.total,
                    "non_blocking": c.non_blocking, "frag_blocking": c.frag_blocking,
                    "resource_blocking": c.resource_blocking,
                }


@lru_cache(maxsize=64)
def rf_count_table(C: int, d: tuple) -> CountTable:
    total = []
    nb = []
    fb = []
    for x in range(C + 1):
        macro = enumerate_macrostates(C, d, x)
        tot = sum(multinomial(n) * binom(C - x + sum(n), sum(n)) for n in macro)
        row_nb = []
        row_fb = []
        for k, width in enumerate(d):
            good = sum(_nonblocking_weight(C - x, sum(n), width) * multinomial(n) for n in macro)
            row_nb.append(good)
            row_fb.append(tot - good if x <= C - width else 0)
        total.append(tot)
        nb.append(tuple(row_nb))
        fb.append(tuple(row_fb))
    return CountTable(C, tuple(d), Policy.RF, tuple(total), tuple(nb), tuple(fb))


def _single_link_config(C: int, d: Sequence[int], policy: Policy) -> ScenarioConfig:
    topo = Topology((1, 2), ((1, 2),), C)
    classes = tuple(DemandClass(w, 1.0) for w in d)
    od = OdPair(1, 2, (0,), (0.0,) * len(d))
    return ScenarioConfig(topo, classes, (od,), OperationMode(policy, False), engine="exact")


@dataclass
class LinkEnumeration:
    states: list  # tuples of C cells (0 free, -1 continuation, >0 block start)
    table: CountTable


def enumerate_link_states(policy: Policy | str, C: int, d: Sequence[int],
                          max_states: int = 2_000_000) -> LinkEnumeration:
    """Explicit single-link, single-route patterns reachable under ``policy``,
    classified per occupancy and class by the largest free run."""
    from .exact import build_state_space

    policy = Policy(policy) if isinstance(policy, str) else policy
    d = tuple(d)
    space = build_state_space(_single_link_config(C, d, policy), max_states=max_states)
    total = [0] * (C + 1)
    nb = [[0] * len(d) for _ in range(C + 1)]
    fb = [[0] * len(d) for _ in range(C + 1)]
    for state in space.states:
        x = sum(1 for c in state if c != 0)
        fm = largest_free_block(state)
        total[x] += 1
        for k, width in enumerate(d):
            if fm >= width:
                nb[x][k] += 1
            elif width <= C - x:
                fb[x][k] += 1
    table = CountTable(C, d, policy, tuple(total), tuple(map(tuple, nb)), tuple(map(tuple, fb)))
    return LinkEnumeration(list(space.states), table)


@lru_cache(maxsize=64)
def ff_count_table(C: int, d: tuple, max_states: int = 2_000_000) -> CountTable:
    return enumerate_link_states(Policy.FF, C, d, max_states).table


def write_counts_csv(table: CountTable, fh: IO[str]) -> None:
    fields = ["x", "class", "d", "total", "non_blocking", "frag_blocking", "resource_blocking"]
    writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in table.rows():
        writer.writerow(row)
