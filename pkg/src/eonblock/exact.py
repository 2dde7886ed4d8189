"""Exact network CTMC: state-space generation, generator assembly, exact blocking.

A network state is a flat tuple of ``links * C`` cells, row-major by link:
``0`` is a free slice, ``-1`` continues a block, and a positive code
``1 + o * K + k`` marks the first slice of a block of class ``k`` on OD pair
``o`` (indices local to the component being solved). Tuple equality is state
identity.
"""

from __future__ import annotations

import itertools
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np
import scipy.sparse as sp

from .model import OperationMode, ScenarioConfig
from .spectrum import candidates
from .stationary import generator_from_rates, solve_stationary

log = logging.getLogger(__name__)

FREE = 0
CONT = -1
ARRIVAL = 1
DEPARTURE = -1
DEFAULT_STATE_CAP = 2_000_000


class StateSpaceTooLarge(RuntimeError):
    def __init__(self, reached: int, cap: int):
        self.reached = reached
        self.cap = cap
        super().__init__(f"state-space cap of {cap} states exceeded (reached {reached})")


@dataclass
class StateSpace:
    capacity: int
    widths: tuple
    mode: OperationMode
    links: tuple  # global link ids, local index = position
    od_ids: tuple  # global OD indices, local index = position
    routes: tuple  # per local OD, tuple of local link indices
    states: list = field(default_factory=list)
    index: dict = field(default_factory=dict)
    src: np.ndarray = None
    dst: np.ndarray = None
    od: np.ndarray = None
    cls: np.ndarray = None
    kind: np.ndarray = None
    multiplicity: np.ndarray = None
    n_plus: np.ndarray = None  # |successors| per (state, od, class)
    blocking: np.ndarray = None  # bool per (state, od, class)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def num_classes(self) -> int:
        return len(self.widths)

    def code(self, o: int, k: int) -> int:
        return 1 + o * len(self.widths) + k

    def decode(self, code: int) -> tuple[int, int]:
        o, k = divmod(code - 1, len(self.widths))
        return o, k

    def link_cells(self, state: tuple, link: int) -> tuple:
        C = self.capacity
        return state[link * C:(link + 1) * C]

    def connections(self, state: tuple, o: int, k: int) -> int:
        """Number of (o, k) connections, counted on the first route link."""
        first = self.link_cells(state, self.routes[o][0])
        return first.count(self.code(o, k))


def _free_masks(state: tuple, n_links: int, C: int) -> list[int]:
    masks = []
    for j in range(n_links):
        m = 0
        base = j * C
        for c in range(C):
            if state[base + c] == FREE:
                m |= 1 << c
        masks.append(m)
    return masks


def _place(cells: list, route: Sequence[int], starts: Sequence[int], code: int,
           width: int, C: int) -> None:
    for j, s in zip(route, starts):
        base = j * C + s
        cells[base] = code
        for c in range(base + 1, base + width):
            cells[c] = CONT


def _clear(cells: list, route: Sequence[int], starts: Sequence[int], width: int, C: int) -> None:
    for j, s in zip(route, starts):
        base = j * C + s
        for c in range(base, base + width):
            cells[c] = FREE


def _block_positions(state: tuple, route: Sequence[int], code: int, C: int) -> list[list[int]]:
    out = []
    for j in route:
        base = j * C
        out.append([p for p in range(C) if state[base + p] == code])
    return out


def allocate_candidates(space: StateSpace, state: tuple, o: int, k: int) -> list[tuple]:
    """Successor states after admitting a class-``k`` request on OD ``o``."""
    C = space.capacity
    route = space.routes[o]
    masks = _free_masks(state, len(space.links), C)
    cand = candidates([masks[j] for j in route], space.widths[k], C, space.mode)
    if cand is None:
        return []
    out = []
    code = space.code(o, k)
    for starts in cand.expand(len(route)):
        cells = list(state)
        _place(cells, route, starts, code, space.widths[k], C)
        out.append(tuple(cells))
    return out


def deallocate_candidates(space: StateSpace, state: tuple, o: int, k: int) -> list[tuple[tuple, float]]:
    """Successor states after one (o, k) connection leaves, with multiplicities.

    Without conversion a connection sits on the same slices of every link, so
    each block on the first link identifies one connection. With conversion
    the state does not record which per-link blocks belong together; every
    cross-link choice is enumerated and weighted ``1 / n**(hops-1)`` so the
    multiplicities of the ``n`` connections still add up to ``n``.
    """
    C = space.capacity
    route = space.routes[o]
    width = space.widths[k]
    code = space.code(o, k)
    positions = _block_positions(state, route, code, C)
    n = len(positions[0])
    if n == 0:
        return []
    if not space.mode.spectrum_conversion:
        combos = [(p,) * len(route) for p in positions[0]]
        weight = 1.0
    else:
        combos = list(itertools.product(*positions))
        weight = 1.0 / n ** (len(route) - 1)
    merged: Counter = Counter()
    order = []
    for starts in combos:
        cells = list(state)
        _clear(cells, route, starts, width, C)
        key = tuple(cells)
        if key not in merged:
            order.append(key)
        merged[key] += 1
    return [(key, merged[key] * weight) for key in order]


def components(config: ScenarioConfig) -> list[list[int]]:
    """Group OD pairs whose routes are connected through shared links.

    Different groups never interact, so the network chain is the product of
    the group chains and each can be solved on its own.
    """
    parent = list(range(len(config.od_pairs)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    owner: dict = {}
    for o, od in enumerate(config.od_pairs):
        for link in od.route:
            if link in owner:
                ra, rb = find(o), find(owner[link])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            else:
                owner[link] = o
    groups: dict = {}
    for o in range(len(config.od_pairs)):
        groups.setdefault(find(o), []).append(o)
    return [groups[r] for r in sorted(groups)]


def build_state_space(config: ScenarioConfig, od_subset: Sequence[int] | None = None,
                      max_states: int = DEFAULT_STATE_CAP) -> StateSpace:
    """Close the state space under arrivals and departures, starting empty.

    States are numbered in discovery order; candidate successors are visited
    in a fixed order so numbering is reproducible.
    """
    od_ids = tuple(range(len(config.od_pairs))) if od_subset is None else tuple(od_subset)
    links = tuple(sorted({j for o in od_ids for j in config.od_pairs[o].route}))
    local = {j: i for i, j in enumerate(links)}
    routes = tuple(tuple(local[j] for j in config.od_pairs[o].route) for o in od_ids)
    C = config.capacity
    widths = config.widths
    K = len(widths)
    n_od = len(od_ids)
    space = StateSpace(C, widths, config.mode, links, od_ids, routes)
    sc = config.mode.spectrum_conversion

    empty = (FREE,) * (len(links) * C)
    states = [empty]
    index = {empty: 0}
    src, dst, ods, cls, kinds, mult = [], [], [], [], [], []
    n_plus_rows = []

    def lookup(key):
        t = index.get(key)
        if t is None:
            t = len(states)
            if t >= max_states:
                raise StateSpaceTooLarge(t + 1, max_states)
            index[key] = t
            states.append(key)
        return t

    i = 0
    while i < len(states):
        state = states[i]
        masks = _free_masks(state, len(links), C)
        row = [0] * (n_od * K)
        for o in range(n_od):
            route = routes[o]
            route_masks = [masks[j] for j in route]
            for k in range(K):
                cand = candidates(route_masks, widths[k], C, config.mode)
                if cand is None:
                    continue
                code = 1 + o * K + k
                succ = cand.expand(len(route))
                row[o * K + k] = len(succ)
                for starts in succ:
                    cells = list(state)
                    _place(cells, route, starts, code, widths[k], C)
                    t = lookup(tuple(cells))
                    src.append(i)
                    dst.append(t)
                    ods.append(o)
                    cls.append(k)
                    kinds.append(ARRIVAL)
                    mult.append(1.0)
        n_plus_rows.append(row)

        # departures: locate every block start once
        starts_of: dict = {}
        for pos, c in enumerate(state):
            if c > 0:
                starts_of.setdefault(c, []).append(pos)
        for code, where in starts_of.items():
            o, k = divmod(code - 1, K)
            route = routes[o]
            per_link = {j: [] for j in route}
            for pos in where:
                j, p = divmod(pos, C)
                per_link[j].append(p)
            positions = [per_link[j] for j in route]
            n = len(positions[0])
            if sc and len(route) > 1:
                combos = itertools.product(*positions)
                weight = 1.0 / n ** (len(route) - 1)
            else:
                combos = ((p,) * len(route) for p in positions[0])
                weight = 1.0
            merged: dict = {}
            for starts in combos:
                cells = list(state)
                _clear(cells, route, starts, widths[k], C)
                key = tuple(cells)
                merged[key] = merged.get(key, 0) + 1
            for key, count in merged.items():
                t = lookup(key)
                src.append(i)
                dst.append(t)
                ods.append(o)
                cls.append(k)
                kinds.append(DEPARTURE)
                mult.append(count * weight)
        i += 1

    space.states = states
    space.index = index
    space.src = np.asarray(src, dtype=np.int64)
    space.dst = np.asarray(dst, dtype=np.int64)
    space.od = np.asarray(ods, dtype=np.int32)
    space.cls = np.asarray(cls, dtype=np.int32)
    space.kind = np.asarray(kinds, dtype=np.int8)
    space.multiplicity = np.asarray(mult, dtype=float)
    space.n_plus = np.asarray(n_plus_rows, dtype=np.int64).reshape(len(states), n_od, K)
    space.blocking = space.n_plus == 0
    log.debug("state space: %d states, %d transitions", len(states), len(src))
    return space


def build_rate_matrix(space: StateSpace, config: ScenarioConfig) -> sp.csr_matrix:
    """Generator with ``q_it = lambda/|successors|`` for arrivals and
    ``multiplicity * mu`` for departures; diagonal is minus the row sum."""
    lam = np.array([config.od_pairs[o].arrival_rates for o in space.od_ids], dtype=float)
    lam = lam.reshape(len(space.od_ids), space.num_classes)
    mu = np.asarray(config.mus, dtype=float)
    arrivals = space.kind == ARRIVAL
    rates = np.empty(len(space.src))
    a_src = space.src[arrivals]
    a_od = space.od[arrivals]
    a_cls = space.cls[arrivals]
    rates[arrivals] = (lam[a_od, a_cls] * space.multiplicity[arrivals]
                       / space.n_plus[a_src, a_od, a_cls])
    rates[~arrivals] = mu[space.cls[~arrivals]] * space.multiplicity[~arrivals]
    keep = rates > 0
    return generator_from_rates(len(space), space.src[keep], space.dst[keep], rates[keep])


@dataclass
class ExactResult:
    bp: list  # per global OD, per class
    overall: float
    states: int
    runtime_s: float
    component_sizes: list = field(default_factory=list)


def exact_blocking(space: StateSpace, pi: np.ndarray, config: ScenarioConfig):
    """Per-(o, k) blocking ``sum_i pi_i B(i, o, k)`` and the rate-weighted mean.

    Returns ``(bp, overall)`` where ``bp`` is indexed by the space's local OD
    order. Classes with zero arrival rate report 0.
    """
    bp = np.einsum("i,iok->ok", pi, space.blocking.astype(float))
    lam = np.array([config.od_pairs[o].arrival_rates for o in space.od_ids], dtype=float)
    lam = lam.reshape(bp.shape)
    bp = np.where(lam > 0, bp, 0.0)
    total = lam.sum()
    overall = float((lam * bp).sum() / total) if total > 0 else 0.0
    return bp, overall


def solve_exact(config: ScenarioConfig, max_states: int = DEFAULT_STATE_CAP,
                method: str = "auto", decompose: bool = True) -> ExactResult:
    """Exact per-(o, k) and overall blocking for one operating point."""
    t0 = time.perf_counter()
    groups = components(config) if decompose else [list(range(len(config.od_pairs)))]
    K = config.num_classes
    bp = [[0.0] * K for _ in config.od_pairs]
    sizes = []
    for group in groups:
        space = build_state_space(config, group, max_states)
        Q = build_rate_matrix(space, config)
        pi = solve_stationary(Q, config.solver_tolerance, method=method)
        local, _ = exact_blocking(space, pi, config)
        for i, o in enumerate(group):
            bp[o] = [float(v) for v in local[i]]
        sizes.append(len(space))
    lam = np.array([od.arrival_rates for od in config.od_pairs], dtype=float)
    total = lam.sum()
    overall = float((lam * np.asarray(bp)).sum() / total) if total > 0 else 0.0
    return ExactResult(bp, overall, int(np.prod(sizes, dtype=float)), time.perf_counter() - t0, sizes)


def format_state(space: StateSpace, state: tuple) -> str:
    """Readable encoding: links split by ``|``, ``o:k`` starts (1-based), ``~`` continuation."""
    parts = []
    for j in range(len(space.links)):
        cells = []
        for c in space.link_cells(state, j):
            if c == FREE:
                cells.append("0")
            elif c == CONT:
                cells.append("~")
            else:
                o, k = space.decode(c)
                cells.append(f"{o + 1}:{k + 1}")
        parts.append(",".join(cells))
    return "|".join(parts)


def dump_state_space(space: StateSpace, fh: IO[str]) -> None:
    for i, state in enumerate(space.states):
        fh.write(f"{i + 1}\t{format_state(space, state)}\n")
