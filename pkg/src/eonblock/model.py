"""Domain types, scenario loading and route computation.

Every engine (exact, approximate, simulation) consumes a :class:`ScenarioConfig`.
Configs are immutable once built so they can be shipped to worker processes.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Hashable, Iterable, Sequence

import yaml

NodeId = Hashable


class ConfigError(ValueError):
    """Raised when a scenario document fails validation.

    The message starts with the offending field path, e.g. ``classes[1].d``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class Policy(str, Enum):
    RF = "rf"
    FF = "ff"


@dataclass(frozen=True)
class OperationMode:
    policy: Policy
    spectrum_conversion: bool = False

    @classmethod
    def parse(cls, text: str) -> "OperationMode":
        key = text.strip().lower()
        try:
            return _MODES[key]
        except KeyError:
            raise ValueError(f"unknown mode {text!r}; expected one of {sorted(_MODES)}") from None

    @property
    def name(self) -> str:
        base = self.policy.value
        return f"{base}-sc" if self.spectrum_conversion else base

    def __str__(self) -> str:
        return self.name


_MODES = {
    "rf": OperationMode(Policy.RF, False),
    "ff": OperationMode(Policy.FF, False),
    "rf-sc": OperationMode(Policy.RF, True),
    "ff-sc": OperationMode(Policy.FF, True),
}
ALL_MODES = tuple(_MODES.values())


@dataclass(frozen=True)
class Topology:
    nodes: tuple
    links: tuple  # ((src, dst), ...), index = link id
    capacity: int
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError("capacity", "must be a positive integer")
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise ConfigError("nodes", "duplicate node id")
        index = {}
        for i, (u, v) in enumerate(self.links):
            for end in (u, v):
                if end not in node_set:
                    raise ConfigError(f"links[{i}]", f"unknown node {end!r}")
            if u == v:
                raise ConfigError(f"links[{i}]", "self-loop")
            if (u, v) in index:
                raise ConfigError(f"links[{i}]", f"duplicate link {u!r}->{v!r}")
            index[(u, v)] = i
        object.__setattr__(self, "_index", index)

    def link_id(self, u: NodeId, v: NodeId) -> int:
        return self._index[(u, v)]

    def has_link(self, u: NodeId, v: NodeId) -> bool:
        return (u, v) in self._index

    def successors(self, u: NodeId) -> list:
        return [v for (a, v) in self.links if a == u]


@dataclass(frozen=True)
class DemandClass:
    width: int
    holding_rate: float = 1.0

    @property
    def d(self) -> int:
        return self.width

    @property
    def mu(self) -> float:
        return self.holding_rate


@dataclass(frozen=True)
class OdPair:
    origin: NodeId
    destination: NodeId
    route: tuple  # link ids in travel order
    arrival_rates: tuple = ()  # lambda per class

    @property
    def hops(self) -> int:
        return len(self.route)


@dataclass(frozen=True)
class ScenarioConfig:
    topology: Topology
    classes: tuple
    od_pairs: tuple
    mode: OperationMode = OperationMode(Policy.RF)
    engine: str = "approx"
    variant: str = "ees"
    loads: tuple = ()
    epsilon: float = 1e-6
    solver_tolerance: float = 1e-10
    max_iters: int = 1000
    seed: int = 0
    requests: int = 1_000_000

    @property
    def capacity(self) -> int:
        return self.topology.capacity

    @property
    def widths(self) -> tuple:
        return tuple(c.width for c in self.classes)

    @property
    def mus(self) -> tuple:
        return tuple(c.holding_rate for c in self.classes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def at_load(self, load: float) -> "ScenarioConfig":
        """Copy with rates split uniformly over OD pairs and classes.

        ``lambda_k^o = load * mu_k / (|O| K)`` so that the offered load
        ``sum lambda/mu`` equals ``load`` (reduces to ``load/(|O| K)`` for unit
        holding rates).
        """
        if load < 0:
            raise ConfigError("loads", "offered load must be non-negative")
        share = load / (len(self.od_pairs) * self.num_classes)
        rates = tuple(share * c.holding_rate for c in self.classes)
        ods = tuple(dataclasses.replace(od, arrival_rates=rates) for od in self.od_pairs)
        return dataclasses.replace(self, od_pairs=ods)

    def with_mode(self, mode: OperationMode | str) -> "ScenarioConfig":
        if isinstance(mode, str):
            mode = OperationMode.parse(mode)
        return dataclasses.replace(self, mode=mode)

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def rates(self) -> list[list[float]]:
        return [list(od.arrival_rates) for od in self.od_pairs]

    def routes_through(self, link: int) -> list[int]:
        return [o for o, od in enumerate(self.od_pairs) if link in od.route]


def offered_load(config: ScenarioConfig) -> float:
    """Return ``sum_k sum_o lambda_k^o / mu_k``."""
    total = 0.0
    for od in config.od_pairs:
        for lam, cls in zip(od.arrival_rates, config.classes):
            total += lam / cls.holding_rate
    return total


def _node_key(node: NodeId):
    # ints order numerically, everything else by string form
    if isinstance(node, int):
        return (0, node, "")
    return (1, 0, str(node))


def shortest_path(topology: Topology, origin: NodeId, destination: NodeId) -> tuple:
    """Minimum-hop directed route as a tuple of link ids.

    Among equal-length paths the one whose node sequence is lexicographically
    smallest wins, so routes are reproducible across runs.
    """
    if origin == destination:
        raise ValueError("origin and destination must differ")
    for end in (origin, destination):
        if end not in topology.nodes:
            raise ValueError(f"unknown node {end!r}")

    # hop distance to destination over reversed links
    preds: dict = {}
    for u, v in topology.links:
        preds.setdefault(v, []).append(u)
    dist = {destination: 0}
    queue = deque([destination])
    while queue:
        v = queue.popleft()
        for u in preds.get(v, ()):
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    if origin not in dist:
        raise ValueError(f"no path from {origin!r} to {destination!r}")

    route = []
    node = origin
    while node != destination:
        options = [v for v in topology.successors(node) if dist.get(v) == dist[node] - 1]
        nxt = min(options, key=_node_key)
        route.append(topology.link_id(node, nxt))
        node = nxt
    return tuple(route)


def route_nodes(topology: Topology, route: Sequence[int]) -> list:
    nodes = [topology.links[route[0]][0]]
    for link in route:
        nodes.append(topology.links[link][1])
    return nodes


def _route_from_nodes(topology: Topology, path: Sequence, where: str) -> tuple:
    if len(path) < 2:
        raise ConfigError(where, "route needs at least two nodes")
    links = []
    for u, v in zip(path, path[1:]):
        if not topology.has_link(u, v):
            raise ConfigError(where, f"route uses missing link {u!r}->{v!r}")
        links.append(topology.link_id(u, v))
    if len(set(links)) != len(links):
        raise ConfigError(where, "route revisits a link")
    return tuple(links)


def _require(doc: dict, key: str, path: str = ""):
    if key not in doc:
        raise ConfigError(f"{path}{key}", "missing required field")
    return doc[key]


def _as_number(value, path: str, *, positive: bool = False, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and (not isinstance(value, int) and not float(value).is_integer()):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if value < 0:
        raise ConfigError(path, "negative value")
    if positive and value <= 0:
        raise ConfigError(path, "must be positive")
    return int(value) if integer else float(value)


def _freeze_node(node):
    if isinstance(node, list):
        raise ConfigError("nodes", f"node id must be a scalar, got {node!r}")
    return node


def build_config(doc: dict) -> ScenarioConfig:
    """Validate a parsed scenario document and build a :class:`ScenarioConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "document must be a mapping")

    nodes = tuple(_freeze_node(n) for n in _require(doc, "nodes"))
    raw_links = _require(doc, "links")
    links = []
    for i, pair in enumerate(raw_links):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"links[{i}]", "expected a [source, target] pair")
        links.append((pair[0], pair[1]))
    capacity = _require(doc, "capacity")
    if isinstance(capacity, (list, dict)):
        raise ConfigError("capacity", "per-link capacities are not supported; give one integer")
    capacity = _as_number(capacity, "capacity", positive=True, integer=True)
    topology = Topology(nodes, tuple(links), capacity)

    classes = []
    for i, raw in enumerate(_require(doc, "classes")):
        if not isinstance(raw, dict):
            raise ConfigError(f"classes[{i}]", "expected a mapping with d and mu")
        d = _as_number(_require(raw, "d", f"classes[{i}]."), f"classes[{i}].d",
                       positive=True, integer=True)
        if d > capacity:
            raise ConfigError(f"classes[{i}].d", "class width exceeds capacity")
        mu = _as_number(raw.get("mu", 1.0), f"classes[{i}].mu", positive=True)
        classes.append(DemandClass(d, mu))
    if not classes:
        raise ConfigError("classes", "at least one demand class is required")

    ods = []
    for i, raw in enumerate(_require(doc, "od_pairs")):
        where = f"od_pairs[{i}]"
        if not isinstance(raw, dict):
            raise ConfigError(where, "expected a mapping with origin and dest")
        origin = _require(raw, "origin", where + ".")
        dest = _require(raw, "dest", where + ".")
        for end, name in ((origin, "origin"), (dest, "dest")):
            if end not in nodes:
                raise ConfigError(f"{where}.{name}", f"unknown node {end!r}")
        if origin == dest:
            raise ConfigError(where, "origin equals destination")
        if raw.get("route") is not None:
            path = list(raw["route"])
            if path[0] != origin or path[-1] != dest:
                raise ConfigError(f"{where}.route", "route must run from origin to dest")
            route = _route_from_nodes(topology, path, f"{where}.route")
        else:
            try:
                route = shortest_path(topology, origin, dest)
            except ValueError as exc:
                raise ConfigError(where, str(exc)) from None
        rates: tuple = ()
        if raw.get("rates") is not None:
            raw_rates = raw["rates"]
            if len(raw_rates) != len(classes):
                raise ConfigError(f"{where}.rates", "need one rate per class")
            rates = tuple(_as_number(r, f"{where}.rates[{k}]") for k, r in enumerate(raw_rates))
        ods.append(OdPair(origin, dest, route, rates))
    if not ods:
        raise ConfigError("od_pairs", "at least one OD pair is required")
    explicit = [bool(od.arrival_rates) for od in ods]
    if any(explicit) and not all(explicit):
        raise ConfigError("od_pairs", "give rates for every OD pair or for none")

    try:
        mode = OperationMode.parse(str(doc.get("mode", "rf")))
    except ValueError as exc:
        raise ConfigError("mode", str(exc)) from None
    engine = str(doc.get("engine", "approx")).lower()
    if engine not in ("exact", "approx", "sim"):
        raise ConfigError("engine", f"unknown engine {engine!r}")
    variant = str(doc.get("variant", "ees")).lower()
    if variant not in ("ees", "soc", "uniform"):
        raise ConfigError("variant", f"unknown variant {variant!r}")
    loads = tuple(_as_number(v, f"loads[{i}]") for i, v in enumerate(doc.get("loads", ())))
    epsilon = _as_number(doc.get("epsilon", 1e-6), "epsilon", positive=True)
    solver_tol = _as_number(doc.get("solver_tolerance", 1e-10), "solver_tolerance", positive=True)
    max_iters = _as_number(doc.get("max_iters", 1000), "max_iters", positive=True, integer=True)
    seed = _as_number(doc.get("seed", 0), "seed", integer=True)
    requests = _as_number(doc.get("requests", 1_000_000), "requests", positive=True, integer=True)

    config = ScenarioConfig(
        topology=topology,
        classes=tuple(classes),
        od_pairs=tuple(ods),
        mode=mode,
        engine=engine,
        variant=variant,
        loads=loads,
        epsilon=epsilon,
        solver_tolerance=solver_tol,
        max_iters=max_iters,
        seed=seed,
        requests=requests,
    )
    if not any(explicit) and loads:
        config = config.at_load(loads[0])
    elif not any(explicit):
        config = config.at_load(0.0)
    return config


def load_config(source: str | Path | dict) -> ScenarioConfig:
    """Load a scenario from a YAML/JSON file path, a document string, or a dict."""
    if isinstance(source, dict):
        return build_config(source)
    text = None
    if isinstance(source, Path):
        text = source.read_text()
    elif isinstance(source, str):
        path = Path(source)
        if "\n" not in source and path.suffix in (".yaml", ".yml", ".json", ".cfg") and path.exists():
            text = path.read_text()
        else:
            text = source
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"not valid YAML/JSON: {exc}") from None
    return build_config(doc)


def config_to_document(config: ScenarioConfig) -> dict:
    """Inverse of :func:`build_config` (routes and rates written explicitly)."""
    topo = config.topology
    return {
        "nodes": list(topo.nodes),
        "links": [list(link) for link in topo.links],
        "capacity": topo.capacity,
        "classes": [{"d": c.width, "mu": c.holding_rate} for c in config.classes],
        "od_pairs": [
            {
                "origin": od.origin,
                "dest": od.destination,
                "route": route_nodes(topo, od.route),
                "rates": list(od.arrival_rates),
            }
            for od in config.od_pairs
        ],
        "mode": config.mode.name,
        "engine": config.engine,
        "variant": config.variant,
        "loads": list(config.loads),
        "epsilon": config.epsilon,
        "solver_tolerance": config.solver_tolerance,
        "max_iters": config.max_iters,
        "seed": config.seed,
        "requests": config.requests,
    }


def all_pairs(nodes: Iterable) -> list[dict]:
    """OD-pair entries for every ordered node pair."""
    nodes = list(nodes)
    return [{"origin": a, "dest": b} for a in nodes for b in nodes if a != b]
