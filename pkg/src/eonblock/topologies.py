"""Built-in scenario documents used by the test suite and the CLI."""

from __future__ import annotations

from .model import ScenarioConfig, all_pairs, build_config

# 14-node, 21-span NSFNET; every span is modelled as two unidirectional links.
NSFNET_SPANS = [
    (1, 2), (1, 3), (1, 8), (2, 3), (2, 4), (3, 6), (4, 5),
    (4, 11), (5, 6), (5, 7), (6, 10), (6, 14), (7, 8), (8, 9),
    (9, 10), (9, 12), (9, 13), (11, 12), (11, 13), (12, 14), (13, 14),
]


def _bidirectional(spans):
    links = []
    for u, v in spans:
        links.append([u, v])
        links.append([v, u])
    return links


def _classes(widths, mu=1.0):
    return [{"d": d, "mu": mu} for d in widths]


def single_link_doc(capacity: int, widths, **extra) -> dict:
    doc = {
        "nodes": [1, 2],
        "links": [[1, 2]],
        "capacity": capacity,
        "classes": _classes(widths),
        "od_pairs": [{"origin": 1, "dest": 2}],
    }
    doc.update(extra)
    return doc


def two_link_doc(capacity: int = 10, widths=(3, 4), **extra) -> dict:
    """Chain 1->2->3 carrying OD pairs (1,2), (2,3) and (1,3)."""
    doc = {
        "nodes": [1, 2, 3],
        "links": [[1, 2], [2, 3]],
        "capacity": capacity,
        "classes": _classes(widths),
        "od_pairs": [
            {"origin": 1, "dest": 2},
            {"origin": 2, "dest": 3},
            {"origin": 1, "dest": 3},
        ],
    }
    doc.update(extra)
    return doc


def ring_doc(n: int, capacity: int, widths, **extra) -> dict:
    nodes = list(range(1, n + 1))
    spans = [(i, i % n + 1) for i in nodes]
    doc = {
        "nodes": nodes,
        "links": _bidirectional(spans),
        "capacity": capacity,
        "classes": _classes(widths),
        "od_pairs": all_pairs(nodes),
    }
    doc.update(extra)
    return doc


def nsfnet_doc(capacity: int, widths, **extra) -> dict:
    nodes = list(range(1, 15))
    doc = {
        "nodes": nodes,
        "links": _bidirectional(NSFNET_SPANS),
        "capacity": capacity,
        "classes": _classes(widths),
        "od_pairs": all_pairs(nodes),
    }
    doc.update(extra)
    return doc


def single_link(capacity: int, widths, load: float = 0.0, mode: str = "rf") -> ScenarioConfig:
    return build_config(single_link_doc(capacity, widths, loads=[load], mode=mode))


def two_link(capacity: int = 10, widths=(3, 4), load: float = 0.1, mode: str = "rf") -> ScenarioConfig:
    return build_config(two_link_doc(capacity, widths, loads=[load], mode=mode))


def ring(n: int, capacity: int, widths, load: float = 0.0, mode: str = "rf") -> ScenarioConfig:
    return build_config(ring_doc(n, capacity, widths, loads=[load], mode=mode))


def nsfnet(capacity: int, widths, load: float = 0.0, mode: str = "rf") -> ScenarioConfig:
    return build_config(nsfnet_doc(capacity, widths, loads=[load], mode=mode))
