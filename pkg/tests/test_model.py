import pytest

from eonblock.model import (
    ConfigError, OperationMode, Policy, build_config, config_to_document, load_config,
    offered_load, route_nodes, shortest_path,
)
from eonblock.topologies import ring_doc, single_link_doc, two_link, two_link_doc


def test_single_link_load_split():
    cfg = build_config(single_link_doc(10, (3, 4), loads=[0.6]))
    assert cfg.capacity == 10
    assert cfg.od_pairs[0].arrival_rates == pytest.approx((0.3, 0.3))


def test_width_above_capacity_is_rejected_with_path():
    doc = single_link_doc(10, (3, 11))
    with pytest.raises(ConfigError) as err:
        build_config(doc)
    assert err.value.path == "classes[1].d"
    assert "class width exceeds capacity" in str(err.value)


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["links"].append([1, 9]), "links"),
    (lambda d: d["od_pairs"][0].update(rates=[-1.0, 0.1]), "od_pairs[0].rates[0]"),
    (lambda d: d["od_pairs"][0].update(dest=7), "od_pairs[0].dest"),
    (lambda d: d.update(capacity=[10, 12]), "capacity"),
    (lambda d: d.update(mode="xx"), "mode"),
])
def test_schema_violations_name_the_field(mutate, path):
    doc = single_link_doc(10, (3, 4))
    mutate(doc)
    with pytest.raises(ConfigError) as err:
        build_config(doc)
    assert err.value.path.startswith(path)


def test_three_ring_routes_are_single_links():
    cfg = build_config(ring_doc(3, 7, (3, 4)))
    assert len(cfg.od_pairs) == 6
    assert all(len(od.route) == 1 for od in cfg.od_pairs)


def test_chain_routes():
    cfg = two_link()
    topo = cfg.topology
    assert shortest_path(topo, 1, 3) == (topo.link_id(1, 2), topo.link_id(2, 3))
    assert shortest_path(topo, 1, 2) == (topo.link_id(1, 2),)
    with pytest.raises(ValueError):
        shortest_path(topo, 3, 1)


def test_six_ring_tie_break_is_lexicographic():
    cfg = build_config(ring_doc(6, 10, (3, 4)))
    topo = cfg.topology
    route = shortest_path(topo, 1, 4)
    # both 1-2-3-4 and 1-6-5-4 have three hops
    assert route_nodes(topo, route) == [1, 2, 3, 4]
    assert route_nodes(topo, shortest_path(topo, 2, 5)) == [2, 1, 6, 5]


def test_offered_load_examples():
    assert offered_load(two_link(10, (3, 4), 0.1)) == pytest.approx(0.1)
    assert offered_load(two_link(10, (3, 4), 0.0)) == 0.0
    doc = single_link_doc(10, (3, 4))
    doc["classes"][1]["mu"] = 2.0
    doc["od_pairs"][0]["rates"] = [0.3, 0.3]
    assert offered_load(build_config(doc)) == pytest.approx(0.45)


def test_uniform_split_keeps_offered_load_with_unequal_mu():
    doc = two_link_doc(10, (3, 4))
    doc["classes"][1]["mu"] = 2.5
    cfg = build_config(doc).at_load(1.7)
    assert offered_load(cfg) == pytest.approx(1.7, rel=1e-12)


def test_yaml_round_trip_is_deterministic(tmp_path):
    cfg = build_config(ring_doc(6, 10, (3, 4), loads=[0.6], mode="ff-sc"))
    text = __import__("yaml").safe_dump(config_to_document(cfg))
    path = tmp_path / "ring.yaml"
    path.write_text(text)
    again = load_config(path)
    assert again == cfg
    assert again.mode == OperationMode(Policy.FF, True)


def test_explicit_routes_are_checked():
    doc = two_link_doc()
    doc["od_pairs"][2]["route"] = [1, 3]
    with pytest.raises(ConfigError) as err:
        build_config(doc)
    assert err.value.path.startswith("od_pairs[2].route")


def test_mode_names():
    for name in ("rf", "ff", "rf-sc", "ff-sc"):
        assert OperationMode.parse(name).name == name
    with pytest.raises(ValueError):
        OperationMode.parse("bf")
