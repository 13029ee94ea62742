from __future__ import annotations

import numpy as np
import pytest

from graphs import edge_between, grid, node_at, path_graph, random_messy_graph, two_way
from t4ckit.cleaning import (
    HEATMAP_SHAPE,
    VolumeHeatmap,
    build_heatmap,
    check_clean_invariants,
    clean_circle_ramps,
    clean_dead_ends,
    clean_isolates,
    clean_low_volume,
    clean_multi_edges,
    clean_no_access,
    clean_no_neighbors,
    clean_pipeline,
    clean_self_loops,
    edge_volume,
    heading_channel,
    largest_component,
    sample_days,
    weak_components,
)
from t4ckit.model import RoadGraph


def heatmap_around(graph: RoadGraph, value: float = 0.0) -> VolumeHeatmap:
    lats = [n.lat for n in graph.nodes.values()]
    lons = [n.lon for n in graph.nodes.values()]
    bbox = (min(lats) - 0.01, max(lats) + 0.01, min(lons) - 0.01, max(lons) + 0.01)
    return VolumeHeatmap(np.full(HEATMAP_SHAPE, value), bbox)


def test_heatmap_shape_enforced():
    with pytest.raises(ValueError):
        VolumeHeatmap(np.zeros((10, 10, 4)), (0, 1, 0, 1))


def test_build_heatmap_mean_and_identity():
    one = np.full(HEATMAP_SHAPE, 2.0)
    assert np.array_equal(build_heatmap([one], (0, 1, 0, 1)).grid, one)
    two = build_heatmap([one, np.full(HEATMAP_SHAPE, 4.0)], (0, 1, 0, 1))
    assert np.all(two.grid == 3.0)
    with pytest.raises(ValueError):
        build_heatmap([], (0, 1, 0, 1))


def test_sample_days_replays_seeded_sampler():
    picked = sample_days(60, 30, seed=11)
    oracle = sorted(int(i) for i in np.random.default_rng(11).choice(60, size=30, replace=False))
    assert picked == oracle
    assert sample_days(60, 30, seed=11) == picked
    assert sample_days(5, 30, seed=0) == [0, 1, 2, 3, 4]


def test_heading_channels():
    assert [heading_channel(b) for b in (0, 89.9, 90, 180, 270, 359.9)] == [0, 0, 1, 2, 3, 3]


def test_heatmap_row_zero_is_north():
    hm = VolumeHeatmap(np.zeros(HEATMAP_SHAPE), (48.0, 49.0, 16.0, 17.0))
    assert hm.cell(48.999, 16.0) == (0, 0)
    assert hm.cell(48.0, 17.0) == (494, 435)
    assert hm.cell(50.0, 16.5) is None


@pytest.mark.parametrize("access,kept", [("private", False), (None, True), ("yes", True), ("emergency", False)])
def test_no_access(access, kept):
    nodes = {0: node_at(0, 0, 0), 1: node_at(1, 0, 100)}
    g = RoadGraph.build(nodes.values(), [edge_between(nodes, 0, 1, access=access)])
    assert (len(clean_no_access(g).edges) == 1) == kept


def one_edge(cls: str, length_m: float, counter=False) -> RoadGraph:
    nodes = {0: node_at(0, 0, 0, counter_info=("c",) if counter else ()), 1: node_at(1, 0, length_m)}
    return RoadGraph.build(nodes.values(), [edge_between(nodes, 0, 1, cls, oneway=True)])


def test_low_volume_examples():
    g = one_edge("residential", 80.0)
    hm = heatmap_around(g, 9.0)
    assert clean_low_volume(g, hm).edges == ()
    assert len(clean_low_volume(g, heatmap_around(g, 10.0)).edges) == 1
    short = one_edge("residential", 40.0)
    assert len(clean_low_volume(short, heatmap_around(short, 0.0)).edges) == 1
    primary = one_edge("primary", 80.0)
    assert len(clean_low_volume(primary, heatmap_around(primary, 0.0)).edges) == 1
    counted = one_edge("unclassified", 80.0, counter=True)
    assert len(clean_low_volume(counted, heatmap_around(counted, 0.0)).edges) == 1


def test_low_volume_outside_heatmap_counts_as_zero():
    g = one_edge("residential", 80.0)
    far = VolumeHeatmap(np.full(HEATMAP_SHAPE, 100.0), (0.0, 1.0, 0.0, 1.0))
    assert clean_low_volume(g, far).edges == ()


def test_low_volume_reads_opposite_heading_for_two_way():
    nodes = {0: node_at(0, 0, 0), 1: node_at(1, 60, 60)}  # bearing ~45 deg: channel 0
    edge = edge_between(nodes, 0, 1, "residential", oneway=True)
    g = RoadGraph.build(nodes.values(), [edge])
    grid_ = np.zeros(HEATMAP_SHAPE)
    grid_[..., 2] = 50.0  # only south-west bound traffic
    hm = VolumeHeatmap(grid_, heatmap_around(g).bbox)
    assert edge_volume(edge, hm) == 0.0
    assert edge_volume(edge, hm, both_directions=True) == 50.0
    two_way_edge = edge_between(nodes, 0, 1, "residential", oneway=False)
    assert edge_volume(two_way_edge, hm) == 50.0


def test_dead_end_chain_collapses():
    # a -> b -> c with c terminal: everything goes, then isolates
    nodes = {i: node_at(i, 0, 100 * i) for i in range(3)}
    g = RoadGraph.build(nodes.values(), [edge_between(nodes, 0, 1), edge_between(nodes, 1, 2)])
    out = clean_isolates(clean_dead_ends(g))
    assert out.edges == () and out.nodes == {}


def test_cul_de_sac_pair_removed():
    g = grid(3, 3)
    nodes = dict(g.nodes)
    nodes[9] = node_at(9, -100, 0)
    g2 = RoadGraph.build(nodes.values(), list(g.edges) + two_way(nodes, 0, 9))
    out = clean_isolates(clean_dead_ends(g2))
    assert 9 not in out.nodes
    assert out == g


@pytest.mark.parametrize("length,kept", [(250.0, False), (299.9, False), (300.0, True), (400.0, True)])
def test_self_loop_threshold(length, kept):
    g = path_graph(3)
    nodes = dict(g.nodes)
    g2 = RoadGraph.build(nodes.values(), list(g.edges) + [edge_between(nodes, 1, 1, length=length)])
    assert (len(clean_self_loops(g2).edges) == len(g2.edges)) == kept


def test_no_neighbors_removes_lone_loop_node():
    g = path_graph(3)
    nodes = dict(g.nodes)
    nodes[5] = node_at(5, 900, 900)
    g2 = RoadGraph.build(nodes.values(), list(g.edges) + [edge_between(nodes, 5, 5, length=500.0)])
    assert clean_no_neighbors(g2) == g


def test_largest_component_and_tie_break():
    a = path_graph(5)
    nodes = dict(a.nodes)
    extra = {i: node_at(i, 1000, 100 * i) for i in range(10, 13)}
    nodes.update(extra)
    edges = list(a.edges) + two_way(nodes, 10, 11) + two_way(nodes, 11, 12)
    g = RoadGraph.build(nodes.values(), edges)
    assert set(largest_component(g).nodes) == set(range(5))
    # 3 vs 3: the component holding the smallest id wins
    nodes = {i: node_at(i, 0, 100 * i) for i in (4, 5, 6, 1, 2, 3)}
    edges = two_way(nodes, 4, 5) + two_way(nodes, 5, 6) + two_way(nodes, 1, 2) + two_way(nodes, 2, 3)
    tie = RoadGraph.build(nodes.values(), edges)
    assert set(largest_component(tie).nodes) == {1, 2, 3}
    assert largest_component(a) == a
    with pytest.raises(ValueError):
        largest_component(RoadGraph.build([], []))


def test_circle_ramp_examples():
    nodes = {0: node_at(0, 0, 0), 1: node_at(1, 0, 200), 2: node_at(2, 50, 100)}
    ramp = [edge_between(nodes, 0, 2), edge_between(nodes, 2, 1)]
    with_direct = RoadGraph.build(nodes.values(), ramp + [edge_between(nodes, 0, 1)])
    assert 2 not in clean_circle_ramps(with_direct).nodes
    without = RoadGraph.build(nodes.values(), ramp)
    assert clean_circle_ramps(without) == without


def test_chain_of_two_ramp_nodes():
    # a-b direct, a-m1, m1-b, a-m2, m2-m1: m2 is a ramp over (a, m1), then m1 over (a, b)
    nodes = {0: node_at(0, 0, 0), 1: node_at(1, 0, 300), 2: node_at(2, 60, 150), 3: node_at(3, 120, 60)}
    edges = [edge_between(nodes, 0, 1), edge_between(nodes, 0, 2), edge_between(nodes, 2, 1),
             edge_between(nodes, 0, 3), edge_between(nodes, 3, 2)]
    out = clean_circle_ramps(RoadGraph.build(nodes.values(), edges))
    assert set(out.nodes) == {0, 1}


def test_multi_edges_split_longer_ones():
    nodes = {0: node_at(0, 0, 0), 1: node_at(1, 0, 100)}
    edges = [edge_between(nodes, 0, 1, length=100.0), edge_between(nodes, 0, 1, length=120.0, key=1),
             edge_between(nodes, 0, 1, length=150.0, key=2)]
    g = RoadGraph.build(nodes.values(), edges)
    out = clean_multi_edges(g)
    assert out.edge(0, 1).length_m == 100.0
    assert all(len(group) == 1 for group in out.edge_map.values())
    assert len(out.nodes) == 4
    assert out.total_length() == pytest.approx(g.total_length(), abs=1e-9)
    halves = sorted(e.length_m for e in out.edges if e.length_m != 100.0)
    assert halves == pytest.approx([60.0, 60.0, 75.0, 75.0])
    single = path_graph(2)
    assert clean_multi_edges(single) == single


def test_clean_graph_is_fixpoint_with_zero_report():
    g = grid(4, 4)
    out, report = clean_pipeline(g)
    assert out == g
    assert report.all_zero


@pytest.mark.parametrize("seed", range(15))
def test_pipeline_invariants_and_idempotence(seed):
    g = random_messy_graph(np.random.default_rng(seed))
    hm = heatmap_around(g, 5.0)
    out, report = clean_pipeline(g, hm)
    assert check_clean_invariants(out) == []
    again, report2 = clean_pipeline(out, hm)
    assert again == out
    assert report2.all_zero
    steps = [r["step"] for r in report.steps if r["pass"] == 1]
    assert steps[:3] == ["no_access", "low_volume", "dead_ends"] and steps[-1] == "multi_edges"


@pytest.mark.parametrize("seed", range(5))
def test_length_accounting(seed):
    g = random_messy_graph(np.random.default_rng(100 + seed))
    out, report = clean_pipeline(g)
    removed = sum(r["removed_length_m"] for r in report.steps)
    assert g.total_length() - out.total_length() == pytest.approx(removed, abs=1e-4)
    added = set(out.nodes) - set(g.nodes)
    assert all(out.nodes[n].origin == "multi_edge_split" for n in added)
    assert all(r["removed_length_m"] >= -1e-6 for r in report.steps)


def test_weak_components_counts():
    g = path_graph(3)
    nodes = dict(g.nodes)
    nodes[7] = node_at(7, 500, 500)
    assert len(weak_components(RoadGraph.build(nodes.values(), g.edges))) == 2
