from __future__ import annotations

import json

import pytest

from graphs import grid
from t4ckit.jsonl import SchemaError, check_record, read_jsonl, write_jsonl
from t4ckit.model import (
    CcPrediction,
    DetectorDay,
    Edge,
    EtaPrediction,
    HIGHWAY_IMPORTANCE,
    Node,
    RoadGraph,
    SuperSegment,
    importance_for,
    load_detectors,
    load_graph,
    load_supersegments,
    save_detectors,
    save_graph,
    save_supersegments,
    validate_prediction,
)


def test_importance_table():
    assert HIGHWAY_IMPORTANCE["motorway"] == 5
    assert HIGHWAY_IMPORTANCE["residential"] == 0
    assert importance_for("primary_link") == importance_for("primary") == 3
    assert importance_for("footway") == 0


def test_edge_and_node_invariants():
    with pytest.raises(ValueError):
        Edge(0, 1, 0.0, 3, 50.0)
    with pytest.raises(ValueError):
        Edge(0, 1, 10.0, 6, 50.0)
    with pytest.raises(ValueError):
        Node(0, 91.0, 0.0)
    with pytest.raises(ValueError, match="unknown node 99"):
        RoadGraph.build([Node(0, 0, 0)], [Edge(0, 99, 5.0, 0, 30.0)])


def test_graph_roundtrip(tmp_path):
    g = grid(3, 3)
    save_graph(g, tmp_path / "g")
    assert load_graph(tmp_path / "g") == g


def test_load_graph_names_unknown_node(tmp_path):
    g = grid(2, 2)
    save_graph(g, tmp_path)
    with open(tmp_path / "edges.jsonl", "a") as fh:
        fh.write(json.dumps({"u": 0, "v": 99, "length_m": 5.0, "importance": 1, "maxspeed_kph": 30.0,
                             "highway_class": "tertiary", "oneway": True, "geometry": []}) + "\n")
    with pytest.raises(SchemaError, match="99") as info:
        load_graph(tmp_path)
    assert info.value.lineno == len(g.edges) + 1


def test_schema_error_reports_line(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"a": 1}\nnot json\n')
    with pytest.raises(SchemaError) as info:
        list(read_jsonl(p))
    assert info.value.lineno == 2


def test_check_record_rejects_bool_for_int():
    with pytest.raises(SchemaError, match="wrong type"):
        check_record({"n": True}, {"n": int}, "f", 1)
    check_record({"n": 3}, {"n": int, "opt?": str}, "f", 1)


def test_detector_needs_96_slots(tmp_path):
    with pytest.raises(ValueError):
        DetectorDay("d", 0.0, 0.0, "2022-01-01", (1.0,) * 95)
    p = tmp_path / "d.jsonl"
    write_jsonl(p, [{"detector_id": "d", "lat": 0.0, "lon": 0.0, "day": "2022-01-01", "counts": [1] * 95}])
    with pytest.raises(SchemaError):
        load_detectors(p)


def test_detector_roundtrip_keeps_missing(tmp_path):
    counts = tuple(None if t % 7 == 0 else float(t) for t in range(96))
    d = DetectorDay("d1", 48.0, 16.0, "2022-01-01", counts, heading=90.0)
    save_detectors([d], tmp_path / "d.jsonl")
    assert load_detectors(tmp_path / "d.jsonl") == [d]


def test_supersegment_must_chain():
    with pytest.raises(ValueError, match="chain"):
        SuperSegment("x", ((0, 1), (2, 3)))
    with pytest.raises(ValueError, match="simple"):
        SuperSegment("x", ((0, 1), (1, 0)))


def test_supersegment_roundtrip(tmp_path):
    ss = [SuperSegment("0_2", ((0, 1), (1, 2)))]
    save_supersegments(ss, tmp_path / "s.jsonl")
    assert load_supersegments(tmp_path / "s.jsonl") == ss


def test_validate_prediction_reports_problems():
    g = grid(2, 2)
    preds = [CcPrediction(u, v, t, (0.0, 0.0, 0.0), "d") for (u, v) in g.edge_map for t in range(96)]
    assert validate_prediction(preds, g).ok
    bad = preds[1:] + [preds[5], CcPrediction(7, 8, 0, (0.0, 0.0, 0.0), "d"),
                       CcPrediction(0, 1, 3, (float("nan"), 0.0, 0.0), "d")]
    rep = validate_prediction(bad, g)
    first = preds[0]
    assert rep.missing == [(first.u, first.v, "d", first.t)]
    assert (7, 8, "d", 0) in rep.unknown
    assert rep.duplicates and rep.non_finite


def test_validate_eta_prediction_keys():
    ss = [SuperSegment("a", ((0, 1),))]
    preds = [EtaPrediction("a", t, 10.0) for t in range(96)]
    assert validate_prediction(preds, ss).ok
    assert validate_prediction(preds, ["a", "b"]).missing[0] == ("b", None, 0)
