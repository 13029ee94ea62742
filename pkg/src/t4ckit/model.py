"""Domain types shared by every stage, plus their JSONL record formats."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator

from .geo import haversine_m
from .jsonl import SchemaError, check_record, read_jsonl, write_jsonl

NUM_BINS = 96
CC_CLASSES = (1, 2, 3)
MASKED_CLASS = 0

# OSM highway class -> importance (0..5). `*_link` classes share the parent's value.
HIGHWAY_IMPORTANCE = {
    "motorway": 5,
    "trunk": 4,
    "primary": 3,
    "secondary": 2,
    "tertiary": 1,
    "unclassified": 0,
    "residential": 0,
    "living_street": 0,
    "service": 0,
}

NODE_ORIGINS = ("osm", "detector_split", "multi_edge_split")


def importance_for(highway_class: str) -> int:
    base = highway_class[:-5] if highway_class.endswith("_link") else highway_class
    return HIGHWAY_IMPORTANCE.get(base, 0)


@dataclass(frozen=True)
class Node:
    node_id: int
    lat: float
    lon: float
    counter_info: tuple[str, ...] = ()
    num_assigned: int = 1
    # Nodes inserted by the toolkit are tagged so later cleaning passes can tell them apart.
    origin: str = "osm"

    def __post_init__(self):
        if self.node_id < 0:
            raise ValueError(f"node_id must be non-negative, got {self.node_id}")
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"node {self.node_id}: coordinates out of range ({self.lat}, {self.lon})")
        if self.num_assigned < 1:
            raise ValueError(f"node {self.node_id}: num_assigned must be >= 1")
        if self.origin not in NODE_ORIGINS:
            raise ValueError(f"node {self.node_id}: unknown origin {self.origin!r}")

    @property
    def has_counter(self) -> bool:
        return bool(self.counter_info)


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    length_m: float
    importance: int
    maxspeed_kph: float
    highway_class: str = "unclassified"
    access: str | None = None
    oneway: bool = False
    geometry: tuple[tuple[float, float], ...] = ()
    # Distinguishes parallel edges before multi-edge cleaning.
    key: int = 0

    def __post_init__(self):
        if not self.length_m > 0:
            raise ValueError(f"edge ({self.u}, {self.v}): length_m must be > 0, got {self.length_m}")
        if not 0 <= self.importance <= 5:
            raise ValueError(f"edge ({self.u}, {self.v}): importance must be in [0, 5]")
        if not self.maxspeed_kph > 0:
            raise ValueError(f"edge ({self.u}, {self.v}): maxspeed_kph must be > 0")

    @property
    def uv(self) -> tuple[int, int]:
        return (self.u, self.v)

    @property
    def ident(self) -> tuple[int, int, int]:
        return (self.u, self.v, self.key)

    @property
    def is_self_loop(self) -> bool:
        return self.u == self.v


@dataclass(frozen=True)
class RoadGraph:
    nodes: dict[int, Node]
    edges: tuple[Edge, ...]

    def __post_init__(self):
        seen = set()
        for e in self.edges:
            for n in (e.u, e.v):
                if n not in self.nodes:
                    raise ValueError(f"edge ({e.u}, {e.v}) references unknown node {n}")
            if e.ident in seen:
                raise ValueError(f"duplicate edge identity {e.ident}")
            seen.add(e.ident)

    @classmethod
    def build(cls, nodes: Iterable[Node], edges: Iterable[Edge]) -> RoadGraph:
        node_map: dict[int, Node] = {}
        for n in nodes:
            if n.node_id in node_map:
                raise ValueError(f"duplicate node_id {n.node_id}")
            node_map[n.node_id] = n
        ordered = dict(sorted(node_map.items()))
        return cls(ordered, tuple(sorted(edges, key=lambda e: e.ident)))

    def with_parts(self, nodes: Iterable[Node], edges: Iterable[Edge]) -> RoadGraph:
        return RoadGraph.build(nodes, edges)

    @cached_property
    def edge_map(self) -> dict[tuple[int, int], list[Edge]]:
        out: dict[tuple[int, int], list[Edge]] = {}
        for e in self.edges:
            out.setdefault(e.uv, []).append(e)
        return out

    @cached_property
    def out_edges(self) -> dict[int, list[Edge]]:
        out: dict[int, list[Edge]] = {n: [] for n in self.nodes}
        for e in self.edges:
            out[e.u].append(e)
        return out

    @cached_property
    def in_edges(self) -> dict[int, list[Edge]]:
        out: dict[int, list[Edge]] = {n: [] for n in self.nodes}
        for e in self.edges:
            out[e.v].append(e)
        return out

    @cached_property
    def neighbors(self) -> dict[int, set[int]]:
        """Undirected neighbour sets, self excluded."""
        out: dict[int, set[int]] = {n: set() for n in self.nodes}
        for e in self.edges:
            if e.u != e.v:
                out[e.u].add(e.v)
                out[e.v].add(e.u)
        return out

    def edge(self, u: int, v: int) -> Edge:
        """The single edge u->v; raises KeyError if absent or ambiguous."""
        found = self.edge_map.get((u, v), [])
        if len(found) != 1:
            raise KeyError(f"expected exactly one edge ({u}, {v}), found {len(found)}")
        return found[0]

    def degree(self, node_id: int) -> int:
        return len(self.out_edges[node_id]) + len(self.in_edges[node_id])

    def total_length(self) -> float:
        return math.fsum(e.length_m for e in self.edges)

    def next_node_id(self) -> int:
        return max(self.nodes, default=-1) + 1


@dataclass(frozen=True)
class DetectorDay:
    detector_id: str
    lat: float
    lon: float
    day: str
    counts: tuple[float | None, ...]
    heading: float | None = None

    def __post_init__(self):
        if len(self.counts) != NUM_BINS:
            raise ValueError(f"detector {self.detector_id}: expected {NUM_BINS} count slots, got {len(self.counts)}")
        for c in self.counts:
            if c is not None and not c >= 0:
                raise ValueError(f"detector {self.detector_id}: negative or NaN count {c}")

    @property
    def missing(self) -> int:
        return sum(c is None for c in self.counts)


@dataclass(frozen=True)
class NodeCounts:
    """Counts attached to one node for one day, after aggregation and value splitting."""

    node_id: int
    day: str
    counts: tuple[float | None, ...]
    counter_info: tuple[str, ...] = ()


@dataclass(frozen=True)
class SegmentSpeedStats:
    u: int
    v: int
    t: int
    median_speed_kph: float
    volume: int
    raw_median_speed: int
    day: str | None = None

    def __post_init__(self):
        if not 0 <= self.t < NUM_BINS:
            raise ValueError(f"stats ({self.u}, {self.v}): t={self.t} outside [0, {NUM_BINS - 1}]")
        if self.volume < 0:
            raise ValueError(f"stats ({self.u}, {self.v}, {self.t}): negative volume")
        if self.median_speed_kph < 0:
            raise ValueError(f"stats ({self.u}, {self.v}, {self.t}): negative speed")


@dataclass(frozen=True)
class FreeFlow:
    u: int
    v: int
    free_flow_kph: float

    def __post_init__(self):
        if not self.free_flow_kph > 0:
            raise ValueError(f"free flow ({self.u}, {self.v}) must be > 0")


@dataclass(frozen=True)
class CongestionLabel:
    u: int
    v: int
    t: int
    cc: int
    day: str | None = None

    def __post_init__(self):
        if self.cc not in (0, 1, 2, 3):
            raise ValueError(f"congestion class must be in 0..3, got {self.cc}")
        if not 0 <= self.t < NUM_BINS:
            raise ValueError(f"label t={self.t} outside [0, {NUM_BINS - 1}]")


@dataclass(frozen=True)
class SuperSegment:
    ssid: str
    edge_list: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.edge_list:
            raise ValueError(f"super-segment {self.ssid} is empty")
        for (_, v), (u2, _) in zip(self.edge_list, self.edge_list[1:]):
            if v != u2:
                raise ValueError(f"super-segment {self.ssid} does not chain at node {v} -> {u2}")
        nodes = self.nodes
        if len(set(nodes)) != len(nodes):
            raise ValueError(f"super-segment {self.ssid} is not a simple path")

    @property
    def nodes(self) -> tuple[int, ...]:
        return (self.edge_list[0][0],) + tuple(v for _, v in self.edge_list)

    @property
    def source(self) -> int:
        return self.edge_list[0][0]

    @property
    def target(self) -> int:
        return self.edge_list[-1][1]


@dataclass(frozen=True)
class EtaLabel:
    ssid: str
    t: int
    eta_s: float
    day: str | None = None

    def __post_init__(self):
        if not self.eta_s > 0:
            raise ValueError(f"ETA label {self.ssid}@{self.t} must be > 0")


@dataclass(frozen=True)
class CcPrediction:
    u: int
    v: int
    t: int
    logits: tuple[float, float, float]
    day: str | None = None


@dataclass(frozen=True)
class EtaPrediction:
    ssid: str
    t: int
    eta_s: float
    day: str | None = None


@dataclass
class PredictionReport:
    unknown: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    non_finite: list = field(default_factory=list)
    duplicates: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.unknown or self.missing or self.non_finite or self.duplicates)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "unknown": [list(k) for k in self.unknown],
            "missing": [list(k) for k in self.missing],
            "non_finite": [list(k) for k in self.non_finite],
            "duplicates": [list(k) for k in self.duplicates],
        }


# ---------------------------------------------------------------------------
# record schemas
# ---------------------------------------------------------------------------

_NUM = (int, float)
_OPT_STR = (str, type(None))

NODE_SCHEMA = {"node_id": int, "lat": _NUM, "lon": _NUM, "counter_info?": list, "num_assigned?": int, "origin?": str}
EDGE_SCHEMA = {
    "u": int, "v": int, "length_m": _NUM, "importance": int, "maxspeed_kph": _NUM,
    "highway_class": str, "access?": _OPT_STR, "oneway": bool, "geometry": list, "key?": int,
}
DETECTOR_SCHEMA = {"detector_id": str, "lat": _NUM, "lon": _NUM, "heading?": (int, float, type(None)), "day": str, "counts": list}
NODE_COUNTS_SCHEMA = {"node_id": int, "day": str, "counts": list, "counter_info?": list}
STATS_SCHEMA = {"u": int, "v": int, "t": int, "median_speed_kph": _NUM, "volume": int, "raw_median_speed": int, "day?": _OPT_STR}
FREE_FLOW_SCHEMA = {"u": int, "v": int, "free_flow_kph": _NUM}
CC_LABEL_SCHEMA = {"u": int, "v": int, "t": int, "cc": int, "day?": _OPT_STR}
SUPERSEGMENT_SCHEMA = {"ssid": str, "edges": list}
ETA_LABEL_SCHEMA = {"ssid": str, "t": int, "eta_s": _NUM, "day?": _OPT_STR}
CC_PRED_SCHEMA = {"u": int, "v": int, "t": int, "logits": list, "day?": _OPT_STR}
ETA_PRED_SCHEMA = {"ssid": str, "t": int, "eta_s": _NUM, "day?": _OPT_STR}


def _build(path, lineno, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (ValueError, TypeError) as exc:
        raise SchemaError(path, lineno, str(exc)) from None


def _node_from(rec, path, lineno) -> Node:
    check_record(rec, NODE_SCHEMA, path, lineno)
    return _build(
        path, lineno, Node,
        node_id=rec["node_id"], lat=float(rec["lat"]), lon=float(rec["lon"]),
        counter_info=tuple(str(c) for c in rec.get("counter_info") or ()),
        num_assigned=rec.get("num_assigned", 1), origin=rec.get("origin", "osm"),
    )


def _node_record(n: Node) -> dict:
    rec = {"node_id": n.node_id, "lat": n.lat, "lon": n.lon, "counter_info": list(n.counter_info),
           "num_assigned": n.num_assigned}
    if n.origin != "osm":
        rec["origin"] = n.origin
    return rec


def _edge_from(rec, path, lineno) -> Edge:
    check_record(rec, EDGE_SCHEMA, path, lineno)
    try:
        geometry = tuple((float(p[0]), float(p[1])) for p in rec["geometry"])
    except (TypeError, IndexError, ValueError):
        raise SchemaError(path, lineno, "geometry must be a list of [lat, lon] pairs") from None
    return _build(
        path, lineno, Edge,
        u=rec["u"], v=rec["v"], length_m=float(rec["length_m"]), importance=rec["importance"],
        maxspeed_kph=float(rec["maxspeed_kph"]), highway_class=rec["highway_class"],
        access=rec.get("access"), oneway=rec["oneway"], geometry=geometry, key=rec.get("key", 0),
    )


def _edge_record(e: Edge) -> dict:
    rec = {"u": e.u, "v": e.v, "length_m": e.length_m, "importance": e.importance,
           "maxspeed_kph": e.maxspeed_kph, "highway_class": e.highway_class, "access": e.access,
           "oneway": e.oneway, "geometry": [list(p) for p in e.geometry]}
    if e.key:
        rec["key"] = e.key
    return rec


GEOMETRY_TOLERANCE_M = 1.0


def check_geometry(graph: RoadGraph, tolerance_m: float = GEOMETRY_TOLERANCE_M) -> list[str]:
    """Edges whose geometry endpoints stray from their nodes by more than tolerance_m."""
    problems = []
    for e in graph.edges:
        if not e.geometry:
            continue
        if len(e.geometry) < 2:
            problems.append(f"edge ({e.u}, {e.v}): geometry needs at least 2 points")
            continue
        for (lat, lon), nid in ((e.geometry[0], e.u), (e.geometry[-1], e.v)):
            n = graph.nodes[nid]
            d = haversine_m(lat, lon, n.lat, n.lon)
            if d > tolerance_m:
                problems.append(f"edge ({e.u}, {e.v}): geometry endpoint {d:.2f} m from node {nid}")
    return problems


def with_default_geometry(graph: RoadGraph) -> RoadGraph:
    """Fill empty edge geometries with the straight segment between the endpoints."""
    from dataclasses import replace

    if all(e.geometry for e in graph.edges):
        return graph
    edges = []
    for e in graph.edges:
        if not e.geometry:
            a, b = graph.nodes[e.u], graph.nodes[e.v]
            e = replace(e, geometry=((a.lat, a.lon), (b.lat, b.lon)))
        edges.append(e)
    return RoadGraph(graph.nodes, tuple(edges))


def load_graph(path: str | Path) -> RoadGraph:
    """Load nodes.jsonl and edges.jsonl from a graph directory."""
    path = Path(path)
    nodes_path, edges_path = path / "nodes.jsonl", path / "edges.jsonl"
    for p in (nodes_path, edges_path):
        if not p.exists():
            raise FileNotFoundError(p)
    nodes: dict[int, Node] = {}
    for lineno, rec in read_jsonl(nodes_path):
        n = _node_from(rec, nodes_path, lineno)
        if n.node_id in nodes:
            raise SchemaError(nodes_path, lineno, f"duplicate node_id {n.node_id}")
        nodes[n.node_id] = n
    edges = []
    seen = set()
    for lineno, rec in read_jsonl(edges_path):
        e = _edge_from(rec, edges_path, lineno)
        for nid in (e.u, e.v):
            if nid not in nodes:
                raise SchemaError(edges_path, lineno, f"edge ({e.u}, {e.v}) references unknown node {nid}")
        if e.ident in seen:
            raise SchemaError(edges_path, lineno, f"duplicate edge {e.ident}; parallel edges need distinct keys")
        seen.add(e.ident)
        edges.append(e)
    graph = RoadGraph.build(nodes.values(), edges)
    problems = check_geometry(graph)
    if problems:
        raise SchemaError(edges_path, None, "; ".join(problems[:5]))
    return graph


def save_graph(graph: RoadGraph, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_jsonl(path / "nodes.jsonl", (_node_record(n) for n in graph.nodes.values()))
    write_jsonl(path / "edges.jsonl", (_edge_record(e) for e in graph.edges))


def _counts_from(raw, path, lineno) -> tuple[float | None, ...]:
    if len(raw) != NUM_BINS:
        raise SchemaError(path, lineno, f"expected {NUM_BINS} count slots, got {len(raw)}")
    out = []
    for c in raw:
        if c is None:
            out.append(None)
        elif isinstance(c, bool) or not isinstance(c, (int, float)):
            raise SchemaError(path, lineno, f"count must be a number or null, got {c!r}")
        else:
            out.append(float(c))
    return tuple(out)


def load_detectors(path: str | Path) -> list[DetectorDay]:
    out = []
    for lineno, rec in read_jsonl(path):
        check_record(rec, DETECTOR_SCHEMA, path, lineno)
        heading = rec.get("heading")
        out.append(_build(
            path, lineno, DetectorDay,
            detector_id=rec["detector_id"], lat=float(rec["lat"]), lon=float(rec["lon"]), day=rec["day"],
            counts=_counts_from(rec["counts"], path, lineno),
            heading=None if heading is None else float(heading),
        ))
    return out


def save_detectors(detectors: Iterable[DetectorDay], path: str | Path) -> None:
    write_jsonl(path, (
        {"detector_id": d.detector_id, "lat": d.lat, "lon": d.lon, "heading": d.heading, "day": d.day,
         "counts": list(d.counts)}
        for d in detectors
    ))


def load_node_counts(path: str | Path) -> list[NodeCounts]:
    out = []
    for lineno, rec in read_jsonl(path):
        check_record(rec, NODE_COUNTS_SCHEMA, path, lineno)
        out.append(NodeCounts(rec["node_id"], rec["day"], _counts_from(rec["counts"], path, lineno),
                              tuple(rec.get("counter_info") or ())))
    return out


def save_node_counts(items: Iterable[NodeCounts], path: str | Path) -> None:
    write_jsonl(path, (
        {"node_id": c.node_id, "day": c.day, "counts": list(c.counts), "counter_info": list(c.counter_info)}
        for c in items
    ))


def load_speed_stats(path: str | Path) -> list[SegmentSpeedStats]:
    out = []
    for lineno, rec in read_jsonl(path):
        check_record(rec, STATS_SCHEMA, path, lineno)
        out.append(_build(
            path, lineno, SegmentSpeedStats,
            u=rec["u"], v=rec["v"], t=rec["t"], median_speed_kph=float(rec["median_speed_kph"]),
            volume=rec["volume"], raw_median_speed=rec["raw_median_speed"], day=rec.get("day"),
        ))
    return out


def save_speed_stats(items: Iterable[SegmentSpeedStats], path: str | Path) -> None:
    def rec(s):
        r = {"u": s.u, "v": s.v, "t": s.t, "median_speed_kph": s.median_speed_kph, "volume": s.volume,
             "raw_median_speed": s.raw_median_speed}
        if s.day is not None:
            r["day"] = s.day
        return r

    write_jsonl(path, (rec(s) for s in items))


def load_free_flow(path: str | Path) -> list[FreeFlow]:
    out = []
    for lineno, rec in read_jsonl(path):
        check_record(rec, FREE_FLOW_SCHEMA, path, lineno)
        out.append(_build(path, lineno, FreeFlow, u=rec["u"], v=rec["v"], free_flow_kph=float(rec["free_flow_kph"])))
    return out


def save_free_flow(items: Iterable[FreeFlow], path: str | Path) -> None:
    write_jsonl(path, ({"u": f.u, "v": f.v, "free_flow_kph": f.free_flow_kph} for f in items))


def _with_day(rec: dict, day: str | None) -> dict:
    if day is not None:
        rec["day"] = day
    return rec


def load_cc_labels(path: str | Path) -> list[CongestionLabel]:
    out = []
    for lineno, rec in read_jsonl(path):
        check_record(rec, CC_LABEL_SCHEMA, path, lineno)
        out.append(_build(path, lineno, CongestionLabel, u=rec["u"], v=rec["v"], t=rec["t"], cc=rec["cc"],
                          day=rec.get("day")))
    return out


def save_cc_labels(items: Iterable[CongestionLabel], path: str | Path) -> None:
    write_jsonl(path, (_with_day({"u": x.u, "v": x.v, "t": x.t, "cc": x.cc}, x.day) for x in items))


def load_supersegments(path: str | Path) -> list[SuperSegment]:
    out = []
    seen = set()
    for lineno, rec in read_jsonl(path):
        check_record(rec, SUPERSEGMENT_SCHEMA, path, lineno)
        try:
            edge_list = tuple((int(a), int(b)) for a, b in rec["edges"])
        except (TypeError, ValueError):
            raise SchemaError(path, lineno, "edges must be a list of [u, v] pairs") from None
        if rec["ssid"] in seen:
            raise SchemaError(path, lineno, f"duplicate ssid {rec['ssid']}")
        seen.add(rec["ssid"])
        out.append(_build(path, lineno, SuperSegment, ssid=rec["ssid"], edge_list=edge_list))
    return out


def save_supersegments(items: Iterable[SuperSegment], path: str | Path) -> None:
    write_jsonl(path, ({"ssid": s.ssid, "edges": [list(e) for e in s.edge_list]} for s in items))


def load_eta_labels(path: str | Path) -> list[EtaLabel]:
    out = []
    for lineno, rec in read_jsonl(path):
        check_record(rec, ETA_LABEL_SCHEMA, path, lineno)
        out.append(_build(path, lineno, EtaLabel, ssid=rec["ssid"], t=rec["t"], eta_s=float(rec["eta_s"]),
                          day=rec.get("day")))
    return out


def save_eta_labels(items: Iterable[EtaLabel], path: str | Path) -> None:
    write_jsonl(path, (_with_day({"ssid": x.ssid, "t": x.t, "eta_s": x.eta_s}, x.day) for x in items))


def load_cc_predictions(path: str | Path) -> list[CcPrediction]:
    out = []
    for lineno, rec in read_jsonl(path):
        check_record(rec, CC_PRED_SCHEMA, path, lineno)
        logits = rec["logits"]
        if len(logits) != 3:
            raise SchemaError(path, lineno, f"expected 3 logits, got {len(logits)}")
        # NaN/inf logits are kept so validate_prediction can flag them.
        vals = tuple(float("nan") if x is None else float(x) for x in logits)
        out.append(CcPrediction(rec["u"], rec["v"], rec["t"], vals, rec.get("day")))
    return out


def save_cc_predictions(items: Iterable[CcPrediction], path: str | Path) -> None:
    write_jsonl(path, (_with_day({"u": p.u, "v": p.v, "t": p.t, "logits": list(p.logits)}, p.day) for p in items))


def load_eta_predictions(path: str | Path) -> list[EtaPrediction]:
    out = []
    for lineno, rec in read_jsonl(path):
        check_record(rec, ETA_PRED_SCHEMA, path, lineno)
        out.append(EtaPrediction(rec["ssid"], rec["t"], float(rec["eta_s"]), rec.get("day")))
    return out


def save_eta_predictions(items: Iterable[EtaPrediction], path: str | Path) -> None:
    write_jsonl(path, (_with_day({"ssid": p.ssid, "t": p.t, "eta_s": p.eta_s}, p.day) for p in items))


def validate_prediction(
    predictions: Iterable[CcPrediction] | Iterable[EtaPrediction],
    reference: RoadGraph | Iterable[SuperSegment] | Iterable[tuple[int, int]] | Iterable[str],
    bins: Iterable[int] = range(NUM_BINS),
    days: Iterable[str | None] | None = None,
) -> PredictionReport:
    """Diagnose a CC or ETA prediction set against a graph, super-segments, or plain edge/ssid keys.

    Expected keys are every edge (or super-segment) at every bin, for each day
    present in the predictions unless `days` is given.
    """
    predictions = list(predictions)
    report = PredictionReport()
    if isinstance(reference, RoadGraph):
        known = set(reference.edge_map)
    else:
        known = {s.ssid if isinstance(s, SuperSegment) else (tuple(s) if isinstance(s, list) else s) for s in reference}
    keyed = [
        ((p.u, p.v), p.day, p.t, p.logits) if isinstance(p, CcPrediction) else (p.ssid, p.day, p.t, (p.eta_s,))
        for p in predictions
    ]
    seen = set()
    for item, day, t, values in keyed:
        key = (*item, day, t) if isinstance(item, tuple) else (item, day, t)
        if item not in known:
            report.unknown.append(key)
        if key in seen:
            report.duplicates.append(key)
        seen.add(key)
        if not all(math.isfinite(x) for x in values) or (len(values) == 1 and values[0] < 0):
            report.non_finite.append(key)
    day_set = sorted({d for _, d, _, _ in keyed}, key=lambda d: (d is not None, d or "")) if days is None else list(days)
    if not day_set:
        day_set = [None]
    bins = list(bins)
    for item in sorted(known):
        for day in day_set:
            for t in bins:
                key = (*item, day, t) if isinstance(item, tuple) else (item, day, t)
                if key not in seen:
                    report.missing.append(key)
    return report


def iter_days(items: Iterable) -> Iterator[str | None]:
    seen = []
    for x in items:
        if x.day not in seen:
            seen.append(x.day)
    return iter(sorted(seen, key=lambda d: (d is not None, d or "")))
