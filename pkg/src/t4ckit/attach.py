"""Attach stationary vehicle detectors to road-graph nodes.

Detectors are snapped to the nearest node when close enough, otherwise
projected onto the nearest edge, which is split to host a new node. Counts
of co-located detectors are summed; a detector attached to several nodes has
its value shared equally among them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .geo import EARTH_RADIUS_M, haversine_m, haversine_many, project_onto_polyline, split_polyline
from .model import NUM_BINS, DetectorDay, Edge, Node, NodeCounts, RoadGraph, with_default_geometry

logger = logging.getLogger(__name__)

NODE_SNAP_M = 40.0
EDGE_SNAP_M = 20.0


@dataclass(frozen=True)
class RawDetectorSeries:
    """One detector-day at its native resolution (5- or 15-minute windows)."""

    detector_id: str
    lat: float
    lon: float
    day: str
    values: Sequence[float | None]
    window_minutes: int = 5
    heading: float | None = None


def normalize_counts(raw: RawDetectorSeries) -> DetectorDay:
    """Sum disjoint windows into 96 15-minute bins; a bin is missing only if all its windows are."""
    if raw.window_minutes not in (5, 15):
        raise ValueError(f"unsupported window size {raw.window_minutes} min")
    per_bin = 15 // raw.window_minutes
    if len(raw.values) != NUM_BINS * per_bin:
        raise ValueError(f"expected {NUM_BINS * per_bin} windows, got {len(raw.values)}")
    counts: list[float | None] = []
    for b in range(NUM_BINS):
        present = [float(v) for v in raw.values[b * per_bin:(b + 1) * per_bin] if v is not None]
        counts.append(math.fsum(present) if present else None)
    return DetectorDay(raw.detector_id, raw.lat, raw.lon, raw.day, tuple(counts), raw.heading)


@dataclass(frozen=True)
class SnapDecision:
    """kind is one of 'node', 'endpoint', 'split', 'discard'."""

    kind: str
    distance_m: float
    node_id: int | None = None
    edge: tuple[int, int, int] | None = None
    fraction: float | None = None
    point: tuple[float, float] | None = None
    reason: str | None = None


def _nearest_node(graph: RoadGraph, lat: float, lon: float) -> tuple[int, float]:
    ids = np.fromiter(graph.nodes.keys(), dtype=np.int64, count=len(graph.nodes))
    lats = np.fromiter((n.lat for n in graph.nodes.values()), dtype=float, count=len(ids))
    lons = np.fromiter((n.lon for n in graph.nodes.values()), dtype=float, count=len(ids))
    d = haversine_many(lat, lon, lats, lons)
    i = int(np.argmin(d))  # node dict is id-sorted, so argmin keeps the lowest id on ties
    return int(ids[i]), float(d[i])


def _nearest_edge(graph: RoadGraph, lat: float, lon: float) -> Edge | None:
    segs = []
    owners = []
    for idx, e in enumerate(graph.edges):
        for a, b in zip(e.geometry, e.geometry[1:]):
            segs.append((a[0], a[1], b[0], b[1]))
            owners.append(idx)
    if not segs:
        return None
    arr = np.asarray(segs, dtype=float)
    coslat = math.cos(math.radians(lat))
    y1 = np.radians(arr[:, 0] - lat) * EARTH_RADIUS_M
    x1 = np.radians(arr[:, 1] - lon) * EARTH_RADIUS_M * coslat
    y2 = np.radians(arr[:, 2] - lat) * EARTH_RADIUS_M
    x2 = np.radians(arr[:, 3] - lon) * EARTH_RADIUS_M * coslat
    dx, dy = x2 - x1, y2 - y1
    seg2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(seg2 > 0, -(x1 * dx + y1 * dy) / seg2, 0.0)
    s = np.clip(s, 0.0, 1.0)
    dist = np.hypot(x1 + s * dx, y1 + s * dy)
    best = float(dist.min())
    # Reverse twins share geometry; break near-ties by edge identity.
    tied = {owners[i] for i in np.flatnonzero(dist <= best + 1e-6)}
    return min((graph.edges[i] for i in tied), key=lambda e: e.ident)


def snap_detector(
    graph: RoadGraph,
    det: DetectorDay,
    node_snap_m: float = NODE_SNAP_M,
    edge_snap_m: float = EDGE_SNAP_M,
) -> SnapDecision:
    if not graph.nodes:
        raise ValueError("cannot snap onto an empty graph")
    node_id, d_node = _nearest_node(graph, det.lat, det.lon)
    if d_node < node_snap_m:
        return SnapDecision("node", d_node, node_id=node_id)
    graph = with_default_geometry(graph)
    edge = _nearest_edge(graph, det.lat, det.lon)
    if edge is None:
        return SnapDecision("discard", d_node, reason="no edges")
    proj = project_onto_polyline(det.lat, det.lon, edge.geometry)
    if proj.distance_m > edge_snap_m:
        return SnapDecision("discard", proj.distance_m, edge=edge.ident,
                            reason=f"nearest edge {proj.distance_m:.2f} m away")
    plat, plon = proj.point
    ends = []
    for nid in (edge.u, edge.v):
        n = graph.nodes[nid]
        ends.append((haversine_m(plat, plon, n.lat, n.lon), nid))
    d_end, end_id = min(ends)
    if d_end < node_snap_m or not 0.0 < proj.fraction < 1.0:
        return SnapDecision("endpoint", proj.distance_m, node_id=end_id, edge=edge.ident,
                            fraction=proj.fraction, point=proj.point)
    return SnapDecision("split", proj.distance_m, edge=edge.ident, fraction=proj.fraction, point=proj.point)


def split_edge(
    graph: RoadGraph,
    edge: Edge,
    fraction: float,
    node_id: int | None = None,
    origin: str = "detector_split",
) -> tuple[RoadGraph, int]:
    """Replace `edge` by two edges meeting at a node placed at `fraction` of its length.

    An existing `node_id` is reused (its coordinates are kept); otherwise a new
    node is created. Returns the updated graph and the joining node id.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must be in (0, 1), got {fraction}")
    if edge not in graph.edge_map.get(edge.uv, []):
        raise KeyError(f"edge {edge.ident} not in graph")
    geometry = edge.geometry
    if not geometry:
        a, b = graph.nodes[edge.u], graph.nodes[edge.v]
        geometry = ((a.lat, a.lon), (b.lat, b.lon))
    head, tail, cut = split_polyline(geometry, fraction)
    nodes = dict(graph.nodes)
    if node_id is None or node_id not in nodes:
        node_id = graph.next_node_id() if node_id is None else node_id
        nodes[node_id] = Node(node_id, cut[0], cut[1], origin=origin)
    else:
        n = nodes[node_id]
        head[-1] = tail[0] = (n.lat, n.lon)
    first_len = fraction * edge.length_m
    first = replace(edge, v=node_id, length_m=first_len, geometry=tuple(head), key=0)
    second = replace(edge, u=node_id, length_m=edge.length_m - first_len, geometry=tuple(tail), key=0)
    edges = [e for e in graph.edges if e.ident != edge.ident] + [first, second]
    return RoadGraph.build(nodes.values(), edges), node_id


def _reverse_twin(graph: RoadGraph, edge: Edge) -> Edge | None:
    if edge.is_self_loop:
        return None
    for cand in graph.edge_map.get((edge.v, edge.u), []):
        if abs(cand.length_m - edge.length_m) > 0.01:
            continue
        if cand.geometry and edge.geometry and len(cand.geometry) == len(edge.geometry):
            same = all(
                haversine_m(p[0], p[1], q[0], q[1]) < 0.01
                for p, q in zip(cand.geometry, reversed(edge.geometry))
            )
            if same:
                return cand
        elif not cand.geometry and not edge.geometry:
            return cand
    return None


def split_value(count: float | None, k: int) -> float | None:
    """Equal share of a detector value across the k nodes it is assigned to."""
    if k < 1:
        raise ValueError(f"number of assigned nodes must be >= 1, got {k}")
    if count is None:
        return None
    return count if k == 1 else count / k


def aggregate_colocated(assignments: Iterable[tuple[DetectorDay, Sequence[int]]]) -> dict[tuple[int, str], NodeCounts]:
    """Per-node, per-day counts from (detector-day, assigned nodes) pairs.

    Each detector's value is split across its nodes, then values landing on
    the same node are summed over present contributors.
    """
    sums: dict[tuple[int, str], list[list[float]]] = {}
    infos: dict[tuple[int, str], set[str]] = {}
    for det, node_ids in assignments:
        node_ids = sorted(set(node_ids))
        k = len(node_ids)
        for nid in node_ids:
            slots = sums.setdefault((nid, det.day), [[] for _ in range(NUM_BINS)])
            infos.setdefault((nid, det.day), set()).add(det.detector_id)
            for t, c in enumerate(det.counts):
                share = split_value(c, k)
                if share is not None:
                    slots[t].append(share)
    out = {}
    for key in sorted(sums):
        counts = tuple(math.fsum(s) if s else None for s in sums[key])
        out[key] = NodeCounts(key[0], key[1], counts, tuple(sorted(infos[key])))
    return out


@dataclass
class AttachmentResult:
    graph: RoadGraph
    mapping: dict[str, tuple[int, ...]]
    discarded: list[tuple[str, str]]
    node_counts: dict[tuple[int, str], NodeCounts]
    decisions: list[tuple[str, SnapDecision]] = field(default_factory=list)

    def report_records(self) -> list[dict]:
        rows = []
        for det_id, d in self.decisions:
            rows.append({
                "detector_id": det_id, "decision": d.kind, "distance_m": d.distance_m,
                "node_id": d.node_id, "edge": list(d.edge) if d.edge else None, "reason": d.reason,
            })
        return rows


def attach_detectors(
    graph: RoadGraph,
    detectors: Iterable[DetectorDay],
    node_snap_m: float = NODE_SNAP_M,
    edge_snap_m: float = EDGE_SNAP_M,
) -> AttachmentResult:
    """Snap every detector site, split edges where needed and attach counts.

    Sites are processed serially in (detector_id, lat, lon) order so that
    edge splits and new node ids are deterministic. A detector id reported
    at several distinct locations is a merged detector; its value is shared
    among all nodes its sites snap to.
    """
    detectors = list(detectors)
    if not graph.nodes:
        raise ValueError("cannot attach detectors to an empty graph")
    graph = with_default_geometry(graph)
    sites = sorted({(d.detector_id, d.lat, d.lon) for d in detectors})
    mapping: dict[str, set[int]] = {}
    decisions = []
    reasons: dict[str, str] = {}
    for det_id, lat, lon in sites:
        probe = DetectorDay(det_id, lat, lon, "", (None,) * NUM_BINS)
        decision = snap_detector(graph, probe, node_snap_m, edge_snap_m)
        decisions.append((det_id, decision))
        if decision.kind == "discard":
            reasons.setdefault(det_id, decision.reason or "discarded")
            continue
        if decision.kind == "split":
            edge = next(e for e in graph.edges if e.ident == decision.edge)
            twin = _reverse_twin(graph, edge)
            graph, nid = split_edge(graph, edge, decision.fraction)
            if twin is not None:
                graph, _ = split_edge(graph, twin, 1.0 - decision.fraction, node_id=nid)
            decision = replace(decision, node_id=nid)
            decisions[-1] = (det_id, decision)
        mapping.setdefault(det_id, set()).add(decision.node_id)

    discarded = sorted((d, r) for d, r in reasons.items() if d not in mapping)

    by_key: dict[tuple[str, str], DetectorDay] = {}
    for d in sorted(detectors, key=lambda d: (d.detector_id, d.day, d.lat, d.lon)):
        if d.detector_id not in mapping:
            continue
        prev = by_key.get((d.detector_id, d.day))
        if prev is not None and prev.counts != d.counts:
            raise ValueError(f"detector {d.detector_id} on {d.day}: conflicting counts at different sites")
        by_key.setdefault((d.detector_id, d.day), d)
    node_counts = aggregate_colocated((d, sorted(mapping[d.detector_id])) for d in by_key.values())

    nodes = dict(graph.nodes)
    for det_id in sorted(mapping):
        k = len(mapping[det_id])
        for nid in mapping[det_id]:
            n = nodes[nid]
            info = tuple(sorted(set(n.counter_info) | {det_id}))
            nodes[nid] = replace(n, counter_info=info, num_assigned=max(n.num_assigned, k))
    graph = RoadGraph.build(nodes.values(), graph.edges)
    logger.info("attached %d detectors, discarded %d", len(mapping), len(discarded))
    return AttachmentResult(
        graph, {d: tuple(sorted(ns)) for d, ns in sorted(mapping.items())}, discarded, node_counts, decisions,
    )
