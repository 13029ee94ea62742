"""Key-intersection selection and super-segment sampling."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .cleaning import VolumeHeatmap, edge_volume
from .geo import haversine_m
from .model import Edge, RoadGraph, SuperSegment, with_default_geometry

logger = logging.getLogger(__name__)

N_KEY_INTERSECTIONS = 400
MIN_NEIGHBORS = 3

# (beeline m, shortest-path m, max segments) per search circle
DEFAULT_CIRCLES = ((1000.0, 2000.0, 8), (2500.0, 5000.0, 20), (5000.0, 10000.0, 40), (10000.0, 20000.0, 80))


@dataclass(frozen=True)
class SearchConfig:
    max_path_m: float = 10000.0
    max_supersegments_per_source: int = 3
    max_circles: int = 4
    circles: tuple[tuple[float, float, int], ...] = DEFAULT_CIRCLES

    def __post_init__(self):
        if self.max_path_m <= 0 or self.max_supersegments_per_source < 1 or self.max_circles < 1:
            raise ValueError("search limits must be positive")
        if len(self.circles) < self.max_circles:
            raise ValueError(f"need {self.max_circles} circles, got {len(self.circles)}")
        for c in self.circles:
            if len(c) != 3 or min(c) <= 0:
                raise ValueError(f"invalid circle {c}")
        for prev, cur in zip(self.circles, self.circles[1:]):
            if any(b < a for a, b in zip(prev, cur)):
                raise ValueError("circle radii must be non-decreasing")

    @classmethod
    def from_dict(cls, d: dict) -> SearchConfig:
        kwargs = dict(d)
        if "circles" in kwargs:
            kwargs["circles"] = tuple((float(a), float(b), int(c)) for a, b, c in kwargs["circles"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "max_path_m": self.max_path_m,
            "max_supersegments_per_source": self.max_supersegments_per_source,
            "max_circles": self.max_circles,
            "circles": [list(c) for c in self.circles],
        }


@dataclass(frozen=True)
class KeyIntersectionSet:
    node_ids: tuple[int, ...]
    scores: dict[int, float] = field(default_factory=dict)
    whitelisted: tuple[int, ...] = ()


def edge_weight(edge: Edge) -> float:
    """Routing cost: length stretched by up to 3x for unimportant roads."""
    return ((6.0 - edge.importance) / 2.0) * edge.length_m


def node_scores(graph: RoadGraph, heatmap: VolumeHeatmap | None) -> dict[int, float]:
    """Max incident daily volume scaled by (max incident importance + 1) / 6.

    Without a heatmap every edge counts as volume 1, so scores rank by importance.
    """
    graph = with_default_geometry(graph)
    vols = {}
    for e in graph.edges:
        v = 1.0 if heatmap is None else edge_volume(e, heatmap, both_directions=False)
        vols[e.ident] = 0.0 if v is None else v
    scores = {}
    for n in graph.nodes:
        incident = graph.out_edges[n] + graph.in_edges[n]
        if not incident:
            scores[n] = 0.0
            continue
        vmax = max(vols[e.ident] for e in incident)
        imax = max(e.importance for e in incident)
        scores[n] = vmax * (imax + 1) / 6.0
    return scores


def select_key_intersections(
    graph: RoadGraph,
    heatmap: VolumeHeatmap | None,
    whitelist: Iterable[int] = (),
    n_keys: int = N_KEY_INTERSECTIONS,
    min_neighbors: int = MIN_NEIGHBORS,
) -> KeyIntersectionSet:
    scores = node_scores(graph, heatmap)
    candidates = sorted(
        (n for n in graph.nodes if len(graph.neighbors[n]) >= min_neighbors),
        key=lambda n: (-scores[n], n),
    )
    chosen: list[int] = []
    blocked: set[int] = set()
    for n in candidates:
        if len(chosen) >= n_keys:
            break
        if n in blocked:
            continue
        chosen.append(n)
        blocked |= graph.neighbors[n]
    extra = []
    for n in whitelist:
        if n not in graph.nodes:
            logger.warning("whitelisted node %s not in graph, ignored", n)
            continue
        if n not in chosen and n not in extra:
            extra.append(n)
    return KeyIntersectionSet(tuple(chosen + extra), {n: scores[n] for n in chosen + extra}, tuple(extra))


@dataclass
class ShortestPaths:
    source: int
    dist: dict[int, float]
    pred: dict[int, Edge]

    def path_edges(self, target: int) -> list[Edge]:
        out = []
        n = target
        while n != self.source:
            e = self.pred[n]
            out.append(e)
            n = e.u
        return out[::-1]

    def node_path(self, target: int) -> tuple[int, ...]:
        return (self.source,) + tuple(e.v for e in self.path_edges(target))


def _cheapest_edges(graph: RoadGraph) -> dict[int, list[tuple[int, Edge, float]]]:
    adj: dict[int, list[tuple[int, Edge, float]]] = {n: [] for n in graph.nodes}
    for (u, v), group in graph.edge_map.items():
        if u == v:
            continue
        e = min(group, key=lambda x: (edge_weight(x), x.key))
        adj[u].append((v, e, edge_weight(e)))
    for lst in adj.values():
        lst.sort(key=lambda x: x[0])
    return adj


def dijkstra(graph: RoadGraph, source: int, adj=None) -> ShortestPaths:
    """Single-source shortest paths under edge_weight.

    Among equally cheap paths the lexicographically smallest node sequence wins.
    """
    adj = _cheapest_edges(graph) if adj is None else adj
    dist = {source: 0.0}
    pred: dict[int, Edge] = {}
    done = set()
    heap = [(0.0, source)]

    def node_path(n):
        out = [n]
        while n != source:
            n = pred[n].u
            out.append(n)
        return out[::-1]

    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, e, w in adj[u]:
            if v in done:
                continue
            nd = d + w
            old = dist.get(v)
            if old is None or nd < old:
                dist[v] = nd
                pred[v] = e
                heapq.heappush(heap, (nd, v))
            elif nd == old and node_path(u) + [v] < node_path(v):
                pred[v] = e
    return ShortestPaths(source, dist, pred)


@dataclass(frozen=True)
class Candidate:
    target: int
    beeline_m: float
    path_m: float
    segments: int
    circle: int


def _circle_of(beeline: float, path_m: float, segments: int, cfg: SearchConfig) -> int | None:
    for i, (rb, rp, rs) in enumerate(cfg.circles[: cfg.max_circles]):
        if beeline <= rb and path_m <= rp and segments <= rs:
            return i
    return None


def source_candidates(graph: RoadGraph, source: int, keys: Sequence[int], cfg: SearchConfig, sp: ShortestPaths):
    src = graph.nodes[source]
    out = []
    for t in keys:
        if t == source or t not in sp.dist:
            continue
        edges = sp.path_edges(t)
        path_m = math.fsum(e.length_m for e in edges)
        n = graph.nodes[t]
        beeline = haversine_m(src.lat, src.lon, n.lat, n.lon)
        circle = _circle_of(beeline, path_m, len(edges), cfg)
        if circle is not None:
            out.append(Candidate(t, beeline, path_m, len(edges), circle))
    out.sort(key=lambda c: (c.circle, c.beeline_m, c.path_m, c.segments, c.target))
    return out


def ssid_for(source: int, target: int) -> str:
    return f"{source}_{target}"


def sample_supersegments(
    graph: RoadGraph,
    keys: KeyIntersectionSet | Sequence[int],
    cfg: SearchConfig = SearchConfig(),
    whitelist: Iterable[SuperSegment] = (),
) -> list[SuperSegment]:
    """Super-segments from each key intersection to nearby key intersections.

    Per source, targets are visited circle by circle; the search stops once a
    path longer than cfg.max_path_m is emitted, once more than
    cfg.max_supersegments_per_source have been emitted, or after the last circle.
    """
    key_ids = list(keys.node_ids if isinstance(keys, KeyIntersectionSet) else keys)
    if not key_ids:
        raise ValueError("no key intersections given")
    adj = _cheapest_edges(graph)
    pairs: set[tuple[int, int]] = set()
    out: list[SuperSegment] = []
    for source in key_ids:
        sp = dijkstra(graph, source, adj)
        found = 0
        for cand in source_candidates(graph, source, key_ids, cfg, sp):
            if (source, cand.target) in pairs:
                continue
            edges = sp.path_edges(cand.target)
            out.append(SuperSegment(ssid_for(source, cand.target), tuple(e.uv for e in edges)))
            pairs.add((source, cand.target))
            found += 1
            if cand.path_m > cfg.max_path_m or found > cfg.max_supersegments_per_source:
                break
    known_ids = {s.ssid for s in out}
    for ss in whitelist:
        pair = (ss.source, ss.target)
        if pair in pairs:
            logger.info("whitelisted super-segment %s duplicates pair %s, skipped", ss.ssid, pair)
            continue
        for u, v in ss.edge_list:
            if (u, v) not in graph.edge_map:
                raise ValueError(f"whitelisted super-segment {ss.ssid} uses unknown edge ({u}, {v})")
        if ss.ssid in known_ids:
            raise ValueError(f"whitelisted super-segment id {ss.ssid} collides with a sampled one")
        out.append(ss)
        pairs.add(pair)
        known_ids.add(ss.ssid)
    return out


def path_weight(graph: RoadGraph, ss: SuperSegment) -> float:
    total = 0.0
    for u, v in ss.edge_list:
        total += min(edge_weight(e) for e in graph.edge_map[(u, v)])
    return total
