"""Synthetic city generator: a grid road graph with planted congestion regimes.

The generated files follow the same record formats as real inputs, so the
whole pipeline can run on them. Congestion classes are drawn from a known
per-edge, per-hour distribution and encoded into speed statistics that the
labeler maps back exactly; the share of classified bins matches the coverage
target up to rounding.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cleaning import HEATMAP_SHAPE, VolumeHeatmap, build_heatmap, heading_channel
from .geo import haversine_m, offset, sample_polyline
from .jsonl import write_json, write_jsonl
from .model import (
    NUM_BINS,
    DetectorDay,
    Edge,
    FreeFlow,
    Node,
    RoadGraph,
    SegmentSpeedStats,
    importance_for,
    save_detectors,
    save_free_flow,
    save_graph,
    save_speed_stats,
)

MAXSPEED_BY_CLASS = {"primary": 60.0, "secondary": 50.0, "tertiary": 40.0, "residential": 30.0, "unclassified": 30.0}
DAILY_VOLUME_BY_CLASS = {"primary": 900.0, "secondary": 450.0, "tertiary": 200.0, "residential": 40.0,
                         "unclassified": 30.0}

_SQRT2 = math.sqrt(2.0)

# named random sub-streams
_STREAMS = {"graph": 1, "flow": 2, "labels": 3, "detectors": 4, "heatmap": 5, "propensity": 6}


def _rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[stream]])


@dataclass(frozen=True)
class SyntheticCitySpec:
    name: str = "synthtown"
    rows: int = 6
    cols: int = 6
    spacing_m: float = 400.0
    origin: tuple[float, float] = (51.50, -0.12)
    n_days: int = 10
    start_day: str = "2022-03-01"
    coverage: float = 0.32
    coverage_by_class: dict[str, float] = field(default_factory=dict)
    detector_density: float = 0.3
    messy: bool = True
    arterial_every: int = 3
    peak_hours: tuple[float, ...] = (8.0, 17.5)

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2x2 nodes")
        for c in [self.coverage, *self.coverage_by_class.values()]:
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"coverage target {c} outside [0, 1]")
        if not 0.0 <= self.detector_density <= 1.0:
            raise ValueError("detector density must lie in [0, 1]")
        if self.n_days < 1:
            raise ValueError("need at least one day")

    @property
    def days(self) -> list[str]:
        start = dt.date.fromisoformat(self.start_day)
        return [(start + dt.timedelta(days=i)).isoformat() for i in range(self.n_days)]

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticCitySpec:
        d = dict(d)
        for key in ("origin", "peak_hours"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["origin"] = list(self.origin)
        d["peak_hours"] = list(self.peak_hours)
        return d


def congestion_intensity(hour: float, peaks=(8.0, 17.5)) -> float:
    """Daily congestion profile in [0, 1] with bumps at the peak hours."""
    return float(min(1.0, sum(math.exp(-0.5 * ((hour + 0.5 - p) / 1.5) ** 2) for p in peaks)))


def planted_probabilities(intensity: float) -> np.ndarray:
    """Class distribution (green, yellow, red) for a congestion intensity in [0, 1]."""
    i = min(1.0, max(0.0, intensity))
    red = 0.03 + 0.55 * i
    yellow = 0.07 + 0.30 * i
    return np.array([1.0 - red - yellow, yellow, red])


@dataclass
class SyntheticCity:
    spec: SyntheticCitySpec
    graph: RoadGraph
    detectors: list[DetectorDay]
    stats: list[SegmentSpeedStats]
    free_flow: list[FreeFlow]
    heatmap: VolumeHeatmap
    planted: dict[tuple[int, int], np.ndarray]  # (u, v) -> (24, 3)

    def write(self, out_dir: str | Path) -> dict[str, str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_graph(self.graph, out / "graph")
        save_detectors(self.detectors, out / "detectors.jsonl")
        save_speed_stats(self.stats, out / "speed_stats.jsonl")
        save_free_flow(self.free_flow, out / "free_flow.jsonl")
        self.heatmap.save(out / "heatmap.npz")
        write_jsonl(out / "planted.jsonl", (
            {"u": u, "v": v, "hour": h, "p": [float(x) for x in arr[h]]}
            for (u, v), arr in sorted(self.planted.items()) for h in range(24)
        ))
        write_json(out / "synth_spec.json", self.spec.to_dict())
        return {
            "raw_graph_dir": "graph",
            "detectors": "detectors.jsonl",
            "speed_stats": "speed_stats.jsonl",
            "free_flow": "free_flow.jsonl",
            "heatmap": "heatmap.npz",
        }


def _grid_class(spec: SyntheticCitySpec, r1, c1, r2, c2) -> str:
    if r1 == r2 and r1 % spec.arterial_every == 0:
        return "primary"
    if c1 == c2 and c1 % spec.arterial_every == 0:
        return "secondary"
    return "residential"


def _edge(nodes, u, v, highway_class, geometry=None, key=0, access=None, length=None) -> Edge:
    a, b = nodes[u], nodes[v]
    geom = geometry or ((a.lat, a.lon), (b.lat, b.lon))
    if length is None:
        length = math.fsum(haversine_m(p[0], p[1], q[0], q[1]) for p, q in zip(geom, geom[1:]))
    return Edge(u, v, length, importance_for(highway_class), MAXSPEED_BY_CLASS.get(highway_class, 30.0),
                highway_class, access, False, tuple(geom), key)


def _two_way(nodes, u, v, cls, geometry=None, **kw) -> list[Edge]:
    fwd = _edge(nodes, u, v, cls, geometry, **kw)
    rev = _edge(nodes, v, u, cls, tuple(reversed(fwd.geometry)), **kw)
    return [fwd, rev]


def _build_graph(spec: SyntheticCitySpec) -> tuple[RoadGraph, set[tuple[int, int]]]:
    """Grid graph plus, when messy, one instance of each cleaning hazard.

    Returns the graph and the set of edges planted as low-volume residential roads.
    """
    lat0, lon0 = spec.origin
    nodes: dict[int, Node] = {}
    for r in range(spec.rows):
        for c in range(spec.cols):
            # grid rotated by 45 degrees so that the two street axes use distinct heading channels
            lat, lon = offset(lat0, lon0, (r + c) * spec.spacing_m / _SQRT2, (c - r) * spec.spacing_m / _SQRT2)
            nodes[r * spec.cols + c] = Node(r * spec.cols + c, lat, lon)
    edges: list[Edge] = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            n = r * spec.cols + c
            if c + 1 < spec.cols:
                edges += _two_way(nodes, n, n + 1, _grid_class(spec, r, c, r, c + 1))
            if r + 1 < spec.rows:
                edges += _two_way(nodes, n, n + spec.cols, _grid_class(spec, r, c, r + 1, c))
    low_volume: set[tuple[int, int]] = set()
    if not spec.messy:
        return RoadGraph.build(nodes.values(), edges), low_volume

    next_id = len(nodes)

    def new_node(lat, lon):
        nonlocal next_id
        nodes[next_id] = Node(next_id, lat, lon)
        next_id += 1
        return next_id - 1

    s = spec.spacing_m
    corner = nodes[0]
    # private driveway leaving the grid to the south
    p = new_node(*offset(corner.lat, corner.lon, -0.3 * s, 0.0))
    edges += _two_way(nodes, 0, p, "service", access="private")
    # residential cul-de-sac to the west
    d1 = new_node(*offset(corner.lat, corner.lon, 0.0, -0.25 * s))
    d2 = new_node(*offset(corner.lat, corner.lon, 0.0, -0.5 * s))
    edges += _two_way(nodes, 0, d1, "residential") + _two_way(nodes, d1, d2, "residential")
    # short and long self-loops on the last node
    last = nodes[spec.rows * spec.cols - 1]
    for length, north in ((120.0, 20.0), (450.0, 80.0)):
        a = offset(last.lat, last.lon, north, 0.5 * north)
        b = offset(last.lat, last.lon, north, -0.5 * north)
        geom = ((last.lat, last.lon), a, b, (last.lat, last.lon))
        edges.append(_edge(nodes, last.node_id, last.node_id, "residential", geom,
                           key=len([e for e in edges if e.u == e.v == last.node_id]), length=length))
    # parallel, longer edge between nodes 1 and 2 (curving north)
    n1, n2 = nodes[1], nodes[2]
    bend = offset((n1.lat + n2.lat) / 2, (n1.lon + n2.lon) / 2, 0.15 * s, 0.0)
    edges.append(_edge(nodes, 1, 2, _grid_class(spec, 0, 1, 0, 2), ((n1.lat, n1.lon), bend, (n2.lat, n2.lon)), key=1))
    # circle ramp: a node bypassing the grid edge between nodes cols and 2*cols (west column)
    a_id, b_id = spec.cols, 2 * spec.cols if spec.rows > 2 else spec.cols + 1
    a, b = nodes[a_id], nodes[b_id]
    m = new_node(*offset((a.lat + b.lat) / 2, (a.lon + b.lon) / 2, 0.0, -0.1 * s))
    edges += [_edge(nodes, a_id, m, "primary"), _edge(nodes, m, b_id, "primary")]
    # detached triangle far east
    far = offset(lat0, lon0, 0.0, (spec.cols + 2) * s)
    t = [new_node(*far), new_node(*offset(far[0], far[1], 0.3 * s, 0.0)), new_node(*offset(far[0], far[1], 0.0, 0.3 * s))]
    edges += _two_way(nodes, t[0], t[1], "residential") + _two_way(nodes, t[1], t[2], "residential")
    edges += _two_way(nodes, t[2], t[0], "residential")
    # one residential street (grid row 1) with almost no traffic along its whole length
    if spec.rows > 2 and 1 % spec.arterial_every != 0:
        for c in range(spec.cols - 1):
            n = spec.cols + c
            low_volume |= {(n, n + 1), (n + 1, n)}
    return RoadGraph.build(nodes.values(), edges), low_volume


def _heatmap(spec: SyntheticCitySpec, graph: RoadGraph, low_volume, seed: int) -> VolumeHeatmap:
    lats = [n.lat for n in graph.nodes.values()]
    lons = [n.lon for n in graph.nodes.values()]
    pad_lat = 0.1 * (max(lats) - min(lats)) + 1e-4
    pad_lon = 0.1 * (max(lons) - min(lons)) + 1e-4
    bbox = (min(lats) - pad_lat, max(lats) + pad_lat, min(lons) - pad_lon, max(lons) + pad_lon)
    base = np.zeros(HEATMAP_SHAPE)
    probe = VolumeHeatmap(base, bbox)
    for e in graph.edges:
        vol = 5.0 if e.uv in low_volume else DAILY_VOLUME_BY_CLASS.get(e.highway_class, 20.0)
        for (lat, lon), brg in sample_polyline(e.geometry, 5.0):
            cell = probe.cell(lat, lon)
            if cell is not None:
                ch = heading_channel(brg)
                base[cell[0], cell[1], ch] = max(base[cell[0], cell[1], ch], vol)
    rng = _rng(seed, "heatmap")
    n = min(spec.n_days, 3)
    daily = [base * rng.uniform(0.9, 1.1) for _ in range(n)]
    # scale factors average to ~1, so planted low-volume streets stay below 10 and others above
    return build_heatmap(daily, bbox, seed=seed)


def _coverage_quota(total_slots: int, target: float, n_items: int, rng) -> np.ndarray:
    """Classified-bin count per (edge, day) item so that the overall share hits the target."""
    total = int(round(target * total_slots * n_items))
    base, extra = divmod(total, n_items)
    quota = np.full(n_items, base, dtype=np.int64)
    quota[rng.permutation(n_items)[:extra]] += 1
    return quota


def generate_synthetic_city(spec: SyntheticCitySpec, seed: int = 0) -> SyntheticCity:
    graph, low_volume = _build_graph(spec)
    edges = sorted(graph.edge_map)
    center_r, center_c = (spec.rows - 1) / 2, (spec.cols - 1) / 2
    n_grid = spec.rows * spec.cols

    prop_rng = _rng(seed, "propensity")
    planted: dict[tuple[int, int], np.ndarray] = {}
    for uv in edges:
        u = uv[0]
        if u < n_grid:
            r, c = divmod(u, spec.cols)
            zone = 1.0 - 0.5 * max(abs(r - center_r) / max(center_r, 1), abs(c - center_c) / max(center_c, 1))
        else:
            zone = 0.3
        propensity = zone * prop_rng.uniform(0.6, 1.4)
        planted[uv] = np.stack([planted_probabilities(propensity * congestion_intensity(h, spec.peak_hours))
                                for h in range(24)])

    flow_rng = _rng(seed, "flow")
    free_flow = []
    for uv in edges:
        maxspeed = graph.edge_map[uv][0].maxspeed_kph
        free_flow.append(FreeFlow(uv[0], uv[1], round(maxspeed * flow_rng.uniform(0.75, 1.0), 3)))
    ff = {(f.u, f.v): f.free_flow_kph for f in free_flow}

    lab_rng = _rng(seed, "labels")
    days = spec.days
    stats: list[SegmentSpeedStats] = []
    by_class: dict[str, list[int]] = {}
    items = [(uv, day) for day in days for uv in edges]
    for i, (uv, _) in enumerate(items):
        cls = graph.edge_map[uv][0].highway_class
        by_class.setdefault(cls if cls in spec.coverage_by_class else "", []).append(i)
    quota = np.zeros(len(items), dtype=np.int64)
    for cls, idx in sorted(by_class.items()):
        target = spec.coverage_by_class.get(cls, spec.coverage)
        quota[idx] = _coverage_quota(NUM_BINS, target, len(idx), lab_rng)
    for (uv, day), q in zip(items, quota):
        classified = set(int(t) for t in lab_rng.choice(NUM_BINS, size=int(q), replace=False))
        f = ff[uv]
        for t in range(NUM_BINS):
            if t in classified:
                cc = int(lab_rng.choice(3, p=planted[uv][t // 4])) + 1
                factor, volume = _speed_for_class(cc, lab_rng)
            else:
                kind = lab_rng.random()
                if kind < 0.7:
                    continue
                if kind < 0.8:
                    stats.append(SegmentSpeedStats(uv[0], uv[1], t, 0.0, int(lab_rng.integers(1, 9)), 255, day))
                    continue
                if kind < 0.9:
                    stats.append(SegmentSpeedStats(uv[0], uv[1], t, 0.0, int(lab_rng.integers(1, 9)), 0, day))
                    continue
                factor, volume = float(lab_rng.uniform(0.42, 0.78)), int(lab_rng.integers(0, 3))
            speed = round(factor * f, 3)
            raw = min(254, max(1, int(round(speed))))
            stats.append(SegmentSpeedStats(uv[0], uv[1], t, speed, volume, raw, day))

    detectors = _detectors(spec, graph, seed)
    heatmap = _heatmap(spec, graph, low_volume, seed)
    return SyntheticCity(spec, graph, detectors, stats, free_flow, heatmap, planted)


def _speed_for_class(cc: int, rng) -> tuple[float, int]:
    if cc == 3:
        return float(rng.uniform(0.1, 0.38)), int(rng.integers(5, 16))
    if cc == 2:
        return float(rng.uniform(0.42, 0.78)), int(rng.integers(3, 16))
    return float(rng.uniform(0.82, 1.1)), int(rng.integers(1, 16))


def _detectors(spec: SyntheticCitySpec, graph: RoadGraph, seed: int) -> list[DetectorDay]:
    rng = _rng(seed, "detectors")
    n_grid = spec.rows * spec.cols
    n_det = int(round(spec.detector_density * n_grid))
    if n_det == 0:
        return []
    chosen = sorted(int(x) for x in rng.choice(n_grid, size=n_det, replace=False))
    sites = []
    for i, nid in enumerate(chosen):
        node = graph.nodes[nid]
        kind = rng.random()
        if kind < 0.6 or i == 0:
            north, east = rng.uniform(-20, 20, size=2)
            sites.append((f"D{i:04d}", *offset(node.lat, node.lon, north, east)))
            if i == 0:
                # second detector at the same junction, counts are summed
                sites.append((f"D{i:04d}b", *offset(node.lat, node.lon, -north, -east)))
            continue
        out = [e for e in graph.out_edges[nid] if e.v < n_grid and not e.is_self_loop]
        e = out[int(rng.integers(len(out)))]
        other = graph.nodes[e.v]
        mid = ((node.lat + other.lat) / 2, (node.lon + other.lon) / 2)
        dn = other.lat - node.lat
        de = (other.lon - node.lon) * math.cos(math.radians(node.lat))
        norm = math.hypot(dn, de)
        side = 5.0 if kind < 0.9 else 60.0
        north, east = -de / norm * side, dn / norm * side
        sites.append((f"D{i:04d}", *offset(mid[0], mid[1], north, east)))
    out = []
    for day_i, day in enumerate(spec.days):
        for det_id, lat, lon in sites:
            level = rng.uniform(50, 300)
            counts = []
            for t in range(NUM_BINS):
                if rng.random() < 0.05:
                    counts.append(None)
                    continue
                lam = level * (0.2 + congestion_intensity(t / 4, spec.peak_hours))
                counts.append(float(rng.poisson(lam)))
            out.append(DetectorDay(det_id, lat, lon, day, tuple(counts)))
    return out
