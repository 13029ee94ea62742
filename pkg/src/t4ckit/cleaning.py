"""Road-graph cleaning: access filtering, low-volume pruning and topology cleanup."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .attach import split_edge
from .geo import sample_polyline
from .model import Edge, RoadGraph, with_default_geometry

logger = logging.getLogger(__name__)

HEATMAP_SHAPE = (495, 436, 4)
FORBIDDEN_ACCESS = frozenset({"no", "private", "official", "permit", "delivery", "designated", "emergency"})
LOW_VOLUME_CLASSES = frozenset({"residential", "unclassified"})
LOW_VOLUME_THRESHOLD = 10.0
MIN_PRUNE_LENGTH_M = 50.0
SELF_LOOP_MIN_M = 300.0
RASTER_STEP_M = 10.0


@dataclass(frozen=True)
class VolumeHeatmap:
    """Average daily volume per grid cell and heading quadrant.

    bbox is (lat_min, lat_max, lon_min, lon_max); row 0 is the northern edge.
    Heading channels: 0 = NE [0, 90), 1 = SE, 2 = SW, 3 = NW (bearing clockwise from north).
    """

    grid: np.ndarray
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        if self.grid.shape != HEATMAP_SHAPE:
            raise ValueError(f"heatmap must have shape {HEATMAP_SHAPE}, got {self.grid.shape}")
        if np.any(self.grid < 0) or not np.all(np.isfinite(self.grid)):
            raise ValueError("heatmap values must be finite and non-negative")
        lat_min, lat_max, lon_min, lon_max = self.bbox
        if not (lat_min < lat_max and lon_min < lon_max):
            raise ValueError(f"degenerate heatmap bbox {self.bbox}")

    def cell(self, lat: float, lon: float) -> tuple[int, int] | None:
        lat_min, lat_max, lon_min, lon_max = self.bbox
        if not (lat_min <= lat <= lat_max and lon_min <= lon <= lon_max):
            return None
        rows, cols, _ = HEATMAP_SHAPE
        r = min(rows - 1, int((lat_max - lat) / (lat_max - lat_min) * rows))
        c = min(cols - 1, int((lon - lon_min) / (lon_max - lon_min) * cols))
        return r, c

    def save(self, path: str | Path) -> None:
        np.savez_compressed(path, grid=self.grid, bbox=np.asarray(self.bbox, dtype=float))

    @classmethod
    def load(cls, path: str | Path) -> VolumeHeatmap:
        with np.load(path) as data:
            return cls(np.asarray(data["grid"], dtype=float), tuple(float(x) for x in data["bbox"]))


def heading_channel(bearing: float) -> int:
    return int(bearing % 360.0 // 90.0)


def sample_days(n_days: int, k: int, seed: int) -> list[int]:
    """Sorted indices of the days averaged into a heatmap."""
    if n_days <= k:
        return list(range(n_days))
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(n_days, size=k, replace=False))


def build_heatmap(
    daily_volumes: Sequence[np.ndarray],
    bbox: tuple[float, float, float, float],
    n_sample_days: int = 30,
    seed: int = 0,
) -> VolumeHeatmap:
    if len(daily_volumes) == 0:
        raise ValueError("at least one day of volumes is required")
    chosen = sample_days(len(daily_volumes), n_sample_days, seed)
    stack = np.stack([np.asarray(daily_volumes[i], dtype=float) for i in chosen])
    return VolumeHeatmap(stack.mean(axis=0), bbox)


def edge_volume(edge: Edge, heatmap: VolumeHeatmap, both_directions: bool | None = None) -> float | None:
    """Highest heatmap volume over the cells an edge crosses; None if it lies outside the grid.

    The heading channel follows the local travel direction; two-way edges also
    read the opposite channel.
    """
    if both_directions is None:
        both_directions = not edge.oneway
    best = None
    for (lat, lon), brg in sample_polyline(edge.geometry, RASTER_STEP_M):
        cell = heatmap.cell(lat, lon)
        if cell is None:
            continue
        ch = heading_channel(brg)
        vol = heatmap.grid[cell[0], cell[1], ch]
        if both_directions:
            vol = max(vol, heatmap.grid[cell[0], cell[1], (ch + 2) % 4])
        best = vol if best is None else max(best, vol)
    return None if best is None else float(best)


# ---------------------------------------------------------------------------
# cleaning steps
# ---------------------------------------------------------------------------

def _drop_edges(graph: RoadGraph, drop: set[tuple[int, int, int]]) -> RoadGraph:
    if not drop:
        return graph
    return RoadGraph(graph.nodes, tuple(e for e in graph.edges if e.ident not in drop))


def _drop_nodes(graph: RoadGraph, drop: set[int]) -> RoadGraph:
    if not drop:
        return graph
    nodes = {k: n for k, n in graph.nodes.items() if k not in drop}
    edges = tuple(e for e in graph.edges if e.u not in drop and e.v not in drop)
    return RoadGraph(nodes, edges)


def clean_no_access(graph: RoadGraph) -> RoadGraph:
    return _drop_edges(graph, {e.ident for e in graph.edges if e.access in FORBIDDEN_ACCESS})


def clean_low_volume(
    graph: RoadGraph,
    heatmap: VolumeHeatmap | None,
    threshold: float = LOW_VOLUME_THRESHOLD,
    min_length_m: float = MIN_PRUNE_LENGTH_M,
) -> RoadGraph:
    if heatmap is None:
        logger.info("no heatmap given, skipping low-volume cleaning")
        return graph
    graph = with_default_geometry(graph)
    drop = set()
    for e in graph.edges:
        if e.highway_class not in LOW_VOLUME_CLASSES or e.length_m < min_length_m:
            continue
        if graph.nodes[e.u].has_counter or graph.nodes[e.v].has_counter:
            continue
        vol = edge_volume(e, heatmap)
        if vol is None:
            logger.warning("edge %s lies outside the heatmap, treating volume as 0", e.ident)
            vol = 0.0
        if vol < threshold:
            drop.add(e.ident)
    return _drop_edges(graph, drop)


def clean_dead_ends(graph: RoadGraph) -> RoadGraph:
    """Repeatedly remove edges (a, b) whose head b continues nowhere but back to a,
    or whose tail a is entered from nowhere but b. Self-loops are not continuations."""
    while True:
        drop = set()
        for e in graph.edges:
            if e.is_self_loop:
                continue
            a, b = e.u, e.v
            onward = any(x.v not in (a, b) for x in graph.out_edges[b])
            inward = any(x.u not in (a, b) for x in graph.in_edges[a])
            if not onward or not inward:
                drop.add(e.ident)
        if not drop:
            return graph
        graph = _drop_edges(graph, drop)


def clean_isolates(graph: RoadGraph) -> RoadGraph:
    return _drop_nodes(graph, {n for n in graph.nodes if graph.degree(n) == 0})


def clean_self_loops(graph: RoadGraph, min_length_m: float = SELF_LOOP_MIN_M) -> RoadGraph:
    return _drop_edges(graph, {e.ident for e in graph.edges if e.is_self_loop and e.length_m < min_length_m})


def clean_no_neighbors(graph: RoadGraph) -> RoadGraph:
    """Remove nodes that are connected to nothing but themselves (e.g. a lone long self-loop)."""
    return _drop_nodes(graph, {n for n, nb in graph.neighbors.items() if not nb})


def weak_components(graph: RoadGraph) -> list[set[int]]:
    parent = {n: n for n in graph.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in graph.edges:
        ru, rv = find(e.u), find(e.v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    comps: dict[int, set[int]] = {}
    for n in graph.nodes:
        comps.setdefault(find(n), set()).add(n)
    return list(comps.values())


def largest_component(graph: RoadGraph) -> RoadGraph:
    """Keep the largest weakly connected component; ties go to the one holding the smallest node id."""
    if not graph.nodes:
        raise ValueError("graph is empty")
    comps = weak_components(graph)
    keep = max(comps, key=lambda c: (len(c), -min(c)))
    return _drop_nodes(graph, set(graph.nodes) - keep)


def _is_circle_ramp(nb, succ, pred, node, m: int) -> bool:
    """m touches exactly two nodes a, b and a -> m -> b bypasses an existing a -> b edge."""
    if node.has_counter or node.origin == "multi_edge_split":
        return False
    if len(nb[m]) != 2:
        return False
    a, b = sorted(nb[m])
    for x, y in ((a, b), (b, a)):
        if x in pred[m] and y in succ[m] and y in succ[x]:
            return True
    return False


def clean_circle_ramps(graph: RoadGraph) -> RoadGraph:
    """Remove bypass nodes: m joined only to a and b, with a -> m -> b parallel to a direct a -> b.

    Candidates are checked in node-id order against the live graph, so a
    removal can expose further ramps; the sweep repeats to a fixpoint. Nodes
    with counters and nodes created by multi-edge splitting are kept.
    """
    nb = {n: set(s) for n, s in graph.neighbors.items()}
    succ: dict[int, set[int]] = {n: set() for n in graph.nodes}
    pred: dict[int, set[int]] = {n: set() for n in graph.nodes}
    for e in graph.edges:
        if not e.is_self_loop:
            succ[e.u].add(e.v)
            pred[e.v].add(e.u)
    removed: set[int] = set()
    changed = True
    while changed:
        changed = False
        for m in sorted(nb):
            if m in removed or not _is_circle_ramp(nb, succ, pred, graph.nodes[m], m):
                continue
            for x in nb[m]:
                nb[x].discard(m)
                succ[x].discard(m)
                pred[x].discard(m)
            nb[m], succ[m], pred[m] = set(), set(), set()
            removed.add(m)
            changed = True
    return _drop_nodes(graph, removed)


def clean_multi_edges(graph: RoadGraph) -> RoadGraph:
    """Keep the shortest of each group of parallel edges; split the others at their midpoint."""
    to_split = []
    for uv, group in sorted(graph.edge_map.items()):
        if len(group) < 2:
            continue
        keep = min(group, key=lambda e: (e.length_m, e.key))
        to_split.extend(e for e in group if e is not keep)
    if not to_split:
        return graph
    graph = with_default_geometry(graph)
    for e in to_split:
        current = next(x for x in graph.edge_map[e.uv] if x.key == e.key)
        graph, _ = split_edge(graph, current, 0.5, origin="multi_edge_split")
    return graph


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CleanConfig:
    low_volume_threshold: float = LOW_VOLUME_THRESHOLD
    min_prune_length_m: float = MIN_PRUNE_LENGTH_M
    self_loop_min_m: float = SELF_LOOP_MIN_M


@dataclass
class CleanReport:
    steps: list[dict] = field(default_factory=list)
    passes: int = 0

    def totals(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for row in self.steps:
            agg = out.setdefault(row["step"], {k: 0 for k in row if k not in ("step", "pass")})
            for k, v in row.items():
                if k not in ("step", "pass"):
                    agg[k] += v
        return out

    @property
    def all_zero(self) -> bool:
        return all(v == 0 for row in self.steps for k, v in row.items() if k not in ("step", "pass"))

    def to_dict(self) -> dict:
        return {"passes": self.passes, "steps": self.steps, "totals": self.totals()}


def _diff(step: str, pass_no: int, before: RoadGraph, after: RoadGraph) -> dict:
    b_edges = {e.ident for e in before.edges}
    a_edges = {e.ident for e in after.edges}
    return {
        "step": step,
        "pass": pass_no,
        "removed_nodes": len(set(before.nodes) - set(after.nodes)),
        "added_nodes": len(set(after.nodes) - set(before.nodes)),
        "removed_edges": len(b_edges - a_edges),
        "added_edges": len(a_edges - b_edges),
        "removed_length_m": round(before.total_length() - after.total_length(), 6) + 0.0,
    }


def clean_steps(heatmap: VolumeHeatmap | None, cfg: CleanConfig = CleanConfig()) -> list[tuple[str, Callable]]:
    """The ordered cleaning steps; composite steps list their sub-steps in order."""
    return [
        ("no_access", clean_no_access),
        ("low_volume", lambda g: clean_low_volume(g, heatmap, cfg.low_volume_threshold, cfg.min_prune_length_m)),
        ("dead_ends", clean_dead_ends),
        ("isolates", clean_isolates),
        ("self_loops", lambda g: clean_self_loops(g, cfg.self_loop_min_m)),
        ("self_loops/isolates", clean_isolates),
        ("self_loops/dead_ends", clean_dead_ends),
        ("no_neighbors", clean_no_neighbors),
        ("sub_graphs", largest_component),
        ("sub_graphs/dead_ends", clean_dead_ends),
        ("circle_ramps", clean_circle_ramps),
        ("circle_ramps/dead_ends", clean_dead_ends),
        ("circle_ramps/isolates", clean_isolates),
        ("multi_edges", clean_multi_edges),
    ]


def clean_pipeline(
    graph: RoadGraph,
    heatmap: VolumeHeatmap | None = None,
    cfg: CleanConfig = CleanConfig(),
    max_passes: int = 20,
) -> tuple[RoadGraph, CleanReport]:
    """Run the cleaning steps in order, repeating whole passes until one changes nothing.

    The result is a fixpoint of the step sequence, so running the pipeline on
    its own output is the identity.
    """
    report = CleanReport()
    steps = clean_steps(heatmap, cfg)
    for pass_no in range(1, max_passes + 1):
        start = graph
        for name, fn in steps:
            before = graph
            graph = fn(graph)
            report.steps.append(_diff(name, pass_no, before, graph))
        report.passes = pass_no
        if graph == start:
            if pass_no > 1:
                # the last pass only confirmed the fixpoint
                report.steps = [r for r in report.steps if r["pass"] != pass_no]
            return graph, report
    raise RuntimeError(f"cleaning did not converge within {max_passes} passes")


def check_clean_invariants(graph: RoadGraph, self_loop_min_m: float = SELF_LOOP_MIN_M) -> list[str]:
    problems = []
    if any(graph.degree(n) == 0 for n in graph.nodes):
        problems.append("isolated nodes present")
    if any(len(g) > 1 for g in graph.edge_map.values()):
        problems.append("multi-edges present")
    if len(weak_components(graph)) != 1:
        problems.append("graph is not a single weakly connected component")
    if any(e.is_self_loop and e.length_m < self_loop_min_m for e in graph.edges):
        problems.append("short self-loop present")
    if any(e.access in FORBIDDEN_ACCESS for e in graph.edges):
        problems.append("forbidden access edge present")
    return problems


def removed_length(before: RoadGraph, after: RoadGraph) -> float:
    return math.fsum(e.length_m for e in before.edges) - math.fsum(e.length_m for e in after.edges)
