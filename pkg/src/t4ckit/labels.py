"""Congestion-class and ETA ground truth from segment speed statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .model import (
    NUM_BINS,
    CongestionLabel,
    EtaLabel,
    FreeFlow,
    RoadGraph,
    SegmentSpeedStats,
    SuperSegment,
)

logger = logging.getLogger(__name__)

CORRUPT_RAW_SPEEDS = (0, 255)
RED_FACTOR = 0.4
GREEN_FACTOR = 0.8
RED_MIN_VOLUME = 5
YELLOW_MIN_VOLUME = 3
MIN_SPEED_KPH = 0.5
SLOT_S = 1800.0

SOURCES = ("current", "free_flow", "maxspeed")


def extract_cc(stats: SegmentSpeedStats, free_flow_kph: float) -> int:
    """Congestion class of one edge-bin: 3 red, 2 yellow, 1 green, 0 unclassified."""
    if stats.raw_median_speed in CORRUPT_RAW_SPEEDS:
        return 0
    if not free_flow_kph > 0:
        raise ValueError(f"free flow speed must be > 0 for edge ({stats.u}, {stats.v}), got {free_flow_kph}")
    factor = stats.median_speed_kph / free_flow_kph
    volume = stats.volume
    if factor < RED_FACTOR and volume >= RED_MIN_VOLUME:
        return 3
    if RED_FACTOR <= factor < GREEN_FACTOR and volume >= YELLOW_MIN_VOLUME:
        return 2
    if factor >= GREEN_FACTOR and volume > 0:
        return 1
    return 0


@dataclass(frozen=True)
class EdgeSpeeds:
    speeds: tuple[float, ...]
    sources: tuple[str, ...]


EdgeSpeedSchedule = dict[tuple[int, int], EdgeSpeeds]


def build_edge_speed_schedule(
    edges: Mapping[tuple[int, int], float] | RoadGraph,
    free_flow: Iterable[FreeFlow] | Mapping[tuple[int, int], float],
    stats: Iterable[SegmentSpeedStats],
) -> EdgeSpeedSchedule:
    """Per-edge speeds for the 96 bins of one day.

    Bins default to the free-flow speed, or to maxspeed for edges without one;
    bins with a current median speed take that value instead.
    `edges` maps (u, v) to maxspeed km/h, or is a graph.
    """
    if isinstance(edges, RoadGraph):
        edges = {uv: group[0].maxspeed_kph for uv, group in edges.edge_map.items()}
    ff = free_flow if isinstance(free_flow, Mapping) else {(f.u, f.v): f.free_flow_kph for f in free_flow}
    speeds: dict[tuple[int, int], list[float]] = {}
    sources: dict[tuple[int, int], list[str]] = {}
    n_maxspeed = 0
    for uv, maxspeed in edges.items():
        if uv in ff:
            speeds[uv] = [ff[uv]] * NUM_BINS
            sources[uv] = ["free_flow"] * NUM_BINS
        else:
            speeds[uv] = [float(maxspeed)] * NUM_BINS
            sources[uv] = ["maxspeed"] * NUM_BINS
            n_maxspeed += 1
    logger.info("%d / %d edges only have maxspeed", n_maxspeed, len(speeds))
    for s in stats:
        uv = (s.u, s.v)
        if uv not in speeds:
            continue
        speeds[uv][s.t] = s.median_speed_kph
        sources[uv][s.t] = "current"
    return {uv: EdgeSpeeds(tuple(speeds[uv]), tuple(sources[uv])) for uv in speeds}


def _clip(kph: float) -> float:
    return MIN_SPEED_KPH if kph < MIN_SPEED_KPH else kph


def neighbour_mean_speed(speeds: Sequence[float], t: int) -> float:
    """Mean of the clipped speeds at t-1, t, t+1, truncated at the day boundaries."""
    window = [_clip(x) for x in speeds[max(t - 1, 0): t + 2]]
    return math.fsum(window) / len(window)


def edge_eta(length_m: float, speeds: Sequence[float], t: int) -> float:
    eta = length_m / (_clip(speeds[t]) / 3.6)
    if eta > SLOT_S:
        # Too slow to cross within the slot plus half of each neighbour slot.
        eta = SLOT_S + length_m / (neighbour_mean_speed(speeds, t) / 3.6)
    return eta


def compute_eta(
    ss: SuperSegment,
    schedule: EdgeSpeedSchedule,
    t: int,
    lengths: Mapping[tuple[int, int], float],
) -> float:
    """Travel time in seconds along a super-segment at bin t."""
    if not 0 <= t < NUM_BINS:
        raise ValueError(f"bin {t} outside [0, {NUM_BINS - 1}]")
    total = 0.0
    for uv in ss.edge_list:
        if uv not in schedule:
            raise KeyError(f"super-segment {ss.ssid}: no speed schedule for edge {uv}")
        total += edge_eta(lengths[uv], schedule[uv].speeds, t)
    return total


def _edge_lengths(graph: RoadGraph) -> dict[tuple[int, int], float]:
    out = {}
    for uv, group in graph.edge_map.items():
        if len(group) > 1:
            logger.warning("edge %s has %d parallel edges, using the shortest", uv, len(group))
        out[uv] = min(e.length_m for e in group)
    return out


def label_city(
    graph: RoadGraph,
    supersegments: Sequence[SuperSegment],
    stats: Iterable[SegmentSpeedStats],
    free_flow: Iterable[FreeFlow],
    day: str | None = None,
) -> tuple[list[CongestionLabel], list[EtaLabel]]:
    """CC labels for every edge and bin, ETA labels for every super-segment and bin, for one day.

    Stats are filtered to `day` when it is given. Edges without usable stats
    (or without a free-flow speed) are labelled 0.
    """
    stats = [s for s in stats if day is None or s.day is None or s.day == day]
    ff = {(f.u, f.v): f.free_flow_kph for f in free_flow}
    lengths = _edge_lengths(graph)
    for ss in supersegments:
        for uv in ss.edge_list:
            if uv not in lengths:
                raise ValueError(f"super-segment {ss.ssid} references edge {uv} not in the graph")

    cc = {(uv, t): 0 for uv in lengths for t in range(NUM_BINS)}
    no_ff = 0
    for s in stats:
        key = ((s.u, s.v), s.t)
        if key[0] not in lengths:
            continue
        if key[0] not in ff:
            no_ff += 1
            continue
        cc[key] = extract_cc(s, ff[key[0]])
    if no_ff:
        logger.warning("%d stats rows on edges without free-flow speed left unclassified", no_ff)
    cc_labels = [CongestionLabel(uv[0], uv[1], t, c, day) for (uv, t), c in sorted(cc.items())]

    schedule = build_edge_speed_schedule({uv: graph.edge_map[uv][0].maxspeed_kph for uv in lengths}, ff, stats)
    eta_labels = [
        EtaLabel(ss.ssid, t, compute_eta(ss, schedule, t, lengths), day)
        for ss in supersegments
        for t in range(NUM_BINS)
    ]
    return cc_labels, eta_labels
