"""Manifest-driven end-to-end runs: attach -> clean -> sample -> label -> score."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import attach as attach_mod
from . import baseline, cleaning, labels, metrics, supersegments
from .jsonl import read_json, write_json, write_jsonl
from .model import (
    CcPrediction,
    EtaPrediction,
    load_cc_labels,
    load_detectors,
    load_eta_labels,
    load_free_flow,
    load_graph,
    load_speed_stats,
    load_supersegments,
    save_cc_labels,
    save_cc_predictions,
    save_eta_labels,
    save_eta_predictions,
    save_graph,
    save_node_counts,
    save_supersegments,
)

logger = logging.getLogger(__name__)

STAGES = ("attach", "clean", "sample", "label", "score")
INPUT_KEYS = ("raw_graph_dir", "detectors", "heatmap", "speed_stats", "free_flow",
              "whitelist_nodes", "whitelist_supersegments")
# inputs each stage needs when enabled
STAGE_INPUTS = {
    "attach": ("raw_graph_dir", "detectors"),
    "clean": ("raw_graph_dir",),
    "sample": ("raw_graph_dir",),
    "label": ("raw_graph_dir", "speed_stats", "free_flow"),
    "score": (),
}
DEFAULT_THRESHOLDS = {
    "node_snap_m": attach_mod.NODE_SNAP_M,
    "edge_snap_m": attach_mod.EDGE_SNAP_M,
    "self_loop_min_m": cleaning.SELF_LOOP_MIN_M,
    "low_volume": cleaning.LOW_VOLUME_THRESHOLD,
    "min_prune_length_m": cleaning.MIN_PRUNE_LENGTH_M,
    "max_path_m": 10000.0,
}


class ManifestError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class PipelineManifest:
    city: str
    seed: int | None
    base_dir: Path
    out_dir: Path
    timings_path: Path
    inputs: dict[str, Path | None]
    stages: dict[str, bool]
    thresholds: dict[str, float]
    search: supersegments.SearchConfig
    n_key_intersections: int = supersegments.N_KEY_INTERSECTIONS
    train_days: list[str] | None = None
    test_days: list[str] | None = None
    allow_partial_cities: bool = True

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> PipelineManifest:
        base = Path(base_dir)
        if "city" not in d:
            raise ManifestError("manifest needs a 'city'")
        paths = d.get("paths", {})
        unknown = set(paths) - set(INPUT_KEYS) - {"out_dir", "timings"}
        if unknown:
            raise ManifestError(f"unknown path keys: {sorted(unknown)}")
        inputs = {k: (base / paths[k]) if paths.get(k) else None for k in INPUT_KEYS}
        out_dir = base / paths.get("out_dir", "out")
        # wall-clock timings live outside the output tree so reruns stay byte-identical
        timings = base / paths["timings"] if paths.get("timings") else out_dir.parent / f"{out_dir.name}.timings.json"
        stages = {s: bool(d.get("stages", {}).get(s, True)) for s in STAGES}
        bad = set(d.get("stages", {})) - set(STAGES)
        if bad:
            raise ManifestError(f"unknown stages: {sorted(bad)}")
        thresholds = dict(DEFAULT_THRESHOLDS)
        for k, v in d.get("thresholds", {}).items():
            if k not in thresholds:
                raise ManifestError(f"unknown threshold {k!r}")
            thresholds[k] = float(v)
        search_d = dict(d.get("search", {}))
        search_d.setdefault("max_path_m", thresholds["max_path_m"])
        try:
            search = supersegments.SearchConfig.from_dict(search_d)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"invalid search config: {exc}") from None
        m = cls(
            city=d["city"], seed=d.get("seed"), base_dir=base, out_dir=out_dir, timings_path=timings, inputs=inputs, stages=stages,
            thresholds=thresholds, search=search,
            n_key_intersections=int(d.get("n_key_intersections", supersegments.N_KEY_INTERSECTIONS)),
            train_days=d.get("train_days"), test_days=d.get("test_days"),
            allow_partial_cities=bool(d.get("allow_partial_cities", True)),
        )
        m.validate()
        return m

    @classmethod
    def load(cls, path: str | Path) -> PipelineManifest:
        path = Path(path)
        try:
            d = read_json(path)
        except (OSError, ValueError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from None
        return cls.from_dict(d, path.parent)

    def validate(self) -> None:
        for stage, enabled in self.stages.items():
            if not enabled:
                continue
            for key in STAGE_INPUTS[stage]:
                p = self.inputs.get(key)
                if p is None:
                    raise ManifestError(f"stage {stage!r} is enabled but path {key!r} is missing")
                if not p.exists():
                    raise ManifestError(f"{key} path {p} does not exist")
        given = [p.resolve() for p in self.inputs.values() if p is not None]
        if len(set(given)) != len(given):
            raise ManifestError("manifest paths must be distinct")
        if self.out_dir.resolve() in given or self.timings_path.resolve() in given:
            raise ManifestError("output paths must differ from every input path")
        out = self.out_dir.resolve()
        if self.timings_path.resolve() == out or out in self.timings_path.resolve().parents:
            raise ManifestError("the timings file must lie outside out_dir")
        if self.seed is None and (self.stages["clean"] or self.stages["sample"]):
            raise ManifestError("a seed is required when the clean or sample stage is enabled")

    @property
    def outputs(self) -> dict[str, Path]:
        o = self.out_dir
        return {
            "attached_graph_dir": o / "attached",
            "clean_graph_dir": o / "clean",
            "supersegments": o / "supersegments.jsonl",
            "labels_dir": o / "labels",
            "score_dir": o / "score",
            "summary": o / "summary.json",
            "timings": self.timings_path,
        }


@dataclass
class RunResult:
    summary: dict
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.summary["status"] == "ok"


def _stage_attach(m: PipelineManifest, graph_dir: Path) -> tuple[Path, dict]:
    out = m.outputs["attached_graph_dir"]
    graph = load_graph(graph_dir)
    dets = load_detectors(m.inputs["detectors"])
    res = attach_mod.attach_detectors(graph, dets, m.thresholds["node_snap_m"], m.thresholds["edge_snap_m"])
    save_graph(res.graph, out)
    save_node_counts(res.node_counts.values(), out / "node_counts.jsonl")
    write_jsonl(out / "attachment_report.jsonl", res.report_records())
    return out, {
        "detectors": len({d.detector_id for d in dets}),
        "attached": len(res.mapping),
        "discarded": len(res.discarded),
        "nodes": len(res.graph.nodes),
        "edges": len(res.graph.edges),
    }


def _load_heatmap(m: PipelineManifest):
    p = m.inputs.get("heatmap")
    return cleaning.VolumeHeatmap.load(p) if p is not None else None


def _stage_clean(m: PipelineManifest, graph_dir: Path) -> tuple[Path, dict]:
    out = m.outputs["clean_graph_dir"]
    graph = load_graph(graph_dir)
    cfg = cleaning.CleanConfig(m.thresholds["low_volume"], m.thresholds["min_prune_length_m"],
                               m.thresholds["self_loop_min_m"])
    cleaned, report = cleaning.clean_pipeline(graph, _load_heatmap(m), cfg)
    save_graph(cleaned, out)
    write_json(out / "clean_report.json", report.to_dict())
    return out, {"nodes_before": len(graph.nodes), "edges_before": len(graph.edges),
                 "nodes": len(cleaned.nodes), "edges": len(cleaned.edges), "passes": report.passes}


def _read_whitelist_nodes(path: Path | None) -> list[int]:
    if path is None:
        return []
    data = read_json(path)
    return [int(x) for x in (data["node_ids"] if isinstance(data, dict) else data)]


def _stage_sample(m: PipelineManifest, graph_dir: Path) -> tuple[Path, dict]:
    graph = load_graph(graph_dir)
    keys = supersegments.select_key_intersections(
        graph, _load_heatmap(m), _read_whitelist_nodes(m.inputs.get("whitelist_nodes")), m.n_key_intersections,
    )
    wl = m.inputs.get("whitelist_supersegments")
    wl_ss = load_supersegments(wl) if wl is not None else []
    sampled = supersegments.sample_supersegments(graph, keys, m.search, wl_ss) if keys.node_ids else []
    save_supersegments(sampled, m.outputs["supersegments"])
    write_json(m.out_dir / "key_intersections.json",
               {"node_ids": list(keys.node_ids), "whitelisted": list(keys.whitelisted)})
    return m.outputs["supersegments"], {"key_intersections": len(keys.node_ids), "supersegments": len(sampled)}


def _stage_label(m: PipelineManifest, graph_dir: Path, ss_path: Path | None) -> dict:
    graph = load_graph(graph_dir)
    sss = load_supersegments(ss_path) if ss_path is not None and ss_path.exists() else []
    stats = load_speed_stats(m.inputs["speed_stats"])
    ff = load_free_flow(m.inputs["free_flow"])
    days = sorted({s.day for s in stats if s.day is not None}) or [None]
    cc_all, eta_all = [], []
    for day in days:
        cc, eta = labels.label_city(graph, sss, stats, ff, day)
        cc_all += cc
        eta_all += eta
    out = m.outputs["labels_dir"]
    save_cc_labels(cc_all, out / "cc_labels.jsonl")
    save_eta_labels(eta_all, out / "eta_labels.jsonl")
    return {"days": len(days), "cc_labels": len(cc_all), "classified": sum(x.cc != 0 for x in cc_all),
            "eta_labels": len(eta_all), "coverage": round(metrics.city_coverage(cc_all), 6)}


def split_days(days: list, train_days=None, test_days=None) -> tuple[list, list]:
    """Explicit split if given, else the last 30% of days (at least one) are held out."""
    if train_days is not None or test_days is not None:
        if test_days is None:
            test_days = [d for d in days if d not in train_days]
        if train_days is None:
            train_days = [d for d in days if d not in test_days]
        if not train_days or not test_days:
            raise ValueError("train/test day split leaves one side empty")
        return list(train_days), list(test_days)
    if len(days) < 2:
        return list(days), list(days)
    n_test = max(1, int(math.ceil(0.3 * len(days))))
    return list(days[:-n_test]), list(days[-n_test:])


def _stage_score(m: PipelineManifest) -> dict:
    lab_dir = m.outputs["labels_dir"]
    cc = load_cc_labels(lab_dir / "cc_labels.jsonl")
    eta = load_eta_labels(lab_dir / "eta_labels.jsonl")
    days = sorted({x.day for x in cc}, key=lambda d: d or "")
    train_days, test_days = split_days(days, m.train_days, m.test_days)
    train = [x for x in cc if x.day in train_days]
    test = [x for x in cc if x.day in test_days]
    out = m.outputs["score_dir"]

    weights = metrics.compute_class_weights([x.cc for x in train])
    write_json(out / "weights.json", weights.to_dict())
    dist = baseline.fit_historic(train)
    preds = {}
    cc_preds = []
    for x in test:
        logits = tuple(float(v) for v in baseline.predict_historic(dist, (x.u, x.v), x.t))
        preds[(x.u, x.v, x.day, x.t)] = logits
        cc_preds.append(CcPrediction(x.u, x.v, x.t, logits, x.day))
    save_cc_predictions(cc_preds, out / "predictions_cc.jsonl")
    report = metrics.score_cc(m.city, test, preds, weights)
    cc_report = report.to_dict()
    cc_report["overall"] = metrics.overall_score([report.loss], allow_any_count=m.allow_partial_cities)
    write_json(out / "score_cc.json", cc_report)

    summary = {"train_days": train_days, "test_days": test_days, "cc_loss": round(report.loss, 9),
               "coverage": round(report.coverage, 6)}
    eta_train = [x for x in eta if x.day in train_days]
    eta_test = [x for x in eta if x.day in test_days]
    if eta_test:
        hist = baseline.fit_eta_historic(eta_train)
        eta_preds = [EtaPrediction(x.ssid, x.t, hist.predict(x.ssid, x.t), x.day) for x in eta_test]
        save_eta_predictions(eta_preds, out / "predictions_eta.jsonl")
        l1 = metrics.l1_eta({(p.ssid, p.day, p.t): p.eta_s for p in eta_preds},
                            {(x.ssid, x.day, x.t): x.eta_s for x in eta_test})
        write_json(out / "score_eta.json", {"city": m.city, "l1": l1, "n": len(eta_test),
                                            "overall": metrics.overall_score([l1], m.allow_partial_cities)})
        summary["eta_l1"] = round(l1, 9)

    comparison = baseline.compare_to_historic(preds, dist, weights)
    comparison.write_csv(out / "historic_comparison.csv")
    dist_report = baseline.label_distribution_report({m.city: test})
    dist_report.write_csv(out / "coverage_histogram.csv")
    write_json(out / "analysis.json", {"historic_comparison": comparison.to_dict(),
                                       "label_distribution": dist_report.to_dict()})
    return summary


def run_pipeline(m: PipelineManifest) -> RunResult:
    """Run the enabled stages in order, writing a summary (and timings separately).

    Stage inputs chain through enabled stages: a disabled stage passes its
    own input graph through unchanged.
    """
    m.validate()
    m.out_dir.mkdir(parents=True, exist_ok=True)
    summary: dict[str, Any] = {
        "city": m.city, "seed": m.seed, "thresholds": m.thresholds, "search": m.search.to_dict(),
        "stages": [], "status": "ok",
    }
    timings: dict[str, float] = {}
    graph_dir = m.inputs["raw_graph_dir"]
    ss_path = None
    for stage in STAGES:
        if not m.stages[stage]:
            summary["stages"].append({"name": stage, "status": "skipped"})
            continue
        t0 = time.perf_counter()
        try:
            if stage == "attach":
                graph_dir, counts = _stage_attach(m, graph_dir)
            elif stage == "clean":
                graph_dir, counts = _stage_clean(m, graph_dir)
            elif stage == "sample":
                ss_path, counts = _stage_sample(m, graph_dir)
            elif stage == "label":
                counts = _stage_label(m, graph_dir, ss_path)
            else:
                counts = _stage_score(m)
        except Exception as exc:  # noqa: BLE001 - reported with the failing stage
            logger.error("stage %s failed: %s", stage, exc)
            summary["stages"].append({"name": stage, "status": "failed", "error": str(exc)})
            summary["status"] = "failed"
            summary["failed_stage"] = stage
            summary["partial_outputs"] = True
            write_json(m.outputs["summary"], summary)
            raise StageError(stage, exc) from exc
        timings[stage] = time.perf_counter() - t0
        summary["stages"].append({"name": stage, "status": "completed", "counts": counts})
        logger.info("stage %s done in %.2fs", stage, timings[stage])
    write_json(m.outputs["summary"], summary)
    write_json(m.outputs["timings"], {k: round(v, 4) for k, v in timings.items()})
    return RunResult(summary, timings)
