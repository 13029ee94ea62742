"""`t4ckit` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import attach as attach_mod
from . import baseline, cleaning, labels, metrics, supersegments, synth
from .jsonl import SchemaError, read_json, write_json, write_jsonl
from .model import (
    CcPrediction,
    load_cc_labels,
    load_cc_predictions,
    load_detectors,
    load_eta_labels,
    load_eta_predictions,
    load_free_flow,
    load_graph,
    load_speed_stats,
    load_supersegments,
    save_cc_labels,
    save_cc_predictions,
    save_eta_labels,
    save_graph,
    save_node_counts,
    save_supersegments,
    validate_prediction,
)
from .pipeline import ManifestError, PipelineManifest, StageError, run_pipeline

EXIT_OK, EXIT_STAGE, EXIT_VALIDATION = 0, 1, 2

log = logging.getLogger("t4ckit")


def _heatmap(path):
    return cleaning.VolumeHeatmap.load(path) if path else None


def cmd_attach(a) -> int:
    res = attach_mod.attach_detectors(load_graph(a.graph), load_detectors(a.detectors), a.node_snap_m, a.edge_snap_m)
    out = Path(a.out)
    save_graph(res.graph, out)
    save_node_counts(res.node_counts.values(), out / "node_counts.jsonl")
    write_jsonl(out / "attachment_report.jsonl", res.report_records())
    print(f"attached {len(res.mapping)} detectors, discarded {len(res.discarded)}")
    return EXIT_OK


def cmd_clean(a) -> int:
    graph = load_graph(a.graph)
    cfg = cleaning.CleanConfig(a.low_volume, a.min_prune_length_m, a.self_loop_min_m)
    cleaned, report = cleaning.clean_pipeline(graph, _heatmap(a.heatmap), cfg)
    save_graph(cleaned, a.out)
    write_json(Path(a.out) / "clean_report.json", report.to_dict())
    print(f"nodes {len(graph.nodes)} -> {len(cleaned.nodes)}, edges {len(graph.edges)} -> {len(cleaned.edges)}")
    return EXIT_OK


def cmd_sample(a) -> int:
    graph = load_graph(a.graph)
    cfg = supersegments.SearchConfig.from_dict(read_json(a.config)) if a.config else supersegments.SearchConfig()
    wl_nodes = [int(x) for x in a.whitelist_nodes.split(",")] if a.whitelist_nodes else []
    keys = supersegments.select_key_intersections(graph, _heatmap(a.heatmap), wl_nodes, a.n_keys)
    wl = load_supersegments(a.whitelist) if a.whitelist else []
    sss = supersegments.sample_supersegments(graph, keys, cfg, wl)
    save_supersegments(sss, a.out)
    print(f"{len(keys.node_ids)} key intersections, {len(sss)} super-segments")
    return EXIT_OK


def cmd_label(a) -> int:
    graph = load_graph(a.graph)
    sss = load_supersegments(a.supersegments) if a.supersegments else []
    stats = load_speed_stats(a.stats)
    ff = load_free_flow(a.free_flow)
    days = [a.day] if a.day else (sorted({s.day for s in stats if s.day is not None}) or [None])
    cc_all, eta_all = [], []
    for day in days:
        cc, eta = labels.label_city(graph, sss, stats, ff, day)
        cc_all += cc
        eta_all += eta
    out = Path(a.out)
    save_cc_labels(cc_all, out / "cc_labels.jsonl")
    save_eta_labels(eta_all, out / "eta_labels.jsonl")
    print(f"{len(cc_all)} cc labels (coverage {metrics.city_coverage(cc_all):.4f}), {len(eta_all)} eta labels")
    return EXIT_OK


def cmd_score_cc(a) -> int:
    lab = load_cc_labels(a.labels)
    preds = load_cc_predictions(a.predictions)
    edges = sorted({(x.u, x.v) for x in lab})
    rep = validate_prediction(preds, edges, days=sorted({x.day for x in lab}, key=lambda d: d or ""))
    if not rep.ok:
        print(f"invalid predictions: {rep.to_dict()}", file=sys.stderr)
        return EXIT_VALIDATION
    weights = metrics.ClassWeights.from_dict(read_json(a.weights))
    report = metrics.score_cc(a.city, lab, {(p.u, p.v, p.day, p.t): p.logits for p in preds}, weights)
    d = report.to_dict()
    _emit(d, a.out)
    return EXIT_OK


def cmd_score_eta(a) -> int:
    lab = load_eta_labels(a.labels)
    preds = load_eta_predictions(a.predictions)
    ss_ids = sorted({x.ssid for x in lab})
    rep = validate_prediction(preds, ss_ids, days=sorted({x.day for x in lab}, key=lambda d: d or ""))
    if not rep.ok:
        print(f"invalid predictions: {rep.to_dict()}", file=sys.stderr)
        return EXIT_VALIDATION
    l1 = metrics.l1_eta({(p.ssid, p.day, p.t): p.eta_s for p in preds}, {(x.ssid, x.day, x.t): x.eta_s for x in lab})
    _emit({"city": a.city, "l1": l1, "n": len(lab)}, a.out)
    return EXIT_OK


def cmd_weights(a) -> int:
    w = metrics.compute_class_weights([x.cc for x in load_cc_labels(a.labels)])
    _emit(w.to_dict(), a.out)
    return EXIT_OK


def cmd_baseline_fit(a) -> int:
    dist = baseline.fit_historic(load_cc_labels(a.labels), a.alpha)
    edges = sorted(dist.counts)
    np.savez(a.out, edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
             counts=np.stack([dist.counts[e] for e in edges]) if edges else np.zeros((0, baseline.HOURS, 3)),
             alpha=dist.alpha)
    print(f"fitted {len(edges)} edges")
    return EXIT_OK


def _load_dist(path) -> baseline.HistoricDistribution:
    with np.load(path) as data:
        counts = {(int(u), int(v)): np.asarray(c, dtype=np.int64) for (u, v), c in zip(data["edges"], data["counts"])}
        return baseline.HistoricDistribution(counts, float(data["alpha"]))


def cmd_baseline_predict(a) -> int:
    dist = _load_dist(a.model)
    lab = load_cc_labels(a.labels)
    preds = [CcPrediction(x.u, x.v, x.t, tuple(float(v) for v in baseline.predict_historic(dist, (x.u, x.v), x.t)),
                          x.day) for x in lab]
    save_cc_predictions(preds, a.out)
    print(f"wrote {len(preds)} predictions")
    return EXIT_OK


def cmd_analyze_reweight(a) -> int:
    preds = load_cc_predictions(a.predictions)
    weights = metrics.ClassWeights.from_dict(read_json(a.weights))
    rw = baseline.reweight_logits([p.logits for p in preds], weights) if preds else None
    write_jsonl(a.out, (
        {"u": p.u, "v": p.v, "day": p.day, "t": p.t, "p": [float(x) for x in rw.p[i]], "log_b": float(rw.log_b[i])}
        for i, p in enumerate(preds)
    ))
    return EXIT_OK


def cmd_analyze_compare(a) -> int:
    preds = load_cc_predictions(a.predictions)
    dist = _load_dist(a.model)
    weights = metrics.ClassWeights.from_dict(read_json(a.weights)) if a.weights else None
    cmp = baseline.compare_to_historic({(p.u, p.v, p.day, p.t): p.logits for p in preds}, dist, weights,
                                       (a.hour_from, a.hour_to))
    cmp.write_csv(a.csv)
    _emit(cmp.to_dict(), a.out)
    return EXIT_OK


def cmd_analyze_distribution(a) -> int:
    by_city = {}
    for spec in a.labels:
        city, _, path = spec.partition("=")
        if not path:
            city, path = Path(spec).stem, spec
        by_city[city] = load_cc_labels(path)
    rep = baseline.label_distribution_report(by_city, a.bin_width)
    rep.write_csv(a.csv)
    _emit(rep.to_dict(), a.out)
    return EXIT_OK


def cmd_synth(a) -> int:
    spec = synth.SyntheticCitySpec.from_dict(read_json(a.spec)) if a.spec else synth.SyntheticCitySpec()
    city = synth.generate_synthetic_city(spec, a.seed)
    paths = city.write(a.out)
    manifest = {
        "city": spec.name,
        "seed": a.seed,
        "paths": {**paths, "out_dir": "run"},
        "train_days": spec.days[: max(1, spec.n_days - max(1, spec.n_days * 3 // 10))] if spec.n_days > 1 else None,
    }
    if manifest["train_days"] is None:
        del manifest["train_days"]
    write_json(Path(a.out) / "manifest.json", manifest)
    print(f"synthetic city {spec.name!r} written to {a.out}")
    return EXIT_OK


def cmd_run(a) -> int:
    manifest = PipelineManifest.load(a.manifest)
    result = run_pipeline(manifest)
    for st in result.summary["stages"]:
        print(f"{st['name']}: {st['status']}")
    return EXIT_OK


def _emit(obj, out) -> None:
    if out:
        write_json(out, obj)
    else:
        import json

        print(json.dumps(obj, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="t4ckit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("attach", help="snap detectors onto the road graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--detectors", required=True)
    s.add_argument("--out", required=True, help="output graph directory")
    s.add_argument("--node-snap-m", type=float, default=attach_mod.NODE_SNAP_M)
    s.add_argument("--edge-snap-m", type=float, default=attach_mod.EDGE_SNAP_M)
    s.set_defaults(func=cmd_attach)

    s = sub.add_parser("clean", help="run the graph cleaning pipeline")
    s.add_argument("--graph", required=True)
    s.add_argument("--heatmap")
    s.add_argument("--out", required=True)
    s.add_argument("--low-volume", type=float, default=cleaning.LOW_VOLUME_THRESHOLD)
    s.add_argument("--min-prune-length-m", type=float, default=cleaning.MIN_PRUNE_LENGTH_M)
    s.add_argument("--self-loop-min-m", type=float, default=cleaning.SELF_LOOP_MIN_M)
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("sample-supersegments", help="pick key intersections and route super-segments")
    s.add_argument("--graph", required=True)
    s.add_argument("--heatmap")
    s.add_argument("--config", help="SearchConfig JSON")
    s.add_argument("--n-keys", type=int, default=supersegments.N_KEY_INTERSECTIONS)
    s.add_argument("--whitelist-nodes", help="comma separated node ids")
    s.add_argument("--whitelist", help="super-segment JSONL appended to the sample")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("label", help="derive CC and ETA labels")
    s.add_argument("--graph", required=True)
    s.add_argument("--supersegments")
    s.add_argument("--stats", required=True)
    s.add_argument("--free-flow", required=True)
    s.add_argument("--day")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_label)

    for name, fn, help_ in (("score-cc", cmd_score_cc, "weighted masked cross-entropy"),
                            ("score-eta", cmd_score_eta, "ETA L1 loss")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--labels", required=True)
        s.add_argument("--predictions", required=True)
        if name == "score-cc":
            s.add_argument("--weights", required=True)
        s.add_argument("--city", default="city")
        s.add_argument("--out")
        s.set_defaults(func=fn)

    s = sub.add_parser("weights", help="class weights")
    wsub = s.add_subparsers(dest="action", required=True)
    w = wsub.add_parser("compute")
    w.add_argument("--labels", required=True)
    w.add_argument("--out")
    w.set_defaults(func=cmd_weights)

    s = sub.add_parser("baseline", help="historic-distribution baseline")
    bsub = s.add_subparsers(dest="action", required=True)
    b = bsub.add_parser("fit")
    b.add_argument("--labels", required=True)
    b.add_argument("--alpha", type=float, default=baseline.SMOOTHING)
    b.add_argument("--out", required=True, help=".npz model path")
    b.set_defaults(func=cmd_baseline_fit)
    b = bsub.add_parser("predict")
    b.add_argument("--model", required=True)
    b.add_argument("--labels", required=True, help="labels whose keys are predicted")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline_predict)

    s = sub.add_parser("analyze", help="analysis reports")
    asub = s.add_subparsers(dest="action", required=True)
    r = asub.add_parser("reweight")
    r.add_argument("--predictions", required=True)
    r.add_argument("--weights", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_analyze_reweight)
    r = asub.add_parser("compare")
    r.add_argument("--predictions", required=True)
    r.add_argument("--model", required=True)
    r.add_argument("--weights")
    r.add_argument("--hour-from", type=int, default=14)
    r.add_argument("--hour-to", type=int, default=18)
    r.add_argument("--csv", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_analyze_compare)
    r = asub.add_parser("distribution")
    r.add_argument("--labels", required=True, nargs="+", help="CITY=path or path")
    r.add_argument("--bin-width", type=float, default=0.05)
    r.add_argument("--csv", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_analyze_distribution)

    s = sub.add_parser("synth", help="generate a synthetic city and a manifest for it")
    s.add_argument("--spec", help="SyntheticCitySpec JSON")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="run the manifest-driven pipeline")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ManifestError, SchemaError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
