"""Command line entry point: ``trpkit <command> ...``.

Exit codes: 0 success, 1 validation failures, 2 usage or IO errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import aggregation, corpus, matching, metrics
from .errors import SchemaError, TrpError
from .geometry import BinaryMask, Box, Rle, rle_decode

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("trpkit")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, ensure_ascii=False)
    sys.stdout.write("\n")


def _read(path):
    return corpus._read_json(path)


def _region(obj, unit: str):
    if unit == "box":
        return Box.from_seq(obj)
    if isinstance(obj, dict):
        return rle_decode(Rle.from_json(obj))
    return BinaryMask(np.asarray(obj))


# -- subcommands -----------------------------------------------------------------

def cmd_validate(args) -> int:
    report = corpus.validate_corpus(args.corpus, strict=args.strict)
    _emit(report.to_json())
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_build(args) -> int:
    annotations = corpus.load_annotations(args.annotations)
    bank = corpus.TemplateBank.load(args.templates)
    samples = corpus.build_samples(annotations, args.task, bank, args.seed)
    Path(args.out).write_text(corpus.dump_corpus(samples, bank), encoding="utf-8")
    log.info("wrote %d samples to %s", len(samples), args.out)
    return EXIT_OK


def cmd_stats(args) -> int:
    _emit(corpus.stats(args.corpus))
    return EXIT_OK


def _groups(doc, path) -> list:
    groups = doc.get("groups") if isinstance(doc, dict) else doc
    if not isinstance(groups, list):
        raise SchemaError(f'{path}: expected {{"groups": [[region, ...], ...]}}')
    return groups


def cmd_match(args) -> int:
    preds = _groups(_read(args.preds), args.preds)
    targets = _groups(_read(args.targets), args.targets)
    if len(preds) != len(targets):
        raise SchemaError(f"{len(preds)} prediction groups vs {len(targets)} target groups")
    d = matching.CostWeights()
    w = matching.CostWeights(
        d.lambda_l1 if args.l1 is None else args.l1,
        d.lambda_giou if args.giou is None else args.giou,
        d.lambda_mask if args.mask is None else args.mask,
        d.lambda_dice if args.dice is None else args.dice,
    )
    if args.unit == "box":
        groups = [([_region(p, "box") for p in ps], [_region(t, "box") for t in ts])
                  for ps, ts in zip(preds, targets)]
    else:
        # mask predictions are probability grids; targets are RLE objects or 0/1 grids
        groups = [([np.asarray(p, dtype=float) for p in ps], [_region(t, "mask") for t in ts])
                  for ps, ts in zip(preds, targets)]
    tensor = matching.build_cost_tensor(groups, w)
    result = matching.group_match_parallel(tensor)
    _emit({
        "unit": args.unit,
        "weights": vars(w),
        "groups": [a.to_json() for a in result],
        "total_cost": sum(a.total_cost for a in result),
    })
    return EXIT_OK


def _detections(doc, path) -> list[dict]:
    dets = doc.get("detections") if isinstance(doc, dict) else None
    if not isinstance(dets, list):
        raise SchemaError(f'{path}: expected {{"detections": [...]}}')
    return dets


def _det_region(d: dict):
    if "box" in d:
        return Box.from_seq(d["box"])
    return _region(d["mask"], "mask")


def _gt_by_class(doc, path) -> tuple[list[str], dict[int, list]]:
    if not isinstance(doc, dict) or not isinstance(doc.get("annotations"), list):
        raise SchemaError(f'{path}: expected {{"classes": [...], "annotations": [...]}}')
    classes = list(doc.get("classes", []))
    gts: dict[int, list] = {i: [] for i in range(len(classes))}
    for a in doc["annotations"]:
        gts.setdefault(int(a["class"]), []).append((a.get("image_id"), _det_region(a)))
    return classes, gts


def cmd_eval(args) -> int:
    preds, targets = _read(args.preds), _read(args.targets)
    out: dict = {"metric": args.metric}
    if args.metric == "iou50":
        p = [Box.from_seq(b) for b in preds["boxes"]]
        g = [Box.from_seq(b) for b in targets["boxes"]]
        out["value"] = metrics.rec_accuracy(p, g)
    elif args.metric in ("ciou", "miou"):
        p = [_region(m, "mask") for m in preds["masks"]]
        g = [_region(m, "mask") for m in targets["masks"]]
        if len(p) != len(g):
            raise SchemaError(f"{len(p)} predicted masks vs {len(g)} ground-truth masks")
        fn = metrics.ciou if args.metric == "ciou" else metrics.miou
        out["value"] = fn(list(zip(p, g)))
    elif args.metric == "ap50":
        _, gts = _gt_by_class(targets, args.targets)
        dets = [metrics.ScoredDetection(d.get("phrase", ""), _det_region(d), float(d["score"]),
                                        int(d["class"]), d.get("image_id"))
                for d in _detections(preds, args.preds)]
        out["value"] = metrics.ap_at_iou(dets, gts, 0.5)
    else:
        classes, gts = _gt_by_class(targets, args.targets)
        if args.embeddings:
            ep = metrics.TableEmbeddingProvider.from_file(args.embeddings)
        else:
            ep = metrics.HashedNgramEmbedder()
        predictions = [(d["phrase"], _det_region(d), d.get("image_id"))
                       for d in _detections(preds, args.preds)]
        report = metrics.map_s_report(predictions, classes, gts, ep)
        out["value"] = report["map_s"]
        out["ap50"] = report["ap50"]
    _emit(out)
    return EXIT_OK


def cmd_aggregate_demo(args) -> int:
    feats = _read(args.features)
    prompt = _read(args.prompt)
    x = aggregation.FeatureGrid(np.asarray(feats["features"] if isinstance(feats, dict) else feats))
    _, n, h, w = x.data.shape
    layout = (aggregation.GridLayout(*prompt["layout"]) if "layout" in prompt
              else aggregation.GridLayout.from_nhw(n, h, w))
    kind = prompt["kind"]
    payload = prompt["payload"]
    if kind == "box":
        payload = Box.from_seq(payload)
    elif kind == "mask":
        payload = _region(payload, "mask")
    elif kind == "point":
        payload = tuple(payload)
    else:
        payload = [tuple(v) for v in payload]
    vp = aggregation.VisualPrompt(kind, payload)
    m = aggregation.prompt_to_mask(vp, layout, int(prompt.get("queries", 1)))
    cfg = aggregation.PeConfig(float(prompt.get("temperature", 10000.0)),
                               float(prompt.get("alpha", 1.0)))
    v = aggregation.aggregate(x, m)
    _emit({"shape": list(v.shape), "V": v.tolist(), "fused": aggregation.fuse(v, cfg).tolist()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trpkit", description="Command line tools for triplet-structured answers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check every sample of a corpus file")
    p.add_argument("corpus")
    p.add_argument("--strict", action="store_true", help="also reject unknown task names")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("build", help="build a corpus from raw annotations")
    p.add_argument("annotations")
    p.add_argument("--task", required=True, choices=sorted(corpus.TASKS))
    p.add_argument("--templates", required=True)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("match", help="grouped Hungarian matching of predictions to targets")
    p.add_argument("preds")
    p.add_argument("targets")
    p.add_argument("--unit", required=True, choices=["box", "mask"])
    p.add_argument("--l1", type=float)
    p.add_argument("--giou", type=float)
    p.add_argument("--mask", type=float)
    p.add_argument("--dice", type=float)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="region-level metrics")
    p.add_argument("preds")
    p.add_argument("targets")
    p.add_argument("--metric", required=True, choices=["iou50", "ciou", "miou", "ap50", "maps"])
    p.add_argument("--embeddings", help="JSON embedding table for maps")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("aggregate-demo", help="dump aggregated and fused prompt features")
    p.add_argument("features")
    p.add_argument("prompt")
    p.set_defaults(func=cmd_aggregate_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrpError, KeyError, TypeError, ValueError, OSError) as exc:
        # KeyError/TypeError surface from malformed input documents
        print(f"trpkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
