"""Command-line entry points: build, query, eval, serve, fixture."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .classify import read_label_file, write_label_file
from .errors import Ov4dError
from .metrics import confusion, metrics
from .pipeline import PipelineConfig, build_asset, load_asset, query


def _cmd_build(args) -> int:
    config = PipelineConfig.load(args.config)
    asset = build_asset(args.manifest, config, out_path=args.out)
    for stage in ("render", "tracking", "validation", "embedding", "fusion", "assembly", "save"):
        if stage in asset.timings:
            print(f"{stage:<12} {asset.timings[stage] * 1000.0:9.1f} ms")
    print(f"{'total':<12} {asset.timings['total'] * 1000.0:9.1f} ms")
    print(f"frames       {asset.num_frames}")
    print(f"proposals    {[f.num_proposals for f in asset.frames]}")
    print(f"content hash {asset.content_hash}")
    print(f"wrote {args.out}")
    return 0


def _split_prompts(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def _cmd_query(args) -> int:
    asset = load_asset(args.asset)
    prompts = _split_prompts(args.prompts)
    fields, query_ms = query(asset, prompts, tau=args.tau)
    write_label_file(args.out, fields, prompts)
    print(f"query took {query_ms:.2f} ms over {len(fields)} frames")
    for lf in fields:
        counts = np.bincount(lf.labels, minlength=len(prompts) + 1)
        print(f"frame {lf.frame_index}: label counts {counts.tolist()}")
    print(f"wrote {args.out} (+ sidecar {args.out}.json)")
    return 0


def _remap_gt(gt_frames, gt_sidecar, pred_sidecar):
    """Re-express ground-truth labels in the prediction's class index space."""
    gt_classes = gt_sidecar["classes"]
    pred_classes = pred_sidecar["classes"]
    if gt_classes == pred_classes:
        return gt_frames
    lookup = {}
    for gi, name in enumerate(gt_classes):
        if name not in pred_classes:
            raise Ov4dError(
                f"ground-truth class {name!r} missing from predicted classes "
                f"{pred_classes}; cannot align label spaces"
            )
        lookup[gi] = pred_classes.index(name)
    lookup[gt_sidecar["no_label_index"]] = pred_sidecar["no_label_index"]
    table = np.full(max(lookup) + 1, -1, dtype=np.int64)
    for src, dst in lookup.items():
        table[src] = dst
    return [table[f.astype(np.int64)] for f in gt_frames]


def _cmd_eval(args) -> int:
    pred_frames, pred_sidecar = read_label_file(args.pred)
    gt_frames, gt_sidecar = read_label_file(args.gt)
    if len(pred_frames) != len(gt_frames):
        raise Ov4dError(
            f"{len(pred_frames)} predicted frames vs {len(gt_frames)} ground-truth frames"
        )
    gt_frames = _remap_gt(gt_frames, gt_sidecar, pred_sidecar)
    k = len(pred_sidecar["classes"])

    print(f"{'frame':<8}{'OA':>9}{'mAcc':>9}{'mIoU':>9}")
    per_frame = []
    pooled = None
    for t, (pf, gf) in enumerate(zip(pred_frames, gt_frames)):
        cm = confusion(pf, gf, k)
        result = metrics(cm)
        per_frame.append(result)
        # Confusion matrices may differ in size (K vs K+1) across frames;
        # pool in the widest space.
        wide = np.zeros((k + 1, k + 1), dtype=np.int64)
        wide[: cm.shape[0], : cm.shape[1]] += cm
        pooled = wide if pooled is None else pooled + wide
        print(
            f"{t:<8}{result.overall_accuracy:>9.4f}"
            f"{result.mean_class_accuracy:>9.4f}{result.mean_iou:>9.4f}"
        )
    pooled_result = metrics(pooled)
    avg = (
        float(np.mean([r.overall_accuracy for r in per_frame])),
        float(np.mean([r.mean_class_accuracy for r in per_frame])),
        float(np.mean([r.mean_iou for r in per_frame])),
    )
    print(
        f"{'pooled':<8}{pooled_result.overall_accuracy:>9.4f}"
        f"{pooled_result.mean_class_accuracy:>9.4f}{pooled_result.mean_iou:>9.4f}"
    )
    print(f"{'avg':<8}{avg[0]:>9.4f}{avg[1]:>9.4f}{avg[2]:>9.4f}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise Ov4dError(f"--bind expects HOST:PORT, got {args.bind!r}")
    serve(args.asset, host=host, port=int(port), static_dir=args.static)
    return 0


def _cmd_fixture(args) -> int:
    from .fixtures import generate_scenario

    try:
        meta = generate_scenario(args.scenario, args.out)
    except KeyError as exc:
        raise Ov4dError(exc.args[0]) from exc
    print(
        f"scenario {meta['scenario']}: {meta['num_frames']} frames x "
        f"{meta['num_views']} views, parts {meta['part_names']}"
    )
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ov4d",
        description="Open-vocabulary 4D point-cloud segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="precompute a fused asset from a scene manifest")
    p.add_argument("--manifest", required=True, help="scene manifest JSON")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", required=True, help="output fused asset path")
    p.set_defaults(fn=_cmd_build)

    p = sub.add_parser("query", help="label points for text prompts")
    p.add_argument("--asset", required=True, help="fused asset path")
    p.add_argument("--prompts", required=True, help='comma-separated, e.g. "part_a,part_b"')
    p.add_argument("--tau", type=float, default=None, help="no-label threshold")
    p.add_argument("--out", required=True, help="output label file path")
    p.set_defaults(fn=_cmd_query)

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("--pred", required=True, help="predicted label file")
    p.add_argument("--gt", required=True, help="ground-truth label file")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("serve", help="serve a fused asset over HTTP")
    p.add_argument("--asset", required=True, help="fused asset path")
    p.add_argument("--bind", default="127.0.0.1:8787", help="HOST:PORT")
    p.add_argument("--static", default=None, help="optional static frontend directory")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("fixture", help="generate a synthetic scenario directory")
    p.add_argument(
        "--scenario",
        required=True,
        help="scenario name (see ov4d.fixtures.SCENARIO_NAMES)",
    )
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_fixture)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Ov4dError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
