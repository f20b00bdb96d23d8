"""Command-line interface: solve, synth, eval, render.

Exit codes: 0 success, 2 input error, 3 degenerate scene, 4 internal
invariant failure. Every command is deterministic given its inputs and seed;
the run manifest records the resolved configuration and a hash of it.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import formats, report
from .errors import (
    BudgetExceededError,
    DegenerateContourError,
    EmptyMaskError,
    EmptySceneError,
    InputError,
    InternalInvariantError,
    InvalidPolygonError,
    RoomfitError,
)
from .metrics import evaluate
from .objective import Weights, density_coverage_scorer, oracle_iou_scorer
from .proposals import DEFAULT_SIMPLIFICATION_SET, build_proposal_set
from .scene import (
    GroundTruthPlan,
    SyntheticSceneSpec,
    generate_synthetic_scene,
    load_plan,
    load_scene,
    load_segments,
    save_plan,
    save_scene,
)
from .search import SearchConfig, run_search

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3
EXIT_INTERNAL = 4

# Keys accepted in a config file; CLI flags use the same names with dashes.
CONFIG_KEYS = {
    "scorer", "iterations", "seed", "refine_steps", "final_refine_steps",
    "refine_lr", "ucb_c", "merge_threshold", "lambda_f", "lambda_ang",
    "lambda_glob", "lambda_0", "emit", "coverage_threshold",
}


def parse_config_file(path: Path) -> dict:
    """Flat key = value config (TOML-compatible subset): strings in double
    quotes, ints, floats, true/false, full-line or trailing # comments."""
    out: dict = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value.startswith('"'):
            if not value.endswith('"') or len(value) < 2:
                raise InputError(f"{path}:{lineno}: unterminated string")
            parsed: object = value[1:-1]
        else:
            value = value.split("#", 1)[0].strip()
            if value in ("true", "false"):
                parsed = value == "true"
            else:
                try:
                    parsed = int(value)
                except ValueError:
                    try:
                        parsed = float(value)
                    except ValueError:
                        raise InputError(f"{path}:{lineno}: cannot parse value {value!r}")
        if key not in CONFIG_KEYS:
            raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = parsed
    return out


def _config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, config: dict, extra: dict) -> None:
    doc = {
        "schema_version": formats.SCHEMA_VERSION,
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        **extra,
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _emit_set(arg: str) -> set[str]:
    return {e.strip() for e in arg.split(",") if e.strip()}


def cmd_solve(args: argparse.Namespace) -> int:
    file_cfg = parse_config_file(args.config) if args.config else {}

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    density, segments, gt = load_scene(Path(args.scene))
    if args.segments:
        seg_path = Path(args.segments)
        if not seg_path.exists():
            raise InputError(f"segments file not found: {seg_path}")
        if seg_path.is_dir():
            segments = load_segments(seg_path, density.grid.shape)
        else:
            segments = _load_segfile(seg_path, density)
    if args.gt:
        gt = load_plan(Path(args.gt))

    scorer_name = pick(args.scorer, "scorer", "oracle")
    if scorer_name == "oracle":
        if gt is None:
            raise InputError("oracle scorer needs ground truth (plan.json or --gt)")
        scorer = oracle_iou_scorer(gt, density.grid.shape)
    elif scorer_name == "density-coverage":
        scorer = density_coverage_scorer(float(pick(None, "coverage_threshold", 0.05)))
    else:
        raise InputError(f"unknown scorer {scorer_name!r}")

    weights = Weights(
        lambda_f=float(pick(args.lambda_f, "lambda_f", 1.0)),
        lambda_ang=float(pick(args.lambda_ang, "lambda_ang", 0.05)),
        lambda_glob=float(pick(args.lambda_glob, "lambda_glob", 1e-4)),
        lambda_0=float(pick(args.lambda_0, "lambda_0", 0.5)),
    )
    config = SearchConfig(
        iterations=int(pick(args.iterations, "iterations", 500)),
        ucb_c=float(pick(args.ucb_c, "ucb_c", 1.0)),
        refine_steps=int(pick(args.refine_steps, "refine_steps", 30)),
        refine_lr=float(pick(args.refine_lr, "refine_lr", 0.3)),
        final_refine_steps=int(pick(args.final_refine_steps, "final_refine_steps", 200)),
        merge_threshold=float(pick(args.merge_threshold, "merge_threshold", 5.0)),
        seed=int(pick(args.seed, "seed", 0)),
    )
    emit = _emit_set(pick(args.emit, "emit", "svg,json,png"))

    pset = build_proposal_set(segments, DEFAULT_SIMPLIFICATION_SET)
    t0 = time.perf_counter()
    result = run_search(pset, density, weights, scorer, config)
    wall = time.perf_counter() - t0

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_plan(out_dir / "plan.json", list(result.solution.polygons))

    resolved = {
        "scene": str(args.scene),
        "scorer": scorer_name,
        "weights": {
            "lambda_f": weights.lambda_f, "lambda_ang": weights.lambda_ang,
            "lambda_glob": weights.lambda_glob, "lambda_0": weights.lambda_0,
        },
        "search": {
            "iterations": config.iterations, "ucb_c": config.ucb_c,
            "refine_steps": config.refine_steps, "refine_lr": config.refine_lr,
            "final_refine_steps": config.final_refine_steps,
            "merge_threshold": config.merge_threshold, "seed": config.seed,
        },
        "emit": sorted(emit),
    }
    scorer_frozen = not scorer.differentiable and weights.lambda_f > 0
    _write_manifest(out_dir, "solve", resolved, {
        "score": result.score,
        "iterations_run": result.iterations_run,
        "distinct_leaves": result.distinct_leaves,
        "reverted_segments": list(result.solution.reverted),
        "scorer_frozen": scorer_frozen,
        "wall_time_s": wall,
        "best_score_trace": list(result.best_score_trace),
    })

    rooms = list(result.solution.polygons)
    gt_rooms = list(gt.rooms) if gt is not None else None
    if "svg" in emit:
        (out_dir / "overlay.svg").write_text(
            report.svg_overlay(rooms, density.grid, gt_rooms) + "\n"
        )
    if "png" in emit:
        report.save_solution_figure(
            out_dir / "solution.png", density.grid, rooms, gt_rooms,
            list(result.best_score_trace), title=f"score {result.score:.4f}",
        )
    if "pgm" in emit:
        from .raster import compose_indexed

        formats.write_pgm8(out_dir / "labels.pgm", compose_indexed(rooms, density.grid.shape))
    if "trace" in emit:
        lines = ["iteration,best_score"]
        lines += [f"{i},{s:.9f}" for i, s in enumerate(result.best_score_trace)]
        (out_dir / "trace.csv").write_text("\n".join(lines) + "\n")
    if gt is not None:
        rep = evaluate(gt, rooms, density.grid.shape)
        formats.dump_json(out_dir / "metrics.json", {
            "schema_version": formats.SCHEMA_VERSION, **rep.as_dict(),
        })
        print(report.metrics_table({"solve": rep}), end="")
    print(f"solved: score={result.score:.4f} rooms={len(rooms)} "
          f"leaves={result.distinct_leaves} wall={wall:.1f}s -> {out_dir}")
    return EXIT_OK


def _load_segfile(path: Path, density) -> list:
    if path.suffix == ".png":
        labels = formats.read_label_png(path)
        from .geometry import SegmentMask
        from .proposals import RoomSegment

        return [
            RoomSegment(mask=SegmentMask(labels == k), detection_score=1.0, id=int(k))
            for k in np.unique(labels) if k > 0
        ]
    doc = formats.read_json_doc(path, required_keys={"height", "width", "segments"})
    from .geometry import SegmentMask
    from .proposals import RoomSegment

    shape = (int(doc["height"]), int(doc["width"]))
    out = []
    for i, entry in enumerate(doc["segments"]):
        mask = formats.rle_to_mask(entry["rle"], shape, path, i)
        out.append(RoomSegment(SegmentMask(mask), float(entry.get("score", 1.0)), int(entry.get("id", i))))
    return out


def _parse_rooms(arg: str) -> tuple[int, int]:
    if "-" in arg:
        lo, _, hi = arg.partition("-")
        return (int(lo), int(hi))
    n = int(arg)
    return (n, n)


def cmd_synth(args: argparse.Namespace) -> int:
    rooms = _parse_rooms(args.rooms)
    base = dict(
        room_count=rooms,
        snap=args.snap,
        jitter_sigma=args.jitter,
        false_positive_prob=args.fp_prob,
        split_prob=args.split_prob,
        non_manhattan_prob=args.non_manhattan_prob,
    )
    out_root = Path(args.out)
    names = []
    for i in range(args.count):
        spec = SyntheticSceneSpec(seed=args.seed + i, **base)
        density, segments, gt = generate_synthetic_scene(spec)
        scene_dir = out_root if args.count == 1 else out_root / f"scene_{i:03d}"
        save_scene(scene_dir, density, segments, gt, segment_format=args.segment_format)
        names.append(scene_dir)
    _write_manifest(out_root if args.count > 1 else names[0], "synth",
                    {**base, "seed": args.seed, "count": args.count,
                     "segment_format": args.segment_format},
                    {"scenes": [str(n) for n in names]})
    print(f"wrote {args.count} scene(s) under {out_root}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    plan_path = Path(args.plan)
    gt_path = Path(args.gt)
    reports = {}
    if plan_path.is_dir() and gt_path.is_dir():
        entries = sorted(p.parent.name for p in plan_path.glob("*/plan.json"))
        if not entries:
            raise InputError(f"no */plan.json under {plan_path}")
        for name in entries:
            gt_file = gt_path / name / "plan.json"
            if not gt_file.exists():
                raise InputError(f"missing ground truth for scene {name}: {gt_file}")
            rec = load_plan(plan_path / name / "plan.json")
            gt = load_plan(gt_file)
            reports[name] = evaluate(gt, list(rec.rooms))
        reports["mean"] = report.mean_report(list(reports.values()))
    else:
        rec = load_plan(plan_path)
        gt = load_plan(gt_path)
        reports[plan_path.stem] = evaluate(gt, list(rec.rooms))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit = _emit_set(args.emit)
    doc = {"schema_version": formats.SCHEMA_VERSION,
           "scenes": {n: r.as_dict() for n, r in reports.items()}}
    if "json" in emit:
        formats.dump_json(out_dir / "metrics.json", doc)
    table = report.metrics_table(reports)
    if "txt" in emit:
        (out_dir / "metrics.txt").write_text(table)
    if "csv" in emit:
        (out_dir / "metrics.csv").write_text(report.metrics_csv(reports))
    if "png" in emit:
        report.save_metrics_figure(
            out_dir / "metrics.png",
            {n: r for n, r in reports.items() if n != "mean"} or reports,
        )
    _write_manifest(out_dir, "eval", {"plan": str(plan_path), "gt": str(gt_path),
                                      "emit": sorted(emit)}, {"scene_count": len(reports)})
    print(table, end="")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    density = None
    gt = None
    if args.scene:
        density, _, gt = load_scene(Path(args.scene))
    rooms: list = []
    if args.plan:
        rooms = list(load_plan(Path(args.plan)).rooms)
    if density is None and not rooms:
        raise InputError("render needs --scene and/or --plan")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit = _emit_set(args.emit)
    if "svg" in emit:
        grid = density.grid if density is not None else None
        (out_dir / "render.svg").write_text(report.svg_overlay(rooms, grid) + "\n")
    if "pgm" in emit and density is not None:
        formats.write_pgm8(out_dir / "density.pgm", density.grid)
    if "png" in emit:
        bg = density.grid if density is not None else np.ones((256, 256))
        report.save_solution_figure(out_dir / "render.png", bg, rooms,
                                    list(gt.rooms) if gt else None)
    _write_manifest(out_dir, "render",
                    {"scene": str(args.scene), "plan": str(args.plan), "emit": sorted(emit)}, {})
    print(f"rendered -> {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roomfit",
        description="Floor-plan reconstruction from density maps and room segments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="select and refine room proposals for a scene")
    p.add_argument("--scene", required=True, help="scene directory (see FORMATS.md)")
    p.add_argument("--segments", help="override segments file (RLE .json or label .png)")
    p.add_argument("--gt", help="override ground-truth plan.json")
    p.add_argument("--scorer", choices=["oracle", "density-coverage"], default=None)
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--refine-steps", type=int, default=None, dest="refine_steps")
    p.add_argument("--final-refine-steps", type=int, default=None, dest="final_refine_steps")
    p.add_argument("--refine-lr", type=float, default=None, dest="refine_lr")
    p.add_argument("--ucb-c", type=float, default=None, dest="ucb_c")
    p.add_argument("--merge-threshold", type=float, default=None, dest="merge_threshold")
    p.add_argument("--lambda-f", type=float, default=None, dest="lambda_f")
    p.add_argument("--lambda-ang", type=float, default=None, dest="lambda_ang")
    p.add_argument("--lambda-glob", type=float, default=None, dest="lambda_glob")
    p.add_argument("--lambda-0", type=float, default=None, dest="lambda_0")
    p.add_argument("--out", required=True)
    p.add_argument("--emit", default=None, help="comma list: svg,json,png,pgm,trace")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--rooms", default="3-6", help="count or inclusive range, e.g. 5 or 3-6")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--fp-prob", type=float, default=0.0, dest="fp_prob")
    p.add_argument("--split-prob", type=float, default=0.0, dest="split_prob")
    p.add_argument("--non-manhattan-prob", type=float, default=0.0, dest="non_manhattan_prob")
    p.add_argument("--snap", type=int, default=4)
    p.add_argument("--segment-format", choices=["rle", "png"], default="rle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a recovered plan against ground truth")
    p.add_argument("--plan", required=True, help="plan.json or a directory of <scene>/plan.json")
    p.add_argument("--gt", required=True, help="plan.json or a directory of <scene>/plan.json")
    p.add_argument("--out", required=True)
    p.add_argument("--emit", default="json,txt,csv,png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a scene and/or plan to SVG/PGM/PNG")
    p.add_argument("--scene")
    p.add_argument("--plan")
    p.add_argument("--out", required=True)
    p.add_argument("--emit", default="svg,png")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EmptySceneError, EmptyMaskError, DegenerateContourError,
            InvalidPolygonError, BudgetExceededError) as exc:
        print(f"degenerate scene: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InternalInvariantError as exc:
        print(f"internal invariant failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except RoomfitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
