"""Command-line entry point.

Subcommands: render, train, predict, eval, filter, stats, chamfer, serve.
Exit codes: 0 success, 1 domain error, 2 usage error. All randomness is
surfaced through --seed flags; flag values take precedence over config
files, which take precedence over defaults.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__

DEFAULT_RES = "224x224"


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        height, width = text.lower().split("x")
        return int(height), int(width)
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 224x224, got {text!r}")


def _parse_timestamp(text: str) -> datetime:
    parsed = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshcurate",
        description="Quality annotation and dataset curation toolkit for 3D mesh assets.",
    )
    parser.add_argument("--version", action="version", version=f"meshcurate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    render = sub.add_parser("render", help="render the multiview stack of a mesh to PNG files")
    render.add_argument("--glb", required=True, type=Path, help="input .glb/.gltf file")
    render.add_argument("--out", required=True, type=Path, help="output directory")
    render.add_argument("--views", type=int, default=40)
    render.add_argument("--seed", type=int, default=0)
    render.add_argument("--res", type=_parse_resolution, default=DEFAULT_RES)
    render.add_argument("--edges", action="store_true", help="overlay wireframe edges")
    render.add_argument("--radius-scale", type=float, default=2.5)
    render.set_defaults(func=cmd_render)

    train = sub.add_parser("train", help="train the annotation network on labeled meshes")
    train.add_argument("--manifest", required=True, type=Path, help="human-labeled manifest")
    train.add_argument("--glb-dir", required=True, type=Path, help="directory of <object_id>.glb files")
    train.add_argument("--out", required=True, type=Path, help="checkpoint output path")
    train.add_argument("--config", type=Path, help="TOML training config (AnnotatorConfig fields)")
    train.add_argument("--stats", type=Path, help="platform stats CSV (object_id,view_count,like_count)")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--optimizer", choices=["sgd", "adam"])
    train.add_argument("--views", type=int, help="views per object (default from config, else 40)")
    train.add_argument("--res", type=_parse_resolution, help="render resolution, e.g. 64x64")
    train.add_argument("--seed", type=int)
    train.add_argument("--fig", type=Path, help="write train/val loss curves to this PNG")
    train.add_argument("--jobs", type=int, default=1, help="parallel render workers")
    train.set_defaults(func=cmd_train)

    predict = sub.add_parser("predict", help="annotate meshes with a trained model")
    predict.add_argument("--model", required=True, type=Path)
    group = predict.add_mutually_exclusive_group(required=True)
    group.add_argument("--glb", type=Path, help="single mesh file")
    group.add_argument("--glb-dir", type=Path, help="directory of meshes")
    predict.add_argument("--stats", type=Path)
    predict.add_argument("--out", type=Path, help="output manifest (default: stdout)")
    predict.add_argument("--seed", type=int, default=0, help="camera seed")
    predict.add_argument("--res", type=_parse_resolution)
    predict.add_argument(
        "--timestamp",
        type=_parse_timestamp,
        help="fixed created_at for reproducible output (default: now)",
    )
    predict.add_argument("--jobs", type=int, default=1)
    predict.set_defaults(func=cmd_predict)

    evaluate = sub.add_parser("eval", help="evaluate a trained model against human labels")
    evaluate.add_argument("--model", required=True, type=Path)
    evaluate.add_argument("--manifest", required=True, type=Path)
    evaluate.add_argument("--glb-dir", required=True, type=Path)
    evaluate.add_argument("--stats", type=Path)
    evaluate.add_argument("--json", type=Path, help="write the report as JSON")
    evaluate.add_argument("--table", type=Path, help="write the metric table as text")
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--res", type=_parse_resolution)
    evaluate.add_argument("--jobs", type=int, default=1)
    evaluate.set_defaults(func=cmd_eval)

    filter_cmd = sub.add_parser("filter", help="filter a manifest by a declarative spec")
    filter_cmd.add_argument("--manifest", required=True, type=Path)
    filter_cmd.add_argument("--spec", required=True, type=Path, help="TOML filter spec")
    filter_cmd.add_argument("--out", required=True, type=Path, help="filtered manifest output")
    filter_cmd.add_argument("--strict", action="store_true", help="abort on malformed lines")
    filter_cmd.add_argument("--summary", type=Path, help="write the distribution table here too")
    filter_cmd.add_argument("--fig", type=Path, help="write a distribution chart of the output")
    filter_cmd.set_defaults(func=cmd_filter)

    stats_cmd = sub.add_parser("stats", help="tag/score distribution of a manifest")
    stats_cmd.add_argument("--manifest", required=True, type=Path)
    stats_cmd.add_argument("--json", type=Path)
    stats_cmd.add_argument("--table", type=Path)
    stats_cmd.add_argument("--fig", type=Path)
    stats_cmd.add_argument("--strict", action="store_true")
    stats_cmd.set_defaults(func=cmd_stats)

    chamfer = sub.add_parser("chamfer", help="chamfer-distance comparison of two model outputs")
    chamfer.add_argument("--ref", required=True, type=Path, help="reference meshes directory")
    chamfer.add_argument("--a", required=True, type=Path, help="candidate A directory")
    chamfer.add_argument("--b", required=True, type=Path, help="candidate B directory")
    chamfer.add_argument("--points", type=int, default=10_000)
    chamfer.add_argument("--seed", type=int, default=0)
    chamfer.add_argument("--out", type=Path, help="CSV output (default: stdout)")
    chamfer.add_argument("--json", type=Path, help="bar-chart-ready JSON output")
    chamfer.add_argument("--fig", type=Path, help="per-object comparison chart PNG")
    chamfer.add_argument("--unsquared", action="store_true", help="use unsquared distances")
    chamfer.add_argument("--jobs", type=int, default=1)
    chamfer.set_defaults(func=cmd_chamfer)

    serve = sub.add_parser("serve", help="run the annotation workflow service")
    serve.add_argument("--db", required=True, type=Path, help="sqlite database path")
    serve.add_argument("--objects", type=Path, help="directory of <object_id>.glb files")
    serve.add_argument("--views-dir", type=Path, help="cache directory for rendered views")
    serve.add_argument("--ui", type=Path, help="static UI bundle directory (mounted at /ui)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8800)
    serve.add_argument("--n-views", type=int, default=40)
    serve.add_argument("--res", type=_parse_resolution, default=DEFAULT_RES)
    serve.add_argument("--seed", type=int, default=0)
    serve.set_defaults(func=cmd_serve)

    return parser


# -- subcommand implementations ----------------------------------------------


def cmd_render(args) -> int:
    from .gltf import load_mesh
    from .render import dump_views, render_object

    asset = load_mesh(args.glb)
    stack = render_object(
        asset,
        n_views=args.views,
        seed=args.seed,
        resolution=args.res,
        radius_scale=args.radius_scale,
        edge_overlay=args.edges,
    )
    target = dump_views(stack, args.out)
    print(f"wrote {stack.n_views} views to {target}")
    return 0


def _load_train_config(args) -> "AnnotatorConfig":
    from .annotator import AnnotatorConfig, BackboneKind, BackboneSpec

    raw: dict = {}
    if args.config is not None:
        import sys as _sys

        if _sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        with open(args.config, "rb") as handle:
            raw = tomllib.load(handle)
    for flag, key in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("learning_rate", "learning_rate"),
        ("optimizer", "optimizer"),
        ("views", "n_views"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    if "head_loss_weights" in raw:
        raw["head_loss_weights"] = {k: float(v) for k, v in raw["head_loss_weights"].items()}
    return AnnotatorConfig.from_dict(raw)


def _render_labeled_dataset(records, glb_dir: Path, stats_path, n_views, resolution, seed, jobs):
    from .gltf import load_mesh
    from .mesh import extract_metadata, read_platform_stats
    from .render import render_object

    stats = read_platform_stats(stats_path) if stats_path else {}

    def build(record):
        glb = glb_dir / f"{record.object_id}.glb"
        if not glb.is_file():
            raise FileNotFoundError(f"no mesh for {record.object_id!r}: {glb}")
        asset = load_mesh(glb, object_id=record.object_id)
        stack = render_object(asset, n_views=n_views, seed=seed, resolution=resolution)
        metadata = extract_metadata(asset, stats.get(record.object_id))
        return stack, metadata, record

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(build, records))
    return [build(r) for r in records]


def cmd_train(args) -> int:
    from .annotator import save_annotator, train
    from .labels import read_manifest

    config = _load_train_config(args)
    resolution = args.res or ((224, 224) if config.backbone.kind.value == "pretrained_deep" else (64, 64))
    with open(args.manifest, encoding="utf-8") as handle:
        records = list(read_manifest(handle))
    dataset = _render_labeled_dataset(
        records, args.glb_dir, args.stats, config.n_views, resolution, config.seed, args.jobs
    )
    model = train(dataset, config)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_annotator(model, args.out)
    if model.training_history:
        last = model.training_history[-1]
        print(
            f"trained {config.epochs} epochs on {len(dataset)} objects; "
            f"final val loss {last.val_loss:.4f}"
        )
    else:
        print(f"saved untrained model (epochs=0) for {len(dataset)} objects")
    if args.fig and model.training_history:
        from .figures import training_curves_chart

        training_curves_chart(model.training_history, args.fig)
        print(f"wrote loss curves to {args.fig}")
    print(f"checkpoint: {args.out}")
    return 0


def _predict_stacks(args, model):
    from .gltf import load_mesh
    from .mesh import extract_metadata, read_platform_stats
    from .render import render_object

    stats = read_platform_stats(args.stats) if args.stats else {}
    if args.glb is not None:
        paths = [args.glb]
    else:
        paths = sorted(args.glb_dir.glob("*.glb")) + sorted(args.glb_dir.glob("*.gltf"))
        if not paths:
            raise FileNotFoundError(f"no .glb/.gltf files in {args.glb_dir}")
    expected = model.network.expected_resolution
    resolution = args.res or expected or (64, 64)

    def build(path):
        asset = load_mesh(path)
        stack = render_object(
            asset, n_views=model.config.n_views, seed=args.seed, resolution=resolution
        )
        return stack, extract_metadata(asset, stats.get(asset.object_id))

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            return list(pool.map(build, paths))
    return [build(p) for p in paths]


def cmd_predict(args) -> int:
    from .annotator import load_annotator, predict
    from .labels import serialize_record

    model = load_annotator(args.model)
    pairs = _predict_stacks(args, model)
    lines = [
        serialize_record(predict(model, stack, metadata, created_at=args.timestamp))
        for stack, metadata in pairs
    ]
    if args.out:
        args.out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {len(lines)} predictions to {args.out}")
    else:
        for line in lines:
            print(line)
    return 0


def cmd_eval(args) -> int:
    from .annotator import load_annotator
    from .labels import read_manifest
    from .metrics import evaluate

    model = load_annotator(args.model)
    with open(args.manifest, encoding="utf-8") as handle:
        records = list(read_manifest(handle))
    expected = model.network.expected_resolution
    resolution = args.res or expected or (64, 64)
    dataset = _render_labeled_dataset(
        records, args.glb_dir, args.stats, model.config.n_views, resolution, args.seed, args.jobs
    )
    report = evaluate(model, dataset)
    print(report.to_text_table())
    if args.json:
        args.json.write_text(report.to_json() + "\n", encoding="utf-8")
        print(f"wrote {args.json}")
    if args.table:
        args.table.write_text(report.to_text_table() + "\n", encoding="utf-8")
        print(f"wrote {args.table}")
    return 0


def cmd_filter(args) -> int:
    from .curation import FilterSummary, apply_filter, compile_filter, load_filter_spec, tag_distribution
    from .labels import read_manifest, serialize_record

    spec = load_filter_spec(args.spec)
    predicate = compile_filter(spec)
    summary = FilterSummary()
    errors: list[tuple[int, str]] = []
    kept = []
    with open(args.manifest, encoding="utf-8") as handle:
        stream = read_manifest(handle, on_error="strict" if args.strict else "skip", error_sink=errors)
        with open(args.out, "w", encoding="utf-8") as out:
            for record in apply_filter(stream, predicate, summary):
                kept.append(record)
                out.write(serialize_record(record) + "\n")
    for line_no, message in errors:
        print(f"warning: skipped malformed line {line_no}: {message}", file=sys.stderr)
    print(f"kept {summary.n_out} of {summary.n_in} records -> {args.out}")
    if kept:
        table = tag_distribution(kept)
        text = table.to_text_table()
        print(text)
        if args.summary:
            args.summary.write_text(text + "\n", encoding="utf-8")
        if args.fig:
            from .figures import tag_distribution_chart

            tag_distribution_chart(table, args.fig)
            print(f"wrote {args.fig}")
    elif args.summary or args.fig:
        print("warning: no records passed the filter; skipping summary outputs", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    from .curation import tag_distribution
    from .labels import read_manifest

    errors: list[tuple[int, str]] = []
    with open(args.manifest, encoding="utf-8") as handle:
        records = list(
            read_manifest(handle, on_error="strict" if args.strict else "skip", error_sink=errors)
        )
    for line_no, message in errors:
        print(f"warning: skipped malformed line {line_no}: {message}", file=sys.stderr)
    table = tag_distribution(records)
    text = table.to_text_table()
    print(text)
    if args.table:
        args.table.write_text(text + "\n", encoding="utf-8")
    if args.json:
        payload = {
            "n": table.n,
            "per_tag": table.per_tag,
            "per_score": {level.label: value for level, value in table.per_score.items()},
        }
        args.json.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    if args.fig:
        from .figures import tag_distribution_chart

        tag_distribution_chart(table, args.fig)
        print(f"wrote {args.fig}")
    return 0


def _load_mesh_dir(directory: Path):
    from .gltf import load_mesh

    paths = sorted(directory.glob("*.glb")) + sorted(directory.glob("*.gltf"))
    if not paths:
        raise FileNotFoundError(f"no .glb/.gltf files in {directory}")
    return [load_mesh(p) for p in paths]


def cmd_chamfer(args) -> int:
    from .geometry import compare_models, comparison_to_json, write_comparison_csv

    refs = _load_mesh_dir(args.ref)
    cand_a = _load_mesh_dir(args.a)
    cand_b = _load_mesh_dir(args.b)
    result = compare_models(
        refs, cand_a, cand_b, n_points=args.points, seed=args.seed, squared=not args.unsquared
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            write_comparison_csv(result, handle)
        print(f"wrote {args.out}")
    else:
        write_comparison_csv(result, sys.stdout)
    if args.json:
        args.json.write_text(comparison_to_json(result) + "\n", encoding="utf-8")
        print(f"wrote {args.json}")
    if args.fig:
        from .figures import chamfer_comparison_chart

        chamfer_comparison_chart(result, args.fig)
        print(f"wrote {args.fig}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceSettings, Store, create_app

    store = Store(args.db)
    settings = ServiceSettings(
        objects_dir=args.objects,
        views_dir=args.views_dir,
        ui_dir=args.ui,
        n_views=args.n_views,
        resolution=args.res,
        view_seed=args.seed,
    )
    app = create_app(store, settings)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"meshcurate: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
