"""Command-line entry point binding all modules into reproducible runs."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data as datamod
from . import model as mdl
from . import pipeline
from .config import ConfigError, RunConfig, load_config, write_effective_config
from .gradcheck import gradient_suite
from .oracle import AnnotationStore

GRAD_TOLERANCE = 1e-4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted config override, repeatable")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="run seed (overrides seed)")


def _load(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_gen_data(args) -> int:
    config = _load(args)
    d = config.data
    spec = datamod.SceneSpec(
        width=d.width, height=d.height, num_classes=d.num_classes, seed=d.seed,
        shift=datamod.ShiftSpec(**vars(d.shift)),
    )
    counts = vars(d.counts)
    root = d.resolve_root()
    manifest = datamod.generate_dataset(spec, counts, root)
    total = sum(counts.values())
    print(f"wrote {total} images under {root} ({manifest['num_classes']} classes)")
    return 0


def cmd_pretrain(args) -> int:
    config = _load(args)
    splits = pipeline.Splits.load(config.data.resolve_root())
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(config, run_dir)
    log = pipeline.TrainLog(run_dir / "train_log.jsonl", config.log_every)
    task = pipeline.pretrain(config, splits, log)
    log.flush()
    ckpt = run_dir / "pretrain.bin"
    mdl.save_checkpoint(task, ckpt)
    report = {
        "source_val": pipeline.evaluate(task, splits.source_val, splits.num_classes),
        "target_val": pipeline.evaluate(task, splits.target_val, splits.num_classes),
    }
    (run_dir / "pretrain_eval.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    print(f"checkpoint {ckpt}")
    print(f"source val mIoU {report['source_val']['miou']:.4f}  "
          f"target val mIoU {report['target_val']['miou']:.4f}")
    return 0


def cmd_run(args) -> int:
    config = _load(args)
    summary = pipeline.run_experiment(config)
    for record in summary["stages"]:
        budget = record["budget"]
        print(f"stage {record['stage']}: mIoU {record['miou']:.4f}  "
              f"labeled {budget['cumulative_fraction']:.4%} "
              f"({budget['mean_points_per_image']:.1f} px/image)")
    print(f"results under {config.run_dir()}")
    return 0


def cmd_select(args) -> int:
    config = _load(args)
    splits = pipeline.Splits.load(config.data.resolve_root())
    task = mdl.load_checkpoint(args.checkpoint)
    store = AnnotationStore(splits.width, splits.height, splits.num_classes)
    if args.annotations:
        store = AnnotationStore.load(args.annotations, splits.width, splits.height, splits.num_classes)
    wheres = pipeline.compute_stage_selection(task, store, args.stage, config, splits)
    out = Path(args.out or config.run_dir()) / "selections"
    total = 0
    for image_id, where in wheres.items():
        points = pipeline.points_of(where)
        total += len(points)
        pipeline.dump_selection(out, args.stage, config.strategy, image_id, points)
    print(f"selected {total} pixels over {len(wheres)} images -> {out / f'stage{args.stage}'}")
    return 0


def cmd_eval(args) -> int:
    config = _load(args)
    root = config.data.resolve_root()
    domain, _, split = args.split.partition("/")
    samples = datamod.load_split(root, domain, split or "val")
    manifest = datamod.load_manifest(root)
    task = mdl.load_checkpoint(args.checkpoint)
    result = pipeline.evaluate(task, samples, manifest["num_classes"])
    names = manifest["class_names"]
    for k, iou in enumerate(result["per_class_iou"]):
        shown = "absent" if iou is None else f"{iou:.4f}"
        print(f"{names[k]:>8s}  {shown}")
    print(f"{'mIoU':>8s}  {result['miou']:.4f}")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(result, sort_keys=True, indent=1))
    return 0


def cmd_grad_check(args) -> int:
    worst = gradient_suite(instances=args.instances)
    for name, err in worst.items():
        print(f"{name:7s} max relative error {err:.3e}")
    overall = max(worst.values())
    print(f"overall {overall:.3e} (tolerance {GRAD_TOLERANCE:.0e})")
    return 0 if overall < GRAD_TOLERANCE else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service import LiveLoop, create_app

    config = _load(args)
    loop = LiveLoop(config)
    app = create_app(loop, static_dir=args.static)
    print(f"serving stage {loop.stage} proposals on port {config.serve_port}")
    uvicorn.run(app, host=args.host, port=config.serve_port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="labelloop",
        description="Human-in-the-loop sparse pixel labeling for domain-adaptive segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the two-domain synthetic dataset")
    _add_common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="train the task model on the source domain")
    _add_common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("run", help="full staged adaptation loop with a simulated oracle")
    _add_common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("select", help="one-shot selection from a task checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stage", type=int, default=1)
    p.add_argument("--annotations", help="existing annotation directory to exclude")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="target/val", help="e.g. target/val or source/val")
    p.add_argument("--json-out", help="also write the result as JSON")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of all objectives")
    _add_common(p)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("serve", help="HTTP annotation service for the live loop")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", help="static UI bundle directory to serve at /")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
