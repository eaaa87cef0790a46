"""Command line front end.

Subcommands:

    colabel run       --config cfg.json [--mode self|co] [--backend sim|external:"CMD"]
                      [--seed N] [--out DIR]
    colabel resume    --config cfg.json [--out DIR]
    colabel simulate  --config cfg.json [--out DIR] [--seed N] [--count N] [--name NAME]
    colabel eval      --config cfg.json --gt MANIFEST --pred MANIFEST
                      [--variant base|no-fp|no-fp-snapped] [--out FILE]
    colabel report    --run DIR [--out DIR]

Flags override their config keys one to one; everything else lives in the
JSON config (see colabel.config for the schema). Invalid configuration
exits with status 2 and a field-level message; runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from colabel import reporting
from colabel.backends import BackendError, ConfigurationError
from colabel.config import ConfigError, ExperimentConfig, apply_overrides, load_experiment
from colabel.engine import (
    CheckpointError,
    RunResult,
    run_co_training,
    run_self_training,
    train_final,
)
from colabel.evaluation import (
    evaluate,
    self_label_stats,
    snap_true_positive_boxes,
    strip_false_positives,
)
from colabel.kitti import KittiFormatError, load_labels, load_manifest, load_parts, save_manifest
from colabel.types import AnnotationKind

__all__ = ["main"]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colabel",
        description="Grow pseudo-labels for 2D detection datasets by self- or co-training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, backend_flag: bool) -> None:
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", default=None, help="override the output directory")
        if backend_flag:
            p.add_argument(
                "--mode", choices=("self", "co"), default=None, help="meta-learner to run"
            )
            p.add_argument(
                "--backend",
                default=None,
                metavar="sim|external:CMD",
                help="override the detector backend",
            )

    run_p = sub.add_parser("run", help="run a self-labeling loop from scratch")
    common(run_p, backend_flag=True)

    resume_p = sub.add_parser("resume", help="continue an interrupted run from its checkpoints")
    common(resume_p, backend_flag=True)

    sim_p = sub.add_parser("simulate", help="generate a synthetic detection dataset")
    common(sim_p, backend_flag=False)
    sim_p.add_argument("--count", type=int, default=None, help="number of images")
    sim_p.add_argument("--name", default=None, help="dataset name / image id prefix")

    eval_p = sub.add_parser("eval", help="score predictions against ground truth")
    eval_p.add_argument("--config", required=True, help="experiment config (for the class table)")
    eval_p.add_argument("--gt", required=True, help="ground-truth manifest (JSONL)")
    eval_p.add_argument("--pred", required=True, help="prediction manifest (JSONL)")
    eval_p.add_argument(
        "--variant",
        choices=("base", "no-fp", "no-fp-snapped"),
        default="base",
        help="score as-is, with false positives removed, or additionally "
        "with matched boxes snapped to ground truth",
    )
    eval_p.add_argument("--out", default=None, help="write the full report JSON here")

    rep_p = sub.add_parser("report", help="derive curves and count summaries from a run")
    rep_p.add_argument("--run", required=True, help="run directory (holds metrics.csv)")
    rep_p.add_argument("--out", default=None, help="report directory (default: RUN/report)")

    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment(args.config)
    return apply_overrides(
        config,
        mode=getattr(args, "mode", None),
        seed=args.seed,
        backend=getattr(args, "backend", None),
        out=args.out,
    )


def _print_result(result: RunResult) -> None:
    print(f"mode: {result.mode}")
    print(f"cycles: {result.n_cycles} ({result.reason})")
    if result.similarities:
        trace = ", ".join(f"{s:.2f}" for s in result.similarities)
        print(f"similarity by cycle: {trace}")
    for d in sorted(result.accumulated):
        acc = result.accumulated[d]
        print(f"detector {d}: {acc.n_images} images / {acc.n_detections} boxes accumulated")
    print(f"pseudo-labels: {result.pseudo_labels.n_images} images, "
          f"{result.pseudo_labels.n_detections} boxes")
    print(f"run dir: {result.run_dir}")


def _final_evaluation(config: ExperimentConfig, backend, labeled, result: RunResult) -> None:
    assert config.data.test_manifest is not None
    from colabel.backends import predict as backend_predict

    test_manifest = load_manifest(config.data.test_manifest)
    test_gt = load_labels(test_manifest, config.table)
    if test_gt.kind is not AnnotationKind.GROUND_TRUTH:
        raise ConfigError("data.test_manifest", "test labels must be ground truth")
    test_records = test_manifest.records_by_id()
    handle = train_final(
        config.labeling_config(),
        backend,
        labeled,
        result.pseudo_labels,
        _training_records(config),
    )
    predictions = backend_predict(backend, handle, test_records, config.table)
    report = evaluate(test_gt, predictions, config.table, mode=config.ap_mode)
    payload = {
        "variant": "base",
        "cycles": result.n_cycles,
        "report": report.as_dict(),
        "pseudo_label_stats": None,
    }
    out_path = result.run_dir / "final_eval.json"
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"final detector mAP on test data: {report.mean_ap:.2f}")
    for name, entry in report.per_class.items():
        ap = "n/a" if entry.ap is None else f"{entry.ap:.2f}"
        print(f"  {name}: AP {ap} ({entry.n_true_positives} TP / {entry.n_false_positives} FP)")
    print(f"wrote {out_path}")


def _training_records(config: ExperimentConfig):
    assert config.data.train_manifest is not None
    return load_manifest(config.data.train_manifest).records_by_id()


def _cmd_run(args: argparse.Namespace, *, resume: bool) -> int:
    config = _load(args)
    if config.data.train_manifest is None:
        raise ConfigError("data.train_manifest", "required to run a loop")
    manifest = load_manifest(config.data.train_manifest)
    labeled, unlabeled = load_parts(manifest, config.table)
    images = manifest.records_by_id()
    backend = config.build_backend()
    runner = run_co_training if config.mode == "co" else run_self_training
    try:
        result = runner(
            config.labeling_config(),
            backend,
            labeled,
            unlabeled,
            images,
            config.output_dir,
            resume=resume,
        )
        _print_result(result)
        if config.data.test_manifest is not None and result.stopped:
            _final_evaluation(config, backend, labeled, result)
    finally:
        backend.close()
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    from colabel.sim import SimWorldConfig, generate_dataset

    config = _load(args)
    sim = config.simulate
    world_kwargs = dict(sim.world)
    if args.seed is not None:
        world_kwargs["seed"] = args.seed
    if "class_means" in world_kwargs and world_kwargs["class_means"] is not None:
        world_kwargs["class_means"] = tuple(tuple(m) for m in world_kwargs["class_means"])
    if "class_mix" in world_kwargs:
        world_kwargs["class_mix"] = tuple(world_kwargs["class_mix"])
    if "box_ranges" in world_kwargs:
        world_kwargs["box_ranges"] = tuple(
            ((lo, hi), (l2, h2)) for (lo, hi), (l2, h2) in world_kwargs["box_ranges"]
        )
    try:
        world = SimWorldConfig(**world_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("simulate.world", str(exc)) from None

    count = args.count if args.count is not None else sim.count
    name = args.name if args.name is not None else sim.name
    out_dir = config.output_dir
    dataset = generate_dataset(world, count, sim.domain_tag, name)
    manifest_path = dataset.save(out_dir / "dataset", config.table)
    if not sim.sidecar:
        (manifest_path.parent / "world.json").unlink()

    # The training split: the first labeled_fraction of images (sorted by
    # id) keep their labels, the rest become the unlabeled pool.
    ordered = sorted(dataset.records)
    n_labeled = max(1, math.ceil(sim.labeled_fraction * len(ordered)))
    rel = {i: f"dataset/labels/{i}.txt" for i in ordered[:n_labeled]}
    train_path = out_dir / "train.jsonl"
    save_manifest(
        [dataset.records[i] for i in ordered],
        rel,
        train_path,
        name=f"{name}_train",
        kind=AnnotationKind.GROUND_TRUTH,
    )
    print(f"dataset: {manifest_path} ({len(ordered)} images, {dataset.n_objects} objects)")
    print(f"train split: {train_path} ({n_labeled} labeled / {len(ordered) - n_labeled} unlabeled)")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = load_experiment(args.config)
    gt = load_labels(load_manifest(args.gt), config.table)
    if gt.kind is not AnnotationKind.GROUND_TRUTH:
        gt = gt.with_kind(AnnotationKind.GROUND_TRUTH)
    pred = load_labels(load_manifest(args.pred), config.table)
    if pred.kind is not AnnotationKind.PSEUDO_LABEL:
        # empty label files are negatives on the GT side but mean "no
        # predictions" on the prediction side; drop them before coercing
        from colabel.types import AnnotationSet

        pred = AnnotationSet(
            entries={i: d for i, d in pred.entries.items() if d},
            kind=AnnotationKind.PSEUDO_LABEL,
        )

    scored = pred
    if args.variant == "no-fp":
        scored = strip_false_positives(pred, gt, config.table)
    elif args.variant == "no-fp-snapped":
        scored = snap_true_positive_boxes(pred, gt, config.table)
    report = evaluate(gt, scored, config.table, mode=config.ap_mode)
    stats = self_label_stats(pred, gt, config.table)

    print(f"variant: {args.variant}")
    print(f"mAP: {report.mean_ap:.2f}")
    for name, entry in report.per_class.items():
        ap = "n/a" if entry.ap is None else f"{entry.ap:.2f}"
        count, fp_share = stats[name]
        print(
            f"  {name}: AP {ap} | {entry.n_true_positives} TP / "
            f"{entry.n_false_positives} FP | {count} predicted boxes, "
            f"{fp_share:.1f}% false"
        )
    if args.out:
        payload = {
            "variant": args.variant,
            "report": report.as_dict(),
            "pseudo_label_stats": {
                name: {"boxes": cnt, "false_percent": fp} for name, (cnt, fp) in stats.items()
            },
        }
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.is_file():
        print(f"error: {metrics_path} not found (not a run directory?)", file=sys.stderr)
        return 1
    rows = reporting.read_metrics(metrics_path)
    config_path = run_dir / "config.json"
    table = None
    if config_path.is_file():
        stored = json.loads(config_path.read_text())
        from colabel.types import ClassEntry, ClassTable

        table = ClassTable(
            classes=tuple(
                ClassEntry(c["name"], c["threshold"], c["min_height"], c["iou_threshold"])
                for c in stored["config"]["classes"]
            )
        )

    out_dir = Path(args.out) if args.out else run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    (out_dir / "curves.csv").write_text(reporting.curves_csv(rows))
    if table is not None:
        (out_dir / "counts.csv").write_text(reporting.count_summary_csv(rows, table))

    def points(col: str) -> list[tuple[float, float]]:
        return [
            (float(r["cycle"]), float(r[col]))
            for r in rows
            if r.get(col) not in (None, "")
        ]

    similarity_svg = reporting.svg_line_chart(
        [("similarity", points("similarity")), ("delta", points("delta"))],
        title="pseudo-label similarity by cycle",
        y_label="mAP points",
    )
    (out_dir / "similarity.svg").write_text(similarity_svg)
    count_series = [
        ("accumulated images (1)", points("acc_images_1")),
        ("fresh images (1)", points("new_images_1")),
    ]
    if any(r.get("acc_images_2") for r in rows):
        count_series.append(("accumulated images (2)", points("acc_images_2")))
    (out_dir / "counts.svg").write_text(
        reporting.svg_line_chart(count_series, title="pseudo-label growth", y_label="images")
    )

    print(f"cycles: {len(rows)}")
    for r in rows:
        sim = float(r["similarity"])
        delta = f" (delta {float(r['delta']):.2f})" if r.get("delta") else ""
        print(f"  cycle {r['cycle']}: similarity {sim:.2f}{delta}, "
              f"{r['acc_images_1']} images accumulated")
    print(f"wrote {out_dir}/curves.csv, similarity.svg, counts.svg"
          + (", counts.csv" if table is not None else ""))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, resume=False)
        if args.command == "resume":
            return _cmd_run(args, resume=True)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "report":
            return _cmd_report(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BackendError, CheckpointError, ConfigurationError, KittiFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
