"""Command-line interface.

Subcommands: ``evaluate`` (score a manifest), ``train`` (fit the new
projection pair), ``diagnose`` (pooling shift statistics), ``render``
(heatmap overlays), ``synth`` (write the synthetic fixture).

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure. Errors print a single ``error: <Type>: <message>`` line on stderr.
Report files embed no timestamps or absolute paths, so identical inputs
produce byte-identical outputs. Set ``ITSMLAB_LOG`` to debug/info/warning
for logging verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import (
    EmptyForeground,
    EmptyInput,
    ItsmlabError,
    NumericError,
    SchemaError,
    ValidationError,
)
from .itsm import (
    SOURCE_CLIP,
    SOURCE_ECLIP,
    SOURCE_RCLIP,
    Itsm,
    confidence_scores,
    finalize_itsm,
    itsm_raw,
    project,
    rclip_reverse,
)
from .metrics import DEFAULT_STEP, SampleScores, build_report, mean_ap, score_sample
from .pooling import METHOD_AVG, METHOD_MASKED_MAX, avg_pool, masked_max_pool, max_pool, prepare_attention
from .render import load_base_image, overlay, point_overlay, save_png
from .shift import classify_shift, aggregate_shift, point_map
from .synthetic import MODE_ALIGNED, MODE_INVERTED, FixtureConfig, write_fixture
from .tensor_io import Manifest, SampleRecord, TextBank, load_manifest, write_tensor
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

logger = logging.getLogger(__name__)

T = TypeVar("T")
U = TypeVar("U")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _setup_logging() -> None:
    level = os.environ.get("ITSMLAB_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _pmap(fn: Callable[[T], U], items: Sequence[T], jobs: int) -> list[U]:
    """Apply fn over items, optionally with a thread pool; order preserved."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "-", name)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_bank(manifest: Manifest) -> TextBank:
    if manifest.text_bank is None:
        raise SchemaError(f"{manifest.path}: manifest has no text bank")
    return manifest.text_bank


def _class_filter(manifest: Manifest, arg: str | None) -> list[int]:
    """Resolve a comma-separated class filter (names or indices) to sorted ids."""
    if not arg:
        return list(range(len(manifest.classes)))
    index = {name: i for i, name in enumerate(manifest.classes)}
    selected: set[int] = set()
    for piece in arg.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if piece in index:
            selected.add(index[piece])
        elif piece.isdigit() and int(piece) < len(manifest.classes):
            selected.add(int(piece))
        else:
            logger.warning("class filter entry %r not in manifest; ignored", piece)
    if not selected:
        raise EmptyInput("no classes to evaluate")
    return sorted(selected)


def _original_projections(manifest: Manifest) -> tuple[np.ndarray | None, np.ndarray | None]:
    if manifest.projections is None:
        return None, None
    return manifest.projections


def _method_projections(
    args: argparse.Namespace, manifest: Manifest
) -> tuple[np.ndarray | None, np.ndarray | None, str]:
    """Projection pair and map source for the chosen method."""
    if args.method == "eclip":
        if not args.checkpoint:
            raise _UsageError("method eclip requires --checkpoint")
        pair, _ = load_checkpoint(args.checkpoint)
        return pair.phi_i_hat, pair.phi_t_hat, SOURCE_ECLIP
    proj_image, proj_text = _original_projections(manifest)
    source = SOURCE_RCLIP if args.method == "rclip" else SOURCE_CLIP
    return proj_image, proj_text, source


def _sample_itsm(
    record: SampleRecord,
    embeddings: np.ndarray,
    class_ids: Sequence[int],
    proj_image: np.ndarray | None,
    proj_text: np.ndarray | None,
    source: str,
) -> Itsm:
    raw = itsm_raw(
        record.image_tokens,
        embeddings[list(class_ids)],
        proj_image=proj_image,
        proj_text=proj_text,
    )
    itsm = finalize_itsm(
        raw, record.grid_size, record.image_size, class_ids=tuple(class_ids), source=source
    )
    return rclip_reverse(itsm) if source == SOURCE_RCLIP else itsm


def cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    bank = _require_bank(manifest)
    class_ids = _class_filter(manifest, args.classes)
    proj_image, proj_text, source = _method_projections(args, manifest)
    orig_image, orig_text = _original_projections(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def worker(entry: dict) -> tuple[SampleScores, np.ndarray, list[int], Itsm]:
        record = manifest.load_sample(entry)
        itsm = _sample_itsm(record, bank.embeddings, class_ids, proj_image, proj_text, source)
        scores = score_sample(itsm, record.gt_mask, record.present_classes, record.id, step=args.step)
        confidence = confidence_scores(
            record.class_token, bank.embeddings[class_ids], proj_image=orig_image, proj_text=orig_text
        )
        labels = sorted(set(record.present_classes) & set(class_ids))
        return scores, confidence, labels, itsm

    results = _pmap(worker, manifest.sample_entries, args.jobs)

    if args.emit_itsm:
        itsm_dir = out / "itsm"
        itsm_dir.mkdir(exist_ok=True)
        for entry, (_, _, _, itsm) in zip(manifest.sample_entries, results):
            write_tensor(itsm_dir / f"{entry['id']}.ften", itsm.map)

    sample_scores = [r[0] for r in results]
    score_matrix = np.stack([r[1] for r in results]) if results else np.zeros((0, len(class_ids)))
    labels = [r[2] for r in results]
    ap_per_class, map_pct = mean_ap(score_matrix, labels, class_ids)
    report = build_report(sample_scores, ap_per_class, map_pct, manifest.classes)

    doc = {
        "method": args.method,
        "split": manifest.split,
        "classes_evaluated": [manifest.classes[i] for i in class_ids],
        "threshold_step": args.step,
        **report.to_json_dict(),
    }
    _write_json(out / "report.json", doc)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "iou_pct", "sc_pct", "ap_pct", "samples"])

        def fmt(v: float | None) -> str:
            return "" if v is None else f"{v:.6f}"

        for name, row in doc["per_class"].items():
            writer.writerow([name, fmt(row["iou"]), fmt(row["sc"]), fmt(row["ap"]), row["samples"]])
        writer.writerow(["mean", fmt(report.miou), fmt(report.msc), fmt(report.mean_ap), report.sample_count])

    print(
        f"evaluate[{args.method}]: {report.sample_count} samples, "
        f"miou={report.miou:.2f} msc={report.msc:.2f} map={report.mean_ap:.2f}"
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    bank = _require_bank(manifest)
    pairs = []
    for record in manifest.iter_samples():
        if not record.present_classes:
            logger.info("sample %s has no labels; excluded from training", record.id)
            continue
        caption_class = min(record.present_classes)
        pairs.append((record, bank.embeddings[caption_class]))
    if not pairs:
        raise EmptyInput("no labeled samples to train on")

    config = TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        max_steps=args.max_steps,
        schedule=args.schedule,
        projection_dim=args.projection_dim,
    )
    pair, curve = train(pairs, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(out / "checkpoint", pair, config, steps=len(curve))
    with open(out / "loss_curve.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(curve, start=1):
            writer.writerow([i, f"{loss:.12g}"])

    final = f"{curve[-1]:.6f}" if curve else "n/a"
    print(f"train: {len(pairs)} pairs, {len(curve)} steps, final loss {final}, checkpoint {ckpt.name}")
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    proj_image, _ = _original_projections(manifest)
    out = Path(args.out)
    points_dir = out / "points"
    points_dir.mkdir(parents=True, exist_ok=True)

    def worker(entry: dict):
        record = manifest.load_sample(entry)
        feats = project(record.image_tokens, proj_image)
        h, w = record.grid_size
        maps = feats.reshape(h, w, feats.shape[1])
        reference = max_pool(feats)
        if args.candidate == METHOD_MASKED_MAX:
            if record.attention is None:
                raise ValidationError(f"sample {record.id} has no attention for masked pooling")
            candidate = masked_max_pool(feats, prepare_attention(record.attention, feats.shape[1]))
        else:
            candidate = avg_pool(feats)
        ref_pm = point_map(maps, reference.vector, reference.method)
        cand_pm = point_map(maps, candidate.vector, candidate.method)
        gt_fg = (record.gt_mask > 0) & (record.gt_mask != 255)
        ignore = record.gt_mask == 255
        try:
            report = classify_shift(ref_pm, cand_pm, gt_fg, ignore)
        except EmptyForeground:
            logger.info("sample %s has no foreground; skipped", record.id)
            return record.id, None, None, None
        base = load_base_image(record.image_path, record.image_size) if record.image_path else None
        return record.id, report, point_overlay(ref_pm, record.image_size, base), point_overlay(
            cand_pm, record.image_size, base
        )

    results = _pmap(worker, manifest.sample_entries, args.jobs)
    reports = []
    rows = []
    for sid, report, ref_png, cand_png in results:
        if report is None:
            continue
        reports.append(report)
        rows.append(
            {
                "id": sid,
                "fg_ratio": report.fg_ratio,
                "bucket": report.bucket,
                "b2f": report.b2f,
                "f2b": report.f2b,
                "unshifted": report.unshifted,
                "channels": report.channels,
            }
        )
        save_png(points_dir / f"{sid}.max.png", ref_png)
        save_png(points_dir / f"{sid}.{args.candidate}.png", cand_png)

    table = aggregate_shift(reports)
    _write_json(out / "diagnose.json", {"candidate": args.candidate, "buckets": table, "samples": rows})
    overall = table["(0,1]"]
    print(
        f"diagnose[{args.candidate}]: {len(reports)} samples, "
        f"mean b2f={overall['b2f']:.2f} f2b={overall['f2b']:.2f} unshifted={overall['unshifted']:.2f}"
    )
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    bank = _require_bank(manifest)
    class_ids = _class_filter(manifest, args.classes)
    proj_image, proj_text, source = _method_projections(args, manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ids = [s.strip() for s in args.samples.split(",")] if args.samples else manifest.sample_ids
    count = 0
    for sid in ids:
        record = manifest.get_sample(sid)
        itsm = _sample_itsm(record, bank.embeddings, class_ids, proj_image, proj_text, source)
        base = load_base_image(record.image_path, record.image_size) if record.image_path else None
        targets = class_ids if args.classes else sorted(set(record.present_classes) & set(class_ids))
        for cls in targets:
            slice_map = itsm.map[:, :, class_ids.index(cls)]
            png = overlay(slice_map, base, alpha=args.alpha)
            save_png(out / f"{sid}.{_slug(manifest.classes[cls])}.png", png)
            count += 1
    print(f"render[{args.method}]: wrote {count} overlays for {len(ids)} samples")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = FixtureConfig(num_samples=args.num_samples, mode=args.mode, seed=args.seed)
    manifest_path = write_fixture(args.out, cfg)
    print(f"synth[{args.mode}]: {args.num_samples} samples, manifest {manifest_path.name}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="itsmlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(sp: argparse.ArgumentParser, method: bool = True) -> None:
        sp.add_argument("--manifest", required=True, help="dataset manifest JSON")
        sp.add_argument("--out", required=True, help="output directory")
        if method:
            sp.add_argument("--method", choices=("clip", "rclip", "eclip"), default="clip")
            sp.add_argument("--checkpoint", help="trained projection checkpoint (eclip)")
        sp.add_argument("--seed", type=int, default=0, help="seed (commands without RNG ignore it)")

    p_eval = sub.add_parser("evaluate", help="score a dataset and write metric reports")
    add_io(p_eval)
    p_eval.add_argument("--classes", help="comma-separated class names or indices")
    p_eval.add_argument("--jobs", type=int, default=1, help="worker threads")
    p_eval.add_argument("--emit-itsm", action="store_true", help="also write per-sample map tensors")
    p_eval.add_argument("--step", type=float, default=DEFAULT_STEP, help="threshold grid step")
    p_eval.set_defaults(func=cmd_evaluate)

    p_train = sub.add_parser("train", help="train the new projection pair")
    add_io(p_train, method=False)
    p_train.add_argument("--lr", type=float, default=1e-4)
    p_train.add_argument("--weight-decay", type=float, default=0.05)
    p_train.add_argument("--batch-size", type=int, default=64)
    p_train.add_argument("--epochs", type=int, default=10)
    p_train.add_argument("--max-steps", type=int, default=2000)
    p_train.add_argument("--schedule", choices=("constant", "cosine"), default="constant")
    p_train.add_argument("--projection-dim", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_diag = sub.add_parser("diagnose", help="pooling shift statistics and point maps")
    add_io(p_diag, method=False)
    p_diag.add_argument(
        "--candidate", choices=(METHOD_AVG, METHOD_MASKED_MAX), default=METHOD_AVG,
        help="pooling to compare against the max reference",
    )
    p_diag.add_argument("--jobs", type=int, default=1)
    p_diag.set_defaults(func=cmd_diagnose)

    p_render = sub.add_parser("render", help="write heatmap overlay PNGs")
    add_io(p_render)
    p_render.add_argument("--classes", help="comma-separated class names or indices")
    p_render.add_argument("--samples", help="comma-separated sample ids (default: all)")
    p_render.add_argument("--alpha", type=float, default=0.5, help="heatmap blend weight")
    p_render.set_defaults(func=cmd_render)

    p_synth = sub.add_parser("synth", help="write the synthetic fixture dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--num-samples", type=int, default=40)
    p_synth.add_argument("--mode", choices=(MODE_ALIGNED, MODE_INVERTED), default=MODE_ALIGNED)
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ItsmlabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
