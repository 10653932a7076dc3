"""Command-line orchestration: prepare, synth, train, infer, eval, gradcheck.

Configuration comes from defaults, then an optional key=value config file,
then command-line flags (flags win). Results go to stdout and files under
--out; diagnostics go to stderr; exit code 0 means the command's contract was
fully met. STROKEBENCH_THREADS caps the worker count (all current code paths
are strictly serial, which is also the deterministic mode).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import metrics, model as model_mod, synth
from .annotations import (LEVEL_TITLES, LEVELS, STROKE_LABEL, Segment, Taxonomy,
                          default_taxonomy, infer_negative_segments, load_taxonomy,
                          parse_annotations, superclass_of, write_predictions)
from .errors import ConfigError, StrokebenchError
from .frames import clamped_start, extract_cuboid, open_frame_dir, open_rgbv
from .model import DatasetItem, TrainConfig, build_model, load_checkpoint, save_checkpoint
from .nn.gradcheck import run_all
from .nn.layers import default_architecture

logger = logging.getLogger(__name__)

TASKS = ("detection", "classification")
GRADCHECK_TOLERANCE = 1e-6


@dataclass
class RunConfig:
    task: str = "detection"
    data: Path | None = None
    taxonomy: Path | None = None
    checkpoint: Path | None = None
    out: Path = Path("runs")
    epochs: int = 500
    batch: int = 10
    lr: float = 1e-4
    momentum: float = 0.5
    weight_decay: float = 0.005
    proposal_len: int = 150
    proposal_stride: int = 150
    cuboid_len: int = 98
    cuboid_size: int = 120
    block_len: int = 200
    map_tiou: float = 0.5
    seed: int = 0
    deterministic: bool = False
    filters: tuple[int, ...] = (30, 60, 80)
    hidden: int = 500
    threads: int = 1


_PATH_KEYS = {"data", "taxonomy", "checkpoint", "out"}
_INT_KEYS = {"epochs", "batch", "proposal_len", "proposal_stride", "cuboid_len",
             "cuboid_size", "block_len", "seed", "hidden", "threads"}
_FLOAT_KEYS = {"lr", "momentum", "weight_decay", "map_tiou"}
_BOOL_KEYS = {"deterministic"}


def _parse_value(key: str, raw: str):
    try:
        if key in _PATH_KEYS:
            return Path(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if key == "filters":
            return tuple(int(x) for x in raw.split(",") if x)
        if key == "task":
            if raw not in TASKS:
                raise ValueError(raw)
            return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for config key {key!r}") from None
    raise ConfigError(f"unknown config key {key!r}")


def load_config_file(path) -> dict:
    values = {}
    known = {f.name for f in fields(RunConfig)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **load_config_file(args.config))
    overrides = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name == "filters":
            v = _parse_value("filters", v)
        overrides[f.name] = v
    cfg = replace(cfg, **overrides)
    env_threads = os.environ.get("STROKEBENCH_THREADS")
    if env_threads is not None:
        try:
            cap = int(env_threads)
        except ValueError:
            raise ConfigError(f"STROKEBENCH_THREADS must be an integer, got {env_threads!r}")
        if cap < 1:
            raise ConfigError(f"STROKEBENCH_THREADS must be >= 1, got {cap}")
        cfg = replace(cfg, threads=min(cfg.threads, cap))
    return cfg


def _load_taxonomy(cfg: RunConfig) -> Taxonomy:
    if cfg.taxonomy is not None:
        return load_taxonomy(Path(cfg.taxonomy).read_bytes())
    return default_taxonomy()


def _split_annotations(cfg: RunConfig, split: str):
    if cfg.data is None:
        raise ConfigError("--data is required")
    split_dir = Path(cfg.data) / split
    if not split_dir.is_dir():
        raise ConfigError(f"missing split directory {split_dir}")
    xmls = sorted(split_dir.glob("*.xml"))
    if not xmls:
        raise ConfigError(f"no annotation files in {split_dir}")
    return [parse_annotations(p.read_bytes()) for p in xmls]


def _open_source(cfg: RunConfig, split: str, video_id: str):
    base = Path(cfg.data) / split
    rgbv = base / f"{video_id}.rgbv"
    if rgbv.is_file():
        return open_rgbv(rgbv)
    frame_dir = base / video_id
    if frame_dir.is_dir():
        return open_frame_dir(frame_dir)
    return None


def _index_path(cfg: RunConfig, split: str) -> Path:
    return Path(cfg.out) / f"{cfg.task}_{split}_index.csv"


def _default_checkpoint(cfg: RunConfig) -> Path:
    return cfg.checkpoint if cfg.checkpoint else Path(cfg.out) / f"{cfg.task}_model.ckpt"


def _write_index(path: Path, rows: list[tuple[str, int, int, str]]) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["video_id", "begin", "end", "label"])
    writer.writerows(rows)
    path.write_text(out.getvalue())


def _read_index(path: Path) -> list[tuple[str, int, int, str]]:
    if not path.is_file():
        raise ConfigError(f"missing index file {path}; run `prepare` first")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["video_id", "begin", "end", "label"]:
            raise ConfigError(f"{path}: bad index header {header}")
        for row in reader:
            if len(row) != 4:
                raise ConfigError(f"{path}: bad index row {row}")
            try:
                rows.append((row[0], int(row[1]), int(row[2]), row[3]))
            except ValueError:
                raise ConfigError(f"{path}: non-integer frame bound in {row}") from None
    return rows


def cmd_prepare(cfg: RunConfig) -> int:
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    for split in ("train", "validation"):
        rows = []
        n_pos = n_neg = 0
        for ann in _split_annotations(cfg, split):
            for seg in ann.ground_truth:
                label = STROKE_LABEL if cfg.task == "detection" else seg.label
                rows.append((ann.video_id, seg.begin, seg.end, label))
                n_pos += 1
            if cfg.task == "detection":
                for seg in infer_negative_segments(ann, cfg.block_len):
                    rows.append((ann.video_id, seg.begin, seg.end, seg.label))
                    n_neg += 1
        path = _index_path(cfg, split)
        _write_index(path, rows)
        if cfg.task == "detection":
            print(f"{split}: {n_pos} stroke, {n_neg} non-stroke -> {path}")
        else:
            print(f"{split}: {n_pos} segments -> {path}")
    return 0


def _class_labels(cfg: RunConfig, tax: Taxonomy) -> list[str]:
    return list(model_mod.DETECTION_LABELS) if cfg.task == "detection" else tax.labels


def _items_from_index(rows, labels: list[str]) -> list[DatasetItem]:
    index = {lab: i for i, lab in enumerate(labels)}
    items = []
    for video_id, begin, end, label in rows:
        if label not in index:
            raise ConfigError(f"label {label!r} not among task classes")
        items.append(DatasetItem(video_id, Segment(begin, end, label), index[label]))
    return items


def cmd_train(cfg: RunConfig) -> int:
    tax = _load_taxonomy(cfg)
    labels = _class_labels(cfg, tax)
    train_rows = _read_index(_index_path(cfg, "train"))
    val_rows = _read_index(_index_path(cfg, "validation"))
    train_items = _items_from_index(train_rows, labels)
    val_items = _items_from_index(val_rows, labels)

    sources = {}
    for split, items in (("train", train_items), ("validation", val_items)):
        for item in items:
            if item.video_id not in sources:
                src = _open_source(cfg, split, item.video_id)
                if src is not None:
                    sources[item.video_id] = src

    input_shape = (3, cfg.cuboid_len, cfg.cuboid_size, cfg.cuboid_size)
    arch = default_architecture(input_shape, filters=cfg.filters, hidden=cfg.hidden,
                                n_classes=len(labels))
    net = build_model(len(labels), arch, seed=cfg.seed, input_shape=input_shape)
    tc = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch, lr=cfg.lr,
                     momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                     seed=cfg.seed, cuboid_len=cfg.cuboid_len,
                     cuboid_size=cfg.cuboid_size, deterministic=cfg.deterministic)
    best, history = model_mod.train(net, train_items, val_items, sources, tc)

    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    ckpt = _default_checkpoint(cfg)
    save_checkpoint(best, ckpt)
    hist_path = Path(cfg.out) / f"{cfg.task}_history.csv"
    hist_path.write_text(model_mod.history_csv(history))
    best_val = max(h.val_acc for h in history)
    print(f"trained {len(history)} epochs; best val acc {best_val:.4f}")
    print(f"checkpoint -> {ckpt}")
    print(f"history -> {hist_path}")
    return 0


def _predictions_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out) / "predictions"


def cmd_infer(cfg: RunConfig) -> int:
    tax = _load_taxonomy(cfg)
    ckpt = _default_checkpoint(cfg)
    if not Path(ckpt).is_file():
        raise ConfigError(f"missing checkpoint {ckpt}; run `train` first")
    net = load_checkpoint(ckpt)
    expected = 2 if cfg.task == "detection" else len(tax.labels)
    if net.n_classes != expected:
        raise ConfigError(
            f"checkpoint has {net.n_classes} classes but task {cfg.task!r} needs {expected}"
        )
    pred_dir = _predictions_dir(cfg)
    pred_dir.mkdir(parents=True, exist_ok=True)

    anns = _split_annotations(cfg, "test")
    _, cuboid_len, cuboid_size, _ = net.input_shape
    n_out = 0
    for ann in anns:
        src = _open_source(cfg, "test", ann.video_id)
        if src is None:
            raise ConfigError(f"no video for test annotation {ann.video_id!r}")
        if cfg.task == "detection":
            dets = model_mod.detect(net, src, cfg.proposal_len, cfg.proposal_stride)
            xml = write_predictions(ann.video_id, dets, src.frame_count, src.fps)
        else:
            preds = []
            for seg in ann.ground_truth:
                if src.frame_count < cuboid_len:
                    logger.warning("%s: too short for the model input; segment "
                                   "[%d, %d) skipped", ann.video_id, seg.begin, seg.end)
                    continue
                start = clamped_start(src.frame_count, seg.begin, cuboid_len)
                cub = extract_cuboid(src, start, cuboid_len, cuboid_size)
                cls, probs = model_mod.classify(net, cub.values)
                preds.append(Segment(seg.begin, seg.end, tax.labels[cls],
                                     score=float(probs[cls])))
            xml = write_predictions(ann.video_id, preds, ann.frame_count, ann.fps)
        out_path = pred_dir / f"{ann.video_id}.xml"
        out_path.write_bytes(xml)
        n_out += 1
    print(f"wrote predictions for {n_out} videos -> {pred_dir}")
    return 0


def _load_predictions(cfg: RunConfig) -> dict[str, list[Segment]]:
    pred_dir = _predictions_dir(cfg)
    if not pred_dir.is_dir():
        raise ConfigError(f"missing predictions directory {pred_dir}; run `infer` first")
    preds = {}
    for p in sorted(pred_dir.glob("*.xml")):
        ann = parse_annotations(p.read_bytes())
        preds[ann.video_id] = ann.predictions
    return preds


def cmd_eval(cfg: RunConfig) -> int:
    gt = {ann.video_id: ann for ann in _split_annotations(cfg, "test")}
    preds = _load_predictions(cfg)
    unknown = sorted(set(preds) - set(gt))
    if unknown:
        raise ConfigError(f"predictions for unknown video ids: {unknown}")

    if cfg.task == "detection":
        ds = metrics.DetectionSet()
        for vid, ann in gt.items():
            stroke_gts = [Segment(s.begin, s.end, STROKE_LABEL) for s in ann.ground_truth]
            ds.add_video(vid, preds.get(vid, []), stroke_gts)
        mean_ap = metrics.mean_average_precision({STROKE_LABEL: ds}, cfg.map_tiou)
        giou = metrics.global_iou(ds)
        print(f"mAP: {mean_ap}")
        print(f"global IoU: {giou}")
        return 0

    tax = _load_taxonomy(cfg)
    truth, predicted = [], []
    for vid, ann in gt.items():
        by_span = {(p.begin, p.end): p for p in preds.get(vid, [])}
        gt_spans = {(s.begin, s.end) for s in ann.ground_truth}
        stray = sorted(set(by_span) - gt_spans)
        if stray:
            raise ConfigError(f"{vid}: predictions for unknown segments {stray[:3]}")
        for seg in ann.ground_truth:
            p = by_span.get((seg.begin, seg.end))
            if p is None:
                raise ConfigError(
                    f"{vid}: no prediction for segment [{seg.begin}, {seg.end})"
                )
            truth.append(seg.label)
            predicted.append(p.label)
    if not truth:
        raise ConfigError("no ground-truth segments to evaluate")

    cm = metrics.confusion(predicted, truth, tax.labels)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    accs = {}
    for level in LEVELS:
        mapped_pred = [superclass_of(tax, p, level) for p in predicted]
        mapped_truth = [superclass_of(tax, t, level) for t in truth]
        accs[level] = metrics.accuracy(mapped_pred, mapped_truth)
        level_cm = metrics.aggregate(cm, tax, level)
        (Path(cfg.out) / f"confusion_{level}.csv").write_text(level_cm.to_csv())
    order = ("global", "type_hand", "type", "hand")
    print(",".join(LEVEL_TITLES[level] for level in order))
    print(",".join(str(accs[level]) for level in order))
    return 0


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    scfg = synth.SynthConfig(
        classes=args.classes,
        train_per_class=args.samples,
        val_per_class=args.val_samples,
        test_per_class=args.test_samples,
        frame_size=args.frame_size,
        stroke_len=args.stroke_len,
        gap_len=args.gap_len,
        strokes_per_video=args.strokes_per_video,
        fps=args.fps,
        seed=cfg.seed,
    )
    counts = synth.generate_corpus(cfg.out, scfg, _load_taxonomy(cfg))
    for split in synth.SPLITS:
        print(f"{split}: {counts[split]} segments -> {Path(cfg.out) / split}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_all(trials=args.trials, seed=args.seed or 0)
    ok = True
    for kind, err in results.items():
        status = "PASS" if err < GRADCHECK_TOLERANCE else "FAIL"
        ok = ok and err < GRADCHECK_TOLERANCE
        print(f"{kind}: max_rel_err={err:.3e} {status}")
    return 0 if ok else 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--data", type=Path, help="corpus root with train/validation/test")
    p.add_argument("--taxonomy", type=Path, help="taxonomy CSV (default: built-in 20 labels)")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--out", type=Path, help="output directory (default: runs)")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_const", const=True,
                   help="strictly serial, bit-reproducible mode (always on; flag recorded)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--proposal-len", dest="proposal_len", type=int)
    p.add_argument("--proposal-stride", dest="proposal_stride", type=int)
    p.add_argument("--cuboid-len", dest="cuboid_len", type=int)
    p.add_argument("--cuboid-size", dest="cuboid_size", type=int)
    p.add_argument("--block-len", dest="block_len", type=int)
    p.add_argument("--map-tiou", dest="map_tiou", type=float)
    p.add_argument("--filters", type=str, help="comma-separated conv filter counts")
    p.add_argument("--hidden", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strokebench",
                                     description="Stroke detection/classification baseline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (("prepare", "build train/validation index CSVs"),
                      ("train", "train a model from prepared indices"),
                      ("infer", "run detection or classification on the test split"),
                      ("eval", "score predictions against ground truth")):
        p = sub.add_parser(name, help=doc)
        _add_common(p)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    _add_common(p)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--samples", type=int, default=10, help="train segments per class")
    p.add_argument("--val-samples", dest="val_samples", type=int, default=3)
    p.add_argument("--test-samples", dest="test_samples", type=int, default=3)
    p.add_argument("--frame-size", dest="frame_size", type=int, default=32)
    p.add_argument("--stroke-len", dest="stroke_len", type=int, default=150)
    p.add_argument("--gap-len", dest="gap_len", type=int, default=300)
    p.add_argument("--strokes-per-video", dest="strokes_per_video", type=int, default=3)
    p.add_argument("--fps", type=float, default=120.0)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        cfg = build_run_config(args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "synth":
            return cmd_synth(cfg, args)
        raise ConfigError(f"unknown command {args.command!r}")
    except StrokebenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
