"""Command-line entry point: ``vmixer {synth,train,predict,eval,gradcheck,shapes}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
The default BLAS/OpenMP thread count comes from ``VMIXER_NUM_THREADS``
(overridden by ``--threads``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgdoc
from .engine import ShapeError
from .inference import predict_labels, sliding_window_predict
from .io.checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint, schedule_from_manifest
from .io.volume import VolumeFormatError, read_volume, write_volume
from .metrics import cell_count_report, evaluate
from .model import ConfigError, build_model, stage_shapes
from .postprocess import NoSeedsError, instance_watershed
from .training import PlacementError, TrainingDiverged, VolumeSample, synth_dataset, train
from .verification import format_results, run_gradcheck_suite

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "VMIXER_NUM_THREADS"

logger = logging.getLogger("vmixer")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dims(text: str) -> tuple:
    parts = text.replace("x", ",").split(",")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected H,W,D integers, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive extents, got {text!r}")
    return dims


def _spacing(text: str) -> tuple:
    try:
        sp = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected sx,sy,sz reals, got {text!r}") from None
    if len(sp) != 3 or min(sp) <= 0:
        raise argparse.ArgumentTypeError(f"expected three positive spacings, got {text!r}")
    return sp


def _read(path, flag: str):
    try:
        return read_volume(path)
    except FileNotFoundError:
        raise DataError(f"{flag}: no such file {path}") from None
    except VolumeFormatError as exc:
        raise DataError(f"{flag}: {path}: {exc}") from None


def _load_doc(args) -> dict:
    try:
        cfgdoc.load_config(args.config)
    except FileNotFoundError:
        raise DataError(f"--config: no such file {args.config}") from None
    except cfgdoc.ConfigDocumentError as exc:
        raise DataError(f"--config {args.config}: {exc}") from None
    try:
        return cfgdoc.load_config(args.config, args.set or [])
    except cfgdoc.ConfigDocumentError as exc:
        raise UsageError(f"--set: {exc}") from None


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    try:
        samples = synth_dataset(args.seed, args.count, args.dims, args.classes, in_channels=args.channels)
    except PlacementError as exc:
        raise DataError(f"--dims/--classes: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        write_volume(out / f"image_{i:03d}.vvol", s.image, args.spacing)
        write_volume(out / f"label_{i:03d}.vvol", s.labels, args.spacing)
    print(f"wrote {len(samples)} image/label pairs to {out}")
    return EXIT_OK


def _load_dataset(directory, model_config) -> list:
    d = Path(directory)
    images = sorted(d.glob("image_*.vvol"))
    if not images:
        raise DataError(f"--data: no image_*.vvol files in {d}")
    samples = []
    for img_path in images:
        lab_path = d / img_path.name.replace("image_", "label_")
        img, lab = _read(img_path, "--data"), _read(lab_path, "--data")
        if img.data.dtype != np.float32 or img.channels != model_config.input_channels:
            raise DataError(f"--data: {img_path} must be f32 with {model_config.input_channels} channel(s)")
        try:
            samples.append(VolumeSample(img.data, lab.labels(), img.spacing))
        except (ValueError, VolumeFormatError) as exc:
            raise DataError(f"--data: {lab_path}: {exc}") from None
    return samples


def cmd_train(args) -> int:
    doc = _load_doc(args)
    if args.seed is not None:
        doc["training"]["seed"] = args.seed
        doc["model"]["seed"] = args.seed
        doc["data"]["seed"] = args.seed
    try:
        mcfg = cfgdoc.model_config(doc)
        model = build_model(mcfg)
    except (ConfigError, ShapeError, ValueError) as exc:
        raise DataError(f"model config: {exc}") from None
    t = doc["training"]
    schedule = cfgdoc.schedule(doc)
    optimizer = cfgdoc.optimizer(doc)
    start_epoch = 0
    if args.resume:
        try:
            model, optimizer, start_epoch = load_checkpoint(args.resume, mcfg)
            schedule = schedule_from_manifest(read_manifest(args.resume))
        except FileNotFoundError:
            raise DataError(f"--resume: no such file {args.resume}") from None
        except CheckpointError as exc:
            raise DataError(f"--resume: {args.resume}: {exc}") from None
    if args.data:
        dataset = _load_dataset(args.data, mcfg)
    else:
        d = doc["data"]
        try:
            dataset = synth_dataset(d["seed"], d["count"], mcfg.training_volume_dims, mcfg.num_classes,
                                    tuple(d["radius_range"]), mcfg.input_channels)
        except PlacementError as exc:
            raise DataError(f"data config: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    history_path = out / "history.jsonl"

    def on_epoch(epoch, record):
        with open(history_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        if (epoch + 1) % t["checkpoint_every"] == 0:
            save_checkpoint(model, optimizer, epoch + 1, out / f"checkpoint_{epoch + 1:04d}.vckp", schedule)
        print(f"epoch {epoch:4d}  loss {record['mean_loss']:.5f}  lr {record['lr']:.6g}")

    if not args.resume and history_path.exists():
        history_path.unlink()
    try:
        train(model, dataset, schedule, cfgdoc.deep_supervision(doc), t["epochs"], t["iters_per_epoch"],
              seed=t["seed"], batch_size=t["batch_size"], optimizer=optimizer, start_epoch=start_epoch,
              on_epoch=on_epoch, grad_clip=t["grad_clip"])
    except TrainingDiverged as exc:
        raise NumericFailure(str(exc)) from None
    except (ValueError, ShapeError) as exc:
        raise DataError(f"training data: {exc}") from None
    save_checkpoint(model, optimizer, t["epochs"], out / "checkpoint_last.vckp", schedule)
    print(f"saved {out / 'checkpoint_last.vckp'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        model, _, _ = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"--checkpoint: no such file {args.checkpoint}") from None
    except CheckpointError as exc:
        raise DataError(f"--checkpoint: {args.checkpoint}: {exc}") from None
    vol = _read(args.input, "--input")
    if vol.data.dtype != np.float32:
        raise DataError(f"--input: {args.input} must hold f32 intensities")
    try:
        probs = sliding_window_predict(model, vol.data, args.overlap)
    except ShapeError as exc:
        raise DataError(f"--input: {args.input}: {exc}") from None
    if not np.isfinite(probs).all():
        raise NumericFailure("non-finite probabilities")
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_volume(f"{prefix}_probs.vvol", probs, vol.spacing)
    write_volume(f"{prefix}_labels.vvol", predict_labels(probs), vol.spacing)
    written = [f"{prefix}_probs.vvol", f"{prefix}_labels.vvol"]
    if args.instances:
        K = probs.shape[0]
        b = args.boundary_class if args.boundary_class is not None else K - 1
        if not 0 < b < K:
            raise UsageError(f"--boundary-class must lie in [1, {K - 1}], got {b}")
        try:
            inst = instance_watershed(1.0 - probs[0], probs[b], args.fg_thresh, args.seed_thresh)
        except NoSeedsError as exc:
            raise DataError(f"--instances: {exc}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        write_volume(f"{prefix}_instances.vvol", inst, vol.spacing)
        written.append(f"{prefix}_instances.vvol")
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, gt = _read(args.pred, "--pred"), _read(args.gt, "--gt")
    try:
        p, g = pred.labels(), gt.labels()
    except VolumeFormatError as exc:
        raise DataError(str(exc)) from None
    if p.shape != g.shape:
        raise DataError(f"--pred {args.pred} has dims {p.shape}, --gt {args.gt} has {g.shape}")
    if args.tau <= 0:
        raise UsageError(f"--tau must be positive, got {args.tau}")
    spacing = args.spacing if args.spacing is not None else gt.spacing
    if args.cell_count:
        doc = cell_count_report(p, g, metric=args.metric)
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK
    K = args.num_classes if args.num_classes is not None else int(max(p.max(), g.max())) + 1
    report = evaluate(p, g, K, spacing, args.tau)
    print(report.to_json() if args.json else report.to_table(per_class=args.per_class), end="" if not args.json else "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.seeds < 1:
        raise UsageError(f"--seeds must be positive, got {args.seeds}")
    results = run_gradcheck_suite(args.seeds, include_model=not args.no_model)
    print(format_results(results), end="")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericFailure("gradient check failed: " + ", ".join(failed))
    return EXIT_OK


def cmd_shapes(args) -> int:
    doc = _load_doc(args)
    try:
        mcfg = cfgdoc.model_config(doc)
        shapes = stage_shapes(mcfg, args.input_dims)
    except (ConfigError, ShapeError) as exc:
        raise DataError(str(exc)) from None
    dims = args.input_dims or mcfg.training_volume_dims
    print(f"input {mcfg.input_channels} x {dims[0]} x {dims[1]} x {dims[2]}")
    print(f"{'stage':>5}  {'block':<5}  {'channels':>8}  dims")
    for s, kind in zip(shapes, mcfg.block_kinds):
        print(f"{s.stage:>5}  {kind:<5}  {s.channels:>8}  {s.dims[0]} x {s.dims[1]} x {s.dims[2]}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vmixer", description="Volumetric local-attention / global-mixer segmentation toolkit.")
    p.add_argument("--threads", type=int, default=None, help=f"BLAS thread count (default ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic ellipsoid dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--dims", type=_dims, default=(32, 32, 16))
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--channels", type=int, default=1)
    s.add_argument("--spacing", type=_spacing, default=(1.0, 1.0, 1.0))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    def config_flags(sp):
        sp.add_argument("--config", help="JSON config document")
        sp.add_argument("--set", action="append", metavar="PATH=VALUE", help="dotted override, e.g. training.epochs=2")

    t = sub.add_parser("train", help="train from a config document")
    config_flags(t)
    t.add_argument("--data", help="directory of image_*.vvol / label_*.vvol pairs (default: synthesise)")
    t.add_argument("--out", required=True, help="run directory for checkpoints and history")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--seed", type=int, default=None, help="overrides model, data and training seeds")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="sliding-window prediction for one volume")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out", required=True, help="output prefix; writes PREFIX_probs/labels[/instances].vvol")
    pr.add_argument("--overlap", type=float, default=0.5)
    pr.add_argument("--instances", action="store_true", help="run watershed instance extraction")
    pr.add_argument("--boundary-class", type=int, default=None, help="class index of the boundary map (default K-1)")
    pr.add_argument("--fg-thresh", type=float, default=0.5)
    pr.add_argument("--seed-thresh", type=float, default=0.5)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="compare a label volume against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--num-classes", type=int, default=None)
    e.add_argument("--tau", type=float, default=1.0)
    e.add_argument("--spacing", type=_spacing, default=None, help="override the ground truth's spacing")
    e.add_argument("--per-class", action="store_true")
    e.add_argument("--json", action="store_true")
    e.add_argument("--cell-count", action="store_true", help="treat volumes as instance labels")
    e.add_argument("--metric", choices=["JI", "DSC"], default="JI")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    g.add_argument("--seeds", type=int, default=20)
    g.add_argument("--no-model", action="store_true", help="skip the end-to-end micro model")
    g.set_defaults(func=cmd_gradcheck)

    sh = sub.add_parser("shapes", help="print the stage shape table")
    config_flags(sh)
    sh.add_argument("--input-dims", type=_dims, default=None)
    sh.set_defaults(func=cmd_shapes)
    return p


def _thread_count(args) -> int | None:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError(f"--threads must be positive, got {args.threads}")
        return args.threads
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be positive, got {n}")
    return n


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        with threadpool_limits(limits=_thread_count(args)):
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
