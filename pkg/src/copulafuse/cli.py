"""Command-line pipeline: simulate -> fit/select -> fuse/baseline -> eval."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import logit_fuse, lop_fuse, majority_vote
from .copulas import Family
from .dataio import (
    DatasetManifest,
    ManifestItem,
    canonical_json,
    load_item,
    read_label_map,
    read_manifest,
    write_belief_tensor,
    write_label_map,
    write_manifest,
)
from .errors import ConfigError, DataError, FormatError, UsageError
from .fusion import FitSettings, build_class_models, fuse_dataset, load_model, save_model
from .metrics import ConfusionMatrix, accumulate, class_accuracy, iou, summarize
from .simulate import benchmark, default_scenario, generate, scenario_from_json, scenario_to_json

DEFAULT_SEED = 42


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _header(command, seed):
    print(f"[copulafuse {__version__}] {command} seed={seed}")


def _parse_family(value):
    try:
        return Family.parse(value).value
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _parse_float_list(text, flag):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _r6(x):
    return round(float(x), 6)


def build_parser():
    parser = _Parser(prog="copulafuse", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset on disk")
    p.add_argument("--config", help="scenario config JSON (defaults to the built-in scenario)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="build a class-model file from a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--split", default="train")
    p.add_argument("--criterion", choices=("aic", "bic", "ll"), default="aic")
    p.add_argument("--family", default=None, help="force one copula family for every class")
    p.add_argument("--max-pixels", type=int, default=100_000)
    p.add_argument("--min-pixels", type=int, default=500)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--bandwidth", type=float, default=None, help="override the KDE bandwidth")
    p.add_argument("--q16", action="store_true", help="quantize stored marginals to 16 bits")

    p = sub.add_parser("select", help="fit all candidate families per class and report statistics")
    p.add_argument("manifest")
    p.add_argument("--split", default="train")
    p.add_argument("--criterion", choices=("aic", "bic", "ll"), default="aic")
    p.add_argument("--max-pixels", type=int, default=100_000)
    p.add_argument("--min-pixels", type=int, default=500)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--out-json", default=None)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out", default=None, help="also write the selected model file here")
    p.add_argument("--q16", action="store_true")

    p = sub.add_parser("fuse", help="fuse a split with a fitted model")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, help="output directory for label maps")
    p.add_argument("--scores", action="store_true", help="also write fused posterior tensors")

    p = sub.add_parser("baseline", help="fuse a split with a baseline method")
    p.add_argument("manifest")
    p.add_argument("--method", choices=("lop", "mv", "logit"), required=True)
    p.add_argument("--weights", default=None, help="comma-separated LOP weights")
    p.add_argument("--logit-a", type=float, default=1.0)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score predicted label maps against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted label maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ignore", default=None, help="comma-separated labels to ignore")
    p.add_argument("--zero-absent", action="store_true", help="count absent classes as 0")
    p.add_argument("--per-image", action="store_true")
    p.add_argument("--out-json", default=None)
    p.add_argument("--out-csv", default=None)

    p = sub.add_parser("benchmark", help="run the synthetic benchmark table")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--methods", default=None, help="comma-separated method list")
    p.add_argument("--max-pixels", type=int, default=5000)
    p.add_argument("--out", default=None, help="directory for the markdown/CSV table")
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _load_scenario(args):
    if args.config:
        try:
            with open(args.config) as fh:
                config = scenario_from_json(fh.read())
        except FileNotFoundError:
            raise UsageError(f"--config file not found: {args.config}")
    else:
        config = default_scenario()
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)
    return config


def _cmd_simulate(args):
    config = _load_scenario(args)
    _header("simulate", config.seed)
    os.makedirs(args.out, exist_ok=True)
    images, gts = generate(config)
    classifiers = [f"c{i}" for i in range(config.num_classifiers)]
    splits = {"train": [], "test": []}
    for idx, (tensors, gt) in enumerate(zip(images, gts)):
        split = "train" if idx < config.train_images else "test"
        stem = f"{split}_{idx:04d}"
        tensor_paths = []
        for i, t in enumerate(tensors):
            path = os.path.join(args.out, f"{stem}_{classifiers[i]}.edc")
            write_belief_tensor(t, path)
            tensor_paths.append(path)
        label_path = os.path.join(args.out, f"{stem}_gt.edc")
        write_label_map(gt, label_path)
        splits[split].append(ManifestItem(tensors=tensor_paths, labels=label_path))
    manifest = DatasetManifest(
        classifiers=classifiers, num_classes=config.num_classes, splits=splits
    )
    manifest_path = os.path.join(args.out, "manifest.json")
    write_manifest(manifest, manifest_path)
    with open(os.path.join(args.out, "scenario.json"), "w") as fh:
        fh.write(scenario_to_json(config))
    print(f"wrote {config.images} images ({config.train_images} train) to {args.out}")
    print(f"manifest: {manifest_path}")
    return 0


def _settings_from_args(args):
    return FitSettings(
        criterion=args.criterion,
        force_family=_parse_family(args.family) if getattr(args, "family", None) else None,
        max_pixels_per_class=args.max_pixels,
        min_pixels=args.min_pixels,
        bandwidth=args.bandwidth,
        seed=args.seed,
    )


def _build_from_manifest(manifest_path, split, settings):
    manifest = read_manifest(manifest_path)
    items = manifest.items(split)
    if not items:
        raise UsageError(f"{manifest_path}: split {split!r} lists no images")
    images, gts = [], []
    for item in items:
        tensors, gt = load_item(item)
        images.append(tensors)
        gts.append(gt)
    return manifest, build_class_models(images, gts, settings)


def _print_model_summary(model_set):
    for m, cm in enumerate(model_set.models):
        kde_n = 0 if cm.kdes is None else cm.kdes[0].samples.size
        flag_text = f" flags={cm.flags}" if cm.flags else ""
        print(
            f"class {m}: family={cm.family.value} prior={cm.prior:.6f} "
            f"kde_samples={kde_n}{flag_text}"
        )


def _cmd_fit(args):
    _header("fit", args.seed)
    settings = _settings_from_args(args)
    _, model_set = _build_from_manifest(args.manifest, args.split, settings)
    save_model(model_set, args.out, q16=args.q16)
    _print_model_summary(model_set)
    print(f"model: {args.out}")
    return 0


def _cmd_select(args):
    _header("select", args.seed)
    args.family = None
    settings = _settings_from_args(args)
    _, model_set = _build_from_manifest(args.manifest, args.split, settings)
    classes = []
    csv_lines = ["class,family,ll,aic,bic,chosen"]
    for m, cm in enumerate(model_set.models):
        fits = []
        for rep in cm.fits or []:
            fits.append(
                {
                    "family": rep.family.value,
                    "ll": rep.log_likelihood,
                    "k": rep.k,
                    "n": rep.n,
                    "aic": rep.aic,
                    "bic": rep.bic,
                    "flags": list(rep.flags),
                }
            )
            csv_lines.append(
                f"{m},{rep.family.value},{rep.log_likelihood:.6f},{rep.aic:.6f},"
                f"{rep.bic:.6f},{int(rep.family is cm.family)}"
            )
        classes.append(
            {
                "class": m,
                "criterion": settings.criterion,
                "chosen": cm.family.value,
                "fits": fits,
                "flags": list(cm.flags),
            }
        )
    report = {"criterion": settings.criterion, "classes": classes}
    if args.out_json:
        _write_json(report, args.out_json)
        print(f"selection json: {args.out_json}")
    if args.out_csv:
        with open(args.out_csv, "w") as fh:
            fh.write("\n".join(csv_lines) + "\n")
        print(f"selection csv: {args.out_csv}")
    if args.out:
        save_model(model_set, args.out, q16=args.q16)
        print(f"model: {args.out}")
    _print_model_summary(model_set)
    return 0


def _cmd_fuse(args):
    model_set = load_model(args.model)
    _header("fuse", model_set.seed)
    manifest = read_manifest(args.manifest)
    items = manifest.items(args.split)
    if not items:
        raise UsageError(f"{args.manifest}: split {args.split!r} lists no images")
    os.makedirs(args.out, exist_ok=True)
    total_fallback = 0
    for idx, item in enumerate(items):
        tensors, _ = load_item(item)
        result = fuse_dataset(model_set, tensors, want_scores=args.scores)
        write_label_map(result.labels, os.path.join(args.out, f"pred_{idx:04d}.edc"))
        if args.scores:
            write_belief_tensor(result.scores, os.path.join(args.out, f"scores_{idx:04d}.edc"))
        total_fallback += result.fallback_pixels
    summary = {
        "images": len(items),
        "fallback_pixels": total_fallback,
        "model": os.path.abspath(args.model),
        "split": args.split,
    }
    _write_json(summary, os.path.join(args.out, "fuse_summary.json"))
    print(f"fused {len(items)} images; fallback pixels: {total_fallback}")
    return 0


def _cmd_baseline(args):
    _header("baseline", DEFAULT_SEED)
    manifest = read_manifest(args.manifest)
    items = manifest.items(args.split)
    if not items:
        raise UsageError(f"{args.manifest}: split {args.split!r} lists no images")
    weights = None
    if args.weights is not None:
        weights = _parse_float_list(args.weights, "--weights")
    os.makedirs(args.out, exist_ok=True)
    for idx, item in enumerate(items):
        tensors, _ = load_item(item)
        if args.method == "lop":
            pred = lop_fuse(tensors, weights).argmax(axis=2)
        elif args.method == "mv":
            pred = majority_vote(tensors)
        else:
            pred = logit_fuse(tensors, a=args.logit_a).argmax(axis=2)
        write_label_map(pred, os.path.join(args.out, f"pred_{idx:04d}.edc"))
    print(f"wrote {len(items)} {args.method} label maps to {args.out}")
    return 0


def _cmd_eval(args):
    _header("eval", DEFAULT_SEED)
    manifest = read_manifest(args.manifest)
    items = manifest.items(args.split)
    preds = sorted(
        os.path.join(args.pred, f)
        for f in os.listdir(args.pred)
        if f.startswith("pred_") and f.endswith(".edc")
    )
    if len(preds) != len(items):
        raise UsageError(
            f"{args.pred} holds {len(preds)} predictions but split {args.split!r} has {len(items)} images"
        )
    ignore = frozenset(
        int(v) for v in _parse_float_list(args.ignore, "--ignore")
    ) if args.ignore else frozenset(manifest.ignore)
    cm = ConfusionMatrix.empty(manifest.num_classes)
    per_image = []
    for pred_path, item in zip(preds, items):
        pred = read_label_map(pred_path)
        gt = read_label_map(item.labels)
        if args.per_image:
            one = ConfusionMatrix.empty(manifest.num_classes)
            accumulate(one, pred, gt, ignore)
            per_image.append(
                {"image": os.path.basename(pred_path), **{k: _r6(v) if k != "ignored" else v for k, v in summarize(one, args.zero_absent).items()}}
            )
            cm = cm.merge(one)
        else:
            accumulate(cm, pred, gt, ignore)
    stats = summarize(cm, zero_absent=args.zero_absent)
    report = {k: (_r6(v) if k != "ignored" else v) for k, v in stats.items()}
    if args.per_image:
        report["per_image"] = per_image
    ca_vec, _ = class_accuracy(cm, zero_absent=args.zero_absent)
    iou_vec, _ = iou(cm, zero_absent=args.zero_absent)
    csv_lines = ["class,ca,iou"]
    for c in range(manifest.num_classes):
        ca_txt = "" if np.isnan(ca_vec[c]) else f"{ca_vec[c]:.6f}"
        iou_txt = "" if np.isnan(iou_vec[c]) else f"{iou_vec[c]:.6f}"
        csv_lines.append(f"{c},{ca_txt},{iou_txt}")
    if args.out_json:
        _write_json(report, args.out_json)
        print(f"metrics json: {args.out_json}")
    if args.out_csv:
        with open(args.out_csv, "w") as fh:
            fh.write("\n".join(csv_lines) + "\n")
        print(f"metrics csv: {args.out_csv}")
    print(
        f"oa={report['oa']:.6f} mean_ca={report['mean_ca']:.6f} "
        f"miou={report['miou']:.6f} ignored={report['ignored']}"
    )
    return 0


def _cmd_benchmark(args):
    config = _load_scenario(args)
    _header("benchmark", config.seed)
    methods = None
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    settings = FitSettings(seed=config.seed, max_pixels_per_class=args.max_pixels)
    report = benchmark(config, methods=methods, settings=settings)
    print(report.to_markdown(), end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "benchmark.md"), "w") as fh:
            fh.write(report.to_markdown())
        with open(os.path.join(args.out, "benchmark.csv"), "w") as fh:
            fh.write(report.to_csv())
        print(f"benchmark table: {args.out}/benchmark.md")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "select": _cmd_select,
    "fuse": _cmd_fuse,
    "baseline": _cmd_baseline,
    "eval": _cmd_eval,
    "benchmark": _cmd_benchmark,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, DataError, ConfigError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: missing file {exc.filename}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
