"""Command-line entry point: ``jmlseg <subcommand> ...``.

Exit status is 0 only when every check the subcommand runs passes; usage
and input errors exit with 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import ptf
from .data import DatasetSpec, generate_synthetic
from .experiment import ExperimentConfig, train
from .labels import boundary_mask
from .metrics import calibration_error, write_bins_csv
from .theory import CURVE_LOSSES, loss_curve, run_verification


def _cmd_verify(args) -> int:
    records = run_verification(seed=args.seed, n_samples=args.samples)
    text = json.dumps(records, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0 if all(r["verdict"] == "PASS" for r in records) else 1


def _cmd_losscurve(args) -> int:
    names = [n.strip() for n in args.loss.split(",") if n.strip()]
    xs, curves = loss_curve(names, args.y, args.n)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["x", *names])
        for i, x in enumerate(xs):
            writer.writerow([f"{x:.10f}", *(f"{curves[n][i]:.12f}" for n in names)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    result = train(cfg, args.out_dir)
    print(json.dumps({k: round(float(v), 6) for k, v in result.metrics.items()}, sort_keys=True))
    return 0


def _cmd_calibrate(args) -> int:
    probs = ptf.read(args.pred).astype(np.float64)
    labels = ptf.read(args.labels)
    if not np.array_equal(labels, np.round(labels)):
        raise ValueError("label tensor must hold integer class indices")
    labels = labels.astype(np.int64)
    if probs.ndim == 3:
        probs = probs[None]
    if labels.ndim == 2:
        labels = labels[None]
    n_classes = probs.shape[1]
    # float32 storage: renormalise before the simplex check
    probs = probs / probs.sum(axis=1, keepdims=True)
    report = {}
    for kind in ("ECE", "SCE"):
        report[kind.lower()] = calibration_error(probs, labels, args.bins, kind)[0]
    bmask = boundary_mask(labels, args.boundary_k, n_classes=n_classes)
    if bmask.any():
        report["bece"], bins = calibration_error(probs, labels, args.bins, mask=bmask)
        report["bsce"] = calibration_error(probs, labels, args.bins, "SCE", mask=bmask)[0]
    else:
        report["bece"] = report["bsce"] = None
    report["boundary_pixels"] = int(bmask.sum())
    if args.bins_csv:
        write_bins_csv(args.bins_csv, calibration_error(probs, labels, args.bins)[1])
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_gen_data(args) -> int:
    spec_dict = json.loads(Path(args.spec).read_text()) if args.spec else {}
    spec = DatasetSpec(**spec_dict)
    data = generate_synthetic(spec, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ptf.write(out / "features.ptf", data.features)
    ptf.write(out / "labels.ptf", data.labels)
    ptf.write(out / "clean_labels.ptf", data.clean_labels)
    (out / "spec.json").write_text(json.dumps({"seed": args.seed, **asdict(spec)},
                                              indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(data)} images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jmlseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the metric-property verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100_000, help="samples per axiom check")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("losscurve", help="single-pixel loss sweep as CSV")
    p.add_argument("--loss", required=True,
                   help=f"comma-separated names from: {', '.join(CURVE_LOSSES)}")
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--n", type=int, default=101, help="grid size")
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=_cmd_losscurve)

    p = sub.add_parser("train", help="train a segmenter from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", help="calibration errors of stored predictions")
    p.add_argument("--pred", required=True, help="PTF probabilities (N, C, H, W)")
    p.add_argument("--labels", required=True, help="PTF label maps (N, H, W)")
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--boundary-k", type=int, default=3)
    p.add_argument("--bins-csv", help="write the ECE bin table here")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as PTF files")
    p.add_argument("--spec", help="JSON file of dataset settings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
