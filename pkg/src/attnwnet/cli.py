"""Command-line entry point: ``attnwnet <subcommand> ...``.

On failure a single line ``error: <kind>: <message>`` goes to stderr and the
exit status is 1 (argparse usage errors exit with 2).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .evalseg import MetricsReport, merge_clusters, write_report
from .pipeline import refine, segment, train
from .volume import (
    Volume, generate_phantom, load_labels, load_phantom_specs, load_volume, save_labels,
    save_volume,
)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_phantom_gen(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, spec in load_phantom_specs(args.spec):
        vol, lab = generate_phantom(spec)
        save_volume(vol, out / f"{name}.vol3")
        save_labels(lab, out / f"{name}.lbl3")
        print(out / f"{name}.vol3")


def cmd_train(args):
    print(train(load_config(args.config)))


def _save_assignment(q, labels, out: Path, prefix: str):
    for k in range(q.shape[0]):
        save_volume(Volume(q[k]), out / f"{prefix}prob_{k:02d}.vol3")
    save_labels(labels, out / f"{prefix}labels.lbl3")


def cmd_segment(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vol = load_volume(args.input)
    p, labels = segment(args.ckpt, vol)
    save_volume(vol, out / "input.vol3")
    _save_assignment(p, labels, out, "")
    print(out / "labels.lbl3")


def cmd_refine(args):
    cfg = load_config(args.config)
    src = Path(args.input)
    out = Path(args.out_dir) if args.out_dir else src
    out.mkdir(parents=True, exist_ok=True)
    probs = sorted(src.glob("prob_*.vol3"))
    if not probs:
        raise FileNotFoundError(f"no prob_*.vol3 files in {src}")
    p = np.stack([load_volume(f).data.astype(np.float64) for f in probs])
    p /= p.sum(axis=0, keepdims=True)
    q, labels = refine(p, load_volume(src / "input.vol3"), cfg.crf)
    _save_assignment(q, labels, out, "refined_")
    print(out / "refined_labels.lbl3")


def cmd_evaluate(args):
    if len(args.pred) != len(args.truth):
        raise ValueError("--pred and --truth need the same number of files")
    report = MetricsReport()
    for pred, truth in zip(args.pred, args.truth):
        t = load_labels(truth).labels
        mask = np.isin(t, args.truth_labels) if args.truth_labels else t > 0
        report.add(Path(pred).stem if len(args.pred) == 1 else str(pred),
                   merge_clusters(load_labels(pred), args.clusters), mask)
    csv_path, json_path = write_report(report, args.report)
    print(json.dumps(report.aggregates()))


def cmd_experiment(args):
    from .experiment import run_desk_experiment
    result = run_desk_experiment(args.work_dir, seed=args.seed, steps=args.steps)
    print(json.dumps(result, indent=2))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="attnwnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log every training step")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="render phantom volumes and label maps from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("train", help="train a W-Net from a TOML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="encoder-only inference on one .vol3")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("refine", help="dense-CRF refinement of a segment output directory")
    p.add_argument("--config", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="merge clusters and score IoU / Dice")
    p.add_argument("--pred", required=True, nargs="+")
    p.add_argument("--truth", required=True, nargs="+")
    p.add_argument("--clusters", required=True, type=_int_list)
    p.add_argument("--truth-labels", type=_int_list, default=None,
                   help="truth labels forming the ROI (default: every non-zero label)")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="desk-scale train/segment/refine/evaluate on phantoms")
    p.add_argument("--work-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=300)
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as e:  # noqa: BLE001 - surface every failure as one parseable line
        msg = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
