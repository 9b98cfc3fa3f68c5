"""Command-line entry point: ``fpliveness <subcommand> [options]``.

Exit codes: 0 success, 2 usage error, 3 missing input or artifact,
4 configuration / shape mismatch, 5 data error (unreadable image, empty
dataset, no patches), 6 model file error, 7 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from fpliveness import classifier as clf
from fpliveness import pipeline
from fpliveness.dataset import DatasetError
from fpliveness.image import ImageLoadError
from fpliveness.metrics import NoPatchesError
from fpliveness.synthetic import write_synthetic_dataset

REPORT_HELP = """\
evaluation reports:
  report.json  {"patch": R, "fingerprint": R, "unscored": [source ids]} where each
               R has keys level, tp, tn, fp, fn, far, frr, ace, accuracy
               (rates in percent, null when undefined)
  report.csv   header "level,tp,tn,fp,fn,far,frr,ace,accuracy", one row per level
  report.png   bar chart of FRR/FAR/ACE per level
"""


def _csv_list(cast):
    def parse(s):
        return [cast(v) for v in s.split(",") if v.strip()]
    return parse


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration (flags override --config values)")
    g.add_argument("--config", type=Path, help="JSON run configuration file")
    g.add_argument("--seed", type=int)
    g.add_argument("--sigma", type=int, help="grid cell side in pixels (default 12)")
    g.add_argument("--patch-mult", type=int, dest="patch_multiplier", help="central cells per patch side (default 10)")
    g.add_argument("--pad-mult", type=int, dest="padding_multiplier", help="padding cells per side (default 2)")
    g.add_argument("--noise-factor", type=float, dest="noise_factor", help="whitespace margin t in [0,1] (default 0.1)")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int, dest="batch_size")
    g.add_argument("--learning-rate", type=float, dest="learning_rate")
    g.add_argument("--filters", type=_csv_list(int), dest="block_filters", help="e.g. 64,128,256,512")
    g.add_argument("--dropout", type=_csv_list(float), dest="block_dropout", help="e.g. 0.2,0.3,0.4,0.5")
    g.add_argument("--baseline-threshold", type=float, dest="baseline_threshold",
                   help="score patches by mean intensity instead of a trained model")
    g.add_argument("--out", type=Path, help="output path (meaning depends on the subcommand)")
    g.add_argument("-v", "--verbose", action="store_true")


CONFIG_KEYS = (
    "seed", "sigma", "patch_multiplier", "padding_multiplier", "noise_factor", "epochs", "batch_size",
    "learning_rate", "block_filters", "block_dropout", "baseline_threshold",
)


def _config(args, **paths) -> pipeline.RunConfig:
    overrides = {k: getattr(args, k, None) for k in CONFIG_KEYS}
    overrides.update({k: str(v) if v is not None else None for k, v in paths.items()})
    return pipeline.RunConfig.load(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpliveness",
        description="Fingerprint liveness detection from dense rotation-normalized patches.",
        epilog=REPORT_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset in train|test / live|spoof layout")
    p.add_argument("--n-train", type=int, default=6, help="images per class in train/")
    p.add_argument("--n-test", type=int, default=4, help="images per class in test/")
    p.add_argument("--size", type=int, default=96, help="image side in pixels")
    _common(p)

    p = sub.add_parser("extract", help="densely sample patches from a dataset into a patch store (--out)")
    p.add_argument("--dataset", type=Path, help="dataset root")
    p.add_argument("--workers", type=int, default=1)
    _common(p)

    p = sub.add_parser("train", help="train the patch classifier; --out is the model file")
    p.add_argument("--patches", type=Path, help="patch store written by extract")
    _common(p)

    p = sub.add_parser("classify", help="classify an image or directory; --out writes JSON results")
    p.add_argument("target", type=Path)
    p.add_argument("--model", type=Path)
    _common(p)

    p = sub.add_parser("evaluate", help="patch- and fingerprint-level reports; --out is the report directory",
                       epilog=REPORT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--patches", type=Path)
    p.add_argument("--model", type=Path)
    _common(p)

    p = sub.add_parser("render", help="draw the red/green patch overlay for one image into --out (PNG)")
    p.add_argument("image", type=Path)
    p.add_argument("--model", type=Path)
    _common(p)
    return parser


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "synth":
        if args.out is None:
            raise pipeline.ArtifactMissingError("synth needs --out")
        n = write_synthetic_dataset(args.out, n_train=args.n_train, n_test=args.n_test,
                                    size=args.size, seed=args.seed or 0)
        print(f"wrote {n} images to {args.out}")
    elif cmd == "extract":
        cfg = _config(args, dataset=args.dataset, patches=args.out)
        summary = pipeline.run_extract(cfg, workers=args.workers)
        print(json.dumps(summary))
    elif cmd == "train":
        cfg = _config(args, patches=args.patches, model=args.out)
        _, history = pipeline.run_train(cfg)
        last = history[-1]
        print(f"epochs={last.epoch} loss={last.loss:.4f} accuracy={last.accuracy:.4f} model={cfg.model}")
    elif cmd == "classify":
        cfg = _config(args, model=args.model)
        results = pipeline.run_classify(cfg, args.target)
        doc = [r.to_dict() for r in results]
        if args.out:
            args.out.write_text(json.dumps(doc, indent=2) + "\n")
        for r in results:
            if r.error:
                print(f"{r.source_id}\terror\t{r.error}")
            else:
                print(f"{r.source_id}\t{r.decision.value}\tlive={r.aggregate_live:.3f}\t"
                      f"spoof={r.aggregate_spoof:.3f}\tpatches={r.patch_count}")
        if results and all(r.error for r in results):
            return 5
    elif cmd == "evaluate":
        cfg = _config(args, patches=args.patches, model=args.model, report=args.out)
        patch_rep, fp_rep = pipeline.run_evaluate(cfg)
        print(pipeline.csv_header())
        print(patch_rep.csv_row())
        print(fp_rep.csv_row())
    elif cmd == "render":
        if args.out is None:
            raise pipeline.ArtifactMissingError("render needs --out")
        cfg = _config(args, model=args.model)
        r = pipeline.run_render(cfg, args.image, args.out)
        print(f"{r.source_id}: {r.patch_count} patches, decision={r.decision.value if r.decision else r.error}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    errors = (
        ((pipeline.ArtifactMissingError, FileNotFoundError), 3, "missing"),
        ((pipeline.ShapeMismatchError,), 4, "config"),
        ((clf.ModelFormatError,), 6, "model"),
        ((clf.TrainingDivergedError,), 7, "training"),
        ((DatasetError, ImageLoadError, NoPatchesError), 5, "data"),
        ((ValueError,), 4, "config"),
    )
    try:
        return _dispatch(args)
    except Exception as exc:
        for types, code, category in errors:
            if isinstance(exc, types):
                print(f"error[{category}]: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
