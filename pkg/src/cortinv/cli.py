"""``cortinv`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 provenance mismatch.
"""

import argparse
import logging
import sys

from . import pipeline
from .config import ExperimentConfig
from .errors import DataError, ProvenanceError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVENANCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", metavar="PATH", default=S, help="experiment config (JSON)")
    p.add_argument("--jobs", type=int, metavar="N", default=S, help="parallel extraction workers")
    p.add_argument("--seed", type=int, metavar="N", default=S,
                   help="override the synthesis, split and model seeds")
    p.add_argument("--force", action="store_true", default=S,
                   help="overwrite artifacts from a different configuration")
    p.add_argument("--fast", action="store_true", default=S,
                   help="allow multithreaded, non-bit-reproducible training")
    p.add_argument("-v", "--verbose", action="count", default=S)
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="cortinv", parents=[common],
                     description="Cortical-feature speech inversion pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("synth", parents=[common], help="write the synthetic corpus and manifest")
    sub.add_parser("extract", parents=[common], help="compute per-utterance features")
    sub.add_parser("fit-reduce", parents=[common], help="fit the HOSVD basis on the train split")
    p = sub.add_parser("train", parents=[common], help="train regressors over the width grid")
    p.add_argument("--width", type=int, action="append", help="hidden width (repeatable)")
    p = sub.add_parser("eval", parents=[common], help="score the test split")
    p.add_argument("--checkpoint", metavar="PATH")
    p = sub.add_parser("infer", parents=[common], help="invert one WAV file to a TV CSV")
    p.add_argument("wav", metavar="WAV")
    p.add_argument("-o", "--output", metavar="CSV", required=True)
    p.add_argument("--checkpoint", metavar="PATH")
    sub.add_parser("report", parents=[common], help="summarize the workspace artifacts")
    return parser


def _load_config(args):
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else \
        ExperimentConfig.from_dict()
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = cfg.with_overrides({"data": {"seed": seed, "synth": {"seed": seed}},
                                  "model": {"seed": seed}})
    return cfg


def run(args):
    cfg = _load_config(args)
    jobs = getattr(args, "jobs", 1)
    force = getattr(args, "force", False)
    fast = getattr(args, "fast", False)
    if args.command == "synth":
        m = pipeline.cmd_synth(cfg)
        print(f"{len(m)} utterances, splits: "
              + ", ".join(f"{s}={len(m.subset(s))}" for s in ("train", "dev", "test")))
    elif args.command == "extract":
        done = pipeline.cmd_extract(cfg, jobs=jobs, force=force)
        print(f"extracted {len(done)} utterances")
    elif args.command == "fit-reduce":
        basis = pipeline.cmd_fit_reduce(cfg)
        print(f"basis {basis.hash} from {basis.frame_count} frames")
    elif args.command == "train":
        results = pipeline.cmd_train(cfg, widths=args.width, fast=fast)
        for width, (_, rep) in results.items():
            print(f"width {width}: best dev MSE {rep.best_dev_mse:.4f} at epoch {rep.best_epoch}")
    elif args.command == "eval":
        rep = pipeline.cmd_eval(cfg, args.checkpoint)
        print(",".join(rep.row()))
    elif args.command == "infer":
        est = pipeline.cmd_infer(cfg, args.wav, args.output, args.checkpoint)
        print(f"wrote {est.n_frames} frames to {args.output}")
    elif args.command == "report":
        print(pipeline.cmd_report(cfg))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else
                        logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return run(args)
    except ProvenanceError as exc:
        print(f"cortinv: provenance mismatch: {exc}", file=sys.stderr)
        return EXIT_PROVENANCE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"cortinv: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
