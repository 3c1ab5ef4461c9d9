"""`sgl-export`: convert framework checkpoints and predictions.

Exit codes: 0 success, 1 usage error, 2 export failure.
"""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportSpec, export_checkpoint, export_predictions


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> _Parser:
    parser = _Parser(prog="sgl-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("checkpoint", help="export a checkpoint as a tensor archive")
    p.add_argument("--in", dest="source", required=True, help="torch checkpoint path")
    p.add_argument("--out", required=True, help="output archive path")
    p.add_argument("--model-id", required=True)
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--hyperparam-id", default="")
    p.add_argument("--prefix-encoder", action="append", default=[],
                   help="tensor-name prefix assigned to the encoder (repeatable)")
    p.add_argument("--prefix-decoder", action="append", default=[],
                   help="tensor-name prefix assigned to the decoder (repeatable)")
    p.add_argument("--exclude", action="append", default=[],
                   help="glob pattern for buffers to leave out (repeatable)")

    p = sub.add_parser("preds", help="quantize .npy predictions to 16-bit PNGs")
    p.add_argument("--in", dest="source", required=True, help="directory of .npy outputs")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except _UsageError as exc:
        print(f"sgl-export: error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "checkpoint":
            out = export_checkpoint(
                ExportSpec(
                    source=args.source,
                    output=args.out,
                    model_id=args.model_id,
                    iteration=args.iteration,
                    hyperparam_id=args.hyperparam_id,
                    encoder_prefixes=args.prefix_encoder,
                    decoder_prefixes=args.prefix_decoder,
                    exclude=args.exclude,
                )
            )
            print(f"wrote archive {out}")
        else:
            fragment = export_predictions(args.source, args.out)
            print(f"wrote predictions and {fragment}")
    except (ExportError, OSError) as exc:
        print(f"sgl-export: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
