"""Command-line entry point: one export per invocation.

Exit codes: 0 success, 1 usage error, 2 export failure (model, dataset, or
I/O). Failures print a single ``error: <Type>: <message>`` line on stderr.
Set ``ITSM_EXPORT_LOG`` for progress logging.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .errors import ExporterError
from .export import ExportJob, export_dataset
from .models import MODELS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _setup_logging() -> None:
    level = os.environ.get("ITSM_EXPORT_LOG", "").upper()
    if level:
        logging.basicConfig(level=getattr(logging, level, logging.INFO))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="itsm-export", description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True, choices=sorted(MODELS))
    parser.add_argument("--dataset", required=True, help="VOC-layout dataset root")
    parser.add_argument("--split", default="val")
    parser.add_argument("--out", required=True, help="output bundle directory")
    parser.add_argument("--checkpoint", type=Path, help="released weights for --model")
    parser.add_argument(
        "--attention-arch", choices=sorted(MODELS),
        help="separate tower supplying the exported attention (e.g. dino-b-16)",
    )
    parser.add_argument("--attention-checkpoint", type=Path)
    parser.add_argument(
        "--random-init", action="store_true",
        help="allow seeded untrained towers instead of checkpoints (pipeline tests)",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--limit", type=int, help="export only the first N samples")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        job = ExportJob(
            model=args.model,
            dataset=Path(args.dataset),
            split=args.split,
            out=Path(args.out),
            checkpoint=args.checkpoint,
            attention_arch=args.attention_arch,
            attention_checkpoint=args.attention_checkpoint,
            random_init=args.random_init,
            seed=args.seed,
            device=args.device,
            batch_size=args.batch_size,
            limit=args.limit,
        )
        manifest = export_dataset(job)
    except _UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExporterError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"export[{args.model}]: wrote {manifest}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
