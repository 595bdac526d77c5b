"""Command-line entry points for exporting tap models and dumping fixtures."""

from __future__ import annotations

import argparse
import sys

from .export import ExportSpec, TapNotFound, UnknownArchitecture, export_model
from .fixtures import dump_fixtures


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="model-export")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export", help="export a CNN as a TorchScript tap model")
    exp.add_argument("--arch", required=True)
    exp.add_argument("--tap", action="append", required=True, dest="taps")
    exp.add_argument("--out", required=True)
    exp.add_argument("--pretrained", action="store_true")
    exp.add_argument("--input-size", type=int, default=224)
    exp.add_argument("--seed", type=int, default=0)

    dump = sub.add_parser("dump-fixtures", help="run a tap model over images")
    dump.add_argument("--model", required=True)
    dump.add_argument("--tap", required=True)
    dump.add_argument("--out-dir", required=True)
    dump.add_argument("--input-size", type=int, default=224)
    dump.add_argument(
        "images", nargs="*", metavar="ID=PATH", help="image id/path pairs"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            spec = ExportSpec(
                architecture=args.arch,
                taps=tuple(args.taps),
                output_path=args.out,
                pretrained=args.pretrained,
                input_size=args.input_size,
            )
            path = export_model(spec, seed=args.seed)
            print(path)
        else:
            pairs = []
            for item in args.images:
                image_id, _, image_path = item.partition("=")
                if not image_path:
                    raise ValueError(f"expected ID=PATH, got {item!r}")
                pairs.append((image_id, image_path))
            manifest = dump_fixtures(
                args.model, args.tap, pairs, args.out_dir, args.input_size
            )
            print(manifest)
    except (UnknownArchitecture, TapNotFound, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
