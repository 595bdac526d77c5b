"""Command-line front-end.

Subcommands: extract, factorize, refine, segment, eval-parts, eval-corloc,
render, sweep, run. Every flag can also come from a JSON config file
(--config); explicit flags win. Exit codes: 0 ok, 2 config error, 3 data
error, 4 numeric failure. FEATUREFACTOR_THREADS caps worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import errors, pipeline
from .inference import ModelSpec
from .nmf import InitScheme, NmfConfig
from .refine import RefineConfig

_CONFIG_ERRORS = (
    errors.RankTooLarge,
    ValueError,
    KeyError,
)
_DATA_ERRORS = (
    errors.BadMagic,
    errors.VersionUnsupported,
    errors.DimMismatch,
    errors.NonNegativityViolated,
    errors.ChannelMismatch,
    errors.EmptyBatch,
    errors.LayoutMismatch,
    errors.SizeMismatch,
    errors.EmptySet,
    errors.EmptyPart,
    errors.MissingGroundTruth,
    errors.NoParts,
    errors.LayerNotFound,
    errors.ModelLoadError,
    FileNotFoundError,
)
_NUMERIC_ERRORS = (
    errors.DegenerateInput,
    errors.EmptyUnion,
    errors.NoForeground,
    errors.ShapeMismatch,
    FloatingPointError,
)


def _thread_count() -> int | None:
    raw = os.environ.get("FEATUREFACTOR_THREADS")
    return int(raw) if raw else None


def _nmf_config(args) -> NmfConfig:
    return NmfConfig(
        k=args.k,
        max_iters=args.max_iters,
        rel_tol=args.rel_tol,
        init=InitScheme(args.init),
        seed=args.seed,
    )


def _refine_config(args) -> RefineConfig:
    return RefineConfig(
        iterations=args.refine_iterations,
        radius=args.radius,
        epsilon=args.epsilon,
        pairwise_weight=args.pairwise_weight,
        background_level=args.background_level,
    )


def _collect_images(args) -> list[tuple[str, str]]:
    pairs = []
    for p in args.images:
        p = Path(p)
        if not p.exists():
            raise FileNotFoundError(f"image {p} does not exist")
        pairs.append((p.stem, str(p)))
    if not pairs:
        raise ValueError("no input images given")
    return pairs


def _load_manifest_stacks(args):
    fact, layout = pipeline.load_factorization(args.factorization)
    manifest = pipeline.read_manifest(args.manifest)
    if getattr(args, "refined", None):
        stacks = pipeline.load_refined_stacks(args.refined, manifest)
    else:
        stacks = pipeline.upsampled_stacks(fact, layout, manifest)
    return fact, layout, manifest, stacks


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_extract(args) -> None:
    threads = _thread_count()
    if threads:
        import torch

        torch.set_num_threads(threads)
    spec = ModelSpec(
        model_path=args.model,
        layer_name=args.layer,
        input_size=args.input_size,
    )
    manifest = pipeline.stage_extract(spec, _collect_images(args), args.out)
    print(f"extract: wrote {manifest}")


def _cmd_factorize(args) -> None:
    fact, _ = pipeline.stage_factorize(args.manifest, _nmf_config(args), args.out)
    print(
        f"factorize: k={fact.k} iterations={fact.iterations_run} "
        f"final_loss={fact.final_loss:.6g} -> {args.out}"
    )


def _cmd_refine(args) -> None:
    fact, layout = pipeline.load_factorization(args.factorization)
    manifest = pipeline.read_manifest(args.manifest)
    pipeline.stage_refine(fact, layout, manifest, _refine_config(args), args.out)
    print(f"refine: wrote refined maps to {args.out}")


def _cmd_segment(args) -> None:
    _, _, _, stacks = _load_manifest_stacks(args)
    pipeline.stage_segment(stacks, args.percentile, args.out)
    print(f"segment: wrote masks to {args.out}")


def _cmd_render(args) -> None:
    _, _, manifest, stacks = _load_manifest_stacks(args)
    pipeline.stage_render(stacks, manifest, args.out)
    print(f"render: wrote maps and overlays to {args.out}")


def _cmd_eval_parts(args) -> None:
    _, _, _, stacks = _load_manifest_stacks(args)
    mask_sets = pipeline.stage_segment(stacks, args.percentile)
    parts, _ = pipeline.load_parts_index(args.parts)
    rows = pipeline.evaluate_parts(mask_sets, parts, args.cov_threshold)
    pipeline.write_parts_csv(args.out, rows)
    print(f"eval-parts: wrote {args.out}")


def _cmd_eval_corloc(args) -> None:
    from .segmentation import corloc, largest_component_bbox

    _, _, _, stacks = _load_manifest_stacks(args)
    mask_sets = pipeline.stage_segment(stacks, args.percentile)
    ms = mask_sets[args.factor]
    preds = {
        image_id: largest_component_bbox(mask) for image_id, mask in ms.masks.items()
    }
    gts = pipeline.load_boxes(args.boxes)
    score = corloc(preds, gts)
    pipeline.write_corloc_csv(args.out, args.class_name, score)
    print(f"eval-corloc: {args.class_name} = {score:.4f}")


def _cmd_sweep(args) -> None:
    manifests = {}
    for item in args.manifests:
        layer, _, path = item.partition("=")
        if not path:
            manifest = pipeline.read_manifest(layer)
            manifests[manifest["layer"]] = layer
        else:
            manifests[layer] = path
    rows = pipeline.run_sweep(
        manifests,
        tuple(args.k_list),
        _nmf_config(args),
        args.sweep_seeds,
        args.parts,
        args.percentile,
        args.out,
    )
    print(f"sweep: wrote {len(rows)} rows to {args.out}")


def _cmd_run(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stage = "extract"
    try:
        spec = ModelSpec(args.model, args.layer, input_size=args.input_size)
        manifest_path = pipeline.stage_extract(spec, _collect_images(args), out / "activations")

        stage = "factorize"
        fact_path = out / "factorization.dff"
        fact, layout = pipeline.stage_factorize(manifest_path, _nmf_config(args), fact_path)
        manifest = pipeline.read_manifest(manifest_path)

        stage = "refine"
        if args.refine:
            stacks = pipeline.stage_refine(
                fact, layout, manifest, _refine_config(args), out / "refined"
            )
        else:
            stacks = pipeline.upsampled_stacks(fact, layout, manifest)

        stage = "render"
        pipeline.stage_render(stacks, manifest, out)

        stage = "segment"
        mask_sets = pipeline.stage_segment(stacks, args.percentile, out / "masks")

        if args.parts:
            stage = "eval-parts"
            parts, _ = pipeline.load_parts_index(args.parts)
            rows = pipeline.evaluate_parts(mask_sets, parts, args.cov_threshold)
            pipeline.write_parts_csv(out / "metrics.csv", rows)
        if args.boxes:
            stage = "eval-corloc"
            from .segmentation import corloc, largest_component_bbox

            ms = mask_sets[args.factor]
            preds = {i: largest_component_bbox(m) for i, m in ms.masks.items()}
            score = corloc(preds, pipeline.load_boxes(args.boxes))
            pipeline.write_corloc_csv(out / "corloc.csv", args.class_name, score)
    except Exception as exc:
        raise StageFailure(stage, exc) from exc
    print(f"run: pipeline complete in {out}")


class StageFailure(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# parser


def _add_nmf_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--max-iters", type=int, default=400)
    p.add_argument("--rel-tol", type=float, default=1e-4)
    p.add_argument("--init", choices=[s.value for s in InitScheme],
                   default=InitScheme.SEEDED_UNIFORM.value)
    p.add_argument("--seed", type=int, default=0)


def _add_refine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--refine-iterations", type=int, default=10)
    p.add_argument("--radius", type=int, default=30)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--pairwise-weight", type=float, default=3.0)
    p.add_argument("--background-level", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featurefactor",
        description="Factorize CNN activations into concept heat maps, "
        "segmentations and localizations.",
    )
    parser.add_argument("--config", help="JSON file supplying any flag; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run a model tap over images, dump DFFA files")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("factorize", help="NMF over a batch manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_nmf_flags(p)
    p.set_defaults(func=_cmd_factorize)

    p = sub.add_parser("refine", help="mean-field refinement of heat maps")
    p.add_argument("--factorization", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_refine_flags(p)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("segment", help="binarize heat maps into masks")
    p.add_argument("--factorization", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--refined", help="directory of refined DFFA maps")
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("render", help="write factor maps and overlays")
    p.add_argument("--factorization", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--refined")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval-parts", help="coverage/IoU metrics against part masks")
    p.add_argument("--factorization", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--refined")
    p.add_argument("--parts", required=True)
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--cov-threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval_parts)

    p = sub.add_parser("eval-corloc", help="CorLoc against ground-truth boxes")
    p.add_argument("--factorization", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--refined")
    p.add_argument("--boxes", required=True)
    p.add_argument("--factor", type=int, default=0)
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--class-name", default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval_corloc)

    p = sub.add_parser("sweep", help="average best-match IoU over layers and k")
    p.add_argument("--manifests", nargs="+", required=True,
                   help="layer=manifest.json pairs (or bare manifest paths)")
    p.add_argument("--k-list", type=int, nargs="+", required=True)
    p.add_argument("--sweep-seeds", type=int, default=1)
    p.add_argument("--parts", required=True)
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--out", required=True)
    _add_nmf_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("run", help="full pipeline: extract through evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--refine", action="store_true")
    p.add_argument("--parts")
    p.add_argument("--boxes")
    p.add_argument("--factor", type=int, default=0)
    p.add_argument("--class-name", default="all")
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--cov-threshold", type=float, default=0.5)
    _add_nmf_flags(p)
    _add_refine_flags(p)
    p.set_defaults(func=_cmd_run)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Prepend config-file values as defaults: config entries become flags
    inserted before the user's flags, so explicit flags take precedence."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    config_path = argv[idx + 1]
    doc = json.loads(Path(config_path).read_text())
    injected = []
    for key, value in doc.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                injected.append(flag)
        elif isinstance(value, list):
            injected.append(flag)
            injected.extend(str(v) for v in value)
        else:
            injected.extend([flag, str(value)])
    # keep subcommand first, then injected config, then explicit flags
    rest = [a for i, a in enumerate(argv) if i not in (idx, idx + 1)]
    if rest and not rest[0].startswith("-"):
        return [rest[0]] + injected + rest[1:]
    return injected + rest


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
    except (OSError, json.JSONDecodeError, IndexError) as exc:
        print(f"error: cannot read config file: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, _NUMERIC_ERRORS):
            return 4
        if isinstance(cause, _CONFIG_ERRORS):
            return 2
        return 3
    except _NUMERIC_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except _CONFIG_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
