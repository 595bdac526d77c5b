"""Batch pipeline stages: extract, factorize, refine, segment, evaluate,
render, sweep. The CLI is a thin argument layer over these functions; every
stage reads and writes the documented on-disk formats so runs can resume at
any point.

Factorizations live in a DFFH container:

    magic "DFFH" | version u16 LE = 1 | k u32 | rows u32 | cols u32
    | iterations u32 | trace_len u32 | n_images u32
    | per image: id_len u16 LE + id utf8 + h u32 + w u32
    | H rows*k float32 LE | W k*cols float32 LE | trace float64 LE

The embedded image list doubles as the batch layout, so H columns can be
reshaped into per-image heat maps without the original activations.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import heatmaps, refine, segmentation
from .errors import BadMagic, DimMismatch, NoParts, VersionUnsupported
from .heatmaps import HeatMapStack
from .inference import (
    ModelSpec,
    TapModel,
    extract_activations,
    load_activations,
    read_manifest,
    save_activations,
    write_manifest,
)
from .nmf import Factorization, InitScheme, NmfConfig, nmf_factorize
from .refine import RefineConfig
from .segmentation import BinaryMaskSet, PartAnnotation
from .tensors import BatchLayout, LayoutEntry, concat_batch, flatten_activations

_FACT_MAGIC = b"DFFH"
_FACT_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    model_path: str | None = None
    layer_name: str = ""
    input_size: int = 224
    nmf: NmfConfig = field(default_factory=NmfConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    use_refine: bool = False
    percentile: float = 75.0
    cov_threshold: float = 0.5
    k_list: tuple[int, ...] = ()
    layer_list: tuple[str, ...] = ()
    sweep_seeds: int = 1


def save_factorization(
    path: str | Path, f: Factorization, layout: BatchLayout
) -> None:
    h, w = f.H, f.W
    parts = [
        _FACT_MAGIC,
        struct.pack(
            "<HIIIIII",
            _FACT_VERSION,
            f.k,
            h.shape[0],
            w.shape[1],
            f.iterations_run,
            len(f.loss_trace),
            len(layout),
        ),
    ]
    for e in layout:
        ident = e.image_id.encode("utf-8")
        parts.append(struct.pack("<H", len(ident)) + ident)
        parts.append(struct.pack("<II", e.height, e.width))
    parts.append(np.ascontiguousarray(h, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
    parts.append(np.asarray(f.loss_trace, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_factorization(path: str | Path) -> tuple[Factorization, BatchLayout]:
    raw = Path(path).read_bytes()
    if raw[:4] != _FACT_MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    version, k, rows, cols, iters, trace_len, n_images = struct.unpack(
        "<HIIIIII", raw[4:30]
    )
    if version != _FACT_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    pos = 30
    entries = []
    offset = 0
    for _ in range(n_images):
        (id_len,) = struct.unpack("<H", raw[pos : pos + 2])
        pos += 2
        ident = raw[pos : pos + id_len].decode("utf-8")
        pos += id_len
        h_i, w_i = struct.unpack("<II", raw[pos : pos + 8])
        pos += 8
        entries.append(LayoutEntry(ident, h_i, w_i, offset))
        offset += h_i * w_i
    layout = BatchLayout(tuple(entries))
    if layout.total_rows != rows:
        raise DimMismatch(f"{path}: layout rows {layout.total_rows} != H rows {rows}")
    need = rows * k * 4 + k * cols * 4 + trace_len * 8
    if len(raw) - pos != need:
        raise DimMismatch(f"{path}: payload is {len(raw) - pos} bytes, expected {need}")
    h = np.frombuffer(raw, dtype="<f4", count=rows * k, offset=pos).reshape(rows, k)
    pos += rows * k * 4
    w = np.frombuffer(raw, dtype="<f4", count=k * cols, offset=pos).reshape(k, cols)
    pos += k * cols * 4
    trace = np.frombuffer(raw, dtype="<f8", count=trace_len, offset=pos)
    fact = Factorization(
        H=h.copy(), W=w.copy(), loss_trace=tuple(float(x) for x in trace),
        iterations_run=iters,
    )
    return fact, layout


# ---------------------------------------------------------------------------
# stages


def stage_extract(
    spec: ModelSpec, images: list[tuple[str, str]], out_dir: str | Path
) -> Path:
    """Run the model tap over (image_id, image_path) pairs; write DFFA files
    and a manifest. Returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = TapModel(spec.model_path)
    records = []
    for image_id, image_path in images:
        rgb = np.asarray(Image.open(image_path).convert("RGB"))
        tensor = extract_activations(spec, rgb, image_id, model)
        act_path = out_dir / f"{image_id}.dffa"
        save_activations(tensor, act_path)
        records.append(
            {"id": image_id, "image_path": str(image_path), "activation_path": str(act_path)}
        )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, records, spec.layer_name, spec.model_path)
    return manifest_path


def stage_factorize(
    manifest_path: str | Path, cfg: NmfConfig, out_path: str | Path
) -> tuple[Factorization, BatchLayout]:
    manifest = read_manifest(manifest_path)
    blocks = []
    for rec in manifest["images"]:
        t = load_activations(rec["activation_path"], rec["id"])
        blocks.append((flatten_activations(t), t.image_id, t.height, t.width))
    matrix, layout = concat_batch(blocks)
    fact = nmf_factorize(matrix, cfg)
    save_factorization(out_path, fact, layout)
    return fact, layout


def _image_sizes(manifest: dict) -> dict[str, tuple[int, int]]:
    sizes = {}
    for rec in manifest["images"]:
        with Image.open(rec["image_path"]) as im:
            sizes[rec["id"]] = (im.height, im.width)
    return sizes


def upsampled_stacks(
    fact: Factorization, layout: BatchLayout, manifest: dict
) -> list[HeatMapStack]:
    sizes = _image_sizes(manifest)
    stacks = heatmaps.columns_to_heatmaps(fact, layout)
    return [heatmaps.upsample_stack(s, *sizes[s.image_id]) for s in stacks]


def stage_refine(
    fact: Factorization,
    layout: BatchLayout,
    manifest: dict,
    cfg: RefineConfig,
    out_dir: str | Path | None = None,
) -> list[HeatMapStack]:
    """Upsample heat maps to image size and run mean-field refinement against
    each image's grayscale guide. Optionally persists refined stacks as DFFA
    files (h, w, k)."""
    stacks = upsampled_stacks(fact, layout, manifest)
    guides = []
    for rec in manifest["images"]:
        rgb = np.asarray(Image.open(rec["image_path"]).convert("RGB"))
        guides.append(refine.rgb_to_gray(rgb))
    refined = refine.meanfield_refine_batch(stacks, guides, cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .tensors import ActivationTensor

        for s in refined:
            hwk = np.ascontiguousarray(s.maps.transpose(1, 2, 0))
            save_activations(ActivationTensor(s.image_id, hwk), out_dir / f"{s.image_id}.dffa")
    return refined


def load_refined_stacks(dir_path: str | Path, manifest: dict) -> list[HeatMapStack]:
    out = []
    for rec in manifest["images"]:
        t = load_activations(Path(dir_path) / f"{rec['id']}.dffa", rec["id"])
        out.append(HeatMapStack(t.image_id, t.data.transpose(2, 0, 1)))
    return out


def stage_segment(
    stacks: list[HeatMapStack], percentile: float, out_dir: str | Path | None = None
) -> list[BinaryMaskSet]:
    """Binarize every factor across the image set; optionally write 0/255 PNGs."""
    k = stacks[0].k
    mask_sets = []
    for j in range(k):
        maps = {s.image_id: s.maps[j] for s in stacks}
        mask_sets.append(segmentation.binarize_factor(maps, factor_id=j, percentile=percentile))
    if out_dir is not None:
        out_dir = Path(out_dir)
        for ms in mask_sets:
            fdir = out_dir / f"factor_{ms.factor_id}"
            fdir.mkdir(parents=True, exist_ok=True)
            for image_id, mask in ms.masks.items():
                write_mask_png(fdir / f"{image_id}.png", mask)
    return mask_sets


def stage_render(
    stacks: list[HeatMapStack], manifest: dict, out_dir: str | Path
) -> None:
    """Write per-factor grayscale maps (min-max scaled per factor across the
    whole set) and RGBA overlays."""
    out_dir = Path(out_dir)
    maps_dir = out_dir / "maps"
    overlay_dir = out_dir / "overlays"
    maps_dir.mkdir(parents=True, exist_ok=True)
    overlay_dir.mkdir(parents=True, exist_ok=True)
    k = stacks[0].k
    lo = [min(float(s.maps[j].min()) for s in stacks) for j in range(k)]
    hi = [max(float(s.maps[j].max()) for s in stacks) for j in range(k)]
    global_max = max(float(s.maps.max()) for s in stacks)
    images = {rec["id"]: rec["image_path"] for rec in manifest["images"]}
    for s in stacks:
        for j in range(k):
            span = hi[j] - lo[j]
            scaled = (s.maps[j] - lo[j]) / span if span > 0 else np.zeros_like(s.maps[j])
            gray = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)
            Image.fromarray(gray, mode="L").save(maps_dir / f"{s.image_id}_f{j}.png")
        rgb = np.asarray(Image.open(images[s.image_id]).convert("RGB"))
        rgba = heatmaps.render_overlay(rgb, s, global_max=global_max)
        Image.fromarray(rgba, mode="RGBA").save(overlay_dir / f"{s.image_id}.png")


# ---------------------------------------------------------------------------
# masks, parts and boxes on disk


def write_mask_png(path: str | Path, mask: np.ndarray) -> None:
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def read_mask_png(path: str | Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr >= 128).astype(np.uint8)


def load_parts_index(path: str | Path) -> tuple[list[PartAnnotation], set[str]]:
    """Parts index: {"parts": {label: {image_id: mask_path}},
    "background_labels": [label, ...]}. Paths are relative to the index file."""
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    parts = []
    for label in sorted(doc["parts"]):
        masks = {
            image_id: read_mask_png(base / mask_path)
            for image_id, mask_path in doc["parts"][label].items()
        }
        parts.append(PartAnnotation(label, masks))
    return parts, set(doc.get("background_labels", []))


def load_boxes(path: str | Path) -> dict[str, list[segmentation.BBox]]:
    """Ground-truth boxes: {image_id: [[x_min, y_min, x_max, y_max], ...]}."""
    doc = json.loads(Path(path).read_text())
    return {
        image_id: [segmentation.BBox(*box) for box in boxes]
        for image_id, boxes in doc.items()
    }


# ---------------------------------------------------------------------------
# evaluation


def evaluate_parts(
    mask_sets: list[BinaryMaskSet],
    parts: list[PartAnnotation],
    cov_threshold: float,
) -> list[dict]:
    """Per-factor association and dataset-wide IoU rows for the metrics CSV."""
    rows = []
    for ms in mask_sets:
        covs = {}
        for p in parts:
            try:
                covs[p.part_label] = segmentation.coverage(ms, p)
            except segmentation.EmptyPart:  # pragma: no cover - defensive
                continue
        associated = sorted(segmentation.associate_parts(covs, cov_threshold))
        if associated:
            iou = segmentation.dataset_iou(
                ms, [p for p in parts if p.part_label in associated]
            )
        else:
            iou = 0.0
        rows.append(
            {
                "factor": ms.factor_id,
                "parts": ";".join(associated),
                "coverage": ";".join(f"{covs[a]:.6f}" for a in associated),
                "iou": f"{iou:.6f}",
            }
        )
    return rows


def write_parts_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["factor", "parts", "coverage", "iou"])
        writer.writeheader()
        writer.writerows(rows)


def write_corloc_csv(path: str | Path, class_name: str, score: float) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "corloc"])
        writer.writerow([class_name, f"{score:.4f}"])


def average_best_iou(
    mask_sets: list[BinaryMaskSet],
    parts: list[PartAnnotation],
    background_labels: set[str],
) -> float:
    """Mean over factors of each factor's best dataset-wide IoU against any
    non-background part."""
    candidates = [p for p in parts if p.part_label not in background_labels]
    if not candidates:
        raise NoParts("every part is labeled background")
    best = []
    for ms in mask_sets:
        best.append(max(segmentation.dataset_iou(ms, [p]) for p in candidates))
    return float(np.mean(best))


def run_sweep(
    manifests: dict[str, str | Path],
    k_list: tuple[int, ...],
    base_cfg: NmfConfig,
    seeds: int,
    parts_index: str | Path,
    percentile: float,
    out_path: str | Path,
) -> list[dict]:
    """Average best-match IoU for every (layer, k) cell, repeated over seeds.

    ``manifests`` maps a layer name to the extraction manifest for that layer.
    Writes CSV rows layer,k,mean_iou,std_iou and returns them.
    """
    parts, background = load_parts_index(parts_index)
    rows = []
    for layer, manifest_path in manifests.items():
        manifest = read_manifest(manifest_path)
        blocks = []
        for rec in manifest["images"]:
            t = load_activations(rec["activation_path"], rec["id"])
            blocks.append((flatten_activations(t), t.image_id, t.height, t.width))
        matrix, layout = concat_batch(blocks)
        for k in k_list:
            scores = []
            for s in range(seeds):
                cfg = NmfConfig(
                    k=k, max_iters=base_cfg.max_iters, rel_tol=base_cfg.rel_tol,
                    init=base_cfg.init, seed=base_cfg.seed + s,
                )
                fact = nmf_factorize(matrix, cfg)
                stacks = upsampled_stacks(fact, layout, manifest)
                mask_sets = stage_segment(stacks, percentile)
                scores.append(average_best_iou(mask_sets, parts, background))
            rows.append(
                {
                    "layer": layer,
                    "k": k,
                    "mean_iou": f"{np.mean(scores):.6f}",
                    "std_iou": f"{np.std(scores):.6f}",
                }
            )
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["layer", "k", "mean_iou", "std_iou"])
        writer.writeheader()
        writer.writerows(rows)
    return rows
