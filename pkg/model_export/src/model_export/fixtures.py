"""Run an exported tap model over images and persist DFFA activation files.

The DFFA container and manifest schema here mirror the documented interchange
formats, written independently so this package has no code dependency on the
consumer side:

  DFFA := "DFFA" | u16 LE version=1 | u8 dtype=1 (f32) | u8 ndim=3
          | u32 LE h, w, c | f32 LE row-major payload (h, w, c)

  manifest.json := {"images": [{"id", "image_path", "activation_path"}...],
                    "layer": <tap name>, "model": <model path>}
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def preprocess(image: np.ndarray, size: int) -> torch.Tensor:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected RGB raster (h, w, 3), got {image.shape}")
    if image.shape[:2] != (size, size):
        pil = Image.fromarray(image.astype(np.uint8), mode="RGB")
        image = np.asarray(pil.resize((size, size), Image.BILINEAR))
    x = image.astype(np.float32) / 255.0
    x = (x - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(
        IMAGENET_STD, dtype=np.float32
    )
    return torch.from_numpy(x.transpose(2, 0, 1)[None])


def write_dffa(path: str | Path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError(f"DFFA payload must be (h, w, c), got {data.shape}")
    h, w, c = data.shape
    with open(path, "wb") as f:
        f.write(b"DFFA")
        f.write(struct.pack("<HBBIII", 1, 1, 3, h, w, c))
        f.write(data.tobytes())


def dump_fixtures(
    model_path: str | Path,
    tap: str,
    images: list[tuple[str, str]],
    out_dir: str | Path,
    input_size: int = 224,
) -> Path:
    """Run the tap model over (image_id, image_path) pairs, writing one DFFA
    per image plus a manifest. Returns the manifest path. An empty image list
    produces an empty manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    module = torch.jit.load(str(model_path), map_location="cpu")
    module.eval()
    records = []
    for image_id, image_path in images:
        rgb = np.asarray(Image.open(image_path).convert("RGB"))
        with torch.no_grad():
            outputs = module(preprocess(rgb, input_size))
        if tap not in outputs:
            raise KeyError(f"tap {tap!r} not in model outputs {sorted(outputs)}")
        act = outputs[tap][0].numpy().transpose(1, 2, 0)
        act_path = out_dir / f"{image_id}.dffa"
        write_dffa(act_path, act)
        records.append(
            {
                "id": image_id,
                "image_path": str(image_path),
                "activation_path": str(act_path),
            }
        )
    manifest_path = out_dir / "manifest.json"
    doc = {"images": records, "layer": tap, "model": str(model_path)}
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path
