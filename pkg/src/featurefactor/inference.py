"""Activation acquisition: run a serialized network up to a named tap, or
load pre-dumped activation files.

Models are TorchScript archives whose forward maps a preprocessed image
batch (1, 3, H, W) to a dict of named tap outputs, each (1, c, h, w) and
non-negative (post-ReLU). Pre-activation taps are rejected, not clamped.

Activations on disk use the DFFA container:

    magic "DFFA" (4 bytes) | version u16 LE = 1 | dtype u8 = 1 (float32)
    | ndim u8 = 3 | dims 3 x u32 LE (h, w, c)
    | payload h*w*c float32 LE, row-major

A JSON batch manifest {"images": [{"id", "image_path", "activation_path"}],
"layer": ..., "model": ...} ties activation files back to their sources.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadMagic,
    DimMismatch,
    LayerNotFound,
    ModelLoadError,
    NonNegativityViolated,
    VersionUnsupported,
)
from .tensors import ActivationTensor

_MAGIC = b"DFFA"
_VERSION = 1
_DTYPE_F32 = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ModelSpec:
    model_path: str
    layer_name: str
    input_size: int = 224
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD


def preprocess_image(image: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Resize (bilinear, skipped when already at size) and normalize to
    (1, 3, s, s) float32 with (x/255 - mean) / std per channel."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected RGB raster (h, w, 3), got {image.shape}")
    s = spec.input_size
    if image.shape[:2] != (s, s):
        pil = Image.fromarray(image.astype(np.uint8), mode="RGB")
        image = np.asarray(pil.resize((s, s), Image.BILINEAR))
    x = image.astype(np.float32) / 255.0
    x = (x - np.asarray(spec.mean, dtype=np.float32)) / np.asarray(spec.std, dtype=np.float32)
    return x.transpose(2, 0, 1)[None]


class TapModel:
    """A loaded TorchScript model exposing named activation taps."""

    def __init__(self, model_path: str):
        import torch

        try:
            self._module = torch.jit.load(model_path, map_location="cpu")
        except Exception as exc:  # torch raises several unrelated types here
            raise ModelLoadError(f"cannot load model {model_path!r}: {exc}") from exc
        self._module.eval()
        self._torch = torch

    def run(self, batch: np.ndarray, layer_name: str) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            out = self._module(torch.from_numpy(np.ascontiguousarray(batch)))
        if not isinstance(out, dict):
            raise ModelLoadError("model forward must return a dict of named taps")
        if layer_name not in out:
            raise LayerNotFound(
                f"layer {layer_name!r} not in model taps {sorted(out)}"
            )
        return out[layer_name].numpy()


def extract_activations(
    spec: ModelSpec, image: np.ndarray, image_id: str = "", model: TapModel | None = None
) -> ActivationTensor:
    """Forward an RGB raster to the named tap and return its (h, w, c) tensor.

    Pass a preloaded ``model`` to amortize loading over a batch.
    """
    if model is None:
        model = TapModel(spec.model_path)
    out = model.run(preprocess_image(image, spec), spec.layer_name)
    if out.ndim != 4 or out.shape[0] != 1:
        raise ModelLoadError(f"tap {spec.layer_name!r} produced shape {out.shape}, expected (1, c, h, w)")
    hwc = np.ascontiguousarray(out[0].transpose(1, 2, 0), dtype=np.float32)
    if hwc.size and hwc.min() < 0:
        raise NonNegativityViolated(
            f"tap {spec.layer_name!r} yields negative values; tap post-ReLU instead"
        )
    return ActivationTensor(image_id, hwc)


def save_activations(t: ActivationTensor, path: str | Path) -> None:
    """Write the DFFA container; bit-exact round trip with :func:`load_activations`."""
    header = _MAGIC + struct.pack(
        "<HBBIII", _VERSION, _DTYPE_F32, 3, t.height, t.width, t.channels
    )
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_activations(path: str | Path, image_id: str | None = None) -> ActivationTensor:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    version, dtype, ndim, h, w, c = struct.unpack("<HBBIII", raw[4:20])
    if version != _VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    if dtype != _DTYPE_F32 or ndim != 3:
        raise VersionUnsupported(f"{path}: dtype {dtype} ndim {ndim}")
    payload = np.frombuffer(raw[20:], dtype="<f4")
    if payload.size != h * w * c:
        raise DimMismatch(
            f"{path}: header says {h}x{w}x{c}={h * w * c}, payload has {payload.size}"
        )
    if image_id is None:
        image_id = Path(path).stem
    return ActivationTensor(image_id, payload.reshape(h, w, c))


def write_manifest(
    path: str | Path, images: list[dict], layer: str, model: str
) -> None:
    doc = {"images": images, "layer": layer, "model": model}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    for key in ("images", "layer", "model"):
        if key not in doc:
            raise DimMismatch(f"{path}: manifest missing key {key!r}")
    return doc
