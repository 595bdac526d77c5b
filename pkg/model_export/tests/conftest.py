from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from model_export.export import ExportSpec, export_model


@pytest.fixture(scope="session")
def vgg19_tap_model(tmp_path_factory) -> Path:
    """A VGG-19 (random but seeded weights) exported with conv4_4 and conv5_4
    taps at a small input size so the suite stays fast."""
    out = tmp_path_factory.mktemp("export") / "vgg19_taps.pt"
    spec = ExportSpec(
        architecture="vgg19",
        taps=("conv4_4", "conv5_4"),
        output_path=str(out),
        pretrained=False,
        input_size=64,
    )
    export_model(spec, seed=7)
    return out


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory) -> list[tuple[str, str]]:
    rng = np.random.default_rng(31)
    img_dir = tmp_path_factory.mktemp("images")
    pairs = []
    for i in range(3):
        raster = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        path = img_dir / f"sample{i}.png"
        Image.fromarray(raster, mode="RGB").save(path)
        pairs.append((f"sample{i}", str(path)))
    return pairs
