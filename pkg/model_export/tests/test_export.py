import numpy as np
import pytest
import torch

from model_export.export import (
    ExportSpec,
    TapNotFound,
    UnknownArchitecture,
    build_source_model,
    export_model,
    known_taps,
    source_activations,
    vgg_tap_nodes,
)
from model_export.fixtures import preprocess


def test_vgg19_tap_registry_names() -> None:
    taps = vgg_tap_nodes("vgg19")
    # 16 conv layers in 5 blocks: 2, 2, 4, 4, 4
    assert len(taps) == 16
    assert taps["conv1_1"] == "features.1"
    assert taps["conv5_4"] == "features.35"
    for name, node in taps.items():
        assert name.startswith("conv") and node.startswith("features.")


def test_vgg16_tap_registry_names() -> None:
    taps = vgg_tap_nodes("vgg16")
    assert len(taps) == 13
    assert taps["conv5_3"] == "features.29"


def test_known_taps_resnet() -> None:
    taps = known_taps("resnet101")
    assert set(taps) == {"relu", "layer1", "layer2", "layer3", "layer4"}


def test_unknown_architecture_rejected() -> None:
    with pytest.raises(UnknownArchitecture):
        known_taps("alexnet")
    with pytest.raises(UnknownArchitecture):
        build_source_model("alexnet", pretrained=False)


def test_pre_relu_tap_rejected(tmp_path) -> None:
    spec = ExportSpec(
        architecture="vgg19",
        taps=("features.34",),  # the conv itself, not its ReLU
        output_path=str(tmp_path / "bad.pt"),
    )
    with pytest.raises(TapNotFound):
        export_model(spec)
    spec2 = ExportSpec(
        architecture="vgg19", taps=("conv6_1",), output_path=str(tmp_path / "bad2.pt")
    )
    with pytest.raises(TapNotFound):
        export_model(spec2)


def test_exported_matches_source_model(vgg19_tap_model) -> None:
    net = build_source_model("vgg19", pretrained=False, seed=7)
    rng = np.random.default_rng(5)
    raster = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    batch = preprocess(raster, 64)

    module = torch.jit.load(str(vgg19_tap_model), map_location="cpu")
    module.eval()
    with torch.no_grad():
        outputs = module(batch)

    assert set(outputs) == {"conv4_4", "conv5_4"}
    for tap in ("conv4_4", "conv5_4"):
        expected = source_activations(net, "vgg19", tap, batch)
        got = outputs[tap]
        assert got.shape == expected.shape
        assert torch.max(torch.abs(got - expected)).item() <= 1e-4
        assert torch.min(got).item() >= 0.0  # post-ReLU taps are non-negative


def test_export_accepts_other_input_sizes(vgg19_tap_model) -> None:
    # Tracing with strict=False keeps the conv graph shape-polymorphic.
    module = torch.jit.load(str(vgg19_tap_model), map_location="cpu")
    module.eval()
    with torch.no_grad():
        outputs = module(torch.zeros(1, 3, 96, 96))
    assert outputs["conv5_4"].shape == (1, 512, 6, 6)
