"""Export torchvision CNNs as TorchScript archives with named post-ReLU taps.

The exported module's forward maps a preprocessed batch (1, 3, H, W) to a
dict {tap_name: activation}, the contract the factorization pipeline's
extraction stage consumes. Only post-ReLU (non-negative) taps are exposed;
asking for anything else raises TapNotFound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn
from torchvision import models
from torchvision.models.feature_extraction import create_feature_extractor


class UnknownArchitecture(Exception):
    """Architecture name is not in the supported set."""


class TapNotFound(Exception):
    """Requested tap is not a known post-ReLU output of the architecture."""


_VGG_BUILDERS = {
    "vgg16": models.vgg16,
    "vgg16_bn": models.vgg16_bn,
    "vgg19": models.vgg19,
    "vgg19_bn": models.vgg19_bn,
}

_RESNET_TAPS = {
    "relu": "relu",
    "layer1": "layer1",
    "layer2": "layer2",
    "layer3": "layer3",
    "layer4": "layer4",
}


@dataclass(frozen=True)
class ExportSpec:
    architecture: str
    taps: tuple[str, ...]
    output_path: str
    pretrained: bool = False
    input_size: int = 224
    fixture_images: tuple[str, ...] = field(default_factory=tuple)


def vgg_tap_nodes(architecture: str) -> dict[str, str]:
    """Map friendly tap names (conv{block}_{idx}) to the fx node of the ReLU
    that follows each conv layer."""
    builder = _VGG_BUILDERS[architecture]
    net = builder(weights=None)
    taps = {}
    block, conv_idx = 1, 0
    pending_conv = False
    for i, layer in enumerate(net.features):
        if isinstance(layer, nn.Conv2d):
            conv_idx += 1
            pending_conv = True
        elif isinstance(layer, nn.ReLU) and pending_conv:
            taps[f"conv{block}_{conv_idx}"] = f"features.{i}"
            pending_conv = False
        elif isinstance(layer, nn.MaxPool2d):
            block += 1
            conv_idx = 0
    return taps


def known_taps(architecture: str) -> dict[str, str]:
    if architecture in _VGG_BUILDERS:
        return vgg_tap_nodes(architecture)
    if architecture == "resnet101":
        return dict(_RESNET_TAPS)
    raise UnknownArchitecture(architecture)


def build_source_model(architecture: str, pretrained: bool, seed: int = 0) -> nn.Module:
    """The eager torchvision model the export is checked against."""
    torch.manual_seed(seed)
    weights = "DEFAULT" if pretrained else None
    if architecture in _VGG_BUILDERS:
        net = _VGG_BUILDERS[architecture](weights=weights)
    elif architecture == "resnet101":
        net = models.resnet101(weights=weights)
    else:
        raise UnknownArchitecture(architecture)
    net.eval()
    return net


def export_model(spec: ExportSpec, seed: int = 0) -> str:
    """Write the TorchScript tap archive; returns the output path."""
    taps = known_taps(spec.architecture)
    missing = [t for t in spec.taps if t not in taps]
    if missing:
        raise TapNotFound(
            f"{missing} not among post-ReLU taps of {spec.architecture}: "
            f"{sorted(taps)}"
        )
    net = build_source_model(spec.architecture, spec.pretrained, seed)
    return_nodes = {taps[t]: t for t in spec.taps}
    extractor = create_feature_extractor(net, return_nodes=return_nodes)
    extractor.eval()
    example = torch.zeros(1, 3, spec.input_size, spec.input_size)
    with torch.no_grad():
        traced = torch.jit.trace(extractor, example, strict=False)
    Path(spec.output_path).parent.mkdir(parents=True, exist_ok=True)
    traced.save(spec.output_path)
    return spec.output_path


def source_activations(
    net: nn.Module, architecture: str, tap: str, batch: torch.Tensor
) -> torch.Tensor:
    """Tap output straight from the eager source model, via a forward hook."""
    node = known_taps(architecture)[tap]
    module = net.get_submodule(node)
    captured = []
    handle = module.register_forward_hook(lambda m, i, o: captured.append(o))
    try:
        with torch.no_grad():
            net(batch)
    finally:
        handle.remove()
    return captured[0]
