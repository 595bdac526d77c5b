"""Export torchvision CNNs as TorchScript tap models and dump activation
fixtures in the DFFA interchange format."""

from .export import (
    ExportSpec,
    TapNotFound,
    UnknownArchitecture,
    build_source_model,
    export_model,
    known_taps,
    source_activations,
    vgg_tap_nodes,
)
from .fixtures import dump_fixtures, preprocess, write_dffa

__version__ = "0.1.0"

__all__ = [
    "ExportSpec",
    "TapNotFound",
    "UnknownArchitecture",
    "build_source_model",
    "dump_fixtures",
    "export_model",
    "known_taps",
    "preprocess",
    "source_activations",
    "vgg_tap_nodes",
    "write_dffa",
    "__version__",
]
