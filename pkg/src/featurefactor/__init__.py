"""Factorize CNN activation tensors into spatial concept heat maps, refined
segmentation masks, bounding boxes and co-segmentation metrics."""

from . import errors
from .heatmaps import (
    HeatMapStack,
    bilinear_upsample,
    columns_to_heatmaps,
    render_overlay,
    upsample_stack,
)
from .inference import (
    ModelSpec,
    extract_activations,
    load_activations,
    save_activations,
)
from .nmf import (
    ActivationNMF,
    Factorization,
    InitScheme,
    NmfConfig,
    PcaResult,
    frobenius_loss,
    init_factors,
    multiplicative_update_step,
    nmf_factorize,
    pca_baseline,
)
from .refine import (
    RefineConfig,
    guided_filter,
    meanfield_refine,
    meanfield_refine_batch,
    softmax_unary,
)
from .segmentation import (
    BBox,
    BinaryMaskSet,
    PartAnnotation,
    associate_parts,
    binarize_factor,
    box_iou,
    connected_components,
    corloc,
    coverage,
    dataset_iou,
    largest_component_bbox,
)
from .tensors import (
    ActivationTensor,
    BatchLayout,
    FeatureMatrix,
    LayoutEntry,
    concat_batch,
    flatten_activations,
    split_batch,
    unflatten_features,
)

__version__ = "0.1.0"
