"""Localized text-driven style transfer.

A vision-language model grounds a free-form style directive to a region box
and style phrase, a segmentation backend turns the box into a mask, and a
small image-to-image network is optimized under masked directional, patch,
content, and total-variation losses so that only the masked region changes.
"""

from .backends import (
    BoxFillSegmenter,
    FixtureVlmBackend,
    HttpSegmentationBackend,
    HttpVlmBackend,
    SegmentationBackend,
    VlmBackend,
    rle_decode,
    rle_encode,
)
from .encoders import EncoderBundle, clip_vgg_bundle, make_bundle, toy_bundle
from .engine import (
    EngineConfig,
    MultiRegionResult,
    StylizedResult,
    optimize_region,
    read_trace,
    stylize_multi,
    write_trace,
)
from .errors import (
    BackendError,
    BenchmarkRunError,
    ConfigError,
    DegenerateStyleError,
    DivergenceError,
    EmptyRegionError,
    GroundingError,
    ImageDecodeError,
    InvalidInputError,
    LeastError,
    MultiRegionError,
    ParseError,
    WriteError,
)
from .evaluation import (
    BenchmarkManifest,
    EvaluationRecord,
    EvaluationReport,
    ManifestEntry,
    masked_clip_score,
    run_benchmark,
)
from .grounding import (
    VLM_QUERY_TEMPLATE,
    RegionStyleTask,
    StyleDirective,
    VlmResponse,
    build_vlm_query,
    denormalize_box,
    ground,
    parse_vlm_response,
    refine_mask,
)
from .imaging import (
    BoundingBox,
    NormalizedBox,
    apply_mask,
    composite,
    crop_resize,
    load_image,
    load_mask,
    resize_bilinear,
    save_image,
    save_mask,
    tight_bbox,
)
from .losses import (
    LossWeights,
    masked_content_loss,
    masked_directional_loss,
    masked_patch_loss,
    masked_tv_loss,
    sample_patches,
    text_delta,
    total_objective,
)
from .network import StyleNetwork, StyleNetworkSpec, init_style_network

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BenchmarkManifest",
    "BenchmarkRunError",
    "BoundingBox",
    "BoxFillSegmenter",
    "ConfigError",
    "DegenerateStyleError",
    "DivergenceError",
    "EmptyRegionError",
    "EncoderBundle",
    "EngineConfig",
    "EvaluationRecord",
    "EvaluationReport",
    "FixtureVlmBackend",
    "GroundingError",
    "HttpSegmentationBackend",
    "HttpVlmBackend",
    "ImageDecodeError",
    "InvalidInputError",
    "LeastError",
    "LossWeights",
    "ManifestEntry",
    "MultiRegionError",
    "MultiRegionResult",
    "NormalizedBox",
    "ParseError",
    "RegionStyleTask",
    "SegmentationBackend",
    "StyleDirective",
    "StyleNetwork",
    "StyleNetworkSpec",
    "StylizedResult",
    "VLM_QUERY_TEMPLATE",
    "VlmBackend",
    "VlmResponse",
    "WriteError",
    "apply_mask",
    "build_vlm_query",
    "clip_vgg_bundle",
    "composite",
    "crop_resize",
    "denormalize_box",
    "ground",
    "init_style_network",
    "load_image",
    "load_mask",
    "make_bundle",
    "masked_clip_score",
    "masked_content_loss",
    "masked_directional_loss",
    "masked_patch_loss",
    "masked_tv_loss",
    "optimize_region",
    "parse_vlm_response",
    "read_trace",
    "refine_mask",
    "resize_bilinear",
    "rle_decode",
    "rle_encode",
    "run_benchmark",
    "sample_patches",
    "save_image",
    "save_mask",
    "stylize_multi",
    "text_delta",
    "tight_bbox",
    "total_objective",
    "toy_bundle",
    "write_trace",
]
