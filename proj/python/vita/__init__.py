"""Astrocyte-modulated ViT: inference, Grad-CAM explanations and alignment metrics."""

from ._core import (
    AstroParams,
    LoadError,
    NumericError,
    ParseError,
    ShapeError,
    UsageError,
    VitConfig,
    VitModel,
    astro_linear_forward,
    dsc,
    expected_tensor_names,
    grad_cam,
    load_ground_truth,
    parse_astro_params,
    preprocess_image,
    default_grid,
    read_container,
    spearman,
    ssim,
    upsample_bilinear,
    wilcoxon_rank_sum,
    write_container,
)

__all__ = [
    "AstroParams",
    "LoadError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "UsageError",
    "VitConfig",
    "VitModel",
    "astro_linear_forward",
    "dsc",
    "expected_tensor_names",
    "grad_cam",
    "load_ground_truth",
    "parse_astro_params",
    "preprocess_image",
    "default_grid",
    "read_container",
    "spearman",
    "ssim",
    "upsample_bilinear",
    "wilcoxon_rank_sum",
    "write_container",
]
