"""Binary-to-image conversion."""

from ._backend import BACKEND, available_backends
from .convert import (
    STANDARD_WIDTHS,
    ConvertConfig,
    EmptyInput,
    MalImage,
    MergedStream,
    bytes_to_grid,
    colorize_sections,
    convert_apk,
    convert_dex,
    convert_dex_models,
    convert_pe,
    merge_dex,
    section_pixel_bounds,
)
from .resample import EmptyImage, lanczos_kernel, resample_float, resize_lanczos, tap_table

__all__ = [
    "BACKEND",
    "available_backends",
    "STANDARD_WIDTHS",
    "ConvertConfig",
    "EmptyImage",
    "EmptyInput",
    "MalImage",
    "MergedStream",
    "bytes_to_grid",
    "colorize_sections",
    "convert_apk",
    "convert_dex",
    "convert_dex_models",
    "convert_pe",
    "lanczos_kernel",
    "merge_dex",
    "resample_float",
    "resize_lanczos",
    "section_pixel_bounds",
    "tap_table",
]
