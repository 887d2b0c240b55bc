"""Bytes-to-image conversion for APK/DEX and PE inputs.

APK pipeline: extract ``classes*.dex`` -> parse each -> merge like sections
across files (all headers, then all ids, then all data) -> colour each byte by
its section (header -> R, ids -> G, data -> B) -> lay the stream out row-major
at a fixed width -> Lanczos resize to a width x width square.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import binfmt
from ..binfmt import DexModel, SectionKind
from .resample import resize_lanczos

log = logging.getLogger(__name__)

STANDARD_WIDTHS = (256, 512, 1024)
SECTIONS = ("header", "ids", "data")


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class ConvertConfig:
    width: int = 256
    colorize: bool = True
    resample: str = "lanczos3"
    pad_value: int = 0

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.width not in STANDARD_WIDTHS:
            log.warning("image width %d is not one of %s", self.width, STANDARD_WIDTHS)
        if self.resample != "lanczos3":
            raise ValueError(f"unsupported resample filter {self.resample!r}")
        if self.pad_value != 0:
            raise ValueError("only zero padding is supported")


@dataclass(frozen=True)
class MergedStream:
    data: bytes
    header_span: tuple[int, int]
    ids_span: tuple[int, int]
    data_span: tuple[int, int]
    source_count: int

    @property
    def spans(self) -> dict[str, tuple[int, int]]:
        return {"header": self.header_span, "ids": self.ids_span, "data": self.data_span}


@dataclass
class MalImage:
    width: int
    height: int
    channels: int
    pixels: np.ndarray  # (height, width) or (height, width, 3), uint8
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.height, self.width) if self.channels == 1 else (self.height, self.width, self.channels)
        if self.pixels.shape != expected or self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels {self.pixels.shape}/{self.pixels.dtype} do not match {expected}/uint8")

    def pixel_digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.width}x{self.height}x{self.channels}".encode())
        h.update(self.pixels.tobytes())
        return h.hexdigest()

    def to_chw(self, dtype=np.float32) -> np.ndarray:
        """Pixels scaled to [0, 1] in channel-first layout; grayscale is replicated to 3 channels."""
        arr = self.pixels.astype(dtype) / np.dtype(dtype).type(255.0)
        if self.channels == 1:
            return np.repeat(arr[None, :, :], 3, axis=0)
        return np.ascontiguousarray(arr.transpose(2, 0, 1))

    def save_png(self, path: str | Path) -> None:
        from PIL import Image

        mode = "L" if self.channels == 1 else "RGB"
        Image.fromarray(self.pixels, mode=mode).save(path, format="PNG", optimize=False)

    def save_sidecar(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")


def merge_dex(models: list[DexModel]) -> MergedStream:
    if not models:
        raise EmptyInput("merge_dex needs at least one DEX model")
    parts = {kind: b"".join(binfmt.section_bytes(m, kind) for m in models) for kind in SectionKind}
    header, ids, data = parts[SectionKind.HEADER], parts[SectionKind.IDS], parts[SectionKind.DATA]
    return MergedStream(
        data=header + ids + data,
        header_span=(0, len(header)),
        ids_span=(len(header), len(ids)),
        data_span=(len(header) + len(ids), len(data)),
        source_count=len(models),
    )


def bytes_to_grid(data: bytes | np.ndarray, width: int) -> np.ndarray:
    """Row-major layout at ``width`` columns, zero-padding the last row."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    flat = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    height = math.ceil(len(flat) / width)
    grid = np.zeros(height * width, dtype=np.uint8)
    grid[: len(flat)] = flat
    return grid.reshape(height, width)


def colorize_sections(stream: MergedStream, width: int) -> np.ndarray:
    """(H, width, 3) grid where each byte lands in the channel of its section."""
    flat = np.frombuffer(stream.data, dtype=np.uint8)
    height = math.ceil(len(flat) / width)
    rgb = np.zeros((height * width, 3), dtype=np.uint8)
    for channel, (off, size) in enumerate((stream.header_span, stream.ids_span, stream.data_span)):
        rgb[off : off + size, channel] = flat[off : off + size]
    return rgb.reshape(height, width, 3)


def section_pixel_bounds(stream: MergedStream) -> dict[str, list[int] | None]:
    bounds = {}
    for name, (off, size) in stream.spans.items():
        bounds[name] = [off, off + size - 1] if size else None
    return bounds


def _finish(grid: np.ndarray, config: ConvertConfig, meta: dict) -> MalImage:
    w = config.width
    if grid.shape[:2] == (w, w):
        pixels = grid.copy()
    else:
        pixels = resize_lanczos(grid, w, w)
    meta["grid_shape"] = list(grid.shape[:2])
    meta["config"] = dataclasses.asdict(config)
    channels = 1 if pixels.ndim == 2 else pixels.shape[2]
    return MalImage(width=w, height=w, channels=channels, pixels=pixels, meta=meta)


def convert_dex_models(models: list[DexModel], config: ConvertConfig, source_digest: str) -> MalImage:
    stream = merge_dex(models)
    if config.colorize:
        grid = colorize_sections(stream, config.width)
    else:
        grid = bytes_to_grid(stream.data, config.width)
    if grid.size == 0:
        raise EmptyInput("merged DEX stream is empty")
    meta = {
        "source_digest": source_digest,
        "kind": "apk",
        "dex_count": stream.source_count,
        "byte_count": len(stream.data),
        "section_pixel_bounds": section_pixel_bounds(stream),
    }
    return _finish(grid, config, meta)


def convert_apk(apk_bytes: bytes, config: ConvertConfig | None = None) -> MalImage:
    config = config or ConvertConfig()
    entries = binfmt.extract_dex_entries(apk_bytes)
    models = [binfmt.parse_dex(payload) for payload in entries.dex_payloads()]
    image = convert_dex_models(models, config, hashlib.sha256(apk_bytes).hexdigest())
    image.meta["dex_names"] = list(entries.dex_names)
    return image


def convert_dex(dex_bytes: bytes, config: ConvertConfig | None = None) -> MalImage:
    config = config or ConvertConfig()
    model = binfmt.parse_dex(dex_bytes)
    image = convert_dex_models([model], config, hashlib.sha256(dex_bytes).hexdigest())
    image.meta["kind"] = "dex"
    return image


def convert_pe(pe_bytes: bytes, config: ConvertConfig | None = None) -> MalImage:
    """Grayscale rendering of an arbitrary binary; ``config.colorize`` is ignored."""
    config = config or ConvertConfig()
    if not pe_bytes:
        raise EmptyInput("cannot render an empty file")
    grid = bytes_to_grid(pe_bytes, config.width)
    meta = {
        "source_digest": hashlib.sha256(pe_bytes).hexdigest(),
        "kind": "pe",
        "byte_count": len(pe_bytes),
        "section_pixel_bounds": None,
    }
    return _finish(grid, config, meta)
