"""Synthetic DEX/APK builders and toy byte-pattern families.

Used by the test suite, the acceptance checks and the CLI demo corpus. The
DEX builder writes only the header fields the parser reads; everything else
in the header is zero.
"""

from __future__ import annotations

import io
import struct
import zipfile

import numpy as np

from .binfmt import DEX_HEADER_SIZE

ENDIAN_CONSTANT = 0x12345678


def build_dex(ids: bytes, data: bytes, version: bytes = b"035", trailer: bytes = b"") -> bytes:
    """Lay out ``header | ids | data | trailer`` with consistent header fields."""
    data_off = DEX_HEADER_SIZE + len(ids)
    total = data_off + len(data) + len(trailer)
    header = bytearray(DEX_HEADER_SIZE)
    header[0:8] = b"dex\n" + version + b"\x00"
    struct.pack_into("<III", header, 32, total, DEX_HEADER_SIZE, ENDIAN_CONSTANT)
    if ids:
        # string_ids_off points at the start of the ids region
        struct.pack_into("<II", header, 56, len(ids) // 4, DEX_HEADER_SIZE)
    struct.pack_into("<II", header, 104, len(data), data_off)
    return bytes(header) + bytes(ids) + bytes(data) + bytes(trailer)


def random_dex(rng: np.random.Generator, ids_len: int, data_len: int) -> bytes:
    ids = rng.integers(0, 256, ids_len, dtype=np.uint8).tobytes()
    data = rng.integers(0, 256, data_len, dtype=np.uint8).tobytes()
    return build_dex(ids, data)


def build_apk(entries: list[tuple[str, bytes]], compress: bool = True) -> bytes:
    """Zip ``entries`` in order with a fixed timestamp so output bytes are reproducible."""
    buf = io.BytesIO()
    method = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    with zipfile.ZipFile(buf, "w", compression=method) as zf:
        for name, payload in entries:
            info = zipfile.ZipInfo(name, date_time=(2020, 1, 1, 0, 0, 0))
            info.compress_type = method
            zf.writestr(info, payload)
    return buf.getvalue()


def periodic_stream(period: bytes, length: int, phase: int, noise: float, rng: np.random.Generator) -> bytes:
    """Repeat ``period`` from offset ``phase`` for ``length`` bytes, then overwrite a
    ``noise`` fraction of positions with uniform random bytes."""
    reps = length // len(period) + 2
    tiled = np.frombuffer(period * reps, dtype=np.uint8)[phase : phase + length].copy()
    if noise > 0:
        mask = rng.random(length) < noise
        tiled[mask] = rng.integers(0, 256, int(mask.sum()), dtype=np.uint8)
    return tiled.tobytes()


# Two families whose byte streams repeat different motifs. Family 0 uses a
# short low-valued ramp, family 1 a long sparse bright motif.
FAMILY_PATTERNS = (
    bytes(range(0, 64, 8)),
    bytes([255, 0, 0, 0, 200, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0] * 2 + [128] * 8),
)


def family_apk(family: int, rng: np.random.Generator, noise: float = 0.05) -> bytes:
    """One synthetic APK from a toy family.

    Section lengths, phase and noise positions vary per sample; only the
    repeating motif identifies the family.
    """
    period = FAMILY_PATTERNS[family]
    ids_len = int(rng.integers(8, 64)) * 4
    data_len = int(rng.integers(4_000, 12_000))
    ids = periodic_stream(period, ids_len, int(rng.integers(0, len(period))), noise, rng)
    data = periodic_stream(period, data_len, int(rng.integers(0, len(period))), noise, rng)
    dex = build_dex(ids, data)
    return build_apk([("AndroidManifest.xml", b"<manifest/>"), ("classes.dex", dex)])


def family_corpus(per_family: int, seed: int, noise: float = 0.05) -> list[tuple[bytes, int]]:
    """``per_family`` samples of each toy family, interleaved, from one seeded generator."""
    rng = np.random.default_rng(seed)
    out: list[tuple[bytes, int]] = []
    for _ in range(per_family):
        for family in range(len(FAMILY_PATTERNS)):
            out.append((family_apk(family, rng, noise), family))
    return out


def write_demo_corpus(
    root, per_class: int, seed: int = 0, years: tuple[int, ...] | None = None, drift: float = 0.0
) -> list:
    """Write ``<root>/<malware|benign>/[<year>/]sample_NNN.apk`` files.

    Malware samples use family 1's motif, benign ones family 0's. With
    ``drift > 0``, a ``drift * k`` share of year ``k``'s malware carries the
    benign motif instead, so a model trained on the first year ages.
    """
    from pathlib import Path

    root = Path(root)
    rng = np.random.default_rng(seed)
    written = []
    for k, year in enumerate(years or (None,)):
        for cls, family in (("benign", 0), ("malware", 1)):
            folder = root / cls if year is None else root / cls / str(year)
            folder.mkdir(parents=True, exist_ok=True)
            for i in range(per_class):
                if family == 1 and drift and rng.random() < min(1.0, drift * k):
                    payload = family_apk(0, rng)
                else:
                    payload = family_apk(family, rng)
                path = folder / f"sample_{i:03d}.apk"
                path.write_bytes(payload)
                written.append(path)
    return written
