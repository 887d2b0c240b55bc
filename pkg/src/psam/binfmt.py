"""APK archive walking and coarse DEX section parsing.

Only the three top-level DEX regions matter here: the fixed 112-byte header,
the identifier tables that follow it, and the data section located by the
header's ``data_off``/``data_size`` fields.
"""

from __future__ import annotations

import enum
import io
import re
import struct
import zipfile
from dataclasses import dataclass

DEX_HEADER_SIZE = 112
DEX_VERSIONS = (b"035", b"037", b"038", b"039")

_ZIP_MAGIC = b"PK\x03\x04"
_DEX_NAME = re.compile(r"^classes(\d*)\.dex$")
_SUPPORTED_METHODS = {zipfile.ZIP_STORED, zipfile.ZIP_DEFLATED}


class BinfmtError(ValueError):
    """Base class for archive and DEX parsing failures."""


class NotAnArchive(BinfmtError):
    pass


class NoDexEntries(BinfmtError):
    pass


class BadMagic(BinfmtError):
    pass


class Truncated(BinfmtError):
    pass


class InconsistentSpans(BinfmtError):
    pass


class SectionKind(enum.Enum):
    HEADER = "header"
    IDS = "ids"
    DATA = "data"


Span = tuple[int, int]


@dataclass(frozen=True)
class ApkEntryList:
    entries: list[tuple[str, bytes]]
    dex_names: list[str]

    def get(self, name: str) -> bytes:
        for entry_name, data in self.entries:
            if entry_name == name:
                return data
        raise KeyError(name)

    def dex_payloads(self) -> list[bytes]:
        return [self.get(name) for name in self.dex_names]


@dataclass(frozen=True)
class DexModel:
    raw: bytes
    header_span: Span
    ids_span: Span
    data_span: Span
    declared_file_size: int

    @property
    def data_end(self) -> int:
        off, size = self.data_span
        return off + size

    def span(self, kind: SectionKind) -> Span:
        return {
            SectionKind.HEADER: self.header_span,
            SectionKind.IDS: self.ids_span,
            SectionKind.DATA: self.data_span,
        }[kind]


def _multidex_key(name: str) -> int:
    # bare classes.dex is index 1; classes2.dex is 2, ...
    digits = _DEX_NAME.match(name).group(1)
    return int(digits) if digits else 1


def extract_dex_entries(apk_bytes: bytes) -> ApkEntryList:
    """Read every entry of an APK and pick out the root-level ``classes*.dex`` files.

    Dex names come back in multidex order (``classes.dex``, ``classes2.dex``,
    ...) whatever their order inside the archive.
    """
    if not apk_bytes.startswith(_ZIP_MAGIC):
        raise NotAnArchive("missing local file header magic PK\\x03\\x04")
    try:
        archive = zipfile.ZipFile(io.BytesIO(apk_bytes))
    except (zipfile.BadZipFile, OSError, EOFError) as exc:
        raise NotAnArchive(f"unreadable central directory: {exc}") from exc

    entries: list[tuple[str, bytes]] = []
    with archive:
        for info in archive.infolist():
            if info.is_dir():
                continue
            if info.compress_type not in _SUPPORTED_METHODS:
                raise NotAnArchive(
                    f"entry {info.filename!r} uses unsupported compression method {info.compress_type}"
                )
            try:
                entries.append((info.filename, archive.read(info)))
            except (zipfile.BadZipFile, OSError, EOFError, ValueError) as exc:
                raise NotAnArchive(f"corrupt entry {info.filename!r}: {exc}") from exc

    names = [name for name, _ in entries if _DEX_NAME.match(name)]
    if not names:
        raise NoDexEntries("archive holds no classes*.dex entry at its root")
    # classes1.dex is not a real multidex name but would collide with classes.dex
    names.sort(key=lambda n: (_multidex_key(n), n != "classes.dex"))
    return ApkEntryList(entries=entries, dex_names=names)


def parse_dex(data: bytes) -> DexModel:
    data = bytes(data)
    if len(data) < DEX_HEADER_SIZE:
        raise Truncated(f"{len(data)} bytes is shorter than the {DEX_HEADER_SIZE}-byte header")
    magic = data[:8]
    if magic[:4] != b"dex\n" or magic[4:7] not in DEX_VERSIONS or magic[7] != 0:
        raise BadMagic(f"bad DEX magic {magic!r}")

    (file_size,) = struct.unpack_from("<I", data, 32)
    data_size, data_off = struct.unpack_from("<II", data, 104)
    if file_size > len(data):
        raise Truncated(f"header declares {file_size} bytes but only {len(data)} present")
    if data_off < DEX_HEADER_SIZE or data_off + data_size > len(data):
        raise InconsistentSpans(
            f"data section ({data_off}, {data_size}) does not fit in [{DEX_HEADER_SIZE}, {len(data)}]"
        )
    return DexModel(
        raw=data,
        header_span=(0, DEX_HEADER_SIZE),
        ids_span=(DEX_HEADER_SIZE, data_off - DEX_HEADER_SIZE),
        data_span=(data_off, data_size),
        declared_file_size=file_size,
    )


def section_bytes(model: DexModel, kind: SectionKind) -> bytes:
    off, size = model.span(kind)
    return model.raw[off : off + size]
