"""Byte-level helpers shared by the dataset/model/attribution file formats.

All formats follow the same envelope: 4-byte magic, u32 little-endian
version, format-specific body, trailing CRC32 of every preceding byte.
"""

import struct
import zlib

from .errors import BadMagicError, ChecksumError, TruncatedFileError, VersionMismatchError


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def write_envelope(path, magic: bytes, version: int, body: bytes) -> None:
    assert len(magic) == 4
    payload = magic + struct.pack("<I", version) + body
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", crc32(payload)))


def read_raw(path, magic: bytes, version: int) -> bytes:
    """Whole file with magic/version validated; CRC left to the caller
    (fixed-layout formats diagnose truncation first for better errors)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: expected at least 8 header bytes, file has {len(raw)}")
    if raw[:4] != magic:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    (ver,) = struct.unpack_from("<I", raw, 4)
    if ver != version:
        raise VersionMismatchError(f"{path}: format version {ver}, this build reads {version}")
    return raw


def read_envelope(path, magic: bytes, version: int) -> bytes:
    """Validate magic/version/CRC and return the body bytes."""
    raw = read_raw(path, magic, version)
    if len(raw) < 12:
        raise TruncatedFileError(f"{path}: expected at least 12 bytes, file has {len(raw)}")
    (stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    actual = crc32(raw[:-4])
    if stored != actual:
        raise ChecksumError(f"{path}: CRC32 mismatch (stored {stored:#010x}, computed {actual:#010x})")
    return raw[8:-4]


def verify_trailing_crc(path, raw: bytes) -> None:
    (stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    actual = crc32(raw[:-4])
    if stored != actual:
        raise ChecksumError(f"{path}: CRC32 mismatch (stored {stored:#010x}, computed {actual:#010x})")


class Unpacker:
    """Sequential reader with truncation diagnostics."""

    def __init__(self, data: bytes, label: str):
        self.data = data
        self.off = 0
        self.label = label

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise TruncatedFileError(
                f"{self.label}: truncated reading {what}: expected {n} bytes at offset "
                f"{self.off}, only {len(self.data) - self.off} remain"
            )
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def i8(self, what: str) -> int:
        return struct.unpack("<b", self.take(1, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def blob(self, what: str) -> bytes:
        n = self.u32(what + " length")
        return self.take(n, what)

    def done(self) -> None:
        if self.off != len(self.data):
            raise TruncatedFileError(
                f"{self.label}: {len(self.data) - self.off} unexpected trailing bytes"
            )


def pack_u32(v: int) -> bytes:
    return struct.pack("<I", v)


def pack_blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b
