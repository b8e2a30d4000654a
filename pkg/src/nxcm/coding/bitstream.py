"""The serialized image container (`.nxcm` files).

Layout, all integers big-endian:

    magic "NXCM" | u8 version | u32 orig H | u32 orig W | u32 padded H |
    u32 padded W | u16 model id, then the hyper-latent substream
    (u32 length + bytes) followed by one length-prefixed substream per
    latent slice until the end of the file.

``parse_bitstream(serialize_bitstream(b)) == b`` exactly; any malformed
input raises :class:`~nxcm.errors.BitstreamError` naming the failing part.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from ..errors import BitstreamError

MAGIC = b"NXCM"
VERSION = 1
_HEADER = struct.Struct(">4sBIIIIH")


@dataclass
class Bitstream:
    original_size: tuple[int, int]
    padded_size: tuple[int, int]
    model_id: int
    z_stream: bytes
    slice_streams: list[bytes] = field(default_factory=list)

    def num_slices(self) -> int:
        return len(self.slice_streams)


def serialize_bitstream(bs: Bitstream) -> bytes:
    oh, ow = bs.original_size
    ph, pw = bs.padded_size
    parts = [
        _HEADER.pack(MAGIC, VERSION, oh, ow, ph, pw, bs.model_id),
        struct.pack(">I", len(bs.z_stream)),
        bs.z_stream,
    ]
    for stream in bs.slice_streams:
        parts.append(struct.pack(">I", len(stream)))
        parts.append(stream)
    return b"".join(parts)


def parse_bitstream(data: bytes) -> Bitstream:
    if len(data) < _HEADER.size:
        raise BitstreamError(
            f"header truncated: need {_HEADER.size} bytes, got {len(data)}"
        )
    magic, version, oh, ow, ph, pw, model_id = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported format version {version}")
    if oh == 0 or ow == 0:
        raise BitstreamError("original dimensions must be nonzero")
    if ph < oh or pw < ow or ph % 64 or pw % 64:
        raise BitstreamError(
            f"inconsistent dimensions: original {oh}x{ow}, padded {ph}x{pw}"
        )

    pos = _HEADER.size

    def read_substream(name: str) -> bytes:
        nonlocal pos
        if pos + 4 > len(data):
            raise BitstreamError(f"{name} length prefix truncated")
        (length,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + length > len(data):
            raise BitstreamError(
                f"{name} truncated: declared {length} bytes, "
                f"only {len(data) - pos} remain"
            )
        chunk = data[pos : pos + length]
        pos += length
        return chunk

    z_stream = read_substream("hyper-latent substream")
    slice_streams = []
    while pos < len(data):
        slice_streams.append(read_substream(f"slice substream {len(slice_streams)}"))
    return Bitstream(
        original_size=(oh, ow),
        padded_size=(ph, pw),
        model_id=model_id,
        z_stream=z_stream,
        slice_streams=slice_streams,
    )
