"""Byte-oriented 64-bit range coder with 16-bit probability precision.

Frequencies come from :class:`~nxcm.coding.cdf.CdfTable` rows whose
cumulative counts always total 2**16.  Symbols outside a row's support are
transported through the row's escape slot followed by a raw 32-bit value
coded against a uniform byte row, so coding is lossless for any integer.
"""

from __future__ import annotations

import numpy as np

from ..errors import BitstreamError

PROB_BITS = 16
TOTAL_FREQ = 1 << PROB_BITS

_TOP = 1 << 56
_BOTTOM = 1 << 48
_MASK = (1 << 64) - 1

# Uniform row used for the raw bytes of escaped values.
_BYTE_ROW = np.arange(257, dtype=np.uint64) * 256
_RAW_BIAS = 1 << 31


class RangeEncoder:
    """Carry-less ("Russian") range encoder over 64-bit state."""

    def __init__(self):
        self._low = 0
        self._range = _MASK
        self._out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int) -> None:
        """Narrow the range to the slot [cum_lo, cum_hi) out of 2**16."""
        r = self._range >> PROB_BITS
        low = self._low + r * cum_lo
        rng = r * (cum_hi - cum_lo)
        out = self._out
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOTTOM:
                rng = (_MASK + 1 - low) & (_BOTTOM - 1)
            else:
                break
            out.append((low >> 56) & 0xFF)
            low = (low << 8) & _MASK
            rng <<= 8
        self._low = low
        self._range = rng

    def finish(self) -> bytes:
        low = self._low
        for _ in range(8):
            self._out.append((low >> 56) & 0xFF)
            low = (low << 8) & _MASK
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._low = 0
        self._range = _MASK
        code = 0
        for _ in range(8):
            code = (code << 8) | self._next_byte()
        self._code = code

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise BitstreamError("range-coded substream is truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode(self, cum_row: np.ndarray) -> int:
        """Decode one slot index against a cumulative row totalling 2**16."""
        r = self._range >> PROB_BITS
        target = (self._code - self._low) // r
        if target >= TOTAL_FREQ:
            target = TOTAL_FREQ - 1
        slot = int(np.searchsorted(cum_row, target, side="right")) - 1
        low = self._low + r * int(cum_row[slot])
        rng = r * int(cum_row[slot + 1] - cum_row[slot])
        code = self._code
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOTTOM:
                rng = (_MASK + 1 - low) & (_BOTTOM - 1)
            else:
                break
            code = ((code << 8) | self._next_byte()) & _MASK
            low = (low << 8) & _MASK
            rng <<= 8
        self._low, self._range, self._code = low, rng, code
        return slot


def _encode_raw_u32(enc: RangeEncoder, value: int) -> None:
    for shift in (24, 16, 8, 0):
        b = (value >> shift) & 0xFF
        enc.encode(b * 256, (b + 1) * 256)


def _decode_raw_u32(dec: RangeDecoder) -> int:
    value = 0
    for _ in range(4):
        value = (value << 8) | dec.decode(_BYTE_ROW)
    return value


def encode_symbols(symbols: np.ndarray, row_ids: np.ndarray, table) -> bytes:
    """Encode integer symbols, each against its row of ``table``.

    Out-of-support symbols are escaped and transported verbatim, so
    ``decode_symbols`` recovers the input exactly for any integers with
    magnitude below 2**31.
    """
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    row_ids = np.asarray(row_ids, dtype=np.int64).ravel()
    if symbols.shape != row_ids.shape:
        raise ValueError("symbols and row_ids must have the same length")
    if symbols.size and int(np.abs(symbols).max()) >= _RAW_BIAS:
        raise BitstreamError("symbol magnitude exceeds the raw escape width")
    enc = RangeEncoder()
    rows = table.rows
    offsets = table.offsets
    for sym, rid in zip(symbols.tolist(), row_ids.tolist()):
        row = rows[rid]
        slot = sym - int(offsets[rid])
        escape_slot = len(row) - 2
        if 0 <= slot < escape_slot:
            enc.encode(int(row[slot]), int(row[slot + 1]))
        else:
            enc.encode(int(row[escape_slot]), int(row[escape_slot + 1]))
            _encode_raw_u32(enc, sym + _RAW_BIAS)
    return enc.finish()


def decode_symbols(data: bytes, row_ids: np.ndarray, table) -> np.ndarray:
    """Inverse of :func:`encode_symbols`; ``row_ids`` fixes count and order."""
    row_ids = np.asarray(row_ids, dtype=np.int64).ravel()
    dec = RangeDecoder(data)
    rows = table.rows
    offsets = table.offsets
    out = np.empty(row_ids.size, dtype=np.int64)
    for i, rid in enumerate(row_ids.tolist()):
        row = rows[rid]
        slot = dec.decode(row)
        if slot == len(row) - 2:
            out[i] = _decode_raw_u32(dec) - _RAW_BIAS
        else:
            out[i] = slot + int(offsets[rid])
    return out
