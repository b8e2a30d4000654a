"""Integer CDF tables: the bridge from likelihood models to the range coder.

Every row maps symbols ``[-tail, +tail]`` plus one trailing escape slot to
cumulative 16-bit frequencies (first entry 0, last exactly 2**16, every bin
at least 1).  The Gaussian table holds one row per scale-table entry; the
hyper-latent table holds one row per channel, centered on that channel's
median.  Construction is pure float64 arithmetic over the model weights, so
encoder and decoder builds agree byte-for-byte.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import erfc, ndtri

from ..entropy import FactorizedPrior
from ..errors import BitstreamError
from .rangecoder import TOTAL_FREQ

_TABLE_MAGIC = b"NXCT"
_TABLE_VERSION = 1
_INV_SQRT2 = 2.0 ** -0.5


@dataclass
class CdfTable:
    """rows[i]: uint32 cumulative counts, len = support + 2 (escape slot);
    offsets[i]: symbol value of the first slot."""

    rows: list[np.ndarray]
    offsets: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, CdfTable)
            and len(self.rows) == len(other.rows)
            and all(np.array_equal(a, b) for a, b in zip(self.rows, other.rows))
            and np.array_equal(self.offsets, other.offsets)
        )

    def to_bytes(self) -> bytes:
        """Documented export format (all integers big-endian):

        magic "NXCT" | u8 version | u32 row count, then per row:
        i32 offset | u32 entry count | that many u32 cumulative values.
        """
        parts = [_TABLE_MAGIC, struct.pack(">BI", _TABLE_VERSION, len(self.rows))]
        for offset, row in zip(self.offsets.tolist(), self.rows):
            parts.append(struct.pack(">iI", int(offset), len(row)))
            parts.append(np.asarray(row, dtype=">u4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CdfTable":
        if data[:4] != _TABLE_MAGIC:
            raise BitstreamError("not a CDF table blob (bad magic)")
        version, n_rows = struct.unpack(">BI", data[4:9])
        if version != _TABLE_VERSION:
            raise BitstreamError(f"unsupported CDF table version {version}")
        pos = 9
        rows, offsets = [], []
        for _ in range(n_rows):
            offset, count = struct.unpack(">iI", data[pos : pos + 8])
            pos += 8
            row = np.frombuffer(data[pos : pos + 4 * count], dtype=">u4")
            if len(row) != count:
                raise BitstreamError("CDF table blob truncated")
            pos += 4 * count
            rows.append(row.astype(np.uint32))
            offsets.append(offset)
        return cls(rows=rows, offsets=np.asarray(offsets, dtype=np.int32))


def quantize_pmf(pmf: np.ndarray, total: int = TOTAL_FREQ) -> np.ndarray:
    """Deterministically turn a pmf into integer frequencies summing to total,
    every bin at least 1.  Rounding slack is absorbed by the largest bins."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.size >= total:
        raise ValueError("pmf has too many bins for the frequency precision")
    freqs = np.maximum(1, np.round(pmf * total)).astype(np.int64)
    diff = total - int(freqs.sum())
    while diff != 0:
        k = int(np.argmax(freqs))
        if diff > 0:
            freqs[k] += diff
            diff = 0
        else:
            take = min(freqs[k] - 1, -diff)
            if take <= 0:
                raise ValueError("pmf cannot be renormalized with unit bins")
            freqs[k] -= take
            diff += take
    return freqs


def _cumulative(freqs: np.ndarray) -> np.ndarray:
    row = np.zeros(len(freqs) + 1, dtype=np.uint32)
    np.cumsum(freqs, out=row[1:])
    return row


def _std_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * erfc(-x * _INV_SQRT2)


def gaussian_cdf_table(scale_table: np.ndarray, tail_mass: float) -> CdfTable:
    """One row per sigma; support covers all but ``tail_mass`` probability."""
    z_tail = float(ndtri(1.0 - tail_mass / 2.0))
    rows, offsets = [], []
    for sigma in np.asarray(scale_table, dtype=np.float64):
        tail = max(1, math.ceil(z_tail * sigma - 0.5))
        support = np.arange(-tail, tail + 1, dtype=np.float64)
        upper = _std_cdf((support + 0.5) / sigma)
        lower = _std_cdf((support - 0.5) / sigma)
        pmf = upper - lower
        escape = max(1.0 - float(pmf.sum()), 0.0)
        freqs = quantize_pmf(np.append(pmf, escape))
        rows.append(_cumulative(freqs))
        offsets.append(-tail)
    return CdfTable(rows=rows, offsets=np.asarray(offsets, dtype=np.int32))


def prior_cdf_table(prior: FactorizedPrior, medians: np.ndarray) -> CdfTable:
    """One row per hyper-latent channel, symbols centered on the median."""
    medians = np.asarray(medians, dtype=np.float64)
    with torch.no_grad():
        lo_q, hi_q = prior.tail_bounds()
    lo_q = lo_q.numpy()
    hi_q = hi_q.numpy()
    half_width = np.maximum(hi_q - medians, medians - lo_q)
    tails = np.maximum(1, np.ceil(half_width - 0.5).astype(np.int64))
    t_max = int(tails.max())

    # One batched CDF evaluation on a grid wide enough for every channel.
    grid = np.arange(-t_max, t_max + 1, dtype=np.float64)
    edges_hi = medians[:, None] + grid[None, :] + 0.5
    edges_lo = medians[:, None] + grid[None, :] - 0.5
    with torch.no_grad():
        cdf_hi = prior.cdf(torch.from_numpy(edges_hi[:, None, :])).numpy()[:, 0, :]
        cdf_lo = prior.cdf(torch.from_numpy(edges_lo[:, None, :])).numpy()[:, 0, :]
    pmf_all = cdf_hi - cdf_lo

    rows, offsets = [], []
    for c in range(prior.channels):
        t = int(tails[c])
        sl = slice(t_max - t, t_max + t + 1)
        pmf = np.maximum(pmf_all[c, sl], 0.0)
        escape = max(1.0 - float(pmf.sum()), 0.0)
        freqs = quantize_pmf(np.append(pmf, escape))
        rows.append(_cumulative(freqs))
        offsets.append(-t)
    return CdfTable(rows=rows, offsets=np.asarray(offsets, dtype=np.int32))


@dataclass
class CodingTables:
    """Everything the symbol coder needs, derived once from the model."""

    y_table: CdfTable          # indexed by scale-table index
    z_table: CdfTable          # indexed by hyper-latent channel
    z_medians: np.ndarray      # float64, per channel


def build_cdf_tables(model) -> CodingTables:
    scale_table = model.scale_table.detach().cpu().numpy().astype(np.float64)
    with torch.no_grad():
        medians = model.prior.medians().numpy()
    return CodingTables(
        y_table=gaussian_cdf_table(scale_table, model.cfg.tail_mass),
        z_table=prior_cdf_table(model.prior, medians),
        z_medians=medians,
    )
