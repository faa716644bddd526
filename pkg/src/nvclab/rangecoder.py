"""Integer arithmetic coder producing real, decodable bytes.

The coder is a 32-bit-state binary arithmetic coder with carry/underflow
propagation and an explicit flush.  All probability tables are cumulative
frequency arrays quantized to a fixed 16-bit grand total, built by
:func:`gaussian_cdf_table` from per-symbol Gaussian parameters.  Because every
step is integer arithmetic on identically quantized tables, encoder and
decoder stay bit-exact as long as both sides reproduce the same parameter
sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RangeCoderError

STATE_BITS = 32
_FULL = 1 << STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1

CDF_BITS = 16
CDF_TOTAL = 1 << CDF_BITS

# probability floor used when estimating rate; the quantized tables guarantee
# every bin at least one count out of CDF_TOTAL, i.e. the same floor
P_MIN = 1.0 / CDF_TOTAL

SIGMA_MIN = 0.11

# half-width of the modeled support around the mean, in sigmas and absolute
_Z_SPAN = 9.0
_MIN_HALF_WIDTH = 64
_MAX_HALF_WIDTH = 4096


class _BitWriter:
    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._n = 0

    def write(self, bit: int) -> None:
        self._acc = (self._acc << 1) | bit
        self._n += 1
        if self._n == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._n = 0

    def getvalue(self) -> bytes:
        out = bytearray(self._bytes)
        if self._n:
            out.append(self._acc << (8 - self._n))
        return bytes(out)


class _BitReader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._acc = 0
        self._n = 0

    def read(self) -> int:
        # past-the-end reads return zeros; truncation is detected by the
        # container's payload length bookkeeping, not here
        if self._n == 0:
            if self._pos < len(self._data):
                self._acc = self._data[self._pos]
                self._pos += 1
            else:
                self._acc = 0
            self._n = 8
        self._n -= 1
        return (self._acc >> self._n) & 1


@dataclass(frozen=True)
class CdfTable:
    """Cumulative frequencies for one symbol position.

    ``offset`` is the integer value of the first bin; ``cdf`` has ``n + 1``
    entries with ``cdf[0] == 0`` and ``cdf[-1] == CDF_TOTAL`` and every bin
    holding at least one count.
    """

    offset: int
    cdf: np.ndarray

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 1

    def contains(self, symbol: int) -> bool:
        return self.offset <= symbol < self.offset + self.num_symbols

    def bin_probability(self, symbol: int) -> float:
        i = symbol - self.offset
        return float(self.cdf[i + 1] - self.cdf[i]) / CDF_TOTAL


def _phi(z: np.ndarray) -> np.ndarray:
    from scipy.special import erf

    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))


def gaussian_cdf_table(mu: float, sigma: float) -> CdfTable:
    """Frozen 16-bit quantization of N(mu, sigma^2) convolved with U(-1/2, 1/2).

    The support spans ``mu`` by ``max(64, ceil(9 sigma))`` in both directions;
    the +1-count-per-bin construction enforces the coder's probability floor.
    """
    sigma = max(float(sigma), SIGMA_MIN)
    half = int(min(max(_MIN_HALF_WIDTH, math.ceil(_Z_SPAN * sigma)), _MAX_HALF_WIDTH))
    lo = math.floor(mu) - half
    hi = math.ceil(mu) + half
    n = hi - lo + 1
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    f = _phi((edges - mu) / sigma)
    f = (f - f[0]) / (f[-1] - f[0])
    cdf = np.round(f * (CDF_TOTAL - n)).astype(np.int64) + np.arange(n + 1)
    return CdfTable(offset=lo, cdf=cdf)


def uniform_cdf_table(lo: int, hi: int) -> CdfTable:
    """Equal-frequency table over the integer interval [lo, hi]."""
    n = hi - lo + 1
    cdf = np.floor(np.arange(n + 1, dtype=np.float64) * CDF_TOTAL / n).astype(np.int64)
    return CdfTable(offset=lo, cdf=cdf)


class RangeEncoder:
    """Streaming arithmetic encoder; feed symbols with their tables, then flush."""

    def __init__(self):
        self._low = 0
        self._high = _MASK
        self._pending = 0
        self._out = _BitWriter()
        self._finished = False

    def encode(self, symbol: int, table: CdfTable) -> None:
        if self._finished:
            raise RangeCoderError("encoder already flushed")
        if not table.contains(symbol):
            raise RangeCoderError(
                f"symbol {symbol} outside modeled support "
                f"[{table.offset}, {table.offset + table.num_symbols - 1}]"
            )
        i = symbol - table.offset
        self._update(int(table.cdf[i]), int(table.cdf[i + 1]))

    def _update(self, cum_lo: int, cum_hi: int) -> None:
        span = self._high - self._low + 1
        self._high = self._low + (span * cum_hi >> CDF_BITS) - 1
        self._low = self._low + (span * cum_lo >> CDF_BITS)
        while True:
            if ((self._low ^ self._high) & _HALF) == 0:
                bit = self._low >> (STATE_BITS - 1)
                self._out.write(bit)
                for _ in range(self._pending):
                    self._out.write(bit ^ 1)
                self._pending = 0
                self._low = (self._low << 1) & _MASK
                self._high = ((self._high << 1) & _MASK) | 1
            elif (self._low & ~self._high & _QUARTER) != 0:
                self._pending += 1
                self._low = (self._low << 1) ^ _HALF
                self._high = ((self._high ^ _HALF) << 1) | _HALF | 1
            else:
                break

    def finish(self) -> bytes:
        if not self._finished:
            self._pending += 1
            bit = (self._low >> (STATE_BITS - 2)) & 1
            self._out.write(bit)
            for _ in range(self._pending):
                self._out.write(bit ^ 1)
            self._finished = True
        return self._out.getvalue()


class RangeDecoder:
    """Streaming arithmetic decoder mirroring :class:`RangeEncoder`."""

    def __init__(self, data: bytes):
        self._in = _BitReader(data)
        self._low = 0
        self._high = _MASK
        self._code = 0
        for _ in range(STATE_BITS):
            self._code = (self._code << 1) | self._in.read()

    def decode(self, table: CdfTable) -> int:
        span = self._high - self._low + 1
        offset = self._code - self._low
        value = ((offset + 1) << CDF_BITS) - 1
        value //= span
        i = int(np.searchsorted(table.cdf, value, side="right")) - 1
        if not 0 <= i < table.num_symbols:
            raise RangeCoderError(f"decoded value {value} outside table")
        self._update(int(table.cdf[i]), int(table.cdf[i + 1]))
        return table.offset + i

    def _update(self, cum_lo: int, cum_hi: int) -> None:
        span = self._high - self._low + 1
        self._high = self._low + (span * cum_hi >> CDF_BITS) - 1
        self._low = self._low + (span * cum_lo >> CDF_BITS)
        while True:
            if ((self._low ^ self._high) & _HALF) == 0:
                self._low = (self._low << 1) & _MASK
                self._high = ((self._high << 1) & _MASK) | 1
                self._code = ((self._code << 1) & _MASK) | self._in.read()
            elif (self._low & ~self._high & _QUARTER) != 0:
                self._low = (self._low << 1) ^ _HALF
                self._high = ((self._high ^ _HALF) << 1) | _HALF | 1
                self._code = (
                    (self._code & _HALF)
                    | ((self._code << 1) & (_MASK >> 1))
                    | self._in.read()
                )
            else:
                break


def ac_encode(symbols, tables) -> bytes:
    """Encode an integer sequence where ``tables[i]`` models ``symbols[i]``."""
    enc = RangeEncoder()
    for s, t in zip(symbols, tables, strict=True):
        enc.encode(int(s), t)
    return enc.finish()


def ac_decode(data: bytes, tables, count: int | None = None) -> list[int]:
    """Decode symbols from ``data``.

    ``tables`` is either a sequence of :class:`CdfTable` (non-adaptive case)
    or a callable ``tables(i, decoded_prefix) -> CdfTable`` for models whose
    parameters depend causally on earlier symbols; ``count`` is then required.
    """
    dec = RangeDecoder(data)
    out: list[int] = []
    if callable(tables):
        if count is None:
            raise ValueError("count is required when tables is a callable")
        for i in range(count):
            out.append(dec.decode(tables(i, out)))
    else:
        for t in tables:
            out.append(dec.decode(t))
    return out


def ideal_bits(symbols, tables) -> float:
    """Information content of ``symbols`` under the floored model likelihoods."""
    total = 0.0
    for s, t in zip(symbols, tables, strict=True):
        p = max(t.bin_probability(int(s)), P_MIN) if t.contains(int(s)) else P_MIN
        total -= math.log2(p)
    return total
