"""Bit-exact arithmetic range coder over 16-bit frequency tables.

Classic binary-renormalization coder with 32-bit state and underflow
counting. Tables carry an optional escape symbol; escaped values are
emitted as 16 raw (two's complement) bits through the coder's bypass path,
so any latent in [-32768, 32767] stays losslessly codable.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import CodingError

_STATE_BITS = 32
_MASK = (1 << _STATE_BITS) - 1
_TOP = 1 << (_STATE_BITS - 1)
_SECOND = _TOP >> 1
TOTAL_FREQ = 1 << 16

_RAW_HALF = TOTAL_FREQ // 2
ESCAPE_RAW_BITS = 16


@dataclass
class Bitstream:
    """Finished coder output: packed bytes plus the exact bit count."""

    data: bytes
    bit_length: int


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.bits = []

    def _shift(self):
        bit = self.low >> (_STATE_BITS - 1)
        self.bits.append(bit)
        if self.pending:
            self.bits.extend([bit ^ 1] * self.pending)
            self.pending = 0

    def _update(self, cum, symbol):
        low, high = self.low, self.high
        rng = high - low + 1
        total = cum[-1]
        self.high = low + cum[symbol + 1] * rng // total - 1
        self.low = low + cum[symbol] * rng // total
        while ((self.low ^ self.high) & _TOP) == 0:
            self._shift()
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) & _MASK) | 1
        while (self.low & ~self.high & _SECOND) != 0:
            self.pending += 1
            self.low = (self.low << 1) & (_MASK >> 1)
            self.high = ((self.high << 1) & (_MASK >> 1)) | _TOP | 1

    def encode(self, cum, symbol):
        self._update(cum, symbol)

    def encode_raw(self, value, nbits):
        """Bypass-code nbits of value, MSB first, at exactly one bit each."""
        for i in range(nbits - 1, -1, -1):
            bit = (value >> i) & 1
            self._update(_RAW_CUM, bit)

    def finish_bits(self) -> list:
        """Terminate the stream and return raw bits (for bit-level packing).

        A single 1 bit suffices: the renormalization invariant keeps
        low < HALF <= high, so the window midpoint '1 then zeros' (the
        decoder reads zeros past the end) always lands inside the final
        interval; pending underflow bits straddle that midpoint and can be
        dropped.
        """
        self.bits.append(1)
        return self.bits

    def finish(self) -> Bitstream:
        """Terminate the stream; a decoder reading zeros past the end
        recovers every symbol."""
        return pack_bits(self.finish_bits())


def pack_bits(bits) -> Bitstream:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i >> 3] |= 0x80 >> (i & 7)
    return Bitstream(bytes(out), len(bits))


_RAW_CUM = [0, _RAW_HALF, TOTAL_FREQ]


class RangeDecoder:
    """Decodes one coder stream; first_bit/n_bits select a bit slice of the
    backing buffer so several sections can share one byte string."""

    def __init__(self, stream: Bitstream, first_bit=0, n_bits=None):
        self.data = stream.data
        self.nbits = first_bit + (stream.bit_length - first_bit if n_bits is None else n_bits)
        self.pos = first_bit
        self.low = 0
        self.high = _MASK
        self.code = 0
        for _ in range(_STATE_BITS):
            self.code = (self.code << 1) | self._read_bit()

    def _read_bit(self):
        p = self.pos
        if p >= self.nbits:
            return 0
        self.pos = p + 1
        return (self.data[p >> 3] >> (7 - (p & 7))) & 1

    def _update(self, cum, symbol):
        low, high = self.low, self.high
        rng = high - low + 1
        total = cum[-1]
        self.high = low + cum[symbol + 1] * rng // total - 1
        self.low = low + cum[symbol] * rng // total
        while ((self.low ^ self.high) & _TOP) == 0:
            self.code = ((self.code << 1) & _MASK) | self._read_bit()
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) & _MASK) | 1
        while (self.low & ~self.high & _SECOND) != 0:
            self.code = (
                (self.code & _TOP) | ((self.code << 1) & (_MASK >> 1)) | self._read_bit()
            )
            self.low = (self.low << 1) & (_MASK >> 1)
            self.high = ((self.high << 1) & (_MASK >> 1)) | _TOP | 1

    def decode(self, cum):
        rng = self.high - self.low + 1
        total = cum[-1]
        offset = self.code - self.low
        value = ((offset + 1) * total - 1) // rng
        symbol = bisect_right(cum, value) - 1
        self._update(cum, symbol)
        return symbol

    def decode_raw(self, nbits):
        value = 0
        for _ in range(nbits):
            value = (value << 1) | self.decode(_RAW_CUM)
        return value


class CdfTable:
    """Integer frequency table over values [lo, hi] plus optional escape.

    Frequencies total exactly TOTAL_FREQ and every bin holds at least one
    count, so the cumulative table is strictly increasing.
    """

    __slots__ = ("lo", "hi", "freqs", "cum", "has_escape")

    def __init__(self, lo, freqs, has_escape):
        freqs = np.asarray(freqs, dtype=np.int64)
        if len(freqs) < 2:
            raise ValueError("alphabet must contain at least two symbols")
        if np.any(freqs < 1):
            raise ValueError("every frequency must be at least 1")
        if int(freqs.sum()) != TOTAL_FREQ:
            raise ValueError(f"frequencies must total {TOTAL_FREQ}")
        self.lo = int(lo)
        self.has_escape = bool(has_escape)
        self.hi = self.lo + len(freqs) - (2 if has_escape else 1)
        self.freqs = freqs
        self.cum = [0]
        for f in freqs.tolist():
            self.cum.append(self.cum[-1] + f)

    def __len__(self):
        return len(self.freqs)

    def freq_of(self, value):
        return int(self.freqs[value - self.lo])

    def code_length_bits(self, value):
        """Implied code length of an in-support value from its frequency."""
        return -np.log2(self.freq_of(value) / TOTAL_FREQ)

    def encode_value(self, enc: RangeEncoder, value):
        value = int(value)
        if self.lo <= value <= self.hi:
            enc.encode(self.cum, value - self.lo)
            return
        if not self.has_escape:
            raise CodingError(f"value {value} outside table support [{self.lo}, {self.hi}]")
        if not -32768 <= value <= 32767:
            raise CodingError(f"value {value} exceeds the 16-bit escape range")
        enc.encode(self.cum, len(self.freqs) - 1)
        enc.encode_raw(value & 0xFFFF, ESCAPE_RAW_BITS)

    def decode_value(self, dec: RangeDecoder):
        sym = dec.decode(self.cum)
        if self.has_escape and sym == len(self.freqs) - 1:
            raw = dec.decode_raw(ESCAPE_RAW_BITS)
            return raw - 0x10000 if raw >= 0x8000 else raw
        return self.lo + sym


def uniform_table(n_symbols) -> CdfTable:
    if n_symbols < 2 or TOTAL_FREQ % n_symbols != 0:
        raise ValueError("uniform table needs a symbol count dividing 65536")
    return CdfTable(0, np.full(n_symbols, TOTAL_FREQ // n_symbols), has_escape=False)


def range_encode(symbols, cdf_tables) -> Bitstream:
    """Encode symbols[i] against cdf_tables[i]; lossless by construction."""
    symbols = np.asarray(symbols)
    if len(symbols) != len(cdf_tables):
        raise ValueError("need exactly one CDF table per symbol")
    enc = RangeEncoder()
    for s, t in zip(symbols.tolist(), cdf_tables):
        t.encode_value(enc, s)
    return enc.finish()


def range_decode(stream: Bitstream, cdf_tables) -> np.ndarray:
    dec = RangeDecoder(stream)
    return np.array([t.decode_value(dec) for t in cdf_tables], dtype=np.int64)
