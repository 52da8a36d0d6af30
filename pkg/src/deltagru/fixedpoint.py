"""Signed fixed-point arithmetic and the LUT-based nonlinear unit.

Raw values are plain integers (Python ints or int64 numpy arrays). Every
width reduction rounds to nearest, ties to even, and every overflow
saturates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatUnsupported


@dataclass(frozen=True)
class QFormat:
    """Signed two's-complement fixed-point format.

    ``total_bits`` includes the sign bit; a raw integer ``q`` represents
    ``q * 2**-frac_bits``. Q8.8 is ``QFormat(16, 8)``.
    """

    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.total_bits not in (8, 16, 32):
            raise FormatUnsupported(f"total_bits must be 8, 16 or 32, got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise FormatUnsupported(
                f"frac_bits must be in [0, {self.total_bits}), got {self.frac_bits}")

    @property
    def int_bits(self) -> int:
        return self.total_bits - self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def nbytes(self) -> int:
        return self.total_bits // 8

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(f"<i{self.nbytes}")

    def __str__(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}"


ACT_FMT = QFormat(16, 8)
WGT_FMT = QFormat(8, 7)
ACC_FMT = QFormat(32, 15)


def accumulator_format(act_fmt: QFormat, wgt_fmt: QFormat) -> QFormat:
    """32-bit accumulator whose fraction matches a weight x activation product.

    Keeping the product aligned with the accumulator means every MAC is
    exact; Q1.7 weights with Q8.8 activations give Q17.15.
    """
    return QFormat(32, act_fmt.frac_bits + wgt_fmt.frac_bits)


def _is_scalar(x) -> bool:
    return np.ndim(x) == 0


def saturate(raw, bits: int):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if _is_scalar(raw):
        return int(min(max(int(raw), lo), hi))
    return np.clip(np.asarray(raw, dtype=np.int64), lo, hi)


def round_shift(raw, shift: int):
    """Divide by ``2**shift`` rounding half to even; a negative shift is an exact left shift."""
    if _is_scalar(raw):
        raw = int(raw)
        if shift <= 0:
            return raw << -shift
        q = raw >> shift
        rem = raw - (q << shift)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and q & 1):
            q += 1
        return q
    raw = np.asarray(raw, dtype=np.int64)
    if shift <= 0:
        return raw << -shift
    q = raw >> shift
    rem = raw - (q << shift)
    half = 1 << (shift - 1)
    return q + ((rem > half) | ((rem == half) & ((q & 1) == 1)))


def requantize(raw, src_frac: int, dst: QFormat):
    """Move a raw value to ``dst`` (round-to-nearest-even, saturating)."""
    return saturate(round_shift(raw, src_frac - dst.frac_bits), dst.total_bits)


def quantize(x, fmt: QFormat):
    """Round ``x * 2**frac_bits`` to nearest even and saturate.

    Scalars map to ``int``, arrays to int64 arrays. NaN maps to 0.
    """
    scaled = np.rint(np.nan_to_num(np.asarray(x, dtype=np.float64), nan=0.0) * fmt.scale)
    raw = np.clip(scaled, fmt.raw_min, fmt.raw_max).astype(np.int64)
    if _is_scalar(x):
        return int(raw)
    return raw


def dequantize(raw, fmt: QFormat):
    if _is_scalar(raw):
        return int(raw) / fmt.scale
    return np.asarray(raw, dtype=np.float64) / fmt.scale


def mac(w: int, d: int, acc: int, *, w_frac: int = 7, d_frac: int = 8,
        acc_fmt: QFormat = ACC_FMT) -> int:
    """One PE multiply-accumulate: ``acc + w*d`` with the product aligned to ``acc_fmt``.

    The product is exact; alignment only rounds when the product carries more
    fraction bits than the accumulator. The sum saturates at the accumulator width.
    """
    prod = round_shift(int(w) * int(d), w_frac + d_frac - acc_fmt.frac_bits)
    return saturate(int(acc) + prod, acc_fmt.total_bits)


LUT_SIZE = 1024
LUT_CLIP = 8.0


@dataclass(frozen=True, eq=False)
class NluLut:
    """Direct-indexed table over [-8, 8) for one nonlinearity.

    Entry ``i`` holds ``f(-8 + 16*i/1024)`` quantized to the activation format;
    an input selects the entry whose bin contains it (top 10 bits of the clipped
    12-bit magnitude), with no interpolation.
    """

    function: str
    fmt: QFormat = ACT_FMT
    entries: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        funcs = {"sigmoid": lambda v: 1.0 / (1.0 + np.exp(-v)), "tanh": np.tanh}
        if self.function not in funcs:
            raise ValueError(f"unknown LUT function {self.function!r}")
        if self.fmt.frac_bits < 6:
            raise FormatUnsupported("LUT indexing needs at least 6 activation fraction bits")
        xs = -LUT_CLIP + np.arange(LUT_SIZE) * (2 * LUT_CLIP / LUT_SIZE)
        entries = quantize(funcs[self.function](xs), self.fmt)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def input_clip(self) -> float:
        return LUT_CLIP

    @property
    def index_shift(self) -> int:
        return self.fmt.frac_bits - 6

    def lookup(self, raw_act):
        """Index the table with a raw activation-format input."""
        lo = -int(LUT_CLIP) * self.fmt.scale
        hi = int(LUT_CLIP) * self.fmt.scale - 1
        idx = (np.clip(np.asarray(raw_act, dtype=np.int64), lo, hi) - lo) >> self.index_shift
        out = self.entries[idx]
        if _is_scalar(raw_act):
            return int(out)
        return out


def nlu_eval(lut: NluLut, x, src_frac: int = ACC_FMT.frac_bits):
    """Requantize an accumulator value to the activation format and look it up."""
    return lut.lookup(requantize(x, src_frac, lut.fmt))


_LUTS: dict[tuple[str, QFormat], NluLut] = {}


def get_lut(function: str, fmt: QFormat = ACT_FMT) -> NluLut:
    key = (function, fmt)
    if key not in _LUTS:
        _LUTS[key] = NluLut(function, fmt)
    return _LUTS[key]
