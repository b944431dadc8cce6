"""Moving-window quantization of a parameter series into bits.

Each node converts its per-packet gain-mismatch series to one bit per
sample by comparing every sample against the mean of its window.  The
window size adapts to measured round-trip times, a cheap proxy for how
long the channel stays coherent, so a window never mixes samples whose
underlying channel has already moved on.  Comparing against a local mean
instead of a global guard band avoids long bursts of equal bits.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Iterable, Sequence, Union

import numpy as np

from .phasefit import ParameterSeries

__all__ = ["BitOrigin", "BitString", "window_size", "quantize"]

MIN_WINDOW = 3  # at least 3 packets are needed to range two free-running clocks


class BitOrigin(Enum):
    QUANTIZED = "quantized"
    RECONCILED = "reconciled"


class BitString:
    """Ordered bit sequence with a provenance tag.

    Equality compares the bits only, so a reconciled copy tests equal to
    the quantized original it reproduces.
    """

    def __init__(self, bits: Iterable[int], origin: BitOrigin = BitOrigin.QUANTIZED):
        arr = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits)
        arr = arr.astype(np.uint8)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("bit string must be 1-D and non-empty")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("bit string may only contain 0 and 1")
        self.bits = arr
        self.origin = origin

    def __len__(self) -> int:
        return int(self.bits.size)

    def __getitem__(self, index):
        return self.bits[index]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __xor__(self, other: "BitString") -> "BitString":
        if len(self) != len(other):
            raise ValueError("bit strings differ in length")
        return BitString(self.bits ^ other.bits, origin=self.origin)

    def __repr__(self) -> str:
        text = self.to_text() if len(self) <= 32 else self.to_text()[:29] + "..."
        return f"BitString({text!r}, origin={self.origin.value}, n={len(self)})"

    def to_text(self) -> str:
        """ASCII '0'/'1' rendering, most significant bit first."""
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_text(cls, text: str, origin: BitOrigin = BitOrigin.QUANTIZED) -> "BitString":
        text = text.strip()
        if not text or any(c not in "01" for c in text):
            raise ValueError("bit string text must be a non-empty run of 0/1")
        return cls([1 if c == "1" else 0 for c in text], origin=origin)

    def to_bytes(self) -> bytes:
        """Pack whole bytes MSB-first, discarding any trailing remainder bits."""
        n_bytes = len(self) // 8
        out = bytearray(n_bytes)
        for i in range(n_bytes):
            value = 0
            for bit in self.bits[8 * i : 8 * i + 8]:
                value = (value << 1) | int(bit)
            out[i] = value
        return bytes(out)


def window_size(rtts: Sequence[float], time_unit: float = 1.0) -> int:
    """Window size from the mean round-trip time, ceiled, floored at 3."""
    if len(rtts) == 0:
        raise ValueError("rtts must be non-empty")
    if any(r <= 0 for r in rtts):
        raise ValueError("all rtts must be > 0")
    if not time_unit > 0:
        raise ValueError(f"time_unit must be > 0, got {time_unit}")
    mean = sum(rtts) / len(rtts)
    return max(MIN_WINDOW, math.ceil(mean / time_unit))


def quantize(series: Union[ParameterSeries, Sequence[float]], w: int) -> BitString:
    """Quantize a series at one bit per sample with mean-threshold windows.

    Consecutive disjoint windows of ``w`` samples each emit bit 1 where the
    sample is >= the window mean and 0 otherwise (ties emit 1).  A final
    partial window keeps its real samples' mean and is padded with 0 bits,
    so the output length is always ceil(N/w)*w.
    """
    if w < MIN_WINDOW:
        raise ValueError(f"window size must be >= {MIN_WINDOW}, got {w}")
    if isinstance(series, ParameterSeries):
        values = series.values()
    else:
        values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise ValueError("series is empty")

    bits: list[int] = []
    for start in range(0, values.size, w):
        window = values[start : start + w]
        mean = float(window.mean())
        bits.extend(1 if v >= mean else 0 for v in window)
        bits.extend([0] * (w - window.size))
    return BitString(bits, origin=BitOrigin.QUANTIZED)
