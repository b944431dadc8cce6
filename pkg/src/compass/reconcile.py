"""Syndrome-based secure-sketch reconciliation of quantized bit strings.

Two nodes hold bit strings that agree in most positions.  The initiating
side publishes, for each 56-bit block embedded in a length-127 binary BCH
codeword space over GF(2^7), the block's syndrome at the nine odd powers
of the primitive element.  The recovering side XORs its own block
syndrome with the published one; by linearity the difference is exactly
the syndrome of the error pattern between the two blocks, which a
Berlekamp-Massey decode pinpoints as long as at most 9 bits per block
disagree.  Publishing syndromes leaks at most 63 bits per block and
never the bits themselves.

Positions 56..126 of every embedded word are structurally zero, so a
decoded error position in that range is evidence of tampering or of more
noise than the code can carry, and fails the block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .quantizer import BitOrigin, BitString

__all__ = [
    "GF128",
    "BchConfig",
    "DEFAULT_BCH",
    "Sketch",
    "LeakageReport",
    "UncorrectableError",
    "ReconciliationError",
    "bch_syndrome",
    "syndrome_decode",
    "sketch",
    "recover",
    "leakage_report",
    "sketch_to_text",
    "sketch_from_text",
    "write_sketch",
    "read_sketch",
]

#: x^7 + x^3 + 1, a primitive polynomial over GF(2).  Fixed by convention;
#: interoperating implementations must agree on this constant.
PRIMITIVE_POLY = 0b1000_1001

SKETCH_HEADER = "COMPASS-SS v1"


class UncorrectableError(Exception):
    """No error pattern of weight <= t matches the given syndrome."""


class ReconciliationError(Exception):
    """A block could not be reconciled; carries the failing block index."""

    def __init__(self, block_index: int, reason: str):
        super().__init__(f"block {block_index}: {reason}")
        self.block_index = block_index


class GF128:
    """GF(2^7) arithmetic through log/antilog tables.

    Tables are built once and never mutated, so a shared instance is safe
    to use from any number of threads.
    """

    def __init__(self, primitive_poly: int = PRIMITIVE_POLY):
        self.order = 128
        self.primitive_poly = primitive_poly
        exp = [0] * 254
        log = [0] * 128
        x = 1
        for i in range(127):
            exp[i] = x
            log[x] = i
            x <<= 1
            if x & 0x80:
                x ^= primitive_poly
        if x != 1:
            raise ValueError(f"polynomial {primitive_poly:#x} is not primitive for GF(2^7)")
        for i in range(127, 254):
            exp[i] = exp[i - 127]
        self.exp = exp
        self.log = log

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self.exp[self.log[a] + self.log[b]]

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("zero has no inverse")
        return self.exp[127 - self.log[a]]

    def square(self, a: int) -> int:
        if a == 0:
            return 0
        return self.exp[(2 * self.log[a]) % 127]

    def alpha_pow(self, e: int) -> int:
        return self.exp[e % 127]


_GF = GF128()
_EXP_NP = np.array(_GF.exp[:127], dtype=np.uint8)

#: Syndromes are power sums at the odd exponents 1, 3, ..., 17.
ODD_EXPONENTS = tuple(range(1, 18, 2))

# _SYN_POW[j_row, pos] = alpha^(odd_exponent[j_row] * pos); the syndrome of
# a bit pattern is the XOR of its support's columns.
_SYN_POW = np.empty((len(ODD_EXPONENTS), 127), dtype=np.uint8)
for _row, _j in enumerate(ODD_EXPONENTS):
    _SYN_POW[_row] = _EXP_NP[(_j * np.arange(127)) % 127]

_J_RANGE = np.arange(127)


@dataclass(frozen=True)
class BchConfig:
    """Code geometry: n = 2^m - 1 codeword bits, t correctable errors."""

    m: int = 7
    n: int = 127
    t: int = 9
    block_payload_bits: int = 56
    primitive_poly: int = PRIMITIVE_POLY

    def __post_init__(self) -> None:
        if self.n != 2**self.m - 1:
            raise ValueError(f"n must equal 2^m - 1, got n={self.n} m={self.m}")
        if self.t * self.m > self.n - 1:
            raise ValueError("t*m must not exceed n - 1")
        if not 1 <= self.block_payload_bits <= self.n:
            raise ValueError("block payload must fit inside a codeword")


DEFAULT_BCH = BchConfig()


@dataclass(frozen=True)
class Sketch:
    """Public helper data: one 9-element syndrome per 56-bit block."""

    blocks: tuple[tuple[int, ...], ...]
    payload_bits: int

    def __post_init__(self) -> None:
        if self.payload_bits < 1:
            raise ValueError("payload_bits must be >= 1")
        expected = -(-self.payload_bits // DEFAULT_BCH.block_payload_bits)
        if len(self.blocks) != expected:
            raise ValueError(
                f"expected {expected} blocks for {self.payload_bits} payload bits, "
                f"got {len(self.blocks)}"
            )
        for block in self.blocks:
            if len(block) != DEFAULT_BCH.t:
                raise ValueError("each syndrome must hold exactly t field elements")
            if any(not 0 <= v < 128 for v in block):
                raise ValueError("syndrome elements must lie in [0, 127]")


@dataclass(frozen=True)
class LeakageReport:
    """How much the published sketch can reveal about the quantized bits."""

    sketch_bits: int  # bits actually published: blocks * t * m
    per_block_bound_bits: int  # entropy-loss cap per block: t * log2(n + 1)
    per_block_payload_bits: int  # a block only contains this many secret bits
    n_blocks: int


def _support_syndrome(support: np.ndarray) -> tuple[int, ...]:
    if support.size == 0:
        return (0,) * len(ODD_EXPONENTS)
    cols = _SYN_POW[:, support]
    return tuple(int(v) for v in np.bitwise_xor.reduce(cols, axis=1))


def bch_syndrome(block: Sequence[int]) -> tuple[int, ...]:
    """Power-sum syndrome of a 127-bit word at the odd exponents.

    For a word with bit i set, each component j accumulates alpha^(j*i).
    The map is linear over GF(2): syn(x ^ y) = syn(x) ^ syn(y).
    """
    arr = np.asarray(block, dtype=np.uint8)
    if arr.ndim != 1 or arr.size != DEFAULT_BCH.n:
        raise ValueError(f"block must be a {DEFAULT_BCH.n}-bit word")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("block may only contain 0 and 1")
    return _support_syndrome(np.flatnonzero(arr))


def _berlekamp_massey(syndromes: list[int], t: int) -> tuple[list[int], int]:
    """Connection polynomial of the syndrome sequence over GF(2^7).

    Returns the error locator coefficients in ascending order and its
    LFSR length L.
    """
    exp = _GF.exp
    log = _GF.log
    size = 2 * t + 1
    c = [0] * size
    b = [0] * size
    c[0] = 1
    b[0] = 1
    length = 0
    shift = 1
    last_disc = 1
    for n in range(2 * t):
        disc = syndromes[n]
        for i in range(1, length + 1):
            ci = c[i]
            si = syndromes[n - i]
            if ci and si:
                disc ^= exp[log[ci] + log[si]]
        if disc == 0:
            shift += 1
            continue
        coef_log = (log[disc] + 127 - log[last_disc]) % 127
        if 2 * length <= n:
            saved = c.copy()
            for i in range(size - shift):
                bi = b[i]
                if bi:
                    c[i + shift] ^= exp[coef_log + log[bi]]
            length = n + 1 - length
            b = saved
            last_disc = disc
            shift = 1
        else:
            for i in range(size - shift):
                bi = b[i]
                if bi:
                    c[i + shift] ^= exp[coef_log + log[bi]]
            shift += 1
    return c[: length + 1], length


def _locator_positions(coeffs: list[int]) -> list[int]:
    """Roots of the locator polynomial, mapped back to bit positions.

    Evaluates the polynomial at every alpha^j; a root at alpha^j marks an
    error at position (127 - j) mod 127.
    """
    acc = np.zeros(127, dtype=np.uint8)
    for i, coeff in enumerate(coeffs):
        if coeff == 0:
            continue
        acc ^= _EXP_NP[(_GF.log[coeff] + i * _J_RANGE) % 127]
    roots = np.flatnonzero(acc == 0)
    return sorted(int((127 - j) % 127) for j in roots)


def syndrome_decode(delta: Sequence[int]) -> set[int]:
    """Error positions of the weight-<=t pattern with the given syndrome.

    Raises UncorrectableError when no such pattern exists.  A nonzero
    syndrome produced by a heavier pattern may still decode, but then it
    decodes to a different pattern, which callers detect through the
    payload-region check or by credential mismatch.
    """
    delta = tuple(int(v) for v in delta)
    if len(delta) != DEFAULT_BCH.t:
        raise ValueError(f"syndrome must have {DEFAULT_BCH.t} elements")
    if any(not 0 <= v < 128 for v in delta):
        raise ValueError("syndrome elements must lie in [0, 127]")
    if all(v == 0 for v in delta):
        return set()

    # Rebuild the even-indexed power sums: over GF(2), s_{2j} = s_j^2.
    full = [0] * (2 * DEFAULT_BCH.t + 1)
    for exponent, value in zip(ODD_EXPONENTS, delta):
        full[exponent] = value
    for j in range(1, DEFAULT_BCH.t + 1):
        full[2 * j] = _GF.square(full[j])

    coeffs, length = _berlekamp_massey(full[1:], DEFAULT_BCH.t)
    if length == 0 or length > DEFAULT_BCH.t:
        raise UncorrectableError(f"locator degree {length} out of range")
    positions = _locator_positions(coeffs)
    if len(positions) != length:
        raise UncorrectableError("locator polynomial does not split over the field")
    if _support_syndrome(np.array(positions)) != delta:
        raise UncorrectableError("decoded pattern does not reproduce the syndrome")
    return set(positions)


def _pad_bits(bits: np.ndarray, block_size: int) -> np.ndarray:
    remainder = bits.size % block_size
    if remainder == 0:
        return bits
    return np.concatenate([bits, np.zeros(block_size - remainder, dtype=np.uint8)])


def sketch(q: BitString, config: BchConfig = DEFAULT_BCH) -> Sketch:
    """Publishable sketch of a bit string: one syndrome per 56-bit block.

    The input is zero-padded to a whole number of blocks; each block
    occupies positions 0..55 of its codeword-space word.
    """
    padded = _pad_bits(q.bits, config.block_payload_bits)
    blocks = []
    for start in range(0, padded.size, config.block_payload_bits):
        chunk = padded[start : start + config.block_payload_bits]
        blocks.append(_support_syndrome(np.flatnonzero(chunk) + 0))
    return Sketch(blocks=tuple(blocks), payload_bits=len(q))


def recover(q_other: BitString, s: Sketch, config: BchConfig = DEFAULT_BCH) -> BitString:
    """Reconstruct the sketch originator's bits from a correlated copy.

    Per block, the XOR of the local syndrome with the published one is
    decoded to the disagreement pattern and the local bits are flipped at
    those positions.  Raises ReconciliationError naming the first failing
    block when a block holds more than t disagreements or decodes into
    the structurally zero padding region.  Raises ValueError when the
    padded input does not match the sketch's block count.
    """
    payload = config.block_payload_bits
    padded = _pad_bits(q_other.bits, payload).copy()
    if padded.size != len(s.blocks) * payload:
        raise ValueError(
            f"bit string pads to {padded.size} bits but sketch has "
            f"{len(s.blocks)} blocks of {payload}"
        )
    for index, published in enumerate(s.blocks):
        start = index * payload
        chunk = padded[start : start + payload]
        local = _support_syndrome(np.flatnonzero(chunk))
        delta = tuple(a ^ b for a, b in zip(local, published))
        try:
            positions = syndrome_decode(delta)
        except UncorrectableError as exc:
            raise ReconciliationError(index, f"uncorrectable ({exc})") from exc
        for pos in positions:
            if pos >= payload:
                raise ReconciliationError(index, f"error decoded into padding at {pos}")
            chunk[pos] ^= 1
    return BitString(padded[: s.payload_bits], origin=BitOrigin.RECONCILED)


def leakage_report(s: Sketch, config: BchConfig = DEFAULT_BCH) -> LeakageReport:
    """Account for the information the published sketch can leak."""
    per_block_bound = int(config.t * round(math.log2(config.n + 1)))
    return LeakageReport(
        sketch_bits=len(s.blocks) * config.t * config.m,
        per_block_bound_bits=per_block_bound,
        per_block_payload_bits=config.block_payload_bits,
        n_blocks=len(s.blocks),
    )


def sketch_to_text(s: Sketch) -> str:
    """Serialize in the `COMPASS-SS v1` wire format."""
    lines = [f"{SKETCH_HEADER} {s.payload_bits} {len(s.blocks)}"]
    for block in s.blocks:
        lines.append(" ".join(str(v) for v in block))
    return "\n".join(lines) + "\n"


def sketch_from_text(text: str) -> Sketch:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty sketch file")
    header = lines[0].split()
    if header[:2] != SKETCH_HEADER.split() or len(header) != 4:
        raise ValueError(f"bad sketch header: {lines[0]!r}")
    payload_bits = int(header[2])
    n_blocks = int(header[3])
    if len(lines) - 1 != n_blocks:
        raise ValueError(f"header promises {n_blocks} blocks, found {len(lines) - 1}")
    blocks = []
    for lineno, line in enumerate(lines[1:], start=2):
        values = tuple(int(v) for v in line.split())
        if len(values) != DEFAULT_BCH.t:
            raise ValueError(f"line {lineno}: expected {DEFAULT_BCH.t} syndrome elements")
        blocks.append(values)
    return Sketch(blocks=tuple(blocks), payload_bits=payload_bits)


def write_sketch(s: Sketch, path) -> None:
    with open(path, "w", encoding="ascii") as handle:
        handle.write(sketch_to_text(s))


def read_sketch(path) -> Sketch:
    with open(path, "r", encoding="ascii") as handle:
        return sketch_from_text(handle.read())
