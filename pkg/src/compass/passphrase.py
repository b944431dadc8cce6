"""Bit-to-passphrase mapping, PSK derivation, and strength estimation.

Reconciled bits become a printable credential one byte at a time: bytes
that land on printable ASCII stay as that character, control bytes become
two uppercase hex digits and high bytes two lowercase hex digits.  The
resulting passphrase satisfies the usual complexity policies (mixed case,
digits, symbols) and feeds the standard Wi-Fi passphrase-to-PSK mapping,
PBKDF2-HMAC-SHA1 with 4096 iterations salted by the SSID.
"""

from __future__ import annotations

import hashlib
import math
import string
from dataclasses import dataclass
from importlib import resources
from itertools import groupby

from .quantizer import BitString

__all__ = [
    "Passphrase",
    "Psk",
    "StrengthReport",
    "map_bits",
    "derive_psk",
    "estimate_strength",
    "load_human_corpus",
]

PBKDF2_ITERATIONS = 4096
PSK_BYTES = 32

# Character-class pool sizes for the entropy estimate.  The symbol class
# counts all 33 non-alphanumeric printables (space included) even though
# the byte mapping never emits a space.
_POOLS = {"lower": 26, "upper": 26, "digit": 10, "symbol": 33}
_SYMBOL_CHARS = set(string.punctuation) | {" "}


@dataclass(frozen=True)
class Passphrase:
    """Printable credential; every character is in the ASCII 0x21..0x7E range."""

    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("passphrase must be non-empty")
        if any(not 0x21 <= ord(c) <= 0x7E for c in self.text):
            raise ValueError("passphrase must be printable ASCII without spaces")


@dataclass(frozen=True)
class Psk:
    """256-bit pre-shared key."""

    key: bytes

    def __post_init__(self) -> None:
        if len(self.key) != PSK_BYTES:
            raise ValueError(f"PSK must be exactly {PSK_BYTES} bytes")

    def hex(self) -> str:
        return self.key.hex()


@dataclass(frozen=True)
class StrengthReport:
    entropy_bits: float
    guess_count_log10: float
    char_classes: frozenset[str]


def map_bits(q: BitString) -> Passphrase:
    """Map a bit string to a passphrase, one byte (MSB first) at a time.

    Bytes 0x21..0x7E map to their ASCII character; 0x00..0x20 and 0x7F
    (all control characters) map to two uppercase hex digits; 0x80..0xFF
    map to two lowercase hex digits.  Trailing bits short of a whole byte
    are discarded.
    """
    data = q.to_bytes()
    if not data:
        raise ValueError("bit string shorter than one byte after remainder discard")
    parts = []
    for byte in data:
        if 0x21 <= byte <= 0x7E:
            parts.append(chr(byte))
        elif byte >= 0x80:
            parts.append(f"{byte:02x}")
        else:
            parts.append(f"{byte:02X}")
    return Passphrase("".join(parts))


def derive_psk(p: Passphrase, ssid: str) -> Psk:
    """Stretch a passphrase into the 256-bit key the Wi-Fi handshake consumes."""
    salt = ssid.encode("utf-8")
    if not 1 <= len(salt) <= 32:
        raise ValueError(f"ssid must be 1..32 bytes, got {len(salt)}")
    key = hashlib.pbkdf2_hmac(
        "sha1", p.text.encode("utf-8"), salt, PBKDF2_ITERATIONS, dklen=PSK_BYTES
    )
    return Psk(key)


def _char_class(c: str) -> str | None:
    if c.islower():
        return "lower"
    if c.isupper():
        return "upper"
    if c.isdigit():
        return "digit"
    if c in _SYMBOL_CHARS:
        return "symbol"
    return None


def estimate_strength(p: Passphrase) -> StrengthReport:
    """Pool-size entropy estimate with a penalty for repeated-character runs.

    entropy = effective_length * log2(pool), where the pool sums the sizes
    of the character classes present and a run of one repeated character
    counts at most twice.  The expected brute-force guess count is half
    the keyspace, reported as log10(2^(entropy - 1)) and clamped at zero.
    """
    classes = frozenset(cls for c in p.text if (cls := _char_class(c)) is not None)
    pool = sum(_POOLS[cls] for cls in classes)
    effective_length = sum(min(len(list(run)), 2) for _, run in groupby(p.text))
    entropy = effective_length * math.log2(pool) if pool else 0.0
    guesses = max(0.0, (entropy - 1.0) * math.log10(2.0))
    return StrengthReport(
        entropy_bits=entropy, guess_count_log10=guesses, char_classes=classes
    )


def load_human_corpus() -> list[Passphrase]:
    """Bundled human-style Wi-Fi passphrases used as a strength baseline."""
    text = resources.files("compass").joinpath("data/human_passphrases.txt").read_text("ascii")
    phrases = [Passphrase(line.strip()) for line in text.splitlines() if line.strip()]
    if not phrases:
        raise ValueError("bundled passphrase corpus is empty")
    return phrases
