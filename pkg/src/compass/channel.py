"""Synthetic reciprocity-correlated CSI traces at desk scale.

Stands in for hardware CSI extraction: two legitimate nodes observe the
same per-packet latent channel parameters through independent phase noise,
with a configurable correlation knob standing in for physical distance.
An optional observer ("eve") sees the elementwise product of the
legitimate channel and an independent second channel, which scrambles her
phase profile even at perfect legitimate-side correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, TextIO

import numpy as np

from .phasefit import DEFAULT_PARAMS, ChannelParams, _model, _subcarrier_angles

__all__ = [
    "SingularModelError",
    "CsiMatrix",
    "CsiPacket",
    "CsiTrace",
    "SimConfig",
    "synth_phase",
    "simulate_rtt",
    "generate_channel_pair",
    "trace_to_text",
    "trace_from_text",
    "write_trace",
    "read_trace",
]

TRACE_HEADER = "COMPASS-CSI v1"

#: Probe packets are spaced one time unit apart; RTTs are expressed in the
#: same unit so the quantizer window derives directly from their mean.
PACKET_INTERVAL = 1.0

# Per-packet spread of the shared latent parameters around the nominal
# operating point.  The gain-mismatch spread is the entropy source of the
# whole pipeline; the delay spread is kept well under the extraction
# module's outlier floor so both sides keep identical packet sets.
PARAM_SPREAD = np.array([0.08, 2e-4, 0.01, 1e-4, 0.05])

# Each side additionally sees an independent perturbation of the latent
# parameters scaled by DECORRELATION_GAIN * (1 - correlation); the gain is
# sized so correlation=0 leaves almost no common randomness.
DECORRELATION_GAIN = 3.0

# Gain mismatch is clipped to the range where the arctangent ripple keeps
# adjacent-subcarrier phase jumps below pi, so unwrapping stays exact.
EPS_G_RANGE = (0.05, 0.90)


class SingularModelError(ValueError):
    """Phase model produced a non-finite value at some subcarrier."""

    def __init__(self, subcarrier: int):
        super().__init__(f"phase model singular at subcarrier k={subcarrier}")
        self.subcarrier = subcarrier


class CsiMatrix:
    """Complex channel estimates indexed [rx_antenna][tx_antenna][subcarrier]."""

    def __init__(self, entries: np.ndarray):
        entries = np.asarray(entries, dtype=complex)
        if entries.ndim != 3 or 0 in entries.shape:
            raise ValueError(f"CSI matrix must be 3-D and non-empty, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("CSI matrix contains non-finite entries")
        self.entries = entries

    @property
    def n_rx(self) -> int:
        return self.entries.shape[0]

    @property
    def n_tx(self) -> int:
        return self.entries.shape[1]

    @property
    def n_sc(self) -> int:
        return self.entries.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CsiMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __repr__(self) -> str:
        return f"CsiMatrix(shape={self.entries.shape})"


@dataclass(frozen=True)
class CsiPacket:
    packet_index: int
    timestamp: float
    rtt: float
    csi: CsiMatrix


@dataclass
class CsiTrace:
    """Ordered per-packet CSI for one node."""

    packets: list[CsiPacket]
    node_id: str

    def __post_init__(self) -> None:
        indices = [p.packet_index for p in self.packets]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("packet_index must be strictly increasing")
        times = [p.timestamp for p in self.packets]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("timestamps must be non-decreasing")
        if any(p.rtt <= 0 for p in self.packets):
            raise ValueError("all rtt values must be > 0")

    def rtts(self) -> list[float]:
        return [p.rtt for p in self.packets]


@dataclass(frozen=True)
class SimConfig:
    """Knobs for the synthetic channel.

    ``correlation`` is a distance proxy in [0, 1]: 1 means the two nodes
    observe identical latent channels, 0 leaves almost no common
    randomness.  ``noise_sigma`` is the standard deviation of additive
    per-subcarrier phase noise in radians.
    """

    n_packets: int
    n_sc: int = 56
    correlation: float = 1.0
    noise_sigma: float = 0.02
    rtt_mean: float = 2.5
    rtt_jitter: float = 0.4
    eve_enabled: bool = False
    seed: int = 0
    f_s: float = 1.0
    n_rx: int = 3
    n_tx: int = 3

    def __post_init__(self) -> None:
        if self.n_packets < 1:
            raise ValueError(f"n_packets must be >= 1, got {self.n_packets}")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError(f"correlation must be in [0, 1], got {self.correlation}")
        if self.noise_sigma < 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not self.rtt_mean > 0.0:
            raise ValueError(f"rtt_mean must be > 0, got {self.rtt_mean}")
        if not 0.0 <= self.rtt_jitter < self.rtt_mean:
            raise ValueError("rtt_jitter must satisfy 0 <= jitter < rtt_mean")
        if self.n_sc < 1 or self.n_rx < 1 or self.n_tx < 1:
            raise ValueError("matrix dimensions must be >= 1")
        if not self.f_s > 0:
            raise ValueError(f"f_s must be > 0, got {self.f_s}")


def synth_phase(params: ChannelParams, n_sc: int, f_s: float = 1.0) -> np.ndarray:
    """Forward-evaluate the phase decomposition at subcarriers 1..n_sc.

    Raises SingularModelError identifying the first offending subcarrier
    if the evaluation is non-finite anywhere.
    """
    if n_sc < 1:
        raise ValueError(f"n_sc must be >= 1, got {n_sc}")
    if not f_s > 0:
        raise ValueError(f"f_s must be > 0, got {f_s}")
    values = _model(params.as_array(), _subcarrier_angles(n_sc, f_s))
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise SingularModelError(int(bad[0]) + 1)
    return values


def simulate_rtt(config: SimConfig, rng: np.random.Generator | None = None) -> list[float]:
    """Draw one round-trip time per packet, rtt_mean plus uniform jitter."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    jitter = rng.uniform(-config.rtt_jitter, config.rtt_jitter, size=config.n_packets)
    return [float(config.rtt_mean + j) for j in jitter]


def _draw_params(rng: np.random.Generator, center: np.ndarray, scale: np.ndarray) -> np.ndarray:
    values = center + scale * rng.standard_normal(5)
    values[0] = min(max(values[0], EPS_G_RANGE[0]), EPS_G_RANGE[1])
    return values


def _phase_to_entries(phases: np.ndarray) -> np.ndarray:
    # Unit-modulus entries; only the angle is consumed downstream.
    return np.exp(1j * phases)


def generate_channel_pair(
    config: SimConfig,
    *,
    with_latents: bool = False,
):
    """Generate correlated traces for two nodes plus an optional observer.

    Returns ``(trace_a, trace_b, trace_e)`` with ``trace_e`` None unless
    ``config.eve_enabled``.  With ``with_latents=True`` a fourth element
    is appended: a list of per-packet ``(legit_matrix, observer_matrix)``
    latent pairs whose elementwise product equals the observer's entries.

    The same config (including seed) always reproduces bit-identical
    traces.
    """
    rng = np.random.default_rng(config.seed)
    x = _subcarrier_angles(config.n_sc, config.f_s)
    center = DEFAULT_PARAMS.as_array()
    side_scale = DECORRELATION_GAIN * (1.0 - config.correlation) * PARAM_SPREAD
    shape = (config.n_rx, config.n_tx, config.n_sc)

    packets_a: list[CsiPacket] = []
    packets_b: list[CsiPacket] = []
    packets_e: list[CsiPacket] = []
    latents: list[tuple[np.ndarray, np.ndarray]] = []

    for i in range(config.n_packets):
        rtt = float(config.rtt_mean + rng.uniform(-config.rtt_jitter, config.rtt_jitter))
        timestamp = i * PACKET_INTERVAL
        entries_a = np.empty(shape, dtype=complex)
        entries_b = np.empty(shape, dtype=complex)
        shared_latent = np.empty(shape, dtype=complex)
        for rx in range(config.n_rx):
            for tx in range(config.n_tx):
                latent = _draw_params(rng, center, PARAM_SPREAD)
                shared_phase = _model(latent, x)
                shared_latent[rx, tx, :] = _phase_to_entries(shared_phase)
                for entries in (entries_a, entries_b):
                    seen = _draw_params(rng, latent, side_scale)
                    phase = _model(seen, x) + rng.normal(0.0, config.noise_sigma, config.n_sc)
                    entries[rx, tx, :] = _phase_to_entries(phase)
        packets_a.append(CsiPacket(i, timestamp, rtt, CsiMatrix(entries_a)))
        packets_b.append(CsiPacket(i, timestamp, rtt, CsiMatrix(entries_b)))

        if config.eve_enabled:
            # The observer's channel is the elementwise product of the
            # legitimate latent channel and an independent second hop.
            entries_o = np.empty(shape, dtype=complex)
            for rx in range(config.n_rx):
                for tx in range(config.n_tx):
                    hop = _draw_params(rng, center, PARAM_SPREAD)
                    entries_o[rx, tx, :] = _phase_to_entries(_model(hop, x))
            product = shared_latent * entries_o
            packets_e.append(CsiPacket(i, timestamp, rtt, CsiMatrix(product)))
            if with_latents:
                latents.append((shared_latent, entries_o))

    trace_a = CsiTrace(packets=packets_a, node_id="alice")
    trace_b = CsiTrace(packets=packets_b, node_id="bob")
    trace_e = CsiTrace(packets=packets_e, node_id="eve") if config.eve_enabled else None
    if with_latents:
        return trace_a, trace_b, trace_e, latents
    return trace_a, trace_b, trace_e


def trace_to_text(trace: CsiTrace) -> str:
    """Serialize a trace to the plain-text `COMPASS-CSI v1` format.

    One line per packet: `packet_index timestamp rtt` followed by
    n_rx*n_tx*n_sc `re im` pairs in row-major [rx][tx][sc] order.
    """
    if not trace.packets:
        raise ValueError("cannot serialize an empty trace")
    first = trace.packets[0].csi
    lines = [f"{TRACE_HEADER} {first.n_rx} {first.n_tx} {first.n_sc}"]
    for packet in trace.packets:
        fields = [str(packet.packet_index), repr(packet.timestamp), repr(packet.rtt)]
        for value in packet.csi.entries.reshape(-1):
            fields.append(repr(value.real))
            fields.append(repr(value.imag))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def trace_from_text(text: str, node_id: str = "trace") -> CsiTrace:
    """Parse the `COMPASS-CSI v1` format back into a trace."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty trace file")
    header = lines[0].split()
    if header[:2] != TRACE_HEADER.split() or len(header) != 5:
        raise ValueError(f"bad trace header: {lines[0]!r}")
    n_rx, n_tx, n_sc = (int(v) for v in header[2:])
    n_complex = n_rx * n_tx * n_sc
    packets = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) != 3 + 2 * n_complex:
            raise ValueError(
                f"line {lineno}: expected {3 + 2 * n_complex} fields, got {len(fields)}"
            )
        values = np.array([float(v) for v in fields[3:]])
        entries = (values[0::2] + 1j * values[1::2]).reshape(n_rx, n_tx, n_sc)
        packets.append(
            CsiPacket(
                packet_index=int(fields[0]),
                timestamp=float(fields[1]),
                rtt=float(fields[2]),
                csi=CsiMatrix(entries),
            )
        )
    return CsiTrace(packets=packets, node_id=node_id)


def write_trace(trace: CsiTrace, path) -> None:
    with open(path, "w", encoding="ascii") as handle:
        handle.write(trace_to_text(trace))


def read_trace(path, node_id: str | None = None) -> CsiTrace:
    with open(path, "r", encoding="ascii") as handle:
        text = handle.read()
    if node_id is None:
        node_id = str(path)
    return trace_from_text(text, node_id=node_id)
