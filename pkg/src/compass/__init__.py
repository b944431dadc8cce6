"""Proximity-bound Wi-Fi passphrase agreement from reciprocal channel phase.

The pipeline runs end to end against simulated channels: correlated CSI
traces for two nodes, per-packet phase-decomposition fits, moving-window
quantization into bits, syndrome-based reconciliation, and mapping of the
agreed bits into a passphrase and its 256-bit pre-shared key.  A
three-party handshake composes the stages into a provisioning flow.
"""

from .channel import CsiMatrix, CsiPacket, CsiTrace, SimConfig, generate_channel_pair, simulate_rtt, synth_phase
from .passphrase import Passphrase, Psk, StrengthReport, derive_psk, estimate_strength, map_bits
from .phasefit import (
    DEFAULT_PARAMS,
    ChannelParams,
    FitResult,
    ParameterSeries,
    extract_eps_g,
    fit_phase_params,
)
from .protocol import SessionOutcome, SessionStatus, run_handshake, scc_collect
from .quantizer import BitOrigin, BitString, quantize, window_size
from .reconcile import BchConfig, Sketch, bch_syndrome, recover, sketch, syndrome_decode

__version__ = "0.1.0"

__all__ = [
    "BchConfig",
    "BitOrigin",
    "BitString",
    "ChannelParams",
    "CsiMatrix",
    "CsiPacket",
    "CsiTrace",
    "DEFAULT_PARAMS",
    "FitResult",
    "ParameterSeries",
    "Passphrase",
    "Psk",
    "SessionOutcome",
    "SessionStatus",
    "SimConfig",
    "Sketch",
    "StrengthReport",
    "bch_syndrome",
    "derive_psk",
    "estimate_strength",
    "extract_eps_g",
    "fit_phase_params",
    "generate_channel_pair",
    "map_bits",
    "quantize",
    "recover",
    "run_handshake",
    "scc_collect",
    "simulate_rtt",
    "sketch",
    "syndrome_decode",
    "synth_phase",
    "window_size",
]
