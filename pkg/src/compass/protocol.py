"""Three-party provisioning handshake over an in-memory transport.

An enrollee with no usable interface is admitted to a network in two
passphrase-agreement passes: first against a trusted authenticator, which
pushes the resulting interim credential to the access point over its
already-secured link, then directly against the access point, which keeps
the final credential.  Every message crossing the simulated transport is
appended to a transcript; the quantized bits themselves never leave a
node, only the per-block syndromes of the secure sketch do.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from . import reconcile
from .channel import CsiPacket, CsiTrace, SimConfig, generate_channel_pair
from .passphrase import Passphrase, map_bits
from .phasefit import EmptySeriesError, extract_eps_g
from .quantizer import quantize, window_size

__all__ = [
    "Role",
    "MessageKind",
    "SessionStatus",
    "NodeIdentity",
    "ProtocolMessage",
    "SessionOutcome",
    "AuthenticatorNode",
    "EnrolleeNode",
    "AccessPointNode",
    "Transport",
    "CollectionError",
    "PipelineFailure",
    "scc_collect",
    "run_handshake",
    "transcript_to_text",
    "write_transcript",
]

logger = logging.getLogger(__name__)

#: Residual clock disagreement left after alignment, seconds.
CLOCK_ALIGN_RESIDUAL = 5e-4
MIN_ALIGNED_PACKETS = 3
MAX_PASS2_ATTEMPTS = 3
DEFAULT_T_D = 0.5


class CollectionError(RuntimeError):
    """Synchronized collection kept too few aligned packets."""


class PipelineFailure(RuntimeError):
    """One pairwise agreement run failed before producing a credential."""


class Role(Enum):
    AUTHENTICATOR = "authenticator"
    ENROLLEE = "enrollee"
    ACCESS_POINT = "access_point"


class MessageKind(Enum):
    BROADCAST = "broadcast"
    CONFIRM = "confirm"
    SCC_START = "scc_start"
    PROBE = "probe"
    SKETCH_TRANSFER = "sketch_transfer"
    NET_INFO = "net_info"
    ASSOC_REQUEST = "assoc_request"
    CRED_PUSH = "cred_push"
    NOTIFY_JOINED = "notify_joined"
    REJECT = "reject"


class SessionStatus(Enum):
    JOINED = "joined"
    RECON_FAILED_PASS1 = "recon_failed_pass1"
    RECON_FAILED_PASS2 = "recon_failed_pass2"
    REJECTED = "rejected"


@dataclass
class NodeIdentity:
    role: Role
    mac: bytes
    name_id: str
    clock_offset: float = 0.0

    def __post_init__(self) -> None:
        if len(self.mac) != 6:
            raise ValueError("mac must be 6 bytes")


@dataclass(frozen=True)
class ProtocolMessage:
    kind: MessageKind
    sender: NodeIdentity
    receiver: NodeIdentity
    payload: dict

    def payload_bytes(self) -> bytes:
        return json.dumps(self.payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class SessionOutcome:
    status: SessionStatus
    passphrase2: Passphrase | None
    transcript: list[ProtocolMessage]


@dataclass
class AuthenticatorNode:
    """Trusted rich-interface device that vouches for new enrollees."""

    identity: NodeIdentity
    passphrase1: Passphrase | None = None


@dataclass
class EnrolleeNode:
    """Joining device; may have no screen or keypad at all."""

    identity: NodeIdentity
    passphrase1: Passphrase | None = None
    passphrase2: Passphrase | None = None
    network: dict | None = None

    def association_hash(self) -> str:
        if self.passphrase1 is None:
            raise RuntimeError("no interim credential to hash")
        return hashlib.sha256(self.passphrase1.text.encode("utf-8")).hexdigest()


@dataclass
class AccessPointNode:
    """Hidden network head; admits enrollees vouched for by an authenticator."""

    identity: NodeIdentity
    ssid: str
    pending: dict[str, Passphrase] = field(default_factory=dict)
    passphrase2: Passphrase | None = None

    def register_credential(self, mac_hex: str, credential: Passphrase) -> None:
        self.pending[mac_hex] = credential

    def verify_association(self, mac_hex: str, offered_hash: str) -> bool:
        credential = self.pending.get(mac_hex)
        if credential is None:
            return False
        expected = hashlib.sha256(credential.text.encode("utf-8")).hexdigest()
        return expected == offered_hash

    def wipe_credentials(self) -> None:
        self.pending.clear()


class Transport:
    """FIFO message log; delivery is synchronous and loss-free."""

    def __init__(self) -> None:
        self.log: list[ProtocolMessage] = []

    def send(
        self,
        kind: MessageKind,
        sender: NodeIdentity,
        receiver: NodeIdentity,
        payload: dict,
    ) -> ProtocolMessage:
        message = ProtocolMessage(kind=kind, sender=sender, receiver=receiver, payload=payload)
        self.log.append(message)
        logger.debug("%s -> %s: %s", sender.role.value, receiver.role.value, kind.value)
        return message


def scc_collect(
    a,
    b,
    n: int,
    t_d: float,
    channel: SimConfig,
    *,
    rng: np.random.Generator | None = None,
    transport: Transport | None = None,
    induced_antenna_faults: frozenset[int] | set[int] = frozenset(),
    eve_sink: Callable[[CsiTrace], None] | None = None,
) -> tuple[CsiTrace, CsiTrace]:
    """Collect time-aligned CSI on both ends of a probing exchange.

    Node ``a`` schedules the exchange and ``b`` aligns its clock to within
    CLOCK_ALIGN_RESIDUAL before probing starts after ``t_d``.  Packets
    whose reported antenna combination is not the full RxTx set (simulated
    through ``induced_antenna_faults``) are discarded on both sides, so
    the returned traces always hold identical packet-index sets.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if t_d < 0:
        raise ValueError(f"t_d must be >= 0, got {t_d}")
    if rng is None:
        rng = np.random.default_rng(channel.seed)

    if transport is not None:
        transport.send(
            MessageKind.SCC_START,
            a.identity,
            b.identity,
            {"n_packets": n, "t_d": t_d, "clock": a.identity.clock_offset},
        )
    residual = float(rng.uniform(-CLOCK_ALIGN_RESIDUAL, CLOCK_ALIGN_RESIDUAL))
    b.identity.clock_offset = a.identity.clock_offset + residual
    if transport is not None:
        transport.send(
            MessageKind.CONFIRM, b.identity, a.identity, {"clock": b.identity.clock_offset}
        )

    config = replace(channel, n_packets=n, seed=int(rng.integers(0, 2**63)))
    trace_a, trace_b, trace_e = generate_channel_pair(config)
    if trace_e is not None and eve_sink is not None:
        eve_sink(trace_e)

    if transport is not None:
        for packet in trace_a.packets:
            transport.send(
                MessageKind.PROBE, a.identity, b.identity, {"packet_index": packet.packet_index}
            )

    faults = set(induced_antenna_faults)

    def localize(trace: CsiTrace, node) -> CsiTrace:
        packets = [
            CsiPacket(
                packet_index=p.packet_index,
                timestamp=t_d + p.timestamp + node.identity.clock_offset,
                rtt=p.rtt,
                csi=p.csi,
            )
            for p in trace.packets
            if p.packet_index not in faults
        ]
        return CsiTrace(packets=packets, node_id=node.identity.name_id)

    local_a = localize(trace_a, a)
    local_b = localize(trace_b, b)
    if len(local_a.packets) < MIN_ALIGNED_PACKETS:
        raise CollectionError(
            f"only {len(local_a.packets)} aligned packets survived, need {MIN_ALIGNED_PACKETS}"
        )
    return local_a, local_b


def _pairwise_passphrase(
    scheduler,
    responder,
    sketch_side: str,
    channel: SimConfig,
    rng: np.random.Generator,
    transport: Transport,
    *,
    t_d: float,
    eve_sink: Callable[[CsiTrace], None] | None = None,
) -> tuple[Passphrase, Passphrase]:
    """One full agreement run between two nodes.

    The ``sketch_side`` node ("scheduler" or "responder") quantizes its
    trace, publishes the sketch, and its counterpart reconciles.  Returns
    the credential as seen by (sketch side, recovering side); on success
    the two are byte-identical.
    """
    try:
        trace_s, trace_r = scc_collect(
            scheduler,
            responder,
            channel.n_packets,
            t_d,
            channel,
            rng=rng,
            transport=transport,
            eve_sink=eve_sink,
        )
        series_s = extract_eps_g(trace_s)
        series_r = extract_eps_g(trace_r)
        w = window_size(trace_s.rtts())
        bits_s = quantize(series_s, w)
        bits_r = quantize(series_r, w)
    except (CollectionError, EmptySeriesError, ValueError) as exc:
        raise PipelineFailure(str(exc)) from exc

    if sketch_side == "scheduler":
        sketcher, recoverer = scheduler, responder
        bits_sketch, bits_recover = bits_s, bits_r
    else:
        sketcher, recoverer = responder, scheduler
        bits_sketch, bits_recover = bits_r, bits_s

    published = reconcile.sketch(bits_sketch)
    transport.send(
        MessageKind.SKETCH_TRANSFER,
        sketcher.identity,
        recoverer.identity,
        {"payload_bits": published.payload_bits, "blocks": [list(b) for b in published.blocks]},
    )
    try:
        recovered = reconcile.recover(bits_recover, published)
    except (reconcile.ReconciliationError, ValueError) as exc:
        raise PipelineFailure(f"reconciliation failed: {exc}") from exc
    return map_bits(bits_sketch), map_bits(recovered)


def run_handshake(
    authenticator: AuthenticatorNode,
    enrollee: EnrolleeNode,
    ap: AccessPointNode,
    channel: SimConfig,
    rng_seed: int,
    *,
    t_d: float = DEFAULT_T_D,
    max_pass2_attempts: int = MAX_PASS2_ATTEMPTS,
    eve_sink: Callable[[CsiTrace], None] | None = None,
) -> SessionOutcome:
    """Execute the full provisioning flow and report how it ended.

    Pass 1 agrees an interim credential between authenticator and
    enrollee; the authenticator hands the enrollee the network identity
    and the access point the credential.  The enrollee associates by
    hashing the credential, then pass 2 agrees the final credential
    directly with the access point, retrying the association up to
    ``max_pass2_attempts`` times before giving up.  Whatever the outcome,
    authenticator and access point hold no interim credential afterwards.
    """
    macs = {node.identity.mac for node in (authenticator, enrollee, ap)}
    if len(macs) != 3:
        raise ValueError("node MAC addresses must be unique")

    rng = np.random.default_rng(rng_seed)
    transport = Transport()
    status: SessionStatus
    passphrase2: Passphrase | None = None

    try:
        nonce = rng.bytes(16)
        transport.send(
            MessageKind.BROADCAST,
            enrollee.identity,
            authenticator.identity,
            {"name_id": enrollee.identity.name_id, "nonce": nonce.hex()},
        )
        transport.send(
            MessageKind.CONFIRM,
            authenticator.identity,
            enrollee.identity,
            {"name_id": enrollee.identity.name_id},
        )

        try:
            pass1_auth, pass1_enrollee = _pairwise_passphrase(
                authenticator,
                enrollee,
                "scheduler",
                channel,
                rng,
                transport,
                t_d=t_d,
                eve_sink=eve_sink,
            )
        except PipelineFailure as exc:
            logger.info("pass 1 failed: %s", exc)
            return SessionOutcome(SessionStatus.RECON_FAILED_PASS1, None, transport.log)
        authenticator.passphrase1 = pass1_auth
        enrollee.passphrase1 = pass1_enrollee

        enrollee_mac = enrollee.identity.mac.hex()
        transport.send(
            MessageKind.NET_INFO,
            authenticator.identity,
            enrollee.identity,
            {"ssid": ap.ssid, "ap_mac": ap.identity.mac.hex()},
        )
        enrollee.network = {"ssid": ap.ssid, "ap_mac": ap.identity.mac.hex()}
        transport.send(
            MessageKind.CRED_PUSH,
            authenticator.identity,
            ap.identity,
            {"mac": enrollee_mac, "passphrase": pass1_auth.text},
        )
        ap.register_credential(enrollee_mac, pass1_auth)

        status = SessionStatus.RECON_FAILED_PASS2
        for attempt in range(1, max_pass2_attempts + 1):
            transport.send(
                MessageKind.ASSOC_REQUEST,
                enrollee.identity,
                ap.identity,
                {"mac": enrollee_mac, "hashed_passphrase": enrollee.association_hash()},
            )
            if not ap.verify_association(enrollee_mac, enrollee.association_hash()):
                transport.send(
                    MessageKind.REJECT,
                    ap.identity,
                    enrollee.identity,
                    {"reason": "credential hash mismatch"},
                )
                return SessionOutcome(SessionStatus.REJECTED, None, transport.log)

            try:
                pass2_enrollee, pass2_ap = _pairwise_passphrase(
                    ap,
                    enrollee,
                    "responder",
                    channel,
                    rng,
                    transport,
                    t_d=t_d,
                    eve_sink=eve_sink,
                )
            except PipelineFailure as exc:
                logger.info("pass 2 attempt %d failed: %s", attempt, exc)
                transport.send(
                    MessageKind.REJECT,
                    ap.identity,
                    enrollee.identity,
                    {"reason": "reconciliation failed", "attempt": attempt},
                )
                continue
            if pass2_enrollee != pass2_ap:
                logger.info("pass 2 attempt %d produced mismatched credentials", attempt)
                transport.send(
                    MessageKind.REJECT,
                    ap.identity,
                    enrollee.identity,
                    {"reason": "credential mismatch", "attempt": attempt},
                )
                continue
            enrollee.passphrase2 = pass2_enrollee
            ap.passphrase2 = pass2_ap
            passphrase2 = pass2_enrollee
            status = SessionStatus.JOINED
            transport.send(
                MessageKind.NOTIFY_JOINED,
                ap.identity,
                authenticator.identity,
                {"mac": enrollee_mac},
            )
            break
    finally:
        authenticator.passphrase1 = None
        ap.wipe_credentials()

    return SessionOutcome(status=status, passphrase2=passphrase2, transcript=transport.log)


def transcript_to_text(transcript: list[ProtocolMessage]) -> str:
    """Render a transcript as `step sender→receiver kind payload_hex` lines."""
    lines = []
    for step, message in enumerate(transcript, start=1):
        lines.append(
            f"{step} {message.sender.role.value}→{message.receiver.role.value} "
            f"{message.kind.value} {message.payload_bytes().hex()}"
        )
    return "\n".join(lines) + "\n"


def write_transcript(transcript: list[ProtocolMessage], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(transcript_to_text(transcript))
