"""Packetization, key-frame duplication, receiver dedup and frame reassembly."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .media import FrameDescriptor

SEQ_MOD = 1 << 16
DEFAULT_MTU_PAYLOAD = 1400
DEFAULT_PLAYOUT_DEADLINE_MS = 500.0


@dataclass(frozen=True, slots=True)
class RtpPacket:
    seq: int
    timestamp_ms: float
    frame_index: int
    fragment_index: int
    is_key: bool
    payload_bytes: int
    is_redundant_copy: bool = False

    @property
    def identity(self) -> tuple[int, int]:
        return self.frame_index, self.fragment_index


class DuplicationPolicy(str, enum.Enum):
    NONE = "none"
    KEY_FRAMES_ONLY = "key-frames-only"
    ALL = "all"

    def duplicates(self, packet: RtpPacket) -> bool:
        if self is DuplicationPolicy.ALL:
            return True
        if self is DuplicationPolicy.KEY_FRAMES_ONLY:
            return packet.is_key
        return False


@dataclass(frozen=True, slots=True)
class FrameVerdict:
    frame_index: int
    delivered: bool
    displayed_damaged: bool


def fragment_count(size_bytes: int, mtu_payload: int = DEFAULT_MTU_PAYLOAD) -> int:
    return math.ceil(size_bytes / mtu_payload)


def packetize(
    frames: Iterable[FrameDescriptor],
    mtu_payload: int = DEFAULT_MTU_PAYLOAD,
    first_seq: int = 0,
) -> list[RtpPacket]:
    """Split each frame into ``ceil(size / mtu_payload)`` packets.

    All fragments of a frame carry the frame's pts as timestamp; sequence
    numbers run contiguously (mod 2**16) from ``first_seq``.
    """
    if mtu_payload < 1:
        raise ValueError(f"mtu_payload must be >= 1, got {mtu_payload}")
    packets = []
    seq = first_seq % SEQ_MOD
    for frame in frames:
        remaining = frame.size_bytes
        for frag in range(fragment_count(frame.size_bytes, mtu_payload)):
            size = min(mtu_payload, remaining)
            remaining -= size
            packets.append(
                RtpPacket(
                    seq=seq,
                    timestamp_ms=frame.pts_ms,
                    frame_index=frame.index,
                    fragment_index=frag,
                    is_key=frame.is_key,
                    payload_bytes=size,
                )
            )
            seq = (seq + 1) % SEQ_MOD
    return packets


def apply_duplication(
    packets: Sequence[RtpPacket], policy: DuplicationPolicy
) -> list[RtpPacket]:
    """Insert a redundant copy right after every packet the policy selects.

    Copies get their own sequence number; the whole output is renumbered
    contiguously starting from the first input packet's seq.
    """
    policy = DuplicationPolicy(policy)
    if policy is DuplicationPolicy.NONE or not packets:
        return list(packets)
    out = []
    seq = packets[0].seq
    for pkt in packets:
        out.append(replace(pkt, seq=seq))
        seq = (seq + 1) % SEQ_MOD
        if policy.duplicates(pkt):
            out.append(replace(pkt, seq=seq, is_redundant_copy=True))
            seq = (seq + 1) % SEQ_MOD
    return out


def duplication_overhead(packets: Sequence[RtpPacket]) -> float:
    """Redundant payload bytes divided by original payload bytes."""
    original = sum(p.payload_bytes for p in packets if not p.is_redundant_copy)
    redundant = sum(p.payload_bytes for p in packets if p.is_redundant_copy)
    return redundant / original if original else 0.0


def deduplicate(received):
    """Keep the earliest arrival of each (frame, fragment); preserve input order.

    ``received`` is a sequence of ``(packet, arrival_ms)`` pairs. Copies
    injected by the sender and duplicates created by the network are
    treated alike.
    """
    received = list(received)
    first = {}
    for i, (pkt, arrival) in enumerate(received):
        key = pkt.identity
        best = first.get(key)
        if best is None or arrival < received[best][1]:
            first[key] = i
    keep = set(first.values())
    return [item for i, item in enumerate(received) if i in keep]


def propagate_damage(frames: Sequence[FrameDescriptor], delivered: Sequence[bool]) -> list[bool]:
    """Display-time damage under predictive coding.

    A lost frame of either kind poisons every following frame until the
    next fully delivered key frame.
    """
    damaged = False
    out = []
    for frame, ok in zip(frames, delivered):
        if frame.is_key:
            damaged = not ok
        elif not ok:
            damaged = True
        out.append(damaged)
    return out


def reassemble(
    deduped,
    frames: Sequence[FrameDescriptor],
    playout_deadline_ms: float = DEFAULT_PLAYOUT_DEADLINE_MS,
    *,
    mtu_payload: int = DEFAULT_MTU_PAYLOAD,
    base_delay_ms: float = 0.0,
) -> list[FrameVerdict]:
    on_time: dict[int, set[int]] = {}
    by_index = {f.index: f for f in frames}
    for pkt, arrival in deduped:
        frame = by_index.get(pkt.frame_index)
        if frame is None:
            continue
        if arrival <= frame.pts_ms + base_delay_ms + playout_deadline_ms:
            on_time.setdefault(pkt.frame_index, set()).add(pkt.fragment_index)

    delivered = []
    for frame in frames:
        needed = fragment_count(frame.size_bytes, mtu_payload)
        got = on_time.get(frame.index, ())
        delivered.append(all(k in got for k in range(needed)))
    damaged = propagate_damage(frames, delivered)
    return [
        FrameVerdict(f.index, ok, bad) for f, ok, bad in zip(frames, delivered, damaged)
    ]
