"""Seedable impairment channel: loss, delay jitter, network-side duplication.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed)``.
Each ``transmit`` call draws one row of ``N_DRAWS`` uniforms per input
packet, in input order, so packet ``i`` always consumes row ``i``:

    column 0  loss-model state transition (Gilbert-Elliott)
    column 1  loss decision
    column 2  jitter of the primary arrival
    column 3  network duplication decision
    column 4  jitter of the duplicate arrival

Every column is drawn whether or not it is used, which keeps a packet's
fate independent of the channel configuration of its neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .rtp import SEQ_MOD, RtpPacket

N_DRAWS = 5
_STATE, _LOSS, _JITTER, _DUP, _DUP_JITTER = range(N_DRAWS)


def _check_prob(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class IidLoss:
    p_loss: float = 0.0

    def __post_init__(self):
        _check_prob("p_loss", self.p_loss)

    @property
    def mean_loss(self) -> float:
        return self.p_loss


@dataclass(frozen=True)
class GilbertElliottLoss:
    """Two-state burst loss; the good state never drops."""

    p_good_to_bad: float
    p_bad_to_good: float
    loss_in_bad: float = 1.0

    def __post_init__(self):
        _check_prob("p_good_to_bad", self.p_good_to_bad)
        _check_prob("p_bad_to_good", self.p_bad_to_good)
        _check_prob("loss_in_bad", self.loss_in_bad)

    @property
    def mean_loss(self) -> float:
        denom = self.p_good_to_bad + self.p_bad_to_good
        if denom == 0:
            return 0.0
        return self.loss_in_bad * self.p_good_to_bad / denom


LossModel = Union[IidLoss, GilbertElliottLoss]


@dataclass(frozen=True)
class NoJitter:
    def draw(self, u: float) -> float:
        return 0.0


@dataclass(frozen=True)
class UniformJitter:
    """Delay offset uniform on [-half_width_ms, +half_width_ms]."""

    half_width_ms: float

    def __post_init__(self):
        if self.half_width_ms < 0:
            raise ValueError("half_width_ms must be nonnegative")

    def draw(self, u: float) -> float:
        return (2.0 * u - 1.0) * self.half_width_ms


@dataclass(frozen=True)
class ExponentialJitter:
    """Extra delay ~ Exp(mean_ms); its interarrival-jitter estimate is about ``mean_ms``."""

    mean_ms: float

    def __post_init__(self):
        if self.mean_ms < 0:
            raise ValueError("mean_ms must be nonnegative")

    def draw(self, u: float) -> float:
        return -self.mean_ms * math.log1p(-u)


JitterModel = Union[NoJitter, UniformJitter, ExponentialJitter]


@dataclass(frozen=True)
class ChannelProfile:
    loss_model: LossModel = field(default_factory=IidLoss)
    base_delay_ms: float = 0.0
    jitter_model: JitterModel = field(default_factory=NoJitter)
    dup_prob: float = 0.0
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        _check_prob("dup_prob", self.dup_prob)
        if self.base_delay_ms < 0:
            raise ValueError("base_delay_ms must be nonnegative")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def with_seed(self, seed: int) -> "ChannelProfile":
        return replace(self, seed=seed)


# Loss/jitter figures beyond the quoted field observations are design choices.
PRESETS = {
    "lossless": ChannelProfile(name="lossless"),
    "wifi-degraded": ChannelProfile(
        loss_model=IidLoss(0.04),
        base_delay_ms=20.0,
        jitter_model=UniformJitter(15.0),
        name="wifi-degraded",
    ),
    "wimax": ChannelProfile(
        loss_model=IidLoss(0.0),
        base_delay_ms=40.0,
        jitter_model=UniformJitter(30.0),
        name="wimax",
    ),
    "3g-noisy": ChannelProfile(
        loss_model=IidLoss(0.05),
        base_delay_ms=100.0,
        jitter_model=ExponentialJitter(40.0),
        dup_prob=0.05,
        name="3g-noisy",
    ),
}

PRESET_NOTES = {
    "lossless": "ideal channel: no loss, no jitter, no duplication",
    "wifi-degraded": "IID 4% loss, uniform +/-15 ms jitter around 20 ms",
    "wimax": "no loss, uniform +/-30 ms jitter (interarrival jitter ~20 ms)",
    "3g-noisy": "IID 5% loss (Poor), exponential jitter ~40 ms, 5% network duplication",
}


def get_preset(name: str) -> ChannelProfile:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None


@dataclass(frozen=True, slots=True)
class ArrivalEvent:
    packet: RtpPacket
    sent_ms: float
    arrival_ms: float


def draw_matrix(seed: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return rng.random((n, N_DRAWS))


def loss_mask(loss_model: LossModel, draws: np.ndarray) -> np.ndarray:
    """Boolean array, True where the packet is dropped."""
    if isinstance(loss_model, IidLoss):
        return draws[:, _LOSS] < loss_model.p_loss
    lost = np.zeros(len(draws), dtype=bool)
    bad = False
    g2b, b2g, p_bad = loss_model.p_good_to_bad, loss_model.p_bad_to_good, loss_model.loss_in_bad
    for i, (u_state, u_loss) in enumerate(draws[:, [_STATE, _LOSS]].tolist()):
        lost[i] = bad and u_loss < p_bad
        bad = u_state >= b2g if bad else u_state < g2b
    return lost


def transmit(
    packets: Sequence[RtpPacket],
    profile: ChannelProfile,
    send_times: Sequence[float] | None = None,
) -> list[ArrivalEvent]:
    """Push packets through the channel; return arrivals sorted by time.

    Send times default to each packet's timestamp. A duplicated packet
    yields a second event with its own jitter draw.
    """
    if send_times is None:
        send_times = [p.timestamp_ms for p in packets]
    if len(send_times) != len(packets):
        raise ValueError("send_times must match packets in length")
    if any(b < a for a, b in zip(send_times, send_times[1:])):
        raise ValueError("send times must be nondecreasing")

    draws = draw_matrix(profile.seed, len(packets))
    lost = loss_mask(profile.loss_model, draws).tolist()
    rows = draws.tolist()
    jitter = profile.jitter_model.draw
    base = profile.base_delay_ms

    keyed = []
    for i, (pkt, sent) in enumerate(zip(packets, send_times)):
        if lost[i]:
            continue
        row = rows[i]
        arrival = sent + max(0.0, base + jitter(row[_JITTER]))
        keyed.append((arrival, i, 0, pkt, sent))
        if row[_DUP] < profile.dup_prob:
            arrival = sent + max(0.0, base + jitter(row[_DUP_JITTER]))
            keyed.append((arrival, i, 1, pkt, sent))
    keyed.sort(key=lambda k: k[:3])
    return [ArrivalEvent(pkt, float(sent), arrival) for arrival, _, _, pkt, sent in keyed]


def unwrap_seq(seq: int, reference: int) -> int:
    """Extended sequence number nearest to ``reference`` that is congruent to ``seq``."""
    base = reference - (reference % SEQ_MOD) + seq
    candidates = (base - SEQ_MOD, base, base + SEQ_MOD)
    return min(candidates, key=lambda c: (abs(c - reference), c))


def unwrap_sequence(seqs, reference: int | None = None) -> list[int]:
    """Unwrap 16-bit seqs in order, tracking the highest extended value seen."""
    out = []
    highest = reference
    for s in seqs:
        ext = s if highest is None else unwrap_seq(s, highest)
        out.append(ext)
        highest = ext if highest is None else max(highest, ext)
    return out


def interarrival_jitter(transits) -> float:
    """Smoothed transit-difference jitter, gain 1/16, starting from zero."""
    j = 0.0
    prev = None
    for t in transits:
        if prev is not None:
            j += (abs(t - prev) - j) / 16.0
        prev = t
    return j


def check_window(window_packets: int) -> None:
    if window_packets <= 0 or window_packets % 100:
        raise ValueError(
            f"window must be a positive multiple of 100 packets, got {window_packets}"
        )


def window_conditions(expected: int, received) -> tuple[float, float]:
    """Loss percent and jitter for one window.

    ``received`` holds ``(ext_seq, sent_ms, arrival_ms)`` in arrival order,
    already restricted to the window; repeats of a seq are ignored.
    """
    seen = set()
    transits = []
    for ext, sent, arrival in received:
        if ext in seen:
            continue
        seen.add(ext)
        transits.append(arrival - sent)
    loss = 100.0 * (expected - len(seen)) / expected if expected else 0.0
    return loss, interarrival_jitter(transits)


def measured_conditions(
    events: Sequence[ArrivalEvent], window_packets: int, first_seq: int | None = None
) -> tuple[float, float]:
    """Loss percent and jitter over ``window_packets`` expected seqs.

    The window starts at ``first_seq`` or, if omitted, at the lowest
    sequence number observed.
    """
    check_window(window_packets)
    if not events:
        return (100.0, 0.0) if first_seq is not None else (0.0, 0.0)
    ref = first_seq if first_seq is not None else events[0].packet.seq
    ext = unwrap_sequence((e.packet.seq for e in events), ref)
    start = first_seq if first_seq is not None else min(ext)
    stop = start + window_packets
    inside = [
        (x, e.sent_ms, e.arrival_ms) for x, e in zip(ext, events) if start <= x < stop
    ]
    return window_conditions(window_packets, inside)
