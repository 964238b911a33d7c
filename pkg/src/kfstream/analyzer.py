"""Trace forensics: correlate a packet log with the frame display timeline.

Traces use a line-based text format (``.rtptrace``)::

    #rtptrace v1 fps=24 epoch_ms=0 base_delay_ms=100.0 playout_deadline_ms=500.0 mtu_payload=1400
    # direction seq frame_index fragment_index is_key time_ms payload_bytes
    S 0 0 0 1 0.0 1400
    R 0 0 0 1 131.25 1400

``S`` rows are sender emissions in send order, ``R`` rows are receiver
captures in arrival order (network duplicates included). Header keys
other than ``fps`` and ``epoch_ms`` are optional.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

from .media import FrameDescriptor, FrameKind
from .netsim import check_window, unwrap_sequence, window_conditions
from .quality import CoefficientSet, NetworkSample, predict_mos
from .rtp import (
    DEFAULT_MTU_PAYLOAD,
    DEFAULT_PLAYOUT_DEADLINE_MS,
    SEQ_MOD,
    FrameVerdict,
    RtpPacket,
    deduplicate,
    reassemble,
)

log = logging.getLogger(__name__)

MAGIC = "#rtptrace"
FORMAT_VERSION = "v1"
COLUMNS = ("direction", "seq", "frame_index", "fragment_index", "is_key", "time_ms", "payload_bytes")
REPORT_COLUMNS = (
    "first_frame",
    "last_frame",
    "duration_frames",
    "duration_ms",
    "loss_percent",
    "jitter_ms",
    "key_frame_hit",
    "predicted_mos",
)


class Direction(str, enum.Enum):
    SENT = "S"
    RECEIVED = "R"


@dataclass(frozen=True, slots=True)
class TraceRecord:
    direction: Direction
    seq: int
    frame_index: int
    fragment_index: int
    is_key: bool
    time_ms: float
    payload_bytes: int

    def to_line(self) -> str:
        return (
            f"{self.direction.value} {self.seq} {self.frame_index} {self.fragment_index} "
            f"{int(self.is_key)} {self.time_ms!r} {self.payload_bytes}"
        )

    @classmethod
    def from_line(cls, line: str) -> "TraceRecord":
        d, seq, frame, frag, key, t, size = line.split()
        return cls(Direction(d), int(seq), int(frame), int(frag), key == "1", float(t), int(size))


@dataclass
class Trace:
    fps: float
    epoch_ms: float = 0.0
    records: list[TraceRecord] = field(default_factory=list)
    base_delay_ms: float = 0.0
    playout_deadline_ms: float = DEFAULT_PLAYOUT_DEADLINE_MS
    mtu_payload: int = DEFAULT_MTU_PAYLOAD

    @property
    def sent(self) -> list[TraceRecord]:
        return [r for r in self.records if r.direction is Direction.SENT]

    @property
    def received(self) -> list[TraceRecord]:
        return [r for r in self.records if r.direction is Direction.RECEIVED]

    def dumps(self) -> str:
        out = io.StringIO()
        out.write(
            f"{MAGIC} {FORMAT_VERSION} fps={self.fps!r} epoch_ms={self.epoch_ms!r} "
            f"base_delay_ms={self.base_delay_ms!r} playout_deadline_ms={self.playout_deadline_ms!r} "
            f"mtu_payload={self.mtu_payload}\n"
        )
        out.write("# " + " ".join(COLUMNS) + "\n")
        for r in self.records:
            out.write(r.to_line() + "\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "Trace":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(MAGIC):
            raise ValueError("not an rtptrace file: missing header line")
        meta = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        if "fps" not in meta:
            raise ValueError("trace header lacks fps")
        trace = cls(
            fps=float(meta["fps"]),
            epoch_ms=float(meta.get("epoch_ms", 0.0)),
            base_delay_ms=float(meta.get("base_delay_ms", 0.0)),
            playout_deadline_ms=float(meta.get("playout_deadline_ms", DEFAULT_PLAYOUT_DEADLINE_MS)),
            mtu_payload=int(meta.get("mtu_payload", DEFAULT_MTU_PAYLOAD)),
        )
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                trace.records.append(TraceRecord.from_line(line))
            except ValueError as exc:
                raise ValueError(f"line {n}: malformed record {line!r}") from exc
        return trace

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def read(cls, path) -> "Trace":
        return cls.loads(Path(path).read_text())

    def frame_pts(self, frame_index: int) -> float:
        return round(frame_index * 1000 / self.fps)


def trace_from_pipeline(sent_packets, events, fps, **meta) -> Trace:
    """Build a capture from sender packets and channel arrival events."""
    trace = Trace(fps=fps, **meta)
    for p in sent_packets:
        trace.records.append(
            TraceRecord(Direction.SENT, p.seq, p.frame_index, p.fragment_index, p.is_key, p.timestamp_ms, p.payload_bytes)
        )
    for e in events:
        p = e.packet
        trace.records.append(
            TraceRecord(Direction.RECEIVED, p.seq, p.frame_index, p.fragment_index, p.is_key, e.arrival_ms, p.payload_bytes)
        )
    return trace


@dataclass(frozen=True)
class TimeAlignment:
    """Scalar offset of the trace clock over the display clock."""

    offset_ms: float = 0.0

    def to_trace(self, display_ms: float) -> float:
        return display_ms + self.offset_ms

    def to_display(self, trace_ms: float) -> float:
        return trace_ms - self.offset_ms


def align(packet_event: tuple[int, float], frame_event: tuple[int, float]) -> TimeAlignment:
    """Offset from one packet/frame pair observed at the same moment.

    ``packet_event`` is ``(seq, time_ms)`` for the packet after which the
    error appeared; ``frame_event`` is ``(frame_index, display_ms)`` of the
    frame where the recording shows it.
    """
    _, packet_ms = packet_event
    _, display_ms = frame_event
    return TimeAlignment(packet_ms - display_ms)


class Gap(NamedTuple):
    start_seq: int
    length: int
    is_key: bool
    wrapped: bool = False


class _SeqView:
    """Extended (unwrapped) sequence numbers for both trace directions."""

    def __init__(self, trace: Trace):
        sent = trace.sent
        received = trace.received
        self.sent_ext = unwrap_sequence(r.seq for r in sent)
        ref = self.sent_ext[0] if self.sent_ext else None
        self.recv_ext = unwrap_sequence((r.seq for r in received), ref)
        self.sent_by_ext = dict(zip(self.sent_ext, sent))
        self.received = received
        if self.sent_ext:
            self.first, self.last = min(self.sent_ext), max(self.sent_ext)
        elif self.recv_ext:
            self.first, self.last = min(self.recv_ext), max(self.recv_ext)
        else:
            self.first, self.last = 0, -1

    @property
    def expected(self) -> int:
        return self.last - self.first + 1


def _runs(sorted_values):
    runs = []
    for v in sorted_values:
        if runs and v == runs[-1][0] + runs[-1][1]:
            runs[-1][1] += 1
        else:
            runs.append([v, 1])
    return runs


def _gaps_ext(view: _SeqView) -> list[tuple[int, int, bool]]:
    got = set(view.recv_ext)
    missing = [s for s in range(view.first, view.last + 1) if s not in got]
    out = []
    for start, length in _runs(missing):
        is_key = any(
            view.sent_by_ext[s].is_key for s in range(start, start + length) if s in view.sent_by_ext
        )
        out.append((start, length, is_key))
    return out


def find_losses(trace: Trace) -> list[Gap]:
    """Maximal runs of sequence numbers that never arrived.

    With sender records present the expected range is what was sent;
    otherwise it spans the lowest to highest received seq.
    """
    gaps = []
    for start, length, is_key in _gaps_ext(_SeqView(trace)):
        wrapped = (start - 1) // SEQ_MOD != (start + length - 1) // SEQ_MOD
        gaps.append(Gap(start % SEQ_MOD, length, is_key, wrapped))
    return gaps


@dataclass(frozen=True)
class WindowStats:
    index: int
    first_seq: int
    expected: int
    received: int
    loss_percent: float
    jitter_ms: float
    start_ms: float | None
    end_ms: float | None
    complete: bool


def windowed_stats(trace: Trace, window_packets: int = 100) -> list[WindowStats]:
    """Tumbling windows over expected seqs, anchored at the first one.

    A trailing window shorter than ``window_packets`` is reported with
    ``complete=False``. Time spans are receiver arrival times.
    """
    check_window(window_packets)
    view = _SeqView(trace)
    if view.expected <= 0:
        return []
    buckets: dict[int, list] = {}
    for ext, rec in zip(view.recv_ext, view.received):
        if not view.first <= ext <= view.last:
            continue
        sent = view.sent_by_ext.get(ext)
        sent_ms = sent.time_ms if sent is not None else trace.frame_pts(rec.frame_index)
        buckets.setdefault((ext - view.first) // window_packets, []).append((ext, sent_ms, rec.time_ms))

    out = []
    for k in range(math.ceil(view.expected / window_packets)):
        lo = view.first + k * window_packets
        expected = min(window_packets, view.last + 1 - lo)
        rows = buckets.get(k, [])
        loss, jitter = window_conditions(expected, rows)
        arrivals = [a for _, _, a in rows]
        out.append(
            WindowStats(
                index=k,
                first_seq=lo % SEQ_MOD,
                expected=expected,
                received=len({x for x, _, _ in rows}),
                loss_percent=loss,
                jitter_ms=jitter,
                start_ms=min(arrivals) if arrivals else None,
                end_ms=max(arrivals) if arrivals else None,
                complete=expected == window_packets,
            )
        )
    return out


def frames_from_trace(trace: Trace) -> list[FrameDescriptor]:
    """Reconstruct the sender's frame list from its ``S`` records."""
    info: dict[int, list] = {}
    for r in trace.sent:
        entry = info.setdefault(r.frame_index, [r.is_key, r.time_ms, {}])
        entry[1] = min(entry[1], r.time_ms)
        entry[2].setdefault(r.fragment_index, r.payload_bytes)
    return [
        FrameDescriptor(
            index=i,
            kind=FrameKind.KEY if key else FrameKind.USUAL,
            size_bytes=sum(frags.values()),
            pts_ms=pts,
        )
        for i, (key, pts, frags) in sorted(info.items())
    ]


def verdicts_from_trace(trace: Trace) -> list[FrameVerdict]:
    """Replay receiver-side dedup and reassembly from a capture."""
    frames = frames_from_trace(trace)
    received = [
        (RtpPacket(r.seq, 0.0, r.frame_index, r.fragment_index, r.is_key, r.payload_bytes), r.time_ms)
        for r in trace.received
    ]
    return reassemble(
        deduplicate(received),
        frames,
        trace.playout_deadline_ms,
        mtu_payload=trace.mtu_payload,
        base_delay_ms=trace.base_delay_ms,
    )


def parse_damaged_frames(text: str) -> tuple[list[int], dict[int, float]]:
    """Parse a damaged-frame list: ``frame_index[,display_ms]`` per line.

    The optional second column is the frame's display time in the
    recording; it overrides the nominal fps-based timeline.
    """
    indices, times = [], {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        idx = int(parts[0])
        indices.append(idx)
        if len(parts) > 1:
            times[idx] = float(parts[1])
    return indices, times


def read_damaged_frames(path) -> tuple[list[int], dict[int, float]]:
    return parse_damaged_frames(Path(path).read_text())


def verdicts_from_damaged(damaged: Sequence[int], n_frames: int | None = None) -> list[FrameVerdict]:
    bad = set(damaged)
    if n_frames is None:
        n_frames = max(bad) + 2 if bad else 0
    return [FrameVerdict(i, i not in bad, i in bad) for i in range(n_frames)]


@dataclass(frozen=True)
class DistortionEpisode:
    first_frame: int
    last_frame: int
    duration_frames: int
    duration_ms: int
    window_loss_percent: float | None
    window_jitter_ms: float | None
    key_frame_hit: bool
    predicted_mos: float | None
    stats_missing: bool = False

    def row(self) -> dict:
        def num(x):
            return None if x is None else round(x, 6)

        return {
            "first_frame": self.first_frame,
            "last_frame": self.last_frame,
            "duration_frames": self.duration_frames,
            "duration_ms": self.duration_ms,
            "loss_percent": num(self.window_loss_percent),
            "jitter_ms": num(self.window_jitter_ms),
            "key_frame_hit": self.key_frame_hit,
            "predicted_mos": num(self.predicted_mos),
        }


def damaged_runs(verdicts: Sequence[FrameVerdict]) -> list[tuple[int, int]]:
    """Maximal (first, last) runs of displayed-damaged frames."""
    runs = []
    for v in sorted(verdicts, key=lambda v: v.frame_index):
        if not v.displayed_damaged:
            continue
        if runs and v.frame_index == runs[-1][1] + 1:
            runs[-1][1] = v.frame_index
        else:
            runs.append([v.frame_index, v.frame_index])
    return [tuple(r) for r in runs]


def covering_window(windows: Sequence[WindowStats], t_ms: float, max_distance_ms: float = 1000.0):
    """Window whose arrival span contains ``t_ms``, else the nearest one within reach."""
    best, best_d = None, None
    for w in windows:
        if w.start_ms is None:
            continue
        if w.start_ms <= t_ms <= w.end_ms:
            return w
        d = w.start_ms - t_ms if t_ms < w.start_ms else t_ms - w.end_ms
        if best_d is None or d < best_d:
            best, best_d = w, d
    if best is not None and best_d <= max_distance_ms:
        return best
    return None


def _unrecovered_key_frames(trace: Trace) -> set[int]:
    """Frames owning a key packet lost in a gap with no surviving copy."""
    view = _SeqView(trace)
    arrived = {(r.frame_index, r.fragment_index) for r in view.received}
    hit = set()
    for start, length, is_key in _gaps_ext(view):
        if not is_key:
            continue
        for s in range(start, start + length):
            rec = view.sent_by_ext.get(s)
            if rec is not None and rec.is_key and (rec.frame_index, rec.fragment_index) not in arrived:
                hit.add(rec.frame_index)
    return hit


def detect_episodes(
    verdicts: Sequence[FrameVerdict],
    trace: Trace,
    alignment: TimeAlignment,
    coeffs: CoefficientSet,
    *,
    window_packets: int = 100,
    display_ms: dict[int, float] | None = None,
    max_distance_ms: float = 1000.0,
) -> list[DistortionEpisode]:
    """Turn damaged-frame runs into episodes with window stats and MOS.

    When the recording's display times are given for both ends of a run,
    ``duration_ms`` is the span between them (what a frame-accurate
    editor shows); otherwise it is ``duration_frames * 1000 / fps``.
    """
    display_ms = display_ms or {}
    windows = windowed_stats(trace, window_packets)
    key_frames_hit = _unrecovered_key_frames(trace)

    episodes = []
    for first, last in damaged_runs(verdicts):
        n = last - first + 1
        if first in display_ms and last in display_ms:
            duration_ms = round(display_ms[last] - display_ms[first])
        else:
            duration_ms = round(n * 1000 / trace.fps)
        t_display = display_ms.get(first, trace.frame_pts(first))
        w = covering_window(windows, alignment.to_trace(t_display), max_distance_ms)
        key_hit = any(first <= f <= last for f in key_frames_hit)
        if w is None:
            log.warning("no packet window covers frames %d..%d", first, last)
            episodes.append(DistortionEpisode(first, last, n, duration_ms, None, None, key_hit, None, True))
            continue
        mos = predict_mos(NetworkSample(w.loss_percent, w.jitter_ms, key_hit), coeffs)
        episodes.append(
            DistortionEpisode(first, last, n, duration_ms, w.loss_percent, w.jitter_ms, key_hit, mos)
        )
    return episodes


def stream_mos(episodes: Sequence[DistortionEpisode], coeffs: CoefficientSet) -> float:
    """Mean of per-episode predictions; q_ideal when nothing was damaged."""
    scores = [e.predicted_mos for e in episodes if e.predicted_mos is not None]
    if not scores:
        return coeffs.q_ideal.value
    return sum(scores) / len(scores)


def format_report(episodes: Sequence[DistortionEpisode], fmt: str = "csv") -> str:
    rows = [e.row() for e in episodes]
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return out.getvalue()


def default_alignment(trace: Trace) -> TimeAlignment:
    """For simulator captures the trace clock leads display by the base delay."""
    return TimeAlignment(trace.base_delay_ms)
