"""Synthetic video elementary streams made of key and usual frames."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class Codec(str, enum.Enum):
    MPEG2 = "MPEG2"
    DIVX = "DIVX"


class FrameKind(str, enum.Enum):
    KEY = "KEY"
    USUAL = "USUAL"


MAX_RECOMMENDED_KEY_INTERVAL_S = 2.0


@dataclass(frozen=True)
class StreamProfile:
    fps: float = 24.0
    bitrate: int = 256_000
    key_interval_s: float = 1.0
    key_size_ratio: float = 3.0
    duration_s: float = 60.0
    codec_label: Codec = Codec.DIVX
    recommended: bool = False

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not self.bitrate > 0:
            raise ValueError(f"bitrate must be positive, got {self.bitrate}")
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if not self.key_size_ratio > 1:
            raise ValueError(f"key_size_ratio must exceed 1, got {self.key_size_ratio}")
        if not self.key_interval_s > 0:
            raise ValueError(f"key_interval_s must be positive, got {self.key_interval_s}")
        if self.recommended and self.key_interval_s > MAX_RECOMMENDED_KEY_INTERVAL_S:
            raise ValueError(
                f"recommended profiles need key_interval_s <= {MAX_RECOMMENDED_KEY_INTERVAL_S}"
            )
        object.__setattr__(self, "codec_label", Codec(self.codec_label))

    @property
    def frame_count(self) -> int:
        return round(self.fps * self.duration_s)

    @property
    def key_period(self) -> int:
        """Frames between consecutive key frames (at least 1)."""
        return max(1, round(self.key_interval_s * self.fps))

    @property
    def total_bytes(self) -> float:
        return self.bitrate * self.duration_s / 8


DEFAULT_PROFILE = StreamProfile()


@dataclass(frozen=True)
class FrameDescriptor:
    index: int
    kind: FrameKind
    size_bytes: int
    pts_ms: int

    @property
    def is_key(self) -> bool:
        return self.kind is FrameKind.KEY


def frame_sizes(profile: StreamProfile) -> tuple[int, int]:
    """Return (usual_size, key_size) in bytes for a profile.

    Solves ``n_key * s_key + n_usual * s_usual = total`` with
    ``s_key = round(ratio * s_usual)``, picking the integer usual size
    whose byte total lands closest to the budget.
    """
    n = profile.frame_count
    n_key = math.ceil(n / profile.key_period) if n else 0
    n_usual = n - n_key
    ratio = profile.key_size_ratio
    exact = profile.total_bytes / (n_key * ratio + n_usual) if n else 0.0

    def total_for(s: int) -> int:
        return n_key * round(s * ratio) + n_usual * s

    lo = max(1, math.floor(exact))
    candidates = [c for c in (lo - 1, lo, lo + 1, lo + 2) if c >= 1]
    usual = min(candidates, key=lambda s: (abs(total_for(s) - profile.total_bytes), s))
    if exact < 1:
        raise ValueError(
            f"profile implies a usual-frame size of {exact:.3f} bytes; need at least 1"
        )
    return usual, round(usual * ratio)


def generate_stream(profile: StreamProfile = DEFAULT_PROFILE) -> list[FrameDescriptor]:
    usual, key = frame_sizes(profile)
    period = profile.key_period
    frames = []
    for i in range(profile.frame_count):
        is_key = i % period == 0
        frames.append(
            FrameDescriptor(
                index=i,
                kind=FrameKind.KEY if is_key else FrameKind.USUAL,
                size_bytes=key if is_key else usual,
                pts_ms=round(i * 1000 / profile.fps),
            )
        )
    return frames


def key_byte_share(frames) -> float:
    """Fraction of stream bytes carried by key frames."""
    total = sum(f.size_bytes for f in frames)
    if total == 0:
        return 0.0
    return sum(f.size_bytes for f in frames if f.is_key) / total
