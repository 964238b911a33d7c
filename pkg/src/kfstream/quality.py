"""Linear MOS degradation model, coefficient tables and GAP classification.

Predicted quality is ``q_ideal - alpha * loss_percent - beta * jitter_ms``,
with the (alpha, beta) pair chosen by whether the damage hit a key frame.
Jitter is taken in milliseconds: the published slopes only give sensible
degradations at that scale.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .media import Codec

MOS_FLOOR = 1.0
MOS_CEILING = 5.0


class Network(str, enum.Enum):
    WIFI = "WIFI"
    THREE_G = "THREE_G"


class Measured(NamedTuple):
    value: float
    err: float

    def __str__(self):
        return f"{self.value:g}+-{self.err:g}"

    @classmethod
    def parse(cls, text: str) -> "Measured":
        value, _, err = text.strip().partition("+-")
        return cls(float(value), float(err) if err else 0.0)


@dataclass(frozen=True)
class CoefficientSet:
    codec_label: Codec
    network_label: Network
    q_ideal: Measured
    alpha_k: Measured
    beta_k: Measured
    alpha_w: Measured
    beta_w: Measured

    def __post_init__(self):
        object.__setattr__(self, "codec_label", Codec(self.codec_label))
        object.__setattr__(self, "network_label", Network(self.network_label))
        for name in ("q_ideal", "alpha_k", "beta_k", "alpha_w", "beta_w"):
            v = getattr(self, name)
            if not isinstance(v, Measured):
                object.__setattr__(self, name, Measured(*v) if isinstance(v, tuple) else Measured(v, 0.0))
        if not 0 < self.q_ideal.value <= MOS_CEILING:
            raise ValueError(f"q_ideal must be in (0, 5], got {self.q_ideal.value}")
        if min(self.alpha_k.value, self.beta_k.value, self.alpha_w.value, self.beta_w.value) < 0:
            raise ValueError("degradation slopes must be nonnegative")

    def slopes(self, key_frame_hit: bool) -> tuple[float, float]:
        if key_frame_hit:
            return self.alpha_k.value, self.beta_k.value
        return self.alpha_w.value, self.beta_w.value


M = Measured

COEFFICIENT_TABLES: dict[tuple[Codec, Network], CoefficientSet] = {
    (Codec.MPEG2, Network.WIFI): CoefficientSet(
        Codec.MPEG2, Network.WIFI, M(4.2, 0.2), M(0.15, 0.03), M(0.011, 0.002), M(0.04, 0.01), M(0.003, 0.001)
    ),
    (Codec.DIVX, Network.WIFI): CoefficientSet(
        Codec.DIVX, Network.WIFI, M(4.7, 0.2), M(0.27, 0.05), M(0.013, 0.003), M(0.13, 0.02), M(0.01, 0.002)
    ),
    (Codec.MPEG2, Network.THREE_G): CoefficientSet(
        Codec.MPEG2, Network.THREE_G, M(4.2, 0.2), M(0.005, 0.002), M(0.005, 0.002), M(0.004, 0.001), M(0.003, 0.001)
    ),
    (Codec.DIVX, Network.THREE_G): CoefficientSet(
        Codec.DIVX, Network.THREE_G, M(4.7, 0.2), M(0.01, 0.003), M(0.003, 0.001), M(0.002, 0.0005), M(0.002, 0.0008)
    ),
}


def get_coefficients(codec, network) -> CoefficientSet:
    return COEFFICIENT_TABLES[Codec(codec), Network(network)]


def parse_selector(text: str) -> tuple[Codec, Network]:
    """Parse ``"divx,wifi"``-style selectors; ``3g`` is accepted for THREE_G."""
    codec, _, network = text.partition(",")
    network = network.strip().upper().replace("-", "_")
    if network in ("3G", "THREEG"):
        network = "THREE_G"
    return Codec(codec.strip().upper().replace("-", "")), Network(network)


@dataclass(frozen=True)
class NetworkSample:
    loss_percent: float
    jitter_ms: float
    key_frame_hit: bool = False

    def __post_init__(self):
        if not 0 <= self.loss_percent <= 100:
            raise ValueError(f"loss_percent must be in [0, 100], got {self.loss_percent}")
        if self.jitter_ms < 0:
            raise ValueError(f"jitter_ms must be nonnegative, got {self.jitter_ms}")


def predict_mos(sample: NetworkSample, coeffs: CoefficientSet, floor: float = MOS_FLOOR) -> float:
    alpha, beta = coeffs.slopes(sample.key_frame_hit)
    q = coeffs.q_ideal.value - alpha * sample.loss_percent - beta * sample.jitter_ms
    return min(MOS_CEILING, max(floor, q))


def degradation_ratio(coeffs: CoefficientSet) -> float:
    """How many times faster quality falls when key frames are damaged."""
    if coeffs.alpha_w.value == 0:
        raise ValueError("alpha_w is zero; ratio undefined")
    return coeffs.alpha_k.value / coeffs.alpha_w.value


@enum.unique
class GapClass(enum.IntEnum):
    POOR = 0
    ACCEPTABLE = 1
    GOOD = 2


@dataclass(frozen=True)
class GapThresholds:
    """Upper bounds for Good and Acceptable, per dimension (percent, ms)."""

    good_loss: float = 0.5
    good_jitter: float = 25.0
    acceptable_loss: float = 2.0
    acceptable_jitter: float = 50.0

    def __post_init__(self):
        if self.good_loss > self.acceptable_loss or self.good_jitter > self.acceptable_jitter:
            raise ValueError("Good bounds must lie within Acceptable bounds")


DEFAULT_GAP = GapThresholds()


def _grade(value, good, acceptable):
    if value <= good:
        return GapClass.GOOD
    if value <= acceptable:
        return GapClass.ACCEPTABLE
    return GapClass.POOR


def classify_gap(sample: NetworkSample, thresholds: GapThresholds = DEFAULT_GAP) -> GapClass:
    return min(
        _grade(sample.loss_percent, thresholds.good_loss, thresholds.acceptable_loss),
        _grade(sample.jitter_ms, thresholds.good_jitter, thresholds.acceptable_jitter),
    )


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientFit:
    alpha_k: float
    beta_k: float
    alpha_w: float
    beta_w: float
    rms_k: float
    rms_w: float


def _fit_class(rows):
    if len(rows) < 3:
        raise RankDeficientError(f"need at least 3 observations per class, got {len(rows)}")
    design = np.array([[s.loss_percent, s.jitter_ms] for s, _ in rows], dtype=float)
    drop = np.array([y for _, y in rows], dtype=float)
    if np.linalg.matrix_rank(design) < 2:
        raise RankDeficientError("observations do not span two independent (p, j) directions")
    (alpha, beta), *_ = np.linalg.lstsq(design, drop, rcond=None)
    resid = drop - design @ np.array([alpha, beta])
    return float(alpha), float(beta), float(np.sqrt(np.mean(resid**2)))


def estimate_coefficients(
    observations: Iterable[tuple[NetworkSample, float]],
    q_ideal: float,
    floor: float = MOS_FLOOR,
) -> CoefficientFit:
    """Least-squares slopes for key-hit and intact classes with q_ideal held fixed.

    Observations sitting on the clamp bounds carry no slope information and
    are rejected.
    """
    key_rows, intact_rows = [], []
    for sample, mos in observations:
        if mos <= floor or mos >= MOS_CEILING:
            raise ValueError(f"observation {mos} lies on or outside the MOS clamp")
        (key_rows if sample.key_frame_hit else intact_rows).append((sample, q_ideal - mos))
    ak, bk, rk = _fit_class(key_rows)
    aw, bw, rw = _fit_class(intact_rows)
    return CoefficientFit(ak, bk, aw, bw, rk, rw)


TABLE_COLUMNS = ("network", "N", "codec", "q_ideal", "alpha_k", "beta_k", "alpha_w", "beta_w")


def dump_tables(tables: Iterable[CoefficientSet] = COEFFICIENT_TABLES.values()) -> str:
    """Tab-separated text, one row per coefficient set, cells as ``value+-err``."""
    out = io.StringIO()
    out.write("\t".join(TABLE_COLUMNS) + "\n")
    counters: dict[Network, int] = {}
    for cs in tables:
        n = counters[cs.network_label] = counters.get(cs.network_label, 0) + 1
        cells = [cs.network_label.value, str(n), cs.codec_label.value]
        cells += [str(getattr(cs, f)) for f in TABLE_COLUMNS[3:]]
        out.write("\t".join(cells) + "\n")
    return out.getvalue()


def load_tables(text: str) -> dict[tuple[Codec, Network], CoefficientSet]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    header = lines[0].split("\t")
    if tuple(header) != TABLE_COLUMNS:
        raise ValueError(f"unexpected coefficient table header: {header}")
    tables = {}
    for ln in lines[1:]:
        row = dict(zip(header, ln.split("\t")))
        cs = CoefficientSet(
            codec_label=Codec(row["codec"]),
            network_label=Network(row["network"]),
            **{f: Measured.parse(row[f]) for f in TABLE_COLUMNS[3:]},
        )
        tables[cs.codec_label, cs.network_label] = cs
    return tables
