"""Experiment configuration and its YAML file format.

Example file (every key is optional; defaults mirror the 24 fps /
256 Kbps test clip)::

    stream:
      fps: 24
      bitrate: 256000
      key_interval_s: 1.0
      key_size_ratio: 3.0
      duration_s: 60
      codec: DIVX
    channel: 3g-noisy            # preset name, or a mapping:
    # channel:
    #   loss: {model: iid, p_loss: 0.05}
    #   # loss: {model: gilbert-elliott, p_good_to_bad: 0.01, p_bad_to_good: 0.3, loss_in_bad: 0.8}
    #   base_delay_ms: 100
    #   jitter: {model: exponential, mean_ms: 40}   # none | uniform (half_width_ms) | exponential
    #   dup_prob: 0.05
    policy: [none, key-frames-only]   # one policy or a list to compare
    coefficients: {codec: DIVX, network: THREE_G}   # optional `file:` with a custom table
    sweep:
      p_loss: [0.02, 0.05]       # replaces the loss model by IID at each value
      jitter_ms: [20, 40]        # sets the jitter model's parameter (exponential if none)
    runs: 30
    seed: 1
    out_dir: results
    mtu_payload: 1400
    playout_deadline_ms: 500
    window_packets: 100
    write_traces: true
    plot: true
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from ..media import DEFAULT_PROFILE, StreamProfile
from ..netsim import (
    ChannelProfile,
    ExponentialJitter,
    GilbertElliottLoss,
    IidLoss,
    NoJitter,
    UniformJitter,
    get_preset,
)
from ..quality import COEFFICIENT_TABLES, CoefficientSet, Network, load_tables, parse_selector
from ..rtp import DEFAULT_MTU_PAYLOAD, DEFAULT_PLAYOUT_DEADLINE_MS, DuplicationPolicy


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamProfile = DEFAULT_PROFILE
    channel: ChannelProfile = field(default_factory=lambda: get_preset("3g-noisy"))
    policies: tuple[DuplicationPolicy, ...] = (DuplicationPolicy.NONE, DuplicationPolicy.KEY_FRAMES_ONLY)
    coefficients: CoefficientSet = COEFFICIENT_TABLES[DEFAULT_PROFILE.codec_label, Network.THREE_G]
    p_loss_values: tuple[float, ...] | None = None
    jitter_values: tuple[float, ...] | None = None
    runs: int = 30
    seed: int = 1
    out_dir: Path = Path("results")
    mtu_payload: int = DEFAULT_MTU_PAYLOAD
    playout_deadline_ms: float = DEFAULT_PLAYOUT_DEADLINE_MS
    window_packets: int = 100
    write_traces: bool = True
    plot: bool = True

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if not self.policies:
            raise ConfigError("at least one duplication policy is required")
        for name in ("p_loss_values", "jitter_values"):
            axis = getattr(self, name)
            if axis is not None and len(axis) == 0:
                raise ConfigError(f"sweep axis {name} is empty")
        if self.window_packets <= 0 or self.window_packets % 100:
            raise ConfigError("window_packets must be a positive multiple of 100")

    def sweep_points(self) -> list[tuple[float | None, float | None]]:
        ps = self.p_loss_values or (None,)
        js = self.jitter_values or (None,)
        return [(p, j) for p in ps for j in js]

    def channel_at(self, p_loss: float | None, jitter: float | None) -> ChannelProfile:
        ch = self.channel
        if p_loss is not None:
            ch = replace(ch, loss_model=IidLoss(p_loss))
        if jitter is not None:
            jm = ch.jitter_model
            if isinstance(jm, UniformJitter):
                jm = UniformJitter(jitter)
            elif jitter == 0:
                jm = NoJitter()
            else:
                jm = ExponentialJitter(jitter)
            ch = replace(ch, jitter_model=jm)
        return ch


def parse_channel(spec) -> ChannelProfile:
    if isinstance(spec, str):
        return get_preset(spec)
    if not isinstance(spec, dict):
        raise ConfigError(f"channel must be a preset name or mapping, got {spec!r}")
    spec = dict(spec)
    base = get_preset(spec.pop("preset")) if "preset" in spec else ChannelProfile()
    loss, jitter = spec.pop("loss", None), spec.pop("jitter", None)
    if loss is not None:
        loss = dict(loss)
        model = loss.pop("model", "iid").lower()
        if model == "iid":
            base = replace(base, loss_model=IidLoss(**loss))
        elif model in ("gilbert-elliott", "ge"):
            base = replace(base, loss_model=GilbertElliottLoss(**loss))
        else:
            raise ConfigError(f"unknown loss model {model!r}")
    if jitter is not None:
        jitter = dict(jitter)
        model = jitter.pop("model", "none").lower()
        kinds = {"none": NoJitter, "uniform": UniformJitter, "exponential": ExponentialJitter}
        if model not in kinds:
            raise ConfigError(f"unknown jitter model {model!r}")
        base = replace(base, jitter_model=kinds[model](**jitter))
    try:
        return replace(base, name=spec.pop("name", "custom"), **spec)
    except TypeError as exc:
        raise ConfigError(f"bad channel field: {exc}") from None


def parse_policies(spec) -> tuple[DuplicationPolicy, ...]:
    items = [spec] if isinstance(spec, str) else list(spec)
    try:
        return tuple(DuplicationPolicy(str(p).lower().replace("_", "-")) for p in items)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    data = dict(data or {})
    kwargs = {}
    stream = dict(data.pop("stream", {}) or {})
    if "codec" in stream:
        stream["codec_label"] = str(stream.pop("codec")).upper()
    kwargs["stream"] = StreamProfile(**stream) if stream else DEFAULT_PROFILE

    if "channel" in data:
        kwargs["channel"] = parse_channel(data.pop("channel"))
    if "policy" in data:
        kwargs["policies"] = parse_policies(data.pop("policy"))

    coeff = dict(data.pop("coefficients", {}) or {})
    tables = COEFFICIENT_TABLES
    if "file" in coeff:
        path = Path(coeff.pop("file"))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        tables = load_tables(path.read_text())
    codec = coeff.get("codec", kwargs["stream"].codec_label.value)
    network = coeff.get("network", "THREE_G")
    key = parse_selector(f"{codec},{network}")
    if key not in tables:
        raise ConfigError(f"no coefficient table for {key[0].value}/{key[1].value}")
    kwargs["coefficients"] = tables[key]

    sweep = dict(data.pop("sweep", {}) or {})
    if "p_loss" in sweep:
        kwargs["p_loss_values"] = tuple(float(x) for x in sweep.pop("p_loss"))
    if "jitter_ms" in sweep:
        kwargs["jitter_values"] = tuple(float(x) for x in sweep.pop("jitter_ms"))
    if sweep:
        raise ConfigError(f"unknown sweep axes: {sorted(sweep)}")

    if "out_dir" in data:
        kwargs["out_dir"] = Path(data.pop("out_dir"))
    for key_name in ("runs", "seed", "mtu_payload", "playout_deadline_ms", "window_packets", "write_traces", "plot"):
        if key_name in data:
            kwargs[key_name] = data.pop(key_name)
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return config_from_dict(data, base_dir=path.parent)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
