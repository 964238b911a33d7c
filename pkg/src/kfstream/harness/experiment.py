"""End-to-end runs: stream -> packets -> channel -> receiver -> analyzer."""

from __future__ import annotations

import csv
import io
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..analyzer import (
    DistortionEpisode,
    Trace,
    default_alignment,
    detect_episodes,
    stream_mos,
    trace_from_pipeline,
    windowed_stats,
)
from ..media import StreamProfile, generate_stream
from ..netsim import ChannelProfile, transmit
from ..quality import CoefficientSet
from ..rtp import (
    DEFAULT_MTU_PAYLOAD,
    DEFAULT_PLAYOUT_DEADLINE_MS,
    DuplicationPolicy,
    FrameVerdict,
    apply_duplication,
    deduplicate,
    duplication_overhead,
    packetize,
    reassemble,
)
from .config import ExperimentConfig


def derive_seed(master: int, point: int, run: int) -> int:
    """64-bit job seed, independent of execution order."""
    state = np.random.SeedSequence([master, point, run]).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass
class RunOutcome:
    mos: float
    loss_percent: float
    jitter_ms: float
    overhead_percent: float
    episodes: list[DistortionEpisode]
    verdicts: list[FrameVerdict]
    trace: Trace = field(repr=False)


def simulate_run(
    profile: StreamProfile,
    channel: ChannelProfile,
    policy: DuplicationPolicy,
    coeffs: CoefficientSet,
    *,
    mtu_payload: int = DEFAULT_MTU_PAYLOAD,
    playout_deadline_ms: float = DEFAULT_PLAYOUT_DEADLINE_MS,
    window_packets: int = 100,
) -> RunOutcome:
    frames = generate_stream(profile)
    packets = apply_duplication(packetize(frames, mtu_payload), policy)
    events = transmit(packets, channel)
    received = deduplicate((e.packet, e.arrival_ms) for e in events)
    verdicts = reassemble(
        received, frames, playout_deadline_ms, mtu_payload=mtu_payload, base_delay_ms=channel.base_delay_ms
    )
    trace = trace_from_pipeline(
        packets,
        events,
        profile.fps,
        base_delay_ms=channel.base_delay_ms,
        playout_deadline_ms=playout_deadline_ms,
        mtu_payload=mtu_payload,
    )
    episodes = detect_episodes(verdicts, trace, default_alignment(trace), coeffs, window_packets=window_packets)
    windows = windowed_stats(trace, window_packets)
    expected = sum(w.expected for w in windows)
    got = sum(w.received for w in windows)
    jitters = [w.jitter_ms for w in windows if w.received > 1]
    return RunOutcome(
        mos=stream_mos(episodes, coeffs),
        loss_percent=100.0 * (expected - got) / expected if expected else 0.0,
        jitter_ms=statistics.fmean(jitters) if jitters else 0.0,
        overhead_percent=100.0 * duplication_overhead(packets),
        episodes=episodes,
        verdicts=verdicts,
        trace=trace,
    )


@dataclass(frozen=True)
class RunRow:
    policy: str
    point: int
    p_loss: float
    jitter_ms_param: float
    run: int
    seed: int
    mos: float
    loss_percent: float
    jitter_ms: float
    overhead_percent: float
    episodes: int


@dataclass(frozen=True)
class PointSummary:
    policy: str
    point: int
    p_loss: float
    jitter_ms_param: float
    runs: int
    mos_mean: float
    mos_std: float
    loss_percent_mean: float
    loss_percent_std: float
    jitter_ms_mean: float
    jitter_ms_std: float
    overhead_percent: float
    episodes_mean: float
    episodes_std: float


@dataclass
class ExperimentReport:
    rows: list[RunRow]
    summary: list[PointSummary]

    def point(self, policy, p_loss=None, jitter=None) -> PointSummary:
        policy = DuplicationPolicy(policy).value
        for s in self.summary:
            if s.policy != policy:
                continue
            if p_loss is not None and s.p_loss != p_loss:
                continue
            if jitter is not None and s.jitter_ms_param != jitter:
                continue
            return s
        raise KeyError((policy, p_loss, jitter))


def _jitter_param(channel: ChannelProfile) -> float:
    jm = channel.jitter_model
    return float(getattr(jm, "half_width_ms", getattr(jm, "mean_ms", 0.0)))


class SweepPointError(RuntimeError):
    pass


def _job(args):
    config, point, p, j, policy, run = args
    try:
        channel = config.channel_at(p, j)
        seed = derive_seed(config.seed, point, run)
        outcome = simulate_run(
            config.stream,
            channel.with_seed(seed),
            policy,
            config.coefficients,
            mtu_payload=config.mtu_payload,
            playout_deadline_ms=config.playout_deadline_ms,
            window_packets=config.window_packets,
        )
    except Exception as exc:
        raise SweepPointError(
            f"sweep point {point} (p_loss={p}, jitter_ms={j}, policy={policy.value}, run={run}): {exc}"
        ) from exc
    row = RunRow(
        policy=policy.value,
        point=point,
        p_loss=channel.loss_model.mean_loss,
        jitter_ms_param=_jitter_param(channel),
        run=run,
        seed=seed,
        mos=outcome.mos,
        loss_percent=outcome.loss_percent,
        jitter_ms=outcome.jitter_ms,
        overhead_percent=outcome.overhead_percent,
        episodes=len(outcome.episodes),
    )
    trace_text = outcome.trace.dumps() if config.write_traces else None
    return row, trace_text


def _std(xs):
    return statistics.stdev(xs) if len(xs) > 1 else 0.0


def summarize(rows: list[RunRow]) -> list[PointSummary]:
    groups: dict[tuple[str, int], list[RunRow]] = {}
    for r in rows:
        groups.setdefault((r.policy, r.point), []).append(r)
    out = []
    for (policy, point), rs in groups.items():
        mos = [r.mos for r in rs]
        loss = [r.loss_percent for r in rs]
        jit = [r.jitter_ms for r in rs]
        eps = [r.episodes for r in rs]
        out.append(
            PointSummary(
                policy=policy,
                point=point,
                p_loss=rs[0].p_loss,
                jitter_ms_param=rs[0].jitter_ms_param,
                runs=len(rs),
                mos_mean=statistics.fmean(mos),
                mos_std=_std(mos),
                loss_percent_mean=statistics.fmean(loss),
                loss_percent_std=_std(loss),
                jitter_ms_mean=statistics.fmean(jit),
                jitter_ms_std=_std(jit),
                overhead_percent=rs[0].overhead_percent,
                episodes_mean=statistics.fmean(eps),
                episodes_std=_std(eps),
            )
        )
    return out


def _asdict(obj):
    return {name: getattr(obj, name) for name in obj.__dataclass_fields__}


def table_text(items, fmt: str = "csv") -> str:
    dicts = [_asdict(x) for x in items]
    if fmt == "json":
        return json.dumps(dicts, indent=2) + "\n"
    if not dicts:
        return ""
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=list(dicts[0]), lineterminator="\n")
    writer.writeheader()
    for d in dicts:
        writer.writerow({k: f"{v:.6f}" if isinstance(v, float) else v for k, v in d.items()})
    return out.getvalue()


def run_experiment(config: ExperimentConfig, *, fmt: str = "csv", jobs: int = 1, write: bool = True) -> ExperimentReport:
    """Run every (sweep point, policy, run) job and write the reports.

    Jobs are ordered point-major, then policy, then run; the same
    (point, run) seed is used for every policy so comparisons share
    channel randomness. ``jobs > 1`` runs them in worker processes
    without changing any output.
    """
    tasks = [
        (config, point, p, j, policy, run)
        for point, (p, j) in enumerate(config.sweep_points())
        for policy in config.policies
        for run in range(config.runs)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, tasks, chunksize=4))
    else:
        results = [_job(t) for t in tasks]

    rows = [r for r, _ in results]
    report = ExperimentReport(rows=rows, summary=summarize(rows))
    if write:
        write_outputs(config, report, [t for _, t in results], fmt)
    return report


def write_outputs(config: ExperimentConfig, report: ExperimentReport, traces, fmt: str) -> None:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "json" if fmt == "json" else "csv"
    (out / f"summary.{ext}").write_text(table_text(report.summary, fmt))
    (out / f"runs.{ext}").write_text(table_text(report.rows, fmt))
    if config.write_traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for row, text in zip(report.rows, traces):
            (tdir / f"p{row.point:03d}_{row.policy}_r{row.run:03d}.rtptrace").write_text(text)
    if config.plot:
        from .plots import mos_vs_loss_svg

        (out / "mos_vs_loss.svg").write_text(mos_vs_loss_svg(report.summary))
