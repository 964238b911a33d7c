import json
from dataclasses import replace

import pytest
import yaml

from kfstream.cli import main
from kfstream.harness.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from kfstream.harness.experiment import SweepPointError, derive_seed, run_experiment, simulate_run
from kfstream.media import DEFAULT_PROFILE, StreamProfile, key_byte_share, generate_stream
from kfstream.netsim import ExponentialJitter, IidLoss, NoJitter, UniformJitter, get_preset
from kfstream.quality import get_coefficients
from kfstream.rtp import DuplicationPolicy

SHORT = StreamProfile(duration_s=10)
DIVX_3G = get_coefficients("DIVX", "THREE_G")


def small_config(tmp_path, **kw):
    base = dict(stream=SHORT, runs=3, seed=5, out_dir=tmp_path, p_loss_values=(0.02, 0.08))
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_from_yaml(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(
        yaml.safe_dump(
            {
                "stream": {"duration_s": 5, "codec": "mpeg2"},
                "channel": {"loss": {"model": "ge", "p_good_to_bad": 0.01, "p_bad_to_good": 0.3},
                            "base_delay_ms": 50, "jitter": {"model": "uniform", "half_width_ms": 10}},
                "policy": "key_frames_only",
                "coefficients": {"network": "wifi"},
                "sweep": {"jitter_ms": [5, 10]},
                "runs": 2,
            }
        )
    )
    cfg = load_config(path)
    assert cfg.stream.duration_s == 5
    assert cfg.coefficients == get_coefficients("MPEG2", "WIFI")
    assert cfg.policies == (DuplicationPolicy.KEY_FRAMES_ONLY,)
    assert cfg.channel.base_delay_ms == 50
    assert cfg.channel_at(None, 5.0).jitter_model == UniformJitter(5.0)
    assert cfg.sweep_points() == [(None, 5.0), (None, 10.0)]


@pytest.mark.parametrize(
    "data",
    [
        {"bogus": 1},
        {"sweep": {"delay": [1]}},
        {"policy": "sometimes"},
        {"channel": "moon-link"},
        {"channel": {"loss": {"model": "pareto"}}},
        {"runs": 0},
        {"window_packets": 150},
        {"sweep": {"p_loss": []}},
    ],
)
def test_config_errors(data):
    with pytest.raises((ConfigError, KeyError)):
        config_from_dict(data)


def test_channel_at_axes():
    cfg = ExperimentConfig()
    ch = cfg.channel_at(0.1, 25.0)
    assert ch.loss_model == IidLoss(0.1)
    assert ch.jitter_model == ExponentialJitter(25.0)
    assert cfg.channel_at(None, 0.0).jitter_model == NoJitter()


def test_lossless_run_is_ideal():
    out = simulate_run(SHORT, get_preset("lossless"), DuplicationPolicy.NONE, DIVX_3G)
    assert out.mos == DIVX_3G.q_ideal.value
    assert out.overhead_percent == 0.0
    assert out.loss_percent == 0.0
    assert out.episodes == []


def test_overhead_matches_key_share():
    out = simulate_run(SHORT, get_preset("lossless"), DuplicationPolicy.KEY_FRAMES_ONLY, DIVX_3G)
    assert out.overhead_percent == pytest.approx(100 * key_byte_share(generate_stream(SHORT)), abs=1e-12)
    full = simulate_run(SHORT, get_preset("lossless"), DuplicationPolicy.ALL, DIVX_3G)
    assert full.overhead_percent == pytest.approx(100.0)


def test_3g_noisy_duplication_helps(tmp_path):
    cfg = small_config(tmp_path, stream=DEFAULT_PROFILE, runs=6, p_loss_values=None, write_traces=False, plot=False)
    report = run_experiment(cfg, write=False)
    dup = report.point("key-frames-only")
    none = report.point("none")
    assert dup.mos_mean > none.mos_mean
    assert 5 <= dup.overhead_percent <= 12


def test_reports_are_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(small_config(a))
    run_experiment(small_config(b))
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert {"summary.csv", "runs.csv", "mos_vs_loss.svg"} <= {str(n) for n in names}
    assert any(str(n).startswith("traces/") for n in names)
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_parallel_matches_serial(tmp_path):
    serial = run_experiment(small_config(tmp_path / "s", write_traces=False, plot=False), jobs=1)
    parallel = run_experiment(small_config(tmp_path / "p", write_traces=False, plot=False), jobs=2)
    assert serial.rows == parallel.rows
    assert (tmp_path / "s" / "summary.csv").read_bytes() == (tmp_path / "p" / "summary.csv").read_bytes()


def test_json_output(tmp_path):
    run_experiment(small_config(tmp_path, write_traces=False, plot=False), fmt="json")
    rows = json.loads((tmp_path / "summary.json").read_text())
    assert {r["policy"] for r in rows} == {"none", "key-frames-only"}
    assert all(r["runs"] == 3 for r in rows)


def test_seed_derivation_is_stable():
    assert derive_seed(1, 0, 0) == derive_seed(1, 0, 0)
    assert len({derive_seed(1, p, r) for p in range(5) for r in range(5)}) == 25


def test_benefit_grows_with_loss(tmp_path):
    cfg = small_config(tmp_path, runs=8, p_loss_values=(0.01, 0.05, 0.15), coefficients=get_coefficients("DIVX", "WIFI"))
    report = run_experiment(cfg, write=False)
    gains, slack = [], []
    for p in cfg.p_loss_values:
        dup, none = report.point("key-frames-only", p), report.point("none", p)
        gains.append(dup.mos_mean - none.mos_mean)
        slack.append(2 * ((dup.mos_std**2 + none.mos_std**2) / cfg.runs) ** 0.5)
    for i in range(len(gains) - 1):
        assert gains[i + 1] >= gains[i] - slack[i] - slack[i + 1]


def test_sweep_error_names_point(tmp_path):
    cfg = small_config(tmp_path, p_loss_values=(0.02, 1.5))
    with pytest.raises(SweepPointError, match=r"sweep point 1 \(p_loss=1.5"):
        run_experiment(cfg, write=False)


def test_cli_presets_and_coeffs(capsys):
    assert main(["presets", "list", "--verbose"]) == 0
    out = capsys.readouterr().out
    assert "3g-noisy" in out and "wifi-degraded" in out
    assert main(["coeffs", "show"]) == 0
    assert "4.7+-0.2" in capsys.readouterr().out


def test_cli_analyze_worked_example(tmp_path, capsys):
    from kfstream.harness.claims import worked_example

    trace, damaged = worked_example()
    trace.write(tmp_path / "w.rtptrace")
    (tmp_path / "damaged.txt").write_text(damaged)
    code = main([
        "analyze", str(tmp_path / "w.rtptrace"), "--frames", str(tmp_path / "damaged.txt"),
        "--align", "10870:5923", "--out-dir", str(tmp_path / "out"),
    ])
    assert code == 0
    out = capsys.readouterr()
    assert "143,171,29,1160,2.0" in out.out
    assert "offset 4947 ms" in out.err
    assert (tmp_path / "out" / "episodes.csv").exists()


def test_cli_simulate(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"stream": {"duration_s": 4}, "runs": 2, "write_traces": False, "plot": False}))
    assert main(["simulate", str(cfg), "--seed", "3", "--out-dir", str(tmp_path / "o"), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)[0]["runs"] == 2
    assert (tmp_path / "o" / "runs.json").exists()


def test_cli_errors_exit_2(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "missing.rtptrace")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_verify_exit_code(monkeypatch, capsys):
    from kfstream.harness import claims

    fake = [claims.Claim("1", "x", "y", True), claims.Claim("2", "x", "y", None)]
    monkeypatch.setattr(claims, "verify_claims", lambda seed, region: fake)
    assert main(["verify-claims"]) == 0
    monkeypatch.setattr(claims, "verify_claims", lambda seed, region: fake + [claims.Claim("3", "x", "y", False)])
    assert main(["verify-claims"]) == 1
    assert "FAIL  [3]" in capsys.readouterr().out


def test_shipped_config_loads():
    from pathlib import Path

    cfg = load_config(Path(__file__).parents[1] / "configs" / "3g-noisy.yaml")
    assert cfg.channel == get_preset("3g-noisy")
    assert cfg.p_loss_values == (0.01, 0.05, 0.10)
