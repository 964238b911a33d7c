"""SVG line charts of mean MOS against loss, one line per (policy, jitter)."""

from __future__ import annotations

import io


def mos_vs_loss_svg(summary) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lines: dict[tuple[str, float], list] = {}
    for s in summary:
        lines.setdefault((s.policy, s.jitter_ms_param), []).append((100.0 * s.p_loss, s.mos_mean, s.mos_std))

    with matplotlib.rc_context({"svg.hashsalt": "kfstream", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (policy, jitter), pts in sorted(lines.items()):
            pts.sort()
            xs, ys, es = zip(*pts)
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=f"{policy}, jitter {jitter:g} ms")
        ax.axhline(3.5, color="grey", linestyle=":", linewidth=1)
        ax.set_xlabel("packet loss, %")
        ax.set_ylabel("predicted MOS")
        ax.set_ylim(1.0, 5.0)
        ax.legend(fontsize="small")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()
