"""Output files for a run: fitted values, summary, plot data and a figure."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataio import OutputBundle, csv_text, kv_text  # noqa: E402
from .harness import RunResult  # noqa: E402

FITTED = "fitted.csv"
SUMMARY = "summary.txt"
FIGURE = "figure.png"


def render_figure(res: RunResult) -> bytes:
    """Observed series, global fit, dashed per-peak curves and pulse bars."""
    fig, ax = plt.subplots(figsize=(8, 4.5), dpi=100)
    ax.plot(res.x, res.y, color="0.6", lw=0.8, label="observed")
    for i, (name, col) in enumerate(res.components.items()):
        offset = res.summary.get("offset", 0.0) if res.pulses else 0.0
        ax.plot(res.x, col + offset, ls="--", lw=1.0, label=name if i < 8 else None)
    ax.plot(res.x, res.fitted, color="k", lw=1.4, label="fit")
    if res.pulses:
        pos, h = np.array(res.pulses).T
        base = res.summary.get("offset", 0.0)
        ax.vlines(pos, base, base + h, color="tab:red", lw=2.0, label="pulses")
    for m in res.markers:
        ax.axvline(m, color="tab:blue", ls=":", lw=1.0)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(res.method)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def build_bundle(res: RunResult, output_dir, figure: bool = True) -> OutputBundle:
    bundle = OutputBundle(output_dir)
    cols = {"x": res.x, "y": res.y, "fit": res.fitted, **res.components}
    bundle.add(FITTED, csv_text(cols))
    bundle.add(SUMMARY, kv_text(res.summary))
    bundle.add("plot_series.csv", csv_text({"x": res.x, "observed": res.y, "fit": res.fitted}))
    if res.components:
        bundle.add("plot_components.csv", csv_text({"x": res.x, **res.components}))
    if res.pulses or res.method in ("l0deco", "blind_pointwise", "blind_parametric",
                                    "blind_unimodal", "varying_l0deco"):
        pos = np.array([p for p, _ in res.pulses], dtype=float)
        h = np.array([v for _, v in res.pulses], dtype=float)
        bundle.add("plot_pulses.csv", csv_text({"position": pos, "height": h}))
    if res.markers:
        bundle.add("plot_markers.csv", csv_text({"position": np.array(res.markers, dtype=float)}))
    for stem, table in res.extra_plots.items():
        bundle.add(f"plot_{stem}.csv", csv_text(table))
    if figure:
        bundle.add(FIGURE, render_figure(res))
    return bundle


def write_report(res: RunResult, output_dir, figure: bool = True) -> list:
    return build_bundle(res, output_dir, figure).commit()
