"""SVG line charts for schedules, variance curves and ablation loss traces."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# stable element ids and no timestamp, so reruns give identical files
matplotlib.rcParams["svg.hashsalt"] = "reflexsplit"
_SVG_META = {"Date": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def line_chart(series: dict[str, tuple[list, list]], path, *, title: str = "",
               xlabel: str = "", ylabel: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, label=label)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_schedule(rows, path) -> Path:
    """``rows`` are ``(epoch, level, lambda_effective)`` triples."""
    series: dict[str, tuple[list, list]] = {}
    for epoch, level, value in rows:
        xs, ys = series.setdefault(f"level {level}", ([], []))
        xs.append(epoch)
        ys.append(value)
    return line_chart(series, path, title="Differential strength per level",
                      xlabel="epoch", ylabel="effective lambda")


def plot_variance_curves(curves: dict, path) -> Path:
    series = {name: ([k for k, _ in curve.rows()], [v for _, v in curve.rows()])
              for name, curve in curves.items()}
    return line_chart(series, path, title="Cumulative explained variance",
                      xlabel="components", ylabel="fraction")


def plot_loss_traces(traces: dict[str, list[float]], path, title: str = "") -> Path:
    series = {name: (list(range(len(v))), v) for name, v in traces.items() if v}
    return line_chart(series, path, title=title, xlabel="step", ylabel="total loss")
