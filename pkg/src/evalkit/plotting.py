"""Figures for the CLI report paths.

Uses the object-oriented matplotlib API with the Agg canvas, so nothing here
touches pyplot's global state or needs a display.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Mapping, Sequence

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

WIDTH, HEIGHT = 6.4, 4.0
VERIFIED_COLOR = "#2b6cb0"
SELF_REPORTED_COLOR = "#c05621"


def _figure(width: float = WIDTH, height: float = HEIGHT):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def _save(fig: Figure, directory: str | os.PathLike, name: str) -> str:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return str(path)


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in text)


def plot_latency(perf: Mapping[str, Any], directory: str | os.PathLike) -> str:
    """Bar chart of the per-example latency summary (ms)."""
    lat = perf["latency_ms"]
    keys = ["mean", "p50", "p90", "p99", "max"]
    fig, ax = _figure()
    ax.bar(keys, [lat[k] for k in keys], color=VERIFIED_COLOR)
    ax.set_ylabel("latency per example (ms)")
    ax.set_title(f"{perf['n_examples']} examples, batch {perf['batch_size']}, "
                 f"{perf['throughput']:.1f} ex/s")
    return _save(fig, directory, "latency")


def plot_metric_cis(values: Mapping[str, float], cis: Mapping[str, Mapping[str, Any]],
                    directory: str | os.PathLike, name: str = "metrics") -> str:
    """Point estimates of scalar metrics, with interval whiskers where known."""
    keys = [k for k, v in values.items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    fig, ax = _figure(WIDTH, max(2.0, 0.5 * len(keys) + 1.2))
    for i, k in enumerate(keys):
        ci = cis.get(k)
        if ci is not None:
            ax.plot([ci["low"], ci["high"]], [i, i], color=VERIFIED_COLOR, linewidth=2)
        ax.plot([values[k]], [i], "o", color="black")
    ax.set_yticks(range(len(keys)))
    ax.set_yticklabels(keys)
    ax.invert_yaxis()
    ax.set_xlabel("value")
    levels = {c["level"] for c in cis.values()}
    if levels:
        ax.set_title(f"{100 * levels.pop():g}% percentile bootstrap intervals")
    return _save(fig, directory, name)


def plot_leaderboard(entries: Sequence[Mapping[str, Any]], metric: str, directory: str | os.PathLike) -> str:
    """Horizontal bars in rank order; color marks verified vs self-reported."""
    fig, ax = _figure(WIDTH, max(2.0, 0.4 * len(entries) + 1.2))
    labels = [f"{e['rank']}. {e['model']}" for e in entries]
    colors = [VERIFIED_COLOR if e["verified"] else SELF_REPORTED_COLOR for e in entries]
    ax.barh(range(len(entries)), [e["value"] for e in entries], color=colors)
    ax.set_yticks(range(len(entries)))
    ax.set_yticklabels(labels)
    ax.invert_yaxis()
    ax.set_xlabel(metric)
    handles = [ax.bar([0], [0], color=c, label=lab)[0]
               for c, lab in ((VERIFIED_COLOR, "verified"), (SELF_REPORTED_COLOR, "self-reported"))]
    ax.legend(handles=handles, loc="lower right", frameon=False)
    return _save(fig, directory, f"leaderboard-{_slug(metric)}")


def plot_measurement(module_id: str, values: Mapping[str, Any], directory: str | os.PathLike) -> str | None:
    """One figure per measurement that has a natural picture, else None."""
    if "proportions" in values:
        props = values["proportions"]
        fig, ax = _figure()
        ax.bar(list(props), list(props.values()), color=VERIFIED_COLOR)
        ax.set_ylabel("proportion")
        ax.set_xlabel("label")
    elif "histogram" in values:
        hist = values["histogram"]
        edges, counts = hist["edges"], hist["counts"]
        fig, ax = _figure()
        ax.bar(edges[:-1], counts, width=[b - a for a, b in zip(edges, edges[1:])], align="edge",
               color=VERIFIED_COLOR, edgecolor="white")
        ax.set_xlabel("length")
        ax.set_ylabel("count")
    elif "perplexities" in values:
        fig, ax = _figure()
        ax.hist(values["perplexities"], bins=min(20, max(1, len(values["perplexities"]))), color=VERIFIED_COLOR)
        ax.set_xlabel("perplexity")
        ax.set_ylabel("count")
    else:
        return None
    ax.set_title(module_id)
    return _save(fig, directory, f"measure-{_slug(module_id)}")
