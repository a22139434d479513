"""Render run-report figures to image files next to the delimited reports."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_all(report: dict, out_dir: str) -> list:
    """Write all figures for one report; returns the file paths."""
    paths = []
    paths.append(_latency_figure(report, os.path.join(out_dir, "latency.png")))
    paths.append(_traffic_figure(report, os.path.join(out_dir, "traffic.png")))
    return [p for p in paths if p]


def _latency_figure(report: dict, path: str) -> str | None:
    rows = report.get("latency", [])
    if not rows:
        return None
    labels = [f"{r['region']}\n{r['kind']}" for r in rows]
    p50 = [r["p50"] for r in rows]
    p90 = [r["p90"] for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(4, len(rows) * 1.1), 3.2))
    ax.bar([i - 0.2 for i in x], p50, width=0.4, label="p50")
    ax.bar([i + 0.2 for i in x], p90, width=0.4, label="p90")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("latency (simulated ms)")
    ax.set_title(f"{report['name']} (seed {report['seed']}, "
                 f"{report['variant'].upper()})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _traffic_figure(report: dict, path: str) -> str | None:
    by_tag = report.get("traffic", {}).get("wide_by_tag", {})
    if not by_tag:
        return None
    tags = sorted(by_tag, key=by_tag.get, reverse=True)[:12]
    vals = [by_tag[t] for t in tags]
    fig, ax = plt.subplots(figsize=(max(4, len(tags) * 0.9), 3.2))
    ax.bar(range(len(tags)), vals)
    ax.set_xticks(range(len(tags)))
    ax.set_xticklabels(tags, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("wide-area bytes")
    ax.set_title("wide-area traffic by message tag")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
