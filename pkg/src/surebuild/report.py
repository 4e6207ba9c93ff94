"""Build reports: delimited schedule tables plus rendered figures.

The report path writes a TSV per schedule and two PNGs (a Gantt chart of the
parallel schedule and the dependency graph with any conflict violations),
alongside a summary TSV. Figures are rendered headlessly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .graph import Configuration, DependencyGraph, Schedule, ValidityReport

_BAR_COLORS = ("#4878a8", "#e49444", "#5ba053", "#b65d9e", "#85b22c", "#6f63bb")


def schedule_tsv(schedule: Schedule) -> str:
    lines = ["task\tworker\tstart\tend"]
    for a in sorted(schedule.assignments, key=lambda a: (a.start, a.worker)):
        lines.append(f"{a.task}\t{a.worker}\t{a.start:g}\t{a.end:g}")
    return "\n".join(lines) + "\n"


def summary_tsv(
    config: Configuration,
    schedule: Schedule,
    serial_time: float,
    report: ValidityReport | None = None,
) -> str:
    rows = [
        ("tasks", len(config.graph.tasks)),
        ("edges", len(config.graph.edges)),
        ("workers", schedule.workers),
        ("makespan", f"{schedule.makespan:g}"),
        ("serial_time", f"{serial_time:g}"),
        ("speedup", f"{serial_time / schedule.makespan:.3f}" if schedule.makespan else "n/a"),
    ]
    if report is not None:
        rows.append(("verdict", report.verdict))
        rows.append(("violations", len(report.violations)))
    return "\n".join(f"{k}\t{v}" for k, v in rows) + "\n"


def save_gantt(schedule: Schedule, path: Path, title: str = "schedule") -> None:
    fig, ax = plt.subplots(figsize=(8, 1.2 + 0.5 * schedule.workers))
    for i, a in enumerate(sorted(schedule.assignments, key=lambda a: (a.start, a.worker))):
        ax.barh(
            a.worker,
            a.end - a.start,
            left=a.start,
            height=0.6,
            color=_BAR_COLORS[i % len(_BAR_COLORS)],
            edgecolor="black",
            linewidth=0.5,
        )
        ax.text(
            (a.start + a.end) / 2,
            a.worker,
            a.task,
            ha="center",
            va="center",
            fontsize=8,
        )
    ax.set_yticks(range(schedule.workers))
    ax.set_yticklabels([f"worker {w}" for w in range(schedule.workers)])
    ax.set_xlabel("virtual time")
    ax.set_title(f"{title} (makespan {schedule.makespan:g})")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _node_positions(graph: DependencyGraph) -> dict[str, tuple[float, float]]:
    # Layer by longest path from any root; stagger within a layer.
    depth: dict[str, int] = {}
    for t in graph.tasks:
        preds = graph.predecessors(t)
        depth[t] = 1 + max((depth[p] for p in preds), default=-1)
    by_layer: dict[int, list[str]] = {}
    for t in graph.tasks:
        by_layer.setdefault(depth[t], []).append(t)
    pos = {}
    for layer, names in sorted(by_layer.items()):
        for i, name in enumerate(names):
            pos[name] = (float(layer), -float(i))
    return pos


def save_graph_figure(
    graph: DependencyGraph,
    path: Path,
    report: ValidityReport | None = None,
    title: str = "dependency graph",
) -> None:
    pos = _node_positions(graph)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for f, t in sorted(graph.edges):
        x0, y0 = pos[f]
        x1, y1 = pos[t]
        style = "-" if graph.tags[(f, t)] == "declared" else "--"
        ax.annotate(
            "",
            xy=(x1, y1),
            xytext=(x0, y0),
            arrowprops=dict(arrowstyle="->", linestyle=style, color="#444444", shrinkA=14, shrinkB=14),
        )
    if report is not None:
        for (a, b), resources in sorted(report.violations.items()):
            x0, y0 = pos[a]
            x1, y1 = pos[b]
            ax.plot([x0, x1], [y0, y1], linestyle=":", color="#c0392b", linewidth=1.5, zorder=0)
            ax.text(
                (x0 + x1) / 2,
                (y0 + y1) / 2,
                "\n".join(sorted(resources)),
                fontsize=6,
                color="#c0392b",
                ha="center",
            )
    for name, (x, y) in pos.items():
        ax.scatter([x], [y], s=600, color="#f0f0f0", edgecolor="black", zorder=2)
        ax.text(x, y, name, ha="center", va="center", fontsize=8, zorder=3)
    ax.set_title(title)
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(
    config: Configuration,
    out_dir: Path,
    workers: int,
    durations: Mapping[str, float] | None,
    schedule: Schedule,
    serial_time: float,
    report: ValidityReport | None = None,
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "schedule_tsv": out_dir / "schedule.tsv",
        "summary_tsv": out_dir / "summary.tsv",
        "schedule_png": out_dir / "schedule.png",
        "graph_png": out_dir / "graph.png",
    }
    paths["schedule_tsv"].write_text(schedule_tsv(schedule), encoding="utf-8")
    paths["summary_tsv"].write_text(summary_tsv(config, schedule, serial_time, report), encoding="utf-8")
    save_gantt(schedule, paths["schedule_png"])
    save_graph_figure(config.graph, paths["graph_png"], report)
    return paths
