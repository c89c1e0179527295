"""Training-dynamics metrics: per-step aggregates, a stable CSV schema, and
vector-graphic exports of the length/penalty, score/chunk, and accuracy curves.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

CSV_HEADER = [
    "step",
    "accuracy",
    "mean_len",
    "mean_chunks",
    "mean_score",
    "chunk_len_std",
    "mean_penalty",
    "fmt_reason",
    "fmt_seg",
    "fmt_score",
]


class BadCsv(ValueError):
    """Metrics CSV is unreadable or has the wrong schema."""


@dataclass(frozen=True)
class StepMetrics:
    step: int
    accuracy: float
    mean_len: float
    mean_chunks: float
    mean_score: float
    chunk_len_std: float
    mean_penalty: float | None  # None when the step had no correct trajectory
    fmt_reason: float
    fmt_seg: float
    fmt_score: float


def trajectory_metrics(traj) -> tuple[float, int, float, float | None]:
    """(mean score, chunk count, population std of chunk lengths, penalty term)."""
    lengths = np.array(traj.segmentation.chunk_lengths(), dtype=float)
    scores = np.array(traj.segmentation.scores, dtype=float)
    penalty = traj.reward.penalty_term if traj.reward is not None else None
    return float(scores.mean()), len(lengths), float(lengths.std()), penalty


def aggregate_step(step: int, groups) -> StepMetrics:
    """Unweighted means over all trajectories of the step's groups.

    The penalty mean covers correct trajectories only; with no correct
    trajectory in the step it is recorded as missing, not zero.
    """
    if not groups:
        raise ValueError("at least one group required")
    lens, chunk_counts, stds, penalties, corrects = [], [], [], [], []
    all_scores: list[float] = []
    fmt = np.zeros(3)
    n = 0
    for gb in groups:
        for tr in gb.trajectories:
            n += 1
            corrects.append(tr.correct)
            lens.append(len(tr.response))
            chunk_counts.append(tr.segmentation.chunk_count)
            all_scores.extend(tr.segmentation.scores)
            lengths = np.array(tr.segmentation.chunk_lengths(), dtype=float)
            stds.append(float(lengths.std()))
            if tr.reward is not None and tr.reward.penalty_term is not None:
                penalties.append(tr.reward.penalty_term)
            fmt += np.array(tr.flags.as_tuple(), dtype=float)
    return StepMetrics(
        step=step,
        accuracy=float(np.mean(corrects)),
        mean_len=float(np.mean(lens)),
        mean_chunks=float(np.mean(chunk_counts)),
        mean_score=float(np.mean(all_scores)),
        chunk_len_std=float(np.mean(stds)),
        mean_penalty=float(np.mean(penalties)) if penalties else None,
        fmt_reason=float(fmt[0] / n),
        fmt_seg=float(fmt[1] / n),
        fmt_score=float(fmt[2] / n),
    )


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def metrics_row(m: StepMetrics) -> list[str]:
    return [
        str(m.step),
        _fmt(m.accuracy),
        _fmt(m.mean_len),
        _fmt(m.mean_chunks),
        _fmt(m.mean_score),
        _fmt(m.chunk_len_std),
        _fmt(m.mean_penalty),
        _fmt(m.fmt_reason),
        _fmt(m.fmt_seg),
        _fmt(m.fmt_score),
    ]


def write_metrics_csv(path: str, metrics: list[StepMetrics]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for m in metrics:
            writer.writerow(metrics_row(m))


def read_metrics_csv(path: str) -> list[dict[str, float | None]]:
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise BadCsv(f"unexpected header {header!r}")
            rows = []
            for raw in reader:
                if len(raw) != len(CSV_HEADER):
                    raise BadCsv(f"row width {len(raw)} != {len(CSV_HEADER)}")
                rows.append(
                    {
                        col: (None if cell == "" else float(cell))
                        for col, cell in zip(CSV_HEADER, raw)
                    }
                )
    except OSError as exc:
        raise BadCsv(str(exc)) from exc
    if not rows:
        raise BadCsv("no data rows")
    return rows


def export_plots(csv_path: str, out_dir: str) -> list[str]:
    """Render the three metric families as standalone SVG files.

    Missing penalty values appear as gaps in the dashed penalty curve.
    """
    import os

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_metrics_csv(csv_path)
    steps = [r["step"] for r in rows]
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(steps, [r["mean_len"] for r in rows], color="tab:blue", label="mean length")
    ax1.set_xlabel("step")
    ax1.set_ylabel("mean response length", color="tab:blue")
    ax2 = ax1.twinx()
    penalty = [r["mean_penalty"] if r["mean_penalty"] is not None else math.nan for r in rows]
    ax2.plot(steps, penalty, color="tab:gray", linestyle="--", label="mean penalty")
    ax2.set_ylabel("weighted length penalty", color="tab:gray")
    fig.tight_layout()
    path = os.path.join(out_dir, "length_penalty.svg")
    fig.savefig(path)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, [r["mean_score"] for r in rows], color="tab:orange", label="avg score")
    ax.plot(steps, [r["mean_chunks"] for r in rows], color="tab:blue", label="avg chunk num")
    ax.plot(steps, [r["chunk_len_std"] for r in rows], color="tab:red", label="chunk length std")
    ax.set_xlabel("step")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "segmentation_scoring.svg")
    fig.savefig(path)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, [r["accuracy"] for r in rows], color="tab:green")
    ax.set_xlabel("step")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    path = os.path.join(out_dir, "accuracy.svg")
    fig.savefig(path)
    plt.close(fig)
    paths.append(path)

    return paths
