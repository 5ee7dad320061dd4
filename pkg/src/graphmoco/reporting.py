"""Report rendering: CSV summaries and matplotlib figures written next to
the JSON reports (training curves, ROC, similarity and rank histograms)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import RankingResult, average_precision  # noqa: E402


def write_history_csv(history: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "val_recall1"])
        for entry in history:
            recall = entry.get("val_recall1")
            writer.writerow(
                [entry["epoch"], f"{entry['loss']:.6f}", "" if recall is None else f"{recall:.6f}"]
            )


def save_loss_curve(history: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [e["epoch"] for e in history]
    losses = [e["loss"] for e in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, marker="o", markersize=3, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    recalls = [(e["epoch"], e["val_recall1"]) for e in history if e.get("val_recall1") is not None]
    if recalls:
        ax2 = ax.twinx()
        ax2.plot(
            [r[0] for r in recalls],
            [r[1] for r in recalls],
            color="tab:green",
            linestyle="--",
            label="val recall@1",
        )
        ax2.set_ylabel("val recall@1")
        ax2.set_ylim(0, 1.05)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _roc_points(scores: Sequence[float], labels: Sequence[int]) -> tuple[list, list]:
    paired = sorted(zip(scores, labels), key=lambda t: -t[0])
    n_pos = sum(1 for _, l in paired if l == 1)
    n_neg = len(paired) - n_pos
    tpr, fpr = [0.0], [0.0]
    tp = fp = 0
    i = 0
    while i < len(paired):
        j = i
        while j + 1 < len(paired) and paired[j + 1][0] == paired[i][0]:
            j += 1
        for k in range(i, j + 1):
            if paired[k][1] == 1:
                tp += 1
            else:
                fp += 1
        tpr.append(tp / n_pos if n_pos else 0.0)
        fpr.append(fp / n_neg if n_neg else 0.0)
        i = j + 1
    return fpr, tpr


def save_roc_curve(scores: Sequence[float], labels: Sequence[int], path: str | Path) -> None:
    fpr, tpr = _roc_points(scores, labels)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(fpr, tpr, marker=".", markersize=3)
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_score_histogram(
    scores: Sequence[float], labels: Sequence[int], path: str | Path
) -> None:
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = 40
    ax.hist(neg, bins=bins, range=(-1, 1), alpha=0.6, label="different function")
    ax.hist(pos, bins=bins, range=(-1, 1), alpha=0.6, label="same function")
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("pairs")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_rank_histogram(rankings: RankingResult, path: str | Path, max_rank: int = 20) -> None:
    ranks = []
    for q in rankings.queries:
        r = q.first_relevant_rank()
        ranks.append(min(r, max_rank + 1) if r is not None else max_rank + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(ranks, bins=range(1, max_rank + 3), align="left", rwidth=0.85)
    ax.set_xlabel(f"rank of first relevant result (>{max_rank} clipped)")
    ax.set_ylabel("queries")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_csv(rankings: RankingResult, path: str | Path, n: int = 10) -> None:
    """Per-query delimited summary matching the JSON report's ranking metrics."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["query_key", "pool", "n_relevant", "first_relevant_rank", "reciprocal_rank", "ap"]
        )
        for q in rankings.queries:
            rank = q.first_relevant_rank()
            rr = 1.0 / rank if rank is not None and rank <= n else 0.0
            ap = average_precision(q, n=n) if q.n_relevant else 0.0
            writer.writerow(
                [
                    q.query_key,
                    len(q.candidates),
                    q.n_relevant,
                    "" if rank is None else rank,
                    f"{rr:.6f}",
                    f"{ap:.6f}",
                ]
            )


def render_eval_figures(
    outcome, json_path: str | Path
) -> list[Path]:
    """Write the CSV and figures that accompany a JSON eval report."""
    json_path = Path(json_path)
    base = json_path.with_suffix("")
    written = []
    csv_path = base.with_name(base.name + ".csv")
    write_eval_csv(outcome.rankings, csv_path)
    written.append(csv_path)
    if outcome.pair_scores and 0 < sum(outcome.pair_labels) < len(outcome.pair_labels):
        roc_path = base.with_name(base.name + "_roc.png")
        save_roc_curve(outcome.pair_scores, outcome.pair_labels, roc_path)
        written.append(roc_path)
        hist_path = base.with_name(base.name + "_scores.png")
        save_score_histogram(outcome.pair_scores, outcome.pair_labels, hist_path)
        written.append(hist_path)
    if outcome.rankings.queries:
        rank_path = base.with_name(base.name + "_ranks.png")
        save_rank_histogram(outcome.rankings, rank_path)
        written.append(rank_path)
    return written
