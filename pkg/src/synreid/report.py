"""Turn a run directory into a small report bundle (table plus plots)."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .train import CURVES_NAME, TERMS  # noqa: E402

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (("rank1", "Rank 1"), ("rank5", "Rank 5"), ("rank10", "Rank 10"), ("map", "mAP"))


def _table_text(metrics):
    header = " | ".join(label for _, label in METRIC_COLUMNS)
    row = " | ".join(f"{100 * metrics[k]:.1f}" if k in metrics else "-" for k, _ in METRIC_COLUMNS)
    return f"{header}\n{row}\n"


def _moving_average(values, width):
    out, acc = [], 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= width:
            acc -= values[i - width]
        out.append(acc / min(i + 1, width))
    return out


def _plot_losses(history, path):
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = max(1, len(history) // 50)
    for key in (*TERMS, "total"):
        if any(key in h for h in history):
            ax.plot(steps, _moving_average([h.get(key, 0.0) for h in history], width), label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)


def _plot_domain_accuracy(history, path):
    rows = [h for h in history if "domain_acc" in h]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = max(1, len(rows) // 50)
    ax.plot([h["step"] for h in rows], _moving_average([h["domain_acc"] for h in rows], width),
            label="domain head accuracy")
    ax.axhline(0.5, color="grey", linestyle="--", label="chance")
    ax.set_ylim(0, 1)
    ax.set_xlabel("step")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)


def emit_report(run_dir, out_dir=None):
    """Write ``report.txt``, ``report.json`` and, when curves exist, two PNG plots.

    Returns the list of files written. Missing metrics or curves are logged,
    not raised.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    metrics_file = run_dir / "metrics.json"
    metrics = json.loads(metrics_file.read_text()) if metrics_file.exists() else {}
    if not metrics:
        logger.warning("no metrics.json in %s; table will be empty", run_dir)
    table = {k: metrics[k] for k, _ in METRIC_COLUMNS if k in metrics}
    written = [out_dir / "report.txt", out_dir / "report.json"]
    written[0].write_text(_table_text(metrics))
    written[1].write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")

    curves_file = run_dir / CURVES_NAME
    history = json.loads(curves_file.read_text()) if curves_file.exists() else []
    if not history:
        logger.warning("no loss curves in %s; writing table only", run_dir)
        return written
    _plot_losses(history, out_dir / "loss_curves.png")
    written.append(out_dir / "loss_curves.png")
    if any("domain_acc" in h for h in history):
        _plot_domain_accuracy(history, out_dir / "domain_accuracy.png")
        written.append(out_dir / "domain_accuracy.png")
    return written
