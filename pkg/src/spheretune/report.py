"""Report emission: delimited tables, JSON documents, and figures.

Every artifact is a pure function of its inputs -- no timestamps, no
environment capture -- so repeated runs with the same seed are
byte-identical. Floats are written with ``repr`` so CSV and JSON parse
back losslessly. Figures are rendered to PNG next to the delimited
output; they are a convenience view of the same numbers, never the
primary record.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .embd import atomic_write_bytes, atomic_write_text
from .evaluation import BaseNovelResult, EvalResult
from .losses import PromptState
from .synth import AblationTable
from .training import TrainReport
from .vmf import VmfParams


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def write_json(path: str | Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def vmf_params_doc(p: VmfParams) -> dict:
    doc = {
        "mu": [float(x) for x in p.mu.coords],
        "kappa": p.kappa,
        "dims": p.dims,
    }
    if p.mean_resultant_length is not None:
        doc["mean_resultant_length"] = p.mean_resultant_length
    if p.label is not None:
        doc["label"] = p.label
    return doc


def train_report_jsonl(report: TrainReport) -> str:
    lines = []
    for r in report.steps:
        lines.append(
            json.dumps(
                {
                    "step": r.step,
                    "lr": r.lr,
                    "tau": r.tau,
                    "loss": r.loss,
                    "loss_anchor": r.parts.anchor,
                    "loss_contrast": r.parts.contrast,
                    "loss_ce": r.parts.cross_entropy,
                    "batch_accuracy": r.batch_accuracy,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


def write_train_report(report: TrainReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    atomic_write_text(out / "report.jsonl", train_report_jsonl(report))


def prompt_state_doc(state: PromptState) -> dict:
    return {
        "offsets": [[float(x) for x in row] for row in state.offsets],
        "log_alpha": state.log_alpha,
    }


def eval_result_doc(result: EvalResult) -> dict:
    return {
        "accuracy_mean": result.accuracy_mean,
        "accuracy_std": result.accuracy_std,
        "per_trial": list(result.per_trial),
        "per_class_accuracy": [float(a) for a in result.per_class_accuracy],
        "shots": result.shots,
        "trials": result.trials,
    }


def write_eval_result(result: EvalResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    write_json(out / "eval.json", eval_result_doc(result))
    classes = result.confusion.shape[0]
    header = ["true_class"] + [f"pred_{c}" for c in range(classes)]
    rows = [[c] + [int(v) for v in result.confusion[c]] for c in range(classes)]
    write_csv(out / "confusion.csv", header, rows)


def episodes_table_rows(
    names: Sequence[str], shots: Sequence[int], results: Sequence[Sequence[EvalResult]]
) -> tuple[list[str], list[list]]:
    header = ["config"]
    for k in shots:
        header += [f"k{k}_mean", f"k{k}_std"]
    rows = []
    for name, row in zip(names, results):
        cells: list = [name]
        for res in row:
            cells += [res.accuracy_mean, res.accuracy_std]
        rows.append(cells)
    return header, rows


def write_episodes_csv(
    path: str | Path,
    names: Sequence[str],
    shots: Sequence[int],
    results: Sequence[Sequence[EvalResult]],
) -> None:
    header, rows = episodes_table_rows(names, shots, results)
    write_csv(path, header, rows)


def write_ablation_csv(path: str | Path, table: AblationTable) -> None:
    header = ["config", "sce", "anchor", "contrast"]
    for k in table.shots:
        header += [f"k{k}_mean", f"k{k}_std"]
    rows = []
    for name, flags, row in zip(table.row_names, table.rows, table.results):
        cells: list = [name, int(flags[0]), int(flags[1]), int(flags[2])]
        for res in row:
            cells += [res.accuracy_mean, res.accuracy_std]
        rows.append(cells)
    write_csv(path, header, rows)


def base_novel_doc(result: BaseNovelResult) -> dict:
    return {
        "base_accuracy": result.base_accuracy,
        "novel_accuracy": result.novel_accuracy,
        "harmonic_mean": result.harmonic_mean,
        "base_std": result.base_std,
        "novel_std": result.novel_std,
    }


# -- figures -----------------------------------------------------------
# matplotlib is imported lazily so the numeric core never pays for it

def _figure_and_axes():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save_figure(fig, path: str | Path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, metadata={"Software": None})
    atomic_write_bytes(path, buf.getvalue())


def render_episode_curves(
    path: str | Path,
    names: Sequence[str],
    shots: Sequence[int],
    results: Sequence[Sequence[EvalResult]],
) -> None:
    """Accuracy-vs-shots curves, one line per config, std as error bars."""
    plt = _figure_and_axes()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, row in zip(names, results):
        means = [r.accuracy_mean for r in row]
        stds = [r.accuracy_std for r in row]
        ax.errorbar(list(shots), means, yerr=stds, marker="o", capsize=3, label=name)
    ax.set_xscale("log", base=2)
    ax.set_xticks(list(shots))
    ax.get_xaxis().set_major_formatter(plt.matplotlib.ticker.ScalarFormatter())
    ax.set_xlabel("shots per class")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_figure(fig, path)
    plt.close(fig)


def render_ablation_bars(path: str | Path, table: AblationTable) -> None:
    """Grouped bars: one group per shot count, one bar per configuration."""
    plt = _figure_and_axes()
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    acc = table.accuracy()
    n_rows, n_shots = acc.shape
    width = 0.8 / n_rows
    xs = np.arange(n_shots)
    for i, name in enumerate(table.row_names):
        ax.bar(xs + (i - (n_rows - 1) / 2.0) * width, acc[i], width=width, label=name)
    ax.set_xticks(xs)
    ax.set_xticklabels([f"K={k}" for k in table.shots])
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save_figure(fig, path)
    plt.close(fig)


def render_train_curves(path: str | Path, report: TrainReport) -> None:
    """Loss parts and batch accuracy over steps."""
    plt = _figure_and_axes()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.5))
    steps = [r.step for r in report.steps]
    ax1.plot(steps, [r.loss for r in report.steps], label="total")
    ax1.plot(steps, [r.parts.anchor for r in report.steps], label="anchor", alpha=0.7)
    ax1.plot(steps, [r.parts.contrast for r in report.steps], label="contrast", alpha=0.7)
    ax1.plot(steps, [r.parts.cross_entropy for r in report.steps], label="ce", alpha=0.7)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax1.grid(True, alpha=0.3)
    ax2.plot(steps, [r.batch_accuracy for r in report.steps], color="tab:green")
    ax2.set_xlabel("step")
    ax2.set_ylabel("batch accuracy")
    ax2.set_ylim(0.0, 1.05)
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, path)
    plt.close(fig)
